#include "adapterlab/metrics.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "adapterlab/errors.hpp"

namespace adapterlab {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

const std::vector<std::string>& header_columns() {
    static const std::vector<std::string> cols = split_csv_line(std::string(kMetricsHeader));
    return cols;
}

double parse_f64(const std::string& s, const std::string& where) {
    if (s == "nan") return std::nan("");
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) throw FormatError(FormatError::Kind::CorruptHeader, where + ": bad number '" + s + "'");
    return v;
}

std::uint64_t parse_u64(const std::string& s, const std::string& where) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || s[0] == '-' || end != s.c_str() + s.size())
        throw FormatError(FormatError::Kind::CorruptHeader, where + ": bad integer '" + s + "'");
    return v;
}

}  // namespace

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows, bool zero_wall_ms) {
    out << kMetricsHeader << '\n';
    for (const MetricsRow& r : rows) {
        const bool failed = !r.error.empty();
        out << r.run_id << ',' << r.dataset << ',' << r.regime << ',' << r.rank << ',' << r.every_k << ',' << r.init
            << ',' << format_double(r.alpha) << ',' << format_double(r.lr) << ',' << format_double(r.wd) << ','
            << r.seed << ',' << r.epoch << ',' << (failed ? "error" : r.split) << ','
            << (failed ? "nan" : format_double(r.loss)) << ',' << (failed ? "nan" : format_double(r.top1)) << ','
            << r.trainable_params << ',' << (zero_wall_ms ? 0 : r.wall_ms) << '\n';
    }
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows, bool zero_wall_ms) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError(FormatError::Kind::Io, "cannot write " + path);
    write_metrics_csv(f, rows, zero_wall_ms);
    if (!f) throw FormatError(FormatError::Kind::Io, "write failed: " + path);
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in, const std::string& source) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError(FormatError::Kind::CorruptHeader, source + ": empty file");
    const std::vector<std::string> cols = split_csv_line(line);
    const auto& want = header_columns();
    for (std::size_t i = 0; i < std::max(cols.size(), want.size()); ++i) {
        const std::string got = i < cols.size() ? cols[i] : "<missing>";
        const std::string exp = i < want.size() ? want[i] : "<none>";
        if (got != exp)
            throw FormatError(FormatError::Kind::CorruptHeader,
                              source + ": schema mismatch at column " + std::to_string(i + 1) + ": expected '" + exp +
                                  "', found '" + got + "'");
    }
    std::vector<MetricsRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        const std::string where = source + ":" + std::to_string(lineno);
        if (f.size() != want.size())
            throw FormatError(FormatError::Kind::CorruptHeader, where + ": expected " + std::to_string(want.size()) +
                                                                    " fields, found " + std::to_string(f.size()));
        MetricsRow r;
        r.run_id = f[0];
        r.dataset = f[1];
        r.regime = f[2];
        r.rank = parse_u64(f[3], where);
        r.every_k = parse_u64(f[4], where);
        r.init = f[5];
        r.alpha = parse_f64(f[6], where);
        r.lr = parse_f64(f[7], where);
        r.wd = parse_f64(f[8], where);
        r.seed = parse_u64(f[9], where);
        r.epoch = parse_u64(f[10], where);
        r.split = f[11];
        r.loss = parse_f64(f[12], where);
        r.top1 = parse_f64(f[13], where);
        r.trainable_params = parse_u64(f[14], where);
        r.wall_ms = static_cast<std::int64_t>(parse_f64(f[15], where));
        if (r.split == "error") r.error = "failed run";
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError(FormatError::Kind::Io, "cannot read " + path);
    return read_metrics_csv(f, path);
}

std::string canonicalize_metrics_csv(const std::string& text) {
    std::istringstream in(text);
    std::ostringstream out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!first) {
            const auto pos = line.rfind(',');
            if (pos != std::string::npos) line = line.substr(0, pos + 1) + "0";
        }
        first = false;
        out << line << '\n';
    }
    return out.str();
}

}  // namespace adapterlab
