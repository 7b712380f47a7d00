#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "adapterlab/bench.hpp"
#include "adapterlab/errors.hpp"

namespace adapterlab {

namespace {

using Kind = FormatError::Kind;

constexpr char kMagic[4] = {'A', 'T', 'C', 'K'};

template <typename T>
void put(std::string& out, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : b_(bytes) {}

    bool at_end() const { return pos_ == b_.size(); }

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        unsigned char b[sizeof(T)];
        std::memcpy(b, b_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, b, sizeof(T));
        return v;
    }

    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n, const char* what) {
        if (b_.size() - pos_ < n)
            throw FormatError(Kind::Truncated, std::string("checkpoint truncated while reading ") + what);
    }

    const std::string& b_;
    std::size_t pos_ = 0;
};

std::string config_block(const EncoderState& st) {
    const ModelConfig& c = st.config;
    std::ostringstream o;
    o << "model.input_dim=" << c.input_dim << '\n'
      << "model.d=" << c.d << '\n'
      << "model.layers=" << c.layers << '\n'
      << "model.heads=" << c.heads << '\n'
      << "model.n_tokens=" << c.n_tokens << '\n'
      << "model.mlp_ratio=" << format_double(c.mlp_ratio) << '\n'
      << "model.classes=" << c.classes << '\n'
      << "model.rank=" << c.rank << '\n'
      << "model.alpha=" << format_double(c.alpha) << '\n'
      << "model.every_k=" << c.every_k << '\n'
      << "model.init=" << c.init.to_string() << '\n'
      << "model.regime=" << to_string(c.regime) << '\n';
    std::string frozen;
    for (const auto& [name, f] : st.frozen)
        if (f) frozen += (frozen.empty() ? "" : ",") + name;
    o << "frozen=" << frozen << '\n';
    return o.str();
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
        x = std::stoull(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty())
        throw FormatError(Kind::CorruptHeader, "checkpoint config: bad integer for " + key + ": '" + v + "'");
    return static_cast<std::size_t>(x);
}

double parse_real(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty())
        throw FormatError(Kind::CorruptHeader, "checkpoint config: bad number for " + key + ": '" + v + "'");
    return x;
}

struct ParsedConfig {
    ModelConfig model;
    std::vector<std::string> frozen;
};

ParsedConfig parse_config_block(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError(Kind::CorruptHeader, "checkpoint config: line without '=': '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto take = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError(Kind::CorruptHeader, "checkpoint config: missing key " + key);
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    ParsedConfig pc;
    ModelConfig& m = pc.model;
    m.input_dim = parse_size("model.input_dim", take("model.input_dim"));
    m.d = parse_size("model.d", take("model.d"));
    m.layers = parse_size("model.layers", take("model.layers"));
    m.heads = parse_size("model.heads", take("model.heads"));
    m.n_tokens = parse_size("model.n_tokens", take("model.n_tokens"));
    m.mlp_ratio = parse_real("model.mlp_ratio", take("model.mlp_ratio"));
    m.classes = parse_size("model.classes", take("model.classes"));
    m.rank = parse_size("model.rank", take("model.rank"));
    m.alpha = parse_real("model.alpha", take("model.alpha"));
    m.every_k = parse_size("model.every_k", take("model.every_k"));
    try {
        m.init = InitScheme::parse(take("model.init"));
        m.regime = parse_regime(take("model.regime"));
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(Kind::CorruptHeader, std::string("checkpoint config: ") + e.what());
    }
    std::string frozen = take("frozen");
    std::size_t start = 0;
    while (start < frozen.size()) {
        auto comma = frozen.find(',', start);
        if (comma == std::string::npos) comma = frozen.size();
        pc.frozen.push_back(frozen.substr(start, comma - start));
        start = comma + 1;
    }
    if (!kv.empty()) throw FormatError(Kind::CorruptHeader, "checkpoint config: unknown key " + kv.begin()->first);
    return pc;
}

std::string read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(Kind::Io, "cannot open checkpoint '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string serialize_checkpoint(const EncoderState& state) {
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    const std::string cfg = config_block(state);
    put<std::uint64_t>(out, cfg.size());
    out += cfg;
    for_each_param(state.params, [&](const std::string& name, const Mat& m, ParamKind) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, 2);
        put<std::uint64_t>(out, m.rows);
        put<std::uint64_t>(out, m.cols);
        for (double v : m.data) put<double>(out, v);
    });
    return out;
}

EncoderState deserialize_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    if (bytes.size() < 4 || bytes.compare(0, 4, kMagic, 4) != 0)
        throw FormatError(Kind::BadMagic, "not a checkpoint: bad magic");
    r.bytes(4, "magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw FormatError(Kind::VersionMismatch, "checkpoint version " + std::to_string(version) +
                                                     ", this build reads version " +
                                                     std::to_string(kCheckpointVersion));
    const auto cfg_len = r.get<std::uint64_t>("config length");
    if (cfg_len > bytes.size()) throw FormatError(Kind::Truncated, "checkpoint truncated in config block");
    const ParsedConfig pc = parse_config_block(r.bytes(static_cast<std::size_t>(cfg_len), "config block"));

    std::map<std::string, Mat> tensors;
    while (!r.at_end()) {
        const auto name_len = r.get<std::uint32_t>("tensor name length");
        std::string name = r.bytes(name_len, "tensor name");
        const auto ndim = r.get<std::uint32_t>("tensor rank");
        if (ndim != 2)
            throw FormatError(Kind::CorruptHeader, "tensor '" + name + "' has rank " + std::to_string(ndim));
        const auto rows = r.get<std::uint64_t>("tensor dims");
        const auto cols = r.get<std::uint64_t>("tensor dims");
        if (cols != 0 && rows > bytes.size() / 8 / cols)
            throw FormatError(Kind::Truncated, "checkpoint truncated in tensor '" + name + "'");
        Mat m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
        for (double& v : m.data) v = r.get<double>("tensor payload");
        if (!tensors.emplace(name, std::move(m)).second)
            throw FormatError(Kind::CorruptHeader, "duplicate tensor '" + name + "'");
    }

    Rng rng(0);
    EncoderState st = init_encoder(pc.model, rng);
    prepare_downstream(st, rng);
    for_each_param(st.params, [&](const std::string& name, Mat& m, ParamKind) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw FormatError(Kind::ShapeMismatch, "checkpoint lacks tensor '" + name + "'");
        if (!it->second.same_shape(m))
            throw FormatError(Kind::ShapeMismatch, "tensor '" + name + "' is " + it->second.shape_str() +
                                                       ", configuration expects " + m.shape_str());
        m = std::move(it->second);
        tensors.erase(it);
    });
    if (!tensors.empty())
        throw FormatError(Kind::ShapeMismatch, "checkpoint has unexpected tensor '" + tensors.begin()->first + "'");
    for (auto& [name, f] : st.frozen) f = false;
    for (const std::string& name : pc.frozen) {
        auto it = st.frozen.find(name);
        if (it == st.frozen.end())
            throw FormatError(Kind::CorruptHeader, "frozen list names unknown tensor '" + name + "'");
        it->second = true;
    }
    st.version = 0;
    return st;
}

void save_checkpoint(const EncoderState& state, const std::string& path) {
    const std::string bytes = serialize_checkpoint(state);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(Kind::Io, "cannot write checkpoint '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(Kind::Io, "write failed for '" + path + "'");
}

EncoderState load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_all(path)); }

}  // namespace adapterlab
