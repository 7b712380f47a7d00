#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace adapterlab {

// One (run, epoch, split) record.
struct MetricsRow {
    std::string run_id;
    std::string dataset;
    std::string regime;
    std::uint64_t rank = 0;
    std::uint64_t every_k = 1;
    std::string init;
    double alpha = 1.0;
    double lr = 0.0;
    double wd = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    std::string split;
    double loss = 0.0;
    double top1 = 0.0;
    std::uint64_t trainable_params = 0;
    std::int64_t wall_ms = 0;
    std::string error;  // non-empty for a failed sweep run; written as loss=nan, split=error
};

inline constexpr std::string_view kMetricsHeader =
    "run_id,dataset,regime,rank,every_k,init,alpha,lr,wd,seed,epoch,split,loss,top1,trainable_params,wall_ms";

// %.17g, so every double round-trips exactly.
std::string format_double(double v);

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows, bool zero_wall_ms = false);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows, bool zero_wall_ms = false);
std::vector<MetricsRow> read_metrics_csv(std::istream& in, const std::string& source = "<stream>");
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

// Rewrites the wall_ms column of a metrics CSV text to 0 for byte-level comparisons.
std::string canonicalize_metrics_csv(const std::string& text);

}  // namespace adapterlab
