#include <cmath>

#include "adapterlab/bench.hpp"
#include "adapterlab/errors.hpp"

namespace adapterlab {

namespace {

Mat apply(const Mat& m, const Mat& col) { return matmul(m, col); }

int argmax_noisy(const Mat& logits, double noise, Rng& rng) {
    int best = 0;
    double best_v = -INFINITY;
    for (std::size_t c = 0; c < logits.rows; ++c) {
        const double v = logits(c, 0) + noise * rng.normal();
        if (v > best_v) {
            best_v = v;
            best = static_cast<int>(c);
        }
    }
    return best;
}

using LogitFn = Mat (PlantedShiftTask::*)(std::span<const double>) const;

Dataset draw_balanced(const PlantedShiftTask& task, LogitFn logits, const std::string& name, std::size_t d_in,
                      std::size_t classes, std::size_t n_per_class, Rng& rng) {
    Dataset ds;
    ds.name = name;
    ds.classes = classes;
    ds.inputs = Mat(classes * n_per_class, d_in);
    ds.labels.reserve(classes * n_per_class);
    std::vector<std::size_t> have(classes, 0);
    const std::size_t max_attempts = 1000 * classes * n_per_class + 1000;
    std::vector<double> x(d_in);
    std::size_t filled = 0;
    for (std::size_t attempt = 0; filled < classes * n_per_class; ++attempt) {
        if (attempt >= max_attempts)
            throw PreconditionError("make_planted_task: could not balance classes for '" + name +
                                    "'; some class is almost never the argmax");
        for (double& v : x) v = rng.normal();
        const int y = argmax_noisy((task.*logits)(x), task.noise, rng);
        if (have[static_cast<std::size_t>(y)] >= n_per_class) continue;
        ++have[static_cast<std::size_t>(y)];
        std::copy(x.begin(), x.end(), ds.inputs.row(filled).begin());
        ds.labels.push_back(y);
        ++filled;
    }
    ds.splits.assign(ds.labels.size(), Split::Train);
    return ds;
}

}  // namespace

Mat PlantedShiftTask::features(std::span<const double> x) const {
    if (x.size() != feature_map.cols)
        throw ShapeError("planted task: input of length " + std::to_string(x.size()) + ", expected " +
                         std::to_string(feature_map.cols));
    Mat col(x.size(), 1);
    std::copy(x.begin(), x.end(), col.data.begin());
    Mat phi = apply(feature_map, col);
    for (double& v : phi.data) v = std::tanh(v);
    return phi;
}

Mat PlantedShiftTask::shifted_features(std::span<const double> x) const {
    Mat phi = features(x);
    return add(phi, apply(shift.delta, phi));
}

Mat PlantedShiftTask::source_logits(std::span<const double> x) const { return apply(labeler, features(x)); }

Mat PlantedShiftTask::target_logits(std::span<const double> x) const {
    return apply(labeler, shifted_features(x));
}

PlantedShiftTask make_planted_task(std::size_t d_in, std::size_t classes, std::size_t n_per_class,
                                   const ShiftMatrix& shift, double noise, Rng& rng) {
    if (d_in < 1 || classes < 2 || n_per_class < 1)
        throw PreconditionError("make_planted_task: need d_in >= 1, classes >= 2, n_per_class >= 1");
    if (!(noise >= 0.0)) throw PreconditionError("make_planted_task: noise must be >= 0");
    const std::size_t f = shift.dim();
    PlantedShiftTask t;
    t.shift = shift;
    t.noise = noise;
    Rng map_rng = rng.derive("feature_map");
    Rng lab_rng = rng.derive("labeler");
    t.feature_map = random_normal(f, d_in, 1.0 / std::sqrt(static_cast<double>(d_in)), map_rng);
    t.labeler = random_normal(classes, f, 1.0 / std::sqrt(static_cast<double>(f)), lab_rng);
    Rng src_rng = rng.derive("source");
    Rng tgt_rng = rng.derive("target");
    t.source = draw_balanced(t, &PlantedShiftTask::source_logits, "planted_source", d_in, classes, n_per_class,
                             src_rng);
    t.target = draw_balanced(t, &PlantedShiftTask::target_logits, "planted_target", d_in, classes, n_per_class,
                             tgt_rng);
    return t;
}

}  // namespace adapterlab
