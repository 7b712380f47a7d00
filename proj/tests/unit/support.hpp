#pragma once

#include <filesystem>
#include <string>

#include "adapterlab/backbone.hpp"
#include "adapterlab/bench.hpp"
#include "adapterlab/dataset.hpp"

namespace adapterlab::test {

// d=8, L=2, heads=2, r=2, n_tokens=5, C=3, 8-value inputs.
inline ModelConfig tiny_config() {
    ModelConfig c;
    c.input_dim = 8;
    c.d = 8;
    c.layers = 2;
    c.heads = 2;
    c.n_tokens = 5;
    c.mlp_ratio = 2.0;
    c.classes = 3;
    c.rank = 2;
    c.regime = Regime::AdapterTune;
    return c;
}

// Overwrites every tensor with N(0, s^2) draws (LayerNorm gains around 1).
inline void randomize_all(EncoderState& st, Rng& rng, double s) {
    for_each_param(st.params, [&](const std::string& name, Mat& m, ParamKind) {
        const bool gain = name.size() > 6 && name.compare(name.size() - 6, 6, ".gamma") == 0;
        for (double& v : m.data) v = (gain ? 1.0 : 0.0) + s * rng.normal();
    });
    ++st.version;
}

// Gaussian inputs labeled by the argmax of a fixed random linear map.
inline Dataset toy_dataset(std::size_t n, std::size_t dim, std::size_t classes, std::uint64_t seed,
                           double val_fraction = 0.25) {
    Rng rng(seed);
    const Mat w = random_normal(classes, dim, 1.0, rng);
    Dataset ds;
    ds.name = "toy";
    ds.classes = classes;
    ds.inputs = random_normal(n, dim, 1.0, rng);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double bv = -1e300;
        for (std::size_t c = 0; c < classes; ++c) {
            double s = 0;
            for (std::size_t j = 0; j < dim; ++j) s += w(c, j) * ds.inputs(i, j);
            if (s > bv) {
                bv = s;
                best = c;
            }
        }
        ds.labels.push_back(static_cast<int>(best));
        ds.splits.push_back(static_cast<double>(i) < val_fraction * static_cast<double>(n) ? Split::Val
                                                                                         : Split::Train);
    }
    return ds;
}

// Same config, frozen mask and tensors, bit for bit.
inline bool same_bits(const EncoderState& a, const EncoderState& b) {
    return serialize_checkpoint(a) == serialize_checkpoint(b);
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("adapterlab_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace adapterlab::test
