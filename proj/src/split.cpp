#include <cmath>

#include "adapterlab/bench.hpp"
#include "adapterlab/errors.hpp"

namespace adapterlab {

Dataset deterministic_split(Dataset data, const SplitFractions& f, std::uint64_t seed) {
    if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
        throw PreconditionError("deterministic_split: fractions must be >= 0 and sum to 1");
    std::vector<std::vector<std::size_t>> by_class(data.classes);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int y = data.labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= data.classes)
            throw PreconditionError("deterministic_split: label out of range at item " + std::to_string(i));
        by_class[static_cast<std::size_t>(y)].push_back(i);
    }
    data.splits.assign(data.size(), Split::Train);
    const Rng root(seed);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const auto& items = by_class[c];
        const std::size_t n = items.size();
        Rng rng = root.derive(static_cast<std::uint64_t>(c));
        const std::vector<std::size_t> perm = permutation(n, rng);
        const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * f.train));
        const std::size_t rest = n - std::min(n, n_train);
        const std::size_t n_val =
            f.test == 0.0 ? rest
                          : std::min(rest, static_cast<std::size_t>(std::llround(static_cast<double>(n) * f.val)));
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t item = items[perm[j]];
            data.splits[item] = j < n_train ? Split::Train : (j < n_train + n_val ? Split::Val : Split::Test);
        }
    }
    return data;
}

}  // namespace adapterlab
