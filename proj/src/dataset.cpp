#include "adapterlab/dataset.hpp"

#include "adapterlab/errors.hpp"

namespace adapterlab {

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

std::vector<std::size_t> Dataset::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == s) out.push_back(i);
    return out;
}

std::size_t Dataset::count(Split s) const {
    std::size_t n = 0;
    for (Split t : splits) n += t == s;
    return n;
}

void Dataset::validate() const {
    if (inputs.rows != labels.size())
        throw ShapeError("dataset '" + name + "': " + std::to_string(inputs.rows) + " inputs vs " +
                         std::to_string(labels.size()) + " labels");
    if (splits.size() != labels.size())
        throw ShapeError("dataset '" + name + "': split tags do not cover every item");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw PreconditionError("dataset '" + name + "': label " + std::to_string(y) + " outside [0, " +
                                    std::to_string(classes) + ")");
}

}  // namespace adapterlab
