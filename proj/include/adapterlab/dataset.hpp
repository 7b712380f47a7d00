#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adapterlab/numkernel.hpp"

namespace adapterlab {

enum class Split : std::uint8_t { Train, Val, Test };

std::string to_string(Split s);  // train | val | test

// Fixed-dimension labeled vectors with a train/val/test tag per item.
struct Dataset {
    std::string name;
    std::size_t classes = 0;
    Mat inputs;                  // n x dim
    std::vector<int> labels;     // n, each in [0, classes)
    std::vector<Split> splits;   // n

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return inputs.cols; }
    std::span<const double> input(std::size_t i) const { return inputs.row(i); }
    std::vector<std::size_t> indices(Split s) const;
    std::size_t count(Split s) const;
    void validate() const;
};

}  // namespace adapterlab
