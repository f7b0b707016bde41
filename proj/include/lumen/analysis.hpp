#pragma once

#include <string>
#include <vector>

#include "lumen/types.hpp"

namespace lumen {

/// Variance-based sensitivity results: one row per input, one column per
/// output. Shared by the analytic (PCE) and Monte Carlo estimators.
struct SobolIndices {
    std::vector<std::string> input_names;
    std::vector<std::string> output_names;
    Matrix first_order;  // d x m
    Matrix total;        // d x m

    int d() const { return static_cast<int>(first_order.rows()); }
    int m() const { return static_cast<int>(first_order.cols()); }
};

}  // namespace lumen
