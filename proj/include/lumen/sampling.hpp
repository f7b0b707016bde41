#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lumen/netlist.hpp"
#include "lumen/solver.hpp"
#include "lumen/types.hpp"

namespace lumen {

/// Highest supported Sobol dimension (size of the direction-number table).
inline constexpr int kSobolMaxDim = 64;

/// First n points of the d-dimensional Sobol sequence (including the origin)
/// as an n x d matrix in [0,1). seed != 0 applies a digital (bitwise XOR)
/// shift per dimension, preserving the net structure; seed 0 is the
/// unscrambled sequence. Throws Error for d < 1 or d > kSobolMaxDim.
Matrix sobol_sequence(Index n, int d, std::uint64_t seed = 0);

/// Saltelli block design over the unit cube mapped to physical ranges.
/// Layout: A (N rows), B (N rows), AB_i (N rows each, A with column i from
/// B), and for the second-order variant BA_i (B with column i from A), for
/// a total of (2d+2)N rows, or (d+2)N without the BA blocks.
struct DesignMatrix {
    int d = 0;
    Index N = 0;
    bool second_order = true;
    Matrix unit;      // rows() x d in [0,1)
    Matrix physical;  // rows() x d in range units
    std::vector<std::pair<double, double>> ranges;
    std::vector<std::string> block_labels;  // per row: A, B, AB:<i>, BA:<i>

    Index rows() const { return unit.rows(); }
};

DesignMatrix saltelli_design(const std::vector<std::pair<double, double>>& ranges, Index N,
                             std::uint64_t seed, bool second_order = true);

/// Plain Sobol design (no Saltelli blocks): n rows over the ranges.
DesignMatrix sobol_design(const std::vector<std::pair<double, double>>& ranges, Index n,
                          std::uint64_t seed);

struct Dataset {
    std::vector<std::string> input_names;
    std::vector<std::string> output_names;
    Matrix inputs;   // successful rows x d, physical units
    Matrix outputs;  // successful rows x m
    std::vector<Index> failed_rows;  // design-row indices that failed to solve
    std::vector<std::pair<double, double>> ranges;  // per input column; may be empty
    std::map<std::string, std::string> meta;

    Index rows() const { return inputs.rows(); }
};

/// Solves the netlist once per design row (warm-started from the nominal
/// periodic cycle) and extracts biomarkers. Failures are recorded, not
/// fatal, unless they exceed 10% of rows. workers <= 0 picks hardware
/// concurrency; results are identical for any worker count.
Dataset generate_dataset(const Netlist& netlist, const DesignMatrix& design,
                         const std::vector<BiomarkerDef>& outputs, const SolverConfig& solver,
                         int workers = 1);

/// CSV with header in:<name>,...,out:<name>,... plus a JSON sidecar
/// (path + ".meta") holding seed, ranges, netlist hash, and failed rows.
void save_dataset(const Dataset& dataset, const std::string& csv_path);
Dataset load_dataset(const std::string& csv_path);

/// Per-column standardization fitted on training data.
struct Scaler {
    Vector in_mean, in_std;
    Vector out_mean, out_std;

    Matrix scale_inputs(const Matrix& x) const;
    Matrix unscale_inputs(const Matrix& x) const;
    Matrix scale_outputs(const Matrix& y) const;
    Matrix unscale_outputs(const Matrix& y) const;
};

struct SplitResult {
    Dataset train;
    Dataset test;
    Scaler scaler;
};

/// Seeded uniform shuffle split; the scaler is fitted on the training rows
/// only. Throws Error for datasets under 10 rows, test_fraction outside
/// (0,1), or constant columns (named in the message).
SplitResult split_normalize(const Dataset& dataset, double test_fraction, std::uint64_t seed);

}  // namespace lumen
