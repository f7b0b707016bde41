#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include "lumen/io.hpp"
#include "lumen/netlist.hpp"
#include "lumen/rng.hpp"
#include "lumen/sampling.hpp"
#include "lumen/solver.hpp"

using namespace lumen;

namespace {

std::string temp_path(const std::string& leaf) {
    return (std::filesystem::temp_directory_path() / leaf).string();
}

// Single sampled resistance feeding a small RC load from a pulsatile flow
// source. At periodicity the compliance carries no net flow, so
// mean(p at n2) = 5 R and mean(q through r_out) = 5 exactly.
const char* kRcNet = R"(
[nodes]
gnd n1 n2

[params]
R   1.0  0.5  2.0  resistance
C   0.1  0.1  0.1  compliance

[heart]
period = 1.0

[components]
FlowSource src gnd n1 q=5.0 amp=1.0
Resistor r_in n1 n2 R=R
Compliance cap n2 gnd C=C
Resistor r_out n2 gnd R=R

[init]
p:n2 = 5.0
)";

SolverConfig fast_solver() {
    SolverConfig solver;
    solver.dt = 5e-3;
    solver.cycle_tol = 1e-4;
    solver.max_cycles = 80;
    return solver;
}

std::vector<BiomarkerDef> rc_outputs() {
    return parse_biomarker_defs("map_mean mean p:n2\nq_out mean q:r_out\n");
}

}  // namespace

TEST_CASE("sobol dimension 1 follows the Gray-code van der Corput order") {
    const Matrix p = sobol_sequence(8, 1);
    const double expected[8] = {0.0, 0.5, 0.75, 0.25, 0.375, 0.875, 0.625, 0.125};
    for (int i = 0; i < 8; ++i) CHECK(p(i, 0) == expected[i]);
}

TEST_CASE("sobol dimension 2 reproduces the classic first four points") {
    const Matrix p = sobol_sequence(4, 2);
    const double col0[4] = {0.0, 0.5, 0.75, 0.25};
    const double col1[4] = {0.0, 0.5, 0.25, 0.75};
    for (int i = 0; i < 4; ++i) {
        CHECK(p(i, 0) == col0[i]);
        CHECK(p(i, 1) == col1[i]);
    }
}

TEST_CASE("every dimension up to the table limit is a stratified (0,1)-sequence") {
    const Index n = 256;
    const Matrix p = sobol_sequence(n, kSobolMaxDim);
    for (int j = 0; j < kSobolMaxDim; ++j) {
        std::set<int> cells;
        for (Index i = 0; i < n; ++i) {
            const double x = p(i, j);
            REQUIRE(x >= 0.0);
            REQUIRE(x < 1.0);
            cells.insert(static_cast<int>(x * static_cast<double>(n)));
        }
        // One point per dyadic cell of width 1/n: the mark of valid
        // direction numbers in this dimension.
        CHECK(static_cast<Index>(cells.size()) == n);
    }
}

TEST_CASE("digital shift scrambling preserves stratification and determinism") {
    const Index n = 128;
    const Matrix a = sobol_sequence(n, 8, 42);
    const Matrix b = sobol_sequence(n, 8, 42);
    const Matrix c = sobol_sequence(n, 8, 43);
    const Matrix plain = sobol_sequence(n, 8, 0);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);
    CHECK((a - plain).cwiseAbs().maxCoeff() > 0.0);
    for (int j = 0; j < 8; ++j) {
        std::set<int> cells;
        for (Index i = 0; i < n; ++i) {
            REQUIRE(a(i, j) >= 0.0);
            REQUIRE(a(i, j) < 1.0);
            cells.insert(static_cast<int>(a(i, j) * static_cast<double>(n)));
        }
        CHECK(static_cast<Index>(cells.size()) == n);
    }
}

TEST_CASE("sobol integration error beats the Monte Carlo rate") {
    // Integral of prod(x_j) over [0,1]^6 is 2^-6; plain Monte Carlo with
    // 8192 points lands around 3e-3 error, a Sobol net goes far below.
    const int d = 6;
    const Index n = 8192;
    const Matrix p = sobol_sequence(n, d);
    double acc = 0.0;
    for (Index i = 0; i < n; ++i) acc += p.row(i).prod();
    const double est = acc / static_cast<double>(n);
    CHECK(std::abs(est - std::pow(2.0, -d)) < 5e-4);
}

TEST_CASE("sobol rejects invalid dimensions and counts") {
    CHECK_THROWS_AS(sobol_sequence(4, 0), Error);
    CHECK_THROWS_AS(sobol_sequence(4, kSobolMaxDim + 1), Error);
    CHECK_THROWS_AS(sobol_sequence(0, 2), Error);
}

TEST_CASE("saltelli design has the documented block layout") {
    const std::vector<std::pair<double, double>> ranges = {{0.0, 1.0}, {10.0, 20.0}, {-5.0, 5.0}};
    const Index N = 8;
    const DesignMatrix design = saltelli_design(ranges, N, 3);
    CHECK(design.rows() == (2 * 3 + 2) * N);
    CHECK(design.d == 3);
    CHECK(design.N == N);
    CHECK(design.block_labels.size() == static_cast<std::size_t>(design.rows()));
    CHECK(design.block_labels[0] == "A");
    CHECK(design.block_labels[static_cast<std::size_t>(N)] == "B");
    CHECK(design.block_labels[static_cast<std::size_t>(2 * N)] == "AB:0");
    CHECK(design.block_labels[static_cast<std::size_t>((2 + 3) * N)] == "BA:0");

    const Matrix A = design.unit.topRows(N);
    const Matrix B = design.unit.middleRows(N, N);
    for (int i = 0; i < 3; ++i) {
        const Matrix AB = design.unit.middleRows((2 + i) * N, N);
        const Matrix BA = design.unit.middleRows((2 + 3 + i) * N, N);
        for (int j = 0; j < 3; ++j) {
            const Matrix& ab_src = (j == i) ? B : A;
            const Matrix& ba_src = (j == i) ? A : B;
            CHECK((AB.col(j) - ab_src.col(j)).cwiseAbs().maxCoeff() == 0.0);
            CHECK((BA.col(j) - ba_src.col(j)).cwiseAbs().maxCoeff() == 0.0);
        }
    }

    const DesignMatrix first = saltelli_design(ranges, N, 3, false);
    CHECK(first.rows() == (3 + 2) * N);
    for (const auto& label : first.block_labels) CHECK(label.rfind("BA", 0) != 0);

    // Physical mapping follows the per-column ranges.
    for (Index r = 0; r < design.rows(); ++r) {
        CHECK(design.physical(r, 1) == 10.0 + 10.0 * design.unit(r, 1));
        CHECK(design.physical(r, 2) == -5.0 + 10.0 * design.unit(r, 2));
    }
}

TEST_CASE("saltelli design is deterministic in the seed") {
    const std::vector<std::pair<double, double>> ranges = {{0.0, 1.0}, {0.0, 1.0}};
    const DesignMatrix a = saltelli_design(ranges, 16, 7);
    const DesignMatrix b = saltelli_design(ranges, 16, 7);
    const DesignMatrix c = saltelli_design(ranges, 16, 8);
    CHECK((a.unit - b.unit).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.unit - c.unit).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("design rejects degenerate ranges") {
    CHECK_THROWS_AS(saltelli_design({{1.0, 1.0}}, 8, 1), Error);
    CHECK_THROWS_AS(saltelli_design({}, 8, 1), Error);
    CHECK_THROWS_AS(sobol_design({{2.0, 1.0}}, 8, 1), Error);
}

TEST_CASE("generate_dataset recovers the analytic row values") {
    const Netlist net = parse_netlist(kRcNet, "rc");
    REQUIRE(net.sampled_parameters() == std::vector<std::string>{"R"});
    const DesignMatrix design = sobol_design({{0.5, 2.0}}, 16, 5);
    const Dataset ds = generate_dataset(net, design, rc_outputs(), fast_solver());
    REQUIRE(ds.rows() == 16);
    CHECK(ds.failed_rows.empty());
    CHECK(ds.input_names == std::vector<std::string>{"R"});
    CHECK(ds.output_names == std::vector<std::string>{"map_mean", "q_out"});
    for (Index i = 0; i < ds.rows(); ++i) {
        const double r = ds.inputs(i, 0);
        CHECK(ds.outputs(i, 0) == doctest::Approx(5.0 * r).epsilon(0.02));
        CHECK(ds.outputs(i, 1) == doctest::Approx(5.0).epsilon(0.01));
    }
}

TEST_CASE("generate_dataset results do not depend on the worker count") {
    const Netlist net = parse_netlist(kRcNet, "rc");
    const DesignMatrix design = sobol_design({{0.5, 2.0}}, 12, 9);
    const Dataset one = generate_dataset(net, design, rc_outputs(), fast_solver(), 1);
    const Dataset three = generate_dataset(net, design, rc_outputs(), fast_solver(), 3);
    REQUIRE(one.rows() == three.rows());
    CHECK((one.outputs - three.outputs).cwiseAbs().maxCoeff() == 0.0);
    CHECK((one.inputs - three.inputs).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("generate_dataset records sparse failures and aborts on mass failure") {
    const Netlist net = parse_netlist(kRcNet, "rc");
    // Unit values below 0.05/1.55 map under the netlist's hard lower bound
    // 0.5; among the first 32 van der Corput points exactly u=0 and u=1/32
    // (6.25% of rows) do so.
    const DesignMatrix grazing = sobol_design({{0.45, 2.0}}, 32, 0);
    const Dataset ds = generate_dataset(net, grazing, rc_outputs(), fast_solver());
    CHECK(ds.failed_rows.size() == 2);
    CHECK(ds.rows() == 30);
    CHECK(std::find(ds.failed_rows.begin(), ds.failed_rows.end(), 0) != ds.failed_rows.end());

    const DesignMatrix hopeless = sobol_design({{0.05, 0.40}}, 8, 0);
    CHECK_THROWS_AS(generate_dataset(net, hopeless, rc_outputs(), fast_solver()), SolverError);
}

TEST_CASE("generate_dataset rejects a design with the wrong column count") {
    const Netlist net = parse_netlist(kRcNet, "rc");
    const DesignMatrix design = sobol_design({{0.5, 2.0}, {0.5, 2.0}}, 8, 1);
    CHECK_THROWS_AS(generate_dataset(net, design, rc_outputs(), fast_solver()), Error);
}

TEST_CASE("dataset save/load round-trips values, ranges, and failures") {
    Dataset ds;
    ds.input_names = {"a", "b"};
    ds.output_names = {"y"};
    ds.inputs.resize(3, 2);
    ds.inputs << 0.1, 1.0 / 3.0, 0.2, 2.0 / 7.0, -5.5, 1e-12;
    ds.outputs.resize(3, 1);
    ds.outputs << 1.25, -2.5, 3.75;
    ds.ranges = {{0.0, 1.0}, {-10.0, 10.0}};
    ds.failed_rows = {4, 9};
    ds.meta["netlist"] = "rc";

    const std::string path = temp_path("lumen_sampling_roundtrip.csv");
    save_dataset(ds, path);
    const Dataset back = load_dataset(path);
    CHECK(back.input_names == ds.input_names);
    CHECK(back.output_names == ds.output_names);
    CHECK((back.inputs - ds.inputs).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.outputs - ds.outputs).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(back.ranges.size() == 2);
    CHECK(back.ranges[1].first == -10.0);
    CHECK(back.failed_rows == ds.failed_rows);
    CHECK(back.meta.at("netlist") == "rc");
}

TEST_CASE("load_dataset rejects unprefixed columns") {
    const std::string path = temp_path("lumen_sampling_bad.csv");
    write_text_file(path, "in:a,whoops\n1,2\n");
    CHECK_THROWS_AS(load_dataset(path), IoError);
}

namespace {

Dataset synthetic_dataset(Index n) {
    Dataset ds;
    ds.input_names = {"x0", "x1"};
    ds.output_names = {"y"};
    ds.inputs.resize(n, 2);
    ds.outputs.resize(n, 1);
    Rng rng(123);
    for (Index i = 0; i < n; ++i) {
        ds.inputs(i, 0) = rng.uniform(-2.0, 3.0);
        ds.inputs(i, 1) = rng.uniform(10.0, 30.0);
        ds.outputs(i, 0) = 2.0 * ds.inputs(i, 0) - 0.1 * ds.inputs(i, 1) + rng.normal();
    }
    return ds;
}

}  // namespace

TEST_CASE("split_normalize splits, normalizes, and round-trips") {
    const Dataset ds = synthetic_dataset(100);
    const SplitResult split = split_normalize(ds, 0.2, 11);
    CHECK(split.test.rows() == 20);
    CHECK(split.train.rows() == 80);

    // Train and test together are a permutation of the original rows.
    std::vector<double> seen, original;
    for (Index i = 0; i < split.train.rows(); ++i) seen.push_back(split.train.inputs(i, 0));
    for (Index i = 0; i < split.test.rows(); ++i) seen.push_back(split.test.inputs(i, 0));
    for (Index i = 0; i < ds.rows(); ++i) original.push_back(ds.inputs(i, 0));
    std::sort(seen.begin(), seen.end());
    std::sort(original.begin(), original.end());
    CHECK(seen == original);

    const Matrix scaled = split.scaler.scale_inputs(split.train.inputs);
    for (Index j = 0; j < scaled.cols(); ++j) {
        CHECK(std::abs(scaled.col(j).mean()) < 1e-12);
        const double var = scaled.col(j).array().square().mean();
        CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
    }
    const Matrix back = split.scaler.unscale_inputs(scaled);
    CHECK((back - split.train.inputs).cwiseAbs().maxCoeff() < 1e-12);
    const Matrix y_back =
        split.scaler.unscale_outputs(split.scaler.scale_outputs(split.train.outputs));
    CHECK((y_back - split.train.outputs).cwiseAbs().maxCoeff() < 1e-12);

    // Deterministic in the seed.
    const SplitResult again = split_normalize(ds, 0.2, 11);
    CHECK((again.train.inputs - split.train.inputs).cwiseAbs().maxCoeff() == 0.0);
    const SplitResult other = split_normalize(ds, 0.2, 12);
    CHECK((other.train.inputs - split.train.inputs).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("split_normalize rejects tiny datasets, bad fractions, constant columns") {
    const Dataset ds = synthetic_dataset(9);
    CHECK_THROWS_AS(split_normalize(ds, 0.2, 1), Error);

    const Dataset ok = synthetic_dataset(50);
    CHECK_THROWS_AS(split_normalize(ok, 0.0, 1), Error);
    CHECK_THROWS_AS(split_normalize(ok, 1.0, 1), Error);

    Dataset flat = synthetic_dataset(50);
    flat.inputs.col(1).setConstant(4.0);
    try {
        split_normalize(flat, 0.2, 1);
        FAIL("expected a constant-column error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("x1") != std::string::npos);
    }
}
