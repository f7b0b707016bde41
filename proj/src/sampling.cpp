#include "lumen/sampling.hpp"

#include <json.hpp>
#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <thread>

#include "lumen/dae.hpp"
#include "lumen/io.hpp"
#include "lumen/rng.hpp"

namespace lumen {

namespace {

// ---------------------------------------------------------------------------
// Sobol direction numbers.
//
// Dimensions 2..21 carry the classic optimized initial direction numbers
// (Joe-Kuo style); higher dimensions derive their primitive polynomial by
// exhaustive enumeration over GF(2) and take deterministic admissible
// initial values from a SplitMix64 stream. Every entry, including the
// hard-coded ones, is validated at table build: the polynomial must be
// primitive and each m_k odd and below 2^k, so a corrupted entry fails
// loudly rather than degrading the net silently.
// ---------------------------------------------------------------------------

constexpr int kSobolBits = 53;  // resolution: one double mantissa

struct SeedRow {
    int s;                       // polynomial degree
    std::uint32_t a;             // inner coefficient bits, x^{s-1}..x^1
    std::array<std::uint32_t, 8> m;  // first s initial values
};

constexpr SeedRow kSeedRows[] = {
    {1, 0, {1}},
    {2, 1, {1, 3}},
    {3, 1, {1, 3, 1}},
    {3, 2, {1, 1, 1}},
    {4, 1, {1, 1, 3, 3}},
    {4, 4, {1, 3, 5, 13}},
    {5, 2, {1, 1, 5, 5, 17}},
    {5, 4, {1, 1, 5, 5, 5}},
    {5, 7, {1, 1, 7, 11, 19}},
    {5, 11, {1, 1, 5, 1, 1}},
    {5, 13, {1, 1, 1, 3, 11}},
    {5, 14, {1, 3, 5, 5, 31}},
    {6, 1, {1, 3, 3, 9, 7, 49}},
    {6, 13, {1, 1, 1, 15, 21, 21}},
    {6, 16, {1, 3, 1, 13, 27, 49}},
    {6, 19, {1, 1, 1, 15, 7, 5}},
    {6, 22, {1, 3, 1, 15, 13, 25}},
    {6, 25, {1, 1, 5, 5, 19, 61}},
    {7, 1, {1, 3, 7, 11, 23, 15, 103}},
    {7, 4, {1, 3, 7, 13, 13, 15, 69}},
};

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Polynomial arithmetic over GF(2); p has degree s (bit s and bit 0 set).
std::uint32_t gf2_mulmod(std::uint32_t x, std::uint32_t y, std::uint32_t p, int s) {
    std::uint32_t r = 0;
    while (y != 0) {
        if (y & 1u) r ^= x;
        y >>= 1;
        x <<= 1;
        if (x & (1u << s)) x ^= p;
    }
    return r;
}

std::uint32_t gf2_pow_x(std::uint64_t e, std::uint32_t p, int s) {
    std::uint32_t base = 2u % p;  // the polynomial "x" (degree s >= 1 keeps it)
    std::uint32_t r = 1u;
    while (e != 0) {
        if (e & 1ull) r = gf2_mulmod(r, base, p, s);
        base = gf2_mulmod(base, base, p, s);
        e >>= 1;
    }
    return r;
}

bool gf2_primitive(std::uint32_t p, int s) {
    if (s == 1) return p == 0b11u;  // x + 1
    const std::uint64_t order = (1ull << s) - 1ull;
    if (gf2_pow_x(order, p, s) != 1u) return false;
    std::uint64_t n = order;
    for (std::uint64_t q = 2; q * q <= n; ++q) {
        if (n % q != 0) continue;
        while (n % q == 0) n /= q;
        if (gf2_pow_x(order / q, p, s) == 1u) return false;
    }
    if (n > 1 && gf2_pow_x(order / n, p, s) == 1u) return false;
    return true;
}

struct DirRow {
    int s = 0;
    std::uint32_t poly = 0;  // full polynomial, bit s .. bit 0
    std::array<std::uint64_t, kSobolBits> v{};  // v[k-1] = m_k << (kSobolBits - k)
};

DirRow make_row(int s, std::uint32_t poly, const std::uint32_t* m_init) {
    if (!gf2_primitive(poly, s)) throw Error("sobol table: polynomial not primitive");
    std::array<std::uint64_t, kSobolBits> m{};
    for (int k = 1; k <= std::min(s, kSobolBits); ++k) {
        const std::uint64_t mk = m_init[k - 1];
        if (mk % 2 == 0 || mk >= (1ull << k)) throw Error("sobol table: inadmissible m value");
        m[k - 1] = mk;
    }
    for (int k = s + 1; k <= kSobolBits; ++k) {
        std::uint64_t mk = m[k - s - 1] ^ (m[k - s - 1] << s);
        for (int j = 1; j < s; ++j)
            if ((poly >> (s - j)) & 1u) mk ^= m[k - j - 1] << j;
        m[k - 1] = mk;
    }
    DirRow row;
    row.s = s;
    row.poly = poly;
    for (int k = 1; k <= kSobolBits; ++k) row.v[k - 1] = m[k - 1] << (kSobolBits - k);
    return row;
}

std::vector<DirRow> build_direction_table() {
    std::vector<DirRow> table;
    table.reserve(kSobolMaxDim);

    // Dimension 1 is the van der Corput sequence: m_k = 1 for every k,
    // by definition rather than by polynomial recurrence.
    {
        DirRow row;
        row.s = 1;
        row.poly = 0b11u;
        for (int k = 1; k <= kSobolBits; ++k) row.v[k - 1] = 1ull << (kSobolBits - k);
        table.push_back(row);
    }
    std::vector<std::uint32_t> used_polys{0b11u};
    for (const SeedRow& seed : kSeedRows) {
        const std::uint32_t poly = (1u << seed.s) | (seed.a << 1) | 1u;
        table.push_back(make_row(seed.s, poly, seed.m.data()));
        used_polys.push_back(poly);
    }

    // Remaining dimensions: next primitive polynomials in (degree, value)
    // order with deterministic admissible initial values.
    int s = 1;
    std::uint32_t candidate = 0;
    while (static_cast<int>(table.size()) < kSobolMaxDim) {
        if (candidate == 0 || candidate >= (1u << (s + 1))) {
            ++s;
            candidate = (1u << s) | 1u;
        }
        if (gf2_primitive(candidate, s) &&
            std::find(used_polys.begin(), used_polys.end(), candidate) == used_polys.end()) {
            std::array<std::uint32_t, kSobolBits> m_init{};
            std::uint64_t stream = 0x5EED0000ull + table.size();
            for (int k = 1; k <= s; ++k)
                m_init[k - 1] =
                    static_cast<std::uint32_t>((splitmix64(stream) >> 13) % (1ull << (k - 1))) * 2u +
                    1u;
            table.push_back(make_row(s, candidate, m_init.data()));
            used_polys.push_back(candidate);
        }
        candidate += 2;  // constant term must stay set
    }
    return table;
}

const std::vector<DirRow>& direction_table() {
    static const std::vector<DirRow> table = build_direction_table();
    return table;
}

}  // namespace

Matrix sobol_sequence(Index n, int d, std::uint64_t seed) {
    if (d < 1 || d > kSobolMaxDim)
        throw Error("sobol_sequence supports 1 <= d <= " + std::to_string(kSobolMaxDim));
    if (n < 1) throw Error("sobol_sequence needs n >= 1");
    const auto& table = direction_table();

    std::vector<std::uint64_t> shift(static_cast<std::size_t>(d), 0);
    if (seed != 0) {
        std::uint64_t stream = seed;
        for (auto& s : shift) s = splitmix64(stream) >> (64 - kSobolBits);
    }

    constexpr double kScale = 1.0 / static_cast<double>(1ull << kSobolBits);
    Matrix points(n, d);
    std::vector<std::uint64_t> x(static_cast<std::size_t>(d), 0);
    for (Index i = 0; i < n; ++i) {
        if (i > 0) {
            const int c = __builtin_ctzll(~static_cast<std::uint64_t>(i - 1));
            for (int j = 0; j < d; ++j) x[j] ^= table[j].v[c];
        }
        for (int j = 0; j < d; ++j)
            points(i, j) = static_cast<double>(x[j] ^ shift[j]) * kScale;
    }
    return points;
}

namespace {

void check_ranges(const std::vector<std::pair<double, double>>& ranges) {
    if (ranges.empty()) throw Error("design needs at least one input range");
    for (const auto& [lo, hi] : ranges)
        if (!(lo < hi)) throw Error("design range low must be below high");
}

Matrix to_physical(const Matrix& unit, const std::vector<std::pair<double, double>>& ranges) {
    Matrix phys = unit;
    for (Index j = 0; j < phys.cols(); ++j) {
        const auto [lo, hi] = ranges[static_cast<std::size_t>(j)];
        phys.col(j) = (phys.col(j).array() * (hi - lo) + lo).matrix();
    }
    return phys;
}

}  // namespace

DesignMatrix saltelli_design(const std::vector<std::pair<double, double>>& ranges, Index N,
                             std::uint64_t seed, bool second_order) {
    check_ranges(ranges);
    if (N < 1) throw Error("saltelli_design needs N >= 1");
    if ((N & (N - 1)) != 0)
        std::fprintf(stderr, "warning: Saltelli base size %lld is not a power of two\n",
                     static_cast<long long>(N));
    const int d = static_cast<int>(ranges.size());
    const Matrix ab = sobol_sequence(N, 2 * d, seed);

    DesignMatrix design;
    design.d = d;
    design.N = N;
    design.second_order = second_order;
    design.ranges = ranges;
    const Index blocks = second_order ? 2 * d + 2 : d + 2;
    design.unit.resize(blocks * N, d);
    design.block_labels.reserve(static_cast<std::size_t>(blocks * N));

    design.unit.topRows(N) = ab.leftCols(d);
    for (Index r = 0; r < N; ++r) design.block_labels.push_back("A");
    design.unit.middleRows(N, N) = ab.rightCols(d);
    for (Index r = 0; r < N; ++r) design.block_labels.push_back("B");
    for (int i = 0; i < d; ++i) {
        Matrix block = ab.leftCols(d);
        block.col(i) = ab.col(d + i);
        design.unit.middleRows((2 + i) * N, N) = block;
        for (Index r = 0; r < N; ++r) design.block_labels.push_back("AB:" + std::to_string(i));
    }
    if (second_order) {
        for (int i = 0; i < d; ++i) {
            Matrix block = ab.rightCols(d);
            block.col(i) = ab.col(i);
            design.unit.middleRows((2 + d + i) * N, N) = block;
            for (Index r = 0; r < N; ++r) design.block_labels.push_back("BA:" + std::to_string(i));
        }
    }
    design.physical = to_physical(design.unit, ranges);
    return design;
}

DesignMatrix sobol_design(const std::vector<std::pair<double, double>>& ranges, Index n,
                          std::uint64_t seed) {
    check_ranges(ranges);
    if (n < 1) throw Error("sobol_design needs n >= 1");
    DesignMatrix design;
    design.d = static_cast<int>(ranges.size());
    design.N = n;
    design.second_order = false;
    design.ranges = ranges;
    design.unit = sobol_sequence(n, design.d, seed);
    design.block_labels.assign(static_cast<std::size_t>(n), "S");
    design.physical = to_physical(design.unit, ranges);
    return design;
}

Dataset generate_dataset(const Netlist& netlist, const DesignMatrix& design,
                         const std::vector<BiomarkerDef>& outputs, const SolverConfig& solver,
                         int workers) {
    const auto names = netlist.sampled_parameters();
    if (static_cast<int>(names.size()) != design.d)
        throw Error("design has " + std::to_string(design.d) + " columns but netlist '" +
                    netlist.name + "' samples " + std::to_string(names.size()) + " parameters");
    if (outputs.empty()) throw Error("generate_dataset needs at least one output");

    const Index n = design.rows();
    const Index m = static_cast<Index>(outputs.size());
    const auto nominal = netlist.nominal_values();

    // Shared warm start: the nominal periodic state, identical for every row
    // so results do not depend on evaluation order or worker count.
    Vector y_warm, z_warm;
    bool warm = false;
    try {
        const DaeSystem sys = assemble_dae(netlist, nominal);
        const CycleSolution cyc = run_to_periodic(sys, solver);
        if (cyc.converged) {
            y_warm = cyc.states.row(cyc.states.rows() - 1).transpose();
            z_warm = cyc.algebraic.row(cyc.algebraic.rows() - 1).transpose();
            warm = true;
        }
    } catch (const Error&) {
    }

    Matrix out_rows(n, m);
    std::vector<char> ok(static_cast<std::size_t>(n), 0);
    std::atomic<Index> next{0};
    auto run_rows = [&]() {
        for (;;) {
            const Index i = next.fetch_add(1);
            if (i >= n) return;
            auto values = nominal;
            for (int j = 0; j < design.d; ++j)
                values[names[static_cast<std::size_t>(j)]] = design.physical(i, j);
            try {
                const DaeSystem sys = assemble_dae(netlist, values);
                const CycleSolution cyc =
                    run_to_periodic(sys, solver, warm ? &y_warm : nullptr, warm ? &z_warm : nullptr);
                if (!cyc.converged) continue;
                const BiomarkerSet bm = extract_biomarkers(sys, cyc, outputs);
                bool finite = true;
                for (Index k = 0; k < m; ++k) {
                    out_rows(i, k) = bm.at(outputs[static_cast<std::size_t>(k)].name);
                    finite = finite && std::isfinite(out_rows(i, k));
                }
                ok[static_cast<std::size_t>(i)] = finite ? 1 : 0;
            } catch (const Error&) {
            }
        }
    };

    int n_workers = workers;
    if (n_workers <= 0) n_workers = static_cast<int>(std::thread::hardware_concurrency());
    n_workers = std::max(1, std::min<int>(n_workers, static_cast<int>(n)));
    if (n_workers == 1) {
        run_rows();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n_workers));
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(run_rows);
        for (auto& t : pool) t.join();
    }

    Dataset dataset;
    dataset.input_names = names;
    for (const auto& def : outputs) dataset.output_names.push_back(def.name);
    dataset.ranges = design.ranges;
    const Index n_ok = static_cast<Index>(std::count(ok.begin(), ok.end(), char(1)));
    dataset.inputs.resize(n_ok, design.d);
    dataset.outputs.resize(n_ok, m);
    Index r = 0;
    for (Index i = 0; i < n; ++i) {
        if (!ok[static_cast<std::size_t>(i)]) {
            dataset.failed_rows.push_back(i);
            continue;
        }
        dataset.inputs.row(r) = design.physical.row(i);
        dataset.outputs.row(r) = out_rows.row(i);
        ++r;
    }
    if (10 * static_cast<Index>(dataset.failed_rows.size()) > n)
        throw SolverError("dataset generation failed on " +
                          std::to_string(dataset.failed_rows.size()) + " of " + std::to_string(n) +
                          " rows (first failed row " +
                          std::to_string(dataset.failed_rows.front()) + ")");
    return dataset;
}

void save_dataset(const Dataset& dataset, const std::string& csv_path) {
    Table table;
    for (const auto& name : dataset.input_names) table.columns.push_back("in:" + name);
    for (const auto& name : dataset.output_names) table.columns.push_back("out:" + name);
    table.values.resize(dataset.rows(), dataset.inputs.cols() + dataset.outputs.cols());
    table.values.leftCols(dataset.inputs.cols()) = dataset.inputs;
    table.values.rightCols(dataset.outputs.cols()) = dataset.outputs;
    std::string text;
    for (const auto& [key, value] : dataset.meta) text += "# " + key + "=" + value + "\n";
    write_text_file(csv_path, text + to_csv(table));

    nlohmann::json meta;
    for (const auto& [key, value] : dataset.meta) meta[key] = value;
    nlohmann::json ranges = nlohmann::json::object();
    for (std::size_t j = 0; j < dataset.ranges.size(); ++j)
        ranges[dataset.input_names[j]] = {dataset.ranges[j].first, dataset.ranges[j].second};
    meta["ranges"] = ranges;
    meta["failed_rows"] = dataset.failed_rows;
    meta["rows"] = dataset.rows();
    meta["inputs"] = dataset.input_names;
    meta["outputs"] = dataset.output_names;
    write_text_file(csv_path + ".meta", meta.dump(2) + "\n");
}

Dataset load_dataset(const std::string& csv_path) {
    const Table table = read_csv(csv_path);
    Dataset dataset;
    Index n_in = 0;
    for (const auto& column : table.columns) {
        if (column.rfind("in:", 0) == 0) {
            if (!dataset.output_names.empty())
                throw IoError(csv_path + ": input column after output columns");
            dataset.input_names.push_back(column.substr(3));
            ++n_in;
        } else if (column.rfind("out:", 0) == 0) {
            dataset.output_names.push_back(column.substr(4));
        } else {
            throw IoError(csv_path + ": column '" + column + "' lacks in:/out: prefix");
        }
    }
    if (n_in == 0 || dataset.output_names.empty())
        throw IoError(csv_path + ": dataset needs both in: and out: columns");
    dataset.inputs = table.values.leftCols(n_in);
    dataset.outputs = table.values.rightCols(table.values.cols() - n_in);

    const std::string meta_path = csv_path + ".meta";
    if (std::filesystem::exists(meta_path)) {
        nlohmann::json meta;
        try {
            meta = nlohmann::json::parse(read_text_file(meta_path));
        } catch (const nlohmann::json::parse_error& e) {
            throw IoError(meta_path + ": " + e.what());
        }
        if (meta.contains("ranges")) {
            dataset.ranges.clear();
            for (const auto& name : dataset.input_names) {
                if (!meta["ranges"].contains(name))
                    throw IoError(meta_path + ": missing range for input '" + name + "'");
                const auto& pair = meta["ranges"][name];
                dataset.ranges.emplace_back(pair.at(0).get<double>(), pair.at(1).get<double>());
            }
        }
        if (meta.contains("failed_rows"))
            for (const auto& idx : meta["failed_rows"])
                dataset.failed_rows.push_back(idx.get<Index>());
        for (const auto& [key, value] : meta.items())
            if (value.is_string()) dataset.meta[key] = value.get<std::string>();
    }
    return dataset;
}

namespace {

Matrix apply_scale(const Matrix& x, const Vector& mean, const Vector& std, bool forward) {
    if (x.cols() != mean.size()) throw Error("scaler column count mismatch");
    Matrix out = x;
    for (Index j = 0; j < x.cols(); ++j) {
        if (forward)
            out.col(j) = ((x.col(j).array() - mean[j]) / std[j]).matrix();
        else
            out.col(j) = (x.col(j).array() * std[j] + mean[j]).matrix();
    }
    return out;
}

void fit_columns(const Matrix& x, const std::vector<std::string>& names, const char* side,
                 Vector& mean, Vector& std) {
    mean.resize(x.cols());
    std.resize(x.cols());
    for (Index j = 0; j < x.cols(); ++j) {
        mean[j] = x.col(j).mean();
        const double var =
            (x.col(j).array() - mean[j]).square().sum() / static_cast<double>(x.rows());
        std[j] = std::sqrt(var);
        if (!(std[j] > 0.0))
            throw Error(std::string("constant ") + side + " column '" +
                        names[static_cast<std::size_t>(j)] + "' cannot be normalized");
    }
}

}  // namespace

Matrix Scaler::scale_inputs(const Matrix& x) const { return apply_scale(x, in_mean, in_std, true); }
Matrix Scaler::unscale_inputs(const Matrix& x) const {
    return apply_scale(x, in_mean, in_std, false);
}
Matrix Scaler::scale_outputs(const Matrix& y) const {
    return apply_scale(y, out_mean, out_std, true);
}
Matrix Scaler::unscale_outputs(const Matrix& y) const {
    return apply_scale(y, out_mean, out_std, false);
}

SplitResult split_normalize(const Dataset& dataset, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw Error("test_fraction must lie in (0, 1)");
    const Index n = dataset.rows();
    if (n < 10) throw Error("dataset too small to split (need >= 10 rows)");
    const Index n_test = std::max<Index>(1, static_cast<Index>(std::llround(
                                               static_cast<double>(n) * test_fraction)));
    if (n_test >= n) throw Error("test_fraction leaves no training rows");

    const auto order = shuffled_indices(static_cast<std::size_t>(n), seed);
    SplitResult split;
    auto take = [&](Dataset& out, std::size_t begin, std::size_t count) {
        out.input_names = dataset.input_names;
        out.output_names = dataset.output_names;
        out.ranges = dataset.ranges;
        out.meta = dataset.meta;
        out.inputs.resize(static_cast<Index>(count), dataset.inputs.cols());
        out.outputs.resize(static_cast<Index>(count), dataset.outputs.cols());
        for (std::size_t i = 0; i < count; ++i) {
            out.inputs.row(static_cast<Index>(i)) =
                dataset.inputs.row(static_cast<Index>(order[begin + i]));
            out.outputs.row(static_cast<Index>(i)) =
                dataset.outputs.row(static_cast<Index>(order[begin + i]));
        }
    };
    take(split.test, 0, static_cast<std::size_t>(n_test));
    take(split.train, static_cast<std::size_t>(n_test), static_cast<std::size_t>(n - n_test));
    fit_columns(split.train.inputs, dataset.input_names, "input", split.scaler.in_mean,
                split.scaler.in_std);
    fit_columns(split.train.outputs, dataset.output_names, "output", split.scaler.out_mean,
                split.scaler.out_std);
    return split;
}

}  // namespace lumen
