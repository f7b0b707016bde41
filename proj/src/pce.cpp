#include "lumen/pce.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace lumen {

namespace {

long long binom(int n, int k) {
    long long r = 1;
    for (int i = 1; i <= k; ++i) {
        r = r * (n - k + i) / i;
        if (r > 100000000) return r;  // caller guards the real limit
    }
    return r;
}

void enumerate_degree(int d, int degree, std::vector<int>& current,
                      std::vector<std::vector<int>>& out) {
    const int pos = static_cast<int>(current.size());
    if (pos == d - 1) {
        current.push_back(degree);
        out.push_back(current);
        current.pop_back();
        return;
    }
    for (int g = 0; g <= degree; ++g) {
        current.push_back(g);
        enumerate_degree(d, degree - g, current, out);
        current.pop_back();
    }
}

}  // namespace

PceBasis basis_enumerate(int d, int P) {
    if (d < 1) throw Error("basis_enumerate needs d >= 1");
    if (P < 0) throw Error("basis_enumerate needs P >= 0");
    if (binom(d + P, d) > 1000000)
        throw Error("PCE basis too large: C(" + std::to_string(d + P) + ", " + std::to_string(d) +
                    ") exceeds 10^6 terms");
    PceBasis basis;
    basis.d = d;
    basis.max_degree = P;
    std::vector<int> current;
    for (int degree = 0; degree <= P; ++degree)
        enumerate_degree(d, degree, current, basis.multi_indices);
    return basis;
}

double legendre_orthonormal(int k, double x) {
    if (k < 0) throw Error("legendre_orthonormal needs k >= 0");
    double prev = 1.0, curr = x;
    if (k == 0) return 1.0;
    for (int i = 1; i < k; ++i) {
        const double next = ((2.0 * i + 1.0) * x * curr - i * prev) / (i + 1.0);
        prev = curr;
        curr = next;
    }
    return std::sqrt(2.0 * k + 1.0) * curr;
}

double legendre_orthonormal_deriv(int k, double x) {
    if (k < 0) throw Error("legendre_orthonormal_deriv needs k >= 0");
    if (k == 0) return 0.0;
    double p_prev = 1.0, p_curr = x;
    double d_prev = 0.0, d_curr = 1.0;
    for (int i = 1; i < k; ++i) {
        const double p_next = ((2.0 * i + 1.0) * x * p_curr - i * p_prev) / (i + 1.0);
        const double d_next = d_prev + (2.0 * i + 1.0) * p_curr;
        p_prev = p_curr;
        p_curr = p_next;
        d_prev = d_curr;
        d_curr = d_next;
    }
    return std::sqrt(2.0 * k + 1.0) * d_curr;
}

namespace {

void check_ranges_dim(const std::vector<std::pair<double, double>>& ranges, int d) {
    if (static_cast<int>(ranges.size()) != d)
        throw Error("PCE ranges count " + std::to_string(ranges.size()) +
                    " does not match dimension " + std::to_string(d));
    for (const auto& [lo, hi] : ranges)
        if (!(lo < hi)) throw Error("PCE range low must be below high");
}

/// Physical points -> [-1,1]^d; counts (and reports) out-of-range points.
Matrix to_unit_cube(const Matrix& x, const std::vector<std::pair<double, double>>& ranges,
                    bool warn) {
    Matrix u = x;
    for (Index j = 0; j < x.cols(); ++j) {
        const auto [lo, hi] = ranges[static_cast<std::size_t>(j)];
        u.col(j) = (2.0 * (x.col(j).array() - lo) / (hi - lo) - 1.0).matrix();
    }
    if (warn) {
        const Index outside =
            ((u.array() < -1.0 - 1e-12) || (u.array() > 1.0 + 1e-12)).cast<int>().sum();
        if (outside > 0)
            std::fprintf(stderr,
                         "warning: pce evaluated outside its fitted range (%lld coordinates)\n",
                         static_cast<long long>(outside));
    }
    return u;
}

/// n x K matrix of tensorized orthonormal Legendre values.
Matrix basis_matrix(const Matrix& u, const std::vector<std::vector<int>>& indices, int max_degree) {
    const Index n = u.rows();
    const int d = static_cast<int>(u.cols());
    Matrix phi(n, static_cast<Index>(indices.size()));
    std::vector<double> table(static_cast<std::size_t>(d) * (max_degree + 1));
    for (Index i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j)
            for (int k = 0; k <= max_degree; ++k)
                table[static_cast<std::size_t>(j) * (max_degree + 1) + k] =
                    legendre_orthonormal(k, u(i, j));
        for (std::size_t t = 0; t < indices.size(); ++t) {
            double prod = 1.0;
            for (int j = 0; j < d; ++j)
                prod *= table[static_cast<std::size_t>(j) * (max_degree + 1) + indices[t][j]];
            phi(i, static_cast<Index>(t)) = prod;
        }
    }
    return phi;
}

struct FitResult {
    Matrix coefficients;
    bool ridge_used = false;
};

FitResult solve_lsq(const Matrix& phi, const Matrix& y, bool ridge_fallback) {
    Eigen::ColPivHouseholderQR<Matrix> qr(phi);
    if (qr.rank() == phi.cols()) return {qr.solve(y), false};
    if (!ridge_fallback)
        throw SolverError("PCE normal equations are rank deficient (rank " +
                          std::to_string(qr.rank()) + " of " + std::to_string(phi.cols()) +
                          "); enable the ridge fallback or reduce the degree");
    const Matrix gram = phi.transpose() * phi;
    const double lambda = 1e-8 * gram.trace() / static_cast<double>(phi.cols());
    Matrix reg = gram;
    reg.diagonal().array() += lambda;
    return {reg.llt().solve(phi.transpose() * y), true};
}

Vector loo_from_phi(const Matrix& phi, const Matrix& y, const Matrix& coefficients,
                    bool ridge_used) {
    const Index n = phi.rows();
    Vector h(n);
    if (!ridge_used) {
        Eigen::HouseholderQR<Matrix> qr(phi);
        const Matrix thin_q =
            qr.householderQ() * Matrix::Identity(n, phi.cols());
        h = thin_q.rowwise().squaredNorm();
    } else {
        Matrix gram = phi.transpose() * phi;
        gram.diagonal().array() += 1e-8 * gram.trace() / static_cast<double>(phi.cols());
        const Matrix solved = gram.llt().solve(phi.transpose());  // K x n
        for (Index i = 0; i < n; ++i) h[i] = phi.row(i).dot(solved.col(i));
    }
    const Matrix residual = y - phi * coefficients;
    Vector loo(y.cols());
    for (Index k = 0; k < y.cols(); ++k) {
        double acc = 0.0;
        for (Index i = 0; i < n; ++i) {
            const double denom = 1.0 - h[i];
            if (denom < 1e-12)
                throw SolverError("PCE leave-one-out is degenerate: leverage h_ii = 1 at row " +
                                  std::to_string(i));
            const double e = residual(i, k) / denom;
            acc += e * e;
        }
        const double mean = y.col(k).mean();
        const double var = (y.col(k).array() - mean).square().mean();
        const double num = acc / static_cast<double>(n);
        // Constant outputs have no variance to normalize by; an exact fit
        // (residuals at machine precision of the data scale) reports zero.
        const double scale = 1.0 + y.col(k).array().square().mean();
        if (var > 1e-30 * scale)
            loo[k] = num / var;
        else if (num <= 1e-24 * scale)
            loo[k] = 0.0;
        else
            throw Error("PCE leave-one-out undefined: output column " + std::to_string(k) +
                        " has zero variance");
    }
    return loo;
}

}  // namespace

PceModel pce_fit(const Matrix& x_physical, const Matrix& y,
                 const std::vector<std::pair<double, double>>& ranges, const PceBasis& basis,
                 double epsilon, bool ridge_fallback) {
    check_ranges_dim(ranges, basis.d);
    if (x_physical.cols() != basis.d) throw Error("pce_fit: x column count differs from basis d");
    if (x_physical.rows() != y.rows()) throw Error("pce_fit: x and y row counts differ");
    if (x_physical.rows() < basis.size())
        throw Error("pce_fit needs at least C(d+P, d) = " + std::to_string(basis.size()) +
                    " rows for d = " + std::to_string(basis.d) +
                    ", P = " + std::to_string(basis.max_degree) + "; got " +
                    std::to_string(x_physical.rows()));

    const Matrix u = to_unit_cube(x_physical, ranges, false);
    const Matrix phi_full = basis_matrix(u, basis.multi_indices, basis.max_degree);

    // Active-column view of the full basis; pruning loops re-solve on the
    // retained columns until no term falls below the relative threshold.
    std::vector<Index> active(static_cast<std::size_t>(basis.size()));
    for (std::size_t j = 0; j < active.size(); ++j) active[j] = static_cast<Index>(j);
    std::size_t constant_term = 0;
    for (std::size_t j = 0; j < basis.multi_indices.size(); ++j)
        if (std::all_of(basis.multi_indices[j].begin(), basis.multi_indices[j].end(),
                        [](int g) { return g == 0; }))
            constant_term = j;

    Matrix phi;
    FitResult fit;
    for (;;) {
        phi.resize(phi_full.rows(), static_cast<Index>(active.size()));
        for (std::size_t j = 0; j < active.size(); ++j) phi.col(static_cast<Index>(j)) = phi_full.col(active[j]);
        fit = solve_lsq(phi, y, ridge_fallback);
        if (epsilon <= 0.0) break;

        double max_norm = 0.0;
        for (Index j = 0; j < fit.coefficients.rows(); ++j)
            max_norm = std::max(max_norm, fit.coefficients.row(j).norm());
        std::vector<Index> kept;
        for (std::size_t j = 0; j < active.size(); ++j) {
            const bool is_constant = active[j] == static_cast<Index>(constant_term);
            if (is_constant || fit.coefficients.row(static_cast<Index>(j)).norm() >= epsilon * max_norm)
                kept.push_back(active[j]);
        }
        if (kept.size() == active.size()) break;
        active = std::move(kept);
    }

    PceModel model;
    model.basis.d = basis.d;
    model.basis.max_degree = basis.max_degree;
    for (Index j : active) model.basis.multi_indices.push_back(basis.multi_indices[static_cast<std::size_t>(j)]);
    model.coefficients = fit.coefficients;
    model.ranges = ranges;
    model.ridge_used = fit.ridge_used;
    model.epsilon = epsilon;
    model.loo_error = loo_from_phi(phi, y, fit.coefficients, fit.ridge_used);
    return model;
}

Matrix pce_eval(const PceModel& model, const Matrix& x_physical) {
    if (x_physical.cols() != model.basis.d)
        throw Error("pce_eval: input has " + std::to_string(x_physical.cols()) +
                    " columns, model expects " + std::to_string(model.basis.d));
    const Matrix u = to_unit_cube(x_physical, model.ranges, true);
    const Matrix phi = basis_matrix(u, model.basis.multi_indices, model.basis.max_degree);
    return phi * model.coefficients;
}

Vector pce_eval(const PceModel& model, const Vector& x_physical) {
    return pce_eval(model, Matrix(x_physical.transpose())).row(0).transpose();
}

Vector pce_loo_error(const PceModel& model, const Matrix& x_physical, const Matrix& y) {
    const Matrix u = to_unit_cube(x_physical, model.ranges, false);
    const Matrix phi = basis_matrix(u, model.basis.multi_indices, model.basis.max_degree);
    const FitResult fit = solve_lsq(phi, y, model.ridge_used);
    return loo_from_phi(phi, y, fit.coefficients, fit.ridge_used);
}

SobolIndices pce_sobol(const PceModel& model) {
    const int d = model.basis.d;
    const Index m = model.coefficients.cols();
    SobolIndices indices;
    indices.first_order = Matrix::Zero(d, m);
    indices.total = Matrix::Zero(d, m);
    for (Index k = 0; k < m; ++k) {
        double variance = 0.0;
        for (std::size_t j = 0; j < model.basis.multi_indices.size(); ++j) {
            const auto& mi = model.basis.multi_indices[j];
            const bool constant = std::all_of(mi.begin(), mi.end(), [](int g) { return g == 0; });
            if (!constant) variance += model.coefficients(static_cast<Index>(j), k) *
                                       model.coefficients(static_cast<Index>(j), k);
        }
        if (variance <= 0.0)
            throw Error("pce_sobol: output column " + std::to_string(k) +
                        " has zero expansion variance");
        for (std::size_t j = 0; j < model.basis.multi_indices.size(); ++j) {
            const auto& mi = model.basis.multi_indices[j];
            const double share = model.coefficients(static_cast<Index>(j), k) *
                                 model.coefficients(static_cast<Index>(j), k) / variance;
            int involved = 0, which = -1;
            for (int i = 0; i < d; ++i)
                if (mi[static_cast<std::size_t>(i)] > 0) {
                    ++involved;
                    which = i;
                }
            if (involved == 0) continue;
            if (involved == 1) indices.first_order(which, k) += share;
            for (int i = 0; i < d; ++i)
                if (mi[static_cast<std::size_t>(i)] > 0) indices.total(i, k) += share;
        }
    }
    return indices;
}

PceEmulator::PceEmulator(PceModel model, std::vector<std::string> input_names,
                         std::vector<std::string> output_names)
    : model_(std::move(model)) {
    input_names_ = std::move(input_names);
    output_names_ = std::move(output_names);
    if (static_cast<int>(input_names_.size()) != model_.basis.d ||
        static_cast<Index>(output_names_.size()) != model_.coefficients.cols())
        throw Error("pce emulator: name lists do not match model dimensions");
}

Matrix PceEmulator::input_jacobian(const Vector& x) const {
    const int d = model_.basis.d;
    const Index m = model_.coefficients.cols();
    Vector u(d);
    std::vector<double> du_dx(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) {
        const auto [lo, hi] = model_.ranges[static_cast<std::size_t>(j)];
        u[j] = 2.0 * (x[j] - lo) / (hi - lo) - 1.0;
        du_dx[static_cast<std::size_t>(j)] = 2.0 / (hi - lo);
    }
    const int P = model_.basis.max_degree;
    Matrix vals(d, P + 1), derivs(d, P + 1);
    for (int j = 0; j < d; ++j)
        for (int k = 0; k <= P; ++k) {
            vals(j, k) = legendre_orthonormal(k, u[j]);
            derivs(j, k) = legendre_orthonormal_deriv(k, u[j]);
        }
    Matrix jac = Matrix::Zero(m, d);
    for (std::size_t t = 0; t < model_.basis.multi_indices.size(); ++t) {
        const auto& mi = model_.basis.multi_indices[t];
        for (int i = 0; i < d; ++i) {
            if (mi[static_cast<std::size_t>(i)] == 0) continue;
            double term = derivs(i, mi[static_cast<std::size_t>(i)]) * du_dx[static_cast<std::size_t>(i)];
            for (int j = 0; j < d; ++j)
                if (j != i) term *= vals(j, mi[static_cast<std::size_t>(j)]);
            jac.col(i) += term * model_.coefficients.row(static_cast<Index>(t)).transpose();
        }
    }
    return jac;
}

void PceEmulator::save(const std::string& path) const {
    ModelFile file;
    file.kind = "pce";
    file.add("inputs", input_names_);
    file.add("outputs", output_names_);
    file.add_int("max_degree", model_.basis.max_degree);
    file.add_scalar("epsilon", model_.epsilon);
    file.add_int("ridge_used", model_.ridge_used ? 1 : 0);
    for (const auto& [lo, hi] : model_.ranges)
        file.add("range", {format_double(lo), format_double(hi)});
    for (const auto& mi : model_.basis.multi_indices) {
        std::vector<std::string> row;
        for (int g : mi) row.push_back(std::to_string(g));
        file.add("mi", row);
    }
    for (Index j = 0; j < model_.coefficients.rows(); ++j)
        file.add_matrix_row("coef", model_.coefficients.row(j).transpose());
    file.add_vector("loo", model_.loo_error);
    for (const auto& [key, value] : meta) file.add_string("meta:" + key, value);
    file.save(path);
}

PceEmulator PceEmulator::from_model_file(const ModelFile& file) {
    if (file.kind != "pce") throw IoError("model file is '" + file.kind + "', expected pce");
    PceModel model;
    const auto inputs = file.get("inputs");
    model.basis.d = static_cast<int>(inputs.size());
    model.basis.max_degree = static_cast<int>(file.get_int("max_degree"));
    model.epsilon = file.get_scalar("epsilon");
    model.ridge_used = file.get_int("ridge_used") != 0;
    for (const auto* rec : file.get_all("range")) {
        if (rec->size() != 2) throw IoError("pce model: range record needs two values");
        model.ranges.emplace_back(parse_double((*rec)[0]), parse_double((*rec)[1]));
    }
    for (const auto* rec : file.get_all("mi")) {
        std::vector<int> mi;
        for (const auto& s : *rec) mi.push_back(static_cast<int>(parse_int(s)));
        if (static_cast<int>(mi.size()) != model.basis.d)
            throw IoError("pce model: multi-index length differs from input count");
        model.basis.multi_indices.push_back(std::move(mi));
    }
    model.coefficients = file.get_matrix("coef");
    model.loo_error = file.get_vector("loo");
    if (model.coefficients.rows() != static_cast<Index>(model.basis.multi_indices.size()))
        throw IoError("pce model: coefficient rows differ from multi-index count");
    PceEmulator emulator(std::move(model), inputs, file.get("outputs"));
    for (const auto& [key, values] : file.records)
        if (key.rfind("meta:", 0) == 0 && !values.empty())
            emulator.meta[key.substr(5)] = values.front();
    return emulator;
}

}  // namespace lumen
