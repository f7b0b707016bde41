#include "lumen/gp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace lumen {

double rbf_kernel(const Vector& x, const Vector& xp, double sigma2, double length) {
    if (sigma2 <= 0.0 || length <= 0.0) throw Error("rbf_kernel needs sigma2 > 0 and length > 0");
    return sigma2 * std::exp(-(x - xp).squaredNorm() / (2.0 * length * length));
}

namespace {

Matrix squared_distances(const Matrix& a, const Matrix& b) {
    const Vector a2 = a.rowwise().squaredNorm();
    const Vector b2 = b.rowwise().squaredNorm();
    Matrix d2 = (-2.0 * a * b.transpose());
    d2.colwise() += a2;
    d2.rowwise() += b2.transpose();
    return d2.cwiseMax(0.0);
}

Matrix kernel_matrix(const Matrix& d2, double sigma2, double length) {
    return sigma2 * (-d2 / (2.0 * length * length)).array().exp().matrix();
}

std::vector<double> log_grid(double lo, double hi, int count) {
    std::vector<double> grid(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        grid[static_cast<std::size_t>(i)] =
            std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (count - 1.0));
    return grid;
}

/// LML over a (sigma2, noise) plane for one length scale via the
/// eigendecomposition of the unit-variance kernel: K = sigma2 Q L Q^T +
/// noise I, so each candidate costs O(n) instead of a fresh Cholesky.
struct LengthScaleEig {
    Vector eigenvalues;
    Matrix qty;  // Q^T Y, n x m

    LengthScaleEig(const Matrix& d2, double length, const Matrix& Y) {
        const Matrix c = kernel_matrix(d2, 1.0, length);
        Eigen::SelfAdjointEigenSolver<Matrix> eig(c);
        if (eig.info() != Eigen::Success)
            throw SolverError("gp_fit: eigendecomposition of the kernel matrix failed");
        eigenvalues = eig.eigenvalues().cwiseMax(0.0);
        qty = eig.eigenvectors().transpose() * Y;
    }

    double lml(double sigma2, double noise, Index output) const {
        const Index n = eigenvalues.size();
        double quad = 0.0, logdet = 0.0;
        for (Index i = 0; i < n; ++i) {
            const double lam = sigma2 * eigenvalues[i] + noise;
            quad += qty(i, output) * qty(i, output) / lam;
            logdet += std::log(lam);
        }
        return -0.5 * quad - 0.5 * logdet -
               0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
    }
};

Matrix cholesky_with_jitter(const Matrix& k, double noise, double& jitter_used) {
    Matrix reg = k;
    reg.diagonal().array() += noise;
    double jitter = 0.0;
    for (;;) {
        Eigen::LLT<Matrix> llt(reg);
        if (llt.info() == Eigen::Success) {
            jitter_used = std::max(jitter_used, jitter);
            return llt.matrixL();
        }
        jitter = (jitter == 0.0) ? 1e-10 : jitter * 10.0;
        if (jitter > 1e-6)
            throw SolverError("gp_fit: kernel matrix not positive definite after jitter 1e-6");
        reg = k;
        reg.diagonal().array() += noise + jitter;
    }
}

GpModel assemble_model(const Matrix& X, const Matrix& Y, const std::vector<GpHyper>& hyper) {
    GpModel model;
    model.X = X;
    model.Y = Y;
    model.hyper = hyper;
    model.alpha.resize(X.rows(), Y.cols());
    const Matrix d2 = squared_distances(X, X);
    for (Index k = 0; k < Y.cols(); ++k) {
        const auto& h = hyper[static_cast<std::size_t>(k)];
        if (h.sigma2 <= 0 || h.length <= 0 || h.noise < 0)
            throw Error("gp hyperparameters must be positive (noise non-negative)");
        const Matrix kernel = kernel_matrix(d2, h.sigma2, h.length);
        Matrix L = cholesky_with_jitter(kernel, h.noise, model.jitter_used);
        model.alpha.col(k) =
            L.transpose().triangularView<Eigen::Upper>().solve(
                L.triangularView<Eigen::Lower>().solve(Y.col(k)));
        model.L.push_back(std::move(L));
    }
    return model;
}

}  // namespace

double gp_log_marginal(const Matrix& X, const Vector& y, const GpHyper& hyper) {
    const Index n = X.rows();
    const Matrix d2 = squared_distances(X, X);
    Matrix k = kernel_matrix(d2, hyper.sigma2, hyper.length);
    k.diagonal().array() += hyper.noise;
    const Eigen::LLT<Matrix> llt(k);
    if (llt.info() != Eigen::Success)
        throw SolverError("gp_log_marginal: kernel matrix not positive definite");
    const Matrix l = llt.matrixL();
    const Vector alpha = llt.solve(y);
    return -0.5 * y.dot(alpha) - l.diagonal().array().log().sum() -
           0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
}

GpModel gp_fit(const Matrix& X_scaled, const Matrix& Y_scaled) {
    if (X_scaled.rows() < 2) throw Error("gp_fit needs at least two rows");
    if (X_scaled.rows() != Y_scaled.rows()) throw Error("gp_fit: X and Y row counts differ");
    if (X_scaled.rows() > 4000)
        std::fprintf(stderr,
                     "warning: gp_fit on %lld rows; training cost grows cubically\n",
                     static_cast<long long>(X_scaled.rows()));

    const Matrix d2 = squared_distances(X_scaled, X_scaled);
    const Index m = Y_scaled.cols();
    std::vector<GpHyper> best(static_cast<std::size_t>(m));
    std::vector<double> best_lml(static_cast<std::size_t>(m),
                                 -std::numeric_limits<double>::infinity());

    auto scan = [&](const std::vector<double>& lengths, const std::vector<double>& sigmas,
                    const std::vector<double>& noises) {
        for (double length : lengths) {
            const LengthScaleEig eig(d2, length, Y_scaled);
            for (Index k = 0; k < m; ++k)
                for (double sigma2 : sigmas)
                    for (double noise : noises) {
                        const double value = eig.lml(sigma2, noise, k);
                        if (value > best_lml[static_cast<std::size_t>(k)]) {
                            best_lml[static_cast<std::size_t>(k)] = value;
                            best[static_cast<std::size_t>(k)] = {sigma2, length, noise};
                        }
                    }
        }
    };

    scan(log_grid(0.1, 10.0, 7), log_grid(0.1, 10.0, 7), log_grid(1e-8, 1e-2, 5));

    // One refinement pass: a tighter log-grid spanning one base-grid step
    // around each output's best cell. Candidate lists are merged across
    // outputs so each length scale costs one eigendecomposition.
    std::vector<double> lengths, sigmas, noises;
    for (Index k = 0; k < m; ++k) {
        const GpHyper& h = best[static_cast<std::size_t>(k)];
        const double step7 = std::pow(10.0 / 0.1, 1.0 / 6.0);  // base-grid step, l and sigma2
        const double n_step = std::pow(1e-2 / 1e-8, 1.0 / 4.0);
        for (double f : log_grid(1.0 / step7, step7, 5)) {
            lengths.push_back(h.length * f);
            sigmas.push_back(h.sigma2 * f);
        }
        for (double f : log_grid(1.0 / n_step, n_step, 3)) noises.push_back(h.noise * f);
    }
    std::sort(lengths.begin(), lengths.end());
    lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());
    scan(lengths, sigmas, noises);

    return assemble_model(X_scaled, Y_scaled, best);
}

GpModel gp_fit_fixed(const Matrix& X_scaled, const Matrix& Y_scaled,
                     const std::vector<GpHyper>& hyper) {
    if (X_scaled.rows() < 2) throw Error("gp_fit_fixed needs at least two rows");
    if (X_scaled.rows() != Y_scaled.rows()) throw Error("gp_fit_fixed: X and Y row counts differ");
    std::vector<GpHyper> per_output = hyper;
    if (per_output.size() == 1)
        per_output.assign(static_cast<std::size_t>(Y_scaled.cols()), hyper.front());
    if (per_output.size() != static_cast<std::size_t>(Y_scaled.cols()))
        throw Error("gp_fit_fixed: hyperparameter count differs from output count");
    return assemble_model(X_scaled, Y_scaled, per_output);
}

GpPrediction gp_predict(const GpModel& model, const Matrix& x_scaled) {
    if (x_scaled.cols() != model.X.cols())
        throw Error("gp_predict: query has " + std::to_string(x_scaled.cols()) +
                    " columns, model expects " + std::to_string(model.X.cols()));
    const Index q = x_scaled.rows();
    const Index m = model.Y.cols();
    GpPrediction out;
    out.mean.resize(q, m);
    out.variance.resize(q, m);
    const Matrix d2 = squared_distances(model.X, x_scaled);  // n x q
    for (Index k = 0; k < m; ++k) {
        const auto& h = model.hyper[static_cast<std::size_t>(k)];
        const Matrix ks = kernel_matrix(d2, h.sigma2, h.length);  // n x q
        out.mean.col(k) = ks.transpose() * model.alpha.col(k);
        const Matrix v = model.L[static_cast<std::size_t>(k)]
                             .triangularView<Eigen::Lower>()
                             .solve(ks);  // n x q
        out.variance.col(k) =
            (h.sigma2 - v.colwise().squaredNorm().transpose().array()).cwiseMax(0.0).matrix();
    }
    return out;
}

GpEmulator::GpEmulator(GpModel model, Scaler scaler, std::vector<std::string> input_names,
                       std::vector<std::string> output_names)
    : model_(std::move(model)), scaler_(std::move(scaler)) {
    input_names_ = std::move(input_names);
    output_names_ = std::move(output_names);
    if (static_cast<Index>(input_names_.size()) != model_.X.cols() ||
        static_cast<Index>(output_names_.size()) != model_.Y.cols())
        throw Error("gp emulator: name lists do not match model dimensions");
}

Matrix GpEmulator::predict(const Matrix& x) const {
    return predict_with_variance(x).mean;
}

GpPrediction GpEmulator::predict_with_variance(const Matrix& x) const {
    GpPrediction scaled = gp_predict(model_, scaler_.scale_inputs(x));
    GpPrediction out;
    out.mean = scaler_.unscale_outputs(scaled.mean);
    out.variance = scaled.variance;
    for (Index k = 0; k < out.variance.cols(); ++k)
        out.variance.col(k) *= scaler_.out_std[k] * scaler_.out_std[k];
    return out;
}

Matrix GpEmulator::input_jacobian(const Vector& x) const {
    const Vector xs = scaler_.scale_inputs(Matrix(x.transpose())).row(0).transpose();
    const Index d = model_.X.cols();
    const Index m = model_.Y.cols();
    Matrix jac(m, d);
    for (Index k = 0; k < m; ++k) {
        const auto& h = model_.hyper[static_cast<std::size_t>(k)];
        Vector grad = Vector::Zero(d);
        for (Index i = 0; i < model_.X.rows(); ++i) {
            const Vector diff = xs - model_.X.row(i).transpose();
            const double kv = h.sigma2 * std::exp(-diff.squaredNorm() / (2.0 * h.length * h.length));
            grad -= model_.alpha(i, k) * kv / (h.length * h.length) * diff;
        }
        jac.row(k) = grad.transpose();
        for (Index j = 0; j < d; ++j) jac(k, j) *= scaler_.out_std[k] / scaler_.in_std[j];
    }
    return jac;
}

void GpEmulator::save(const std::string& path) const {
    ModelFile file;
    file.kind = "gp";
    file.add("inputs", input_names_);
    file.add("outputs", output_names_);
    for (Index i = 0; i < model_.X.rows(); ++i)
        file.add_matrix_row("x", model_.X.row(i).transpose());
    for (Index i = 0; i < model_.Y.rows(); ++i)
        file.add_matrix_row("y", model_.Y.row(i).transpose());
    for (const auto& h : model_.hyper)
        file.add("hyper", {format_double(h.sigma2), format_double(h.length),
                           format_double(h.noise)});
    file.add_vector("in_mean", scaler_.in_mean);
    file.add_vector("in_std", scaler_.in_std);
    file.add_vector("out_mean", scaler_.out_mean);
    file.add_vector("out_std", scaler_.out_std);
    for (const auto& [key, value] : meta) file.add_string("meta:" + key, value);
    file.save(path);
}

GpEmulator GpEmulator::from_model_file(const ModelFile& file) {
    if (file.kind != "gp") throw IoError("model file is '" + file.kind + "', expected gp");
    const Matrix x = file.get_matrix("x");
    const Matrix y = file.get_matrix("y");
    std::vector<GpHyper> hyper;
    for (const auto* rec : file.get_all("hyper")) {
        if (rec->size() != 3) throw IoError("gp model: hyper record needs three values");
        hyper.push_back({parse_double((*rec)[0]), parse_double((*rec)[1]),
                         parse_double((*rec)[2])});
    }
    // Factorization is recomputed, not stored.
    GpModel model = gp_fit_fixed(x, y, hyper);
    Scaler scaler;
    scaler.in_mean = file.get_vector("in_mean");
    scaler.in_std = file.get_vector("in_std");
    scaler.out_mean = file.get_vector("out_mean");
    scaler.out_std = file.get_vector("out_std");
    GpEmulator emulator(std::move(model), std::move(scaler), file.get("inputs"),
                        file.get("outputs"));
    for (const auto& [key, values] : file.records)
        if (key.rfind("meta:", 0) == 0 && !values.empty())
            emulator.meta[key.substr(5)] = values.front();
    return emulator;
}

}  // namespace lumen
