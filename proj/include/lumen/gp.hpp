#pragma once

#include <map>
#include <string>
#include <vector>

#include "lumen/emulator.hpp"
#include "lumen/io.hpp"
#include "lumen/types.hpp"

namespace lumen {

struct GpHyper {
    double sigma2 = 1.0;  // signal variance
    double length = 1.0;  // isotropic length scale
    double noise = 1e-6;  // noise variance sigma_n^2
};

/// Squared-exponential kernel sigma2 * exp(-||x - x'||^2 / (2 l^2)).
double rbf_kernel(const Vector& x, const Vector& xp, double sigma2, double length);

/// One independent GP per output column over shared scaled inputs. The
/// stored Cholesky factor and alpha = (K + noise I)^{-1} y make prediction
/// O(n) per query and output.
struct GpModel {
    Matrix X;  // n x d, scaled
    Matrix Y;  // n x m, scaled
    std::vector<GpHyper> hyper;  // per output
    std::vector<Matrix> L;       // per output, Cholesky of K + noise I
    Matrix alpha;                // n x m
    double jitter_used = 0.0;    // largest jitter added to reach positive definiteness
};

/// Exact log marginal likelihood for one output column (brute-force
/// reference and search objective).
double gp_log_marginal(const Matrix& X, const Vector& y, const GpHyper& hyper);

/// Fits with a deterministic log-grid hyperparameter search (7 length
/// scales x 7 signal variances x 5 noise levels, refined once around the
/// best cell), maximizing the log marginal likelihood per output. Warns
/// above 4000 rows (cubic cost). Throws SolverError if the kernel matrix
/// resists Cholesky after jitter 1e-6.
GpModel gp_fit(const Matrix& X_scaled, const Matrix& Y_scaled);

/// Fit with caller-fixed hyperparameters (one entry per output, or a
/// single entry shared by all outputs).
GpModel gp_fit_fixed(const Matrix& X_scaled, const Matrix& Y_scaled,
                     const std::vector<GpHyper>& hyper);

struct GpPrediction {
    Matrix mean;      // q x m
    Matrix variance;  // q x m, clamped at zero
};

/// Predictive mean and variance in scaled space.
GpPrediction gp_predict(const GpModel& model, const Matrix& x_scaled);

/// GP behind the common emulator contract: physical units both sides,
/// analytic input Jacobian of the predictive mean.
class GpEmulator : public Emulator {
  public:
    GpEmulator(GpModel model, Scaler scaler, std::vector<std::string> input_names,
               std::vector<std::string> output_names);

    std::string kind() const override { return "gp"; }
    Matrix predict(const Matrix& x) const override;
    /// Physical-unit predictive mean and variance.
    GpPrediction predict_with_variance(const Matrix& x) const;
    bool has_input_gradient() const override { return true; }
    Matrix input_jacobian(const Vector& x) const override;
    void save(const std::string& path) const override;
    static GpEmulator from_model_file(const ModelFile& file);

    const GpModel& model() const { return model_; }
    const Scaler& scaler() const { return scaler_; }
    std::map<std::string, std::string> meta;

  private:
    GpModel model_;
    Scaler scaler_;
};

}  // namespace lumen
