#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lumen/analysis.hpp"
#include "lumen/emulator.hpp"
#include "lumen/io.hpp"
#include "lumen/types.hpp"

namespace lumen {

/// Total-degree multi-index set, graded (ascending total degree) and
/// lexicographic within a degree. Size is C(d+P, d) exactly.
struct PceBasis {
    int d = 0;
    int max_degree = 0;
    std::vector<std::vector<int>> multi_indices;

    Index size() const { return static_cast<Index>(multi_indices.size()); }
};

/// Throws Error when d < 1, P < 0, or the term count would exceed 10^6.
PceBasis basis_enumerate(int d, int P);

/// Orthonormal Legendre polynomial sqrt(2k+1) P_k(x): unit second moment
/// under the uniform density on [-1, 1].
double legendre_orthonormal(int k, double x);
/// Derivative of the orthonormal polynomial.
double legendre_orthonormal_deriv(int k, double x);

struct PceModel {
    PceBasis basis;      // retained terms after pruning
    Matrix coefficients; // basis.size() x m
    std::vector<std::pair<double, double>> ranges;  // affine map physical -> [-1,1]
    Vector loo_error;    // per output, relative (normalized by output variance)
    bool ridge_used = false;
    double epsilon = 0.0;  // pruning threshold used
};

/// Least-squares PCE fit with iterative removal of terms whose coefficient
/// norm across outputs falls below epsilon * max-norm (the constant term is
/// never removed; epsilon = 0 disables pruning). Refits after each removal
/// round until stable, then computes the leave-one-out error. Requires
/// rows >= C(d+P, d); rank deficiency falls back to a trace-scaled ridge
/// when ridge_fallback is set and throws otherwise.
PceModel pce_fit(const Matrix& x_physical, const Matrix& y,
                 const std::vector<std::pair<double, double>>& ranges, const PceBasis& basis,
                 double epsilon = 1e-4, bool ridge_fallback = true);

/// Evaluates the expansion at physical points (one per row). Points outside
/// the fitted range evaluate fine but emit one warning per call.
Matrix pce_eval(const PceModel& model, const Matrix& x_physical);
Vector pce_eval(const PceModel& model, const Vector& x_physical);

/// Leave-one-out (jackknife) error via the hat-matrix shortcut
/// e_i / (1 - h_ii), relative to output variance. Recomputes from data;
/// equals brute-force refits. Throws SolverError on unit leverage.
Vector pce_loo_error(const PceModel& model, const Matrix& x_physical, const Matrix& y);

/// Analytic Sobol indices from the orthonormal coefficients. Throws Error
/// when an output has zero expansion variance.
SobolIndices pce_sobol(const PceModel& model);

/// PCE behind the common emulator contract (physical units, analytic input
/// Jacobian).
class PceEmulator : public Emulator {
  public:
    PceEmulator(PceModel model, std::vector<std::string> input_names,
                std::vector<std::string> output_names);

    std::string kind() const override { return "pce"; }
    Matrix predict(const Matrix& x) const override { return pce_eval(model_, x); }
    bool has_input_gradient() const override { return true; }
    Matrix input_jacobian(const Vector& x) const override;
    void save(const std::string& path) const override;
    static PceEmulator from_model_file(const ModelFile& file);

    const PceModel& model() const { return model_; }
    std::map<std::string, std::string> meta;

  private:
    PceModel model_;
};

}  // namespace lumen
