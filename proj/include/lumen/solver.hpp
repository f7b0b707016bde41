#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lumen/dae.hpp"
#include "lumen/types.hpp"

namespace lumen {

enum class Method { BackwardEulerNewton, Rk4WithProjection };

Method method_from_string(const std::string& name);
std::string to_string(Method method);

struct SolverConfig {
    double dt = 1e-3;
    Method method = Method::BackwardEulerNewton;
    double newton_tol = 1e-8;
    int newton_max_iter = 25;
    int max_cycles = 50;
    double cycle_tol = 1e-4;
    /// Cycle length used by run_to_periodic when the system has no heart
    /// period (time-invariant systems converge to a constant trajectory).
    double pseudo_period = 1.0;

    void validate() const;  // throws on non-positive dt/tolerances, max_cycles < 2
};

struct Trajectory {
    std::vector<double> times;
    Matrix states;     // times.size() x n_diff
    Matrix algebraic;  // times.size() x n_alg
};

struct CycleSolution : Trajectory {
    bool converged = false;
    int cycles_used = 0;
};

/// Fixed-step integration over [t0, t1]. The initial algebraic state is made
/// consistent by Newton on G before the first step; every accepted step
/// satisfies ||G|| < newton_tol. Throws SolverError on Newton failure (after
/// regime retry and dt bisection) or non-finite states.
Trajectory integrate(const DaeSystem& system, const SolverConfig& config, double t0, double t1,
                     const Vector* y_init = nullptr, const Vector* z_init = nullptr);

/// Integrates cycle by cycle until the relative L2 change of the state
/// trajectory between consecutive cycles drops below cycle_tol, then returns
/// the final cycle with times relative to cycle start. converged=false after
/// max_cycles. Optional warm start.
CycleSolution run_to_periodic(const DaeSystem& system, const SolverConfig& config,
                              const Vector* y_init = nullptr, const Vector* z_init = nullptr);

/// One biomarker definition: an aggregation over one or two named signals.
/// Signals are state or algebraic labels of the DaeSystem ("p:ao", "q:mv").
/// Kinds: mean, sys (max), dias (min), sv (integral of positive flow),
/// co (sv divided by the period), ratio (mean/mean), diff_mean (mean of the
/// difference).
struct BiomarkerDef {
    std::string name;
    std::string kind;
    std::string signal;
    std::string signal2;  // ratio and diff_mean only
};

using BiomarkerSet = std::map<std::string, double>;

/// Parses biomarker definitions, one per line: `name kind signal [signal2]`.
/// Comments (#) and blank lines are ignored.
std::vector<BiomarkerDef> parse_biomarker_defs(const std::string& text);
std::vector<BiomarkerDef> load_biomarker_defs(const std::string& path);

BiomarkerSet extract_biomarkers(const DaeSystem& system, const CycleSolution& cycle,
                                const std::vector<BiomarkerDef>& defs);

/// Signal lookup on a solved trajectory; throws on unknown label.
Vector trajectory_signal(const DaeSystem& system, const Trajectory& traj,
                         const std::string& label);

/// Trapezoid integral of v over the (non-uniform safe) time grid.
double trapezoid(const std::vector<double>& times, const Vector& v);

/// Total stored volume (compliance volumes + chamber volumes) at a stored
/// time index; conserved exactly for closed loops.
double stored_volume(const DaeSystem& system, const Trajectory& traj, Index row);

}  // namespace lumen
