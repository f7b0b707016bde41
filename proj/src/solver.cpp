#include "lumen/solver.hpp"

#include <Eigen/LU>
#include <cmath>
#include <set>
#include <sstream>

#include "lumen/io.hpp"

namespace lumen {

namespace {

// Dead band around zero for valve regime consistency; avoids flip-flop on
// roundoff-sized violations.
constexpr double kValveEps = 1e-9;

struct Workspace {
    Matrix db_dy, db_dz, dg_dy, dg_dz;
    Matrix J;
    Vector F, ydot, g, dx;
    std::vector<std::pair<double, double>> q_dp;
    // Last accepted step increment, reused as an extrapolation predictor.
    Vector dy_last, dz_last;
    double h_last = 0.0;
};

std::vector<bool> regimes_from_dp(const DaeSystem& sys, const Vector& y, const Vector& z,
                                  Workspace& ws) {
    sys.valve_conditions(y, z, ws.q_dp);
    std::vector<bool> open(ws.q_dp.size());
    for (std::size_t i = 0; i < ws.q_dp.size(); ++i) open[i] = ws.q_dp[i].second > 0.0;
    return open;
}

// Flips valves whose solved state violates the complementarity conditions.
// Returns true if any regime changed.
bool fix_inconsistent_regimes(const DaeSystem& sys, const Vector& y, const Vector& z,
                              std::vector<bool>& open, Workspace& ws) {
    sys.valve_conditions(y, z, ws.q_dp);
    bool changed = false;
    for (std::size_t i = 0; i < ws.q_dp.size(); ++i) {
        const auto [q, dp] = ws.q_dp[i];
        if (open[i] && q < -kValveEps) {
            open[i] = false;
            changed = true;
        } else if (!open[i] && dp > kValveEps) {
            open[i] = true;
            changed = true;
        }
    }
    return changed;
}

/// Newton on G(t, y, z) = 0 in z with y fixed. Returns converged.
bool newton_consistent_z(const DaeSystem& sys, double t, const Vector& y, Vector& z,
                         const std::vector<bool>& open, const SolverConfig& cfg,
                         Workspace& ws) {
    for (int iter = 0; iter < cfg.newton_max_iter; ++iter) {
        sys.constraints(t, y, z, open, ws.g);
        if (!ws.g.allFinite()) return false;
        if (ws.g.norm() < cfg.newton_tol) return true;
        sys.jacobians(t, y, z, open, ws.db_dy, ws.db_dz, ws.dg_dy, ws.dg_dz);
        Eigen::PartialPivLU<Matrix> lu(ws.dg_dz);
        ws.dx = lu.solve(-ws.g);
        if (!ws.dx.allFinite()) return false;
        z += ws.dx;
    }
    sys.constraints(t, y, z, open, ws.g);
    return ws.g.allFinite() && ws.g.norm() < cfg.newton_tol;
}

/// Consistency solve with regime fixing: solve, flip violated valves,
/// re-solve. With y fixed an open-valve row (dp = 0) can be unsatisfiable,
/// because both endpoint pressures may be pinned by storage laws at the
/// frozen volumes; the all-closed regime is always solvable on an anchored
/// network. Unsolvable or cycling regimes therefore fall back toward closed
/// and any leftover complementarity violation is resolved by the next
/// coupled (y, z) step, where volumes are free to move.
void solve_consistent_z(const DaeSystem& sys, double t, const Vector& y, Vector& z,
                        std::vector<bool>& open, const SolverConfig& cfg, Workspace& ws) {
    const int max_passes = sys.n_valves + 2;
    std::set<std::vector<bool>> tried;
    Vector z_best;
    std::vector<bool> open_best;
    bool solved = false;
    for (int pass = 0; pass < max_passes; ++pass) {
        tried.insert(open);
        Vector z_try = z;
        if (newton_consistent_z(sys, t, y, z_try, open, cfg, ws)) {
            z = z_best = z_try;
            open_best = open;
            solved = true;
            std::vector<bool> next = open;
            if (!fix_inconsistent_regimes(sys, y, z, next, ws)) return;
            if (tried.count(next)) return;  // regime cycle: keep the solved state
            open = next;
            continue;
        }
        if (solved) break;  // refinement unsatisfiable: keep the last solvable regime
        const std::vector<bool> all_closed(open.size(), false);
        if (open == all_closed || tried.count(all_closed))
            throw SolverError("algebraic consistency solve failed at t = " + format_double(t));
        open = all_closed;
    }
    if (!solved)
        throw SolverError("valve regimes failed to settle at t = " + format_double(t));
    z = z_best;
    open = open_best;
}

/// One backward Euler step to t_new = t_prev + h. y/z hold the previous
/// solution on entry and the step solution on success.
bool be_newton(const DaeSystem& sys, double t_new, double h, const Vector& y_prev, Vector& y,
               Vector& z, const std::vector<bool>& open, const SolverConfig& cfg,
               Workspace& ws) {
    const Index nd = sys.n_diff, na = sys.n_alg;
    for (int iter = 0; iter < cfg.newton_max_iter; ++iter) {
        sys.rhs(t_new, y, z, ws.ydot);
        sys.constraints(t_new, y, z, open, ws.g);
        ws.F.resize(nd + na);
        ws.F.head(nd) = y - y_prev - h * ws.ydot;
        ws.F.tail(na) = ws.g;
        if (!ws.F.allFinite()) return false;
        if (ws.F.norm() < cfg.newton_tol) return true;
        sys.jacobians(t_new, y, z, open, ws.db_dy, ws.db_dz, ws.dg_dy, ws.dg_dz);
        ws.J.resize(nd + na, nd + na);
        ws.J.topLeftCorner(nd, nd) = Matrix::Identity(nd, nd) - h * ws.db_dy;
        ws.J.topRightCorner(nd, na) = -h * ws.db_dz;
        ws.J.bottomLeftCorner(na, nd) = ws.dg_dy;
        ws.J.bottomRightCorner(na, na) = ws.dg_dz;
        Eigen::PartialPivLU<Matrix> lu(ws.J);
        ws.dx = lu.solve(-ws.F);
        if (!ws.dx.allFinite()) return false;
        y += ws.dx.head(nd);
        z += ws.dx.tail(na);
    }
    sys.rhs(t_new, y, z, ws.ydot);
    sys.constraints(t_new, y, z, open, ws.g);
    ws.F.head(nd) = y - y_prev - h * ws.ydot;
    ws.F.tail(na) = ws.g;
    return ws.F.allFinite() && ws.F.norm() < cfg.newton_tol;
}

/// Backward Euler step with regime handling and dt bisection (depth <= 5).
void be_step(const DaeSystem& sys, double t_prev, double h, Vector& y, Vector& z,
             const SolverConfig& cfg, Workspace& ws, int depth = 0) {
    const double t_new = t_prev + h;
    const Vector y_prev = y, z_prev = z;

    // Linear extrapolation of the last increment: a better Newton guess and
    // a better valve-regime predictor; the converged step is unaffected.
    Vector y_guess = y_prev, z_guess = z_prev;
    if (ws.h_last > 0.0 && ws.dy_last.size() == y_prev.size()) {
        const double s = h / ws.h_last;
        y_guess += s * ws.dy_last;
        z_guess += s * ws.dz_last;
    }
    std::vector<bool> open = regimes_from_dp(sys, y_guess, z_guess, ws);

    const int max_passes = sys.n_valves + 2;
    for (int pass = 0; pass < max_passes; ++pass) {
        Vector y_try = pass == 0 ? y_guess : y_prev;
        Vector z_try = pass == 0 ? z_guess : z_prev;
        bool ok = be_newton(sys, t_new, h, y_prev, y_try, z_try, open, cfg, ws);
        if (!ok) {
            // Retry under the opposite regime picture before bisecting.
            open = regimes_from_dp(sys, y_try.allFinite() ? y_try : y_prev,
                                   z_try.allFinite() ? z_try : z_prev, ws);
            y_try = y_prev;
            z_try = z_prev;
            ok = be_newton(sys, t_new, h, y_prev, y_try, z_try, open, cfg, ws);
        }
        if (ok) {
            if (!fix_inconsistent_regimes(sys, y_try, z_try, open, ws)) {
                ws.dy_last = y_try - y_prev;
                ws.dz_last = z_try - z_prev;
                ws.h_last = h;
                y = y_try;
                z = z_try;
                return;
            }
            continue;  // regimes flipped, re-solve this step
        }
        break;  // fall through to bisection
    }

    if (depth >= 5)
        throw SolverError("Newton failed at t = " + format_double(t_new) +
                          " after 5 dt bisections");
    be_step(sys, t_prev, h / 2, y, z, cfg, ws, depth + 1);
    be_step(sys, t_prev + h / 2, h / 2, y, z, cfg, ws, depth + 1);
}

/// Explicit RK4 on y with per-stage algebraic projection onto G = 0.
void rk4_step(const DaeSystem& sys, double t_prev, double h, Vector& y, Vector& z,
              const SolverConfig& cfg, Workspace& ws) {
    std::vector<bool> open = regimes_from_dp(sys, y, z, ws);
    Vector k1(sys.n_diff), k2(sys.n_diff), k3(sys.n_diff), k4(sys.n_diff);
    Vector ys;
    Vector zs = z;

    sys.rhs(t_prev, y, z, k1);
    ys = y + 0.5 * h * k1;
    solve_consistent_z(sys, t_prev + 0.5 * h, ys, zs, open, cfg, ws);
    sys.rhs(t_prev + 0.5 * h, ys, zs, k2);
    ys = y + 0.5 * h * k2;
    solve_consistent_z(sys, t_prev + 0.5 * h, ys, zs, open, cfg, ws);
    sys.rhs(t_prev + 0.5 * h, ys, zs, k3);
    ys = y + h * k3;
    solve_consistent_z(sys, t_prev + h, ys, zs, open, cfg, ws);
    sys.rhs(t_prev + h, ys, zs, k4);

    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    solve_consistent_z(sys, t_prev + h, y, z, open, cfg, ws);
    if (!y.allFinite() || !z.allFinite())
        throw SolverError("non-finite state at t = " + format_double(t_prev + h));
}

void advance(const DaeSystem& sys, double t_prev, double h, Vector& y, Vector& z,
             const SolverConfig& cfg, Workspace& ws) {
    if (cfg.method == Method::BackwardEulerNewton)
        be_step(sys, t_prev, h, y, z, cfg, ws);
    else
        rk4_step(sys, t_prev, h, y, z, cfg, ws);
    if (!y.allFinite() || !z.allFinite())
        throw SolverError("non-finite state at t = " + format_double(t_prev + h));
}

void initial_state(const DaeSystem& sys, const SolverConfig& cfg, const Vector* y_init,
                   const Vector* z_init, Vector& y, Vector& z, Workspace& ws) {
    y = y_init ? *y_init : sys.y0;
    z = z_init ? *z_init : sys.z_guess;
    std::vector<bool> open = regimes_from_dp(sys, y, z, ws);
    solve_consistent_z(sys, 0.0, y, z, open, cfg, ws);
}

}  // namespace

Method method_from_string(const std::string& name) {
    if (name == "backward-euler-newton") return Method::BackwardEulerNewton;
    if (name == "rk4-with-projection") return Method::Rk4WithProjection;
    throw ParseError("unknown solver method '" + name + "'");
}

std::string to_string(Method method) {
    return method == Method::BackwardEulerNewton ? "backward-euler-newton"
                                                 : "rk4-with-projection";
}

void SolverConfig::validate() const {
    if (!(dt > 0.0)) throw Error("solver dt must be positive");
    if (!(newton_tol > 0.0) || !(cycle_tol >= 0.0)) throw Error("solver tolerances must be positive");
    if (newton_max_iter < 1) throw Error("newton_max_iter must be >= 1");
    if (max_cycles < 2) throw Error("max_cycles must be >= 2");
    if (!(pseudo_period > 0.0)) throw Error("pseudo_period must be positive");
}

Trajectory integrate(const DaeSystem& system, const SolverConfig& config, double t0, double t1,
                     const Vector* y_init, const Vector* z_init) {
    config.validate();
    if (!(t1 > t0)) throw Error("integrate needs t1 > t0");
    if (config.method == Method::Rk4WithProjection && system.n_valves > 0)
        throw SolverError(
            "rk4-with-projection cannot integrate ideal valves (an open valve "
            "makes the stage projection singular); use backward-euler-newton");
    Workspace ws;
    Vector y, z;
    // Consistency is solved at t=0 semantics; shift by t0 for generality.
    y = y_init ? *y_init : system.y0;
    z = z_init ? *z_init : system.z_guess;
    std::vector<bool> open = regimes_from_dp(system, y, z, ws);
    solve_consistent_z(system, t0, y, z, open, config, ws);

    const auto n_steps = static_cast<Index>(std::llround((t1 - t0) / config.dt));
    const Index n = std::max<Index>(n_steps, 1);
    const double h = (t1 - t0) / static_cast<double>(n);

    Trajectory traj;
    traj.times.resize(static_cast<std::size_t>(n) + 1);
    traj.states.resize(n + 1, system.n_diff);
    traj.algebraic.resize(n + 1, system.n_alg);
    traj.times[0] = t0;
    traj.states.row(0) = y.transpose();
    traj.algebraic.row(0) = z.transpose();
    for (Index i = 0; i < n; ++i) {
        const double t_prev = t0 + h * static_cast<double>(i);
        advance(system, t_prev, h, y, z, config, ws);
        traj.times[static_cast<std::size_t>(i) + 1] = t0 + h * static_cast<double>(i + 1);
        traj.states.row(i + 1) = y.transpose();
        traj.algebraic.row(i + 1) = z.transpose();
    }
    return traj;
}

CycleSolution run_to_periodic(const DaeSystem& system, const SolverConfig& config,
                              const Vector* y_init, const Vector* z_init) {
    config.validate();
    const double T = system.period ? *system.period : config.pseudo_period;
    const Index n = std::max<Index>(static_cast<Index>(std::llround(T / config.dt)), 1);
    const double h = T / static_cast<double>(n);

    Workspace ws;
    Vector y, z;
    initial_state(system, config, y_init, z_init, y, z, ws);

    CycleSolution cycle;
    cycle.times.resize(static_cast<std::size_t>(n) + 1);
    for (Index i = 0; i <= n; ++i)
        cycle.times[static_cast<std::size_t>(i)] = h * static_cast<double>(i);
    cycle.states.resize(n + 1, system.n_diff);
    cycle.algebraic.resize(n + 1, system.n_alg);

    Matrix prev_states;
    for (int k = 0; k < config.max_cycles; ++k) {
        cycle.states.row(0) = y.transpose();
        cycle.algebraic.row(0) = z.transpose();
        const double t_base = static_cast<double>(k) * T;
        for (Index i = 0; i < n; ++i) {
            advance(system, t_base + h * static_cast<double>(i), h, y, z, config, ws);
            cycle.states.row(i + 1) = y.transpose();
            cycle.algebraic.row(i + 1) = z.transpose();
        }
        cycle.cycles_used = k + 1;
        if (k > 0) {
            const double denom = cycle.states.norm();
            const double diff = (cycle.states - prev_states).norm();
            if (diff < config.cycle_tol * (denom > 0.0 ? denom : 1.0)) {
                cycle.converged = true;
                return cycle;
            }
        }
        prev_states = cycle.states;
    }
    cycle.converged = false;
    return cycle;
}

std::vector<BiomarkerDef> parse_biomarker_defs(const std::string& text) {
    std::vector<BiomarkerDef> defs;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const auto tokens = split_whitespace(line);
        if (tokens.size() < 3 || tokens.size() > 4)
            throw ParseError("expected 'name kind signal [signal2]'", lineno);
        BiomarkerDef def;
        def.name = tokens[0];
        def.kind = tokens[1];
        def.signal = tokens[2];
        if (tokens.size() == 4) def.signal2 = tokens[3];
        const bool two = def.kind == "ratio" || def.kind == "diff_mean";
        if (two != (tokens.size() == 4))
            throw ParseError("kind '" + def.kind + "' takes " + (two ? "two signals" : "one signal"),
                             lineno);
        static const std::set<std::string> kinds = {"mean", "sys",   "dias",     "sv",
                                                    "co",   "ratio", "diff_mean"};
        if (!kinds.count(def.kind)) throw ParseError("unknown biomarker kind '" + def.kind + "'", lineno);
        defs.push_back(std::move(def));
    }
    return defs;
}

std::vector<BiomarkerDef> load_biomarker_defs(const std::string& path) {
    return parse_biomarker_defs(read_text_file(path));
}

Vector trajectory_signal(const DaeSystem& system, const Trajectory& traj,
                         const std::string& label) {
    for (std::size_t i = 0; i < system.diff_labels.size(); ++i)
        if (system.diff_labels[i] == label) return traj.states.col(static_cast<Index>(i));
    for (std::size_t i = 0; i < system.alg_labels.size(); ++i)
        if (system.alg_labels[i] == label) return traj.algebraic.col(static_cast<Index>(i));
    throw Error("unknown signal name: " + label);
}

double trapezoid(const std::vector<double>& times, const Vector& v) {
    double acc = 0.0;
    for (std::size_t i = 1; i < times.size(); ++i)
        acc += 0.5 * (times[i] - times[i - 1]) *
               (v[static_cast<Index>(i)] + v[static_cast<Index>(i - 1)]);
    return acc;
}

namespace {

double signal_mean(const std::vector<double>& times, const Vector& v) {
    const double T = times.back() - times.front();
    return trapezoid(times, v) / T;
}

}  // namespace

BiomarkerSet extract_biomarkers(const DaeSystem& system, const CycleSolution& cycle,
                                const std::vector<BiomarkerDef>& defs) {
    BiomarkerSet out;
    const double T = cycle.times.back() - cycle.times.front();
    for (const auto& def : defs) {
        const Vector sig = trajectory_signal(system, cycle, def.signal);
        double value = 0.0;
        if (def.kind == "mean") {
            value = signal_mean(cycle.times, sig);
        } else if (def.kind == "sys") {
            value = sig.maxCoeff();
        } else if (def.kind == "dias") {
            value = sig.minCoeff();
        } else if (def.kind == "sv") {
            value = trapezoid(cycle.times, sig.cwiseMax(0.0));
        } else if (def.kind == "co") {
            value = trapezoid(cycle.times, sig.cwiseMax(0.0)) / T;
        } else if (def.kind == "ratio") {
            const Vector sig2 = trajectory_signal(system, cycle, def.signal2);
            const double denom = signal_mean(cycle.times, sig2);
            if (std::abs(denom) < 1e-300)
                throw Error("biomarker '" + def.name + "': zero-denominator ratio");
            value = signal_mean(cycle.times, sig) / denom;
        } else if (def.kind == "diff_mean") {
            const Vector sig2 = trajectory_signal(system, cycle, def.signal2);
            value = signal_mean(cycle.times, sig - sig2);
        }
        out[def.name] = value;
    }
    return out;
}

double stored_volume(const DaeSystem& system, const Trajectory& traj, Index row) {
    double total = 0.0;
    for (const auto& c : system.compiled())
        if (c.v_state >= 0) total += traj.states(row, c.v_state);
    return total;
}

}  // namespace lumen
