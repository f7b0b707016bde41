#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lumen/netlist.hpp"
#include "lumen/types.hpp"

namespace lumen {

/// Local quantities seen by one component, used by the pure constitutive
/// residual. Sign convention: positive flow runs node_from -> node_to and
/// dp = p_from - p_to.
struct LocalQuantities {
    double p_from = 0.0;
    double p_to = 0.0;
    double q = 0.0;
    double qdot = 0.0;
    double pdot = 0.0;
    double state = 0.0;  // stored volume (compliance/chamber) or valve opening
    double t = 0.0;
    double period = 1.0;
    double sys_frac = 0.3;
};

/// Constitutive residual, law left side minus right side; zero iff the law
/// holds. The ideal valve uses the complementarity form min(q, -dp), which
/// is zero exactly on the admissible set {q >= 0, dp <= 0, q*dp = 0}.
/// Slot values must already be numeric (no free parameters).
double component_relation(const Component& component,
                          const std::map<std::string, double>& slot_values,
                          const LocalQuantities& local);

/// Convenience: evaluates the component's slot expressions first.
double component_relation(const Component& component,
                          const std::map<std::string, double>& parameter_values,
                          const LocalQuantities& local, const Netlist& netlist);

/// Raised-cosine two-phase activation, e in [0, 1]; tau is time since cycle
/// start normalized by the period.
double elastance_activation(double tau_normalized, double sys_frac);

/// One component compiled against the unknown layout: node indices resolved,
/// slot expressions evaluated to numbers.
struct CompiledComponent {
    ComponentKind kind = ComponentKind::Resistor;
    std::string id;
    int from = -1;  // node index, -1 = ground
    int to = -1;
    int q_alg = -1;    // index into z when the through-flow is algebraic
    int q_state = -1;  // index into y when the through-flow is a state (L, DynamicValve)
    int v_state = -1;  // stored volume state (Compliance, ElastanceChamber)
    int s_state = -1;  // DynamicValve opening state
    int law_row = -1;  // constraint row of the component law, -1 if none
    int valve = -1;    // ordinal among IdealValves, -1 otherwise

    double R = 0, K = 0, L = 0, C = 0;
    double pext = 0, dv0 = 0;
    double R0 = 0, sens = 0, pref = 0;
    double Ea = 0, Eb = 0, V0 = 0, sys_frac = 0.3, phase = 0;
    double q0 = 0, amp = 0;
    double Kvo = 0, Kvc = 0;
};

/// Semi-explicit DAE  dy/dt = b(y, z, t),  G(y, z, t) = 0.
///
/// y holds the energy-storage states (compliance volumes, inertance flows,
/// chamber volumes, dynamic-valve flow and opening); z holds the non-ground
/// node pressures followed by the algebraic component flows. G stacks the
/// node flow balances, then the component laws.
///
/// Ideal valves make G regime-dependent: every evaluator takes the vector of
/// per-valve open flags (size n_valves). Immutable after assembly.
class DaeSystem {
  public:
    Index n_diff = 0;
    Index n_alg = 0;
    int n_valves = 0;
    std::vector<std::string> diff_labels;  // v:<id>, q:<id>, V:<id>, s:<id>
    std::vector<std::string> alg_labels;   // p:<node>, q:<id>
    Vector y0;
    Vector z_guess;
    std::optional<double> period;
    double sys_frac = 0.3;

    void rhs(double t, const Vector& y, const Vector& z, Vector& ydot) const;
    void constraints(double t, const Vector& y, const Vector& z,
                     const std::vector<bool>& open, Vector& g) const;

    /// Analytic Jacobians of b and G in the (y, z) unknowns.
    void jacobians(double t, const Vector& y, const Vector& z, const std::vector<bool>& open,
                   Matrix& db_dy, Matrix& db_dz, Matrix& dg_dy, Matrix& dg_dz) const;

    /// Per-ideal-valve (q, dp) at the given state, for regime decisions.
    void valve_conditions(const Vector& y, const Vector& z,
                          std::vector<std::pair<double, double>>& q_dp) const;

    Index index_of_diff(const std::string& label) const;  // throws if absent
    Index index_of_alg(const std::string& label) const;

    const std::vector<CompiledComponent>& compiled() const { return components_; }
    const std::vector<std::string>& node_names() const { return node_names_; }

  private:
    friend DaeSystem assemble_dae(const Netlist&, const std::map<std::string, double>&, bool);
    std::vector<CompiledComponent> components_;
    std::vector<std::string> node_names_;
    Index n_nodes_ = 0;

    double node_pressure(const Vector& z, int node) const {
        return node < 0 ? 0.0 : z[node];
    }
    double through_flow(const CompiledComponent& c, const Vector& y, const Vector& z) const {
        return c.q_alg >= 0 ? z[n_nodes_ + c.q_alg] : y[c.q_state];
    }
};

/// Binds parameter values, lays out the unknowns, and evaluates every slot.
/// Errors: unbound parameter; value outside [low, high] unless
/// allow_out_of_range; structurally singular system (dG/dz rank-deficient at
/// the initial guess).
DaeSystem assemble_dae(const Netlist& netlist,
                       const std::map<std::string, double>& parameter_values,
                       bool allow_out_of_range = false);

}  // namespace lumen
