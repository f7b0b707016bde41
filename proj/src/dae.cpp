#include "lumen/dae.hpp"

#include <Eigen/LU>
#include <cmath>

namespace lumen {

namespace {

// Floor for the dynamic-valve opening so the effective orifice never closes
// completely; keeps the q-equation regular at s = 0.
constexpr double kValveOpeningFloor = 1e-4;

double effective_opening(double s) {
    return kValveOpeningFloor + (1.0 - kValveOpeningFloor) * s;
}

double slot_or(const std::map<std::string, double>& slots, const std::string& key,
               double fallback) {
    auto it = slots.find(key);
    return it == slots.end() ? fallback : it->second;
}

double pressure_dependent_resistance(double R0, double sens, double pref, double p) {
    const double excess = p > pref ? p - pref : 0.0;
    return R0 / (1.0 + sens * excess);
}

}  // namespace

double elastance_activation(double tau_normalized, double sys_frac) {
    double tau = std::fmod(tau_normalized, 1.0);
    if (tau < 0.0) tau += 1.0;
    if (tau >= sys_frac) return 0.0;
    return 0.5 * (1.0 - std::cos(2.0 * M_PI * tau / sys_frac));
}

double component_relation(const Component& component,
                          const std::map<std::string, double>& slot_values,
                          const LocalQuantities& local) {
    const double dp = local.p_from - local.p_to;
    switch (component.kind) {
        case ComponentKind::Resistor:
            return dp - slot_values.at("R") * local.q;
        case ComponentKind::NonlinearResistor:
            return dp - slot_values.at("K") * local.q * std::abs(local.q);
        case ComponentKind::PressureDependentResistor: {
            const double R = pressure_dependent_resistance(
                slot_values.at("R0"), slot_values.at("sens"),
                slot_or(slot_values, "pref", 0.0), local.p_from);
            return dp - R * local.q;
        }
        case ComponentKind::Inertance:
            return dp - slot_values.at("L") * local.qdot;
        case ComponentKind::Compliance:
            return local.q - slot_values.at("C") * local.pdot;
        case ComponentKind::ElastanceChamber: {
            const double e = elastance_activation(
                local.t / local.period - slot_or(slot_values, "phase", 0.0),
                slot_or(slot_values, "sys_frac", local.sys_frac));
            const double E = slot_values.at("Eb") + e * slot_values.at("Ea");
            return dp - E * (local.state - slot_values.at("V0"));
        }
        case ComponentKind::IdealValve:
            return std::min(local.q, -dp);
        case ComponentKind::DynamicValve: {
            const double s_eff = effective_opening(local.state);
            const double K_eff = slot_values.at("K") / (s_eff * s_eff);
            return dp - K_eff * local.q * std::abs(local.q) -
                   slot_values.at("L") * local.qdot;
        }
        case ComponentKind::FlowSource: {
            double q_set = slot_values.at("q");
            const double amp = slot_or(slot_values, "amp", 0.0);
            if (amp != 0.0) q_set += amp * std::sin(2.0 * M_PI * local.t / local.period);
            return local.q - q_set;
        }
    }
    throw Error("unknown component kind");
}

double component_relation(const Component& component,
                          const std::map<std::string, double>& parameter_values,
                          const LocalQuantities& local, const Netlist& netlist) {
    (void)netlist;
    std::map<std::string, double> slot_values;
    for (const auto& [key, expr] : component.slots)
        slot_values[key] = expr.eval(parameter_values);
    return component_relation(component, slot_values, local);
}

void DaeSystem::rhs(double t, const Vector& y, const Vector& z, Vector& ydot) const {
    (void)t;
    ydot.setZero(n_diff);
    for (const auto& c : components_) {
        const double pf = node_pressure(z, c.from);
        const double pt = node_pressure(z, c.to);
        switch (c.kind) {
            case ComponentKind::Compliance:
            case ComponentKind::ElastanceChamber:
                ydot[c.v_state] = z[n_nodes_ + c.q_alg];
                break;
            case ComponentKind::Inertance:
                ydot[c.q_state] = (pf - pt) / c.L;
                break;
            case ComponentKind::DynamicValve: {
                const double dp = pf - pt;
                const double q = y[c.q_state];
                const double s_eff = effective_opening(y[c.s_state]);
                ydot[c.q_state] = (dp - c.K / (s_eff * s_eff) * q * std::abs(q)) / c.L;
                const double s = y[c.s_state];
                ydot[c.s_state] = dp > 0.0 ? (1.0 - s) * c.Kvo * dp : s * c.Kvc * dp;
                break;
            }
            default: break;
        }
    }
}

void DaeSystem::constraints(double t, const Vector& y, const Vector& z,
                            const std::vector<bool>& open, Vector& g) const {
    g.setZero(n_alg);
    for (const auto& c : components_) {
        const double q = through_flow(c, y, z);
        if (c.from >= 0) g[c.from] -= q;
        if (c.to >= 0) g[c.to] += q;

        if (c.law_row < 0) continue;
        const double pf = node_pressure(z, c.from);
        const double pt = node_pressure(z, c.to);
        const double dp = pf - pt;
        double r = 0.0;
        switch (c.kind) {
            case ComponentKind::Resistor: r = dp - c.R * q; break;
            case ComponentKind::NonlinearResistor: r = dp - c.K * q * std::abs(q); break;
            case ComponentKind::PressureDependentResistor:
                r = dp - pressure_dependent_resistance(c.R0, c.sens, c.pref, pf) * q;
                break;
            case ComponentKind::Compliance:
                r = y[c.v_state] - c.C * (dp - c.pext) - c.dv0;
                break;
            case ComponentKind::ElastanceChamber: {
                const double e =
                    elastance_activation(t / *period - c.phase, c.sys_frac);
                const double E = c.Eb + e * c.Ea;
                r = dp - E * (y[c.v_state] - c.V0);
                break;
            }
            case ComponentKind::IdealValve:
                r = open[c.valve] ? dp : q;
                break;
            case ComponentKind::FlowSource: {
                double q_set = c.q0;
                if (c.amp != 0.0)
                    q_set += c.amp * std::sin(2.0 * M_PI * t / *period);
                r = q - q_set;
                break;
            }
            default: break;
        }
        g[c.law_row] = r;
    }
}

void DaeSystem::jacobians(double t, const Vector& y, const Vector& z,
                          const std::vector<bool>& open, Matrix& db_dy, Matrix& db_dz,
                          Matrix& dg_dy, Matrix& dg_dz) const {
    db_dy.setZero(n_diff, n_diff);
    db_dz.setZero(n_diff, n_alg);
    dg_dy.setZero(n_alg, n_diff);
    dg_dz.setZero(n_alg, n_alg);

    for (const auto& c : components_) {
        // Node balance rows: signed through-flow.
        if (c.q_alg >= 0) {
            if (c.from >= 0) dg_dz(c.from, n_nodes_ + c.q_alg) -= 1.0;
            if (c.to >= 0) dg_dz(c.to, n_nodes_ + c.q_alg) += 1.0;
        } else {
            if (c.from >= 0) dg_dy(c.from, c.q_state) -= 1.0;
            if (c.to >= 0) dg_dy(c.to, c.q_state) += 1.0;
        }

        const double pf = node_pressure(z, c.from);
        const double q = through_flow(c, y, z);

        switch (c.kind) {
            case ComponentKind::Resistor: {
                const int row = c.law_row;
                if (c.from >= 0) dg_dz(row, c.from) += 1.0;
                if (c.to >= 0) dg_dz(row, c.to) -= 1.0;
                dg_dz(row, n_nodes_ + c.q_alg) -= c.R;
                break;
            }
            case ComponentKind::NonlinearResistor: {
                const int row = c.law_row;
                if (c.from >= 0) dg_dz(row, c.from) += 1.0;
                if (c.to >= 0) dg_dz(row, c.to) -= 1.0;
                // Quasi-Newton slope floor: the true derivative vanishes at
                // q = 0, which would make the step matrix singular. The floor
                // only alters the iteration path, never the residual.
                const double slope = std::max(2.0 * std::abs(q), 1e-2);
                dg_dz(row, n_nodes_ + c.q_alg) -= c.K * slope;
                break;
            }
            case ComponentKind::PressureDependentResistor: {
                const int row = c.law_row;
                const double R = pressure_dependent_resistance(c.R0, c.sens, c.pref, pf);
                double dR_dpf = 0.0;
                if (pf > c.pref) {
                    const double denom = 1.0 + c.sens * (pf - c.pref);
                    dR_dpf = -c.R0 * c.sens / (denom * denom);
                }
                if (c.from >= 0) dg_dz(row, c.from) += 1.0 - dR_dpf * q;
                if (c.to >= 0) dg_dz(row, c.to) -= 1.0;
                dg_dz(row, n_nodes_ + c.q_alg) -= R;
                break;
            }
            case ComponentKind::Inertance: {
                if (c.from >= 0) db_dz(c.q_state, c.from) += 1.0 / c.L;
                if (c.to >= 0) db_dz(c.q_state, c.to) -= 1.0 / c.L;
                break;
            }
            case ComponentKind::Compliance: {
                const int row = c.law_row;
                dg_dy(row, c.v_state) += 1.0;
                if (c.from >= 0) dg_dz(row, c.from) -= c.C;
                if (c.to >= 0) dg_dz(row, c.to) += c.C;
                db_dz(c.v_state, n_nodes_ + c.q_alg) += 1.0;
                break;
            }
            case ComponentKind::ElastanceChamber: {
                const int row = c.law_row;
                const double e =
                    elastance_activation(t / *period - c.phase, c.sys_frac);
                const double E = c.Eb + e * c.Ea;
                if (c.from >= 0) dg_dz(row, c.from) += 1.0;
                if (c.to >= 0) dg_dz(row, c.to) -= 1.0;
                dg_dy(row, c.v_state) -= E;
                db_dz(c.v_state, n_nodes_ + c.q_alg) += 1.0;
                break;
            }
            case ComponentKind::IdealValve: {
                const int row = c.law_row;
                if (open[c.valve]) {
                    if (c.from >= 0) dg_dz(row, c.from) += 1.0;
                    if (c.to >= 0) dg_dz(row, c.to) -= 1.0;
                } else {
                    dg_dz(row, n_nodes_ + c.q_alg) += 1.0;
                }
                break;
            }
            case ComponentKind::DynamicValve: {
                const double s = y[c.s_state];
                const double s_eff = effective_opening(s);
                const double pt = node_pressure(z, c.to);
                const double dp = pf - pt;
                const int qi = c.q_state, si = c.s_state;
                if (c.from >= 0) db_dz(qi, c.from) += 1.0 / c.L;
                if (c.to >= 0) db_dz(qi, c.to) -= 1.0 / c.L;
                db_dy(qi, qi) -= c.K / (s_eff * s_eff) * 2.0 * std::abs(q) / c.L;
                db_dy(qi, si) += 2.0 * c.K * (1.0 - kValveOpeningFloor) * q * std::abs(q) /
                                 (s_eff * s_eff * s_eff * c.L);
                if (dp > 0.0) {
                    db_dy(si, si) -= c.Kvo * dp;
                    if (c.from >= 0) db_dz(si, c.from) += (1.0 - s) * c.Kvo;
                    if (c.to >= 0) db_dz(si, c.to) -= (1.0 - s) * c.Kvo;
                } else {
                    db_dy(si, si) += c.Kvc * dp;
                    if (c.from >= 0) db_dz(si, c.from) += s * c.Kvc;
                    if (c.to >= 0) db_dz(si, c.to) -= s * c.Kvc;
                }
                break;
            }
            case ComponentKind::FlowSource: {
                dg_dz(c.law_row, n_nodes_ + c.q_alg) += 1.0;
                break;
            }
        }
    }
}

void DaeSystem::valve_conditions(const Vector& y, const Vector& z,
                                 std::vector<std::pair<double, double>>& q_dp) const {
    q_dp.assign(static_cast<std::size_t>(n_valves), {0.0, 0.0});
    for (const auto& c : components_) {
        if (c.valve < 0) continue;
        const double dp = node_pressure(z, c.from) - node_pressure(z, c.to);
        q_dp[static_cast<std::size_t>(c.valve)] = {through_flow(c, y, z), dp};
    }
}

Index DaeSystem::index_of_diff(const std::string& label) const {
    for (std::size_t i = 0; i < diff_labels.size(); ++i)
        if (diff_labels[i] == label) return static_cast<Index>(i);
    throw Error("no differential state labeled " + label);
}

Index DaeSystem::index_of_alg(const std::string& label) const {
    for (std::size_t i = 0; i < alg_labels.size(); ++i)
        if (alg_labels[i] == label) return static_cast<Index>(i);
    throw Error("no algebraic unknown labeled " + label);
}

DaeSystem assemble_dae(const Netlist& netlist,
                       const std::map<std::string, double>& parameter_values,
                       bool allow_out_of_range) {
    for (const auto& [name, spec] : netlist.parameters) {
        auto it = parameter_values.find(name);
        if (it == parameter_values.end()) throw Error("unbound parameter: " + name);
        if (!allow_out_of_range && (it->second < spec.low || it->second > spec.high))
            throw Error("parameter '" + name + "' = " + std::to_string(it->second) +
                        " outside [" + std::to_string(spec.low) + ", " +
                        std::to_string(spec.high) + "] (pass the override flag to allow)");
    }

    DaeSystem sys;
    sys.node_names_ = netlist.nodes;
    sys.n_nodes_ = static_cast<Index>(netlist.nodes.size());
    std::map<std::string, int> node_index;
    for (std::size_t i = 0; i < netlist.nodes.size(); ++i)
        node_index[netlist.nodes[i]] = static_cast<int>(i);
    const auto resolve_node = [&](const std::string& n) -> int {
        auto it = node_index.find(n);
        return it == node_index.end() ? -1 : it->second;  // ground
    };

    sys.sys_frac = netlist.sys_frac.eval(parameter_values);
    if (netlist.heart_period) {
        const double T = netlist.heart_period->eval(parameter_values);
        if (!(T > 0.0)) throw Error("heart period must be positive");
        sys.period = T;
    }

    for (const auto& n : netlist.nodes) sys.alg_labels.push_back("p:" + n);

    int n_flows = 0;
    int n_states = 0;
    int n_valves = 0;
    for (const auto& src : netlist.components) {
        CompiledComponent c;
        c.kind = src.kind;
        c.id = src.id;
        c.from = resolve_node(src.node_from);
        c.to = resolve_node(src.node_to);
        const auto slot = [&](const std::string& key, double fallback) {
            auto it = src.slots.find(key);
            return it == src.slots.end() ? fallback : it->second.eval(parameter_values);
        };
        const auto require_positive = [&](double v, const std::string& what) {
            if (!(v > 0.0))
                throw Error("component '" + src.id + "': " + what + " must be positive, got " +
                            std::to_string(v));
            return v;
        };

        const auto add_alg_flow = [&]() {
            c.q_alg = n_flows++;
            sys.alg_labels.push_back("q:" + src.id);
        };

        switch (src.kind) {
            case ComponentKind::Resistor:
                c.R = require_positive(slot("R", 0.0), "R");
                add_alg_flow();
                break;
            case ComponentKind::NonlinearResistor:
                c.K = require_positive(slot("K", 0.0), "K");
                add_alg_flow();
                break;
            case ComponentKind::PressureDependentResistor:
                c.R0 = require_positive(slot("R0", 0.0), "R0");
                c.sens = slot("sens", 0.0);
                c.pref = slot("pref", 0.0);
                add_alg_flow();
                break;
            case ComponentKind::Inertance:
                c.L = require_positive(slot("L", 0.0), "L");
                c.q_state = n_states++;
                sys.diff_labels.push_back("q:" + src.id);
                break;
            case ComponentKind::Compliance:
                c.C = require_positive(slot("C", 0.0), "C");
                c.pext = slot("pext", 0.0);
                c.dv0 = slot("dv0", 0.0);
                c.v_state = n_states++;
                sys.diff_labels.push_back("v:" + src.id);
                add_alg_flow();
                break;
            case ComponentKind::ElastanceChamber:
                c.Ea = require_positive(slot("Ea", 0.0), "Ea");
                c.Eb = require_positive(slot("Eb", 0.0), "Eb");
                c.V0 = slot("V0", 0.0);
                c.sys_frac = slot("sys_frac", sys.sys_frac);
                c.phase = slot("phase", 0.0);
                c.v_state = n_states++;
                sys.diff_labels.push_back("V:" + src.id);
                add_alg_flow();
                break;
            case ComponentKind::IdealValve:
                c.valve = n_valves++;
                add_alg_flow();
                break;
            case ComponentKind::DynamicValve:
                c.K = require_positive(slot("K", 0.0), "K");
                c.L = require_positive(slot("L", 0.0), "L");
                c.Kvo = require_positive(slot("Kvo", 0.0), "Kvo");
                c.Kvc = require_positive(slot("Kvc", 0.0), "Kvc");
                c.q_state = n_states++;
                sys.diff_labels.push_back("q:" + src.id);
                c.s_state = n_states++;
                sys.diff_labels.push_back("s:" + src.id);
                break;
            case ComponentKind::FlowSource:
                c.q0 = slot("q", 0.0);
                c.amp = slot("amp", 0.0);
                add_alg_flow();
                break;
        }
        sys.components_.push_back(std::move(c));
    }

    // Law rows follow the node-balance rows, one per algebraic-flow component.
    int law = 0;
    for (auto& c : sys.components_)
        if (c.q_alg >= 0) c.law_row = static_cast<int>(sys.n_nodes_) + law++;

    sys.n_diff = n_states;
    sys.n_alg = sys.n_nodes_ + n_flows;
    sys.n_valves = n_valves;

    // Initial conditions: pressures 10 mmHg, flows 0, chamber volumes V0+20,
    // valve openings 0, with [init] overrides applied first.
    const auto override_value = [&](const std::string& key) -> std::optional<double> {
        auto it = netlist.initial_overrides.find(key);
        if (it == netlist.initial_overrides.end()) return std::nullopt;
        return it->second.eval(parameter_values);
    };
    const auto initial_pressure = [&](int node) -> double {
        if (node < 0) return 0.0;
        if (auto v = override_value("p:" + netlist.nodes[static_cast<std::size_t>(node)]))
            return *v;
        return 10.0;
    };

    sys.y0.setZero(sys.n_diff);
    sys.z_guess.setZero(sys.n_alg);
    for (Index i = 0; i < sys.n_nodes_; ++i)
        sys.z_guess[i] = initial_pressure(static_cast<int>(i));

    for (const auto& c : sys.components_) {
        if (c.q_alg >= 0) {
            if (auto v = override_value("q:" + c.id)) sys.z_guess[sys.n_nodes_ + c.q_alg] = *v;
        }
        switch (c.kind) {
            case ComponentKind::Compliance: {
                const double dp = initial_pressure(c.from) - initial_pressure(c.to);
                sys.y0[c.v_state] = c.C * (dp - c.pext) + c.dv0;
                break;
            }
            case ComponentKind::ElastanceChamber: {
                const double fallback = c.V0 + 20.0;
                sys.y0[c.v_state] = override_value("V:" + c.id).value_or(fallback);
                break;
            }
            case ComponentKind::Inertance:
                sys.y0[c.q_state] = override_value("q:" + c.id).value_or(0.0);
                break;
            case ComponentKind::DynamicValve:
                sys.y0[c.q_state] = override_value("q:" + c.id).value_or(0.0);
                sys.y0[c.s_state] = override_value("s:" + c.id).value_or(0.0);
                break;
            default: break;
        }
    }

    // Structural regularity: dG/dz must have full rank in the all-closed
    // valve regime (the index-1 configuration; an open ideal valve between
    // two storage-pinned nodes legitimately raises the index and is handled
    // by the coupled step solve instead). Evaluated at a generic flow point
    // (distinct nonzero flows) so laws whose q-derivative vanishes at q = 0,
    // like dp = K q|q|, are not misread as singular.
    {
        const std::vector<bool> open(static_cast<std::size_t>(n_valves), false);
        Vector z_check = sys.z_guess;
        for (Index k = sys.n_nodes_; k < sys.n_alg; ++k)
            z_check[k] = 1.0 + 0.125 * static_cast<double>(k - sys.n_nodes_);
        Matrix db_dy, db_dz, dg_dy, dg_dz;
        sys.jacobians(0.0, sys.y0, z_check, open, db_dy, db_dz, dg_dy, dg_dz);
        Eigen::FullPivLU<Matrix> lu(dg_dz);
        if (lu.rank() < sys.n_alg)
            throw SolverError("structurally singular system: dG/dz rank " +
                              std::to_string(lu.rank()) + " < " + std::to_string(sys.n_alg));
    }

    return sys;
}

}  // namespace lumen
