#include "lumen/transport.hpp"

#include <algorithm>
#include <cmath>

namespace lumen {

Index TransportSpec::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < compartments.size(); ++i)
        if (compartments[i].name == name) return static_cast<Index>(i);
    throw Error("transport: unknown compartment '" + name + "'");
}

void TransportSpec::validate() const {
    if (compartments.empty()) throw Error("transport: no compartments");
    for (std::size_t i = 0; i < compartments.size(); ++i) {
        if (compartments[i].volume <= 0.0)
            throw Error("transport: compartment '" + compartments[i].name +
                        "' needs a positive volume");
        for (std::size_t j = i + 1; j < compartments.size(); ++j)
            if (compartments[i].name == compartments[j].name)
                throw Error("transport: duplicate compartment '" + compartments[i].name + "'");
    }
    const Index n = static_cast<Index>(compartments.size());
    Vector in = Vector::Zero(n), out = Vector::Zero(n);
    for (const auto& f : flows) {
        if (f.rate < 0.0)
            throw Error("transport: negative flow on edge " + f.from + " -> " + f.to);
        out[index_of(f.from)] += f.rate;
        in[index_of(f.to)] += f.rate;
    }
    for (Index i = 0; i < n; ++i) {
        const double scale = std::max({in[i], out[i], 1e-12});
        if (std::abs(in[i] - out[i]) > 1e-6 * scale)
            throw Error("transport: flow imbalance at compartment '" +
                        compartments[static_cast<std::size_t>(i)].name + "': inflow " +
                        std::to_string(in[i]) + " vs outflow " + std::to_string(out[i]));
    }
    index_of(injection.compartment);
    index_of(observed);
    if (!elimination_compartment.empty()) index_of(elimination_compartment);
    if (injection.dose < 0.0) throw Error("transport: negative dose");
    if (injection.duration < 0.0 || injection.start < 0.0)
        throw Error("transport: injection start and duration must be non-negative");
    if (elimination_rate < 0.0) throw Error("transport: negative elimination rate");
    if (t_final <= 0.0 || dt_signal <= 0.0 || dt_internal <= 0.0)
        throw Error("transport: t_final, dt_signal, dt_internal must be positive");
    const double ratio = dt_signal / dt_internal;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio)
        throw Error("transport: dt_signal must be a multiple of dt_internal");
    if (delay < 0.0) throw Error("transport: negative delay");
    if (delay > 0.0 && delay < dt_internal)
        throw Error("transport: delay must be zero or at least dt_internal");
}

namespace {

struct Edge {
    Index from, to;
    double rate;
    bool delayed;
};

/// Step-resolution history of one delayed edge's upstream concentration;
/// reads interpolate linearly and times before the start are tracer-free.
struct History {
    std::vector<double> values;  // values[k] = c_src at t = k * dt
    double dt;

    double at(double t) const {
        if (t <= 0.0) return 0.0;
        const double s = t / dt;
        const auto k = static_cast<std::size_t>(s);
        const double w = s - static_cast<double>(k);
        if (k + 1 >= values.size()) return values.back();
        return (1.0 - w) * values[k] + w * values[k + 1];
    }
};

}  // namespace

TransportResult simulate_transport(const TransportSpec& spec) {
    spec.validate();
    const Index n = static_cast<Index>(spec.compartments.size());
    Vector volumes(n);
    for (Index i = 0; i < n; ++i) volumes[i] = spec.compartments[static_cast<std::size_t>(i)].volume;

    std::vector<Edge> edges;
    for (const auto& f : spec.flows)
        edges.push_back({spec.index_of(f.from), spec.index_of(f.to), f.rate,
                         f.delayed && spec.delay > 0.0});
    const Index inj = spec.index_of(spec.injection.compartment);
    const Index obs = spec.index_of(spec.observed);
    const Index elim = spec.elimination_compartment.empty()
                           ? Index(-1)
                           : spec.index_of(spec.elimination_compartment);

    const double dt = spec.dt_internal;
    const auto steps = static_cast<Index>(std::llround(spec.t_final / dt));
    const auto stride = static_cast<Index>(std::llround(spec.dt_signal / dt));
    const Index samples = steps / stride + 1;

    // Per-edge histories share the time grid; only delayed edges store one.
    std::vector<History> histories(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e)
        if (edges[e].delayed) {
            histories[e].dt = dt;
            histories[e].values.reserve(static_cast<std::size_t>(steps) + 1);
        }

    Vector c = Vector::Zero(n);
    const bool bolus = spec.injection.duration == 0.0;
    bool bolus_applied = false;
    double injected = 0.0;
    if (bolus && spec.injection.start == 0.0) {
        c[inj] += spec.injection.dose / volumes[inj];
        injected = spec.injection.dose;
        bolus_applied = true;
    }

    const double inj_rate =
        bolus ? 0.0 : spec.injection.dose / spec.injection.duration;

    auto rhs = [&](double t, const Vector& state, double step_inj_rate) {
        Vector dc = Vector::Zero(n);
        for (std::size_t e = 0; e < edges.size(); ++e) {
            const Edge& ed = edges[e];
            const double upstream =
                ed.delayed ? histories[e].at(t - spec.delay) : state[ed.from];
            dc[ed.to] += ed.rate * upstream;
            dc[ed.from] -= ed.rate * state[ed.from];
        }
        if (elim >= 0) dc[elim] -= spec.elimination_rate * volumes[elim] * state[elim];
        dc[inj] += step_inj_rate;
        return Vector((dc.array() / volumes.array()).matrix());
    };

    TransportResult result;
    for (const auto& comp : spec.compartments) result.compartment_names.push_back(comp.name);
    result.concentrations.resize(samples, n);
    result.total_mass.resize(samples);
    result.transit_mass.resize(samples);
    result.injected_mass.resize(samples);
    result.observed.times.resize(samples);
    result.observed.values.resize(samples);

    auto record = [&](Index sample, double t) {
        result.concentrations.row(sample) = c.transpose();
        result.total_mass[sample] = volumes.dot(c);
        double transit = 0.0;
        for (std::size_t e = 0; e < edges.size(); ++e)
            if (edges[e].delayed) {
                // Tracer on the edge: rate * integral of the upstream
                // concentration over the trailing delay window. Cell-wise
                // trapezoids integrate the piecewise-linear history exactly.
                const History& h = histories[e];
                const double lo = t - spec.delay;
                double acc = 0.0;
                const auto first = static_cast<long long>(std::floor(lo / dt));
                const auto last = static_cast<long long>(std::ceil(t / dt));
                for (long long cell = first; cell < last; ++cell) {
                    const double a = std::max(lo, dt * static_cast<double>(cell));
                    const double b = std::min(t, dt * static_cast<double>(cell + 1));
                    if (b > a) acc += 0.5 * (h.at(a) + h.at(b)) * (b - a);
                }
                transit += edges[e].rate * acc;
            }
        result.transit_mass[sample] = transit;
        result.injected_mass[sample] = injected;
        result.observed.times[sample] = t;
        result.observed.values[sample] = c[obs];
    };

    for (std::size_t e = 0; e < edges.size(); ++e)
        if (edges[e].delayed) histories[e].values.push_back(c[edges[e].from]);
    record(0, 0.0);

    Index next_sample = 1;
    for (Index step = 0; step < steps; ++step) {
        const double t = dt * static_cast<double>(step);

        // Injection handled exactly per step: a bolus lands on the nearest
        // step boundary; a finite infusion contributes its window overlap,
        // so RK4 sees a constant source within the step.
        double step_rate = 0.0;
        if (bolus) {
            if (!bolus_applied && t >= spec.injection.start - 0.5 * dt) {
                c[inj] += spec.injection.dose / volumes[inj];
                injected = spec.injection.dose;
                bolus_applied = true;
            }
        } else {
            const double a = std::max(t, spec.injection.start);
            const double b = std::min(t + dt, spec.injection.start + spec.injection.duration);
            if (b > a) {
                step_rate = inj_rate * (b - a) / dt;
                injected += inj_rate * (b - a);
            }
        }

        const Vector k1 = rhs(t, c, step_rate);
        const Vector k2 = rhs(t + 0.5 * dt, Vector(c + 0.5 * dt * k1), step_rate);
        const Vector k3 = rhs(t + 0.5 * dt, Vector(c + 0.5 * dt * k2), step_rate);
        const Vector k4 = rhs(t + dt, Vector(c + dt * k3), step_rate);
        c += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

        for (std::size_t e = 0; e < edges.size(); ++e)
            if (edges[e].delayed) histories[e].values.push_back(c[edges[e].from]);

        if ((step + 1) % stride == 0) record(next_sample++, dt * static_cast<double>(step + 1));
    }
    return result;
}

ConcentrationSignal simulate_tracer(const TransportSpec& spec) {
    return simulate_transport(spec).observed;
}

SignalFeatures signal_features(const ConcentrationSignal& signal) {
    if (signal.times.size() == 0 || signal.times.size() != signal.values.size())
        throw Error("signal_features: empty or inconsistent signal");
    SignalFeatures f;
    Index arg = 0;
    f.peak = signal.values.maxCoeff(&arg);
    if (f.peak <= 0.0)
        throw Error("signal_features: time_to_peak undefined for an all-zero signal");
    f.time_to_peak = signal.times[arg];
    for (Index i = 0; i + 1 < signal.times.size(); ++i)
        f.auc += 0.5 * (signal.values[i] + signal.values[i + 1]) *
                 (signal.times[i + 1] - signal.times[i]);
    return f;
}

TransportSpec model3_transport_spec(const std::map<std::string, double>& values,
                                    double total_flow, double organ_flow) {
    auto get = [&](const std::string& name) {
        const auto it = values.find(name);
        if (it == values.end())
            throw Error("transport: parameter '" + name + "' missing from the model values");
        return it->second;
    };

    const double s0 = get("s0");
    if (s0 < 0.0 || s0 > 1.0) throw Error("transport: s0 must lie in [0, 1]");
    if (total_flow <= 0.0) throw Error("transport: total flow must be positive");
    if (organ_flow < 0.0 || organ_flow > total_flow)
        throw Error("transport: organ flow must lie in [0, total flow]");
    const double rest_flow = total_flow - organ_flow;

    const double v_total = get("BV_spec") * get("m");
    TransportSpec spec;
    for (const char* name : {"ven", "hl", "art", "organ", "rest"})
        spec.compartments.push_back(
            {name, get(std::string("f_") + name) * v_total});

    spec.flows = {{"ven", "hl", total_flow, true}, {"hl", "art", total_flow, false},
                  {"art", "organ", organ_flow, false}, {"art", "rest", rest_flow, false},
                  {"organ", "ven", organ_flow, false}, {"rest", "ven", rest_flow, false}};
    spec.injection = {"ven", get("inj_start"), get("inj_dur"), get("dose")};
    spec.elimination_compartment = "rest";
    spec.elimination_rate = get("alpha");
    spec.delay = get("tau");
    spec.observed = "organ";
    return spec;
}

}  // namespace lumen
