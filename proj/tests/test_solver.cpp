#include <doctest.h>

#include <cmath>

#include "lumen/solver.hpp"

using namespace lumen;

namespace {

// RC discharge: p' = -p/(RC), p(0) = 1.
const char* kRcDecay = R"(
[nodes]
gnd n1
[params]
R1 1.0 1.0 1.0 resistance
C1 1.0 1.0 1.0 compliance
[components]
Resistor r1 n1 gnd R=R1
Compliance c1 n1 gnd C=C1
[init]
p:n1 = 1.0
)";

// Closed two-compartment loop: no sources, volume exactly conserved.
const char* kTwoCompartment = R"(
[nodes]
gnd n1 n2
[params]
R1 1.0 1.0 1.0 resistance
C1 1.0 1.0 1.0 compliance
C2 2.0 2.0 2.0 compliance
[components]
Resistor r1 n1 n2 R=R1
Compliance c1 n1 gnd C=C1
Compliance c2 n2 gnd C=C2
[init]
p:n1 = 20
p:n2 = 5
)";

// Single-loop pumping circuit: elastance chamber, ejection valve, arterial
// RC, venous return resistor. Series flows make Qp:Qs exactly 1 at
// periodicity.
const char* kLoop = R"(
[nodes]
gnd n1 n2 n3
[params]
Ea 2.0 1.0 4.0 elastance
Eb 0.06 0.02 0.1 elastance
V0 10 10 10 volume
Ra 1.0 0.5 2.0 resistance
Rv 0.8 0.4 1.6 resistance
Ca 1.5 0.7 3.0 compliance
T0 1.0 1.0 1.0 time
[components]
ElastanceChamber ch n1 gnd Ea=Ea Eb=Eb V0=V0
IdealValve va n1 n2
Resistor ra n2 n3 R=Ra
Compliance ca n3 gnd C=Ca
Resistor rv n3 n1 R=Rv
[heart]
period = T0
)";

// Valve held shut by negative upstream pressure.
const char* kClosedValve = R"(
[nodes]
gnd n1
[params]
C1 1.0 1.0 1.0 compliance
[components]
Compliance c1 n1 gnd C=C1 pext=-20
IdealValve v1 n1 gnd
[init]
p:n1 = -5
)";

// Steady flow into a parallel RC held at its equilibrium.
const char* kSteady = R"(
[nodes]
gnd n1
[params]
R1 5.0 5.0 5.0 resistance
C1 1.0 1.0 1.0 compliance
Q0 2.0 2.0 2.0 dimensionless
[components]
FlowSource src gnd n1 q=Q0
Resistor r1 n1 gnd R=R1
Compliance c1 n1 gnd C=C1
)";

DaeSystem make_system(const char* text) {
    const Netlist nl = parse_netlist(text);
    return assemble_dae(nl, nl.nominal_values());
}

double final_pressure(const DaeSystem& sys, const Trajectory& traj, const std::string& label) {
    const Vector sig = trajectory_signal(sys, traj, label);
    return sig[sig.size() - 1];
}

}  // namespace

TEST_CASE("rk4 reproduces exponential decay to 1e-6") {
    const DaeSystem sys = make_system(kRcDecay);
    SolverConfig cfg;
    cfg.method = Method::Rk4WithProjection;
    cfg.dt = 1e-3;
    const Trajectory traj = integrate(sys, cfg, 0.0, 1.0);
    CHECK(final_pressure(sys, traj, "p:n1") ==
          doctest::Approx(std::exp(-1.0)).epsilon(1e-6));
}

TEST_CASE("rk4 converges at fourth order") {
    const DaeSystem sys = make_system(kRcDecay);
    const double exact = std::exp(-1.0);
    SolverConfig cfg;
    cfg.method = Method::Rk4WithProjection;
    cfg.dt = 0.05;
    const double e1 =
        std::abs(final_pressure(sys, integrate(sys, cfg, 0.0, 1.0), "p:n1") - exact);
    cfg.dt = 0.025;
    const double e2 =
        std::abs(final_pressure(sys, integrate(sys, cfg, 0.0, 1.0), "p:n1") - exact);
    const double ratio = e1 / e2;
    CHECK(ratio > 14.0);
    CHECK(ratio < 18.0);
}

TEST_CASE("backward euler converges at first order") {
    const DaeSystem sys = make_system(kRcDecay);
    const double exact = std::exp(-1.0);
    SolverConfig cfg;
    cfg.dt = 0.01;
    const double e1 =
        std::abs(final_pressure(sys, integrate(sys, cfg, 0.0, 1.0), "p:n1") - exact);
    cfg.dt = 0.005;
    const double e2 =
        std::abs(final_pressure(sys, integrate(sys, cfg, 0.0, 1.0), "p:n1") - exact);
    CHECK(e1 / e2 == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("closed loop conserves stored volume to 1e-8") {
    const DaeSystem sys = make_system(kTwoCompartment);
    for (Method m : {Method::BackwardEulerNewton, Method::Rk4WithProjection}) {
        SolverConfig cfg;
        cfg.method = m;
        cfg.dt = 1e-3;
        const Trajectory traj = integrate(sys, cfg, 0.0, 10.0);
        const double v0 = stored_volume(sys, traj, 0);
        const double vEnd = stored_volume(sys, traj, traj.states.rows() - 1);
        CHECK(std::abs(vEnd - v0) / v0 < 1e-8);
        // Equilibrium: common pressure (C1*20 + C2*5) / (C1 + C2) = 10.
        CHECK(final_pressure(sys, traj, "p:n1") == doctest::Approx(10.0).epsilon(1e-6));
        CHECK(final_pressure(sys, traj, "p:n2") == doctest::Approx(10.0).epsilon(1e-6));
    }
}

TEST_CASE("time-invariant system converges in two cycles") {
    const DaeSystem sys = make_system(kSteady);
    SolverConfig cfg;
    const CycleSolution cycle = run_to_periodic(sys, cfg);
    CHECK(cycle.converged);
    CHECK(cycle.cycles_used == 2);
    const Vector p = trajectory_signal(sys, cycle, "p:n1");
    CHECK((p.array() - 10.0).abs().maxCoeff() < 1e-9);
}

TEST_CASE("cycle_tol zero never converges") {
    const DaeSystem sys = make_system(kSteady);
    SolverConfig cfg;
    cfg.cycle_tol = 0.0;
    cfg.max_cycles = 5;
    const CycleSolution cycle = run_to_periodic(sys, cfg);
    CHECK(!cycle.converged);
    CHECK(cycle.cycles_used == 5);
}

TEST_CASE("closed valve under negative pressure carries no flow") {
    const DaeSystem sys = make_system(kClosedValve);
    SolverConfig cfg;
    const Trajectory traj = integrate(sys, cfg, 0.0, 1.0);
    const Vector q = trajectory_signal(sys, traj, "q:v1");
    const Vector p = trajectory_signal(sys, traj, "p:n1");
    CHECK(q.cwiseAbs().maxCoeff() < 1e-12);
    CHECK((p.array() + 5.0).abs().maxCoeff() < 1e-9);
}

TEST_CASE("pumping loop reaches a periodic state with consistent biomarkers") {
    const DaeSystem sys = make_system(kLoop);
    SolverConfig cfg;
    cfg.cycle_tol = 1e-8;
    cfg.max_cycles = 200;
    const CycleSolution cycle = run_to_periodic(sys, cfg);
    REQUIRE(cycle.converged);

    const auto defs = parse_biomarker_defs(R"(
P_sys sys p:n3
P_mean mean p:n3
P_dias dias p:n3
SV sv q:va
CO co q:va
QpQs ratio q:ra q:rv
)");
    const BiomarkerSet bm = extract_biomarkers(sys, cycle, defs);
    CHECK(bm.at("P_sys") >= bm.at("P_mean"));
    CHECK(bm.at("P_mean") >= bm.at("P_dias"));
    CHECK(bm.at("SV") > 0.0);
    CHECK(bm.at("CO") == doctest::Approx(bm.at("SV") / 1.0));
    CHECK(bm.at("QpQs") == doctest::Approx(1.0).epsilon(1e-6));

    // Valve rectification: period-mean valve flow is non-negative.
    const Vector qv = trajectory_signal(sys, cycle, "q:va");
    CHECK(trapezoid(cycle.times, qv) >= -cfg.newton_tol);

    // Volume conservation over the converged cycle.
    const double v0 = stored_volume(sys, cycle, 0);
    const double v1 = stored_volume(sys, cycle, cycle.states.rows() - 1);
    CHECK(std::abs(v1 - v0) / std::abs(v0) < 1e-6);

    // Determinism: the exact same bytes on a rerun.
    const CycleSolution again = run_to_periodic(sys, cfg);
    CHECK(again.states == cycle.states);
    CHECK(again.algebraic == cycle.algebraic);
}

TEST_CASE("stroke volume oracle: rectified sine integrates to 1") {
    const char* text = R"(
[nodes]
gnd n1
[params]
R1 1.0 1.0 1.0 resistance
PI 3.14159265358979312 3.14159265358979312 3.14159265358979312 dimensionless
[components]
FlowSource src gnd n1 q=0 amp=PI
Resistor r1 n1 gnd R=R1
[heart]
period = 1.0
)";
    const DaeSystem sys = make_system(text);
    SolverConfig cfg;
    const CycleSolution cycle = run_to_periodic(sys, cfg);
    const auto defs = parse_biomarker_defs("SV sv q:src\n");
    const BiomarkerSet bm = extract_biomarkers(sys, cycle, defs);
    CHECK(bm.at("SV") == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("constant signal: mean equals sys equals dias") {
    const DaeSystem sys = make_system(kSteady);
    SolverConfig cfg;
    const CycleSolution cycle = run_to_periodic(sys, cfg);
    const auto defs = parse_biomarker_defs("m mean p:n1\ns sys p:n1\nd dias p:n1\n");
    const BiomarkerSet bm = extract_biomarkers(sys, cycle, defs);
    CHECK(bm.at("m") == doctest::Approx(10.0).epsilon(1e-9));
    CHECK(bm.at("s") == doctest::Approx(bm.at("m")).epsilon(1e-9));
    CHECK(bm.at("d") == doctest::Approx(bm.at("m")).epsilon(1e-9));
}

TEST_CASE("unknown signal and zero denominator raise errors") {
    const DaeSystem sys = make_system(kSteady);
    SolverConfig cfg;
    const CycleSolution cycle = run_to_periodic(sys, cfg);
    CHECK_THROWS_WITH_AS(
        extract_biomarkers(sys, cycle, parse_biomarker_defs("x mean p:zzz\n")),
        doctest::Contains("unknown signal"), Error);
    CHECK_THROWS_WITH_AS(
        extract_biomarkers(sys, cycle, parse_biomarker_defs("x ratio p:n1 q:c1\n")),
        doctest::Contains("zero-denominator"), Error);
}

TEST_CASE("solver config validation") {
    SolverConfig cfg;
    cfg.dt = 0.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = SolverConfig{};
    cfg.max_cycles = 1;
    CHECK_THROWS_AS(cfg.validate(), Error);
    CHECK(method_from_string("rk4-with-projection") == Method::Rk4WithProjection);
    CHECK_THROWS_AS(method_from_string("euler"), ParseError);
}
