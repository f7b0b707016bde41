#include <doctest.h>

#include <cmath>

#include "lumen/netlist.hpp"

using namespace lumen;

namespace {

const char* kMinimal = R"(
# minimal circuit
[nodes]
gnd n1

[params]
R1 1.0 0.5 2.0 resistance
Q0 2.0 2.0 2.0 dimensionless

[components]
Resistor r1 n1 gnd R=R1
FlowSource src gnd n1 q=Q0
)";

}  // namespace

TEST_CASE("expressions evaluate with precedence and associativity") {
    const std::map<std::string, double> env = {{"x", 3.0}, {"y", 2.0}};
    CHECK(parse_expression("2*(1+3)^2/4 - 5").eval(env) == doctest::Approx(3.0));
    CHECK(parse_expression("-x^2").eval(env) == doctest::Approx(-9.0));
    CHECK(parse_expression("2^3^2").eval(env) == doctest::Approx(512.0));
    CHECK(parse_expression("x/y/2").eval(env) == doctest::Approx(0.75));
    CHECK(parse_expression("1 - 2 - 3").eval(env) == doctest::Approx(-4.0));
    CHECK(parse_expression("60/(n_only)").eval({{"n_only", 30.0}}) == doctest::Approx(2.0));
    CHECK_THROWS_AS(parse_expression("2 +").eval(env), ParseError);
    CHECK_THROWS_AS(parse_expression("2 $ 3"), ParseError);
    CHECK_THROWS_AS(parse_expression("x").eval({}), Error);
}

TEST_CASE("expression errors carry line and column") {
    try {
        parse_expression("1 + $", 12, 20);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line == 12);
        CHECK(e.col >= 24);
        CHECK(std::string(e.what()).find("line 12") != std::string::npos);
    }
}

TEST_CASE("minimal netlist parses") {
    const Netlist nl = parse_netlist(kMinimal, "mini");
    CHECK(nl.name == "mini");
    CHECK(nl.ground == "gnd");
    REQUIRE(nl.nodes.size() == 1);
    CHECK(nl.nodes[0] == "n1");
    CHECK(nl.components.size() == 2);
    CHECK(nl.parameters.size() == 2);
    CHECK(nl.sampled_parameters() == std::vector<std::string>{"R1"});
    CHECK(nl.nominal_values().at("Q0") == 2.0);
    CHECK(!nl.heart_period.has_value());
}

TEST_CASE("dangling node is a distinct diagnostic") {
    const std::string bad = std::string(kMinimal) + "\nResistor r2 n9 gnd R=R1\n";
    CHECK_THROWS_WITH_AS(parse_netlist(bad),
                         doctest::Contains("undeclared node 'n9'"), ParseError);
}

TEST_CASE("duplicate component id is a distinct diagnostic") {
    const std::string bad = std::string(kMinimal) + "\nResistor r1 n1 gnd R=R1\n";
    CHECK_THROWS_WITH_AS(parse_netlist(bad),
                         doctest::Contains("duplicate component id 'r1'"), ParseError);
}

TEST_CASE("unknown component kind is a distinct diagnostic") {
    const std::string bad = std::string(kMinimal) + "\nDiode d1 n1 gnd R=R1\n";
    CHECK_THROWS_WITH_AS(parse_netlist(bad),
                         doctest::Contains("unknown component kind 'Diode'"), ParseError);
}

TEST_CASE("missing reference node is a distinct diagnostic") {
    const char* bad = R"(
[nodes]
n1 n2
[params]
R1 1 1 1 resistance
[components]
Resistor r1 n1 n2 R=R1
)";
    CHECK_THROWS_WITH_AS(parse_netlist(bad), doctest::Contains("missing reference node"),
                         ParseError);
}

TEST_CASE("undeclared parameter reference is rejected") {
    const std::string bad = std::string(kMinimal) + "\nResistor r2 n1 gnd R=R_missing\n";
    CHECK_THROWS_WITH_AS(parse_netlist(bad),
                         doctest::Contains("undeclared parameter 'R_missing'"), ParseError);
}

TEST_CASE("disconnected node is rejected") {
    const char* bad = R"(
[nodes]
gnd n1 n2 n3
[params]
R1 1 1 1 resistance
[components]
Resistor r1 n1 gnd R=R1
Resistor r2 n2 n3 R=R1
)";
    CHECK_THROWS_WITH_AS(parse_netlist(bad), doctest::Contains("not connected"), ParseError);
}

TEST_CASE("heart period present iff a time-varying component exists") {
    const char* missing = R"(
[nodes]
gnd n1
[params]
E1 1 1 1 elastance
[components]
ElastanceChamber ch n1 gnd Ea=E1 Eb=E1 V0=10
Resistor r1 n1 gnd R=E1
)";
    CHECK_THROWS_WITH_AS(parse_netlist(missing), doctest::Contains("period missing"),
                         ParseError);

    const std::string spurious = std::string(kMinimal) + "\n[heart]\nperiod = 1.0\n";
    CHECK_THROWS_WITH_AS(parse_netlist(spurious),
                         doctest::Contains("no time-varying component"), ParseError);

    const std::string ok = std::string(missing) + "\n[heart]\nperiod = 0.8\nsys_frac = 0.3\n";
    const Netlist nl = parse_netlist(ok);
    REQUIRE(nl.heart_period.has_value());
    CHECK(nl.heart_period->eval({}) == 0.8);
}

TEST_CASE("param spec ordering constraint enforced") {
    const char* bad = R"(
[nodes]
gnd n1
[params]
R1 5 1 2 resistance
[components]
Resistor r1 n1 gnd R=R1
)";
    CHECK_THROWS_WITH_AS(parse_netlist(bad), doctest::Contains("low <= nominal <= high"),
                         ParseError);
}

TEST_CASE("init overrides parse and validate") {
    const std::string ok = std::string(kMinimal) + "\n[init]\np:n1 = 4.0\nq:r1 = Q0/2\n";
    const Netlist nl = parse_netlist(ok);
    CHECK(nl.initial_overrides.at("p:n1").eval({}) == 4.0);
    const std::string bad = std::string(kMinimal) + "\n[init]\np:n9 = 4.0\n";
    CHECK_THROWS_AS(parse_netlist(bad), ParseError);
}

TEST_CASE("syntax errors carry line numbers") {
    const char* bad = R"([nodes]
gnd n1
[params]
R1 1 1 1
[components]
)";
    try {
        parse_netlist(bad);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line == 4);
    }
}
