#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lumen/types.hpp"

namespace lumen {

/// Arithmetic expression over named parameters. Netlist component slots and
/// the heart section accept expressions, not just literals, so derived
/// quantities (series splits, diameter-to-resistance laws) live in the
/// netlist instead of in code.
///
/// Grammar:
///   expr    := term (('+'|'-') term)*
///   term    := factor (('*'|'/') factor)*
///   factor  := '-' factor | primary ('^' factor)?
///   primary := number | identifier | '(' expr ')'
class Expr {
  public:
    enum class Op { Const, Param, Neg, Add, Sub, Mul, Div, Pow };

    static Expr constant(double v);
    static Expr param(const std::string& name);

    double eval(const std::map<std::string, double>& values) const;
    void collect_params(std::set<std::string>& out) const;
    bool is_constant() const;

    Op op = Op::Const;
    double value = 0.0;
    std::string name;
    std::shared_ptr<Expr> lhs, rhs;
};

/// Parses an expression; line/col feed the diagnostics of the enclosing
/// netlist line. col_offset is where the expression starts on that line.
Expr parse_expression(const std::string& text, int line = 0, int col_offset = 0);

enum class ComponentKind {
    Resistor,
    NonlinearResistor,
    PressureDependentResistor,
    Inertance,
    Compliance,
    ElastanceChamber,
    IdealValve,
    DynamicValve,
    FlowSource,
};

std::string to_string(ComponentKind kind);

struct Component {
    std::string id;
    ComponentKind kind = ComponentKind::Resistor;
    std::string node_from;
    std::string node_to;
    std::map<std::string, Expr> slots;
    int line = 0;

    bool has_slot(const std::string& key) const { return slots.count(key) != 0; }
};

struct ParameterSpec {
    std::string name;
    double nominal = 0.0;
    double low = 0.0;
    double high = 0.0;
    std::string role;  // resistance, nonlinear-resistance, inertance, compliance,
                       // elastance, volume, time, dimensionless

    bool sampled() const { return low < high; }
};

/// Immutable circuit description. `nodes` holds the non-ground nodes in
/// declaration order; the reference node (named "gnd" or "0") is implicit
/// and its pressure is identically zero.
struct Netlist {
    std::string name;
    std::vector<std::string> nodes;
    std::string ground;
    std::vector<Component> components;
    std::map<std::string, ParameterSpec> parameters;
    std::optional<Expr> heart_period;  // present iff a time-varying component exists
    Expr sys_frac;                     // systolic fraction of the period, default 0.3
    std::map<std::string, Expr> initial_overrides;  // "p:<node>", "q:<id>", "V:<id>", "s:<id>"

    bool has_node(const std::string& n) const;
    const Component* find_component(const std::string& id) const;
    /// Parameter names with low < high, in declaration order.
    std::vector<std::string> sampled_parameters() const;
    /// name -> nominal for every declared parameter.
    std::map<std::string, double> nominal_values() const;
};

/// Parses and validates netlist source. Diagnostics carry line (and column
/// for expression syntax errors): unknown component kind, dangling node,
/// missing reference node, duplicate id, unresolved parameter reference.
Netlist parse_netlist(const std::string& source, const std::string& name = "netlist");

/// Reads the file (IoError if missing) and parses it; the netlist name is
/// the file stem.
Netlist load_netlist(const std::string& path);

}  // namespace lumen
