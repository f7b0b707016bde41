#include "lumen/netlist.hpp"

#include <cctype>
#include <cmath>
#include <filesystem>
#include <queue>
#include <sstream>

#include "lumen/io.hpp"

namespace lumen {

Expr Expr::constant(double v) {
    Expr e;
    e.op = Op::Const;
    e.value = v;
    return e;
}

Expr Expr::param(const std::string& name) {
    Expr e;
    e.op = Op::Param;
    e.name = name;
    return e;
}

double Expr::eval(const std::map<std::string, double>& values) const {
    switch (op) {
        case Op::Const: return value;
        case Op::Param: {
            auto it = values.find(name);
            if (it == values.end()) throw Error("unbound parameter: " + name);
            return it->second;
        }
        case Op::Neg: return -lhs->eval(values);
        case Op::Add: return lhs->eval(values) + rhs->eval(values);
        case Op::Sub: return lhs->eval(values) - rhs->eval(values);
        case Op::Mul: return lhs->eval(values) * rhs->eval(values);
        case Op::Div: return lhs->eval(values) / rhs->eval(values);
        case Op::Pow: return std::pow(lhs->eval(values), rhs->eval(values));
    }
    throw Error("corrupt expression");
}

void Expr::collect_params(std::set<std::string>& out) const {
    if (op == Op::Param) out.insert(name);
    if (lhs) lhs->collect_params(out);
    if (rhs) rhs->collect_params(out);
}

bool Expr::is_constant() const {
    std::set<std::string> names;
    collect_params(names);
    return names.empty();
}

namespace {

struct ExprParser {
    const std::string& text;
    std::size_t pos = 0;
    int line;
    int col_offset;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError(msg, line, col_offset + static_cast<int>(pos) + 1);
    }

    void skip_ws() {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    }

    bool eat(char c) {
        skip_ws();
        if (pos < text.size() && text[pos] == c) {
            ++pos;
            return true;
        }
        return false;
    }

    char peek() {
        skip_ws();
        return pos < text.size() ? text[pos] : '\0';
    }

    Expr make(Expr::Op op, Expr l, Expr r) {
        Expr e;
        e.op = op;
        e.lhs = std::make_shared<Expr>(std::move(l));
        e.rhs = std::make_shared<Expr>(std::move(r));
        return e;
    }

    Expr parse() {
        Expr e = expr();
        skip_ws();
        if (pos != text.size()) fail("unexpected character '" + std::string(1, text[pos]) + "'");
        return e;
    }

    Expr expr() {
        Expr e = term();
        for (;;) {
            if (eat('+'))
                e = make(Expr::Op::Add, std::move(e), term());
            else if (eat('-'))
                e = make(Expr::Op::Sub, std::move(e), term());
            else
                return e;
        }
    }

    Expr term() {
        Expr e = factor();
        for (;;) {
            if (eat('*'))
                e = make(Expr::Op::Mul, std::move(e), factor());
            else if (eat('/'))
                e = make(Expr::Op::Div, std::move(e), factor());
            else
                return e;
        }
    }

    Expr factor() {
        if (eat('-')) {
            Expr e;
            e.op = Expr::Op::Neg;
            e.lhs = std::make_shared<Expr>(factor());
            return e;
        }
        Expr base = primary();
        if (eat('^')) return make(Expr::Op::Pow, std::move(base), factor());
        return base;
    }

    Expr primary() {
        skip_ws();
        if (pos >= text.size()) fail("unexpected end of expression");
        const char c = text[pos];
        if (c == '(') {
            ++pos;
            Expr e = expr();
            if (!eat(')')) fail("expected ')'");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t used = 0;
            double v;
            try {
                v = std::stod(text.substr(pos), &used);
            } catch (const std::exception&) {
                fail("bad number");
            }
            pos += used;
            return Expr::constant(v);
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t end = pos;
            while (end < text.size() &&
                   (std::isalnum(static_cast<unsigned char>(text[end])) || text[end] == '_'))
                ++end;
            std::string name = text.substr(pos, end - pos);
            pos = end;
            return Expr::param(name);
        }
        fail("unexpected character '" + std::string(1, c) + "'");
    }
};

bool is_ground_name(const std::string& n) { return n == "gnd" || n == "0"; }

ComponentKind parse_kind(const std::string& token, int line) {
    if (token == "Resistor") return ComponentKind::Resistor;
    if (token == "NonlinearResistor") return ComponentKind::NonlinearResistor;
    if (token == "PressureDependentResistor") return ComponentKind::PressureDependentResistor;
    if (token == "Inertance") return ComponentKind::Inertance;
    if (token == "Compliance") return ComponentKind::Compliance;
    if (token == "ElastanceChamber") return ComponentKind::ElastanceChamber;
    if (token == "IdealValve") return ComponentKind::IdealValve;
    if (token == "DynamicValve") return ComponentKind::DynamicValve;
    if (token == "FlowSource") return ComponentKind::FlowSource;
    throw ParseError("unknown component kind '" + token + "'", line);
}

// Required and optional slot keys per kind; unknown keys are rejected.
struct SlotSchema {
    std::vector<std::string> required;
    std::vector<std::string> optional;
};

const SlotSchema& slot_schema(ComponentKind kind) {
    static const std::map<ComponentKind, SlotSchema> schemas = {
        {ComponentKind::Resistor, {{"R"}, {}}},
        {ComponentKind::NonlinearResistor, {{"K"}, {}}},
        {ComponentKind::PressureDependentResistor, {{"R0", "sens"}, {"pref"}}},
        {ComponentKind::Inertance, {{"L"}, {}}},
        {ComponentKind::Compliance, {{"C"}, {"pext", "dv0"}}},
        {ComponentKind::ElastanceChamber, {{"Ea", "Eb", "V0"}, {"sys_frac", "phase"}}},
        {ComponentKind::IdealValve, {{}, {}}},
        {ComponentKind::DynamicValve, {{"K", "L", "Kvo", "Kvc"}, {}}},
        {ComponentKind::FlowSource, {{"q"}, {"amp"}}},
    };
    return schemas.at(kind);
}

bool kind_is_time_varying(const Component& c) {
    if (c.kind == ComponentKind::ElastanceChamber) return true;
    if (c.kind == ComponentKind::FlowSource && c.has_slot("amp")) return true;
    return false;
}

std::string strip_comment(const std::string& line) {
    const auto hash = line.find('#');
    return hash == std::string::npos ? line : line.substr(0, hash);
}

}  // namespace

std::string to_string(ComponentKind kind) {
    switch (kind) {
        case ComponentKind::Resistor: return "Resistor";
        case ComponentKind::NonlinearResistor: return "NonlinearResistor";
        case ComponentKind::PressureDependentResistor: return "PressureDependentResistor";
        case ComponentKind::Inertance: return "Inertance";
        case ComponentKind::Compliance: return "Compliance";
        case ComponentKind::ElastanceChamber: return "ElastanceChamber";
        case ComponentKind::IdealValve: return "IdealValve";
        case ComponentKind::DynamicValve: return "DynamicValve";
        case ComponentKind::FlowSource: return "FlowSource";
    }
    return "?";
}

Expr parse_expression(const std::string& text, int line, int col_offset) {
    ExprParser p{text, 0, line, col_offset};
    return p.parse();
}

bool Netlist::has_node(const std::string& n) const {
    if (n == ground) return true;
    for (const auto& node : nodes)
        if (node == n) return true;
    return false;
}

const Component* Netlist::find_component(const std::string& id) const {
    for (const auto& c : components)
        if (c.id == id) return &c;
    return nullptr;
}

std::vector<std::string> Netlist::sampled_parameters() const {
    std::vector<std::string> out;
    for (const auto& [name, spec] : parameters)
        if (spec.sampled()) out.push_back(name);
    return out;
}

std::map<std::string, double> Netlist::nominal_values() const {
    std::map<std::string, double> out;
    for (const auto& [name, spec] : parameters) out[name] = spec.nominal;
    return out;
}

Netlist parse_netlist(const std::string& source, const std::string& name) {
    Netlist nl;
    nl.name = name;
    nl.sys_frac = Expr::constant(0.3);

    enum class Section { None, Nodes, Params, Components, Heart, Init };
    Section section = Section::None;

    std::istringstream in(source);
    std::string raw;
    int lineno = 0;
    bool saw_ground = false;

    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') throw ParseError("malformed section header", lineno);
            const std::string sec = line.substr(1, line.size() - 2);
            if (sec == "nodes")
                section = Section::Nodes;
            else if (sec == "params")
                section = Section::Params;
            else if (sec == "components")
                section = Section::Components;
            else if (sec == "heart")
                section = Section::Heart;
            else if (sec == "init")
                section = Section::Init;
            else
                throw ParseError("unknown section '" + sec + "'", lineno);
            continue;
        }

        switch (section) {
            case Section::None:
                throw ParseError("content before first section header", lineno);

            case Section::Nodes: {
                for (const auto& tok : split_whitespace(line)) {
                    if (is_ground_name(tok)) {
                        if (saw_ground) throw ParseError("duplicate reference node", lineno);
                        saw_ground = true;
                        nl.ground = tok;
                    } else {
                        for (const auto& existing : nl.nodes)
                            if (existing == tok)
                                throw ParseError("duplicate node '" + tok + "'", lineno);
                        nl.nodes.push_back(tok);
                    }
                }
                break;
            }

            case Section::Params: {
                const auto tokens = split_whitespace(line);
                if (tokens.size() != 5)
                    throw ParseError(
                        "expected 'name nominal low high role' in [params]", lineno);
                ParameterSpec spec;
                spec.name = tokens[0];
                spec.nominal = parse_double(tokens[1]);
                spec.low = parse_double(tokens[2]);
                spec.high = parse_double(tokens[3]);
                spec.role = tokens[4];
                static const std::set<std::string> roles = {
                    "resistance", "nonlinear-resistance", "inertance",  "compliance",
                    "elastance",  "volume",               "time",       "dimensionless"};
                if (!roles.count(spec.role))
                    throw ParseError("unknown parameter role '" + spec.role + "'", lineno);
                if (!(spec.low <= spec.nominal && spec.nominal <= spec.high))
                    throw ParseError("parameter '" + spec.name +
                                         "' violates low <= nominal <= high",
                                     lineno);
                if (nl.parameters.count(spec.name))
                    throw ParseError("duplicate parameter '" + spec.name + "'", lineno);
                nl.parameters[spec.name] = spec;
                break;
            }

            case Section::Components: {
                const auto tokens = split_whitespace(line);
                if (tokens.size() < 4)
                    throw ParseError("expected 'kind id node_from node_to key=expr...'",
                                     lineno);
                Component c;
                c.kind = parse_kind(tokens[0], lineno);
                c.id = tokens[1];
                c.node_from = tokens[2];
                c.node_to = tokens[3];
                c.line = lineno;
                for (std::size_t i = 4; i < tokens.size(); ++i) {
                    const auto eq = tokens[i].find('=');
                    if (eq == std::string::npos)
                        throw ParseError("expected key=expr, got '" + tokens[i] + "'", lineno);
                    const std::string key = tokens[i].substr(0, eq);
                    const std::string val = tokens[i].substr(eq + 1);
                    if (c.slots.count(key))
                        throw ParseError("duplicate slot '" + key + "'", lineno);
                    c.slots[key] = parse_expression(val, lineno);
                }
                nl.components.push_back(std::move(c));
                break;
            }

            case Section::Heart: {
                const auto eq = line.find('=');
                if (eq == std::string::npos)
                    throw ParseError("expected key=expr in [heart]", lineno);
                const std::string key = trim(line.substr(0, eq));
                const std::string val = trim(line.substr(eq + 1));
                if (key == "period")
                    nl.heart_period = parse_expression(val, lineno);
                else if (key == "sys_frac")
                    nl.sys_frac = parse_expression(val, lineno);
                else
                    throw ParseError("unknown heart key '" + key + "'", lineno);
                break;
            }

            case Section::Init: {
                const auto eq = line.find('=');
                if (eq == std::string::npos)
                    throw ParseError("expected target=expr in [init]", lineno);
                const std::string key = trim(line.substr(0, eq));
                const std::string val = trim(line.substr(eq + 1));
                if (key.size() < 3 ||
                    (key.rfind("p:", 0) != 0 && key.rfind("q:", 0) != 0 &&
                     key.rfind("V:", 0) != 0 && key.rfind("s:", 0) != 0))
                    throw ParseError("init target must be p:<node>, q:<id>, V:<id> or s:<id>",
                                     lineno);
                if (nl.initial_overrides.count(key))
                    throw ParseError("duplicate init target '" + key + "'", lineno);
                nl.initial_overrides[key] = parse_expression(val, lineno);
                break;
            }
        }
    }

    // Validation beyond per-line syntax.
    if (!saw_ground) throw ParseError("missing reference node (declare 'gnd' in [nodes])");

    std::set<std::string> ids;
    bool time_varying = false;
    for (const auto& c : nl.components) {
        if (!ids.insert(c.id).second)
            throw ParseError("duplicate component id '" + c.id + "'", c.line);
        if (!nl.has_node(c.node_from))
            throw ParseError("component '" + c.id + "' references undeclared node '" +
                                 c.node_from + "'",
                             c.line);
        if (!nl.has_node(c.node_to))
            throw ParseError("component '" + c.id + "' references undeclared node '" +
                                 c.node_to + "'",
                             c.line);
        if (c.node_from == c.node_to)
            throw ParseError("component '" + c.id + "' connects a node to itself", c.line);

        const auto& schema = slot_schema(c.kind);
        for (const auto& req : schema.required)
            if (!c.has_slot(req))
                throw ParseError("component '" + c.id + "' missing slot '" + req + "'",
                                 c.line);
        for (const auto& [key, expr] : c.slots) {
            bool known = false;
            for (const auto& k : schema.required) known |= (k == key);
            for (const auto& k : schema.optional) known |= (k == key);
            if (!known)
                throw ParseError("component '" + c.id + "' has unknown slot '" + key + "'",
                                 c.line);
            std::set<std::string> used;
            expr.collect_params(used);
            for (const auto& p : used)
                if (!nl.parameters.count(p))
                    throw ParseError("component '" + c.id + "' references undeclared parameter '" +
                                         p + "'",
                                     c.line);
        }
        time_varying |= kind_is_time_varying(c);
    }

    if (nl.heart_period) {
        std::set<std::string> used;
        nl.heart_period->collect_params(used);
        nl.sys_frac.collect_params(used);
        for (const auto& p : used)
            if (!nl.parameters.count(p))
                throw ParseError("[heart] references undeclared parameter '" + p + "'");
    }
    if (time_varying && !nl.heart_period)
        throw ParseError("time-varying component present but [heart] period missing");
    if (!time_varying && nl.heart_period)
        throw ParseError("[heart] period given but no time-varying component exists");

    for (const auto& [key, expr] : nl.initial_overrides) {
        const std::string target = key.substr(2);
        if (key[0] == 'p') {
            if (!nl.has_node(target) || is_ground_name(target))
                throw ParseError("init override for unknown node '" + target + "'");
        } else {
            const Component* c = nl.find_component(target);
            if (!c) throw ParseError("init override for unknown component '" + target + "'");
        }
        std::set<std::string> used;
        expr.collect_params(used);
        for (const auto& p : used)
            if (!nl.parameters.count(p))
                throw ParseError("[init] references undeclared parameter '" + p + "'");
    }

    // Connectivity: every node reachable from ground through components.
    if (!nl.nodes.empty()) {
        if (nl.components.empty()) throw ParseError("netlist has nodes but no components");
        std::map<std::string, std::vector<std::string>> adj;
        for (const auto& c : nl.components) {
            adj[c.node_from].push_back(c.node_to);
            adj[c.node_to].push_back(c.node_from);
        }
        std::set<std::string> seen;
        std::queue<std::string> frontier;
        frontier.push(nl.ground);
        seen.insert(nl.ground);
        while (!frontier.empty()) {
            const auto cur = frontier.front();
            frontier.pop();
            for (const auto& next : adj[cur])
                if (seen.insert(next).second) frontier.push(next);
        }
        for (const auto& n : nl.nodes)
            if (!seen.count(n))
                throw ParseError("node '" + n + "' is not connected to the rest of the circuit");
    }

    return nl;
}

Netlist load_netlist(const std::string& path) {
    const std::string text = read_text_file(path);
    const std::string stem = std::filesystem::path(path).stem().string();
    return parse_netlist(text, stem);
}

}  // namespace lumen
