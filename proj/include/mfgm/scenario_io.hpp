#pragma once

// JSON scenario documents. Unknown keys are rejected; scalars broadcast to
// vectors of length `dimension`.

#include "mfgm/errors.hpp"
#include "mfgm/model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

namespace mfgm {

namespace detail {

using json = nlohmann::json;

inline void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ValidationError(where + " must be an object");
    for (const auto& item : obj.items()) {
        const bool known = std::any_of(allowed.begin(), allowed.end(),
                                       [&](const char* k) { return item.key() == k; });
        if (!known) throw ValidationError("unknown key '" + (where.empty() ? "" : where + ".") + item.key() + "'");
    }
}

inline const json& require_key(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ValidationError("missing key '" + (where.empty() ? "" : where + ".") + key + "'");
    return *it;
}

inline double as_number(const json& j, const std::string& where) {
    if (!j.is_number()) throw ValidationError(where + " must be a number");
    return j.get<double>();
}

inline Vec as_vector(const json& j, std::size_t n, const std::string& where) {
    if (j.is_number()) return Vec(n, j.get<double>());
    if (!j.is_array()) throw ValidationError(where + " must be a number or an array");
    if (j.size() != n) throw ValidationError(where + " must have length " + std::to_string(n));
    Vec v;
    for (const auto& e : j) v.push_back(as_number(e, where));
    return v;
}

inline Polynomial as_poly(const json& j, const std::string& where) {
    if (j.is_number()) return Polynomial::constant(j.get<double>());
    if (j.is_object()) {
        check_keys(j, where, {"poly"});
        const auto& p = require_key(j, "poly", where);
        if (!p.is_array() || p.empty()) throw ValidationError(where + ".poly must be a non-empty array");
        Polynomial out{{}};
        for (const auto& c : p) out.coeffs.push_back(as_number(c, where + ".poly"));
        return out;
    }
    throw ValidationError(where + " must be a number or {poly:[...]}");
}

inline MeanFieldCoupling as_meanfield(const json& j, std::size_t n, const std::string& where) {
    check_keys(j, where, {"b0", "b1", "b2"});
    MeanFieldCoupling mf;
    mf.b0 = j.contains("b0") ? as_vector(j["b0"], n, where + ".b0") : Vec(n, 0.0);
    mf.b1 = j.contains("b1") ? as_number(j["b1"], where + ".b1") : 0.0;
    mf.b2 = j.contains("b2") ? as_number(j["b2"], where + ".b2") : 0.0;
    return mf;
}

inline JumpDistribution as_jump(const json& j, std::size_t n) {
    check_keys(j, "jump", {"type", "params"});
    const auto& type_j = require_key(j, "type", "jump");
    if (!type_j.is_string()) throw ValidationError("jump.type must be a string");
    const auto type = type_j.get<std::string>();
    const json params = j.contains("params") ? j["params"] : json::object();
    if (type == "none") {
        check_keys(params, "jump.params", {});
        return NoJump{};
    }
    if (type == "point") {
        check_keys(params, "jump.params", {"z0"});
        return PointMassJump{as_vector(require_key(params, "z0", "jump.params"), n, "jump.params.z0")};
    }
    if (type == "gaussian") {
        check_keys(params, "jump.params", {"mu", "sigma"});
        return GaussianJump{as_vector(require_key(params, "mu", "jump.params"), n, "jump.params.mu"),
                            as_number(require_key(params, "sigma", "jump.params"), "jump.params.sigma")};
    }
    if (type == "uniform") {
        check_keys(params, "jump.params", {"lo", "hi"});
        return UniformJump{as_vector(require_key(params, "lo", "jump.params"), n, "jump.params.lo"),
                           as_vector(require_key(params, "hi", "jump.params"), n, "jump.params.hi")};
    }
    if (type == "exponential") {
        check_keys(params, "jump.params", {"rate"});
        return ExponentialJump{as_number(require_key(params, "rate", "jump.params"), "jump.params.rate"), n};
    }
    throw ValidationError("jump.type '" + type + "' is not one of none|point|gaussian|uniform|exponential");
}

// Line and column of a byte offset, 1-based.
inline std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t offset) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(offset, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

inline json vec_json(const Vec& v) {
    const bool uniform = std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    if (!v.empty() && uniform) return v.front();
    return v;
}

inline json poly_json(const Polynomial& p) {
    if (p.coeffs.size() == 1) return p.coeffs.front();
    return json{{"poly", p.coeffs}};
}

} // namespace detail

/// Parses and validates a scenario document.
inline ScenarioSpec parse_scenario(const std::string& text) {
    using detail::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, col] = detail::line_col(text, e.byte > 0 ? e.byte - 1 : 0);
        throw ValidationError("syntax error at line " + std::to_string(line) + ", column " + std::to_string(col) +
                              ": " + e.what());
    }
    detail::check_keys(doc, "", {"dimension", "T", "delta", "lambda", "jump", "cost", "terminal", "initial"});

    ScenarioSpec spec;
    if (doc.contains("dimension")) {
        const auto& d = doc["dimension"];
        if (!d.is_number_integer() || d.get<long long>() < 1) throw ValidationError("dimension must be an integer >= 1");
        spec.dimension = d.get<int>();
    }
    const auto n = static_cast<std::size_t>(spec.dimension);
    spec.T = detail::as_number(detail::require_key(doc, "T", ""), "T");
    spec.delta = detail::as_number(detail::require_key(doc, "delta", ""), "delta");
    spec.lambda = detail::as_number(detail::require_key(doc, "lambda", ""), "lambda");
    if (doc.contains("jump")) spec.jump = detail::as_jump(doc["jump"], n);

    const auto& cost = detail::require_key(doc, "cost", "");
    detail::check_keys(cost, "cost", {"a", "b", "c", "meanfield"});
    spec.cost.a = detail::as_poly(detail::require_key(cost, "a", "cost"), "cost.a");
    spec.cost.c = cost.contains("c") ? detail::as_poly(cost["c"], "cost.c") : Polynomial::constant(0.0);
    if (cost.contains("meanfield")) {
        if (cost.contains("b"))
            throw ValidationError("cost.meanfield and an explicit cost.b are mutually exclusive");
        spec.cost.meanfield = detail::as_meanfield(cost["meanfield"], n, "cost.meanfield");
    } else {
        const auto& b = detail::require_key(cost, "b", "cost");
        if (b.is_object() && b.contains("meanfield")) {
            if (b.size() != 1) throw ValidationError("cost.meanfield and an explicit cost.b are mutually exclusive");
            spec.cost.meanfield = detail::as_meanfield(b["meanfield"], n, "cost.b.meanfield");
        } else if (b.is_array()) {
            if (b.size() != n) throw ValidationError("cost.b must have length " + std::to_string(n));
            for (const auto& e : b) spec.cost.b.push_back(detail::as_poly(e, "cost.b"));
        } else {
            spec.cost.b.assign(n, detail::as_poly(b, "cost.b"));
        }
    }

    const auto& term = detail::require_key(doc, "terminal", "");
    detail::check_keys(term, "terminal", {"A_T", "B_T", "C_T"});
    spec.terminal.A_T = detail::as_number(detail::require_key(term, "A_T", "terminal"), "terminal.A_T");
    spec.terminal.B_T = term.contains("B_T") ? detail::as_vector(term["B_T"], n, "terminal.B_T") : Vec(n, 0.0);
    spec.terminal.C_T = term.contains("C_T") ? detail::as_number(term["C_T"], "terminal.C_T") : 0.0;

    const auto& init = detail::require_key(doc, "initial", "");
    detail::check_keys(init, "initial", {"kind", "x0", "v0"});
    const auto& kind = detail::require_key(init, "kind", "initial");
    if (kind == "dirac") {
        spec.initial.kind = InitialKind::dirac;
    } else if (kind == "gaussian") {
        spec.initial.kind = InitialKind::gaussian;
    } else {
        throw ValidationError("initial.kind must be \"dirac\" or \"gaussian\"");
    }
    spec.initial.x0 = init.contains("x0") ? detail::as_vector(init["x0"], n, "initial.x0") : Vec(n, 0.0);
    spec.initial.v0 = init.contains("v0") ? detail::as_number(init["v0"], "initial.v0") : 0.0;

    spec.validate();
    return spec;
}

inline ScenarioSpec load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open scenario file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str());
}

inline nlohmann::json scenario_to_json(const ScenarioSpec& s) {
    using detail::json;
    json jump;
    std::visit(
        [&](const auto& d) {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, NoJump>) {
                jump = {{"type", "none"}, {"params", json::object()}};
            } else if constexpr (std::is_same_v<D, PointMassJump>) {
                jump = {{"type", "point"}, {"params", {{"z0", detail::vec_json(d.z0)}}}};
            } else if constexpr (std::is_same_v<D, GaussianJump>) {
                jump = {{"type", "gaussian"}, {"params", {{"mu", detail::vec_json(d.mu)}, {"sigma", d.sigma}}}};
            } else if constexpr (std::is_same_v<D, UniformJump>) {
                jump = {{"type", "uniform"}, {"params", {{"lo", detail::vec_json(d.lo)}, {"hi", detail::vec_json(d.hi)}}}};
            } else {
                jump = {{"type", "exponential"}, {"params", {{"rate", d.rate}}}};
            }
        },
        s.jump);

    json cost = {{"a", detail::poly_json(s.cost.a)}, {"c", detail::poly_json(s.cost.c)}};
    if (s.cost.meanfield) {
        cost["b"] = {{"meanfield",
                      {{"b0", detail::vec_json(s.cost.meanfield->b0)},
                       {"b1", s.cost.meanfield->b1},
                       {"b2", s.cost.meanfield->b2}}}};
    } else {
        const bool same = std::all_of(s.cost.b.begin(), s.cost.b.end(),
                                      [&](const Polynomial& p) { return p == s.cost.b.front(); });
        if (same) {
            cost["b"] = detail::poly_json(s.cost.b.front());
        } else {
            json arr = json::array();
            for (const auto& p : s.cost.b) arr.push_back(detail::poly_json(p));
            cost["b"] = arr;
        }
    }

    return json{{"dimension", s.dimension},
                {"T", s.T},
                {"delta", s.delta},
                {"lambda", s.lambda},
                {"jump", jump},
                {"cost", cost},
                {"terminal",
                 {{"A_T", s.terminal.A_T}, {"B_T", detail::vec_json(s.terminal.B_T)}, {"C_T", s.terminal.C_T}}},
                {"initial",
                 {{"kind", s.initial.kind == InitialKind::dirac ? "dirac" : "gaussian"},
                  {"x0", detail::vec_json(s.initial.x0)},
                  {"v0", s.initial.v0}}}};
}

inline std::string serialize_scenario(const ScenarioSpec& s) { return scenario_to_json(s).dump(2) + "\n"; }

} // namespace mfgm
