#pragma once

// Tabular and JSON serialization for solver outputs, plus the matching readers.

#include "mfgm/charfun.hpp"
#include "mfgm/detail/numerics.hpp"
#include "mfgm/errors.hpp"
#include "mfgm/hjb.hpp"
#include "mfgm/mc.hpp"
#include "mfgm/moments.hpp"
#include "mfgm/recover.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace mfgm::io {

using detail::format_double;
using nlohmann::json;

namespace detail {

struct Table {
    std::vector<std::string> comments;  ///< without the leading '#'
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw ValidationError("missing column '" + name + "'");
    }
    bool has(const std::string& name) const {
        for (const auto& h : header)
            if (h == name) return true;
        return false;
    }
};

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, sep)) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

inline Table parse_table(const std::string& text) {
    Table t;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.front() == '#') {
            t.comments.push_back(line.substr(line.find_first_not_of("# ") == std::string::npos ? line.size()
                                                                                               : line.find_first_not_of("# ")));
            continue;
        }
        auto cells = split(line);
        if (t.header.empty()) {
            t.header = std::move(cells);
            continue;
        }
        if (cells.size() != t.header.size())
            throw ValidationError("line " + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                                  " columns, found " + std::to_string(cells.size()));
        std::vector<double> row;
        for (const auto& c : cells) {
            try {
                row.push_back(mfgm::detail::parse_double(c));
            } catch (const std::exception&) {
                throw ValidationError("line " + std::to_string(lineno) + ": not a number '" + c + "'");
            }
        }
        t.rows.push_back(std::move(row));
    }
    if (t.header.empty()) throw ValidationError("table has no header row");
    return t;
}

inline std::string join(const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) s += ',';
        s += cells[i];
    }
    return s + "\n";
}

inline std::vector<std::string> numbered(const std::string& stem, std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 1; i <= n; ++i) out.push_back(stem + "_" + std::to_string(i));
    return out;
}

// comma-separated key=value pairs from a comment line
inline std::map<std::string, std::string> key_values(const std::string& comment) {
    std::map<std::string, std::string> kv;
    for (const auto& item : split(comment)) {
        const auto eq = item.find('=');
        if (eq != std::string::npos) kv[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return kv;
}

inline std::size_t count_prefixed(const Table& t, const std::string& stem) {
    std::size_t n = 0;
    while (t.has(stem + "_" + std::to_string(n + 1))) ++n;
    return n;
}

inline json number(double x) {
    if (std::isfinite(x)) return x;
    return format_double(x);
}

inline double number(const json& j) {
    if (j.is_string()) return mfgm::detail::parse_double(j.get<std::string>());
    return j.get<double>();
}

inline json numbers(const Vec& v) {
    json a = json::array();
    for (double x : v) a.push_back(number(x));
    return a;
}

inline Vec numbers(const json& j) {
    Vec v;
    for (const auto& x : j) v.push_back(number(x));
    return v;
}

} // namespace detail

// --- HJB coefficients: t,u,udot,A,v_1..n,B_1..n,C

struct HjbTable {
    Vec t, u, udot, A, C;
    std::vector<Vec> v, B;
};

inline std::string write_hjb_csv(const HjbSolution& sol) {
    const auto n = static_cast<std::size_t>(sol.dimension);
    std::vector<std::string> head{"t", "u", "udot", "A"};
    for (const auto& s : detail::numbered("v", n)) head.push_back(s);
    for (const auto& s : detail::numbered("B", n)) head.push_back(s);
    head.push_back("C");
    std::string out = detail::join(head);
    for (std::size_t k = 0; k <= sol.N; ++k) {
        std::vector<std::string> row{format_double(sol.t[k]), format_double(sol.u[k]), format_double(sol.udot[k]),
                                     format_double(sol.A[k])};
        for (double x : sol.v[k]) row.push_back(format_double(x));
        for (double x : sol.B[k]) row.push_back(format_double(x));
        row.push_back(format_double(sol.C[k]));
        out += detail::join(row);
    }
    return out;
}

inline HjbTable read_hjb_csv(const std::string& text) {
    const auto tab = detail::parse_table(text);
    const std::size_t n = detail::count_prefixed(tab, "v");
    HjbTable h;
    const auto it = tab.column("t"), iu = tab.column("u"), iud = tab.column("udot"), iA = tab.column("A"),
               iC = tab.column("C");
    for (const auto& r : tab.rows) {
        h.t.push_back(r[it]);
        h.u.push_back(r[iu]);
        h.udot.push_back(r[iud]);
        h.A.push_back(r[iA]);
        h.C.push_back(r[iC]);
        Vec v(n), B(n);
        for (std::size_t i = 0; i < n; ++i) {
            v[i] = r[tab.column("v_" + std::to_string(i + 1))];
            B[i] = r[tab.column("B_" + std::to_string(i + 1))];
        }
        h.v.push_back(v);
        h.B.push_back(B);
    }
    return h;
}

// --- moment path: comment with K and residuals, then t,E_1..n,V

inline std::string write_moments_csv(const MomentPath& p, std::size_t dimension) {
    std::string out = "# K=" + format_double(p.K) + ",residual_E=" + format_double(p.residual_E) +
                      ",residual_V=" + format_double(p.residual_V) + ",focal=" + (p.focal ? "true" : "false") + "\n";
    std::vector<std::string> head{"t"};
    for (const auto& s : detail::numbered("E", dimension)) head.push_back(s);
    head.push_back("V");
    out += detail::join(head);
    for (std::size_t k = 0; k < p.t.size(); ++k) {
        std::vector<std::string> row{format_double(p.t[k])};
        for (double x : p.E[k]) row.push_back(format_double(x));
        row.push_back(format_double(p.V[k]));
        out += detail::join(row);
    }
    return out;
}

/// Reads t, E, V and the header metadata; derivative columns are left empty.
inline MomentPath read_moments_csv(const std::string& text) {
    const auto tab = detail::parse_table(text);
    MomentPath p;
    for (const auto& c : tab.comments) {
        const auto kv = detail::key_values(c);
        if (kv.count("K")) p.K = mfgm::detail::parse_double(kv.at("K"));
        if (kv.count("residual_E")) p.residual_E = mfgm::detail::parse_double(kv.at("residual_E"));
        if (kv.count("residual_V")) p.residual_V = mfgm::detail::parse_double(kv.at("residual_V"));
        if (kv.count("focal")) p.focal = kv.at("focal") == "true";
    }
    const std::size_t n = detail::count_prefixed(tab, "E");
    const auto it = tab.column("t"), iV = tab.column("V");
    for (const auto& r : tab.rows) {
        p.t.push_back(r[it]);
        Vec E(n);
        for (std::size_t i = 0; i < n; ++i) E[i] = r[tab.column("E_" + std::to_string(i + 1))];
        p.E.push_back(E);
        p.V.push_back(r[iV]);
    }
    return p;
}

// --- density grid: comment t,mass,mean,variance then x,m

inline std::string write_density_csv(const DensityGrid& g) {
    std::string out = "# t=" + format_double(g.t) + ",mass=" + format_double(g.mass) + ",mean=" +
                      format_double(g.mean) + ",variance=" + format_double(g.variance) + "\n";
    out += "x,m\n";
    for (std::size_t j = 0; j < g.x.size(); ++j) out += format_double(g.x[j]) + "," + format_double(g.m[j]) + "\n";
    return out;
}

inline DensityGrid read_density_csv(const std::string& text) {
    const auto tab = detail::parse_table(text);
    DensityGrid g;
    for (const auto& c : tab.comments) {
        const auto kv = detail::key_values(c);
        if (kv.count("t")) g.t = mfgm::detail::parse_double(kv.at("t"));
        if (kv.count("mass")) g.mass = mfgm::detail::parse_double(kv.at("mass"));
        if (kv.count("mean")) g.mean = mfgm::detail::parse_double(kv.at("mean"));
        if (kv.count("variance")) g.variance = mfgm::detail::parse_double(kv.at("variance"));
    }
    const auto ix = tab.column("x"), im = tab.column("m");
    for (const auto& r : tab.rows) {
        g.x.push_back(r[ix]);
        g.m.push_back(r[im]);
    }
    return g;
}

inline std::string density_filename(double t) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "density_t%.6f.csv", t);
    return buf;
}

// --- characteristic function sweep: omega,re,im (scalar frequencies)

inline std::string write_charfun_csv(const Vec& omegas, const std::vector<cplx>& values) {
    std::string out = "omega,re,im\n";
    for (std::size_t j = 0; j < omegas.size(); ++j)
        out += format_double(omegas[j]) + "," + format_double(values[j].real()) + "," + format_double(values[j].imag()) + "\n";
    return out;
}

inline std::pair<Vec, std::vector<cplx>> read_charfun_csv(const std::string& text) {
    const auto tab = detail::parse_table(text);
    const auto io = tab.column("omega"), ir = tab.column("re"), ii = tab.column("im");
    std::pair<Vec, std::vector<cplx>> out;
    for (const auto& r : tab.rows) {
        out.first.push_back(r[io]);
        out.second.emplace_back(r[ir], r[ii]);
    }
    return out;
}

// --- simulation records: t,E_hat_1..n,se_E_1..n,V_hat,se_V,n_jumps

inline std::string write_sim_csv(const SimResult& sim) {
    const auto n = static_cast<std::size_t>(sim.dimension);
    std::vector<std::string> head{"t"};
    for (const auto& s : detail::numbered("E_hat", n)) head.push_back(s);
    for (const auto& s : detail::numbered("se_E", n)) head.push_back(s);
    for (const char* s : {"V_hat", "se_V", "n_jumps"}) head.emplace_back(s);
    std::string out = detail::join(head);
    for (const auto& r : sim.records) {
        std::vector<std::string> row{format_double(r.t)};
        for (double x : r.E_hat) row.push_back(format_double(x));
        for (double x : r.se_E) row.push_back(format_double(x));
        row.push_back(format_double(r.V_hat));
        row.push_back(format_double(r.se_V));
        row.push_back(std::to_string(r.n_jumps));
        out += detail::join(row);
    }
    return out;
}

inline SimResult read_sim_csv(const std::string& text) {
    const auto tab = detail::parse_table(text);
    SimResult sim;
    const std::size_t n = detail::count_prefixed(tab, "E_hat");
    sim.dimension = static_cast<int>(n);
    const auto it = tab.column("t"), iV = tab.column("V_hat"), isV = tab.column("se_V"), ij = tab.column("n_jumps");
    for (const auto& r : tab.rows) {
        SimRecord rec;
        rec.t = r[it];
        for (std::size_t i = 0; i < n; ++i) {
            rec.E_hat.push_back(r[tab.column("E_hat_" + std::to_string(i + 1))]);
            rec.se_E.push_back(r[tab.column("se_E_" + std::to_string(i + 1))]);
        }
        rec.V_hat = r[iV];
        rec.se_V = r[isV];
        rec.n_jumps = static_cast<std::uint64_t>(r[ij]);
        sim.records.push_back(std::move(rec));
    }
    return sim;
}

// --- comparison report

inline json report_to_json(const CompareReport& rep) {
    json j;
    j["all_pass"] = rep.all_pass;
    j["max_abs_z"] = detail::number(rep.max_abs_z());
    j["z_fail_threshold"] = z_fail_threshold;
    j["entries"] = json::array();
    for (const auto& e : rep.entries) {
        json x;
        x["quantity"] = e.quantity;
        x["t"] = detail::number(e.t);
        x["analytic"] = detail::number(e.analytic);
        x["simulated"] = detail::number(e.simulated);
        x["se"] = detail::number(e.se);
        x["z"] = detail::number(e.z);
        x["pass"] = e.pass;
        j["entries"].push_back(x);
    }
    j["refinement"] = json::array();
    for (const auto& r : rep.refinement) {
        json x;
        x["quantity"] = r.quantity;
        x["t"] = detail::number(r.t);
        x["delta"] = detail::number(r.delta);
        j["refinement"].push_back(x);
    }
    return j;
}

inline CompareReport report_from_json(const json& j) {
    CompareReport rep;
    rep.all_pass = j.at("all_pass").get<bool>();
    for (const auto& x : j.at("entries"))
        rep.entries.push_back({x.at("quantity").get<std::string>(), detail::number(x.at("t")),
                               detail::number(x.at("analytic")), detail::number(x.at("simulated")),
                               detail::number(x.at("se")), detail::number(x.at("z")), x.at("pass").get<bool>()});
    for (const auto& x : j.at("refinement"))
        rep.refinement.push_back({x.at("quantity").get<std::string>(), detail::number(x.at("t")), detail::number(x.at("delta"))});
    return rep;
}

// --- recovered parameters

inline Branch parse_branch(const std::string& s) {
    if (s == "oscillatory" || s == "osc") return Branch::oscillatory;
    if (s == "exponential" || s == "exp") return Branch::exponential;
    if (s == "polynomial" || s == "poly") return Branch::polynomial;
    throw ValidationError("unknown branch '" + s + "'");
}

inline json recovered_to_json(const RecoveredParams& p) {
    json j;
    j["branch"] = branch_name(p.branch);
    j["a"] = detail::number(p.a);
    j["b"] = detail::numbers(p.b);
    j["K"] = detail::number(p.K);
    j["C1"] = detail::numbers(p.C1);
    j["C2"] = detail::numbers(p.C2);
    j["D_V"] = detail::number(p.D_V);
    j["C1_V"] = detail::number(p.C1_V);
    j["C2_V"] = detail::number(p.C2_V);
    j["rms_residual_E"] = detail::number(p.rms_residual_E);
    j["rms_residual_V"] = detail::number(p.rms_residual_V);
    j["covariance"] = json::array();
    for (const auto& row : p.covariance) j["covariance"].push_back(detail::numbers(row));
    j["identifiable"] = p.identifiable;
    j["criterion"] = detail::number(p.criterion);
    return j;
}

inline RecoveredParams recovered_from_json(const json& j) {
    RecoveredParams p;
    p.branch = parse_branch(j.at("branch").get<std::string>());
    p.a = detail::number(j.at("a"));
    p.b = detail::numbers(j.at("b"));
    p.K = detail::number(j.at("K"));
    p.C1 = detail::numbers(j.at("C1"));
    p.C2 = detail::numbers(j.at("C2"));
    p.D_V = detail::number(j.at("D_V"));
    p.C1_V = detail::number(j.at("C1_V"));
    p.C2_V = detail::number(j.at("C2_V"));
    p.rms_residual_E = detail::number(j.at("rms_residual_E"));
    p.rms_residual_V = detail::number(j.at("rms_residual_V"));
    for (const auto& row : j.at("covariance")) p.covariance.push_back(detail::numbers(row));
    p.identifiable = j.at("identifiable").get<bool>();
    p.criterion = detail::number(j.at("criterion"));
    return p;
}

// --- observed series: t, E (or E_1..E_n), V

inline ObservedSeries read_series_csv(const std::string& text) {
    const auto tab = detail::parse_table(text);
    ObservedSeries s;
    std::vector<std::size_t> cols;
    if (tab.has("E")) {
        cols.push_back(tab.column("E"));
    } else {
        const std::size_t n = detail::count_prefixed(tab, "E");
        if (n == 0) throw ValidationError("series needs an E or E_1 column");
        for (std::size_t i = 0; i < n; ++i) cols.push_back(tab.column("E_" + std::to_string(i + 1)));
    }
    const auto it = tab.column("t"), iV = tab.column("V");
    for (const auto& r : tab.rows) {
        s.t.push_back(r[it]);
        Vec e;
        for (auto c : cols) e.push_back(r[c]);
        s.E.push_back(e);
        s.V.push_back(r[iV]);
    }
    return s;
}

inline std::string write_series_csv(const ObservedSeries& s) {
    const std::size_t n = s.dimension();
    std::vector<std::string> head{"t"};
    if (n == 1) head.emplace_back("E");
    else
        for (const auto& c : detail::numbered("E", n)) head.push_back(c);
    head.emplace_back("V");
    std::string out = detail::join(head);
    for (std::size_t k = 0; k < s.size(); ++k) {
        std::vector<std::string> row{format_double(s.t[k])};
        for (double x : s.E[k]) row.push_back(format_double(x));
        row.push_back(format_double(s.V[k]));
        out += detail::join(row);
    }
    return out;
}

} // namespace mfgm::io
