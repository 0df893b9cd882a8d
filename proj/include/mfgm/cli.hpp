#pragma once

// Command-line driver. Requires OpenSSL's libcrypto for output digests.

#include "mfgm/charfun.hpp"
#include "mfgm/errors.hpp"
#include "mfgm/hjb.hpp"
#include "mfgm/io.hpp"
#include "mfgm/mc.hpp"
#include "mfgm/moments.hpp"
#include "mfgm/recover.hpp"
#include "mfgm/scenario_io.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mfgm::cli {

inline constexpr const char* tool_version = "0.1.0";

enum ExitCode : int { ok = 0, validation_failed = 1, numerical_failed = 2, comparison_failed = 3, usage = 64 };

inline std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xf];
    }
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Collects output files and writes them with a manifest listing their digests.
class OutputSet {
public:
    explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec) throw std::runtime_error(dir_.string() + ": " + ec.message());
    }

    void add(const std::string& name, const std::string& content) {
        const auto path = dir_ / name;
        std::ofstream f(path, std::ios::binary);
        f << content;
        f.close();
        if (!f) throw std::runtime_error(path.string() + ": write failed");
        files_.push_back({{"file", name}, {"sha256", sha256_hex(content)}});
    }

    void finish(nlohmann::json manifest) {
        manifest["version"] = tool_version;
        manifest["outputs"] = files_;
        const auto path = dir_ / "manifest.json";
        std::ofstream f(path, std::ios::binary);
        f << manifest.dump(2) << "\n";
        if (!f) throw std::runtime_error(path.string() + ": write failed");
    }

private:
    std::filesystem::path dir_;
    nlohmann::json files_ = nlohmann::json::array();
};

struct Solved {
    HjbSolution sol;
    MomentPath path;
    std::optional<std::size_t> iterations;
};

inline Solved solve_scenario(const ScenarioSpec& spec, std::size_t N) {
    if (spec.cost.meanfield) {
        auto r = solve_meanfield_fixedpoint(spec, N);
        return {std::move(r.sol), std::move(r.path), r.iterations};
    }
    auto sol = solve_backward(spec, N);
    auto path = propagate_moments(sol, spec);
    return {std::move(sol), std::move(path), std::nullopt};
}

inline nlohmann::json base_manifest(const std::string& command, const ScenarioSpec& spec) {
    nlohmann::json m;
    m["command"] = command;
    m["scenario"] = scenario_to_json(spec);
    m["params"] = nlohmann::json::object();
    return m;
}

inline ScenarioSpec checked_scenario(const std::string& path) {
    auto spec = load_scenario(path);
    spec.validate();
    return spec;
}

inline int execute(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Moments, characteristic functions and densities for linear-quadratic mean field games with jumps",
                 "mfg_moments"};
    app.require_subcommand(1);
    app.set_version_flag("--version", tool_version);

    std::string scenario, outdir, input, branch = "auto", times_arg, omegas_arg;
    std::size_t grid = default_grid, xgrid = 4096, eta = default_eta_nodes, paths = 100000;
    double dt = 1e-3;
    std::uint64_t seed = 0;
    bool refine = false, literal = false;

    auto* validate = app.add_subcommand("validate", "check a scenario file");
    validate->add_option("--scenario", scenario, "scenario JSON")->required();

    auto* solve = app.add_subcommand("solve", "backward coefficients and forward moments");
    solve->add_option("--scenario", scenario)->required();
    solve->add_option("--out", outdir)->required();
    solve->add_option("--grid", grid, "time intervals")->check(CLI::Range(std::size_t{100}, std::size_t{1} << 24));
    solve->add_flag("--literal", literal, "add initial moments without propagation (diagnostic)");

    auto* density = app.add_subcommand("density", "density on a uniform grid (n=1)");
    density->add_option("--scenario", scenario)->required();
    density->add_option("--times", times_arg, "comma-separated times")->required();
    density->add_option("--out", outdir)->required();
    density->add_option("--xgrid", xgrid)->check(CLI::Range(std::size_t{64}, std::size_t{1} << 22));
    density->add_option("--grid", grid)->check(CLI::Range(std::size_t{100}, std::size_t{1} << 24));
    density->add_option("--eta", eta, "eta quadrature nodes")->check(CLI::Range(std::size_t{8}, std::size_t{1} << 20));

    auto* simulate = app.add_subcommand("simulate", "Monte Carlo moments");
    auto* compare = app.add_subcommand("compare", "solve, simulate and report z-scores");
    for (auto* sc : {simulate, compare}) {
        sc->add_option("--scenario", scenario)->required();
        sc->add_option("--out", outdir)->required();
        sc->add_option("--paths", paths);
        sc->add_option("--dt", dt);
        sc->add_option("--seed", seed);
        sc->add_option("--times", times_arg, "comma-separated record times");
        sc->add_option("--grid", grid)->check(CLI::Range(std::size_t{100}, std::size_t{1} << 24));
    }
    compare->add_option("--omegas", omegas_arg, "comma-separated frequencies for the characteristic function");
    compare->add_option("--eta", eta)->check(CLI::Range(std::size_t{8}, std::size_t{1} << 20));
    compare->add_flag("--refine", refine, "also simulate with dt/2 and report deltas");
    compare->add_flag("--literal", literal, "analytic moments without initial propagation (diagnostic)");

    auto* recover = app.add_subcommand("recover", "fit a, b, K to an observed series");
    recover->add_option("--input", input, "CSV with t, E (or E_1..E_n), V")->required();
    recover->add_option("--out", outdir)->required();
    recover->add_option("--branch", branch)->check(CLI::IsMember({"auto", "osc", "exp", "poly"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        err << app.help();
        return usage;
    }

    auto parse_list = [](const std::string& s, const char* what) {
        Vec v;
        if (s.empty()) return v;
        for (const auto& cell : io::detail::split(s)) {
            try {
                v.push_back(detail::parse_double(cell));
            } catch (const std::exception&) {
                throw ValidationError(std::string(what) + ": not a number '" + cell + "'");
            }
        }
        return v;
    };

    try {
        if (validate->parsed()) {
            const auto spec = checked_scenario(scenario);
            const auto sol = solve_scenario(spec, default_grid).sol;
            out << "valid: dimension " << spec.dimension << ", T " << detail::format_double(spec.T);
            if (sol.singularities.empty()) out << ", no singular times\n";
            else {
                out << ", singular times";
                for (double s : sol.singularities) out << " " << detail::format_double(s);
                out << "\n";
            }
            return ok;
        }

        if (solve->parsed()) {
            const auto spec = checked_scenario(scenario);
            Solved s = solve_scenario(spec, grid);
            if (literal) s.path = propagate_moments(s.sol, spec, InitialPropagation::literal);
            OutputSet files(outdir);
            files.add("hjb.csv", io::write_hjb_csv(s.sol));
            files.add("moments.csv", io::write_moments_csv(s.path, static_cast<std::size_t>(spec.dimension)));
            auto m = base_manifest("solve", spec);
            m["params"]["N"] = grid;
            m["params"]["initial_propagation"] = literal ? "literal" : "propagated";
            if (s.iterations) m["params"]["fixed_point_iterations"] = *s.iterations;
            files.finish(m);
            return ok;
        }

        if (density->parsed()) {
            const auto spec = checked_scenario(scenario);
            if (spec.dimension != 1) throw ValidationError("density export supports dimension 1 only");
            const Vec times = parse_list(times_arg, "--times");
            if (times.empty()) throw ValidationError("--times needs at least one value");
            Solved s = solve_scenario(spec, grid);
            const CharFunEvaluator ev(spec, s.sol, eta);
            OutputSet files(outdir);
            for (double t : times) {
                DensityParams dp;
                dp.n_x = xgrid;
                files.add(io::density_filename(t), io::write_density_csv(ev.density(t, dp)));
            }
            auto m = base_manifest("density", spec);
            m["params"]["N"] = grid;
            m["params"]["M"] = eta;
            m["params"]["N_x"] = xgrid;
            m["params"]["times"] = times;
            files.finish(m);
            return ok;
        }

        if (simulate->parsed() || compare->parsed()) {
            const bool is_compare = compare->parsed();
            const auto spec = checked_scenario(scenario);
            Vec times = parse_list(times_arg, "--times");
            if (is_compare && times.empty()) times = {0.5 * spec.T, spec.T};
            Solved s = solve_scenario(spec, grid);
            SimConfig cfg;
            cfg.n_paths = paths;
            cfg.dt = dt;
            cfg.seed = seed;
            cfg.record_times = times;
            cfg.retain_endpoints = is_compare && spec.dimension == 1;
            const SimResult sim = simulate_paths(spec, s.sol, cfg);

            OutputSet files(outdir);
            files.add("sim.csv", io::write_sim_csv(sim));
            auto m = base_manifest(is_compare ? "compare" : "simulate", spec);
            m["params"]["N"] = grid;
            m["params"]["n_paths"] = paths;
            m["params"]["dt"] = dt;
            m["params"]["seed"] = seed;
            m["params"]["times"] = times;
            if (!is_compare) {
                files.finish(m);
                return ok;
            }

            Vec omegas = parse_list(omegas_arg, "--omegas");
            if (omegas_arg.empty()) omegas = {0.5, 1.0, std::numbers::pi};
            std::vector<Vec> om;
            for (double w : omegas) om.push_back(Vec{w});
            const MomentPath analytic = literal ? propagate_moments(s.sol, spec, InitialPropagation::literal) : s.path;
            std::optional<CharFunEvaluator> ev;
            if (spec.dimension == 1 && !om.empty()) ev.emplace(spec, s.sol, eta);
            std::optional<SimResult> fine;
            if (refine) {
                SimConfig cfg2 = cfg;
                cfg2.dt = 0.5 * dt;
                cfg2.retain_endpoints = false;
                fine = simulate_paths(spec, s.sol, cfg2);
            }
            const CompareReport rep = compare_report(analytic, sim, ev ? &*ev : nullptr, om, fine ? &*fine : nullptr);
            files.add("report.json", io::report_to_json(rep).dump(2) + "\n");
            m["params"]["M"] = eta;
            m["params"]["omegas"] = omegas;
            m["params"]["refine"] = refine;
            m["params"]["initial_propagation"] = literal ? "literal" : "propagated";
            files.finish(m);
            out << (rep.all_pass ? "PASS" : "FAIL") << " max |z| = " << detail::format_double(rep.max_abs_z()) << "\n";
            return rep.all_pass ? ok : comparison_failed;
        }

        if (recover->parsed()) {
            const std::string text = read_file(input);
            const ObservedSeries series = io::read_series_csv(text);
            std::optional<Branch> br;
            if (branch != "auto") br = io::parse_branch(branch);
            const RecoveredParams p = fit_parameters(series, br);
            OutputSet files(outdir);
            files.add("recovered.json", io::recovered_to_json(p).dump(2) + "\n");
            nlohmann::json m;
            m["command"] = "recover";
            m["input"] = {{"file", std::filesystem::path(input).filename().string()}, {"sha256", sha256_hex(text)}};
            m["params"] = {{"branch", branch}, {"starts", recover_starts}};
            files.finish(m);
            return ok;
        }
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return validation_failed;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return numerical_failed;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return numerical_failed;
    }
    err << app.help();
    return usage;
}

} // namespace mfgm::cli
