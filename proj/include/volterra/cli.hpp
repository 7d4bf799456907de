#pragma once

// Batch front end: volterra <mode> <problem.json> [csv] [flags].

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "volterra/asympt.hpp"
#include "volterra/charop.hpp"
#include "volterra/conditions.hpp"
#include "volterra/errors.hpp"
#include "volterra/model.hpp"
#include "volterra/refine.hpp"
#include "volterra/report.hpp"
#include "volterra/stepper.hpp"

namespace volterra::cli {

enum class Mode { Validate, Solve, Analyze, Asympt, Refine, Verify };

inline const std::map<std::string, Mode>& mode_names()
{
    static const std::map<std::string, Mode> names{{"validate", Mode::Validate}, {"solve", Mode::Solve},
                                                   {"analyze", Mode::Analyze},   {"asympt", Mode::Asympt},
                                                   {"refine", Mode::Refine},     {"verify", Mode::Verify}};
    return names;
}

struct RunConfig {
    Mode mode = Mode::Validate;
    std::string problem_path;
    std::string csv_path; ///< verify only
    std::string out_dir = ".";
    int grid = 2048;
    std::optional<double> tol;
    int N = 3;
    std::optional<int> N_star; ///< empty: auto
    std::vector<std::string> sets; ///< one assignment per entry, "c1=0.5" or "c1=0,c2=1"
    int samples = 512;
};

/// Bad command line (exit code 1).
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline double parse_real(const std::string& text, const std::string& what)
{
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size() || !std::isfinite(v)) throw UsageError(what + ": '" + text + "' is not a number");
    return v;
}

} // namespace detail

/// "c1=0,c2=1.5" -> {c1: 0, c2: 1.5}.
inline std::map<std::string, double> parse_assignment(const std::string& text)
{
    std::map<std::string, double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError("--set expects name=value, got '" + item + "'");
        const std::string name = item.substr(0, eq);
        if (out.count(name)) throw UsageError("--set assigns '" + name + "' twice");
        out[name] = detail::parse_real(item.substr(eq + 1), "--set " + name);
    }
    if (out.empty()) throw UsageError("--set expects name=value");
    return out;
}

/// 'd' names the only parameter of a one-parameter family.
inline std::map<std::string, double> resolve_aliases(const std::map<std::string, double>& named, const ParamRegistry& reg)
{
    if (reg.size() != 1 || !named.count("d")) return named;
    std::map<std::string, double> out = named;
    const double v = out["d"];
    out.erase("d");
    if (out.count(reg.params[0].name)) throw ValidationError("'d' and '" + reg.params[0].name + "' both assigned");
    out[reg.params[0].name] = v;
    return out;
}

/// Builds the run configuration; --help is reported through CLI::CallForHelp.
inline RunConfig parse_args(int argc, const char* const* argv)
{
    CLI::App app{"Volterra equations of the first kind with piecewise kernels"};
    app.name("volterra");
    std::string mode, nstar = "auto";
    RunConfig cfg;
    std::vector<std::string> positional;
    double tol = 0.0;
    app.add_option("mode", mode, "validate | solve | analyze | asympt | refine | verify")->required();
    app.add_option("files", positional, "problem.json, then the solution CSV for verify")->required();
    app.add_option("--grid", cfg.grid, "grid density: spacing T/(grid-1)")->check(CLI::Range(2, 1 << 24));
    auto* tol_opt = app.add_option("--tol", tol, "iteration tolerance")->check(CLI::PositiveNumber);
    app.add_option("--N", cfg.N, "expansion order")->check(CLI::Range(0, 40));
    app.add_option("--nstar", nstar, "N* override or 'auto'");
    app.add_option("--set", cfg.sets, "parameter assignment name=value[,name=value]; repeat for several solutions");
    app.add_option("--out", cfg.out_dir, "output directory");
    app.add_option("--samples", cfg.samples, "sample count for sup estimates")->check(CLI::Range(8, 1 << 20));
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        throw;
    } catch (const CLI::ParseError& e) {
        throw UsageError(e.what());
    }

    const auto it = mode_names().find(mode);
    if (it == mode_names().end()) throw UsageError("unknown mode '" + mode + "'");
    cfg.mode = it->second;
    const std::size_t want = cfg.mode == Mode::Verify ? 2 : 1;
    if (positional.size() != want)
        throw UsageError(mode + " expects " + (want == 2 ? std::string("a problem file and a CSV file") : "one problem file"));
    cfg.problem_path = positional[0];
    if (want == 2) cfg.csv_path = positional[1];
    if (*tol_opt) cfg.tol = tol;
    if (nstar != "auto") {
        const double v = detail::parse_real(nstar, "--nstar");
        if (v < 0 || v != std::floor(v) || v > 64) throw UsageError("--nstar expects a non-negative integer or 'auto'");
        cfg.N_star = static_cast<int>(v);
    }
    if (!cfg.sets.empty() && cfg.mode != Mode::Refine) throw UsageError("--set applies to refine only");
    for (const auto& s : cfg.sets) parse_assignment(s);
    return cfg;
}

namespace detail {

inline std::string problem_name(const Problem& p, const std::string& path)
{
    if (!p.name().empty()) return p.name();
    return std::filesystem::path(path).stem().string();
}

inline std::filesystem::path out_file(const RunConfig& cfg, const std::string& file)
{
    std::filesystem::create_directories(cfg.out_dir);
    return std::filesystem::path(cfg.out_dir) / file;
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

inline void write_solution(const std::filesystem::path& path, const GridSolution& sol, const std::vector<std::string>& comments)
{
    std::ostringstream ss;
    write_csv(ss, sol, comments);
    write_text(path, ss.str());
}

/// Gnuplot script drawing every component of every CSV.
inline std::string plot_script(const std::string& name, const std::vector<std::string>& csvs, int m, bool log_t)
{
    std::ostringstream s;
    s << "set datafile separator ','\n"
      << "set datafile commentschars '#'\n"
      << "set key autotitle columnhead\n"
      << "set xlabel 't'\n"
      << "set ylabel 'x'\n";
    if (log_t) s << "set logscale x\n";
    s << "set terminal pngcairo size 900,600\n"
      << "set output '" << name << ".png'\n"
      << "plot ";
    bool first = true;
    for (const auto& csv : csvs) {
        if (!first) s << ", \\\n     ";
        first = false;
        s << "for [k=2:" << (m + 1) << "] '" << csv << "' using 1:k with lines";
    }
    s << '\n';
    return s.str();
}

inline std::string dump(const report::json& j) { return j.dump(2) + "\n"; }

inline report::json validation_json(const ValidationReport& rep)
{
    report::json checks = report::json::array();
    for (const auto& c : rep.checks) {
        report::json o{{"name", c.name}, {"pass", c.pass}, {"worst_t", c.worst_t}, {"value", c.value}};
        if (!c.message.empty()) o["message"] = c.message;
        checks.push_back(std::move(o));
    }
    return checks;
}

/// Failed structural checks as one message, empty when all pass.
inline std::string validation_failures(const ValidationReport& rep)
{
    std::string msg;
    for (const auto& c : rep.checks)
        if (!c.pass) msg += (msg.empty() ? "" : "; ") + c.name + (c.message.empty() ? "" : ": " + c.message);
    return msg;
}

inline int run_validate(const Problem& p, const ValidationReport& vr, const std::string& name, std::ostream& out)
{
    out << report::json{{"mode", "validate"}, {"problem", name}, {"valid", vr.ok()}, {"m", p.m()},
                        {"n", p.n()},         {"T", p.T()},      {"checks", validation_json(vr)}}
               .dump()
        << '\n';
    if (!vr.ok()) throw ValidationError("problem fails structural checks: " + validation_failures(vr));
    return 0;
}

inline int run_solve(const RunConfig& cfg, const Problem& p, const std::string& name, std::ostream& out)
{
    SolveOptions opt;
    opt.grid = cfg.grid;
    opt.samples = cfg.samples;
    if (cfg.tol) opt.tol = *cfg.tol;
    const auto condA = check_condition_A(p, opt.samples);
    const auto sol = solve(p, opt);
    const auto res = residual_first_kind(p, sol, 0.0, p.T());

    const std::string csv = name + ".csv";
    write_solution(out_file(cfg, csv), sol,
                   {"problem=" + name, "mode=solve grid=" + std::to_string(cfg.grid) + " tol=" + format_real(opt.tol)});
    int iterations = 0;
    for (const auto& s : sol.stats) iterations = std::max(iterations, s.iterations);
    report::json rep{{"mode", "solve"},
                     {"problem", name},
                     {"condition_A", report::to_json(condA)},
                     {"plan", {{"h", sol.h}, {"epsilon", sol.epsilon}, {"intervals", sol.intervals.size()}}},
                     {"nodes", sol.size()},
                     {"max_iterations", iterations},
                     {"residual", report::to_json(res)},
                     {"csv", csv}};
    write_text(out_file(cfg, name + ".report.json"), dump(rep));
    write_text(out_file(cfg, name + ".plt"), plot_script(name, {csv}, p.m(), false));
    out << rep.dump() << '\n';
    return 0;
}

inline report::json analysis(const RunConfig& cfg, const Problem& p, const std::string& name)
{
    const auto op = build_charop(p);
    const auto condA = check_condition_A(p, cfg.samples);
    const double eps = auto_epsilon(p, cfg.samples);
    const auto ns = compute_Nstar(p, eps, cfg.samples);
    const auto sc = scan(op, cfg.N);
    bool f0 = true;
    for (int r = 0; r < p.m(); ++r) f0 = f0 && std::abs(p.f(0.0)(r)) <= 1e-12;
    report::json betas = report::json::array();
    for (double b : op.betas) betas.push_back(b);
    return {{"mode", "analyze"},
            {"problem", name},
            {"m", p.m()},
            {"n", p.n()},
            {"T", p.T()},
            {"f0_zero", f0},
            {"condition_A", report::to_json(condA)},
            {"condition_D", report::to_json(ns)},
            {"characteristic_operator", {{"K_n00", report::columns(op.K_n00.transpose())}, {"betas", std::move(betas)}}},
            {"scan", report::to_json(sc)}};
}

inline int run_analyze(const RunConfig& cfg, const Problem& p, const std::string& name, std::ostream& out)
{
    const auto rep = analysis(cfg, p, name);
    write_text(out_file(cfg, name + ".report.json"), dump(rep));
    out << dump(rep);
    return 0;
}

inline int run_asympt(const RunConfig& cfg, const Problem& p, const std::string& name, std::ostream& out)
{
    const auto res = build_expansion(p, cfg.N);
    report::json decay = report::json::array();
    for (const auto& d : res.decay) decay.push_back(report::to_json(d));
    report::json rep{{"mode", "asympt"},
                     {"problem", name},
                     {"expansion", report::to_json(res.expansion)},
                     {"scan", report::to_json(res.scan)},
                     {"residual_decay", std::move(decay)}};
    write_text(out_file(cfg, name + ".report.json"), dump(rep));
    for (const auto& line : pretty(res.expansion)) out << line << '\n';
    return 0;
}

inline int run_refine(const RunConfig& cfg, const Problem& p, const std::string& name, std::ostream& out)
{
    const auto xh = build_expansion(p, cfg.N).expansion;
    std::vector<std::vector<double>> assignments;
    if (cfg.sets.empty()) {
        if (xh.registry.size() != 0) {
            std::string names;
            for (const auto& q : xh.registry.params) names += (names.empty() ? "" : ", ") + q.name;
            throw ValidationError("the family has free parameters (" + names + "); assign them with --set");
        }
        assignments.emplace_back();
    }
    for (const auto& s : cfg.sets) assignments.push_back(xh.assignment(resolve_aliases(parse_assignment(s), xh.registry)));

    RefineOptions opt;
    opt.grid = cfg.grid;
    opt.samples = cfg.samples;
    if (cfg.tol) opt.tol = *cfg.tol;
    if (cfg.N_star) opt.N_star = *cfg.N_star;

    report::json sols = report::json::array();
    std::vector<std::string> csvs;
    for (std::size_t k = 0; k < assignments.size(); ++k) {
        const auto ps = full_solution(p, xh, assignments[k], opt);
        const std::string csv = assignments.size() == 1 ? name + ".csv" : name + "_" + std::to_string(k + 1) + ".csv";
        auto comments = ps.header();
        comments.insert(comments.begin(), "problem=" + name);
        write_solution(out_file(cfg, csv), ps.x, comments);
        auto j = report::to_json(ps);
        j["residual"] = report::to_json(residual_first_kind(p, ps.x, ps.t_min, p.T()));
        j["correction"] = report::to_json(correction_slope(p, ps, ps.t_min, std::min(1e-2, ps.T_prime)));
        j["csv"] = csv;
        sols.push_back(std::move(j));
        csvs.push_back(csv);
    }
    report::json rep{{"mode", "refine"}, {"problem", name}, {"expansion", report::to_json(xh)}, {"solutions", std::move(sols)}};
    write_text(out_file(cfg, name + ".report.json"), dump(rep));
    write_text(out_file(cfg, name + ".plt"), plot_script(name, csvs, p.m(), true));
    report::json summary = report::json::array();
    for (const auto& s : rep["solutions"])
        summary.push_back({{"csv", s["csv"]}, {"assignment", s["assignment"]}, {"residual", s["residual"]["max"]}});
    out << report::json{{"mode", "refine"}, {"problem", name}, {"solutions", std::move(summary)}}.dump() << '\n';
    return 0;
}

inline int run_verify(const RunConfig& cfg, const Problem& p, const std::string& name, std::ostream& out)
{
    std::ifstream in(cfg.csv_path);
    if (!in) throw ValidationError("cannot open solution file '" + cfg.csv_path + "'");
    const auto sol = read_csv(in);
    if (sol.size() < 2) throw ValidationError("solution file has fewer than two rows");
    if (sol.m() != p.m()) throw ValidationError("solution has " + std::to_string(sol.m()) + " components, problem has " + std::to_string(p.m()));
    const auto res = residual_first_kind(p, sol, sol.nodes.front(), sol.nodes.back());
    report::json rep{{"mode", "verify"}, {"problem", name}, {"csv", cfg.csv_path}, {"residual", report::to_json(res)}};
    if (cfg.tol) {
        rep["tol"] = *cfg.tol;
        rep["pass"] = res.max <= *cfg.tol;
    }
    out << rep.dump() << '\n';
    return 0;
}

} // namespace detail

/// Exit codes: 0 success, 2 validation failure, 3 numerical failure; errors go to `err` as JSON.
inline int run(const RunConfig& cfg, std::ostream& out, std::ostream& err)
{
    auto fail = [&](const std::string& kind, int code, const std::string& msg) {
        err << report::error(kind, code, msg).dump() << '\n';
        return code;
    };
    try {
        const auto p = Problem::load(cfg.problem_path);
        const auto name = detail::problem_name(p, cfg.problem_path);
        const auto vr = p.validate(cfg.samples);
        if (cfg.mode == Mode::Validate) return detail::run_validate(p, vr, name, out);
        if (!vr.ok()) throw ValidationError("problem fails structural checks: " + detail::validation_failures(vr));
        switch (cfg.mode) {
        case Mode::Validate: break;
        case Mode::Solve: return detail::run_solve(cfg, p, name, out);
        case Mode::Analyze: return detail::run_analyze(cfg, p, name, out);
        case Mode::Asympt: return detail::run_asympt(cfg, p, name, out);
        case Mode::Refine: return detail::run_refine(cfg, p, name, out);
        case Mode::Verify: return detail::run_verify(cfg, p, name, out);
        }
        return 0;
    } catch (const UsageError& e) {
        return fail("usage", 1, e.what());
    } catch (const ParseError& e) {
        return fail("validation", 2, e.what());
    } catch (const EvalError& e) {
        return fail("validation", 2, e.what());
    } catch (const ValidationError& e) {
        return fail("validation", 2, e.what());
    } catch (const NumericalError& e) {
        return fail("numerical", 3, e.what());
    } catch (const std::exception& e) {
        return fail("io", 2, e.what());
    }
}

inline int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    RunConfig cfg;
    try {
        cfg = parse_args(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << "usage: volterra <validate|solve|analyze|asympt|refine|verify> problem.json [solution.csv]\n"
               "  --grid <int> --tol <real> --N <int> --nstar <int|auto> --set name=value[,...] (repeatable)\n"
               "  --out <dir> --samples <int>\n";
        return 0;
    } catch (const UsageError& e) {
        err << report::error("usage", 1, e.what()).dump() << '\n';
        return 1;
    }
    return run(cfg, out, err);
}

} // namespace volterra::cli
