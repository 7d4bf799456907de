#pragma once

// JSON views of the analysis structures, used by the CLI reports.

#include <json.hpp>

#include <string>
#include <vector>

#include "volterra/asympt.hpp"
#include "volterra/charop.hpp"
#include "volterra/conditions.hpp"
#include "volterra/refine.hpp"
#include "volterra/stepper.hpp"

namespace volterra::report {

using json = nlohmann::ordered_json;

inline json vec(const Vec& v)
{
    json a = json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v(k));
    return a;
}

/// Columns as arrays: a basis m x r becomes r vectors of length m.
inline json columns(const Mat& M)
{
    json a = json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) a.push_back(vec(M.col(c)));
    return a;
}

inline json to_json(const IterationStats& s)
{
    return {{"iterations", s.iterations}, {"last_diff", s.last_diff}, {"converged", s.converged}, {"contractive", s.contractive}};
}

inline json to_json(const ConditionAReport& r)
{
    return {{"D0", r.D0}, {"q", r.q}, {"c", r.c}, {"h1", r.h1}, {"holds", r.holds}, {"samples", r.samples}};
}

inline json to_json(const StepPlan& plan)
{
    return {{"h", plan.h}, {"epsilon", plan.epsilon}, {"intervals", plan.intervals.size()}};
}

inline json to_json(const NStarReport& r)
{
    return {{"epsilon", r.epsilon}, {"T_prime", r.T_prime}, {"N_star", r.N_star}, {"q_D", r.q_D},
            {"sup_D", r.sup_D},     {"ok", r.ok},           {"message", r.message}};
}

inline json to_json(const SingularPointInfo& s)
{
    json o = {{"j", s.j}, {"kind", s.kind == PointKind::Regular ? "regular" : "singular"}, {"r", s.r}};
    o["singular_values"] = vec(s.singular_values);
    o["threshold"] = s.threshold;
    if (s.kind == PointKind::Singular) {
        o["index"] = s.index;
        o["resolved"] = s.resolved;
        o["det_test"] = s.det_test;
        o["phi"] = columns(s.phi);
        o["psi"] = columns(s.psi);
    }
    if (!s.message.empty()) o["message"] = s.message;
    return o;
}

inline json to_json(const JordanData& jd)
{
    json chains = json::array();
    for (const auto& chain : jd.chains) {
        json c = json::array();
        for (const auto& v : chain) c.push_back(vec(v));
        chains.push_back(std::move(c));
    }
    json o = {{"j", jd.j},
              {"lengths", jd.lengths},
              {"chains", std::move(chains)},
              {"solvability_det", jd.solvability_det},
              {"residual", jd.residual},
              {"complete", jd.complete}};
    if (!jd.message.empty()) o["message"] = jd.message;
    return o;
}

inline json to_json(const ScanReport& s)
{
    json pts = json::array();
    for (const auto& p : s.points) pts.push_back(to_json(p));
    json jd = json::array();
    for (const auto& j : s.jordan) jd.push_back(to_json(j));
    return {{"points", std::move(pts)},
            {"jordan", std::move(jd)},
            {"singular_count", s.singular_count},
            {"condition_C", s.cond_C},
            {"condition_C1", s.cond_C1},
            {"parameter_count", expected_parameter_count(s)}};
}

inline json to_json(const AffineVec& a, const ParamRegistry& reg)
{
    json params = json::object();
    for (const auto& [id, v] : a.terms) params[reg.params[static_cast<std::size_t>(id)].name] = vec(v);
    return {{"base", vec(a.base)}, {"params", std::move(params)}};
}

/// Per j, per power of z = ln t: base vector and parameter term vectors.
inline json to_json(const LogPowerExpansion& x)
{
    json params = json::array();
    for (const auto& p : x.registry.params)
        params.push_back({{"name", p.name}, {"j", p.j}, {"chain", p.chain}, {"position", p.position}});
    json coeffs = json::array();
    for (std::size_t j = 0; j < x.coeffs.size(); ++j) {
        json zp = json::array();
        const auto& q = x.coeffs[j];
        for (int e = 0; e <= q.degree(); ++e) zp.push_back(to_json(q.c[static_cast<std::size_t>(e)], x.registry));
        coeffs.push_back({{"j", j}, {"z_powers", std::move(zp)}});
    }
    return {{"N", x.N}, {"m", x.m}, {"parameters", std::move(params)}, {"coefficients", std::move(coeffs)}, {"pretty", pretty(x)}};
}

inline json to_json(const DecayReport& d)
{
    return {{"order", d.order}, {"slope", d.slope}, {"points_used", d.points_used}, {"exact", d.exact}, {"ok", d.ok}};
}

inline json to_json(const ResidualReport& r)
{
    return {{"max", r.max}, {"worst_t", r.worst_t}, {"checks", r.checks}};
}

inline json to_json(const GammaReport& g)
{
    return {{"slope", g.slope}, {"points_used", g.points_used}, {"blowup", g.blowup}};
}

inline json to_json(const CorrectionFit& f)
{
    return {{"slope", f.slope}, {"points_used", f.points_used}, {"exact", f.exact}};
}

inline json to_json(const ParametricSolution& ps)
{
    json assignment = json::object();
    for (std::size_t k = 0; k < ps.params.size(); ++k) assignment[ps.expansion.registry.params[k].name] = ps.params[k];
    json cont = json::array();
    for (const auto& [a, b] : ps.continuation) cont.push_back({a, b});
    return {{"assignment", std::move(assignment)},
            {"N", ps.N},
            {"N_star", ps.N_star},
            {"T_prime", ps.T_prime},
            {"epsilon", ps.epsilon},
            {"t_min", ps.t_min},
            {"nodes", ps.x.size()},
            {"u_iteration",
             {{"l", ps.u_report.l}, {"q_L", ps.u_report.qL}, {"q_K", ps.u_report.qK}, {"stats", to_json(ps.u_report.stats)}}},
            {"gamma", to_json(ps.gamma)},
            {"continuation", std::move(cont)}};
}

inline json error(const std::string& kind, int exit_code, const std::string& message)
{
    return {{"error", {{"kind", kind}, {"exit_code", exit_code}, {"message", message}}}};
}

} // namespace volterra::report
