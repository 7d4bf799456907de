#pragma once

// Parametric solutions x(t) = x^(t) + t^N* u(t) near 0. Substituting into the
// differentiated equation gives
//   u + (L + K) u = -gamma,  gamma = K_n^{-1}(t,t) F(x^)(t) / t^N*,
//   (L u)(t) = K_n^{-1} sum_i alpha_i' (alpha_i/t)^N* (K_i - K_{i+1})(t, alpha_i) u(alpha_i),
//   (K u)(t) = K_n^{-1} sum_i int_{alpha_{i-1}}^{alpha_i} dK_i/dt(t,s) (s/t)^N* u(s) ds,
// solved by successive approximations on a grid in [t_min, T'] and continued to T by
// the step method.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "volterra/asympt.hpp"
#include "volterra/conditions.hpp"
#include "volterra/grid.hpp"
#include "volterra/stepper.hpp"

namespace volterra {

struct RefineOptions {
    double t_min = 1e-8;
    int grid = 2048;      ///< spacing cap T/(grid-1)
    double ratio = 0.004; ///< relative spacing of the geometric part
    double tol = 1e-12;
    int max_iter = 500;
    int samples = 512;
    double epsilon = 0.0; ///< 0: auto_epsilon
    int N_star = -1;      ///< -1: from compute_Nstar
};

/// Nodes t_min = t_0 < ... < t_K = T' with t_{k+1} - t_k = min(ratio t_k, h_max).
inline std::vector<double> refine_grid(double t_min, double T_prime, double ratio, double h_max)
{
    if (!(t_min > 0.0) || !(T_prime > t_min)) throw ValidationError("refine_grid: need 0 < t_min < T'");
    if (!(ratio > 0.0) || !(h_max > 0.0)) throw ValidationError("refine_grid: spacing must be positive");
    std::vector<double> g;
    double t = t_min;
    while (t < T_prime) {
        g.push_back(t);
        t += std::min(ratio * t, h_max);
    }
    const double last_gap = T_prime - g.back();
    if (g.size() > 1 && last_gap < 0.5 * std::min(ratio * g.back(), h_max)) g.pop_back();
    g.push_back(T_prime);
    return g;
}

/// gamma(t) = K_n^{-1}(t,t) F(x^)(t) / t^N*, with the roundoff floor of F
/// carried through the same scaling.
struct GammaValue {
    Vec gamma;
    double floor = 0.0;
};

inline GammaValue residual_gamma_with_floor(const Problem& p, const LogPowerExpansion& xh, const std::vector<double>& params,
                                            int N_star, double t)
{
    if (!(t > 0.0)) throw ValidationError("residual_gamma: t must be positive");
    const auto ex = exact_F(p, [&](long double s) { return eval_expansion<long double>(xh, s, params); },
                            static_cast<long double>(t));
    const Mat Kinv = factor_Kn(p, t).inverse();
    const double tn = std::pow(t, N_star);
    GammaValue g;
    g.gamma = Kinv * ex.F.cast<double>() / tn;
    g.floor = kFloorEps * static_cast<double>(ex.scale) * spectral_norm(Kinv) / tn;
    return g;
}

inline Vec residual_gamma(const Problem& p, const LogPowerExpansion& xh, const std::vector<double>& params, int N_star,
                          double t)
{
    return residual_gamma_with_floor(p, xh, params, N_star, t).gamma;
}

struct GammaReport {
    std::vector<double> t;
    std::vector<double> norm;
    double slope = 0.0; ///< of log ||gamma|| against log t near t_min (points above the floor)
    int points_used = 0;
    bool blowup = false;
};

/// Growth check of gamma on a log grid in [t_min, t_hi]: slope < -0.5 over at least two
/// points above roundoff means gamma is unbounded as t -> 0.
inline GammaReport gamma_growth(const Problem& p, const LogPowerExpansion& xh, const std::vector<double>& params, int N_star,
                                double t_min, double t_hi, int points = 13)
{
    GammaReport rep;
    std::vector<double> lx, ly;
    for (int k = 0; k < points; ++k) {
        const double t = t_min * std::pow(t_hi / t_min, static_cast<double>(k) / (points - 1));
        const auto g = residual_gamma_with_floor(p, xh, params, N_star, t);
        const double nrm = g.gamma.cwiseAbs().maxCoeff();
        rep.t.push_back(t);
        rep.norm.push_back(nrm);
        if (nrm > g.floor) {
            lx.push_back(std::log(t));
            ly.push_back(std::log(nrm));
        }
    }
    rep.points_used = static_cast<int>(lx.size());
    if (lx.size() >= 2) {
        rep.slope = detail::fit_slope(lx, ly);
        rep.blowup = rep.slope < -0.5;
    }
    return rep;
}

struct UIterationReport {
    IterationStats stats;
    double l = 0.0;  ///< weight exponent of ||u||_l = max e^{-l t} ||u(t)||
    double qL = 0.0; ///< bound of ||L||_l for the discrete operator
    double qK = 0.0; ///< bound of ||K||_l
};

namespace detail {

inline double inf_norm(const Mat& a) { return a.cwiseAbs().rowwise().sum().maxCoeff(); }

struct URows {
    std::vector<std::size_t> off{0};
    std::vector<std::size_t> idx;
    std::vector<double> wts;
    std::vector<char> is_L;
};

/// Weights of (L + K) u at every node; u is the piecewise-linear interpolant, constant below t_min.
inline URows assemble_u_rows(const Problem& p, const std::vector<double>& g, int N_star)
{
    const int m = p.m();
    const int n = p.n();
    const std::size_t mm = static_cast<std::size_t>(m) * static_cast<std::size_t>(m);
    URows rows;
    Mat K, K2, W;
    std::vector<double> pts;
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double t = g[k];
        const Mat Kinv = factor_Kn(p, t).inverse();
        auto spread = [&](double s, const Mat& w, bool L) {
            const auto [j, theta] = bracket(g, k + 1, s);
            if (k == 0) {
                rows.idx.push_back(0);
                rows.wts.insert(rows.wts.end(), w.data(), w.data() + mm);
                rows.is_L.push_back(L);
                return;
            }
            for (int side = 0; side < 2; ++side) {
                const double f = side == 0 ? 1.0 - theta : theta;
                if (f == 0.0) continue;
                const Mat wf = f * w;
                rows.idx.push_back(j + static_cast<std::size_t>(side));
                rows.wts.insert(rows.wts.end(), wf.data(), wf.data() + mm);
                rows.is_L.push_back(L);
            }
        };
        for (int i = 1; i < n; ++i) {
            const double a = p.alpha(i, t);
            p.kernel_piece<double>(i, t, a, K);
            p.kernel_piece<double>(i + 1, t, a, K2);
            W = p.alpha_prime(i, t) * std::pow(a / t, N_star) * (Kinv * (K - K2));
            spread(a, W, true);
        }
        for (int i = 1; i <= n; ++i) {
            if (p.piece_dt_zero(i)) continue;
            const double lo = p.alpha(i - 1, t);
            const double hi = p.alpha(i, t);
            if (!(hi > lo)) continue;
            pts.clear();
            pts.push_back(lo);
            for (auto it = std::upper_bound(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(k + 1), lo);
                 it != g.begin() + static_cast<std::ptrdiff_t>(k + 1) && *it < hi; ++it)
                pts.push_back(*it);
            pts.push_back(hi);
            for (std::size_t q = 0; q < pts.size(); ++q) {
                const double left = q > 0 ? pts[q] - pts[q - 1] : 0.0;
                const double right = q + 1 < pts.size() ? pts[q + 1] - pts[q] : 0.0;
                const double w = 0.5 * (left + right);
                if (w == 0.0) continue;
                p.kernel_piece_dt<double>(i, t, pts[q], K);
                W = w * std::pow(pts[q] / t, N_star) * (Kinv * K);
                spread(pts[q], W, false);
            }
        }
        rows.off.push_back(rows.idx.size());
    }
    return rows;
}

/// Bounds of ||L||_l and ||K||_l: max_k sum_j ||W_kj||_inf e^{-l (t_k - t_j)}.
inline std::pair<double, double> weighted_bounds(const URows& rows, const std::vector<double>& g, int m, double l)
{
    const std::size_t mm = static_cast<std::size_t>(m) * static_cast<std::size_t>(m);
    double qL = 0.0, qK = 0.0;
    for (std::size_t k = 0; k + 1 < rows.off.size(); ++k) {
        double sL = 0.0, sK = 0.0;
        for (std::size_t e = rows.off[k]; e < rows.off[k + 1]; ++e) {
            const double w = inf_norm(Eigen::Map<const Mat>(rows.wts.data() + e * mm, m, m)) *
                             std::exp(-l * (g[k] - g[rows.idx[e]]));
            (rows.is_L[e] ? sL : sK) += w;
        }
        qL = std::max(qL, sL);
        qK = std::max(qK, sK);
    }
    return {qL, qK};
}

} // namespace detail

/// Successive approximations u_{k+1} = -gamma - (L + K) u_k from u_0 = -gamma on the nodes g.
/// l is doubled from 1/T' until the K bound drops below 1 - q_L (cap 2^16 / T').
inline GridSolution iterate_u(const Problem& p, const LogPowerExpansion& xh, const std::vector<double>& params, int N_star,
                              const std::vector<double>& g, double tol, int max_iter, UIterationReport* report = nullptr)
{
    if (g.size() < 2) throw ValidationError("iterate_u: grid needs at least two nodes");
    const int m = p.m();
    const std::size_t mm = static_cast<std::size_t>(m) * static_cast<std::size_t>(m);
    const double T_prime = g.back();
    const auto rows = detail::assemble_u_rows(p, g, N_star);

    UIterationReport rep;
    auto [qL, qK] = detail::weighted_bounds(rows, g, m, 0.0);
    if (qL >= 1.0) throw NumericalError("functional part is not contractive: q_L = " + format_real(qL) + " >= 1");
    double l = 0.0;
    while (qK >= 1.0 - qL) {
        l = l == 0.0 ? 1.0 / T_prime : 2.0 * l;
        if (l > 65536.0 / T_prime)
            throw NumericalError("integral part is not contractive in any weighted norm up to l = 2^16/T'");
        std::tie(qL, qK) = detail::weighted_bounds(rows, g, m, l);
    }
    rep.l = l;
    rep.qL = qL;
    rep.qK = qK;

    std::vector<Vec> rhs(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) rhs[k] = -residual_gamma(p, xh, params, N_star, g[k]);

    std::vector<Vec> u = rhs, next(g.size());
    double prev = 0.0;
    for (int it = 1; it <= max_iter; ++it) {
        double diff = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) {
            Vec v = rhs[k];
            for (std::size_t e = rows.off[k]; e < rows.off[k + 1]; ++e)
                v.noalias() -= Eigen::Map<const Mat>(rows.wts.data() + e * mm, m, m) * u[rows.idx[e]];
            diff = std::max(diff, std::exp(-l * g[k]) * (v - u[k]).cwiseAbs().maxCoeff());
            next[k] = std::move(v);
        }
        std::swap(u, next);
        rep.stats.iterations = it;
        rep.stats.last_diff = diff;
        if (it > 1) rep.stats.ratios.push_back(prev > 0.0 ? diff / prev : 0.0);
        prev = diff;
        if (!std::isfinite(diff)) break;
        if (diff <= tol) {
            rep.stats.converged = true;
            break;
        }
    }
    if (!rep.stats.converged && !rep.stats.ratios.empty()) rep.stats.contractive = rep.stats.ratios.back() < 0.999;
    if (report) *report = rep;
    if (!rep.stats.converged)
        throw NumericalError("u iteration did not converge after " + std::to_string(rep.stats.iterations) +
                             " iterations (last weighted difference " + format_real(rep.stats.last_diff) + ")");

    GridSolution sol;
    sol.nodes = g;
    sol.values = std::move(u);
    sol.tol = tol;
    sol.intervals = {{g.front(), g.back()}};
    sol.stats.push_back(rep.stats);
    return sol;
}

struct ParametricSolution {
    LogPowerExpansion expansion;
    std::vector<double> params;
    int N = 0;
    int N_star = 0;
    double T_prime = 0.0;
    double epsilon = 0.0;
    double t_min = 0.0;
    UIterationReport u_report;
    GammaReport gamma;
    GridSolution u; ///< on [t_min, T']
    GridSolution x; ///< x^ + t^N* u on [t_min, T'], then the step method up to T
    std::vector<std::pair<double, double>> continuation; ///< step intervals past T'

    /// `c1=...` lines for CSV headers.
    std::vector<std::string> header() const
    {
        std::vector<std::string> out;
        for (std::size_t k = 0; k < params.size(); ++k)
            out.push_back(expansion.registry.params[k].name + "=" + format_real(params[k]));
        out.push_back("N=" + std::to_string(N) + " N*=" + std::to_string(N_star) + " T'=" + format_real(T_prime) +
                      " t_min=" + format_real(t_min));
        return out;
    }

    /// x(t) - x^(t) = t^N* u(t) on the refinement grid.
    std::vector<double> correction_norms() const
    {
        std::vector<double> out;
        for (std::size_t k = 0; k < u.size(); ++k)
            out.push_back(std::pow(u.nodes[k], N_star) * u.values[k].cwiseAbs().maxCoeff());
        return out;
    }
};

namespace detail {

/// Largest t in [a, T] with alpha_i(t) <= a for all i (bisection; alpha_i increasing).
inline double reach(const Problem& p, double a, double T)
{
    auto ok = [&](double t) {
        for (int i = 1; i < p.n(); ++i)
            if (p.alpha(i, t) > a) return false;
        return true;
    };
    if (ok(T)) return T;
    double lo = a, hi = T;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * T; ++it) {
        const double mid = 0.5 * (lo + hi);
        (ok(mid) ? lo : hi) = mid;
    }
    return lo;
}

/// Sampled sup over t in [a, T], s in [0, t] of sum_i ||K_n^{-1} dK_i/dt(t,s)||.
inline double integral_scale(const Problem& p, double a, double T, int samples)
{
    if (p.all_dt_zero()) return 0.0;
    double c = 0.0;
    for (int k = 0; k <= samples; ++k) {
        const double t = a + (T - a) * k / samples;
        const Mat Kinv = factor_Kn(p, t).inverse();
        double sum = 0.0;
        for (int i = 1; i <= p.n(); ++i) {
            double best = 0.0;
            for (int q = 0; q < kKernelSamplesPerPiece; ++q) {
                const double s = t * q / (kKernelSamplesPerPiece - 1);
                best = std::max(best, spectral_norm(Kinv * p.kernel_piece_dt(i, t, s)));
            }
            sum += best;
        }
        c = std::max(c, sum);
    }
    return c;
}

} // namespace detail

/// Correction u on (0, T'] for a given expansion and parameter vector, step-method continuation to T.
inline ParametricSolution full_solution(const Problem& p, const LogPowerExpansion& xh, const std::vector<double>& params,
                                        const RefineOptions& opt = {})
{
    if (params.size() != xh.registry.size())
        throw ValidationError("full_solution: expected " + std::to_string(xh.registry.size()) + " parameters, got " +
                              std::to_string(params.size()));
    const int N = xh.N;
    ParametricSolution ps;
    ps.N = N;
    ps.t_min = opt.t_min;
    ps.expansion = xh;
    ps.params = params;

    ps.epsilon = opt.epsilon > 0.0 ? opt.epsilon : auto_epsilon(p, opt.samples);
    const auto ns = compute_Nstar(p, ps.epsilon, opt.samples);
    if (!ns.ok) throw NumericalError("condition D: " + ns.message);
    ps.T_prime = ns.T_prime;
    ps.N_star = opt.N_star >= 0 ? opt.N_star : ns.N_star;
    if (N < ps.N_star)
        throw ValidationError("expansion order N = " + std::to_string(N) + " is below N* = " + std::to_string(ps.N_star));
    if (!(ps.T_prime > opt.t_min)) throw ValidationError("T' = " + format_real(ps.T_prime) + " is not above t_min");

    ps.gamma = gamma_growth(p, ps.expansion, ps.params, ps.N_star, opt.t_min, std::min(1e-2, ps.T_prime));
    if (ps.gamma.blowup)
        throw NumericalError("gamma grows like t^" + format_real(ps.gamma.slope) +
                             " as t -> 0; the expansion order is insufficient");

    const double h_max = p.T() / (opt.grid - 1);
    const auto g = refine_grid(opt.t_min, ps.T_prime, opt.ratio, h_max);
    ps.u = iterate_u(p, ps.expansion, ps.params, ps.N_star, g, opt.tol, opt.max_iter, &ps.u_report);

    ps.x.tol = opt.tol;
    for (std::size_t k = 0; k < g.size(); ++k) {
        const Vec xh = eval_expansion<double>(ps.expansion, g[k], ps.params);
        ps.x.append(g[k], xh + std::pow(g[k], ps.N_star) * ps.u.values[k]);
    }
    ps.x.intervals.push_back({g.front(), g.back()});
    ps.x.stats.push_back(ps.u_report.stats);

    if (ps.T_prime < p.T()) {
        const SecondKindForm form(p);
        const double c = detail::integral_scale(p, ps.T_prime, p.T(), opt.samples);
        const double h_int = c > 0.0 ? 0.5 / c : p.T();
        double a = ps.T_prime;
        while (a < p.T()) {
            const double r = detail::reach(p, a, p.T());
            double b = std::min(r, a + h_int);
            if (!(b > a + 1e-9 * p.T()))
                throw NumericalError("continuation past T' stalls at t = " + format_real(a) +
                                     ": the boundary curves do not lag behind t");
            if (r == p.T() && p.T() - b < 1e-9 * p.T()) b = p.T();
            const auto nodes = interval_nodes({{a, b}}, p.T(), opt.grid)[0];
            auto step = advance(form, ps.x, nodes, opt.tol, 200);
            require_converged(step.stats, a, b);
            for (std::size_t r = 1; r < nodes.size(); ++r) ps.x.append(nodes[r], step.values[r]);
            ps.x.intervals.push_back({a, b});
            ps.x.stats.push_back(step.stats);
            ps.continuation.push_back({a, b});
            a = b;
        }
    }
    return ps;
}

/// Expansion of order N, correction u on (0, T'], step-method continuation to T.
inline ParametricSolution full_solution(const Problem& p, const std::map<std::string, double>& assignment, int N,
                                        const RefineOptions& opt = {}, const ExpansionOptions& eopt = {})
{
    const auto xh = build_expansion(p, N, eopt).expansion;
    return full_solution(p, xh, xh.assignment(assignment), opt);
}

/// Fitted slope of log ||x - x^|| against log t on [t_lo, t_hi] over refinement nodes whose
/// correction exceeds the gamma roundoff floor scaled back by t^N*. exact: fewer than two such nodes.
struct CorrectionFit {
    double slope = std::numeric_limits<double>::infinity();
    int points_used = 0;
    bool exact = false;
};

inline CorrectionFit correction_slope(const Problem& p, const ParametricSolution& ps, double t_lo, double t_hi)
{
    CorrectionFit fit;
    std::vector<double> lx, ly;
    const auto norms = ps.correction_norms();
    for (std::size_t k = 0; k < ps.u.size(); ++k) {
        const double t = ps.u.nodes[k];
        if (t < t_lo || t > t_hi) continue;
        const double fl = residual_gamma_with_floor(p, ps.expansion, ps.params, ps.N_star, t).floor * std::pow(t, ps.N_star);
        // the iteration amplifies the gamma floor by at most 1/(1 - q_L - q_K)
        const double q = ps.u_report.qL + ps.u_report.qK;
        if (norms[k] > fl / std::max(1e-3, 1.0 - q)) {
            lx.push_back(std::log(t));
            ly.push_back(std::log(norms[k]));
        }
    }
    fit.points_used = static_cast<int>(lx.size());
    if (lx.size() < 2) {
        fit.exact = true;
        return fit;
    }
    fit.slope = detail::fit_slope(lx, ly);
    return fit;
}

} // namespace volterra
