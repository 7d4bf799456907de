#pragma once

// Step method for the differentiated equation
//   x(t) + sum_i C_i(t) x(alpha_i(t)) + sum_i int_{alpha_{i-1}}^{alpha_i} G_i(t,s) x(s) ds = fbar(t)
// with C_i = alpha_i' K_n^{-1}(t,t) (K_i - K_{i+1})(t, alpha_i(t)), G_i = K_n^{-1}(t,t) dK_i/dt,
// fbar = K_n^{-1}(t,t) f'(t). Integrals use the composite trapezoid rule with
// breakpoints at every alpha_i(t); off-node values are linear interpolants.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "volterra/conditions.hpp"
#include "volterra/errors.hpp"
#include "volterra/grid.hpp"
#include "volterra/linalg.hpp"
#include "volterra/model.hpp"

namespace volterra {

class SecondKindForm {
public:
    struct NodeTerms {
        double t = 0.0;
        Mat Kinv;
        std::vector<Mat> C;         ///< C_1..C_{n-1}
        std::vector<double> alpha;  ///< alpha_0..alpha_n at t
        Vec fbar;
    };

    explicit SecondKindForm(const Problem& p) : p_(&p), G_zero_(p.all_dt_zero()) {}

    const Problem& problem() const noexcept { return *p_; }
    bool G_zero() const noexcept { return G_zero_; }

    Mat Kn_inv(double t) const { return factor_Kn(*p_, t).inverse(); }

    Mat C(int i, double t) const { return C_with(Kn_inv(t), i, t); }

    Mat G(int i, double t, double s) const
    {
        if (p_->piece_dt_zero(i)) return Mat::Zero(p_->m(), p_->m());
        return Kn_inv(t) * p_->kernel_piece_dt(i, t, s);
    }

    Vec fbar(double t) const { return Kn_inv(t) * p_->f_prime(t); }

    NodeTerms terms(double t) const
    {
        NodeTerms nt;
        nt.t = t;
        nt.Kinv = Kn_inv(t);
        const int n = p_->n();
        nt.alpha.resize(static_cast<std::size_t>(n + 1));
        for (int i = 0; i <= n; ++i) nt.alpha[static_cast<std::size_t>(i)] = p_->alpha(i, t);
        for (int i = 1; i < n; ++i) nt.C.push_back(C_with(nt.Kinv, i, t));
        nt.fbar = nt.Kinv * p_->f_prime(t);
        return nt;
    }

private:
    Mat C_with(const Mat& Kinv, int i, double t) const
    {
        const double a = p_->alpha(i, t);
        return p_->alpha_prime(i, t) * (Kinv * (p_->kernel_piece(i, t, a) - p_->kernel_piece(i + 1, t, a)));
    }

    const Problem* p_;
    bool G_zero_;
};

namespace detail {

/// Emits (node index, m*m weight) pairs whose sum over nodes approximates
/// sum_i C_i x(alpha_i(t)) + sum_i int G_i(t,s) x(s) ds, using nodes[0..count).
template <class Emit>
void operator_row(const SecondKindForm& form, const SecondKindForm::NodeTerms& nt, const std::vector<double>& nodes,
                  std::size_t count, Emit&& emit)
{
    const Problem& p = form.problem();
    const int n = p.n();
    Mat scratch;
    auto spread = [&](double s, const Mat& w) {
        if (count == 1) {
            emit(std::size_t{0}, w);
            return;
        }
        const auto [j, theta] = bracket(nodes, count, s);
        if (theta != 1.0) {
            scratch = (1.0 - theta) * w;
            emit(j, scratch);
        }
        if (theta != 0.0) {
            scratch = theta * w;
            emit(j + 1, scratch);
        }
    };
    for (int i = 1; i < n; ++i) spread(nt.alpha[static_cast<std::size_t>(i)], nt.C[static_cast<std::size_t>(i - 1)]);
    if (form.G_zero()) return;

    std::vector<double> pts;
    Mat K, G;
    const auto first = nodes.begin();
    const auto last = nodes.begin() + static_cast<std::ptrdiff_t>(count);
    for (int i = 1; i <= n; ++i) {
        if (p.piece_dt_zero(i)) continue;
        const double lo = nt.alpha[static_cast<std::size_t>(i - 1)];
        const double hi = nt.alpha[static_cast<std::size_t>(i)];
        if (!(hi > lo)) continue;
        pts.clear();
        pts.push_back(lo);
        for (auto it = std::upper_bound(first, last, lo); it != last && *it < hi; ++it) pts.push_back(*it);
        pts.push_back(hi);
        for (std::size_t k = 0; k < pts.size(); ++k) {
            const double left = k > 0 ? pts[k] - pts[k - 1] : 0.0;
            const double right = k + 1 < pts.size() ? pts[k + 1] - pts[k] : 0.0;
            const double w = 0.5 * (left + right);
            if (w == 0.0) continue;
            p.kernel_piece_dt(i, nt.t, pts[k], K);
            G.noalias() = w * (nt.Kinv * K);
            spread(pts[k], G);
        }
    }
}

struct IterationResult {
    std::vector<Vec> values;
    IterationStats stats;
};

/// Plain Picard iteration on nodes[nk..) with values on nodes[0..nk) known.
inline IterationResult picard(const SecondKindForm& form, const std::vector<double>& nodes, const std::vector<Vec>& known,
                              std::size_t nk, double tol, int max_iter)
{
    const int m = form.problem().m();
    const std::size_t U = nodes.size() - nk;
    const std::size_t mm = static_cast<std::size_t>(m) * static_cast<std::size_t>(m);

    std::vector<Vec> rhs(U), start(U);
    std::vector<std::size_t> off(U + 1, 0);
    std::vector<std::size_t> idx;
    std::vector<double> wts;
    for (std::size_t r = 0; r < U; ++r) {
        const std::size_t k = nk + r;
        const auto nt = form.terms(nodes[k]);
        Vec hist = Vec::Zero(m);
        operator_row(form, nt, nodes, k + 1, [&](std::size_t j, const Mat& W) {
            if (j < nk) {
                hist.noalias() += W * known[j];
            } else {
                idx.push_back(j - nk);
                wts.insert(wts.end(), W.data(), W.data() + mm);
            }
        });
        off[r + 1] = idx.size();
        rhs[r] = nt.fbar - hist;
        start[r] = nt.fbar;
    }

    IterationResult res;
    std::vector<Vec> x = std::move(start), next(U, Vec::Zero(m));
    double prev_diff = 0.0;
    for (int it = 1; it <= max_iter; ++it) {
        double diff = 0.0;
        for (std::size_t r = 0; r < U; ++r) {
            Vec v = rhs[r];
            for (std::size_t e = off[r]; e < off[r + 1]; ++e)
                v.noalias() -= Eigen::Map<const Mat>(wts.data() + e * mm, m, m) * x[idx[e]];
            diff = std::max(diff, (v - x[r]).cwiseAbs().maxCoeff());
            next[r] = std::move(v);
        }
        std::swap(x, next);
        res.stats.iterations = it;
        res.stats.last_diff = diff;
        if (it > 1) res.stats.ratios.push_back(prev_diff > 0.0 ? diff / prev_diff : 0.0);
        prev_diff = diff;
        if (!std::isfinite(diff)) break;
        if (diff <= tol) {
            res.stats.converged = true;
            break;
        }
    }
    if (!res.stats.converged && !res.stats.ratios.empty()) res.stats.contractive = res.stats.ratios.back() < 0.999;
    res.values = std::move(x);
    return res;
}

} // namespace detail

using detail::IterationResult;

/// Successive approximations on [0,h] from x^0 = fbar. `nodes` must start at 0.
inline IterationResult solve_initial(const SecondKindForm& form, const std::vector<double>& nodes, double tol = 1e-10,
                                     int max_iter = 200)
{
    if (nodes.empty()) throw ValidationError("solve_initial: no nodes");
    return detail::picard(form, nodes, {}, 0, tol, max_iter);
}

/// One step of the step method. `nodes` covers the new interval and starts at
/// history.nodes.back(); the returned values include that shared node unchanged.
inline IterationResult advance(const SecondKindForm& form, const GridSolution& history, const std::vector<double>& nodes,
                               double tol = 1e-10, int max_iter = 200)
{
    if (history.nodes.empty() || nodes.empty()) throw ValidationError("advance: empty history or interval");
    const double start = history.nodes.back();
    const double slack = 1e-12 * std::max(1.0, std::abs(start));
    if (std::abs(nodes.front() - start) > slack) throw ValidationError("advance: interval does not start at the end of history");
    const Problem& p = form.problem();
    for (double t : nodes)
        for (int i = 1; i < p.n(); ++i)
            if (p.alpha(i, t) > start + slack)
                throw NumericalError("advance: alpha_" + std::to_string(i) + "(" + std::to_string(t) +
                                     ") lies beyond the solved history (step plan violated)");
    std::vector<double> all = history.nodes;
    all.insert(all.end(), nodes.begin() + 1, nodes.end());
    auto res = detail::picard(form, all, history.values, history.nodes.size(), tol, max_iter);
    res.values.insert(res.values.begin(), history.values.back());
    return res;
}

/// Nodes of each step interval, uniform inside an interval, with spacing close to T/(grid-1).
inline std::vector<std::vector<double>> interval_nodes(const std::vector<std::pair<double, double>>& intervals, double T,
                                                       int grid)
{
    if (grid < 2) throw ValidationError("grid must be >= 2");
    const double target = T / (grid - 1);
    std::vector<std::vector<double>> out;
    for (const auto& [a, b] : intervals) {
        const int cells = std::max(1, static_cast<int>(std::lround((b - a) / target)));
        std::vector<double> v(static_cast<std::size_t>(cells) + 1);
        for (int k = 0; k <= cells; ++k) v[static_cast<std::size_t>(k)] = a + (b - a) * k / cells;
        v.back() = b;
        out.push_back(std::move(v));
    }
    return out;
}

struct SolveOptions {
    int grid = 2048;
    double tol = 1e-10;
    int max_iter = 200;
    int samples = 512;
};

inline void require_converged(const IterationStats& st, double a, double b)
{
    if (st.converged) return;
    std::string msg = "successive approximations did not converge on [" + std::to_string(a) + ", " + std::to_string(b) +
                      "] after " + std::to_string(st.iterations) + " iterations (last difference " +
                      format_real(st.last_diff) + ")";
    if (!st.contractive) msg += "; iteration is not contractive";
    throw NumericalError(msg);
}

/// Runs the step method over a given plan.
inline GridSolution solve_with_plan(const SecondKindForm& form, const StepPlan& plan, const SolveOptions& opt)
{
    const Problem& p = form.problem();
    const auto per = interval_nodes(plan.intervals, p.T(), opt.grid);
    GridSolution sol;
    sol.intervals = plan.intervals;
    sol.h = plan.h;
    sol.epsilon = plan.epsilon;
    sol.tol = opt.tol;
    auto first = solve_initial(form, per[0], opt.tol, opt.max_iter);
    require_converged(first.stats, plan.intervals[0].first, plan.intervals[0].second);
    sol.nodes = per[0];
    sol.values = std::move(first.values);
    sol.stats.push_back(first.stats);
    for (std::size_t k = 1; k < per.size(); ++k) {
        auto step = advance(form, sol, per[k], opt.tol, opt.max_iter);
        require_converged(step.stats, plan.intervals[k].first, plan.intervals[k].second);
        for (std::size_t r = 1; r < per[k].size(); ++r) sol.append(per[k][r], step.values[r]);
        sol.stats.push_back(step.stats);
    }
    return sol;
}

/// Full pipeline: condition A, step plan, initial interval, step-by-step continuation.
inline GridSolution solve(const Problem& p, const SolveOptions& opt = {})
{
    const auto rep = check_condition_A(p, opt.samples);
    if (!rep.holds)
        throw NumericalError("condition A fails: D(0) = " + format_real(rep.D0) + " >= 1; the step method does not apply");
    const auto plan = plan_steps(p, rep);
    const SecondKindForm form(p);
    return solve_with_plan(form, plan, opt);
}

struct ResidualReport {
    double max = 0.0;
    double worst_t = 0.0;
    std::size_t checks = 0;
};

/// Trapezoid value of sum_i int_{alpha_{i-1}(t)}^{alpha_i(t)} K_i(t,s) x(s) ds for the interpolant of sol.
inline Vec apply_first_kind(const Problem& p, const GridSolution& sol, double t)
{
    const int n = p.n();
    Vec acc = Vec::Zero(p.m());
    Mat K;
    std::vector<double> pts;
    const auto first = sol.nodes.begin();
    const auto last = sol.nodes.end();
    for (int i = 1; i <= n; ++i) {
        const double lo = p.alpha(i - 1, t);
        const double hi = p.alpha(i, t);
        if (!(hi > lo)) continue;
        pts.clear();
        pts.push_back(lo);
        for (auto it = std::upper_bound(first, last, lo); it != last && *it < hi; ++it) pts.push_back(*it);
        pts.push_back(hi);
        for (std::size_t k = 0; k < pts.size(); ++k) {
            const double left = k > 0 ? pts[k] - pts[k - 1] : 0.0;
            const double right = k + 1 < pts.size() ? pts[k + 1] - pts[k] : 0.0;
            const double w = 0.5 * (left + right);
            if (w == 0.0) continue;
            p.kernel_piece(i, t, pts[k], K);
            acc.noalias() += w * (K * sol.at(pts[k]));
        }
    }
    return acc;
}

/// max over check nodes in [t_lo, t_hi] of || int K x ds - f(t) ||_inf; at most max_checks
/// nodes, evenly spread over the eligible ones.
inline ResidualReport residual_first_kind(const Problem& p, const GridSolution& sol, double t_lo, double t_hi,
                                          std::size_t max_checks = 512)
{
    std::vector<double> eligible;
    for (double t : sol.nodes)
        if (t >= t_lo && t <= t_hi) eligible.push_back(t);
    ResidualReport rep;
    if (eligible.empty()) return rep;
    std::vector<double> checks;
    if (eligible.size() <= max_checks) {
        checks = eligible;
    } else {
        for (std::size_t k = 0; k < max_checks; ++k)
            checks.push_back(eligible[k * (eligible.size() - 1) / (max_checks - 1)]);
    }
    for (double t : checks) {
        const double r = (apply_first_kind(p, sol, t) - p.f(t)).cwiseAbs().maxCoeff();
        if (r > rep.max || rep.checks == 0) {
            rep.max = std::max(rep.max, r);
            rep.worst_t = t;
        }
        ++rep.checks;
    }
    return rep;
}

inline ResidualReport residual_first_kind(const Problem& p, const GridSolution& sol)
{
    if (sol.nodes.empty()) return {};
    return residual_first_kind(p, sol, sol.nodes.front(), sol.nodes.back());
}

} // namespace volterra
