#pragma once

// D(t), condition A, the step plan and N* of condition D. Every supremum is
// taken over a uniform sample grid t_k = T*k/samples.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "volterra/errors.hpp"
#include "volterra/linalg.hpp"
#include "volterra/model.hpp"

namespace volterra {

/// LU of K_n(t,t); throws NumericalError when it is singular.
inline Eigen::FullPivLU<Mat> factor_Kn(const Problem& p, double t)
{
    Eigen::FullPivLU<Mat> lu(p.kernel_piece(p.n(), t, t));
    if (!lu.isInvertible()) throw NumericalError("K_n(t,t) is singular at t=" + std::to_string(t));
    return lu;
}

/// Sum over boundaries of |alpha_i'(t)| * ||K_n^{-1}(t,t) (K_i - K_{i+1})(t, alpha_i(t))||_2.
inline double capD(const Problem& p, double t)
{
    const auto lu = factor_Kn(p, t);
    double sum = 0.0;
    for (int i = 1; i < p.n(); ++i) {
        const double a = p.alpha(i, t);
        const Mat jump = p.kernel_piece(i, t, a) - p.kernel_piece(i + 1, t, a);
        sum += std::abs(p.alpha_prime(i, t)) * spectral_norm(lu.solve(jump));
    }
    return sum;
}

struct ConditionAReport {
    double D0 = 0.0;
    double q = 0.0;
    double c = 0.0;
    double h1 = 0.0;
    bool holds = false;
    int samples = 0;
};

/// Samples of s per piece used for the kernel bound c.
inline constexpr int kKernelSamplesPerPiece = 9;

inline ConditionAReport check_condition_A(const Problem& p, int samples = 512)
{
    ConditionAReport rep;
    rep.samples = samples;
    const double T = p.T();
    bool prefix = true;
    for (int k = 0; k <= samples; ++k) {
        const double t = T * k / samples;
        const double D = capD(p, t);
        if (k == 0) rep.D0 = D;
        if (prefix && D < 1.0) {
            rep.h1 = t;
            rep.q = std::max(rep.q, D);
        } else {
            prefix = false;
        }
        const auto lu = factor_Kn(p, t);
        for (int i = 1; i <= p.n(); ++i) {
            const double lo = p.alpha(i - 1, t);
            const double hi = p.alpha(i, t);
            for (int r = 0; r < kKernelSamplesPerPiece; ++r) {
                const double s = lo + (hi - lo) * r / (kKernelSamplesPerPiece - 1);
                rep.c = std::max(rep.c, spectral_norm(lu.solve(p.kernel_piece(i, t, s))));
            }
        }
    }
    if (rep.D0 >= 1.0) {
        rep.h1 = 0.0;
        rep.q = rep.D0;
    }
    rep.holds = rep.D0 < 1.0 && std::isfinite(rep.c);
    return rep;
}

struct StepPlan {
    double h = 0.0;
    double epsilon = 1.0;
    std::vector<std::pair<double, double>> intervals;
};

inline constexpr int kMaxIntervals = 100000;
inline constexpr int kInclusionSamples = 9;

namespace detail {

inline std::vector<std::pair<double, double>> tile(double T, double h, double eps)
{
    std::vector<std::pair<double, double>> out;
    double a = 0.0;
    double b = std::min(h, T);
    out.emplace_back(a, b);
    for (int k = 1; b < T; ++k) {
        if (static_cast<int>(out.size()) >= kMaxIntervals) return {};
        a = b;
        b = h + k * eps * h;
        // absorb a sliver at the end instead of creating a near-empty interval
        if (b > T || T - b < 1e-9 * T) b = T;
        out.emplace_back(a, b);
    }
    return out;
}

inline bool inclusion_holds(const Problem& p, const std::vector<std::pair<double, double>>& iv)
{
    const double slack = 1e-12 * p.T();
    for (std::size_t k = 1; k < iv.size(); ++k) {
        const auto [a, b] = iv[k];
        for (int r = 0; r < kInclusionSamples; ++r) {
            const double t = a + (b - a) * r / (kInclusionSamples - 1);
            for (int i = 1; i < p.n(); ++i)
                if (p.alpha(i, t) > a + slack) return false;
        }
    }
    return true;
}

} // namespace detail

/// h = 0.9 min(h1, (1-q)/c); epsilon is the largest power of 1/2 (down to 2^-10)
/// for which every alpha_i(t), t in an interval, falls into earlier intervals.
inline StepPlan plan_steps(const Problem& p, const ConditionAReport& rep)
{
    if (!rep.holds) throw ValidationError("plan_steps: condition A does not hold");
    StepPlan plan;
    double bound = rep.h1;
    if (rep.c > 0.0) bound = std::min(bound, (1.0 - rep.q) / rep.c);
    plan.h = 0.9 * bound;
    if (!(plan.h > 0.0)) throw NumericalError("plan_steps: no positive step (h1 = 0)");
    for (int e = 0; e <= 10; ++e) {
        const double eps = std::ldexp(1.0, -e);
        auto iv = detail::tile(p.T(), plan.h, eps);
        if (iv.empty()) break;
        if (detail::inclusion_holds(p, iv)) {
            plan.epsilon = eps;
            plan.intervals = std::move(iv);
            return plan;
        }
    }
    throw NumericalError("plan_steps: no admissible epsilon >= 2^-10");
}

struct NStarReport {
    double epsilon = 0.0;
    double T_prime = 0.0;
    int N_star = 0;
    double q_D = 0.0;   ///< eps^N* * sup of the boundary sum on (0, T']
    double sup_D = 0.0; ///< sup of the boundary sum on (0, T']
    bool ok = false;
    std::string message;
};

inline constexpr double kNStarBound = 0.9;

inline NStarReport compute_Nstar(const Problem& p, double eps, int samples = 512)
{
    if (!(eps > 0.0 && eps < 1.0)) throw ValidationError("compute_Nstar: eps must lie in (0,1)");
    NStarReport rep;
    rep.epsilon = eps;
    const double T = p.T();
    auto admissible = [&](double t) {
        for (int i = 1; i < p.n(); ++i) {
            if (std::abs(p.alpha_prime(i, t)) > eps) return false;
            if (t > 0.0 && p.alpha(i, t) / t > eps) return false;
        }
        return true;
    };
    if (!admissible(0.0)) {
        rep.message = "no prefix of [0,T] satisfies the epsilon bounds";
        return rep;
    }
    for (int k = 1; k <= samples; ++k) {
        const double t = T * k / samples;
        if (!admissible(t)) break;
        rep.T_prime = t;
    }
    if (rep.T_prime <= 0.0) {
        rep.message = "no sampled prefix of [0,T] satisfies the epsilon bounds";
        return rep;
    }
    for (int k = 0; k <= samples; ++k) rep.sup_D = std::max(rep.sup_D, capD(p, rep.T_prime * k / samples));
    int N = 0;
    while (std::pow(eps, N) * rep.sup_D > kNStarBound) {
        if (++N > 10000) {
            rep.message = "N* search did not terminate";
            return rep;
        }
    }
    rep.N_star = N;
    rep.q_D = std::pow(eps, N) * rep.sup_D;
    rep.ok = true;
    return rep;
}

/// Default epsilon for compute_Nstar: the sampled sup of max(alpha_i', alpha_i/t)
/// when it is below 1, otherwise the midpoint between the largest alpha_i'(0) and 1.
inline double auto_epsilon(const Problem& p, int samples = 512)
{
    if (p.n() == 1) return 0.5;
    double sup = 0.0;
    for (int k = 0; k <= samples; ++k) {
        const double t = p.T() * k / samples;
        for (int i = 1; i < p.n(); ++i) {
            sup = std::max(sup, std::abs(p.alpha_prime(i, t)));
            if (t > 0.0) sup = std::max(sup, p.alpha(i, t) / t);
        }
    }
    if (sup > 0.0 && sup < 1.0) return sup;
    double beta = 0.0;
    for (int i = 1; i < p.n(); ++i) beta = std::max(beta, p.alpha_prime(i, 0.0));
    return 0.5 * (1.0 + beta);
}

} // namespace volterra
