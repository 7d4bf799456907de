#pragma once

// Regression problems shared by the test binaries.

#include <string>
#include <vector>

#include "volterra/model.hpp"

namespace testdata {

using volterra::Problem;

// m=1, n=2, alpha_1 = t/2, K_1 = 2, K_2 = 1, f = 3t/2. Exact solution x = 1.
inline Problem p1(const std::string& f = "3*t/2", double T = 1.0)
{
    return Problem(1, T, {"t/2"}, {{{"2"}}, {{"1"}}}, {f});
}

// m=1, n=2, alpha_1 = t/2, K_1 = 1, K_2 = -1, f = t. Family x = -ln(t)/ln(2) + d.
inline Problem p2(const std::string& f = "t", double T = 1.0)
{
    return Problem(1, T, {"t/2"}, {{{"1"}}, {{"-1"}}}, {f});
}

// m=1, n=3, alpha = (t/4, t/2), K = (1, -3, 1). B(j) = (1 - 2^-j)^2, double root at j = 0.
inline Problem p3(const std::string& f = "t", double T = 1.0)
{
    return Problem(1, T, {"t/4", "t/2"}, {{{"1"}}, {{"-3"}}, {{"1"}}}, {f});
}

// Two decoupled copies of a scalar problem with the same curves.
inline Problem diag2(const std::vector<std::string>& k_a, const std::vector<std::string>& k_b,
                     const std::vector<std::string>& alphas, const std::string& f_a, const std::string& f_b,
                     double T = 1.0)
{
    std::vector<std::vector<std::vector<std::string>>> kernels;
    for (std::size_t i = 0; i < k_a.size(); ++i) kernels.push_back({{k_a[i], "0"}, {"0", k_b[i]}});
    return Problem(2, T, alphas, kernels, {f_a, f_b});
}

// Manufactured first-kind problems with exact solution x(s) = cos(s).
// P1 kernels: f = int_0^{t/2} 2 cos + int_{t/2}^t cos.
inline Problem p1_cos(double T = 1.0) { return p1("sin(t/2) + sin(t)", T); }

// Non-constant kernels K_1 = 2 + t s, K_2 = 1 + t - s; f integrated in closed form
// (f(0.7) = 1.0832026494663756356).
inline Problem varkernel_cos(double T = 1.0)
{
    return Problem(1, T, {"t/2"}, {{{"2 + t*s"}}, {{"1 + t - s"}}},
                   {"t^2*sin(t/2)/2 - t*sin(t/2)/2 + t*cos(t/2) - t + sin(t/2) + cos(t/2) - cos(t) + sin(t)"});
}

} // namespace testdata

#include <cmath>
#include <cstdio>
#include <random>

namespace testdata {

// Scalar problem whose characteristic function is B(j) = P(2^{-(1+j)}) for a chosen
// polynomial P. Curves alpha_i = 2^{-(n-i)} t make beta_i^{1+j} = y^{n-i} with
// y = 2^{-(1+j)}, so P's coefficients are K_n(0,0) = p_0 and Delta_i = p_{n-i}.
struct EngineeredScalar {
    std::vector<double> poly;            ///< p_0..p_{n-1}
    std::vector<std::pair<int, int>> roots; ///< (j*, multiplicity) placed at y = 2^{-(1+j*)}
    std::string f;
    Problem problem() const
    {
        const int n = static_cast<int>(poly.size());
        std::vector<std::string> alphas;
        for (int i = 1; i < n; ++i) alphas.push_back(num(std::ldexp(1.0, -(n - i))) + "*t");
        std::vector<double> K(static_cast<std::size_t>(n));
        K[static_cast<std::size_t>(n - 1)] = poly[0];
        for (int i = n - 1; i >= 1; --i) K[static_cast<std::size_t>(i - 1)] = K[static_cast<std::size_t>(i)] + poly[static_cast<std::size_t>(n - i)];
        std::vector<std::vector<std::vector<std::string>>> kernels;
        for (double k : K) kernels.push_back({{num(k)}});
        return Problem(1, 1.0, alphas, kernels, {f});
    }
    long double B(long double j) const
    {
        const long double y = std::pow(2.0L, -(1.0L + j));
        long double acc = 0.0L, pw = 1.0L;
        for (double c : poly) {
            acc += c * pw;
            pw *= y;
        }
        return acc;
    }
    static std::string num(double v)
    {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return buf;
    }
};

/// Random engineered problem: roots at y = 2^{-(1+j*)} with the given multiplicities plus
/// `extra` roots away from every 2^{-(1+j)}, scaled by a random nonzero factor.
inline EngineeredScalar engineered(std::mt19937_64& rng, const std::vector<std::pair<int, int>>& roots, int extra)
{
    std::vector<double> p{1.0};
    auto mul = [&](double root) {
        std::vector<double> q(p.size() + 1, 0.0);
        for (std::size_t k = 0; k < p.size(); ++k) {
            q[k] -= root * p[k];
            q[k + 1] += p[k];
        }
        p = q;
    };
    for (auto [j, mult] : roots)
        for (int k = 0; k < mult; ++k) mul(std::ldexp(1.0, -(1 + j)));
    const double spurious[] = {0.3, 0.7, -0.4, 1.5, 0.9, -1.2};
    std::uniform_int_distribution<int> pick(0, 5);
    for (int k = 0; k < extra; ++k) mul(spurious[pick(rng)]);
    std::uniform_real_distribution<double> scale(0.5, 2.0);
    std::bernoulli_distribution sign(0.5);
    const double c = (sign(rng) ? 1.0 : -1.0) * scale(rng);
    for (double& v : p) v *= c;
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    const std::string f = EngineeredScalar::num(1.0 + coef(rng)) + "*t + " + EngineeredScalar::num(coef(rng)) + "*t^2";
    return {p, roots, f};
}

/// Root multiplicity of the scalar function g at x0 from Richardson-extrapolated central
/// differences: the first derivative order whose magnitude exceeds rel * scale.
template <class G>
int fd_multiplicity(G g, double x0, double scale, double rel = 1e-4, int kmax = 6)
{
    auto diff = [&](int k, long double h) {
        // k-th central difference: sum_i (-1)^i C(k,i) g(x0 + (k/2 - i) h)
        long double acc = 0.0L, binom = 1.0L;
        for (int i = 0; i <= k; ++i) {
            acc += ((i % 2) ? -1.0L : 1.0L) * binom * static_cast<long double>(g(x0 + (0.5L * k - i) * h));
            binom = binom * (k - i) / (i + 1);
        }
        return acc / std::pow(h, static_cast<long double>(k));
    };
    if (std::abs(static_cast<double>(g(x0))) > 1e-9 * scale) return 0;
    for (int k = 1; k <= kmax; ++k) {
        const long double h = 0.01L;
        const long double d = (4.0L * diff(k, h / 2) - diff(k, h)) / 3.0L;
        if (std::abs(static_cast<double>(d)) > rel * scale) return k;
    }
    return kmax + 1;
}

} // namespace testdata
