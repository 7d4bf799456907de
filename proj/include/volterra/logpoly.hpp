#pragma once

// Algebra of log-power sums sum_j t^j P_j(z), z = ln t, whose z-polynomial
// coefficients are vectors affine in named free parameters.

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include <boost/rational.hpp>

#include "volterra/errors.hpp"
#include "volterra/linalg.hpp"

namespace volterra {

using Rational = boost::rational<long long>;

/// Coefficients c_s, s = 0..k, with  int t^j ln^k t dt = t^{j+1} sum_s c_s ln^{k-s} t,
/// c_s = (-1)^s k!/(k-s)! / (j+1)^{s+1}.
inline std::vector<Rational> integrate_logpoly(int j, int k)
{
    if (j < 0 || k < 0) throw ValidationError("integrate_logpoly: j and k must be >= 0");
    std::vector<Rational> out;
    long long falling = 1;
    long long denom = j + 1;
    for (int s = 0; s <= k; ++s) {
        out.emplace_back((s % 2 ? -falling : falling), denom);
        falling *= (k - s);
        denom *= (j + 1);
    }
    return out;
}

inline double to_double(const Rational& r) { return static_cast<double>(r.numerator()) / static_cast<double>(r.denominator()); }

/// base + sum_id c_id * terms[id]
struct AffineVec {
    Vec base;
    std::map<int, Vec> terms;

    AffineVec() = default;
    explicit AffineVec(int m) : base(Vec::Zero(m)) {}
    explicit AffineVec(Vec v) : base(std::move(v)) {}

    int m() const { return static_cast<int>(base.size()); }

    static AffineVec parameter(int m, int id, const Vec& direction)
    {
        AffineVec a(m);
        a.terms[id] = direction;
        return a;
    }

    AffineVec& axpy(double a, const AffineVec& x)
    {
        if (a == 0.0) return *this;
        base += a * x.base;
        for (const auto& [id, v] : x.terms) {
            auto it = terms.find(id);
            if (it == terms.end())
                terms.emplace(id, a * v);
            else
                it->second += a * v;
        }
        return *this;
    }

    AffineVec& operator+=(const AffineVec& x) { return axpy(1.0, x); }
    AffineVec& operator-=(const AffineVec& x) { return axpy(-1.0, x); }

    AffineVec scaled(double a) const
    {
        AffineVec out(m());
        out.axpy(a, *this);
        return out;
    }

    friend AffineVec operator*(const Mat& M, const AffineVec& x)
    {
        AffineVec out(Vec(M * x.base));
        for (const auto& [id, v] : x.terms) out.terms.emplace(id, M * v);
        return out;
    }

    /// Value at a parameter assignment indexed by parameter id.
    template <class T = double>
    VecT<T> eval(const std::vector<double>& params) const
    {
        VecT<T> v = base.template cast<T>();
        for (const auto& [id, d] : terms) v += T(params.at(static_cast<std::size_t>(id))) * d.template cast<T>();
        return v;
    }

    double norm() const
    {
        double n = base.size() ? base.cwiseAbs().maxCoeff() : 0.0;
        for (const auto& [id, v] : terms) n = std::max(n, v.cwiseAbs().maxCoeff());
        return n;
    }

    /// Parameter terms whose vectors are entirely below tol are dropped.
    void prune(double tol)
    {
        for (auto it = terms.begin(); it != terms.end();) {
            if (it->second.cwiseAbs().maxCoeff() <= tol)
                it = terms.erase(it);
            else
                ++it;
        }
    }
};

/// Polynomial in z with AffineVec coefficients; c[e] multiplies z^e.
struct ZPoly {
    std::vector<AffineVec> c;

    ZPoly() = default;
    explicit ZPoly(int m, int degree = 0) : c(static_cast<std::size_t>(degree + 1), AffineVec(m)) {}

    int degree() const { return static_cast<int>(c.size()) - 1; }
    int m() const { return c.empty() ? 0 : c.front().m(); }

    void ensure_degree(int d)
    {
        const int m0 = m();
        while (degree() < d) c.emplace_back(m0);
    }

    ZPoly& axpy(double a, const ZPoly& q)
    {
        if (a == 0.0) return *this;
        ensure_degree(q.degree());
        for (std::size_t e = 0; e < q.c.size(); ++e) c[e].axpy(a, q.c[e]);
        return *this;
    }

    ZPoly& operator+=(const ZPoly& q) { return axpy(1.0, q); }

    friend ZPoly operator*(const Mat& M, const ZPoly& q)
    {
        ZPoly out;
        for (const auto& a : q.c) out.c.push_back(M * a);
        return out;
    }

    /// d/dz
    ZPoly derivative() const
    {
        ZPoly out(m(), std::max(0, degree() - 1));
        for (int e = 1; e <= degree(); ++e) out.c[static_cast<std::size_t>(e - 1)] = c[static_cast<std::size_t>(e)].scaled(e);
        return out;
    }

    /// q(z + a)
    ZPoly shifted(double a) const
    {
        if (a == 0.0) return *this;
        ZPoly out(m(), degree());
        for (int e = 0; e <= degree(); ++e) {
            // (z+a)^e = sum_q C(e,q) a^{e-q} z^q
            double binom = 1.0;
            for (int q = 0; q <= e; ++q) {
                out.c[static_cast<std::size_t>(q)].axpy(binom * std::pow(a, e - q), c[static_cast<std::size_t>(e)]);
                binom = binom * (e - q) / (q + 1);
            }
        }
        return out;
    }

    /// Drops leading coefficients whose norm is <= tol (keeps at least the constant term).
    void trim(double tol)
    {
        for (auto& a : c) a.prune(tol);
        while (c.size() > 1 && c.back().norm() <= tol) c.pop_back();
    }

    bool is_zero(double tol = 0.0) const
    {
        return std::all_of(c.begin(), c.end(), [&](const AffineVec& a) { return a.norm() <= tol; });
    }

    template <class T = double>
    VecT<T> eval(T z, const std::vector<double>& params) const
    {
        VecT<T> acc = VecT<T>::Zero(m());
        for (int e = degree(); e >= 0; --e) acc = acc * z + c[static_cast<std::size_t>(e)].template eval<T>(params);
        return acc;
    }
};

/// sum_{nu=0}^{N} t^nu P_nu(z), truncated at order N.
struct LogSeries {
    std::vector<ZPoly> terms;

    LogSeries() = default;
    LogSeries(int m, int N) : terms(static_cast<std::size_t>(N + 1), ZPoly(m)) {}

    int order() const { return static_cast<int>(terms.size()) - 1; }

    /// this += factor * t^shift * s(t) * q(z) for a scalar power series s.
    void add_product(int shift, const std::vector<double>& s, const ZPoly& q, double factor = 1.0)
    {
        for (std::size_t nu = 0; nu < s.size(); ++nu) {
            const int at = shift + static_cast<int>(nu);
            if (at > order()) break;
            if (s[nu] != 0.0) terms[static_cast<std::size_t>(at)].axpy(factor * s[nu], q);
        }
    }

    /// this += t^shift * M(t) * S(t) for a matrix power series M.
    void add_matrix_product(int shift, const std::vector<Mat>& M, const LogSeries& S)
    {
        for (std::size_t a = 0; a < M.size(); ++a)
            for (std::size_t b = 0; b < S.terms.size(); ++b) {
                const int at = shift + static_cast<int>(a + b);
                if (at > order()) break;
                if (M[a].isZero(0.0)) continue;
                terms[static_cast<std::size_t>(at)] += M[a] * S.terms[b];
            }
    }

    LogSeries& operator+=(const LogSeries& o)
    {
        for (std::size_t k = 0; k < terms.size() && k < o.terms.size(); ++k) terms[k] += o.terms[k];
        return *this;
    }
};

namespace series {

/// Truncated product of scalar power series (length N+1).
inline std::vector<double> mul(const std::vector<double>& a, const std::vector<double>& b, int N)
{
    std::vector<double> out(static_cast<std::size_t>(N + 1), 0.0);
    for (std::size_t i = 0; i < a.size() && static_cast<int>(i) <= N; ++i)
        for (std::size_t j = 0; j < b.size() && static_cast<int>(i + j) <= N; ++j) out[i + j] += a[i] * b[j];
    return out;
}

inline std::vector<double> one(int N)
{
    std::vector<double> out(static_cast<std::size_t>(N + 1), 0.0);
    out[0] = 1.0;
    return out;
}

inline std::vector<double> pow(const std::vector<double>& a, int p, int N)
{
    std::vector<double> out = one(N);
    for (int k = 0; k < p; ++k) out = mul(out, a, N);
    return out;
}

/// ln(1 + rho) for rho with zero constant term.
inline std::vector<double> log1p(const std::vector<double>& rho, int N)
{
    std::vector<double> out(static_cast<std::size_t>(N + 1), 0.0);
    std::vector<double> power = one(N);
    for (int k = 1; k <= N; ++k) {
        power = mul(power, rho, N);
        const double sgn = (k % 2) ? 1.0 : -1.0;
        for (int i = 0; i <= N; ++i) out[static_cast<std::size_t>(i)] += sgn * power[static_cast<std::size_t>(i)] / k;
    }
    return out;
}

} // namespace series

} // namespace volterra
