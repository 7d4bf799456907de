#pragma once

// Log-power asymptotics x^(t) = sum_{j=0}^{N} x_j(ln t) t^j of the differentiated equation
//   F(x) = K_n(t,t) x(t) + sum_i alpha_i' (K_i - K_{i+1})(t, alpha_i) x(alpha_i)
//          + sum_i int_{alpha_{i-1}}^{alpha_i} dK_i/dt(t,s) x(s) ds - f'(t) = 0.
// With z = ln t the t^j coefficient of F(x_j t^j) is the difference operator
//   K_n(0,0) y(z) + sum_i beta_i^{1+j} Delta_i y(z + a_i) = sum_k B^(k)(j)/k! y^(k)(z).

#include <cfloat>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "volterra/charop.hpp"
#include "volterra/errors.hpp"
#include "volterra/linalg.hpp"
#include "volterra/logpoly.hpp"
#include "volterra/model.hpp"
#include "volterra/quadrature.hpp"

namespace volterra {

// ---------------------------------------------------------------------------
// Taylor data

struct TaylorData {
    int N = 0;
    int m = 0;
    int n = 0;
    /// K[i-1][a][b] = d^a_t d^b_s K_i(0,0) / (a! b!), a + b <= N
    std::vector<std::vector<std::vector<Mat>>> K;
    std::vector<Vec> f;                     ///< f_nu, nu = 0..N+1
    std::vector<std::vector<double>> alpha; ///< alpha[i-1][nu], nu = 0..N+1, i = 1..n-1

    const Mat& kernel(int i, int a, int b) const
    {
        return K[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
    }
};

namespace detail {

/// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y)
{
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        mx += x[k];
        my += y[k];
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sxy += (x[k] - mx) * (y[k] - my);
        sxx += (x[k] - mx) * (x[k] - mx);
    }
    return sxy / sxx;
}

inline double value_at_zero(const expr::Expr& e, const std::string& what)
{
    double v;
    try {
        v = expr::eval(e, {{"t", 0.0}, {"s", 0.0}});
    } catch (const EvalError& err) {
        throw ValidationError(what + " is not smooth at 0: " + err.what());
    }
    if (!std::isfinite(v)) throw ValidationError(what + " is not smooth at 0");
    return v;
}

} // namespace detail

inline TaylorData taylor_data(const Problem& p, int N)
{
    if (N < 0) throw ValidationError("taylor_data: N must be >= 0");
    TaylorData td;
    td.N = N;
    td.m = p.m();
    td.n = p.n();
    const int m = p.m();

    for (int i = 1; i <= p.n(); ++i) {
        std::vector<std::vector<Mat>> table(static_cast<std::size_t>(N + 1));
        for (int a = 0; a <= N; ++a) table[static_cast<std::size_t>(a)].assign(static_cast<std::size_t>(N - a + 1), Mat::Zero(m, m));
        const auto& piece = p.piece(i);
        for (int cell = 0; cell < m * m; ++cell) {
            const std::string what = "K_" + std::to_string(i) + "[" + std::to_string(cell / m) + "][" + std::to_string(cell % m) + "]";
            expr::Expr et = piece.entries[static_cast<std::size_t>(cell)];
            double fa = 1.0;
            for (int a = 0; a <= N; ++a) {
                if (a > 0) {
                    et = expr::differentiate(et, "t");
                    fa *= a;
                }
                expr::Expr es = et;
                double fb = 1.0;
                for (int b = 0; b <= N - a; ++b) {
                    if (b > 0) {
                        es = expr::differentiate(es, "s");
                        fb *= b;
                    }
                    table[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)](cell / m, cell % m) =
                        detail::value_at_zero(es, what) / (fa * fb);
                }
            }
        }
        td.K.push_back(std::move(table));
    }

    td.f.assign(static_cast<std::size_t>(N + 2), Vec::Zero(m));
    for (int r = 0; r < m; ++r) {
        expr::Expr e = p.f_expr(r);
        double fact = 1.0;
        for (int nu = 0; nu <= N + 1; ++nu) {
            if (nu > 0) {
                e = expr::differentiate(e, "t");
                fact *= nu;
            }
            td.f[static_cast<std::size_t>(nu)](r) = detail::value_at_zero(e, "f[" + std::to_string(r) + "]") / fact;
        }
    }

    for (int i = 1; i < p.n(); ++i) {
        std::vector<double> coeffs;
        expr::Expr e = p.curve(i).alpha;
        double fact = 1.0;
        for (int nu = 0; nu <= N + 1; ++nu) {
            if (nu > 0) {
                e = expr::differentiate(e, "t");
                fact *= nu;
            }
            coeffs.push_back(detail::value_at_zero(e, "alpha_" + std::to_string(i)) / fact);
        }
        if (std::abs(coeffs[0]) > 1e-12) throw ValidationError("alpha_" + std::to_string(i) + "(0) != 0");
        if (!(coeffs[1] > 0.0)) throw ValidationError("alpha_" + std::to_string(i) + "'(0) must be positive");
        coeffs[0] = 0.0;
        td.alpha.push_back(std::move(coeffs));
    }
    return td;
}

// ---------------------------------------------------------------------------
// Expansion types

struct ParamInfo {
    std::string name; ///< c1, c2, ...
    int j = 0;        ///< power of t whose coefficient equation introduced it
    int chain = 0;    ///< Jordan chain (null direction) index at that j
    int position = 0; ///< 0 = top of the truncated chain polynomial
};

struct ParamRegistry {
    std::vector<ParamInfo> params;

    int add(int j, int chain, int position)
    {
        const int id = static_cast<int>(params.size());
        params.push_back({"c" + std::to_string(id + 1), j, chain, position});
        return id;
    }

    std::size_t size() const { return params.size(); }

    int find(const std::string& name) const
    {
        for (std::size_t k = 0; k < params.size(); ++k)
            if (params[k].name == name) return static_cast<int>(k);
        return -1;
    }
};

struct LogPowerExpansion {
    int N = 0;
    int m = 0;
    std::vector<ZPoly> coeffs; ///< x_0..x_N
    ParamRegistry registry;

    /// Parameter vector indexed by id. Unknown names are rejected; missing names are
    /// rejected unless `missing_zero`.
    std::vector<double> assignment(const std::map<std::string, double>& named, bool missing_zero = false) const
    {
        std::vector<double> out(registry.size(), 0.0);
        std::vector<bool> seen(registry.size(), false);
        for (const auto& [name, v] : named) {
            const int id = registry.find(name);
            if (id < 0) throw ValidationError("unknown parameter '" + name + "'");
            out[static_cast<std::size_t>(id)] = v;
            seen[static_cast<std::size_t>(id)] = true;
        }
        if (!missing_zero)
            for (std::size_t k = 0; k < seen.size(); ++k)
                if (!seen[k]) throw ValidationError("parameter '" + registry.params[k].name + "' is not assigned");
        return out;
    }
};

template <class T = double>
VecT<T> eval_expansion(const LogPowerExpansion& x, T t, const std::vector<double>& params)
{
    using std::log;
    if (!(t > T(0))) throw ValidationError("eval_expansion: t must be positive");
    if (params.size() != x.registry.size()) throw ValidationError("eval_expansion: assignment size mismatch");
    const T z = log(t);
    VecT<T> acc = VecT<T>::Zero(x.m);
    for (int j = static_cast<int>(x.coeffs.size()) - 1; j >= 0; --j)
        acc = acc * t + x.coeffs[static_cast<std::size_t>(j)].template eval<T>(z, params);
    return acc;
}

inline Vec eval_expansion(const LogPowerExpansion& x, double t, const std::map<std::string, double>& named)
{
    return eval_expansion<double>(x, t, x.assignment(named));
}

// ---------------------------------------------------------------------------
// Truncated substitution into F

namespace detail {

struct CurveSeries {
    double beta = 1.0;
    double a = 0.0;
    std::vector<double> alpha;  ///< alpha(t) coefficients
    std::vector<double> dalpha; ///< alpha'(t)
    std::vector<double> rho;    ///< alpha = beta t (1 + rho)
    std::vector<double> lambda; ///< ln(1 + rho)
};

/// Curves 1..n (curve n is s = t).
inline std::vector<CurveSeries> curve_series(const TaylorData& td, int N)
{
    std::vector<CurveSeries> out;
    for (int i = 1; i <= td.n; ++i) {
        CurveSeries c;
        c.alpha.assign(static_cast<std::size_t>(N + 2), 0.0);
        if (i < td.n) {
            const auto& al = td.alpha[static_cast<std::size_t>(i - 1)];
            for (int nu = 0; nu <= N + 1 && nu < static_cast<int>(al.size()); ++nu) c.alpha[static_cast<std::size_t>(nu)] = al[static_cast<std::size_t>(nu)];
        } else {
            c.alpha[1] = 1.0;
        }
        c.beta = c.alpha[1];
        c.a = std::log(c.beta);
        c.dalpha.assign(static_cast<std::size_t>(N + 1), 0.0);
        for (int nu = 0; nu <= N; ++nu) c.dalpha[static_cast<std::size_t>(nu)] = (nu + 1) * c.alpha[static_cast<std::size_t>(nu + 1)];
        c.rho.assign(static_cast<std::size_t>(N + 1), 0.0);
        for (int nu = 1; nu <= N; ++nu) c.rho[static_cast<std::size_t>(nu)] = c.alpha[static_cast<std::size_t>(nu + 1)] / c.beta;
        c.lambda = series::log1p(c.rho, N);
        out.push_back(std::move(c));
    }
    return out;
}

/// alpha(t)^p Q(ln alpha(t)) = beta^p t^p (1+rho)^p sum_k Q^(k)(z + a) lambda^k / k!, through t^N.
inline LogSeries compose(const ZPoly& Q, int p, const CurveSeries& c, int m, int N)
{
    LogSeries out(m, N);
    if (p > N) return out;
    std::vector<double> onep = c.rho;
    onep[0] = 1.0;
    const auto weight = series::pow(onep, p, N);
    const double bp = std::pow(c.beta, p);
    ZPoly D = Q;
    std::vector<double> lam_k = series::one(N);
    for (int k = 0; k <= Q.degree() && k <= N - p; ++k) {
        if (k > 0) {
            D = D.derivative();
            lam_k = series::mul(lam_k, c.lambda, N);
            for (auto& v : lam_k) v /= k;
        }
        out.add_product(p, series::mul(weight, lam_k, N), D.shifted(c.a), bp);
    }
    return out;
}

/// Q(z) with int_0^s sigma^b x_j(ln sigma) sigma^j dsigma = s^{b+j+1} Q(ln s).
inline ZPoly moment_antiderivative(const ZPoly& xj, int power)
{
    ZPoly out(xj.m(), xj.degree());
    for (int e = 0; e <= xj.degree(); ++e) {
        const auto c = integrate_logpoly(power, e);
        for (int s = 0; s <= e; ++s) out.c[static_cast<std::size_t>(e - s)].axpy(to_double(c[static_cast<std::size_t>(s)]), xj.c[static_cast<std::size_t>(e)]);
    }
    return out;
}

} // namespace detail

/// Coefficients of F(x^) through t^N, using the Taylor data of kernels, curves and f.
inline LogSeries apply_F_truncated(const Problem& p, const TaylorData& td, const std::vector<ZPoly>& x, int N)
{
    if (N > td.N) throw ValidationError("apply_F_truncated: Taylor data order is below N");
    const int m = p.m();
    const int n = p.n();
    const int J = std::min(static_cast<int>(x.size()) - 1, N);
    const auto curves = detail::curve_series(td, N);

    LogSeries out(m, N);

    // K_n(t,t) x(t)
    {
        std::vector<Mat> M(static_cast<std::size_t>(N + 1), Mat::Zero(m, m));
        for (int a = 0; a <= N; ++a)
            for (int b = 0; a + b <= N; ++b) M[static_cast<std::size_t>(a + b)] += td.kernel(n, a, b);
        LogSeries X(m, N);
        for (int j = 0; j <= J; ++j) X.terms[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)];
        out.add_matrix_product(0, M, X);
    }

    // alpha_i'(t) Delta K_i(t, alpha_i(t)) x(alpha_i(t))
    for (int i = 1; i < n; ++i) {
        const auto& c = curves[static_cast<std::size_t>(i - 1)];
        std::vector<double> al(c.alpha.begin(), c.alpha.begin() + N + 1);
        std::vector<Mat> W(static_cast<std::size_t>(N + 1), Mat::Zero(m, m));
        std::vector<double> al_b = series::one(N);
        for (int b = 0; b <= N; ++b) {
            if (b > 0) al_b = series::mul(al_b, al, N);
            const auto s = series::mul(al_b, c.dalpha, N);
            for (int a = 0; a + b <= N; ++a) {
                const Mat dK = td.kernel(i, a, b) - td.kernel(i + 1, a, b);
                for (int nu = 0; nu + a <= N; ++nu)
                    if (s[static_cast<std::size_t>(nu)] != 0.0) W[static_cast<std::size_t>(nu + a)] += s[static_cast<std::size_t>(nu)] * dK;
            }
        }
        LogSeries X(m, N);
        for (int j = 0; j <= J; ++j) X += detail::compose(x[static_cast<std::size_t>(j)], j, c, m, N);
        out.add_matrix_product(0, W, X);
    }

    // sum_i int_{alpha_{i-1}}^{alpha_i} sum_{a>=1,b} a K_iab t^{a-1} s^b x(s) ds
    for (int i = 1; i <= n; ++i) {
        for (int b = 0; b < N; ++b) {
            std::vector<Mat> M(static_cast<std::size_t>(N + 1), Mat::Zero(m, m));
            bool any = false;
            for (int a = 1; a + b <= N; ++a) {
                M[static_cast<std::size_t>(a - 1)] = a * td.kernel(i, a, b);
                if (!M[static_cast<std::size_t>(a - 1)].isZero(0.0)) any = true;
            }
            if (!any) continue;
            LogSeries Y(m, N);
            for (int j = 0; j <= J && b + j + 1 <= N; ++j) {
                const ZPoly Q = detail::moment_antiderivative(x[static_cast<std::size_t>(j)], b + j);
                Y += detail::compose(Q, b + j + 1, curves[static_cast<std::size_t>(i - 1)], m, N);
                if (i > 1) {
                    LogSeries lower = detail::compose(Q, b + j + 1, curves[static_cast<std::size_t>(i - 2)], m, N);
                    for (auto& term : lower.terms)
                        for (auto& coef : term.c) coef = coef.scaled(-1.0);
                    Y += lower;
                }
            }
            out.add_matrix_product(0, M, Y);
        }
    }

    // -f'(t)
    for (int nu = 0; nu <= N; ++nu) {
        ZPoly q(m);
        q.c[0].base = -(nu + 1) * td.f[static_cast<std::size_t>(nu + 1)];
        out.terms[static_cast<std::size_t>(nu)] += q;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Coefficient equations

namespace detail {

inline double binom(int n, int k)
{
    double r = 1.0;
    for (int q = 1; q <= k; ++q) r = r * (n - k + q) / q;
    return r;
}

/// Right-hand sides of an AffineVec-valued polynomial as columns: base, then each parameter.
struct Columns {
    std::vector<int> ids; ///< -1 for the base column
    Mat G;                ///< (m * (D+1)) x ids.size()
};

inline Columns stack_columns(const ZPoly& g, int m, int D)
{
    Columns cols;
    cols.ids.push_back(-1);
    for (const auto& coef : g.c)
        for (const auto& [id, v] : coef.terms)
            if (std::find(cols.ids.begin(), cols.ids.end(), id) == cols.ids.end()) cols.ids.push_back(id);
    cols.G = Mat::Zero(m * (D + 1), static_cast<Eigen::Index>(cols.ids.size()));
    for (int e = 0; e <= g.degree() && e <= D; ++e) {
        const auto& coef = g.c[static_cast<std::size_t>(e)];
        cols.G.block(e * m, 0, m, 1) = coef.base;
        for (std::size_t c = 1; c < cols.ids.size(); ++c) {
            auto it = coef.terms.find(cols.ids[c]);
            if (it != coef.terms.end()) cols.G.block(e * m, static_cast<Eigen::Index>(c), m, 1) = it->second;
        }
    }
    return cols;
}

inline ZPoly unstack(const Mat& Y, const std::vector<int>& ids, int m, int D)
{
    ZPoly y(m, D);
    for (int e = 0; e <= D; ++e) {
        auto& coef = y.c[static_cast<std::size_t>(e)];
        coef.base = Y.block(e * m, 0, m, 1);
        for (std::size_t c = 1; c < ids.size(); ++c) coef.terms[ids[c]] = Y.block(e * m, static_cast<Eigen::Index>(c), m, 1);
    }
    return y;
}

inline double poly_scale(const ZPoly& q)
{
    double s = 0.0;
    for (const auto& c : q.c) s = std::max(s, c.norm());
    return s;
}

} // namespace detail

inline constexpr double kTrimRel = 1e-12;

/// Polynomial solution y of sum_k C(e+k,k) B^(k)(j) y_{e+k} = g_e (every power e of z).
/// Regular j: block back-substitution from the top power. Singular j: the block
/// triangular system of degree deg g + (longest chain) is solved in the least-squares
/// sense and the truncated chain polynomials enter with fresh parameters.
inline ZPoly solve_coefficient(const CharOperator& op, const SingularPointInfo& info, const ZPoly& rhs,
                               const JordanData* jd, ParamRegistry& registry, double tol_rank = kDefaultRankTol)
{
    const int m = op.m();
    const int j = info.j;
    ZPoly g = rhs;
    const double gscale = detail::poly_scale(g);
    g.trim(kTrimRel * std::max(1.0, gscale));
    const int dg = g.degree();

    std::vector<Mat> Bk;
    auto block = [&](int k) -> const Mat& {
        while (static_cast<int>(Bk.size()) <= k) Bk.push_back(op.B_deriv(j, static_cast<int>(Bk.size())));
        return Bk[static_cast<std::size_t>(k)];
    };

    if (!info.singular()) {
        const Eigen::FullPivLU<Mat> lu(block(0));
        ZPoly y(m, dg);
        for (int e = dg; e >= 0; --e) {
            AffineVec acc = g.c[static_cast<std::size_t>(e)];
            for (int k = 1; e + k <= dg; ++k) acc.axpy(-detail::binom(e + k, k), block(k) * y.c[static_cast<std::size_t>(e + k)]);
            AffineVec sol(Vec(lu.solve(acc.base)));
            for (const auto& [id, v] : acc.terms) sol.terms.emplace(id, lu.solve(v));
            y.c[static_cast<std::size_t>(e)] = std::move(sol);
        }
        y.trim(kTrimRel * std::max(1.0, detail::poly_scale(y)));
        return y;
    }

    if (jd == nullptr || !jd->complete)
        throw NumericalError("unresolved index at j = " + std::to_string(j) +
                             (jd && !jd->message.empty() ? ": " + jd->message : std::string()));
    int pmax = 0;
    for (int p : jd->lengths) pmax = std::max(pmax, p);

    for (int D = dg + pmax; D <= dg + pmax + 1; ++D) {
        const int size = m * (D + 1);
        Mat A = Mat::Zero(size, size);
        for (int e = 0; e <= D; ++e)
            for (int k = 0; e + k <= D; ++k) A.block(e * m, (e + k) * m, m, m) = detail::binom(e + k, k) * block(k);
        Eigen::JacobiSVD<Mat> svd(A);
        const double thr = tol_rank * std::max(svd.singularValues()(0), op.scale());
        const auto cols = detail::stack_columns(g, m, D);
        const Mat Y = pinv(A, thr) * cols.G;
        const double resid = (A * Y - cols.G).cwiseAbs().maxCoeff();
        if (resid > 1e-8 * std::max(1.0, cols.G.cwiseAbs().maxCoeff())) continue;

        int nullity = 0;
        for (Eigen::Index k = 0; k < svd.singularValues().size(); ++k)
            if (svd.singularValues()(k) <= thr) ++nullity;
        if (nullity != jd->total_length())
            throw NumericalError("coefficient system at j = " + std::to_string(j) + " has " + std::to_string(nullity) +
                                 " free directions, Jordan chains give " + std::to_string(jd->total_length()));

        ZPoly y = detail::unstack(Y, cols.ids, m, D);
        for (std::size_t i = 0; i < jd->chains.size(); ++i) {
            const auto& chain = jd->chains[i];
            const int p = jd->lengths[i];
            for (int s = 0; s < p; ++s) {
                const int id = registry.add(j, static_cast<int>(i), s);
                // sum_{l=1}^{p-s} chi^(l) z^{p-s-l} / (p-s-l)!
                double fact = 1.0;
                for (int q = 1; q <= p - s - 1; ++q) fact *= q;
                for (int l = 1; l <= p - s; ++l) {
                    const int e = p - s - l;
                    if (l > 1) fact /= (e + 1);
                    y.ensure_degree(e);
                    y.c[static_cast<std::size_t>(e)].axpy(1.0 / fact, AffineVec::parameter(m, id, chain[static_cast<std::size_t>(l - 1)]));
                }
            }
        }
        y.trim(kTrimRel * std::max(1.0, detail::poly_scale(y)));
        return y;
    }
    throw NumericalError("coefficient system at j = " + std::to_string(j) + " is inconsistent");
}

// ---------------------------------------------------------------------------
// Exact residual F(x^)(t)

struct ExactResidual {
    VecT<long double> F;
    long double scale = 0; ///< sum of the magnitudes of the individual terms of F
};

/// F(x)(t) with the exact kernels; x is any callable long double -> VecT<long double>.
template <class X>
ExactResidual exact_F(const Problem& p, X&& x, long double t)
{
    using LD = long double;
    const int n = p.n();
    ExactResidual r;
    MatT<LD> K, K2;
    p.kernel_piece<LD>(n, t, t, K);
    VecT<LD> term = K * x(t);
    r.F = term;
    r.scale = term.cwiseAbs().maxCoeff();
    for (int i = 1; i < n; ++i) {
        const LD a = p.alpha<LD>(i, t);
        p.kernel_piece<LD>(i, t, a, K);
        p.kernel_piece<LD>(i + 1, t, a, K2);
        term = p.alpha_prime<LD>(i, t) * ((K - K2) * x(a));
        r.F += term;
        r.scale += term.cwiseAbs().maxCoeff();
    }
    for (int i = 1; i <= n; ++i) {
        if (p.piece_dt_zero(i)) continue;
        const LD lo = p.alpha<LD>(i - 1, t);
        const LD hi = p.alpha<LD>(i, t);
        quad::graded<LD>(lo, hi, [&](LD s, LD w) {
            p.kernel_piece_dt<LD>(i, t, s, K);
            term = w * (K * x(s));
            r.F += term;
            r.scale += term.cwiseAbs().maxCoeff();
        });
    }
    VecT<LD> fp;
    p.f_prime<LD>(t, fp);
    r.F -= fp;
    r.scale += fp.cwiseAbs().maxCoeff();
    return r;
}

struct DecayReport {
    std::vector<double> t;
    std::vector<double> norm;
    std::vector<double> floor;
    int points_used = 0; ///< points with ||F|| above the roundoff floor
    double slope = std::numeric_limits<double>::infinity();
    bool exact = false;  ///< ||F|| at roundoff level on fewer than two points
    bool ok = false;
    double order = 0.0;  ///< required slope
};

/// Roundoff floor factor: coefficients are double, so F cannot be resolved below
/// kFloorEps * (sum of term magnitudes).
inline constexpr double kFloorEps = 64.0 * DBL_EPSILON;

/// Least-squares slope of log ||F(x^)(t)|| against log t over a log grid, using only points
/// above the roundoff floor. ok when slope > required, or when the residual is at roundoff.
inline DecayReport residual_decay(const Problem& p, const LogPowerExpansion& xh, const std::vector<double>& params,
                                  double required, double t_lo = 1e-6, double t_hi = 1e-2, int points = 41)
{
    DecayReport rep;
    rep.order = required;
    auto xfun = [&](long double s) { return eval_expansion<long double>(xh, s, params); };
    std::vector<double> lx, ly;
    for (int k = 0; k < points; ++k) {
        const double t = t_lo * std::pow(t_hi / t_lo, static_cast<double>(k) / (points - 1));
        const auto r = exact_F(p, xfun, static_cast<long double>(t));
        const double nrm = static_cast<double>(r.F.cwiseAbs().maxCoeff());
        const double fl = kFloorEps * static_cast<double>(r.scale);
        rep.t.push_back(t);
        rep.norm.push_back(nrm);
        rep.floor.push_back(fl);
        if (nrm > fl) {
            lx.push_back(std::log(t));
            ly.push_back(std::log(nrm));
        }
    }
    rep.points_used = static_cast<int>(lx.size());
    if (lx.size() < 2) {
        rep.exact = true;
        rep.ok = true;
        return rep;
    }
    rep.slope = detail::fit_slope(lx, ly);
    rep.ok = rep.slope > required;
    return rep;
}

// ---------------------------------------------------------------------------
// Driver

struct ExpansionOptions {
    double tol_rank = kDefaultRankTol;
    int k_max = kDefaultKMax;
    bool check_decay = true;
};

struct ExpansionResult {
    LogPowerExpansion expansion;
    ScanReport scan;
    std::vector<DecayReport> decay; ///< at c = 0 and c = (1,...,1)
};

/// Builds x_0..x_N order by order: x_j solves the coefficient equation with right-hand side
/// -[t^j] F(x_0 + ... + x_{j-1} t^{j-1}).
inline ExpansionResult build_expansion(const Problem& p, int N, const ExpansionOptions& opt = {})
{
    if (N < 0) throw ValidationError("build_expansion: N must be >= 0");
    for (int r = 0; r < p.m(); ++r)
        if (std::abs(detail::value_at_zero(p.f_expr(r), "f")) > 1e-12) throw ValidationError("f(0) != 0");
    const auto op = build_charop(p);
    const auto td = taylor_data(p, N);

    ExpansionResult res;
    res.scan = scan(op, N, opt.tol_rank, opt.k_max);
    auto& xh = res.expansion;
    xh.N = N;
    xh.m = p.m();

    std::size_t jd_next = 0;
    for (int j = 0; j <= N; ++j) {
        const auto& info = res.scan.points[static_cast<std::size_t>(j)];
        const JordanData* jd = nullptr;
        if (info.singular()) jd = &res.scan.jordan[jd_next++];
        LogSeries F = apply_F_truncated(p, td, xh.coeffs, j);
        ZPoly rhs = F.terms[static_cast<std::size_t>(j)];
        for (auto& c : rhs.c) c = c.scaled(-1.0);
        xh.coeffs.push_back(solve_coefficient(op, info, rhs, jd, xh.registry, opt.tol_rank));
    }

    if (opt.check_decay) {
        for (double c : {0.0, 1.0}) {
            const std::vector<double> params(xh.registry.size(), c);
            res.decay.push_back(residual_decay(p, xh, params, N));
            const auto& d = res.decay.back();
            if (!d.ok) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "residual of the expansion decays with slope %.3f, expected > %d", d.slope, N);
                throw NumericalError(buf);
            }
        }
    }
    return res;
}

/// Sum of r_j * index_j (or of chain lengths) over the singular points of a scan.
inline int expected_parameter_count(const ScanReport& s)
{
    int total = 0;
    for (const auto& jd : s.jordan) total += jd.total_length();
    return total;
}

// ---------------------------------------------------------------------------
// Pretty form

namespace detail {

inline std::string fmt_coef(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string affine_component(const AffineVec& a, int r, const ParamRegistry& reg, double tol)
{
    std::string s;
    auto add = [&](double v, const std::string& sym) {
        if (std::abs(v) <= tol) return;
        const std::string num = fmt_coef(std::abs(v));
        const bool unit = sym.size() && num == "1";
        std::string piece = unit ? sym : (sym.empty() ? num : num + "*" + sym);
        if (s.empty())
            s = (v < 0 ? "-" : "") + piece;
        else
            s += (v < 0 ? " - " : " + ") + piece;
    };
    add(a.base(r), "");
    for (const auto& [id, v] : a.terms) add(v(r), reg.params[static_cast<std::size_t>(id)].name);
    return s;
}

} // namespace detail

/// One line per component: `x1(t) ≈ ...` in terms of ln(t).
inline std::vector<std::string> pretty(const LogPowerExpansion& x)
{
    double scale = 0.0;
    for (const auto& c : x.coeffs) scale = std::max(scale, detail::poly_scale(c));
    const double tol = 1e-13 * std::max(1.0, scale);
    std::vector<std::string> lines;
    for (int r = 0; r < x.m; ++r) {
        std::string body;
        for (std::size_t j = 0; j < x.coeffs.size(); ++j) {
            const auto& q = x.coeffs[j];
            for (int e = q.degree(); e >= 0; --e) {
                const std::string c = detail::affine_component(q.c[static_cast<std::size_t>(e)], r, x.registry, tol);
                if (c.empty()) continue;
                std::string mono;
                if (j > 0) mono += j == 1 ? "t" : "t^" + std::to_string(j);
                if (e > 0) mono += (mono.empty() ? "" : "*") + std::string(e == 1 ? "ln(t)" : "ln(t)^" + std::to_string(e));
                const bool single = c.find(' ') == std::string::npos;
                std::string term;
                if (mono.empty())
                    term = single ? c : "(" + c + ")";
                else if (c == "1")
                    term = mono;
                else if (c == "-1")
                    term = "-" + mono;
                else
                    term = (single ? c : "(" + c + ")") + "*" + mono;
                if (body.empty())
                    body = term;
                else if (term[0] == '-')
                    body += " - " + term.substr(1);
                else
                    body += " + " + term;
            }
        }
        if (body.empty()) body = "0";
        lines.push_back("x" + std::to_string(r + 1) + "(t) ≈ " + body);
    }
    return lines;
}

} // namespace volterra
