#pragma once

// Characteristic matrix family
//   B(j)     = K_n(0,0) + sum_i beta_i^{1+j} Delta_i,      beta_i = alpha_i'(0),
//   B^(k)(j) = sum_i beta_i^{1+j} a_i^k Delta_i  (k >= 1),  a_i = ln beta_i,
// with Delta_i = K_i(0,0) - K_{i+1}(0,0); classification of integer points j and
// Jordan chains at singular points.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "volterra/errors.hpp"
#include "volterra/linalg.hpp"
#include "volterra/model.hpp"

namespace volterra {

struct CharOperator {
    Mat K_n00;
    std::vector<Mat> deltas;
    std::vector<double> betas;
    std::vector<double> a;

    int m() const { return static_cast<int>(K_n00.rows()); }

    /// ||K_n(0,0)|| + sum ||Delta_i||: bounds ||B(j)|| for j >= 0.
    double scale() const
    {
        double s = spectral_norm(K_n00);
        for (const auto& d : deltas) s += spectral_norm(d);
        return s;
    }

    /// Bound for ||B^(k)(j)|| at j >= 0.
    double deriv_scale(int k) const
    {
        if (k == 0) return scale();
        double s = 0.0;
        for (std::size_t i = 0; i < deltas.size(); ++i) s += std::pow(std::abs(a[i]), k) * spectral_norm(deltas[i]);
        return s;
    }

    Mat B(double j) const { return B_deriv(j, 0); }

    Mat B_deriv(double j, int k) const
    {
        Mat out = k == 0 ? K_n00 : Mat::Zero(m(), m());
        for (std::size_t i = 0; i < deltas.size(); ++i) out += std::pow(betas[i], 1.0 + j) * std::pow(a[i], k) * deltas[i];
        return out;
    }
};

inline CharOperator build_charop(const Problem& p)
{
    CharOperator op;
    op.K_n00 = p.kernel_piece(p.n(), 0.0, 0.0);
    for (int i = 1; i < p.n(); ++i) {
        const double beta = p.alpha_prime(i, 0.0);
        if (!(beta > 0.0))
            throw ValidationError("alpha_" + std::to_string(i) + "'(0) = " + std::to_string(beta) +
                                  " is not positive; ln alpha_i'(0) is undefined");
        op.betas.push_back(beta);
        op.a.push_back(std::log(beta));
        op.deltas.push_back(p.kernel_piece(i, 0.0, 0.0) - p.kernel_piece(i + 1, 0.0, 0.0));
    }
    return op;
}

enum class PointKind { Regular, Singular };

struct SingularPointInfo {
    int j = 0;
    PointKind kind = PointKind::Regular;
    int r = 0;             ///< dim N(B(j))
    int index = 0;         ///< 0 when regular or unresolved
    bool resolved = true;  ///< false: no k <= k_max passed the determinant test
    Mat phi;               ///< m x r right null basis
    Mat psi;               ///< m x r left null basis
    double det_test = 0.0; ///< det[<B^(index) phi_i, psi_l>]
    double threshold = 0.0;
    Vec singular_values;
    std::string message;

    bool singular() const { return kind == PointKind::Singular; }
};

inline constexpr double kDefaultRankTol = 1e-9;
inline constexpr int kDefaultKMax = 8;

/// Rank decision: singular values <= tol_rank * max(sigma_max, op.scale()) count as zero.
/// The operator scale keeps the threshold meaningful when B(j) itself vanishes.
inline SingularPointInfo classify_point(const CharOperator& op, int j, double tol_rank = kDefaultRankTol,
                                        int k_max = kDefaultKMax)
{
    if (k_max < 1) throw ValidationError("classify_point: k_max must be >= 1");
    SingularPointInfo info;
    info.j = j;
    const Mat B = op.B(j);
    Eigen::JacobiSVD<Mat> svd(B);
    info.singular_values = svd.singularValues();
    const double smax = info.singular_values.size() ? info.singular_values(0) : 0.0;
    info.threshold = tol_rank * std::max(smax, op.scale());
    const auto right = null_space(B, info.threshold);
    info.r = static_cast<int>(right.basis.cols());
    if (info.r == 0) return info;

    info.kind = PointKind::Singular;
    info.phi = right.basis;
    info.psi = left_null_space(B, info.threshold).basis;
    if (info.psi.cols() != info.phi.cols()) {
        info.resolved = false;
        info.message = "left and right null spaces differ in dimension";
        return info;
    }
    for (int k = 1; k <= k_max; ++k) {
        const Mat Bk = op.B_deriv(j, k);
        const double tol_k = tol_rank * std::max(op.deriv_scale(k), spectral_norm(Bk));
        const Mat pairing = info.psi.transpose() * Bk * info.phi;
        Eigen::JacobiSVD<Mat> ps(pairing);
        if (ps.singularValues().minCoeff() > tol_k) {
            info.index = k;
            info.det_test = pairing.determinant();
            return info;
        }
        // a larger index requires N(B) inside N(B^(k))
        if ((Bk * info.phi).norm() > tol_k) {
            info.resolved = false;
            info.message = "null space of B(j) is not contained in N(B^(" + std::to_string(k) +
                           ")) but the pairing determinant vanishes";
            return info;
        }
    }
    info.resolved = false;
    info.message = "no index <= " + std::to_string(k_max) + " passes the determinant test";
    return info;
}

struct JordanData {
    int j = 0;
    std::vector<std::vector<Vec>> chains; ///< chains[i][l] = phi_i^(l+1)
    std::vector<int> lengths;
    double solvability_det = 0.0;
    double residual = 0.0;     ///< max residual of the chain equations
    bool complete = false;
    std::string message;

    int total_length() const
    {
        int s = 0;
        for (int p : lengths) s += p;
        return s;
    }
};

namespace detail {

/// Normalized Taylor coefficients B^(k)(j)/k!, k = 0..count-1.
inline std::vector<Mat> taylor_blocks(const CharOperator& op, int j, int count)
{
    std::vector<Mat> out;
    double fact = 1.0;
    for (int k = 0; k < count; ++k) {
        if (k > 0) fact *= k;
        out.push_back(op.B_deriv(j, k) / fact);
    }
    return out;
}

/// Block lower-triangular Toeplitz matrix with blocks b[0..L-1]; its null space holds
/// the stacked chains (chi^(1), ..., chi^(L)) of length >= L.
inline Mat toeplitz(const std::vector<Mat>& b, int L)
{
    const int m = static_cast<int>(b[0].rows());
    Mat T = Mat::Zero(m * L, m * L);
    for (int row = 0; row < L; ++row)
        for (int col = 0; col <= row; ++col) T.block(row * m, col * m, m, m) = b[static_cast<std::size_t>(row - col)];
    return T;
}

/// Residual of sum_{k=0}^{l} b_k chi^(l+1-k) = 0 over l = 0..len-1.
inline double chain_residual(const std::vector<Mat>& b, const std::vector<Vec>& chain)
{
    double res = 0.0;
    for (std::size_t l = 0; l < chain.size(); ++l) {
        Vec acc = Vec::Zero(b[0].rows());
        for (std::size_t k = 0; k <= l; ++k) acc += b[k] * chain[l - k];
        res = std::max(res, acc.norm());
    }
    return res;
}

} // namespace detail

/// Canonical Jordan chains at a singular point, in normalized form
///   B chi^(l+1) + sum_{k=1}^{l} B^(k)/k! chi^(l+1-k) = 0.
/// Chain lengths come from dim N(T_L) of the block Toeplitz matrices; longest chains are
/// selected first. solvability_det = det[<sum_{k=1}^{p_i} B^(k)/k! chi_i^(p_i+1-k), psi_l>].
inline JordanData jordan_chains(const CharOperator& op, const SingularPointInfo& info, double tol_rank = kDefaultRankTol,
                                int cap = kDefaultKMax)
{
    JordanData jd;
    jd.j = info.j;
    if (!info.singular()) {
        jd.message = "point is regular";
        return jd;
    }
    const int m = op.m();
    const int r = info.r;
    const auto b = detail::taylor_blocks(op, info.j, cap + 2);
    double scale = 0.0;
    for (const auto& blk : b) scale = std::max(scale, spectral_norm(blk));
    scale = std::max(scale, op.scale());
    const double thr = tol_rank * scale;

    // kappa[L] = dim N(T_L); chains of length >= L number kappa[L] - kappa[L-1]
    std::vector<int> kappa(static_cast<std::size_t>(cap + 2), 0);
    std::vector<Mat> nulls(static_cast<std::size_t>(cap + 2));
    int Lmax = 0;
    for (int L = 1; L <= cap + 1; ++L) {
        auto ns = null_space(detail::toeplitz(b, L), thr);
        kappa[static_cast<std::size_t>(L)] = static_cast<int>(ns.basis.cols());
        nulls[static_cast<std::size_t>(L)] = std::move(ns.basis);
        const int count = kappa[static_cast<std::size_t>(L)] - kappa[static_cast<std::size_t>(L - 1)];
        if (count <= 0) break;
        Lmax = L;
    }
    if (Lmax > cap) {
        jd.message = "chain length exceeds cap " + std::to_string(cap);
        return jd;
    }
    if (kappa[1] != r) {
        jd.message = "Toeplitz null space disagrees with the rank decision";
        return jd;
    }

    Mat firsts(m, 0);
    for (int L = Lmax; L >= 1; --L) {
        const int at_least_L = kappa[static_cast<std::size_t>(L)] - kappa[static_cast<std::size_t>(L - 1)];
        const int at_least_next = L < Lmax ? kappa[static_cast<std::size_t>(L + 1)] - kappa[static_cast<std::size_t>(L)] : 0;
        const int need = at_least_L - at_least_next;
        if (need <= 0) continue;
        const Mat& N = nulls[static_cast<std::size_t>(L)];
        Mat F = N.topRows(m);
        if (firsts.cols() > 0) {
            const Eigen::HouseholderQR<Mat> qr(firsts);
            const Mat Q = qr.householderQ() * Mat::Identity(m, firsts.cols());
            F -= Q * (Q.transpose() * F);
        }
        Eigen::JacobiSVD<Mat> svd(F, Eigen::ComputeFullV);
        for (int c = 0; c < need; ++c) {
            Vec stacked = N * svd.matrixV().col(c);
            Vec head = stacked.head(m);
            Eigen::Index imax = 0;
            head.cwiseAbs().maxCoeff(&imax);
            const double s = head(imax) < 0 ? -1.0 : 1.0;
            stacked *= s / head.norm();
            std::vector<Vec> chain;
            for (int l = 0; l < L; ++l) chain.push_back(stacked.segment(l * m, m));
            firsts.conservativeResize(m, firsts.cols() + 1);
            firsts.col(firsts.cols() - 1) = chain[0];
            jd.chains.push_back(std::move(chain));
            jd.lengths.push_back(L);
        }
    }
    if (static_cast<int>(jd.chains.size()) != r) {
        jd.message = "could not select " + std::to_string(r) + " independent chains";
        return jd;
    }
    for (const auto& chain : jd.chains) jd.residual = std::max(jd.residual, detail::chain_residual(b, chain));

    Mat M(r, r);
    for (int i = 0; i < r; ++i) {
        const auto& chain = jd.chains[static_cast<std::size_t>(i)];
        const int p = jd.lengths[static_cast<std::size_t>(i)];
        Vec w = Vec::Zero(m);
        for (int k = 1; k <= p; ++k) w += b[static_cast<std::size_t>(k)] * chain[static_cast<std::size_t>(p - k)];
        M.row(i) = (info.psi.transpose() * w).transpose();
    }
    jd.solvability_det = M.determinant();
    Eigen::JacobiSVD<Mat> ms(M);
    jd.complete = ms.singularValues().minCoeff() > thr;
    if (!jd.complete) jd.message = "solvability determinant vanishes: Jordan set incomplete";
    return jd;
}

struct ScanReport {
    std::vector<SingularPointInfo> points;
    std::vector<JordanData> jordan; ///< one per singular point, same order as they appear in points
    bool cond_C = true;  ///< every point regular or a singular point of resolved index
    bool cond_C1 = true; ///< every singular point carries a complete Jordan set
    int singular_count = 0;
};

inline ScanReport scan(const CharOperator& op, int N, double tol_rank = kDefaultRankTol, int k_max = kDefaultKMax)
{
    ScanReport rep;
    for (int j = 0; j <= N; ++j) {
        auto info = classify_point(op, j, tol_rank, k_max);
        if (info.singular()) {
            ++rep.singular_count;
            if (!info.resolved) rep.cond_C = false;
            auto jd = jordan_chains(op, info, tol_rank, k_max);
            if (!jd.complete) rep.cond_C1 = false;
            rep.jordan.push_back(std::move(jd));
        }
        rep.points.push_back(std::move(info));
    }
    return rep;
}

} // namespace volterra
