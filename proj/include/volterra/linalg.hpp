#pragma once

// Small dense linear-algebra helpers on top of Eigen: spectral norms, SVD null
// spaces and a thresholded pseudo-inverse.

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace volterra {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

template <class T>
using MatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using VecT = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Operator 2-norm (largest singular value).
inline double spectral_norm(const Mat& a)
{
    if (a.size() == 0) return 0.0;
    if (a.size() == 1) return std::abs(a(0, 0));
    Eigen::JacobiSVD<Mat> svd(a);
    return svd.singularValues()(0);
}

/// Flip each column so that its largest-magnitude entry is positive. Makes SVD bases reproducible.
inline void orient_columns(Mat& basis)
{
    for (Eigen::Index c = 0; c < basis.cols(); ++c) {
        Eigen::Index imax = 0;
        basis.col(c).cwiseAbs().maxCoeff(&imax);
        if (basis(imax, c) < 0) basis.col(c) *= -1.0;
    }
}

struct NullSpace {
    Mat basis;        ///< orthonormal columns spanning the numerical null space
    Vec singular;     ///< all singular values, descending
    double threshold; ///< singular values <= threshold count as zero
};

/// Right null space of a square or rectangular matrix: right singular vectors whose
/// singular value is <= threshold (columns beyond the rank of a wide matrix included).
inline NullSpace null_space(const Mat& a, double threshold)
{
    Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec& sv = svd.singularValues();
    Eigen::Index rank = 0;
    while (rank < sv.size() && sv(rank) > threshold) ++rank;
    NullSpace out;
    out.singular = sv;
    out.threshold = threshold;
    out.basis = svd.matrixV().rightCols(a.cols() - rank);
    orient_columns(out.basis);
    return out;
}

/// Left null space: null space of the transpose.
inline NullSpace left_null_space(const Mat& a, double threshold) { return null_space(a.transpose(), threshold); }

/// Moore-Penrose pseudo-inverse with singular values <= threshold dropped.
inline Mat pinv(const Mat& a, double threshold)
{
    Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Vec inv = svd.singularValues();
    for (Eigen::Index i = 0; i < inv.size(); ++i) inv(i) = inv(i) > threshold ? 1.0 / inv(i) : 0.0;
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

/// Smallest over largest singular value; 0 for a zero matrix.
inline double inverse_condition(const Mat& a)
{
    Eigen::JacobiSVD<Mat> svd(a);
    const Vec& sv = svd.singularValues();
    if (sv.size() == 0 || sv(0) == 0.0) return 0.0;
    return sv(sv.size() - 1) / sv(0);
}

} // namespace volterra
