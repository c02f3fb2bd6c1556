#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace difflab {

using Vec = std::vector<double>;

// Dense row-major matrix. Small sizes only; everything in this project fits
// comfortably in caches, so no blocking or external BLAS.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(std::size_t(r) * c, fill) {
        if (r < 0 || c < 0) throw std::invalid_argument("Mat: negative dimension");
    }

    double& operator()(int i, int j) { return a[std::size_t(i) * cols + j]; }
    double operator()(int i, int j) const { return a[std::size_t(i) * cols + j]; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

inline void check_finite(const Vec& v, const std::string& who) {
    for (double x : v)
        if (!std::isfinite(x)) throw std::runtime_error(who + ": non-finite value");
}

inline void check_finite(const Mat& m, const std::string& who) {
    for (double x : m.a)
        if (!std::isfinite(x)) throw std::runtime_error(who + ": non-finite value");
}

inline Mat matmul(const Mat& A, const Mat& B) {
    if (A.cols != B.rows) throw std::invalid_argument("matmul: shape mismatch");
    Mat C(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i)
        for (int k = 0; k < A.cols; ++k) {
            double aik = A(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < B.cols; ++j) C(i, j) += aik * B(k, j);
        }
    return C;
}

inline Vec matvec(const Mat& A, const Vec& x) {
    if (A.cols != int(x.size())) throw std::invalid_argument("matvec: shape mismatch");
    Vec y(A.rows, 0.0);
    for (int i = 0; i < A.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < A.cols; ++j) s += A(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

// y = A^T x
inline Vec matvec_t(const Mat& A, const Vec& x) {
    if (A.rows != int(x.size())) throw std::invalid_argument("matvec_t: shape mismatch");
    Vec y(A.cols, 0.0);
    for (int i = 0; i < A.rows; ++i) {
        double xi = x[i];
        for (int j = 0; j < A.cols; ++j) y[j] += A(i, j) * xi;
    }
    return y;
}

inline Mat transpose(const Mat& A) {
    Mat T(A.cols, A.rows);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) T(j, i) = A(i, j);
    return T;
}

inline void add_scaled(Mat& A, const Mat& B, double c) {
    if (!A.same_shape(B)) throw std::invalid_argument("add_scaled: shape mismatch");
    for (std::size_t i = 0; i < A.a.size(); ++i) A.a[i] += c * B.a[i];
}

inline void add_scaled(Vec& a, const Vec& b, double c) {
    if (a.size() != b.size()) throw std::invalid_argument("add_scaled: size mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += c * b[i];
}

inline double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vec& v) { return std::sqrt(dot(v, v)); }

inline double sq_norm(const Vec& v) { return dot(v, v); }

inline double frobenius(const Mat& A) {
    double s = 0.0;
    for (double x : A.a) s += x * x;
    return std::sqrt(s);
}

// Max row 2-norm. Matches the parameter-bound convention used throughout:
// the (2,inf) norm of M is the largest Euclidean norm among the rows of M.
inline double two_inf_norm(const Mat& A) {
    double best = 0.0;
    for (int i = 0; i < A.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < A.cols; ++j) s += A(i, j) * A(i, j);
        best = std::max(best, s);
    }
    return std::sqrt(best);
}

// Largest singular value by power iteration on A^T A with Aitken
// extrapolation of the estimate sequence. The raw iteration converges slowly
// when the top two singular values are close; the estimates then follow a
// single geometric error mode, which Aitken removes exactly. `iters` is the
// minimum iteration count before the tolerance may stop the loop.
inline double spectral_norm(const Mat& A, int iters = 50, double tol = 1e-8) {
    if (A.rows == 0 || A.cols == 0) return 0.0;
    Vec v(A.cols, 0.0);
    // deterministic start with all modes populated
    for (int j = 0; j < A.cols; ++j) v[j] = 1.0 + 0.5 * std::sin(1.0 + j);
    double nv = norm2(v);
    for (auto& x : v) x /= nv;
    double e1 = 0.0, e2 = 0.0, e3 = 0.0;
    double extrap = 0.0;
    const int cap = iters * 100;
    for (int it = 0; it < cap; ++it) {
        Vec w = matvec(A, v);
        Vec u = matvec_t(A, w);
        double nu = norm2(u);
        if (nu == 0.0) return 0.0;
        for (auto& x : u) x /= nu;
        v = u;
        e1 = e2;
        e2 = e3;
        e3 = std::sqrt(nu);
        double dd = e3 - 2.0 * e2 + e1;
        extrap = e3;
        if (it >= 2 && dd != 0.0) {
            double candidate = e3 - (e3 - e2) * (e3 - e2) / dd;
            // the estimates increase toward the limit; reject wild steps
            if (candidate >= e3 && candidate <= 1.5 * e3) extrap = candidate;
        }
        if (it + 1 >= iters && std::abs(extrap - e3) <= tol * std::max(1.0, e3)) return extrap;
    }
    return extrap;
}

// Thin QR via modified Gram-Schmidt; returns Q with orthonormal columns.
inline Mat orthonormal_columns(const Mat& A) {
    Mat Q = A;
    for (int j = 0; j < Q.cols; ++j) {
        for (int k = 0; k < j; ++k) {
            double s = 0.0;
            for (int i = 0; i < Q.rows; ++i) s += Q(i, k) * Q(i, j);
            for (int i = 0; i < Q.rows; ++i) Q(i, j) -= s * Q(i, k);
        }
        double n = 0.0;
        for (int i = 0; i < Q.rows; ++i) n += Q(i, j) * Q(i, j);
        n = std::sqrt(n);
        if (n < 1e-12) throw std::runtime_error("orthonormal_columns: rank deficient");
        for (int i = 0; i < Q.rows; ++i) Q(i, j) /= n;
    }
    return Q;
}

}  // namespace difflab
