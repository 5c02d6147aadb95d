// SPDX-License-Identifier: Apache-2.0
//
// mbsat - joint precoding optimization for multibeam satellite forward links
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbsat {

using cdouble = std::complex<double>;
using ComplexVector = std::vector<cdouble>;
using RealVector = std::vector<double>;

/// Raised when a factorization meets a pivot that is numerically zero or negative.
class SingularMatrixError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Raised when a power-minimization problem has no solution for the requested targets.
class InfeasibleError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------------------
// Dense row-major matrix
// ------------------------------------------------------------------------

template <typename T>
class Matrix {
  public:
    using value_type = T;

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{}) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<T> entries)
        : rows_(rows), cols_(cols), data_(std::move(entries))
    {
        if (data_.size() != rows_ * cols_)
            throw std::invalid_argument("Matrix: entries length does not match rows x cols");
    }
    Matrix(std::initializer_list<std::initializer_list<T>> rows)
    {
        rows_ = rows.size();
        cols_ = rows_ ? rows.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto &r : rows) {
            if (r.size() != cols_)
                throw std::invalid_argument("Matrix: ragged initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Matrix identity(std::size_t n)
    {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i)
            m(i, i) = T(1);
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return data_.empty(); }

    T &operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const T &operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<T> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const T> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    std::vector<T> col(std::size_t j) const
    {
        std::vector<T> c(rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            c[i] = (*this)(i, j);
        return c;
    }

    const std::vector<T> &entries() const noexcept { return data_; }

    Matrix &operator+=(const Matrix &o)
    {
        check_same_shape(o);
        for (std::size_t i = 0; i < data_.size(); ++i)
            data_[i] += o.data_[i];
        return *this;
    }
    Matrix &operator-=(const Matrix &o)
    {
        check_same_shape(o);
        for (std::size_t i = 0; i < data_.size(); ++i)
            data_[i] -= o.data_[i];
        return *this;
    }
    Matrix &operator*=(T s)
    {
        for (auto &v : data_)
            v *= s;
        return *this;
    }

    friend Matrix operator+(Matrix a, const Matrix &b) { return a += b; }
    friend Matrix operator-(Matrix a, const Matrix &b) { return a -= b; }
    friend Matrix operator*(Matrix a, T s) { return a *= s; }
    friend Matrix operator*(T s, Matrix a) { return a *= s; }

    friend Matrix operator*(const Matrix &a, const Matrix &b)
    {
        if (a.cols_ != b.rows_)
            throw std::invalid_argument("Matrix product: inner dimensions disagree");
        Matrix c(a.rows_, b.cols_);
        for (std::size_t i = 0; i < a.rows_; ++i)
            for (std::size_t k = 0; k < a.cols_; ++k) {
                const T aik = a(i, k);
                for (std::size_t j = 0; j < b.cols_; ++j)
                    c(i, j) += aik * b(k, j);
            }
        return c;
    }

    friend std::vector<T> operator*(const Matrix &a, std::span<const T> x)
    {
        if (a.cols_ != x.size())
            throw std::invalid_argument("Matrix-vector product: dimensions disagree");
        std::vector<T> y(a.rows_, T{});
        for (std::size_t i = 0; i < a.rows_; ++i) {
            T acc{};
            for (std::size_t j = 0; j < a.cols_; ++j)
                acc += a(i, j) * x[j];
            y[i] = acc;
        }
        return y;
    }
    friend std::vector<T> operator*(const Matrix &a, const std::vector<T> &x) { return a * std::span<const T>(x); }

  private:
    void check_same_shape(const Matrix &o) const
    {
        if (rows_ != o.rows_ || cols_ != o.cols_)
            throw std::invalid_argument("Matrix: shape mismatch");
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using ComplexMatrix = Matrix<cdouble>;
using RealMatrix = Matrix<double>;

inline double conj_if(double v) { return v; }
inline cdouble conj_if(cdouble v) { return std::conj(v); }

/// Conjugate transpose (plain transpose for real matrices).
template <typename T>
Matrix<T> adjoint(const Matrix<T> &a)
{
    Matrix<T> r(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            r(j, i) = conj_if(a(i, j));
    return r;
}

template <typename T>
bool is_hermitian(const Matrix<T> &a, double rel_tol = 1e-12)
{
    if (a.rows() != a.cols())
        return false;
    double scale = 0.0;
    for (const auto &v : a.entries())
        scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i; j < a.cols(); ++j)
            if (std::abs(a(i, j) - conj_if(a(j, i))) > rel_tol * scale)
                return false;
    return true;
}

// ------------------------------------------------------------------------
// Vector helpers
// ------------------------------------------------------------------------

/// a^H b
inline cdouble inner(std::span<const cdouble> a, std::span<const cdouble> b)
{
    if (a.size() != b.size())
        throw std::invalid_argument("inner: dimension mismatch");
    cdouble acc{};
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += std::conj(a[i]) * b[i];
    return acc;
}

inline double norm_sq(std::span<const cdouble> a)
{
    double acc = 0.0;
    for (const auto &v : a)
        acc += std::norm(v);
    return acc;
}

inline double norm(std::span<const cdouble> a) { return std::sqrt(norm_sq(a)); }

inline ComplexVector scaled(std::span<const cdouble> a, cdouble s)
{
    ComplexVector r(a.begin(), a.end());
    for (auto &v : r)
        v *= s;
    return r;
}

inline ComplexVector normalized(std::span<const cdouble> a)
{
    const double n = norm(a);
    if (!(n > 0.0))
        throw std::invalid_argument("normalized: zero vector");
    return scaled(a, 1.0 / n);
}

/// Outer product x x^H.
inline ComplexMatrix outer(std::span<const cdouble> x)
{
    ComplexMatrix m(x.size(), x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j)
            m(i, j) = x[i] * std::conj(x[j]);
    return m;
}

/// Adds c * x x^H to m in place.
inline void add_outer(ComplexMatrix &m, std::span<const cdouble> x, double c)
{
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j)
            m(i, j) += c * x[i] * std::conj(x[j]);
}

/// x^H A x for Hermitian A (imaginary round-off discarded).
inline double quad_form(const ComplexMatrix &a, std::span<const cdouble> x)
{
    cdouble acc{};
    for (std::size_t i = 0; i < a.rows(); ++i) {
        cdouble ri{};
        for (std::size_t j = 0; j < a.cols(); ++j)
            ri += a(i, j) * x[j];
        acc += std::conj(x[i]) * ri;
    }
    return acc.real();
}

// ------------------------------------------------------------------------
// Factorizations
// ------------------------------------------------------------------------

/// Cholesky factor A = L L^H of a Hermitian positive definite matrix.
class Cholesky {
  public:
    static constexpr double kPivotTolerance = 1e-14;

    explicit Cholesky(const ComplexMatrix &a) : n_(a.rows()), l_(a.rows(), a.rows())
    {
        if (a.rows() != a.cols())
            throw std::invalid_argument("Cholesky: matrix is not square");
        double scale = 0.0;
        for (std::size_t i = 0; i < n_; ++i)
            scale = std::max(scale, std::abs(a(i, i).real()));
        if (!(scale > 0.0))
            throw SingularMatrixError("Cholesky: zero diagonal");
        for (std::size_t j = 0; j < n_; ++j) {
            double d = a(j, j).real();
            for (std::size_t k = 0; k < j; ++k)
                d -= std::norm(l_(j, k));
            if (!(d > kPivotTolerance * scale))
                throw SingularMatrixError("Cholesky: matrix is not positive definite (pivot " + std::to_string(j) + ")");
            const double ljj = std::sqrt(d);
            l_(j, j) = ljj;
            for (std::size_t i = j + 1; i < n_; ++i) {
                cdouble s = a(i, j);
                for (std::size_t k = 0; k < j; ++k)
                    s -= l_(i, k) * std::conj(l_(j, k));
                l_(i, j) = s / ljj;
            }
        }
    }

    std::size_t size() const noexcept { return n_; }

    ComplexVector solve(std::span<const cdouble> b) const
    {
        if (b.size() != n_)
            throw std::invalid_argument("Cholesky::solve: dimension mismatch");
        ComplexVector y(b.begin(), b.end());
        for (std::size_t i = 0; i < n_; ++i) {
            cdouble s = y[i];
            for (std::size_t k = 0; k < i; ++k)
                s -= l_(i, k) * y[k];
            y[i] = s / l_(i, i).real();
        }
        for (std::size_t ii = n_; ii-- > 0;) {
            cdouble s = y[ii];
            for (std::size_t k = ii + 1; k < n_; ++k)
                s -= std::conj(l_(k, ii)) * y[k];
            y[ii] = s / l_(ii, ii).real();
        }
        return y;
    }

    /// b^H A^{-1} b, computed as ||L^{-1} b||^2.
    double inverse_quad(std::span<const cdouble> b) const
    {
        ComplexVector y(b.begin(), b.end());
        double acc = 0.0;
        for (std::size_t i = 0; i < n_; ++i) {
            cdouble s = y[i];
            for (std::size_t k = 0; k < i; ++k)
                s -= l_(i, k) * y[k];
            y[i] = s / l_(i, i).real();
            acc += std::norm(y[i]);
        }
        return acc;
    }

    const ComplexMatrix &factor() const noexcept { return l_; }

  private:
    std::size_t n_;
    ComplexMatrix l_;
};

/// Solves A x = b for Hermitian positive definite A.
inline ComplexVector hermitian_solve(const ComplexMatrix &a, std::span<const cdouble> b)
{
    if (a.rows() != b.size())
        throw std::invalid_argument("hermitian_solve: dimension mismatch");
    return Cholesky(a).solve(b);
}

inline ComplexVector hermitian_solve(const ComplexMatrix &a, const ComplexVector &b)
{
    return hermitian_solve(a, std::span<const cdouble>(b));
}

/// Solves G x = b for a general real square matrix by LU with partial pivoting
/// after row and column equilibration. Throws SingularMatrixError when G is
/// numerically singular.
inline RealVector solve_linear_real(RealMatrix g, RealVector b)
{
    const std::size_t n = g.rows();
    if (g.cols() != n || b.size() != n)
        throw std::invalid_argument("solve_linear_real: dimension mismatch");
    for (std::size_t r = 0; r < n; ++r) {
        double m = 0.0;
        for (std::size_t c = 0; c < n; ++c)
            m = std::max(m, std::abs(g(r, c)));
        if (!(m > 0.0) || !std::isfinite(m))
            throw SingularMatrixError("solve_linear_real: zero row (ill-posed power recovery)");
        for (std::size_t c = 0; c < n; ++c)
            g(r, c) /= m;
        b[r] /= m;
    }
    RealVector col_scale(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t r = 0; r < n; ++r)
            col_scale[c] = std::max(col_scale[c], std::abs(g(r, c)));
        if (!(col_scale[c] > 0.0))
            throw SingularMatrixError("solve_linear_real: zero column (ill-posed power recovery)");
        for (std::size_t r = 0; r < n; ++r)
            g(r, c) /= col_scale[c];
    }
    const double scale = 1.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(g(r, c)) > std::abs(g(piv, c)))
                piv = r;
        if (std::abs(g(piv, c)) <= 1e-14 * scale)
            throw SingularMatrixError("solve_linear_real: singular system (ill-posed power recovery)");
        if (piv != c) {
            for (std::size_t j = 0; j < n; ++j)
                std::swap(g(c, j), g(piv, j));
            std::swap(b[c], b[piv]);
        }
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = g(r, c) / g(c, c);
            if (f == 0.0)
                continue;
            for (std::size_t j = c; j < n; ++j)
                g(r, j) -= f * g(c, j);
            b[r] -= f * b[c];
        }
    }
    RealVector x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t j = ii + 1; j < n; ++j)
            s -= g(ii, j) * x[j];
        x[ii] = s / g(ii, ii);
    }
    for (std::size_t c = 0; c < n; ++c)
        x[c] /= col_scale[c];
    return x;
}

// ------------------------------------------------------------------------
// Bessel functions of the first kind, orders 1 and 3
// ------------------------------------------------------------------------

namespace detail {

inline constexpr double kBesselSeriesLimit = 12.0;

// Ascending series sum_m (-1)^m (x/2)^(2m+n) / (m! (m+n)!).
inline double bessel_series(int n, double x)
{
    const double half = 0.5 * x;
    double term = 1.0;
    for (int i = 1; i <= n; ++i)
        term *= half / i;
    double sum = term;
    const double q = half * half;
    for (int m = 1; m < 200; ++m) {
        term *= -q / (static_cast<double>(m) * (m + n));
        sum += term;
        if (std::abs(term) < 1e-17 * std::abs(sum) && m > q)
            break;
    }
    return sum;
}

// Hankel asymptotic expansion, truncated at the smallest term.
inline double bessel_asymptotic(int n, double x)
{
    const double mu = 4.0 * n * n;
    const double z = 8.0 * x;
    double p = 1.0;
    double q = 0.0;
    double term = 1.0;
    double last = std::numeric_limits<double>::infinity();
    for (int k = 1; k < 60; ++k) {
        const double odd = 2.0 * k - 1.0;
        const double next = term * (mu - odd * odd) / (k * z);
        if (std::abs(next) >= std::abs(last) && k > 2)
            break;
        last = next;
        term = next;
        // k odd feeds Q, k even feeds P; signs alternate in pairs.
        const double sign = ((k / 2) % 2 == 0) ? 1.0 : -1.0;
        if (k % 2 == 1)
            q += sign * term;
        else
            p += sign * term;
        if (std::abs(term) < 1e-17)
            break;
    }
    const double chi = x - (0.5 * n + 0.25) * std::numbers::pi;
    return std::sqrt(2.0 / (std::numbers::pi * x)) * (p * std::cos(chi) - q * std::sin(chi));
}

} // namespace detail

/// J_order(x) for order in {1, 3}.
inline double bessel_j(int order, double x)
{
    if (order != 1 && order != 3)
        throw std::invalid_argument("bessel_j: only orders 1 and 3 are supported");
    if (x < 0.0)
        return (order % 2 ? -1.0 : 1.0) * bessel_j(order, -x);
    if (x <= detail::kBesselSeriesLimit)
        return detail::bessel_series(order, x);
    return detail::bessel_asymptotic(order, x);
}

} // namespace mbsat
