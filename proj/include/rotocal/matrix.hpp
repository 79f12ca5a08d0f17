#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rotocal {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Immutable by convention once built;
/// all mutating helpers are used only during construction of a value.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows_ = init.size();
        cols_ = rows_ > 0 ? init.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& row : init) {
            if (row.size() != cols_) {
                throw std::invalid_argument("Matrix: ragged initializer list");
            }
            data_.insert(data_.end(), row.begin(), row.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool is_square() const { return rows_ == cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& values() const { return data_; }

    bool operator==(const Matrix& other) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline bool all_finite(const Matrix& m) {
    for (double v : m.values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

/// Sum with a fixed pairwise reduction order; used wherever the result
/// feeds a reproducibility contract.
inline double pairwise_sum(std::span<const double> xs) {
    if (xs.size() <= 32) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = ai[k];
            const double* bk = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

/// aᵀ·b without forming the transpose.
inline Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), "matmul_at_b: row counts differ");
    Matrix c(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double* ak = a.row(k);
        const double* bk = b.row(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            double* ci = c.row(i);
            const double aki = ak[i];
            for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aki * bk[j];
        }
    }
    return c;
}

/// a·bᵀ without forming the transpose.
inline Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "matmul_a_bt: column counts differ");
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            ci[j] = dot({ai, a.cols()}, {b.row(j), b.cols()});
        }
    }
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "matrix add: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
    return c;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "matrix sub: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
    return c;
}

inline Matrix operator*(double s, const Matrix& a) {
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= s;
    return c;
}

inline Vector matvec(const Matrix& a, std::span<const double> x) {
    require(a.cols() == x.size(), "matvec: shape mismatch");
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot({a.row(i), a.cols()}, x);
    return y;
}

inline double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return std::sqrt(s);
}

inline double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.values()) m = std::max(m, std::abs(v));
    return m;
}

/// ‖rᵀr − I‖_F, the working definition of "how orthogonal" throughout.
inline double orthogonality_error(const Matrix& r) {
    require(r.is_square(), "orthogonality_error: matrix must be square");
    const Matrix g = matmul_at_b(r, r);
    double s = 0.0;
    for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) {
            const double d = g(i, j) - (i == j ? 1.0 : 0.0);
            s += d * d;
        }
    }
    return std::sqrt(s);
}

/// Multiply-add tally, tagged by operation label. Not thread-safe;
/// each counter is owned by a single run.
class FlopCounter {
  public:
    void add(std::string_view label, std::uint64_t madds) {
        counts_[std::string(label)] += madds;
        total_ += madds;
    }

    std::uint64_t total() const { return total_; }

    std::uint64_t get(std::string_view label) const {
        auto it = counts_.find(std::string(label));
        return it == counts_.end() ? 0 : it->second;
    }

    const std::map<std::string, std::uint64_t>& by_label() const { return counts_; }

  private:
    std::map<std::string, std::uint64_t> counts_;
    std::uint64_t total_ = 0;
};

}  // namespace rotocal
