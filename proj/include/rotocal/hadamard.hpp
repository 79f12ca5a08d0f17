#pragma once

#include <cmath>
#include <utility>

#include "rotocal/matrix.hpp"
#include "rotocal/rng.hpp"

namespace rotocal {

inline bool is_power_of_two(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

/// Unscaled Walsh–Hadamard matrix H_n with entries ±1 (Sylvester construction).
inline Matrix walsh_hadamard(std::size_t n) {
    require(is_power_of_two(n), "walsh_hadamard: dimension must be a power of two");
    Matrix h(n, n, 1.0);
    for (std::size_t block = 1; block < n; block <<= 1) {
        for (std::size_t i = 0; i < block; ++i) {
            for (std::size_t j = 0; j < block; ++j) {
                h(i + block, j) = h(i, j);
                h(i, j + block) = h(i, j);
                h(i + block, j + block) = -h(i, j);
            }
        }
    }
    return h;
}

/// (1/√n)·H_n·D with D = diag(±1) drawn from the seed. Orthogonal by
/// construction; dimensions that are not powers of two are rejected.
inline Matrix random_hadamard(std::size_t n, std::uint64_t seed) {
    require(is_power_of_two(n), "random_hadamard: dimension must be a power of two");
    Matrix h = walsh_hadamard(n);
    Rng rng(seed);
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
    Vector d(n);
    for (std::size_t j = 0; j < n; ++j) d[j] = rng.sign() * inv_sqrt_n;
    for (std::size_t i = 0; i < n; ++i) {
        double* hi = h.row(i);
        for (std::size_t j = 0; j < n; ++j) hi[j] *= d[j];
    }
    return h;
}

/// Returns (‖x‖₂, ‖r·x‖₂); equal up to rounding whenever r is orthogonal.
inline std::pair<double, double> norm_preservation_check(const Matrix& r,
                                                         const Vector& x) {
    require(r.cols() == x.size(), "norm_preservation_check: shape mismatch");
    require(orthogonality_error(r) < 1e-8,
            "norm_preservation_check: r is not orthogonal");
    const Vector rx = matvec(r, x);
    return {norm2(x), norm2(rx)};
}

}  // namespace rotocal
