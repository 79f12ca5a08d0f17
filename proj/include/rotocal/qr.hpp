#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "rotocal/matrix.hpp"

namespace rotocal {

/// One Householder reflection of the factorization, kept so the
/// decomposition can be differentiated in reverse.
struct HouseholderStep {
    Vector v;       // normalized reflector, length n - k
    double x_norm;  // ‖x‖ of the eliminated column segment
    double u_norm;  // ‖x + sign(x₀)‖x‖e₁‖ before normalization
    double sign;    // sign(x₀), with sign(0) = +1
    bool skipped;   // column segment was exactly zero
};

struct QrFactors {
    Matrix q;                                      // orthogonal factor, diag(r) ≥ 0 convention
    Matrix r;                                      // upper triangular, exact zeros below diagonal
    std::vector<HouseholderStep> householder_vectors;  // reflection tape for the backward pass
    std::vector<double> diag_signs;                // row/column sign fix applied to reach diag(r) ≥ 0
};

namespace detail {

/// Apply H = I - 2vvᵀ to rows k.. of columns [col_begin, col_end) of m,
/// where v lives on rows k..n-1.
inline void apply_reflection(Matrix& m, const Vector& v, std::size_t k,
                             std::size_t col_begin, std::size_t col_end,
                             Vector& scratch) {
    const std::size_t n = m.rows();
    scratch.assign(col_end - col_begin, 0.0);
    for (std::size_t i = k; i < n; ++i) {
        const double vi = v[i - k];
        const double* mi = m.row(i);
        for (std::size_t j = col_begin; j < col_end; ++j) scratch[j - col_begin] += vi * mi[j];
    }
    for (std::size_t i = k; i < n; ++i) {
        const double tv = 2.0 * v[i - k];
        double* mi = m.row(i);
        for (std::size_t j = col_begin; j < col_end; ++j) mi[j] -= tv * scratch[j - col_begin];
    }
}

}  // namespace detail

/// Householder QR of a square matrix with the deterministic sign convention
/// diag(r) ≥ 0. Records ~(4/3)n³ multiply-adds when a counter is supplied.
inline QrFactors householder_qr(const Matrix& a, FlopCounter* counter = nullptr) {
    require(a.is_square(), "householder_qr: input must be square");
    require(a.rows() >= 1, "householder_qr: input must be non-empty");
    require(all_finite(a), "householder_qr: input has non-finite entries");

    const std::size_t n = a.rows();
    QrFactors f;
    f.r = a;
    f.householder_vectors.reserve(n > 0 ? n - 1 : 0);
    std::uint64_t madds = 0;
    Vector scratch;

    for (std::size_t k = 0; k + 1 < n; ++k) {
        const std::size_t m = n - k;
        HouseholderStep step;
        step.v.resize(m);

        double x0 = f.r(k, k);
        double xsq = 0.0;
        for (std::size_t i = k; i < n; ++i) {
            const double xi = f.r(i, k);
            xsq += xi * xi;
            step.v[i - k] = xi;
        }
        madds += m;
        step.x_norm = std::sqrt(xsq);
        step.sign = x0 < 0.0 ? -1.0 : 1.0;

        if (step.x_norm == 0.0) {
            step.u_norm = 0.0;
            step.skipped = true;
            f.householder_vectors.push_back(std::move(step));
            continue;
        }
        step.skipped = false;

        // v = (x + sign(x₀)‖x‖e₁) / ‖·‖
        step.v[0] += step.sign * step.x_norm;
        double usq = 0.0;
        for (double vi : step.v) usq += vi * vi;
        step.u_norm = std::sqrt(usq);
        for (double& vi : step.v) vi /= step.u_norm;
        madds += m;

        detail::apply_reflection(f.r, step.v, k, k + 1, n, scratch);
        madds += 2 * m * (m - 1);

        // Column k is known analytically; zero it exactly below the diagonal.
        f.r(k, k) = -step.sign * step.x_norm;
        for (std::size_t i = k + 1; i < n; ++i) f.r(i, k) = 0.0;

        f.householder_vectors.push_back(std::move(step));
    }

    // Accumulate q = H₀H₁···H_{n-2} by applying reflections to I in reverse
    // order, which keeps every update confined to the (k:, k:) block.
    f.q = Matrix::identity(n);
    for (std::size_t kk = n - 1; kk-- > 0;) {
        const HouseholderStep& step = f.householder_vectors[kk];
        if (step.skipped) continue;
        detail::apply_reflection(f.q, step.v, kk, kk, n, scratch);
        madds += 2 * (n - kk) * (n - kk);
    }

    // Sign fix: flip rows of r and columns of q so that diag(r) ≥ 0.
    f.diag_signs.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = f.r(i, i) < 0.0 ? -1.0 : 1.0;
        f.diag_signs[i] = d;
        if (d < 0.0) {
            for (std::size_t j = i; j < n; ++j) f.r(i, j) = -f.r(i, j);
            for (std::size_t j = 0; j < n; ++j) f.q(j, i) = -f.q(j, i);
        }
    }

    if (counter != nullptr) counter->add("householder_qr", madds);
    return f;
}

/// Reverse-mode gradient of the map a ↦ householder_qr(a).q: given
/// ∂L/∂q, returns ∂L/∂a. Differentiates through every retained reflection;
/// the diag(r) ≥ 0 sign fix is piecewise constant and treated as such.
inline Matrix qr_backward(const QrFactors& factors, const Matrix& grad_q) {
    const std::size_t n = factors.q.rows();
    require(grad_q.rows() == n && grad_q.cols() == n,
            "qr_backward: grad_q shape must match q");
    if (n == 1) return Matrix(1, 1, 0.0);  // q is the constant ±1 a.e.

    Vector scratch;

    // Undo the sign fix: q = q_house·D, r = D·r_house with D = diag_signs.
    Matrix qbar = grad_q;
    for (std::size_t j = 0; j < n; ++j) {
        if (factors.diag_signs[j] < 0.0) {
            for (std::size_t i = 0; i < n; ++i) qbar(i, j) = -qbar(i, j);
        }
    }
    Matrix q_house = factors.q;
    for (std::size_t j = 0; j < n; ++j) {
        if (factors.diag_signs[j] < 0.0) {
            for (std::size_t i = 0; i < n; ++i) q_house(i, j) = -q_house(i, j);
        }
    }
    Matrix r_house = factors.r;
    for (std::size_t i = 0; i < n; ++i) {
        if (factors.diag_signs[i] < 0.0) {
            for (std::size_t j = i; j < n; ++j) r_house(i, j) = -r_house(i, j);
        }
    }

    // Phase 1: walk the product q_house = H₀···H_{n-2} front to back and
    // collect each reflector's gradient contribution from the q side.
    //   cbar ← H_k·cbar,  c ← H_k·c  (involution: c starts at q_house and
    //   becomes the suffix product H_{k+1}···H_{n-2} after step k).
    std::vector<Vector> vbar_q(n - 1);
    {
        Matrix c = q_house;
        Matrix cbar = qbar;
        for (std::size_t k = 0; k + 1 < n; ++k) {
            const HouseholderStep& step = factors.householder_vectors[k];
            if (step.skipped) {
                vbar_q[k].clear();
                continue;
            }
            detail::apply_reflection(c, step.v, k, 0, n, scratch);  // c = suffix product
            const std::size_t m = n - k;
            Vector w1(n, 0.0), w2(n, 0.0);
            for (std::size_t i = k; i < n; ++i) {
                const double vi = step.v[i - k];
                const double* ci = c.row(i);
                const double* cbi = cbar.row(i);
                for (std::size_t j = 0; j < n; ++j) {
                    w1[j] += vi * ci[j];   // cᵀv
                    w2[j] += vi * cbi[j];  // cbarᵀv
                }
            }
            Vector vb(m, 0.0);
            for (std::size_t i = k; i < n; ++i) {
                vb[i - k] = -2.0 * (dot({cbar.row(i), n}, w1) + dot({c.row(i), n}, w2));
            }
            vbar_q[k] = std::move(vb);
            detail::apply_reflection(cbar, step.v, k, 0, n, scratch);
        }
    }

    // Phase 2: walk the elimination back to front. rcur is restored from
    // r_house step by step via the same involution; rbar accumulates ∂L/∂r_k.
    Matrix rcur = r_house;
    Matrix rbar(n, n, 0.0);
    for (std::size_t k = n - 1; k-- > 0;) {
        const HouseholderStep& step = factors.householder_vectors[k];
        if (step.skipped) continue;
        const std::size_t m = n - k;

        // Recover the pre-reflection block: columns j > k by involution,
        // column k exactly from the tape (x = ‖u‖·v − sign·‖x‖·e₁).
        detail::apply_reflection(rcur, step.v, k, k + 1, n, scratch);
        Vector x(m);
        for (std::size_t i = 0; i < m; ++i) x[i] = step.u_norm * step.v[i];
        x[0] -= step.sign * step.x_norm;
        for (std::size_t i = 0; i < m; ++i) rcur(k + i, k) = x[i];

        // Reflector gradient: q-side part plus the r-update part over
        // the reflected columns j > k.
        Vector vbar = vbar_q[k].empty() ? Vector(m, 0.0) : vbar_q[k];
        Vector w1(n - k - 1, 0.0), w2(n - k - 1, 0.0);
        for (std::size_t i = k; i < n; ++i) {
            const double vi = step.v[i - k];
            const double* ri = rcur.row(i);
            const double* rbi = rbar.row(i);
            for (std::size_t j = k + 1; j < n; ++j) {
                w1[j - k - 1] += vi * ri[j];
                w2[j - k - 1] += vi * rbi[j];
            }
        }
        for (std::size_t i = k; i < n; ++i) {
            double acc = 0.0;
            const double* ri = rcur.row(i);
            const double* rbi = rbar.row(i);
            for (std::size_t j = k + 1; j < n; ++j) {
                acc += rbi[j] * w1[j - k - 1] + ri[j] * w2[j - k - 1];
            }
            vbar[i - k] += -2.0 * acc;
        }

        // Gradient of the overwritten diagonal r_k(k,k) = −sign·‖x‖.
        const double diag_bar = rbar(k, k);

        // Through the normalization v = u/‖u‖, then u = x + sign·‖x‖e₁.
        Vector ubar(m);
        const double vdot = dot(step.v, vbar);
        for (std::size_t i = 0; i < m; ++i) {
            ubar[i] = (vbar[i] - step.v[i] * vdot) / step.u_norm;
        }
        Vector xbar(m);
        const double coeff = step.sign * ubar[0] / step.x_norm;
        const double diag_coeff = -step.sign * diag_bar / step.x_norm;
        for (std::size_t i = 0; i < m; ++i) {
            xbar[i] = ubar[i] + (coeff + diag_coeff) * x[i];
        }

        // Push ∂L/∂r_k back to ∂L/∂r_{k-1}: reflected columns flow through
        // H_k, the consumed column k is exactly xbar.
        detail::apply_reflection(rbar, step.v, k, k + 1, n, scratch);
        for (std::size_t i = 0; i < m; ++i) rbar(k + i, k) = xbar[i];
    }

    return rbar;
}

}  // namespace rotocal
