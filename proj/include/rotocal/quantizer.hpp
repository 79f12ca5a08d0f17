#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rotocal/activation_batch.hpp"
#include "rotocal/matrix.hpp"

namespace rotocal {

enum class QuantScheme { per_token_asymmetric };

struct QuantConfig {
    int bits = 4;
    QuantScheme scheme = QuantScheme::per_token_asymmetric;

    void validate() const { require(bits >= 2 && bits <= 8, "QuantConfig: bits must be in [2, 8]"); }
    double qmax() const { return static_cast<double>((1 << bits) - 1); }
};

struct QuantResult {
    Matrix dequantized;
    Vector per_token_scale;
    std::vector<std::int64_t> per_token_zero;
    double mse = 0.0;
};

namespace detail {

/// True iff every row entry sits exactly on the grid {(q − zero)·scale}.
/// Rows that are already a quantizer output pass through unchanged, which
/// is what makes quantize∘dequantize idempotent at the bit level: the
/// rescaled grid recovered from a dequantized row can drift by an ulp, so
/// the candidate scale is searched within ±2 ulp.
inline bool row_on_grid(const double* x, std::size_t c, double scale, double qmax,
                        std::int64_t& zero_out) {
    if (!(scale > 0.0)) return false;
    double mn = x[0];
    for (std::size_t j = 1; j < c; ++j) mn = std::min(mn, x[j]);
    const double zero = std::nearbyint(-mn / scale);
    if (std::abs(zero) > 1e15) return false;
    for (std::size_t j = 0; j < c; ++j) {
        const double q = std::nearbyint(x[j] / scale) + zero;
        if (q < 0.0 || q > qmax) return false;
        if ((q - zero) * scale != x[j]) return false;
    }
    zero_out = static_cast<std::int64_t>(zero);
    return true;
}

}  // namespace detail

/// Per-token asymmetric fake quantization: each row gets
///   scale = (max − min)/(2^bits − 1), zero = round(−min/scale),
///   q = clamp(round(x/scale) + zero, 0, 2^bits − 1), deq = (q − zero)·scale.
/// Rounding is round-half-even. Constant rows and rows already exactly on a
/// quantization grid dequantize to themselves bit-exactly.
inline QuantResult fake_quantize(const ActivationBatch& x, const QuantConfig& cfg) {
    cfg.validate();
    x.validate();
    const std::size_t t = x.token_count();
    const std::size_t c = x.channels();
    const double qmax = cfg.qmax();

    QuantResult out;
    out.dequantized = Matrix(t, c);
    out.per_token_scale.resize(t);
    out.per_token_zero.resize(t);

    Vector row_mse(t, 0.0);
    for (std::size_t i = 0; i < t; ++i) {
        const double* xi = x.tokens.row(i);
        double* di = out.dequantized.row(i);
        double mn = xi[0], mx = xi[0];
        for (std::size_t j = 1; j < c; ++j) {
            mn = std::min(mn, xi[j]);
            mx = std::max(mx, xi[j]);
        }

        if (mx == mn) {
            out.per_token_scale[i] = 1.0;
            out.per_token_zero[i] = 0;
            for (std::size_t j = 0; j < c; ++j) di[j] = xi[j];
            continue;
        }

        const double scale = (mx - mn) / qmax;
        const double candidates[5] = {scale, std::nextafter(scale, 0.0),
                                      std::nextafter(scale, 2.0 * scale),
                                      std::nextafter(std::nextafter(scale, 0.0), 0.0),
                                      std::nextafter(std::nextafter(scale, 2.0 * scale), 2.0 * scale)};
        bool on_grid = false;
        for (double cand : candidates) {
            std::int64_t zero = 0;
            if (detail::row_on_grid(xi, c, cand, qmax, zero)) {
                out.per_token_scale[i] = cand;
                out.per_token_zero[i] = zero;
                for (std::size_t j = 0; j < c; ++j) di[j] = xi[j];
                on_grid = true;
                break;
            }
        }
        if (on_grid) continue;

        const double zero = std::nearbyint(-mn / scale);
        out.per_token_scale[i] = scale;
        out.per_token_zero[i] = static_cast<std::int64_t>(zero);
        Vector sq(c);
        for (std::size_t j = 0; j < c; ++j) {
            double q = std::nearbyint(xi[j] / scale) + zero;
            q = std::clamp(q, 0.0, qmax);
            di[j] = (q - zero) * scale;
            const double err = di[j] - xi[j];
            sq[j] = err * err;
        }
        row_mse[i] = pairwise_sum(sq);
    }

    out.mse = pairwise_sum(row_mse) / static_cast<double>(t * c);
    return out;
}

/// Per-token count of entries with |x| > tau.
inline std::vector<std::int64_t> count_outliers(const ActivationBatch& x, double tau) {
    require(tau > 0.0, "count_outliers: tau must be > 0");
    std::vector<std::int64_t> counts(x.token_count(), 0);
    for (std::size_t i = 0; i < x.token_count(); ++i) {
        const double* xi = x.tokens.row(i);
        std::int64_t n = 0;
        for (std::size_t j = 0; j < x.channels(); ++j) {
            if (std::abs(xi[j]) > tau) ++n;
        }
        counts[i] = n;
    }
    return counts;
}

inline std::int64_t total_outliers(const ActivationBatch& x, double tau) {
    std::int64_t total = 0;
    for (std::int64_t n : count_outliers(x, tau)) total += n;
    return total;
}

/// Default outlier threshold: 4× the root-mean-square of the batch.
inline double default_outlier_threshold(const ActivationBatch& x) {
    const auto& v = x.tokens.values();
    Vector sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) sq[i] = v[i] * v[i];
    const double rms = std::sqrt(pairwise_sum(sq) / static_cast<double>(v.size()));
    return 4.0 * rms;
}

/// Quantization error of the batch measured in the rotated space x·r.
inline double quant_error_of_rotation(const ActivationBatch& x, const Matrix& r,
                                      const QuantConfig& cfg) {
    require(x.channels() == r.rows(), "quant_error_of_rotation: dimension mismatch");
    require(orthogonality_error(r) < 1e-8, "quant_error_of_rotation: r is not orthogonal");
    ActivationBatch rotated = x;
    rotated.tokens = matmul(x.tokens, r);
    return fake_quantize(rotated, cfg).mse;
}

}  // namespace rotocal
