#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "rotocal/matrix.hpp"
#include "rotocal/quantizer.hpp"

namespace rotocal {

enum class ObjectiveVariant { whip, variance, kurtosis, quant_loss };

struct ObjectiveKind {
    ObjectiveVariant variant = ObjectiveVariant::whip;
    std::optional<QuantConfig> quant_cfg;  // required iff variant == quant_loss

    void validate() const {
        const bool has_cfg = quant_cfg.has_value();
        require(has_cfg == (variant == ObjectiveVariant::quant_loss),
                "ObjectiveKind: quant_cfg present iff variant is quant_loss");
        if (has_cfg) quant_cfg->validate();
    }

    static ObjectiveKind whip() { return {ObjectiveVariant::whip, std::nullopt}; }
    static ObjectiveKind variance() { return {ObjectiveVariant::variance, std::nullopt}; }
    static ObjectiveKind kurtosis() { return {ObjectiveVariant::kurtosis, std::nullopt}; }
    static ObjectiveKind quant_loss(QuantConfig cfg) {
        return {ObjectiveVariant::quant_loss, cfg};
    }
};

inline std::string objective_name(ObjectiveVariant v) {
    switch (v) {
        case ObjectiveVariant::whip: return "whip";
        case ObjectiveVariant::variance: return "variance";
        case ObjectiveVariant::kurtosis: return "kurtosis";
        case ObjectiveVariant::quant_loss: return "quant";
    }
    return "unknown";
}

struct ObjectiveValue {
    double loss = 0.0;
    Matrix grad;  // ∂loss/∂o, same shape as o
};

/// Mean over tokens of Σ_c exp(−|o_c|). Per-token value lies in (0, C];
/// minimizing it pushes small entries away from zero.
inline double whip_loss(const Matrix& o) {
    require(all_finite(o), "whip_loss: non-finite input");
    const std::size_t t = o.rows();
    Vector per_token(t);
    Vector terms(o.cols());
    for (std::size_t i = 0; i < t; ++i) {
        const double* oi = o.row(i);
        for (std::size_t j = 0; j < o.cols(); ++j) terms[j] = std::exp(-std::abs(oi[j]));
        per_token[i] = pairwise_sum(terms);
    }
    return pairwise_sum(per_token) / static_cast<double>(t);
}

/// Whip loss with its analytic gradient −sign(o)·exp(−|o|)/T
/// (subgradient 0 at o = 0).
inline ObjectiveValue whip_loss_grad(const Matrix& o) {
    require(all_finite(o), "whip_loss_grad: non-finite input");
    const std::size_t t = o.rows();
    const double inv_t = 1.0 / static_cast<double>(t);
    ObjectiveValue out;
    out.grad = Matrix(t, o.cols());
    Vector per_token(t);
    Vector terms(o.cols());
    for (std::size_t i = 0; i < t; ++i) {
        const double* oi = o.row(i);
        double* gi = out.grad.row(i);
        for (std::size_t j = 0; j < o.cols(); ++j) {
            const double e = std::exp(-std::abs(oi[j]));
            terms[j] = e;
            const double s = oi[j] > 0.0 ? 1.0 : (oi[j] < 0.0 ? -1.0 : 0.0);
            gi[j] = -s * e * inv_t;
        }
        per_token[i] = pairwise_sum(terms);
    }
    out.loss = pairwise_sum(per_token) / static_cast<double>(t);
    return out;
}

/// Mean over tokens of the per-token second moment (1/C)Σ o². Activations
/// are modeled as zero-mean, which makes this exactly the population
/// variance there — and makes the loss invariant under any orthogonal
/// rotation of the tokens, the degeneracy that rules it out as a
/// calibration objective.
inline double variance_loss(const Matrix& o) {
    require(all_finite(o), "variance_loss: non-finite input");
    const std::size_t t = o.rows();
    const std::size_t c = o.cols();
    Vector per_token(t);
    Vector sq(c);
    for (std::size_t i = 0; i < t; ++i) {
        const double* oi = o.row(i);
        for (std::size_t j = 0; j < c; ++j) sq[j] = oi[j] * oi[j];
        per_token[i] = pairwise_sum(sq) / static_cast<double>(c);
    }
    return pairwise_sum(per_token) / static_cast<double>(t);
}

inline ObjectiveValue variance_loss_grad(const Matrix& o) {
    ObjectiveValue out;
    out.loss = variance_loss(o);
    const double coeff = 2.0 / static_cast<double>(o.rows() * o.cols());
    out.grad = Matrix(o.rows(), o.cols());
    for (std::size_t i = 0; i < o.size(); ++i) out.grad.data()[i] = coeff * o.data()[i];
    return out;
}

/// Mean over tokens of the per-token excess kurtosis m₄/m₂² − 3
/// (population moments). Tokens with m₂ ≤ 1e-12 are rejected.
inline ObjectiveValue kurtosis_loss_grad(const Matrix& o) {
    require(all_finite(o), "kurtosis_loss_grad: non-finite input");
    const std::size_t t = o.rows();
    const std::size_t c = o.cols();
    const double cd = static_cast<double>(c);
    ObjectiveValue out;
    out.grad = Matrix(t, c);
    Vector per_token(t);
    Vector buf(c);
    for (std::size_t i = 0; i < t; ++i) {
        const double* oi = o.row(i);
        for (std::size_t j = 0; j < c; ++j) buf[j] = oi[j];
        const double mu = pairwise_sum(buf) / cd;
        double m2 = 0.0, m3 = 0.0, m4 = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = oi[j] - mu;
            const double d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        m2 /= cd;
        m3 /= cd;
        m4 /= cd;
        require(m2 > 1e-12, "kurtosis_loss: token variance below 1e-12");
        per_token[i] = m4 / (m2 * m2) - 3.0;

        // ∂k/∂o_j = (4/(C·m₂²))·(d³ − m₃ − (m₄/m₂)·d), then /T for the mean.
        const double scale = 4.0 / (cd * m2 * m2 * static_cast<double>(t));
        const double ratio = m4 / m2;
        double* gi = out.grad.row(i);
        for (std::size_t j = 0; j < c; ++j) {
            const double d = oi[j] - mu;
            gi[j] = scale * (d * d * d - m3 - ratio * d);
        }
    }
    out.loss = pairwise_sum(per_token) / static_cast<double>(t);
    return out;
}

inline double kurtosis_loss(const Matrix& o) { return kurtosis_loss_grad(o).loss; }

/// Fake-quantization mse with a straight-through estimator: the rounding
/// step is treated as identity inside the clamp range and zero outside,
/// with scale and zero-point detached.
inline ObjectiveValue quant_objective_grad(const Matrix& o, const QuantConfig& cfg) {
    require(all_finite(o), "quant_objective: non-finite input");
    ActivationBatch batch;
    batch.tokens = o;
    const QuantResult qr = fake_quantize(batch, cfg);
    const double qmax = cfg.qmax();

    ObjectiveValue out;
    out.loss = qr.mse;
    out.grad = Matrix(o.rows(), o.cols());
    const double coeff = 2.0 / static_cast<double>(o.size());
    for (std::size_t i = 0; i < o.rows(); ++i) {
        const double* oi = o.row(i);
        const double* di = qr.dequantized.row(i);
        double* gi = out.grad.row(i);
        const double scale = qr.per_token_scale[i];
        const double zero = static_cast<double>(qr.per_token_zero[i]);
        for (std::size_t j = 0; j < o.cols(); ++j) {
            const double q = std::nearbyint(oi[j] / scale) + zero;
            const bool inside = q >= 0.0 && q <= qmax;
            gi[j] = inside ? coeff * (di[j] - oi[j]) : 0.0;
        }
    }
    return out;
}

inline double quant_objective(const Matrix& o, const QuantConfig& cfg) {
    ActivationBatch batch;
    batch.tokens = o;
    return fake_quantize(batch, cfg).mse;
}

inline ObjectiveValue evaluate_objective(const Matrix& o, const ObjectiveKind& kind) {
    kind.validate();
    switch (kind.variant) {
        case ObjectiveVariant::whip: return whip_loss_grad(o);
        case ObjectiveVariant::variance: return variance_loss_grad(o);
        case ObjectiveVariant::kurtosis: return kurtosis_loss_grad(o);
        case ObjectiveVariant::quant_loss: return quant_objective_grad(o, *kind.quant_cfg);
    }
    throw std::invalid_argument("evaluate_objective: unknown variant");
}

}  // namespace rotocal
