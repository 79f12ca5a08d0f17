#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "rotocal/activation_batch.hpp"
#include "rotocal/matrix.hpp"
#include "rotocal/rng.hpp"

namespace rotocal {

/// Zero-location Laplace model of activation values.
struct LaplaceModel {
    double b = 1.0;  // scale, > 0

    void validate() const { require(b > 0.0, "LaplaceModel: scale b must be > 0"); }
};

inline double laplace_pdf(const LaplaceModel& model, double x) {
    model.validate();
    return std::exp(-std::abs(x) / model.b) / (2.0 * model.b);
}

/// CDF-based map sending Laplace(0, b) to Uniform(−τ, τ):
///   x ≤ 0 ↦ τ(e^{x/b} − 1),  x > 0 ↦ τ(1 − e^{−x/b}).
/// Strictly increasing and odd, with range (−τ, τ).
inline double uniformize(const LaplaceModel& model, double tau, double x) {
    model.validate();
    require(tau > 0.0, "uniformize: tau must be > 0");
    if (x <= 0.0) return tau * (std::exp(x / model.b) - 1.0);
    return tau * (1.0 - std::exp(-x / model.b));
}

/// Inverse-CDF Laplace draw from a uniform in (0, 1).
inline double laplace_inverse_cdf(const LaplaceModel& model, double u) {
    const double centered = u - 0.5;
    const double mag = std::abs(centered);
    const double x = -model.b * std::log(1.0 - 2.0 * mag);
    return centered < 0.0 ? -x : x;
}

/// T×C batch of i.i.d. Laplace draws; bit-reproducible per seed.
inline ActivationBatch sample_laplace(const LaplaceModel& model, std::size_t t,
                                      std::size_t c, std::uint64_t seed) {
    model.validate();
    require(t >= 1 && c >= 1, "sample_laplace: t and c must be >= 1");
    ActivationBatch batch;
    batch.tokens = Matrix(t, c);
    batch.source = BatchSource::synthetic;
    batch.layer_label = "synthetic-laplace";
    Rng rng(seed);
    for (std::size_t i = 0; i < t * c; ++i) {
        batch.tokens.data()[i] = laplace_inverse_cdf(model, rng.uniform_open());
    }
    return batch;
}

struct MomentSummary {
    double mean = 0.0;
    double variance = 0.0;         // unbiased (n − 1 denominator)
    double excess_kurtosis = 0.0;  // Gaussian ↦ 0 convention
    bool kurtosis_defined = true;  // false for (near-)constant data
    std::size_t sample_count = 0;
};

/// Pooled moments over every value of the batch.
inline MomentSummary moments(const ActivationBatch& x) {
    const std::size_t n = x.tokens.size();
    require(n >= 2, "moments: need at least 2 samples");

    MomentSummary s;
    s.sample_count = n;
    const auto& v = x.tokens.values();
    s.mean = pairwise_sum(v) / static_cast<double>(n);

    Vector sq(n), quart(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = v[i] - s.mean;
        const double d2 = d * d;
        sq[i] = d2;
        quart[i] = d2 * d2;
    }
    const double m2 = pairwise_sum(sq) / static_cast<double>(n);
    const double m4 = pairwise_sum(quart) / static_cast<double>(n);
    s.variance = pairwise_sum(sq) / static_cast<double>(n - 1);

    if (m2 <= 0.0) {
        s.kurtosis_defined = false;
        s.excess_kurtosis = 0.0;
    } else {
        s.excess_kurtosis = m4 / (m2 * m2) - 3.0;
    }
    return s;
}

/// Maximum-likelihood Laplace scale fit, b̂ = mean |x − median|.
inline LaplaceModel fit_laplace_scale(const ActivationBatch& x) {
    Vector v = x.tokens.values();
    require(!v.empty(), "fit_laplace_scale: empty batch");
    auto mid = v.begin() + v.size() / 2;
    std::nth_element(v.begin(), mid, v.end());
    const double median = *mid;
    double acc = 0.0;
    for (double xi : x.tokens.values()) acc += std::abs(xi - median);
    LaplaceModel m;
    m.b = std::max(acc / static_cast<double>(v.size()), 1e-300);
    return m;
}

}  // namespace rotocal
