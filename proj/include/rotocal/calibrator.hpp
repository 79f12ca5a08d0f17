#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rotocal/activation_batch.hpp"
#include "rotocal/matrix.hpp"
#include "rotocal/objectives.hpp"
#include "rotocal/optimizers.hpp"
#include "rotocal/quantizer.hpp"
#include "rotocal/rng.hpp"

namespace rotocal {

struct CalibrationConfig {
    ObjectiveKind objective = ObjectiveKind::whip();
    OptimizerKind optimizer;  // defaults to qr_sgd, lr 1e-3
    std::size_t max_iters = std::numeric_limits<std::size_t>::max();
    double token_sample_ratio = 0.10;
    std::uint64_t seed = 1;
    std::size_t batch_size = 64;
    std::size_t epochs = 10;
    std::optional<double> tau_outlier;  // empty = 4·RMS of the batch
    int eval_bits = 4;                  // bit width for the report's mse numbers

    void validate() const {
        objective.validate();
        optimizer.validate();
        require(max_iters >= 1, "CalibrationConfig: max_iters must be >= 1");
        require(token_sample_ratio > 0.0 && token_sample_ratio <= 1.0,
                "CalibrationConfig: token_sample_ratio must be in (0, 1]");
        require(batch_size >= 1, "CalibrationConfig: batch_size must be >= 1");
        require(epochs >= 1, "CalibrationConfig: epochs must be >= 1");
        if (tau_outlier) require(*tau_outlier > 0.0, "CalibrationConfig: tau must be > 0");
        QuantConfig{eval_bits}.validate();
    }
};

struct CalibrationReport {
    Vector loss_trace;  // one entry per executed step, evaluated pre-update
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double loss_movement_rel = 0.0;
    std::int64_t outliers_before = 0;
    std::int64_t outliers_after = 0;
    double tau_used = 0.0;
    double quant_mse_before = 0.0;
    double quant_mse_after = 0.0;
    FlopCounter flops;
    double wall_time_seconds = 0.0;
    double final_orthogonality_error = 0.0;
    std::size_t steps_executed = 0;
    std::size_t reorth_events = 0;
    CalibrationConfig config_echo;
};

/// Thrown when the loss turns non-finite or blows past 10× its initial
/// value; carries everything recorded so far.
class CalibrationDivergence : public std::runtime_error {
  public:
    CalibrationDivergence(const std::string& what, CalibrationReport partial)
        : std::runtime_error(what), partial_(std::move(partial)) {}
    const CalibrationReport& partial_report() const { return partial_; }

  private:
    CalibrationReport partial_;
};

/// Uniform random subset of ⌈ratio·T⌉ token rows, without replacement,
/// order-preserving and deterministic per seed.
inline ActivationBatch token_sampling(const ActivationBatch& x, double ratio,
                                      std::uint64_t seed) {
    require(ratio > 0.0 && ratio <= 1.0, "token_sampling: ratio must be in (0, 1]");
    x.validate();
    const std::size_t t = x.token_count();
    const std::size_t keep = std::min<std::size_t>(
        t, static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(t))));

    std::vector<std::size_t> indices(t);
    for (std::size_t i = 0; i < t; ++i) indices[i] = i;
    Rng rng(seed);
    for (std::size_t i = 0; i < keep; ++i) {
        const std::size_t j = i + rng.uniform_index(t - i);
        std::swap(indices[i], indices[j]);
    }
    indices.resize(keep);
    std::sort(indices.begin(), indices.end());

    ActivationBatch out = x;
    out.tokens = Matrix(keep, x.channels());
    for (std::size_t i = 0; i < keep; ++i) {
        const double* src = x.tokens.row(indices[i]);
        std::copy(src, src + x.channels(), out.tokens.row(i));
    }
    return out;
}

namespace detail {

inline Matrix rows_slice(const Matrix& m, std::size_t begin, std::size_t end) {
    Matrix out(end - begin, m.cols());
    std::copy(m.row(begin), m.row(begin) + (end - begin) * m.cols(), out.data());
    return out;
}

inline double full_pass_loss(const Matrix& tokens, const Matrix& r,
                             const ObjectiveKind& objective) {
    const Matrix o = matmul(tokens, r);
    switch (objective.variant) {
        case ObjectiveVariant::whip: return whip_loss(o);
        case ObjectiveVariant::variance: return variance_loss(o);
        case ObjectiveVariant::kurtosis: return kurtosis_loss(o);
        case ObjectiveVariant::quant_loss: return quant_objective(o, *objective.quant_cfg);
    }
    throw std::invalid_argument("full_pass_loss: unknown objective");
}

}  // namespace detail

/// Full calibration loop: sample tokens, initialize the latent from a
/// random Hadamard, then run epochs of mini-batch steps of
///   r ← orth(z);  o ← x·r;  loss, ∂loss/∂o;  ∂loss/∂r = xᵀ·∂loss/∂o;  step.
/// Before/after metrics are computed on the full, unsampled batch.
inline std::pair<Matrix, CalibrationReport> calibrate(const ActivationBatch& x,
                                                      const CalibrationConfig& cfg) {
    cfg.validate();
    x.validate();
    require(is_power_of_two(x.channels()),
            "calibrate: channel count must be a power of two (Hadamard init)");

    const auto t_start = std::chrono::steady_clock::now();
    const std::size_t c = x.channels();

    CalibrationReport report;
    report.config_echo = cfg;
    report.tau_used = cfg.tau_outlier ? *cfg.tau_outlier : default_outlier_threshold(x);
    report.outliers_before = total_outliers(x, report.tau_used);
    const QuantConfig eval_cfg{cfg.eval_bits};
    report.quant_mse_before = fake_quantize(x, eval_cfg).mse;

    const ActivationBatch sampled = token_sampling(x, cfg.token_sample_ratio, cfg.seed);
    const std::size_t t_sampled = sampled.token_count();
    const std::size_t batches = (t_sampled + cfg.batch_size - 1) / cfg.batch_size;

    RotationState state = init_rotation_state(c, cfg.seed, cfg.optimizer);
    report.initial_loss = detail::full_pass_loss(sampled.tokens, state.r, cfg.objective);

    const std::size_t planned = cfg.epochs * batches;
    const std::size_t total_steps = std::min(planned, cfg.max_iters);

    auto finish_report = [&](const Matrix& r) {
        report.steps_executed = report.loss_trace.size();
        report.final_loss = detail::full_pass_loss(sampled.tokens, r, cfg.objective);
        report.loss_movement_rel =
            std::abs(report.final_loss - report.initial_loss) /
            std::max(std::abs(report.initial_loss), 1e-300);
        report.final_orthogonality_error = orthogonality_error(r);
        report.reorth_events = state.reorth_events;
        report.flops = state.flops;
        ActivationBatch rotated = x;
        rotated.tokens = matmul(x.tokens, r);
        report.outliers_after = total_outliers(rotated, report.tau_used);
        report.quant_mse_after = fake_quantize(rotated, eval_cfg).mse;
        report.wall_time_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs && step < total_steps; ++epoch) {
        for (std::size_t b = 0; b < batches && step < total_steps; ++b, ++step) {
            const std::size_t begin = b * cfg.batch_size;
            const std::size_t end = std::min(begin + cfg.batch_size, t_sampled);
            const Matrix xb = detail::rows_slice(sampled.tokens, begin, end);
            const Matrix o = matmul(xb, state.r);
            const ObjectiveValue value = evaluate_objective(o, cfg.objective);
            report.loss_trace.push_back(value.loss);

            const bool exploded =
                !std::isfinite(value.loss) ||
                (step > 0 && std::abs(value.loss) > 10.0 * std::abs(report.initial_loss) &&
                 std::abs(report.initial_loss) > 0.0);
            if (exploded) {
                finish_report(state.r);
                throw CalibrationDivergence(
                    "calibrate: loss diverged at step " + std::to_string(step), report);
            }

            const Matrix grad_r = matmul_at_b(xb, value.grad);
            try {
                if (cfg.optimizer.is_qr_variant()) {
                    state = qr_orth_step(std::move(state), grad_r, cfg.optimizer);
                } else {
                    state = cayley_sgd_step(std::move(state), grad_r, cfg.optimizer);
                }
            } catch (const DivergenceError& e) {
                finish_report(state.r);
                throw CalibrationDivergence(std::string("calibrate: ") + e.what(), report);
            }
        }
    }

    finish_report(state.r);
    return {state.r, report};
}

struct ObjectiveComparison {
    struct Entry {
        ObjectiveVariant variant;
        std::optional<CalibrationReport> report;  // empty when the run failed
        Matrix rotation;
        std::string error;
    };
    std::vector<Entry> entries;
};

/// Runs calibrate once per objective variant with identical seed, lr, and
/// schedule; per-variant failures are recorded without aborting siblings.
inline ObjectiveComparison compare_objectives(const ActivationBatch& x,
                                              const CalibrationConfig& cfg_base) {
    ObjectiveComparison result;
    const ObjectiveVariant variants[4] = {ObjectiveVariant::whip, ObjectiveVariant::variance,
                                          ObjectiveVariant::kurtosis,
                                          ObjectiveVariant::quant_loss};
    for (ObjectiveVariant v : variants) {
        CalibrationConfig cfg = cfg_base;
        cfg.objective = v == ObjectiveVariant::quant_loss
                            ? ObjectiveKind::quant_loss(QuantConfig{cfg_base.eval_bits})
                            : ObjectiveKind{v, std::nullopt};
        ObjectiveComparison::Entry entry;
        entry.variant = v;
        try {
            auto [r, report] = calibrate(x, cfg);
            entry.rotation = std::move(r);
            entry.report = std::move(report);
        } catch (const CalibrationDivergence& e) {
            entry.error = e.what();
            entry.report = e.partial_report();
        } catch (const std::exception& e) {
            entry.error = e.what();
        }
        result.entries.push_back(std::move(entry));
    }
    return result;
}

}  // namespace rotocal
