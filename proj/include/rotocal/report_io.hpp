#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "rotocal/calibrator.hpp"

namespace rotocal {

inline constexpr const char* kToolVersion = "0.1.0";

/// CalibrationReport → JSON document, field for field. Doubles are emitted
/// in shortest-round-trip form, so every loss value reloads bit-exactly.
inline nlohmann::json report_to_json(const CalibrationReport& report) {
    const CalibrationConfig& cfg = report.config_echo;
    nlohmann::json cfg_json = {
        {"objective", objective_name(cfg.objective.variant)},
        {"optimizer", optimizer_name(cfg.optimizer.variant)},
        {"lr", cfg.optimizer.lr},
        {"momentum_beta", cfg.optimizer.momentum_beta},
        {"cayley_q", cfg.optimizer.cayley.q},
        {"cayley_s", cfg.optimizer.cayley.s},
        {"cayley_eps", cfg.optimizer.cayley.eps},
        {"token_sample_ratio", cfg.token_sample_ratio},
        {"seed", cfg.seed},
        {"batch_size", cfg.batch_size},
        {"epochs", cfg.epochs},
        {"eval_bits", cfg.eval_bits},
    };
    if (cfg.max_iters != std::numeric_limits<std::size_t>::max()) {
        cfg_json["max_iters"] = cfg.max_iters;
    }
    cfg_json["tau_outlier"] = cfg.tau_outlier ? nlohmann::json(*cfg.tau_outlier)
                                              : nlohmann::json("auto");

    nlohmann::json flops = nlohmann::json::object();
    for (const auto& [label, count] : report.flops.by_label()) flops[label] = count;
    flops["total"] = report.flops.total();

    return nlohmann::json{
        {"tool", "rotocal"},
        {"version", kToolVersion},
        {"config", cfg_json},
        {"loss_trace", report.loss_trace},
        {"initial_loss", report.initial_loss},
        {"final_loss", report.final_loss},
        {"loss_movement_rel", report.loss_movement_rel},
        {"outliers_before", report.outliers_before},
        {"outliers_after", report.outliers_after},
        {"tau_used", report.tau_used},
        {"quant_mse_before", report.quant_mse_before},
        {"quant_mse_after", report.quant_mse_after},
        {"flops", flops},
        {"wall_time_seconds", report.wall_time_seconds},
        {"final_orthogonality_error", report.final_orthogonality_error},
        {"steps_executed", report.steps_executed},
        {"reorth_events", report.reorth_events},
    };
}

inline void write_report(const std::string& path, const CalibrationReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("report_io: cannot open for writing: " + path);
    out << report_to_json(report).dump(2) << "\n";
    if (!out) throw std::runtime_error("report_io: write failed: " + path);
}

inline nlohmann::json read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("report_io: cannot open for reading: " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

}  // namespace rotocal
