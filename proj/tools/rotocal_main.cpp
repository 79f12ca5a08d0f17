// Command-line front end: synthetic activation generation, rotation
// calibration, quantization simulation, optimizer benchmarking, and the
// block-invariance checker.
//
// Exit codes: 0 success, 1 validation failure, 2 divergence,
// 3 invariance-suite failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "rotocal/rotocal.hpp"

namespace {

using namespace rotocal;

void print_kv(const std::string& key, double value) {
    std::printf("%s=%.17g\n", key.c_str(), value);
}

void print_kv(const std::string& key, std::uint64_t value) {
    std::printf("%s=%llu\n", key.c_str(), static_cast<unsigned long long>(value));
}

void print_kv(const std::string& key, std::int64_t value) {
    std::printf("%s=%lld\n", key.c_str(), static_cast<long long>(value));
}

void print_kv(const std::string& key, const std::string& value) {
    std::printf("%s=%s\n", key.c_str(), value.c_str());
}

ObjectiveKind parse_objective(const std::string& name, int bits) {
    if (name == "whip") return ObjectiveKind::whip();
    if (name == "variance") return ObjectiveKind::variance();
    if (name == "kurtosis") return ObjectiveKind::kurtosis();
    if (name == "quant") return ObjectiveKind::quant_loss(QuantConfig{bits});
    throw std::invalid_argument("unknown objective: " + name);
}

OptimizerVariant parse_optimizer(const std::string& name) {
    if (name == "qr_sgd") return OptimizerVariant::qr_sgd;
    if (name == "qr_momentum_sgd") return OptimizerVariant::qr_momentum_sgd;
    if (name == "qr_adam") return OptimizerVariant::qr_adam;
    if (name == "cayley_sgd") return OptimizerVariant::cayley_sgd;
    throw std::invalid_argument("unknown optimizer: " + name);
}

struct GenActsArgs {
    std::size_t rows = 4096;
    std::size_t cols = 128;
    double scale_b = 1.0;
    std::uint64_t seed = 1;
    std::string out;
};

int run_gen_acts(const GenActsArgs& args) {
    require(args.rows >= 1 && args.cols >= 1, "rows and cols must be >= 1");
    require(args.scale_b > 0.0, "scale-b must be > 0");
    if (!is_power_of_two(args.cols)) {
        std::fprintf(stderr,
                     "warning: cols=%zu is not a power of two; such a batch "
                     "cannot be calibrated with the Hadamard-initialized latent\n",
                     args.cols);
    }
    const ActivationBatch batch =
        sample_laplace(LaplaceModel{args.scale_b}, args.rows, args.cols, args.seed);
    tensor_io::write_matrix(args.out, batch.tokens, OriginDtype::real64);
    const MomentSummary m = moments(batch);
    print_kv("out", args.out);
    print_kv("rows", static_cast<std::uint64_t>(args.rows));
    print_kv("cols", static_cast<std::uint64_t>(args.cols));
    print_kv("bytes", static_cast<std::uint64_t>(std::filesystem::file_size(args.out)));
    print_kv("mean", m.mean);
    print_kv("variance", m.variance);
    print_kv("excess_kurtosis", m.excess_kurtosis);
    print_kv("sample_count", static_cast<std::uint64_t>(m.sample_count));
    return 0;
}

struct CalibrateArgs {
    std::string acts;
    std::string objective = "whip";
    std::string optimizer = "qr_sgd";
    double lr = 1e-3;
    std::size_t epochs = 10;
    std::size_t batch_size = 64;
    double sample_ratio = 0.10;
    int bits = 4;
    std::uint64_t seed = 1;
    double momentum_beta = 0.9;
    double tau = 0.0;  // 0 = auto
    std::size_t max_iters = 0;  // 0 = unlimited
    std::string out_rotation;
    std::string out_report;
    bool timing = false;
};

int run_calibrate(const CalibrateArgs& args) {
    require(args.epochs >= 1, "epochs must be >= 1");
    const ActivationBatch batch = tensor_io::read_batch(args.acts);

    CalibrationConfig cfg;
    cfg.objective = parse_objective(args.objective, args.bits);
    cfg.optimizer.variant = parse_optimizer(args.optimizer);
    cfg.optimizer.lr = args.lr;
    cfg.optimizer.momentum_beta = args.momentum_beta;
    cfg.epochs = args.epochs;
    cfg.batch_size = args.batch_size;
    cfg.token_sample_ratio = args.sample_ratio;
    cfg.seed = args.seed;
    cfg.eval_bits = args.bits;
    if (args.tau > 0.0) cfg.tau_outlier = args.tau;
    if (args.max_iters > 0) cfg.max_iters = args.max_iters;

    auto emit = [&](const CalibrationReport& report_in, bool diverged) {
        CalibrationReport report = report_in;
        if (!args.timing) report.wall_time_seconds = 0.0;
        if (!args.out_report.empty()) write_report(args.out_report, report);
        print_kv("diverged", std::uint64_t(diverged ? 1 : 0));
        print_kv("steps_executed", static_cast<std::uint64_t>(report.steps_executed));
        print_kv("initial_loss", report.initial_loss);
        print_kv("final_loss", report.final_loss);
        print_kv("loss_movement_rel", report.loss_movement_rel);
        print_kv("low_loss_movement", std::uint64_t(report.loss_movement_rel < 0.05 ? 1 : 0));
        print_kv("tau_used", report.tau_used);
        print_kv("outliers_before", report.outliers_before);
        print_kv("outliers_after", report.outliers_after);
        print_kv("quant_mse_before", report.quant_mse_before);
        print_kv("quant_mse_after", report.quant_mse_after);
        print_kv("final_orthogonality_error", report.final_orthogonality_error);
        print_kv("flops_total", report.flops.total());
        if (args.timing) print_kv("wall_time_seconds", report.wall_time_seconds);
    };

    try {
        auto [rotation, report] = calibrate(batch, cfg);
        if (!args.out_rotation.empty()) {
            tensor_io::write_matrix(args.out_rotation, rotation, OriginDtype::real64);
            print_kv("out_rotation", args.out_rotation);
        }
        emit(report, false);
        return 0;
    } catch (const CalibrationDivergence& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        emit(e.partial_report(), true);
        return 2;
    }
}

struct QuantizeSimArgs {
    std::string acts;
    std::string rotation;
    int bits = 4;
    double tau = 0.0;  // 0 = auto
};

int run_quantize_sim(const QuantizeSimArgs& args) {
    const ActivationBatch batch = tensor_io::read_batch(args.acts);
    const QuantConfig cfg{args.bits};
    cfg.validate();
    const double tau = args.tau > 0.0 ? args.tau : default_outlier_threshold(batch);
    print_kv("tau_used", tau);
    print_kv("bits", std::uint64_t(args.bits));
    print_kv("outliers_identity", total_outliers(batch, tau));
    print_kv("quant_mse_identity", fake_quantize(batch, cfg).mse);

    if (!args.rotation.empty()) {
        const Matrix r = tensor_io::read_matrix(args.rotation).matrix;
        require(r.is_square() && r.rows() == batch.channels(),
                "rotation shape incompatible with activations");
        require(orthogonality_error(r) < 1e-4, "rotation file is not orthogonal");
        ActivationBatch rotated = batch;
        rotated.tokens = matmul(batch.tokens, r);
        print_kv("outliers_rotated", total_outliers(rotated, tau));
        print_kv("quant_mse_rotated", fake_quantize(rotated, cfg).mse);
    }
    return 0;
}

struct BenchArgs {
    std::size_t n = 128;
    std::size_t steps = 3;
    std::string optimizer = "both";
    bool timing = false;
};

int run_bench(const BenchArgs& args) {
    require(args.n >= 32, "n must be >= 32");
    require(args.steps >= 1, "steps must be >= 1");
    require(args.optimizer == "both" || args.optimizer == "qr_sgd" ||
                args.optimizer == "cayley_sgd",
            "optimizer must be qr_sgd, cayley_sgd, or both");

    const ActivationBatch batch = sample_laplace(LaplaceModel{1.0}, 64, args.n, 1);

    auto init_state = [&](OptimizerVariant variant) {
        OptimizerKind kind;
        kind.variant = variant;
        if (is_power_of_two(args.n)) return init_rotation_state(args.n, 1, kind);
        Matrix a(args.n, args.n);
        Rng rng(1);
        for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = rng.uniform_symmetric();
        RotationState state;
        if (kind.is_qr_variant()) {
            state.z = a;
            state.factors = householder_qr(state.z, &state.flops);
            state.r = state.factors.q;
        } else {
            state.r = householder_qr(a).q;
            state.momentum = Matrix(args.n, args.n, 0.0);
        }
        return state;
    };

    auto run_steps = [&](OptimizerVariant variant, std::uint64_t& madds_per_step,
                         double& seconds_per_step) {
        OptimizerKind kind;
        kind.variant = variant;
        kind.lr = 1e-3;
        RotationState state = init_state(variant);
        const std::string label =
            variant == OptimizerVariant::cayley_sgd ? "cayley_extra" : "householder_qr";
        const std::uint64_t base = state.flops.get(label);
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t s = 0; s < args.steps; ++s) {
            const Matrix o = matmul(batch.tokens, state.r);
            const ObjectiveValue value = whip_loss_grad(o);
            const Matrix grad_r = matmul_at_b(batch.tokens, value.grad);
            state = variant == OptimizerVariant::cayley_sgd
                        ? cayley_sgd_step(std::move(state), grad_r, kind)
                        : qr_orth_step(std::move(state), grad_r, kind);
        }
        seconds_per_step = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                               .count() /
                           static_cast<double>(args.steps);
        madds_per_step = (state.flops.get(label) - base) / args.steps;
    };

    std::uint64_t qr_madds = 0, cayley_madds = 0;
    double qr_sec = 0.0, cayley_sec = 0.0;
    if (args.optimizer != "cayley_sgd") {
        run_steps(OptimizerVariant::qr_sgd, qr_madds, qr_sec);
        print_kv("qr_madds_per_step", qr_madds);
        print_kv("qr_wall_ms_per_step", args.timing ? qr_sec * 1e3 : 0.0);
    }
    if (args.optimizer != "qr_sgd") {
        run_steps(OptimizerVariant::cayley_sgd, cayley_madds, cayley_sec);
        print_kv("cayley_extra_madds_per_step", cayley_madds);
        print_kv("cayley_wall_ms_per_step", args.timing ? cayley_sec * 1e3 : 0.0);
    }
    if (args.optimizer == "both") {
        print_kv("ratio", static_cast<double>(cayley_madds) / static_cast<double>(qr_madds));
    }
    return 0;
}

struct InvarianceArgs {
    std::size_t hidden = 64;
    std::size_t heads = 4;
    std::size_t seeds = 10;
    std::uint64_t seed = 1;
    bool inject_nonorthogonal = false;
};

int run_invariance_check(const InvarianceArgs& args) {
    require(args.heads >= 1 && args.hidden % args.heads == 0, "heads must divide hidden");
    require(is_power_of_two(args.hidden), "hidden must be a power of two");
    require(is_power_of_two(args.hidden / args.heads), "head_dim must be a power of two");
    require(args.seeds >= 1, "seeds must be >= 1");

    InvarianceReport rep = invariance_suite(args.seed, args.hidden, args.heads, args.seeds);
    if (args.inject_nonorthogonal) {
        const double diff =
            invariance_negative_nonorthogonal(args.seed, args.hidden, args.heads);
        rep.checks.push_back({"injected_nonorthogonal_r1", diff, diff < 1e-10});
        rep.worst_diff = std::max(rep.worst_diff, diff);
        rep.all_pass = rep.all_pass && diff < 1e-10;
    }
    for (const auto& check : rep.checks) {
        print_kv("diff_" + check.name, check.worst_diff);
    }
    print_kv("worst_rel_diff", rep.worst_diff);
    print_kv("pass", std::uint64_t(rep.all_pass ? 1 : 0));
    if (!rep.all_pass) {
        std::fprintf(stderr, "error: invariance suite failed, worst diff %.17g\n",
                     rep.worst_diff);
        return 3;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rotation-calibration toolkit for quantization-friendly activations"};
    app.require_subcommand(1);

    GenActsArgs gen;
    CLI::App* cmd_gen = app.add_subcommand("gen-acts", "generate a synthetic activation file");
    cmd_gen->add_option("--rows", gen.rows, "token count");
    cmd_gen->add_option("--cols", gen.cols, "channel count");
    cmd_gen->add_option("--scale-b", gen.scale_b, "scale of the heavy-tailed generator");
    cmd_gen->add_option("--seed", gen.seed, "random seed");
    cmd_gen->add_option("--out", gen.out, "output tensor file")->required();

    CalibrateArgs cal;
    CLI::App* cmd_cal = app.add_subcommand("calibrate", "learn a rotation for an activation file");
    cmd_cal->add_option("--acts", cal.acts, "input tensor file")->required();
    cmd_cal->add_option("--objective", cal.objective, "whip|variance|kurtosis|quant");
    cmd_cal->add_option("--optimizer", cal.optimizer,
                        "qr_sgd|qr_momentum_sgd|qr_adam|cayley_sgd");
    cmd_cal->add_option("--lr", cal.lr, "learning rate");
    cmd_cal->add_option("--epochs", cal.epochs, "epochs over the sampled tokens");
    cmd_cal->add_option("--batch-size", cal.batch_size, "mini-batch size");
    cmd_cal->add_option("--sample-ratio", cal.sample_ratio, "token sampling ratio in (0,1]");
    cmd_cal->add_option("--bits", cal.bits, "bit width for reported quantization error");
    cmd_cal->add_option("--seed", cal.seed, "random seed");
    cmd_cal->add_option("--momentum-beta", cal.momentum_beta, "momentum coefficient");
    cmd_cal->add_option("--tau", cal.tau, "outlier threshold (default: 4×rms)");
    cmd_cal->add_option("--max-iters", cal.max_iters, "hard cap on optimizer steps");
    cmd_cal->add_option("--out-rotation", cal.out_rotation, "rotation tensor output");
    cmd_cal->add_option("--out-report", cal.out_report, "JSON report output");
    cmd_cal->add_flag("--timing", cal.timing,
                      "record wall time in the report (breaks byte determinism)");

    QuantizeSimArgs qs;
    CLI::App* cmd_qs = app.add_subcommand("quantize-sim", "outlier and error metrics for a batch");
    cmd_qs->add_option("--acts", qs.acts, "input tensor file")->required();
    cmd_qs->add_option("--rotation", qs.rotation, "optional rotation tensor");
    cmd_qs->add_option("--bits", qs.bits, "bit width");
    cmd_qs->add_option("--tau", qs.tau, "outlier threshold (default: 4×rms)");

    BenchArgs bench;
    CLI::App* cmd_bench = app.add_subcommand("bench", "per-step cost of the two optimizers");
    cmd_bench->add_option("--n", bench.n, "rotation dimension (>= 32)");
    cmd_bench->add_option("--steps", bench.steps, "steps to run");
    cmd_bench->add_option("--optimizer", bench.optimizer, "qr_sgd|cayley_sgd|both");
    cmd_bench->add_flag("--timing", bench.timing, "measure wall time per step");

    InvarianceArgs inv;
    CLI::App* cmd_inv = app.add_subcommand("invariance-check", "verify rotation fusion equivalence");
    cmd_inv->add_option("--hidden", inv.hidden, "hidden size (power of two)");
    cmd_inv->add_option("--heads", inv.heads, "attention heads");
    cmd_inv->add_option("--seeds", inv.seeds, "number of seeded draws");
    cmd_inv->add_option("--seed", inv.seed, "base seed");
    cmd_inv->add_flag("--inject-nonorthogonal", inv.inject_nonorthogonal)->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (cmd_gen->parsed()) return run_gen_acts(gen);
        if (cmd_cal->parsed()) return run_calibrate(cal);
        if (cmd_qs->parsed()) return run_quantize_sim(qs);
        if (cmd_bench->parsed()) return run_bench(bench);
        if (cmd_inv->parsed()) return run_invariance_check(inv);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
