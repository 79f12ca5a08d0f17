// Acceptance suite: one line per criterion, nonzero exit if any fails.
// Usage: rotocal_acceptance [path-to-cli-binary]
// The CLI path is needed only for the determinism criterion; without it
// that criterion is reported as failed.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "rotocal/rotocal.hpp"
#include "test_util.hpp"

using namespace rotocal;
namespace fs = std::filesystem;

namespace {

struct Harness {
    bool all_pass = true;

    void criterion(int number, const std::string& name, bool pass,
                   const std::string& detail) {
        std::printf("[%s] C%d %s: %s\n", pass ? "PASS" : "FAIL", number, name.c_str(),
                    detail.c_str());
        std::fflush(stdout);
        all_pass = all_pass && pass;
    }
};

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* format, ...) {
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof(buf), format, args);
    va_end(args);
    return buf;
}

Matrix whip_rotation_gradient(const Matrix& tokens, const Matrix& r) {
    return matmul_at_b(tokens, whip_loss_grad(matmul(tokens, r)).grad);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// C1: orthogonality over a 1000-step run at n = 128, both optimizers.
// ---------------------------------------------------------------------------
void criterion_1(Harness& h) {
    const auto t0 = std::chrono::steady_clock::now();
    const ActivationBatch batch = sample_laplace(LaplaceModel{1.0}, 256, 128, 2);

    OptimizerKind qr_kind;
    qr_kind.lr = 1e-3;
    RotationState qr_state = init_rotation_state(128, 2, qr_kind);
    double worst_qr = orthogonality_error(qr_state.r);
    for (int s = 0; s < 1000; ++s) {
        qr_state = qr_orth_step(std::move(qr_state),
                                whip_rotation_gradient(batch.tokens, qr_state.r), qr_kind);
        worst_qr = std::max(worst_qr, orthogonality_error(qr_state.r));
    }

    OptimizerKind cayley_kind;
    cayley_kind.variant = OptimizerVariant::cayley_sgd;
    cayley_kind.lr = 1e-3;
    RotationState cayley_state = init_rotation_state(128, 2, cayley_kind);
    double worst_cayley = orthogonality_error(cayley_state.r);
    for (int s = 0; s < 1000; ++s) {
        cayley_state =
            cayley_sgd_step(std::move(cayley_state),
                            whip_rotation_gradient(batch.tokens, cayley_state.r), cayley_kind);
        worst_cayley = std::max(worst_cayley, orthogonality_error(cayley_state.r));
    }

    const double secs = seconds_since(t0);
    const bool pass = worst_qr < 1e-10 && worst_cayley < 1e-4 && secs < 60.0;
    h.criterion(1, "orthogonality-by-construction", pass,
                fmt("qr worst %.2e (<1e-10), cayley drift %.2e (<1e-4), %.1fs (<60s)",
                    worst_qr, worst_cayley, secs));
}

// ---------------------------------------------------------------------------
// C2: analytic gradients vs central finite differences, 100 cases per family.
// ---------------------------------------------------------------------------
void criterion_2(Harness& h) {
    const auto t0 = std::chrono::steady_clock::now();
    double worst_whip = 0.0, worst_var = 0.0, worst_kurt = 0.0, worst_qr = 0.0;

    for (std::uint64_t c = 1; c <= 100; ++c) {
        Matrix o(3, 8);
        Rng rng(5000 + c);
        for (std::size_t i = 0; i < o.size(); ++i) {
            const double g = rng.normal();
            o.data()[i] = (g >= 0.0 ? 1.0 : -1.0) * (0.1 + std::abs(g));
        }
        worst_whip = std::max(
            worst_whip,
            testutil::rel_error(whip_loss_grad(o).grad,
                                testutil::finite_diff(
                                    [](const Matrix& m) { return whip_loss(m); }, o, 1e-6)));

        const Matrix g = testutil::random_gaussian_matrix(3, 8, 6000 + c);
        worst_var = std::max(
            worst_var,
            testutil::rel_error(variance_loss_grad(g).grad,
                                testutil::finite_diff(
                                    [](const Matrix& m) { return variance_loss(m); }, g, 1e-6)));
        worst_kurt = std::max(
            worst_kurt,
            testutil::rel_error(kurtosis_loss_grad(g).grad,
                                testutil::finite_diff(
                                    [](const Matrix& m) { return kurtosis_loss(m); }, g, 1e-5)));

        const std::size_t n = std::array<std::size_t, 3>{4, 8, 16}[c % 3];
        const Matrix a = testutil::random_matrix(n, n, 7000 + c);
        const Matrix probe = testutil::random_matrix(n, n, 8000 + c);
        const Matrix analytic = qr_backward(householder_qr(a), probe);
        const Matrix numeric = testutil::finite_diff(
            [&](const Matrix& m) {
                const Matrix q = householder_qr(m).q;
                double s = 0.0;
                for (std::size_t i = 0; i < q.size(); ++i) s += probe.data()[i] * q.data()[i];
                return s;
            },
            a);
        worst_qr = std::max(worst_qr, testutil::rel_error(analytic, numeric));
    }

    const double secs = seconds_since(t0);
    const bool pass = worst_whip < 1e-4 && worst_var < 1e-4 && worst_kurt < 1e-4 &&
                      worst_qr < 1e-4 && secs < 120.0;
    h.criterion(2, "gradient correctness", pass,
                fmt("whip %.2e, variance %.2e, kurtosis %.2e, qr backward %.2e "
                    "(each <1e-4), %.1fs (<120s)",
                    worst_whip, worst_var, worst_kurt, worst_qr, secs));
}

// ---------------------------------------------------------------------------
// C3: multiply-add ratio at n = 512.
// ---------------------------------------------------------------------------
void criterion_3(Harness& h) {
    const FlopRatioReport r = flop_ratio_report(512);
    const double analytic_qr = 4.0 / 3.0 * 512.0 * 512.0 * 512.0;
    const double qr_rel = static_cast<double>(r.qr_flops) / analytic_qr;
    const bool pass = r.ratio >= 3.6 && r.ratio <= 5.4 && qr_rel > 0.8 && qr_rel < 1.2;
    h.criterion(3, "flop-ratio reproduction", pass,
                fmt("cayley/qr ratio %.3f (in [3.6, 5.4]), qr count %.4g = %.3f of (4/3)n^3",
                    r.ratio, static_cast<double>(r.qr_flops), qr_rel));
}

// ---------------------------------------------------------------------------
// C4: uniformization KS distance for three (b, tau) pairs.
// ---------------------------------------------------------------------------
void criterion_4(Harness& h) {
    double worst = 0.0;
    for (auto [b, tau] : {std::pair{1.0, 1.0}, {2.0, 1.0}, {1.0, 4.0}}) {
        const LaplaceModel model{b};
        Rng rng(33);
        std::vector<double> transformed(100000);
        for (double& v : transformed) {
            v = uniformize(model, tau, laplace_inverse_cdf(model, rng.uniform_open()));
        }
        worst = std::max(worst, testutil::ks_statistic_uniform(transformed, tau));
    }
    h.criterion(4, "uniformization", worst < 0.02,
                fmt("worst KS %.4f over (b,tau) in {(1,1),(2,1),(1,4)} (<0.02)", worst));
}

// ---------------------------------------------------------------------------
// C5 + C8 share the standard instance: 4096x128 Laplace, seed 1, 4-bit.
// ---------------------------------------------------------------------------
struct StandardInstanceResults {
    double mse_identity = 0.0, mse_hadamard = 0.0;
    double mse_whip = 0.0, mse_variance = 0.0, mse_kurtosis = 0.0;
    std::int64_t outliers_identity = 0, outliers_hadamard = 0, outliers_whip = 0;
    double secs = 0.0;
    bool complete = false;
};

StandardInstanceResults run_standard_instance() {
    const auto t0 = std::chrono::steady_clock::now();
    StandardInstanceResults out;
    const ActivationBatch x = sample_laplace(LaplaceModel{1.0}, 4096, 128, 1);
    const QuantConfig qc{4};
    const double tau = default_outlier_threshold(x);

    out.mse_identity = fake_quantize(x, qc).mse;
    out.outliers_identity = total_outliers(x, tau);

    ActivationBatch rotated = x;
    rotated.tokens = matmul(x.tokens, random_hadamard(128, 1));
    out.mse_hadamard = fake_quantize(rotated, qc).mse;
    out.outliers_hadamard = total_outliers(rotated, tau);

    CalibrationConfig base;
    base.optimizer.lr = 1e-2;  // upper end of the stated R1 range
    base.seed = 1;
    base.tau_outlier = tau;
    const ObjectiveComparison cmp = compare_objectives(x, base);
    for (const auto& entry : cmp.entries) {
        if (!entry.report) return out;
        switch (entry.variant) {
            case ObjectiveVariant::whip:
                out.mse_whip = entry.report->quant_mse_after;
                out.outliers_whip = entry.report->outliers_after;
                break;
            case ObjectiveVariant::variance:
                out.mse_variance = entry.report->quant_mse_after;
                break;
            case ObjectiveVariant::kurtosis:
                out.mse_kurtosis = entry.report->quant_mse_after;
                break;
            case ObjectiveVariant::quant_loss:
                break;
        }
    }
    out.secs = seconds_since(t0);
    out.complete = true;
    return out;
}

void criterion_5(Harness& h, const StandardInstanceResults& r) {
    const bool below_hadamard = r.mse_whip < r.mse_hadamard;
    const bool below_variance = r.mse_whip <= r.mse_variance;
    const bool below_kurtosis = r.mse_whip <= r.mse_kurtosis;
    const bool pass =
        r.complete && below_hadamard && below_variance && below_kurtosis && r.secs < 300.0;
    h.criterion(5, "whip efficacy", pass,
                fmt("whip %.6e %s hadamard %.6e; vs variance %.6e (%s), vs kurtosis %.6e "
                    "(%s); %.1fs (<300s)",
                    r.mse_whip, below_hadamard ? "<" : ">=", r.mse_hadamard, r.mse_variance,
                    below_variance ? "ok" : "FAIL", r.mse_kurtosis,
                    below_kurtosis ? "ok" : "FAIL", r.secs));
}

// ---------------------------------------------------------------------------
// C6: variance objective is blind to rotation on zero-mean tokens.
// ---------------------------------------------------------------------------
void criterion_6(Harness& h) {
    ActivationBatch x = sample_laplace(LaplaceModel{1.0}, 64, 32, 5);
    for (std::size_t i = 0; i < x.token_count(); ++i) {
        double* row = x.tokens.row(i);
        double mu = 0.0;
        for (std::size_t j = 0; j < 32; ++j) mu += row[j];
        mu /= 32.0;
        for (std::size_t j = 0; j < 32; ++j) row[j] -= mu;
    }
    double lo = 1e300, hi = -1e300;
    Rng rng(77);
    for (int k = 0; k < 100; ++k) {
        Matrix g(32, 32);
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
        const double v = variance_loss(matmul(x.tokens, householder_qr(g).q));
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double spread = (hi - lo) / (0.5 * (hi + lo));
    h.criterion(6, "variance degeneracy", spread < 1e-9,
                fmt("relative spread %.2e over 100 rotations (<1e-9)", spread));
}

// ---------------------------------------------------------------------------
// C7: computational invariance plus both negative controls.
// ---------------------------------------------------------------------------
void criterion_7(Harness& h) {
    const InvarianceReport rep = invariance_suite(1, 64, 4, 10);
    const double neg_orth = invariance_negative_nonorthogonal(1, 64, 4);
    const double neg_gate = invariance_negative_gate_fusion(1, 64, 4);
    const bool pass = rep.all_pass && rep.worst_diff < 1e-10 && neg_orth > 1e-6 &&
                      neg_gate > 1e-6;
    h.criterion(7, "computational invariance", pass,
                fmt("worst diff %.2e (<1e-10); negative controls %.2e / %.2e (>1e-6)",
                    rep.worst_diff, neg_orth, neg_gate));
}

void criterion_8(Harness& h, const StandardInstanceResults& r) {
    const bool pass = r.complete && r.outliers_whip <= r.outliers_hadamard &&
                      r.outliers_hadamard <= r.outliers_identity;
    h.criterion(8, "outlier reduction", pass,
                fmt("whip %lld <= hadamard %lld <= identity %lld",
                    static_cast<long long>(r.outliers_whip),
                    static_cast<long long>(r.outliers_hadamard),
                    static_cast<long long>(r.outliers_identity)));
}

// ---------------------------------------------------------------------------
// C9: every CLI command is byte-deterministic under fixed flags.
// ---------------------------------------------------------------------------
struct CliRun {
    int exit_code = -1;
    std::string stdout_text;
};

CliRun run_cli(const std::string& cli, const std::string& args, const fs::path& dir,
               const std::string& tag) {
    const fs::path out = dir / (tag + ".stdout");
    const std::string cmd = cli + " " + args + " > " + out.string() + " 2> " +
                            (dir / (tag + ".stderr")).string();
    CliRun run;
    const int rc = std::system(cmd.c_str());
    run.exit_code = rc == -1 ? -1 : WEXITSTATUS(rc);
    run.stdout_text = slurp(out.string());
    return run;
}

void criterion_9(Harness& h, const std::string& cli) {
    if (cli.empty()) {
        h.criterion(9, "cli determinism", false, "no CLI path supplied");
        return;
    }
    const fs::path dir = fs::temp_directory_path() / "rotocal_acceptance";
    fs::create_directories(dir);

    std::vector<std::string> issues;
    auto expect_identical = [&](const std::string& name, const std::string& a,
                                const std::string& b) {
        if (a != b) issues.push_back(name + " differs between runs");
    };

    const std::string acts1 = (dir / "acts1.bin").string();
    const std::string acts2 = (dir / "acts2.bin").string();
    const CliRun g1 = run_cli(cli, "gen-acts --rows 256 --cols 64 --scale-b 1 --seed 3 --out " + acts1,
                              dir, "gen1");
    const CliRun g2 = run_cli(cli, "gen-acts --rows 256 --cols 64 --scale-b 1 --seed 3 --out " + acts2,
                              dir, "gen2");
    if (g1.exit_code != 0 || g2.exit_code != 0) issues.push_back("gen-acts failed");
    expect_identical("gen-acts tensor", slurp(acts1), slurp(acts2));
    // The stdout echoes the output path, which differs by construction here;
    // compare everything after that first line.
    expect_identical("gen-acts stdout tail",
                     g1.stdout_text.substr(g1.stdout_text.find('\n')),
                     g2.stdout_text.substr(g2.stdout_text.find('\n')));

    const std::string rot1 = (dir / "rot1.bin").string();
    const std::string rot2 = (dir / "rot2.bin").string();
    const std::string rep1 = (dir / "rep1.json").string();
    const std::string rep2 = (dir / "rep2.json").string();
    const std::string cal_flags = " --epochs 2 --lr 0.01 --seed 1 --bits 4";
    const CliRun c1 = run_cli(cli, "calibrate --acts " + acts1 + cal_flags +
                                       " --out-rotation " + rot1 + " --out-report " + rep1,
                              dir, "cal1");
    const CliRun c2 = run_cli(cli, "calibrate --acts " + acts1 + cal_flags +
                                       " --out-rotation " + rot2 + " --out-report " + rep2,
                              dir, "cal2");
    if (c1.exit_code != 0 || c2.exit_code != 0) issues.push_back("calibrate failed");
    expect_identical("calibrate rotation", slurp(rot1), slurp(rot2));
    expect_identical("calibrate report", slurp(rep1), slurp(rep2));
    expect_identical("calibrate stdout",
                     c1.stdout_text.substr(c1.stdout_text.find('\n')),
                     c2.stdout_text.substr(c2.stdout_text.find('\n')));

    const std::string qs_args = "quantize-sim --acts " + acts1 + " --rotation " + rot1 + " --bits 4";
    const CliRun q1 = run_cli(cli, qs_args, dir, "qs1");
    const CliRun q2 = run_cli(cli, qs_args, dir, "qs2");
    if (q1.exit_code != 0 || q2.exit_code != 0) issues.push_back("quantize-sim failed");
    expect_identical("quantize-sim stdout", q1.stdout_text, q2.stdout_text);

    const CliRun b1 = run_cli(cli, "bench --n 64 --steps 2", dir, "bench1");
    const CliRun b2 = run_cli(cli, "bench --n 64 --steps 2", dir, "bench2");
    if (b1.exit_code != 0 || b2.exit_code != 0) issues.push_back("bench failed");
    expect_identical("bench stdout", b1.stdout_text, b2.stdout_text);

    const CliRun i1 = run_cli(cli, "invariance-check --hidden 64 --heads 4 --seeds 3", dir, "inv1");
    const CliRun i2 = run_cli(cli, "invariance-check --hidden 64 --heads 4 --seeds 3", dir, "inv2");
    if (i1.exit_code != 0 || i2.exit_code != 0) issues.push_back("invariance-check failed");
    expect_identical("invariance-check stdout", i1.stdout_text, i2.stdout_text);

    std::string detail = "gen-acts, calibrate, quantize-sim, bench, invariance-check";
    if (!issues.empty()) {
        detail = issues.front();
        for (std::size_t i = 1; i < issues.size(); ++i) detail += "; " + issues[i];
    }
    h.criterion(9, "cli determinism", issues.empty(), detail);
}

// ---------------------------------------------------------------------------
// Supplementary CLI contract checks (exit codes and orderings).
// ---------------------------------------------------------------------------
void cli_contract(Harness& h, const std::string& cli) {
    if (cli.empty()) return;
    const fs::path dir = fs::temp_directory_path() / "rotocal_acceptance";
    fs::create_directories(dir);
    const std::string acts = (dir / "acts_contract.bin").string();
    run_cli(cli, "gen-acts --rows 512 --cols 64 --scale-b 1 --seed 1 --out " + acts, dir, "cgen");

    std::vector<std::string> issues;
    auto check = [&](bool ok, const std::string& what) {
        if (!ok) issues.push_back(what);
    };

    const CliRun bad_epochs =
        run_cli(cli, "calibrate --acts " + acts + " --epochs 0", dir, "cbad");
    check(bad_epochs.exit_code == 1, "epochs 0 should exit 1");

    const CliRun bad_hidden =
        run_cli(cli, "invariance-check --hidden 63 --heads 4", dir, "chid");
    check(bad_hidden.exit_code == 1, "hidden 63 should exit 1");

    const CliRun injected = run_cli(
        cli, "invariance-check --hidden 64 --heads 4 --seeds 2 --inject-nonorthogonal", dir,
        "cinj");
    check(injected.exit_code == 3, "injected non-orthogonal plan should exit 3");

    const CliRun bad_steps = run_cli(cli, "bench --n 64 --steps 0", dir, "cstep");
    check(bad_steps.exit_code == 1, "steps 0 should exit 1");

    const CliRun ok_inv =
        run_cli(cli, "invariance-check --hidden 64 --heads 4 --seeds 2", dir, "cinv");
    check(ok_inv.exit_code == 0, "clean invariance-check should exit 0");

    std::string detail = "exit codes 0/1/3 verified";
    if (!issues.empty()) {
        detail = issues.front();
        for (std::size_t i = 1; i < issues.size(); ++i) detail += "; " + issues[i];
    }
    std::printf("[%s] cli contract: %s\n", issues.empty() ? "PASS" : "FAIL", detail.c_str());
    h.all_pass = h.all_pass && issues.empty();
}

}  // namespace

int main(int argc, char** argv) {
    const std::string cli = argc > 1 ? argv[1] : "";
    Harness h;

    criterion_1(h);
    criterion_2(h);
    criterion_3(h);
    criterion_4(h);
    const StandardInstanceResults standard = run_standard_instance();
    criterion_5(h, standard);
    criterion_6(h);
    criterion_7(h);
    criterion_8(h, standard);
    criterion_9(h, cli);
    cli_contract(h, cli);

    std::printf("%s\n", h.all_pass ? "ALL CRITERIA PASSED" : "CRITERIA FAILED");
    return h.all_pass ? 0 : 1;
}
