#include <catch2/catch_amalgamated.hpp>

#include "rotocal/distributions.hpp"
#include "rotocal/objectives.hpp"
#include "rotocal/optimizers.hpp"
#include "test_util.hpp"

using namespace rotocal;

namespace {

Matrix whip_rotation_gradient(const Matrix& tokens, const Matrix& r) {
    const Matrix o = matmul(tokens, r);
    return matmul_at_b(tokens, whip_loss_grad(o).grad);
}

}  // namespace

TEST_CASE("qr_orth_step: zero gradient is a fixed point") {
    for (auto variant : {OptimizerVariant::qr_sgd, OptimizerVariant::qr_momentum_sgd,
                         OptimizerVariant::qr_adam}) {
        OptimizerKind kind;
        kind.variant = variant;
        RotationState state = init_rotation_state(16, 3, kind);
        const Matrix z_before = state.z;
        const Matrix r_before = state.r;
        state = qr_orth_step(std::move(state), Matrix(16, 16, 0.0), kind);
        REQUIRE(state.z == z_before);
        REQUIRE(state.r == r_before);
        REQUIRE(state.step_count == 1);
    }
}

TEST_CASE("qr_orth_step descends the whip loss") {
    const ActivationBatch batch = sample_laplace(LaplaceModel{1.0}, 256, 32, 5);
    OptimizerKind kind;
    kind.lr = 1e-3;
    RotationState state = init_rotation_state(32, 5, kind);
    const double loss0 = whip_loss(matmul(batch.tokens, state.r));
    state = qr_orth_step(std::move(state), whip_rotation_gradient(batch.tokens, state.r), kind);
    const double loss1 = whip_loss(matmul(batch.tokens, state.r));
    REQUIRE(loss1 < loss0);
}

TEST_CASE("qr_orth_step keeps r orthogonal over 100 steps at n=128") {
    const ActivationBatch batch = sample_laplace(LaplaceModel{1.0}, 128, 128, 6);
    OptimizerKind kind;
    kind.lr = 1e-2;
    RotationState state = init_rotation_state(128, 6, kind);
    for (int s = 0; s < 100; ++s) {
        state = qr_orth_step(std::move(state), whip_rotation_gradient(batch.tokens, state.r),
                             kind);
        REQUIRE(orthogonality_error(state.r) < 1e-10);
    }
}

TEST_CASE("qr_orth_step rejects non-finite gradients with the step index") {
    OptimizerKind kind;
    RotationState state = init_rotation_state(8, 1, kind);
    state.step_count = 17;
    Matrix bad(8, 8, 0.0);
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    try {
        qr_orth_step(std::move(state), bad, kind);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        REQUIRE(e.step() == 17);
    }
}

TEST_CASE("cayley_sgd_step: zero gradient and momentum is a fixed point") {
    OptimizerKind kind;
    kind.variant = OptimizerVariant::cayley_sgd;
    RotationState state = init_rotation_state(16, 3, kind);
    const Matrix r_before = state.r;
    state = cayley_sgd_step(std::move(state), Matrix(16, 16, 0.0), kind);
    REQUIRE(state.r == r_before);
}

TEST_CASE("cayley tangent update is skew-symmetric") {
    for (std::uint64_t seed : {1, 2, 3}) {
        const Matrix x = householder_qr(testutil::random_gaussian_matrix(24, 24, seed)).q;
        const Matrix m = testutil::random_gaussian_matrix(24, 24, seed + 50);
        const Matrix w = detail::cayley_skew_update(m, x, nullptr);
        REQUIRE(frobenius_norm(w + transpose(w)) < 1e-12);
    }
}

TEST_CASE("cayley_sgd_step drift stays below 1e-4 over 100 steps") {
    const ActivationBatch batch = sample_laplace(LaplaceModel{1.0}, 128, 128, 9);
    OptimizerKind kind;
    kind.variant = OptimizerVariant::cayley_sgd;
    kind.lr = 1e-2;
    RotationState state = init_rotation_state(128, 9, kind);
    double worst = 0.0;
    for (int s = 0; s < 100; ++s) {
        state = cayley_sgd_step(std::move(state), whip_rotation_gradient(batch.tokens, state.r),
                                kind);
        worst = std::max(worst, orthogonality_error(state.r));
    }
    REQUIRE(worst < 1e-4);
}

TEST_CASE("cayley_sgd_step re-orthogonalizes when drift passes the guard") {
    // With the step bound saturated (alpha·||W|| = 2q) the two-term Cayley
    // iteration drifts visibly; the guard has to pull it back each time.
    OptimizerKind kind;
    kind.variant = OptimizerVariant::cayley_sgd;
    kind.lr = 10.0;  // alpha is then capped by 2q/||W||
    RotationState state = init_rotation_state(32, 4, kind);
    const Matrix grad = testutil::random_gaussian_matrix(32, 32, 60);
    std::size_t events = 0;
    for (int s = 0; s < 20; ++s) {
        state = cayley_sgd_step(std::move(state), grad, kind);
        events = state.reorth_events;
        REQUIRE(orthogonality_error(state.r) < 1e-4);
    }
    REQUIRE(events >= 1);
}

TEST_CASE("both steppers are deterministic") {
    const ActivationBatch batch = sample_laplace(LaplaceModel{1.0}, 64, 16, 2);
    for (auto variant : {OptimizerVariant::qr_sgd, OptimizerVariant::cayley_sgd}) {
        OptimizerKind kind;
        kind.variant = variant;
        kind.lr = 1e-3;
        auto run = [&] {
            RotationState st = init_rotation_state(16, 2, kind);
            for (int s = 0; s < 5; ++s) {
                const Matrix g = whip_rotation_gradient(batch.tokens, st.r);
                st = variant == OptimizerVariant::cayley_sgd
                         ? cayley_sgd_step(std::move(st), g, kind)
                         : qr_orth_step(std::move(st), g, kind);
            }
            return st.r;
        };
        REQUIRE(run() == run());
    }
}

TEST_CASE("flop_ratio_report at n=512 reproduces the analytic 4.5") {
    const FlopRatioReport r = flop_ratio_report(512);
    REQUIRE(r.ratio > 3.6);
    REQUIRE(r.ratio < 5.4);
}

TEST_CASE("flop_ratio_report qr count near (4/3)n^3 at n=256") {
    const FlopRatioReport r = flop_ratio_report(256);
    const double expected = 4.0 / 3.0 * 256.0 * 256.0 * 256.0;
    REQUIRE(static_cast<double>(r.qr_flops) > 0.8 * expected);
    REQUIRE(static_cast<double>(r.qr_flops) < 1.2 * expected);
}

TEST_CASE("flop_ratio_report reports counts at n=32 without a ratio claim") {
    const FlopRatioReport r = flop_ratio_report(32);
    REQUIRE(r.qr_flops > 0);
    REQUIRE(r.cayley_extra_flops > 0);
    REQUIRE_THROWS_AS(flop_ratio_report(31), std::invalid_argument);
}

TEST_CASE("cayley extra flops are 6n^3 exactly as counted") {
    OptimizerKind kind;
    kind.variant = OptimizerVariant::cayley_sgd;
    RotationState state = init_rotation_state(64, 1, kind);
    state = cayley_sgd_step(std::move(state), testutil::random_gaussian_matrix(64, 64, 2), kind);
    REQUIRE(state.flops.get("cayley_extra") == 6ull * 64 * 64 * 64);
}
