#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rotocal/hadamard.hpp"
#include "rotocal/matrix.hpp"
#include "rotocal/rng.hpp"

namespace rotocal {

/// Weights of a pre-RMSNorm transformer block (softmax attention plus a
/// gated FFN). Linear layers compute y = x·wᵀ with w stored out×in, so an
/// input-side rotation r fuses as w·r and an output-side one as rᵀ·w —
/// the transposed twins of the usual w·x formulas.
struct ToyBlockWeights {
    Matrix w_q, w_k, w_v, w_o;    // hidden×hidden
    Matrix w_up, w_gate;          // ffn×hidden
    Matrix w_down;                // hidden×ffn
    std::size_t heads = 1;
    std::size_t head_dim = 1;
    Vector rms_scale_attn;        // per-channel rescaling of the two norms
    Vector rms_scale_ffn;
    bool rms_absorbed = false;

    std::size_t hidden() const { return heads * head_dim; }
    std::size_t ffn_dim() const { return w_up.rows(); }

    void validate() const {
        const std::size_t h = hidden();
        require(is_power_of_two(h) && is_power_of_two(head_dim) && is_power_of_two(ffn_dim()),
                "ToyBlockWeights: dimensions must be powers of two");
        require(w_q.rows() == h && w_q.cols() == h && w_k.rows() == h && w_v.rows() == h &&
                    w_o.rows() == h && w_up.cols() == h && w_gate.rows() == ffn_dim() &&
                    w_down.rows() == h && w_down.cols() == ffn_dim(),
                "ToyBlockWeights: inconsistent shapes");
        require(rms_scale_attn.size() == h && rms_scale_ffn.size() == h,
                "ToyBlockWeights: norm scale length mismatch");
    }
};

/// Rotation assignment for the block: r1 acts on the hidden stream, r2 per
/// attention head, r3/r4 are the online rotations of the attention scores
/// and the down-projection input.
struct FusionPlan {
    Matrix r1;  // hidden×hidden
    Matrix r2;  // head_dim×head_dim
    bool r3_enabled = false;
    bool r4_enabled = false;
    Matrix r3;  // head_dim×head_dim, used when r3_enabled
    Matrix r4;  // ffn×ffn, used when r4_enabled

    void validate() const {
        require(orthogonality_error(r1) < 1e-10, "FusionPlan: r1 not orthogonal");
        require(orthogonality_error(r2) < 1e-10, "FusionPlan: r2 not orthogonal");
        if (r3_enabled) require(orthogonality_error(r3) < 1e-10, "FusionPlan: r3 not orthogonal");
        if (r4_enabled) require(orthogonality_error(r4) < 1e-10, "FusionPlan: r4 not orthogonal");
    }
};

/// Scale-free RMSNorm; zero rows map to zero.
inline Matrix rmsnorm(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* xi = x.row(i);
        double ms = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) ms += xi[j] * xi[j];
        ms /= static_cast<double>(x.cols());
        const double inv = ms > 0.0 ? 1.0 / std::sqrt(ms) : 0.0;
        double* oi = out.row(i);
        for (std::size_t j = 0; j < x.cols(); ++j) oi[j] = xi[j] * inv;
    }
    return out;
}

inline Matrix rmsnorm_scaled(const Matrix& x, const Vector& scale) {
    Matrix out = rmsnorm(x);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        double* oi = out.row(i);
        for (std::size_t j = 0; j < out.cols(); ++j) oi[j] *= scale[j];
    }
    return out;
}

/// max |RMSNorm(x·r) − RMSNorm(x)·r|; near zero whenever r is orthogonal
/// and the norm carries no rescaling.
inline double rmsnorm_commutation_check(const Matrix& x, const Matrix& r) {
    require(x.cols() == r.rows(), "rmsnorm_commutation_check: shape mismatch");
    const Matrix lhs = rmsnorm(matmul(x, r));
    const Matrix rhs = matmul(rmsnorm(x), r);
    return max_abs(lhs - rhs);
}

/// Same two-path difference with a rescaling vector left inside the norm;
/// a non-uniform scale breaks the commutation and the suite relies on
/// seeing a large value here.
inline double rmsnorm_commutation_violation(const Matrix& x, const Matrix& r,
                                            const Vector& scale) {
    const Matrix lhs = rmsnorm_scaled(matmul(x, r), scale);
    const Matrix rhs = matmul(rmsnorm_scaled(x, scale), r);
    return max_abs(lhs - rhs);
}

/// Folds the norm rescaling into the input-side weights (w ← w·diag(s)),
/// leaving both norms scale-free.
inline ToyBlockWeights absorb_rms_scales(ToyBlockWeights w) {
    if (w.rms_absorbed) return w;
    auto scale_cols = [](Matrix& m, const Vector& s) {
        for (std::size_t i = 0; i < m.rows(); ++i) {
            double* mi = m.row(i);
            for (std::size_t j = 0; j < m.cols(); ++j) mi[j] *= s[j];
        }
    };
    scale_cols(w.w_q, w.rms_scale_attn);
    scale_cols(w.w_k, w.rms_scale_attn);
    scale_cols(w.w_v, w.rms_scale_attn);
    scale_cols(w.w_up, w.rms_scale_ffn);
    scale_cols(w.w_gate, w.rms_scale_ffn);
    std::fill(w.rms_scale_attn.begin(), w.rms_scale_attn.end(), 1.0);
    std::fill(w.rms_scale_ffn.begin(), w.rms_scale_ffn.end(), 1.0);
    w.rms_absorbed = true;
    return w;
}

namespace detail {

inline Matrix block_diag_heads(const Matrix& per_head, std::size_t heads) {
    const std::size_t d = per_head.rows();
    Matrix bd(heads * d, heads * d, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) bd(h * d + i, h * d + j) = per_head(i, j);
        }
    }
    return bd;
}

inline void softmax_rows(Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double* mi = m.row(i);
        double mx = mi[0];
        for (std::size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, mi[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            mi[j] = std::exp(mi[j] - mx);
            sum += mi[j];
        }
        for (std::size_t j = 0; j < m.cols(); ++j) mi[j] /= sum;
    }
}

inline Matrix head_slice(const Matrix& m, std::size_t h, std::size_t d) {
    Matrix out(m.rows(), d);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* mi = m.row(i) + h * d;
        std::copy(mi, mi + d, out.row(i));
    }
    return out;
}

inline void head_store(Matrix& dst, const Matrix& block, std::size_t h, std::size_t d) {
    for (std::size_t i = 0; i < dst.rows(); ++i) {
        std::copy(block.row(i), block.row(i) + d, dst.row(i) + h * d);
    }
}

}  // namespace detail

/// Static weight fusion: r1 on the block's hidden interface, r2 per head
/// between w_v and w_o, and (when enabled) r4's inverse pre-folded into
/// w_down so the online rotation before the down-projection cancels.
/// Requires the norm rescaling to be absorbed first.
inline ToyBlockWeights fuse_rotations(const ToyBlockWeights& w, const FusionPlan& plan) {
    w.validate();
    require(w.rms_absorbed, "fuse_rotations: absorb rms scales before fusing");
    require(plan.r1.rows() == w.hidden() && plan.r1.cols() == w.hidden(),
            "fuse_rotations: r1 must be hidden×hidden");
    require(plan.r2.rows() == w.head_dim && plan.r2.cols() == w.head_dim,
            "fuse_rotations: r2 must be head_dim×head_dim");

    ToyBlockWeights f = w;
    const Matrix bd2 = detail::block_diag_heads(plan.r2, w.heads);

    // Per-head value rotation: v → v·r2 per head, undone inside w_o.
    f.w_v = matmul(transpose(bd2), f.w_v);
    f.w_o = matmul(f.w_o, bd2);

    // Hidden-stream rotation: input-side weights pick up r1, output-side r1ᵀ.
    f.w_q = matmul(f.w_q, plan.r1);
    f.w_k = matmul(f.w_k, plan.r1);
    f.w_v = matmul(f.w_v, plan.r1);
    f.w_up = matmul(f.w_up, plan.r1);
    f.w_gate = matmul(f.w_gate, plan.r1);
    f.w_o = matmul(transpose(plan.r1), f.w_o);
    f.w_down = matmul(transpose(plan.r1), f.w_down);

    if (plan.r4_enabled) {
        require(plan.r4.rows() == w.ffn_dim(), "fuse_rotations: r4 must be ffn×ffn");
        f.w_down = matmul(f.w_down, plan.r4);
    }
    return f;
}

/// Pre-RMSNorm block forward pass in double precision. When `online` is
/// given, r3 rotates q and k per head (cancelling inside the attention
/// product) and r4 rotates the gated activation just before w_down, whose
/// counter-rotation must already be fused into the weights.
inline Matrix forward(const ToyBlockWeights& w, const Matrix& x,
                      const FusionPlan* online = nullptr) {
    w.validate();
    require(x.cols() == w.hidden(), "forward: input width must equal hidden");
    const std::size_t d = w.head_dim;

    const Matrix h1 = w.rms_absorbed ? rmsnorm(x) : rmsnorm_scaled(x, w.rms_scale_attn);
    const Matrix q_all = matmul_a_bt(h1, w.w_q);
    const Matrix k_all = matmul_a_bt(h1, w.w_k);
    const Matrix v_all = matmul_a_bt(h1, w.w_v);

    Matrix attn(x.rows(), w.hidden());
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t h = 0; h < w.heads; ++h) {
        Matrix qh = detail::head_slice(q_all, h, d);
        Matrix kh = detail::head_slice(k_all, h, d);
        const Matrix vh = detail::head_slice(v_all, h, d);
        if (online != nullptr && online->r3_enabled) {
            qh = matmul(qh, online->r3);
            kh = matmul(kh, online->r3);
        }
        Matrix scores = matmul_a_bt(qh, kh);
        for (std::size_t i = 0; i < scores.size(); ++i) scores.data()[i] *= inv_sqrt_d;
        detail::softmax_rows(scores);
        detail::head_store(attn, matmul(scores, vh), h, d);
    }
    const Matrix attn_out = matmul_a_bt(attn, w.w_o);
    const Matrix x2 = x + attn_out;

    const Matrix h2 = w.rms_absorbed ? rmsnorm(x2) : rmsnorm_scaled(x2, w.rms_scale_ffn);
    const Matrix gate = matmul_a_bt(h2, w.w_gate);
    const Matrix up = matmul_a_bt(h2, w.w_up);
    Matrix g(gate.rows(), gate.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double z = gate.data()[i];
        g.data()[i] = z / (1.0 + std::exp(-z)) * up.data()[i];  // SiLU gate
    }
    if (online != nullptr && online->r4_enabled) g = matmul(g, online->r4);
    const Matrix ffn_out = matmul_a_bt(g, w.w_down);
    return x2 + ffn_out;
}

/// Seeded random block; norm scales are non-uniform so that forgetting to
/// absorb them is visible.
inline ToyBlockWeights toy_block_random(std::size_t hidden, std::size_t heads,
                                        std::uint64_t seed) {
    require(heads >= 1 && hidden % heads == 0, "toy_block_random: heads must divide hidden");
    ToyBlockWeights w;
    w.heads = heads;
    w.head_dim = hidden / heads;
    const std::size_t ffn = 2 * hidden;
    Rng rng(seed);
    const double std_h = 1.0 / std::sqrt(static_cast<double>(hidden));
    auto fill = [&](Matrix& m, std::size_t r, std::size_t c) {
        m = Matrix(r, c);
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = std_h * rng.normal();
    };
    fill(w.w_q, hidden, hidden);
    fill(w.w_k, hidden, hidden);
    fill(w.w_v, hidden, hidden);
    fill(w.w_o, hidden, hidden);
    fill(w.w_up, ffn, hidden);
    fill(w.w_gate, ffn, hidden);
    fill(w.w_down, hidden, ffn);
    w.rms_scale_attn.resize(hidden);
    w.rms_scale_ffn.resize(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
        w.rms_scale_attn[j] = 0.5 + rng.uniform_open();
        w.rms_scale_ffn[j] = 0.5 + rng.uniform_open();
    }
    w.validate();
    return w;
}

inline double relative_diff(const Matrix& got, const Matrix& want) {
    const double scale = std::max(max_abs(want), 1e-300);
    return max_abs(got - want) / scale;
}

struct InvarianceCheck {
    std::string name;
    double worst_diff = 0.0;
    bool pass = false;
};

struct InvarianceReport {
    std::vector<InvarianceCheck> checks;
    double worst_diff = 0.0;
    bool all_pass = false;
};

/// Equivalence checks over seeded weight/input draws: RMSNorm commutation,
/// static r1+r2 fusion, online r3 cancellation, and online r4 with its
/// inverse pre-fused. Every check must sit below 1e-10 in double precision.
inline InvarianceReport invariance_suite(std::uint64_t seed, std::size_t hidden,
                                         std::size_t heads, std::size_t draws = 10) {
    require(heads >= 1 && hidden % heads == 0, "invariance_suite: heads must divide hidden");
    require(is_power_of_two(hidden) && is_power_of_two(hidden / heads),
            "invariance_suite: hidden and head_dim must be powers of two");
    const double threshold = 1e-10;
    const std::size_t head_dim = hidden / heads;
    const std::size_t tokens = 8;

    InvarianceReport rep;
    rep.checks = {{"rmsnorm_commutation", 0.0, false},
                  {"static_r1_r2_fusion", 0.0, false},
                  {"online_r3_cancellation", 0.0, false},
                  {"online_r4_fused_down", 0.0, false}};

    for (std::size_t dIdx = 0; dIdx < draws; ++dIdx) {
        const std::uint64_t s = seed + 1000 * dIdx;
        const ToyBlockWeights w = absorb_rms_scales(toy_block_random(hidden, heads, s));
        Matrix x(tokens, hidden);
        Rng rng(s + 17);
        for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();

        FusionPlan plan;
        plan.r1 = random_hadamard(hidden, s + 1);
        plan.r2 = random_hadamard(head_dim, s + 2);
        plan.r3 = random_hadamard(head_dim, s + 3);
        plan.r4 = random_hadamard(w.ffn_dim(), s + 4);

        const Matrix y = forward(w, x);

        rep.checks[0].worst_diff =
            std::max(rep.checks[0].worst_diff, rmsnorm_commutation_check(x, plan.r1));

        const ToyBlockWeights fused = fuse_rotations(w, plan);
        const Matrix y_fused = matmul(forward(fused, matmul(x, plan.r1)), transpose(plan.r1));
        rep.checks[1].worst_diff = std::max(rep.checks[1].worst_diff, relative_diff(y_fused, y));

        FusionPlan online3;
        online3.r3_enabled = true;
        online3.r3 = plan.r3;
        const Matrix y_r3 = forward(w, x, &online3);
        rep.checks[2].worst_diff = std::max(rep.checks[2].worst_diff, relative_diff(y_r3, y));

        FusionPlan plan4;
        plan4.r1 = Matrix::identity(hidden);
        plan4.r2 = Matrix::identity(head_dim);
        plan4.r4_enabled = true;
        plan4.r4 = plan.r4;
        const ToyBlockWeights fused4 = fuse_rotations(w, plan4);
        const Matrix y_r4 = forward(fused4, x, &plan4);
        rep.checks[3].worst_diff = std::max(rep.checks[3].worst_diff, relative_diff(y_r4, y));
    }

    rep.worst_diff = 0.0;
    rep.all_pass = true;
    for (auto& check : rep.checks) {
        check.pass = check.worst_diff < threshold;
        rep.worst_diff = std::max(rep.worst_diff, check.worst_diff);
        rep.all_pass = rep.all_pass && check.pass;
    }
    return rep;
}

/// Negative control: a non-orthogonal r1 must break the fused/unfused
/// equivalence. Returns the worst relative difference (expected ≫ 1e-6).
inline double invariance_negative_nonorthogonal(std::uint64_t seed, std::size_t hidden,
                                                std::size_t heads) {
    const ToyBlockWeights w = absorb_rms_scales(toy_block_random(hidden, heads, seed));
    Matrix x(8, hidden);
    Rng rng(seed + 17);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();

    FusionPlan plan;
    plan.r1 = Matrix::identity(hidden);
    for (std::size_t i = 0; i < plan.r1.size(); ++i) plan.r1.data()[i] += 0.1;
    plan.r2 = Matrix::identity(hidden / heads);

    const Matrix y = forward(w, x);
    const ToyBlockWeights fused = fuse_rotations(w, plan);
    const Matrix y_fused = matmul(forward(fused, matmul(x, plan.r1)), transpose(plan.r1));
    return relative_diff(y_fused, y);
}

/// Negative control: statically pushing r4 through the gated FFN
/// (rotating w_up/w_gate outputs instead of rotating online) must break
/// equivalence, since the elementwise gate does not commute with r4.
inline double invariance_negative_gate_fusion(std::uint64_t seed, std::size_t hidden,
                                              std::size_t heads) {
    const ToyBlockWeights w = absorb_rms_scales(toy_block_random(hidden, heads, seed));
    Matrix x(8, hidden);
    Rng rng(seed + 17);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    const Matrix r4 = random_hadamard(w.ffn_dim(), seed + 4);

    ToyBlockWeights broken = w;
    broken.w_up = matmul(transpose(r4), broken.w_up);
    broken.w_gate = matmul(transpose(r4), broken.w_gate);
    broken.w_down = matmul(broken.w_down, r4);

    return relative_diff(forward(broken, x), forward(w, x));
}

}  // namespace rotocal
