"""Named gradient checks covering every primitive and both losses.

Each check compares the tape gradient against float64 central
differences at h = 1e-3 and reports the max relative error; the CLI
prints one line per check and the acceptance suite pins the 1e-3 bound.
End-to-end encoder checks differentiate with respect to leaves whose
paths avoid the quantizer's stop-gradient (mask embedding, filler
attention weights, content input): the quantized forward is
piecewise-constant in its input, so finite differences through it
measure nothing. The rotation backward itself is checked against its
frozen linear map, materialized per row at the evaluation point.

Every random draw happens while building a check, never inside the
checked function: grad_check re-evaluates that function hundreds of
times and it must be deterministic.
"""

from __future__ import annotations

import numpy as np

from .gradcheck import grad_check
from .objectives import MlpHead, sd_loss, sp_loss
from .quantizer import Codebook, _nearest_indices, quantize_rt, rotation_align
from .styleenc import EncodeOptions, StyleEncoder, StyleEncoderConfig
from .tensor import (
    Tape,
    Tensor,
    absolute,
    add,
    backward,
    bias_add,
    broadcast_rows,
    concat_cols,
    conv1d,
    cosine_rows,
    gather_rows,
    gelu,
    layer_norm,
    matmul,
    mean_all,
    mean_rows,
    mul,
    neg,
    record_op,
    scale,
    scatter_rows_filled,
    slice_cols,
    softmax_lastdim,
    square,
    sub,
    sum_all,
    transpose,
)

H = 1e-3
# Deep composites (losses through MLP heads, whole-encoder graphs) have much
# larger third derivatives than single primitives, so the O(h^2) truncation
# error of the central difference can cross the pass bar on unlucky draws.
# A finer step keeps the oracle's own error well under tolerance while
# float64 roundoff (~1e-12/H_DEEP) stays negligible.
H_DEEP = 1e-4


def _wsum(x: Tensor, w: np.ndarray) -> Tensor:
    return sum_all(mul(x, Tensor(w)))


def rt_backward_error(seed: int = 0, t: int = 5, d: int = 6, k: int = 7) -> float:
    """Tape gradient of sum(w * quantize_rt(e)) vs finite differences of
    the frozen map e -> sum(w * scale_i R_i e_i), R_i fixed at e0."""
    rng = np.random.default_rng(seed)
    e0 = rng.normal(size=(t, d))
    codes = rng.normal(0.0, 1.0 / np.sqrt(d), size=(k, d))
    cb = Codebook(codes=Tensor(codes.astype(np.float64), requires_grad=True))
    w = rng.normal(size=(t, d))

    e_var = Tensor(e0.copy(), requires_grad=True)
    with Tape():
        q, _ = quantize_rt(e_var, cb)
        backward(_wsum(q, w))
    analytic = np.asarray(e_var.grad, dtype=np.float64)

    idx = _nearest_indices(codes, e0)
    rots = [rotation_align(e0[i], codes[idx[i]]) for i in range(t)]
    scales = [np.linalg.norm(codes[idx[i]]) / np.linalg.norm(e0[i]) for i in range(t)]

    def frozen(flat: np.ndarray) -> float:
        e = flat.reshape(t, d)
        return float(
            sum(w[i] @ (scales[i] * rots[i].apply(e[i])) for i in range(t))
        )

    flat = e0.reshape(-1).copy()
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + H
        up = frozen(flat)
        flat[i] = keep - H
        down = frozen(flat)
        flat[i] = keep
        fd[i] = (up - down) / (2.0 * H)
    an = analytic.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(an)), 1e-8)
    return float(np.max(np.abs(fd - an) / denom))


def sd_content_gradient_is_zero(seed: int = 0) -> bool:
    """The content side of sd_loss must receive no gradient at all."""
    rng = np.random.default_rng(seed)
    content = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    style = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    with Tape():
        backward(sd_loss(content, style))
    return content.grad is None and style.grad is not None


def _tiny_encoder(seed: int):
    config = StyleEncoderConfig(
        dim=16,
        mel_bins=12,
        conv_blocks=1,
        uf_blocks=1,
        attention_heads=2,
        conv_expand=2,
        rvq_depth=2,
        codebook_size=8,
    )
    rng = np.random.default_rng(seed)
    enc = StyleEncoder(config, rng)
    for p in enc.parameters().values():
        p.data = p.data.astype(np.float64)
    t = 6
    mel = rng.normal(size=(t, config.mel_bins))
    vuv = np.array([True, False, True, True, False, True])
    content = rng.normal(size=(t, config.dim))
    w = rng.normal(size=(t, config.dim))
    return enc, mel, vuv, content, w


def build_checks(seed: int = 0, corrupt: bool = False) -> dict:
    """Name -> zero-argument callable returning a max relative error."""
    rng = np.random.default_rng(seed)
    checks: dict = {}

    x34 = rng.normal(size=(3, 4))
    w45 = rng.normal(size=(4, 5))
    w35 = rng.normal(size=(3, 5))
    b5 = rng.normal(size=5)
    checks["matmul_gelu_bias"] = lambda: grad_check(
        lambda x: _wsum(gelu(bias_add(matmul(x, Tensor(w45)), Tensor(b5))), w35), Tensor(x34), H
    )
    checks["matmul_left_transpose"] = lambda: grad_check(
        lambda x: sum_all(matmul(transpose(x), Tensor(w35))), Tensor(x34), H
    )
    checks["elementwise_chain"] = lambda: grad_check(
        lambda x: sum_all(mul(add(square(x), 1.5), gelu(sub(neg(x), 0.25)))), Tensor(x34), H
    )
    # squared argument keeps |.| away from its kink at zero
    checks["absolute"] = lambda: grad_check(
        lambda x: sum_all(absolute(add(square(x), 0.5))), Tensor(x34), H
    )
    checks["scale_mean"] = lambda: grad_check(
        lambda x: mean_all(scale(x, -2.5)), Tensor(x34), H
    )
    w34 = rng.normal(size=(3, 4))
    checks["softmax_rows"] = lambda: grad_check(
        lambda x: _wsum(softmax_lastdim(x), w34), Tensor(x34), H
    )

    x46 = rng.normal(size=(4, 6))
    g6 = rng.normal(size=6)
    b6 = rng.normal(size=6)
    w46 = rng.normal(size=(4, 6))
    checks["layer_norm_input"] = lambda: grad_check(
        lambda x: _wsum(layer_norm(x, Tensor(g6), Tensor(b6)), w46), Tensor(x46), H
    )
    checks["layer_norm_gain"] = lambda: grad_check(
        lambda g: _wsum(layer_norm(Tensor(x46), g, Tensor(b6)), w46), Tensor(g6), H
    )

    x85 = rng.normal(size=(8, 5))
    k53 = rng.normal(size=(5, 3))
    w83 = rng.normal(size=(8, 3))
    k75 = rng.normal(size=(7, 5))
    w85 = rng.normal(size=(8, 5))
    checks["conv_pointwise"] = lambda: grad_check(
        lambda x: _wsum(conv1d(x, Tensor(k53), "pointwise"), w83), Tensor(x85), H
    )
    checks["conv_depthwise_input"] = lambda: grad_check(
        lambda x: _wsum(conv1d(x, Tensor(k75), "depthwise_k7"), w85), Tensor(x85), H
    )
    checks["conv_depthwise_kernel"] = lambda: grad_check(
        lambda k: _wsum(conv1d(Tensor(x85), k, "depthwise_k7"), w85), Tensor(k75), H
    )

    x35 = rng.normal(size=(3, 5))
    idx_dup = np.array([0, 2, 2, 1])
    w45b = rng.normal(size=(4, 5))
    checks["gather_rows_duplicates"] = lambda: grad_check(
        lambda x: _wsum(gather_rows(x, idx_dup), w45b), Tensor(x35), H
    )

    v24 = rng.normal(size=(2, 4))
    sc_idx = np.array([1, 3])
    fill0 = rng.normal(size=4)
    w64 = rng.normal(size=(6, 4))
    checks["scatter_values"] = lambda: grad_check(
        lambda v: _wsum(scatter_rows_filled(v, sc_idx, Tensor(fill0), 6), w64), Tensor(v24), H
    )
    checks["scatter_fill"] = lambda: grad_check(
        lambda f: _wsum(scatter_rows_filled(Tensor(v24), sc_idx, f, 6), w64), Tensor(fill0), H
    )

    x35b = rng.normal(size=(3, 5))
    w35b = rng.normal(size=(3, 5))
    checks["slice_concat"] = lambda: grad_check(
        lambda x: _wsum(concat_cols([square(slice_cols(x, 0, 2)), slice_cols(x, 2, 5)]), w35b),
        Tensor(x35b),
        H,
    )
    v4 = rng.normal(size=4)
    checks["broadcast_rows"] = lambda: grad_check(
        lambda v: sum_all(square(broadcast_rows(v, 5))), Tensor(v4), H
    )
    x53 = rng.normal(size=(5, 3))
    checks["mean_rows"] = lambda: grad_check(
        lambda x: sum_all(square(mean_rows(x))), Tensor(x53), H
    )

    u54 = rng.normal(size=(5, 4))
    v54 = rng.normal(size=(5, 4))
    w5 = rng.normal(size=5)
    checks["cosine_rows_u"] = lambda: grad_check(
        lambda u: _wsum(cosine_rows(u, Tensor(v54)), w5), Tensor(u54), H
    )

    checks["rt_frozen_map"] = lambda: rt_backward_error(seed)

    c56 = rng.normal(size=(5, 6))
    s56 = rng.normal(size=(5, 6))
    checks["sd_loss_style"] = lambda: grad_check(
        lambda s: sd_loss(Tensor(c56), s), Tensor(s56), H
    )

    head_s = MlpHead(6, 4, np.random.default_rng(seed + 3), hidden=5)
    head_p = MlpHead(3, 4, np.random.default_rng(seed + 4), hidden=5)
    for head in (head_s, head_p):
        for p in head.parameters("h").values():
            p.data = p.data.astype(np.float64)
    low53 = rng.normal(size=(5, 3))
    sp_style = rng.normal(size=(5, 6))
    checks["sp_loss_style"] = lambda: grad_check(
        lambda s: sp_loss(s, Tensor(low53), head_s, head_p), Tensor(sp_style), H_DEEP
    )

    def sp_head_weight():
        keep = head_s.w1
        try:
            def f(w):
                head_s.w1 = w
                return sp_loss(Tensor(sp_style), Tensor(low53), head_s, head_p)

            return grad_check(f, Tensor(keep.data.copy()), H_DEEP)
        finally:
            head_s.w1 = keep

    checks["sp_loss_head_weight"] = sp_head_weight

    enc, mel0, vuv0, content0, wenc = _tiny_encoder(seed + 10)
    opts = EncodeOptions()

    def enc_loss() -> Tensor:
        emb, _ = enc.encode(Tensor(mel0), vuv0, Tensor(content0), opts)
        return _wsum(emb.aligned, wenc)

    def e2e_mask_embedding():
        keep = enc.mask_embedding
        try:
            def f(x):
                enc.mask_embedding = x
                return enc_loss()

            return grad_check(f, Tensor(keep.data.copy()), H_DEEP)
        finally:
            enc.mask_embedding = keep

    def e2e_filler_value_weight():
        keep = enc.fillers[0].attn.wv
        try:
            def f(x):
                enc.fillers[0].attn.wv = x
                return enc_loss()

            return grad_check(f, Tensor(keep.data.copy()), H_DEEP)
        finally:
            enc.fillers[0].attn.wv = keep

    def e2e_content():
        def f(x):
            emb, _ = enc.encode(Tensor(mel0), vuv0, x, opts)
            return _wsum(emb.aligned, wenc)

        return grad_check(f, Tensor(content0.copy()), H_DEEP)

    def frontend_mel():
        def f(x):
            return _wsum(enc.frontend.forward(x), wenc)

        return grad_check(f, Tensor(mel0.copy()), H_DEEP)

    checks["encode_mask_embedding"] = e2e_mask_embedding
    checks["encode_filler_value_weight"] = e2e_filler_value_weight
    checks["encode_content_input"] = e2e_content
    checks["frontend_mel_input"] = frontend_mel

    if corrupt:
        xc = rng.normal(size=(3, 3))

        def corrupted():
            def bad_square(x: Tensor) -> Tensor:
                d = x.data
                # deliberately wrong backward (factor 3 instead of 2)
                return record_op(d * d, (x,), lambda g: (3.0 * g * d,))

            return grad_check(lambda x: sum_all(bad_square(x)), Tensor(xc), H)

        checks["corrupt_canary"] = corrupted

    return checks


def run_suite(seed: int = 0, corrupt: bool = False) -> dict[str, float]:
    """Execute every check; mapping preserves definition order."""
    return {name: float(fn()) for name, fn in build_checks(seed, corrupt).items()}
