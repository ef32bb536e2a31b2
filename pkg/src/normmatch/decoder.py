"""Two-stream transformer decoder on the unit hypersphere.

Every sub-block (self-attention, cross-attention, global-token modulation,
MLP) re-projects token representations to unit norm and blends them with the
block input through learned element-wise step vectors used via absolute
value:

    f_A = Norm(Block(f));  f <- Norm(f + |alpha| * (f_A - f))

Per decoder layer, in order: self-attention on each stream (the global token
joins the keys/values as an extra element but is itself left unchanged),
cross-attention stream 1 <- 2 and then stream 2 <- 1 against the
just-updated stream 1, global-token modulation of each stream, and a shared
MLP over tokens plus global. Both streams use one set of layer parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import (
    normalize_rows,
    normalize_rows_backward,
    silu,
    silu_backward,
    softmax_rows,
    softmax_rows_backward,
)

__all__ = [
    "FeatureSequence",
    "init_decoder_params",
    "norm_self_attn",
    "norm_self_attn_backward",
    "norm_cross_attn",
    "norm_cross_attn_backward",
    "modulate_global",
    "modulate_global_backward",
    "norm_mlp",
    "norm_mlp_backward",
    "decode",
    "decode_backward",
]


@dataclass
class FeatureSequence:
    """Per-image decoder state: m unit-norm tokens plus one global token."""

    tokens: np.ndarray  # (m, d_model)
    global_token: np.ndarray  # (d_model,)

    def copy(self) -> "FeatureSequence":
        return FeatureSequence(self.tokens.copy(), self.global_token.copy())


def init_decoder_params(store, rng, d_model: int, layers: int, mlp_mult: int,
                        prefix: str = "dec") -> None:
    """Register per-layer decoder parameters (shared by both streams)."""
    hidden = mlp_mult * d_model
    alpha0 = 1.0 / layers
    for layer in range(layers):
        p = f"{prefix}{layer}."
        for block in ("sa", "ca"):
            for w in ("wq", "wk", "wv", "wo"):
                store.register(p + f"{block}.{w}",
                               rng.standard_normal((d_model, d_model)) / np.sqrt(d_model))
        store.register(p + "mlp.w1", rng.standard_normal((d_model, hidden)) / np.sqrt(d_model))
        store.register(p + "mlp.b1", np.zeros(hidden))
        store.register(p + "mlp.w2", rng.standard_normal((hidden, d_model)) / np.sqrt(hidden))
        store.register(p + "mlp.b2", np.zeros(d_model))
        store.register(p + "alpha_a", np.full(d_model, alpha0))
        store.register(p + "alpha_c", np.full(d_model, alpha0))
        store.register(p + "alpha_m", np.full(d_model, alpha0))


def _mha_forward(q_in, kv_in, wq, wk, wv, wo, heads: int):
    """Standard multi-head scaled dot-product attention. Returns (out, cache)."""
    nq, d = q_in.shape
    nk = kv_in.shape[0]
    if d % heads:
        raise ValueError("head count must divide d_model")
    dh = d // heads
    scale = 1.0 / np.sqrt(dh)
    q = (q_in @ wq).reshape(nq, heads, dh).transpose(1, 0, 2)
    k = (kv_in @ wk).reshape(nk, heads, dh).transpose(1, 0, 2)
    v = (kv_in @ wv).reshape(nk, heads, dh).transpose(1, 0, 2)
    scores = q @ k.transpose(0, 2, 1) * scale  # (heads, nq, nk)
    p, _ = softmax_rows(scores)
    ctx = p @ v
    merged = ctx.transpose(1, 0, 2).reshape(nq, d)
    out = merged @ wo
    cache = (q_in, kv_in, q, k, v, p, merged, wq, wk, wv, wo, scale)
    return out, cache


def _mha_backward(cache, g_out):
    """Returns (g_q_in, g_kv_in, (g_wq, g_wk, g_wv, g_wo))."""
    q_in, kv_in, q, k, v, p, merged, wq, wk, wv, wo, scale = cache
    heads, nq, dh = q.shape
    nk = kv_in.shape[0]

    g_wo = merged.T @ g_out
    g_merged = g_out @ wo.T
    g_ctx = g_merged.reshape(nq, heads, dh).transpose(1, 0, 2)
    g_p = g_ctx @ v.transpose(0, 2, 1)
    g_v = p.transpose(0, 2, 1) @ g_ctx
    g_scores = softmax_rows_backward(p, g_p)
    g_q = (g_scores @ k) * scale
    g_k = (g_scores.transpose(0, 2, 1) @ q) * scale

    g_q_flat = g_q.transpose(1, 0, 2).reshape(nq, -1)
    g_k_flat = g_k.transpose(1, 0, 2).reshape(nk, -1)
    g_v_flat = g_v.transpose(1, 0, 2).reshape(nk, -1)
    g_wq = q_in.T @ g_q_flat
    g_wk = kv_in.T @ g_k_flat
    g_wv = kv_in.T @ g_v_flat
    g_q_in = g_q_flat @ wq.T
    g_kv_in = g_k_flat @ wk.T + g_v_flat @ wv.T
    return g_q_in, g_kv_in, (g_wq, g_wk, g_wv, g_wo)


def _norm_residual_forward(base, raw, alpha_raw):
    """out = Norm(base + |alpha| * (Norm(raw) - base)). Returns (out, cache)."""
    f_a, nc1 = normalize_rows(raw)
    alpha = np.abs(alpha_raw)
    z = base + alpha * (f_a - base)
    out, nc2 = normalize_rows(z)
    return out, (base, f_a, alpha_raw, nc1, nc2)


def _norm_residual_backward(cache, g_out):
    """Returns (g_base, g_raw, g_alpha_raw)."""
    base, f_a, alpha_raw, nc1, nc2 = cache
    alpha = np.abs(alpha_raw)
    g_z = normalize_rows_backward(nc2, g_out)
    g_alpha_raw = np.sign(alpha_raw) * np.sum(g_z * (f_a - base), axis=0)
    g_raw = normalize_rows_backward(nc1, g_z * alpha)
    g_base = g_z * (1.0 - alpha)
    return g_base, g_raw, g_alpha_raw


def _attn_names(store, prefix, block):
    return tuple(store.value(f"{prefix}{block}.{w}") for w in ("wq", "wk", "wv", "wo"))


def norm_self_attn(seq: FeatureSequence, store, prefix: str, heads: int):
    """Normalized self-attention over one stream.

    The global token is appended to the keys/values so every keypoint can
    read whole-image context, but only the m keypoint tokens are updated;
    the global token passes through unchanged.
    """
    tokens = seq.tokens
    kv = np.vstack([tokens, seq.global_token[None, :]])
    wq, wk, wv, wo = _attn_names(store, prefix, "sa")
    raw, mc = _mha_forward(tokens, kv, wq, wk, wv, wo, heads)
    out, rc = _norm_residual_forward(tokens, raw, store.value(prefix + "alpha_a"))
    return FeatureSequence(out, seq.global_token), (mc, rc, prefix)


def norm_self_attn_backward(cache, g_tokens, g_global, store):
    """Returns (g_tokens_in, g_global_in) and accumulates parameter grads."""
    mc, rc, prefix = cache
    m = g_tokens.shape[0]
    g_base, g_raw, g_alpha = _norm_residual_backward(rc, g_tokens)
    g_q_in, g_kv, (g_wq, g_wk, g_wv, g_wo) = _mha_backward(mc, g_raw)
    store.add_grad(prefix + "alpha_a", g_alpha)
    for name, g in zip(("wq", "wk", "wv", "wo"), (g_wq, g_wk, g_wv, g_wo)):
        store.add_grad(f"{prefix}sa.{name}", g)
    g_tokens_in = g_base + g_q_in + g_kv[:m]
    g_global_in = g_global + g_kv[m]
    return g_tokens_in, g_global_in


def norm_cross_attn(seq: FeatureSequence, other: FeatureSequence, store,
                    prefix: str, heads: int):
    """Normalized cross-attention: seq tokens query the other stream's tokens."""
    wq, wk, wv, wo = _attn_names(store, prefix, "ca")
    raw, mc = _mha_forward(seq.tokens, other.tokens, wq, wk, wv, wo, heads)
    out, rc = _norm_residual_forward(seq.tokens, raw, store.value(prefix + "alpha_c"))
    return FeatureSequence(out, seq.global_token), (mc, rc, prefix)


def norm_cross_attn_backward(cache, g_tokens, store):
    """Returns (g_tokens_in, g_other_tokens) and accumulates parameter grads."""
    mc, rc, prefix = cache
    g_base, g_raw, g_alpha = _norm_residual_backward(rc, g_tokens)
    g_q_in, g_kv, (g_wq, g_wk, g_wv, g_wo) = _mha_backward(mc, g_raw)
    store.add_grad(prefix + "alpha_c", g_alpha)
    for name, g in zip(("wq", "wk", "wv", "wo"), (g_wq, g_wk, g_wv, g_wo)):
        store.add_grad(f"{prefix}ca.{name}", g)
    return g_base + g_q_in, g_kv


def modulate_global(seq: FeatureSequence):
    """Replace each token by Norm(token * global), element-wise product."""
    h = seq.tokens * seq.global_token[None, :]
    out, nc = normalize_rows(h)
    return FeatureSequence(out, seq.global_token), (seq.tokens, seq.global_token, nc)


def modulate_global_backward(cache, g_tokens, g_global):
    tokens, glob, nc = cache
    g_h = normalize_rows_backward(nc, g_tokens)
    g_tokens_in = g_h * glob[None, :]
    g_global_in = g_global + np.sum(g_h * tokens, axis=0)
    return g_tokens_in, g_global_in


def norm_mlp(seq: FeatureSequence, store, prefix: str):
    """Normalized MLP block over the m tokens and the global token."""
    x = np.vstack([seq.tokens, seq.global_token[None, :]])
    w1 = store.value(prefix + "mlp.w1")
    b1 = store.value(prefix + "mlp.b1")
    w2 = store.value(prefix + "mlp.w2")
    b2 = store.value(prefix + "mlp.b2")
    h = x @ w1 + b1
    a, sc = silu(h)
    raw = a @ w2 + b2
    out, rc = _norm_residual_forward(x, raw, store.value(prefix + "alpha_m"))
    seq_out = FeatureSequence(out[:-1], out[-1])
    return seq_out, (x, a, sc, rc, prefix)


def norm_mlp_backward(cache, g_tokens, g_global, store):
    """Returns (g_tokens_in, g_global_in) and accumulates parameter grads."""
    x, a, sc, rc, prefix = cache
    g_out = np.vstack([g_tokens, g_global[None, :]])
    g_base, g_raw, g_alpha = _norm_residual_backward(rc, g_out)
    w1 = store.value(prefix + "mlp.w1")
    w2 = store.value(prefix + "mlp.w2")
    g_a = g_raw @ w2.T
    g_h = silu_backward(sc, g_a)
    store.add_grad(prefix + "alpha_m", g_alpha)
    store.add_grad(prefix + "mlp.w2", a.T @ g_raw)
    store.add_grad(prefix + "mlp.b2", g_raw.sum(axis=0))
    store.add_grad(prefix + "mlp.w1", x.T @ g_h)
    store.add_grad(prefix + "mlp.b1", g_h.sum(axis=0))
    g_x = g_h @ w1.T + g_base
    return g_x[:-1], g_x[-1]


def decode(f1: FeatureSequence, f2: FeatureSequence, store, layers: int,
           heads: int, prefix: str = "dec"):
    """Run the full decoder stack.

    Returns (f1, f2, snapshots, caches) where snapshots[k] is the pair of
    post-layer token matrices (stream 1, stream 2) after layer k, feeding the
    layer-wise uniformity loss.
    """
    snapshots = []
    caches = []
    for layer in range(layers):
        p = f"{prefix}{layer}."
        f1, c_sa1 = norm_self_attn(f1, store, p, heads)
        f2, c_sa2 = norm_self_attn(f2, store, p, heads)
        f1, c_ca1 = norm_cross_attn(f1, f2, store, p, heads)
        f2, c_ca2 = norm_cross_attn(f2, f1, store, p, heads)
        f1, c_mod1 = modulate_global(f1)
        f2, c_mod2 = modulate_global(f2)
        f1, c_mlp1 = norm_mlp(f1, store, p)
        f2, c_mlp2 = norm_mlp(f2, store, p)
        snapshots.append((f1.tokens.copy(), f2.tokens.copy()))
        caches.append((c_sa1, c_sa2, c_ca1, c_ca2, c_mod1, c_mod2, c_mlp1, c_mlp2))
    return f1, f2, snapshots, caches


def decode_backward(caches, store, g_f1_tokens, g_f1_global, g_f2_tokens,
                    g_f2_global, snapshot_grads=None):
    """Backward through the decoder stack.

    snapshot_grads, when given, is a list of per-layer (g_tokens1, g_tokens2)
    pairs injected at each layer boundary (gradients of losses that read the
    layer snapshots). Returns input gradients
    (g_f1_tokens, g_f1_global, g_f2_tokens, g_f2_global).
    """
    g_t1, g_g1 = g_f1_tokens.copy(), g_f1_global.copy()
    g_t2, g_g2 = g_f2_tokens.copy(), g_f2_global.copy()
    for layer in reversed(range(len(caches))):
        if snapshot_grads is not None:
            s1, s2 = snapshot_grads[layer]
            g_t1 = g_t1 + s1
            g_t2 = g_t2 + s2
        c_sa1, c_sa2, c_ca1, c_ca2, c_mod1, c_mod2, c_mlp1, c_mlp2 = caches[layer]
        g_t2, g_g2 = norm_mlp_backward(c_mlp2, g_t2, g_g2, store)
        g_t1, g_g1 = norm_mlp_backward(c_mlp1, g_t1, g_g1, store)
        g_t2, g_g2 = modulate_global_backward(c_mod2, g_t2, g_g2)
        g_t1, g_g1 = modulate_global_backward(c_mod1, g_t1, g_g1)
        g_t2, g_other = norm_cross_attn_backward(c_ca2, g_t2, store)
        g_t1 = g_t1 + g_other
        g_t1, g_other = norm_cross_attn_backward(c_ca1, g_t1, store)
        g_t2 = g_t2 + g_other
        g_t2, g_g2 = norm_self_attn_backward(c_sa2, g_t2, g_g2, store)
        g_t1, g_g1 = norm_self_attn_backward(c_sa1, g_t1, g_g1, store)
    return g_t1, g_g1, g_t2, g_g2
