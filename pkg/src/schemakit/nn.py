"""Minimal decoder-only transformer kernel: forward, backward, Adam.

Plain numpy, float32 for training (float64 available for gradient checks).
Pre-norm blocks with learned positional embeddings:

    x = tok_emb[ids] + pos_emb
    x += attn(LN(x));  x += ffn(LN(x))   (per layer)
    logits = LN(x) @ w_out + b_out

Padding needs no key masking: PAD only ever follows EOS, so under the causal
mask real positions never attend to it, and pad-position outputs are excluded
from the loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fastops
from .errors import NonFiniteLoss


@dataclass(frozen=True)
class ModelConfig:
    context_len: int = 256
    d_model: int = 128
    n_layers: int = 6
    n_heads: int = 4
    d_ff: int = 512
    vocab_size: int = 80
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter tree in declared (checkpoint) order."""
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (cfg.vocab_size, cfg.d_model),
        "pos_emb": (cfg.context_len, cfg.d_model),
    }
    for i in range(cfg.n_layers):
        p = f"l{i}."
        shapes[p + "ln1.g"] = (cfg.d_model,)
        shapes[p + "ln1.b"] = (cfg.d_model,)
        for w in ("wq", "wk", "wv", "wo"):
            shapes[p + w] = (cfg.d_model, cfg.d_model)
        for b in ("bq", "bk", "bv", "bo"):
            shapes[p + b] = (cfg.d_model,)
        shapes[p + "ln2.g"] = (cfg.d_model,)
        shapes[p + "ln2.b"] = (cfg.d_model,)
        shapes[p + "w1"] = (cfg.d_model, cfg.d_ff)
        shapes[p + "b1"] = (cfg.d_ff,)
        shapes[p + "w2"] = (cfg.d_ff, cfg.d_model)
        shapes[p + "b2"] = (cfg.d_model,)
    shapes["lnf.g"] = (cfg.d_model,)
    shapes["lnf.b"] = (cfg.d_model,)
    shapes["w_out"] = (cfg.d_model, cfg.vocab_size)
    shapes["b_out"] = (cfg.vocab_size,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    """Exact count of trainable scalars."""
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def block_param_count(cfg: ModelConfig) -> int:
    """Scalars inside the transformer blocks (excludes embeddings and head)."""
    return sum(
        int(np.prod(s))
        for name, s in param_shapes(cfg).items()
        if name.startswith("l") and name[1].isdigit()
    )


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name.endswith((".b", "b1", "b2", "bq", "bk", "bv", "bo", "b_out")):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = (rng.standard_normal(shape) * 0.02).astype(dtype)
    return params


_LN_EPS = 1e-5
_SQRT_2_OVER_PI = 0.7978845608028654


def _layernorm(x, g, b):
    if fastops.layernorm is not None:
        out, xhat, inv = fastops.layernorm(x, g, b, _LN_EPS)
        return out, (xhat, inv)
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_bwd(dout, cache, g):
    xhat, inv = cache
    if fastops.layernorm_bwd is not None:
        return fastops.layernorm_bwd(dout, xhat, inv, g)
    dg = (dout * xhat).sum(axis=tuple(range(dout.ndim - 1)))
    db = dout.sum(axis=tuple(range(dout.ndim - 1)))
    dxhat = dout * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _relu(x):
    return np.maximum(x, 0.0)


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def forward(params, ids, cfg: ModelConfig, want_cache: bool = False, dropout_rng=None):
    """Logits [B, T, V]; optionally the cache needed for backward.

    dropout_rng enables inverted dropout on the two residual branches when
    cfg.dropout > 0 (training only).
    """
    B, T = ids.shape
    if T > cfg.context_len:
        from .errors import ContextOverflow

        raise ContextOverflow(f"sequence length {T} > context {cfg.context_len}")
    dtype = params["tok_emb"].dtype
    rate = cfg.dropout if dropout_rng is not None else 0.0

    def drop_mask(shape):
        if rate <= 0:
            return None
        return (dropout_rng.random(shape) >= rate).astype(dtype) / (1.0 - rate)

    x = params["tok_emb"][ids] + params["pos_emb"][:T]
    neg = np.asarray(-1e9 if dtype == np.float32 else -1e18, dtype=dtype)
    scale = np.asarray(1.0 / np.sqrt(cfg.d_head), dtype=dtype)
    fused = fastops.causal_softmax_ is not None
    causal = None if fused else np.triu(np.full((T, T), neg, dtype=dtype), k=1)
    layers = []
    for i in range(cfg.n_layers):
        p = f"l{i}."
        h1, ln1c = _layernorm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        q = np.ascontiguousarray(_split_heads(h1 @ params[p + "wq"] + params[p + "bq"], cfg.n_heads))
        k = np.ascontiguousarray(_split_heads(h1 @ params[p + "wk"] + params[p + "bk"], cfg.n_heads))
        v = np.ascontiguousarray(_split_heads(h1 @ params[p + "wv"] + params[p + "bv"], cfg.n_heads))
        kt = np.ascontiguousarray(k.transpose(0, 1, 3, 2))
        att = np.matmul(q, kt)
        if fused:
            fastops.causal_softmax_(att, 1.0 / np.sqrt(cfg.d_head))
        else:
            att *= scale
            att += causal
            att -= att.max(-1, keepdims=True)
            np.exp(att, out=att)
            att /= att.sum(-1, keepdims=True)
        z = _merge_heads(np.matmul(att, v))
        attn_out = z @ params[p + "wo"] + params[p + "bo"]
        m_attn = drop_mask(attn_out.shape)
        if m_attn is not None:
            attn_out = attn_out * m_attn
        x1 = x + attn_out
        h2, ln2c = _layernorm(x1, params[p + "ln2.g"], params[p + "ln2.b"])
        a = h2 @ params[p + "w1"]
        a += params[p + "b1"]
        np.maximum(a, 0.0, out=a)
        ff = a @ params[p + "w2"] + params[p + "b2"]
        m_ff = drop_mask(ff.shape)
        if m_ff is not None:
            ff = ff * m_ff
        x = x1 + ff
        if want_cache:
            layers.append((h1, ln1c, q, k, v, att, z, h2, ln2c, a, m_attn, m_ff))
    hf, lnfc = _layernorm(x, params["lnf.g"], params["lnf.b"])
    logits = hf @ params["w_out"] + params["b_out"]
    if want_cache:
        return logits, (ids, layers, x, hf, lnfc)
    return logits


def softmax(logits):
    z = logits - logits.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def loss_and_grads(params, ids, targets, mask, cfg: ModelConfig, dropout_rng=None):
    """Masked mean cross-entropy over target positions, plus full gradients.

    targets[b, t] is the token expected at position t+1; mask selects the
    positions that contribute to the loss.
    """
    if not mask.any():
        raise ValueError("loss mask selects no positions")
    logits, cache = forward(params, ids, cfg, want_cache=True, dropout_rng=dropout_rng)
    _, layers, x_final, hf, lnfc = cache
    B, T, V = logits.shape
    probs = softmax(logits)
    nmask = mask.sum()
    rows = probs[np.arange(B)[:, None], np.arange(T)[None, :], targets]
    logp = np.log(np.maximum(rows, 1e-30))
    loss = float(-(logp * mask).sum() / nmask)

    dlogits = probs
    dlogits[np.arange(B)[:, None], np.arange(T)[None, :], targets] -= 1.0
    dlogits *= (mask / nmask)[..., None]

    grads = {name: None for name in params}
    grads["w_out"] = hf.reshape(-1, hf.shape[-1]).T @ dlogits.reshape(-1, V)
    grads["b_out"] = dlogits.sum((0, 1))
    dhf = dlogits @ params["w_out"].T
    dx, grads["lnf.g"], grads["lnf.b"] = _layernorm_bwd(dhf, lnfc, params["lnf.g"])

    D = cfg.d_model
    for i in reversed(range(cfg.n_layers)):
        p = f"l{i}."
        h1, ln1c, q, k, v, att, z, h2, ln2c, a, m_attn, m_ff = layers[i]
        # ffn branch
        dff = dx if m_ff is None else dx * m_ff
        grads[p + "w2"] = a.reshape(-1, cfg.d_ff).T @ dff.reshape(-1, D)
        grads[p + "b2"] = dff.sum((0, 1))
        da = dff @ params[p + "w2"].T
        da *= a > 0
        grads[p + "w1"] = h2.reshape(-1, D).T @ da.reshape(-1, cfg.d_ff)
        grads[p + "b1"] = da.sum((0, 1))
        dh2 = da @ params[p + "w1"].T
        dx1, grads[p + "ln2.g"], grads[p + "ln2.b"] = _layernorm_bwd(dh2, ln2c, params[p + "ln2.g"])
        dx1 += dx
        # attention branch
        dattn_out = dx1 if m_attn is None else dx1 * m_attn
        grads[p + "wo"] = z.reshape(-1, D).T @ dattn_out.reshape(-1, D)
        grads[p + "bo"] = dattn_out.sum((0, 1))
        dz = np.ascontiguousarray(_split_heads(dattn_out @ params[p + "wo"].T, cfg.n_heads))
        vt = np.ascontiguousarray(v.transpose(0, 1, 3, 2))
        datt = np.matmul(dz, vt)
        dv = np.matmul(att.transpose(0, 1, 3, 2), dz)
        if fastops.causal_softmax_grad is not None:
            dscores = fastops.causal_softmax_grad(att, datt, 1.0 / np.sqrt(cfg.d_head))
        else:
            dscores = att * (datt - (datt * att).sum(-1, keepdims=True))
            dscores *= 1.0 / np.sqrt(cfg.d_head)
        dq = np.matmul(dscores, k)
        dk = np.matmul(dscores.transpose(0, 1, 3, 2), q)
        dq, dk, dv = (_merge_heads(t) for t in (dq, dk, dv))
        dh1 = np.zeros_like(h1)
        for mat, dmat, bias in (("wq", dq, "bq"), ("wk", dk, "bk"), ("wv", dv, "bv")):
            grads[p + mat] = h1.reshape(-1, D).T @ dmat.reshape(-1, D)
            grads[p + bias] = dmat.sum((0, 1))
            dh1 += dmat @ params[p + mat].T
        dx_ln, grads[p + "ln1.g"], grads[p + "ln1.b"] = _layernorm_bwd(dh1, ln1c, params[p + "ln1.g"])
        dx = dx1 + dx_ln

    grads["pos_emb"] = np.zeros_like(params["pos_emb"])
    grads["pos_emb"][:T] = dx.sum(0)
    # one-hot GEMM instead of scatter-add: faster and deterministic
    dx2d = dx.reshape(-1, D)
    onehot = np.zeros((dx2d.shape[0], V), dtype=dx.dtype)
    onehot[np.arange(dx2d.shape[0]), ids.ravel()] = 1.0
    grads["tok_emb"] = onehot.T @ dx2d
    return loss, grads


@dataclass
class AdamConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_steps: int = 1000
    clip_norm: float = 1.0


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params, grads, state: AdamState, cfg: AdamConfig) -> float:
    """In-place adaptive-moment update with warmup and global-norm clipping.

    Returns the learning rate actually used (diagnostics).
    """
    state.step += 1
    lr = cfg.lr * min(1.0, state.step / max(1, cfg.warmup_steps))
    if cfg.clip_norm > 0:
        sq = 0.0
        for gr in grads.values():
            sq += float((gr.astype(np.float64) ** 2).sum())
        norm = np.sqrt(sq)
        if norm > cfg.clip_norm:
            scale = cfg.clip_norm / (norm + 1e-12)
            for gr in grads.values():
                gr *= scale
    b1c = 1.0 - cfg.beta1**state.step
    b2c = 1.0 - cfg.beta2**state.step
    for name, p in params.items():
        gr = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1 - cfg.beta1) * gr
        v *= cfg.beta2
        v += (1 - cfg.beta2) * gr * gr
        p -= (lr * (m / b1c) / (np.sqrt(v / b2c) + cfg.eps)).astype(p.dtype)
    return lr


def check_finite(loss: float, params) -> None:
    if not np.isfinite(loss):
        stats = {
            name: (float(np.abs(p).max()), bool(np.isfinite(p).all()))
            for name, p in params.items()
        }
        bad = [n for n, (_, ok) in stats.items() if not ok]
        raise NonFiniteLoss(f"loss={loss}; non-finite params: {bad or 'none'}")


# --- greedy decoding with a per-layer key/value cache -------------------------


class DecodeCache:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.k = [None] * cfg.n_layers
        self.v = [None] * cfg.n_layers
        self.length = 0


def _forward_cached(params, ids, cfg: ModelConfig, cache: DecodeCache):
    """Run positions [cache.length, cache.length+T) appending to the cache."""
    T = ids.shape[0]
    pos0 = cache.length
    x = params["tok_emb"][ids][None, :, :] + params["pos_emb"][pos0 : pos0 + T]
    dtype = x.dtype
    for i in range(cfg.n_layers):
        p = f"l{i}."
        h1, _ = _layernorm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        q = _split_heads(h1 @ params[p + "wq"] + params[p + "bq"], cfg.n_heads)
        k = _split_heads(h1 @ params[p + "wk"] + params[p + "bk"], cfg.n_heads)
        v = _split_heads(h1 @ params[p + "wv"] + params[p + "bv"], cfg.n_heads)
        if cache.k[i] is not None:
            k = np.concatenate([cache.k[i], k], axis=2)
            v = np.concatenate([cache.v[i], v], axis=2)
        cache.k[i], cache.v[i] = k, v
        scores = np.matmul(q, k.transpose(0, 1, 3, 2)) / np.sqrt(cfg.d_head)
        if T > 1:
            total = k.shape[2]
            neg = -1e9 if dtype == np.float32 else -1e18
            mask = np.triu(np.full((T, total), neg, dtype=dtype), k=1 + pos0)
            scores = scores + mask
        scores -= scores.max(-1, keepdims=True)
        e = np.exp(scores)
        att = e / e.sum(-1, keepdims=True)
        z = _merge_heads(np.matmul(att, v))
        x = x + (z @ params[p + "wo"] + params[p + "bo"])
        h2, _ = _layernorm(x, params[p + "ln2.g"], params[p + "ln2.b"])
        a = _relu(h2 @ params[p + "w1"] + params[p + "b1"])
        x = x + (a @ params[p + "w2"] + params[p + "b2"])
    cache.length += T
    hf, _ = _layernorm(x[:, -1], params["lnf.g"], params["lnf.b"])
    return hf @ params["w_out"] + params["b_out"]


def decode_greedy(params, cfg: ModelConfig, prefix_ids, eos_id: int, max_new: int):
    """Greedy continuation of prefix_ids until EOS; returns generated ids
    (without EOS). Raises LengthCapExceeded if EOS never arrives."""
    from .errors import ContextOverflow, LengthCapExceeded

    cache = DecodeCache(cfg)
    prefix = np.asarray(prefix_ids, dtype=np.int64)
    if len(prefix) + max_new > cfg.context_len:
        raise ContextOverflow(
            f"prefix {len(prefix)} + cap {max_new} exceeds context {cfg.context_len}"
        )
    logits = _forward_cached(params, prefix, cfg, cache)
    generated: list[int] = []
    for _ in range(max_new):
        nxt = int(logits[0].argmax())
        if nxt == eos_id:
            return generated
        generated.append(nxt)
        logits = _forward_cached(params, np.asarray([nxt], dtype=np.int64), cfg, cache)
    raise LengthCapExceeded(f"no EOS within {max_new} tokens")
