"""Forward and analytic backward passes of the two task heads.

Per head: (optional) pre-norm residual MLP adapter over patch tokens, a
LayerNorm, single-query multi-head cross-attention (sine positional encodings
added to keys only), a final LayerNorm, and a linear output. The height head
maps to a non-negative scalar (ReLU, or max-height-scaled sigmoid); the
classification head concatenates the attended token with the backbone cls
token and maps to class probabilities.

Everything is f64 numpy; gradients are derived by hand and verified against
central finite differences (see gradcheck).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ..errors import InvalidDim, InvalidHeads, NonFinite, ShapeMismatch
from ..losses import cross_entropy, smooth_l1
from .params import RELU, HeadParams, HeadsConfig, TokenSet

POS_ENC_TEMPERATURE = 10000.0
SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def sine_pos_encoding_2d(gh: int, gw: int, d: int) -> np.ndarray:
    """2D sine positional encodings for a gh x gw token grid, shape (gh*gw, d).

    Channels [0, d/2) encode the row coordinate, [d/2, d) the column, each as
    interleaved sin/cos over geometric frequencies. Coordinates are
    2*pi * (index + 1) / extent.
    """
    if d % 4 != 0:
        raise InvalidDim(f"d={d} must be divisible by 4")
    if gh < 1 or gw < 1:
        raise InvalidDim(f"grid ({gh}, {gw}) must be positive")
    half = d // 2
    pairs = half // 2
    div = POS_ENC_TEMPERATURE ** (np.arange(pairs) / pairs)  # (pairs,)

    def encode(coord: np.ndarray) -> np.ndarray:
        phase = coord[:, None] / div[None, :]  # (n, pairs)
        enc = np.empty((coord.size, half))
        enc[:, 0::2] = np.sin(phase)
        enc[:, 1::2] = np.cos(phase)
        return enc

    rows = 2.0 * np.pi * (np.arange(gh) + 1) / gh
    cols = 2.0 * np.pi * (np.arange(gw) + 1) / gw
    row_enc = encode(rows)  # (gh, half)
    col_enc = encode(cols)  # (gw, half)
    out = np.empty((gh * gw, d))
    out[:, :half] = np.repeat(row_enc, gw, axis=0)
    out[:, half:] = np.tile(col_enc, (gh, 1))
    return out


# low-level blocks (forward + backward pairs)


def _layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray, eps: float):
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return xhat * scale + shift, (xhat, inv_std, scale)


def _layer_norm_backward(dy: np.ndarray, cache):
    xhat, inv_std, scale = cache
    d = xhat.shape[-1]
    dg = (dy * xhat).reshape(-1, d).sum(axis=0)
    db = dy.reshape(-1, d).sum(axis=0)
    dyg = dy * scale
    dx = inv_std * (
        dyg
        - dyg.mean(axis=-1, keepdims=True)
        - xhat * (dyg * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + special.erf(x / SQRT2))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + special.erf(x / SQRT2)) + x * INV_SQRT_2PI * np.exp(-0.5 * x * x)


def mlp_adapter_forward(
    tokens: np.ndarray,
    ln1_scale: np.ndarray,
    ln1_shift: np.ndarray,
    w1: np.ndarray,
    w2: np.ndarray,
    eps: float = 1e-6,
) -> np.ndarray:
    """Pre-norm residual MLP: tokens + GELU(LN(tokens) @ w1) @ w2."""
    if tokens.ndim != 2 or tokens.shape[1] != w1.shape[0] or w1.shape[1] != w2.shape[0]:
        raise ShapeMismatch(
            f"adapter shapes: tokens {tokens.shape}, w1 {w1.shape}, w2 {w2.shape}"
        )
    normed, _ = _layer_norm(tokens, ln1_scale, ln1_shift, eps)
    return tokens + _gelu(normed @ w1) @ w2


def cross_attention_forward(
    query: np.ndarray,
    keys_values: np.ndarray,
    pos: np.ndarray | None,
    wq: np.ndarray,
    wk: np.ndarray,
    wv: np.ndarray,
    wo: np.ndarray,
    n_heads: int = 8,
) -> np.ndarray:
    """Single-query multi-head cross-attention over N tokens.

    Positional encodings, when given, are added to the key inputs only.
    """
    out, _ = _attention(query, keys_values, pos, wq, wk, wv, wo, n_heads)
    return out


def _attention(query, keys_values, pos, wq, wk, wv, wo, n_heads):
    d = wq.shape[0]
    if query.shape != (d,) or keys_values.ndim != 2 or keys_values.shape[1] != d:
        raise ShapeMismatch(
            f"attention shapes: query {query.shape}, tokens {keys_values.shape}"
        )
    if keys_values.shape[0] < 1:
        raise ShapeMismatch("attention needs at least one token")
    if d % n_heads != 0:
        raise InvalidHeads(f"d={d} not divisible by {n_heads} heads")
    if pos is not None and pos.shape != keys_values.shape:
        raise ShapeMismatch(f"positional encoding {pos.shape} vs tokens {keys_values.shape}")
    dh = d // n_heads
    key_in = keys_values if pos is None else keys_values + pos
    q_all = query @ wq  # (d,)
    k_all = key_in @ wk  # (N, d)
    v_all = keys_values @ wv  # (N, d)

    n = keys_values.shape[0]
    qh = q_all.reshape(n_heads, dh)
    kh = k_all.reshape(n, n_heads, dh)
    vh = v_all.reshape(n, n_heads, dh)
    scores = np.einsum("nhd,hd->hn", kh, qh) / math.sqrt(dh)  # (H, N)
    scores -= scores.max(axis=1, keepdims=True)
    expd = np.exp(scores)
    attn = expd / expd.sum(axis=1, keepdims=True)  # (H, N)
    heads_out = np.einsum("hn,nhd->hd", attn, vh)  # (H, dh)
    concat = heads_out.reshape(d)
    out = concat @ wo
    cache = (query, keys_values, key_in, q_all, v_all, k_all, attn, concat, dh, n_heads)
    return out, cache


def _attention_backward(dout, cache, wq, wk, wv, wo):
    query, keys_values, key_in, q_all, v_all, k_all, attn, concat, dh, n_heads = cache
    n, d = keys_values.shape
    dwo = np.outer(concat, dout)
    dconcat = wo @ dout  # (d,)

    dheads = dconcat.reshape(n_heads, dh)  # (H, dh)
    vh = v_all.reshape(n, n_heads, dh)
    kh = k_all.reshape(n, n_heads, dh)
    qh = q_all.reshape(n_heads, dh)

    dattn = np.einsum("hd,nhd->hn", dheads, vh)  # (H, N)
    dvh = np.einsum("hn,hd->nhd", attn, dheads)  # (N, H, dh)
    # softmax rows: ds = a * (da - sum(a * da))
    inner = (attn * dattn).sum(axis=1, keepdims=True)
    dscores = attn * (dattn - inner) / math.sqrt(dh)  # (H, N)
    dqh = np.einsum("hn,nhd->hd", dscores, kh)
    dkh = np.einsum("hn,hd->nhd", dscores, qh)

    dq_all = dqh.reshape(d)
    dk_all = dkh.reshape(n, d)
    dv_all = dvh.reshape(n, d)

    dquery = wq @ dq_all
    dwq = np.outer(query, dq_all)
    dkey_in = dk_all @ wk.T
    dwk = key_in.T @ dk_all
    dvalues_in = dv_all @ wv.T
    dwv = keys_values.T @ dv_all
    return dquery, dkey_in, dvalues_in, dwq, dwk, dwv, dwo


@dataclass
class HeadOutputs:
    height: float
    probs: np.ndarray
    caches: dict


def _trunk_forward(head: str, params: HeadParams, tokens: TokenSet):
    """Shared pipeline up to the attended, normalized feature vector."""
    cfg = params.config
    if tokens.width != cfg.embed_dim:
        raise ShapeMismatch(f"token width {tokens.width} != embed_dim {cfg.embed_dim}")
    cache: dict = {"x0": tokens.patch_tokens}
    x = tokens.patch_tokens
    if cfg.use_mlp:
        normed, ln1_cache = _layer_norm(
            x, params.get(head, "mlp", "ln1_scale"), params.get(head, "mlp", "ln1_shift"), cfg.ln_eps
        )
        pre_act = normed @ params.get(head, "mlp", "w1")
        act = _gelu(pre_act)
        x = x + act @ params.get(head, "mlp", "w2")
        cache.update(ln1=ln1_cache, normed=normed, pre_act=pre_act, act=act)
    xn, ln2_cache = _layer_norm(
        x, params.get(head, "mlp", "ln2_scale"), params.get(head, "mlp", "ln2_shift"), cfg.ln_eps
    )
    cache.update(ln2=ln2_cache, xn=xn)

    if head == "class" and not cfg.class_query_token:
        query = xn.mean(axis=0)
        cache["mean_query"] = True
    else:
        query = params.get(head, "query", "q")
        cache["mean_query"] = False

    pos = sine_pos_encoding_2d(*tokens.grid, cfg.embed_dim) if cfg.use_pos_enc else None
    attended, attn_cache = _attention(
        query,
        xn,
        pos,
        params.get(head, "attn", "wq"),
        params.get(head, "attn", "wk"),
        params.get(head, "attn", "wv"),
        params.get(head, "attn", "wo"),
        cfg.n_heads,
    )
    cache["attn"] = attn_cache
    feature, ln_out_cache = _layer_norm(
        attended,
        params.get(head, "attn", "ln_out_scale"),
        params.get(head, "attn", "ln_out_shift"),
        cfg.ln_eps,
    )
    cache["ln_out"] = ln_out_cache
    return feature, cache


def _trunk_backward(
    head: str,
    params: HeadParams,
    tokens: TokenSet,
    dfeature: np.ndarray,
    cache: dict,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    """Backprop dfeature through the head trunk; returns d(patch_tokens)."""
    cfg = params.config
    own = params.config.component_owner

    dattended, dg, db = _layer_norm_backward(dfeature, cache["ln_out"])
    grads[f"{own(head, 'attn')}.attn.ln_out_scale"] += dg
    grads[f"{own(head, 'attn')}.attn.ln_out_shift"] += db

    dquery, dkey_in, dvalues_in, dwq, dwk, dwv, dwo = _attention_backward(
        dattended,
        cache["attn"],
        params.get(head, "attn", "wq"),
        params.get(head, "attn", "wk"),
        params.get(head, "attn", "wv"),
        params.get(head, "attn", "wo"),
    )
    prefix = f"{own(head, 'attn')}.attn"
    grads[f"{prefix}.wq"] += dwq
    grads[f"{prefix}.wk"] += dwk
    grads[f"{prefix}.wv"] += dwv
    grads[f"{prefix}.wo"] += dwo

    dxn = dkey_in + dvalues_in  # positional encoding is a constant offset
    if cache["mean_query"]:
        dxn = dxn + dquery[None, :] / cache["xn"].shape[0]
    else:
        grads[f"{own(head, 'query')}.query.q"] += dquery

    dx, dg, db = _layer_norm_backward(dxn, cache["ln2"])
    grads[f"{own(head, 'mlp')}.mlp.ln2_scale"] += dg
    grads[f"{own(head, 'mlp')}.mlp.ln2_shift"] += db

    if cfg.use_mlp:
        dact_out = dx  # residual branch: x = x0 + act @ w2
        w2 = params.get(head, "mlp", "w2")
        w1 = params.get(head, "mlp", "w1")
        grads[f"{own(head, 'mlp')}.mlp.w2"] += cache["act"].T @ dact_out
        dact = dact_out @ w2.T
        dpre = dact * _gelu_grad(cache["pre_act"])
        grads[f"{own(head, 'mlp')}.mlp.w1"] += cache["normed"].T @ dpre
        dnormed = dpre @ w1.T
        dx0_mlp, dg, db = _layer_norm_backward(dnormed, cache["ln1"])
        grads[f"{own(head, 'mlp')}.mlp.ln1_scale"] += dg
        grads[f"{own(head, 'mlp')}.mlp.ln1_shift"] += db
        return dx + dx0_mlp
    return dx


def _head_input(head: str, feature: np.ndarray | None, tokens: TokenSet, cfg: HeadsConfig):
    if cfg.linear_cls_only:
        return tokens.cls_token, "cls_only"
    concat = cfg.height_concat_cls if head == "height" else cfg.class_concat_cls
    if concat:
        return np.concatenate([feature, tokens.cls_token]), "concat"
    return feature, "feature"


def forward(params: HeadParams, tokens: TokenSet) -> HeadOutputs:
    """Run both heads on one token set."""
    cfg = params.config
    caches: dict = {}

    if cfg.linear_cls_only:
        feat_h = feat_c = None
    else:
        feat_h, caches["height_trunk"] = _trunk_forward("height", params, tokens)
        feat_c, caches["class_trunk"] = _trunk_forward("class", params, tokens)

    zh, mode_h = _head_input("height", feat_h, tokens, cfg)
    pre = float(zh @ params["height.out.w"] + params["height.out.b"])
    if cfg.height_activation == RELU:
        height = max(0.0, pre)
    else:
        height = cfg.h_max / (1.0 + math.exp(-pre))
    caches["height_out"] = (zh, mode_h, pre)

    zc, mode_c = _head_input("class", feat_c, tokens, cfg)
    logits = zc @ params["class.out.w"] + params["class.out.b"]
    shifted = logits - logits.max()
    expd = np.exp(shifted)
    probs = expd / expd.sum()
    caches["class_out"] = (zc, mode_c, probs)

    if not np.all(np.isfinite(probs)) or not math.isfinite(height):
        raise NonFinite("non-finite head output")
    return HeadOutputs(height=height, probs=probs, caches=caches)


def joint_loss(
    params: HeadParams,
    tokens: TokenSet,
    height_truth: float,
    class_truth: int,
    weight_height: float = 1.0,
    weight_class: float = 1.0,
) -> float:
    """Weighted sum of the two task losses for one sample (forward only)."""
    out = forward(params, tokens)
    return weight_height * smooth_l1(out.height, height_truth) + weight_class * cross_entropy(
        out.probs, class_truth
    )


def backward(
    params: HeadParams,
    tokens: TokenSet,
    height_truth: float,
    class_truth: int,
    weight_height: float = 1.0,
    weight_class: float = 1.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss plus analytic gradients for every parameter and the input tokens.

    Gradient keys mirror the parameter dict; the inputs appear as
    ``input.patch_tokens`` and ``input.cls_token``. Tied components
    accumulate both heads' contributions. Toggled-off components keep zero
    gradients.
    """
    cfg = params.config
    out = forward(params, tokens)
    loss = weight_height * smooth_l1(out.height, height_truth) + weight_class * cross_entropy(
        out.probs, class_truth
    )

    grads = params.zero_grads()
    d_patch = np.zeros_like(tokens.patch_tokens)
    d_cls = np.zeros_like(tokens.cls_token)

    # height branch
    zh, mode_h, pre = out.caches["height_out"]
    diff = out.height - height_truth
    dheight = weight_height * max(-1.0, min(1.0, diff))  # smooth L1 slope
    if cfg.height_activation == RELU:
        dpre = dheight if pre > 0 else 0.0
    else:
        sig = out.height / cfg.h_max
        dpre = dheight * cfg.h_max * sig * (1.0 - sig)
    grads["height.out.w"] += dpre * zh
    grads["height.out.b"] += np.asarray(dpre)
    dzh = dpre * params["height.out.w"]

    # classification branch
    zc, mode_c, probs = out.caches["class_out"]
    dlogits = weight_class * probs.copy()
    dlogits[class_truth] -= weight_class
    grads["class.out.w"] += np.outer(zc, dlogits)
    grads["class.out.b"] += dlogits
    dzc = params["class.out.w"] @ dlogits

    d = cfg.embed_dim
    for head, dz, mode in (("height", dzh, mode_h), ("class", dzc, mode_c)):
        if mode == "cls_only":
            d_cls += dz
            continue
        if mode == "concat":
            dfeature, dcls_part = dz[:d], dz[d:]
            d_cls += dcls_part
        else:
            dfeature = dz
        d_patch += _trunk_backward(
            head, params, tokens, dfeature, out.caches[f"{head}_trunk"], grads
        )

    grads["input.patch_tokens"] = d_patch
    grads["input.cls_token"] = d_cls
    return loss, grads


def height_head_forward(params: HeadParams, tokens: TokenSet) -> float:
    """Non-negative height prediction from one token set."""
    return forward(params, tokens).height


def class_head_forward(params: HeadParams, tokens: TokenSet) -> np.ndarray:
    """Class probability simplex from one token set."""
    return forward(params, tokens).probs
