"""Forward math of the adaptive cross-attention fusion block.

Radiographic feature maps query aligned semantic feature maps through
single-head scaled dot-product attention; a zero-initialized scalar gate
regulates the residual, and a 1x1 channel-mixing matrix fuses the gated
tokens with the semantic map. Everything here is plain forward math over
caller-supplied weights — no training, no pretrained encoders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class FeatureMap:
    """Channel-major 2D feature array, data (C, H, W)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise DimensionError(f"feature map must be (C, H, W), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DimensionError("feature map contains NaN or Inf")
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def hw(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


@dataclass(frozen=True)
class TokenSeq:
    """Flattened spatial map: data (N, C) with the (H, W) it came from."""

    data: np.ndarray
    origin: tuple[int, int]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionError(f"token sequence must be (N, C), got {data.shape}")
        origin = (int(self.origin[0]), int(self.origin[1]))
        if data.shape[0] != origin[0] * origin[1]:
            raise DimensionError(
                f"{data.shape[0]} tokens inconsistent with origin {origin}"
            )
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "origin", origin)


@dataclass(frozen=True)
class AcfLevelWeights:
    """Per-level weights: semantic adapter, q/k/v/out projections, gate, mixer."""

    proj: np.ndarray  # (C_s, C_phi) semantic adapter
    wq: np.ndarray  # (C_r, d)
    wk: np.ndarray  # (C_s, d)
    wv: np.ndarray  # (C_s, d)
    wo: np.ndarray  # (d, C_r)
    alpha: float  # scalar gate, initialized to zero
    mix: np.ndarray  # (C_out, C_r + C_s) 1x1 channel mixer


def seeded_level_weights(
    c_r: int, c_phi: int, c_s: int, d: int, c_out: int, seed: int = 0
) -> AcfLevelWeights:
    """Deterministic test weights: uniform in [-0.1, 0.1], gate at zero."""
    rng = np.random.default_rng(seed)

    def u(*shape):
        return rng.uniform(-0.1, 0.1, size=shape)

    return AcfLevelWeights(
        proj=u(c_s, c_phi),
        wq=u(c_r, d),
        wk=u(c_s, d),
        wv=u(c_s, d),
        wo=u(d, c_r),
        alpha=0.0,
        mix=u(c_out, c_r + c_s),
    )


def tokens_from_map(fm: FeatureMap) -> TokenSeq:
    """Row-major flatten of the spatial grid into N = H*W tokens."""
    c, h, w = fm.data.shape
    return TokenSeq(fm.data.reshape(c, h * w).T.copy(), (h, w))


def map_from_tokens(ts: TokenSeq) -> FeatureMap:
    h, w = ts.origin
    return FeatureMap(ts.data.T.reshape(ts.data.shape[1], h, w).copy())


def bilinear_resize(data: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear resize of a (C, H, W) array."""
    c, h, w = data.shape
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise DimensionError(f"target dims must be >= 1, got {target}")
    if (th, tw) == (h, w):
        return data.copy()

    def axis_coords(n_out, n_src):
        if n_out == 1:
            return np.full(1, (n_src - 1) / 2.0)
        return np.arange(n_out) * (n_src - 1) / (n_out - 1)

    iy = axis_coords(th, h)
    ix = axis_coords(tw, w)
    y0 = np.clip(np.floor(iy).astype(np.int64), 0, max(h - 2, 0))
    x0 = np.clip(np.floor(ix).astype(np.int64), 0, max(w - 2, 0))
    fy = iy - y0
    fx = ix - x0
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    top = data[:, y0][:, :, x0] * (1 - fx) + data[:, y0][:, :, x1] * fx
    bot = data[:, y1][:, :, x0] * (1 - fx) + data[:, y1][:, :, x1] * fx
    return top * (1 - fy)[np.newaxis, :, np.newaxis] + bot * fy[np.newaxis, :, np.newaxis]


def align_semantic(
    phi: FeatureMap, proj: np.ndarray, target: tuple[int, int]
) -> FeatureMap:
    """Project channels, then bilinearly resize to the decoding level's grid."""
    proj = np.asarray(proj, dtype=np.float64)
    if proj.ndim != 2 or proj.shape[1] != phi.channels:
        raise DimensionError(
            f"adapter shape {proj.shape} incompatible with {phi.channels} channels"
        )
    projected = np.tensordot(proj, phi.data, axes=([1], [0]))
    return FeatureMap(bilinear_resize(projected, target))


def softmax_rows(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction (stable for |logits| <= 80)."""
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_attention(
    xr: TokenSeq,
    xs: TokenSeq,
    w: AcfLevelWeights,
    return_weights: bool = False,
):
    """Radiographic tokens attend to semantic tokens (single head).

    Queries come from xr, keys/values from xs; the output projection brings
    the attended values back to xr's channel count so the gated residual is
    shape-consistent.
    """
    if xr.data.shape[0] != xs.data.shape[0]:
        raise DimensionError(
            f"token counts differ: {xr.data.shape[0]} vs {xs.data.shape[0]}"
        )
    d = w.wq.shape[1]
    if d == 0:
        raise DimensionError("embedding dimension must be positive")
    q = xr.data @ w.wq
    k = xs.data @ w.wk
    v = xs.data @ w.wv
    attn = softmax_rows(q @ k.T / np.sqrt(d))
    out = TokenSeq((attn @ v) @ w.wo, xr.origin)
    if return_weights:
        return out, attn
    return out


def gated_residual(xr: TokenSeq, x_attn: TokenSeq, alpha: float) -> TokenSeq:
    """xr + alpha * x_attn; alpha = 0 returns xr's values bit-for-bit."""
    if xr.data.shape != x_attn.data.shape:
        raise DimensionError(
            f"token shapes differ: {xr.data.shape} vs {x_attn.data.shape}"
        )
    if alpha == 0.0:
        return TokenSeq(xr.data.copy(), xr.origin)
    return TokenSeq(xr.data + alpha * x_attn.data, xr.origin)


def fuse_channels(fr: FeatureMap, fs: FeatureMap, mix: np.ndarray) -> FeatureMap:
    """Concatenate channels per pixel and apply the 1x1 mixing matrix."""
    if fr.hw != fs.hw:
        raise DimensionError(f"spatial dims differ: {fr.hw} vs {fs.hw}")
    mix = np.asarray(mix, dtype=np.float64)
    cat = np.concatenate([fr.data, fs.data], axis=0)
    if mix.ndim != 2 or mix.shape[1] != cat.shape[0]:
        raise DimensionError(
            f"mixer shape {mix.shape} incompatible with {cat.shape[0]} channels"
        )
    return FeatureMap(np.tensordot(mix, cat, axes=([1], [0])))


def acf_level(
    fr: FeatureMap, phi: FeatureMap, w: AcfLevelWeights, target: tuple[int, int]
) -> FeatureMap:
    """One fusion level: align, attend, gate, fuse."""
    fs_map = align_semantic(phi, w.proj, target)
    xr = tokens_from_map(fr)
    xs = tokens_from_map(fs_map)
    x_attn = cross_attention(xr, xs, w)
    fused_tokens = gated_residual(xr, x_attn, w.alpha)
    return fuse_channels(map_from_tokens(fused_tokens), fs_map, w.mix)


def acf_forward(levels) -> list[FeatureMap]:
    """Run every fusion level of a progressive pyramid.

    levels is a list of (fr, phi, weights, target_hw); target grids must
    halve from one level to the next (floored, min 1).
    """
    targets = [tuple(int(t) for t in lv[3]) for lv in levels]
    for i in range(1, len(targets)):
        ph, pw = targets[i - 1]
        expect = (max(1, ph // 2), max(1, pw // 2))
        if targets[i] != expect:
            raise DimensionError(
                f"level {i} target {targets[i]} breaks the halving pyramid "
                f"(expected {expect})"
            )
    out = []
    for (fr, phi, w, _), target in zip(levels, targets):
        if fr.hw != target:
            raise DimensionError(
                f"radiographic map {fr.hw} does not match level target {target}"
            )
        out.append(acf_level(fr, phi, w, target))
    return out


def probe_value_and_grads(
    fr: FeatureMap, fs_map: FeatureMap, w: AcfLevelWeights
) -> tuple[float, dict[str, np.ndarray]]:
    """Scalar probe (sum of fused outputs) with analytic weight gradients.

    Backpropagates the probe through mixing, gating, the output projection,
    attention softmax, and the q/k/v projections. The semantic map is taken
    as already aligned so the adapter stays out of the probe path.
    """
    xr = tokens_from_map(fr).data
    xs = tokens_from_map(fs_map).data
    n = xr.shape[0]
    d = w.wq.shape[1]
    q = xr @ w.wq
    k = xs @ w.wk
    v = xs @ w.wv
    scale = 1.0 / np.sqrt(d)
    attn = softmax_rows(q @ k.T * scale)
    av = attn @ v
    x_attn = av @ w.wo
    fused_tokens = xr + w.alpha * x_attn
    cat = np.concatenate([fused_tokens, xs], axis=1)  # (N, C_r + C_s)
    value = float(np.sum(cat @ w.mix.T))

    # dS/dmix[o, c] = sum_n cat[n, c]
    g_mix = np.tile(cat.sum(axis=0), (w.mix.shape[0], 1))
    # row vector over channels: dS/dcat[n, c] = sum_o mix[o, c]
    m_col = w.mix.sum(axis=0)
    g_tok = np.broadcast_to(m_col[: xr.shape[1]], fused_tokens.shape)
    g_alpha = float(np.sum(g_tok * x_attn))
    g_xattn = w.alpha * g_tok
    g_wo = av.T @ g_xattn
    g_av = g_xattn @ w.wo.T
    g_attn = g_av @ v.T
    g_v = attn.T @ g_av
    # softmax backward per row
    inner = (g_attn * attn).sum(axis=1, keepdims=True)
    g_z = attn * (g_attn - inner)
    g_q = g_z @ k * scale
    g_k = g_z.T @ q * scale
    grads = {
        "alpha": np.array(g_alpha),
        "wq": xr.T @ g_q,
        "wk": xs.T @ g_k,
        "wv": xs.T @ g_v,
        "wo": g_wo,
        "mix": g_mix,
    }
    return value, grads
