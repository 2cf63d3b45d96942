"""Feature-space backscatter removal and absorption re-scaling.

Given vision tokens ``v`` (n x d), the index ``k`` of the token covering the
darkest image patch, and depth tokens on their own grid, the module:

1. runs single-head cross attention over ``v`` with a learnable query (the
   query vector is the learnable init plus the mean token), producing a
   global summary ``q``;
2. forms the backscatter response ``s = v[k] - q`` and subtracts it from
   every token;
3. predicts per-token, per-channel absorption weights ``W`` by bilinearly
   resampling the depth tokens onto the vision grid and applying a two-layer
   MLP (ReLU hidden), clamped to ``[-w_max, w_max]``;
4. emits ``v_e = (v - s) * exp(W)``.

Everything is plain float64 numpy with hand-written gradients; there is no
autograd framework underneath. Forward and backward are pure functions of
the parameter container, so concurrent forwards sharing one parameter set
are safe; in-place parameter updates need external coordination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, NumericError, ValidationError

DEFAULT_W_MAX = 10.0

# fixed order used for checkpoints, gradient containers, and grad checks
PARAM_NAMES = ("query_init", "w_q", "w_k", "w_v", "w_o", "w1", "b1", "w2", "b2")


def validate_tokens(v: np.ndarray, what: str = "vision tokens") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{what} must be a non-empty n x d matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} contain non-finite values")
    return arr


@dataclass(frozen=True)
class DepthFeature:
    """Depth tokens plus the grid they live on (rows * cols == token count)."""

    feat: np.ndarray
    rows: int
    cols: int

    def __post_init__(self):
        feat = validate_tokens(self.feat, "depth tokens")
        object.__setattr__(self, "feat", feat)
        if self.rows < 1 or self.cols < 1 or self.rows * self.cols != feat.shape[0]:
            raise DimensionError(
                f"depth grid {self.rows}x{self.cols} inconsistent with {feat.shape[0]} tokens"
            )

    @property
    def dim(self) -> int:
        return self.feat.shape[1]


@dataclass
class VfeParams:
    """All learnable state: query init, four attention projections, MLP."""

    query_init: np.ndarray  # (d,)
    w_q: np.ndarray  # (d, d)
    w_k: np.ndarray  # (d, d)
    w_v: np.ndarray  # (d, d)
    w_o: np.ndarray  # (d, d)
    w1: np.ndarray  # (e, h)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h, d)
    b2: np.ndarray  # (d,)
    w_max: float = DEFAULT_W_MAX

    @property
    def d(self) -> int:
        return self.query_init.shape[0]

    @property
    def e(self) -> int:
        return self.w1.shape[0]

    @property
    def h(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def init(cls, d: int, e: int, h: int | None = None, w_max: float = DEFAULT_W_MAX,
             seed: int = 0, attn_gain: float = 1.0) -> "VfeParams":
        """Near-identity initialization.

        Attention projections are scaled orthogonal matrices, the query init
        is zero, and the final MLP layer is zero so the absorption weights
        start at exactly 0 (unit scaling).
        """
        if d < 1 or e < 1:
            raise ValidationError(f"dims must be >= 1, got d={d}, e={e}")
        h = d if h is None else h
        if h < 1:
            raise ValidationError(f"hidden width must be >= 1, got {h}")
        rng = np.random.default_rng(seed)
        params = cls(
            query_init=np.zeros(d),
            w_q=_orthogonal(rng, d, attn_gain),
            w_k=_orthogonal(rng, d, attn_gain),
            w_v=_orthogonal(rng, d, attn_gain),
            w_o=_orthogonal(rng, d, attn_gain),
            w1=rng.standard_normal((e, h)) / math.sqrt(e),
            b1=np.zeros(h),
            w2=np.zeros((h, d)),
            b2=np.zeros(d),
            w_max=w_max,
        )
        params.validate()
        return params

    def validate(self) -> None:
        d, e, h = self.d, self.e, self.h
        shapes = {
            "query_init": (d,), "w_q": (d, d), "w_k": (d, d), "w_v": (d, d),
            "w_o": (d, d), "w1": (e, h), "b1": (h,), "w2": (h, d), "b2": (d,),
        }
        for name, want in shapes.items():
            arr = getattr(self, name)
            if arr.shape != want:
                raise DimensionError(f"{name} must have shape {want}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
        if not (np.isfinite(self.w_max) and self.w_max >= 0):
            raise ValidationError(f"w_max must be finite and >= 0, got {self.w_max}")

    def named_arrays(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "VfeParams":
        return replace(self, **{n: getattr(self, n).copy() for n in PARAM_NAMES})


@dataclass
class VfeGrads:
    """Gradients of a scalar loss w.r.t. every parameter and both inputs."""

    query_init: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    v: np.ndarray
    d_feat: np.ndarray

    def named_arrays(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}


def _orthogonal(rng: np.random.Generator, dim: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(a)
    return gain * q * np.sign(np.diag(r))


def softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max())
    return e / e.sum()


def infer_square_grid(n: int) -> tuple:
    r = math.isqrt(n)
    if r * r != n:
        raise DimensionError(
            f"cannot infer a square token grid for n={n}; pass grid=(rows, cols)"
        )
    return r, r


def resample_matrix(src_grid: tuple, dst_grid: tuple) -> np.ndarray:
    """Dense bilinear-resampling operator between two token grids.

    Align-corners convention: target cell i maps to source coordinate
    i * (src - 1) / (dst - 1) (or 0 when the target axis has one cell).
    Returns M with shape (dst_r * dst_c, src_r * src_c) so that resampled
    tokens are ``M @ tokens``; the exact adjoint of the operation is ``M.T``.
    """
    sr, sc = src_grid
    dr, dc = dst_grid
    if min(sr, sc, dr, dc) < 1:
        raise DimensionError(f"grid dims must be >= 1, got {src_grid} -> {dst_grid}")
    m = np.zeros((dr * dc, sr * sc))
    for ti in range(dr):
        si = ti * (sr - 1) / (dr - 1) if dr > 1 else 0.0
        i0 = min(int(math.floor(si)), sr - 1)
        i1 = min(i0 + 1, sr - 1)
        fi = si - i0
        for tj in range(dc):
            sj = tj * (sc - 1) / (dc - 1) if dc > 1 else 0.0
            j0 = min(int(math.floor(sj)), sc - 1)
            j1 = min(j0 + 1, sc - 1)
            fj = sj - j0
            t = ti * dc + tj
            m[t, i0 * sc + j0] += (1 - fi) * (1 - fj)
            m[t, i0 * sc + j1] += (1 - fi) * fj
            m[t, i1 * sc + j0] += fi * (1 - fj)
            m[t, i1 * sc + j1] += fi * fj
    return m


def aggregate_global(v: np.ndarray, params: VfeParams) -> np.ndarray:
    """Cross-attention summary of the token set; returns the query output (d,)."""
    out, _ = _attention_forward(validate_tokens(v), params)
    return out


def _attention_forward(v: np.ndarray, params: VfeParams):
    n, d = v.shape
    g = v.mean(axis=0)
    q_in = params.query_init + g
    qp = q_in @ params.w_q
    kp = v @ params.w_k
    vp = v @ params.w_v
    scores = (kp @ qp) / math.sqrt(d)
    attn = softmax(scores)
    ctx = attn @ vp
    q = ctx @ params.w_o
    if not np.all(np.isfinite(q)):
        raise NumericError("non-finite attention output", stage="attention")
    cache = dict(v=v, g=g, q_in=q_in, qp=qp, kp=kp, vp=vp, attn=attn, ctx=ctx)
    return q, cache


def backscatter_response(v: np.ndarray, k: int, q: np.ndarray) -> np.ndarray:
    """s = v[k] - q: the dark token minus the attention summary."""
    v = validate_tokens(v)
    if not 0 <= k < v.shape[0]:
        raise IndexError(f"token index {k} out of range for {v.shape[0]} tokens")
    return v[k] - np.asarray(q, dtype=np.float64)


def remove_backscatter(v: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Subtract the response vector from every token row."""
    v = validate_tokens(v)
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    if s.shape[0] != v.shape[1]:
        raise DimensionError(f"response dim {s.shape[0]} != token dim {v.shape[1]}")
    return v - s


def absorption_weights(d_feat: DepthFeature, target_grid: tuple, params: VfeParams) -> np.ndarray:
    """Per-token absorption weights on the target grid, clamped to +-w_max."""
    w, _ = _absorption_forward(d_feat, target_grid, params)
    return w


def _absorption_forward(d_feat: DepthFeature, target_grid: tuple, params: VfeParams):
    if d_feat.dim != params.e:
        raise DimensionError(f"depth token dim {d_feat.dim} != MLP input dim {params.e}")
    m = resample_matrix((d_feat.rows, d_feat.cols), target_grid)
    x = m @ d_feat.feat
    h1 = x @ params.w1 + params.b1
    r = np.maximum(h1, 0.0)
    w_raw = r @ params.w2 + params.b2
    w = np.clip(w_raw, -params.w_max, params.w_max)
    if not np.all(np.isfinite(w)):
        raise NumericError("non-finite absorption weights", stage="absorption")
    cache = dict(m=m, x=x, h1=h1, r=r, w_raw=w_raw, w=w)
    return w, cache


def enhance(v: np.ndarray, k: int, d_feat: DepthFeature, params: VfeParams,
            grid: tuple | None = None) -> np.ndarray:
    """Full enhancement: v_e = (v - s) * exp(W). Shape-preserving.

    ``grid`` is the rows x cols layout of the vision tokens; when omitted, a
    square grid is inferred (n must then be a perfect square).
    """
    v_e, _ = enhance_forward(v, k, d_feat, params, grid=grid)
    return v_e


def enhance_from_parts(v: np.ndarray, s: np.ndarray, w: np.ndarray) -> np.ndarray:
    """The Eq.-style combination step alone: (v - s) * exp(w).

    With s = 0 and w = 0 this is exactly the identity (multiplication by 1.0
    is lossless in IEEE754).
    """
    u = remove_backscatter(v, s)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != u.shape:
        raise DimensionError(f"weight shape {w.shape} != token shape {u.shape}")
    return u * np.exp(w)


def enhance_forward(v: np.ndarray, k: int, d_feat: DepthFeature, params: VfeParams,
                    grid: tuple | None = None):
    """Forward pass returning (v_e, cache) where cache feeds enhance_backward."""
    v = validate_tokens(v)
    params.validate()
    n, d = v.shape
    if d != params.d:
        raise DimensionError(f"token dim {d} != parameter dim {params.d}")
    if not 0 <= k < n:
        raise IndexError(f"token index {k} out of range for {n} tokens")
    if grid is None:
        grid = infer_square_grid(n)
    if grid[0] * grid[1] != n:
        raise DimensionError(f"grid {grid} inconsistent with {n} tokens")

    q, attn_cache = _attention_forward(v, params)
    s = v[k] - q
    u = v - s
    w, absorb_cache = _absorption_forward(d_feat, grid, params)
    expw = np.exp(w)
    v_e = u * expw
    if not np.all(np.isfinite(v_e)):
        raise NumericError("non-finite enhanced tokens", stage="enhance")
    cache = dict(params=params, k=k, u=u, expw=expw,
                 attn=attn_cache, absorb=absorb_cache, n=n, d=d)
    return v_e, cache


def enhance_backward(d_ve: np.ndarray, cache: dict) -> VfeGrads:
    """Hand-written reverse pass for enhance_forward.

    ``d_ve`` is dLoss/d(v_e). Returns gradients for every parameter tensor
    plus the inputs v and d_feat (the latter on the depth grid).
    """
    params: VfeParams = cache["params"]
    n, d = cache["n"], cache["d"]
    k = cache["k"]
    ac = cache["attn"]
    bc = cache["absorb"]
    d_ve = np.asarray(d_ve, dtype=np.float64)
    if d_ve.shape != (n, d):
        raise DimensionError(f"upstream gradient must be {(n, d)}, got {d_ve.shape}")

    # v_e = u * exp(w)
    d_u = d_ve * cache["expw"]
    d_w = d_ve * cache["u"] * cache["expw"]

    # absorption branch: w = clip(r @ w2 + b2), r = relu(x @ w1 + b1), x = m @ d_feat
    inside = (np.abs(bc["w_raw"]) < params.w_max) | (bc["w_raw"] == bc["w"])
    d_wraw = d_w * inside
    d_r = d_wraw @ params.w2.T
    g_w2 = bc["r"].T @ d_wraw
    g_b2 = d_wraw.sum(axis=0)
    d_h1 = d_r * (bc["h1"] > 0.0)
    g_w1 = bc["x"].T @ d_h1
    g_b1 = d_h1.sum(axis=0)
    d_x = d_h1 @ params.w1.T
    g_dfeat = bc["m"].T @ d_x

    # subtraction branch: u = v - s, s = v[k] - q
    d_v = d_u.copy()
    d_s = -d_u.sum(axis=0)
    d_v[k] += d_s
    d_q = -d_s

    # attention: q = (softmax(kp @ qp / sqrt(d)) @ vp) @ w_o
    g_wo = np.outer(ac["ctx"], d_q)
    d_ctx = d_q @ params.w_o.T
    d_attn = ac["vp"] @ d_ctx
    d_vp = np.outer(ac["attn"], d_ctx)
    a = ac["attn"]
    d_scores = a * (d_attn - np.dot(d_attn, a))
    scale = 1.0 / math.sqrt(d)
    d_qp = scale * (d_scores @ ac["kp"])
    d_kp = scale * np.outer(d_scores, ac["qp"])
    g_wq = np.outer(ac["q_in"], d_qp)
    d_qin = d_qp @ params.w_q.T
    g_wk = ac["v"].T @ d_kp
    d_v += d_kp @ params.w_k.T
    g_wv = ac["v"].T @ d_vp
    d_v += d_vp @ params.w_v.T
    g_query = d_qin.copy()
    d_v += d_qin / n  # q_in depends on v through the row mean

    return VfeGrads(query_init=g_query, w_q=g_wq, w_k=g_wk, w_v=g_wv, w_o=g_wo,
                    w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2, v=d_v, d_feat=g_dfeat)


def sumsq_loss(v_e: np.ndarray):
    """Scalar probe loss sum(v_e**2) and its gradient, used for grad checks."""
    v_e = np.asarray(v_e, dtype=np.float64)
    return float(np.sum(v_e * v_e)), 2.0 * v_e


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - f| normalized by the larger of the two infinity norms."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / denom)


def grad_check(params: VfeParams, v: np.ndarray, k: int, d_feat: DepthFeature,
               grid: tuple | None = None, step: float = 1e-5):
    """Compare analytic gradients against central finite differences.

    The probe loss is sum(v_e**2). Returns (max_rel_err, per_tensor_dict)
    where each entry is the relative error for one parameter tensor.
    """
    v_e, cache = enhance_forward(v, k, d_feat, params, grid=grid)
    _, d_ve = sumsq_loss(v_e)
    grads = enhance_backward(d_ve, cache)

    def loss_at(p: VfeParams) -> float:
        out, _ = enhance_forward(v, k, d_feat, p, grid=grid)
        return float(np.sum(out * out))

    work = params.copy()
    errors = {}
    for name in PARAM_NAMES:
        arr = getattr(work, name)
        fd = np.zeros_like(arr)
        flat = arr.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_at(work)
            flat[i] = orig - step
            down = loss_at(work)
            flat[i] = orig
            fd_flat[i] = (up - down) / (2.0 * step)
        err = relative_error(grads.named_arrays()[name], fd)
        if not np.isfinite(err):
            err = float("inf")
        errors[name] = err
    return max(errors.values()), errors


def save_checkpoint(path, params: VfeParams) -> None:
    """Write every parameter to a JSON manifest; reload is bit-exact.

    The notes record w_max and the two architecture choices (output
    projection present, no residual around the attention block) so a
    checkpoint is self-describing.
    """
    from . import manifest

    params.validate()
    manifest.save_manifest(path, params.named_arrays(), notes={
        "kind": "vfe-params",
        "w_max": params.w_max,
        "attention_output_projection": True,
        "attention_residual": False,
    })


def load_checkpoint(path) -> VfeParams:
    """Inverse of :func:`save_checkpoint`; errors name the offending tensor."""
    from . import manifest

    arrays, notes = manifest.load_manifest(path)
    missing = [name for name in PARAM_NAMES if name not in arrays]
    if missing:
        raise ValidationError(f"checkpoint is missing parameter {missing[0]!r}")
    extra = sorted(set(arrays) - set(PARAM_NAMES))
    if extra:
        raise ValidationError(f"checkpoint has unexpected parameter {extra[0]!r}")
    w_max = notes.get("w_max", DEFAULT_W_MAX)
    if not isinstance(w_max, (int, float)):
        raise ValidationError(f"checkpoint note 'w_max' must be a number, got {w_max!r}")
    params = VfeParams(w_max=float(w_max), **{n: arrays[n] for n in PARAM_NAMES})
    for name in PARAM_NAMES:
        arr = getattr(params, name)
        want_ndim = 1 if name in ("query_init", "b1", "b2") else 2
        if arr.ndim != want_ndim:
            raise DimensionError(
                f"checkpoint parameter {name!r} must be {want_ndim}-D, got shape {arr.shape}")
    params.validate()
    return params
