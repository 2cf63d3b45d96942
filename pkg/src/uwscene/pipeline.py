"""Toy encoder -> enhancement -> shared projector pipeline.

A small, fully inspectable stand-in for a vision-language front end:

* patch-embedding image encoder: each p x p RGB patch is flattened and
  linearly mapped to d dims, plus a fixed 1-D sinusoidal position term;
* patch-embedding depth encoder (single channel, no position term);
* the enhancement module from :mod:`uwscene.vfe` applied to the vision
  tokens, with the dark-patch index taken on the cropped input image;
* one shared two-layer projector mapping both the original and the enhanced
  token stream to the output width.

The language model that would consume the streams is out of scope; a scalar
sum-of-squares probe loss stands in for it so gradients can be verified end
to end. All gradients are hand-written numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import vfe as vfe_mod
from .errors import DimensionError, ValidationError
from .imaging import PatchGrid, select_dark_patch, validate_depth, validate_image
from .manifest import save_manifest
from .vfe import DepthFeature, VfeParams

DEFAULT_PATCH = 8

ENCODER_PARAM_NAMES = ("w", "b")
PROJECTOR_PARAM_NAMES = ("w1", "b1", "w2", "b2")

# architecture facts recorded alongside checkpoints and token dumps
ARCH_NOTES = {
    "attention_output_projection": True,
    "attention_residual": False,
    "dark_token_in_keys_values": True,
    "emission_order": ["original", "enhanced"],
}


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    """Fixed 1-D sine/cosine position table, shape (n, d). Not learnable."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    idx = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / d)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def center_crop_shape(size: int, patch: int) -> tuple:
    """(offset, cropped_size) for trimming one axis to a multiple of patch."""
    cropped = (size // patch) * patch
    if cropped < patch:
        raise DimensionError(f"extent {size} smaller than patch size {patch}")
    return (size - cropped) // 2, cropped


@dataclass
class ToyEncoderParams:
    """Linear patch embed for RGB images: flatten(3*p*p) -> d, plus bias."""

    patch_size: int
    w: np.ndarray  # (3*p*p, d)
    b: np.ndarray  # (d,)

    @classmethod
    def init(cls, patch_size: int = DEFAULT_PATCH, d: int = 16, seed: int = 0):
        if patch_size < 1 or d < 1:
            raise ValidationError(f"bad encoder dims p={patch_size}, d={d}")
        rng = np.random.default_rng(seed)
        fan_in = 3 * patch_size * patch_size
        return cls(patch_size=patch_size,
                   w=rng.standard_normal((fan_in, d)) / math.sqrt(fan_in),
                   b=np.zeros(d))

    @property
    def d(self) -> int:
        return self.w.shape[1]

    def validate(self) -> None:
        fan_in = 3 * self.patch_size * self.patch_size
        if self.w.shape != (fan_in, self.d):
            raise DimensionError(f"encoder w must be ({fan_in}, d), got {self.w.shape}")
        if self.b.shape != (self.d,):
            raise DimensionError(f"encoder b must be ({self.d},), got {self.b.shape}")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise ValidationError("encoder parameters contain non-finite values")


@dataclass
class ToyDepthEncoderParams:
    """Linear patch embed for depth maps: flatten(p_d*p_d) -> e, plus bias."""

    patch_size: int
    w: np.ndarray  # (p_d*p_d, e)
    b: np.ndarray  # (e,)

    @classmethod
    def init(cls, patch_size: int = DEFAULT_PATCH, e: int = 12, seed: int = 1):
        if patch_size < 1 or e < 1:
            raise ValidationError(f"bad depth encoder dims p={patch_size}, e={e}")
        rng = np.random.default_rng(seed)
        fan_in = patch_size * patch_size
        return cls(patch_size=patch_size,
                   w=rng.standard_normal((fan_in, e)) / math.sqrt(fan_in),
                   b=np.zeros(e))

    @property
    def e(self) -> int:
        return self.w.shape[1]

    def validate(self) -> None:
        fan_in = self.patch_size * self.patch_size
        if self.w.shape != (fan_in, self.e):
            raise DimensionError(f"depth encoder w must be ({fan_in}, e), got {self.w.shape}")
        if self.b.shape != (self.e,):
            raise DimensionError(f"depth encoder b must be ({self.e},), got {self.b.shape}")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise ValidationError("depth encoder parameters contain non-finite values")


@dataclass
class ProjectorParams:
    """Shared two-affine-layer map d -> d_l with ReLU hidden activation."""

    w1: np.ndarray  # (d, h)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h, d_l)
    b2: np.ndarray  # (d_l,)

    @classmethod
    def init(cls, d: int, d_l: int, h: int | None = None, seed: int = 2):
        h = d if h is None else h
        if min(d, d_l, h) < 1:
            raise ValidationError(f"bad projector dims d={d}, h={h}, d_l={d_l}")
        rng = np.random.default_rng(seed)
        return cls(w1=rng.standard_normal((d, h)) / math.sqrt(d),
                   b1=np.zeros(h),
                   w2=rng.standard_normal((h, d_l)) / math.sqrt(h),
                   b2=np.zeros(d_l))

    def validate(self) -> None:
        d, h = self.w1.shape
        if self.b1.shape != (h,) or self.w2.shape[0] != h or self.b2.shape != (self.w2.shape[1],):
            raise DimensionError("projector parameter shapes are inconsistent")
        for name in PROJECTOR_PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"projector {name} contains non-finite values")


@dataclass
class PipelineParams:
    """Every trainable tensor in the pipeline, grouped by stage."""

    encoder: ToyEncoderParams
    depth_encoder: ToyDepthEncoderParams
    vfe: VfeParams
    projector: ProjectorParams

    @classmethod
    def init(cls, patch_size: int = DEFAULT_PATCH, d: int = 16, e: int = 12,
             d_l: int = 16, h: int | None = None, w_max: float = vfe_mod.DEFAULT_W_MAX,
             depth_patch_size: int | None = None, seed: int = 0) -> "PipelineParams":
        dp = patch_size if depth_patch_size is None else depth_patch_size
        return cls(
            encoder=ToyEncoderParams.init(patch_size, d, seed=seed),
            depth_encoder=ToyDepthEncoderParams.init(dp, e, seed=seed + 1),
            vfe=VfeParams.init(d, e, h=h, w_max=w_max, seed=seed + 2),
            projector=ProjectorParams.init(d, d_l, seed=seed + 3),
        )

    def validate(self) -> None:
        self.encoder.validate()
        self.depth_encoder.validate()
        self.vfe.validate()
        self.projector.validate()
        if self.encoder.d != self.vfe.d:
            raise DimensionError(
                f"encoder dim {self.encoder.d} != enhancement dim {self.vfe.d}")
        if self.depth_encoder.e != self.vfe.e:
            raise DimensionError(
                f"depth encoder dim {self.depth_encoder.e} != MLP input dim {self.vfe.e}")
        if self.projector.w1.shape[0] != self.encoder.d:
            raise DimensionError(
                f"projector input dim {self.projector.w1.shape[0]} != token dim {self.encoder.d}")

    def named_arrays(self) -> dict:
        out = {}
        for name in ENCODER_PARAM_NAMES:
            out[f"encoder.{name}"] = getattr(self.encoder, name)
        for name in ENCODER_PARAM_NAMES:
            out[f"depth_encoder.{name}"] = getattr(self.depth_encoder, name)
        for name in vfe_mod.PARAM_NAMES:
            out[f"vfe.{name}"] = getattr(self.vfe, name)
        for name in PROJECTOR_PARAM_NAMES:
            out[f"projector.{name}"] = getattr(self.projector, name)
        return out

    def copy(self) -> "PipelineParams":
        return PipelineParams(
            encoder=replace(self.encoder, w=self.encoder.w.copy(), b=self.encoder.b.copy()),
            depth_encoder=replace(self.depth_encoder, w=self.depth_encoder.w.copy(),
                                  b=self.depth_encoder.b.copy()),
            vfe=self.vfe.copy(),
            projector=replace(self.projector,
                              **{n: getattr(self.projector, n).copy()
                                 for n in PROJECTOR_PARAM_NAMES}),
        )

    def array_by_name(self, name: str) -> np.ndarray:
        group, _, leaf = name.partition(".")
        return getattr(getattr(self, group), leaf)


def _extract_patches(plane: np.ndarray, patch: int):
    """Crop one 2-D or 3-D raster to patch divisibility and flatten patches.

    Returns (flat_patches, (top, left), (rows, cols)). Flattening order is
    row-major within the patch, channels last (matching reshape semantics).
    """
    top, ch = center_crop_shape(plane.shape[0], patch)
    left, cw = center_crop_shape(plane.shape[1], patch)
    core = plane[top:top + ch, left:left + cw]
    rows, cols = ch // patch, cw // patch
    if core.ndim == 2:
        blocks = core.reshape(rows, patch, cols, patch)
        flat = blocks.transpose(0, 2, 1, 3).reshape(rows * cols, patch * patch)
    else:
        c = core.shape[2]
        blocks = core.reshape(rows, patch, cols, patch, c)
        flat = blocks.transpose(0, 2, 1, 3, 4).reshape(rows * cols, patch * patch * c)
    return flat, (top, left), (rows, cols)


def encode_image(image: np.ndarray, params: ToyEncoderParams):
    """Vision tokens: flatten(patch) @ w + b + position. Returns (v, meta)."""
    image = validate_image(image)
    params.validate()
    flat, offsets, grid = _extract_patches(image, params.patch_size)
    v = flat @ params.w + params.b + sinusoidal_positions(flat.shape[0], params.d)
    meta = {"crop_offsets": offsets, "grid": grid}
    return v, meta


def encode_depth(depth: np.ndarray, params: ToyDepthEncoderParams):
    """Depth tokens: flatten(patch) @ w + b, no position term."""
    depth = validate_depth(depth)
    params.validate()
    flat, offsets, grid = _extract_patches(depth, params.patch_size)
    feat = flat @ params.w + params.b
    meta = {"crop_offsets": offsets, "grid": grid}
    return DepthFeature(feat=feat, rows=grid[0], cols=grid[1]), meta


def project(v: np.ndarray, params: ProjectorParams) -> np.ndarray:
    """Shared projector forward: relu(v @ w1 + b1) @ w2 + b2."""
    out, _ = _project_forward(v, params)
    return out


def _project_forward(v: np.ndarray, params: ProjectorParams):
    h1 = v @ params.w1 + params.b1
    r = np.maximum(h1, 0.0)
    out = r @ params.w2 + params.b2
    return out, dict(v=v, h1=h1, r=r)


def _project_backward(d_out: np.ndarray, cache: dict, params: ProjectorParams):
    """Returns (input gradient, dict of parameter gradients)."""
    d_r = d_out @ params.w2.T
    g_w2 = cache["r"].T @ d_out
    g_b2 = d_out.sum(axis=0)
    d_h1 = d_r * (cache["h1"] > 0.0)
    g_w1 = cache["v"].T @ d_h1
    g_b1 = d_h1.sum(axis=0)
    d_v = d_h1 @ params.w1.T
    return d_v, {"w1": g_w1, "b1": g_b1, "w2": g_w2, "b2": g_b2}


@dataclass
class ForwardResult:
    """Both projected streams plus bookkeeping for inspection and backward."""

    original: np.ndarray  # (n, d_l)
    enhanced: np.ndarray  # (n, d_l)
    meta: dict
    caches: dict


def forward(image: np.ndarray, depth: np.ndarray, params: PipelineParams,
            vfe_identity: bool = False) -> ForwardResult:
    """Full pipeline pass; emission order is (original, enhanced).

    The dark-patch token index k is computed on the cropped input image with
    the encoder's patch grid. ``vfe_identity=True`` bypasses the enhancement
    (zero response, zero weights), making the two streams bit-identical.
    """
    params.validate()
    image = validate_image(image)
    depth = validate_depth(depth, image.shape)

    v, vmeta = encode_image(image, params.encoder)
    d_feat, dmeta = encode_depth(depth, params.depth_encoder)

    top, left = vmeta["crop_offsets"]
    rows, cols = vmeta["grid"]
    p = params.encoder.patch_size
    cropped = image[top:top + rows * p, left:left + cols * p, :]
    k = select_dark_patch(cropped, PatchGrid(patch_size=p, rows=rows, cols=cols))

    if vfe_identity:
        v_e = vfe_mod.enhance_from_parts(v, np.zeros(v.shape[1]), np.zeros(v.shape))
        vfe_cache = None
    else:
        v_e, vfe_cache = vfe_mod.enhance_forward(v, k, d_feat, params.vfe, grid=(rows, cols))

    original, cache_a = _project_forward(v, params.projector)
    enhanced, cache_b = _project_forward(v_e, params.projector)

    meta = {
        "k": k,
        "crop_offsets": list(vmeta["crop_offsets"]),
        "grid": list(vmeta["grid"]),
        "depth_crop_offsets": list(dmeta["crop_offsets"]),
        "depth_grid": list(dmeta["grid"]),
        "vfe_identity": bool(vfe_identity),
    }
    caches = dict(v=v, d_feat=d_feat, v_e=v_e, vfe=vfe_cache,
                  proj_a=cache_a, proj_b=cache_b,
                  image_flat_meta=(top, left, rows, cols))
    return ForwardResult(original=original, enhanced=enhanced, meta=meta, caches=caches)


def loss_and_grads(image: np.ndarray, depth: np.ndarray, params: PipelineParams):
    """Probe loss sum(original**2) + sum(enhanced**2) and all parameter grads.

    The projector gradient accumulates contributions from both streams, which
    is the shared-weight contract the gradient check exercises. Returns
    (loss, grads dict keyed like PipelineParams.named_arrays()).
    """
    res = forward(image, depth, params)
    loss = float(np.sum(res.original ** 2) + np.sum(res.enhanced ** 2))

    d_a = 2.0 * res.original
    d_b = 2.0 * res.enhanced
    dv_a, gp_a = _project_backward(d_a, res.caches["proj_a"], params.projector)
    dve, gp_b = _project_backward(d_b, res.caches["proj_b"], params.projector)
    proj_grads = {name: gp_a[name] + gp_b[name] for name in PROJECTOR_PARAM_NAMES}

    vfe_grads = vfe_mod.enhance_backward(dve, res.caches["vfe"])
    d_v = dv_a + vfe_grads.v
    d_dfeat = vfe_grads.d_feat

    # encoder backward: v = flat @ w + b + pos (positions constant)
    image = validate_image(image)
    flat_v, _, _ = _extract_patches(image, params.encoder.patch_size)
    g_enc_w = flat_v.T @ d_v
    g_enc_b = d_v.sum(axis=0)

    depth = validate_depth(depth, image.shape)
    flat_d, _, _ = _extract_patches(depth, params.depth_encoder.patch_size)
    g_dep_w = flat_d.T @ d_dfeat
    g_dep_b = d_dfeat.sum(axis=0)

    grads = {"encoder.w": g_enc_w, "encoder.b": g_enc_b,
             "depth_encoder.w": g_dep_w, "depth_encoder.b": g_dep_b}
    for name in vfe_mod.PARAM_NAMES:
        grads[f"vfe.{name}"] = getattr(vfe_grads, name)
    for name in PROJECTOR_PARAM_NAMES:
        grads[f"projector.{name}"] = proj_grads[name]
    return loss, grads


def end_to_end_grad_check(params: PipelineParams, image: np.ndarray, depth: np.ndarray,
                          step: float = 1e-5):
    """Analytic vs central finite-difference gradients over every parameter.

    Returns (max_rel_err, per_tensor_dict).
    """
    _, analytic = loss_and_grads(image, depth, params)

    work = params.copy()

    def loss_at() -> float:
        res = forward(image, depth, work)
        return float(np.sum(res.original ** 2) + np.sum(res.enhanced ** 2))

    errors = {}
    for name, arr in work.named_arrays().items():
        fd = np.zeros_like(arr)
        flat = arr.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_at()
            flat[i] = orig - step
            down = loss_at()
            flat[i] = orig
            fd_flat[i] = (up - down) / (2.0 * step)
        err = vfe_mod.relative_error(analytic[name], fd)
        errors[name] = err if np.isfinite(err) else float("inf")
    return max(errors.values()), errors


def save_pipeline(path, params: PipelineParams, extra_notes: dict | None = None) -> None:
    """Checkpoint every parameter tensor plus the architecture notes."""
    notes = dict(ARCH_NOTES)
    notes["w_max"] = params.vfe.w_max
    notes["patch_size"] = params.encoder.patch_size
    notes["depth_patch_size"] = params.depth_encoder.patch_size
    if extra_notes:
        notes.update(extra_notes)
    save_manifest(path, params.named_arrays(), notes)


def save_streams(path, result: ForwardResult) -> None:
    """Dump both emitted token streams with the run metadata."""
    notes = dict(ARCH_NOTES)
    notes.update(result.meta)
    save_manifest(path, {"original": result.original, "enhanced": result.enhanced}, notes)
