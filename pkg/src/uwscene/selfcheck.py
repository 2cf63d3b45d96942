"""Randomized invariant and gradient checks for the numeric modules.

The instance factories here are used both by the test suite and the CLI
self-check command. The ``smooth`` variants resample until every piecewise
boundary (ReLU pre-activations, clamp edges) is at least ``margin`` away
from zero, so central finite differences with step 1e-5 never straddle a
kink and the analytic/numeric comparison is meaningful.
"""

from __future__ import annotations

import numpy as np

from . import pipeline as pipe
from . import vfe as vfe_mod
from .errors import ValidationError
from .vfe import DepthFeature, VfeParams

FD_STEP = 1e-5
KINK_MARGIN = 1e-3
GRAD_TOL = 1e-4


def _random_vfe_params(rng: np.random.Generator, d: int, e: int, h: int,
                       w_max: float) -> VfeParams:
    return VfeParams(
        query_init=rng.standard_normal(d) * 0.5,
        w_q=rng.standard_normal((d, d)) / np.sqrt(d),
        w_k=rng.standard_normal((d, d)) / np.sqrt(d),
        w_v=rng.standard_normal((d, d)) / np.sqrt(d),
        w_o=rng.standard_normal((d, d)) / np.sqrt(d),
        w1=rng.standard_normal((e, h)) / np.sqrt(e),
        b1=rng.standard_normal(h) * 0.2,
        w2=rng.standard_normal((h, d)) / np.sqrt(h),
        b2=rng.standard_normal(d) * 0.2,
        w_max=w_max,
    )


def _vfe_margins_ok(cache: dict, w_max: float, margin: float) -> bool:
    absorb = cache["absorb"]
    if np.abs(absorb["h1"]).min() <= margin:
        return False
    return np.abs(np.abs(absorb["w_raw"]) - w_max).min() > margin


def random_vfe_instance(seed: int, n_max: int = 64, d_max: int = 32,
                        smooth: bool = False, margin: float = KINK_MARGIN,
                        clip_active: bool = False, dims: tuple | None = None,
                        w_max: float | None = None):
    """Random (v, k, d_feat, params, grid) instance within the size caps.

    ``smooth=True`` keeps all nonlinearities away from their kinks.
    ``clip_active=True`` shrinks w_max so some weights actually clamp,
    exercising the zero-gradient branch. ``dims=(d, e, h)`` pins the widths
    instead of sampling them.
    """
    rng = np.random.default_rng(seed)
    for _ in range(500):
        gr = int(rng.integers(1, 9))
        gc = int(rng.integers(1, 9))
        n = gr * gc
        if n > n_max:
            continue
        if dims is not None:
            d, e, h = dims
        else:
            d = int(rng.integers(2, d_max + 1))
            e = int(rng.integers(2, 9))
            h = int(rng.integers(2, 9))
        if w_max is None:
            w_max = 1.0 if clip_active else vfe_mod.DEFAULT_W_MAX
        params = _random_vfe_params(rng, d, e, h, w_max)
        v = rng.standard_normal((n, d))
        k = int(rng.integers(0, n))
        dr = int(rng.integers(1, 6))
        dc = int(rng.integers(1, 6))
        d_feat = DepthFeature(feat=rng.standard_normal((dr * dc, e)), rows=dr, cols=dc)
        if not smooth:
            return v, k, d_feat, params, (gr, gc)
        _, cache = vfe_mod.enhance_forward(v, k, d_feat, params, grid=(gr, gc))
        if _vfe_margins_ok(cache, w_max, margin):
            return v, k, d_feat, params, (gr, gc)
    raise ValidationError(f"no kink-free instance found for seed {seed}")


def random_pipeline_instance(seed: int, smooth: bool = True,
                             margin: float = KINK_MARGIN):
    """Random (image, depth, params) triple sized for fast gradient checks."""
    rng = np.random.default_rng(seed)
    for _ in range(500):
        p = 4
        rows = int(rng.integers(1, 4))
        cols = int(rng.integers(1, 4))
        hpx = rows * p + int(rng.integers(0, p))
        wpx = cols * p + int(rng.integers(0, p))
        d = int(rng.integers(3, 7))
        e = int(rng.integers(2, 6))
        h = int(rng.integers(2, 6))
        d_l = int(rng.integers(2, 6))
        params = pipe.PipelineParams(
            encoder=pipe.ToyEncoderParams(
                patch_size=p,
                w=rng.standard_normal((3 * p * p, d)) / np.sqrt(3 * p * p),
                b=rng.standard_normal(d) * 0.1,
            ),
            depth_encoder=pipe.ToyDepthEncoderParams(
                patch_size=p,
                w=rng.standard_normal((p * p, e)) / np.sqrt(p * p),
                b=rng.standard_normal(e) * 0.1,
            ),
            vfe=_random_vfe_params(rng, d, e, h, vfe_mod.DEFAULT_W_MAX),
            projector=pipe.ProjectorParams(
                w1=rng.standard_normal((d, h)) / np.sqrt(d),
                b1=rng.standard_normal(h) * 0.2,
                w2=rng.standard_normal((h, d_l)) / np.sqrt(h),
                b2=rng.standard_normal(d_l) * 0.2,
            ),
        )
        image = rng.uniform(0.05, 0.95, size=(hpx, wpx, 3))
        depth = rng.uniform(0.0, 3.0, size=(hpx, wpx))
        if not smooth:
            return image, depth, params
        res = pipe.forward(image, depth, params)
        vfe_cache = res.caches["vfe"]
        if not _vfe_margins_ok(vfe_cache, params.vfe.w_max, margin):
            continue
        if np.abs(res.caches["proj_a"]["h1"]).min() <= margin:
            continue
        if np.abs(res.caches["proj_b"]["h1"]).min() <= margin:
            continue
        return image, depth, params
    raise ValidationError(f"no kink-free pipeline instance found for seed {seed}")


def check_identity(seed: int = 0) -> dict:
    """Zero response + zero weights must reproduce the input bit for bit."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((12, 7))
    out = vfe_mod.enhance_from_parts(v, np.zeros(7), np.zeros((12, 7)))
    ok = np.array_equal(out, v)
    return {"name": "vfe_identity", "ok": bool(ok),
            "detail": "exact" if ok else "identity violated"}


def check_exp_bounds(cases: int = 1000, seed: int = 0) -> dict:
    """exp(W) must stay inside [exp(-w_max), exp(w_max)] for wild inputs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(cases):
        w_max = float(rng.uniform(0.5, 20.0))
        params = _random_vfe_params(rng, 3, 2, 3, w_max)
        scale = 10.0 ** rng.integers(0, 6)
        d_feat = DepthFeature(feat=rng.standard_normal((4, 2)) * scale, rows=2, cols=2)
        w = vfe_mod.absorption_weights(d_feat, (2, 2), params)
        ew = np.exp(w)
        lo, hi = np.exp(-w_max), np.exp(w_max)
        if ew.min() < lo or ew.max() > hi:
            return {"name": "exp_bounds", "ok": False,
                    "detail": f"bounds violated at case {i}"}
        worst = max(worst, float(np.abs(w).max() / w_max))
    return {"name": "exp_bounds", "ok": True,
            "detail": f"{cases} cases, max |W|/w_max = {worst:.3f}"}


def check_permutation_equivariance(seed: int = 0) -> dict:
    """Permuting token rows (and k) permutes the output rows identically."""
    v, k, d_feat, params, grid = random_vfe_instance(seed, n_max=16, d_max=8)
    n = v.shape[0]
    rng = np.random.default_rng(seed + 1)
    perm = rng.permutation(n)
    out = vfe_mod.enhance(v, k, d_feat, params, grid=grid)
    w = vfe_mod.absorption_weights(d_feat, grid, params)
    # permuted tokens with matching permuted weights, applied from parts
    q = vfe_mod.aggregate_global(v[perm], params)
    s = vfe_mod.backscatter_response(v[perm], int(np.where(perm == k)[0][0]), q)
    out_p = vfe_mod.enhance_from_parts(v[perm], s, w[perm])
    err = float(np.abs(out_p - out[perm]).max())
    ok = err < 1e-12
    return {"name": "permutation_equivariance", "ok": bool(ok), "detail": f"max err {err:.2e}"}


def check_monotonicity(seed: int = 0, w_max: float = vfe_mod.DEFAULT_W_MAX) -> dict:
    """Raising one absorption weight raises |v_e| there and nowhere else."""
    if w_max == 0:
        return {"name": "weight_monotonicity", "ok": True,
                "detail": "skipped: w_max=0 pins all weights at zero"}
    rng = np.random.default_rng(seed)
    n, d = 6, 5
    v = rng.standard_normal((n, d))
    s = rng.standard_normal(d)
    # keep the subtracted tokens away from zero so |v_e| strictly grows
    u = v - s
    u[np.abs(u) < 0.1] += 0.2
    v = u + s
    w = rng.uniform(-0.4 * w_max, 0.4 * w_max, size=(n, d))
    base = vfe_mod.enhance_from_parts(v, s, w)
    for i, j in ((0, 0), (n - 1, d - 1), (2, 3)):
        bumped = w.copy()
        bumped[i, j] += 0.1 * w_max
        out = vfe_mod.enhance_from_parts(v, s, bumped)
        if not abs(out[i, j]) > abs(base[i, j]):
            return {"name": "weight_monotonicity", "ok": False,
                    "detail": f"|v_e[{i},{j}]| did not increase"}
        rest = np.ones((n, d), dtype=bool)
        rest[i, j] = False
        if not np.array_equal(out[rest], base[rest]):
            return {"name": "weight_monotonicity", "ok": False,
                    "detail": f"bumping W[{i},{j}] changed other entries"}
    return {"name": "weight_monotonicity", "ok": True, "detail": "3 probes"}


def check_shared_projector(seed: int = 0) -> dict:
    """Joint-loss projector gradient == sum of single-path gradients."""
    image, depth, params = random_pipeline_instance(seed, smooth=False)
    res = pipe.forward(image, depth, params)
    _, joint = pipe.loss_and_grads(image, depth, params)
    dv_a, ga = pipe._project_backward(2.0 * res.original, res.caches["proj_a"],
                                      params.projector)
    dv_b, gb = pipe._project_backward(2.0 * res.enhanced, res.caches["proj_b"],
                                      params.projector)
    worst = 0.0
    for name in pipe.PROJECTOR_PARAM_NAMES:
        worst = max(worst, vfe_mod.relative_error(joint[f"projector.{name}"],
                                                  ga[name] + gb[name]))
    ok = worst < 1e-12
    return {"name": "shared_projector_accumulation", "ok": bool(ok),
            "detail": f"max rel err {worst:.2e}"}


def check_vfe_gradients(seeds, step: float = FD_STEP, tol: float = GRAD_TOL,
                        dims=None, w_max: float | None = None) -> dict:
    seeds = list(seeds)
    worst = 0.0
    for seed in seeds:
        v, k, d_feat, params, grid = random_vfe_instance(
            seed, n_max=16, d_max=8, smooth=True,
            clip_active=(seed % 3 == 0 and w_max is None),
            dims=dims, w_max=w_max)
        err, _ = vfe_mod.grad_check(params, v, k, d_feat, grid=grid, step=step)
        worst = max(worst, err)
    ok = worst < tol
    return {"name": "vfe_gradients", "ok": bool(ok),
            "detail": f"max rel err {worst:.2e} over {len(seeds)} instances"}


def check_pipeline_gradients(seeds, step: float = FD_STEP, tol: float = GRAD_TOL) -> dict:
    worst = 0.0
    for seed in seeds:
        image, depth, params = random_pipeline_instance(seed, smooth=True)
        err, _ = pipe.end_to_end_grad_check(params, image, depth, step=step)
        worst = max(worst, err)
    ok = worst < tol
    return {"name": "pipeline_gradients", "ok": bool(ok),
            "detail": f"max rel err {worst:.2e} over {len(list(seeds))} instances"}


def check_checkpoint_gradients(params: VfeParams, seed: int = 0, step: float = FD_STEP,
                               tol: float = GRAD_TOL) -> dict:
    """FD-check a loaded parameter set on a freshly sampled smooth input."""
    rng = np.random.default_rng(seed)
    for _ in range(200):
        gr, gc = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        dr, dc = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        v = rng.standard_normal((gr * gc, params.d))
        k = int(rng.integers(0, gr * gc))
        d_feat = DepthFeature(feat=rng.standard_normal((dr * dc, params.e)),
                              rows=dr, cols=dc)
        _, cache = vfe_mod.enhance_forward(v, k, d_feat, params, grid=(gr, gc))
        if not _vfe_margins_ok(cache, params.w_max, KINK_MARGIN):
            continue
        err, _ = vfe_mod.grad_check(params, v, k, d_feat, grid=(gr, gc), step=step)
        return {"name": "checkpoint_gradients", "ok": bool(err < tol),
                "detail": f"max rel err {err:.2e} on a {gr}x{gc} token grid"}
    return {"name": "checkpoint_gradients", "ok": True,
            "detail": "skipped: no kink-free probe input found for this checkpoint"}


def run_selfcheck(grad_seeds: int = 5, fuzz_cases: int = 1000, seed: int = 0,
                  dims=None, w_max: float | None = None) -> dict:
    """Run every enhancement/pipeline invariant; returns a JSON-able report.

    ``dims=(d, e, h)`` pins the enhancement widths used for the gradient
    instances; ``w_max`` overrides the weight clamp everywhere it matters
    (``w_max=0`` degenerates the clamp, so the monotonicity probe is skipped
    with a notice rather than failed).
    """
    checks = [
        check_identity(seed),
        check_exp_bounds(cases=fuzz_cases, seed=seed),
        check_permutation_equivariance(seed),
        check_monotonicity(seed, w_max=vfe_mod.DEFAULT_W_MAX if w_max is None else w_max),
        check_shared_projector(seed),
        check_vfe_gradients(range(seed, seed + grad_seeds), dims=dims, w_max=w_max),
        check_pipeline_gradients(range(seed, seed + max(1, grad_seeds // 2))),
    ]
    return {"ok": all(c["ok"] for c in checks), "checks": checks}
