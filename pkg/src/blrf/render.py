"""Pinhole rays, stratified sampling, and emission-absorption compositing.

Compositing follows the discrete quadrature

    T_1 = 1,  T_{i+1} = T_i exp(-sigma_i delta_i),
    w_i = T_i (1 - exp(-sigma_i delta_i)) = T_i - T_{i+1},
    pixel = sum_i w_i c_i + T_{N+1} * background,

with delta_i = h_{i+1} - h_i and delta_N = far - h_N, so the weights plus
the residual transmittance sum to exactly 1 and the background enters
through an explicit term instead of a pseudo-infinite last interval.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ContractError
from .field import (activate_color, activate_color_grad, activate_density,
                    activate_density_grad, backward_batch, query_batch)
from .model import ModelGradients, SceneModel


@dataclass
class Camera:
    """Pinhole camera; c2w maps camera to world, camera looks down -z."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    c2w: np.ndarray  # (4, 4)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ContractError("image dimensions must be >= 1")
        self.c2w = np.asarray(self.c2w, dtype=np.float64)
        if self.c2w.shape != (4, 4):
            raise ContractError("c2w must be 4x4")
        r = self.c2w[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-4):
            raise ContractError("c2w rotation block is not orthonormal")

    @classmethod
    def from_angle(cls, width: int, height: int, camera_angle_x: float,
                   c2w) -> "Camera":
        fx = 0.5 * width / np.tan(0.5 * camera_angle_x)
        return cls(width, height, fx, fx, width / 2.0, height / 2.0, c2w)


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    pixel: tuple  # (row, col)


@dataclass
class SamplingSpec:
    near: float
    far: float
    n_samples: int
    perturb: bool = False
    background: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not (0.0 < self.near < self.far):
            raise ContractError(f"need 0 < near < far, got [{self.near}, {self.far}]")
        if self.n_samples < 1:
            raise ContractError("n_samples must be >= 1")


def _pixel_directions(camera: Camera, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Unit world-space directions through pixel centers."""
    x = (cols + 0.5 - camera.cx) / camera.fx
    y = -(rows + 0.5 - camera.cy) / camera.fy
    dirs = np.stack([x, y, -np.ones_like(x)], axis=-1)
    dirs = dirs @ camera.c2w[:3, :3].T
    return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)


def rays_for_pixels(camera: Camera, pixels) -> list:
    """Rays through the centers of the given (row, col) pixels."""
    rows = np.array([p[0] for p in pixels], dtype=np.float64)
    cols = np.array([p[1] for p in pixels], dtype=np.float64)
    if np.any(rows < 0) or np.any(rows >= camera.height) \
            or np.any(cols < 0) or np.any(cols >= camera.width):
        raise ContractError("pixel index outside image bounds")
    dirs = _pixel_directions(camera, rows, cols)
    origin = camera.c2w[:3, 3].copy()
    return [Ray(origin.copy(), d, (int(r), int(c)))
            for r, c, d in zip(rows, cols, dirs)]


def camera_ray_grid(camera: Camera):
    """Origins (3,) and directions (H*W, 3) for every pixel, row-major."""
    rows, cols = np.mgrid[0:camera.height, 0:camera.width].astype(np.float64)
    dirs = _pixel_directions(camera, rows.ravel(), cols.ravel())
    return camera.c2w[:3, 3].copy(), dirs


def sample_depths(n_rays: int, spec: SamplingSpec, rng=None) -> np.ndarray:
    """Stratified depths (R, N), ascending in [near, far].

    Without perturb each depth sits at its bin midpoint; with perturb it is
    drawn uniformly inside the bin.
    """
    n = spec.n_samples
    edges = np.linspace(spec.near, spec.far, n + 1)
    if spec.perturb:
        if rng is None:
            raise ContractError("perturbed sampling requires an rng")
        u = rng.random((n_rays, n))
    else:
        u = np.full((n_rays, n), 0.5)
    return edges[:-1] + u * (edges[1:] - edges[:-1])


def sample_along_ray(ray: Ray, spec: SamplingSpec, rng=None, scene_bound=None):
    """Depths, world points and an in-cube flag for one ray.

    Points outside the scene cube are flagged culled and contribute zero
    density downstream; with scene_bound None everything counts as inside.
    """
    depths = sample_depths(1, spec, rng)[0]
    points = ray.origin[None, :] + depths[:, None] * ray.direction[None, :]
    if scene_bound is None:
        inside = np.ones(len(depths), dtype=bool)
    else:
        inside = np.all(np.abs(points) <= scene_bound, axis=-1)
    return depths, points, inside


def _deltas(depths: np.ndarray, far: float) -> np.ndarray:
    d = np.empty_like(depths)
    d[:, :-1] = np.diff(depths, axis=1)
    d[:, -1] = far - depths[:, -1]
    return d


def composite_batch(sigmas: np.ndarray, colors: np.ndarray, depths: np.ndarray,
                    background, far: float):
    """Vectorized compositing over (R, N) samples; returns (pixels, opacity, cache)."""
    if np.any(sigmas < 0):
        raise ContractError("negative density passed to compositing")
    deltas = _deltas(depths, far)
    if np.any(deltas < 0):
        raise ContractError("non-ascending depths or far < last sample")
    background = np.asarray(background, dtype=np.float64)
    optical = sigmas * deltas
    prefix = np.concatenate([np.zeros((sigmas.shape[0], 1)),
                             np.cumsum(optical, axis=1)], axis=1)
    trans = np.exp(-prefix)                       # T_1..T_{N+1}, (R, N+1)
    weights = trans[:, :-1] - trans[:, 1:]        # (R, N)
    pixels = np.einsum("rn,rnc->rc", weights, colors) + trans[:, -1:] * background
    opacity = weights.sum(axis=1)
    cache = (weights, trans, deltas, colors, background)
    return pixels, opacity, cache


def composite(sigmas, colors, depths, background, far: float):
    """Single-ray compositing: returns (pixel rgb, opacity)."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    if not (sigmas.shape[0] == colors.shape[0] == depths.shape[0]) or sigmas.shape[0] < 1:
        raise ContractError("sigmas, colors and depths must share length N >= 1")
    pixels, opacity, _ = composite_batch(sigmas[None], colors[None], depths[None],
                                         background, far)
    return pixels[0], opacity[0]


def composite_backward(cache, d_pixels: np.ndarray):
    """d(loss)/d(sigma_i) and d(loss)/d(color_i) from d(loss)/d(pixel)."""
    weights, trans, deltas, colors, background = cache
    d_colors = weights[:, :, None] * d_pixels[:, None, :]
    uc = np.einsum("rnc,rc->rn", colors, d_pixels)     # upstream . c_i
    ubg = d_pixels @ background                        # upstream . bg
    wuc = weights * uc
    # suffix_j = sum_{i > j} w_i (u.c_i); trailing term is the background path
    suffix = np.zeros_like(wuc)
    if wuc.shape[1] > 1:
        suffix[:, :-1] = np.cumsum(wuc[:, ::-1], axis=1)[:, ::-1][:, 1:]
    after = suffix + (trans[:, -1] * ubg)[:, None]
    d_sigmas = deltas * (uc * trans[:, 1:] - after)
    return d_sigmas, d_colors


def _query_activated(fld, coeff_pts, pts_unit, kind_density: bool):
    raw = query_batch(fld, pts_unit, coeff_pts)
    if kind_density:
        return raw, activate_density(raw[:, 0], fld.config.density_shift)
    return raw, activate_color(raw)


def render_rays(model: SceneModel, origins: np.ndarray, dirs: np.ndarray,
                times: np.ndarray, spec: SamplingSpec, rng=None,
                depths: np.ndarray = None, want_cache: bool = False):
    """Forward render a batch of rays, each at its own time.

    Returns (pixels (R, 3), opacity (R,), cache-or-None).  The cache carries
    every intermediate needed by backward_render.
    """
    n_rays = origins.shape[0]
    if depths is None:
        depths = sample_depths(n_rays, spec, rng)
    points = origins[:, None, :] + depths[:, :, None] * dirs[:, None, :]
    unit, inside = model.world_to_unit(points)
    flat_idx = np.nonzero(inside.ravel())[0]
    ray_of_pt = flat_idx // spec.n_samples
    pts_unit = unit.reshape(-1, 3)[flat_idx]

    times = np.asarray(times, dtype=np.float64)
    coeff_d, coeff_c = model.coefficients(times)
    beta_cache_d = beta_cache_c = None
    if want_cache:
        # re-run the basis forward with caches so backward can reach the MLPs
        _, beta_cache_d = model.density_basis.forward_with_cache(times)
        _, beta_cache_c = model.color_basis.forward_with_cache(times)

    raw_d, sigma_in = _query_activated(model.density_field, coeff_d[ray_of_pt],
                                       pts_unit, True)
    raw_c, rgb_in = _query_activated(model.color_field, coeff_c[ray_of_pt],
                                     pts_unit, False)

    sigmas = np.zeros((n_rays, spec.n_samples))
    colors = np.zeros((n_rays, spec.n_samples, 3))
    sigmas.ravel()[flat_idx] = sigma_in
    colors.reshape(-1, 3)[flat_idx] = rgb_in

    pixels, opacity, comp_cache = composite_batch(sigmas, colors, depths,
                                                  spec.background, spec.far)
    cache = None
    if want_cache:
        cache = dict(flat_idx=flat_idx, ray_of_pt=ray_of_pt, pts_unit=pts_unit,
                     coeff_d=coeff_d, coeff_c=coeff_c, raw_d=raw_d, raw_c=raw_c,
                     comp=comp_cache, n_rays=n_rays, times=times,
                     beta_cache_d=beta_cache_d, beta_cache_c=beta_cache_c)
    return pixels, opacity, cache


def backward_render(model: SceneModel, grads: ModelGradients, cache,
                    d_pixels: np.ndarray):
    """Reverse-mode through compositing, activations, field queries and bases."""
    d_sigmas, d_colors = composite_backward(cache["comp"], d_pixels)
    flat_idx = cache["flat_idx"]
    ray_of_pt = cache["ray_of_pt"]
    pts_unit = cache["pts_unit"]

    dsig_in = d_sigmas.ravel()[flat_idx]
    dcol_in = d_colors.reshape(-1, 3)[flat_idx]

    dcfg = model.density_field.config
    up_d = (dsig_in * activate_density_grad(cache["raw_d"][:, 0],
                                            dcfg.density_shift))[:, None]
    up_c = dcol_in * activate_color_grad(cache["raw_c"])

    dcoeff_d = backward_batch(model.density_field, grads.density, pts_unit,
                              cache["coeff_d"][ray_of_pt], up_d)
    dcoeff_c = backward_batch(model.color_field, grads.color, pts_unit,
                              cache["coeff_c"][ray_of_pt], up_c)

    _basis_backward(model.density_basis, grads.density_basis, cache["beta_cache_d"],
                    dcoeff_d, ray_of_pt, cache["times"], model.density_field.config)
    _basis_backward(model.color_basis, grads.color_basis, cache["beta_cache_c"],
                    dcoeff_c, ray_of_pt, cache["times"], model.color_field.config)


def _basis_backward(basis, basis_grads, beta_cache, dcoeff, ray_of_pt, times, cfg):
    """Fold per-point coefficient gradients back into the basis parameters."""
    if basis.kind.value != "neural":
        return
    from .field import window_weights
    n_rays = times.shape[0]
    d, w = cfg.num_windows, cfg.submanifold_dim
    omega = np.stack([window_weights(t, d, cfg.sinc_kind) for t in times])
    # coeff[n*W+u] = omega[n] beta[u]  =>  dbeta[u] = sum_n omega[n] dcoeff[nW+u]
    dbeta_pts = np.einsum("pd,pdw->pw", omega[ray_of_pt].astype(np.float64),
                          dcoeff.reshape(-1, d, w).astype(np.float64))
    dbeta = np.zeros((n_rays, w))
    np.add.at(dbeta, ray_of_pt, dbeta_pts)
    layer_grads = basis.backward(beta_cache, dbeta)
    for (gw, gb), (dw_, db_) in zip(basis_grads, layer_grads):
        gw += dw_
        gb += db_


def render_image(density_field, color_field, density_basis, color_basis,
                 camera: Camera, t: float, spec: SamplingSpec, rng=None,
                 chunk_rays: int = 4096):
    """Render a full image at time t; deterministic with perturb off."""
    if not 0.0 <= t <= 1.0:
        raise ContractError(f"time {t} outside [0,1]")
    model = SceneModel(density_field, color_field, density_basis, color_basis)
    return render_model_image(model, camera, t, spec, rng, chunk_rays)


def render_model_image(model: SceneModel, camera: Camera, t: float,
                       spec: SamplingSpec, rng=None, chunk_rays: int = 4096,
                       return_opacity: bool = False):
    if not 0.0 <= t <= 1.0:
        raise ContractError(f"time {t} outside [0,1]")
    origin, dirs = camera_ray_grid(camera)
    n = dirs.shape[0]
    pixels = np.empty((n, 3))
    opacity = np.empty(n)
    for lo in range(0, n, chunk_rays):
        hi = min(lo + chunk_rays, n)
        o = np.broadcast_to(origin, (hi - lo, 3))
        tt = np.full(hi - lo, t)
        px, op, _ = render_rays(model, o, dirs[lo:hi], tt, spec, rng)
        pixels[lo:hi] = px
        opacity[lo:hi] = op
    img = pixels.reshape(camera.height, camera.width, 3)
    if return_opacity:
        return img, opacity.reshape(camera.height, camera.width)
    return img


def render_scene_fn_image(sigma_rgb_fn, camera: Camera, t: float,
                          spec: SamplingSpec, scene_bound: float = None,
                          chunk_rays: int = 2048, return_opacity: bool = False):
    """Render any sigma/rgb callable (e.g. an analytic scene) at time t."""
    origin, dirs = camera_ray_grid(camera)
    n = dirs.shape[0]
    pixels = np.empty((n, 3))
    opac = np.empty(n)
    for lo in range(0, n, chunk_rays):
        hi = min(lo + chunk_rays, n)
        depths = sample_depths(hi - lo, spec)
        points = origin[None, None, :] + depths[:, :, None] * dirs[lo:hi, None, :]
        flat = points.reshape(-1, 3)
        sigma, rgb = sigma_rgb_fn(flat, t)
        sigma = np.asarray(sigma, dtype=np.float64).copy()
        if scene_bound is not None:
            outside = ~np.all(np.abs(flat) <= scene_bound, axis=-1)
            sigma[outside] = 0.0
        px, op, _ = composite_batch(sigma.reshape(hi - lo, -1),
                                    np.asarray(rgb).reshape(hi - lo, -1, 3),
                                    depths, spec.background, spec.far)
        pixels[lo:hi] = px
        opac[lo:hi] = op
    img = pixels.reshape(camera.height, camera.width, 3)
    if return_opacity:
        return img, opac.reshape(camera.height, camera.width)
    return img
