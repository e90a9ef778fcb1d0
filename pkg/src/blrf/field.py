"""Factorized, time-evolving scalar/vector fields on a cubic grid.

A field holds K component triples per channel.  Each triple pairs three
axis vectors with three complementary plane matrices so that the triple
evaluates to

    P(x, y, z) = lin(v_z, z) * bilin(M_xy, x, y)
               + lin(v_x, x) * bilin(M_yz, y, z)
               + lin(v_y, y) * bilin(M_xz, x, z)

on normalized coordinates, which by separability of the trilinear weights
equals dense trilinear interpolation of the rank-structured D^3 grid.  At
query time the K components are mixed by per-component coefficients
combining a temporal basis vector (length W) with sinc window weights
(d = K / W windows), so the field at a fixed point traces a bandlimited
trajectory in time.
"""

from dataclasses import dataclass, field as dc_field
from enum import Enum

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import ConfigurationError, ContractError, OutOfBoundsError


class SincKind(str, Enum):
    """Window function flavor: sin(pi r)/(pi r) or the raw sin(r)/r."""

    NORMALIZED = "normalized"
    LITERAL = "literal"


class FieldKind(str, Enum):
    DENSITY = "density"
    COLOR = "color"


@dataclass(frozen=True)
class FieldConfig:
    grid_resolution: int            # nodes per axis
    num_components: int             # K
    submanifold_dim: int            # W, temporal basis size
    num_channels: int = 1           # 1 (density) or 3 (color)
    scene_bound: float = 1.0        # half-side of the world cube
    sinc_kind: SincKind = SincKind.NORMALIZED
    density_shift: float = -1.0     # pre-activation bias

    def __post_init__(self):
        if self.grid_resolution < 2:
            raise ConfigurationError(
                f"grid_resolution must be >= 2, got {self.grid_resolution}")
        if self.num_components < 1 or self.submanifold_dim < 1:
            raise ConfigurationError("num_components and submanifold_dim must be >= 1")
        if self.num_components % self.submanifold_dim != 0:
            raise ConfigurationError(
                f"num_components ({self.num_components}) must be a multiple of "
                f"submanifold_dim ({self.submanifold_dim})")
        if self.num_channels not in (1, 3):
            raise ConfigurationError(f"num_channels must be 1 or 3, got {self.num_channels}")
        if self.scene_bound <= 0:
            raise ConfigurationError("scene_bound must be positive")

    @property
    def num_windows(self) -> int:
        return self.num_components // self.submanifold_dim

    def to_dict(self) -> dict:
        return {
            "grid_resolution": self.grid_resolution,
            "num_components": self.num_components,
            "submanifold_dim": self.submanifold_dim,
            "num_channels": self.num_channels,
            "scene_bound": self.scene_bound,
            "sinc_kind": self.sinc_kind.value,
            "density_shift": self.density_shift,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FieldConfig":
        return cls(
            grid_resolution=int(d["grid_resolution"]),
            num_components=int(d["num_components"]),
            submanifold_dim=int(d["submanifold_dim"]),
            num_channels=int(d["num_channels"]),
            scene_bound=float(d["scene_bound"]),
            sinc_kind=SincKind(d["sinc_kind"]),
            density_shift=float(d["density_shift"]),
        )


@dataclass
class ComponentTriple:
    """One rank-structured component: three axis vectors + three plane matrices."""

    v_x: np.ndarray
    v_y: np.ndarray
    v_z: np.ndarray
    m_yz: np.ndarray
    m_xz: np.ndarray
    m_xy: np.ndarray


@dataclass
class FactorizedField:
    """C*K component triples stored as stacked arrays (row = channel*K + component)."""

    config: FieldConfig
    field_kind: FieldKind
    v_x: np.ndarray   # (C*K, D)
    v_y: np.ndarray
    v_z: np.ndarray
    m_yz: np.ndarray  # (C*K, D, D)
    m_xz: np.ndarray
    m_xy: np.ndarray

    def triple(self, channel: int, component: int) -> ComponentTriple:
        """View of one triple; channel-major, component-minor indexing."""
        j = channel * self.config.num_components + component
        return ComponentTriple(self.v_x[j], self.v_y[j], self.v_z[j],
                               self.m_yz[j], self.m_xz[j], self.m_xy[j])

    @property
    def dtype(self):
        return self.v_x.dtype

    def tensors(self):
        """The six stacked parameter arrays, in declared order."""
        return [self.v_x, self.v_y, self.v_z, self.m_yz, self.m_xz, self.m_xy]

    def copy(self) -> "FactorizedField":
        return FactorizedField(self.config, self.field_kind,
                               *(t.copy() for t in self.tensors()))


@dataclass
class FieldGradients:
    """Accumulation buffers shadowing a FactorizedField's tensors."""

    v_x: np.ndarray
    v_y: np.ndarray
    v_z: np.ndarray
    m_yz: np.ndarray
    m_xz: np.ndarray
    m_xy: np.ndarray

    @classmethod
    def zeros_like(cls, fld: FactorizedField) -> "FieldGradients":
        return cls(*(np.zeros_like(t) for t in fld.tensors()))

    def tensors(self):
        return [self.v_x, self.v_y, self.v_z, self.m_yz, self.m_xz, self.m_xy]

    def zero_(self):
        for t in self.tensors():
            t[...] = 0

    def add_(self, other: "FieldGradients"):
        for a, b in zip(self.tensors(), other.tensors()):
            a += b


def init_field(config: FieldConfig, seed: int, field_kind: FieldKind = FieldKind.DENSITY,
               dtype=np.float64) -> FactorizedField:
    """Uniform init in [-s, s] with s = 0.1 / sqrt(D); deterministic per seed."""
    rng = np.random.default_rng(seed)
    d = config.grid_resolution
    ck = config.num_channels * config.num_components
    s = 0.1 / np.sqrt(d)
    def draw(shape):
        return rng.uniform(-s, s, size=shape).astype(dtype)
    return FactorizedField(
        config, field_kind,
        draw((ck, d)), draw((ck, d)), draw((ck, d)),
        draw((ck, d, d)), draw((ck, d, d)), draw((ck, d, d)),
    )


def _lin(v: np.ndarray, x: float) -> float:
    """1D linear interpolation on D nodes at positions i/(D-1)."""
    d = v.shape[0]
    t = x * (d - 1)
    i0 = min(int(t), d - 2)
    w = t - i0
    return v[i0] * (1 - w) + v[i0 + 1] * w


def _bilin(m: np.ndarray, a: float, b: float) -> float:
    d = m.shape[0]
    ta, tb = a * (d - 1), b * (d - 1)
    ia = min(int(ta), d - 2)
    ib = min(int(tb), d - 2)
    wa, wb = ta - ia, tb - ib
    return (m[ia, ib] * (1 - wa) * (1 - wb) + m[ia, ib + 1] * (1 - wa) * wb
            + m[ia + 1, ib] * wa * (1 - wb) + m[ia + 1, ib + 1] * wa * wb)


def _check_unit_point(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (3,):
        raise ContractError(f"expected a 3-vector position, got shape {x.shape}")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise OutOfBoundsError(f"position {x} outside [0,1]^3")
    return x


def eval_component(triple: ComponentTriple, x) -> float:
    """Evaluate one component triple at normalized position x in [0,1]^3."""
    x = _check_unit_point(x)
    return (_lin(triple.v_z, x[2]) * _bilin(triple.m_xy, x[0], x[1])
            + _lin(triple.v_x, x[0]) * _bilin(triple.m_yz, x[1], x[2])
            + _lin(triple.v_y, x[1]) * _bilin(triple.m_xz, x[0], x[2]))


def window_weights(t: float, d: int, kind: SincKind = SincKind.NORMALIZED) -> np.ndarray:
    """Sinc window weights w_n(t) = sinc((d-1)*t - n), n = 0..d-1.

    The normalized flavor vanishes at nonzero integer offsets, so at knots
    t = m/(d-1) exactly one window is active; the literal flavor does not.
    For d = 1 the single weight is 1 for every t.
    """
    if d < 1:
        raise ContractError(f"window count must be >= 1, got {d}")
    r = (d - 1) * float(t) - np.arange(d, dtype=np.float64)
    if kind == SincKind.NORMALIZED:
        return np.sinc(r)
    out = np.ones_like(r)
    nz = r != 0
    out[nz] = np.sin(r[nz]) / r[nz]
    return out


def combine_coefficients(omega: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Per-component coefficients: coeff[n*W + u] = omega[n] * beta[u].

    Works on single vectors or batches stacked along leading axes.
    """
    return (omega[..., :, None] * beta[..., None, :]).reshape(*omega.shape[:-1], -1)


def query_field_raw(fld: FactorizedField, beta: np.ndarray, t: float, x) -> np.ndarray:
    """Raw (pre-activation) field value per channel at (x, t).

    beta is the temporal basis vector of length W; window weights come from
    the field's own sinc config.  With d = 1 this is the plain K-component
    linear combination.
    """
    cfg = fld.config
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (cfg.submanifold_dim,):
        raise ContractError(
            f"beta has shape {beta.shape}, expected ({cfg.submanifold_dim},)")
    x = _check_unit_point(x)
    omega = window_weights(t, cfg.num_windows, cfg.sinc_kind)
    coeff = combine_coefficients(omega, beta)
    out = np.zeros(cfg.num_channels)
    for c in range(cfg.num_channels):
        for k in range(cfg.num_components):
            if coeff[k] == 0.0:
                continue
            out[c] += coeff[k] * eval_component(fld.triple(c, k), x)
    return out


def query_batch(fld: FactorizedField, pts: np.ndarray, coeff: np.ndarray) -> np.ndarray:
    """Vectorized raw query: pts (P, 3) in [0,1]^3, coeff (P, K) -> (P, C)."""
    dtype = fld.dtype
    pts = np.ascontiguousarray(pts, dtype=dtype)
    coeff = np.ascontiguousarray(coeff, dtype=dtype)
    out = np.empty((pts.shape[0], fld.config.num_channels), dtype=dtype)
    _kernels.field_forward(fld.v_x, fld.v_y, fld.v_z, fld.m_yz, fld.m_xz, fld.m_xy,
                           pts, coeff, fld.config.num_channels, out)
    return out


def backward_batch(fld: FactorizedField, grads: FieldGradients, pts: np.ndarray,
                   coeff: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Reverse-mode of query_batch; accumulates into grads, returns dcoeff (P, K)."""
    dtype = fld.dtype
    pts = np.ascontiguousarray(pts, dtype=dtype)
    coeff = np.ascontiguousarray(coeff, dtype=dtype)
    upstream = np.ascontiguousarray(upstream, dtype=dtype)
    dcoeff = np.zeros_like(coeff)
    _kernels.field_backward(fld.v_x, fld.v_y, fld.v_z, fld.m_yz, fld.m_xz, fld.m_xy,
                            pts, coeff, fld.config.num_channels, upstream,
                            grads.v_x, grads.v_y, grads.v_z,
                            grads.m_yz, grads.m_xz, grads.m_xy, dcoeff)
    return dcoeff


def backward_field(fld: FactorizedField, grads: FieldGradients, x, t: float,
                   beta: np.ndarray, omega: np.ndarray,
                   upstream: np.ndarray) -> np.ndarray:
    """Accumulate d(value)/d(parameters) for a single query; returns d/d(beta).

    upstream has one entry per channel.  Matches central finite differences
    of query_field_raw.
    """
    cfg = fld.config
    x = _check_unit_point(x)
    beta = np.asarray(beta, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (cfg.num_channels,):
        raise ContractError(
            f"upstream has shape {upstream.shape}, expected ({cfg.num_channels},)")
    coeff = combine_coefficients(omega, beta)
    dcoeff = backward_batch(fld, grads, x[None, :], coeff[None, :], upstream[None, :])[0]
    # coeff[n*W + u] = omega[n] * beta[u]  =>  dbeta[u] = sum_n omega[n] * dcoeff[n*W+u]
    return omega @ dcoeff.reshape(cfg.num_windows, cfg.submanifold_dim)


def activate_density(raw, shift: float):
    """softplus(raw + shift): strictly positive, monotone."""
    return np.logaddexp(0.0, raw + shift)


def activate_density_grad(raw, shift: float):
    return expit(raw + shift)


def activate_color(raw):
    """Per-channel logistic sigmoid into (0, 1)."""
    return expit(raw)


def activate_color_grad(raw):
    s = expit(raw)
    return s * (1.0 - s)


def _tensor_tv_means(fld: FactorizedField) -> np.ndarray:
    """Per-tensor mean squared adjacent difference, for all 6*C*K tensors."""
    means = []
    for v in (fld.v_x, fld.v_y, fld.v_z):
        dv = np.diff(v, axis=1)
        means.append(np.mean(dv * dv, axis=1))
    for m in (fld.m_yz, fld.m_xz, fld.m_xy):
        d0 = np.diff(m, axis=1)
        d1 = np.diff(m, axis=2)
        ssq = np.sum(d0 * d0, axis=(1, 2)) + np.sum(d1 * d1, axis=(1, 2))
        means.append(ssq / (d0.shape[1] * d0.shape[2] + d1.shape[1] * d1.shape[2]))
    return np.concatenate(means)


def tv_penalty(fld: FactorizedField) -> float:
    """Mean squared adjacent difference per tensor, averaged over all tensors.

    Applied to the factor vectors and matrices directly rather than to the
    materialized grid (same smoothing intent, O(K D^2) instead of O(D^3)).
    """
    return float(np.mean(_tensor_tv_means(fld)))


def tv_penalty_grad(fld: FactorizedField, grads: FieldGradients, scale: float = 1.0):
    """Accumulate scale * d(tv_penalty)/d(params) into grads."""
    n_tensors = 6 * fld.v_x.shape[0]
    for v, g in zip((fld.v_x, fld.v_y, fld.v_z), (grads.v_x, grads.v_y, grads.v_z)):
        dv = np.diff(v, axis=1)
        coef = 2.0 * scale / (dv.shape[1] * n_tensors)
        g[:, :-1] -= coef * dv
        g[:, 1:] += coef * dv
    for m, g in zip((fld.m_yz, fld.m_xz, fld.m_xy),
                    (grads.m_yz, grads.m_xz, grads.m_xy)):
        d0 = np.diff(m, axis=1)
        d1 = np.diff(m, axis=2)
        denom = d0.shape[1] * d0.shape[2] + d1.shape[1] * d1.shape[2]
        coef = 2.0 * scale / (denom * n_tensors)
        g[:, :-1, :] -= coef * d0
        g[:, 1:, :] += coef * d0
        g[:, :, :-1] -= coef * d1
        g[:, :, 1:] += coef * d1


def materialize_dense(fld: FactorizedField, beta: np.ndarray, t: float,
                      resolution: int) -> np.ndarray:
    """Dense (res, res, res, C) grid of raw values on the unit lattice."""
    if resolution < 2:
        raise ContractError(f"resolution must be >= 2, got {resolution}")
    cfg = fld.config
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (cfg.submanifold_dim,):
        raise ContractError(
            f"beta has shape {beta.shape}, expected ({cfg.submanifold_dim},)")
    omega = window_weights(t, cfg.num_windows, cfg.sinc_kind)
    coeff = combine_coefficients(omega, beta)
    axis = np.linspace(0.0, 1.0, resolution)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    coeff_pts = np.broadcast_to(coeff, (pts.shape[0], cfg.num_components))
    vals = query_batch(fld, pts, coeff_pts)
    return vals.reshape(resolution, resolution, resolution, cfg.num_channels)
