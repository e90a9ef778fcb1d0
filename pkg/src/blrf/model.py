"""Scene model: a density field and a color field, each with its own time basis."""

from dataclasses import dataclass

import numpy as np

from .basis import BasisKind, TimeBasisEvaluator
from .errors import ConfigurationError
from .field import (FactorizedField, FieldGradients, activate_color,
                    activate_density, combine_coefficients, query_batch,
                    window_weights)


@dataclass
class ModelGradients:
    """Gradient buffers parallel to SceneModel.parameters()."""

    density: FieldGradients
    color: FieldGradients
    density_basis: list  # [(dW, db), ...] or []
    color_basis: list

    def arrays(self):
        out = list(self.density.tensors()) + list(self.color.tensors())
        for dw, db in self.density_basis:
            out.extend((dw, db))
        for dw, db in self.color_basis:
            out.extend((dw, db))
        return out

    def add_(self, other: "ModelGradients"):
        for a, b in zip(self.arrays(), other.arrays()):
            a += b

    def zero_(self):
        for a in self.arrays():
            a[...] = 0.0

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))

    def scale_(self, s: float):
        for a in self.arrays():
            a *= s


@dataclass
class SceneModel:
    density_field: FactorizedField
    color_field: FactorizedField
    density_basis: TimeBasisEvaluator
    color_basis: TimeBasisEvaluator

    def __post_init__(self):
        dc, cc = self.density_field.config, self.color_field.config
        if dc.num_channels != 1 or cc.num_channels != 3:
            raise ConfigurationError("density field must have 1 channel, color field 3")
        if dc.scene_bound != cc.scene_bound:
            raise ConfigurationError("density and color fields must share scene_bound")
        if self.density_basis.output_dim != dc.submanifold_dim:
            raise ConfigurationError("density basis width must equal submanifold_dim")
        if self.color_basis.output_dim != cc.submanifold_dim:
            raise ConfigurationError("color basis width must equal submanifold_dim")

    @property
    def scene_bound(self) -> float:
        return self.density_field.config.scene_bound

    @property
    def dtype(self):
        return self.density_field.dtype

    def world_to_unit(self, points: np.ndarray):
        """Map world points into [0,1]^3; mask marks points inside the cube."""
        b = self.scene_bound
        inside = np.all(np.abs(points) <= b, axis=-1)
        unit = np.clip((points + b) / (2.0 * b), 0.0, 1.0)
        return unit, inside

    def coefficients(self, times: np.ndarray):
        """Per-ray component coefficients for both fields: (R, K_dens), (R, K_col)."""
        times = np.atleast_1d(np.asarray(times, dtype=np.float64))
        dc, cc = self.density_field.config, self.color_field.config
        omega_d = np.stack([window_weights(t, dc.num_windows, dc.sinc_kind) for t in times])
        omega_c = np.stack([window_weights(t, cc.num_windows, cc.sinc_kind) for t in times])
        beta_d = self.density_basis.eval_many(times)
        beta_c = self.color_basis.eval_many(times)
        return (combine_coefficients(omega_d, beta_d),
                combine_coefficients(omega_c, beta_c))

    def sigma_rgb(self, points: np.ndarray, t: float):
        """Activated density and color at world points for one time instant.

        Points outside the scene cube contribute sigma = 0 (free space).
        """
        points = np.atleast_2d(points)
        unit, inside = self.world_to_unit(points)
        coeff_d, coeff_c = self.coefficients(np.array([t]))
        n = points.shape[0]
        sigma = np.zeros(n, dtype=self.dtype)
        rgb = np.full((n, 3), 0.5, dtype=self.dtype)
        if np.any(inside):
            pts_in = unit[inside]
            kd = self.density_field.config.num_components
            kc = self.color_field.config.num_components
            raw_d = query_batch(self.density_field, pts_in,
                                np.broadcast_to(coeff_d[0], (pts_in.shape[0], kd)))
            raw_c = query_batch(self.color_field, pts_in,
                                np.broadcast_to(coeff_c[0], (pts_in.shape[0], kc)))
            sigma[inside] = activate_density(raw_d[:, 0],
                                             self.density_field.config.density_shift)
            rgb[inside] = activate_color(raw_c)
        return sigma, rgb

    def parameters(self):
        """Ordered (name, array) pairs; the order fixes checkpoint and Adam layout."""
        out = []
        for prefix, fld in (("density", self.density_field), ("color", self.color_field)):
            for name, arr in zip(("v_x", "v_y", "v_z", "m_yz", "m_xz", "m_xy"),
                                 fld.tensors()):
                out.append((f"{prefix}.{name}", arr))
        for prefix, basis in (("density_basis", self.density_basis),
                              ("color_basis", self.color_basis)):
            for name, arr in basis.parameters():
                out.append((f"{prefix}.{name}", arr))
        return out

    def new_gradients(self) -> ModelGradients:
        def mlp_zeros(basis):
            if basis.kind != BasisKind.NEURAL:
                return []
            return [(np.zeros_like(w), np.zeros_like(b))
                    for w, b in zip(basis.neural.weights, basis.neural.biases)]
        return ModelGradients(
            FieldGradients.zeros_like(self.density_field),
            FieldGradients.zeros_like(self.color_field),
            mlp_zeros(self.density_basis),
            mlp_zeros(self.color_basis),
        )

    def copy(self) -> "SceneModel":
        import copy as _copy
        return _copy.deepcopy(self)
