"""Finite-difference verification of the hand-derived gradients.

Perturbs every scalar parameter of a miniature scene model and compares
central differences of the total training loss against the analytic
gradients, reported per parameter class.  A sign-flip fault can be injected
to prove the harness actually detects broken gradients.
"""

from dataclasses import dataclass

import numpy as np

from .basis import BasisKind, make_basis
from .field import FieldConfig, FieldKind, init_field
from .model import SceneModel
from .render import SamplingSpec
from .training import TrainConfig, loss_and_grads

# relative error floor: below this magnitude the comparison is absolute,
# keeping FD roundoff noise from inflating ratios of near-zero gradients
DENOM_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    per_class: dict        # class name -> max relative error
    tolerance: float
    injected_fault: str | None

    @property
    def passed(self) -> bool:
        return all(v < self.tolerance for v in self.per_class.values())

    def report(self) -> str:
        lines = [f"{'parameter class':<28} {'max rel err':>12}  status"]
        for name, err in sorted(self.per_class.items()):
            status = "ok" if err < self.tolerance else "FAIL"
            lines.append(f"{name:<28} {err:12.3e}  {status}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"gradient check {verdict} (tolerance {self.tolerance:g})")
        return "\n".join(lines)


def build_miniature_model(grid: int, k: int, w: int, seed: int = 0,
                          basis_kind: BasisKind = BasisKind.NEURAL,
                          embed_freqs: int = 2, hidden_width: int = 8) -> SceneModel:
    """A tiny double-precision scene model for finite-difference work."""
    dens_cfg = FieldConfig(grid, k, w, num_channels=1, density_shift=-1.0)
    col_cfg = FieldConfig(grid, k, w, num_channels=3, density_shift=-1.0)
    rng_base = seed * 10
    model = SceneModel(
        init_field(dens_cfg, rng_base + 1, FieldKind.DENSITY),
        init_field(col_cfg, rng_base + 2, FieldKind.COLOR),
        make_basis(basis_kind, w, rng_base + 3, embed_freqs, hidden_width),
        make_basis(basis_kind, w, rng_base + 4, embed_freqs, hidden_width),
    )
    # break the near-zero symmetry so gradients have healthy magnitudes
    rng = np.random.default_rng(rng_base + 5)
    for _, arr in model.parameters():
        arr += 0.3 * rng.standard_normal(arr.shape)
    return model


def _random_batch(model: SceneModel, n_rays: int, seed: int):
    """Random rays crossing the scene cube, with random targets and times."""
    rng = np.random.default_rng(seed)
    b = model.scene_bound
    origins = np.empty((n_rays, 3))
    origins[:, 0] = 2.6
    origins[:, 1:] = rng.uniform(-0.3, 0.3, (n_rays, 2))
    targets = rng.uniform(-0.5 * b, 0.5 * b, (n_rays, 3))
    dirs = targets - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    times = rng.uniform(0.0, 1.0, n_rays)
    gt = rng.uniform(0.0, 1.0, (n_rays, 3))
    return origins, dirs, times, gt


def check_model_gradients(model: SceneModel, step: float = 1e-5,
                          tolerance: float = 1e-5, n_rays: int = 4,
                          seed: int = 0, lambda_hp: float = 0.02,
                          inject_sign_flip: str | None = None) -> GradCheckResult:
    """Compare analytic gradients of the total loss with central differences."""
    config = TrainConfig(lambda1=0.1, lambda2=0.1, lambda_hp=lambda_hp,
                         batch_rays=n_rays, iters=1, seed=seed, hp_samples=9)
    spec = SamplingSpec(near=1.4, far=4.2, n_samples=4, perturb=False,
                        background=(1.0, 1.0, 1.0))
    origins, dirs, times, gt = _random_batch(model, n_rays, seed)

    def total_loss():
        breakdown, _ = loss_and_grads(model, origins, dirs, times, gt, spec, config)
        return breakdown.total

    _, grads = loss_and_grads(model, origins, dirs, times, gt, spec, config)
    names = [name for name, _ in model.parameters()]
    analytic = dict(zip(names, grads.arrays()))

    per_class = {}
    for name, arr in model.parameters():
        g_ana = analytic[name]
        if inject_sign_flip and name.startswith(inject_sign_flip):
            g_ana = -g_ana
        worst = 0.0
        flat = arr.ravel()
        g_flat = g_ana.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = total_loss()
            flat[i] = keep - step
            down = total_loss()
            flat[i] = keep
            fd = (up - down) / (2.0 * step)
            denom = max(abs(fd), abs(g_flat[i]), DENOM_FLOOR)
            worst = max(worst, abs(fd - g_flat[i]) / denom)
        per_class[name] = max(per_class.get(name, 0.0), worst)
    return GradCheckResult(per_class, tolerance, inject_sign_flip)


def run_default_suite(seed: int = 0, tolerance: float = 1e-5,
                      inject_sign_flip: str | None = None):
    """The two miniature configurations exercised by the acceptance gate."""
    results = []
    for grid, k, w in ((3, 2, 2), (4, 4, 2)):
        model = build_miniature_model(grid, k, w, seed=seed)
        results.append(((grid, k, w),
                        check_model_gradients(model, seed=seed, tolerance=tolerance,
                                              inject_sign_flip=inject_sign_flip)))
    return results
