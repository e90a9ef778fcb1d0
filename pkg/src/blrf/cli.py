"""Command-line interface.

Subcommands: make-synthetic, train, render, eval, grad-check.  Exit codes:
0 success, 1 usage/config error, 2 runtime/numeric error.  Flags override
config-file values, which override the profile; the fully resolved config
is echoed to <out>/config.json for provenance.
"""

import argparse
import json
import os
import sys

import numpy as np

from .basis import BasisKind, make_basis
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (CheckpointError, ConfigurationError, ContractError,
                     TrainingError)
from .field import FieldConfig, FieldKind, SincKind, init_field
from .metrics import MetricReport, psnr, ssim
from .model import SceneModel
from .render import SamplingSpec, render_model_image
from .scenes import (Dataset, SceneKind, generate_dataset, make_scene,
                     save_image_png, save_image_raw)
from .training import Optimizer, TrainConfig, train_loop

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

PROFILES = {
    "paper": dict(grid_resolution=128, num_components=24, submanifold_dim=8,
                  iters=30000, batch_rays=4096, n_samples=128),
    "desk": dict(grid_resolution=32, num_components=12, submanifold_dim=4,
                 iters=5000, batch_rays=256, n_samples=64, embed_freqs=3),
}

DEFAULT_RUN = dict(
    profile="desk",
    seed=0,
    threads=1,
    grid_resolution=32,
    num_components=12,
    submanifold_dim=4,
    sinc_kind="normalized",
    density_shift=-1.0,
    scene_bound=1.0,
    basis_density="neural",
    basis_color="neural",
    embed_freqs=6,
    hidden_width=64,
    n_samples=64,
    perturb=True,
    lambda1=0.1,
    lambda2=0.1,
    lambda_hp=0.0,
    batch_rays=256,
    iters=5000,
    adam_beta1=0.9,
    adam_beta2=0.99,
    adam_eps=1e-8,
    lr_tensor_max=0.02,
    lr_mlp_max=0.001,
    lr_cycle_period=2000,
    lr_floor_ratio=0.1,
    grad_clip=0.0,
    hp_samples=64,
)


class _Parser(argparse.ArgumentParser):
    """argparse, but usage problems exit with code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="blrf",
                description="Dynamic scene reconstruction with band-limited "
                            "factorized radiance fields")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    mk = sub.add_parser("make-synthetic", help="generate a synthetic blob dataset")
    mk.add_argument("--scene", required=True,
                    choices=[k.value for k in SceneKind])
    mk.add_argument("--frames", type=int, default=16)
    mk.add_argument("--size", type=int, default=64, help="square image side in px")
    mk.add_argument("--out", required=True)
    mk.add_argument("--quad-samples", type=int, default=1024,
                    help="quadrature samples per ray for ground-truth rendering")
    mk.add_argument("--orbit-radius", type=float, default=3.0)
    mk.add_argument("--orbit-height", type=float, default=0.8)
    mk.add_argument("--seed", type=int, default=0)

    tr = sub.add_parser("train", help="fit a model to a dataset")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--config", help="JSON run config; flags override it")
    tr.add_argument("--profile", choices=sorted(PROFILES))
    tr.add_argument("--iters", type=int)
    tr.add_argument("--basis", choices=[k.value for k in BasisKind],
                    help="time basis for both fields")
    tr.add_argument("--grid", type=int, dest="grid_resolution")
    tr.add_argument("--components", type=int, dest="num_components")
    tr.add_argument("--subdim", type=int, dest="submanifold_dim")
    tr.add_argument("--batch-rays", type=int, dest="batch_rays")
    tr.add_argument("--samples", type=int, dest="n_samples")
    tr.add_argument("--lambda-hp", type=float, dest="lambda_hp")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--threads", type=int)
    tr.add_argument("--resume", help="checkpoint to continue from")
    tr.add_argument("--log-every", type=int, default=500)

    rd = sub.add_parser("render", help="render novel views from a checkpoint")
    rd.add_argument("--checkpoint", required=True)
    rd.add_argument("--data", required=True, help="dataset supplying camera poses")
    rd.add_argument("--out", required=True)
    rd.add_argument("--frame", type=int, default=0, help="pose frame index")
    rd.add_argument("--t", type=float, help="single render time in [0,1]")
    rd.add_argument("--t-sweep", help="START:END:COUNT fixed-pose time sweep")
    rd.add_argument("--pose-sweep", help="FIRST:LAST fixed-time pose sweep")
    rd.add_argument("--samples", type=int, help="override samples per ray")
    rd.add_argument("--raw", action="store_true",
                    help="also dump lossless float32 renders")

    ev = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint against a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--split", choices=["train", "test"], default="test")
    ev.add_argument("--samples", type=int)

    gc = sub.add_parser("grad-check",
                        help="finite-difference check of all analytic gradients")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tolerance", type=float, default=1e-5)
    gc.add_argument("--inject-sign-flip", nargs="?", const="density.m_xy",
                    default=None, metavar="CLASS",
                    help="negate one analytic gradient class to prove detection")
    return p


def _resolve_run_config(args) -> dict:
    cfg = dict(DEFAULT_RUN)
    profile = getattr(args, "profile", None)
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigurationError(f"cannot read config {args.config}: {err}")
        unknown = set(file_cfg) - set(DEFAULT_RUN) - {"profile"}
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    if profile is None:
        profile = file_cfg.get("profile", cfg["profile"])
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile '{profile}'")
    cfg["profile"] = profile
    cfg.update(PROFILES[profile])
    cfg.update({k: v for k, v in file_cfg.items() if k != "profile"})
    for key in cfg:
        if hasattr(args, key) and getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    if getattr(args, "basis", None):
        cfg["basis_density"] = args.basis
        cfg["basis_color"] = args.basis
    return cfg


def _build_model(cfg: dict, dtype=np.float32) -> SceneModel:
    seed = int(cfg["seed"])
    common = dict(grid_resolution=cfg["grid_resolution"],
                  num_components=cfg["num_components"],
                  submanifold_dim=cfg["submanifold_dim"],
                  scene_bound=cfg["scene_bound"],
                  sinc_kind=SincKind(cfg["sinc_kind"]),
                  density_shift=cfg["density_shift"])
    dens_cfg = FieldConfig(num_channels=1, **common)
    col_cfg = FieldConfig(num_channels=3, **common)
    return SceneModel(
        init_field(dens_cfg, seed, FieldKind.DENSITY, dtype=dtype),
        init_field(col_cfg, seed + 1, FieldKind.COLOR, dtype=dtype),
        make_basis(BasisKind(cfg["basis_density"]), cfg["submanifold_dim"],
                   seed + 2, cfg["embed_freqs"], cfg["hidden_width"], dtype=dtype),
        make_basis(BasisKind(cfg["basis_color"]), cfg["submanifold_dim"],
                   seed + 3, cfg["embed_freqs"], cfg["hidden_width"], dtype=dtype),
    )


def _train_config(cfg: dict) -> TrainConfig:
    keys = ("lambda1", "lambda2", "lambda_hp", "batch_rays", "iters", "seed",
            "adam_beta1", "adam_beta2", "adam_eps", "lr_tensor_max", "lr_mlp_max",
            "lr_cycle_period", "lr_floor_ratio", "grad_clip", "hp_samples")
    return TrainConfig(**{k: cfg[k] for k in keys})


def cmd_make_synthetic(args) -> int:
    spec = make_scene(SceneKind(args.scene))
    generate_dataset(spec, args.frames, args.out, image_size=args.size,
                     n_quad_samples=args.quad_samples,
                     orbit_radius=args.orbit_radius,
                     orbit_height=args.orbit_height)
    print(f"wrote {args.frames} frames + manifest to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_run_config(args)
    cfg["dataset"] = args.data
    cfg["out"] = args.out
    dataset = Dataset.load(args.data)
    os.makedirs(args.out, exist_ok=True)

    start_iter = 0
    opt = None
    if args.resume:
        model, meta = load_checkpoint(args.resume)
        if meta["train_config"] is None or meta["optimizer"] is None:
            raise ConfigurationError("cannot resume: checkpoint has no training state")
        train_cfg = meta["train_config"]
        if args.iters is not None:
            train_cfg.iters = args.iters
        opt = meta["optimizer"]
        start_iter = meta["iteration"]
    else:
        model = _build_model(cfg)
        train_cfg = _train_config(cfg)

    with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=1, sort_keys=True)

    spec = dataset.sampling_spec(cfg["n_samples"], perturb=bool(cfg["perturb"]))
    ckpt_path = os.path.join(args.out, "checkpoint.blrf")
    train_loop(model, dataset, train_cfg, spec, out_dir=args.out,
               threads=int(cfg["threads"]), opt=opt, start_iter=start_iter,
               log_every=args.log_every, checkpoint_path=ckpt_path)
    try:
        from .figures import save_loss_figure
        save_loss_figure(os.path.join(args.out, "log.csv"),
                         os.path.join(args.out, "loss.png"))
    except Exception as err:  # figures are a courtesy, not a contract
        print(f"warning: could not render loss figure: {err}", file=sys.stderr)
    print(f"checkpoint written to {ckpt_path}")
    return EXIT_OK


def _parse_sweep(text: str, what: str):
    parts = text.split(":")
    try:
        if what == "t":
            start, end, count = float(parts[0]), float(parts[1]), int(parts[2])
            if len(parts) != 3 or count < 1:
                raise ValueError
            return start, end, count
        first, last = int(parts[0]), int(parts[1])
        if len(parts) != 2:
            raise ValueError
        return first, last
    except (ValueError, IndexError):
        raise ConfigurationError(
            f"malformed --{what}-sweep '{text}' "
            f"(expected {'START:END:COUNT' if what == 't' else 'FIRST:LAST'})")


def _check_time(t: float):
    if not 0.0 <= t <= 1.0:
        raise ConfigurationError(f"time outside [0,1]: {t}")


def cmd_render(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    dataset = Dataset.load(args.data)
    n_samples = args.samples or 2 * len(dataset.times) or 64
    spec = dataset.sampling_spec(max(n_samples, 64), perturb=False)
    os.makedirs(args.out, exist_ok=True)

    jobs = []  # (name, frame_idx, t)
    if args.t_sweep:
        start, end, count = _parse_sweep(args.t_sweep, "t")
        _check_time(start)
        _check_time(end)
        for i, t in enumerate(np.linspace(start, end, count)):
            jobs.append((f"render_t{i:04d}.png", args.frame, float(t)))
    elif args.pose_sweep:
        if args.t is None:
            raise ConfigurationError("--pose-sweep requires --t")
        _check_time(args.t)
        first, last = _parse_sweep(args.pose_sweep, "pose")
        if not (0 <= first <= last < len(dataset.cameras)):
            raise ConfigurationError(f"pose sweep {first}:{last} outside dataset")
        for f in range(first, last + 1):
            jobs.append((f"render_pose{f:04d}.png", f, args.t))
    else:
        if args.t is None:
            raise ConfigurationError("provide --t, --t-sweep or --pose-sweep")
        _check_time(args.t)
        jobs.append((f"render_t{args.t:.4f}_f{args.frame}.png", args.frame, args.t))

    if not all(0 <= f < len(dataset.cameras) for _, f, _ in jobs):
        raise ConfigurationError("--frame outside dataset")
    for name, frame_idx, t in jobs:
        img = render_model_image(model, dataset.cameras[frame_idx], t, spec)
        path = os.path.join(args.out, name)
        save_image_png(path, img)
        if args.raw:
            save_image_raw(path[:-4] + ".f32", img)
        print(f"wrote {path}")
    return EXIT_OK


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255) / 255.0


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    dataset = Dataset.load(args.data)
    idx = dataset.test_idx if args.split == "test" else dataset.train_idx
    if not idx:
        raise ConfigurationError(f"dataset has no '{args.split}' frames")
    spec = dataset.sampling_spec(args.samples or 96, perturb=False)
    os.makedirs(args.out, exist_ok=True)
    renders_dir = os.path.join(args.out, "renders")
    os.makedirs(renders_dir, exist_ok=True)

    from .scenes import load_image
    ids, ps, ss = [], [], []
    for f in idx:
        img = render_model_image(model, dataset.cameras[f], float(dataset.times[f]),
                                 spec)
        img_q = _quantize(img)  # compare on the 8-bit lattice the PNGs live on
        ref = load_image(os.path.join(dataset.root, dataset.manifest.frames[f].file_path),
                         dataset.manifest.background)
        save_image_png(os.path.join(renders_dir, f"eval_{args.split}_{f:04d}.png"), img)
        ids.append(f)
        ps.append(psnr(img_q, ref))
        ss.append(ssim(img_q, ref))
    report = MetricReport(ids, ps, ss)
    report.write_csv(os.path.join(args.out, "metrics.csv"))
    try:
        from .figures import save_metrics_figure
        save_metrics_figure(report, os.path.join(args.out, "metrics.png"))
    except Exception as err:
        print(f"warning: could not render metrics figure: {err}", file=sys.stderr)
    print(report.table())
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .gradcheck import run_default_suite
    results = run_default_suite(seed=args.seed, tolerance=args.tolerance,
                                inject_sign_flip=args.inject_sign_flip)
    all_ok = True
    for (grid, k, w), res in results:
        print(f"--- miniature config D={grid} K={k} W={w}")
        print(res.report())
        all_ok = all_ok and res.passed
    return EXIT_OK if all_ok else EXIT_USAGE


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {
        "make-synthetic": cmd_make_synthetic,
        "train": cmd_train,
        "render": cmd_render,
        "eval": cmd_eval,
        "grad-check": cmd_grad_check,
    }
    try:
        return handlers[args.command](args)
    except (ConfigurationError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, ContractError, FloatingPointError, OSError) as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
