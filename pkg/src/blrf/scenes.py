"""Dataset loading and synthetic scene generation.

Manifests are UTF-8 JSON with keys `camera_angle_x`, `w`, `h`, `near`,
`far`, `frames: [{file_path, time, transform_matrix}]`, `train_idx`,
`test_idx` and an optional `background` rgb (default white) used both for
alpha pre-compositing and as the compositing background at render time.

The synthetic scenes are Gaussian density blobs with closed-form sigma(x,t)
and rgb(t), so the generated frames double as analytic oracles for
quadrature and recovery tests.
"""

import json
import os
from dataclasses import dataclass, field as dc_field
from enum import Enum

import numpy as np
from PIL import Image

from .errors import ConfigurationError, ContractError
from .render import Camera, SamplingSpec, render_scene_fn_image


@dataclass
class FrameRecord:
    file_path: str
    transform_matrix: np.ndarray  # 4x4 camera-to-world
    time: float


@dataclass
class DatasetManifest:
    camera_angle_x: float
    width: int
    height: int
    near: float
    far: float
    frames: list
    train_idx: list
    test_idx: list
    background: tuple = (1.0, 1.0, 1.0)

    def camera(self, frame_idx: int) -> Camera:
        return Camera.from_angle(self.width, self.height, self.camera_angle_x,
                                 self.frames[frame_idx].transform_matrix)


def normalize_times(times: np.ndarray) -> np.ndarray:
    """Affinely map times to [0,1] when they look like frame indices.

    Times already inside [0,1] are left untouched, which makes the mapping
    idempotent.
    """
    times = np.asarray(times, dtype=np.float64)
    if times.size == 0 or (times.min() >= 0.0 and times.max() <= 1.0):
        return times
    lo, hi = times.min(), times.max()
    if hi == lo:
        return np.zeros_like(times)
    return (times - lo) / (hi - lo)


def _require(mapping: dict, key: str):
    if key not in mapping:
        raise ConfigurationError(f"manifest missing required field '{key}'")
    return mapping[key]


def load_manifest(path) -> DatasetManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigurationError(f"cannot load manifest {path}: {err}") from None

    angle = float(_require(raw, "camera_angle_x"))
    width = int(_require(raw, "w"))
    height = int(_require(raw, "h"))
    near = float(_require(raw, "near"))
    far = float(_require(raw, "far"))
    if not 0.0 < near < far:
        raise ConfigurationError(f"manifest needs 0 < near < far, got {near}, {far}")
    frames_raw = _require(raw, "frames")
    if not frames_raw:
        raise ConfigurationError("manifest has no frames")

    times = normalize_times(np.array([float(_require(f, "time")) for f in frames_raw]))
    frames = []
    for i, f in enumerate(frames_raw):
        mat = np.asarray(_require(f, "transform_matrix"), dtype=np.float64)
        if mat.shape != (4, 4) or not np.all(np.isfinite(mat)):
            raise ConfigurationError(f"frame {i}: transform_matrix must be finite 4x4")
        rot = mat[:3, :3]
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-3):
            raise ConfigurationError(f"frame {i}: rotation block is not orthonormal")
        frames.append(FrameRecord(str(_require(f, "file_path")), mat, float(times[i])))

    n = len(frames)
    train_idx = [int(i) for i in raw.get("train_idx", range(n))]
    test_idx = [int(i) for i in raw.get("test_idx", [])]
    background = tuple(float(c) for c in raw.get("background", (1.0, 1.0, 1.0)))
    return DatasetManifest(angle, width, height, near, far, frames,
                           train_idx, test_idx, background)


def save_manifest(path, manifest: DatasetManifest):
    payload = {
        "camera_angle_x": manifest.camera_angle_x,
        "w": manifest.width,
        "h": manifest.height,
        "near": manifest.near,
        "far": manifest.far,
        "background": list(manifest.background),
        "train_idx": list(manifest.train_idx),
        "test_idx": list(manifest.test_idx),
        "frames": [
            {"file_path": f.file_path,
             "time": f.time,
             "transform_matrix": np.asarray(f.transform_matrix).tolist()}
            for f in manifest.frames
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def load_image(path, background=(1.0, 1.0, 1.0)) -> np.ndarray:
    """8-bit RGB(A) PNG -> float (H, W, 3) in [0,1]; alpha composited over background."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img)
    except OSError as err:
        raise ConfigurationError(f"cannot decode image {path}: {err}") from None
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    arr = arr.astype(np.float64) / 255.0
    if arr.shape[-1] == 4:
        alpha = arr[..., 3:4]
        arr = arr[..., :3] * alpha + np.asarray(background) * (1.0 - alpha)
    return arr[..., :3]


def save_image_png(path, img: np.ndarray):
    """Float [0,1] image -> 8-bit RGB PNG, round-half-up."""
    quant = np.clip(np.floor(np.asarray(img) * 255.0 + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(quant, mode="RGB").save(path)


def save_image_raw(path, img: np.ndarray):
    """Lossless float32 dump, little-endian, row-major, RGB interleaved."""
    np.ascontiguousarray(img, dtype="<f4").tofile(path)


def load_image_raw(path, height: int, width: int) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").reshape(height, width, 3).astype(np.float64)


class SceneKind(str, Enum):
    STATIC_BLOB = "static-blob"
    MOVING_BLOB = "moving-blob"
    COLOR_CHANGE_BLOB = "color-change-blob"
    SCALE_BLOB = "scale-blob"


@dataclass
class SyntheticSceneSpec:
    """Gaussian blob with time-dependent center/radius/color."""

    kind: SceneKind
    center_start: np.ndarray
    center_end: np.ndarray
    radius_start: float
    radius_end: float
    color_start: np.ndarray
    color_end: np.ndarray
    peak_density: float = 25.0
    background: tuple = (1.0, 1.0, 1.0)

    def center(self, t: float) -> np.ndarray:
        return self.center_start + t * (self.center_end - self.center_start)

    def radius(self, t: float) -> float:
        return self.radius_start + t * (self.radius_end - self.radius_start)

    def color(self, t: float) -> np.ndarray:
        return self.color_start + t * (self.color_end - self.color_start)

    def sigma_rgb(self, points: np.ndarray, t: float):
        points = np.atleast_2d(points)
        delta = points - self.center(t)
        r = self.radius(t)
        sigma = self.peak_density * np.exp(-np.sum(delta * delta, axis=-1) / (2.0 * r * r))
        rgb = np.broadcast_to(self.color(t), (points.shape[0], 3)).copy()
        return sigma, rgb


def make_scene(kind: SceneKind) -> SyntheticSceneSpec:
    zero = np.zeros(3)
    if kind == SceneKind.STATIC_BLOB:
        return SyntheticSceneSpec(kind, zero, zero, 0.25, 0.25,
                                  np.array([0.85, 0.30, 0.25]),
                                  np.array([0.85, 0.30, 0.25]))
    if kind == SceneKind.MOVING_BLOB:
        return SyntheticSceneSpec(kind, np.array([-0.4, 0.0, 0.0]),
                                  np.array([0.4, 0.0, 0.0]), 0.2, 0.2,
                                  np.array([0.25, 0.5, 0.9]),
                                  np.array([0.25, 0.5, 0.9]))
    if kind == SceneKind.COLOR_CHANGE_BLOB:
        return SyntheticSceneSpec(kind, zero, zero, 0.25, 0.25,
                                  np.array([0.9, 0.1, 0.1]),
                                  np.array([0.1, 0.1, 0.9]))
    if kind == SceneKind.SCALE_BLOB:
        return SyntheticSceneSpec(kind, zero, zero, 0.15, 0.3,
                                  np.array([0.3, 0.8, 0.35]),
                                  np.array([0.3, 0.8, 0.35]))
    raise ConfigurationError(f"unknown scene kind {kind}")


def analytic_field_eval(spec: SyntheticSceneSpec, x, t: float):
    """Closed-form (sigma, rgb) of the blob at world point x, time t."""
    sigma, rgb = spec.sigma_rgb(np.asarray(x, dtype=np.float64)[None, :], t)
    return float(sigma[0]), rgb[0]


def orbit_pose(angle: float, radius: float, height: float) -> np.ndarray:
    """Camera on a circle looking at the origin (world z up, camera -z forward)."""
    eye = np.array([radius * np.cos(angle), radius * np.sin(angle), height])
    back = eye / np.linalg.norm(eye)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(up, back)
    right /= np.linalg.norm(right)
    cam_up = np.cross(back, right)
    c2w = np.eye(4)
    c2w[:3, 0] = right
    c2w[:3, 1] = cam_up
    c2w[:3, 2] = back
    c2w[:3, 3] = eye
    return c2w


def default_split(n_frames: int, train_block: int = 12, test_block: int = 4):
    """Repeating 12-train / 4-test interleaving over the frame sequence.

    The tiling is phase-shifted by half a training block so each test block
    sits between training frames: every interior period still reads as 12
    consecutive training frames followed by 4 test frames, but held-out
    frames measure temporal interpolation rather than extrapolation past the
    end of the sequence.
    """
    train, test = [], []
    period = train_block + test_block
    offset = train_block // 2
    for i in range(n_frames):
        j = i % period
        (test if offset <= j < offset + test_block else train).append(i)
    return train, test


def generate_dataset(spec: SyntheticSceneSpec, n_frames: int, out_dir,
                     image_size: int = 64, n_quad_samples: int = 1024,
                     orbit_radius: float = 3.0, orbit_height: float = 0.8,
                     orbit_span: float = 2.0 * np.pi, orbit_phase: float = 0.0,
                     camera_angle_x: float = 0.8, scene_bound: float = 1.0):
    """Render the analytic scene from an orbit; writes manifest + PNG frames.

    Frame times are uniform on [0,1]; the default split interleaves 12
    training frames with 4 test frames.  Rendering is deterministic.
    """
    if n_frames < 1:
        raise ContractError("need at least one frame")
    os.makedirs(out_dir, exist_ok=True)
    near = orbit_radius - 1.8 * scene_bound
    far = orbit_radius + 1.8 * scene_bound
    if near <= 0:
        raise ConfigurationError("orbit radius too small for the scene bound")
    sampling = SamplingSpec(near, far, n_quad_samples, perturb=False,
                            background=spec.background)
    frames = []
    for i in range(n_frames):
        t = i / (n_frames - 1) if n_frames > 1 else 0.0
        angle = orbit_phase + orbit_span * i / n_frames
        c2w = orbit_pose(angle, orbit_radius, orbit_height)
        camera = Camera.from_angle(image_size, image_size, camera_angle_x, c2w)
        img = render_scene_fn_image(spec.sigma_rgb, camera, t, sampling,
                                    scene_bound=scene_bound)
        name = f"frame_{i:04d}.png"
        save_image_png(os.path.join(out_dir, name), img)
        frames.append(FrameRecord(name, c2w, t))
    train_idx, test_idx = default_split(n_frames)
    manifest = DatasetManifest(camera_angle_x, image_size, image_size, near, far,
                               frames, train_idx, test_idx, spec.background)
    save_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


class Dataset:
    """Manifest plus eagerly loaded images and per-frame cameras."""

    def __init__(self, manifest: DatasetManifest, root):
        self.manifest = manifest
        self.root = root
        imgs = []
        for f in manifest.frames:
            img = load_image(os.path.join(root, f.file_path), manifest.background)
            if img.shape[:2] != (manifest.height, manifest.width):
                raise ConfigurationError(
                    f"image {f.file_path} is {img.shape[1]}x{img.shape[0]}, "
                    f"manifest says {manifest.width}x{manifest.height}")
            imgs.append(img.astype(np.float32))
        self.images = np.stack(imgs)
        self.times = np.array([f.time for f in manifest.frames])
        self.cameras = [manifest.camera(i) for i in range(len(manifest.frames))]
        self.train_idx = list(manifest.train_idx)
        self.test_idx = list(manifest.test_idx)

    @classmethod
    def load(cls, path) -> "Dataset":
        path = str(path)
        manifest_path = path if path.endswith(".json") else os.path.join(path, "manifest.json")
        return cls(load_manifest(manifest_path), os.path.dirname(manifest_path) or ".")

    def sampling_spec(self, n_samples: int, perturb: bool = False) -> SamplingSpec:
        return SamplingSpec(self.manifest.near, self.manifest.far, n_samples,
                            perturb, self.manifest.background)
