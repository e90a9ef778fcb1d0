"""Binary checkpoint format.

Layout (all integers little-endian uint32, all tensors little-endian
float32):

    file     := segment(density) segment(color) trailer
    segment  := magic "BLRF" | version | json_len | header JSON
                | field tensors | [MLP parameters]
    trailer  := json_len | trailer JSON | [Adam moments]

The segment header JSON carries the field config and the basis kind (plus
MLP dimensions when neural).  Field tensors are written channel-major,
component-minor; within a triple the order is v_x, v_y, v_z, M_yz
(row-major), M_xz, M_xy.  Neural basis parameters follow the tensors: per
layer, row-major weight matrix then bias vector.

The trailer JSON records the train config, iteration counter and Adam step
counts; when moments are present they follow as float32 streams in the
same tensor/layer order (first moments of a group, then second moments),
tensor group before MLP group.

Training keeps parameters and moments on the float32 lattice, so a
save/load round trip is lossless and a resumed run replays bit-identically.
"""

import json
import struct

import numpy as np

from .basis import BasisKind, NeuralBasisParams, TimeBasisEvaluator
from .errors import CheckpointError
from .field import FactorizedField, FieldConfig, FieldKind
from .model import SceneModel

MAGIC = b"BLRF"
VERSION = 1


def _write_u32(fh, value: int):
    fh.write(struct.pack("<I", value))


def _read_u32(fh) -> int:
    raw = fh.read(4)
    if len(raw) != 4:
        raise CheckpointError("truncated checkpoint (expected uint32)")
    return struct.unpack("<I", raw)[0]


def _write_json(fh, obj):
    payload = json.dumps(obj, sort_keys=True).encode("utf-8")
    _write_u32(fh, len(payload))
    fh.write(payload)


def _read_json(fh):
    n = _read_u32(fh)
    payload = fh.read(n)
    if len(payload) != n:
        raise CheckpointError("truncated checkpoint (JSON header)")
    return json.loads(payload.decode("utf-8"))


def _write_array(fh, arr: np.ndarray):
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_array(fh, shape, dtype) -> np.ndarray:
    count = int(np.prod(shape))
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise CheckpointError("truncated checkpoint (tensor data)")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(dtype)


def _field_tensor_views(tensors, config: FieldConfig):
    """Per-triple views in the declared on-disk order."""
    v_x, v_y, v_z, m_yz, m_xz, m_xy = tensors
    for c in range(config.num_channels):
        for k in range(config.num_components):
            j = c * config.num_components + k
            yield v_x[j]
            yield v_y[j]
            yield v_z[j]
            yield m_yz[j]
            yield m_xz[j]
            yield m_xy[j]


def _write_field_tensors(fh, tensors, config: FieldConfig):
    for view in _field_tensor_views(tensors, config):
        _write_array(fh, view)


def _read_field_tensors(fh, config: FieldConfig, dtype):
    d = config.grid_resolution
    ck = config.num_channels * config.num_components
    tensors = [np.empty((ck, d), dtype=dtype) for _ in range(3)] + \
              [np.empty((ck, d, d), dtype=dtype) for _ in range(3)]
    for c in range(config.num_channels):
        for k in range(config.num_components):
            j = c * config.num_components + k
            for idx, shape in ((0, (d,)), (1, (d,)), (2, (d,)),
                               (3, (d, d)), (4, (d, d)), (5, (d, d))):
                tensors[idx][j] = _read_array(fh, shape, dtype)
    return tensors


def _basis_header(basis: TimeBasisEvaluator) -> dict:
    hdr = {"kind": basis.kind.value, "output_dim": basis.output_dim}
    if basis.kind == BasisKind.NEURAL:
        hdr["embed_freqs"] = basis.neural.embed_freqs
        hdr["hidden_width"] = basis.neural.hidden_width
    return hdr


def _write_segment(fh, fld: FactorizedField, basis: TimeBasisEvaluator):
    fh.write(MAGIC)
    _write_u32(fh, VERSION)
    _write_json(fh, {
        "field_kind": fld.field_kind.value,
        "config": fld.config.to_dict(),
        "basis": _basis_header(basis),
    })
    _write_field_tensors(fh, fld.tensors(), fld.config)
    if basis.kind == BasisKind.NEURAL:
        for w, b in zip(basis.neural.weights, basis.neural.biases):
            _write_array(fh, w)
            _write_array(fh, b)


def _read_segment(fh, dtype):
    magic = fh.read(4)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = _read_u32(fh)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = _read_json(fh)
    config = FieldConfig.from_dict(header["config"])
    tensors = _read_field_tensors(fh, config, dtype)
    fld = FactorizedField(config, FieldKind(header["field_kind"]), *tensors)
    bh = header["basis"]
    kind = BasisKind(bh["kind"])
    if kind == BasisKind.NEURAL:
        params = NeuralBasisParams(int(bh["embed_freqs"]), int(bh["hidden_width"]),
                                   int(bh["output_dim"]), [], [])
        for fan_out, fan_in in params.layer_sizes():
            params.weights.append(_read_array(fh, (fan_out, fan_in), dtype))
            params.biases.append(_read_array(fh, (fan_out,), dtype))
        basis = TimeBasisEvaluator(kind, int(bh["output_dim"]), params)
    else:
        basis = TimeBasisEvaluator(kind, int(bh["output_dim"]))
    return fld, basis


def _moment_arrays(model: SceneModel):
    """(tensor-group arrays, mlp-group arrays) in the serialized order."""
    from .training import _mlp_params, _tensor_params
    return _tensor_params(model), _mlp_params(model)


def save_checkpoint(path, model: SceneModel, train_config=None, opt=None,
                    iteration: int = 0):
    with open(path, "wb") as fh:
        _write_segment(fh, model.density_field, model.density_basis)
        _write_segment(fh, model.color_field, model.color_basis)
        trailer = {
            "iteration": int(iteration),
            "train_config": train_config.to_dict() if train_config else None,
            "has_adam": opt is not None,
            "tensor_step": opt.tensor_state.step if opt else 0,
            "mlp_step": opt.mlp_state.step if opt else 0,
        }
        _write_json(fh, trailer)
        if opt is not None:
            dcfg, ccfg = model.density_field.config, model.color_field.config
            for moments in (opt.tensor_state.m, opt.tensor_state.v):
                _write_field_tensors(fh, moments[:6], dcfg)
                _write_field_tensors(fh, moments[6:], ccfg)
            for moments in (opt.mlp_state.m, opt.mlp_state.v):
                for arr in moments:
                    _write_array(fh, arr)


def load_checkpoint(path, dtype=np.float32):
    """Returns (model, meta) where meta has train_config/iteration/optimizer."""
    from .training import AdamState, Optimizer, TrainConfig, _mlp_params

    with open(path, "rb") as fh:
        density_field, density_basis = _read_segment(fh, dtype)
        color_field, color_basis = _read_segment(fh, dtype)
        model = SceneModel(density_field, color_field, density_basis, color_basis)
        trailer = _read_json(fh)
        meta = {
            "iteration": int(trailer.get("iteration", 0)),
            "train_config": None,
            "optimizer": None,
        }
        if trailer.get("train_config"):
            meta["train_config"] = TrainConfig.from_dict(trailer["train_config"])
        if trailer.get("has_adam"):
            dcfg, ccfg = density_field.config, color_field.config
            tm, tv = [], []
            for dest in (tm, tv):
                dest.extend(_read_field_tensors(fh, dcfg, dtype))
                dest.extend(_read_field_tensors(fh, ccfg, dtype))
            mlp_shapes = [arr.shape for arr in _mlp_params(model)]
            mm = [_read_array(fh, s, dtype) for s in mlp_shapes]
            mv = [_read_array(fh, s, dtype) for s in mlp_shapes]
            meta["optimizer"] = Optimizer(
                AdamState(tm, tv, int(trailer.get("tensor_step", 0))),
                AdamState(mm, mv, int(trailer.get("mlp_step", 0))))
    return model, meta
