"""Compact CNN for 64-channel EEG trials with switchable normalization.

Pipeline (input: one trial as a 1 x channels x time image):

    temporal conv (8 kernels 1x64, same) -> norm
    depthwise conv (kernel channels x 1, valid, x2)  -> norm -> ELU
    avg pool 1x4 -> dropout
    separable conv (16 kernels 1x16, same) -> norm -> ELU
    avg pool 1x8 -> dropout
    flatten -> dense -> class logits

``norm`` is either per-channel batch normalization with running statistics
or per-sample layer normalization over all non-batch elements.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .autograd import Tensor, as_tensor
from .errors import DataFormatError, ShapeError
from .nnops import avg_pool2d, batch_norm, conv2d, dense, dropout, elu, layer_norm
from .params import ParamSet

TEMPORAL_KERNEL = 64
SEPARABLE_KERNEL = 16
POOL_1 = 4
POOL_2 = 8
NORM_EPS = 1e-5
BN_MOMENTUM = 0.1
ELU_ALPHA = 1.0


class NormKind(str, Enum):
    batch = "batch"
    layer = "layer"


@dataclass(frozen=True)
class ClassifierSpec:
    channels: int = 64
    time_points: int = 321
    n_classes: int = 2
    norm: NormKind = NormKind.layer
    dropout_p: float = 0.25
    temporal_filters: int = 8
    depth_multiplier: int = 2
    separable_filters: int = 16

    def __post_init__(self):
        if self.channels < 1 or self.time_points < POOL_1 * POOL_2:
            raise ValueError(f"invalid spec: channels={self.channels}, "
                             f"time_points={self.time_points}")
        if self.n_classes < 2 or self.temporal_filters < 1 or self.depth_multiplier < 1:
            raise ValueError("invalid spec: counts must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"invalid dropout_p {self.dropout_p}")

    @property
    def depth_channels(self) -> int:
        return self.temporal_filters * self.depth_multiplier

    @property
    def pooled_1(self) -> int:
        return self.time_points // POOL_1

    @property
    def pooled_2(self) -> int:
        return self.pooled_1 // POOL_2

    @property
    def flatten_width(self) -> int:
        return self.separable_filters * self.pooled_2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["norm"] = self.norm.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierSpec":
        d = dict(d)
        d["norm"] = NormKind(d["norm"])
        return cls(**d)


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def build_classifier(spec: ClassifierSpec, rng: np.random.Generator) -> ParamSet:
    """Fresh ParamSet for ``spec``; conv layers carry no bias (the following
    normalization absorbs any offset), the dense head keeps one."""
    ps = ParamSet()
    ps.meta["spec"] = spec.to_dict()

    f = spec.temporal_filters
    ps.add("conv1.kernel", Tensor(_glorot(
        rng, (f, 1, 1, TEMPORAL_KERNEL), TEMPORAL_KERNEL, f * TEMPORAL_KERNEL)))
    _add_norm(ps, "norm1", spec, (f, spec.channels, spec.time_points))

    m = spec.depth_multiplier
    ps.add("conv2.kernel", Tensor(_glorot(
        rng, (f, m, spec.channels, 1), spec.channels, m * spec.channels)))
    _add_norm(ps, "norm2", spec, (spec.depth_channels, 1, spec.time_points))

    dc, sf = spec.depth_channels, spec.separable_filters
    ps.add("conv3.depth_kernel", Tensor(_glorot(
        rng, (dc, 1, 1, SEPARABLE_KERNEL), SEPARABLE_KERNEL, SEPARABLE_KERNEL)))
    ps.add("conv3.point_kernel", Tensor(_glorot(rng, (sf, dc, 1, 1), dc, sf)))
    _add_norm(ps, "norm3", spec, (sf, 1, spec.pooled_1))

    flat = spec.flatten_width
    ps.add("dense.weight", Tensor(_glorot(
        rng, (spec.n_classes, flat), flat, spec.n_classes)))
    ps.add("dense.bias", Tensor(np.zeros(spec.n_classes)))
    return ps


def _add_norm(ps: ParamSet, name: str, spec: ClassifierSpec, extent: tuple[int, ...]):
    if spec.norm is NormKind.layer:
        shape = extent
    else:
        shape = (extent[0],)  # per-channel affine
        ps.add_buffer(f"{name}.running_mean", np.zeros(shape))
        ps.add_buffer(f"{name}.running_var", np.ones(shape))
    ps.add(f"{name}.gain", Tensor(np.ones(shape)))
    ps.add(f"{name}.bias", Tensor(np.zeros(shape)))


def _apply_norm(ps: ParamSet, name: str, x: Tensor, norm: NormKind, training: bool):
    if norm is NormKind.layer:
        return layer_norm(x, ps[f"{name}.gain"], ps[f"{name}.bias"], eps=NORM_EPS)
    return batch_norm(x, ps[f"{name}.gain"], ps[f"{name}.bias"],
                      ps.buffers[f"{name}.running_mean"],
                      ps.buffers[f"{name}.running_var"],
                      momentum=BN_MOMENTUM, training=training)


def spec_of(params: ParamSet) -> ClassifierSpec:
    try:
        return ClassifierSpec.from_dict(params.meta["spec"])
    except KeyError as exc:
        raise DataFormatError("ParamSet carries no classifier spec") from exc


def forward_logits(params: ParamSet, batch, training: bool = False,
                   rng: np.random.Generator | None = None,
                   trace: list | None = None) -> Tensor:
    """Logits for a batch of trials shaped (B, channels, time_points)."""
    spec = spec_of(params)
    x = as_tensor(batch)
    if x.ndim == 2:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 3 or x.shape[1:] != (spec.channels, spec.time_points):
        raise ShapeError(
            f"batch shape {x.shape} does not match ({spec.channels},{spec.time_points})")
    B = x.shape[0]

    def note(stage, t):
        if trace is not None:
            trace.append((stage, t.shape[1:]))
        return t

    h = x.reshape((B, 1, spec.channels, spec.time_points))
    h = note("temporal_conv", conv2d(h, params["conv1.kernel"], padding="same"))
    h = _apply_norm(params, "norm1", h, spec.norm, training)
    h = note("depthwise_conv", conv2d(h, params["conv2.kernel"], mode="depthwise",
                                      padding="valid",
                                      depth_multiplier=spec.depth_multiplier))
    h = _apply_norm(params, "norm2", h, spec.norm, training)
    h = elu(h, ELU_ALPHA)
    h = note("pool1", avg_pool2d(h, (1, POOL_1), (1, POOL_1)))
    h = dropout(h, spec.dropout_p, training, rng)
    h = note("separable_conv", conv2d(h, params["conv3.depth_kernel"], mode="separable",
                                      point_kernels=params["conv3.point_kernel"]))
    h = _apply_norm(params, "norm3", h, spec.norm, training)
    h = elu(h, ELU_ALPHA)
    h = note("pool2", avg_pool2d(h, (1, POOL_2), (1, POOL_2)))
    h = dropout(h, spec.dropout_p, training, rng)
    h = note("flatten", h.reshape((B, spec.flatten_width)))
    return note("logits", dense(h, params["dense.weight"], params["dense.bias"]))


def clone_params(params: ParamSet) -> ParamSet:
    return params.clone()


def param_count(params: ParamSet) -> int:
    return params.param_count()


# ----------------------------------------------------------------------
# model file format: magic "FABM", u32 version, u32 tensor count, then per
# tensor: u32 name length, UTF-8 name, u32 rank, u32 dims..., float64 LE
# values in row-major order.  A JSON sidecar (<path>.json) records the
# classifier spec, provenance and which names are buffers.

MODEL_MAGIC = b"FABM"
MODEL_VERSION = 1


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def save_model(params: ParamSet, path) -> None:
    path = Path(path)
    entries = [(name, t.data) for name, t in params.items()]
    entries += [(name, arr) for name, arr in params.buffers.items()]
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(entries)))
        for name, arr in entries:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    sidecar = {
        "buffers": sorted(params.buffers),
        **{k: v for k, v in params.meta.items()},
    }
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_model(path) -> ParamSet:
    path = Path(path)
    try:
        sidecar = json.loads(sidecar_path(path).read_text())
    except FileNotFoundError as exc:
        raise DataFormatError(f"missing model sidecar {sidecar_path(path)}") from exc
    buffer_names = set(sidecar.get("buffers", []))

    ps = ParamSet()
    ps.meta = {k: v for k, v in sidecar.items() if k != "buffers"}
    with open(path, "rb") as fh:
        if fh.read(4) != MODEL_MAGIC:
            raise DataFormatError(f"{path} is not a model file")
        version, count = struct.unpack("<II", fh.read(8))
        if version != MODEL_VERSION:
            raise DataFormatError(f"unsupported model format version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            n = int(np.prod(dims)) if rank else 1
            payload = fh.read(8 * n)
            if len(payload) != 8 * n:
                raise DataFormatError(f"truncated tensor payload for {name!r}")
            arr = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
            if name in buffer_names:
                ps.add_buffer(name, arr)
            else:
                ps.add(name, Tensor(arr, requires_grad=True))
        if fh.read(1):
            raise DataFormatError("trailing bytes after final tensor")
    return ps
