"""Binary dataset and checkpoint formats (all little-endian).

Dataset::

    b"GNSTDS01"
    u32 system (0 gravity, 1 coulomb), u32 n, u32 d, u32 T, u32 n_traj
    f64 dt_effective, f64 constant, f64 intensity, f64 softening
    f64[n_traj][T][n][d]

Checkpoint::

    b"GNSTCK01"
    u32 json_len, utf-8 json {model, training, norm_stats, seed}
    u32 tensor_count
    per tensor: u16 name_len, utf-8 name, u8 ndim, u32 dims[ndim], f64 data
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .model import ModelConfig, ModelParameters, NormStats
from .physics import LAYOUTS, System, SystemSpec, Trajectory
from .training import TrainingConfig

DATASET_MAGIC = b"GNSTDS01"
CHECKPOINT_MAGIC = b"GNSTCK01"
_DS_HEADER = struct.Struct("<5I4d")
DATASET_HEADER_SIZE = len(DATASET_MAGIC) + _DS_HEADER.size  # 60


class FormatError(ValueError):
    pass


def atomic_write(path: str | os.PathLike, payload: bytes) -> None:
    """Write to a sibling temp file, fsync, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class DatasetHeader:
    system: System
    n: int
    d: int
    T: int
    n_traj: int
    dt_effective: float
    constant: float
    intensity: float
    softening: float

    def spec(self, dt: float | None = None) -> SystemSpec:
        return SystemSpec(
            system=self.system,
            constant=self.constant,
            dt=self.dt_effective if dt is None else dt,
            softening=self.softening,
            intensity=self.intensity,
        )


def encode_dataset(trajectories: list[Trajectory], spec: SystemSpec) -> bytes:
    if not trajectories:
        raise ValueError("cannot write an empty dataset")
    first = trajectories[0]
    T, n, d = first.states.shape
    for i, tr in enumerate(trajectories):
        if tr.states.shape != (T, n, d) or tr.system is not spec.system:
            raise ValueError(f"trajectory {i} does not match shape {(T, n, d)} / system {spec.system.name}")
        if tr.dt_effective != first.dt_effective:
            raise ValueError(f"trajectory {i} has dt_effective {tr.dt_effective} != {first.dt_effective}")
    header = _DS_HEADER.pack(
        int(spec.system), n, d, T, len(trajectories),
        float(first.dt_effective), float(spec.constant), float(spec.intensity), float(spec.softening),
    )
    payload = np.stack([t.states for t in trajectories]).astype("<f8", copy=False)
    return DATASET_MAGIC + header + payload.tobytes(order="C")


def decode_dataset(raw: bytes) -> tuple[DatasetHeader, list[Trajectory]]:
    if raw[:8] != DATASET_MAGIC:
        raise FormatError(f"not a dataset file (magic {raw[:8]!r}, expected {DATASET_MAGIC!r})")
    if len(raw) < DATASET_HEADER_SIZE:
        raise FormatError("dataset header truncated")
    sys_id, n, d, T, n_traj, dt_eff, const, intensity, soft = _DS_HEADER.unpack_from(raw, 8)
    try:
        system = System(sys_id)
    except ValueError:
        raise FormatError(f"unknown system id {sys_id}") from None
    if LAYOUTS[system].d != d:
        raise FormatError(f"{system.name.lower()} requires d={LAYOUTS[system].d}, file has d={d}")
    expected = DATASET_HEADER_SIZE + 8 * n_traj * T * n * d
    if len(raw) != expected:
        raise FormatError(f"dataset size {len(raw)} bytes, header implies {expected}")
    data = np.frombuffer(raw, dtype="<f8", offset=DATASET_HEADER_SIZE).reshape(n_traj, T, n, d)
    header = DatasetHeader(system, n, d, T, n_traj, dt_eff, const, intensity, soft)
    return header, [Trajectory(system, data[i].astype(np.float64), dt_eff) for i in range(n_traj)]


def write_dataset(path, trajectories: list[Trajectory], spec: SystemSpec) -> None:
    atomic_write(path, encode_dataset(trajectories, spec))


def read_dataset(path) -> tuple[DatasetHeader, list[Trajectory]]:
    return decode_dataset(Path(path).read_bytes())


def encode_checkpoint(params: ModelParameters, cfg: TrainingConfig) -> bytes:
    meta = {
        "model": cfg.model.to_dict(),
        "training": cfg.to_dict(),
        "norm_stats": params.norm.to_dict(),
        "seed": cfg.seed,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(blob)), blob, struct.pack("<I", len(params.tensors))]
    for name, t in params.tensors.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", t.data.ndim))
        parts.append(struct.pack(f"<{t.data.ndim}I", *t.shape))
        parts.append(t.data.astype("<f8", copy=False).tobytes(order="C"))
    return b"".join(parts)


def decode_checkpoint(raw: bytes) -> tuple[ModelParameters, TrainingConfig]:
    if raw[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"not a checkpoint file (magic {raw[:8]!r}, expected {CHECKPOINT_MAGIC!r})")
    try:
        pos = 8
        (jlen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        meta = json.loads(raw[pos : pos + jlen].decode("utf-8"))
        pos += jlen
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        tensors: dict[str, Tensor] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            size = int(np.prod(dims)) if ndim else 1
            data = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(dims)
            pos += 8 * size
            if name in tensors:
                raise FormatError(f"duplicate tensor name {name!r}")
            tensors[name] = Tensor(data, requires_grad=True, name=name)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"corrupt checkpoint: {exc}") from exc
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes after checkpoint tensors")
    cfg = TrainingConfig.from_dict(meta["training"])
    if ModelConfig.from_dict(meta["model"]) != cfg.model:
        raise FormatError("checkpoint model config disagrees with its training config")
    return ModelParameters(tensors, NormStats.from_dict(meta["norm_stats"])), cfg


def save_checkpoint(path, params: ModelParameters, cfg: TrainingConfig) -> None:
    atomic_write(path, encode_checkpoint(params, cfg))


def load_checkpoint(path) -> tuple[ModelParameters, TrainingConfig]:
    return decode_checkpoint(Path(path).read_bytes())
