"""Typed containers and file I/O for multi-modal volumes, masks, and saliency maps.

The on-disk format ("MMV") is one UTF-8 JSON header line terminated by '\\n',
followed immediately by the raw payload: little-endian IEEE-754 float32,
modality-major, row-major within each modality. Writes round-trip bit-exactly.
All containers are immutable after construction.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MMV_VERSION = 1
KIND_VOLUME = "volume"
KIND_MASK = "mask"
KIND_SALIENCY = "saliency"
_KINDS = (KIND_VOLUME, KIND_MASK, KIND_SALIENCY)


class MMVFormatError(ValueError):
    """An MMV file failed to parse or violates a format invariant."""


def _freeze(data, modality_names, *, binary=False):
    """Validate and return the canonical read-only float array for a field.

    float32 input stays float32 (the file payload dtype); everything else is
    held as float64. Writing a float64 field quantizes it to f32le on disk.
    """
    names = tuple(str(n) for n in modality_names)
    if not names:
        raise ValueError("at least one modality is required")
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate modality names: {names}")
    arr = np.asarray(data)
    dtype = np.float32 if arr.dtype == np.float32 else np.float64
    arr = np.ascontiguousarray(arr, dtype=dtype)
    if arr.ndim not in (3, 4):
        raise ValueError(
            f"data must have shape (M, H, W) or (M, H, W, D), got {arr.shape}"
        )
    if arr.shape[0] != len(names):
        raise ValueError(
            f"{len(names)} modality names but data has {arr.shape[0]} modalities"
        )
    if min(arr.shape) < 1:
        raise ValueError(f"all dimensions must be positive, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("data contains non-finite values")
    if binary:
        if not np.logical_or(arr == 0.0, arr == 1.0).all():
            raise ValueError("mask values must be 0 or 1")
    arr.setflags(write=False)
    return names, arr


@dataclass(frozen=True, eq=False)
class MultiModalVolume:
    """Dense real-valued image with one channel per modality.

    data has shape (M, H, W) or (M, H, W, D) and is finite float32.
    """

    modality_names: tuple
    data: np.ndarray

    def __post_init__(self):
        names, arr = _freeze(self.data, self.modality_names)
        object.__setattr__(self, "modality_names", names)
        object.__setattr__(self, "data", arr)

    @property
    def n_modalities(self):
        return len(self.modality_names)

    @property
    def dims(self):
        return self.data.shape[1:]

    def with_data(self, data):
        return MultiModalVolume(self.modality_names, data)


@dataclass(frozen=True, eq=False)
class SegmentationMask:
    """Per-modality binary feature-localization field aligned with a volume."""

    modality_names: tuple
    data: np.ndarray

    def __post_init__(self):
        names, arr = _freeze(self.data, self.modality_names, binary=True)
        object.__setattr__(self, "modality_names", names)
        object.__setattr__(self, "data", arr)

    @property
    def n_modalities(self):
        return len(self.modality_names)

    @property
    def dims(self):
        return self.data.shape[1:]

    def as_bool(self):
        return self.data > 0.5


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """Per-modality real importance field aligned with a volume.

    postprocessed=True asserts values already lie in [0, 1].
    """

    modality_names: tuple
    data: np.ndarray
    postprocessed: bool = False

    def __post_init__(self):
        names, arr = _freeze(self.data, self.modality_names)
        if self.postprocessed and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("postprocessed saliency values must lie in [0, 1]")
        object.__setattr__(self, "modality_names", names)
        object.__setattr__(self, "data", arr)

    @property
    def n_modalities(self):
        return len(self.modality_names)

    @property
    def dims(self):
        return self.data.shape[1:]


def _encode_header(kind, modality_names, dims):
    header = {
        "mmv": MMV_VERSION,
        "kind": kind,
        "modalities": list(modality_names),
        "dims": [int(d) for d in dims],
        "dtype": "f32le",
    }
    return json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n"


def _write_mmv(path, kind, modality_names, data):
    payload = np.ascontiguousarray(data, dtype="<f4")
    with open(path, "wb") as fp:
        fp.write(_encode_header(kind, modality_names, data.shape[1:]))
        fp.write(payload.tobytes(order="C"))


def _read_mmv(path, expected_kind=None):
    with open(path, "rb") as fp:
        line = fp.readline()
        payload = fp.read()
    if not line.endswith(b"\n"):
        raise MMVFormatError(f"{path}: missing header line terminator")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MMVFormatError(f"{path}: malformed header: {exc}") from exc
    if not isinstance(header, dict) or header.get("mmv") != MMV_VERSION:
        raise MMVFormatError(f"{path}: not an MMV v{MMV_VERSION} header")
    kind = header.get("kind")
    if kind not in _KINDS:
        raise MMVFormatError(f"{path}: unknown kind {kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise MMVFormatError(f"{path}: expected kind {expected_kind!r}, found {kind!r}")
    if header.get("dtype") != "f32le":
        raise MMVFormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    modalities = header.get("modalities")
    dims = header.get("dims")
    if not isinstance(modalities, list) or not modalities:
        raise MMVFormatError(f"{path}: invalid modality list")
    if (
        not isinstance(dims, list)
        or len(dims) not in (2, 3)
        or any(not isinstance(d, int) or d < 1 for d in dims)
    ):
        raise MMVFormatError(f"{path}: invalid dims {dims!r}")
    expected = 4 * len(modalities) * int(np.prod(dims))
    if len(payload) != expected:
        raise MMVFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(len(modalities), *dims)
    return kind, modalities, data


def write_volume(volume: MultiModalVolume, path):
    """Write a volume in MMV format. Round-trips bit-exactly through read_volume."""
    _write_mmv(path, KIND_VOLUME, volume.modality_names, volume.data)


def read_volume(path) -> MultiModalVolume:
    _, modalities, data = _read_mmv(path, KIND_VOLUME)
    try:
        return MultiModalVolume(tuple(modalities), data)
    except ValueError as exc:
        raise MMVFormatError(f"{path}: {exc}") from exc


def write_mask(mask: SegmentationMask, path):
    _write_mmv(path, KIND_MASK, mask.modality_names, mask.data)


def read_mask(path, broadcast_to=None) -> SegmentationMask:
    """Read a mask; a single-modality file may be broadcast to `broadcast_to` names."""
    _, modalities, data = _read_mmv(path, KIND_MASK)
    if broadcast_to is not None and len(modalities) == 1 and len(broadcast_to) > 1:
        data = np.repeat(data, len(broadcast_to), axis=0)
        modalities = list(broadcast_to)
    try:
        return SegmentationMask(tuple(modalities), data)
    except ValueError as exc:
        raise MMVFormatError(f"{path}: {exc}") from exc


def write_saliency(smap: SaliencyMap, path):
    _write_mmv(path, KIND_SALIENCY, smap.modality_names, smap.data)


def read_saliency(path) -> SaliencyMap:
    _, modalities, data = _read_mmv(path, KIND_SALIENCY)
    try:
        return SaliencyMap(tuple(modalities), data, postprocessed=False)
    except ValueError as exc:
        raise MMVFormatError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class ManifestRecord:
    sample_id: str
    label: int
    volume_path: str
    mask_path: str | None = None
    saliency_paths: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class DatasetManifest:
    """List of samples with class names; paths are resolvable on load."""

    records: tuple
    class_names: tuple

    def __post_init__(self):
        records = tuple(self.records)
        names = tuple(str(c) for c in self.class_names)
        ids = [r.sample_id for r in records]
        if len(set(ids)) != len(ids):
            raise ValueError("sample_ids must be unique")
        for r in records:
            if not 0 <= r.label < len(names):
                raise ValueError(
                    f"{r.sample_id}: label {r.label} out of range for {len(names)} classes"
                )
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "class_names", names)

    def __len__(self):
        return len(self.records)


def save_manifest(manifest: DatasetManifest, path):
    """Write the manifest as JSON; paths under the manifest dir become relative."""
    path = Path(path)
    base = path.parent.resolve()

    def _rel(p):
        if p is None:
            return None
        rp = Path(p).resolve()  # relative record paths are CWD-relative
        try:
            return rp.relative_to(base).as_posix()
        except ValueError:
            return str(rp)

    doc = {
        "class_names": list(manifest.class_names),
        "records": [
            {
                "sample_id": r.sample_id,
                "label": r.label,
                "volume": _rel(r.volume_path),
                "mask": _rel(r.mask_path),
                "saliency": {k: _rel(v) for k, v in sorted(r.saliency_paths.items())},
            }
            for r in manifest.records
        ],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        json.dump(doc, fp, indent=2, sort_keys=True)
        fp.write("\n")


def load_manifest(path) -> DatasetManifest:
    """Load a manifest and resolve every referenced path, failing if one is missing."""
    path = Path(path)
    with open(path, encoding="utf-8") as fp:
        doc = json.load(fp)
    base = path.parent

    def _resolve(p, sample_id):
        if p is None:
            return None
        full = Path(p)
        if not full.is_absolute():
            full = base / full
        if not full.exists():
            raise FileNotFoundError(f"{sample_id}: referenced path {full} does not exist")
        return str(full)

    records = []
    for rec in doc["records"]:
        sid = rec["sample_id"]
        records.append(
            ManifestRecord(
                sample_id=sid,
                label=int(rec["label"]),
                volume_path=_resolve(rec["volume"], sid),
                mask_path=_resolve(rec.get("mask"), sid),
                saliency_paths={
                    k: _resolve(v, sid) for k, v in rec.get("saliency", {}).items()
                },
            )
        )
    return DatasetManifest(tuple(records), tuple(doc["class_names"]))


@dataclass(frozen=True, eq=False)
class LoadedSample:
    record: ManifestRecord
    volume: MultiModalVolume
    mask: SegmentationMask | None


def load_dataset(manifest: DatasetManifest):
    """Load all volumes (and masks, broadcast if single-modality) into memory."""
    samples = []
    for rec in manifest.records:
        try:
            volume = read_volume(rec.volume_path)
            mask = None
            if rec.mask_path is not None:
                mask = read_mask(rec.mask_path, broadcast_to=volume.modality_names)
        except (OSError, MMVFormatError) as exc:
            raise type(exc)(f"{rec.sample_id}: {exc}") from exc
        if mask is not None and mask.data.shape != volume.data.shape:
            raise ValueError(
                f"{rec.sample_id}: mask shape {mask.data.shape} does not match "
                f"volume shape {volume.data.shape}"
            )
        samples.append(LoadedSample(rec, volume, mask))
    return samples
