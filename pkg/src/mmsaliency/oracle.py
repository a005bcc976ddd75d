"""Black-box prediction oracles: the contract, a reference shape classifier,
an external batch-command adapter, and a CSV-backed prediction cache.

The reference classifier grades a combined image by the circularity of its
largest thresholded component, so the whole attribution pipeline is testable
without any trained model. Real models plug in through the batch protocol.
"""

from __future__ import annotations

import csv
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
from scipy import ndimage

from .tensorio import (
    DatasetManifest,
    ManifestRecord,
    MultiModalVolume,
    load_dataset,
    save_manifest,
    write_volume,
)

PROB_TOL = 1e-6


@dataclass(frozen=True)
class ClassProbabilities:
    """Probability simplex over classes; each value in [0,1], summing to 1."""

    probs: tuple

    def __post_init__(self):
        p = tuple(float(v) for v in self.probs)
        if len(p) < 2:
            raise ValueError("need at least two classes")
        if any(v < -PROB_TOL or v > 1 + PROB_TOL for v in p):
            raise ValueError(f"probabilities out of [0,1]: {p}")
        if abs(sum(p) - 1.0) > PROB_TOL:
            raise ValueError(f"probabilities sum to {sum(p)}, not 1")
        object.__setattr__(self, "probs", p)

    @property
    def argmax(self):
        # ties break toward the lower class index
        return int(np.argmax(self.probs))


@runtime_checkable
class PredictionOracle(Protocol):
    def predict(self, volume: MultiModalVolume) -> ClassProbabilities: ...


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def largest_component(foreground):
    """Largest 4-connected (2D) / 6-connected (3D) component of a boolean field."""
    labels, n = ndimage.label(foreground)
    if n == 0:
        return None
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == sizes.argmax()


def boundary_count(component):
    """Number of foreground pixels with at least one axis-neighbor outside.

    Positions beyond the array edge count as background.
    """
    padded = np.pad(component, 1, mode="constant", constant_values=False)
    on_boundary = np.zeros_like(component, dtype=bool)
    inner = tuple(slice(1, -1) for _ in range(component.ndim))
    for axis in range(component.ndim):
        for shift in (-1, 1):
            neighbor = np.roll(padded, shift, axis=axis)[inner]
            on_boundary |= component & ~neighbor
    return int(np.count_nonzero(on_boundary))


def circularity(component):
    """4*pi*A/P^2 in 2D; the sphericity analog pi^(1/3)*(6V)^(2/3)/S in 3D.

    A/V is the pixel/voxel count, P/S the boundary-pixel count.
    """
    area = int(np.count_nonzero(component))
    if area == 0:
        raise ValueError("empty component")
    perim = boundary_count(component)
    if component.ndim == 2:
        return 4.0 * np.pi * area / perim**2
    return np.pi ** (1.0 / 3.0) * (6.0 * area) ** (2.0 / 3.0) / perim


@dataclass(frozen=True)
class ShapeRuleClassifier:
    """Deterministic two-class (round vs. irregular) shape-based classifier.

    Combines modalities with fixed weights, thresholds, keeps the largest
    connected component, and maps its circularity through a logistic with
    the given cutoff and temperature. Class 0 is the round class.
    """

    modality_weights: tuple
    intensity_threshold: float = 0.5
    circularity_cutoff: float = 0.7
    softness: float = 0.1

    def __post_init__(self):
        w = tuple(float(v) for v in self.modality_weights)
        if not w or any(not np.isfinite(v) or v < 0 for v in w):
            raise ValueError(f"weights must be finite and nonnegative: {w}")
        if sum(w) <= 0:
            raise ValueError("weights must not all be zero")
        if not 0 < self.intensity_threshold < 1:
            raise ValueError("intensity_threshold must lie in (0,1)")
        if not 0 < self.circularity_cutoff < 1:
            raise ValueError("circularity_cutoff must lie in (0,1)")
        if not self.softness > 0:
            raise ValueError("softness must be positive")
        object.__setattr__(self, "modality_weights", w)

    def predict(self, volume: MultiModalVolume) -> ClassProbabilities:
        return predict_shape_rule(self, volume)


def predict_shape_rule(cfg: ShapeRuleClassifier, volume: MultiModalVolume):
    """Apply the shape rule; empty foreground yields uniform probabilities.

    The uniform output is a documented degenerate case, not an error:
    modality ablation legitimately empties the foreground.
    """
    w = np.asarray(cfg.modality_weights, dtype=np.float64)
    if len(w) != volume.n_modalities:
        raise ValueError(
            f"classifier has {len(w)} weights but volume has "
            f"{volume.n_modalities} modalities"
        )
    combined = np.tensordot(w, volume.data.astype(np.float64), axes=(0, 0)) / w.sum()
    component = largest_component(combined > cfg.intensity_threshold)
    if component is None:
        return ClassProbabilities((0.5, 0.5))
    c = circularity(component)
    p_round = float(_sigmoid((c - cfg.circularity_cutoff) / cfg.softness))
    return ClassProbabilities((p_round, 1.0 - p_round))


def _iter_samples(data):
    """Accept a DatasetManifest or a pre-loaded sample list."""
    if isinstance(data, DatasetManifest):
        data = load_dataset(data)
    return list(data)


def accuracy(data, oracle) -> float:
    """Fraction of samples whose argmax prediction equals the label.

    Argmax ties break toward the lower class index.
    """
    samples = _iter_samples(data)
    if not samples:
        raise ValueError("empty dataset")
    preds = predict_all(samples, oracle)
    hits = sum(
        1 for s in samples if preds[s.record.sample_id].argmax == s.record.label
    )
    return hits / len(samples)


def predict_all(samples, oracle):
    """Predict every sample, using one batch invocation when supported."""
    batch = getattr(oracle, "predict_batch", None)
    if batch is not None:
        return batch([(s.record.sample_id, s.volume) for s in samples])
    out = {}
    for s in samples:
        try:
            out[s.record.sample_id] = oracle.predict(s.volume)
        except OSError as exc:
            raise OSError(f"{s.record.sample_id}: {exc}") from exc
    return out


class PredictionCache:
    """Map from (sample_id, coalition signature, policy signature) to probabilities.

    For the built-in classifier, cache hits are bit-identical to recomputation;
    the CSV backing stores probabilities with full round-trip precision.
    """

    def __init__(self):
        self._entries = {}

    def __len__(self):
        return len(self._entries)

    def get(self, sample_id, coalition_sig, policy_sig):
        return self._entries.get((sample_id, coalition_sig, policy_sig))

    def put(self, sample_id, coalition_sig, policy_sig, probs: ClassProbabilities):
        self._entries[(sample_id, coalition_sig, policy_sig)] = probs

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fp:
            writer = csv.writer(fp, lineterminator="\n")
            writer.writerow(["sample_id", "coalition", "policy", "probs"])
            for (sid, coal, pol), cp in sorted(self._entries.items()):
                writer.writerow([sid, coal, pol, " ".join(repr(v) for v in cp.probs)])

    @classmethod
    def load(cls, path):
        cache = cls()
        with open(path, encoding="utf-8", newline="") as fp:
            reader = csv.reader(fp)
            header = next(reader)
            if header != ["sample_id", "coalition", "policy", "probs"]:
                raise ValueError(f"{path}: unexpected cache header {header}")
            for sid, coal, pol, probs in reader:
                cache.put(
                    sid, coal, pol,
                    ClassProbabilities(tuple(float(v) for v in probs.split())),
                )
        return cache


class ExternalCommandOracle:
    """Adapter for an external scorer: `<command> {input_dir} {output_csv}`.

    Each batch call writes the volumes plus a manifest.json to a fresh input
    directory, invokes the command once, and parses the output CSV
    (`sample_id,p0,p1[,...]`, one row per sample).
    """

    def __init__(self, command_template, workdir=None):
        if "{input_dir}" not in command_template or "{output_csv}" not in command_template:
            raise ValueError(
                "command template must contain {input_dir} and {output_csv}"
            )
        self.command_template = command_template
        self.workdir = workdir

    def predict(self, volume: MultiModalVolume) -> ClassProbabilities:
        return self.predict_batch([("sample", volume)])["sample"]

    def predict_batch(self, items):
        with tempfile.TemporaryDirectory(dir=self.workdir) as tmp:
            tmp = Path(tmp)
            input_dir = tmp / "input"
            input_dir.mkdir()
            records = []
            for sample_id, volume in items:
                vol_path = input_dir / f"{sample_id}.mmv"
                write_volume(volume, vol_path)
                records.append(
                    ManifestRecord(sample_id, 0, str(vol_path))
                )
            manifest = DatasetManifest(tuple(records), ("class0", "class1"))
            save_manifest(manifest, input_dir / "manifest.json")
            output_csv = tmp / "predictions.csv"
            cmd = [
                part.format(input_dir=str(input_dir), output_csv=str(output_csv))
                for part in shlex.split(self.command_template)
            ]
            proc = subprocess.run(cmd, capture_output=True, text=True)
            if proc.returncode != 0:
                raise RuntimeError(
                    f"external oracle exited with {proc.returncode}: "
                    f"{proc.stderr.strip() or proc.stdout.strip()}"
                )
            return _parse_prediction_csv(output_csv, [sid for sid, _ in items])


def _parse_prediction_csv(path, expected_ids):
    try:
        fp = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise RuntimeError(f"external oracle produced no output CSV: {exc}") from exc
    with fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if not header or header[0] != "sample_id" or len(header) < 3:
            raise RuntimeError(f"{path}: expected header sample_id,p0,p1[,...]")
        rows = {}
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise RuntimeError(f"{path}: ragged row {row}")
            try:
                probs = ClassProbabilities(tuple(float(v) for v in row[1:]))
            except ValueError as exc:
                raise RuntimeError(f"{path}: row {row[0]}: {exc}") from exc
            rows[row[0]] = probs
    missing = [sid for sid in expected_ids if sid not in rows]
    if missing:
        raise RuntimeError(f"{path}: missing predictions for {missing}")
    return {sid: rows[sid] for sid in expected_ids}


def external_batch_predict(manifest, command_template, transform=None, workdir=None):
    """Score every manifest sample with an external command, returning a cache.

    `transform(record, volume) -> volume` lets callers ablate inputs before
    scoring; the cache is keyed with an empty coalition/policy signature when
    no transform is given.
    """
    samples = _iter_samples(manifest)
    oracle = ExternalCommandOracle(command_template, workdir=workdir)
    items = []
    for s in samples:
        vol = s.volume if transform is None else transform(s.record, s.volume)
        items.append((s.record.sample_id, vol))
    preds = oracle.predict_batch(items)
    cache = PredictionCache()
    for sid, probs in preds.items():
        cache.put(sid, "", "", probs)
    return cache


class TimedOracle:
    """Wrap an oracle, counting calls and accumulating prediction wall time."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0
        self.seconds = 0.0

    def predict(self, volume):
        t0 = time.perf_counter()
        out = self.inner.predict(volume)
        self.seconds += time.perf_counter() - t0
        self.calls += 1
        return out
