"""Modality-coalition ablation and the exact Shapley modality-importance engine.

Coalition values come from a prediction oracle's accuracy over a dataset with
the complementary modalities ablated. With M modalities there are 2^M
coalitions; each is evaluated once and reused for every player's marginals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .oracle import PredictionCache, _iter_samples, predict_all
from .tensorio import MultiModalVolume

MAX_EXACT_MODALITIES = 12


@dataclass(frozen=True)
class Coalition:
    """Canonically sorted subset of modality indices; empty and full are valid."""

    members: tuple

    def __post_init__(self):
        members = tuple(sorted(int(m) for m in self.members))
        if any(m < 0 for m in members):
            raise ValueError(f"negative modality index in {members}")
        if len(set(members)) != len(members):
            raise ValueError(f"duplicate modality index in {members}")
        object.__setattr__(self, "members", members)

    @classmethod
    def full(cls, n_modalities):
        return cls(tuple(range(n_modalities)))

    @classmethod
    def empty(cls):
        return cls(())

    @classmethod
    def from_mask(cls, mask, n_modalities):
        return cls(tuple(m for m in range(n_modalities) if mask >> m & 1))

    def __contains__(self, m):
        return m in self.members

    def __len__(self):
        return len(self.members)

    @property
    def signature(self):
        return "+".join(str(m) for m in self.members)


class AblationVariant(Enum):
    ZERO_WHOLE_MODALITY = "zero"
    NONLESION_SAMPLE_WHOLE_MODALITY = "nonlesion"
    ZERO_FEATURE_REGION = "feature"


@dataclass(frozen=True)
class AblationPolicy:
    """How excluded modalities are replaced; the seed only feeds the sampler."""

    variant: AblationVariant
    rng_seed: int = 0

    @property
    def needs_mask(self):
        return self.variant in (
            AblationVariant.NONLESION_SAMPLE_WHOLE_MODALITY,
            AblationVariant.ZERO_FEATURE_REGION,
        )

    @property
    def signature(self):
        if self.variant is AblationVariant.NONLESION_SAMPLE_WHOLE_MODALITY:
            return f"{self.variant.value}:seed={self.rng_seed}"
        return self.variant.value

    @property
    def mi_variant(self):
        """Importance tag: 'feat' when only the feature region is ablated."""
        return "feat" if self.variant is AblationVariant.ZERO_FEATURE_REGION else "mod"


def apply_ablation(volume, keep: Coalition, policy: AblationPolicy, mask=None):
    """Return a volume with every modality outside `keep` ablated.

    Zero policies are idempotent; the sampling policy draws i.i.d. with
    replacement from the non-lesion pool of the same modality, seeded, so the
    result is a pure function of its arguments.
    """
    if policy.needs_mask and mask is None:
        raise ValueError(f"policy {policy.variant.value!r} requires a mask")
    if not policy.needs_mask and mask is not None:
        mask = None
    if any(m >= volume.n_modalities for m in keep.members):
        raise ValueError(
            f"coalition {keep.members} exceeds {volume.n_modalities} modalities"
        )
    if mask is not None and mask.data.shape != volume.data.shape:
        raise ValueError("mask shape does not match volume shape")

    ablated = set(range(volume.n_modalities)) - set(keep.members)
    if not ablated:
        return volume
    data = volume.data.copy()
    rng = np.random.default_rng(policy.rng_seed)
    for m in sorted(ablated):
        if policy.variant is AblationVariant.ZERO_WHOLE_MODALITY:
            data[m] = 0.0
        elif policy.variant is AblationVariant.ZERO_FEATURE_REGION:
            data[m][mask.data[m] > 0.5] = 0.0
        else:
            pool = volume.data[m][mask.data[m] <= 0.5]
            if pool.size == 0:
                raise ValueError(
                    f"modality {m}: non-lesion sampling pool is empty "
                    "(mask covers the whole modality)"
                )
            draws = rng.integers(0, pool.size, size=data[m].shape)
            data[m] = pool[draws]
    return MultiModalVolume(volume.modality_names, data)


def coalition_performance(data, oracle, keep: Coalition, policy, cache=None):
    """Oracle accuracy with each sample ablated down to the kept coalition."""
    samples = _iter_samples(data)
    if not samples:
        raise ValueError("empty dataset")
    pending = []
    probs_by_id = {}
    for s in samples:
        if cache is not None:
            hit = cache.get(s.record.sample_id, keep.signature, policy.signature)
            if hit is not None:
                probs_by_id[s.record.sample_id] = hit
                continue
        pending.append(s)
    if pending:
        ablated = [
            type(s)(s.record, apply_ablation(s.volume, keep, policy, s.mask), s.mask)
            for s in pending
        ]
        fresh = predict_all(ablated, oracle)
        for sid, probs in fresh.items():
            probs_by_id[sid] = probs
            if cache is not None:
                cache.put(sid, keep.signature, policy.signature, probs)
    hits = sum(
        1 for s in samples if probs_by_id[s.record.sample_id].argmax == s.record.label
    )
    return hits / len(samples)


def exact_shapley(values, n_players):
    """Exact Shapley vector from a full coalition-value table.

    `values[mask]` is v(c) for the coalition whose bitmask is `mask`
    (bit m set = player m present); the table has 2^n entries.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (1 << n_players,):
        raise ValueError(
            f"need {1 << n_players} coalition values, got {values.shape}"
        )
    # weight by coalition size: |c|! (n-|c|-1)! / n!
    weight = np.array(
        [
            math.factorial(s) * math.factorial(n_players - s - 1)
            / math.factorial(n_players)
            for s in range(n_players)
        ]
    )
    phi = np.zeros(n_players)
    for mask in range(1 << n_players):
        size = int(mask).bit_count()
        for m in range(n_players):
            if mask >> m & 1:
                continue
            phi[m] += weight[size] * (values[mask | (1 << m)] - values[mask])
    return phi


@dataclass(frozen=True)
class ModalityImportance:
    """Shapley importance per modality plus its [0,1]-normalized form."""

    phi: tuple
    normalized: tuple
    variant: str
    modality_names: tuple = ()

    @classmethod
    def from_phi(cls, phi, variant, modality_names=()):
        phi = tuple(float(v) for v in phi)
        return cls(phi, tuple(normalize_mi(phi).tolist()), variant, tuple(modality_names))


def normalize_mi(phi):
    """Clamp negatives to zero, then divide by the max; all-nonpositive -> zeros."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 1 or not np.isfinite(phi).all():
        raise ValueError("phi must be a finite vector")
    clamped = np.maximum(phi, 0.0)
    top = clamped.max() if clamped.size else 0.0
    if top <= 0.0:
        return np.zeros_like(clamped)
    return clamped / top


def shapley_mi(data, oracle, policy, cache=None) -> ModalityImportance:
    """Ground-truth modality importance by exact coalition enumeration.

    Every coalition value is computed once (optionally through a prediction
    cache) and shared across all modalities' marginal contributions.
    """
    samples = _iter_samples(data)
    if not samples:
        raise ValueError("empty dataset")
    n = samples[0].volume.n_modalities
    if n > MAX_EXACT_MODALITIES:
        raise ValueError(
            f"{n} modalities would need {1 << n} coalition evaluations; "
            f"exact enumeration is capped at {MAX_EXACT_MODALITIES}"
        )
    if cache is None:
        cache = PredictionCache()
    values = np.empty(1 << n)
    for mask in range(1 << n):
        keep = Coalition.from_mask(mask, n)
        values[mask] = coalition_performance(samples, oracle, keep, policy, cache)
    phi = exact_shapley(values, n)
    return ModalityImportance.from_phi(
        phi, policy.mi_variant, samples[0].volume.modality_names
    )
