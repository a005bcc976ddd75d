"""Shared test fixtures: analytic oracles and independent reference
implementations (brute force / closed form) that the library code never uses.
"""

import itertools
import math

import numpy as np

from mmsaliency.oracle import ClassProbabilities
from mmsaliency.tensorio import LoadedSample, ManifestRecord, MultiModalVolume


class FunctionOracle:
    """Two-class oracle with p(class0) = fn(data), fn expected to stay in [0,1]."""

    def __init__(self, fn):
        self.fn = fn

    def predict(self, volume):
        p = float(np.clip(self.fn(volume.data), 0.0, 1.0))
        return ClassProbabilities((p, 1.0 - p))


class FixedOracle:
    def __init__(self, probs):
        self.probs = ClassProbabilities(tuple(probs))

    def predict(self, volume):
        return self.probs


def make_volume(rng, n_modalities=2, dims=(4, 4), names=None, low=0.0, high=1.0):
    data = rng.uniform(low, high, size=(n_modalities, *dims))
    if names is None:
        names = tuple(f"mod{i}" for i in range(n_modalities))
    return MultiModalVolume(names, data)


def make_sample(sample_id, volume, mask=None, label=0):
    record = ManifestRecord(sample_id, label, volume_path=f"{sample_id}.mmv")
    return LoadedSample(record, volume, mask)


def permutation_shapley(values_by_mask, n):
    """Average marginal contribution over all n! player orderings."""
    phi = np.zeros(n)
    for perm in itertools.permutations(range(n)):
        mask = 0
        prev = values_by_mask[0]
        for player in perm:
            mask |= 1 << player
            cur = values_by_mask[mask]
            phi[player] += cur - prev
            prev = cur
    return phi / math.factorial(n)


def subset_shapley(value_fn, n):
    """Direct subset-enumeration Shapley; value_fn takes a bitmask."""
    phi = np.zeros(n)
    for k in range(n):
        for mask in range(1 << n):
            if mask >> k & 1:
                continue
            size = bin(mask).count("1")
            w = (
                math.factorial(size)
                * math.factorial(n - size - 1)
                / math.factorial(n)
            )
            phi[k] += w * (value_fn(mask | (1 << k)) - value_fn(mask))
    return phi


def brute_tau_b(a, b):
    """Pair-counting Kendall tau-b with the zero-denominator -> 0 convention."""
    n = len(a)
    conc = disc = ties_a = ties_b = 0
    for i in range(n):
        for j in range(i + 1, n):
            da = int(a[i] > a[j]) - int(a[i] < a[j])
            db = int(b[i] > b[j]) - int(b[i] < b[j])
            if da != 0 and db != 0:
                if da == db:
                    conc += 1
                else:
                    disc += 1
            elif da == 0 and db != 0:
                ties_a += 1
            elif db == 0 and da != 0:
                ties_b += 1
    denom = math.sqrt((conc + disc + ties_a) * (conc + disc + ties_b))
    if denom == 0:
        return 0.0
    return (conc - disc) / denom


def circularity_reference(component):
    """Set-based circularity: 4*pi*A/P^2 with P counted pixel by pixel."""
    ys, xs = np.nonzero(component)
    points = set(zip(ys.tolist(), xs.tolist()))
    perimeter = 0
    for y, x in points:
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            if (y + dy, x + dx) not in points:
                perimeter += 1
                break
    return 4.0 * math.pi * len(points) / perimeter**2


def chi2_sf_reference(x, df):
    """Chi-square upper tail from closed forms (no gamma-function library).

    Even df uses the exact finite Poisson series; odd df uses erfc plus the
    survival-function recurrence S(x; v+2) = S(x; v) + (x/2)^(v/2) e^(-x/2) / Gamma(v/2+1).
    """
    if df % 2 == 0:
        half = df // 2
        term = 1.0
        total = 1.0
        for j in range(1, half):
            term *= (x / 2.0) / j
            total += term
        return math.exp(-x / 2.0) * total
    s = math.erfc(math.sqrt(x / 2.0))
    v = 1
    while v < df:
        s += (x / 2.0) ** (v / 2.0) * math.exp(-x / 2.0 - math.lgamma(v / 2.0 + 1.0))
        v += 2
    return s


def percentile_clamp_reference(values, q):
    """Linear-interpolation percentile by explicit sort, then clamp above it."""
    flat = sorted(float(v) for v in np.asarray(values).ravel())
    n = len(flat)
    pos = (q / 100.0) * (n - 1)
    lo = int(math.floor(pos))
    hi = int(math.ceil(pos))
    pct = flat[lo] + (pos - lo) * (flat[hi] - flat[lo])
    return np.minimum(np.asarray(values, dtype=float), pct), pct
