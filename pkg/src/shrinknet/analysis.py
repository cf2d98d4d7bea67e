"""Sparsity and representation analyses over trained models and run records.

All metrics are plain functions over arrays; the CLI report path writes them
as CSV files whose first line names the metric and the config hash, e.g.::

    # metric=layer_sparsity config_hash=1a2b3c4d5e6f
    layer,fraction,size
    0,0.91,235200
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np

from .models import Model
from .penalties import h_eval


def _average_ranks(v: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    v = np.asarray(v, dtype=np.float64).ravel()
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    ranks = np.empty(v.size)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    """Rank correlation with average-rank tie handling."""
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("rank correlation needs at least two points")
    ra, rb = _average_ranks(a), _average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra @ ra) * (rb @ rb))
    if denom == 0.0:
        return 0.0
    return float((ra @ rb) / denom)


def monotonic_trend(lam: np.ndarray, magnitudes: np.ndarray,
                    sample: int = 10_000, seed: int = 0) -> float:
    """Spearman correlation between coefficients and weight magnitudes,
    subsampled without replacement when the arrays exceed ``sample``."""
    lam = np.asarray(lam).ravel()
    magnitudes = np.asarray(magnitudes).ravel()
    if lam.size != magnitudes.size:
        raise ValueError(f"length mismatch: {lam.size} vs {magnitudes.size}")
    if sample and lam.size > sample:
        idx = np.random.default_rng(seed).choice(lam.size, size=sample, replace=False)
        lam, magnitudes = lam[idx], magnitudes[idx]
    return spearman(lam, magnitudes)


def monotonic_trend_both(lam, magnitudes, h_kind: str = "inv_pow", k: int = 2,
                         sample: int = 10_000, seed: int = 0) -> dict:
    """Both pairings: lam vs |w| and h(lam) vs |w|."""
    h, _ = h_eval(h_kind, k, np.asarray(lam).ravel())
    return {
        "spearman_lambda": monotonic_trend(lam, magnitudes, sample, seed),
        "spearman_h": monotonic_trend(h, magnitudes, sample, seed),
    }


def layer_sparsity_profile(model: Model, threshold: float = 0.0):
    """Per-penalized-layer fraction of |w| <= threshold.

    Returns (layer_indices, fractions, sizes); the size-weighted mean of the
    fractions equals the global sparsity ratio at the same threshold.
    """
    rows = []
    for i, w, _ in model.penalized_params():
        mags = np.abs(w.data)
        rows.append((i, float(np.mean(mags <= threshold)), int(w.size)))
    idx, frac, size = zip(*rows)
    return np.array(idx), np.array(frac), np.array(size)


class EnergyProfile(NamedTuple):
    fractions: np.ndarray  # cumulative normalized eigen-energy, descending order
    degenerate: bool       # true when total variance was zero


def feature_energy(activations: np.ndarray) -> EnergyProfile:
    """Cumulative eigen-energy of the feature covariance.

    ``activations`` is (samples, features).  Convolutional (N, C, H, W)
    activations treat channels as the features, with every spatial position
    of every sample contributing a row.  Zero total variance yields an
    all-ones profile and a warning.
    """
    a = np.asarray(activations, dtype=np.float64)
    if a.ndim == 4:
        a = a.transpose(0, 2, 3, 1)
    if a.ndim > 2:
        a = a.reshape(-1, a.shape[-1])
    if a.ndim != 2 or a.shape[0] < 2:
        raise ValueError(f"need a (samples, features) matrix with >= 2 rows, got {a.shape}")
    centered = a - a.mean(axis=0)
    cov = centered.T @ centered / (a.shape[0] - 1)
    eigs = np.linalg.eigvalsh(cov)[::-1]
    eigs = np.maximum(eigs, 0.0)
    total = eigs.sum()
    if total == 0.0:
        warnings.warn("zero total variance; feature energy degenerates to all ones")
        return EnergyProfile(np.ones(a.shape[1]), True)
    return EnergyProfile(np.cumsum(eigs) / total, False)


def components_for(profile: EnergyProfile | np.ndarray, level: float = 0.95) -> int:
    """Smallest component count whose cumulative energy reaches ``level``."""
    fr = profile.fractions if isinstance(profile, EnergyProfile) else np.asarray(profile)
    hit = np.nonzero(fr >= level - 1e-12)[0]
    if hit.size == 0:
        return int(fr.size)
    return int(hit[0]) + 1


def sparsity_overlap(keep_a: np.ndarray, keep_b: np.ndarray) -> float:
    """Jaccard similarity of the two pruned (zero) sets; 1.0 when both are
    empty."""
    keep_a = np.asarray(keep_a, dtype=bool).ravel()
    keep_b = np.asarray(keep_b, dtype=bool).ravel()
    if keep_a.size != keep_b.size:
        raise ValueError(f"mask sizes differ: {keep_a.size} vs {keep_b.size}")
    za, zb = ~keep_a, ~keep_b
    union = np.count_nonzero(za | zb)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(za & zb) / union)


def generalization_gap(epoch_rows: list) -> tuple[np.ndarray, float]:
    """Per-epoch train-minus-test accuracy and the final-epoch gap."""
    gaps = []
    for row in epoch_rows:
        if row.get("train_acc") is None or row.get("test_acc") is None:
            raise ValueError(
                f"epoch {row.get('epoch')} lacks train/test accuracy; the gap "
                "needs a classification run with a test set"
            )
        gaps.append(row["train_acc"] - row["test_acc"])
    if not gaps:
        raise ValueError("no epochs in record")
    return np.array(gaps), float(gaps[-1])


def percentile_threshold(reference_magnitudes: np.ndarray, percentile: float = 95.0) -> float:
    """Nearest-rank percentile of the reference magnitudes."""
    a = np.asarray(reference_magnitudes, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("empty reference")
    if not 0.0 < percentile <= 100.0:
        raise ValueError(f"percentile must lie in (0, 100], got {percentile}")
    k = int(np.ceil(percentile / 100.0 * a.size))
    return float(np.partition(a, k - 1)[k - 1])


def sparsity_during_training(
    snapshot_epochs: np.ndarray,
    snapshot_magnitudes: np.ndarray,
    reference_magnitudes: np.ndarray,
    percentile: float = 95.0,
):
    """Fraction of weights at-or-below the reference percentile threshold,
    per snapshot.  Ties at the threshold count as sub-threshold.

    Returns (epochs, fractions, tau).
    """
    tau = percentile_threshold(reference_magnitudes, percentile)
    snaps = np.atleast_2d(np.asarray(snapshot_magnitudes, dtype=np.float64))
    fractions = np.array([float(np.mean(row <= tau)) for row in snaps])
    return np.asarray(snapshot_epochs), fractions, tau


def write_metric_csv(path, metric: str, config_hash: str,
                     columns: list, rows: list) -> None:
    """Delimited metric output with a leading identification line."""
    lines = [f"# metric={metric} config_hash={config_hash}"]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(
            format(v, ".17g") if isinstance(v, float) else str(v) for v in row
        ))
    with open(str(path), "w") as f:
        f.write("\n".join(lines) + "\n")
