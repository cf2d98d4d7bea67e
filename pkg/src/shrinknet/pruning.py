"""Magnitude pruning, lottery-style rewinding, and reweighted-Lasso solvers.

Global magnitude pruning keeps a weight iff |w| > tau, where tau is the
ceil(target * p)-th smallest magnitude over the penalized set.  Ties at the
threshold are all pruned, so realized sparsity can overshoot the target.

The mask file layout is::

    u64 LE   flag count
    f64 LE   threshold
    bytes    keep flags, bit-packed big-endian within bytes (numpy packbits)

``lla`` runs the local-linear-approximation scheme for folded concave
penalties: the base iterate solves the uniformly weighted l1 problem (plain
Lasso at level ``xi``) and each further iterate re-solves a weighted Lasso
with per-coordinate weights ``penalty_deriv(|w_prev|)``.  With the pruning
derivative (0 beyond tau, effectively infinite below) one extra iteration
reproduces magnitude pruning followed by a restricted least-squares refit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigError, SolverError
from .models import Model, ModelSpec, build_model
from .optim import OptimConfig, train
from .penalties import PenaltyConfig


@dataclass
class PruneMask:
    keep: np.ndarray          # bool flags over the penalized set, layer order
    threshold: float
    stage: str = "oneshot"

    def __post_init__(self):
        self.keep = np.asarray(self.keep, dtype=bool).ravel()

    def sparsity(self) -> float:
        return float(np.mean(~self.keep)) if self.keep.size else 0.0


def threshold_for_sparsity(magnitudes: np.ndarray, target: float) -> float:
    """Magnitude below-or-at which pruning reaches ``target`` sparsity.

    tau is the ceil(target*p)-th smallest magnitude; target 0 gives tau=0 so
    the strict keep rule |w| > tau keeps every nonzero weight.
    """
    if not 0.0 <= target <= 1.0:
        raise ConfigError(f"sparsity target must lie in [0, 1], got {target}")
    a = np.abs(np.asarray(magnitudes, dtype=np.float64)).ravel()
    if a.size == 0:
        raise ValueError("cannot compute a threshold over zero weights")
    k = int(np.ceil(target * a.size))
    if k == 0:
        return 0.0
    return float(np.partition(a, k - 1)[k - 1])


def mask_from_threshold(magnitudes: np.ndarray, threshold: float,
                        stage: str = "oneshot") -> PruneMask:
    a = np.abs(np.asarray(magnitudes, dtype=np.float64)).ravel()
    return PruneMask(a > threshold, float(threshold), stage)


def global_mask(model: Model, target: float, stage: str = "oneshot") -> PruneMask:
    """Single global threshold over all penalized layers."""
    mags = model.penalized_magnitudes()
    tau = threshold_for_sparsity(mags, target)
    return mask_from_threshold(mags, tau, stage)


def apply_mask(model: Model, mask: PruneMask) -> None:
    """Zero the pruned weights and freeze them for subsequent training."""
    pen = model.penalized_params()
    total = sum(w.size for _, w, _ in pen)
    if mask.keep.size != total:
        raise ValueError(
            f"mask holds {mask.keep.size} flags but the model has {total} penalized weights"
        )
    offset = 0
    for i, w, _ in pen:
        keep = mask.keep[offset:offset + w.size].reshape(w.shape)
        offset += w.size
        lp = model.layers[i]
        lp.frozen = keep if lp.frozen is None else (lp.frozen & keep)
        w.data[~lp.frozen] = 0.0


def sparsity_ratio(model: Model, threshold: float = 0.0) -> float:
    """Fraction of penalized weights with |w| <= threshold (exact zeros by
    default, i.e. after masking)."""
    mags = model.penalized_magnitudes()
    if mags.size == 0:
        return 0.0
    return float(np.mean(mags <= threshold))


def save_mask(path, mask: PruneMask) -> None:
    with open(str(path), "wb") as f:
        f.write(int(mask.keep.size).to_bytes(8, "little"))
        f.write(np.float64(mask.threshold).astype("<f8").tobytes())
        f.write(np.packbits(mask.keep).tobytes())


def load_mask(path) -> PruneMask:
    from .errors import FormatError

    path = str(path)
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16:
        raise FormatError(f"{path}: mask header truncated at offset {len(blob)}")
    count = int.from_bytes(blob[:8], "little")
    threshold = float(np.frombuffer(blob[8:16], dtype="<f8")[0])
    need = (count + 7) // 8
    if len(blob) != 16 + need:
        raise FormatError(
            f"{path}: expected {need} flag bytes after header, found {len(blob) - 16}"
        )
    keep = np.unpackbits(np.frombuffer(blob[16:], dtype=np.uint8))[:count].astype(bool)
    return PruneMask(keep, threshold, stage="loaded")


def two_stage_prune(
    spec: ModelSpec,
    train_set: Dataset,
    cfg: OptimConfig,
    target: float,
    reinit: str = "lottery",
    test_set: Dataset | None = None,
    report_threshold: float = 0.0,
):
    """Dense train -> global prune -> masked retrain.

    ``reinit="lottery"`` rewinds surviving weights to their initial values;
    ``reinit="random"`` redraws them (build seed = cfg.seed + 1).  Both stages
    use the same epoch budget from ``cfg``.

    Returns (model, mask, stage1_record, stage2_record).
    """
    if reinit not in ("lottery", "random"):
        raise ConfigError(f"reinit must be 'lottery' or 'random', got {reinit!r}")
    model = build_model(spec, seed=cfg.seed)
    init_state = [t.data.copy() for t in model.parameters()]
    _, rec1 = train(model, train_set, PenaltyConfig(kind="none"), cfg,
                    test_set=test_set, report_threshold=report_threshold)
    mask = global_mask(model, target, stage=reinit)
    if reinit == "lottery":
        for t, init in zip(model.parameters(), init_state):
            t.data[...] = init
    else:
        model = build_model(spec, seed=cfg.seed + 1)
    apply_mask(model, mask)
    _, rec2 = train(model, train_set, PenaltyConfig(kind="none"), cfg,
                    test_set=test_set, report_threshold=report_threshold)
    return model, mask, rec1, rec2


# ---------------------------------------------------------------------------
# weighted Lasso / LLA on linear least squares
# ---------------------------------------------------------------------------


def _soft(z: float, t: float) -> float:
    if t == np.inf:
        return 0.0
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def weighted_lasso_cd(
    x: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    w0: np.ndarray | None = None,
    tol: float = 1e-8,
    max_sweeps: int = 10_000,
) -> np.ndarray:
    """Cyclic coordinate descent for 0.5*||y - Xw||^2 + sum_j weights_j |w_j|.

    Coordinates with infinite weight are pinned at zero.  Converges when no
    coordinate moves more than ``tol`` in a sweep.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = x.shape
    weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), (p,))
    if np.any(weights < 0):
        raise ValueError("penalty weights must be nonnegative")
    col_sq = np.einsum("ij,ij->j", x, x)
    w = np.zeros(p) if w0 is None else np.asarray(w0, dtype=np.float64).copy()
    w[np.isinf(weights)] = 0.0
    r = y - x @ w
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            old = w[j]
            if np.isinf(weights[j]):
                new = 0.0
            else:
                z = x[:, j] @ r + col_sq[j] * old
                new = _soft(z, weights[j]) / col_sq[j]
            if new != old:
                w[j] = new
                r += x[:, j] * (old - new)
                delta = max(delta, abs(new - old))
        if delta <= tol:
            return w
    grad = x.T @ r
    finite = ~np.isinf(weights)
    viol = np.where(
        w != 0.0,
        np.abs(grad - np.where(finite, weights, 0.0) * np.sign(w)),
        np.maximum(np.abs(grad) - np.where(finite, weights, np.inf), 0.0),
    )
    raise SolverError(
        f"coordinate descent did not reach tol={tol} within {max_sweeps} sweeps "
        f"(max stationarity violation {np.nanmax(viol[finite]):.3e})"
    )


def lasso_cd(x: np.ndarray, y: np.ndarray, alpha: float, **kw) -> np.ndarray:
    """Plain Lasso: uniform weight ``alpha`` on every coordinate."""
    return weighted_lasso_cd(x, y, np.full(x.shape[1], float(alpha)), **kw)


def lla(
    x: np.ndarray,
    y: np.ndarray,
    penalty_deriv,
    iterations: int,
    xi: float,
    tol: float = 1e-8,
) -> list[np.ndarray]:
    """Local linear approximation for a folded concave penalty.

    Returns the iterates [w_0, ..., w_iterations]: w_0 is the plain Lasso
    solution at level ``xi``; each following iterate solves the weighted
    Lasso with weights ``penalty_deriv(|w_prev|)`` (elementwise, nonnegative,
    np.inf pins a coordinate at zero).
    """
    x = np.asarray(x, dtype=np.float64)
    if iterations < 0:
        raise ValueError(f"iterations must be >= 0, got {iterations}")
    if np.linalg.matrix_rank(x) < min(x.shape):
        raise SolverError("design matrix is rank deficient")
    iterates = [lasso_cd(x, y, xi, tol=tol)]
    for _ in range(iterations):
        weights = np.asarray(penalty_deriv(np.abs(iterates[-1])), dtype=np.float64)
        warm = np.where(np.isinf(weights), 0.0, iterates[-1])
        iterates.append(weighted_lasso_cd(x, y, weights, w0=warm, tol=tol))
    return iterates


def pruning_deriv(tau: float):
    """Weight rule that frees kept coordinates and pins pruned ones."""
    return lambda a: np.where(a > tau, 0.0, np.inf)


def mcp_deriv(mcp_lam: float, gamma: float, xi: float = 1.0):
    """Derivative of the (standard-form) minimax concave penalty."""
    return lambda a: xi * np.maximum(mcp_lam - a / gamma, 0.0)


def threshold_refit(x: np.ndarray, y: np.ndarray, xi: float, target: float):
    """Two-stage path: Lasso, global magnitude threshold, restricted
    least-squares refit on the survivors.

    Returns (w_refit, mask).
    """
    w = lasso_cd(x, y, xi)
    tau = threshold_for_sparsity(np.abs(w), target)
    keep = np.abs(w) > tau
    w_out = np.zeros_like(w)
    if keep.any():
        sol, *_ = np.linalg.lstsq(x[:, keep], y, rcond=None)
        w_out[keep] = sol
    return w_out, PruneMask(keep, tau, stage="refit")
