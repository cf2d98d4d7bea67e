"""Sparsity penalties, including trainable per-weight shrinkage coefficients.

Families (``w`` the weights, ``lam`` the coefficients, all lam > 0)::

    none      0
    l1        xi * sum_j |w_j|
    lq        xi * (sum_j |w_j|**q) ** (1/q),          0 < q <= 2
    weighted  xi * sum_j lam_j * |w_j|                  (lam fixed, not trained)
    mcp       xi * sum_j mcp(w_j; mcp_lam, gamma)
    sws       xi * h(lam) * sum_j |w_j| + psi * |lam|   (one shared lam)
    halo      xi * sum_j h(lam_j) |w_j| + psi * sum_j |lam_j|
    shalo1    xi * sum_g h(lam_g) * sum_{j in g} |w_j| + psi * sum_g |lam_g|
    shalo2    xi * sum_g h(lam_g) * inner_g + psi * sum_g |lam_g|
              inner_g = xi * sum_{j in g} h(mu_j) |w_j| + psi * sum_{j in g} |mu_j|

where h is either ``inv_pow`` h(t) = t**(-k) (default k=2) or ``log_sq``
h(t) = log(|t|)**2, and the minimax-concave penalty is

    standard  mcp(w) = mcp_lam*|w| - w^2/(2*gamma)   for |w| <= gamma*mcp_lam
              gamma*mcp_lam^2/2                       beyond (continuous)
    printed   mcp(w) = mcp_lam*|w| - w^2/gamma        for |w| <= gamma*mcp_lam
              gamma*mcp_lam^2/2                       beyond (legacy form;
              discontinuous at the knee, kept only for fidelity checks)

For ``shalo2`` the inner and outer terms share the same (xi, psi).

Subgradients use sign(0) = 0.  ``penalty_subgrad`` returns ``(dw, dlam)``
where ``dlam`` mirrors the structure of the ``lam`` argument and is ``None``
for kinds without trainable coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

KINDS = ("none", "l1", "lq", "weighted", "mcp", "sws", "halo", "shalo1", "shalo2")
H_KINDS = ("inv_pow", "log_sq")
MCP_FORMS = ("standard", "printed")

#: kinds whose lambda coefficients are updated during training
TRAINABLE_LAMBDA_KINDS = ("sws", "halo", "shalo1", "shalo2")
#: kinds that require a lam argument at evaluation time
LAMBDA_KINDS = ("weighted", "sws", "halo", "shalo1", "shalo2")


@dataclass(frozen=True)
class PenaltyConfig:
    kind: str = "none"
    xi: float = 1.0
    psi: float = 1.0
    gamma: float = 2.0
    mcp_lam: float = 1.0
    mcp_form: str = "standard"
    q: float = 1.0
    h_kind: str = "inv_pow"
    k: int = 2
    group_map: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown penalty kind {self.kind!r}; expected one of {KINDS}")
        if self.xi < 0 or self.psi < 0:
            raise ConfigError(f"xi and psi must be nonnegative, got xi={self.xi}, psi={self.psi}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if not (0.0 < self.q <= 2.0):
            raise ConfigError(f"q must lie in (0, 2], got {self.q}")
        if self.h_kind not in H_KINDS:
            raise ConfigError(f"unknown h_kind {self.h_kind!r}; expected one of {H_KINDS}")
        if self.k < 1:
            raise ConfigError(f"k must be a positive integer, got {self.k}")
        if self.mcp_form not in MCP_FORMS:
            raise ConfigError(f"unknown mcp_form {self.mcp_form!r}; expected one of {MCP_FORMS}")

    def with_(self, **kw) -> "PenaltyConfig":
        return replace(self, **kw)


def h_eval(h_kind: str, k: int, lam):
    """Return (h(lam), h'(lam)) elementwise; lam must be strictly positive."""
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam <= 0):
        raise DomainError("h is defined for strictly positive coefficients")
    if h_kind == "inv_pow":
        h = lam ** (-k)
        dh = -k * lam ** (-k - 1)
    elif h_kind == "log_sq":
        lg = np.log(np.abs(lam))
        h = lg * lg
        dh = 2.0 * lg / lam
    else:
        raise ConfigError(f"unknown h_kind {h_kind!r}")
    return h, dh


def _mcp_1d(a: np.ndarray, lam: float, gamma: float, form: str) -> np.ndarray:
    """Per-coordinate MCP value at magnitudes ``a``."""
    plateau = 0.5 * gamma * lam * lam
    if form == "standard":
        inner = lam * a - a * a / (2.0 * gamma)
    else:  # printed
        inner = lam * a - a * a / gamma
    return np.where(a <= gamma * lam, inner, plateau)


def _mcp_deriv_1d(a: np.ndarray, lam: float, gamma: float, form: str) -> np.ndarray:
    if form == "standard":
        return np.maximum(lam - a / gamma, 0.0)
    return np.where(a <= gamma * lam, lam - 2.0 * a / gamma, 0.0)


def _check_lam(config: PenaltyConfig, lam) -> None:
    if lam is None:
        raise ConfigError(f"kind={config.kind} requires lambda coefficients")


def _check_groups(config: PenaltyConfig, p: int) -> list[np.ndarray]:
    if config.group_map is None:
        raise ConfigError(
            f"kind={config.kind} needs a group_map to evaluate (the trainer "
            "derives one group per penalized layer automatically)"
        )
    groups = [np.asarray(g, dtype=np.intp) for g in config.group_map]
    if any(g.size == 0 for g in groups):
        raise ConfigError("group_map contains an empty group")
    flat = np.concatenate(groups) if groups else np.empty(0, dtype=np.intp)
    if flat.size != p or not np.array_equal(np.sort(flat), np.arange(p)):
        raise ConfigError(
            f"group_map is not a partition of the {p} penalized indices"
        )
    return groups


def penalty_value(config: PenaltyConfig, w, lam=None) -> float:
    """Evaluate the configured penalty on a weight array.

    ``lam`` is required for the weighted/sws/halo/shalo kinds: per-weight for
    ``weighted``/``halo``, a scalar for ``sws``, a per-group vector for
    ``shalo1``, and ``(per_group, per_weight)`` for ``shalo2``.
    """
    w = np.asarray(w, dtype=np.float64)
    a = np.abs(w)
    kind = config.kind
    if kind == "none":
        return 0.0
    if kind == "l1":
        return float(config.xi * a.sum())
    if kind == "lq":
        s = float((a ** config.q).sum())
        return float(config.xi * s ** (1.0 / config.q))
    if kind == "mcp":
        return float(config.xi * _mcp_1d(a, config.mcp_lam, config.gamma, config.mcp_form).sum())
    _check_lam(config, lam)
    if kind == "weighted":
        lam = np.asarray(lam, dtype=np.float64)
        if lam.shape != w.shape:
            raise ShapeError(f"weighted: lam shape {lam.shape} != weight shape {w.shape}")
        return float(config.xi * (lam * a).sum())
    if kind == "sws":
        lam = np.asarray(lam, dtype=np.float64)
        if lam.size != 1:
            raise ShapeError(f"sws: expected a single shared lambda, got shape {lam.shape}")
        lam = float(lam.reshape(()))
        h, _ = h_eval(config.h_kind, config.k, lam)
        return float(config.xi * h * a.sum() + config.psi * abs(lam))
    if kind == "halo":
        lam = np.asarray(lam, dtype=np.float64)
        if lam.shape != w.shape:
            raise ShapeError(f"halo: lam shape {lam.shape} != weight shape {w.shape}")
        h, _ = h_eval(config.h_kind, config.k, lam)
        return float(config.xi * (h * a).sum() + config.psi * np.abs(lam).sum())
    if kind == "shalo1":
        return shalo_value(config, w, lam)
    if kind == "shalo2":
        if not (isinstance(lam, tuple) and len(lam) == 2):
            raise ConfigError("shalo2 expects lam=(per_group, per_weight)")
        return shalo_value(config, w, lam[0], lam[1])
    raise ConfigError(f"unknown penalty kind {kind!r}")


def penalty_subgrad(config: PenaltyConfig, w, lam=None):
    """Subgradient of :func:`penalty_value` w.r.t. (w, lam).

    Returns ``(dw, dlam)``; ``dlam`` is None for kinds with no coefficients
    (none/l1/lq/mcp) and for ``weighted`` (whose coefficients are fixed).
    """
    w = np.asarray(w, dtype=np.float64)
    a = np.abs(w)
    sg = np.sign(w)
    kind = config.kind
    if kind == "none":
        return np.zeros_like(w), None
    if kind == "l1":
        return config.xi * sg, None
    if kind == "lq":
        s = float((a ** config.q).sum())
        if s == 0.0:
            return np.zeros_like(w), None
        with np.errstate(divide="ignore", invalid="ignore"):
            dw = config.xi * s ** (1.0 / config.q - 1.0) * a ** (config.q - 1.0) * sg
        dw = np.where(a == 0.0, 0.0, dw)
        return dw, None
    if kind == "mcp":
        return config.xi * sg * _mcp_deriv_1d(a, config.mcp_lam, config.gamma, config.mcp_form), None
    _check_lam(config, lam)
    if kind == "weighted":
        lam = np.asarray(lam, dtype=np.float64)
        if lam.shape != w.shape:
            raise ShapeError(f"weighted: lam shape {lam.shape} != weight shape {w.shape}")
        return config.xi * lam * sg, None
    if kind == "sws":
        lamv = float(np.asarray(lam, dtype=np.float64).reshape(()))
        h, dh = h_eval(config.h_kind, config.k, lamv)
        dw = config.xi * h * sg
        dlam = config.xi * dh * a.sum() + config.psi * np.sign(lamv)
        return dw, float(dlam)
    if kind == "halo":
        lam = np.asarray(lam, dtype=np.float64)
        if lam.shape != w.shape:
            raise ShapeError(f"halo: lam shape {lam.shape} != weight shape {w.shape}")
        h, dh = h_eval(config.h_kind, config.k, lam)
        dw = config.xi * h * sg
        dlam = config.xi * dh * a + config.psi * np.sign(lam)
        return dw, dlam
    if kind == "shalo1":
        return shalo_subgrad(config, w, lam)[:2]
    if kind == "shalo2":
        if not (isinstance(lam, tuple) and len(lam) == 2):
            raise ConfigError("shalo2 expects lam=(per_group, per_weight)")
        dw, dgroups, dinner = shalo_subgrad(config, w, lam[0], lam[1])
        return dw, (dgroups, dinner)
    raise ConfigError(f"unknown penalty kind {kind!r}")


def shalo_value(config: PenaltyConfig, w, lam_groups, lam_inner=None) -> float:
    """Group-structured variant; ``config.group_map`` partitions the flat
    weight index set.  ``shalo2`` additionally takes per-weight ``lam_inner``.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    groups = _check_groups(config, w.size)
    lam_groups = np.asarray(lam_groups, dtype=np.float64).ravel()
    if lam_groups.size != len(groups):
        raise ShapeError(
            f"expected one lambda per group ({len(groups)}), got {lam_groups.size}"
        )
    hg, _ = h_eval(config.h_kind, config.k, lam_groups)
    a = np.abs(w)
    if config.kind == "shalo1":
        per_group = np.array([a[g].sum() for g in groups])
    else:
        if lam_inner is None:
            raise ConfigError("shalo2 requires per-weight inner lambdas")
        lam_inner = np.asarray(lam_inner, dtype=np.float64).ravel()
        if lam_inner.shape != w.shape:
            raise ShapeError(
                f"shalo2: inner lam shape {lam_inner.shape} != weight shape {w.shape}"
            )
        hi, _ = h_eval(config.h_kind, config.k, lam_inner)
        inner_each = config.xi * hi * a
        per_group = np.array(
            [inner_each[g].sum() + config.psi * np.abs(lam_inner[g]).sum() for g in groups]
        )
    return float(config.xi * (hg * per_group).sum() + config.psi * np.abs(lam_groups).sum())


def shalo_subgrad(config: PenaltyConfig, w, lam_groups, lam_inner=None):
    """Subgradient of :func:`shalo_value`: returns (dw, dlam_groups, dlam_inner)."""
    w = np.asarray(w, dtype=np.float64).ravel()
    groups = _check_groups(config, w.size)
    lam_groups = np.asarray(lam_groups, dtype=np.float64).ravel()
    hg, dhg = h_eval(config.h_kind, config.k, lam_groups)
    a = np.abs(w)
    sg = np.sign(w)
    dw = np.zeros_like(w)
    if config.kind == "shalo1":
        for gi, g in enumerate(groups):
            dw[g] = config.xi * hg[gi] * sg[g]
        per_group = np.array([a[g].sum() for g in groups])
        dlam_groups = config.xi * dhg * per_group + config.psi * np.sign(lam_groups)
        return dw, dlam_groups, None
    if lam_inner is None:
        raise ConfigError("shalo2 requires per-weight inner lambdas")
    lam_inner = np.asarray(lam_inner, dtype=np.float64).ravel()
    hi, dhi = h_eval(config.h_kind, config.k, lam_inner)
    dlam_inner = np.zeros_like(w)
    inner_vals = np.empty(len(groups))
    for gi, g in enumerate(groups):
        inner_vals[gi] = (config.xi * hi[g] * a[g]).sum() + config.psi * np.abs(lam_inner[g]).sum()
        dw[g] = config.xi * hg[gi] * config.xi * hi[g] * sg[g]
        dlam_inner[g] = config.xi * hg[gi] * (
            config.xi * dhi[g] * a[g] + config.psi * np.sign(lam_inner[g])
        )
    dlam_groups = config.xi * dhg * inner_vals + config.psi * np.sign(lam_groups)
    return dw, dlam_groups, dlam_inner
