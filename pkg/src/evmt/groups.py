"""Assembly of per-group BC results into one e-value vector.

The symmetry-based procedure is run inside each group of hypotheses at the
target level; the per-group outcomes are turned into e-values

    e_i = n_l * w_i * 1{p_i <= T_l} / (1 + #{j in group l : p_j >= 1 - T_l})

and the pooled vector is fed to the e-value step-up selector at the same
level.  This controls the FDR inside every group (only hypotheses rejected
by their own group's threshold carry nonzero e-values) and, with any of the
weight schemes below, the overall FDR as well.

Weight schemes
--------------
``unit``
    w_i = 1.
``size_adjusted``
    w_i = n / (L n_l), balancing groups of unequal size.
``adaptive``
    Data-dependent weights built from leave-one-out thresholds: with
    B_i = 1 + #{j != i in group l : p_j >= 1 - T_l} and T_{l',j} the group
    threshold recomputed after censoring p_j to min(p_j, 1 - p_j),

        w_i = (n / n_l) * B_i / (B_i + sum_{l' != l} #{j in l' : p_j >= 1 - T_{l',j}}).

The leave-one-out exceedance count of a group is computed in a single scan:
censoring one large p-value to its mirror relaxes the group's count
criterion from (1 + A) / max(R, 1) to A / (R + 1) at thresholds past the
mirror point, so #{j : p_j >= 1 - T_{l,j}} equals the number of p-values at
or above 1 minus the largest candidate satisfying the relaxed criterion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InputError
from .procedures import ThresholdResult, _bc_scan, as_pvalues, ebh_select, fdp_power

__all__ = [
    "GroupPartition",
    "GroupReport",
    "groupwise_bc_thresholds",
    "loo_group_threshold",
    "assemble_weights",
    "group_evalues",
    "run_grouped_ebh",
]

_SCHEMES = {
    "unit": "unit",
    "size": "size_adjusted",
    "size_adjusted": "size_adjusted",
    "adaptive": "adaptive",
}


@dataclass(frozen=True)
class GroupPartition:
    """Disjoint cover of hypothesis indices by integer group codes 0..L-1."""

    labels: np.ndarray
    n_groups: int
    names: Optional[tuple] = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.intp)
        object.__setattr__(self, "labels", labels)
        if labels.ndim != 1 or labels.size == 0:
            raise ConfigurationError("partition labels must form a non-empty 1-d array")
        if self.n_groups < 1:
            raise ConfigurationError("partition needs at least one group")
        if labels.min() < 0 or labels.max() >= self.n_groups:
            raise ConfigurationError("group codes out of range")
        counts = np.bincount(labels, minlength=self.n_groups)
        if np.any(counts == 0):
            raise ConfigurationError("every group must contain at least one hypothesis")
        object.__setattr__(self, "_sizes", counts)

    @classmethod
    def from_labels(cls, labels: Sequence) -> "GroupPartition":
        """Build a partition from arbitrary hashable labels (sorted order)."""
        arr = np.asarray(labels)
        names, codes = np.unique(arr, return_inverse=True)
        return cls(labels=codes, n_groups=len(names), names=tuple(names.tolist()))

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> "GroupPartition":
        """Consecutive blocks of the given sizes."""
        sizes = [int(s) for s in sizes]
        codes = np.repeat(np.arange(len(sizes)), sizes)
        return cls(labels=codes, n_groups=len(sizes))

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def sizes(self) -> np.ndarray:
        return self._sizes

    def indices(self, group: int) -> np.ndarray:
        return np.nonzero(self.labels == group)[0]


def _check_partition(p: np.ndarray, part: GroupPartition) -> None:
    if part.n != p.size:
        raise InputError(
            f"partition covers {part.n} hypotheses, got {p.size} p-values"
        )


def groupwise_bc_thresholds(pvals, part: GroupPartition, alpha: float):
    """BC threshold of each group at level ``alpha``.

    Returns a list of :class:`ThresholdResult`, one per group, whose
    ``rejected`` fields hold global hypothesis indices.
    """
    p = as_pvalues(pvals)
    _check_partition(p, part)
    results = []
    for l in range(part.n_groups):
        idx = part.indices(l)
        scan = _bc_scan(p[idx], alpha)
        rejected = idx[scan.rejected_mask]
        results.append(
            ThresholdResult(scan.threshold, scan.m_at_T, rejected, scan.feasible)
        )
    return results


def loo_group_threshold(pvals, part: GroupPartition, alpha: float, i: int):
    """Group threshold recomputed with p_i censored to min(p_i, 1 - p_i).

    Returns the threshold value, or None when the modified group has no
    feasible threshold.
    """
    p = as_pvalues(pvals)
    _check_partition(p, part)
    if not 0 <= i < p.size:
        raise InputError(f"hypothesis index {i} out of range for n={p.size}")
    idx = part.indices(int(part.labels[i]))
    sub = p[idx].copy()
    local = int(np.nonzero(idx == i)[0][0])
    sub[local] = min(sub[local], 1.0 - sub[local])
    return _bc_scan(sub, alpha).threshold


def _loo_exceed_count(p_group: np.ndarray, alpha: float) -> int:
    """#{j : p_j >= 1 - T_{l,j}} for one group, via the relaxed scan.

    The censored thresholds T_{l,j} can be feasible even when the group's
    base threshold is not, so the count is taken unconditionally.
    """
    scan = _bc_scan(p_group, alpha)
    return int(np.count_nonzero(scan.loo_mask))


def assemble_weights(
    pvals, part: GroupPartition, thresholds, scheme: str, alpha: Optional[float] = None
) -> np.ndarray:
    """E-value weights for the pooled group e-values.

    ``thresholds`` must come from :func:`groupwise_bc_thresholds` on the same
    inputs.  ``scheme`` is one of ``unit``, ``size_adjusted`` (alias
    ``size``) or ``adaptive``; the adaptive scheme additionally needs the
    level ``alpha`` the thresholds were computed at.
    """
    p = as_pvalues(pvals)
    _check_partition(p, part)
    try:
        scheme = _SCHEMES[scheme.lower()]
    except KeyError:
        raise ConfigurationError(f"unknown weight scheme {scheme!r}") from None
    n = p.size
    L = part.n_groups
    w = np.ones(n)
    if scheme == "unit":
        return w
    if scheme == "size_adjusted":
        for l in range(L):
            w[part.indices(l)] = n / (L * part.sizes[l])
        return w

    if alpha is None:
        raise ConfigurationError("adaptive weights need the threshold level alpha")
    exceed = np.zeros(n, dtype=bool)
    counts = np.zeros(L)
    for l in range(L):
        idx = part.indices(l)
        res = thresholds[l]
        if res.feasible:
            # mirror-score comparison, matching the threshold scan's counts
            exceed[idx] = (1.0 - p[idx]) <= res.threshold
        counts[l] = _loo_exceed_count(p[idx], alpha)
    total = counts.sum()
    for l in range(L):
        idx = part.indices(l)
        res = thresholds[l]
        n_exc = int(np.count_nonzero(exceed[idx])) if res.feasible else 0
        b = 1.0 + n_exc - exceed[idx]
        w[idx] = (n / part.sizes[l]) * b / (b + (total - counts[l]))
    return w


@dataclass(frozen=True)
class GroupReport:
    """Outcome of the grouped e-value procedure."""

    alpha: float
    scheme: str
    thresholds: list
    weights: np.ndarray
    evalues: np.ndarray
    rejected: np.ndarray
    per_group_rejected: list
    fdp: Optional[float] = None
    power: Optional[float] = None
    group_fdp: Optional[np.ndarray] = None
    group_power: Optional[np.ndarray] = None


def group_evalues(pvals, part: GroupPartition, thresholds, weights) -> np.ndarray:
    """Weighted per-group e-values, zero outside each group's rejections."""
    p = as_pvalues(pvals)
    _check_partition(p, part)
    e = np.zeros(p.size)
    for l in range(part.n_groups):
        res = thresholds[l]
        if res.feasible:
            e[res.rejected] = part.sizes[l] * np.asarray(weights)[res.rejected] / res.m_at_T
    return e


def run_grouped_ebh(
    pvals,
    part: GroupPartition,
    alpha: float,
    scheme: str = "adaptive",
    truth=None,
) -> GroupReport:
    """Group-wise BC, weight assembly and pooled e-value selection.

    Parameters
    ----------
    pvals : array_like
        P-values for all hypotheses.
    part : GroupPartition
        Disjoint grouping of the hypotheses.
    alpha : float
        Target FDR level, used both for the per-group thresholds and for the
        final e-value selection.
    scheme : str
        Weight scheme (``unit``, ``size_adjusted``/``size``, ``adaptive``).
    truth : array_like of {0, 1}, optional
        Non-null indicators; when given, overall and per-group FDP/power are
        included in the report.
    """
    p = as_pvalues(pvals)
    thresholds = groupwise_bc_thresholds(p, part, alpha)
    weights = assemble_weights(p, part, thresholds, scheme, alpha=alpha)
    evalues = group_evalues(p, part, thresholds, weights)
    rejected = ebh_select(evalues, alpha) if evalues.any() else np.empty(0, dtype=np.intp)
    per_group = [res.rejected for res in thresholds]

    fdp = power = group_fdp = group_power = None
    if truth is not None:
        theta = np.asarray(truth)
        fdp, power = fdp_power(rejected, theta)
        group_fdp = np.zeros(part.n_groups)
        group_power = np.zeros(part.n_groups)
        rej_mask = np.zeros(p.size, dtype=bool)
        rej_mask[rejected] = True
        for l in range(part.n_groups):
            idx = part.indices(l)
            group_fdp[l], group_power[l] = fdp_power(
                np.nonzero(rej_mask[idx])[0], theta[idx]
            )
    return GroupReport(
        alpha=alpha,
        scheme=_SCHEMES[scheme.lower()],
        thresholds=thresholds,
        weights=weights,
        evalues=evalues,
        rejected=rejected,
        per_group_rejected=per_group,
        fdp=fdp,
        power=power,
        group_fdp=group_fdp,
        group_power=group_power,
    )
