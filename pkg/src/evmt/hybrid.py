"""Weighted aggregation of BH and BC e-values.

Neither the step-up (``bh``) nor the mirror-counting (``bc``) procedure
dominates the other across signal regimes.  This module blends their
e-values,

    e_i = w_bh_i * e_bh_i + w_bc_i * e_bc_i,

and selects with the e-value step-up rule.  Constant weights 0.5/0.5
(``averaged`` mode) are always valid; the ``adaptive`` mode builds
data-dependent weights from leave-one-out thresholds so that the null
e-value budget is preserved while the better-suited base procedure
dominates the blend.

Notation for the leave-one-out quantities (p~ denotes min(p, 1 - p)):

``t_bh_loo[i]``
    Step-up threshold of the fully censored vector (p~_1, ..., p~_n) with
    position i set to 0.
``t_bc_loo[j]``
    Mirror-count threshold with p_j replaced by p~_j.
``t_bc_loo2(j, i)``
    As ``t_bc_loo[j]`` but computed with p_i additionally set to 0
    (j != i); zeroing an entry can only enlarge the threshold.

Adaptive weights (``s_i`` counts j != i with p_j >= 1 - t_bc_loo2(j, i),
``d_i`` counts j != i with p_j >= 1 - T_bc):

    w_bh_i = t_bh_loo[i] / (t_bh_loo[i] + (1 + s_i) / n)
    w_bc_i = ((1 + d_i) / n) / (max_j t_bh_loo[j] + (1 + d_i) / n)

The ``fast`` mode replaces t_bc_loo2(j, i) by t_bc_loo[j] in ``s_i`` and is
otherwise identical.

The pairwise counts are never materialised: censoring one large p-value
relaxes the count criterion from (1 + A) / max(R, 1) to A / (R + 1) past
its mirror point, so each count reduces to comparing mirror points against
a single relaxed-scan plateau (recomputed per zeroed index for the exact
adaptive weights).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .procedures import (
    ProcedureSpec,
    _bc_scan,
    _mirror_grid,
    as_pvalues,
    ebh_select,
    procedure_to_evalues,
    solve_threshold,
)

__all__ = [
    "HybridConfig",
    "LooThresholds",
    "bh_evalues",
    "bc_evalues",
    "compute_loo_thresholds",
    "adaptive_weights",
    "fast_adaptive_weights",
    "run_hybrid",
]

_MODES = {"averaged": "averaged", "adaptive": "adaptive", "fast": "fast", "fast_adaptive": "fast"}


@dataclass(frozen=True)
class HybridConfig:
    """Levels and weight mode for the blended procedure.

    When not given explicitly, the base-procedure levels default to
    ``alpha_ebh / 2`` in ``averaged`` mode and ``alpha_ebh / (1 + alpha_ebh)``
    in the adaptive modes.
    """

    alpha_ebh: float
    weight_mode: str = "adaptive"
    alpha_bh: Optional[float] = None
    alpha_bc: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.alpha_ebh < 1.0):
            raise ConfigurationError(f"alpha_ebh must lie in (0, 1), got {self.alpha_ebh}")
        mode = _MODES.get(self.weight_mode.lower())
        if mode is None:
            raise ConfigurationError(f"unknown weight mode {self.weight_mode!r}")
        object.__setattr__(self, "weight_mode", mode)
        default = (
            self.alpha_ebh / 2.0
            if mode == "averaged"
            else self.alpha_ebh / (1.0 + self.alpha_ebh)
        )
        if self.alpha_bh is None:
            object.__setattr__(self, "alpha_bh", default)
        if self.alpha_bc is None:
            object.__setattr__(self, "alpha_bc", default)
        for name in ("alpha_bh", "alpha_bc"):
            a = getattr(self, name)
            if not (0.0 < a < 1.0):
                raise ConfigurationError(f"{name} must lie in (0, 1), got {a}")


def bh_evalues(pvals, alpha_bh: float) -> np.ndarray:
    """Step-up e-values, ``1{p_i <= T_bh} / T_bh`` (zeros when infeasible)."""
    p = as_pvalues(pvals)
    spec = ProcedureSpec(kind="bh", alpha=alpha_bh)
    return procedure_to_evalues(p, spec, solve_threshold(p, spec))


def bc_evalues(pvals, alpha_bc: float) -> np.ndarray:
    """Mirror-count e-values, ``n 1{p_i <= T_bc} / (1 + #{p_j >= 1 - T_bc})``."""
    p = as_pvalues(pvals)
    spec = ProcedureSpec(kind="bc", alpha=alpha_bc)
    return procedure_to_evalues(p, spec, solve_threshold(p, spec))


def _bh_loo_vector(censored: np.ndarray, alpha: float) -> np.ndarray:
    """Step-up threshold of the censored vector with entry i zeroed, for all i.

    Zeroing entry i shifts the sorted order: the modified order statistics
    are 0, s_1, ..., s_{r_i - 1}, s_{r_i + 1}, ..., s_n where r_i is the rank
    of the removed entry, so per-rank feasibility splits into a shifted
    prefix and an unshifted suffix that are precomputed once.
    """
    n = censored.size
    order = np.argsort(censored, kind="stable")
    s = censored[order]
    ranks = np.empty(n, dtype=np.intp)
    ranks[order] = np.arange(n)
    thresh = np.arange(1, n + 1) * alpha / n

    shifted = np.empty(n, dtype=bool)
    shifted[0] = True  # position 1 holds the zeroed entry
    shifted[1:] = s[:-1] <= thresh[1:]
    plain = s <= thresh

    ks = np.arange(1, n + 1)
    best_shifted = np.maximum.accumulate(np.where(shifted, ks, 0))
    best_plain = np.flip(np.maximum.accumulate(np.flip(np.where(plain, ks, 0))))
    best_plain = np.append(best_plain, 0)

    khat = np.maximum(best_shifted[ranks], best_plain[ranks + 1])
    return khat * alpha / n


@dataclass(frozen=True, eq=False)
class LooThresholds:
    """Leave-one-out thresholds backing the adaptive weights.

    All mirror comparisons run on the stored mirror scores
    ``mirror = 1 - p`` (exact for p >= 0.5), so counts agree bit-for-bit
    with the threshold scans that produced them.
    """

    pvals: np.ndarray
    mirror: np.ndarray
    alpha_bh: float
    alpha_bc: float
    t_bh_loo: np.ndarray
    t_bc: Optional[float]
    t_bc_feasible: bool
    d_count: int  # #{p_j >= 1 - T_bc}, 0 when infeasible
    t_bc_loo: np.ndarray  # nan marks an infeasible censored threshold
    # base candidate grid with rejection / mirror counts and the relaxed
    # (post-censoring) feasibility used by the plateau reductions
    _cands: np.ndarray
    _n_rej: np.ndarray
    _n_mir: np.ndarray
    _relaxed: np.ndarray
    _mstar: Optional[float]
    _cache: dict = field(default_factory=dict)

    def t_bc_loo2(self, j: int, i: int) -> Optional[float]:
        """Censored threshold for j with p_i zeroed (exact, cached).

        Zeroing can only enlarge the feasible region, but it may also delete
        the grid point that carried the previous threshold, so the returned
        plateau representative is validated through the mirror indicator
        (which is plateau-stable) rather than by raw comparison.
        """
        if i == j:
            raise ConfigurationError("t_bc_loo2 needs two distinct indices")
        key = (int(j), int(i))
        if key not in self._cache:
            q = self.pvals.copy()
            q[i] = 0.0
            q[j] = min(q[j], 1.0 - q[j])
            t = _bc_scan(q, self.alpha_bc).threshold
            base = self.t_bc_loo[j]
            if not np.isnan(base):
                assert t is not None, "zeroing must keep the search feasible"
                if self.mirror[j] <= base:
                    assert self.mirror[j] <= t, "zeroing must not drop the mirror indicator"
            self._cache[key] = t
        return self._cache[key]


def compute_loo_thresholds(pvals, alpha_bh: float, alpha_bc: float) -> LooThresholds:
    """All leave-one-out quantities needed by the adaptive weights."""
    p = as_pvalues(pvals)
    n = p.size
    mirror = 1.0 - p
    censored = np.minimum(p, mirror)
    t_bh_loo = _bh_loo_vector(censored, alpha_bh)

    cands, n_rej, n_mir = _mirror_grid(p, mirror, t_max=0.5, inclusive=False)
    feas = (1.0 + n_mir) / np.maximum(n_rej, 1) <= alpha_bc
    relaxed = n_mir / (n_rej + 1.0) <= alpha_bc

    t_bc, d_count, t_bc_feasible = None, 0, False
    if feas.any():
        t_bc = float(cands[np.nonzero(feas)[0][-1]])
        d_count = int(np.count_nonzero(mirror <= t_bc))
        t_bc_feasible = True
    mstar = float(cands[np.nonzero(relaxed)[0][-1]]) if relaxed.any() else None

    # exact censored thresholds: below the mirror point the instance is
    # unchanged, at or above it the relaxed criterion applies
    t_bc_loo = np.full(n, t_bc if t_bc_feasible else np.nan)
    big = p > 0.5
    if big.any() and cands.size:
        ks = np.arange(1, cands.size + 1)
        last_feas_upto = np.maximum.accumulate(np.where(feas, ks, 0))
        last_feas_upto = np.concatenate([[0], last_feas_upto])  # index by count
        last_relaxed = int(np.nonzero(relaxed)[0][-1]) + 1 if relaxed.any() else 0
        pos = np.searchsorted(cands, mirror[big], side="left")
        low = last_feas_upto[pos]  # last feasible strictly below the mirror point
        vals = np.full(pos.size, np.nan)
        low_ok = low > 0
        vals[low_ok] = cands[low[low_ok] - 1]
        # the relaxed plateau, when it reaches the mirror point, always
        # dominates any feasible candidate below it
        high_ok = last_relaxed > pos
        vals[high_ok] = cands[last_relaxed - 1]
        t_bc_loo[big] = vals

    return LooThresholds(
        pvals=p,
        mirror=mirror,
        alpha_bh=alpha_bh,
        alpha_bc=alpha_bc,
        t_bh_loo=t_bh_loo,
        t_bc=t_bc,
        t_bc_feasible=t_bc_feasible,
        d_count=d_count,
        t_bc_loo=t_bc_loo,
        _cands=cands,
        _n_rej=n_rej,
        _n_mir=n_mir,
        _relaxed=relaxed,
        _mstar=mstar,
    )


def _bc_weight(loo: LooThresholds) -> np.ndarray:
    n = loo.pvals.size
    exceed = (loo.mirror <= loo.t_bc) if loo.t_bc_feasible else np.zeros(n, dtype=bool)
    d_i = (1.0 + loo.d_count - exceed) / n
    max_t_bh = float(loo.t_bh_loo.max())
    return d_i / (max_t_bh + d_i)


def _zeroed_mirror_count(loo: LooThresholds, i: int) -> int:
    """#{j != i : p_j >= 1 - t_bc_loo2(j, i)} via one relaxed scan."""
    cands = loo._cands
    if cands.size == 0:
        return 0
    n_mir = loo._n_mir - (cands >= loo.mirror[i]) if loo.pvals[i] > 0.5 else loo._n_mir
    n_rej = loo._n_rej + (cands < loo.pvals[i])
    relaxed = n_mir / (n_rej + 1.0) <= loo.alpha_bc
    if not relaxed.any():
        return 0
    mstar = cands[np.nonzero(relaxed)[0][-1]]
    if loo._mstar is not None:
        assert mstar >= loo._mstar, "zeroing must not shrink the relaxed plateau"
    count = int(np.count_nonzero(loo.mirror <= mstar))
    if loo.mirror[i] <= mstar:
        count -= 1
    return count


def _bh_weight(loo: LooThresholds, fast: bool, needed=None) -> np.ndarray:
    p = loo.pvals
    n = p.size
    w = np.zeros(n)
    if needed is None:
        needed = np.ones(n, dtype=bool)
    if fast:
        if loo._mstar is not None:
            base_mask = loo.mirror <= loo._mstar
            total = int(np.count_nonzero(base_mask))
            counts = total - base_mask.astype(int)
        else:
            counts = np.zeros(n, dtype=int)
        s_i = (1.0 + counts) / n
        w = loo.t_bh_loo / (loo.t_bh_loo + s_i)
        return np.where(needed, w, 0.0)
    for i in np.nonzero(needed)[0]:
        s_i = (1.0 + _zeroed_mirror_count(loo, int(i))) / n
        w[i] = loo.t_bh_loo[i] / (loo.t_bh_loo[i] + s_i)
    return w


def adaptive_weights(pvals, loo: LooThresholds):
    """Data-dependent weight pair (w_bh, w_bc), each in [0, 1]."""
    p = as_pvalues(pvals)
    if p.size != loo.pvals.size:
        raise ConfigurationError("loo thresholds were computed for a different input")
    return _bh_weight(loo, fast=False), _bc_weight(loo)


def fast_adaptive_weights(pvals, loo: LooThresholds):
    """As :func:`adaptive_weights` with t_bc_loo2(j, i) replaced by t_bc_loo[j]."""
    p = as_pvalues(pvals)
    if p.size != loo.pvals.size:
        raise ConfigurationError("loo thresholds were computed for a different input")
    return _bh_weight(loo, fast=True), _bc_weight(loo)


def _hybrid_evalues(pvals, config: HybridConfig):
    """Blended e-values plus the weight pair actually used."""
    p = as_pvalues(pvals)
    e_bh = bh_evalues(p, config.alpha_bh)
    e_bc = bc_evalues(p, config.alpha_bc)
    if config.weight_mode == "averaged":
        w_bh = np.full(p.size, 0.5)
        w_bc = np.full(p.size, 0.5)
    else:
        loo = compute_loo_thresholds(p, config.alpha_bh, config.alpha_bc)
        # weights multiplying a zero e-value never matter; skip their scans
        w_bh = _bh_weight(loo, fast=config.weight_mode == "fast", needed=e_bh > 0)
        w_bc = _bc_weight(loo)
    return w_bh * e_bh + w_bc * e_bc, w_bh, w_bc


def run_hybrid(pvals, config: HybridConfig) -> np.ndarray:
    """Blend BH and BC e-values per ``config`` and select at ``alpha_ebh``.

    Returns the sorted 0-based indices of rejected hypotheses.
    """
    evalues, _, _ = _hybrid_evalues(pvals, config)
    return ebh_select(evalues, config.alpha_ebh)
