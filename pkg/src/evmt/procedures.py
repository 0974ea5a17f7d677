"""Threshold-style FDR procedures and their e-value counterparts.

The procedures share one template: pick the largest threshold ``t`` for which
an over-estimate of the number of false rejections, divided by the number of
rejections at ``t``, stays below the target level.  Four instances are
provided:

``bh``
    Step-up procedure with ``m(t) = n t`` and rejection rule ``p_i <= t``.
``storey``
    Same rejection rule with ``m(t) = n pi0 t``, where ``pi0`` is estimated
    from the p-values above a tuning point ``lambda``.
``bc``
    Symmetry-based procedure counting mirrored large p-values,
    ``m(t) = 1 + #{p_i >= 1 - t}``, with threshold domain (0, 0.5).
``fbc``
    Generalisation of ``bc`` with hypothesis-specific monotone rejection
    curves ``phi_i``; rejects when ``phi_i(p_i) <= t`` and counts mirrors via
    ``phi_i(1 - p_i) <= t``.

Every procedure can be converted into a vector of e-values such that the
e-value step-up selector (:func:`ebh_select`) reproduces its rejection set
exactly.

All thresholds are evaluated on the finite grid where the counting functions
jump, so results match the continuum supremum; comparisons are exact on the
stored floating-point values (no epsilon).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, InputError

__all__ = [
    "ProcedureSpec",
    "ThresholdResult",
    "as_pvalues",
    "as_evalues",
    "solve_threshold",
    "storey_pi0",
    "procedure_to_evalues",
    "ebh_select",
    "fdp_power",
]

_KINDS = ("bh", "storey", "bc", "fbc")

# Probe grid for the monotonicity spot check of fbc rejection curves.
_MONOTONE_PROBES = np.array([1e-6, 0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95, 1.0])


def as_pvalues(values) -> np.ndarray:
    """Validate and return a 1-d float64 array of p-values in [0, 1]."""
    p = np.asarray(values, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InputError("p-values must form a non-empty 1-d array")
    if not np.all(np.isfinite(p)):
        raise InputError("p-values must be finite")
    if p.min() < 0.0 or p.max() > 1.0:
        raise InputError("p-values must lie in [0, 1]")
    return p


def as_evalues(values) -> np.ndarray:
    """Validate and return a 1-d float64 array of nonnegative e-values."""
    e = np.asarray(values, dtype=np.float64)
    if e.ndim != 1 or e.size == 0:
        raise InputError("e-values must form a non-empty 1-d array")
    if not np.all(np.isfinite(e)):
        raise InputError("e-values must be finite")
    if e.min() < 0.0:
        raise InputError("e-values must be nonnegative")
    return e


def _check_alpha(alpha: float) -> float:
    if not (0.0 < alpha < 1.0):
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    return float(alpha)


@dataclass(frozen=True)
class ProcedureSpec:
    """Configuration of one threshold procedure.

    Parameters
    ----------
    kind : {"bh", "storey", "bc", "fbc"}
        Which procedure to run.
    alpha : float
        Target FDR level in (0, 1).
    storey_lambda : float, optional
        Tuning point in [0, 1) for the null-proportion estimate
        (``storey`` only, default 0.5).
    rejection_functions : object, optional
        Per-hypothesis monotone rejection curves (``fbc`` only).  Either an
        object with an ``at(p)`` method mapping a length-n array of
        probabilities to the n curve values ``phi_i(p_i)``, or a sequence of
        n scalar callables.
    t_upper : float, optional
        Upper end of the ``fbc`` threshold domain.  Must be strictly below
        ``min_i phi_i(0.5)``; defaults to just below that bound.
    """

    kind: str
    alpha: float
    storey_lambda: float = 0.5
    rejection_functions: Optional[object] = None
    t_upper: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown procedure kind {self.kind!r}")
        _check_alpha(self.alpha)
        if self.kind == "storey" and not (0.0 <= self.storey_lambda < 1.0):
            raise ConfigurationError(
                f"storey_lambda must lie in [0, 1), got {self.storey_lambda}"
            )
        if self.kind == "fbc" and self.rejection_functions is None:
            raise ConfigurationError("fbc requires rejection_functions")


@dataclass(frozen=True)
class ThresholdResult:
    """Outcome of a threshold search.

    Attributes
    ----------
    threshold : float or None
        Selected threshold; ``None`` when no grid point is feasible.
    m_at_T : float
        Value of the false-rejection over-estimate at the threshold
        (0.0 when infeasible).
    rejected : ndarray of int
        Sorted 0-based indices of rejected hypotheses (empty when
        infeasible).
    feasible : bool
        Whether any threshold satisfied the level constraint.
    """

    threshold: Optional[float]
    m_at_T: float
    rejected: np.ndarray
    feasible: bool


def _phi_at(funcs, p: np.ndarray) -> np.ndarray:
    """Evaluate hypothesis-specific curves elementwise: out[i] = phi_i(p[i])."""
    if hasattr(funcs, "at"):
        return np.asarray(funcs.at(p), dtype=np.float64)
    return np.array([float(f(x)) for f, x in zip(funcs, p)], dtype=np.float64)


def _phi_len(funcs) -> Optional[int]:
    if hasattr(funcs, "__len__"):
        return len(funcs)
    return None


def _validate_fbc(funcs, n: int, t_upper: Optional[float]) -> float:
    """Spot-check monotonicity and resolve the domain cap for fbc curves."""
    m = _phi_len(funcs)
    if m is not None and m != n:
        raise ConfigurationError(
            f"rejection_functions has length {m}, expected {n}"
        )
    prev = None
    for q in _MONOTONE_PROBES:
        vals = _phi_at(funcs, np.full(n, q))
        if not np.all(np.isfinite(vals)):
            raise ConfigurationError("rejection functions produced non-finite values")
        if prev is not None and np.any(vals < prev):
            raise ConfigurationError("rejection functions must be monotone increasing")
        prev = vals
    phi_half = _phi_at(funcs, np.full(n, 0.5))
    bound = float(phi_half.min())
    if t_upper is None:
        return (1.0 - 1e-9) * bound
    if not (t_upper < bound):
        raise ConfigurationError(
            f"t_upper={t_upper} must be below min phi_i(0.5)={bound}"
        )
    return float(t_upper)


@dataclass(frozen=True)
class _MirrorScan:
    """Internal result of one mirror-count threshold scan."""

    threshold: Optional[float]
    m_at_T: float
    rejected_mask: np.ndarray
    feasible: bool
    # Largest candidate where the count criterion holds after one mirror
    # move, i.e. with numerator A(t) and denominator R(t) + 1.  Equals the
    # common leave-one-out threshold of every score that clears it.
    mstar: Optional[float]
    # loo_mask[j] is 1{v_j <= mstar}: whether hypothesis j's mirror score is
    # reachable by its own leave-one-out threshold.
    loo_mask: np.ndarray


def _mirror_grid(u, v, t_max=None, inclusive=False):
    """Candidate grid and counting functions for a bc/fbc-style scan.

    Returns ``(cands, n_rej, n_mir)`` where ``n_rej[k] = #{u <= cands[k]}``
    and ``n_mir[k] = #{v <= cands[k]}``.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    cands = np.unique(np.concatenate([u, v]))
    if t_max is not None:
        cands = cands[cands <= t_max] if inclusive else cands[cands < t_max]
    n_rej = np.searchsorted(np.sort(u), cands, side="right")
    n_mir = np.searchsorted(np.sort(v), cands, side="right")
    return cands, n_rej, n_mir


def _mirror_scan(u, v, alpha, t_max=None, inclusive=False) -> _MirrorScan:
    """Threshold scan for procedures of the bc/fbc family.

    ``u`` holds rejection scores (reject when ``u_i <= t``) and ``v`` mirror
    scores (count when ``v_i <= t``); the criterion is
    ``(1 + #{v <= t}) / max(1, #{u <= t}) <= alpha`` over the candidate grid
    built from both score arrays, capped at ``t_max``.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    cands, n_rej, n_mir = _mirror_grid(u, v, t_max, inclusive)
    no_loo = np.zeros(u.size, dtype=bool)
    if cands.size == 0:
        return _MirrorScan(None, 0.0, no_loo.copy(), False, None, no_loo)
    feas = (1.0 + n_mir) / np.maximum(n_rej, 1) <= alpha
    relaxed = n_mir / (n_rej + 1.0) <= alpha

    if feas.any():
        k = np.nonzero(feas)[0][-1]
        threshold = float(cands[k])
        m_at = 1.0 + float(n_mir[k])
        rejected_mask = u <= threshold
        feasible = True
    else:
        threshold, m_at, rejected_mask, feasible = None, 0.0, no_loo.copy(), False

    if relaxed.any():
        mstar = float(cands[np.nonzero(relaxed)[0][-1]])
        loo_mask = v <= mstar
    else:
        mstar, loo_mask = None, no_loo

    return _MirrorScan(threshold, m_at, rejected_mask, feasible, mstar, loo_mask)


def _bc_scan(p: np.ndarray, alpha: float) -> _MirrorScan:
    """Mirror scan specialised to raw p-values on the domain (0, 0.5)."""
    return _mirror_scan(p, 1.0 - p, alpha, t_max=0.5, inclusive=False)


def _stepup_scan(p: np.ndarray, alpha: float, scale: float) -> ThresholdResult:
    """Step-up scan for m(t) = scale * t with rejection rule p_i <= t.

    The reported threshold is the supremum of the feasible plateau,
    ``k_hat * alpha / scale``, so that ``m(T) = k_hat * alpha`` exactly and
    the e-value conversion reproduces the rejection set.
    """
    n = p.size
    s = np.sort(p)
    ks = np.arange(1, n + 1)
    ok = s <= ks * alpha / scale
    if not ok.any():
        return ThresholdResult(None, 0.0, np.empty(0, dtype=np.intp), False)
    khat = int(np.nonzero(ok)[0][-1]) + 1
    threshold = khat * alpha / scale
    rejected = np.nonzero(p <= threshold)[0]
    return ThresholdResult(float(threshold), float(khat * alpha), rejected, True)


def storey_pi0(pvals, storey_lambda: float) -> float:
    """Estimate of the null proportion, ``(1 + n - #{p <= lambda}) / ((1 - lambda) n)``."""
    p = as_pvalues(pvals)
    if not (0.0 <= storey_lambda < 1.0):
        raise ConfigurationError(
            f"storey_lambda must lie in [0, 1), got {storey_lambda}"
        )
    n = p.size
    r_lam = int(np.count_nonzero(p <= storey_lambda))
    return (1.0 + n - r_lam) / ((1.0 - storey_lambda) * n)


def solve_threshold(pvals, spec: ProcedureSpec) -> ThresholdResult:
    """Run one threshold procedure on a p-value set.

    Parameters
    ----------
    pvals : array_like
        P-values in [0, 1].
    spec : ProcedureSpec
        Procedure kind, level and kind-specific settings.

    Returns
    -------
    ThresholdResult
        Feasibility flag, threshold, false-rejection estimate at the
        threshold and the rejected index set.
    """
    p = as_pvalues(pvals)
    n = p.size
    if spec.kind == "bh":
        return _stepup_scan(p, spec.alpha, float(n))
    if spec.kind == "storey":
        pi0 = storey_pi0(p, spec.storey_lambda)
        return _stepup_scan(p, spec.alpha, n * pi0)
    if spec.kind == "bc":
        scan = _bc_scan(p, spec.alpha)
    else:  # fbc
        t_up = _validate_fbc(spec.rejection_functions, n, spec.t_upper)
        u = _phi_at(spec.rejection_functions, p)
        v = _phi_at(spec.rejection_functions, 1.0 - p)
        scan = _mirror_scan(u, v, spec.alpha, t_max=t_up, inclusive=True)
    rejected = np.nonzero(scan.rejected_mask)[0]
    return ThresholdResult(scan.threshold, scan.m_at_T, rejected, scan.feasible)


def procedure_to_evalues(pvals, spec: ProcedureSpec, result: ThresholdResult) -> np.ndarray:
    """Convert a procedure's outcome into e-values, ``e_i = n R_i(T) / m(T)``.

    Rejected hypotheses receive ``n / m(T)``; everything else (and every
    hypothesis when the threshold search was infeasible) receives 0.
    """
    p = as_pvalues(pvals)
    e = np.zeros(p.size)
    if not result.feasible:
        return e
    assert result.m_at_T > 0.0, "feasible threshold with zero false-rejection estimate"
    e[result.rejected] = p.size / result.m_at_T
    return e


def ebh_select(evalues, alpha: float) -> np.ndarray:
    """E-value step-up selector.

    Sorts e-values decreasingly, finds the largest ``k`` with
    ``e_(k) >= n / (k alpha)`` and rejects the hypotheses attaining the ``k``
    largest values (equal values at the boundary are absorbed into ``k``).

    Returns
    -------
    ndarray of int
        Sorted 0-based indices of rejected hypotheses.
    """
    e = as_evalues(evalues)
    _check_alpha(alpha)
    n = e.size
    es = np.sort(e)[::-1]
    ks = np.arange(1, n + 1)
    ok = es >= n / (ks * alpha)
    if not ok.any():
        return np.empty(0, dtype=np.intp)
    khat = int(np.nonzero(ok)[0][-1]) + 1
    cutoff = es[khat - 1]
    rejected = np.nonzero(e >= cutoff)[0]
    assert rejected.size == khat, "ties at the cutoff must already be inside k_hat"
    return rejected


def fdp_power(rejected, truth) -> tuple[float, float]:
    """False discovery proportion and power of a rejection set.

    Parameters
    ----------
    rejected : array_like of int
        0-based indices of rejected hypotheses.
    truth : array_like of {0, 1}
        Ground-truth indicators, 1 marking a non-null hypothesis.

    Returns
    -------
    (fdp, power) : pair of float
        ``#false rejections / max(1, #rejections)`` and
        ``#true rejections / max(1, #non-nulls)``.
    """
    theta = np.asarray(truth)
    if theta.ndim != 1:
        raise InputError("truth must be a 1-d indicator vector")
    rej = np.asarray(rejected, dtype=np.intp)
    if rej.size and (rej.min() < 0 or rej.max() >= theta.size):
        raise InputError("rejected indices out of range for truth vector")
    n_rej = rej.size
    n_true = int(np.count_nonzero(theta[rej])) if n_rej else 0
    fdp = (n_rej - n_true) / max(1, n_rej)
    power = n_true / max(1, int(np.count_nonzero(theta)))
    return float(fdp), float(power)
