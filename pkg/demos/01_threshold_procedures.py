"""Tour of the four threshold procedures and their e-value counterparts.

Generates one synthetic p-value set with a block of genuine signals, runs
the step-up (bh), null-proportion-adjusted (storey), mirror-count (bc) and
curve-based (fbc) procedures, converts each outcome to e-values, and shows
that the e-value step-up selector reproduces every rejection set exactly.
"""

import numpy as np

from evmt import (
    ProcedureSpec,
    ebh_select,
    procedure_to_evalues,
    solve_threshold,
)
from evmt.adaptive import RejectionCurves

rng = np.random.default_rng(7)
n, n_signal = 400, 40
pvals = rng.uniform(size=n)
pvals[:n_signal] = rng.beta(0.2, 60.0, size=n_signal)

print(f"{n} hypotheses, {n_signal} with real signal, level 0.1\n")

curves = RejectionCurves(
    pi=np.full(n, 0.8), kappa=np.full(n, 0.5)
)  # shared monotone curve: fbc then mirrors bc on transformed scores

for kind in ("bh", "storey", "bc", "fbc"):
    if kind == "fbc":
        spec = ProcedureSpec(kind=kind, alpha=0.1, rejection_functions=curves)
    else:
        spec = ProcedureSpec(kind=kind, alpha=0.1)
    res = solve_threshold(pvals, spec)
    evalues = procedure_to_evalues(pvals, spec, res)
    reselected = ebh_select(evalues, 0.1) if evalues.any() else np.empty(0, int)
    same = set(reselected.tolist()) == set(res.rejected.tolist())
    print(
        f"{kind:7s} threshold={res.threshold!s:>22} rejections={res.rejected.size:3d} "
        f"fake-rejection estimate={res.m_at_T:5.2f}  e-value selector agrees: {same}"
    )

print(
    "\nEvery procedure admits e-values e_i = n * reject_i / estimate with the\n"
    "same rejections under the e-value step-up rule; aggregation across\n"
    "procedures or data subsets happens on that shared scale."
)
