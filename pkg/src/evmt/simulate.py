"""Seeded Monte Carlo harness: instance generators and FDR/power campaigns.

Every replicate draws from its own counter-based substream
(``Philox`` keyed by ``(seed, replicate)``), so campaigns are reproducible
and insensitive to execution order; methods that need extra randomness
(e.g. the cross-fitting fold split) get a further substream keyed by the
method's registry index.

Settings
--------
``E1, E2``          two groups, uniform nulls, Beta-distributed alternatives
``F1, F2, F3``      four-group variants (``F3`` targets level 0.2)
``S1, S2``          z-score models where the step-up and mirror-count
                    procedures respectively dominate
``STRUCT``          covariate-driven mixture with signal-density and
                    signal-strength covariates
``KNOCK_SYNTH``     signed statistics, informative family A plus noise family B
``ALLNULL``         uniform p-values only (optional groups / covariates)
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from .adaptive import run_structure_adaptive
from .errors import ConfigurationError, InputError
from .groups import GroupPartition, run_grouped_ebh
from .hybrid import HybridConfig, run_hybrid
from .knockoffs import combine_and_select, knockoff_threshold
from .procedures import ProcedureSpec, fdp_power, solve_threshold

__all__ = [
    "SimulationConfig",
    "SimInstance",
    "MetricsReport",
    "default_parameters",
    "generate",
    "run_campaign",
    "toy_two_group",
]

SETTINGS = ("E1", "E2", "F1", "F2", "F3", "S1", "S2", "STRUCT", "KNOCK_SYNTH", "ALLNULL")

_GROUP_SETTINGS = {
    # (n, n_alt, beta_a, beta_b) per group
    "E1": [(100, 20, 4.0, 500.0), (1000, 20, 0.1, 500.0)],
    "E2": [(100, 20, 0.5, 500.0), (1000, 20, 0.5, 500.0)],
    "F1": [(100, 20, 0.1, 500.0), (100, 20, 0.1, 500.0),
           (1000, 20, 0.1, 500.0), (1000, 20, 0.1, 500.0)],
    "F2": [(100, 1, 0.01, 5000.0), (100, 20, 0.1, 500.0),
           (100, 20, 0.1, 500.0), (100, 20, 0.1, 500.0)],
    "F3": [(50, 2, 0.1, 500.0), (100, 2, 0.1, 500.0),
           (50, 4, 0.2, 500.0), (100, 4, 0.3, 500.0)],
}

_DEFAULT_ALPHA = {"F3": 0.2, "STRUCT": 0.1, "KNOCK_SYNTH": 0.2}


def default_parameters(setting: str) -> dict:
    """Built-in parameter map for a setting (copy, safe to mutate)."""
    setting = setting.upper()
    if setting in _GROUP_SETTINGS:
        return {
            "groups": [
                {"n": n, "n_alt": na, "beta_a": a, "beta_b": b}
                for n, na, a, b in _GROUP_SETTINGS[setting]
            ]
        }
    if setting == "S1":
        return {"n": 1000, "n_alt": 50, "mu": 0.4, "sigma": 1.0}
    if setting == "S2":
        return {"n": 3000, "n_alt": 750, "mu": 0.285, "sigma": 0.4}
    if setting == "STRUCT":
        return {"n": 3000, "a0": 3.5, "a1": 2.5, "a_f": 1.0, "mu": 3.0}
    if setting == "KNOCK_SYNTH":
        return {"p": 200, "n_alt": 30, "mu": 3.0}
    if setting == "ALLNULL":
        return {"n": 200}
    raise ConfigurationError(f"unknown setting {setting!r}")


@dataclass(frozen=True)
class SimulationConfig:
    """One campaign: a setting, its parameters, and the replication plan."""

    setting: str
    parameters: dict = field(default_factory=dict)
    replications: int = 100
    seed: int = 0
    target_alpha: Optional[float] = None

    def __post_init__(self):
        setting = self.setting.upper()
        if setting not in SETTINGS:
            raise ConfigurationError(f"unknown setting {self.setting!r}")
        object.__setattr__(self, "setting", setting)
        if self.replications < 1:
            raise ConfigurationError("replications must be at least 1")
        params = default_parameters(setting)
        params.update(self.parameters)
        object.__setattr__(self, "parameters", params)
        if self.target_alpha is None:
            object.__setattr__(
                self, "target_alpha", _DEFAULT_ALPHA.get(setting, 0.05)
            )
        if not (0.0 < self.target_alpha < 1.0):
            raise ConfigurationError("target_alpha must lie in (0, 1)")

    @classmethod
    def from_file(cls, path) -> "SimulationConfig":
        """Read a plain ``key = value`` config file.

        Recognised keys: ``setting``, ``replications``/``reps``, ``seed``,
        ``alpha``/``target_alpha``.  Any other key is parsed as a numeric
        setting parameter.
        """
        fields = {}
        params = {}
        with open(path, "r", encoding="utf-8") as handle:
            for lineno, raw in enumerate(handle, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise InputError(f"{path}:{lineno}: expected 'key = value'")
                key, value = (part.strip() for part in line.split("=", 1))
                key = key.lower()
                if key == "setting":
                    fields["setting"] = value
                elif key in ("replications", "reps"):
                    fields["replications"] = int(value)
                elif key == "seed":
                    fields["seed"] = int(value)
                elif key in ("alpha", "target_alpha"):
                    fields["target_alpha"] = float(value)
                else:
                    try:
                        params[key] = json.loads(value)
                    except json.JSONDecodeError as exc:
                        raise InputError(f"{path}:{lineno}: bad value {value!r}") from exc
        if "setting" not in fields:
            raise InputError(f"{path}: missing required key 'setting'")
        return cls(parameters=params, **fields)


@dataclass(frozen=True)
class SimInstance:
    """One simulated data set."""

    pvals: Optional[np.ndarray]
    truth: np.ndarray
    partition: Optional[GroupPartition] = None
    covars: Optional[np.ndarray] = None
    stats_a: Optional[np.ndarray] = None
    stats_b: Optional[np.ndarray] = None


def _replicate_rng(seed: int, replicate: int, lane: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replicate, lane])))


def generate(config: SimulationConfig, replicate_index: int) -> SimInstance:
    """Draw one replicate; deterministic given (config, seed, index)."""
    rng = _replicate_rng(config.seed, replicate_index)
    params = config.parameters
    setting = config.setting

    if setting in _GROUP_SETTINGS:
        chunks, truths, sizes = [], [], []
        for g in params["groups"]:
            n, na = int(g["n"]), int(g["n_alt"])
            p = rng.uniform(size=n)
            if na:
                p[:na] = rng.beta(g["beta_a"], g["beta_b"], size=na)
            t = np.zeros(n, dtype=int)
            t[:na] = 1
            chunks.append(p)
            truths.append(t)
            sizes.append(n)
        return SimInstance(
            pvals=np.concatenate(chunks),
            truth=np.concatenate(truths),
            partition=GroupPartition.from_sizes(sizes),
        )

    if setting in ("S1", "S2"):
        n, na = int(params["n"]), int(params["n_alt"])
        x = rng.normal(size=n)
        x[:na] = rng.normal(params["mu"] * np.log(n), params["sigma"], size=na)
        truth = np.zeros(n, dtype=int)
        truth[:na] = 1
        return SimInstance(pvals=1.0 - norm.cdf(x), truth=truth)

    if setting == "STRUCT":
        n = int(params["n"])
        x = rng.normal(size=n)
        pi = 1.0 / (1.0 + np.exp(-(params["a0"] + params["a1"] * x)))
        theta = (rng.uniform(size=n) < 1.0 - pi).astype(int)
        x2 = rng.normal(size=n)
        eta = 2.0 / (1.0 + np.exp(-params["a_f"] * x2))
        z = rng.normal(eta * params["mu"] * theta, 1.0)
        return SimInstance(
            pvals=1.0 - norm.cdf(z), truth=theta, covars=np.column_stack([x, x2])
        )

    if setting == "KNOCK_SYNTH":
        p, na = int(params["p"]), int(params["n_alt"])
        signs = rng.choice([-1.0, 1.0], size=p)
        w_a = signs * np.abs(rng.normal(size=p))
        w_a[:na] = np.abs(rng.normal(params["mu"], 1.0, size=na))
        w_b = rng.choice([-1.0, 1.0], size=p) * np.abs(rng.normal(size=p))
        truth = np.zeros(p, dtype=int)
        truth[:na] = 1
        return SimInstance(pvals=None, truth=truth, stats_a=w_a, stats_b=w_b)

    # ALLNULL
    n = int(params["n"])
    part = None
    if params.get("group_sizes"):
        part = GroupPartition.from_sizes([int(s) for s in params["group_sizes"]])
        if part.n != n:
            raise ConfigurationError("group_sizes must sum to n")
    covars = None
    if params.get("d"):
        covars = rng.normal(size=(n, int(params["d"])))
    return SimInstance(
        pvals=rng.uniform(size=n), truth=np.zeros(n, dtype=int),
        partition=part, covars=covars,
    )


def _need(instance, attr, method):
    value = getattr(instance, attr)
    if value is None:
        raise ConfigurationError(f"method {method} needs {attr} for this setting")
    return value


def _run_bc_sep(instance, alpha):
    p = instance.pvals
    part = _need(instance, "partition", "BC_Sep")
    rejected = []
    for l in range(part.n_groups):
        idx = part.indices(l)
        res = solve_threshold(p[idx], ProcedureSpec(kind="bc", alpha=alpha))
        rejected.extend(idx[res.rejected].tolist())
    return np.asarray(sorted(rejected), dtype=np.intp)


def _run_grouped(instance, alpha, scheme):
    part = _need(instance, "partition", f"grouped scheme {scheme}")
    return run_grouped_ebh(instance.pvals, part, alpha, scheme=scheme).rejected


def _run_hybrid_mode(instance, alpha, mode):
    return run_hybrid(instance.pvals, HybridConfig(alpha_ebh=alpha, weight_mode=mode))


def _run_struct(instance, alpha, rng, mode):
    covars = _need(instance, "covars", "eBH_FBC")
    return run_structure_adaptive(instance.pvals, covars, alpha, mode=mode, rng=rng)


def _run_knockoff(instance, alpha, which):
    stats = _need(instance, f"stats_{which}", f"KO_{which}")
    return knockoff_threshold(stats, alpha).rejected


# name -> (needs_rng, runner); the registry order fixes each method's
# substream index, so adding methods must append, not reorder
_METHODS = {
    "BH": (False, lambda inst, a: solve_threshold(inst.pvals, ProcedureSpec(kind="bh", alpha=a)).rejected),
    "ST": (False, lambda inst, a: solve_threshold(inst.pvals, ProcedureSpec(kind="storey", alpha=a)).rejected),
    "BC": (False, lambda inst, a: solve_threshold(inst.pvals, ProcedureSpec(kind="bc", alpha=a)).rejected),
    "BC_Com": (False, lambda inst, a: solve_threshold(inst.pvals, ProcedureSpec(kind="bc", alpha=a)).rejected),
    "BC_Sep": (False, _run_bc_sep),
    "eBH_1": (False, lambda inst, a: _run_grouped(inst, a, "unit")),
    "eBH_2": (False, lambda inst, a: _run_grouped(inst, a, "size")),
    "eBH_Ada": (False, None),  # grouped or hybrid, resolved per instance
    "eBH_Ave": (False, lambda inst, a: _run_hybrid_mode(inst, a, "averaged")),
    "fast_eBH_Ada": (False, lambda inst, a: _run_hybrid_mode(inst, a, "fast")),
    "eBH_FBC": (True, lambda inst, a, rng: _run_struct(inst, a, rng, "cheap")),
    "eBH_FBC_unit": (True, lambda inst, a, rng: _run_struct(inst, a, rng, "unit")),
    "KO_1": (False, lambda inst, a: _run_knockoff(inst, a, "a")),
    "KO_2": (False, lambda inst, a: _run_knockoff(inst, a, "b")),
    "KO_Hybrid": (False, lambda inst, a: combine_and_select(inst.stats_a, inst.stats_b, a)),
}

_METHOD_INDEX = {name: i for i, name in enumerate(_METHODS)}


def _run_method(name, instance, alpha, seed, replicate):
    try:
        needs_rng, runner = _METHODS[name]
    except KeyError:
        raise ConfigurationError(f"unknown method {name!r}") from None
    if name == "eBH_Ada":
        if instance.partition is not None:
            return _run_grouped(instance, alpha, "adaptive")
        return _run_hybrid_mode(instance, alpha, "adaptive")
    if needs_rng:
        rng = _replicate_rng(seed, replicate, lane=1 + _METHOD_INDEX[name])
        return runner(instance, alpha, rng)
    return runner(instance, alpha)


def _replicate_metrics(config: SimulationConfig, replicate: int, methods) -> dict:
    instance = generate(config, replicate)
    out = {}
    for name in methods:
        rejected = _run_method(name, instance, config.target_alpha, config.seed, replicate)
        fdp, power = fdp_power(rejected, instance.truth)
        record = {"fdp": fdp, "power": power}
        if instance.partition is not None:
            mask = np.zeros(instance.truth.size, dtype=bool)
            mask[rejected] = True
            gf, gp = [], []
            for l in range(instance.partition.n_groups):
                idx = instance.partition.indices(l)
                f, w = fdp_power(np.nonzero(mask[idx])[0], instance.truth[idx])
                gf.append(f)
                gp.append(w)
            record["group_fdp"] = gf
            record["group_power"] = gp
        out[name] = record
    return out


@dataclass(frozen=True)
class MetricsReport:
    """Per-method empirical FDR and power with standard errors."""

    setting: str
    target_alpha: float
    replications: int
    seed: int
    methods: dict
    wall_clock: float

    def rows(self):
        """Flat (setting, method, metric, value, std_error) records."""
        out = []
        for name, m in self.methods.items():
            out.append(
                {"setting": self.setting, "method": name, "metric": "fdr",
                 "value": m["fdr"], "std_error": m["fdr_se"]}
            )
            out.append(
                {"setting": self.setting, "method": name, "metric": "power",
                 "value": m["power"], "std_error": m["power_se"]}
            )
            for l, (f, fs) in enumerate(zip(m.get("group_fdr", []), m.get("group_fdr_se", [])), start=1):
                out.append({"setting": self.setting, "method": name, "metric": f"fdr_g{l}",
                            "value": f, "std_error": fs})
            for l, (w, ws) in enumerate(zip(m.get("group_power", []), m.get("group_power_se", [])), start=1):
                out.append({"setting": self.setting, "method": name, "metric": f"power_g{l}",
                            "value": w, "std_error": ws})
        return out

    def to_json(self) -> str:
        payload = {
            "setting": self.setting,
            "target_alpha": self.target_alpha,
            "replications": self.replications,
            "seed": self.seed,
            "wall_clock_seconds": round(self.wall_clock, 3),
            "rows": self.rows(),
        }
        return json.dumps(payload, indent=2)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("setting,method,metric,value,std_error\n")
            for row in self.rows():
                handle.write(
                    f"{row['setting']},{row['method']},{row['metric']},"
                    f"{row['value']:.10g},{row['std_error']:.10g}\n"
                )


def _mean_se(values: np.ndarray):
    mean = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return mean, se


def run_campaign(config: SimulationConfig, methods) -> MetricsReport:
    """Run every method on every replicate and reduce to mean FDR / power.

    ``EVMT_THREADS`` caps process-level parallelism over replicates
    (default 1, serial); results do not depend on the worker count.
    """
    methods = list(methods)
    for name in methods:
        if name not in _METHODS:
            raise ConfigurationError(f"unknown method {name!r}")
    start = time.monotonic()
    workers = int(os.environ.get("EVMT_THREADS", "1") or "1")
    reps = range(config.replications)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(_replicate_metrics, *zip(*[(config, r, methods) for r in reps])))
    else:
        per_rep = [_replicate_metrics(config, r, methods) for r in reps]

    summary = {}
    for name in methods:
        fdp = np.array([rec[name]["fdp"] for rec in per_rep])
        power = np.array([rec[name]["power"] for rec in per_rep])
        entry = {}
        entry["fdr"], entry["fdr_se"] = _mean_se(fdp)
        entry["power"], entry["power_se"] = _mean_se(power)
        if "group_fdp" in per_rep[0][name]:
            gf = np.array([rec[name]["group_fdp"] for rec in per_rep])
            gp = np.array([rec[name]["group_power"] for rec in per_rep])
            entry["group_fdr"], entry["group_fdr_se"] = zip(*(_mean_se(gf[:, l]) for l in range(gf.shape[1])))
            entry["group_power"], entry["group_power_se"] = zip(*(_mean_se(gp[:, l]) for l in range(gp.shape[1])))
            for key in ("group_fdr", "group_fdr_se", "group_power", "group_power_se"):
                entry[key] = list(entry[key])
        summary[name] = entry
    return MetricsReport(
        setting=config.setting,
        target_alpha=config.target_alpha,
        replications=config.replications,
        seed=config.seed,
        methods=summary,
        wall_clock=time.monotonic() - start,
    )


def toy_two_group():
    """Deterministic two-group showcase: 20 clear signals in each group.

    Unweighted pooled e-values (100 in the small group, 1000 in the large
    one) select nothing at level 0.05, while the adaptive weights lift both
    groups to a common scale and select all 40.
    """
    def one_group(n):
        small = np.linspace(1e-4, 1e-3, 20)
        big = np.linspace(0.6, 0.7, n - 20)
        big[-2] = 0.7
        return np.concatenate([small, big])

    pvals = np.concatenate([one_group(100), one_group(1000)])
    truth = np.zeros(1100, dtype=int)
    truth[:20] = 1
    truth[100:120] = 1
    return pvals, GroupPartition.from_sizes([100, 1000]), truth
