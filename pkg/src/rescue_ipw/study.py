"""Monte-Carlo replication studies and the rho sensitivity sweep."""

import csv
import hashlib
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import SwitchingImbalanceWarning, TooManyFailures
from .estimators import estimate_balanced, estimate_treatment_policy
from .rng import stream
from .simulate import ScenarioConfig, Truth, generate_scenario, true_values
from .tilt import Variant
from .variance import MAX_FAILURE_SHARE, REPLICATE_FAILURES

PARAMS = ("mu", "mu1", "mu0", "policy_mu", "policy_mu1", "policy_mu0")
CACHE_ENV = "RESCUE_IPW_CACHE"
TRUTH_MC = 10**7


# ------------------------------------------------------------------ truth cache


def _cache_dir():
    root = os.environ.get(CACHE_ENV)
    return Path(root) if root else Path.home() / ".cache" / "rescue_ipw"


def config_key(config: ScenarioConfig, n_mc, seed):
    blob = json.dumps({"config": config.to_dict(), "n_mc": n_mc, "seed": seed}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def cached_true_values(config: ScenarioConfig, n_mc=TRUTH_MC, seed=0) -> Truth:
    """:func:`true_values`, memoised on disk by a hash of (config, n_mc, seed).

    The cache lives in ``$RESCUE_IPW_CACHE`` (default ``~/.cache/rescue_ipw``);
    an unwritable cache directory only disables caching.
    """
    path = _cache_dir() / f"truth-{config_key(config, n_mc, seed)}.json"
    try:
        with open(path, encoding="utf-8") as fh:
            return Truth(**json.load(fh))
    except (OSError, ValueError, TypeError):
        pass
    truth = true_values(config, n_mc=n_mc, seed=seed)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.tmp")
        tmp.write_text(json.dumps(truth.to_dict()), encoding="utf-8")
        os.replace(tmp, path)
    except OSError:
        pass
    return truth


# ------------------------------------------------------------------ MC study


@dataclass(frozen=True)
class ParamSummary:
    truth: float
    mean: float
    bias: float
    se: Optional[float]  # None when fewer than two replicates completed


@dataclass(frozen=True)
class StudyResult:
    """Aggregated replication results.

    ``params`` maps each of ``mu``, ``mu1``, ``mu0`` (balanced) and their
    treatment-policy counterparts to a :class:`ParamSummary`. The weight
    percentiles are means of the per-replicate normalised-weight
    percentiles.
    """

    scenario: Optional[str]
    n: int
    reps: int
    rho_assumed: float
    truncation: Optional[tuple]
    variant: str
    seed: int
    params: dict
    weight_p5: float
    weight_p95: float
    reps_completed: int
    reps_failed: int
    estimates: np.ndarray = field(repr=False)
    weight_percentiles: np.ndarray = field(repr=False)
    config: dict = field(default_factory=dict, repr=False)

    def options(self):
        return {
            "scenario": self.scenario,
            "n": self.n,
            "reps": self.reps,
            "rho_assumed": self.rho_assumed,
            "truncation": None if self.truncation is None else list(self.truncation),
            "variant": self.variant,
            "seed": self.seed,
            "config": self.config,
        }


def _one_replicate(config, n, rho, truncation, variant, seed, b):
    data = generate_scenario(config, n, stream(seed, b))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SwitchingImbalanceWarning)
            bal = estimate_balanced(data, rho, variant=variant, truncation=truncation)
        pol = estimate_treatment_policy(data)
    except REPLICATE_FAILURES:
        return None
    return (bal.mu, bal.mu1, bal.mu0, pol.mu, pol.mu1, pol.mu0, bal.weight_p5, bal.weight_p95)


def _study_chunk(args):
    config, n, rho, truncation, variant, seed, indices = args
    return [_one_replicate(config, n, rho, truncation, variant, seed, b) for b in indices]


def run_mc_study(config: ScenarioConfig, n, reps, rho_assumed, truncation=None,
                 variant=Variant.NON_SWITCHER, seed=0, jobs=1, scenario=None,
                 truth: Optional[Truth] = None) -> StudyResult:
    """Simulate ``reps`` trials from ``config`` and estimate each one.

    Replicate ``b`` draws its data from stream ``(seed, b)``, so results do
    not depend on ``jobs``. Bias is taken against ``truth`` (default: the
    cached 10^7-draw Monte-Carlo truth of ``config``). More than 10% failed
    replicates raises :class:`TooManyFailures`.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    variant = Variant(variant)
    truncation = None if truncation is None else (float(truncation[0]), float(truncation[1]))
    if truth is None:
        truth = cached_true_values(config)
    if jobs is None or jobs <= 1:
        out = _study_chunk((config, n, rho_assumed, truncation, variant, seed, range(reps)))
    else:
        chunks = np.array_split(np.arange(reps), min(jobs * 4, reps))
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = pool.map(_study_chunk, [(config, n, rho_assumed, truncation, variant, seed, list(c))
                                            for c in chunks])
            out = [x for part in parts for x in part]

    ok = [x for x in out if x is not None]
    failed = reps - len(ok)
    if failed > MAX_FAILURE_SHARE * reps:
        raise TooManyFailures(f"{failed} of {reps} study replicates failed")
    arr = np.asarray(ok, dtype=float).reshape(len(ok), 8)
    truths = {
        "mu": truth.mu, "mu1": truth.mu1, "mu0": truth.mu0,
        "policy_mu": truth.policy_mu, "policy_mu1": truth.policy_mu1, "policy_mu0": truth.policy_mu0,
    }
    params = {}
    for j, name in enumerate(PARAMS):
        col = arr[:, j]
        mean = float(np.mean(col))
        params[name] = ParamSummary(
            truth=truths[name],
            mean=mean,
            bias=mean - truths[name],
            se=float(np.std(col, ddof=1)) if col.size > 1 else None,
        )
    return StudyResult(
        scenario=None if scenario is None else str(scenario),
        n=int(n),
        reps=int(reps),
        rho_assumed=float(rho_assumed),
        truncation=truncation,
        variant=variant.value,
        seed=int(seed),
        params=params,
        weight_p5=float(np.mean(arr[:, 6])),
        weight_p95=float(np.mean(arr[:, 7])),
        reps_completed=len(ok),
        reps_failed=failed,
        estimates=arr[:, :6],
        weight_percentiles=arr[:, 6:],
        config=config.to_dict(),
    )


STUDY_COLUMNS = ("scenario", "n", "reps", "rho", "param", "bias", "se", "w_p5", "w_p95", "failed")


def _g(v):
    return "" if v is None else format(v, ".17g")


@contextmanager
def _text_out(target):
    if hasattr(target, "write"):
        yield target
    else:
        with open(target, "w", newline="", encoding="utf-8") as fh:
            yield fh


def write_study_csv(results, target):
    """One row per (study, parameter); an undefined SE is an empty field.

    ``target`` is a path or an open text stream.
    """
    with _text_out(target) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STUDY_COLUMNS)
        for res in results:
            for name in PARAMS:
                p = res.params[name]
                w.writerow([res.scenario or "", res.n, res.reps, _g(res.rho_assumed), name,
                            _g(p.bias), _g(p.se), _g(res.weight_p5), _g(res.weight_p95),
                            res.reps_failed])


def write_plot_data(results, target):
    """Per-replicate estimates in long form, for box plots of the estimate distribution."""
    with _text_out(target) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("scenario", "rho", "replicate", "param", "estimate", "truth"))
        for res in results:
            for i, row in enumerate(res.estimates):
                for j, name in enumerate(PARAMS):
                    w.writerow([res.scenario or "", _g(res.rho_assumed), i, name, _g(row[j]),
                                _g(res.params[name].truth)])


# ------------------------------------------------------------------ sweep


def sensitivity_sweep(dataset, rho_grid, **options):
    """Balanced estimates over a grid of ``rho`` values, in grid order.

    Each tilt solve starts from the solution at the previous grid point; the
    first uses the solver's default start. ``options`` are passed to
    :func:`estimate_balanced`.
    """
    grid = [float(r) for r in rho_grid]
    if not grid:
        raise ValueError("rho grid is empty")
    if any(not 0.0 < r <= 1.0 for r in grid):
        raise ValueError("rho values must lie in (0, 1]")
    options = dict(options)
    start = options.pop("start", None)
    out = []
    for rho in grid:
        res = estimate_balanced(dataset, rho, start=start, **options)
        out.append(res)
        lam = None if res.models is None else res.models.lam
        start = None if lam is None else lam.copy()
    return out


def parse_rho_grid(text):
    """Parse ``lo:hi:step`` into an inclusive grid (endpoint kept within 1e-12)."""
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise ValueError(f"rho grid must look like lo:hi:step, got {text!r}") from None
    if step <= 0 or hi < lo:
        raise ValueError("rho grid needs step > 0 and hi >= lo")
    count = int(np.floor((hi - lo) / step + 1e-12 / step)) + 1
    grid = [lo + i * step for i in range(count)]
    if abs(grid[-1] - hi) <= 1e-12:
        grid[-1] = hi
    return [round(g, 12) for g in grid]
