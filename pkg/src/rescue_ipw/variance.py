"""Standard errors: influence-function sandwich for the balanced estimator and a stratified bootstrap.

The influence function stacks every estimating equation behind the balanced
estimate (propensity score, treated-arm switching fit, tilt equations, and
the two Hajek means) and replaces each population expectation by the
full-sample mean at the fitted parameters.
"""

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    AllSwitchers,
    DataError,
    DegenerateArm,
    NonConvergence,
    RankDeficientDesign,
    SwitchingImbalanceWarning,
    TooManyFailures,
    TruncationUnsupported,
)
from .estimators import (
    Estimand,
    EstimateResult,
    estimate_balanced,
    estimate_hypothetical,
    estimate_treatment_policy,
    nearest_rank,
    switch_weights,
)
from .logistic import LogisticFit, propensity_design, with_intercept
from .rng import stream
from .tilt import SwitchModels, Variant, omega_design, tilt_exponent, tilt_weights

MAX_FAILURE_SHARE = 0.10

# replicate failures that are dropped rather than propagated
REPLICATE_FAILURES = (NonConvergence, DegenerateArm, AllSwitchers, RankDeficientDesign, DataError)


# ------------------------------------------------------------ influence function


@dataclass(frozen=True)
class WeightDerivatives:
    """Per-record ``W/pi`` for treated records and its gradients.

    Rows of control records are zero. ``d_lambda`` is None when the control
    arm has no switchers; ``d_lambda`` and ``d_omega`` are None when the
    treated arm has none (weights are then identically 1).
    """

    w_over_pi: np.ndarray
    d_lambda: Optional[np.ndarray]
    d_omega: Optional[np.ndarray]
    d_theta: np.ndarray


def _theta_parts(dataset, propensity: LogisticFit):
    x_theta = with_intercept(propensity_design(propensity, dataset))
    eta = x_theta @ propensity.coefficients
    return x_theta, eta


def weight_derivatives(dataset, models: SwitchModels, propensity: LogisticFit) -> WeightDerivatives:
    """Analytic derivatives of ``R W / pi`` with respect to lam, omega and theta.

    With ``p1`` the treated-arm switching probability and ``p0`` its tilted
    control-arm counterpart, switchers carry ``W = p0 / p1`` and
    non-switchers ``W = (1 - p0) / (1 - p1)``; ``1 / pi = 1 + exp(-eta)``.
    """
    x_theta, eta = _theta_parts(dataset, propensity)
    r = dataset.r.astype(float)
    s = dataset.s.astype(float)
    inv_pi = 1.0 + np.exp(-eta)
    w = switch_weights(dataset, models)
    w_over_pi = r * w * inv_pi
    d_theta = -(r * w * np.exp(-eta))[:, None] * x_theta
    if models.treated_degenerate:
        return WeightDerivatives(w_over_pi, None, None, d_theta)

    x_omega = with_intercept(omega_design(dataset))
    p1 = models.omega.predict(omega_design(dataset))
    k_l = dataset.l.shape[1]
    l_part = np.zeros_like(x_omega)
    l_part[:, x_omega.shape[1] - k_l:] = dataset.l_filled
    if models.control_degenerate:
        w_sw = np.zeros_like(p1)
        w_st = 1.0 / (1.0 - p1)
        p0 = np.zeros_like(p1)
        d_lambda = None
    else:
        q, _ = tilt_exponent(models.lam, dataset, models.omega, models.rho, models.n_c)
        w_sw, w_st = tilt_weights(q, p1)
        p0 = w_sw * p1
        psi = np.hstack([np.ones((len(dataset), 1)), dataset.c])
        dw = np.where(s == 1, w_sw * (1.0 - p0), -w_st * p0)
        d_lambda = (r * inv_pi * dw)[:, None] * psi
    rho = models.rho
    dw_sw = w_sw[:, None] * (rho * (1.0 - p0)[:, None] * l_part - (1.0 - p1)[:, None] * x_omega)
    dw_st = w_st[:, None] * (p1[:, None] * x_omega - rho * p0[:, None] * l_part)
    d_omega = (r * inv_pi)[:, None] * np.where((s == 1)[:, None], dw_sw, dw_st)
    return WeightDerivatives(w_over_pi, d_lambda, d_omega, d_theta)


@dataclass(frozen=True)
class IFComponents:
    """Per-record influence values and the intermediate blocks that produce them."""

    phi_mu1: np.ndarray
    phi_mu0: np.ndarray
    phi_mu: np.ndarray
    info_omega: Optional[np.ndarray]
    info_theta: np.ndarray
    phi_lambda: Optional[np.ndarray]
    derivatives: WeightDerivatives = field(repr=False)


def _mean_outer(a, b):
    return a.T @ b / a.shape[0]


def influence_components(dataset, result: EstimateResult) -> IFComponents:
    """Influence values for a balanced-estimator fit.

    ``dataset`` is the data the fit was computed on (before any arm flip;
    the flip recorded in ``result.options`` is re-applied here).
    """
    if result.estimand not in (Estimand.BALANCED, Estimand.BALANCED_FLIPPED):
        raise ValueError("influence-function SEs are available for the balanced estimator only")
    if result.truncated:
        raise TruncationUnsupported("influence-function SEs assume untruncated weights; use the bootstrap")
    if result.models is None or result.propensity is None:
        raise ValueError("result carries no fitted models")
    d = dataset.flip_arms() if result.options.get("flip") else dataset
    models, propensity = result.models, result.propensity
    n = len(d)
    r = d.r.astype(float)
    s = d.s.astype(float)
    y = d.y

    der = weight_derivatives(d, models, propensity)
    x_theta, eta = _theta_parts(d, propensity)
    pi = 1.0 / (1.0 + np.exp(-eta))
    score_theta = x_theta * (r - pi)[:, None]
    info_theta = _mean_outer(score_theta, score_theta)
    phi_theta = np.linalg.solve(info_theta, score_theta.T).T

    info_omega = phi_omega = phi_lambda = None
    if not models.treated_degenerate:
        x_omega = with_intercept(omega_design(d))
        p1 = models.omega.predict(omega_design(d))
        score_omega = x_omega * (r * (s - p1))[:, None]
        info_omega = _mean_outer(score_omega, score_omega)
        phi_omega = np.linalg.solve(info_omega, score_omega.T).T

    if der.d_lambda is not None:
        psi = np.hstack([np.ones((n, 1)), d.c])
        if models.variant is Variant.NON_SWITCHER:
            sel_c, sel_t = (1 - r) * (1 - s), r * (1 - s)
        else:
            sel_c, sel_t = (1 - r) * s, r * s
        u_lambda = psi * (sel_c / (1 - pi) - sel_t * der.w_over_pi)[:, None]
        b_ll = -_mean_outer(psi * sel_t[:, None], der.d_lambda)
        b_lw = -_mean_outer(psi * sel_t[:, None], der.d_omega)
        d_inv_ctrl = (sel_c * np.exp(eta))[:, None] * x_theta
        b_lt = _mean_outer(psi, d_inv_ctrl - sel_t[:, None] * der.d_theta)
        stacked = u_lambda + phi_omega @ b_lw.T + phi_theta @ b_lt.T
        phi_lambda = -np.linalg.solve(b_ll, stacked.T).T

    resid1 = y - result.mu1
    num1 = der.w_over_pi * resid1 + phi_theta @ (der.d_theta.T @ resid1 / n)
    if phi_omega is not None:
        num1 = num1 + phi_omega @ (der.d_omega.T @ resid1 / n)
    if phi_lambda is not None:
        num1 = num1 + phi_lambda @ (der.d_lambda.T @ resid1 / n)
    phi_mu1 = num1 / np.mean(der.w_over_pi)

    inv_ctrl = (1 - r) / (1 - pi)
    resid0 = y - result.mu0
    d_inv_ctrl_theta = ((1 - r) * np.exp(eta))[:, None] * x_theta
    num0 = inv_ctrl * resid0 + phi_theta @ (d_inv_ctrl_theta.T @ resid0 / n)
    phi_mu0 = num0 / np.mean(inv_ctrl)

    return IFComponents(phi_mu1, phi_mu0, phi_mu1 - phi_mu0, info_omega, info_theta,
                        phi_lambda, der)


def _if_se(phi):
    # plug-in variance: the mean of phi^2, so duplicating records halves it exactly
    return float(np.sqrt(np.mean(phi ** 2) / phi.shape[0]))


def influence_se_balanced(dataset, result: EstimateResult):
    """Influence-function standard errors ``(se_mu1, se_mu0, se_mu)`` for a balanced fit.

    Raises :class:`TruncationUnsupported` for fits with truncated weights.
    """
    comp = influence_components(dataset, result)
    return _if_se(comp.phi_mu1), _if_se(comp.phi_mu0), _if_se(comp.phi_mu)


# --------------------------------------------------------------------- bootstrap


@dataclass(frozen=True)
class EstimatorSpec:
    """An estimand plus the keyword options of its estimator."""

    estimand: Estimand
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "estimand", Estimand(self.estimand))
        object.__setattr__(self, "options", dict(self.options))

    def run(self, dataset, start=None) -> EstimateResult:
        opts = dict(self.options)
        if self.estimand in (Estimand.BALANCED, Estimand.BALANCED_FLIPPED):
            opts["flip"] = self.estimand is Estimand.BALANCED_FLIPPED
            if start is not None:
                opts["start"] = start
            return estimate_balanced(dataset, **opts)
        if self.estimand is Estimand.TREATMENT_POLICY:
            return estimate_treatment_policy(dataset, **opts)
        return estimate_hypothetical(dataset, **opts)


@dataclass(frozen=True)
class BootstrapResult:
    se: float
    ci: tuple
    replicates: np.ndarray
    replicates_mu1: np.ndarray
    replicates_mu0: np.ndarray
    se_mu1: float
    se_mu0: float
    failures: int
    B: int


def _stratum_groups(dataset, strata):
    if strata is None:
        strata = dataset.strata
    elif isinstance(strata, str) and strata == "arm":
        strata = dataset.r
    if strata is None:
        return [np.arange(len(dataset))]
    labels = np.asarray(strata, dtype=object).reshape(-1)
    if labels.shape[0] != len(dataset):
        raise ValueError("strata must have one label per record")
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(lab, []).append(i)
    return [np.asarray(ix) for ix in groups.values()]


def resample_indices(groups, seed, replicate):
    """Record indices of bootstrap replicate ``replicate``, drawn within each stratum."""
    rng = stream(seed, replicate)
    return np.concatenate([g[rng.integers(0, g.shape[0], size=g.shape[0])] for g in groups])


def _replicate(dataset, spec, groups, seed, b, start):
    idx = resample_indices(groups, seed, b)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SwitchingImbalanceWarning)
            res = spec.run(dataset.take(idx), start=start)
    except REPLICATE_FAILURES:
        return None
    return res.mu1, res.mu0, res.mu


def _run_chunk(args):
    dataset, spec, groups, seed, indices, start = args
    return [_replicate(dataset, spec, groups, seed, b, start) for b in indices]


def bootstrap(dataset, spec: EstimatorSpec, B, seed, strata=None, jobs=1) -> BootstrapResult:
    """Nonparametric bootstrap re-running the whole estimation pipeline per replicate.

    Parameters
    ----------
    strata : None (use ``dataset.strata`` if present, else one stratum),
        ``"arm"``, or one label per record. Each stratum keeps its size in
        every resample.
    jobs : worker processes; results do not depend on it.

    The SE is the sample standard deviation of the replicate estimates and
    the CI their nearest-rank 2.5 and 97.5 percentiles. Replicates whose fit
    fails are dropped; more than 10% failures raises :class:`TooManyFailures`.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    groups = _stratum_groups(dataset, strata)
    if any(g.shape[0] == 0 for g in groups):
        raise ValueError("empty stratum")
    start = None
    if spec.estimand in (Estimand.BALANCED, Estimand.BALANCED_FLIPPED):
        try:
            full = spec.run(dataset)
            if full.models is not None and full.models.lam is not None:
                start = full.models.lam.copy()
        except REPLICATE_FAILURES:
            start = None

    if jobs is None or jobs <= 1:
        out = _run_chunk((dataset, spec, groups, seed, range(B), start))
    else:
        chunks = np.array_split(np.arange(B), min(jobs * 4, B))
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = pool.map(_run_chunk, [(dataset, spec, groups, seed, list(c), start)
                                          for c in chunks])
            out = [x for part in parts for x in part]

    ok = [x for x in out if x is not None]
    failures = B - len(ok)
    if failures > MAX_FAILURE_SHARE * B or len(ok) < 2:
        raise TooManyFailures(f"{failures} of {B} bootstrap replicates failed")
    arr = np.asarray(ok, dtype=float)
    mu = arr[:, 2]
    return BootstrapResult(
        se=float(np.std(mu, ddof=1)),
        ci=(nearest_rank(mu, 2.5), nearest_rank(mu, 97.5)),
        replicates=mu,
        replicates_mu1=arr[:, 0],
        replicates_mu0=arr[:, 1],
        se_mu1=float(np.std(arr[:, 0], ddof=1)),
        se_mu0=float(np.std(arr[:, 1], ddof=1)),
        failures=failures,
        B=B,
    )
