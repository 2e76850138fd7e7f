"""Point estimators: balanced (tilted IPW), treatment policy, and hypothetical.

All arm means are self-normalised (Hajek) inverse-probability-weighted
averages, so rescaling every weight by a constant leaves them unchanged.
"""

import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .errors import AllSwitchers, MissingL, SwitchingImbalanceWarning
from .logistic import LogisticFit, clamp_prob, fit_logistic, fit_propensity, propensity_scores
from .tilt import (
    SwitchModels,
    Variant,
    omega_design,
    q_terms,
    solve_lambda,
    tilt_exponent,
    tilt_weights,
)


class Estimand(str, Enum):
    BALANCED = "balanced"
    BALANCED_FLIPPED = "balanced_flipped"
    TREATMENT_POLICY = "treatment_policy"
    HYPOTHETICAL = "hypothetical"


@dataclass(frozen=True)
class EstimateResult:
    """Arm means and their difference, with optional uncertainty and diagnostics.

    For the flipped balanced estimand the arms are relabelled first, so
    ``mu1`` is the mean under the original control arm with switching as
    under the original active arm and ``mu0`` the original active-arm mean;
    ``mu`` then targets ``E(Y^{0S^1} - Y^1)`` on the original labels. Report
    ``-mu`` for ``E(Y^1 - Y^{0S^1})``.
    """

    estimand: Estimand
    mu1: float
    mu0: float
    mu: float
    se: Optional[float] = None
    se_mu1: Optional[float] = None
    se_mu0: Optional[float] = None
    se_method: Optional[str] = None
    ci: Optional[tuple] = None
    weight_p5: Optional[float] = None
    weight_p95: Optional[float] = None
    options: dict = field(default_factory=dict)
    warnings: tuple = ()
    models: Optional[SwitchModels] = field(default=None, repr=False, compare=False)
    propensity: Optional[LogisticFit] = field(default=None, repr=False, compare=False)

    @property
    def truncated(self):
        return self.options.get("truncation") is not None

    def with_uncertainty(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        out = {
            "estimand": self.estimand.value,
            "mu1": self.mu1,
            "mu0": self.mu0,
            "mu": self.mu,
            "se": self.se,
            "se_mu1": self.se_mu1,
            "se_mu0": self.se_mu0,
            "se_method": self.se_method,
            "ci": None if self.ci is None else list(self.ci),
            "weight_p5": self.weight_p5,
            "weight_p95": self.weight_p95,
            "options": dict(self.options),
            "warnings": list(self.warnings),
        }
        if self.models is not None:
            m = self.models
            out["models"] = {
                "omega": None if m.omega is None else m.omega.coefficients.tolist(),
                "lambda": None if m.lam is None else m.lam.tolist(),
                "rho": m.rho,
                "variant": m.variant.value,
                "solver_iterations": m.iterations,
                "residual_norm": m.residual_norm,
            }
        return out


def nearest_rank(values, pct):
    """Nearest-rank percentile: the smallest value with at least ``pct``% at or below it."""
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        raise ValueError("percentile of an empty sample")
    if pct <= 0:
        return float(x[0])
    rank = math.ceil(pct * x.size / 100.0 - 1e-9)
    return float(x[min(max(rank, 1), x.size) - 1])


def truncate_weights(weights, lower_pct, upper_pct):
    """Clamp weights into their empirical ``[P_lower, P_upper]`` nearest-rank percentiles."""
    if not 0 <= lower_pct < upper_pct <= 100:
        raise ValueError("need 0 <= lower_pct < upper_pct <= 100")
    w = np.asarray(weights, dtype=float)
    return np.clip(w, nearest_rank(w, lower_pct), nearest_rank(w, upper_pct))


def compute_weight(record, models: SwitchModels):
    """Tilt weight ``exp(S q) / (l (exp(q) - 1) + 1)`` for one treated record."""
    if record.r != 1:
        raise ValueError("weights are defined for treated records only")
    if record.l is None:
        raise MissingL("treated record has no post-treatment covariates")
    if models.treated_degenerate:
        return 1.0
    w1, w2, w3 = models.omega_parts
    eta = w1 + float(np.dot(w2, record.c)) + float(np.dot(w3, record.l))
    lprob = float(clamp_prob(1.0 / (1.0 + math.exp(-eta)) if eta > -700 else 0.0))
    if models.control_degenerate:
        return 0.0 if record.s else 1.0 / (1.0 - lprob)
    q0, q1 = q_terms(record.l, record.c, models)
    w_switch, w_stay = tilt_weights(q0 + q1, lprob)
    return float(w_switch if record.s else w_stay)


def switch_weights(dataset, models: SwitchModels):
    """Weights for every record; control records get weight 0 (they are never used)."""
    n = len(dataset)
    t = dataset.treated
    if models.treated_degenerate:
        w = np.ones(n)
    else:
        lprob = clamp_prob(models.omega.predict(omega_design(dataset)))
        if models.control_degenerate:
            w = np.where(dataset.s == 1, 0.0, 1.0 / (1.0 - lprob))
        else:
            q, lprob = tilt_exponent(models.lam, dataset, models.omega, models.rho, models.n_c)
            w_switch, w_stay = tilt_weights(q, lprob)
            w = np.where(dataset.s == 1, w_switch, w_stay)
    return np.where(t, w, 0.0)


def _hajek(y, w):
    return float(np.sum(y * w) / np.sum(w))


def _weight_percentiles(w_treated):
    norm = w_treated / np.mean(w_treated)
    return nearest_rank(norm, 5), nearest_rank(norm, 95)


def fit_switch_models(dataset, rho, propensity, variant=Variant.NON_SWITCHER, start=None):
    """Steps 1-2: treated-arm switching fit and control-arm tilt solve.

    Returns ``(models, messages)``. An arm without switchers gets switching
    probability fixed at 0 instead of a (divergent) logistic fit, and a
    message is produced recommending the arm-flipped estimand when it is the
    treated arm.
    """
    variant = Variant(variant)
    t, k = dataset.treated, dataset.control
    n_c = dataset.c.shape[1]
    messages = []
    treated_sw = int(dataset.s[t].sum())
    control_sw = int(dataset.s[k].sum())
    if treated_sw == 0:
        if control_sw > 0:
            messages.append(
                "treated arm has no switchers while the control arm has "
                f"{control_sw}; the control-arm switching law given L cannot be identified "
                "and all weights are set to 1. Consider the arm-flipped estimand (flip=True)."
            )
        return SwitchModels(omega=None, lam=None, rho=float(rho), n_c=n_c, variant=variant), messages
    omega = fit_logistic(dataset.s[t], omega_design(dataset)[t],
                         labels=dataset.c_names + dataset.l_names)
    if control_sw == 0:
        messages.append(
            "control arm has no switchers; its switching probability is fixed at 0 "
            "(treated switchers get weight 0)."
        )
        return SwitchModels(omega=omega, lam=None, rho=float(rho), n_c=n_c, variant=variant), messages
    return solve_lambda(dataset, omega, rho, propensity, variant, start=start), messages


def estimate_balanced(dataset, rho, variant=Variant.NON_SWITCHER, truncation=None,
                      propensity_covariates=(), flip=False, start=None,
                      models: Optional[SwitchModels] = None) -> EstimateResult:
    """Tilted-IPW estimate of the balanced estimand ``E(Y^{1S^0} - Y^0)``.

    Parameters
    ----------
    dataset : TrialDataset
        Every treated record (after any flip) must carry L.
    rho : float in (0, 1]
        Dilution factor of the L-association with switching in the control arm.
    variant : ``"nonswitcher"`` (default) or ``"switcher"`` moment equations.
    truncation : optional ``(lo, hi)`` percentiles for clamping treated weights.
    propensity_covariates : baseline covariates for ``P(R=1|C)``; empty means
        the sample proportion.
    flip : relabel arms first, targeting ``E(Y^{0S^1} - Y^1)`` (see :class:`EstimateResult`).
    start : starting value for the tilt solve (vector, ``"omega"`` or None).
    models : pre-fitted switching models; skips steps 1-2 when given.
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    variant = Variant(variant)
    if flip:
        dataset.require_l(0)
        d = dataset.flip_arms()
    else:
        d = dataset
        d.require_l(1)
    propensity = fit_propensity(d, propensity_covariates)
    pi = clamp_prob(propensity_scores(propensity, d))

    messages = []
    if models is None:
        models, messages = fit_switch_models(d, rho, propensity, variant, start)
    for msg in messages:
        warnings.warn(msg, SwitchingImbalanceWarning, stacklevel=2)

    t = d.treated
    w = switch_weights(d, models)
    p5, p95 = _weight_percentiles(w[t])
    if truncation is not None:
        lo, hi = truncation
        w = w.copy()
        w[t] = truncate_weights(w[t], lo, hi)
    r = d.r.astype(float)
    mu1 = _hajek(d.y, r * w / pi)
    mu0 = _hajek(d.y, (1 - r) / (1 - pi))
    return EstimateResult(
        estimand=Estimand.BALANCED_FLIPPED if flip else Estimand.BALANCED,
        mu1=mu1,
        mu0=mu0,
        mu=mu1 - mu0,
        weight_p5=p5,
        weight_p95=p95,
        options={
            "rho": float(rho),
            "variant": variant.value,
            "truncation": None if truncation is None else [float(truncation[0]), float(truncation[1])],
            "propensity_covariates": list(propensity_covariates),
            "flip": bool(flip),
        },
        warnings=tuple(messages),
        models=models,
        propensity=propensity,
    )


def estimate_treatment_policy(dataset, propensity_covariates=()) -> EstimateResult:
    """Propensity-weighted difference of arm means, ignoring switching."""
    propensity = fit_propensity(dataset, propensity_covariates)
    pi = clamp_prob(propensity_scores(propensity, dataset))
    r = dataset.r.astype(float)
    mu1 = _hajek(dataset.y, r / pi)
    mu0 = _hajek(dataset.y, (1 - r) / (1 - pi))
    return EstimateResult(
        estimand=Estimand.TREATMENT_POLICY,
        mu1=mu1,
        mu0=mu0,
        mu=mu1 - mu0,
        options={"propensity_covariates": list(propensity_covariates)},
        propensity=propensity,
    )


def estimate_hypothetical(dataset, propensity_covariates=()) -> EstimateResult:
    """IPW estimate of ``E(Y^{10} - Y^{00})`` from non-switchers.

    Each arm gets its own logistic model for switching given (C, L); an arm
    with no switchers has switching probability fixed at 0. Weight
    percentiles are reported for treated non-switchers.
    """
    dataset.require_l(1)
    dataset.require_l(0)
    propensity = fit_propensity(dataset, propensity_covariates)
    pi = clamp_prob(propensity_scores(propensity, dataset))
    X = omega_design(dataset)
    stay_prob = np.ones(len(dataset))
    for arm in (1, 0):
        mask = dataset.r == arm
        s_arm = dataset.s[mask]
        if np.all(s_arm == 1):
            raise AllSwitchers(f"arm R={arm} has no non-switchers")
        if np.any(s_arm == 1):
            fit = fit_logistic(s_arm, X[mask], labels=dataset.c_names + dataset.l_names)
            stay_prob[mask] = clamp_prob(1.0 - fit.predict(X[mask]))
    r = dataset.r.astype(float)
    stay = 1.0 - dataset.s.astype(float)
    w1 = r * stay / (pi * stay_prob)
    w0 = (1 - r) * stay / ((1 - pi) * stay_prob)
    mu1 = _hajek(dataset.y, w1)
    mu0 = _hajek(dataset.y, w0)
    treated_stay = (dataset.r == 1) & (dataset.s == 0)
    p5, p95 = _weight_percentiles(1.0 / stay_prob[treated_stay])
    return EstimateResult(
        estimand=Estimand.HYPOTHETICAL,
        mu1=mu1,
        mu0=mu0,
        mu=mu1 - mu0,
        weight_p5=p5,
        weight_p95=p95,
        options={"propensity_covariates": list(propensity_covariates)},
        propensity=propensity,
    )
