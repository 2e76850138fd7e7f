"""Control-arm switching model identified through an exponential tilt.

The treated-arm switching model is ``P(S=1|L,R=1,C) = expit(w1 + w2'C + w3'L)``.
The control-arm law, conditional on the treated-arm covariate value ``L``,
is ``expit(lam1 + lam2'C + rho * w3'L)``; equivalently the treated law tilted
by ``exp(q0 + q1)`` with

    q0 = lam1 - w1 + (lam2 - w2)'C,     q1 = (rho - 1) w3'L.

``rho`` is fixed by the analyst; ``lam`` is found by solving moment
equations that match the observed control-arm switching rates.
"""

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import numpy as np

from .errors import DegenerateArm, DimensionMismatch, NonConvergence
from .logistic import LogisticFit, clamp_prob, expit, propensity_scores

RESIDUAL_TOL = 1e-8
MAX_ITER = 200
FD_STEP = 1e-6
POLISH_STEPS = 2
MAX_STEP = 5.0


class Variant(str, Enum):
    """Which records drive the moment equations for ``lam``."""

    NON_SWITCHER = "nonswitcher"
    SWITCHER = "switcher"


@dataclass(frozen=True)
class SwitchModels:
    """Fitted treated-arm model, solved control-arm intercept/slopes, and ``rho``.

    ``omega`` is None when the treated arm has no switchers (switching
    probability fixed at 0 there); ``lam`` is None when the control arm has
    none. ``n_c`` is the number of baseline covariates, used to split the
    treated-arm coefficients into intercept, C-slopes and L-slopes.
    """

    omega: Optional[LogisticFit]
    lam: Optional[np.ndarray]
    rho: float
    n_c: int
    variant: Variant = Variant.NON_SWITCHER
    converged: bool = True
    residual_norm: float = 0.0
    iterations: int = 0

    def __post_init__(self):
        if self.lam is not None:
            lam = np.asarray(self.lam, dtype=float).reshape(-1)
            if lam.shape[0] != 1 + self.n_c:
                raise DimensionMismatch(f"lambda must have {1 + self.n_c} entries, got {lam.shape[0]}")
            object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def omega_parts(self):
        """(intercept, C-slopes, L-slopes) of the treated-arm model."""
        w = self.omega.coefficients
        return w[0], w[1:1 + self.n_c], w[1 + self.n_c:]

    @property
    def treated_degenerate(self):
        return self.omega is None

    @property
    def control_degenerate(self):
        return self.lam is None


def omega_design(dataset):
    """Covariates for the treated-arm switching model: C columns then L columns."""
    return np.hstack([dataset.c, dataset.l_filled])


def q_terms(l, c, models: SwitchModels):
    """Tilt exponents ``(q0, q1)`` for a single record.

    ``exp(q0 + q1)`` is the control-versus-treated odds ratio of switching
    at ``(l, c)``.
    """
    w1, w2, w3 = models.omega_parts
    l = np.atleast_1d(np.asarray(l, dtype=float))
    c = np.atleast_1d(np.asarray(c, dtype=float)) if models.n_c else np.zeros(0)
    if c.shape[0] != w2.shape[0] or l.shape[0] != w3.shape[0]:
        raise DimensionMismatch("covariate dimensions do not match the fitted models")
    lam = models.lam
    q0 = lam[0] - w1 + float(np.dot(lam[1:] - w2, c))
    q1 = (models.rho - 1.0) * float(np.dot(w3, l))
    return float(q0), float(q1)


def tilt_weights(q, lprob):
    """Switcher and non-switcher weights for tilt exponent ``q``.

    Evaluates ``exp(q) / (l (exp(q) - 1) + 1)`` and ``1 / (l (exp(q) - 1) + 1)``
    without overflow; both are exactly 1 when ``q == 0``.
    """
    q = np.asarray(q, dtype=float)
    l = np.asarray(lprob, dtype=float)
    big = q > 0
    with np.errstate(over="ignore"):
        e_neg = np.exp(-np.where(big, q, 0.0))
        denom_small = 1.0 + l * np.expm1(np.where(big, 0.0, q))
        denom_big = l + (1.0 - l) * e_neg
        w_switch = np.where(big, 1.0 / denom_big, np.exp(np.where(big, 0.0, q)) / denom_small)
        w_stay = np.where(big, e_neg / denom_big, 1.0 / denom_small)
    return w_switch, w_stay


def tilt_exponent(lam, dataset, omega: LogisticFit, rho, n_c=None):
    """Vector of ``q0 + q1`` and the clamped treated-arm switching probability."""
    n_c = dataset.c.shape[1] if n_c is None else n_c
    w = omega.coefficients
    w1, w2, w3 = w[0], w[1:1 + n_c], w[1 + n_c:]
    lam = np.asarray(lam, dtype=float)
    L = dataset.l_filled
    q = lam[0] - w1 + dataset.c @ (lam[1:] - w2) + (rho - 1.0) * (L @ w3)
    lprob = clamp_prob(omega.predict(omega_design(dataset)))
    return q, lprob


def _check_dims(lam, dataset, omega):
    k = 1 + dataset.c.shape[1]
    if np.asarray(lam).reshape(-1).shape[0] != k:
        raise DimensionMismatch(f"lambda must have {k} entries")
    if omega.coefficients.shape[0] != k + dataset.l.shape[1]:
        raise DimensionMismatch("treated-arm model does not match the dataset's C and L columns")


def lambda_residual(lam, dataset, omega: LogisticFit, rho, propensity: LogisticFit,
                    variant=Variant.NON_SWITCHER):
    """Moment-equation residual ``sum_i (1, C_i) * (control term - tilted treated term)``.

    Uses non-switcher records (``1 - S``) for the non-switcher variant and
    switcher records for the switcher variant, each weighted by the inverse
    fitted propensity.
    """
    variant = Variant(variant)
    dataset.require_l(1)
    _check_dims(lam, dataset, omega)
    pi = clamp_prob(propensity_scores(propensity, dataset))
    q, lprob = tilt_exponent(lam, dataset, omega, rho)
    w_switch, w_stay = tilt_weights(q, lprob)
    r = dataset.r.astype(float)
    s = dataset.s.astype(float)
    if variant is Variant.NON_SWITCHER:
        term = (1 - r) * (1 - s) / (1 - pi) - r * (1 - s) * w_stay / pi
    else:
        term = (1 - r) * s / (1 - pi) - r * s * w_switch / pi
    psi = np.hstack([np.ones((len(dataset), 1)), dataset.c])
    return psi.T @ term


def _fd_jacobian(fun, x, f0):
    k = x.shape[0]
    J = np.empty((f0.shape[0], k))
    for j in range(k):
        h = FD_STEP * (1.0 + abs(x[j]))
        xp = x.copy()
        xp[j] += h
        J[:, j] = (fun(xp) - f0) / h
    return J


def newton_solve(fun, x0, tol=RESIDUAL_TOL, max_iter=MAX_ITER):
    """Newton iteration with forward-difference Jacobian and step halving.

    Steps are halved until the Euclidean residual norm decreases (a Newton
    step is a descent direction for it). Convergence is judged on the
    max-norm. Returns ``(x, residual_maxnorm, iterations, converged)``.
    """
    x = np.asarray(x0, dtype=float).copy()
    f = fun(x)
    merit = float(np.linalg.norm(f)) if np.all(np.isfinite(f)) else np.inf
    it = 0
    polish = POLISH_STEPS
    while it < max_iter:
        if np.max(np.abs(f)) < tol:
            # a few extra steps push the root to working precision
            if polish == 0:
                break
            polish -= 1
        it += 1
        J = _fd_jacobian(fun, x, f)
        try:
            step = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -f, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            break
        # cap the step so one iteration cannot jump into the region where weights saturate
        size = np.max(np.abs(step))
        if size > MAX_STEP:
            step *= MAX_STEP / size
        t = 1.0
        accepted = False
        while t > 1e-12:
            cand = x + t * step
            fc = fun(cand)
            if np.all(np.isfinite(fc)):
                mc = float(np.linalg.norm(fc))
                if mc < merit:
                    x, f, merit = cand, fc, mc
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            break
    norm = float(np.max(np.abs(f)))
    return x, norm, it, norm < tol


def solve_lambda(dataset, omega: LogisticFit, rho, propensity: LogisticFit,
                 variant=Variant.NON_SWITCHER, start=None) -> SwitchModels:
    """Solve the moment equations for the control-arm coefficients ``lam``.

    ``start`` is a vector, ``"omega"`` (warm start from the treated-arm
    intercept and C-slopes) or None for zeros; if Newton fails from it, zeros
    and the treated-arm coefficients are tried next. Raises :class:`DegenerateArm`
    when the records the chosen variant relies on are absent, and
    :class:`NonConvergence` (carrying the best iterate as ``.result``) when
    the residual max-norm does not fall below 1e-8.
    """
    variant = Variant(variant)
    dataset.require_l(1)
    n_c = dataset.c.shape[1]
    t, k = dataset.treated, dataset.control
    if dataset.s[t].sum() == 0:
        raise DegenerateArm("treated arm has no switchers; the tilt is not identified")
    need = 1 if variant is Variant.SWITCHER else 0
    for arm, mask in (("treated", t), ("control", k)):
        if not np.any(dataset.s[mask] == need):
            kind = "switchers" if need else "non-switchers"
            raise DegenerateArm(f"{arm} arm has no {kind}, required by the {variant.value} equations")

    if start is None:
        x0 = np.zeros(1 + n_c)
    elif isinstance(start, str) and start == "omega":
        x0 = omega.coefficients[: 1 + n_c].copy()
    else:
        x0 = np.asarray(start, dtype=float).reshape(-1)
    _check_dims(x0, dataset, omega)

    # hoist the parts of the residual that do not depend on lam
    pi = clamp_prob(propensity_scores(propensity, dataset))
    w = omega.coefficients
    w1, w2, w3 = w[0], w[1:1 + n_c], w[1 + n_c:]
    base = -w1 - dataset.c @ w2 + (rho - 1.0) * (dataset.l_filled @ w3)
    lprob = clamp_prob(omega.predict(omega_design(dataset)))
    r = dataset.r.astype(float)
    s = dataset.s.astype(float)
    psi = np.hstack([np.ones((len(dataset), 1)), dataset.c])
    if variant is Variant.NON_SWITCHER:
        sel_c, sel_t = (1 - r) * (1 - s), r * (1 - s)
    else:
        sel_c, sel_t = (1 - r) * s, r * s
    ctrl = psi.T @ (sel_c / (1 - pi))
    treated_rows = sel_t > 0
    psi_t = psi[treated_rows]
    coef_t = (sel_t / pi)[treated_rows]
    base_t = base[treated_rows]
    c_t = dataset.c[treated_rows]
    l_t = lprob[treated_rows]
    pick = 0 if variant is Variant.SWITCHER else 1

    def fun(lam):
        q = lam[0] + c_t @ lam[1:] + base_t
        wt = tilt_weights(q, l_t)[pick]
        return ctrl - psi_t.T @ (coef_t * wt)

    lam, norm, it, ok = newton_solve(fun, x0)
    # fall back to the default starts; the treated-arm coefficients share the scale of lam
    for alt in (np.zeros(1 + n_c), omega.coefficients[: 1 + n_c].copy()):
        if ok:
            break
        if np.array_equal(alt, x0):
            continue
        lam2, norm2, it2, ok2 = newton_solve(fun, alt)
        it += it2
        if ok2 or norm2 < norm:
            lam, norm, ok = lam2, norm2, ok2
    models = SwitchModels(omega=omega, lam=lam, rho=float(rho), n_c=n_c, variant=variant,
                          converged=ok, residual_norm=norm, iterations=it)
    if not ok:
        raise NonConvergence(
            f"lambda equations not solved: residual {norm:.3g} after {it} iterations; "
            "they may have no solution for these data", result=models)
    return models
