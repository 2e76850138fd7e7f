"""Expit-linear probability models fitted by damped Newton-Raphson."""

from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence, RankDeficientDesign

# bounds for fitted probabilities inside weight denominators only
PROB_FLOOR = 1e-12
PROB_CEIL = 1.0 - 1e-12

SCORE_TOL = 1e-10
MAX_ITER = 100
SEPARATION_BOUND = 30.0


def expit(x):
    """Logistic function, saturating cleanly at 0 and 1 for large ``|x|``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    with np.errstate(over="ignore"):
        ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def clamp_prob(p):
    return np.clip(p, PROB_FLOOR, PROB_CEIL)


def with_intercept(design):
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design.reshape(-1, 1)
    return np.hstack([np.ones((design.shape[0], 1)), design])


def _loglik(X, y, beta):
    eta = X @ beta
    # log(1 + e^eta) computed without overflow
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


@dataclass(frozen=True)
class LogisticFit:
    """Fitted coefficients (intercept first) of ``P(y=1|x) = expit(b0 + x'b)``."""

    coefficients: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float
    design_labels: tuple = ()

    def linear_predictor(self, design):
        return with_intercept(design) @ self.coefficients

    def predict(self, design):
        return expit(self.linear_predictor(design))

    def score(self, outcome, design):
        """Per-record score vectors ``x_i (y_i - p_i)`` as an (n, k) array."""
        X = with_intercept(design)
        return X * (np.asarray(outcome, dtype=float) - expit(X @ self.coefficients))[:, None]


def fit_logistic(outcome, design, labels=()) -> LogisticFit:
    """Maximum-likelihood logistic regression.

    Parameters
    ----------
    outcome : (n,) array of {0, 1}
    design : (n, p) array
        Covariates; an intercept column is prepended automatically. Pass an
        (n, 0) array for an intercept-only model.
    labels : names of the ``p`` covariate columns.

    Newton steps are halved while the log-likelihood decreases. Raises
    :class:`NonConvergence` under (quasi-)separation, detected as a
    coefficient leaving ``[-30, 30]`` or the iteration cap being reached.
    """
    y = np.asarray(outcome, dtype=float).reshape(-1)
    X = with_intercept(np.asarray(design, dtype=float).reshape(y.shape[0], -1))
    n, k = X.shape
    if n < k + 1 and k > 1:
        raise RankDeficientDesign(f"{n} rows is too few for {k} coefficients")
    if np.linalg.matrix_rank(X) < k:
        raise RankDeficientDesign("design matrix (with intercept) is rank deficient")

    beta = np.zeros(k)
    ll = _loglik(X, y, beta)
    labels = ("(Intercept)",) + tuple(labels)
    for it in range(1, MAX_ITER + 1):
        p = expit(X @ beta)
        grad = X.T @ (y - p)
        if np.max(np.abs(grad)) < SCORE_TOL:
            return LogisticFit(beta, True, it - 1, ll, labels)
        info = (X * (p * (1.0 - p))[:, None]).T @ X
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise NonConvergence("singular information matrix (separation?)") from None
        t = 1.0
        # near the optimum the change in log-likelihood is below rounding
        slack = 1e-10 * (1.0 + abs(ll))
        while True:
            cand = beta + t * step
            cand_ll = _loglik(X, y, cand)
            if cand_ll >= ll - slack or t < 1e-10:
                break
            t *= 0.5
        if np.any(np.abs(cand) > SEPARATION_BOUND):
            raise NonConvergence("coefficients diverging: outcome is (quasi-)separated")
        moved = np.max(np.abs(cand - beta))
        beta, ll = cand, cand_ll
        if moved < 1e-14 * (1.0 + np.max(np.abs(beta))):
            # no further progress is possible in floating point
            grad = X.T @ (y - expit(X @ beta))
            if np.max(np.abs(grad)) < 1e-8:
                return LogisticFit(beta, True, it, ll, labels)
            break
    raise NonConvergence(f"no convergence after {MAX_ITER} Newton iterations")


def fit_propensity(dataset, covariates=()) -> LogisticFit:
    """Logistic model for ``P(R=1|C)`` on the chosen baseline covariates.

    With no covariates this is the intercept-only fit, whose prediction is
    the sample proportion of treated records.
    """
    covariates = tuple(covariates)
    idx = [dataset.c_names.index(nm) for nm in covariates]
    return fit_logistic(dataset.r, dataset.c[:, idx], labels=covariates)


def propensity_scores(fit: LogisticFit, dataset):
    idx = [dataset.c_names.index(nm) for nm in fit.design_labels[1:]]
    return fit.predict(dataset.c[:, idx])


def propensity_design(fit: LogisticFit, dataset):
    idx = [dataset.c_names.index(nm) for nm in fit.design_labels[1:]]
    return dataset.c[:, idx]
