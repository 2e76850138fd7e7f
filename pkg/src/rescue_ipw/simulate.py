"""Scenario data generator, counterfactual truth oracle, and the five-patient toy table."""

import json
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from typing import Optional

import numpy as np

from .data import TrialDataset
from .errors import EmptyStratum
from .logistic import expit
from .rng import stream


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of the simulated trial.

    L^1 | C ~ N(delta1 + delta2 C, sigma_l^2); treated switching follows
    expit(omega1 + omega2 C + omega3 L^1); control switching follows
    expit(lambda1 + lambda2 C + rho_true omega3 L^1); and
    Y ~ N(alpha1 + alpha2 S + alpha3 L^1 + alpha4 C + alpha5 (1 - R), sigma_y^2).
    """

    delta1: float
    delta2: float
    sigma_l: float
    omega1: float
    omega2: float
    omega3: float
    alpha1: float
    alpha2: float
    alpha3: float
    alpha4: float
    alpha5: float
    sigma_y: float
    lambda1: float
    lambda2: float
    rho_true: float = 0.9

    def __post_init__(self):
        if self.sigma_l <= 0 or self.sigma_y <= 0:
            raise ValueError("sigma_l and sigma_y must be positive")
        if not 0 < self.rho_true <= 1:
            raise ValueError("rho_true must lie in (0, 1]")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


SCENARIOS = {
    1: ScenarioConfig(delta1=-0.5, delta2=0.1, sigma_l=0.3, omega1=-7, omega2=-0.01, omega3=-7,
                      alpha1=0, alpha2=0.5, alpha3=2, alpha4=0.1, alpha5=-0.5, sigma_y=0.3,
                      lambda1=-5, lambda2=-0.02, rho_true=0.9),
    2: ScenarioConfig(delta1=-0.5, delta2=0.1, sigma_l=0.3, omega1=-9, omega2=-0.01, omega3=-12,
                      alpha1=0, alpha2=0.5, alpha3=2, alpha4=0.1, alpha5=-0.4, sigma_y=0.3,
                      lambda1=-5, lambda2=-0.02, rho_true=0.9),
    3: ScenarioConfig(delta1=-0.5, delta2=0.2, sigma_l=0.3, omega1=-7, omega2=-0.01, omega3=-11,
                      alpha1=0, alpha2=0.7, alpha3=2, alpha4=0.1, alpha5=-0.7, sigma_y=0.3,
                      lambda1=-2, lambda2=-0.02, rho_true=0.9),
}


def _draw_covariates(cfg, rng, n):
    c = rng.standard_normal(n)
    l1 = cfg.delta1 + cfg.delta2 * c + cfg.sigma_l * rng.standard_normal(n)
    return c, l1


def _switch_probs(cfg, c, l1):
    p_treated = expit(cfg.omega1 + cfg.omega2 * c + cfg.omega3 * l1)
    p_control = expit(cfg.lambda1 + cfg.lambda2 * c + cfg.rho_true * cfg.omega3 * l1)
    return p_treated, p_control


def generate_scenario(config: ScenarioConfig, n, seed, retain_l=False) -> TrialDataset:
    """Draw one simulated trial of ``n`` patients.

    L^1 is drawn for every patient; the returned dataset carries it only for
    treated patients unless ``retain_l`` is set (needed by the hypothetical
    estimator, which reads L on both arms). ``seed`` may be an int or a
    ``numpy.random.Generator``.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = stream(seed)
    while True:
        r = (rng.random(n) < 0.5).astype(np.int8)
        if 0 < r.sum() < n:
            break
    c, l1 = _draw_covariates(config, rng, n)
    p_treated, p_control = _switch_probs(config, c, l1)
    u = rng.random(n)
    s = np.where(r == 1, u < p_treated, u < p_control).astype(np.int8)
    y = (config.alpha1 + config.alpha2 * s + config.alpha3 * l1 + config.alpha4 * c
         + config.alpha5 * (1 - r) + config.sigma_y * rng.standard_normal(n))
    present = np.ones(n, dtype=bool) if retain_l else r == 1
    return TrialDataset(r=r, s=s, y=y, l=l1.reshape(n, 1), l_present=present,
                        c=c.reshape(n, 1), c_names=("C",), l_names=("L",))


@dataclass(frozen=True)
class Truth:
    """Population values of the balanced, treatment-policy and hypothetical arm means."""

    mu1: float
    mu0: float
    mu: float
    policy_mu1: float
    policy_mu0: float
    policy_mu: float
    hyp_mu1: float
    hyp_mu0: float
    hyp_mu: float

    def to_dict(self):
        return asdict(self)


def _truth_from_moments(cfg, e_p_treated, e_p_control, e_l1, e_c):
    e_p_treated, e_p_control, e_l1, e_c = map(float, (e_p_treated, e_p_control, e_l1, e_c))
    base = cfg.alpha1 + cfg.alpha3 * e_l1 + cfg.alpha4 * e_c
    mu1 = base + cfg.alpha2 * e_p_control
    mu0 = base + cfg.alpha2 * e_p_control + cfg.alpha5
    pol1 = base + cfg.alpha2 * e_p_treated
    hyp1 = base
    hyp0 = base + cfg.alpha5
    return Truth(mu1, mu0, mu1 - mu0, pol1, mu0, pol1 - mu0, hyp1, hyp0, hyp1 - hyp0)


def true_values(config: ScenarioConfig, n_mc=10**7, seed=0, chunk=10**6) -> Truth:
    """Monte-Carlo counterfactual means for ``config``.

    Draws (C, L^1) and both potential switch indicators for ``n_mc``
    patients and averages the noise-free outcome means: Y^{1S^0} and Y^0 use
    the control-law switch, Y^1 the treated-law switch, and the
    hypothetical means fix S at 0.
    """
    rng = stream(seed)
    tot = np.zeros(4)
    done = 0
    while done < n_mc:
        m = min(chunk, n_mc - done)
        c, l1 = _draw_covariates(config, rng, m)
        p_treated, p_control = _switch_probs(config, c, l1)
        s1 = rng.random(m) < p_treated
        s0 = rng.random(m) < p_control
        tot += [s1.sum(), s0.sum(), l1.sum(), c.sum()]
        done += m
    e = tot / n_mc
    return _truth_from_moments(config, *e)


def true_values_quadrature(config: ScenarioConfig, nodes=200) -> Truth:
    """Truth by Gauss-Hermite quadrature instead of simulation.

    Each switching linear predictor is an affine function of the jointly
    normal (C, L^1), hence normal itself, so its expected expit is a
    one-dimensional Gaussian integral.
    """
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()

    def mean_expit(intercept, c_coef, l_coef):
        mean = intercept + l_coef * config.delta1
        sd = np.hypot(c_coef + l_coef * config.delta2, l_coef * config.sigma_l)
        return float(np.sum(w * expit(mean + sd * x)))

    e_treated = mean_expit(config.omega1, config.omega2, config.omega3)
    e_control = mean_expit(config.lambda1, config.lambda2, config.rho_true * config.omega3)
    return _truth_from_moments(config, e_treated, e_control, config.delta1, 0.0)


# ------------------------------------------------------------------ toy example


@dataclass(frozen=True)
class PotentialOutcomeTable:
    """All potential outcomes Y^{rs} and potential switch statuses S^r per patient."""

    y10: tuple
    y11: tuple
    y00: tuple
    y01: tuple
    s0: tuple
    s1: tuple

    def __post_init__(self):
        cols = (self.y10, self.y11, self.y00, self.y01, self.s0, self.s1)
        n = len(self.y10)
        if any(len(col) != n for col in cols):
            raise ValueError("potential-outcome columns must have equal length")
        if n == 0:
            raise ValueError("table has no patients")
        if any(v not in (0, 1) for v in self.s0 + self.s1):
            raise ValueError("switch statuses must be 0 or 1")
        for name in ("y10", "y11", "y00", "y01", "s0", "s1"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def __len__(self):
        return len(self.y10)

    @classmethod
    def from_csv(cls, path):
        import csv

        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        cols = {}
        for name in ("y10", "y11", "y00", "y01", "s0", "s1"):
            try:
                cols[name] = tuple(_exact(row[name]) for row in rows)
            except KeyError:
                raise ValueError(f"toy table needs a {name!r} column") from None
        return cls(**cols)


def _exact(text):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        return Fraction(text)


# Five patients: two never switch, one switches only under control, two always switch.
TOY_TABLE = PotentialOutcomeTable(
    y10=(1, 1, 0, 1, 0),
    y11=(1, 1, 1, 1, 0),
    y00=(1, 0, 0, 1, 0),
    y01=(1, 0, 1, 1, 0),
    s0=(0, 0, 1, 1, 1),
    s1=(0, 0, 0, 1, 1),
)


@dataclass(frozen=True)
class ToyEstimands:
    policy: Fraction
    hypothetical: Fraction
    principal_stratification: Optional[Fraction]
    balanced: Fraction

    def as_floats(self):
        p = self.principal_stratification
        return (float(self.policy), float(self.hypothetical),
                None if p is None else float(p), float(self.balanced))


def _mean(values):
    values = [Fraction(v) for v in values]
    return sum(values, Fraction(0)) / len(values)


def toy_estimands(table: PotentialOutcomeTable = TOY_TABLE, strict=False) -> ToyEstimands:
    """Exact estimands by enumerating every patient's potential outcomes.

    The principal-stratification entry is None when no patient has
    S^0 = S^1 = 0, or raises :class:`EmptyStratum` with ``strict=True``.
    """
    y1 = [y11 if s else y10 for y10, y11, s in zip(table.y10, table.y11, table.s1)]
    y0 = [y01 if s else y00 for y00, y01, s in zip(table.y00, table.y01, table.s0)]
    y1s0 = [y11 if s else y10 for y10, y11, s in zip(table.y10, table.y11, table.s0)]
    never = [i for i in range(len(table)) if table.s0[i] == 0 and table.s1[i] == 0]
    if never:
        principal = _mean(y1[i] for i in never) - _mean(y0[i] for i in never)
    elif strict:
        raise EmptyStratum("no patient would stay off rescue under both arms")
    else:
        principal = None
    return ToyEstimands(
        policy=_mean(y1) - _mean(y0),
        hypothetical=_mean(table.y10) - _mean(table.y00),
        principal_stratification=principal,
        balanced=_mean(y1s0) - _mean(y0),
    )
