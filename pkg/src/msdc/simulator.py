"""Finite-state-machine appliance simulator and Monte Carlo checks of the
multi-state variance-reduction argument."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolation, DataError
from .series import PowerSeries
from .states import StateSequence


@dataclass(frozen=True)
class ApplianceFsm:
    name: str
    means: tuple[float, ...]
    stds: tuple[float, ...]
    transition: tuple[tuple[float, ...], ...]
    initial: tuple[float, ...] | None = None

    def __post_init__(self):
        M = len(self.means)
        P = np.asarray(self.transition, float)
        if len(self.stds) != M or P.shape != (M, M):
            raise DataError(f"{self.name}: inconsistent state count")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-9):
            raise DataError(f"{self.name}: transition rows must be nonnegative and sum to 1")
        if any(s < 0 for s in self.stds):
            raise DataError(f"{self.name}: state std must be nonnegative")
        if len(set(self.means)) != M:
            raise DataError(f"{self.name}: state means must be distinct")
        if self.initial is not None:
            init = np.asarray(self.initial, float)
            if init.shape != (M,) or np.any(init < 0) or abs(init.sum() - 1.0) > 1e-9:
                raise DataError(f"{self.name}: invalid initial distribution")

    @property
    def n_states(self) -> int:
        return len(self.means)

    def stationary(self) -> np.ndarray:
        """Stationary distribution: left eigenvector of the transition matrix for eigenvalue 1."""
        P = np.asarray(self.transition, float)
        M = P.shape[0]
        A = np.vstack([P.T - np.eye(M), np.ones(M)])
        b = np.zeros(M + 1)
        b[-1] = 1.0
        return np.linalg.lstsq(A, b, rcond=None)[0]


@dataclass(frozen=True)
class AggregationNoiseSpec:
    base_load: float = 0.0
    noise_std: float = 0.0
    profile: str = "constant"
    drift_amplitude: float = 0.0
    drift_period: int = 28_800  # one day at 3 s

    def __post_init__(self):
        if self.noise_std < 0:
            raise DataError("noise std must be nonnegative")
        if self.profile not in ("constant", "sinusoidal"):
            raise DataError(f"unknown base-load profile {self.profile!r}")

    def base_profile(self, T: int) -> np.ndarray:
        if self.profile == "constant":
            return np.full(T, float(self.base_load))
        phase = 2 * np.pi * np.arange(T) / self.drift_period
        return self.base_load + self.drift_amplitude * np.sin(phase)


def sample_chain(transition, T: int, rng: np.random.Generator, initial=None) -> np.ndarray:
    P = np.asarray(transition, float)
    M = P.shape[0]
    init = np.full(M, 1.0 / M) if initial is None else np.asarray(initial, float)
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(T)
    states = np.empty(T, dtype=np.int64)
    s = int(np.searchsorted(np.cumsum(init), u[0], side="right"))
    s = min(s, M - 1)
    states[0] = s
    rows = [c for c in cum]
    for t in range(1, T):
        s = int(np.searchsorted(rows[s], u[t], side="right"))
        states[t] = s
    return states


def simulate_appliance(fsm: ApplianceFsm, T: int, seed: int, start_timestamp: float = 0.0,
                       interval: float = 3.0) -> tuple[PowerSeries, StateSequence]:
    """Markov-chain states and clamped Gaussian power around each state's mean."""
    rng = np.random.default_rng(seed)
    states = sample_chain(fsm.transition, T, rng, fsm.initial)
    mu = np.asarray(fsm.means, float)[states]
    sd = np.asarray(fsm.stds, float)[states]
    power = np.maximum(mu + sd * rng.standard_normal(T), 0.0)
    return PowerSeries(start_timestamp, interval, power), StateSequence(states, fsm.n_states)


def aggregate(appliances: list[PowerSeries], noise: AggregationNoiseSpec, seed: int) -> PowerSeries:
    if not appliances:
        raise DataError("need at least one appliance")
    T = len(appliances[0])
    if any(len(a) != T for a in appliances):
        raise DataError("appliance series lengths differ")
    rng = np.random.default_rng(seed)
    total = np.sum([a.values for a in appliances], axis=0) + noise.base_profile(T)
    if noise.noise_std > 0:
        total = total + noise.noise_std * rng.standard_normal(T)
    first = appliances[0]
    return PowerSeries(first.start_timestamp, first.interval, np.maximum(total, 0.0))


# --- theory checks --------------------------------------------------------

@dataclass(frozen=True)
class VarianceExperimentSpec:
    probs: tuple[float, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]
    sigma: float | None = None  # single-state std; defaults to max(stds)
    n: int = 100_000
    seed: int = 0

    def __post_init__(self):
        M = len(self.probs)
        if M < 1 or len(self.means) != M or len(self.stds) != M:
            raise DataError("probs, means and stds must have equal nonzero length")
        if abs(sum(self.probs) - 1.0) > 1e-9 or min(self.probs) < 0:
            raise DataError("state probabilities must be nonnegative and sum to 1")
        if min(self.stds) < 0:
            raise DataError("state stds must be nonnegative")

    @property
    def n_states(self) -> int:
        return len(self.probs)

    @property
    def single_sigma(self) -> float:
        return max(self.stds) if self.sigma is None else float(self.sigma)

    @property
    def mixture_mean(self) -> float:
        return float(np.dot(self.probs, self.means))

    @property
    def multi_variance(self) -> float:
        p, s = np.asarray(self.probs), np.asarray(self.stds)
        return float(np.sum((p * s) ** 2))


@dataclass
class CheckReport:
    name: str
    passed: bool
    values: dict = field(default_factory=dict)
    messages: list[str] = field(default_factory=list)


def _multi_samples(spec: VarianceExperimentSpec, rng: np.random.Generator) -> np.ndarray:
    p = np.asarray(spec.probs)
    c = np.asarray(spec.means) + np.asarray(spec.stds) * rng.standard_normal((spec.n, spec.n_states))
    return c @ p


def _var_se(var: float, n: int) -> float:
    # standard error of a Gaussian sample variance
    return var * math.sqrt(2.0 / (n - 1))


def verify_fact1(spec: VarianceExperimentSpec, mean_tol: float | None = None,
                 var_rtol: float = 0.05) -> CheckReport:
    """The probability-weighted sum of independent state powers has mean
    sum p_s mu_s and variance sum (p_s sigma_s)^2."""
    rng = np.random.default_rng(spec.seed)
    y = _multi_samples(spec, rng)
    mu, var = spec.mixture_mean, spec.multi_variance
    emp_mean, emp_var = float(y.mean()), float(y.var(ddof=1))
    if mean_tol is None:
        mean_tol = 5.0 * math.sqrt(var / spec.n) + 1e-9 * max(1.0, abs(mu))
    mean_ok = abs(emp_mean - mu) <= mean_tol
    var_ok = abs(emp_var - var) <= var_rtol * var + 1e-12
    return CheckReport(
        "fact1", mean_ok and var_ok,
        {"analytic_mean": mu, "empirical_mean": emp_mean,
         "analytic_variance": var, "empirical_variance": emp_var},
    )


def check_assumption(spec: VarianceExperimentSpec) -> None:
    sigma = spec.single_sigma
    bad = [i for i, s in enumerate(spec.stds) if s > sigma]
    if bad:
        raise AssumptionViolation(
            f"assumption violated: state std exceeds single-state std {sigma} for states {bad}"
        )


def verify_theorem1(spec: VarianceExperimentSpec, mean_tol: float | None = None) -> CheckReport:
    """Compare the multi-state estimator with a single-state Gaussian of the
    same mean and std ``sigma``.

    Passes when the means agree, the multi-state variance does not exceed the
    single-state variance beyond Monte Carlo noise, and, for two or more
    states, is strictly smaller.
    """
    check_assumption(spec)
    rng = np.random.default_rng(spec.seed)
    y_multi = _multi_samples(spec, rng)
    sigma = spec.single_sigma
    y_single = spec.mixture_mean + sigma * rng.standard_normal(spec.n)

    m_multi, m_single = float(y_multi.mean()), float(y_single.mean())
    v_multi, v_single = float(y_multi.var(ddof=1)), float(y_single.var(ddof=1))
    if mean_tol is None:
        mean_tol = 5.0 * math.sqrt((v_multi + v_single) / spec.n) + 1e-12
    means_ok = abs(m_multi - m_single) <= mean_tol
    if spec.n_states >= 2:
        order_ok = v_multi < v_single
    else:
        slack = 3.0 * math.hypot(_var_se(v_multi, spec.n), _var_se(v_single, spec.n))
        order_ok = v_multi <= v_single + slack
    analytic_ratio = spec.multi_variance / sigma**2 if sigma > 0 else float("nan")
    return CheckReport(
        "theorem1", means_ok and order_ok,
        {"mean_multi": m_multi, "mean_single": m_single,
         "var_multi": v_multi, "var_single": v_single,
         "empirical_ratio": v_multi / v_single if v_single > 0 else float("nan"),
         "analytic_ratio": analytic_ratio,
         "sum_p_squared": float(np.sum(np.square(spec.probs)))},
    )


def normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def closeness_probability(std: float, xi: float) -> float:
    """P(|Y - mu| < xi) for Y ~ N(mu, std^2)."""
    if std == 0:
        return 1.0
    return 2.0 * normal_cdf(xi / std) - 1.0


def verify_corollary(spec: VarianceExperimentSpec, xi: float) -> CheckReport:
    """The multi-state estimate lands within ``xi`` of the mean more often."""
    if spec.n_states < 2:
        raise DataError("the corollary needs at least two states")
    if not xi > 0:
        raise DataError("xi must be positive")
    check_assumption(spec)
    rng = np.random.default_rng(spec.seed)
    mu = spec.mixture_mean
    y_multi = _multi_samples(spec, rng)
    y_single = mu + spec.single_sigma * rng.standard_normal(spec.n)
    hit_multi = np.abs(y_multi - mu) < xi
    hit_single = np.abs(y_single - mu) < xi
    p_multi, p_single = float(hit_multi.mean()), float(hit_single.mean())
    se = math.sqrt((p_multi * (1 - p_multi) + p_single * (1 - p_single)) / spec.n)
    passed = (p_multi - p_single) > 3.0 * se
    return CheckReport(
        "corollary", passed,
        {"p_multi": p_multi, "p_single": p_single,
         "p_multi_closed_form": closeness_probability(math.sqrt(spec.multi_variance), xi),
         "p_single_closed_form": closeness_probability(spec.single_sigma, xi),
         "standard_error": se},
    )
