"""First-order expansion objects for the fast fOU regime.

Everything here is closed form in the invariant averages except the
random correction phi_t^eps, which is estimated from a realised history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .fou_engine import (
    BLOCK_SIZE,
    FactorSimulator,
    FouParams,
    SimGrid,
    riemann_weights,
    substream,
)
from .market_model import Averages, MarketModel, compute_averages
from .merton_engine import MertonSolution, UtilitySpec, apply_Dk, d1_squared, solve_merton_general, solve_merton_power


@dataclass(frozen=True)
class ExpansionInputs:
    params: FouParams
    model: MarketModel
    averages: Averages
    T: float
    gamma: float

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise ValueError(f"T must be > 0, got {self.T}")
        if self.gamma != self.model.gamma:
            raise ValueError(f"gamma {self.gamma} differs from the model's {self.model.gamma}")
        s = self.averages.sigma_ou
        if math.isfinite(s) and abs(s - self.params.sigma_ou) > 1e-12 * self.params.sigma_ou:
            raise ValueError(f"averages computed with sigma_ou={s}, params give {self.params.sigma_ou}")

    @classmethod
    def build(cls, params: FouParams, model: MarketModel, T: float = 1.0) -> "ExpansionInputs":
        return cls(params, model, compute_averages(model, params.sigma_ou), T, model.gamma)

    @property
    def rho(self) -> float:
        return self.model.rho

    @property
    def eps_factor(self) -> float:
        """eps^(1 - H)."""
        return self.params.eps ** (1 - self.params.H)

    def with_eps(self, eps: float) -> "ExpansionInputs":
        return ExpansionInputs(self.params.with_eps(eps), self.model, self.averages, self.T, self.gamma)


@dataclass(frozen=True)
class PhiEstimate:
    t: float
    value: float
    std_error: float
    n_inner_paths: int
    method: str = "nested-mc"


def _tau(t: float, T: float) -> float:
    if t > T:
        raise ValueError(f"t = {t} beyond horizon T = {T}")
    return T - t


def c_tT(t: float, inputs: ExpansionInputs) -> float:
    """C_{t,T} = <lambda lambda'> (T-t)^(H+1/2) / (a Gamma(H + 3/2))."""
    p = inputs.params
    return inputs.averages.avg_lambda_lambda_prime * _tau(t, inputs.T) ** (p.H + 0.5) / (p.a * math.gamma(p.H + 1.5))


def deterministic_correction(t: float, inputs: ExpansionInputs) -> float:
    """eps^(1-H) rho lambda_tilde (1-g)/g C_{t,T}, the feedback part of the value correction."""
    g = inputs.gamma
    return inputs.eps_factor * inputs.rho * inputs.averages.lambda_tilde * (1 - g) / g * c_tT(t, inputs)


def sigma_phi_sq(inputs: ExpansionInputs) -> float:
    """Limiting variance of eps^(H-1) phi_t^eps per unit (T-t)^(2H)."""
    return inputs.params.sigma_ou_sq * inputs.averages.avg_lambda_lambda_prime**2 * _phi_bracket(inputs.params.H)


def _phi_bracket(H: float) -> float:
    return 1 / (math.gamma(2 * H + 1) * math.sin(math.pi * H)) - 1 / (2 * H * math.gamma(H + 0.5) ** 2)


def sigma_phi_sq_derived(inputs: ExpansionInputs) -> float:
    """Limit of Var(phi_0^eps) / (eps^(2-2H) T^(2H)) from the linear Hermite term of lambda^2.

    phi_0 ~ <lambda lambda'> int_0^T E[Y_s | G_0] ds, and the variance of
    that Gaussian term scales as eps^(2-2H) <lambda lambda'>^2 bracket / a^2.
    Differs from :func:`sigma_phi_sq` by the factor sigma_ou^2 a^2.
    """
    p = inputs.params
    return inputs.averages.avg_lambda_lambda_prime**2 * _phi_bracket(p.H) / p.a**2


def phi0_linear_variance(inputs: ExpansionInputs, dt: float, M: float) -> float:
    """Exact variance of the linear part <lambda lambda'> int_0^T E[Y_s | G_0] ds of phi_0
    on the Riemann grid with history length M (time units)."""
    p = inputs.params
    n = int(round(inputs.T / dt))
    L = int(math.ceil(M / dt - 1e-9))
    w = riemann_weights(p, dt, L + n)
    c = np.concatenate([[0.0], np.cumsum(w)]) * dt
    j = np.arange(1, L + 1)
    s = c[n + j] - c[j]
    return float(inputs.averages.avg_lambda_lambda_prime**2 * dt * np.dot(s, s))


def q_expansion_value(t: float, x: float, phi: PhiEstimate | float, inputs: ExpansionInputs) -> float:
    """Q_t^eps(x) for power utility."""
    if not x > 0:
        raise ValueError(f"x must be > 0, got {x}")
    g = inputs.gamma
    phi_v = phi.value if isinstance(phi, PhiEstimate) else float(phi)
    lead = x ** (1 - g) / (1 - g) * math.exp((1 - g) / (2 * g) * inputs.averages.lambda_bar_sq * _tau(t, inputs.T))
    return lead * (1 + (1 - g) / g * (phi_v + deterministic_correction(t, inputs)))


def markovian_limit_value(t: float, x: float, inputs: ExpansionInputs) -> float:
    """Formal H -> 1/2 limit of the value expansion (comparison only)."""
    g = inputs.gamma
    A = inputs.averages
    tau = _tau(t, inputs.T)
    lead = x ** (1 - g) / (1 - g) * math.exp((1 - g) / (2 * g) * A.lambda_bar_sq * tau)
    corr = math.sqrt(inputs.params.eps) * inputs.rho * ((1 - g) / g) ** 2 * A.lambda_tilde * A.avg_lambda_lambda_prime / inputs.params.a * tau
    return lead * (1 + corr)


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------


def strategy_pi0(t, x, y, inputs: ExpansionInputs, utility: UtilitySpec | None = None,
                 merton: MertonSolution | None = None):
    """Leading-order amount invested: lambda(y)/sigma(y) R(t, x; lambda_bar)."""
    m = inputs.model
    sig = m.sigma(y)
    if np.any(sig == 0):
        raise ValueError("sigma(y) = 0")
    ratio = m.lam(y) / sig
    if utility is None or utility.kind == "power":
        return ratio * np.asarray(x, dtype=float) / inputs.gamma
    if merton is None:
        merton = solve_merton_general(utility, inputs.averages.lambda_bar, inputs.T)
    return ratio * merton.risk_tolerance(t, x)


def pi1_coefficient(t, inputs: ExpansionInputs):
    """rho (1-g)/g^2 <lambda lambda'> (T-t)^(H-1/2) / (a Gamma(H+1/2)); divide by sigma(y) for the fraction."""
    p, g = inputs.params, inputs.gamma
    tau = inputs.T - np.asarray(t, dtype=float)
    if np.any(tau < 0):
        raise ValueError("t beyond horizon")
    return (inputs.rho * (1 - g) / g**2 * inputs.averages.avg_lambda_lambda_prime
            * tau ** (p.H - 0.5) / (p.a * math.gamma(p.H + 0.5)))


def strategy_pi1(t, x, y, inputs: ExpansionInputs, include_eps: bool = False):
    """First-order correction amount pi^(1); multiply by eps^(1-H) unless ``include_eps``."""
    out = pi1_coefficient(t, inputs) / inputs.model.sigma(y) * np.asarray(x, dtype=float)
    return out * inputs.eps_factor if include_eps else out


@dataclass(frozen=True)
class PracticalStrategy:
    c_star: float
    sharpe_sq: float
    value_factor: float
    cauchy_schwarz_gap: float


def practical_strategy(inputs: ExpansionInputs, t: float = 0.0) -> PracticalStrategy:
    """Constant fraction mu_bar/(g sigma_bar^2) and its leading-order value factor."""
    A, g = inputs.averages, inputs.gamma
    if not A.sigma_bar_sq > 0:
        raise ValueError("sigma_bar^2 must be > 0")
    s2 = A.mu_bar**2 / A.sigma_bar_sq
    return PracticalStrategy(
        c_star=A.mu_bar / (g * A.sigma_bar_sq),
        sharpe_sq=s2,
        value_factor=math.exp((1 - g) / (2 * g) * s2 * _tau(t, inputs.T)),
        cauchy_schwarz_gap=A.lambda_bar_sq - s2,
    )


# ---------------------------------------------------------------------------
# general utility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneralCorrection:
    C: float
    v0: float
    D1v0: float
    v1: float
    Q: float


def merton_at_lambda_bar(inputs: ExpansionInputs, utility: UtilitySpec) -> MertonSolution:
    lam = inputs.averages.lambda_bar
    if utility.kind == "power":
        return solve_merton_power(utility.gamma, lam, inputs.T)
    return solve_merton_general(utility, lam, inputs.T)


def general_utility_correction(t: float, x: float, inputs: ExpansionInputs, utility: UtilitySpec,
                               phi: PhiEstimate | float = 0.0,
                               merton: MertonSolution | None = None) -> GeneralCorrection:
    """v1 = D_1^2 v0 C_{t,T} and Q^{pi0} = v0 + D_1 v0 phi + eps^(1-H) rho lambda_tilde v1."""
    sol = merton if merton is not None else merton_at_lambda_bar(inputs, utility)
    phi_v = phi.value if isinstance(phi, PhiEstimate) else float(phi)
    C = c_tT(t, inputs)
    v0 = float(sol.value(t, x))
    D1v0 = float(apply_Dk(sol, 1, sol, t, x))
    v1 = float(d1_squared(sol, t, x)) * C
    Q = v0 + D1v0 * phi_v + inputs.eps_factor * inputs.rho * inputs.averages.lambda_tilde * v1
    return GeneralCorrection(C, v0, D1v0, v1, Q)


def d1_squared_fd(sol: MertonSolution, t: float, x: float, h_rel: float = 1e-4) -> float:
    """D_1^2 v0 by a central difference of R v_x with relative step ``h_rel``."""
    h = h_rel * x
    f = lambda xx: sol.risk_tolerance(t, xx) * sol.value_x(t, xx)  # noqa: E731
    return float(sol.risk_tolerance(t, x) * (f(x + h) - f(x - h)) / (2 * h))


# ---------------------------------------------------------------------------
# phi_t^eps
# ---------------------------------------------------------------------------


def estimate_phi(
    t: float,
    history_increments: np.ndarray,
    inputs: ExpansionInputs,
    dt: float,
    n_inner: int = 20_000,
    seed: int = 0,
    omega: int = 0,
    workers: int = 1,
    tol: float = 1e-3,
) -> PhiEstimate:
    """Nested Monte Carlo estimate of phi_t^eps given W^Y increments on [t - M, t].

    Future increments on (t, T] are resampled ``n_inner`` times; the
    integrand lambda^2(Y) - lambda_bar^2 is averaged on the left-point grid.
    """
    tau = _tau(t, inputs.T)
    n = int(round(tau / dt))
    if n == 0 or inputs.model.is_constant:
        # empty integral, or an integrand that vanishes identically
        return PhiEstimate(t, 0.0, 0.0, n_inner)
    u = np.asarray(history_increments, dtype=float)
    grid = SimGrid(dt, n, len(u))
    sim = FactorSimulator(inputs.params, grid, inputs.rho, seed, omega, True, tol=tol, history_increments=u)
    if sim.tail_bound > tol * inputs.params.sigma_ou_sq:
        raise ValueError(
            f"history of {grid.M:g} time units is too short: tail variance bound {sim.tail_bound:.3e} "
            f"exceeds {tol:g} sigma_ou^2"
        )
    lam2 = inputs.model.lambda_sq
    lbar2 = inputs.averages.lambda_bar_sq

    def fn(b):
        return {"phi": 0.5 * (lam2(b.y[:, :-1]) - lbar2).sum(axis=1) * dt}

    vals = sim.map_blocks(fn, n_inner, workers)["phi"]
    se = float(vals.std(ddof=1) / math.sqrt(n_inner)) if n_inner > 1 else float("nan")
    return PhiEstimate(t, float(vals.mean()), se, n_inner)


def future_variances(params: FouParams, dt: float, n: int) -> np.ndarray:
    """Variance of the future-driven part of Y at nodes 0..n: dt * sum_{i<=k} w_i^2."""
    w = riemann_weights(params, dt, n)
    return dt * np.cumsum(w**2)


def phi_given_means(means: np.ndarray, fut_var: np.ndarray, inputs: ExpansionInputs, dt: float,
                    n_nodes: int = 64) -> np.ndarray:
    """phi_0 = (1/2) sum_k (E[lambda^2(m_k + sqrt(v_k) Z)] - lambda_bar^2) dt for each row of ``means``.

    Exact for the discretised factor, as Y_k given the history is
    N(m_k, v_k); the Gaussian expectation uses Gauss-Hermite nodes.
    """
    z, w = special.roots_hermitenorm(n_nodes)
    w = w / math.sqrt(2 * math.pi)
    m = np.atleast_2d(means)[:, :-1]
    sd = np.sqrt(fut_var[:-1])
    lam2 = inputs.model.lambda_sq
    acc = np.zeros_like(m)
    for zi, wi in zip(z, w):
        acc += wi * lam2(m + sd * zi)
    return 0.5 * (acc - inputs.averages.lambda_bar_sq).sum(axis=1) * dt


def phi0_samples(
    inputs: ExpansionInputs,
    grid: SimGrid,
    n_histories: int,
    seed: int = 0,
    omega: int = 0,
    n_nodes: int = 64,
    block_size: int = 64,
) -> np.ndarray:
    """phi_0^eps for ``n_histories`` independent histories (conditional quadrature per history).

    Long histories make each FFT row large, hence the small default block.
    """
    sim = FactorSimulator(inputs.params, grid, inputs.rho, seed, omega, shared_history=False)
    L = grid.history_len
    fv = future_variances(inputs.params, grid.dt, grid.n_steps)
    out = np.empty(n_histories)
    for start in range(0, n_histories, block_size):
        stop = min(start + block_size, n_histories)
        u = np.stack([substream(seed, omega, h + 1).standard_normal(L) for h in range(start, stop)])
        means = sim.history_contribution(u * math.sqrt(grid.dt))
        out[start:stop] = phi_given_means(means, fv, inputs, grid.dt, n_nodes)
    return out
