"""Sharpe ratio, drift and volatility as functions of the factor, and their
averages under the N(0, sigma_ou^2) invariant law."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

Func = Callable[[np.ndarray], np.ndarray]

LAMBDA_SQ_FLOOR = 1e-300
DEFAULT_NODES = 200


def distortion_q(gamma: float, rho: float) -> float:
    """Distortion exponent q = gamma / (gamma + (1 - gamma) rho^2)."""
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    if gamma == 1:
        raise ValueError("gamma = 1 (log utility) is not supported")
    if not abs(rho) < 1:
        raise ValueError(f"|rho| must be < 1, got {rho}")
    return gamma / (gamma + (1 - gamma) * rho**2)


def paper_lambda_sq(y: np.ndarray | float, sigma_ou: float) -> np.ndarray:
    """lambda^2(y) = 1/2 int_{-inf}^{y/sigma_ou} p(z/2) dz = Phi(y / (2 sigma_ou))."""
    return special.ndtr(np.asarray(y, dtype=float) / (2.0 * sigma_ou))


def paper_lambda_sq_prime(y: np.ndarray | float, sigma_ou: float) -> np.ndarray:
    u = np.asarray(y, dtype=float) / (2.0 * sigma_ou)
    return np.exp(-0.5 * u * u) / math.sqrt(2 * math.pi) / (2.0 * sigma_ou)


def paper_mu_from_lambda(lam: np.ndarray | float) -> np.ndarray:
    """mu = 0.1 lambda / (0.1 + lambda)."""
    lam = np.asarray(lam, dtype=float)
    return 0.1 * lam / (0.1 + lam)


def paper_mu(y: np.ndarray | float, sigma_ou: float) -> np.ndarray:
    return paper_mu_from_lambda(np.sqrt(paper_lambda_sq(y, sigma_ou)))


def _central_diff(f: Func, y: np.ndarray, h: float = 1e-5) -> np.ndarray:
    return (f(y + h) - f(y - h)) / (2 * h)


@dataclass(frozen=True)
class MarketModel:
    """Factor-dependent market coefficients.

    ``lambda_sq`` and ``mu`` are supplied; lambda, lambda' and sigma = mu / lambda
    are derived.  ``lambda_sq_prime`` is optional (central differences otherwise).
    """

    lambda_sq_fn: Func
    mu_fn: Func
    rho: float
    gamma: float
    lambda_sq_prime_fn: Func | None = None
    name: str = "custom"

    def __post_init__(self) -> None:
        distortion_q(self.gamma, self.rho)

    def lambda_sq(self, y):
        return np.maximum(self.lambda_sq_fn(np.asarray(y, dtype=float)), LAMBDA_SQ_FLOOR)

    def lam(self, y):
        return np.sqrt(self.lambda_sq(y))

    def lambda_sq_prime(self, y):
        y = np.asarray(y, dtype=float)
        if self.lambda_sq_prime_fn is not None:
            return self.lambda_sq_prime_fn(y)
        return _central_diff(self.lambda_sq, y)

    def lambda_prime(self, y):
        return self.lambda_sq_prime(y) / (2.0 * self.lam(y))

    def lambda_lambda_prime(self, y):
        """lambda * lambda' = (lambda^2)' / 2, free of the square root."""
        return 0.5 * self.lambda_sq_prime(y)

    def mu(self, y):
        return self.mu_fn(np.asarray(y, dtype=float))

    def sigma(self, y):
        return self.mu(y) / self.lam(y)

    def sigma_sq(self, y):
        return self.mu(y) ** 2 / self.lambda_sq(y)

    @property
    def q(self) -> float:
        return distortion_q(self.gamma, self.rho)

    def with_rho(self, rho: float) -> "MarketModel":
        return MarketModel(self.lambda_sq_fn, self.mu_fn, rho, self.gamma, self.lambda_sq_prime_fn, self.name)

    def with_gamma(self, gamma: float) -> "MarketModel":
        return MarketModel(self.lambda_sq_fn, self.mu_fn, self.rho, gamma, self.lambda_sq_prime_fn, self.name)

    @property
    def is_constant(self) -> bool:
        return self.name.startswith("constant")


def paper_model(sigma_ou: float, gamma: float = 0.4, rho: float = -0.5) -> MarketModel:
    """Built-in model ``paper-3.6``."""
    return MarketModel(
        lambda_sq_fn=lambda y: paper_lambda_sq(y, sigma_ou),
        mu_fn=lambda y: paper_mu(y, sigma_ou),
        rho=rho,
        gamma=gamma,
        lambda_sq_prime_fn=lambda y: paper_lambda_sq_prime(y, sigma_ou),
        name="paper-3.6",
    )


def constant_model(lambda0: float, sigma0: float = 0.2, gamma: float = 0.4, rho: float = -0.5) -> MarketModel:
    """Constant Sharpe ratio and volatility (degenerate check case)."""
    return MarketModel(
        lambda_sq_fn=lambda y: np.full_like(np.asarray(y, dtype=float), lambda0**2),
        mu_fn=lambda y: np.full_like(np.asarray(y, dtype=float), lambda0 * sigma0),
        rho=rho,
        gamma=gamma,
        lambda_sq_prime_fn=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
        name="constant",
    )


def invariant_average(
    g: Func,
    sigma_ou: float,
    n_nodes: int = DEFAULT_NODES,
    check: bool = True,
    tol: float = 1e-8,
) -> float:
    """<g> = E[g(sigma_ou Z)] by Gauss-Hermite quadrature.

    With ``check`` the value is recomputed on twice the nodes and an
    ``ArithmeticError`` is raised if the two differ by more than ``tol``
    (relative to max(1, |<g>|)).
    """

    def gh(n: int) -> float:
        z, w = special.roots_hermitenorm(n)
        return float(np.dot(w, g(sigma_ou * z)) / math.sqrt(2 * math.pi))

    val = gh(n_nodes)
    if check:
        val2 = gh(2 * n_nodes)
        if abs(val2 - val) > tol * max(1.0, abs(val2)):
            raise ArithmeticError(
                f"invariant average not converged: {val:.12g} ({n_nodes} nodes) vs {val2:.12g} ({2 * n_nodes} nodes)"
            )
        val = val2
    return val


@dataclass(frozen=True)
class Averages:
    lambda_bar_sq: float
    lambda_tilde: float
    avg_lambda_lambda_prime: float
    mu_bar: float
    sigma_bar_sq: float
    q: float
    mu_sq_bar: float = float("nan")
    sigma_ou: float = float("nan")

    @property
    def lambda_bar(self) -> float:
        return math.sqrt(self.lambda_bar_sq)

    @property
    def practical_sharpe_sq(self) -> float:
        """mu_bar^2 / sigma_bar^2, squared Sharpe ratio of the lazy strategy."""
        return self.mu_bar**2 / self.sigma_bar_sq


def compute_averages(model: MarketModel, sigma_ou: float, n_nodes: int = DEFAULT_NODES) -> Averages:
    avg = lambda g: invariant_average(g, sigma_ou, n_nodes)  # noqa: E731
    return Averages(
        lambda_bar_sq=avg(model.lambda_sq),
        lambda_tilde=avg(model.lam),
        avg_lambda_lambda_prime=avg(model.lambda_lambda_prime),
        mu_bar=avg(model.mu),
        sigma_bar_sq=avg(model.sigma_sq),
        q=model.q,
        mu_sq_bar=avg(lambda y: model.mu(y) ** 2),
        sigma_ou=sigma_ou,
    )


def check_regularity(model: MarketModel, sigma_ou: float, width: float = 10.0, n: int = 2001) -> dict[str, float]:
    """Sample-grid checks of boundedness and smoothness of lambda, and sigma > 0.

    Returns the sup norms found; raises ``ValueError`` on a violation.
    """
    y = np.linspace(-width * sigma_ou, width * sigma_ou, n)
    lam = model.lam(y)
    lam_p = model.lambda_prime(y)
    lam_pp = _central_diff(model.lambda_prime, y, 1e-4)
    sig = model.sigma(y)
    report = {
        "sup_lambda": float(np.max(np.abs(lam))),
        "sup_lambda_prime": float(np.max(np.abs(lam_p))),
        "sup_lambda_second": float(np.max(np.abs(lam_pp))),
        "min_sigma": float(np.min(sig)),
    }
    if not all(np.isfinite(v) for v in report.values()):
        raise ValueError(f"lambda or its derivatives not finite on the sample grid: {report}")
    if report["min_sigma"] <= 0:
        raise ValueError(f"sigma must be > 0, min on grid = {report['min_sigma']}")
    return report
