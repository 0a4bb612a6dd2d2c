"""Constant-coefficient Merton problem (zero interest rate).

Power utility has a closed form.  General utilities are solved through the
dual (terminal-wealth) representation: with state price density
xi = exp(-lam sqrt(tau) Z - lam^2 tau / 2), the optimal terminal wealth is
I(y* xi) where y* enforces the budget E[xi I(y* xi)] = x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

Scalar = Callable[[np.ndarray], np.ndarray]

GH_NODES = 96
BUDGET_TOL = 1e-12


# ---------------------------------------------------------------------------
# utilities
# ---------------------------------------------------------------------------


def _invert_marginal(U_prime: Scalar, U_second: Scalar, y: np.ndarray, max_iter: int = 200) -> np.ndarray:
    """Solve U'(x) = y for x > 0 (vectorised), Newton on log x with bisection fallback."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(y <= 0):
        raise ValueError("inverse marginal utility needs y > 0")
    logy = np.log(y)

    def g(s):
        return np.log(U_prime(np.exp(s))) - logy

    lo = np.full_like(y, -1.0)
    hi = np.full_like(y, 1.0)
    # U' is decreasing, so g is decreasing in s = log x
    for _ in range(200):
        bad = g(lo) < 0
        if not bad.any():
            break
        lo[bad] = lo[bad] * 2 - 1
    for _ in range(200):
        bad = g(hi) > 0
        if not bad.any():
            break
        hi[bad] = hi[bad] * 2 + 1
    if np.any(g(lo) < 0) or np.any(g(hi) > 0):
        raise ArithmeticError("could not bracket the inverse marginal utility (Inada conditions?)")
    s = 0.5 * (lo + hi)
    active = np.ones(y.shape, dtype=bool)
    for _ in range(max_iter):
        sa = s[active]
        x = np.exp(sa)
        gs = g(sa) if active.all() else np.log(U_prime(x)) - logy[active]
        conv = np.abs(gs) <= 4e-16 * np.maximum(1.0, np.abs(logy[active]))
        lo_a = np.where(gs > 0, sa, lo[active])
        hi_a = np.where(gs > 0, hi[active], sa)
        slope = U_second(x) * x / U_prime(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            s_new = sa - gs / slope
        outside = ~np.isfinite(s_new) | (s_new < lo_a) | (s_new > hi_a)
        s_new = np.where(outside, 0.5 * (lo_a + hi_a), s_new)
        s_new = np.where(conv, sa, s_new)
        stalled = np.abs(s_new - sa) <= 2e-16 * np.maximum(1.0, np.abs(sa))
        lo[active], hi[active], s[active] = lo_a, hi_a, s_new
        idx = np.flatnonzero(active)
        active[idx[conv | stalled]] = False
        if not active.any():
            break
    return np.exp(s)


@dataclass(frozen=True)
class UtilitySpec:
    """A utility function on (0, inf) with its first two derivatives.

    Use :meth:`power` or :meth:`general`.  ``I`` is the inverse of U'; for a
    general utility it is obtained numerically unless supplied.
    """

    kind: str
    U: Scalar
    U_prime: Scalar
    U_second: Scalar
    I: Scalar
    gamma: float | None = None
    name: str = ""

    @classmethod
    def power(cls, gamma: float) -> "UtilitySpec":
        if not gamma > 0:
            raise ValueError(f"gamma must be > 0, got {gamma}")
        if gamma == 1:
            raise ValueError("gamma = 1 (log utility) is not supported")
        g = float(gamma)
        return cls(
            kind="power",
            U=lambda x: np.asarray(x, dtype=float) ** (1 - g) / (1 - g),
            U_prime=lambda x: np.asarray(x, dtype=float) ** (-g),
            U_second=lambda x: -g * np.asarray(x, dtype=float) ** (-g - 1),
            I=lambda y: np.asarray(y, dtype=float) ** (-1 / g),
            gamma=g,
            name=f"power({g:g})",
        )

    @classmethod
    def general(
        cls,
        U: Scalar,
        U_prime: Scalar,
        U_second: Scalar,
        I: Scalar | None = None,
        name: str = "general",
    ) -> "UtilitySpec":
        if I is None:
            def I(y):  # noqa: E306
                y = np.asarray(y, dtype=float)
                return _invert_marginal(U_prime, U_second, y.ravel()).reshape(y.shape)
        return cls("general", U, U_prime, U_second, I, None, name)

    def risk_tolerance(self, x):
        """-U'(x) / U''(x), the terminal risk tolerance."""
        x = np.asarray(x, dtype=float)
        return -self.U_prime(x) / self.U_second(x)

    def validate(self, x_grid: np.ndarray | None = None) -> dict[str, float]:
        """Check monotonicity, concavity, Inada endpoints and growth of I on a sample grid."""
        x = np.geomspace(1e-6, 1e6, 241) if x_grid is None else np.asarray(x_grid, dtype=float)
        up, upp = self.U_prime(x), self.U_second(x)
        if not np.all(up > 0):
            raise ValueError("U must be strictly increasing on the sample grid")
        if not np.all(upp < 0):
            raise ValueError("U must be strictly concave on the sample grid")
        u_small, u_one, u_big = self.U_prime(np.array([1e-12, 1.0, 1e12]))
        if not (u_small > 1e3 * u_one and u_big < 1e-3 * u_one):
            raise ValueError("Inada conditions U'(0+) = inf, U'(inf) = 0 not met numerically")
        y = np.geomspace(1e-4, 1.0, 41)
        Iy = self.I(y)
        if not np.all(np.isfinite(Iy)) or np.any(Iy <= 0):
            raise ValueError("inverse marginal utility not finite and positive")
        # growth exponent of I near y -> 0: I(y) <= alpha + kappa y^-alpha
        alpha = float(np.max(np.log(Iy[:-1] / Iy[-1]) / -np.log(y[:-1])))
        alpha = max(alpha, 1.0)
        kappa = float(np.max(Iy * y**alpha))
        return {"inada_ratio_0": float(u_small / u_one), "inada_ratio_inf": float(u_big / u_one),
                "I_growth_alpha": alpha, "I_growth_kappa": kappa}


def mixture_utility() -> UtilitySpec:
    """U(x) = (2 sqrt(x)) / 2 + (x^0.6 / 0.6) / 2, a non-power example."""
    return UtilitySpec.general(
        U=lambda x: np.sqrt(x) + np.asarray(x, dtype=float) ** 0.6 / 1.2,
        U_prime=lambda x: 0.5 * np.asarray(x, dtype=float) ** -0.5 + 0.5 * np.asarray(x, dtype=float) ** -0.4,
        U_second=lambda x: -0.25 * np.asarray(x, dtype=float) ** -1.5 - 0.2 * np.asarray(x, dtype=float) ** -1.4,
        name="mixture",
    )


# ---------------------------------------------------------------------------
# solutions
# ---------------------------------------------------------------------------


class MertonSolution:
    """Value M(t, x; lambda) of the constant-Sharpe-ratio Merton problem on [0, T]."""

    lambda_param: float
    T: float
    utility: UtilitySpec

    def value(self, t, x): ...
    def value_x(self, t, x): ...
    def value_xx(self, t, x): ...
    def value_t(self, t, x): ...

    def derivative(self, t, x, k: int):
        return (self.value, self.value_x, self.value_xx)[k](t, x)

    def risk_tolerance(self, t, x):
        return -self.value_x(t, x) / self.value_xx(t, x)

    def risk_tolerance_x(self, t, x):
        """dR/dx by Richardson-extrapolated central differences."""
        x = np.asarray(x, dtype=float)
        return _richardson(lambda xx: self.risk_tolerance(t, xx), x, 1e-3 * x)


def _richardson(f: Callable, x, h):
    d1 = (f(x + h) - f(x - h)) / (2 * h)
    d2 = (f(x + h / 2) - f(x - h / 2)) / h
    return (4 * d2 - d1) / 3


class PowerMerton(MertonSolution):
    """Closed form M = x^(1-g)/(1-g) exp((1-g)/(2g) lam^2 (T-t)), R = x/g."""

    def __init__(self, gamma: float, lambda_const: float, T: float = 1.0) -> None:
        self.utility = UtilitySpec.power(gamma)
        self.gamma, self.lambda_param, self.T = float(gamma), float(lambda_const), float(T)
        self._c = (1 - self.gamma) / (2 * self.gamma) * self.lambda_param**2

    def _growth(self, t):
        return np.exp(self._c * (self.T - np.asarray(t, dtype=float)))

    def value(self, t, x):
        g = self.gamma
        return np.asarray(x, dtype=float) ** (1 - g) / (1 - g) * self._growth(t)

    def value_x(self, t, x):
        return np.asarray(x, dtype=float) ** (-self.gamma) * self._growth(t)

    def value_xx(self, t, x):
        g = self.gamma
        return -g * np.asarray(x, dtype=float) ** (-g - 1) * self._growth(t)

    def value_t(self, t, x):
        return -self._c * self.value(t, x)

    def risk_tolerance(self, t, x):
        return np.asarray(x, dtype=float) / self.gamma + 0.0 * np.asarray(t, dtype=float)

    def risk_tolerance_x(self, t, x):
        return np.full(np.broadcast(np.asarray(t), np.asarray(x)).shape, 1 / self.gamma)[()]


def solve_merton_power(gamma: float, lambda_const: float, T: float = 1.0) -> PowerMerton:
    return PowerMerton(gamma, lambda_const, T)


@dataclass
class _DualPoint:
    value: float
    y: float
    value_xx: float
    budget_residual: float


class DualMerton(MertonSolution):
    """General-utility solution through the dual terminal-wealth construction.

    Point evaluations are cached; ``value_t`` uses Richardson-extrapolated
    central differences in t.
    """

    def __init__(self, utility: UtilitySpec, lambda_const: float, T: float = 1.0,
                 n_nodes: int = GH_NODES, tol: float = BUDGET_TOL) -> None:
        self.utility, self.lambda_param, self.T = utility, float(lambda_const), float(T)
        self.tol = tol
        z, w = special.roots_hermitenorm(n_nodes)
        self._z, self._w = z, w / math.sqrt(2 * math.pi)
        self._cache: dict[tuple[float, float], _DualPoint] = {}

    def _solve(self, t: float, x: float) -> _DualPoint:
        key = (float(t), float(x))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if x <= 0:
            raise ValueError(f"wealth must be > 0, got {x}")
        tau = self.T - t
        if tau < 0:
            raise ValueError(f"t = {t} beyond horizon T = {self.T}")
        u = self.utility
        if tau == 0 or self.lambda_param == 0:
            xa = np.array([x])
            pt = _DualPoint(float(u.U(xa)[0]), float(u.U_prime(xa)[0]), float(u.U_second(xa)[0]), 0.0)
            self._cache[key] = pt
            return pt
        lam_s = self.lambda_param * math.sqrt(tau)
        xi = np.exp(-lam_s * self._z - 0.5 * lam_s**2)
        w = self._w

        def budget(s):
            wealth = u.I(math.exp(s) * xi)
            return float(np.dot(w, xi * wealth)) - x, wealth

        # power proxy: y0 = U'(x) is exact when lam = 0
        s = math.log(float(u.U_prime(np.array([x]))[0]))
        lo, hi = s - 1.0, s + 1.0
        while budget(lo)[0] < 0:
            lo -= 2 * (hi - lo)
            if lo < -700:
                raise ValueError(f"x = {x} outside the reachable budget range")
        while budget(hi)[0] > 0:
            hi += 2 * (hi - lo)
            if hi > 700:
                raise ValueError(f"x = {x} outside the reachable budget range")
        for _ in range(200):
            f, wealth = budget(s)
            if f > 0:
                lo = s
            else:
                hi = s
            if abs(f) <= self.tol * max(1.0, x):
                break
            # d/ds E[xi I(e^s xi)] = E[xi^2 e^s / U''(I)]
            df = float(np.dot(w, xi**2 * math.exp(s) / u.U_second(wealth)))
            s_new = s - f / df if df != 0 else 0.5 * (lo + hi)
            if not (lo < s_new < hi):
                s_new = 0.5 * (lo + hi)
            if hi - lo < 1e-15:
                break
            s = s_new
        f, wealth = budget(s)
        y = math.exp(s)
        value = float(np.dot(w, u.U(wealth)))
        m_xx = 1.0 / float(np.dot(w, xi**2 / u.U_second(wealth)))
        if not (np.isfinite(value) and np.isfinite(m_xx) and m_xx < 0):
            raise ArithmeticError(f"dual construction broke down at (t, x) = ({t}, {x}); check Inada conditions")
        pt = _DualPoint(value, y, m_xx, f)
        self._cache[key] = pt
        return pt

    def _map(self, attr: str, t, x):
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        out = np.empty(t.shape)
        for idx in np.ndindex(t.shape):
            out[idx] = getattr(self._solve(t[idx], x[idx]), attr)
        return out[()]

    def value(self, t, x):
        return self._map("value", t, x)

    def value_x(self, t, x):
        return self._map("y", t, x)

    def value_xx(self, t, x):
        return self._map("value_xx", t, x)

    def budget_residual(self, t, x):
        return self._map("budget_residual", t, x)

    def value_t(self, t, x):
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        tau = self.T - t
        h = np.maximum(1e-2 * np.minimum(tau, 1.0), 1e-6)
        # one-sided near the horizon: evaluate on the left only
        at_end = tau < h
        out = np.empty(t.shape)
        mid = ~at_end
        if mid.any():
            xm = x[mid]
            out[mid] = _richardson(lambda tt: self.value(tt, xm), t[mid], h[mid])
        if at_end.any():
            # backward differences, second-order by extrapolation
            xe, te, he = x[at_end], t[at_end], h[at_end]
            f = lambda tt: self.value(tt, xe)  # noqa: E731
            d1 = (f(te) - f(te - he)) / he
            d2 = (f(te) - f(te - he / 2)) / (he / 2)
            out[at_end] = 2 * d2 - d1
        return out[()]


def solve_merton_general(utility: UtilitySpec, lambda_const: float, T: float = 1.0,
                         n_nodes: int = GH_NODES, tol: float = BUDGET_TOL) -> DualMerton:
    utility.validate()
    return DualMerton(utility, lambda_const, T, n_nodes, tol)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def apply_Dk(sol: MertonSolution, k: int, f, t, x):
    """D_k f = R(t, x; lam)^k d^k f / dx^k at (t, x).

    ``f`` is a :class:`MertonSolution` (analytic derivatives) or a callable
    f(t, x) differentiated by central differences with step 1e-5 x.
    """
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("D_k needs x > 0")
    R = sol.risk_tolerance(t, x)
    if isinstance(f, MertonSolution):
        dk = f.derivative(t, x, k)
    else:
        h = 1e-5 * x
        if k == 1:
            dk = (f(t, x + h) - f(t, x - h)) / (2 * h)
        else:
            dk = (f(t, x + h) - 2 * f(t, x) + f(t, x - h)) / h**2
    return R**k * dk


def d1_squared(sol: MertonSolution, t, x):
    """D_1^2 v = R d/dx (R v_x) = R v_x (R_x - 1), using R v_xx = -v_x."""
    return sol.risk_tolerance(t, x) * sol.value_x(t, x) * (sol.risk_tolerance_x(t, x) - 1.0)


def pde_residual(sol: MertonSolution, t_grid, x_grid, lambda_override: float | None = None) -> float:
    """max |v_t + lam^2 D_2 v / 2 + lam^2 D_1 v| / |v| over the (t, x) grid."""
    lam = sol.lambda_param if lambda_override is None else lambda_override
    T, X = np.meshgrid(np.asarray(t_grid, dtype=float), np.asarray(x_grid, dtype=float), indexing="ij")
    v = sol.value(T, X)
    res = sol.value_t(T, X) + 0.5 * lam**2 * apply_Dk(sol, 2, sol, T, X) + lam**2 * apply_Dk(sol, 1, sol, T, X)
    return float(np.max(np.abs(res) / np.abs(v)))
