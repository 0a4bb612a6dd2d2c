"""Fractional Ornstein-Uhlenbeck factor: kernel, statistics and path simulation.

The stationary fOU process is written as a moving average of a two-sided
Brownian motion ``W^Y``,

    Y_t = int_{-inf}^t K_eps(t - s) dW^Y_s,    K_eps(t) = eps^{-1/2} K(t / eps),

and is simulated with a left-endpoint Riemann sum on a uniform grid that
covers a truncated history ``[-M, 0]`` plus the horizon ``[0, T]``.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import fft as sp_fft
from scipy import integrate, optimize, special

# Fixed block size keeps path batching (and hence every floating point
# reduction) independent of the number of worker threads.
BLOCK_SIZE = 512


class TruncationWarning(UserWarning):
    """History segment too short for the requested tail-variance tolerance."""


# ---------------------------------------------------------------------------
# Parameters and grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FouParams:
    """Mean-reversion rate ``a``, Hurst index ``H`` and time scale ``eps``."""

    a: float
    H: float
    eps: float = 1.0

    def __post_init__(self) -> None:
        if not self.a > 0:
            raise ValueError(f"a must be > 0, got {self.a}")
        if not 0.5 < self.H < 1.0:
            raise ValueError(f"H must lie in (1/2, 1), got {self.H}")
        if not 0.0 < self.eps <= 1.0:
            raise ValueError(f"eps must lie in (0, 1], got {self.eps}")

    @property
    def sigma_ou_sq(self) -> float:
        return stationary_variance(self)

    @property
    def sigma_ou(self) -> float:
        return math.sqrt(self.sigma_ou_sq)

    def with_eps(self, eps: float) -> "FouParams":
        return FouParams(self.a, self.H, eps)


@dataclass(frozen=True)
class SimGrid:
    """Uniform grid: ``n_steps`` steps of size ``dt`` on [0, T] and
    ``history_len`` steps on [-M, 0]."""

    dt: float
    n_steps: int
    history_len: int = 0

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.history_len < 0:
            raise ValueError(f"history_len must be >= 0, got {self.history_len}")

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    @property
    def M(self) -> float:
        """Length of the history interval in time units."""
        return self.history_len * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


def _tail_coefficients(a: float, H: float) -> tuple[float, float]:
    # K(x) ~ c1 x^{H-3/2} + c2 x^{H-5/2} for large x
    h = H - 0.5
    return 1.0 / (a * special.gamma(h)), -1.0 / (a**2 * special.gamma(h - 1))


def tail_variance_bound(M: float, params: FouParams) -> float:
    """Power-law estimate of ``int_M^inf K_eps(u)^2 du``, the variance lost by
    truncating the history at ``-M``.

    Leading term (M/eps)^{2H-2} / (a^2 Gamma(H-1/2)^2 (2-2H)) plus the next
    power-law correction, which is positive for H in (1/2, 1).
    """
    if M <= 0:
        return params.sigma_ou_sq
    c1, c2 = _tail_coefficients(params.a, params.H)
    p = 2 * params.H - 3
    x = M / params.eps
    return c1**2 * x ** (p + 1) / -(p + 1) + 2 * c1 * c2 * x**p / -p


def default_history_time(params: FouParams, tol: float = 1e-3) -> float:
    """Smallest M (time units) whose tail-variance bound is below ``tol * sigma_ou^2``
    (with a 5% margin)."""
    target = 0.95 * tol * params.sigma_ou_sq
    c1, _ = _tail_coefficients(params.a, params.H)
    x0 = (target * (2 - 2 * params.H) / c1**2) ** (1.0 / (2 * params.H - 2))
    x = optimize.brentq(lambda x: tail_variance_bound(x * params.eps, params) - target, 0.5 * x0, 4 * x0)
    return params.eps * x


def make_grid(
    T: float,
    dt: float,
    params: FouParams,
    history: str | float = "auto",
    tol: float = 1e-3,
) -> SimGrid:
    """Build a grid for horizon ``T``.

    ``history`` is ``"auto"`` (tail variance <= ``tol * sigma_ou^2``),
    ``"paper"`` (M = (T/dt)^1.5 time units) or an explicit M in time units.
    """
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    if history == "auto":
        M = default_history_time(params, tol)
    elif history == "paper":
        M = (T / dt) ** 1.5
    else:
        M = float(history)
        if M < 0:
            raise ValueError("history length must be >= 0")
    return SimGrid(dt=dt, n_steps=n_steps, history_len=int(math.ceil(M / dt - 1e-9)))


# ---------------------------------------------------------------------------
# Kernel and exact statistics
# ---------------------------------------------------------------------------


def _check_kernel_args(a: float, H: float) -> None:
    if a < 0:
        raise ValueError(f"a must be >= 0, got {a}")
    if not 0.5 <= H < 1.0:
        raise ValueError(f"H must lie in [1/2, 1), got {H}")


def kernel_K(t: float, a: float, H: float) -> float:
    """Moving-average kernel of the unit-scale fOU process by adaptive quadrature.

    K(t) = [t^{H-1/2} - a int_0^t (t-s)^{H-1/2} e^{-as} ds] / Gamma(H+1/2)
    """
    _check_kernel_args(a, H)
    if t < 0:
        raise ValueError(f"kernel argument must be >= 0, got {t}")
    h = H - 0.5
    if t == 0:
        return 1.0 if h == 0 else 0.0
    if a == 0:
        return t**h / special.gamma(H + 0.5)
    # algebraic weight (t - s)^h handles the endpoint singularity of the derivative
    integral, _ = integrate.quad(
        lambda s: math.exp(-a * s), 0.0, t, weight="alg", wvar=(0.0, h), epsabs=1e-14, epsrel=1e-13, limit=200
    )
    return max((t**h - a * integral) / special.gamma(H + 0.5), 0.0)


def kernel_values(t: np.ndarray | float, a: float, H: float) -> np.ndarray:
    """Vectorised kernel, ``K(t) = t^h 1F1(1; h+1; -a t) / Gamma(h+1)`` with h = H - 1/2.

    Same function as :func:`kernel_K`; used on simulation grids where
    per-point quadrature would be too slow.
    """
    _check_kernel_args(a, H)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("kernel argument must be >= 0")
    h = H - 0.5
    if h == 0:
        return np.exp(-a * t)
    with np.errstate(divide="ignore"):
        out = np.power(t, h) * special.hyp1f1(1.0, h + 1.0, -a * t) / special.gamma(h + 1.0)
    return np.where(t == 0, 0.0, out)


def scaled_kernel(t: np.ndarray | float, params: FouParams) -> np.ndarray:
    """``K_eps(t) = eps^{-1/2} K(t / eps)``."""
    t = np.asarray(t, dtype=float)
    return kernel_values(t / params.eps, params.a, params.H) / math.sqrt(params.eps)


def stationary_variance(params: FouParams | float, H: float | None = None) -> float:
    """sigma_ou^2 = 1 / (2 a^{2H} sin(pi H)).

    Accepts ``FouParams`` or the pair ``(a, H)``; the latter also allows the
    Markovian case H = 1/2 (variance 1 / (2a)).
    """
    if H is None:
        a, H = params.a, params.H
    else:
        a = float(params)
        _check_kernel_args(a, H)
        if a == 0:
            raise ValueError("a must be > 0")
    return 1.0 / (2.0 * a ** (2 * H) * math.sin(math.pi * H))


def kernel_square_integral(params: FouParams, upper: float = math.inf) -> float:
    """``int_0^upper K_eps(u)^2 du`` by quadrature, with an asymptotic tail
    correction when ``upper`` is infinite."""
    a, H, eps = params.a, params.H, params.eps
    h = H - 0.5
    x_up = upper / eps
    cut = min(x_up, 1e4 / a)
    edges = np.concatenate([[0.0], np.geomspace(1e-8, cut, 60)])
    edges = edges[edges <= cut]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(lambda x: float(kernel_values(x, a, H)) ** 2, lo, hi, epsabs=1e-15, epsrel=1e-12, limit=100)
        total += val
    if x_up > cut:
        # K(x) = x^h sum_k (-1)^{k+1} (a x)^{-k} / Gamma(h + 1 - k) for large x
        if h == 0:
            total += (math.exp(-2 * a * cut) - math.exp(-2 * a * x_up)) / (2 * a)
        else:
            c1, c2 = _tail_coefficients(a, H)
            p = 2 * h - 2

            def tail(x: float) -> float:
                return 0.0 if math.isinf(x) else c1**2 * x ** (p + 1) / -(p + 1) + 2 * c1 * c2 * x**p / -p

            total += tail(cut) - tail(x_up)
    return total


def covariance_CY(s: float, a: float, H: float) -> float:
    """Normalised autocorrelation C_Y(s) of the unit-scale fOU process.

    (2 sin(pi H) / pi) int_0^inf cos(a s x) x^{1-2H} / (1 + x^2) dx, split
    at x = 1; oscillatory pieces use QUADPACK's cosine-weight integrators.
    """
    _check_kernel_args(a, H)
    if s < 0:
        raise ValueError(f"lag must be >= 0, got {s}")
    if s == 0 or a == 0:
        return 1.0
    w = a * s
    p = 1.0 - 2.0 * H
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            # near 0 the algebraic weight carries the singularity; beyond one
            # oscillation the cosine weight takes over
            d = min(1.0, 1.0 / w)
            head, err1 = integrate.quad(
                lambda x: math.cos(w * x) / (1 + x * x), 0.0, d, weight="alg", wvar=(p, 0.0), epsabs=1e-14, limit=200
            )
            if d < 1.0:
                mid, err3 = integrate.quad(lambda x: x**p / (1 + x * x), d, 1.0, weight="cos", wvar=w,
                                           epsabs=1e-14, limit=200)
                head, err1 = head + mid, abs(err1) + abs(err3)
            tail, err2 = integrate.quad(lambda x: x**p / (1 + x * x), 1.0, math.inf, weight="cos", wvar=w, limlst=200)
        except integrate.IntegrationWarning as exc:
            raise ArithmeticError(f"C_Y quadrature did not converge at s={s}, a={a}, H={H}: {exc}") from exc
    if abs(err1) + abs(err2) > 1e-6:
        raise ArithmeticError(f"C_Y quadrature error too large at s={s}: head={err1:.2e} tail={err2:.2e}")
    return 2.0 * math.sin(math.pi * H) / math.pi * (head + tail)


def long_lag_CY(s: float, a: float, H: float) -> float:
    """Leading power law of C_Y at large lag: (a s)^{2H-2} / Gamma(2H - 1)."""
    return (a * s) ** (2 * H - 2) / special.gamma(2 * H - 1)


def exact_covariance(params: FouParams, times: np.ndarray) -> np.ndarray:
    """Covariance matrix of Y_eps at ``times``: sigma_ou^2 C_Y(|t - s| / eps)."""
    times = np.asarray(times, dtype=float)
    lags = np.abs(times[:, None] - times[None, :]) / params.eps
    uniq, inv = np.unique(np.round(lags, 12), return_inverse=True)
    vals = np.array([covariance_CY(float(u), params.a, params.H) for u in uniq])
    return params.sigma_ou_sq * vals[inv].reshape(lags.shape)


def cholesky_paths(params: FouParams, times: np.ndarray, n_paths: int, seed: int) -> np.ndarray:
    """Exact stationary samples of Y_eps on a coarse grid (validation oracle).

    Limited to 2048 nodes.
    """
    times = np.asarray(times, dtype=float)
    if times.size > 2048:
        raise ValueError("Cholesky oracle is limited to 2048 nodes")
    cov = exact_covariance(params, times)
    L = np.linalg.cholesky(cov + 1e-13 * np.eye(times.size))
    z = np.random.default_rng(seed).standard_normal((n_paths, times.size))
    return z @ L.T


# ---------------------------------------------------------------------------
# Riemann-sum simulation
# ---------------------------------------------------------------------------


def riemann_weights(params: FouParams, dt: float, n: int) -> np.ndarray:
    """Weights ``w[m] = K_eps(m dt)`` for m = 0..n (w[0] = K_eps(0) = 0)."""
    w = scaled_kernel(np.arange(n + 1) * dt, params)
    w[0] = 0.0
    return w


def discrete_variance(params: FouParams, grid: SimGrid) -> float:
    """Exact variance of the discretised Y at t = 0 given the grid's history."""
    w = riemann_weights(params, grid.dt, grid.history_len)
    return float(grid.dt * np.sum(w**2))


def _stream_key(seed: int, omega: int, estimator_id: int | None) -> np.ndarray:
    entropy = [int(seed), int(omega)] if estimator_id is None else [int(seed), int(omega), int(estimator_id)]
    return np.random.SeedSequence(entropy).generate_state(2, np.uint64)


def substream(seed: int, omega: int, index: int, estimator_id: int | None = None) -> np.random.Generator:
    """Counter-based substream ``index`` of (seed, omega[, estimator]).

    Substream 0 is the shared history; path ``p`` uses substream ``p + 1``.
    """
    key = _stream_key(seed, omega, estimator_id)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, int(index), 0]))


def _fft_convolve(x: np.ndarray, w_hat: np.ndarray, nfft: int, n_out: int, offset: int = 0) -> np.ndarray:
    out = sp_fft.irfft(sp_fft.rfft(x, nfft, axis=-1, workers=1) * w_hat, nfft, axis=-1, workers=1)
    return out[..., offset : offset + n_out]


@dataclass
class FactorBlock:
    """A batch of simulated factor paths (rows) on a common grid.

    ``y`` has shape (n, n_steps + 1); increments have shape (n, n_steps).
    """

    path_ids: np.ndarray
    y: np.ndarray
    dwy: np.ndarray
    dwp: np.ndarray
    rho: float
    dt: float

    @property
    def dw(self) -> np.ndarray:
        """Increments of the asset Brownian motion W."""
        return self.rho * self.dwy + math.sqrt(1 - self.rho**2) * self.dwp


class FactorSimulator:
    """Reusable simulator for one (params, grid, rho, seed, omega) setting.

    With ``shared_history`` every path shares the history segment drawn from
    substream 0 (sampling conditional on G_0); otherwise each path draws
    its own history after its future increments.
    """

    def __init__(
        self,
        params: FouParams,
        grid: SimGrid,
        rho: float = 0.0,
        seed: int = 0,
        omega: int = 0,
        shared_history: bool = True,
        estimator_id: int | None = None,
        tol: float = 1e-3,
        history_increments: np.ndarray | None = None,
    ) -> None:
        if not abs(rho) < 1:
            raise ValueError(f"|rho| must be < 1, got {rho}")
        self.params, self.grid, self.rho = params, grid, float(rho)
        self.seed, self.omega, self.estimator_id = int(seed), int(omega), estimator_id
        self.shared_history = shared_history
        bound = tail_variance_bound(grid.M, params)
        self.tail_bound = bound
        if bound > tol * params.sigma_ou_sq:
            warnings.warn(
                f"history M={grid.M:.4g} leaves tail variance bound {bound:.3e} "
                f"(> {tol:g} * sigma_ou^2 = {tol * params.sigma_ou_sq:.3e}); "
                f"(M/eps)^(2H-2) = {(max(grid.M, 1e-300) / params.eps) ** (2 * params.H - 2):.3e}",
                TruncationWarning,
                stacklevel=2,
            )
        n, L, dt = grid.n_steps, grid.history_len, grid.dt
        self._sqdt = math.sqrt(dt)
        w_full = riemann_weights(params, dt, L + n)
        # future part: Y_k += sum_{j<k} w[k-j] dW_j, k = 0..n
        self._nfft_f = sp_fft.next_fast_len(2 * n + 1, real=True)
        self._w_f_hat = sp_fft.rfft(w_full[: n + 1], self._nfft_f)
        self._w_full = w_full
        self.history_increments: np.ndarray | None = None
        self.history_part = np.zeros(n + 1)
        if history_increments is not None:
            u = np.asarray(history_increments, dtype=float)
            if u.shape != (L,) or not shared_history:
                raise ValueError(f"history_increments must have shape ({L},) and requires shared_history")
            self.history_increments = u
            self.history_part = self.history_contribution(u[None, :])[0]
        elif L > 0 and shared_history:
            rng = substream(self.seed, self.omega, 0, estimator_id)
            u = rng.standard_normal(L) * self._sqdt
            self.history_increments = u
            self.history_part = self.history_contribution(u[None, :])[0]
        if L > 0 and not shared_history:
            self._nfft_h = sp_fft.next_fast_len(2 * L + n + 1, real=True)
            self._w_h_hat = sp_fft.rfft(w_full, self._nfft_h)

    def history_contribution(self, u: np.ndarray) -> np.ndarray:
        """Part of Y on the nodes 0..n driven by history increments ``u`` (rows)."""
        n, L = self.grid.n_steps, self.grid.history_len
        nfft = sp_fft.next_fast_len(2 * L + n + 1, real=True)
        w_hat = sp_fft.rfft(self._w_full, nfft)
        return _fft_convolve(u, w_hat, nfft, n + 1, offset=L)

    def block(self, start: int, stop: int) -> FactorBlock:
        """Simulate paths ``start .. stop-1``."""
        n, L = self.grid.n_steps, self.grid.history_len
        m = stop - start
        dwy = np.empty((m, n))
        dwp = np.empty((m, n))
        hist = np.empty((m, L)) if (L > 0 and not self.shared_history) else None
        for i, p in enumerate(range(start, stop)):
            rng = substream(self.seed, self.omega, p + 1, self.estimator_id)
            dwy[i] = rng.standard_normal(n)
            dwp[i] = rng.standard_normal(n)
            if hist is not None:
                hist[i] = rng.standard_normal(L)
        dwy *= self._sqdt
        dwp *= self._sqdt
        y = _fft_convolve(dwy, self._w_f_hat, self._nfft_f, n + 1)
        if hist is not None:
            hist *= self._sqdt
            y += _fft_convolve(hist, self._w_h_hat, self._nfft_h, n + 1, offset=L)
        else:
            y += self.history_part
        return FactorBlock(np.arange(start, stop), y, dwy, dwp, self.rho, self.grid.dt)

    def blocks(self, n_paths: int, block_size: int = BLOCK_SIZE) -> Iterator[tuple[int, int]]:
        for start in range(0, n_paths, block_size):
            yield start, min(start + block_size, n_paths)

    def map_blocks(
        self,
        fn: Callable[[FactorBlock], dict[str, np.ndarray]],
        n_paths: int,
        workers: int = 1,
        block_size: int = BLOCK_SIZE,
    ) -> dict[str, np.ndarray]:
        """Apply ``fn`` to every block and concatenate per-path outputs in path order.

        Output is independent of ``workers``: blocks are fixed and results
        are reassembled by index.
        """
        spans = list(self.blocks(n_paths, block_size))

        def run(span: tuple[int, int]) -> dict[str, np.ndarray]:
            return fn(self.block(*span))

        if workers <= 1:
            parts = [run(s) for s in spans]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(run, spans))
        keys = parts[0].keys()
        return {k: np.concatenate([p[k] for p in parts], axis=0) for k in keys}


@dataclass
class FactorPath:
    """One discretised realisation of (W^Y, Y_eps, W).

    ``wy_increments`` spans history then future (length history_len + n_steps);
    ``w_increments`` and ``y_values`` live on [0, T].
    """

    grid: SimGrid
    wy_increments: np.ndarray
    w_increments: np.ndarray
    y_values: np.ndarray
    path_id: int = 0
    omega: int = 0


def simulate_factor(
    params: FouParams,
    grid: SimGrid,
    rho: float,
    seed: int,
    n_paths: int,
    shared_history: bool = True,
    omega: int = 0,
    workers: int = 1,
) -> list[FactorPath]:
    """Simulate ``n_paths`` factor paths (see :class:`FactorSimulator`)."""
    sim = FactorSimulator(params, grid, rho, seed, omega, shared_history)
    out: list[FactorPath] = []
    L = grid.history_len
    for start, stop in sim.blocks(n_paths):
        blk = sim.block(start, stop)
        for i in range(stop - start):
            if L > 0 and shared_history:
                hist = sim.history_increments
            elif L > 0:
                # regenerate the private history from the path's substream
                rng = substream(seed, omega, start + i + 1)
                rng.standard_normal(2 * grid.n_steps)
                hist = rng.standard_normal(L) * math.sqrt(grid.dt)
            else:
                hist = np.empty(0)
            out.append(
                FactorPath(
                    grid=grid,
                    wy_increments=np.concatenate([hist, blk.dwy[i]]),
                    w_increments=blk.dw[i],
                    y_values=blk.y[i],
                    path_id=start + i,
                    omega=omega,
                )
            )
    return out


def write_paths_csv(paths: Sequence[FactorPath], fh, header_lines: Sequence[str] = ()) -> None:
    """Write paths as CSV rows (path_id, t, y, w_increment, wy_increment).

    Increment columns hold the increment over [t, t + dt] and are empty at T.
    """
    for line in header_lines:
        fh.write(f"# {line}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["path_id", "t", "y", "w_increment", "wy_increment"])
    for p in paths:
        n, L = p.grid.n_steps, p.grid.history_len
        dwy = p.wy_increments[L:]
        for k in range(n + 1):
            t = f"{k * p.grid.dt:.6f}"
            if k < n:
                writer.writerow([p.path_id, t, f"{p.y_values[k]:.12f}", f"{p.w_increments[k]:.12f}", f"{dwy[k]:.12f}"])
            else:
                writer.writerow([p.path_id, t, f"{p.y_values[k]:.12f}", "", ""])


# ---------------------------------------------------------------------------
# Hermite coefficients
# ---------------------------------------------------------------------------


@dataclass
class HermiteReport:
    """Probabilists' Hermite coefficients and the weighted series check.

    ``normalized[k] = C_k / sqrt(k!)`` stays finite for large k, so the
    series ``sum alpha^k C_k^2 / k!`` is accumulated from it.
    """

    coefficients: np.ndarray
    normalized: np.ndarray
    k_used: int
    capped: bool
    notes: list[str] = field(default_factory=list)

    def weighted_partial_sums(self, alpha: float) -> np.ndarray:
        k = np.arange(self.k_used + 1)
        return np.cumsum(alpha**k * self.normalized**2)


def hermite_coefficients(
    f: Callable[[np.ndarray], np.ndarray],
    k_max: int,
    sigma_ou: float = 1.0,
    n_nodes: int = 400,
) -> HermiteReport:
    """C_k = E[He_k(Z) f(sigma_ou Z)] by Gauss-Hermite quadrature, k = 0..k_max."""
    notes: list[str] = []
    cap = min(k_max, n_nodes // 2)
    if cap < k_max:
        notes.append(f"k_max capped at {cap} (n_nodes={n_nodes})")
    z, w = special.roots_hermitenorm(n_nodes)
    w = w / math.sqrt(2 * math.pi)
    fz = np.asarray(f(sigma_ou * z), dtype=float)
    normalized = np.empty(cap + 1)
    h_prev, h = np.zeros_like(z), np.ones_like(z)
    for k in range(cap + 1):
        normalized[k] = np.dot(w, h * fz)
        h_prev, h = h, (z * h - math.sqrt(k) * h_prev) / math.sqrt(k + 1)
    with np.errstate(over="ignore"):
        scale = np.sqrt(special.factorial(np.arange(cap + 1), exact=False))
    coeffs = normalized * scale
    if not np.all(np.isfinite(coeffs)):
        notes.append("unnormalised coefficients overflow; use `normalized`")
    return HermiteReport(coeffs, normalized, cap, cap < k_max, notes)


# ---------------------------------------------------------------------------
# ergodic averages of Gaussian functionals
# ---------------------------------------------------------------------------


class CYTable:
    """C_Y on a log-spaced lag table with the power-law asymptote beyond it."""

    def __init__(self, a: float, H: float, s_max: float = 2e4, n_lin: int = 400, n_log: int = 600) -> None:
        from scipy.interpolate import CubicSpline

        self.a, self.H, self.s_max = a, H, s_max
        s = np.concatenate([np.linspace(0.0, 10.0, n_lin + 1)[:-1], np.geomspace(10.0, s_max, n_log)])
        vals = np.array([covariance_CY(float(x), a, H) for x in s])
        self._spline = CubicSpline(np.log1p(s), vals)
        self._tail = vals[-1] / long_lag_CY(s_max, a, H)

    def __call__(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        inside = self._spline(np.log1p(np.minimum(s, self.s_max)))
        far = self._tail * long_lag_CY(np.maximum(s, self.s_max), self.a, self.H)
        return np.where(s <= self.s_max, inside, far)


def ergodic_l2_oracle(
    normalized_coeffs: np.ndarray,
    params: FouParams,
    T: float = 1.0,
    cy: CYTable | None = None,
    n_r: int = 200001,
) -> float:
    """L2 norm of int_0^T (g(Y_s) - <g>) ds for stationary Y.

    With g = sum C_k He_k(Y / sigma_ou), Cov(g(Y_0), g(Y_s)) =
    sum_{k>=1} (C_k^2 / k!) C_Y(s / eps)^k, so the variance is
    2 int_0^T (T - r) sum_k (C_k^2 / k!) C_Y(r / eps)^k dr.
    """
    cy = cy if cy is not None else CYTable(params.a, params.H)
    r = np.linspace(0.0, T, n_r)
    c = cy(r / params.eps)
    nz = np.asarray(normalized_coeffs, dtype=float)
    acc = np.zeros_like(r)
    ck = np.ones_like(r)
    for k in range(1, len(nz)):
        ck = ck * c
        acc += nz[k] ** 2 * ck
    var = 2.0 * integrate.trapezoid((T - r) * acc, r)
    return math.sqrt(max(var, 0.0))
