"""Monte Carlo value estimators conditional on a shared factor history.

All estimators work on blocks produced by :class:`FactorSimulator`; with
common random numbers every estimator sees the same increments per path
index, so value gaps are computed from paired per-path influence values.

Proportional strategies (a fraction f of wealth in the risky asset) have
log X_T = sum (f mu - f^2 sigma^2 / 2) dt + sum f sigma dW on the grid.
Because f is driven by W^Y only, the orthogonal noise W_perp can be
integrated out exactly; ``mode="conditional"`` does that and
``mode="control"`` additionally uses the exponential martingale
exp(c int lambda dW^Y - c^2/2 int lambda^2 dt), of known mean one, as a
control variate.  ``mode="raw"`` evaluates the functionals as written.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .asymptotics import ExpansionInputs, phi0_samples, pi1_coefficient, practical_strategy
from .fou_engine import FactorBlock, FactorPath, FactorSimulator, SimGrid, make_grid
from .merton_engine import UtilitySpec

ESTIMATOR_IDS = {"optimal": 1, "pi0": 2, "practical": 3}
MODES = ("raw", "conditional", "control")


class UnsupportedEstimatorError(ValueError):
    pass


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Perturbation:
    """Bounded feedback perturbation, given as a fraction of wealth f(t, y)."""

    fraction: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "custom"


def constant_perturbation(c: float) -> Perturbation:
    return Perturbation(lambda t, y: np.full(np.shape(y), float(c)), f"const({c:g})")


def tanh_perturbation(c: float, scale: float) -> Perturbation:
    return Perturbation(lambda t, y: c * np.tanh(y / scale), f"tanh({c:g})")


def zero_perturbation() -> Perturbation:
    return Perturbation(lambda t, y: np.zeros(np.shape(y)), "zero")


@dataclass(frozen=True)
class StrategySpec:
    """Investment rule.

    kinds: ``zero``, ``pi0``, ``pi0_plus_correction``, ``practical`` (constant
    fraction ``c``), ``scaled`` (``scale`` times pi0) and ``perturbed``
    (``base`` + eps^alpha ``perturbation``).
    """

    kind: str
    utility: UtilitySpec
    c: float | None = None
    scale: float = 1.0
    base: "StrategySpec | None" = None
    perturbation: Perturbation | None = None
    alpha: float = 1.0

    def __post_init__(self) -> None:
        kinds = ("zero", "pi0", "pi0_plus_correction", "practical", "scaled", "perturbed")
        if self.kind not in kinds:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.kind == "perturbed":
            if not self.alpha > 0:
                raise ValueError(f"perturbed strategies need alpha > 0, got {self.alpha}")
            if self.base is None or self.perturbation is None:
                raise ValueError("perturbed strategies need a base and a perturbation")
        if self.kind == "practical" and self.c is None:
            raise ValueError("practical strategy needs the constant fraction c")

    @property
    def proportional(self) -> bool:
        if self.kind == "perturbed":
            return self.base.proportional
        return self.kind in ("zero", "practical") or self.utility.kind == "power"

    def fraction(self, t: np.ndarray, y: np.ndarray, inputs: ExpansionInputs) -> np.ndarray:
        """Fraction of wealth invested (proportional strategies only)."""
        if not self.proportional:
            raise ValueError(f"strategy {self.kind!r} with {self.utility.name} utility is not proportional")
        m = inputs.model
        if self.kind == "zero":
            return np.zeros(np.shape(y))
        if self.kind == "practical":
            return np.full(np.shape(y), float(self.c))
        if self.kind == "perturbed":
            eps = inputs.params.eps
            return self.base.fraction(t, y, inputs) + eps**self.alpha * self.perturbation.fraction(t, y)
        sig = m.sigma(y)
        f = m.lam(y) / (inputs.gamma * sig)
        if self.kind == "scaled":
            return self.scale * f
        if self.kind == "pi0_plus_correction":
            f = f + inputs.eps_factor * pi1_coefficient(t, inputs) / sig
        return f

    def amount(self, t, x, y, inputs: ExpansionInputs, merton=None) -> np.ndarray:
        """Amount invested in the risky asset."""
        if self.proportional:
            return self.fraction(t, y, inputs) * x
        from .asymptotics import merton_at_lambda_bar

        sol = merton if merton is not None else merton_at_lambda_bar(inputs, self.utility)
        m = inputs.model
        base = m.lam(y) / m.sigma(y) * sol.risk_tolerance(t, x)
        if self.kind == "scaled":
            return self.scale * base
        if self.kind == "perturbed":
            eps = inputs.params.eps
            return self.base.amount(t, x, y, inputs, sol) + eps**self.alpha * self.perturbation.fraction(t, y) * x
        return base


def pi0_strategy(utility: UtilitySpec) -> StrategySpec:
    return StrategySpec("pi0", utility)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class EstimatorReport:
    """Monte Carlo estimate with its standard error and seed lineage.

    ``estimate`` is the raw value (with the 1/(1-gamma) factor);
    ``normalized`` multiplies by (1 - gamma).
    """

    estimate: float
    std_error: float
    n_paths: int
    seed: int
    omega_id: int
    estimator_id: str
    gamma: float = float("nan")
    n_flagged: int = 0
    influence: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def normalized(self) -> float:
        return (1 - self.gamma) * self.estimate

    @property
    def normalized_se(self) -> float:
        return abs(1 - self.gamma) * self.std_error


@dataclass
class GapReport:
    """Difference of two estimators with its (paired when possible) standard error."""

    name: str
    estimate: float
    std_error: float
    paired: bool
    gamma: float = float("nan")

    @property
    def normalized(self) -> float:
        return (1 - self.gamma) * self.estimate

    @property
    def normalized_se(self) -> float:
        return abs(1 - self.gamma) * self.std_error

    @property
    def z(self) -> float:
        return self.estimate / self.std_error if self.std_error > 0 else math.copysign(math.inf, self.estimate) if self.estimate else 0.0


def _summarize(
    e: np.ndarray,
    cv: np.ndarray | None,
    transform: Callable[[float], float],
    dtransform: Callable[[float], float],
    positive: bool = True,
) -> tuple[float, np.ndarray]:
    """Estimate g(E[e]) and per-path influence values (delta method).

    With a control variate ``cv`` (known mean zero) the mean is adjusted by
    the regression coefficient of e on cv.
    """
    m = float(np.mean(e))
    resid = e - m
    if cv is not None:
        vc = float(np.dot(cv - cv.mean(), cv - cv.mean()))
        if vc > 0:
            beta = float(np.dot(resid, cv - cv.mean())) / vc
            m = m - beta * float(np.mean(cv))
            resid = e - beta * cv - m
    if positive and not m > 0:
        raise ArithmeticError("non-positive mean of exponential functional")
    return transform(m), dtransform(m) * resid


def _report(value: float, infl: np.ndarray, seed: int, omega: int, est_id: str, gamma: float, flagged: int = 0):
    n = len(infl)
    se = float(np.std(infl, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return EstimatorReport(value, se, n, seed, omega, est_id, gamma, flagged, infl)


def gap(a: EstimatorReport, b: EstimatorReport, name: str, paired: bool = True) -> GapReport:
    """a - b with paired standard error when both came from the same paths."""
    est = a.estimate - b.estimate
    if paired and a.influence is not None and b.influence is not None and len(a.influence) == len(b.influence):
        se = float(np.std(a.influence - b.influence, ddof=1) / math.sqrt(len(a.influence)))
    else:
        se = math.hypot(a.std_error, b.std_error)
        paired = False
    return GapReport(name, est, se, paired, a.gamma)


# ---------------------------------------------------------------------------
# path functionals
# ---------------------------------------------------------------------------


def _path_arrays(b: FactorBlock, inputs: ExpansionInputs):
    y = b.y[:, :-1]
    m = inputs.model
    lam2 = m.lambda_sq(y)
    lam = np.sqrt(lam2)
    mu = m.mu(y)
    sig = mu / lam
    return y, lam2, lam, mu, sig


def _log_utility_exponent(f, mu, sig, b: FactorBlock, gamma: float, mode: str) -> np.ndarray:
    """(1 - gamma) log(X_T / x0) for fraction f, or its W_perp-integrated version."""
    dt, rho = b.dt, b.rho
    fs = f * sig
    drift = (f * mu - 0.5 * fs * fs).sum(axis=1) * dt
    if mode == "raw":
        return (1 - gamma) * (drift + (fs * b.dw).sum(axis=1))
    quad = (fs * fs).sum(axis=1) * dt
    return (1 - gamma) * (drift + rho * (fs * b.dwy).sum(axis=1)) + 0.5 * (1 - gamma) ** 2 * (1 - rho**2) * quad


def _control_variate(lam2, lam, b: FactorBlock, gamma: float) -> np.ndarray:
    c = b.rho * (1 - gamma) / gamma
    return np.exp(c * (lam * b.dwy).sum(axis=1) - 0.5 * c * c * lam2.sum(axis=1) * b.dt) - 1.0


def _check_power(utility: UtilitySpec | None, inputs: ExpansionInputs) -> None:
    if utility is not None and utility.kind != "power":
        raise UnsupportedEstimatorError("distortion-based estimators need power utility")


@dataclass
class Table1Result:
    eps: float
    omega_id: int
    optimal: EstimatorReport
    pi0: EstimatorReport
    practical: EstimatorReport
    gap_pi0: GapReport
    gap_practical: GapReport
    c_star: float
    mode: str
    crn: bool


def _table1_functionals(inputs: ExpansionInputs, c_star: float, mode: str, which: Sequence[str]):
    g = inputs.gamma

    def fn(b: FactorBlock) -> dict[str, np.ndarray]:
        y, lam2, lam, mu, sig = _path_arrays(b, inputs)
        out = {}
        if "optimal" in which:
            A = lam2.sum(axis=1) * b.dt
            B = (lam * b.dwy).sum(axis=1)
            out["optimal"] = (1 - g) / (2 * g) * A + b.rho * (1 - g) / g * B
        if "pi0" in which:
            out["pi0"] = _log_utility_exponent(lam / (g * sig), mu, sig, b, g, mode)
        if "practical" in which:
            out["practical"] = _log_utility_exponent(np.full_like(lam, c_star), mu, sig, b, g, mode)
        if mode == "control":
            out["cv"] = _control_variate(lam2, lam, b, g)
        return out

    return fn


def _estimate_from_exponents(name: str, z: np.ndarray, cv, inputs: ExpansionInputs, x0: float,
                             seed: int, omega: int) -> EstimatorReport:
    g = inputs.gamma
    pref = x0 ** (1 - g) / (1 - g)
    e = np.exp(z)
    if name == "optimal":
        q = inputs.model.q
        val, infl = _summarize(e, cv, lambda m: pref * m**q, lambda m: pref * q * m ** (q - 1))
    else:
        val, infl = _summarize(e, cv, lambda m: pref * m, lambda m: pref)
    return _report(val, infl, seed, omega, name, g)


def run_estimators(
    inputs: ExpansionInputs,
    grid: SimGrid,
    n_paths: int,
    seed: int,
    omega: int = 0,
    x0: float = 1.0,
    which: Sequence[str] = ("optimal", "pi0", "practical"),
    mode: str = "control",
    crn: bool = True,
    workers: int = 1,
    utility: UtilitySpec | None = None,
) -> dict[str, EstimatorReport]:
    """Evaluate the requested value estimators at t = 0 given omega's history.

    With ``crn`` all estimators share the per-path increments; otherwise
    each draws future increments from its own substreams (the history is
    always shared within an omega).
    """
    _check_power(utility, inputs)
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    c_star = practical_strategy(inputs).c_star
    out: dict[str, EstimatorReport] = {}
    groups = [tuple(which)] if crn else [(w,) for w in which]
    for grp in groups:
        est_id = None if crn else ESTIMATOR_IDS[grp[0]]
        sim = FactorSimulator(inputs.params, grid, inputs.rho, seed, omega, True, est_id)
        if est_id is not None:
            # histories must coincide across estimators: draw them from the common stream
            ref = FactorSimulator(inputs.params, grid, inputs.rho, seed, omega, True)
            sim = FactorSimulator(inputs.params, grid, inputs.rho, seed, omega, True, est_id,
                                  history_increments=ref.history_increments)
        res = sim.map_blocks(_table1_functionals(inputs, c_star, mode, grp), n_paths, workers)
        cv = res.get("cv")
        for name in grp:
            out[name] = _estimate_from_exponents(name, res[name], cv, inputs, x0, seed, omega)
    return out


def estimate_value_optimal(inputs, grid, n_paths, seed, omega=0, x0=1.0, mode="control", workers=1, utility=None):
    """V_0^eps by the distortion formula: prefactor times E[exp(...)]^q."""
    return run_estimators(inputs, grid, n_paths, seed, omega, x0, ("optimal",), mode, True, workers, utility)["optimal"]


def estimate_value_pi0(inputs, grid, n_paths, seed, omega=0, x0=1.0, mode="control", workers=1, utility=None):
    """V_0^{pi0, eps}, expected utility of the leading-order strategy."""
    return run_estimators(inputs, grid, n_paths, seed, omega, x0, ("pi0",), mode, True, workers, utility)["pi0"]


def estimate_value_practical(inputs, grid, n_paths, seed, omega=0, x0=1.0, mode="control", workers=1, utility=None):
    """Expected utility of the constant-fraction strategy mu_bar / (gamma sigma_bar^2)."""
    return run_estimators(inputs, grid, n_paths, seed, omega, x0, ("practical",), mode, True, workers, utility)["practical"]


def table1_row(inputs, grid, n_paths, seed, omega=0, x0=1.0, mode="control", crn=True, workers=1) -> Table1Result:
    r = run_estimators(inputs, grid, n_paths, seed, omega, x0, ("optimal", "pi0", "practical"), mode, crn, workers)
    return Table1Result(
        eps=inputs.params.eps,
        omega_id=omega,
        optimal=r["optimal"],
        pi0=r["pi0"],
        practical=r["practical"],
        gap_pi0=gap(r["optimal"], r["pi0"], "V - V^pi0", crn),
        gap_practical=gap(r["optimal"], r["practical"], "V - V^practical", crn),
        c_star=practical_strategy(inputs).c_star,
        mode=mode,
        crn=crn,
    )


# ---------------------------------------------------------------------------
# wealth simulation
# ---------------------------------------------------------------------------


@dataclass
class WealthPath:
    times: np.ndarray
    wealth: np.ndarray
    flagged: bool = False

    @property
    def terminal(self) -> float:
        return float(self.wealth[-1])


def simulate_wealth(strategy: StrategySpec, factor: FactorPath, x0: float, inputs: ExpansionInputs,
                    merton=None) -> WealthPath:
    """Wealth along one factor path.

    Proportional strategies use the exact log-wealth update; other
    strategies use Euler-Maruyama with absorption at zero.  A NaN or
    overflow flags the path.
    """
    if not x0 > 0:
        raise ValueError(f"x0 must be > 0, got {x0}")
    grid = factor.grid
    dt, n = grid.dt, grid.n_steps
    t = np.arange(n) * dt
    y = factor.y_values[:-1]
    dw = factor.w_increments
    m = inputs.model
    mu, sig = m.mu(y), m.sigma(y)
    x = np.empty(n + 1)
    x[0] = x0
    flagged = False
    with np.errstate(over="ignore", invalid="ignore"):
        if strategy.proportional:
            f = strategy.fraction(t, y, inputs)
            incr = (f * mu - 0.5 * (f * sig) ** 2) * dt + f * sig * dw
            x[1:] = x0 * np.exp(np.cumsum(incr))
        else:
            if merton is None:
                from .asymptotics import merton_at_lambda_bar

                merton = merton_at_lambda_bar(inputs, strategy.utility)
            for k in range(n):
                if x[k] <= 0:
                    x[k + 1:] = 0.0
                    break
                pi = strategy.amount(t[k], x[k], y[k], inputs, merton)
                x[k + 1] = max(x[k] + pi * (mu[k] * dt + sig[k] * dw[k]), 0.0)
    if not np.all(np.isfinite(x)):
        flagged = True
    return WealthPath(np.arange(n + 1) * dt, x, flagged)


def estimate_value_direct(strategy: StrategySpec, inputs: ExpansionInputs, grid: SimGrid, n_paths: int, seed: int,
                          omega: int = 0, x0: float = 1.0, workers: int = 1) -> EstimatorReport:
    """E[U(X_T)] from simulated wealth (proportional strategies, vectorised)."""
    u = strategy.utility
    t = np.arange(grid.n_steps) * grid.dt

    def fn(b: FactorBlock):
        y, lam2, lam, mu, sig = _path_arrays(b, inputs)
        f = strategy.fraction(t[None, :], y, inputs)
        with np.errstate(over="ignore", invalid="ignore"):
            logx = np.log(x0) + ((f * mu - 0.5 * (f * sig) ** 2) * b.dt + f * sig * b.dw).sum(axis=1)
            return {"u": u.U(np.exp(logx))}

    sim = FactorSimulator(inputs.params, grid, inputs.rho, seed, omega, True)
    vals = sim.map_blocks(fn, n_paths, workers)["u"]
    ok = np.isfinite(vals)
    vals = vals[ok]
    return _report(float(vals.mean()), vals - vals.mean(), seed, omega, "direct", inputs.gamma, int((~ok).sum()))


# ---------------------------------------------------------------------------
# optimality probe
# ---------------------------------------------------------------------------


@dataclass
class ProbeRow:
    eps: float
    gap: float
    std_error: float
    ratio: float
    ratio_se: float
    n_paths: int
    n_flagged: int = 0


@dataclass
class ProbeResult:
    label: str
    alpha: float
    rows: list[ProbeRow]

    @property
    def eps(self) -> np.ndarray:
        return np.array([r.eps for r in self.rows])

    @property
    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.rows])

    @property
    def ses(self) -> np.ndarray:
        return np.array([r.std_error for r in self.rows])

    def loglog_slope(self) -> tuple[float, float]:
        """Weighted least-squares slope of log|gap| against log eps, with its standard error."""
        return weighted_slope(np.log(self.eps), np.log(np.abs(self.gaps)), self.ses / np.abs(self.gaps))

    def ratio_limit(self, H: float) -> tuple[float, float]:
        """Weighted extrapolation of gap / eps^(1-H) to eps = 0: intercept and its SE.

        A perturbation of size eps^alpha changes the value by eps^alpha times
        the gradient at pi0 (itself of order eps^(1-H)) plus eps^(2 alpha) times
        a quadratic term, so the ratio is fitted as
        b0 + b1 eps^alpha + b2 eps^(2 alpha - (1-H)), keeping positive, distinct powers.
        """
        r = np.array([row.ratio for row in self.rows])
        s = np.array([row.ratio_se for row in self.rows])
        powers = []
        for p in (self.alpha, 2 * self.alpha - (1 - H)):
            if p > 1e-9 and all(abs(p - q) > 1e-9 for q in powers):
                powers.append(p)
        powers = powers[: max(len(r) - 2, 0)]
        X = np.column_stack([np.ones_like(r)] + [self.eps**p for p in powers])
        W = 1 / s**2
        XtW = X.T * W
        cov = np.linalg.inv(XtW @ X)
        beta = cov @ (XtW @ r)
        return float(beta[0]), float(math.sqrt(cov[0, 0]))


def weighted_slope(x: np.ndarray, y: np.ndarray, sy: np.ndarray) -> tuple[float, float]:
    """Slope and its standard error for y = a + b x with weights 1/sy^2."""
    w = 1 / np.asarray(sy) ** 2
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    b = float(np.sum(w * (x - xm) * (y - ym)) / sxx)
    return b, float(math.sqrt(1 / sxx))


def optimality_probe(
    inputs: ExpansionInputs,
    candidate: StrategySpec,
    eps_list: Sequence[float],
    dt: float,
    n_paths: int,
    seed: int,
    omega: int = 0,
    x0: float = 1.0,
    mode: str = "control",
    workers: int = 1,
    label: str = "",
    history: str | float = "auto",
) -> ProbeResult:
    """Paired estimates of V^{candidate} - V^{pi0} over an eps ladder (power utility)."""
    label = label or candidate.kind
    return optimality_probes(inputs, {label: candidate}, eps_list, dt, n_paths, seed, omega, x0, mode, workers,
                             history)[label]


def optimality_probes(
    inputs: ExpansionInputs,
    candidates: dict[str, StrategySpec],
    eps_list: Sequence[float],
    dt: float,
    n_paths: int,
    seed: int,
    omega: int = 0,
    x0: float = 1.0,
    mode: str = "control",
    workers: int = 1,
    history: str | float = "auto",
) -> dict[str, ProbeResult]:
    """Several candidates probed against pi0 on one set of paths per eps."""
    if not candidates:
        return {}
    for c in candidates.values():
        _check_power(c.utility, inputs)
    base = pi0_strategy(next(iter(candidates.values())).utility)
    g = inputs.gamma
    pref = x0 ** (1 - g) / (1 - g)
    rows: dict[str, list[ProbeRow]] = {k: [] for k in candidates}
    for eps in eps_list:
        inp = inputs.with_eps(eps)
        grid = make_grid(inp.T, dt, inp.params, history=history)
        t = np.arange(grid.n_steps)[None, :] * grid.dt

        def fn(b: FactorBlock, inp=inp, t=t):
            y, lam2, lam, mu, sig = _path_arrays(b, inp)
            out = {"base": _log_utility_exponent(base.fraction(t, y, inp), mu, sig, b, g, mode)}
            for k, c in candidates.items():
                out[k] = _log_utility_exponent(c.fraction(t, y, inp), mu, sig, b, g, mode)
            if mode == "control":
                out["cv"] = _control_variate(lam2, lam, b, g)
            return out

        sim = FactorSimulator(inp.params, grid, inp.rho, seed, omega, True)
        res = sim.map_blocks(fn, n_paths, workers)
        scale = eps ** (1 - inp.params.H)
        for k in candidates:
            with np.errstate(over="ignore", invalid="ignore"):
                d = pref * (np.exp(res[k]) - np.exp(res["base"]))
            ok = np.isfinite(d)
            d = d[ok]
            cv = res["cv"][ok] if "cv" in res else None
            val, infl = _summarize(d, cv, lambda m: m, lambda m: 1.0, positive=False)
            se = float(np.std(infl, ddof=1) / math.sqrt(len(d)))
            rows[k].append(ProbeRow(eps, val, se, val / scale, se / scale, len(d), int((~ok).sum())))
    return {k: ProbeResult(k, candidates[k].alpha, rows[k]) for k in candidates}


# ---------------------------------------------------------------------------
# scaling laws
# ---------------------------------------------------------------------------


def ergodic_l2_norms(inputs: ExpansionInputs, grid: SimGrid, n_paths: int, seed: int, omega: int = 0,
                     workers: int = 1) -> dict[str, tuple[float, float]]:
    """L2 norms (with standard errors) of eta_T, kappa_T and I_T over stationary paths.

    Each path has its own history, so samples are unconditional.
    """
    m, A = inputs.model, inputs.averages
    funcs = {
        "eta": (m.lam, A.lambda_tilde),
        "kappa": (m.lambda_lambda_prime, A.avg_lambda_lambda_prime),
        "I": (m.lambda_sq, A.lambda_bar_sq),
    }

    if m.is_constant:
        # integrands vanish identically
        return {k: (0.0, 0.0) for k in funcs}

    def fn(b: FactorBlock):
        y = b.y[:, :-1]
        return {k: (f(y) - avg).sum(axis=1) * b.dt for k, (f, avg) in funcs.items()}

    sim = FactorSimulator(inputs.params, grid, 0.0, seed, omega, shared_history=False)
    res = sim.map_blocks(fn, n_paths, workers)
    out = {}
    for k, v in res.items():
        sq = v**2
        ms = float(sq.mean())
        se_ms = float(sq.std(ddof=1) / math.sqrt(len(sq)))
        norm = math.sqrt(ms)
        out[k] = (norm, se_ms / (2 * norm) if norm > 0 else 0.0)
    return out


def phi0_variance(inputs: ExpansionInputs, grid: SimGrid, n_histories: int, seed: int, omega: int = 0) -> tuple[float, float, float]:
    """Sample variance of phi_0^eps over independent histories: (variance, its SE, mean)."""
    s = phi0_samples(inputs, grid, n_histories, seed, omega)
    n = len(s)
    var = float(s.var(ddof=1))
    c = s - s.mean()
    m4 = float(np.mean(c**4))
    se = math.sqrt(max(m4 - var**2, 0.0) / n)
    return var, se, float(s.mean())
