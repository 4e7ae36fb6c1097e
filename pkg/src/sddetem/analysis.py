"""Monte Carlo estimators and stability-transfer arithmetic.

Everything here consumes immutable ensembles and is deterministic given the
seeds: means reduce over the ascending path axis with numpy's fixed reduction,
and every reported estimate carries a normal-approximation standard error.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import SddeProblem
from .noise import BrownianLattice
from .scheme import SchemeRun, TrajectoryEnsemble, TruncationPolicy, simulate_sampled

__all__ = [
    "MomentSeries",
    "DecayFit",
    "ConvergenceReport",
    "TransferConstants",
    "EquivalenceReport",
    "StepGapReport",
    "estimate_moment",
    "fit_decay",
    "strong_error",
    "transfer_constants",
    "check_transfer_condition",
    "equivalence_experiment",
    "step_gap_scaling",
]

_GRID_SNAP = 1e-9


@dataclass(frozen=True)
class MomentSeries:
    """Monte Carlo estimates of ``E|x(t)|^p`` on a time grid."""

    p: float
    times: np.ndarray
    values: np.ndarray
    std_errors: np.ndarray
    n_paths: int
    flagged_fraction: float

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        finite = self.values[np.isfinite(self.values)]
        if np.any(finite < 0):
            raise ValueError("moment values must be nonnegative")


def estimate_moment(ensemble: TrajectoryEnsemble, p: float, times) -> MomentSeries:
    """Average ``|x(t)|^p`` over the ensemble at each requested grid time.

    Exploded (flagged) paths stay in the average; their contribution shows up
    as a large or infinite moment, and the flagged fraction is reported
    alongside rather than being hidden by dropping paths.
    """
    if p <= 0:
        raise ValueError(f"moment order p must be positive, got {p}")
    if ensemble.n_paths < 1:
        raise ValueError("ensemble has no paths")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size == 0:
        raise ValueError("no sample times given")
    run = ensemble.run
    cols = []
    for t in times:
        u = t / run.delta
        k = round(u)
        if abs(u - k) > _GRID_SNAP * max(1.0, abs(u)):
            raise ValueError(f"time {t} is not on the grid (delta={run.delta})")
        cols.append(ensemble.position_of(k))
    with np.errstate(over="ignore"):
        norms = np.linalg.norm(ensemble.states[:, cols], axis=-1)
        powered = norms**p
        values = np.mean(powered, axis=0)
        if ensemble.n_paths > 1:
            std = np.std(powered, axis=0, ddof=1)
            ses = std / math.sqrt(ensemble.n_paths)
        else:
            ses = np.zeros_like(values)
    return MomentSeries(
        p=p,
        times=times,
        values=values,
        std_errors=ses,
        n_paths=ensemble.n_paths,
        flagged_fraction=ensemble.flagged_fraction,
    )


@dataclass(frozen=True)
class DecayFit:
    """Least-squares line through ``log E|x(t)|^p`` against ``t``.

    ``lambda_hat`` is minus the slope, so positive values mean exponential
    decay at that rate; ``log_m_hat`` is the intercept.
    """

    lambda_hat: float
    log_m_hat: float
    r_squared: float
    window: tuple[float, float]
    n_points: int
    lambda_std_error: float


def fit_decay(series: MomentSeries, window: Optional[tuple[float, float]] = None) -> DecayFit:
    """Fit an exponential decay rate to a moment series on a time window.

    The window defaults to the last three quarters of the series, skipping
    early transients.  All moment values inside the window must be strictly
    positive; at least five points are required.
    """
    if window is None:
        t_hi = float(series.times[-1])
        window = (t_hi / 4.0, t_hi)
    t_lo, t_hi = float(window[0]), float(window[1])
    mask = (series.times >= t_lo) & (series.times <= t_hi)
    t = series.times[mask]
    v = series.values[mask]
    if t.size < 5:
        raise ValueError(
            f"decay fit needs at least 5 points in [{t_lo}, {t_hi}], got {t.size}"
        )
    bad = ~(v > 0.0) | ~np.isfinite(v)
    if bad.any():
        t_bad = float(t[np.argmax(bad)])
        raise ValueError(
            f"moment values must be positive and finite in the fit window; "
            f"first offending time: {t_bad}"
        )
    z = np.log(v)
    slope, intercept, r2, slope_se = _least_squares_line(t, z)
    return DecayFit(
        lambda_hat=-slope,
        log_m_hat=intercept,
        r_squared=r2,
        window=(t_lo, t_hi),
        n_points=int(t.size),
        lambda_std_error=slope_se,
    )


def _least_squares_line(x: np.ndarray, y: np.ndarray):
    xbar = float(np.mean(x))
    ybar = float(np.mean(y))
    dx = x - xbar
    dy = y - ybar
    sxx = float(np.sum(dx * dx))
    if sxx == 0.0:
        raise ValueError("degenerate fit: all abscissae coincide")
    slope = float(np.sum(dx * dy)) / sxx
    intercept = ybar - slope * xbar
    resid = dy - slope * dx
    ss_res = float(np.sum(resid * resid))
    ss_tot = float(np.sum(dy * dy))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    n = x.size
    slope_se = math.sqrt(ss_res / (n - 2) / sxx) if n > 2 else 0.0
    return slope, intercept, r2, slope_se


@dataclass(frozen=True)
class ConvergenceReport:
    """Coupled-path errors against a fine reference across step sizes."""

    deltas: np.ndarray
    errors: np.ndarray
    std_errors: np.ndarray
    fitted_order: float
    q_bar: float
    r_squared: float

    def __post_init__(self):
        if np.any(np.diff(self.deltas) >= 0):
            raise ValueError("deltas must be strictly decreasing")

    @property
    def rms_order(self) -> float:
        """Convergence order of the q_bar-th root of the error."""
        return self.fitted_order / self.q_bar


def strong_error(
    problem: SddeProblem,
    policy: TruncationPolicy,
    delta_list,
    reference_m_sub: int,
    q_bar: float,
    n_paths: int,
    horizon: float,
    seed: int,
    threads: int = 1,
) -> ConvergenceReport:
    """Estimate the strong convergence order against a fine-grid reference.

    Every step size is run on the same Brownian master lattice (the reference
    grid), so the per-path error ``|x_ref(T) - x_delta(T)|`` reflects the
    discretization alone.  The reference is the truncated scheme at
    ``tau / reference_m_sub``, standing in for the unavailable exact solution.
    """
    if q_bar < 2:
        raise ValueError(f"q_bar must be >= 2, got {q_bar}")
    tau = problem.tau
    deltas = np.sort(np.unique(np.asarray(delta_list, dtype=float)))[::-1]
    if deltas.size == 0:
        raise ValueError("delta_list is empty")
    m_subs = []
    for d in deltas:
        m = round(tau / d)
        if m < 1 or abs(tau / m - d) > _GRID_SNAP * d:
            raise ValueError(f"delta {d} is not tau/M for an integer M")
        if reference_m_sub % m != 0:
            raise ValueError(
                f"delta {d} (M={m}) is not an integer multiple of the "
                f"reference step (M={reference_m_sub})"
            )
        m_subs.append(m)
    master_dt = tau / reference_m_sub
    n_master = round(horizon / master_dt)
    lattice = BrownianLattice(
        master_dt=master_dt,
        n_steps=max(1, n_master),
        noise_dim=problem.noise_dim,
        seed=seed,
    )

    def terminal(m_sub: int) -> np.ndarray:
        run = SchemeRun(problem, policy, m_sub=m_sub, horizon=horizon)
        ens = simulate_sampled(run, lattice, n_paths, [horizon])
        return ens.states[:, -1]

    ref = terminal(reference_m_sub)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            coarse = list(pool.map(terminal, m_subs))
    else:
        coarse = [terminal(m) for m in m_subs]

    errors = np.empty(deltas.size)
    ses = np.empty(deltas.size)
    for i, x_T in enumerate(coarse):
        e = np.linalg.norm(ref - x_T, axis=-1) ** q_bar
        errors[i] = float(np.mean(e))
        ses[i] = float(np.std(e, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0

    positive = errors > 0.0
    if np.count_nonzero(positive) >= 2:
        slope, _, r2, _ = _least_squares_line(
            np.log(deltas[positive]), np.log(errors[positive])
        )
    else:
        slope, r2 = float("nan"), float("nan")
    return ConvergenceReport(
        deltas=deltas,
        errors=errors,
        std_errors=ses,
        fitted_order=slope,
        q_bar=q_bar,
        r_squared=r2,
    )


@dataclass(frozen=True)
class TransferConstants:
    """Constants converting a decay certificate between the equation and the
    scheme: halve the rate, inflate the growth constant over one window."""

    direction: str
    input_rate: float
    input_growth: float
    p: float
    tau: float
    c_star: float
    window_t: float
    output_rate: float
    output_growth: float


def transfer_constants(
    direction: str,
    input_rate: float,
    input_growth: float,
    p: float,
    tau: float,
    c_star: float = 1.0,
) -> TransferConstants:
    """Compute the transferred decay certificate ``(rate/2, growth', T)``.

    ``T = tau * (9 + floor(4 * ln(2^p * growth) / (rate * tau)))`` and the
    transferred growth constant is ``2^(p+1) * growth * c_star *
    exp(rate * T / 2)``; both directions use the same arithmetic.
    """
    if direction not in ("sdde_to_scheme", "scheme_to_sdde"):
        raise ValueError(f"unknown direction {direction!r}")
    if input_rate <= 0:
        raise ValueError(f"input_rate must be positive, got {input_rate}")
    if input_growth < 1:
        raise ValueError(f"input_growth must be >= 1, got {input_growth}")
    if p <= 0:
        raise ValueError(f"p must be positive, got {p}")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if c_star < 1:
        raise ValueError(f"c_star must be >= 1, got {c_star}")
    bracket = 4.0 * math.log(2.0**p * input_growth) / (input_rate * tau)
    window_t = tau * (9 + math.floor(bracket))
    output_growth = (
        2.0 ** (p + 1) * input_growth * c_star * math.exp(input_rate * window_t / 2.0)
    )
    return TransferConstants(
        direction=direction,
        input_rate=input_rate,
        input_growth=input_growth,
        p=p,
        tau=tau,
        c_star=c_star,
        window_t=window_t,
        output_rate=input_rate / 2.0,
        output_growth=output_growth,
    )


def check_transfer_condition(
    c_of_t: float,
    alpha_of_delta: float,
    p: float,
    growth: float,
    rate: float,
    window_t: float,
    tau: float,
) -> bool:
    """Whether the finite-time error is small enough for the decay transfer:

        2^p * C(2T - 2*tau) * alpha + 2^p * H * e^{-rate (T - 2 tau)}
            <= e^{-rate T / 2}   (inclusive).
    """
    for name, v in [
        ("c_of_t", c_of_t),
        ("alpha_of_delta", alpha_of_delta),
        ("p", p),
        ("growth", growth),
        ("rate", rate),
        ("tau", tau),
    ]:
        if v < 0 or (name in ("p", "growth", "rate", "tau") and v <= 0):
            raise ValueError(f"{name} must be positive, got {v}")
    if window_t <= 2 * tau:
        raise ValueError(f"window_t={window_t} must exceed 2*tau={2 * tau}")
    lhs = 2.0**p * c_of_t * alpha_of_delta + 2.0**p * growth * math.exp(
        -rate * (window_t - 2.0 * tau)
    )
    rhs = math.exp(-rate * window_t / 2.0)
    return lhs <= rhs


@dataclass(frozen=True)
class EquivalenceReport:
    """Decay fits of the scheme at a working step and a finer proxy step."""

    p: float
    delta: float
    fine_delta: float
    degenerate: bool
    coarse_moments: MomentSeries
    fine_moments: MomentSeries
    coarse_fit: Optional[DecayFit]
    fine_fit: Optional[DecayFit]
    sign_agreement: Optional[bool]
    transfer: Optional[TransferConstants]


def _moment_sample_times(delta: float, horizon: float, max_points: int = 257):
    n_steps = round(horizon / delta)
    stride = max(1, -(-(n_steps + 1) // max_points))
    ks = np.arange(0, n_steps + 1, stride)
    if ks[-1] != n_steps:
        ks = np.append(ks, n_steps)
    return ks * delta


def equivalence_experiment(
    problem: SddeProblem,
    policy: TruncationPolicy,
    p: float,
    m_sub: int,
    horizon: float,
    n_paths: int,
    seed: int,
    fine_factor: int = 8,
    fit_window: Optional[tuple[float, float]] = None,
    c_star: float = 1.0,
) -> EquivalenceReport:
    """Probe moment-decay agreement between a working step size and a finer one.

    Both resolutions run on the same Brownian master lattice.  The finer run
    stands in for the underlying solution; its fitted rate feeds the transfer
    arithmetic so the report shows what decay certificate the scheme side
    implies.  With identically zero initial data the origin is a fixed point
    and the report is flagged degenerate instead of fitting logs of zero.
    """
    if not problem.origin_fixed:
        raise ValueError(
            "the equivalence experiment requires a problem with a fixed origin "
            "(f(0,0) = g(0,0) = 0)"
        )
    tau = problem.tau
    delta = tau / m_sub
    fine_m = m_sub * fine_factor
    master_dt = tau / fine_m
    lattice = BrownianLattice(
        master_dt=master_dt,
        n_steps=max(1, round(horizon / master_dt)),
        noise_dim=problem.noise_dim,
        seed=seed,
    )
    times = _moment_sample_times(delta, horizon)
    coarse_run = SchemeRun(problem, policy, m_sub=m_sub, horizon=horizon)
    fine_run = SchemeRun(problem, policy, m_sub=fine_m, horizon=horizon)
    coarse = estimate_moment(
        simulate_sampled(coarse_run, lattice, n_paths, times), p, times
    )
    fine = estimate_moment(
        simulate_sampled(fine_run, lattice, n_paths, times), p, times
    )

    if float(np.max(coarse.values)) == 0.0 and float(np.max(fine.values)) == 0.0:
        return EquivalenceReport(
            p=p,
            delta=delta,
            fine_delta=tau / fine_m,
            degenerate=True,
            coarse_moments=coarse,
            fine_moments=fine,
            coarse_fit=None,
            fine_fit=None,
            sign_agreement=None,
            transfer=None,
        )

    coarse_fit = fit_decay(coarse, fit_window)
    fine_fit = fit_decay(fine, fit_window)
    transfer = None
    if fine_fit.lambda_hat > 0:
        xi_sup = problem.initial.sup_norm()
        growth = math.exp(fine_fit.log_m_hat)
        if xi_sup > 0:
            growth /= xi_sup**p
        transfer = transfer_constants(
            "sdde_to_scheme",
            input_rate=fine_fit.lambda_hat,
            input_growth=max(1.0, growth),
            p=p,
            tau=tau,
            c_star=c_star,
        )
    return EquivalenceReport(
        p=p,
        delta=delta,
        fine_delta=tau / fine_m,
        degenerate=False,
        coarse_moments=coarse,
        fine_moments=fine,
        coarse_fit=coarse_fit,
        fine_fit=fine_fit,
        sign_agreement=(coarse_fit.lambda_hat > 0) == (fine_fit.lambda_hat > 0),
        transfer=transfer,
    )


@dataclass(frozen=True)
class StepGapReport:
    """Worst-time mean-square gap between the interpolant and the step process
    across step sizes, with its log-log slope."""

    deltas: np.ndarray
    max_gaps: np.ndarray
    slope: float


def step_gap_scaling(
    problem: SddeProblem,
    policy: TruncationPolicy,
    m_sub_list,
    horizon: float,
    n_paths: int,
    seed: int,
) -> StepGapReport:
    """Measure ``max_t E|x(t) - xbar(t)|^2`` at step midpoints per step size.

    Within a step the interpolant differs from the frozen left value by the
    drift ramp plus the Brownian displacement, so the midpoint gap is computed
    in-stream from the same coefficients the scheme uses, with the half-step
    Brownian displacement taken from a master lattice at twice the resolution.
    """
    m_subs = sorted(int(m) for m in m_sub_list)
    deltas = []
    gaps = []
    for m_sub in m_subs:  # largest delta first
        run = SchemeRun(problem, policy, m_sub=m_sub, horizon=horizon)
        delta = run.delta
        K = run.n_steps
        lattice = BrownianLattice(
            master_dt=delta / 2.0,
            n_steps=2 * K,
            noise_dim=problem.noise_dim,
            seed=seed,
        )
        acc = np.zeros(K)
        M = m_sub
        n = problem.dim
        xi_k = np.arange(-M, 1)
        xi = problem.initial(np.maximum(xi_k * delta, -problem.tau))
        w_scheme = 2048  # scheme steps per fetched increment slab
        for lo in range(0, n_paths, 1024):
            B = min(1024, n_paths - lo)
            paths = [lattice.with_path(lo + b) for b in range(B)]
            ring = np.empty((B, M + 1, n))
            ring[:, xi_k % (M + 1)] = xi
            state = ring[:, 0].copy()
            slab = None
            slab_start = 0
            for k in range(K):
                if slab is None or k >= slab_start + w_scheme:
                    slab_start = k
                    count = 2 * min(w_scheme, K - k)
                    slab = np.stack([p.increments(2 * k, count) for p in paths])
                j = 2 * (k - slab_start)
                dw1, dw2 = slab[:, j], slab[:, j + 1]
                delayed = ring[:, (k - M) % (M + 1)]
                f, g = run.coefficients(state, delayed)
                half = f * (delta / 2.0) + (g @ dw1[..., np.newaxis])[..., 0]
                acc[k] += float(np.sum(half * half))
                state = state + f * delta + (g @ (dw1 + dw2)[..., np.newaxis])[..., 0]
                ring[:, (k + 1) % (M + 1)] = state
        deltas.append(delta)
        gaps.append(float(np.max(acc / n_paths)))
    deltas = np.asarray(deltas)
    gaps = np.asarray(gaps)
    slope, _, _, _ = _least_squares_line(np.log(deltas), np.log(gaps))
    return StepGapReport(deltas=deltas, max_gaps=gaps, slope=slope)
