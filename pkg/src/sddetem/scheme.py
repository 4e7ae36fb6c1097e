"""Truncated Euler-Maruyama stepping for delay equations.

The truncation machinery is built from two functions: a growth bound
``mu(u) = h3 * u**((2 + rho) / 2)`` that dominates ``|f| v |g|`` on balls of
radius ``u >= 1``, and a step-size-dependent cap ``h(delta) = h_hat *
delta**(-epsilon)``.  Before every coefficient evaluation the state and the
delayed state are radially projected onto the ball of radius
``mu^{-1}(h(delta))``, which caps the effective coefficients at ``h(delta)``
while leaving them untouched wherever trajectories stay inside the ball.

The step size must divide the delay exactly (``delta = tau / m_sub``), so the
delayed state is always a stored grid value and no interpolation enters the
recursion.  A classical (untruncated) variant is included as the blow-up
baseline; its exploding paths are frozen and flagged rather than hidden.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .errors import NumericRangeError
from .model import SddeProblem
from .noise import CHUNK, BrownianLattice

__all__ = [
    "TruncationPolicy",
    "SchemeRun",
    "TrajectoryEnsemble",
    "truncation_radius",
    "truncate_state",
    "truncated_coefficients",
    "step",
    "simulate",
    "simulate_sampled",
    "step_process_value",
    "interpolant_value",
]

BLOWUP_NORM = 1e300

_STATE_BUDGET = 16_000_000  # floats held by one batch's delay ring buffer
_MAX_BATCH = 1024
_GRID_SNAP = 1e-9


@dataclass(frozen=True)
class TruncationPolicy:
    """Parameters of the truncation radius as a function of the step size.

    ``h3`` and ``rho`` fix the growth bound, ``h_hat`` and ``epsilon`` fix the
    coefficient cap.  ``epsilon <= 1/4`` keeps ``delta**(1/4) * h(delta) <=
    h_hat`` on all of ``(0, 1]``, and ``h_hat >= max(1, h3)`` keeps the radius
    at or above 1, where the growth bound is meaningful.
    """

    h3: float
    rho: float
    h_hat: float
    epsilon: float

    def __post_init__(self):
        if not self.h3 > 0:
            raise ValueError(f"h3 must be positive, got {self.h3}")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not 0 < self.epsilon <= 0.25:
            raise ValueError(f"epsilon must lie in (0, 1/4], got {self.epsilon}")
        if not self.h_hat >= 1:
            raise ValueError(f"h_hat must be >= 1, got {self.h_hat}")
        if self.h_hat < self.h3:
            warnings.warn(
                f"h_hat={self.h_hat} is below the growth bound at 1 "
                f"(h3={self.h3}); for steps near 1 the truncation radius "
                "falls below 1 and uses the linear extension of the bound",
                stacklevel=2,
            )

    def growth_bound(self, u):
        """Dominating bound on ``|f| v |g|`` over the ball of radius ``u``.

        Extended linearly below ``u = 1`` so the inverse is total; the
        extension is inert whenever ``h_hat >= h3``.
        """
        u = np.asarray(u, dtype=float)
        return np.where(u >= 1.0, self.h3 * u ** ((2.0 + self.rho) / 2.0), self.h3 * u)

    def growth_bound_inverse(self, v):
        v = np.asarray(v, dtype=float)
        return np.where(
            v >= self.h3, (v / self.h3) ** (2.0 / (2.0 + self.rho)), v / self.h3
        )

    def coefficient_cap(self, delta: float) -> float:
        """The bound ``h(delta)`` the truncated coefficients never exceed."""
        return self.h_hat * float(delta) ** -self.epsilon


def truncation_radius(policy: TruncationPolicy, delta: float) -> float:
    """Radius of the ball states are projected onto at step size ``delta``."""
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    return float(policy.growth_bound_inverse(policy.coefficient_cap(delta)))


def _project_ball(x: np.ndarray, radius: float) -> np.ndarray:
    """Radial projection of the last-axis vectors of ``x`` onto the closed
    ball of the given radius; vectors already inside (and the zero vector)
    pass through unchanged."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    outside = norms > radius
    if not outside.any():
        return x
    safe = np.where(norms > 0.0, norms, 1.0)
    out = np.where(outside, x * (radius / safe), x)
    # Rounding in the rescale can leave a norm a few ulp above the radius;
    # pull those vectors back so the ball bound holds exactly.
    for _ in range(8):
        n2 = np.linalg.norm(out, axis=-1, keepdims=True)
        bad = n2 > radius
        if not bad.any():
            break
        out = np.where(bad, out * (radius / n2), out)
    return out


def truncate_state(x, radius: float) -> np.ndarray:
    """Project a state onto the ball of the given radius (zero stays zero)."""
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    return _project_ball(np.asarray(x, dtype=float), radius)


def truncated_coefficients(
    problem: SddeProblem, policy: TruncationPolicy, delta: float, x, y
):
    """Drift and diffusion evaluated at the projected state pair.

    Accepts batched inputs; both outputs are capped in norm by
    ``policy.coefficient_cap(delta)`` whenever (h3, rho) genuinely dominate
    the coefficients.
    """
    radius = truncation_radius(policy, delta)
    xt = _project_ball(np.asarray(x, dtype=float), radius)
    yt = _project_ball(np.asarray(y, dtype=float), radius)
    f = np.asarray(problem.drift(xt, yt), dtype=float)
    g = np.asarray(problem.diffusion(xt, yt), dtype=float)
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
        raise NumericRangeError(
            "coefficients are not finite at a truncated state",
            offending_input=(xt, yt),
        )
    return f, g


Variant = Literal["truncated", "classical"]


@dataclass(frozen=True)
class SchemeRun:
    """One scheme configuration: problem, truncation policy, grid and variant."""

    problem: SddeProblem
    policy: Optional[TruncationPolicy]
    m_sub: int
    horizon: float
    variant: Variant = "truncated"

    def __post_init__(self):
        if self.m_sub < 1:
            raise ValueError(f"m_sub must be a positive integer, got {self.m_sub}")
        if not 0 < self.delta <= 1:
            raise ValueError(
                f"delta = tau/m_sub = {self.delta} must lie in (0, 1]; "
                "increase m_sub"
            )
        if self.horizon < 0:
            raise ValueError(f"horizon must be nonnegative, got {self.horizon}")
        steps = self.horizon / self.delta
        if abs(steps - round(steps)) > _GRID_SNAP * max(1.0, steps):
            raise ValueError(
                f"horizon {self.horizon} is not a multiple of delta {self.delta}"
            )
        if self.variant == "truncated" and self.policy is None:
            raise ValueError("the truncated variant requires a policy")
        if self.variant == "classical" and self.policy is not None:
            raise ValueError("the classical variant takes no policy")
        if self.variant not in ("truncated", "classical"):
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def delta(self) -> float:
        return self.problem.tau / self.m_sub

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.delta)

    def coefficients(self, x: np.ndarray, y: np.ndarray):
        """Effective (possibly truncated) drift and diffusion, batched."""
        if self.variant == "truncated":
            radius = truncation_radius(self.policy, self.delta)
            x = _project_ball(x, radius)
            y = _project_ball(y, radius)
        return (
            np.asarray(self.problem.drift(x, y), dtype=float),
            np.asarray(self.problem.diffusion(x, y), dtype=float),
        )


def step(run: SchemeRun, x_k, x_delayed, dw) -> np.ndarray:
    """One Euler step ``X_k + f_eff * delta + g_eff @ dW``."""
    x_k = np.asarray(x_k, dtype=float)
    x_delayed = np.asarray(x_delayed, dtype=float)
    dw = np.asarray(dw, dtype=float)
    n, m = run.problem.dim, run.problem.noise_dim
    if x_k.shape != (n,) or x_delayed.shape != (n,):
        raise ValueError(f"states must have shape ({n},)")
    if dw.shape != (m,):
        raise ValueError(f"dw must have shape ({m},), got {dw.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        f, g = run.coefficients(x_k, x_delayed)
        out = x_k + f * run.delta + g @ dw
    if not np.all(np.isfinite(out)):
        raise NumericRangeError(
            f"scheme step overflowed at X_k={x_k}, X_delayed={x_delayed}",
            offending_input=(x_k, x_delayed),
        )
    return out


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """States of independent trajectories at a set of grid indices.

    ``grid_indices`` holds increasing integers ``k`` in ``[-M, K]`` (grid time
    ``k * delta``); ``states[p, i]`` is path ``p`` at ``grid_indices[i]``.  A
    full simulation stores every index, sampled simulations only a subset.
    """

    run: SchemeRun
    lattice: BrownianLattice
    n_paths: int
    grid_indices: np.ndarray
    states: np.ndarray
    blowup_flags: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.grid_indices * self.run.delta

    @property
    def flagged_fraction(self) -> float:
        return float(np.mean(self.blowup_flags))

    def position_of(self, k: int) -> int:
        i = int(np.searchsorted(self.grid_indices, k))
        if i >= len(self.grid_indices) or self.grid_indices[i] != k:
            raise ValueError(f"grid index {k} is not stored in this ensemble")
        return i

    def states_at(self, k: int) -> np.ndarray:
        """All paths' states at grid index ``k``, shape ``(n_paths, dim)``."""
        return self.states[:, self.position_of(k)]


def _grid_index(t: float, delta: float) -> int:
    """Index ``k`` with ``k * delta <= t < (k + 1) * delta``, snapping values
    within relative 1e-9 of a grid point onto it."""
    u = t / delta
    k = int(np.floor(u))
    if u - k > 1.0 - _GRID_SNAP * max(1.0, abs(u)):
        k += 1
    return k


def _batch_size(m_sub: int, dim: int, n_paths: int) -> int:
    per_path = (m_sub + 1) * dim
    return max(1, min(_MAX_BATCH, _STATE_BUDGET // per_path, n_paths))


def _initial_grid_values(problem: SddeProblem, delta: float, m_sub: int) -> np.ndarray:
    k = np.arange(-m_sub, 1)
    u = np.maximum(k * delta, -problem.tau)  # k*delta can undershoot by an ulp
    return problem.initial(u)


def _simulate_impl(
    run: SchemeRun,
    lattice: BrownianLattice,
    n_paths: int,
    store_ks: np.ndarray,
) -> TrajectoryEnsemble:
    problem = run.problem
    n, m = problem.dim, problem.noise_dim
    M, K, delta = run.m_sub, run.n_steps, run.delta
    if n_paths < 1:
        raise ValueError(f"n_paths must be positive, got {n_paths}")
    if lattice.noise_dim != m:
        raise ValueError(
            f"lattice noise_dim {lattice.noise_dim} != problem noise_dim {m}"
        )
    factor_f = delta / lattice.master_dt
    factor = round(factor_f)
    if factor < 1 or abs(factor_f - factor) > _GRID_SNAP * factor_f:
        raise ValueError(
            f"delta {delta} is not an integer multiple of master_dt "
            f"{lattice.master_dt}"
        )
    if lattice.n_steps < K * factor:
        raise ValueError(
            f"lattice covers {lattice.n_steps} master steps but the run needs "
            f"{K * factor}"
        )

    store_ks = np.asarray(store_ks, dtype=int)
    if store_ks.size and (store_ks[0] < -M or store_ks[-1] > K):
        raise ValueError(f"stored grid indices must lie in [-{M}, {K}]")
    # position of grid index k in the output, or -1 when not stored
    pos = np.full(M + K + 2, -1, dtype=int)
    pos[store_ks + M] = np.arange(store_ks.size)

    xi = _initial_grid_values(problem, delta, M)  # (M+1, n) for k = -M..0
    ring_slots = np.arange(-M, 1) % (M + 1)

    out = np.empty((n_paths, store_ks.size, n))
    flags = np.zeros(n_paths, dtype=bool)
    classical = run.variant == "classical"

    w_scheme = max(1, CHUNK // factor)
    batch = _batch_size(M, n, n_paths)
    for lo in range(0, n_paths, batch):
        hi = min(lo + batch, n_paths)
        B = hi - lo
        paths = [lattice.with_path(lattice.path_id + p) for p in range(lo, hi)]
        ring = np.empty((B, M + 1, n))
        ring[:, ring_slots] = xi
        for k, slot in zip(range(-M, 1), ring_slots):
            i = pos[k + M]
            if i >= 0:
                out[lo:hi, i] = ring[:, slot]
        frozen = np.zeros(B, dtype=bool)
        state = ring[:, 0].copy()  # X_0 lives in slot 0

        slab = None
        slab_start = 0
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(K):
                if slab is None or k >= slab_start + w_scheme:
                    slab_start = k
                    count = min(w_scheme, K - k) * factor
                    raw = np.stack(
                        [p.increments(k * factor, count) for p in paths]
                    )
                    if factor == 1:
                        slab = raw
                    else:
                        bins = raw.reshape(B, count // factor, factor, m)
                        acc = bins[:, :, 0].copy()
                        for j in range(1, factor):
                            acc += bins[:, :, j]
                        slab = acc
                delayed = ring[:, (k - M) % (M + 1)]
                f, g = run.coefficients(state, delayed)
                dw = slab[:, k - slab_start]
                new = state + f * delta + (g @ dw[..., np.newaxis])[..., 0]
                if classical:
                    bad = ~np.all(np.isfinite(new), axis=1)
                    bad |= np.linalg.norm(new, axis=1) > BLOWUP_NORM
                    bad &= ~frozen
                    keep = frozen | bad
                    if keep.any():
                        new[keep] = state[keep]
                    frozen |= bad
                state = new
                ring[:, (k + 1) % (M + 1)] = state
                i = pos[k + 1 + M]
                if i >= 0:
                    out[lo:hi, i] = state
        flags[lo:hi] = frozen

    if not classical and not np.all(np.isfinite(out)):
        raise NumericRangeError(
            "truncated run produced a non-finite state; the coefficient cap "
            "was exceeded"
        )
    return TrajectoryEnsemble(
        run=run,
        lattice=lattice,
        n_paths=n_paths,
        grid_indices=store_ks,
        states=out,
        blowup_flags=flags,
    )


def simulate(run: SchemeRun, lattice: BrownianLattice, n_paths: int) -> TrajectoryEnsemble:
    """Simulate an ensemble, storing every grid index from ``-M`` to ``K``."""
    store = np.arange(-run.m_sub, run.n_steps + 1)
    return _simulate_impl(run, lattice, n_paths, store)


def simulate_sampled(
    run: SchemeRun, lattice: BrownianLattice, n_paths: int, sample_times
) -> TrajectoryEnsemble:
    """Simulate an ensemble, storing only the requested grid times.

    Keeps memory proportional to the sample count rather than the grid, which
    matters for fine reference runs.  Sample times must be grid points.
    """
    ks = []
    for t in np.atleast_1d(np.asarray(sample_times, dtype=float)):
        u = t / run.delta
        k = round(u)
        if abs(u - k) > _GRID_SNAP * max(1.0, abs(u)):
            raise ValueError(f"sample time {t} is not on the grid (delta={run.delta})")
        if not -run.m_sub <= k <= run.n_steps:
            raise ValueError(f"sample time {t} outside [-tau, horizon]")
        ks.append(k)
    store = np.unique(np.asarray(ks, dtype=int))
    return _simulate_impl(run, lattice, n_paths, store)


def step_process_value(ensemble: TrajectoryEnsemble, path: int, t: float) -> np.ndarray:
    """The piecewise-constant continuation of the iterates at time ``t``:
    ``X_k`` on ``[k * delta, (k + 1) * delta)``."""
    run = ensemble.run
    if not -run.problem.tau <= t <= run.horizon + _GRID_SNAP:
        raise ValueError(f"t={t} outside [-tau, horizon]")
    k = min(_grid_index(t, run.delta), run.n_steps)
    return ensemble.states[path, ensemble.position_of(k)]


def interpolant_value(ensemble: TrajectoryEnsemble, path: int, t: float) -> np.ndarray:
    """The continuous interpolant at ``t``: the state at the step's left
    endpoint advanced with frozen coefficients,

        x(t) = X_k + f_eff * (t - t_k) + g_eff * (W(t) - W(t_k)).

    ``t`` must lie on the master grid of the noise lattice so the Brownian
    displacement is exactly representable; it coincides with ``X_k`` at grid
    points.
    """
    run = ensemble.run
    if not 0.0 <= t <= run.horizon + _GRID_SNAP:
        raise ValueError(f"t={t} outside [0, horizon]")
    lattice = ensemble.lattice
    s = t / lattice.master_dt
    j = round(s)
    if abs(s - j) > _GRID_SNAP * max(1.0, abs(s)):
        raise ValueError(
            f"t={t} is not on the master grid (master_dt={lattice.master_dt}); "
            "fine increments are unavailable there"
        )
    factor = round(run.delta / lattice.master_dt)
    k, frac = divmod(j, factor)
    if frac == 0:
        return ensemble.states[path, ensemble.position_of(k)]
    x_k = ensemble.states[path, ensemble.position_of(k)]
    x_del = ensemble.states[path, ensemble.position_of(k - run.m_sub)]
    f, g = run.coefficients(x_k, x_del)
    incs = lattice.with_path(lattice.path_id + path).increments(k * factor, frac)
    dw = incs[0].copy()
    for row in incs[1:]:
        dw += row
    return x_k + f * (frac * lattice.master_dt) + g @ dw
