"""Problem definitions for stochastic differential delay equations.

A problem bundles the drift ``f(x, y)`` and diffusion ``g(x, y)`` coefficient
maps (``x`` the current state, ``y`` the state one delay ago), the delay
``tau`` and the initial segment on ``[-tau, 0]``.  Coefficient maps must be
pure, accept numpy arrays with arbitrary leading batch dimensions, and return
``(..., dim)`` for the drift and ``(..., dim, noise_dim)`` for the diffusion.

A small registry of builtin test problems is provided; entries carry the
growth/moment constants known to be valid for them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NumericRangeError

__all__ = [
    "InitialSegment",
    "SddeProblem",
    "ProblemRegistryEntry",
    "eval_drift",
    "eval_diffusion",
    "eval_initial",
    "get_problem",
    "registry_keys",
    "constant_segment",
    "ramp_segment",
]

_HOLDER_CHECK_POINTS = 1000
_HOLDER_CHECK_SLACK = 1e-6


@dataclass(frozen=True)
class InitialSegment:
    """Deterministic initial data on ``[-tau, 0]`` with a declared Hölder bound.

    ``values`` maps a time offset ``u`` (scalar or array in ``[-tau, 0]``) to
    the state vector(s), shape ``(..., dim)``.  The declared exponent and
    constant are the user's analytical responsibility; construction only
    spot-checks them on a grid and warns on violation, since sampling can
    falsify but never certify.
    """

    values: Callable[[np.ndarray], np.ndarray]
    tau: float
    holder_exponent: float = 1.0
    holder_constant: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0 < self.holder_exponent <= 1:
            raise ValueError(
                f"holder_exponent must lie in (0, 1], got {self.holder_exponent}"
            )
        if self.holder_constant < 0:
            raise ValueError(
                f"holder_constant must be nonnegative, got {self.holder_constant}"
            )
        self._spot_check()

    def _spot_check(self):
        u = np.linspace(-self.tau, 0.0, _HOLDER_CHECK_POINTS)
        vals = np.asarray(self.values(u), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("initial segment is not finite on [-tau, 0]")
        # Hölder quotient between consecutive grid points; a violation is a
        # warning, not an error: the declaration is only falsifiable here.
        diffs = np.linalg.norm(np.diff(vals, axis=0), axis=-1)
        gaps = np.diff(u) ** self.holder_exponent
        bound = self.holder_constant * (1.0 + _HOLDER_CHECK_SLACK) + 1e-12
        if np.any(diffs > bound * gaps):
            worst = float(np.max(diffs / gaps))
            warnings.warn(
                "initial segment violates its declared Hölder bound on the "
                f"check grid (observed constant {worst:.6g} > declared "
                f"{self.holder_constant:.6g})",
                stacklevel=3,
            )

    def __call__(self, u):
        return np.asarray(self.values(np.asarray(u, dtype=float)), dtype=float)

    def sup_norm(self, n_points: int = 1000) -> float:
        """Sup of ``|xi(u)|`` over a grid on ``[-tau, 0]``."""
        u = np.linspace(-self.tau, 0.0, n_points)
        return float(np.max(np.linalg.norm(self(u), axis=-1)))


@dataclass(frozen=True)
class SddeProblem:
    """An autonomous SDDE ``dx = f(x(t), x(t-tau)) dt + g(x(t), x(t-tau)) dW``."""

    dim: int
    noise_dim: int
    tau: float
    drift: Callable[[np.ndarray, np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray, np.ndarray], np.ndarray]
    initial: InitialSegment
    origin_fixed: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.noise_dim < 1:
            raise ValueError(f"noise_dim must be >= 1, got {self.noise_dim}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.initial.tau != self.tau:
            raise ValueError(
                f"initial segment covers [-{self.initial.tau}, 0] but the "
                f"problem delay is {self.tau}"
            )
        zero = np.zeros(self.dim)
        f0 = np.asarray(self.drift(zero, zero), dtype=float)
        g0 = np.asarray(self.diffusion(zero, zero), dtype=float)
        if f0.shape != (self.dim,):
            raise ValueError(f"drift returned shape {f0.shape}, expected ({self.dim},)")
        if g0.shape != (self.dim, self.noise_dim):
            raise ValueError(
                f"diffusion returned shape {g0.shape}, expected "
                f"({self.dim}, {self.noise_dim})"
            )
        if self.origin_fixed:
            if np.linalg.norm(f0) != 0.0 or np.linalg.norm(g0) != 0.0:
                raise ValueError(
                    "origin_fixed is set but f(0,0) or g(0,0) is nonzero: "
                    f"f(0,0)={f0}, g(0,0)={g0}"
                )


def _check_vector(name: str, v, dim: int) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (dim,):
        raise ValueError(f"{name} must have shape ({dim},), got {arr.shape}")
    return arr


def eval_drift(problem: SddeProblem, x, y) -> np.ndarray:
    """Evaluate ``f(x, y)`` for a single state/delayed-state pair."""
    x = _check_vector("x", x, problem.dim)
    y = _check_vector("y", y, problem.dim)
    out = np.asarray(problem.drift(x, y), dtype=float)
    if not np.all(np.isfinite(out)):
        raise NumericRangeError(
            f"drift is not finite at x={x}, y={y}: {out}", offending_input=(x, y)
        )
    return out


def eval_diffusion(problem: SddeProblem, x, y) -> np.ndarray:
    """Evaluate ``g(x, y)`` for a single state/delayed-state pair."""
    x = _check_vector("x", x, problem.dim)
    y = _check_vector("y", y, problem.dim)
    out = np.asarray(problem.diffusion(x, y), dtype=float)
    if not np.all(np.isfinite(out)):
        raise NumericRangeError(
            f"diffusion is not finite at x={x}, y={y}: {out}", offending_input=(x, y)
        )
    return out


def eval_initial(problem: SddeProblem, u: float) -> np.ndarray:
    """Evaluate the initial segment at offset ``u`` in ``[-tau, 0]``."""
    if not -problem.tau <= u <= 0.0:
        raise ValueError(f"u={u} outside the initial interval [-{problem.tau}, 0]")
    return problem.initial(u)


def constant_segment(value, tau: float) -> InitialSegment:
    """Initial segment identically equal to ``value``."""
    c = np.atleast_1d(np.asarray(value, dtype=float))

    def values(u):
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(c, u.shape + c.shape).copy()

    return InitialSegment(values, tau=tau, holder_exponent=1.0, holder_constant=0.0)


def ramp_segment(value, tau: float) -> InitialSegment:
    """Initial segment ``xi(u) = (1 + u) * value`` (Lipschitz, vanishing at -1)."""
    c = np.atleast_1d(np.asarray(value, dtype=float))

    def values(u):
        u = np.asarray(u, dtype=float)
        return (1.0 + u)[..., np.newaxis] * c

    return InitialSegment(
        values, tau=tau, holder_exponent=1.0, holder_constant=float(np.linalg.norm(c))
    )


@dataclass(frozen=True)
class ProblemRegistryEntry:
    """A builtin problem plus the constants known to be valid for it."""

    key: str
    problem: SddeProblem
    known_constants: dict = field(default_factory=dict)
    u_function: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None


def _power_abs(u, exponent):
    # |u|^a with the convention 0^a = 0; abs keeps the base nonnegative so no
    # NaN can arise from fractional exponents.
    return np.abs(u) ** exponent


def _coupled_2d(tau: float, amplitude: float) -> ProblemRegistryEntry:
    """Two-dimensional system with cubic damping, cross-coupled through the
    delayed state, driven by a single shared Brownian motion:

        dx1 = (|x2(t-tau)|^{4/3} - x1^3) dt + (|x1|^{3/2} + x2(t-tau)) dw
        dx2 = (|x1(t-tau)|^{4/3} - x2^3) dt + (|x2|^{3/2} + x1(t-tau)) dw
    """

    def drift(x, y):
        x1, x2 = x[..., 0], x[..., 1]
        y1, y2 = y[..., 0], y[..., 1]
        return np.stack(
            [_power_abs(y2, 4.0 / 3.0) - x1**3, _power_abs(y1, 4.0 / 3.0) - x2**3],
            axis=-1,
        )

    def diffusion(x, y):
        x1, x2 = x[..., 0], x[..., 1]
        y1, y2 = y[..., 0], y[..., 1]
        col = np.stack(
            [_power_abs(x1, 1.5) + y2, _power_abs(x2, 1.5) + y1], axis=-1
        )
        return col[..., np.newaxis]

    def u_function(x, xbar):
        d2 = (x - xbar) ** 2
        return 0.25 * np.sum(d2 * (x**2 + xbar**2), axis=-1)

    initial = ramp_segment(np.array([amplitude, amplitude]), tau)
    problem = SddeProblem(
        dim=2,
        noise_dim=1,
        tau=tau,
        drift=drift,
        diffusion=diffusion,
        initial=initial,
        origin_fixed=True,
    )
    # rho = 4 matches the quartic growth factor of both coefficient
    # differences; (p, q) satisfy 2p > (2 + rho) q with margin.  h3 = 2*sqrt(2)
    # dominates sup(|f| v |g|) / r^3 over every ball of radius r >= 1.
    constants = {"rho": 4.0, "p": 8.0, "q": 2.5, "h3": 2.0 * np.sqrt(2.0)}
    return ProblemRegistryEntry(
        key="paper-example-2d",
        problem=problem,
        known_constants=constants,
        u_function=u_function,
    )


def _linear_scalar(
    tau: float, a: float, b: float, c: float, d: float, init: float
) -> ProblemRegistryEntry:
    """Scalar linear SDDE ``dx = (a x + b x(t-tau)) dt + (c x + d x(t-tau)) dW``.

    Moment behaviour is fully controlled by (a, b, c, d), which makes this the
    workhorse for stability-equivalence experiments.
    """

    def drift(x, y):
        return a * x + b * y

    def diffusion(x, y):
        return (c * x + d * y)[..., np.newaxis]

    initial = constant_segment(np.array([init]), tau)
    problem = SddeProblem(
        dim=1,
        noise_dim=1,
        tau=tau,
        drift=drift,
        diffusion=diffusion,
        initial=initial,
        origin_fixed=True,
    )
    h3 = max(abs(a) + abs(b), abs(c) + abs(d), 1.0)
    constants = {"rho": 2.0, "p": 4.0, "q": 2.5, "h3": h3}
    return ProblemRegistryEntry(
        key="linear-scalar",
        problem=problem,
        known_constants=constants,
        u_function=lambda x, xbar: np.zeros(np.broadcast(x, xbar).shape[:-1]),
    )


def _superlinear_blowup(tau: float, init: float) -> ProblemRegistryEntry:
    """Scalar SDDE ``dx = (x(t-tau) - x^3) dt + x^2 dW``.

    Classical Euler-Maruyama moments explode on this problem while the
    truncated scheme stays bounded, so it serves as the blow-up contrast case.
    """

    def drift(x, y):
        return y - x**3

    def diffusion(x, y):
        return (x**2)[..., np.newaxis]

    initial = constant_segment(np.array([init]), tau)
    problem = SddeProblem(
        dim=1,
        noise_dim=1,
        tau=tau,
        drift=drift,
        diffusion=diffusion,
        initial=initial,
        origin_fixed=True,
    )
    # |f| <= |y| + |x|^3 <= 2 r^3 and |g| <= r^2 <= r^3 on every ball of
    # radius r >= 1, and both are <= 2 on the unit ball.
    constants = {"rho": 4.0, "p": 3.0, "q": 2.4, "h3": 2.0}
    return ProblemRegistryEntry(
        key="superlinear-blowup", problem=problem, known_constants=constants
    )


_REGISTRY = {
    "paper-example-2d": (
        _coupled_2d,
        {"tau": 1.0, "amplitude": 1.0},
    ),
    "linear-scalar": (
        _linear_scalar,
        {"tau": 1.0, "a": -2.0, "b": 0.25, "c": 0.0, "d": 0.25, "init": 1.0},
    ),
    "superlinear-blowup": (
        _superlinear_blowup,
        {"tau": 1.0, "init": 8.0},
    ),
}


def registry_keys() -> list[str]:
    return sorted(_REGISTRY)


def get_problem(key: str, **params) -> ProblemRegistryEntry:
    """Build a registry problem, overriding its scalar parameters by keyword."""
    try:
        factory, defaults = _REGISTRY[key]
    except KeyError:
        raise KeyError(
            f"unknown problem key {key!r}; available: {', '.join(registry_keys())}"
        ) from None
    unknown = set(params) - set(defaults)
    if unknown:
        raise ValueError(
            f"unknown parameter(s) {sorted(unknown)} for problem {key!r}; "
            f"accepted: {sorted(defaults)}"
        )
    resolved = {**defaults, **params}
    return factory(**resolved)
