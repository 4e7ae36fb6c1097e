"""Sampling-based falsification of the structural conditions on a problem.

Each checker estimates the constant of one defining inequality (local
Lipschitz, Khasminskii-type drift bound, monotonicity with a compensating
function, polynomial growth of coefficient differences, Hölder continuity of
the initial data) by maximising the corresponding ratio over random samples,
and probes for divergence along radial or shrinking-distance ladders.

A checker can only falsify or report "consistent with constant K"; it never
certifies.  Samples are drawn in fixed-size blocks keyed by
``(seed, checker, block)``, so estimates are deterministic, blocks may be
evaluated concurrently, and enlarging the sample budget never decreases an
estimated constant (earlier blocks are unchanged).

Superlinear violations only show up at large norms, so the sampling law mixes
uniform draws in a moderate ball with log-radial probes out to norm 1e6.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .model import InitialSegment, SddeProblem

__all__ = [
    "SampleSpec",
    "ConditionReport",
    "check_khasminskii",
    "check_polynomial_growth",
    "check_local_lipschitz",
    "check_holder_initial",
    "check_monotonicity_u",
    "estimate_h3",
    "estimate_coefficient_growth",
]

BLOCK = 1024

_CHECKER_IDS = {
    "local_lipschitz": 1,
    "khasminskii": 2,
    "monotonicity_u": 3,
    "polynomial_growth": 4,
    "holder_initial": 5,
    "coefficient_growth": 6,
}

_GROWTH_SLOPE_LIMIT = 0.3
_SHRINK_SLOPE_LIMIT = -0.2


@dataclass(frozen=True)
class SampleSpec:
    """Sampling budget and law shared by all checkers."""

    n_samples: int = 20000
    seed: int = 0
    ball_radius: float = 10.0
    probe_decades: float = 6.0
    probe_directions: int = 64

    def n_blocks(self) -> int:
        return max(1, -(-self.n_samples // BLOCK))


@dataclass(frozen=True)
class ConditionReport:
    assumption: str
    estimated_constant: float
    samples: int
    verdict: str  # "consistent" or "violated"
    max_violation_point: Optional[tuple] = None
    extras: dict = field(default_factory=dict)

    def summary(self) -> str:
        if self.verdict == "violated":
            return (
                f"{self.assumption}: violated (ratio diverges; witness at "
                f"{self.max_violation_point})"
            )
        return (
            f"{self.assumption}: consistent with constant "
            f"{self.estimated_constant:.6g} over {self.samples} samples "
            "(sampling cannot certify)"
        )


_LADDER_BLOCK = 2**32  # block id reserved for the divergence-probe stream


def _rng(spec: SampleSpec, checker: str, block: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(spec.seed, spawn_key=(_CHECKER_IDS[checker], block))
    )


def _directions(rng, n, dim):
    v = rng.standard_normal((n, dim))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return v / norms


def _mixture_points(rng, n, dim, spec: SampleSpec):
    """Half uniform in the moderate ball, half log-radial out to 1e6."""
    d = _directions(rng, n, dim)
    n_ball = n // 2
    radii = np.empty(n)
    radii[:n_ball] = spec.ball_radius * rng.random(n_ball) ** (1.0 / dim)
    radii[n_ball:] = 10.0 ** (spec.probe_decades * rng.random(n - n_ball))
    return d * radii[:, np.newaxis]


def _partners(rng, base):
    """Perturbed copies of ``base``: a third fresh draws scrambled from the
    base itself, a third small relative perturbations, a third exact copies
    with a single coordinate nudged."""
    n, dim = base.shape
    out = base.copy()
    a = n // 3
    b = 2 * n // 3
    out[:a] = base[:a][rng.permutation(a)]
    scale = 1e-3 * (np.linalg.norm(base[a:b], axis=1, keepdims=True) + 1.0)
    out[a:b] = base[a:b] + scale * rng.standard_normal((b - a, dim))
    cols = rng.integers(0, dim, n - b)
    rows = np.arange(b, n)
    nudge = 1e-3 * (np.abs(base[rows, cols]) + 1.0) * rng.choice([-1.0, 1.0], n - b)
    out[rows, cols] = base[rows, cols] + nudge
    return out


def _frob(mat):
    return np.sqrt(np.sum(mat * mat, axis=(-2, -1)))


def _growth_slope(radii, values):
    """Log-log slope of positive ladder values; 0 when growth is unmeasurable."""
    mask = values > 0.0
    if np.count_nonzero(mask) < 3:
        return 0.0
    x = np.log(radii[mask])
    y = np.log(values[mask])
    xbar, ybar = x.mean(), y.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    if sxx == 0.0:
        return 0.0
    return float(np.sum((x - xbar) * (y - ybar)) / sxx)


def _report(assumption, spec, best, best_point, slope, slope_limit, witness):
    violated = (
        slope > slope_limit if slope_limit > 0 else slope < slope_limit
    )
    return ConditionReport(
        assumption=assumption,
        estimated_constant=float(best),
        samples=spec.n_blocks() * BLOCK,
        verdict="violated" if violated else "consistent",
        max_violation_point=witness if violated else best_point,
        extras={"ladder_slope": float(slope)},
    )


def check_khasminskii(problem: SddeProblem, p: float, spec: SampleSpec = SampleSpec()):
    """Estimate the constant in ``x.f + (p-1)/2 |g|^2 <= K (1 + |x|^2 + |y|^2)``
    and flag unbounded growth of the ratio along radial probes."""
    if p <= 2:
        raise ValueError(f"p must exceed 2, got {p}")
    dim = problem.dim

    def ratio(x, y):
        f = problem.drift(x, y)
        g = problem.diffusion(x, y)
        lhs = np.sum(x * f, axis=-1) + 0.5 * (p - 1.0) * _frob(g) ** 2
        return lhs / (1.0 + np.sum(x * x, axis=-1) + np.sum(y * y, axis=-1))

    best = -np.inf
    best_point = None
    for blk in range(spec.n_blocks()):
        rng = _rng(spec, "khasminskii", blk)
        x = _mixture_points(rng, BLOCK, dim, spec)
        y = _mixture_points(rng, BLOCK, dim, spec)
        vals = ratio(x, y)
        i = int(np.argmax(vals))
        if vals[i] > best:
            best = float(vals[i])
            best_point = (tuple(x[i]), tuple(y[i]))

    rng = _rng(spec, "khasminskii", _LADDER_BLOCK)
    dx = _directions(rng, spec.probe_directions, dim)
    dy = _directions(rng, spec.probe_directions, dim)
    radii = np.logspace(0, spec.probe_decades, 13)
    rung = np.array(
        [np.max(ratio(r * dx, r * dy)) for r in radii]
    )
    slope = _growth_slope(radii[-6:], rung[-6:])
    i_top = int(np.argmax(ratio(radii[-1] * dx, radii[-1] * dy)))
    witness = (tuple(radii[-1] * dx[i_top]), tuple(radii[-1] * dy[i_top]))
    return _report(
        "khasminskii", spec, best, best_point, slope, _GROWTH_SLOPE_LIMIT, witness
    )


def _quadruples(rng, dim, spec):
    x = _mixture_points(rng, BLOCK, dim, spec)
    y = _mixture_points(rng, BLOCK, dim, spec)
    return x, _partners(rng, x), y, _partners(rng, y)


def _difference_ratio(problem, x, xbar, y, ybar, weight):
    """max(|f - fbar|, |g - gbar|)^2 / weight, skipping coincident pairs."""
    den = np.sum((x - xbar) ** 2, axis=-1) + np.sum((y - ybar) ** 2, axis=-1)
    keep = den > 0.0
    df = problem.drift(x, y) - problem.drift(xbar, ybar)
    dg = problem.diffusion(x, y) - problem.diffusion(xbar, ybar)
    num = np.maximum(np.sum(df * df, axis=-1), _frob(dg) ** 2)
    vals = np.where(keep, num / np.where(keep, den * weight, 1.0), -np.inf)
    return vals


def check_polynomial_growth(
    problem: SddeProblem, rho: float, spec: SampleSpec = SampleSpec()
):
    """Estimate the growth constant of squared coefficient differences under
    the weight ``1 + |x|^rho + |y|^rho + |xbar|^rho + |ybar|^rho``.

    The report's extras carry the derived truncation growth constant
    ``h3 = sqrt(6 * H2) + |f(0,0)| + |g(0,0)|``.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    dim = problem.dim

    def weight(x, xbar, y, ybar):
        return (
            1.0
            + np.linalg.norm(x, axis=-1) ** rho
            + np.linalg.norm(y, axis=-1) ** rho
            + np.linalg.norm(xbar, axis=-1) ** rho
            + np.linalg.norm(ybar, axis=-1) ** rho
        )

    best = -np.inf
    best_point = None
    for blk in range(spec.n_blocks()):
        rng = _rng(spec, "polynomial_growth", blk)
        x, xbar, y, ybar = _quadruples(rng, dim, spec)
        vals = _difference_ratio(problem, x, xbar, y, ybar, weight(x, xbar, y, ybar))
        i = int(np.argmax(vals))
        if vals[i] > best:
            best = float(vals[i])
            best_point = (tuple(x[i]), tuple(xbar[i]), tuple(y[i]), tuple(ybar[i]))

    # Radial ladder of nearby axis-aligned pairs; too small a rho makes the
    # ratio climb like a power of the norm.
    rng = _rng(spec, "polynomial_growth", _LADDER_BLOCK)
    dx = _directions(rng, spec.probe_directions, dim)
    radii = np.logspace(0, spec.probe_decades, 13)
    rung = np.empty(radii.size)
    witness = None
    for j, r in enumerate(radii):
        x = r * dx
        xbar = x * (1.0 + 1e-3)
        y = r * np.roll(dx, 1, axis=0)
        vals = _difference_ratio(problem, x, xbar, y, y, weight(x, xbar, y, y))
        rung[j] = float(np.max(vals))
        if j == radii.size - 1:
            i = int(np.argmax(vals))
            witness = (tuple(x[i]), tuple(xbar[i]), tuple(y[i]), tuple(y[i]))
    slope = _growth_slope(radii[-6:], rung[-6:])
    report = _report(
        "polynomial_growth", spec, best, best_point, slope, _GROWTH_SLOPE_LIMIT, witness
    )
    f0 = np.linalg.norm(problem.drift(np.zeros(dim), np.zeros(dim)))
    g0 = _frob(problem.diffusion(np.zeros(dim), np.zeros(dim)))
    h2 = max(best, 0.0)
    extras = dict(report.extras)
    extras["h2"] = h2
    extras["h3"] = float(np.sqrt(6.0 * h2) + f0 + g0)
    return ConditionReport(
        assumption=report.assumption,
        estimated_constant=report.estimated_constant,
        samples=report.samples,
        verdict=report.verdict,
        max_violation_point=report.max_violation_point,
        extras=extras,
    )


def estimate_h3(problem: SddeProblem, rho: float, spec: SampleSpec = SampleSpec()) -> float:
    """Truncation growth constant derived from the difference-growth estimate."""
    return check_polynomial_growth(problem, rho, spec).extras["h3"]


def estimate_coefficient_growth(
    problem: SddeProblem, rho: float, spec: SampleSpec = SampleSpec()
) -> float:
    """Direct estimate of ``sup (|f| v |g|) / (|x| v |y|)^{(2+rho)/2}`` over
    norms in [1, 1e3], inflated by 2 as a safety margin.

    Fallback for problems whose growth constant is not known analytically.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    dim = problem.dim
    power = (2.0 + rho) / 2.0
    best = 0.0
    for blk in range(spec.n_blocks()):
        rng = _rng(spec, "coefficient_growth", blk)
        dx = _directions(rng, BLOCK, dim)
        dy = _directions(rng, BLOCK, dim)
        r = 10.0 ** (3.0 * rng.random((BLOCK, 1)))
        x, y = r * dx, r * dy
        f = problem.drift(x, y)
        g = problem.diffusion(x, y)
        mag = np.maximum(np.linalg.norm(f, axis=-1), _frob(g))
        best = max(best, float(np.max(mag / r[:, 0] ** power)))
    # the unit ball is covered separately: the bound must also dominate there
    rng = _rng(spec, "coefficient_growth", _LADDER_BLOCK)
    x = _directions(rng, BLOCK, dim) * rng.random((BLOCK, 1))
    y = _directions(rng, BLOCK, dim) * rng.random((BLOCK, 1))
    f = problem.drift(x, y)
    g = problem.diffusion(x, y)
    best = max(best, float(np.max(np.maximum(np.linalg.norm(f, axis=-1), _frob(g)))))
    return 2.0 * best


def check_local_lipschitz(
    problem: SddeProblem, radius: float, spec: SampleSpec = SampleSpec()
):
    """Estimate the Lipschitz constant of (f, g) on the ball of the given
    radius and probe shrinking pairs for divergence."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    dim = problem.dim

    def clamp(v):
        norms = np.linalg.norm(v, axis=-1, keepdims=True)
        over = norms > radius
        return np.where(over, v * (radius / np.where(over, norms, 1.0)), v)

    def ratio(x, xbar, y, ybar):
        den = np.linalg.norm(x - xbar, axis=-1) + np.linalg.norm(y - ybar, axis=-1)
        keep = den > 0.0
        df = problem.drift(x, y) - problem.drift(xbar, ybar)
        dg = problem.diffusion(x, y) - problem.diffusion(xbar, ybar)
        num = np.maximum(np.linalg.norm(df, axis=-1), _frob(dg))
        return np.where(keep, num / np.where(keep, den, 1.0), -np.inf)

    best = -np.inf
    best_point = None
    for blk in range(spec.n_blocks()):
        rng = _rng(spec, "local_lipschitz", blk)
        x = radius * rng.random((BLOCK, 1)) ** (1.0 / dim) * _directions(rng, BLOCK, dim)
        y = radius * rng.random((BLOCK, 1)) ** (1.0 / dim) * _directions(rng, BLOCK, dim)
        xbar, ybar = clamp(_partners(rng, x)), clamp(_partners(rng, y))
        vals = ratio(x, xbar, y, ybar)
        i = int(np.argmax(vals))
        if vals[i] > best:
            best = float(vals[i])
            best_point = (tuple(x[i]), tuple(xbar[i]), tuple(y[i]), tuple(ybar[i]))

    rng = _rng(spec, "local_lipschitz", _LADDER_BLOCK)
    centers = 0.5 * radius * _directions(rng, spec.probe_directions, dim)
    ys = 0.5 * radius * _directions(rng, spec.probe_directions, dim)
    gaps = radius * 10.0 ** (-np.arange(1.0, 9.0))
    rung = np.empty(gaps.size)
    witness = None
    for j, gap in enumerate(gaps):
        step_dir = _directions(rng, spec.probe_directions, dim)
        xbar = clamp(centers + gap * step_dir)
        vals = ratio(centers, xbar, ys, ys)
        rung[j] = float(np.max(vals))
        if j == gaps.size - 1:
            i = int(np.argmax(vals))
            witness = (tuple(centers[i]), tuple(xbar[i]), tuple(ys[i]), tuple(ys[i]))
    slope = _growth_slope(gaps, rung)
    return _report(
        "local_lipschitz", spec, best, best_point, slope, _SHRINK_SLOPE_LIMIT, witness
    )


def check_holder_initial(segment: InitialSegment, spec: SampleSpec = SampleSpec()):
    """Estimate the Hölder constant of the initial segment at its declared
    exponent; a ratio that keeps climbing as pairs shrink falsifies the
    declaration."""
    tau = segment.tau
    gamma = segment.holder_exponent

    def ratio(u, v):
        den = np.abs(u - v) ** gamma
        keep = den > 0.0
        num = np.linalg.norm(segment(u) - segment(v), axis=-1)
        return np.where(keep, num / np.where(keep, den, 1.0), -np.inf)

    best = -np.inf
    best_point = None
    for blk in range(spec.n_blocks()):
        rng = _rng(spec, "holder_initial", blk)
        u = -tau * rng.random(BLOCK)
        v = -tau * rng.random(BLOCK)
        # include the extreme pair; the worst quotient can sit at maximal gap
        u[0], v[0] = -tau, 0.0
        vals = ratio(u, v)
        i = int(np.argmax(vals))
        if vals[i] > best:
            best = float(vals[i])
            best_point = (float(u[i]), float(v[i]))

    rng = _rng(spec, "holder_initial", _LADDER_BLOCK)
    gaps = tau * 10.0 ** (-np.arange(1.0, 9.0))
    rung = np.empty(gaps.size)
    witness = None
    for j, gap in enumerate(gaps):
        u = -(tau - gap) * rng.random(spec.probe_directions)
        v = u - gap
        vals = ratio(u, v)
        rung[j] = float(np.max(vals))
        if j == gaps.size - 1:
            i = int(np.argmax(vals))
            witness = (float(u[i]), float(v[i]))
    slope = _growth_slope(gaps, rung)
    return _report(
        "holder_initial", spec, best, best_point, slope, _SHRINK_SLOPE_LIMIT, witness
    )


def check_monotonicity_u(
    problem: SddeProblem,
    q: float,
    u_function: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]],
    spec: SampleSpec = SampleSpec(),
):
    """Estimate the constant in the one-sided condition

        (x - xbar).(f - fbar) + (q-1)/2 |g - gbar|^2
            <= H (|x - xbar|^2 + |y - ybar|^2) - U(x, xbar) + U(y, ybar).
    """
    if q <= 2:
        raise ValueError(f"q must exceed 2, got {q}")
    if u_function is None:
        raise ValueError(
            "u_function is required; pass the problem's compensating function "
            "or an explicit zero function"
        )
    dim = problem.dim

    def ratio(x, xbar, y, ybar):
        den = np.sum((x - xbar) ** 2, axis=-1) + np.sum((y - ybar) ** 2, axis=-1)
        keep = den > 0.0
        df = problem.drift(x, y) - problem.drift(xbar, ybar)
        dg = problem.diffusion(x, y) - problem.diffusion(xbar, ybar)
        lhs = (
            np.sum((x - xbar) * df, axis=-1)
            + 0.5 * (q - 1.0) * _frob(dg) ** 2
            + np.asarray(u_function(x, xbar), dtype=float)
            - np.asarray(u_function(y, ybar), dtype=float)
        )
        return np.where(keep, lhs / np.where(keep, den, 1.0), -np.inf)

    best = -np.inf
    best_point = None
    for blk in range(spec.n_blocks()):
        rng = _rng(spec, "monotonicity_u", blk)
        x, xbar, y, ybar = _quadruples(rng, dim, spec)
        vals = ratio(x, xbar, y, ybar)
        i = int(np.argmax(vals))
        if vals[i] > best:
            best = float(vals[i])
            best_point = (tuple(x[i]), tuple(xbar[i]), tuple(y[i]), tuple(ybar[i]))

    rng = _rng(spec, "monotonicity_u", _LADDER_BLOCK)
    dx = _directions(rng, spec.probe_directions, dim)
    radii = np.logspace(0, spec.probe_decades, 13)
    rung = np.empty(radii.size)
    witness = None
    for j, r in enumerate(radii):
        x = r * dx
        xbar = x * (1.0 + 1e-3)
        y = r * np.roll(dx, 1, axis=0)
        ybar = y * (1.0 + 1e-3)
        vals = ratio(x, xbar, y, ybar)
        rung[j] = float(np.max(vals))
        if j == radii.size - 1:
            i = int(np.argmax(vals))
            witness = (tuple(x[i]), tuple(xbar[i]), tuple(y[i]), tuple(ybar[i]))
    slope = _growth_slope(radii[-6:], rung[-6:])
    return _report(
        "monotonicity_u", spec, best, best_point, slope, _GROWTH_SLOPE_LIMIT, witness
    )
