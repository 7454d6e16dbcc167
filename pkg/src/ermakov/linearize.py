"""Linearization of the six-function family and solution reconstruction.

With the invariant level fixed by the initial data, the substitution
psi = rho(t)/r with the angle as independent variable turns the radial
dynamics into a second-order linear ODE

    p2(theta) psi'' + p1(theta) psi' + p0(theta) psi = rhs(theta),

with p2 = h^2, p1 = h dh/dtheta - a, p0 = h^2 + F - b, rhs = c, where
(a, b, c) come from the structure functions evaluated on shell
(L = h(theta)).  Solving it and inverting the separable angle quadrature
recovers theta(t), t(theta), and the orbit r(theta) = rho/psi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .expressions import (
    EvaluationError,
    Expression,
    as_expression,
    differentiate,
    evaluate,
    free_variables,
    is_literal_zero,
    simplify,
)
from .integration import IntegratorConfig, Trajectory, integrate
from .invariant import (
    ForbiddenRegionError,
    InvariantValue,
    TurningPointError,
    lewis_ray_reid_polar,
    turning_tolerance,
)
from .numerics import CumulativeIntegral, QuadratureError, quad_adaptive, solve_bracketed
from .systems import (
    KeplerErmakovSpec,
    LinearizableSpec,
    PolarState,
    WinternitzParams,
    frequency_from_linearizable,
    kepler_as_linearizable,
)

__all__ = [
    "LinearODE",
    "LinearSolution",
    "LinearizationError",
    "OutsideWindowError",
    "QuadratureSolution",
    "ReconstructionPipeline",
    "angular_time",
    "auto_theta_domain",
    "build_linear_ode",
    "build_pipeline",
    "free_motion_solution",
    "invert_theta_of_t",
    "reconstruct_orbit",
    "reconstruct_radial",
    "solve_linear",
    "time_quadrature",
    "verify_compatibility",
    "winternitz_angular_time_closed",
    "winternitz_dpsi_closed",
    "winternitz_psi_closed",
]

_SOLVE_REL_TOL = 1e-12
_SOLVE_ABS_TOL = 1e-14


class LinearizationError(ValueError):
    """The linearized solution cannot be built or used as requested."""


class OutsideWindowError(ValueError):
    """A query time or angle falls outside the covered window."""


# ---------------------------------------------------------------------------
# Linear ODE construction
# ---------------------------------------------------------------------------

def _coerce_linearizable(spec) -> LinearizableSpec:
    if isinstance(spec, KeplerErmakovSpec):
        return kepler_as_linearizable(spec)
    if isinstance(spec, LinearizableSpec):
        return spec
    raise TypeError(f"cannot linearize a {type(spec).__name__}")


@dataclass
class LinearODE:
    """Coefficients of the linear equation in psi(theta) at a fixed invariant level.

    Valid on an open angle interval where the invariant level exceeds the
    potential; p2 is positive on the interior.
    """

    spec: LinearizableSpec
    invariant: float
    domain: tuple[float, float]
    branch_sign: int
    _dV: Expression
    rhs_is_zero: bool

    def gap(self, theta: float) -> float:
        return self.invariant - evaluate(self.spec.V, {"theta": theta})

    def h(self, theta: float) -> float:
        g = self.gap(theta)
        tol = turning_tolerance(self.invariant)
        if g < -tol:
            raise ForbiddenRegionError(theta, self.invariant, self.invariant - g)
        if g <= tol:
            raise TurningPointError(theta, self.invariant)
        return math.sqrt(2.0 * g)

    def _abc(self, theta: float) -> tuple[float, float, float]:
        ell = self.branch_sign * self.h(theta)
        env = {"theta": theta, "L": ell}
        a = -ell * evaluate(self.spec.A, env)
        b = evaluate(self.spec.B, env)
        c = evaluate(self.spec.C, env)
        return a, b, c

    def p2(self, theta: float) -> float:
        return 2.0 * self.gap(theta)

    def p1(self, theta: float) -> float:
        # h dh/dtheta = -dV/dtheta exactly
        a, _, _ = self._abc(theta)
        return -evaluate(self._dV, {"theta": theta}) - a

    def p0(self, theta: float) -> float:
        _, b, _ = self._abc(theta)
        f = evaluate(self.spec.F, {"theta": theta})
        return self.p2(theta) + f - b

    def rhs(self, theta: float) -> float:
        _, _, c = self._abc(theta)
        return c

    def coefficients(self, theta: float) -> tuple[float, float, float, float]:
        a, b, c = self._abc(theta)
        p2 = self.p2(theta)
        f = evaluate(self.spec.F, {"theta": theta})
        dv = evaluate(self._dV, {"theta": theta})
        return p2, -dv - a, p2 + f - b, c


def build_linear_ode(
    spec,
    invariant,
    theta_domain: tuple[float, float],
    branch_sign: int = 1,
) -> LinearODE:
    """Validate the angle interval and assemble the linear ODE coefficients.

    Raises ForbiddenRegionError if the invariant level fails to exceed the
    potential anywhere on the interval; the message names the boundary
    angle where the level is first reached.
    """
    lin = _coerce_linearizable(spec)
    level = float(invariant)
    lo, hi = float(theta_domain[0]), float(theta_domain[1])
    if not lo < hi:
        raise ValueError(f"theta_domain must be increasing, got {theta_domain}")
    if branch_sign not in (-1, 1):
        raise ValueError(f"branch_sign must be +1 or -1, got {branch_sign!r}")
    tol = turning_tolerance(level)
    grid = np.linspace(lo, hi, 401)
    gaps = []
    for th in grid:
        try:
            gaps.append(level - evaluate(lin.V, {"theta": float(th)}))
        except EvaluationError as exc:
            raise ForbiddenRegionError(float(th), level, math.inf, detail=str(exc)) from exc
    gaps = np.array(gaps)
    if np.min(gaps) <= tol:
        theta_star = _locate_turning(lin.V, level, grid, gaps, tol)
        raise ForbiddenRegionError(
            theta_star,
            level,
            float(evaluate(lin.V, {"theta": theta_star})),
            detail=f"turning point near theta={theta_star:.12g}",
        )
    dV = simplify(differentiate(lin.V, "theta"))
    return LinearODE(
        spec=lin,
        invariant=level,
        domain=(lo, hi),
        branch_sign=branch_sign,
        _dV=dV,
        rhs_is_zero=is_literal_zero(lin.C),
    )


def _locate_turning(V, level, grid, gaps, tol) -> float:
    """Refine where the invariant level meets the potential, for messages."""
    bad = gaps <= tol
    fn = lambda th: level - evaluate(V, {"theta": th})
    for i in range(len(grid) - 1):
        if bad[i] != bad[i + 1]:
            try:
                return solve_bracketed(fn, float(grid[i]), float(grid[i + 1]), f_tol=1e-12)
            except ValueError:
                return float(grid[i + 1] if bad[i + 1] else grid[i])
    # no transition inside the interval: report the worst point
    return float(grid[int(np.argmin(gaps))])


def auto_theta_domain(
    V,
    invariant,
    theta0: float,
    *,
    margin_rel: float = 1e-3,
    span_cap: float = 2.0 * math.pi,
    step: float = math.pi / 720.0,
) -> tuple[float, float]:
    """Maximal scanned interval around theta0 where the level clears the potential.

    The scan stops a safety margin short of any turning point and at angles
    where the potential stops being evaluable.
    """
    V = as_expression(V)
    level = float(invariant)
    margin = margin_rel * (1.0 + abs(level))

    def clears(th: float) -> bool:
        try:
            return level - evaluate(V, {"theta": th}) > margin
        except (EvaluationError, QuadratureError):
            return False

    if not clears(theta0):
        raise ForbiddenRegionError(
            theta0, level, float("nan"), detail="initial angle too close to a turning point"
        )
    hi = theta0
    while hi - theta0 < span_cap and clears(hi + step):
        hi += step
    lo = theta0
    while theta0 - lo < span_cap and clears(lo - step):
        lo -= step
    return lo, hi


# ---------------------------------------------------------------------------
# Numeric solution of the linear ODE
# ---------------------------------------------------------------------------

class _ThetaFn:
    """Piecewise dense solution (psi, psi') assembled from two half integrations."""

    def __init__(self, theta0: float, y0: np.ndarray, forward: Trajectory | None, backward: Trajectory | None):
        self._theta0 = theta0
        self._y0 = y0
        self._fwd = forward
        self._bwd = backward

    def pair(self, theta: float) -> np.ndarray:
        if theta == self._theta0:
            return self._y0
        if theta > self._theta0:
            if self._fwd is None:
                raise OutsideWindowError(f"theta={theta!r} beyond the solved interval")
            return self._fwd.at(theta)
        if self._bwd is None:
            raise OutsideWindowError(f"theta={theta!r} beyond the solved interval")
        return self._bwd.at(theta)

    def value(self, theta: float) -> float:
        return float(self.pair(theta)[0])

    def slope(self, theta: float) -> float:
        return float(self.pair(theta)[1])


@dataclass
class LinearSolution:
    """General solution psi = c1 psi1 + c2 psi2 + psi_p of the linear ODE."""

    ode: LinearODE
    psi1: _ThetaFn
    psi2: _ThetaFn
    psi_p: _ThetaFn
    c1: float
    c2: float
    theta0: float
    domain: tuple[float, float]

    def psi(self, theta: float) -> float:
        return (
            self.c1 * self.psi1.value(theta)
            + self.c2 * self.psi2.value(theta)
            + self.psi_p.value(theta)
        )

    def dpsi(self, theta: float) -> float:
        return (
            self.c1 * self.psi1.slope(theta)
            + self.c2 * self.psi2.slope(theta)
            + self.psi_p.slope(theta)
        )

    def wronskian(self, theta: float) -> float:
        a = self.psi1.pair(theta)
        b = self.psi2.pair(theta)
        return float(a[0] * b[1] - b[0] * a[1])


def _integrate_theta(ode: LinearODE, theta0, y0, theta1, forced, rel_tol, abs_tol):
    if theta1 == theta0:
        return None

    def rhs(th, y):
        p2, p1, p0, c = ode.coefficients(th)
        if p2 <= 0.0:
            raise EvaluationError(f"linear ODE degenerate at theta={th!r}")
        drive = c if forced else 0.0
        return np.array([y[1], (drive - p1 * y[1] - p0 * y[0]) / p2])

    cfg = IntegratorConfig(t_span=(theta0, theta1), rel_tol=rel_tol, abs_tol=abs_tol)
    traj = integrate(rhs, y0, cfg)
    if traj.termination != "completed":
        raise LinearizationError(
            f"linear solve stopped at theta={traj.t_end!r} ({traj.termination})"
        )
    return traj


def solve_linear(
    ode: LinearODE,
    theta0: float,
    psi0: float,
    dpsi0: float,
    grid: Sequence[float],
    *,
    rel_tol: float = _SOLVE_REL_TOL,
    abs_tol: float = _SOLVE_ABS_TOL,
) -> LinearSolution:
    """Solve the linear ODE matching (psi0, dpsi0) at theta0.

    Two homogeneous solutions start from unit initial data, the particular
    solution from rest; the combination coefficients are then fixed by the
    requested initial values.  The span of ``grid`` (clipped to the ODE
    domain) sets the solved interval.
    """
    lo = max(min(grid), ode.domain[0])
    hi = min(max(grid), ode.domain[1])
    if not (lo <= theta0 <= hi):
        raise ValueError(f"theta0={theta0!r} outside the requested grid span [{lo}, {hi}]")

    def make(y0, forced):
        y0 = np.asarray(y0, dtype=float)
        fwd = _integrate_theta(ode, theta0, y0, hi, forced, rel_tol, abs_tol)
        bwd = _integrate_theta(ode, theta0, y0, lo, forced, rel_tol, abs_tol)
        return _ThetaFn(theta0, y0, fwd, bwd)

    psi1 = make([1.0, 0.0], forced=False)
    psi2 = make([0.0, 1.0], forced=False)
    psi_p = make([0.0, 0.0], forced=not ode.rhs_is_zero)

    # match the requested initial data (the basis is the identity at theta0,
    # so this reduces to c1 = psi0, c2 = dpsi0 minus the particular part)
    c1 = psi0 - psi_p.value(theta0)
    c2 = dpsi0 - psi_p.slope(theta0)
    sol = LinearSolution(
        ode=ode, psi1=psi1, psi2=psi2, psi_p=psi_p, c1=c1, c2=c2, theta0=theta0, domain=(lo, hi)
    )
    _check_wronskian(sol)
    return sol


def _check_wronskian(sol: LinearSolution) -> None:
    lo, hi = sol.domain
    ws = [sol.wronskian(th) for th in np.linspace(lo, hi, 9)]
    if min(abs(w) for w in ws) == 0.0 or (min(ws) < 0.0 < max(ws)):
        raise LinearizationError("homogeneous solutions became linearly dependent")


# ---------------------------------------------------------------------------
# Quadratures and inversion
# ---------------------------------------------------------------------------

def angular_time(theta: float, invariant, V, J: float = 0.0, base: float = math.pi / 2.0) -> float:
    """Reparametrized time T(theta) = integral of 1/h from the base angle, plus J."""
    V = as_expression(V)
    level = float(invariant)
    lo, hi = (base, theta) if base <= theta else (theta, base)
    tol = turning_tolerance(level)
    if lo < hi:
        for th in np.linspace(lo, hi, 201):
            gap = level - evaluate(V, {"theta": float(th)})
            if gap <= tol:
                raise ForbiddenRegionError(float(th), level, level - gap)

    def integrand(lam: float) -> float:
        gap = level - evaluate(V, {"theta": lam})
        if gap <= 0.0:
            raise ForbiddenRegionError(lam, level, level - gap)
        return 1.0 / math.sqrt(2.0 * gap)

    return quad_adaptive(integrand, base, theta) + J


def winternitz_angular_time_closed(
    params: WinternitzParams,
    invariant,
    theta: float,
    J: float = 0.0,
    base: float = math.pi / 2.0,
) -> float:
    """Arcsine antiderivative of 1/h for the Winternitz potential, anchored at the base.

    Valid when the discriminant g2^2 + 4 I (I - g1) is positive and the
    arcsine argument stays inside [-1, 1] between the base and theta;
    raises ValueError otherwise so callers can fall back to quadrature.
    """
    level = float(invariant)
    if level <= 0.0:
        raise ValueError(f"closed form requires a positive invariant, got {level!r}")
    disc = params.g2**2 + 4.0 * level * (level - params.g1)
    if disc <= 0.0:
        raise ValueError(f"closed form requires a positive discriminant, got {disc!r}")
    d = math.sqrt(disc)

    def antiderivative(th: float) -> float:
        arg = (2.0 * level * math.cos(th) + params.g2) / d
        if abs(arg) > 1.0:
            raise ValueError(f"arcsine argument {arg!r} outside [-1, 1] at theta={th!r}")
        return -math.asin(arg) / math.sqrt(2.0 * level)

    return antiderivative(theta) - antiderivative(base) + J


def _winternitz_time(params, invariant, theta, J):
    try:
        return winternitz_angular_time_closed(params, invariant, theta, J)
    except ValueError:
        v = _winternitz_potential(params)
        return angular_time(theta, invariant, v, J)


@lru_cache(maxsize=None)
def _winternitz_potential(params: WinternitzParams):
    from .systems import winternitz_system

    return winternitz_system(params).V


def winternitz_psi_closed(
    params: WinternitzParams,
    invariant,
    c1: float,
    c2: float,
    J: float,
    theta: float,
) -> float:
    """Closed-form psi(theta) for the Winternitz system at invariant level I.

    In the reparametrized time T the linear equation is a driven oscillator
    psi_TT + 2 (I + g3) psi = mu0, so
    psi = c1 cos(k T) + c2 sin(k T) + mu0 / k^2 with k = sqrt(2 (I + g3)).
    """
    level = float(invariant)
    ksq = 2.0 * (level + params.g3)
    if ksq <= 0.0:
        raise ValueError(f"requires I + g3 > 0, got {level + params.g3!r}")
    k = math.sqrt(ksq)
    t_par = _winternitz_time(params, level, theta, J)
    return c1 * math.cos(k * t_par) + c2 * math.sin(k * t_par) + params.mu0 / ksq


def winternitz_dpsi_closed(
    params: WinternitzParams,
    invariant,
    c1: float,
    c2: float,
    J: float,
    theta: float,
) -> float:
    """d psi / d theta of the closed form (chain rule through dT/dtheta = 1/h)."""
    level = float(invariant)
    k = math.sqrt(2.0 * (level + params.g3))
    t_par = _winternitz_time(params, level, theta, J)
    v = evaluate(_winternitz_potential(params), {"theta": theta})
    h = math.sqrt(2.0 * (level - v))
    return (-c1 * k * math.sin(k * t_par) + c2 * k * math.cos(k * t_par)) / h


def free_motion_solution(c1: float, c2: float, theta: float) -> float:
    """psi affine in the angle: the free-motion-class general solution."""
    return c1 + c2 * theta


@dataclass
class QuadratureSolution:
    """Cumulative angle and time maps with their inversion handles.

    The maps satisfy Theta(theta(t)) = branch_sign * Tau(t) + J, where
    Theta integrates 1/(h psi^2) from theta0 and Tau integrates 1/rho^2
    from t0.  Both are strictly monotone on their windows.
    """

    Theta: CumulativeIntegral
    Tau: CumulativeIntegral
    J: float
    branch_sign: int
    theta0: float
    t0: float
    theta_window: tuple[float, float]
    solution: LinearSolution
    rho: Expression
    rho_const: float | None

    def theta_at(self, t: float) -> float:
        """The unique angle with Theta(theta) = branch_sign*Tau(t) + J."""
        target = self.branch_sign * self.Tau(float(t)) + self.J
        lo, hi = self._bracket_theta(target)
        if lo == hi:
            return lo
        return solve_bracketed(lambda th: self.Theta(th) - target, lo, hi, f_tol=1e-12)

    def t_at(self, theta: float) -> float:
        """The time with Tau(t) = (Theta(theta) - J)/branch_sign."""
        lo, hi = self.theta_window
        if not (lo - 1e-12 <= theta <= hi + 1e-12):
            raise OutsideWindowError(f"theta={theta!r} outside the window [{lo}, {hi}]")
        target = (self.Theta(float(theta)) - self.J) / self.branch_sign
        t_lo, t_hi = self._bracket_time(target)
        if t_lo == t_hi:
            return t_lo
        return solve_bracketed(lambda tt: self.Tau(tt) - target, t_lo, t_hi, f_tol=1e-12)

    def _bracket_theta(self, target: float) -> tuple[float, float]:
        br = self.Theta.bracket_value(target)
        if br is not None:
            return br
        lo, hi = self.theta_window
        xs, vals = self.Theta.knots
        if target > vals[-1]:
            step = max((hi - lo) / 64.0, 1e-12)
            x = xs[-1]
            while x < hi:
                x = min(x + step, hi)
                step *= 2.0
                if self.Theta(x) >= target:
                    br = self.Theta.bracket_value(target)
                    if br is not None:
                        return br
            raise OutsideWindowError(
                f"requested time maps beyond theta={hi!r} (window edge or turning point)"
            )
        if target < vals[0]:
            step = max((hi - lo) / 64.0, 1e-12)
            x = xs[0]
            while x > lo:
                x = max(x - step, lo)
                step *= 2.0
                if self.Theta(x) <= target:
                    br = self.Theta.bracket_value(target)
                    if br is not None:
                        return br
            raise OutsideWindowError(
                f"requested time maps beyond theta={lo!r} (window edge or turning point)"
            )
        return self.theta0, self.theta0

    def _bracket_time(self, target: float) -> tuple[float, float]:
        rho_scale = self.rho_const**2 if self.rho_const is not None else None
        xs, vals = self.Tau.knots
        i = int(np.searchsorted(vals, target))
        if 0 < i < len(vals):
            return xs[i - 1], xs[i]
        if target == 0.0:
            return self.t0, self.t0
        step = rho_scale if rho_scale is not None else 1.0
        if target > vals[-1]:
            x = xs[-1]
            for _ in range(80):
                x_next = x + step
                step *= 2.0
                if self.Tau(x_next) >= target:
                    return x, x_next
                x = x_next
        else:
            x = xs[0]
            for _ in range(80):
                x_next = x - step
                step *= 2.0
                if self.Tau(x_next) <= target:
                    return x_next, x
                x = x_next
        raise OutsideWindowError(f"could not bracket the time for Tau={target!r}")


def time_quadrature(
    sol: LinearSolution,
    invariant,
    V,
    rho,
    theta0: float,
    t0: float,
    J: float = 0.0,
    branch_sign: int = 1,
    t_window: tuple[float, float] | None = None,
) -> QuadratureSolution:
    """Build the cumulative angle and time integrals anchored at (theta0, t0).

    The angle map integrates 1/(h psi^2) over the subinterval of the solved
    domain where psi stays positive; the time map integrates 1/rho^2.  With
    anchored base points the integration constant is J (zero by default).
    """
    V = as_expression(V)
    rho = as_expression(rho)
    level = float(invariant)
    if branch_sign not in (-1, 1):
        raise ValueError(f"branch_sign must be +1 or -1, got {branch_sign!r}")

    psi0 = sol.psi(theta0)
    if not psi0 > 0.0:
        raise LinearizationError(f"psi({theta0!r}) = {psi0!r} is not positive")

    lo, hi = sol.domain
    floor = 1e-4 * abs(psi0)
    grid = np.linspace(lo, hi, 801)
    i0 = int(np.searchsorted(grid, theta0))
    hi_w = hi
    for th in grid[i0:]:
        if sol.psi(float(th)) <= floor:
            hi_w = float(th)
            break
    lo_w = lo
    for th in grid[:i0][::-1]:
        if sol.psi(float(th)) <= floor:
            lo_w = float(th)
            break

    def theta_integrand(lam: float) -> float:
        gap = level - evaluate(V, {"theta": lam})
        if gap <= 0.0:
            raise ForbiddenRegionError(lam, level, level - gap)
        psi = sol.psi(lam)
        if psi <= 0.0:
            raise LinearizationError(f"psi({lam!r}) vanished inside the quadrature")
        return 1.0 / (math.sqrt(2.0 * gap) * psi * psi)

    rho_const = None
    if not free_variables(rho):
        rho_const = evaluate(rho, {})
        if rho_const == 0.0:
            raise EvaluationError("rho is identically zero")

    if t_window is not None and rho_const is None:
        samples = np.linspace(t_window[0], t_window[1], 257)
        vals = np.array([evaluate(rho, {"t": float(s)}) for s in samples])
        if np.min(np.abs(vals)) < 1e-12 or (np.min(vals) < 0.0 < np.max(vals)):
            raise EvaluationError(f"rho vanishes inside the time window {t_window!r}")

    def time_integrand(lam: float) -> float:
        rv = rho_const if rho_const is not None else evaluate(rho, {"t": lam})
        if rv == 0.0:
            raise EvaluationError(f"rho vanished at t={lam!r}")
        return 1.0 / (rv * rv)

    return QuadratureSolution(
        Theta=CumulativeIntegral(theta_integrand, theta0),
        Tau=CumulativeIntegral(time_integrand, t0),
        J=float(J),
        branch_sign=branch_sign,
        theta0=theta0,
        t0=t0,
        theta_window=(lo_w, hi_w),
        solution=sol,
        rho=rho,
        rho_const=rho_const,
    )


def invert_theta_of_t(q: QuadratureSolution, t: float) -> float:
    """Angle reached at time t along the reconstructed trajectory."""
    return q.theta_at(t)


def reconstruct_orbit(sol: LinearSolution, q: QuadratureSolution, rho, theta: float) -> float:
    """Orbit radius r(theta) = rho(t(theta)) / psi(theta).

    With a constant rho no time inversion is needed.
    """
    rho = as_expression(rho)
    psi = sol.psi(theta)
    if not psi > 0.0:
        raise LinearizationError(f"psi({theta!r}) = {psi!r} is not positive")
    if q.rho_const is not None:
        return q.rho_const / psi
    t = q.t_at(theta)
    return evaluate(rho, {"t": t}) / psi


def reconstruct_radial(sol: LinearSolution, q: QuadratureSolution, rho, t: float) -> float:
    """Radius as a function of time: rho(t) / psi(theta(t))."""
    rho = as_expression(rho)
    theta = q.theta_at(t)
    psi = sol.psi(theta)
    if not psi > 0.0:
        raise LinearizationError(f"psi({theta!r}) = {psi!r} is not positive")
    rv = q.rho_const if q.rho_const is not None else evaluate(rho, {"t": t})
    return rv / psi


# ---------------------------------------------------------------------------
# Compatibility check and end-to-end pipeline
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _cached_frequency(spec: LinearizableSpec) -> Expression:
    return frequency_from_linearizable(spec)


def verify_compatibility(spec: LinearizableSpec, state: PolarState) -> float:
    """Residual of the linearization constraint at one state.

    Evaluates rho^3 (rhoddot + w2 rho)/psi^3 with the induced frequency on
    one side and a psi' + b psi + c on the other; the two agree identically
    for any member of the family, up to rounding.
    """
    spec = _coerce_linearizable(spec)
    if state.thetadot == 0.0:
        raise ValueError("compatibility residual needs a state with nonzero thetadot")
    tenv = {"t": state.t}
    rho_v = evaluate(spec.rho, tenv)
    rho_d = simplify(differentiate(spec.rho, "t"))
    rho_dd = simplify(differentiate(rho_d, "t"))
    rho_dv = evaluate(rho_d, tenv)
    rho_ddv = evaluate(rho_dd, tenv)
    if rho_v == 0.0:
        raise EvaluationError(f"rho vanished at t={state.t!r}")
    psi = rho_v / state.r
    dpsi = -(rho_v * state.rdot - rho_dv * state.r) / (state.r**2 * state.thetadot)
    ell = state.angular_momentum
    env = {"theta": state.theta, "L": ell}
    a = -ell * evaluate(spec.A, env)
    b = evaluate(spec.B, env)
    c = evaluate(spec.C, env)
    w2 = evaluate(
        _cached_frequency(spec),
        {
            "t": state.t,
            "r": state.r,
            "theta": state.theta,
            "rdot": state.rdot,
            "thetadot": state.thetadot,
        },
    )
    lhs = rho_v**3 * (rho_ddv + w2 * rho_v) / psi**3
    rhs = a * dpsi + b * psi + c
    return abs(lhs - rhs)


@dataclass
class ReconstructionPipeline:
    """Linearize, solve, and invert: the full route from a spec and initial state."""

    spec: LinearizableSpec
    state0: PolarState
    invariant: InvariantValue
    ode: LinearODE
    solution: LinearSolution
    quadrature: QuadratureSolution

    def theta_of_t(self, t: float) -> float:
        return self.quadrature.theta_at(t)

    def r_of_t(self, t: float) -> float:
        return reconstruct_radial(self.solution, self.quadrature, self.spec.rho, t)

    def r_of_theta(self, theta: float) -> float:
        return reconstruct_orbit(self.solution, self.quadrature, self.spec.rho, theta)


def build_pipeline(
    spec,
    state0: PolarState,
    *,
    theta_domain: tuple[float, float] | None = None,
    t_window: tuple[float, float] | None = None,
    J: float = 0.0,
    domain_margin_rel: float = 1e-3,
    domain_span_cap: float = 2.0 * math.pi,
) -> ReconstructionPipeline:
    """Assemble the linearized route for one trajectory.

    The invariant level and branch come from the initial state; the angle
    domain is scanned automatically unless supplied.  Pipelines refuse to
    cross turning points: queries outside the covered window raise instead
    of switching branches.
    """
    lin = _coerce_linearizable(spec)
    if state0.thetadot == 0.0:
        raise LinearizationError("initial state sits at a turning point (thetadot = 0)")
    branch = 1 if state0.thetadot > 0.0 else -1
    inv = lewis_ray_reid_polar(state0, lin.V)
    if theta_domain is None:
        theta_domain = auto_theta_domain(
            lin.V, inv, state0.theta, margin_rel=domain_margin_rel, span_cap=domain_span_cap
        )
    ode = build_linear_ode(lin, inv, theta_domain, branch)
    tenv = {"t": state0.t}
    rho_v = evaluate(lin.rho, tenv)
    rho_dv = evaluate(simplify(differentiate(lin.rho, "t")), tenv)
    psi0 = rho_v / state0.r
    dpsi0 = -(rho_v * state0.rdot - rho_dv * state0.r) / (state0.r**2 * state0.thetadot)
    sol = solve_linear(ode, state0.theta, psi0, dpsi0, grid=list(theta_domain))
    quad = time_quadrature(
        sol, inv, lin.V, lin.rho, state0.theta, state0.t, J=J,
        branch_sign=branch, t_window=t_window,
    )
    return ReconstructionPipeline(
        spec=lin, state0=state0, invariant=inv, ode=ode, solution=sol, quadrature=quad
    )
