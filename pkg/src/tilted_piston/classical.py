"""Classical counterdiabatic generators and hard-wall trajectory integration.

The generator xi(q, p; lambda) is the phase-space function whose flow,
added to H0 as H = H0 + rate * xi, transports every orbit so that the
enclosed volume Omega(H0(z); lambda) stays constant while the slope s or
the box length L is ramped.  Below the critical energy E_c = s*L the
closed forms are elementary; above it they pick up terms built from

    w = sqrt(E (E - sL))
    F = E - sL + w
    g = sqrt(2m) [ E sqrt(E - sL) + sqrt(E) (E - sL) ]

and a sign(p) factor.  Both branches meet continuously at E = E_c.

The integrator is a fixed-step classic fourth-order Runge-Kutta with
in-step bisection for wall crossings; the fields are smooth between
walls, so wall events are the only nonsmoothness.  Reflections are
elastic, p -> -p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from tilted_piston.geometry import (
    Drive,
    PhasePoint,
    PistonParams,
    hamiltonian,
    period,
    phase_volume,
)
from tilted_piston.serialize import write_csv

DEFAULT_STEPS_PER_PERIOD = 2000
# Maximum wall reflections allowed inside a single step before the
# integrator declares a step-size failure.
_MAX_EVENTS_PER_STEP = 8


class IntegrationError(RuntimeError):
    """Raised when the trajectory integrator cannot complete a step."""


@dataclass(frozen=True)
class DrivingCase:
    """A constant-rate ramp of one control parameter.

    For rate == 0 the protocol is static and an explicit duration is
    required; otherwise duration = (lambda_end - lambda_start) / rate.
    """

    which: Drive
    rate: float
    lambda_start: float
    lambda_end: float
    duration: float | None = None

    def __post_init__(self) -> None:
        if self.lambda_start <= 0.0:
            raise ValueError("lambda_start must be positive")
        if self.rate == 0.0:
            if self.lambda_end != self.lambda_start:
                raise ValueError("static case requires lambda_end == lambda_start")
            if self.duration is None or not (self.duration > 0.0):
                raise ValueError("static case requires an explicit positive duration")
            return
        implied = (self.lambda_end - self.lambda_start) / self.rate
        if implied <= 0.0:
            raise ValueError(
                f"lambda_end {self.lambda_end!r} is not reachable from "
                f"{self.lambda_start!r} at rate {self.rate!r}"
            )
        if self.duration is None:
            object.__setattr__(self, "duration", implied)
        elif not math.isclose(self.duration, implied, rel_tol=1e-12):
            raise ValueError("explicit duration inconsistent with rate and endpoints")
        if min(self.lambda_start, self.lambda_end) <= 0.0:
            raise ValueError("driven parameter must stay positive")

    def value_at(self, t: float) -> float:
        """Driven parameter value at time t in [0, duration]."""
        return self.lambda_start + self.rate * t

    def params_at(self, t: float, base: PistonParams) -> PistonParams:
        value = self.value_at(t)
        if self.which is Drive.SLOPE:
            return replace(base, slope=value)
        return replace(base, length=value)


@dataclass
class TrajectoryRecord:
    """Sampled classical trajectory with instantaneous energy and action."""

    times: np.ndarray
    positions: np.ndarray
    momenta: np.ndarray
    energies: np.ndarray
    actions: np.ndarray
    wall_events: list[tuple[float, float]] = field(default_factory=list)

    @property
    def max_action_drift(self) -> float:
        """max_t |I0(t) - I0(0)| / I0(0)."""
        initial = self.actions[0]
        return float(np.max(np.abs(self.actions - initial)) / abs(initial))

    def to_csv(self, path) -> None:
        write_csv(
            path,
            ["t", "q", "p", "E", "action"],
            [self.times, self.positions, self.momenta, self.energies, self.actions],
        )


# --- scalar cores -----------------------------------------------------------
# The integrator calls these once per Runge-Kutta stage, so they work on
# plain floats instead of parameter objects.


def _above_terms(energy: float, ec: float, mass: float) -> tuple[float, float]:
    """F and g of the above-critical closed forms."""
    excess = energy - ec
    w = math.sqrt(energy * excess)
    f_term = excess + w
    g_term = math.sqrt(2.0 * mass) * (
        energy * math.sqrt(excess) + math.sqrt(energy) * excess
    )
    return f_term, g_term


def _above_terms_grad(energy: float, ec: float, mass: float) -> tuple[float, float]:
    """dF/dE and dg/dE."""
    excess = energy - ec
    w = math.sqrt(energy * excess)
    df = 1.0 + (2.0 * energy - ec) / (2.0 * w)
    root_e = math.sqrt(energy)
    root_x = math.sqrt(excess)
    dg = math.sqrt(2.0 * mass) * (
        root_x + energy / (2.0 * root_x) + excess / (2.0 * root_e) + root_e
    )
    return df, dg


def _xi_value(q: float, p: float, s: float, L: float, m: float, which: Drive) -> float:
    energy = p * p / (2.0 * m) + s * q
    ec = s * L
    if energy <= ec:
        if which is Drive.SLOPE:
            return -q * p / (3.0 * s)
        return 0.0
    f_term, g_term = _above_terms(energy, ec, m)
    sigma = math.copysign(1.0, p) if p != 0.0 else 0.0
    if which is Drive.SLOPE:
        return (
            -p * f_term / (3.0 * s * s)
            - p * q / (3.0 * s)
            + sigma * g_term / (3.0 * s * s)
        )
    return -p * f_term / (s * L) + sigma * g_term / (s * L)


def _xi_grad(
    q: float, p: float, s: float, L: float, m: float, which: Drive
) -> tuple[float, float]:
    energy = p * p / (2.0 * m) + s * q
    ec = s * L
    if energy <= ec:
        if which is Drive.SLOPE:
            return (-p / (3.0 * s), -q / (3.0 * s))
        return (0.0, 0.0)
    if p == 0.0:
        raise ValueError("xi_gradients undefined at p = 0 above the critical energy")
    f_term, _ = _above_terms(energy, ec, m)
    df, dg = _above_terms_grad(energy, ec, m)
    sigma = math.copysign(1.0, p)
    # Everything that enters through the energy dependence, dE/dq = s
    # and dE/dp = p/m, shares this combination.
    chain = -p * df + sigma * dg
    if which is Drive.SLOPE:
        dxi_dq = (chain - p) / (3.0 * s)
        dxi_dp = (
            -f_term / (3.0 * s * s)
            - q / (3.0 * s)
            + (p / m) * chain / (3.0 * s * s)
        )
        return (dxi_dq, dxi_dp)
    return (chain / L, -f_term / (s * L) + (p / m) * chain / (s * L))


# --- public operations ------------------------------------------------------


def xi_classical(z: PhasePoint, params: PistonParams, which: Drive) -> float:
    """Generator value at z for the requested protocol.

    The energy branch is selected from E = H0(z); the two branches agree
    at E = E_c, where both F and g vanish.
    """
    return _xi_value(z.q, z.p, params.slope, params.length, params.mass, which)


def generator_relation_residual(z: PhasePoint, params: PistonParams) -> float:
    """|xi(.; s) + qp/(3s) - (L/3s) xi(.; L)|, identically zero analytically."""
    s, L = params.slope, params.length
    lhs = xi_classical(z, params, Drive.SLOPE) + z.q * z.p / (3.0 * s)
    rhs = (L / (3.0 * s)) * xi_classical(z, params, Drive.LENGTH)
    return abs(lhs - rhs)


def xi_gradients(
    z: PhasePoint, params: PistonParams, which: Drive
) -> tuple[float, float]:
    """Analytic (d xi/dq, d xi/dp) with the chain rule through E(q, p).

    sign(p) is treated as locally constant, which is valid away from
    p = 0; above E_c the point p = 0 would sit outside the box, so it is
    rejected.
    """
    return _xi_grad(z.q, z.p, params.slope, params.length, params.mass, which)


def _rk4_step(deriv, t: float, q: float, p: float, h: float) -> tuple[float, float]:
    k1q, k1p = deriv(t, q, p)
    k2q, k2p = deriv(t + 0.5 * h, q + 0.5 * h * k1q, p + 0.5 * h * k1p)
    k3q, k3p = deriv(t + 0.5 * h, q + 0.5 * h * k2q, p + 0.5 * h * k2p)
    k4q, k4p = deriv(t + h, q + h * k3q, p + h * k3p)
    return (
        q + h * (k1q + 2.0 * k2q + 2.0 * k3q + k4q) / 6.0,
        p + h * (k1p + 2.0 * k2p + 2.0 * k3p + k4p) / 6.0,
    )


def integrate_trajectory(
    z0: PhasePoint,
    params: PistonParams,
    case: DrivingCase,
    with_cd: bool,
    dt: float | None = None,
) -> TrajectoryRecord:
    """Integrate dq/dt = dH/dp, dp/dt = -dH/dq with H = H0 + rate * xi.

    Wall crossings inside a step are located by bisection on the crossing
    time and handled by elastic reflection p -> -p at the wall.  The
    record holds one sample per step boundary, including the
    instantaneous action Omega(H0(z); lambda(t)).
    """
    anchor = params.slope if case.which is Drive.SLOPE else params.length
    if not math.isclose(anchor, case.lambda_start, rel_tol=1e-12):
        raise ValueError(
            f"params.{case.which.value} = {anchor!r} does not match "
            f"lambda_start = {case.lambda_start!r}"
        )
    p_start = case.params_at(0.0, params)
    energy0 = hamiltonian(z0, p_start)
    if energy0 <= 0.0:
        raise ValueError("initial energy must be positive")
    if dt is None:
        dt = period(energy0, p_start) / DEFAULT_STEPS_PER_PERIOD
    if not (dt > 0.0):
        raise ValueError("dt must be positive")

    mass = params.mass
    rate = case.rate
    use_cd = with_cd and rate != 0.0
    slope_driven = case.which is Drive.SLOPE
    s_fixed = params.slope
    length_fixed = params.length
    lam0 = case.lambda_start
    which = case.which

    def deriv(t: float, q: float, p: float) -> tuple[float, float]:
        lam = lam0 + rate * t
        s_t = lam if slope_driven else s_fixed
        length_t = length_fixed if slope_driven else lam
        dq = p / mass
        dp = -s_t
        if use_cd:
            gq, gp = _xi_grad(q, p, s_t, length_t, mass, which)
            dq += rate * gp
            dp -= rate * gq
        return dq, dp

    def length_at(t: float) -> float:
        return length_fixed if slope_driven else lam0 + rate * t

    duration = case.duration
    n_steps = max(1, math.ceil(duration / dt - 1e-12))

    times = [0.0]
    qs = [z0.q]
    ps = [z0.p]
    wall_events: list[tuple[float, float]] = []

    t, q, p = 0.0, z0.q, z0.p
    for k in range(n_steps):
        t_target = min((k + 1) * dt, duration)
        events_this_step = 0
        while True:
            remaining = t_target - t
            if remaining <= 1e-15 * duration:
                t = t_target
                break
            q_new, p_new = _rk4_step(deriv, t, q, p, remaining)
            length_end = length_at(t_target)
            if 0.0 <= q_new <= length_end:
                t, q, p = t_target, q_new, p_new
                break
            events_this_step += 1
            if events_this_step > _MAX_EVENTS_PER_STEP:
                raise IntegrationError(
                    f"wall-event cascade at t = {t!r}: step size too large"
                )
            # Bisect the crossing time in (0, remaining]: inside at lo,
            # outside at hi.
            lo, hi = 0.0, remaining
            while hi - lo > 1e-14 * max(remaining, 1e-9):
                mid = 0.5 * (lo + hi)
                q_mid, _ = _rk4_step(deriv, t, q, p, mid)
                if 0.0 <= q_mid <= length_at(t + mid):
                    lo = mid
                else:
                    hi = mid
            tau = 0.5 * (lo + hi)
            q_ev, p_ev = _rk4_step(deriv, t, q, p, tau)
            t_ev = t + tau
            length_ev = length_at(t_ev)
            # Snap exactly onto the violated wall, then reflect.
            wall = 0.0 if abs(q_ev) < abs(q_ev - length_ev) else length_ev
            wall_events.append((t_ev, wall))
            t, q, p = t_ev, wall, -p_ev
            if p == 0.0:
                raise IntegrationError(f"particle stalled on a wall at t = {t_ev!r}")
        times.append(t)
        qs.append(q)
        ps.append(p)
        if t >= duration:
            break

    times_arr = np.asarray(times)
    qs_arr = np.asarray(qs)
    ps_arr = np.asarray(ps)
    energies = np.empty_like(times_arr)
    actions = np.empty_like(times_arr)
    for i in range(times_arr.size):
        pa = case.params_at(float(times_arr[i]), params)
        energies[i] = float(ps_arr[i]) ** 2 / (2.0 * mass) + pa.slope * float(qs_arr[i])
        actions[i] = phase_volume(float(energies[i]), pa)
    return TrajectoryRecord(
        times=times_arr,
        positions=qs_arr,
        momenta=ps_arr,
        energies=energies,
        actions=actions,
        wall_events=wall_events,
    )
