"""Exact phase-space geometry of a particle in a tilted box.

The model is a particle bouncing between hard walls at q = 0 and q = L
on a linear ramp, H0 = p^2/(2m) + s*q with s > 0.  Orbits with energy
below E_c = s*L never reach the far wall; above E_c they strike both.
Everything here reduces to closed-form functions of the enclosed
phase-space volume Omega(E), which is the adiabatic invariant that the
counterdiabatic machinery in the rest of the package is built to
protect.

All quantities are in bare model units; no unit-system layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from scipy.optimize import brentq

# Relative width of the band around E_c = s*L treated as "at critical".
# Both closed-form branches agree there analytically, so the tie-break
# (the below-critical branch) is safe.
CRITICAL_RTOL = 1e-12


class Drive(Enum):
    """Which control parameter is being varied."""

    SLOPE = "slope"
    LENGTH = "length"


class Regime(Enum):
    BELOW_CRITICAL = "below"
    AT_CRITICAL = "critical"
    ABOVE_CRITICAL = "above"


@dataclass(frozen=True)
class PistonParams:
    """Snapshot of the box configuration: slope s, length L, mass, hbar."""

    slope: float
    length: float
    mass: float = 1.0
    hbar: float = 2.0

    def __post_init__(self) -> None:
        for name in ("slope", "length", "mass", "hbar"):
            value = getattr(self, name)
            if not (value > 0.0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class PhasePoint:
    """A point z = (q, p) in phase space."""

    q: float
    p: float


@dataclass(frozen=True)
class EnergyShell:
    """Derived data of the shell H0 = E: volume, period, regime."""

    energy: float
    omega: float
    period: float
    regime: Regime


def critical_energy(params: PistonParams) -> float:
    """Energy E_c = s*L separating one-wall from two-wall orbits."""
    return params.slope * params.length


def classify_regime(energy: float, params: PistonParams) -> Regime:
    ec = critical_energy(params)
    if abs(energy - ec) <= CRITICAL_RTOL * ec:
        return Regime.AT_CRITICAL
    return Regime.BELOW_CRITICAL if energy < ec else Regime.ABOVE_CRITICAL


def hamiltonian(z: PhasePoint, params: PistonParams) -> float:
    """H0(q, p) = p^2/(2m) + s*q for a point inside the box."""
    if not (0.0 <= z.q <= params.length):
        raise ValueError(f"q={z.q!r} outside the box [0, {params.length!r}]")
    return z.p * z.p / (2.0 * params.mass) + params.slope * z.q


def phase_volume(energy: float, params: PistonParams) -> float:
    """Phase-space volume enclosed by the shell H0 = E.

    Closed forms (continuous at E = s*L):

        E <= sL:  4 sqrt(2m) E^(3/2) / (3s)
        E >  sL:  4 sqrt(2m) [E^(3/2) - (E - sL)^(3/2)] / (3s)
    """
    if not (energy > 0.0):
        raise ValueError(f"energy must be positive, got {energy!r}")
    s = params.slope
    pref = 4.0 * math.sqrt(2.0 * params.mass) / (3.0 * s)
    ec = critical_energy(params)
    if energy <= ec:
        return pref * energy ** 1.5
    return pref * (energy ** 1.5 - (energy - ec) ** 1.5)


def period(energy: float, params: PistonParams) -> float:
    """Orbital period T = dOmega/dE in closed form."""
    if not (energy > 0.0):
        raise ValueError(f"energy must be positive, got {energy!r}")
    s = params.slope
    root_2m = math.sqrt(2.0 * params.mass)
    ec = critical_energy(params)
    if energy <= ec:
        return 2.0 * root_2m * math.sqrt(energy) / s
    return 2.0 * root_2m * (math.sqrt(energy) - math.sqrt(energy - ec)) / s


def energy_from_volume(omega: float, params: PistonParams) -> float:
    """Inverse of phase_volume: the energy E with Omega(E) = omega.

    Below the critical shell the inverse is elementary.  Above it the
    root is bracketed and solved numerically: by the mean value theorem
    Omega = 2 sqrt(2m) L sqrt(zeta) for some zeta in (E - sL, E), so

        E_c  <=  E  <=  E_c + omega^2 / (8 m L^2)

    is a guaranteed bracket.  One Newton step with the analytic
    derivative dOmega/dE = T(E) polishes the root to full precision.
    """
    if not (omega > 0.0):
        raise ValueError(f"omega must be positive, got {omega!r}")
    s, L, m = params.slope, params.length, params.mass
    ec = critical_energy(params)
    omega_c = phase_volume(ec, params)
    if omega <= omega_c:
        return (3.0 * s * omega / (4.0 * math.sqrt(2.0 * m))) ** (2.0 / 3.0)
    hi = ec + omega * omega / (8.0 * m * L * L)
    try:
        root = brentq(
            lambda e: phase_volume(e, params) - omega,
            ec,
            hi,
            xtol=1e-13 * ec,
            rtol=1e-15,
            maxiter=200,
        )
    except ValueError as exc:
        raise RuntimeError(
            f"energy_from_volume: root solve failed for omega={omega!r} "
            f"on bracket [{ec!r}, {hi!r}]"
        ) from exc
    return root - (phase_volume(root, params) - omega) / period(root, params)


def micro_avg_grad(energy: float, params: PistonParams, which: Drive) -> float:
    """Microcanonical average of dH0/dlambda on the shell H0 = E.

    Equal to -d_lambda Omega / d_E Omega; in one degree of freedom this
    is also the single-period time average.  Closed forms:

        Slope,  E <= sL:  2E / (3s)
        Slope,  E >  sL:  [E + sL - sqrt(E(E - sL))] / (3s)
        Length, E <= sL:  0            (orbit never touches the far wall)
        Length, E >  sL:  -[E - sL + sqrt(E(E - sL))] / L
    """
    if not (energy > 0.0):
        raise ValueError(f"energy must be positive, got {energy!r}")
    s, L = params.slope, params.length
    ec = critical_energy(params)
    if which is Drive.SLOPE:
        if energy <= ec:
            return 2.0 * energy / (3.0 * s)
        return (energy + ec - math.sqrt(energy * (energy - ec))) / (3.0 * s)
    if which is Drive.LENGTH:
        if energy <= ec:
            return 0.0
        return -(energy - ec + math.sqrt(energy * (energy - ec))) / L
    raise ValueError(f"unknown drive {which!r}")


def action(z: PhasePoint, params: PistonParams) -> float:
    """Adiabatic invariant of the orbit through z: Omega(H0(z))."""
    return phase_volume(hamiltonian(z, params), params)


def energy_shell(energy: float, params: PistonParams) -> EnergyShell:
    """Bundle the derived shell data for the energy E."""
    return EnergyShell(
        energy=energy,
        omega=phase_volume(energy, params),
        period=period(energy, params),
        regime=classify_regime(energy, params),
    )
