"""Counterdiabatic driving of a particle in a tilted box.

Exact classical generators, their semiclassical quantization, and
spectral-basis propagation of the time-dependent Schroedinger equation,
with verification through action conservation (classical) and fidelity
(quantum).
"""

from tilted_piston.geometry import (
    Drive,
    EnergyShell,
    PhasePoint,
    PistonParams,
    Regime,
    action,
    critical_energy,
    energy_from_volume,
    micro_avg_grad,
    period,
    phase_volume,
)

__all__ = [
    "Drive",
    "EnergyShell",
    "PhasePoint",
    "PistonParams",
    "Regime",
    "action",
    "critical_energy",
    "energy_from_volume",
    "micro_avg_grad",
    "period",
    "phase_volume",
]

__version__ = "0.1.0"
