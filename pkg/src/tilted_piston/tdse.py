"""Time-dependent propagation of expansion coefficients.

The wavefunction is expanded over the instantaneous eigenbasis,
psi = sum_n a_n u_n(q; lambda(t)) exp(-i Phi_n / hbar) with
Phi_n = integral of E_n dt.  The coefficients obey

    da_m/dt = rate * sum_n exp(-i (Phi_n - Phi_m)/hbar) M_mn a_n

where M = M0 + MCD couples states through the basis motion (M0) and
the semiclassical counterdiabatic generator (MCD); dropping MCD gives
the uncorrected drive.

Matrices are built on a uniform grid of lambda snapshots and linearly
interpolated in between; only two grid nodes are ever resident, so the
memory footprint stays flat along arbitrarily long protocols.  The
stepper is the Gill variant of fourth-order Runge-Kutta with a fixed
step.  Phases advance by per-step trapezoids of the interpolated
eigenvalues, which is exact whenever a step does not straddle a grid
node (the default step is a tenth of a grid segment).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from tilted_piston.classical import DrivingCase
from tilted_piston.geometry import Drive, PistonParams
from tilted_piston.matrices import (
    BasisSpec,
    SpectralData,
    assemble_xi_sc,
    build_h0_sine,
    default_basis_size,
    diagonalize,
    grad_L_matrix,
    grad_s_matrix,
)

DEFAULT_GRID_POINTS = 2001
DEFAULT_STEPS = 20000
NORM_DRIFT_LIMIT = 1e-4

# Gill's fourth-order coefficients.
_SQRT2 = math.sqrt(2.0)
_B_WEIGHTS = (1.0 / 6.0, (2.0 - _SQRT2) / 6.0, (2.0 + _SQRT2) / 6.0, 1.0 / 6.0)


class PropagationError(RuntimeError):
    """Raised when a propagation leaves its validity envelope."""


@dataclass(frozen=True)
class QuantumState:
    """Expansion coefficients, accumulated phase integrals, and time.

    phases holds Phi_n = integral of E_n dt'; hbar is carried along
    because the physical phase factor is exp(-i Phi_n / hbar).
    """

    coefficients: np.ndarray
    phases: np.ndarray
    time: float
    hbar: float

    @property
    def norm(self) -> float:
        return float(np.vdot(self.coefficients, self.coefficients).real)


@dataclass(frozen=True)
class PropagatorTerms:
    """Coupling matrices and eigenvalues at one lambda snapshot.

    m0 is the basis-motion term -<m|grad n> (zero diagonal), mcd the
    counterdiabatic term <m|xi_SC|n>/(i hbar); both are real and
    antisymmetric, and their sum is the full coupling matrix.
    """

    m0: np.ndarray
    mcd: np.ndarray
    eigenvalues: np.ndarray


@dataclass(frozen=True)
class DensitySnapshot:
    """Frozen state plus the spectral data needed to render |psi(q)|^2."""

    state: QuantumState
    spectral: SpectralData
    lambda_value: float


@dataclass(frozen=True)
class FidelityTrace:
    """Per-step samples of a single propagation."""

    times: np.ndarray
    lambdas: np.ndarray
    fidelity: np.ndarray
    norm: np.ndarray
    energy_expectation: np.ndarray
    with_cd: bool
    snapshots: tuple[DensitySnapshot, ...] = ()

    @property
    def f_min(self) -> float:
        return float(np.min(self.fidelity))

    @property
    def max_norm_drift(self) -> float:
        return float(np.max(np.abs(self.norm - 1.0)))

    def to_csv(self, path) -> None:
        from tilted_piston.serialize import write_csv

        write_csv(
            path,
            ["t", "lambda", "fidelity", "norm", "energy_expectation"],
            [self.times, self.lambdas, self.fidelity, self.norm, self.energy_expectation],
        )


def rhs(state: QuantumState, terms: PropagatorTerms, rate: float) -> np.ndarray:
    """Coefficient velocities for the full coupling matrix m0 + mcd."""
    phase = np.exp(state.phases * (-1j / state.hbar))
    coupled = (terms.m0 + terms.mcd) @ (phase * state.coefficients)
    return rate * np.conj(phase) * coupled


@dataclass(frozen=True)
class _GridNode:
    lambda_value: float
    spectral: SpectralData
    energies: np.ndarray
    m_plain: np.ndarray  # basis-motion coupling only
    m_full: np.ndarray  # with the counterdiabatic term added


NodeFactory = Callable[[float, SpectralData | None], _GridNode]


def _default_node_factory(
    params: PistonParams, which: Drive, basis_n: int
) -> NodeFactory:
    def build(lambda_value: float, previous: SpectralData | None) -> _GridNode:
        if which is Drive.SLOPE:
            here = replace(params, slope=lambda_value)
        else:
            here = replace(params, length=lambda_value)
        spec = BasisSpec(basis_n, here.length)
        spectral = diagonalize(
            build_h0_sine(here, spec), previous=previous, params=here
        )
        if which is Drive.SLOPE:
            m0 = grad_s_matrix(spectral, here).entries
        else:
            m0 = -grad_L_matrix(spectral, here).entries
        mcd = assemble_xi_sc(spectral, here, which).entries.imag / here.hbar
        return _GridNode(
            lambda_value=lambda_value,
            spectral=spectral,
            energies=spectral.eigenvalues,
            m_plain=m0,
            m_full=m0 + mcd,
        )

    return build


def _matvec(matrix: np.ndarray, vec: np.ndarray) -> np.ndarray:
    # Real matrix times complex vector through a float view: one gemm on
    # the (re, im) columns instead of a complex product.
    return (matrix @ vec.view(np.float64).reshape(-1, 2)).view(np.complex128).ravel()


class _NodeCursor:
    """Streaming window of two grid nodes with chained gauge."""

    def __init__(self, factory: NodeFactory, lambdas: np.ndarray) -> None:
        self._factory = factory
        self._lambdas = lambdas
        first = factory(float(lambdas[0]), None)
        self._nodes: dict[int, _GridNode] = {0: first}
        self._built = 0

    def _extend_to(self, k: int) -> None:
        while self._built < k:
            nxt = self._built + 1
            node = self._factory(
                float(self._lambdas[nxt]), self._nodes[self._built].spectral
            )
            self._nodes[nxt] = node
            self._built = nxt
            self._nodes.pop(nxt - 2, None)

    def pair(self, k: int) -> tuple[_GridNode, _GridNode]:
        if len(self._lambdas) == 1:
            node = self._nodes[0]
            return node, node
        self._extend_to(k + 1)
        return self._nodes[k], self._nodes[k + 1]

    def at_lambda(self, lambda_value: float, k: int) -> SpectralData:
        """Exact spectral data at an off-node lambda, gauge-chained."""
        left = self.pair(k)[0]
        return self._factory(lambda_value, left.spectral).spectral


def _lambda_grid(case: DrivingCase, grid_points: int) -> np.ndarray:
    if case.rate == 0.0:
        return np.array([case.lambda_start])
    return np.linspace(case.lambda_start, case.lambda_end, grid_points)


def _resolve_steps(duration: float, dt: float | None) -> tuple[int, float]:
    if dt is None:
        return DEFAULT_STEPS, duration / DEFAULT_STEPS
    if not (dt > 0.0):
        raise ValueError("dt must be positive")
    ratio = duration / dt
    n_steps = round(ratio)
    if n_steps < 1 or abs(n_steps - ratio) > 1e-9 * max(1.0, ratio):
        raise ValueError(
            f"dt={dt!r} does not divide the protocol duration {duration!r}"
        )
    return n_steps, duration / n_steps


def propagate(
    n_init: int,
    params: PistonParams,
    case: DrivingCase,
    with_cd: bool,
    dt: float | None = None,
    grid_points: int = DEFAULT_GRID_POINTS,
    *,
    basis_size: int | None = None,
    snapshot_times: Sequence[float] = (),
    node_factory: NodeFactory | None = None,
) -> FidelityTrace:
    """Propagate from the n_init-th eigenstate (1-based label) and trace F(t)."""
    (trace,) = _propagate_channels(
        n_init,
        params,
        case,
        [with_cd],
        dt,
        grid_points,
        basis_size=basis_size,
        snapshot_times=snapshot_times,
        node_factory=node_factory,
    )
    return trace


def propagate_pair(
    n_init: int,
    params: PistonParams,
    case: DrivingCase,
    dt: float | None = None,
    grid_points: int = DEFAULT_GRID_POINTS,
    *,
    basis_size: int | None = None,
    snapshot_times: Sequence[float] = (),
    node_factory: NodeFactory | None = None,
) -> tuple[FidelityTrace, FidelityTrace]:
    """Corrected and uncorrected runs sharing one pass over the grid."""
    wcd, wocd = _propagate_channels(
        n_init,
        params,
        case,
        [True, False],
        dt,
        grid_points,
        basis_size=basis_size,
        snapshot_times=snapshot_times,
        node_factory=node_factory,
    )
    return wcd, wocd


def _propagate_channels(
    n_init: int,
    params: PistonParams,
    case: DrivingCase,
    cd_flags: list[bool],
    dt: float | None,
    grid_points: int,
    *,
    basis_size: int | None,
    snapshot_times: Sequence[float],
    node_factory: NodeFactory | None,
) -> list[FidelityTrace]:
    if n_init < 1:
        raise ValueError("n_init is a 1-based level label")
    if grid_points < 2:
        raise ValueError("the lambda grid needs at least two points")
    duration = case.duration
    n_steps, dt_val = _resolve_steps(duration, dt)
    basis_n = basis_size if basis_size is not None else default_basis_size(n_init)
    if n_init > basis_n:
        raise ValueError(f"n_init={n_init} exceeds the basis size {basis_n}")

    factory = node_factory or _default_node_factory(params, case.which, basis_n)
    lambdas = _lambda_grid(case, grid_points)
    cursor = _NodeCursor(factory, lambdas)
    seg_count = max(len(lambdas) - 1, 1)
    seg_dur = duration / seg_count
    hbar = params.hbar
    rate = case.rate
    idx = n_init - 1

    dim = cursor.pair(0)[0].energies.size
    if idx >= dim:
        raise ValueError(f"n_init={n_init} exceeds the basis size {dim}")

    n_ch = len(cd_flags)
    coeffs = [np.zeros(dim, dtype=np.complex128) for _ in range(n_ch)]
    for a in coeffs:
        a[idx] = 1.0
    phi = np.zeros(dim)

    times = np.empty(n_steps + 1)
    lam_out = np.empty(n_steps + 1)
    fid = [np.empty(n_steps + 1) for _ in range(n_ch)]
    norm = [np.empty(n_steps + 1) for _ in range(n_ch)]
    energy = [np.empty(n_steps + 1) for _ in range(n_ch)]

    snap_steps: dict[int, float] = {}
    for ts in snapshot_times:
        if not (-1e-9 <= ts <= duration * (1.0 + 1e-9)):
            raise ValueError(f"snapshot time {ts!r} outside the protocol")
        snap_steps[min(max(round(ts / dt_val), 0), n_steps)] = float(ts)
    snapshots: list[list[DensitySnapshot]] = [[] for _ in range(n_ch)]

    def segment_of(tau: float) -> tuple[int, float]:
        x = tau / seg_dur
        k = int(x)
        if k >= seg_count:
            k = seg_count - 1
        w = x - k
        if w < 0.0 or w > 1.0 + 1e-9:
            raise PropagationError(f"lambda left the grid at t={tau!r}")
        return k, min(w, 1.0)

    def stage_terms(tau: float, phi_base: np.ndarray, t_base: float, e_base: np.ndarray):
        k, w = segment_of(tau)
        left, right = cursor.pair(k)
        if left is right:
            e_here = left.energies
        else:
            e_here = (1.0 - w) * left.energies + w * right.energies
        # Trapezoid from the step start: exact for eigenvalues linear in t.
        phi_here = phi_base + (tau - t_base) * 0.5 * (e_base + e_here)
        phase = np.exp(phi_here * (-1j / hbar))
        return k, w, left, right, e_here, phase

    def record(step: int, t_now: float, e_now: np.ndarray) -> None:
        times[step] = t_now
        lam_out[step] = case.value_at(t_now)
        for c in range(n_ch):
            a = coeffs[c]
            nrm = float(np.vdot(a, a).real)
            if abs(nrm - 1.0) > NORM_DRIFT_LIMIT:
                raise PropagationError(
                    f"norm drift {abs(nrm - 1.0):.3e} at t={t_now!r} "
                    f"(with_cd={cd_flags[c]}); reduce dt or refine the grid"
                )
            fid[c][step] = abs(a[idx])
            norm[c][step] = nrm
            energy[c][step] = float(e_now @ (a.real ** 2 + a.imag ** 2))

    def take_snapshot(step: int, t_now: float) -> None:
        k, _ = segment_of(t_now)
        lam_now = case.value_at(t_now)
        node_l, node_r = cursor.pair(k)
        if lam_now == node_l.lambda_value:
            sd = node_l.spectral
        elif lam_now == node_r.lambda_value:
            sd = node_r.spectral
        else:
            sd = cursor.at_lambda(lam_now, k)
        for c in range(n_ch):
            state = QuantumState(
                coefficients=coeffs[c].copy(),
                phases=phi.copy(),
                time=t_now,
                hbar=hbar,
            )
            snapshots[c].append(DensitySnapshot(state, sd, lam_now))

    e0 = cursor.pair(0)[0].energies
    if seg_count > 1:
        k0, w0 = segment_of(0.0)
        left0, right0 = cursor.pair(k0)
        e0 = (1.0 - w0) * left0.energies + w0 * right0.energies
    record(0, 0.0, e0)
    if 0 in snap_steps:
        take_snapshot(0, 0.0)

    cached_phase = np.exp(phi * (-1j / hbar))
    cached_e = e0

    for step in range(n_steps):
        t0 = step * dt_val
        t1 = (step + 1) * dt_val
        t_mid = t0 + 0.5 * dt_val

        k_a, w_a = segment_of(t0)
        la, ra = cursor.pair(k_a)
        e_a, phase_a = cached_e, cached_phase
        k_m, w_m, lm, rm, e_m, phase_m = stage_terms(t_mid, phi, t0, e_a)
        k_b, w_b, lb, rb, e_b, phase_b = stage_terms(t1, phi, t0, e_a)

        stages = (
            (la, ra, w_a, phase_a),
            (lm, rm, w_m, phase_m),
            (lm, rm, w_m, phase_m),
            (lb, rb, w_b, phase_b),
        )

        for c in range(n_ch):
            a = coeffs[c]
            full = cd_flags[c]

            def deriv(vec: np.ndarray, st) -> np.ndarray:
                left, right, w, phase = st
                u = phase * vec
                m_l = left.m_full if full else left.m_plain
                m_r = right.m_full if full else right.m_plain
                if left is right or w == 0.0:
                    coupled = _matvec(m_l, u)
                else:
                    coupled = (1.0 - w) * _matvec(m_l, u) + w * _matvec(m_r, u)
                return rate * np.conj(phase) * coupled

            k1 = dt_val * deriv(a, stages[0])
            k2 = dt_val * deriv(a + 0.5 * k1, stages[1])
            k3 = dt_val * deriv(
                a + 0.5 * (_SQRT2 - 1.0) * k1 + 0.5 * (2.0 - _SQRT2) * k2, stages[2]
            )
            k4 = dt_val * deriv(
                a - 0.5 * _SQRT2 * k2 + 0.5 * (2.0 + _SQRT2) * k3, stages[3]
            )
            coeffs[c] = (
                a
                + _B_WEIGHTS[0] * k1
                + _B_WEIGHTS[1] * k2
                + _B_WEIGHTS[2] * k3
                + _B_WEIGHTS[3] * k4
            )

        phi = phi + dt_val * 0.5 * (e_a + e_b)
        cached_phase = phase_b
        cached_e = e_b
        record(step + 1, t1, e_b)
        if (step + 1) in snap_steps:
            take_snapshot(step + 1, t1)

    return [
        FidelityTrace(
            times=times,
            lambdas=lam_out,
            fidelity=fid[c],
            norm=norm[c],
            energy_expectation=energy[c],
            with_cd=cd_flags[c],
            snapshots=tuple(snapshots[c]),
        )
        for c in range(n_ch)
    ]


def reconstruct_density(
    state: QuantumState, spectral: SpectralData, q_grid: np.ndarray
) -> np.ndarray:
    """|psi(q)|^2 on q_grid from coefficients, phases, and eigenvectors."""
    if spectral.lambda_snapshot is None:
        raise ValueError("spectral data carries no lambda snapshot")
    length = spectral.lambda_snapshot[1]
    q = np.asarray(q_grid, dtype=float)
    if q.size and (q.min() < -1e-12 * length or q.max() > length * (1.0 + 1e-12)):
        raise ValueError("q_grid extends outside the box")
    weights = state.coefficients * np.exp(state.phases * (-1j / state.hbar))
    sine_coeffs = spectral.transform @ weights
    beta = np.arange(1, spectral.size + 1)
    modes = math.sqrt(2.0 / length) * np.sin(
        np.outer(q, beta) * (math.pi / length)
    )
    psi = modes @ sine_coeffs
    return (psi.real ** 2 + psi.imag ** 2).astype(float)
