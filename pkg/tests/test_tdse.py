"""Tests for the coefficient propagator.

The integrator is checked against a closed-form two-level (Rabi)
solution through an injected constant grid node, against exact
stationarity for undriven protocols, and against its own convergence
policies on a short compression window.
"""

import math

import numpy as np
import pytest

from tilted_piston.classical import DrivingCase
from tilted_piston.geometry import Drive, PistonParams
from tilted_piston.matrices import BasisSpec, SpectralData, build_h0_sine, diagonalize
from tilted_piston.tdse import (
    DensitySnapshot,
    FidelityTrace,
    PropagationError,
    PropagatorTerms,
    QuantumState,
    propagate,
    propagate_pair,
    reconstruct_density,
    rhs,
)
from tilted_piston.tdse import _GridNode

P_RUN = PistonParams(slope=3.0, length=25.0, mass=1.0, hbar=2.0)

# One time unit of the compression protocol: L 25 -> 24.5 at -0.5.
WINDOW = DrivingCase(
    which=Drive.LENGTH, rate=-0.5, lambda_start=25.0, lambda_end=24.5
)


def constant_factory(energies, coupling):
    """Grid nodes that never change: a hand-built two-level system."""
    e = np.asarray(energies, dtype=float)
    m = np.asarray(coupling, dtype=float)
    sd = SpectralData(
        eigenvalues=e, transform=np.eye(e.size), lambda_snapshot=(1.0, 1.0)
    )

    def build(lambda_value, previous):
        return _GridNode(
            lambda_value=lambda_value,
            spectral=sd,
            energies=e,
            m_plain=m,
            m_full=m,
        )

    return build


def test_rhs_zero_rate():
    state = QuantumState(
        coefficients=np.array([0.6 + 0.0j, 0.8j]),
        phases=np.array([1.0, 2.0]),
        time=0.5,
        hbar=2.0,
    )
    terms = PropagatorTerms(
        m0=np.array([[0.0, 1.0], [-1.0, 0.0]]),
        mcd=np.zeros((2, 2)),
        eigenvalues=np.array([1.0, 3.0]),
    )
    assert np.all(rhs(state, terms, 0.0) == 0.0)


def test_rhs_preserves_norm_density():
    rng = np.random.default_rng(7)
    n = 6
    raw = rng.normal(size=(n, n))
    m0 = raw - raw.T
    a = rng.normal(size=n) + 1j * rng.normal(size=n)
    a /= np.linalg.norm(a)
    state = QuantumState(
        coefficients=a, phases=rng.normal(size=n) * 10.0, time=0.3, hbar=1.7
    )
    terms = PropagatorTerms(m0=m0, mcd=np.zeros((n, n)), eigenvalues=np.arange(n) * 1.0)
    v = rhs(state, terms, rate=0.8)
    # The generator is anti-Hermitian, so d|a|^2/dt vanishes.
    assert abs(np.vdot(a, v).real) < 1e-12


def test_two_level_rabi_oracle():
    # Constant coupling kappa and gap delta: |a_2(t)|^2 =
    # (kappa/Omega)^2 sin^2(Omega t) with Omega^2 = (delta/2 hbar)^2 + kappa^2.
    hbar = 0.7
    delta = 1.3
    coupling = 0.8
    rate = 1.0
    params = PistonParams(slope=1.0, length=1.0, mass=1.0, hbar=hbar)
    case = DrivingCase(
        which=Drive.LENGTH, rate=rate, lambda_start=1.0, lambda_end=3.0
    )
    factory = constant_factory(
        [0.0, delta], [[0.0, coupling], [-coupling, 0.0]]
    )
    trace = propagate(
        1, params, case, with_cd=True, dt=5e-4, grid_points=2, node_factory=factory
    )
    kappa = rate * coupling
    omega = delta / hbar
    big_omega = math.hypot(omega / 2.0, kappa)
    depth = (kappa / big_omega) ** 2
    expected = np.sqrt(1.0 - depth * np.sin(big_omega * trace.times) ** 2)
    assert np.max(np.abs(trace.fidelity - expected)) < 1e-8
    assert trace.max_norm_drift < 1e-10


def test_static_protocol_is_stationary():
    case = DrivingCase(
        which=Drive.LENGTH,
        rate=0.0,
        lambda_start=25.0,
        lambda_end=25.0,
        duration=5.0,
    )
    trace = propagate(
        35,
        P_RUN,
        case,
        with_cd=True,
        dt=5e-3,
        basis_size=60,
        snapshot_times=(2.5,),
    )
    assert np.all(trace.fidelity == 1.0)
    assert np.all(trace.norm == 1.0)
    assert np.all(trace.lambdas == 25.0)
    assert np.ptp(trace.energy_expectation) == 0.0
    snap = trace.snapshots[0]
    assert snap.lambda_value == 25.0
    assert snap.state.time == pytest.approx(2.5)


def test_short_window_bounds_and_sampling():
    trace = propagate(
        35, P_RUN, WINDOW, with_cd=True, dt=1e-3, grid_points=101, basis_size=140
    )
    assert trace.times.shape == (1001,)
    assert trace.times[0] == 0.0
    assert trace.times[-1] == pytest.approx(1.0, rel=1e-12)
    assert trace.lambdas[0] == 25.0
    assert trace.lambdas[-1] == pytest.approx(24.5, rel=1e-12)
    assert np.all(np.diff(trace.times) > 0.0)
    assert trace.max_norm_drift < 1e-6
    assert np.all(trace.fidelity <= 1.0 + 1e-9)
    assert np.all(trace.fidelity >= 0.0)
    assert trace.f_min == np.min(trace.fidelity)
    # Slow compression with the correction on barely disturbs the state.
    assert trace.f_min > 0.999
    # The piston does work on the particle: <E> rises.
    assert trace.energy_expectation[-1] > trace.energy_expectation[0]


def test_pair_matches_single_runs():
    kwargs = dict(dt=2e-3, grid_points=51, basis_size=140)
    wcd, wocd = propagate_pair(35, P_RUN, WINDOW, **kwargs)
    assert wcd.with_cd and not wocd.with_cd
    single_wcd = propagate(35, P_RUN, WINDOW, with_cd=True, **kwargs)
    single_wocd = propagate(35, P_RUN, WINDOW, with_cd=False, **kwargs)
    assert np.array_equal(wcd.fidelity, single_wcd.fidelity)
    assert np.array_equal(wocd.fidelity, single_wocd.fidelity)
    assert np.array_equal(wcd.energy_expectation, single_wcd.energy_expectation)
    # The corrected run tracks the level better than the bare one.
    assert wcd.f_min >= wocd.f_min


def test_step_and_grid_refinement_stable():
    base = propagate(
        35, P_RUN, WINDOW, with_cd=False, dt=1e-3, grid_points=101, basis_size=140
    )
    halved = propagate(
        35, P_RUN, WINDOW, with_cd=False, dt=5e-4, grid_points=101, basis_size=140
    )
    denser = propagate(
        35, P_RUN, WINDOW, with_cd=False, dt=1e-3, grid_points=201, basis_size=140
    )
    assert abs(base.f_min - halved.f_min) < 1e-6
    assert abs(base.f_min - denser.f_min) < 1e-6


def test_norm_drift_aborts():
    # A symmetric coupling matrix is not norm-preserving; the propagation
    # must detect the drift and refuse to continue.
    factory = constant_factory([0.0, 1.0], [[0.0, 1.0], [1.0, 0.0]])
    params = PistonParams(slope=1.0, length=1.0, mass=1.0, hbar=1.0)
    case = DrivingCase(which=Drive.LENGTH, rate=1.0, lambda_start=1.0, lambda_end=3.0)
    with pytest.raises(PropagationError, match="norm drift"):
        propagate(1, params, case, with_cd=True, dt=1e-2, grid_points=2,
                  node_factory=factory)


def test_argument_validation():
    with pytest.raises(ValueError, match="does not divide"):
        propagate(35, P_RUN, WINDOW, with_cd=True, dt=0.3, basis_size=60)
    with pytest.raises(ValueError, match="positive"):
        propagate(35, P_RUN, WINDOW, with_cd=True, dt=-1e-3, basis_size=60)
    with pytest.raises(ValueError, match="1-based"):
        propagate(0, P_RUN, WINDOW, with_cd=True, basis_size=60)
    with pytest.raises(ValueError, match="basis size"):
        propagate(300, P_RUN, WINDOW, with_cd=True, basis_size=100)
    with pytest.raises(ValueError, match="at least two"):
        propagate(35, P_RUN, WINDOW, with_cd=True, grid_points=1, basis_size=60)
    with pytest.raises(ValueError, match="snapshot time"):
        propagate(
            35, P_RUN, WINDOW, with_cd=True, basis_size=60, snapshot_times=(9.0,)
        )


def test_reconstruct_density_single_level():
    n = 120
    sd = diagonalize(build_h0_sine(P_RUN, BasisSpec(n, 25.0)), params=P_RUN)
    a = np.zeros(n, dtype=complex)
    a[34] = 1.0
    state = QuantumState(coefficients=a, phases=np.full(n, 3.7), time=1.0, hbar=2.0)
    q = np.linspace(0.0, 25.0, 2001)
    rho = reconstruct_density(state, sd, q)
    assert rho.shape == q.shape
    assert np.all(rho >= 0.0)
    assert rho[0] < 1e-12 and rho[-1] < 1e-12  # hard walls
    assert np.trapezoid(rho, q) == pytest.approx(1.0, abs=1e-4)
    # The phase of a single stationary term cannot move the density.
    other = QuantumState(coefficients=a, phases=np.zeros(n), time=0.0, hbar=2.0)
    rho_other = reconstruct_density(other, sd, q)
    assert np.max(np.abs(rho - rho_other)) < 1e-14 * np.max(rho)


def test_reconstruct_density_validation():
    n = 20
    sd = diagonalize(build_h0_sine(P_RUN, BasisSpec(n, 25.0)), params=P_RUN)
    a = np.zeros(n, dtype=complex)
    a[0] = 1.0
    state = QuantumState(coefficients=a, phases=np.zeros(n), time=0.0, hbar=2.0)
    with pytest.raises(ValueError, match="outside the box"):
        reconstruct_density(state, sd, np.array([-1.0, 5.0]))
    bare = SpectralData(eigenvalues=sd.eigenvalues, transform=sd.transform)
    with pytest.raises(ValueError, match="lambda snapshot"):
        reconstruct_density(state, bare, np.array([1.0]))


def test_snapshot_plumbing():
    trace = propagate(
        35,
        P_RUN,
        WINDOW,
        with_cd=True,
        dt=1e-3,
        grid_points=101,
        basis_size=140,
        snapshot_times=(0.0, 0.55, 1.0),
    )
    assert len(trace.snapshots) == 3
    times = [s.state.time for s in trace.snapshots]
    assert times == pytest.approx([0.0, 0.55, 1.0], abs=1e-9)
    for snap in trace.snapshots:
        assert snap.lambda_value == pytest.approx(25.0 - 0.5 * snap.state.time)
        assert snap.spectral.lambda_snapshot[1] == pytest.approx(snap.lambda_value)
        length = snap.spectral.lambda_snapshot[1]
        q = np.linspace(0.0, length, 2001)
        rho = reconstruct_density(snap.state, snap.spectral, q)
        assert np.trapezoid(rho, q) == pytest.approx(1.0, abs=1e-4)
    # At t=0 the state is exactly the tracked eigenstate.
    first = trace.snapshots[0]
    q = np.linspace(0.0, 25.0, 1001)
    rho0 = reconstruct_density(first.state, first.spectral, q)
    z = first.spectral.transform
    beta = np.arange(1, z.shape[0] + 1)
    modes = math.sqrt(2.0 / 25.0) * np.sin(np.outer(q, beta) * (math.pi / 25.0))
    exact = (modes @ z[:, 34]) ** 2
    assert np.max(np.abs(rho0 - exact)) < 1e-12
