"""Tests for the classical generators and the hard-wall integrator.

The deepest check reconstructs xi along a frozen-parameter orbit from
its defining property: d xi/dt along the unperturbed flow must equal
dH0/dlambda minus its microcanonical average.  Integrating that forcing
term and anchoring the constant with the zero-mean condition rebuilds
xi independently of the closed forms.
"""

import math

import numpy as np
import pytest

from tilted_piston.classical import (
    DrivingCase,
    IntegrationError,
    integrate_trajectory,
    generator_relation_residual,
    xi_classical,
    xi_gradients,
)
from tilted_piston.geometry import (
    Drive,
    PhasePoint,
    PistonParams,
    critical_energy,
    micro_avg_grad,
    period,
    phase_volume,
)

P_REF = PistonParams(slope=1.5, length=5.0, mass=0.5, hbar=2.0)
P_RUN = PistonParams(slope=3.0, length=25.0, mass=1.0, hbar=2.0)


def random_point(rng, params, e_lo, e_hi):
    """Uniform q in the box, energy in [e_lo, e_hi], random momentum sign."""
    while True:
        q = rng.uniform(0.0, params.length)
        if params.slope * q < e_hi:
            break
    energy = rng.uniform(max(e_lo, params.slope * q * 1.0000001), e_hi)
    p = math.sqrt(2.0 * params.mass * (energy - params.slope * q))
    return PhasePoint(q=q, p=p if rng.random() < 0.5 else -p)


class TestXiClosedForms:
    def test_below_critical_slope_value(self):
        # mass chosen so H0(z) = 5.25 < E_c = 7.5 puts the point below critical
        params = PistonParams(slope=1.5, length=5.0, mass=2.0, hbar=2.0)
        z = PhasePoint(q=2.0, p=3.0)
        assert xi_classical(z, params, Drive.SLOPE) == pytest.approx(
            -2.0 * 3.0 / (3.0 * 1.5), rel=1e-14
        )

    def test_below_critical_length_is_zero(self):
        rng = np.random.default_rng(3)
        ec = critical_energy(P_REF)
        for _ in range(50):
            z = random_point(rng, P_REF, 0.1 * ec, 0.999 * ec)
            assert xi_classical(z, P_REF, Drive.LENGTH) == 0.0

    def test_collapses_to_below_form_at_critical_shell(self):
        ec = critical_energy(P_REF)
        q = 1.2
        p = math.sqrt(2.0 * P_REF.mass * (ec - P_REF.slope * q))
        z = PhasePoint(q=q, p=p)
        assert xi_classical(z, P_REF, Drive.SLOPE) == pytest.approx(
            -q * p / (3.0 * P_REF.slope), rel=1e-12
        )

    def test_branch_continuity_scales_as_sqrt_epsilon(self):
        # The closed forms meet with a sqrt cusp at E_c, so the mismatch
        # along a ray at E = E_c (1 +/- eps) shrinks like sqrt(eps).
        q = 2.0
        ec = critical_energy(P_REF)

        def xi_at(energy, which):
            p = math.sqrt(2.0 * P_REF.mass * (energy - P_REF.slope * q))
            return xi_classical(PhasePoint(q=q, p=p), P_REF, which)

        for which in Drive:
            residuals = []
            for eps in (1e-7, 1e-9, 1e-11):
                r = abs(xi_at(ec * (1 + eps), which) - xi_at(ec * (1 - eps), which))
                residuals.append(r)
            scale = 1.0 + abs(xi_at(ec * (1 - 1e-7), which))
            assert residuals[0] < 1e-3 * scale
            assert residuals[0] > residuals[1] > residuals[2]
            ratio = residuals[0] / residuals[1]
            assert 3.0 < ratio < 33.0  # sqrt(100) = 10 up to subleading terms


class TestGeneratorRelation:
    def test_zero_below_critical(self):
        rng = np.random.default_rng(11)
        ec = critical_energy(P_REF)
        for _ in range(100):
            z = random_point(rng, P_REF, 0.05 * ec, 0.99 * ec)
            assert generator_relation_residual(z, P_REF) == 0.0

    def test_residual_above_critical_randomized(self):
        rng = np.random.default_rng(12)
        ec = critical_energy(P_REF)
        worst = 0.0
        for _ in range(1000):
            z = random_point(rng, P_REF, 1.001 * ec, 5.0 * ec)
            worst = max(worst, generator_relation_residual(z, P_REF))
        assert worst < 1e-12


class TestXiGradients:
    def test_below_critical_analytic(self):
        z = PhasePoint(q=1.0, p=2.2)
        dq, dp = xi_gradients(z, P_REF, Drive.SLOPE)
        assert dq == pytest.approx(-2.2 / 4.5, rel=1e-14)
        assert dp == pytest.approx(-1.0 / 4.5, rel=1e-14)
        assert xi_gradients(z, P_REF, Drive.LENGTH) == (0.0, 0.0)

    @pytest.mark.parametrize("which", list(Drive))
    def test_matches_finite_differences(self, which):
        rng = np.random.default_rng(21)
        ec = critical_energy(P_REF)
        pts = [random_point(rng, P_REF, 1.05 * ec, 4.0 * ec) for _ in range(20)]
        pts += [random_point(rng, P_REF, 0.1 * ec, 0.9 * ec) for _ in range(10)]
        for z in pts:
            h = 1e-6 * (1.0 + abs(z.q))
            fd_q = (
                xi_classical(PhasePoint(z.q + h, z.p), P_REF, which)
                - xi_classical(PhasePoint(z.q - h, z.p), P_REF, which)
            ) / (2 * h)
            h = 1e-6 * (1.0 + abs(z.p))
            fd_p = (
                xi_classical(PhasePoint(z.q, z.p + h), P_REF, which)
                - xi_classical(PhasePoint(z.q, z.p - h), P_REF, which)
            ) / (2 * h)
            dq, dp = xi_gradients(z, P_REF, which)
            assert dq == pytest.approx(fd_q, rel=1e-6, abs=1e-9)
            assert dp == pytest.approx(fd_p, rel=1e-6, abs=1e-9)

    def test_rejects_p_zero_above_critical(self):
        # p = 0 above E_c means q beyond the far wall; the formulas keep
        # evaluating there because integrator stages can overshoot.
        z = PhasePoint(q=6.0, p=0.0)
        with pytest.raises(ValueError):
            xi_gradients(z, P_REF, Drive.SLOPE)


def _static_case(duration):
    return DrivingCase(
        which=Drive.LENGTH,
        rate=0.0,
        lambda_start=P_REF.length,
        lambda_end=P_REF.length,
        duration=duration,
    )


def _segments(record):
    """Sample-index ranges strictly between consecutive wall events."""
    times = record.times
    ev = [t for t, _ in record.wall_events]
    out = []
    for t_a, t_b in zip(ev, ev[1:]):
        idx = np.where((times > t_a) & (times < t_b))[0]
        if idx.size > 10:
            out.append((t_a, t_b, idx))
    return out


class TestGeneratingProperty:
    @pytest.mark.parametrize(
        "energy,which",
        [
            (12.0, Drive.SLOPE),
            (12.0, Drive.LENGTH),
            (5.0, Drive.SLOPE),
        ],
    )
    def test_xi_reconstruction_along_orbit(self, energy, which):
        # Integrate the frozen-parameter orbit densely, then compare
        # Delta xi between samples of one smooth arc against the
        # integral of dH0/dlambda - <dH0/dlambda>.
        z0 = PhasePoint(q=0.0, p=math.sqrt(2.0 * P_REF.mass * energy))
        T = period(energy, P_REF)
        rec = integrate_trajectory(
            z0, P_REF, _static_case(2.5 * T), with_cd=False, dt=T / 20000
        )
        avg = micro_avg_grad(energy, P_REF, which)
        if which is Drive.SLOPE:
            forcing = rec.positions - avg  # dH0/ds = q in the interior
        else:
            forcing = np.zeros_like(rec.positions) - avg  # interior dH0/dL = 0
        segs = _segments(rec)
        assert segs, "expected at least one smooth arc between wall events"
        t_a, t_b, idx = segs[0]
        t_seg = rec.times[idx]
        xi_seg = np.array(
            [
                xi_classical(PhasePoint(float(q), float(p)), P_REF, which)
                for q, p in zip(rec.positions[idx], rec.momenta[idx])
            ]
        )
        integral = np.concatenate(
            [[0.0], np.cumsum(np.diff(t_seg) * 0.5 * (forcing[idx][1:] + forcing[idx][:-1]))]
        )
        scale = max(1e-12, np.max(np.abs(xi_seg)))
        err = np.max(np.abs((xi_seg - xi_seg[0]) - integral)) / scale
        assert err < 1e-6

    def test_zero_mean_over_one_period(self):
        # Time average of xi over a full closed orbit, split at the wall
        # events where xi jumps, evaluated with exact one-sided states.
        energy = 12.0
        m, s, L = P_REF.mass, P_REF.slope, P_REF.length
        z0 = PhasePoint(q=0.0, p=math.sqrt(2.0 * m * energy))
        T = period(energy, P_REF)
        rec = integrate_trajectory(
            z0, P_REF, _static_case(2.5 * T), with_cd=False, dt=T / 20000
        )
        events = rec.wall_events
        assert len(events) >= 3
        # A full period spans from one hit of a wall to the next hit of
        # the same wall (events alternate 0, L, 0 above E_c).
        (t0, w0), (t1, w1), (t2, w2) = events[0], events[1], events[2]
        assert w0 == w2 != w1
        for which in Drive:

            def xi_state(q, p):
                return xi_classical(PhasePoint(q, p), P_REF, which)

            def one_sided(t_ev, wall, sign):
                p_mag = math.sqrt(2.0 * m * (energy - s * wall))
                # leaving the bottom wall moves up; hitting the top wall
                # arrives moving up, and vice versa
                if wall == 0.0:
                    return xi_state(wall, sign * p_mag)
                return xi_state(wall, -sign * p_mag)

            total = 0.0
            max_abs = 0.0
            for (ta, wa), (tb, wb) in (((t0, w0), (t1, w1)), ((t1, w1), (t2, w2))):
                idx = np.where((rec.times > ta) & (rec.times < tb))[0]
                ts = np.concatenate([[ta], rec.times[idx], [tb]])
                vals = np.concatenate(
                    [
                        [one_sided(ta, wa, +1.0)],
                        [
                            xi_state(float(q), float(p))
                            for q, p in zip(rec.positions[idx], rec.momenta[idx])
                        ],
                        [one_sided(tb, wb, -1.0)],
                    ]
                )
                total += np.trapezoid(vals, ts)
                max_abs = max(max_abs, float(np.max(np.abs(vals))))
            if max_abs == 0.0:  # Length case below E_c would be identically zero
                continue
            assert abs(total) / (t2 - t0) < 1e-6 * max_abs


class TestIntegrator:
    def test_static_energy_conservation_above_critical(self):
        energy = 12.0
        z0 = PhasePoint(q=0.0, p=math.sqrt(2.0 * P_REF.mass * energy))
        T = period(energy, P_REF)
        rec = integrate_trajectory(z0, P_REF, _static_case(50 * T), with_cd=False)
        drift = np.max(np.abs(rec.energies - rec.energies[0])) / rec.energies[0]
        assert drift < 1e-8
        # two reflections per period, up to one boundary straddle
        assert 99 <= len(rec.wall_events) <= 101
        walls = [w for _, w in rec.wall_events]
        assert set(walls) == {0.0, P_REF.length}

    def test_static_energy_conservation_below_critical(self):
        energy = 5.0  # below E_c = 7.5: bottom wall only, smooth turning point
        z0 = PhasePoint(q=0.0, p=math.sqrt(2.0 * P_REF.mass * energy))
        T = period(energy, P_REF)
        rec = integrate_trajectory(z0, P_REF, _static_case(50 * T), with_cd=False)
        drift = np.max(np.abs(rec.energies - rec.energies[0])) / rec.energies[0]
        assert drift < 1e-8
        assert all(w == 0.0 for _, w in rec.wall_events)
        assert np.max(rec.positions) < energy / P_REF.slope * 1.001

    def test_compression_with_cd_conserves_action(self):
        z0 = PhasePoint(q=0.0, p=math.sqrt(2.0 * P_RUN.mass * 79.52))
        case = DrivingCase(Drive.LENGTH, rate=-0.5, lambda_start=25.0, lambda_end=15.0)
        rec = integrate_trajectory(z0, P_RUN, case, with_cd=True)
        assert rec.max_action_drift < 1e-3
        # the driven energy must rise as the box shrinks
        assert rec.energies[-1] > rec.energies[0]

    def test_compression_without_cd_loses_action(self):
        z0 = PhasePoint(q=0.0, p=math.sqrt(2.0 * P_RUN.mass * 79.52))
        case = DrivingCase(Drive.LENGTH, rate=-0.5, lambda_start=25.0, lambda_end=15.0)
        rec = integrate_trajectory(z0, P_RUN, case, with_cd=False)
        assert rec.max_action_drift > 0.05

    def test_reversibility_with_cd(self):
        z0 = PhasePoint(q=0.0, p=math.sqrt(2.0 * P_RUN.mass * 79.52))
        fwd = DrivingCase(Drive.LENGTH, rate=-0.5, lambda_start=25.0, lambda_end=20.0)
        rec_f = integrate_trajectory(z0, P_RUN, fwd, with_cd=True)
        z_mid = PhasePoint(q=float(rec_f.positions[-1]), p=float(rec_f.momenta[-1]))
        back = DrivingCase(Drive.LENGTH, rate=+0.5, lambda_start=20.0, lambda_end=25.0)
        p_mid = PistonParams(slope=3.0, length=20.0, mass=1.0, hbar=2.0)
        rec_b = integrate_trajectory(z_mid, p_mid, back, with_cd=True)
        assert abs(rec_b.actions[-1] - rec_f.actions[0]) / rec_f.actions[0] < 1e-6

    def test_slope_protocol_with_and_without_cd(self):
        params = PistonParams(slope=13.0, length=15.0, mass=1.0, hbar=2.0)
        z0 = PhasePoint(q=0.0, p=math.sqrt(2.0 * 79.52))
        case = DrivingCase(Drive.SLOPE, rate=-0.5, lambda_start=13.0, lambda_end=3.0)
        rec_wcd = integrate_trajectory(z0, params, case, with_cd=True)
        rec_wocd = integrate_trajectory(z0, params, case, with_cd=False)
        assert rec_wcd.max_action_drift < 1e-3
        assert rec_wocd.max_action_drift > 0.01

    def test_samples_stay_inside_box(self):
        z0 = PhasePoint(q=0.0, p=math.sqrt(2.0 * P_RUN.mass * 79.52))
        case = DrivingCase(Drive.LENGTH, rate=-0.5, lambda_start=25.0, lambda_end=15.0)
        rec = integrate_trajectory(z0, P_RUN, case, with_cd=True)
        lengths = 25.0 - 0.5 * rec.times
        assert np.all(rec.positions >= 0.0)
        assert np.all(rec.positions <= lengths + 1e-12)
        assert np.all(np.diff(rec.times) > 0.0)

    def test_csv_round_trip(self, tmp_path):
        z0 = PhasePoint(q=0.0, p=math.sqrt(2.0 * P_REF.mass * 5.0))
        rec = integrate_trajectory(
            z0, P_REF, _static_case(1.0), with_cd=False, dt=0.01
        )
        path = tmp_path / "traj.csv"
        rec.to_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "t,q,p,E,action"
        parsed = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
        assert np.array_equal(parsed[:, 1], rec.positions)
        assert np.array_equal(parsed[:, 4], rec.actions)


class TestDrivingCaseValidation:
    def test_duration_derived_from_rate(self):
        case = DrivingCase(Drive.LENGTH, rate=-0.5, lambda_start=25.0, lambda_end=15.0)
        assert case.duration == pytest.approx(20.0)
        assert case.value_at(10.0) == pytest.approx(20.0)

    def test_unreachable_endpoint_rejected(self):
        with pytest.raises(ValueError):
            DrivingCase(Drive.LENGTH, rate=0.5, lambda_start=25.0, lambda_end=15.0)

    def test_static_requires_duration(self):
        with pytest.raises(ValueError):
            DrivingCase(Drive.LENGTH, rate=0.0, lambda_start=25.0, lambda_end=25.0)
        with pytest.raises(ValueError):
            DrivingCase(Drive.LENGTH, rate=0.0, lambda_start=25.0, lambda_end=15.0, duration=5.0)

    def test_params_mismatch_rejected(self):
        z0 = PhasePoint(q=0.0, p=4.0)
        case = DrivingCase(Drive.LENGTH, rate=-0.5, lambda_start=20.0, lambda_end=15.0)
        with pytest.raises(ValueError):
            integrate_trajectory(z0, P_RUN, case, with_cd=False)
