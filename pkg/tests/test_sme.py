import math

import numpy as np
import pytest

from measured_qubit import (
    DensityMatrix,
    DetectorModel,
    DriveProtocol,
    IntegrationBlowupError,
    NoiseProcess,
    QubitOperator,
    StepThresholds,
    detector_current,
    effective_step_hamiltonian,
    eigendecompose,
    hamiltonian_at,
    integrate_trajectory,
    measurement_increment,
    sample_noise,
    step,
    unitary_increment,
)
from measured_qubit.sme import noise_coefficients, stratonovich_measurement_drift
from measured_qubit.thermo import ledger_update, new_ledger

import oracles

DT = 0.01


class TestDetectorModel:
    def test_tau_m_consistency(self):
        det = DetectorModel(delta_i=1.0, s0=2500.0)
        assert abs(det.tau_m - 2 * det.s0 / det.delta_i**2) < 1e-12
        assert det.dephasing_rate == pytest.approx(1e-4, abs=1e-18)

    def test_decoupled(self):
        det = DetectorModel.off()
        assert det.tau_m == math.inf
        assert det.dephasing_rate == 0.0

    def test_invalid_noise_density(self):
        with pytest.raises(ValueError):
            DetectorModel(delta_i=1.0, s0=0.0)


class TestNoiseProcess:
    def test_deterministic_in_seed_stream_step(self):
        a = NoiseProcess.for_run(7, 3, 2500.0, DT)
        b = NoiseProcess.for_run(7, 3, 2500.0, DT)
        assert a.sample(11) == b.sample(11)
        assert np.array_equal(a.sample_block(64), b.sample_block(64))

    def test_streams_differ(self):
        a = NoiseProcess.for_run(7, 0, 2500.0, DT)
        b = NoiseProcess.for_run(7, 1, 2500.0, DT)
        assert not np.array_equal(a.sample_block(16), b.sample_block(16))

    def test_zero_noise_density(self):
        a = NoiseProcess.for_run(7, 0, 0.0, DT)
        assert sample_noise(a, 5) == 0.0

    def test_moments(self):
        a = NoiseProcess.for_run(123, 0, 2500.0, DT)
        block = a.sample_block(1_000_000)
        target_var = 2500.0 / (2 * DT)
        assert block.var() == pytest.approx(target_var, rel=0.01)
        assert abs(block.mean()) < 3 * math.sqrt(target_var / len(block))

    def test_sigma_step(self):
        a = NoiseProcess.for_run(1, 0, 2500.0, DT)
        assert a.sigma_step == pytest.approx(math.sqrt(2500.0 / (2 * DT)), abs=0)


class TestUnitaryIncrement:
    def test_commuting_state_is_fixed(self):
        rho = DensityMatrix(0.8, 0j)
        d = unitary_increment(rho, QubitOperator(0, 0, 0, 0.1), DT)
        assert d.drho11 == 0.0 and d.drho12 == 0

    def test_transverse_kick(self):
        rho = DensityMatrix(1.0, 0j)
        d = unitary_increment(rho, QubitOperator(0, 0.625, 0, 0), DT)
        assert d.drho11 == 0.0
        assert abs(d.drho12) == pytest.approx(0.625 * DT, abs=1e-18)

    def test_energy_neutral(self, rng):
        for _ in range(50):
            p = rng.uniform(0, 1)
            r = math.sqrt(p * (1 - p)) * rng.uniform(0, 1)
            ang = rng.uniform(0, 2 * math.pi)
            rho = DensityMatrix(p, complex(r * math.cos(ang), r * math.sin(ang)))
            h = QubitOperator(0, *rng.normal(size=3))
            d = unitary_increment(rho, h, DT)
            dx, dy, dz = d.bloch()
            assert abs(h.cx * dx + h.cy * dy + h.cz * dz) < 1e-15

    def test_matrix_oracle(self, rng):
        for _ in range(50):
            p = rng.uniform(0, 1)
            r = math.sqrt(p * (1 - p)) * rng.uniform(0, 1)
            ang = rng.uniform(0, 2 * math.pi)
            rho = DensityMatrix(p, complex(r * math.cos(ang), r * math.sin(ang)))
            h = QubitOperator(0, *rng.normal(size=3))
            d = unitary_increment(rho, h, DT)
            comm = -1j * (h.matrix() @ rho.matrix() - rho.matrix() @ h.matrix()) * DT
            assert abs(comm[0, 0].real - d.drho11) < 1e-15
            assert abs(comm[0, 1] - d.drho12) < 1e-15


class TestMeasurementIncrement:
    det = DetectorModel(1.0, 2500.0)

    def test_decoupled_detector(self):
        d = measurement_increment(DensityMatrix(0.3, 0.2j), 1.5, DT, DetectorModel.off())
        assert d.drho11 == 0.0 and d.drho12 == 0

    def test_pointer_states_fixed(self):
        for p in (0.0, 1.0):
            d = measurement_increment(DensityMatrix(p, 0j), 2.0, DT, self.det)
            assert d.drho11 == 0.0 and d.drho12 == 0

    def test_centered_state_kick(self):
        sigma = math.sqrt(self.det.s0 / 2)
        d = measurement_increment(DensityMatrix(0.5, 0j), sigma, DT, self.det)
        expected = 0.25 * (2 * self.det.delta_i / self.det.s0) * sigma * DT
        assert d.drho11 == pytest.approx(expected, abs=1e-20)
        assert d.drho12 == 0

    def test_stratonovich_conversion_matches_finite_differences(self, rng):
        # drift_s = drift_i - (sigma^2/2) (b . grad) b, directional derivative
        # approximated numerically from the noise-coefficient field
        det = DetectorModel(1.0, 25.0)
        sigma2 = det.s0 / 2
        for _ in range(25):
            p = rng.uniform(0.05, 0.95)
            r = math.sqrt(p * (1 - p)) * rng.uniform(0, 0.95)
            ang = rng.uniform(0, 2 * math.pi)
            rho = DensityMatrix(p, complex(r * math.cos(ang), r * math.sin(ang)))
            b = noise_coefficients(rho, det)
            h = 1e-7
            shifted = DensityMatrix(
                rho.rho11 + h * b[0],
                rho.rho12 + complex(h * b[1], h * b[2]),
            )
            jvp = (noise_coefficients(shifted, det) - b) / h
            ito = np.array([0.0, -det.dephasing_rate * rho.rho12.real,
                            -det.dephasing_rate * rho.rho12.imag])
            expected = ito - 0.5 * sigma2 * jvp
            got = stratonovich_measurement_drift(rho, det)
            assert np.abs(got - expected).max() < 1e-5


class TestDetectorCurrent:
    det = DetectorModel(1.0, 2500.0, i0=3.0)

    def test_centered(self):
        assert detector_current(DensityMatrix(0.5, 0j), 0.0, self.det) == 3.0

    def test_extremes(self):
        assert detector_current(DensityMatrix(1.0, 0j), 0.0, self.det) == 3.5
        assert detector_current(DensityMatrix(0.0, 0j), 0.0, self.det) == 2.5


class TestStep:
    protocol = DriveProtocol(g=0.625, nu=8.0, tau=30.0, epsilon=0.1)
    det = DetectorModel(1.0, 2500.0)

    @pytest.mark.parametrize("scheme", ["ito-euler", "stratonovich-heun"])
    def test_additivity_is_exact(self, scheme, rng):
        rho = DensityMatrix(0.4, complex(0.3, -0.2))
        for k in range(20):
            xi = float(rng.normal()) * 350.0
            new, dec = step(rho, k * DT, DT, self.protocol, self.det, xi, scheme)
            assert new.rho11 == rho.rho11 + dec.d_rho_w.drho11 + dec.d_rho_q.drho11
            assert new.rho12 == rho.rho12 + dec.d_rho_w.drho12 + dec.d_rho_q.drho12
            rho = new

    def test_decoupled_step_is_purely_unitary(self):
        rho = DensityMatrix(0.9, 0.1 + 0.05j)
        new, dec = step(rho, 0.0, DT, self.protocol, DetectorModel.off(), 0.0)
        assert dec.d_rho_q.drho11 == 0.0 and dec.d_rho_q.drho12 == 0
        # the unitary substep is an exact rotation: purity is conserved
        assert new.purity() == pytest.approx(rho.purity(), abs=1e-15)

    def test_unitary_part_conserves_step_energy(self):
        rho = DensityMatrix(0.7, complex(0.25, 0.1))
        new, dec = step(rho, 12.0, DT, self.protocol, self.det, 50.0)
        h_eff = effective_step_hamiltonian(12.0, DT, self.protocol)
        dx, dy, dz = dec.d_rho_w.bloch()
        assert abs(h_eff.cx * dx + h_eff.cy * dy + h_eff.cz * dz) < 1e-14

    def test_blowup_aborts_with_step_index(self):
        det = DetectorModel(1.0, 0.05)
        rho = DensityMatrix(0.5, 0.2 + 0j)
        with pytest.raises(IntegrationBlowupError):
            step(rho, 0.0, DT, self.protocol, det, 1e4, "ito-euler",
                 thresholds=StepThresholds(abort_tol=1e-6))

    def test_effective_hamiltonian_structure(self):
        h = effective_step_hamiltonian(20.0, DT, self.protocol)
        lam_lo = 0.625 / math.cosh(8.0 * (1 - 20.0 / 30.0))
        lam_hi = 0.625 / math.cosh(8.0 * (1 - (20.0 + DT) / 30.0))
        assert h.cz == self.protocol.epsilon
        assert lam_lo < h.cx < lam_hi
        assert abs(h.cy) < 1e-6


class TestIntegrateTrajectory:
    protocol = DriveProtocol(g=0.625, nu=8.0, tau=30.0, epsilon=0.1)
    det = DetectorModel(1.0, 2500.0)

    def ground_state(self):
        sd = eigendecompose(hamiltonian_at(0.0, self.protocol))
        pm = sd.proj_minus
        return DensityMatrix(pm.c0 + pm.cz, complex(pm.cx, pm.cy))

    def test_record_lengths(self):
        noise = NoiseProcess.for_run(5, 0, self.det.s0, DT)
        rec = integrate_trajectory(
            self.ground_state(), self.protocol, self.det, noise,
            "stratonovich-heun", 300,
        )
        assert len(rec.states) == 301
        assert len(rec.decompositions) == 300
        assert rec.currents.shape == (300,)
        assert rec.xis.shape == (300,)

    def test_decoupled_matches_fine_step_propagation(self):
        noise = NoiseProcess.for_run(5, 0, 0.0, DT)
        rec = integrate_trajectory(
            self.ground_state(), self.protocol, DetectorModel.off(), noise,
            "stratonovich-heun", 3000,
        )
        rho_oracle = oracles.propagate_unitary(
            rec.states[0].matrix(), 0.625, 8.0, 30.0, 0.1, 30000
        )
        final = rec.final_state().matrix()
        assert np.abs(final - rho_oracle).max() < 1e-8

    def test_ledger_replay_matches(self):
        # replay the per-step bookkeeping through the public ledger API and
        # compare with the ledger attached by the integrator
        noise = NoiseProcess.for_run(11, 4, self.det.s0, DT)
        steps = 400
        proto = DriveProtocol(g=0.625, nu=8.0, tau=steps * DT, epsilon=0.1)
        rec = integrate_trajectory(
            self.ground_state(), proto, self.det, noise, "stratonovich-heun", steps
        )
        h_prev = hamiltonian_at(0.0, proto)
        ledger = new_ledger(rec.states[0], h_prev)
        for k in range(steps):
            ledger = ledger_update(
                ledger, rec.states[k], rec.states[k + 1],
                h_prev, rec.h_nodes[k], rec.decompositions[k],
            )
            h_prev = rec.h_nodes[k]
        assert ledger.w_cum == pytest.approx(rec.ledger.w_cum, abs=1e-13)
        assert ledger.q_cum == pytest.approx(rec.ledger.q_cum, abs=1e-13)
        assert ledger.u_now == pytest.approx(rec.ledger.u_now, abs=1e-13)
        assert ledger.max_residual < 1e-12

    def test_measurement_pointer_states_are_exact_fixed_points(self):
        proto = DriveProtocol(g=0.0, nu=0.0, tau=1.0, epsilon=0.1)
        noise = NoiseProcess.for_run(3, 0, self.det.s0, DT)
        for p0 in (0.0, 1.0):
            rec = integrate_trajectory(
                DensityMatrix(p0, 0j), proto, self.det, noise,
                "stratonovich-heun", 100,
            )
            assert all(s.rho11 == p0 and s.rho12 == 0 for s in rec.states)

    def test_purity_preserved_at_default_parameters(self):
        noise = NoiseProcess.for_run(21, 0, self.det.s0, DT)
        rec = integrate_trajectory(
            self.ground_state(), self.protocol, self.det, noise,
            "stratonovich-heun", 3000,
        )
        purs = [1.0 - (2 * s.purity() - 1.0) for s in rec.states]
        assert max(abs(q) for q in purs) < 1e-6

    def test_ito_scheme_uses_literal_measurement_increment(self):
        # for one step, subtracting the exact-rotation part must leave the
        # textbook Ito increment evaluated at the rotated state
        rho = DensityMatrix(0.35, complex(0.2, 0.31))
        xi = 140.0
        new, dec = step(rho, 3.0, DT, self.protocol, self.det, xi, "ito-euler")
        rotated = DensityMatrix(
            rho.rho11 + dec.d_rho_w.drho11, rho.rho12 + dec.d_rho_w.drho12
        )
        lit = measurement_increment(rotated, xi, DT, self.det)
        # equal up to coordinate-alignment rounding of the state itself
        assert dec.d_rho_q.drho11 == pytest.approx(lit.drho11, rel=1e-10, abs=1e-16)
        assert dec.d_rho_q.drho12.real == pytest.approx(lit.drho12.real, rel=1e-10, abs=1e-16)
        assert dec.d_rho_q.drho12.imag == pytest.approx(lit.drho12.imag, rel=1e-10, abs=1e-16)
