import math

import numpy as np
import pytest

from measured_qubit import (
    DensityMatrix,
    DetectorModel,
    DriveProtocol,
    FirstLawError,
    NoiseProcess,
    QubitOperator,
    ThermalSpec,
    eigendecompose,
    free_energy_difference,
    hamiltonian_at,
    integrate_trajectory,
    jarzynski_estimate,
    ledger_update,
    new_ledger,
    step_heat,
    step_work,
    tpm_distribution,
    transition_decomposition,
)
from measured_qubit.ensemble import EnsembleConfig, InitialState, run_ensemble
from measured_qubit.sme import StateDelta, StepDecomposition
from measured_qubit.thermo import DiscreteDistribution, per_trajectory_transitions

import oracles

DT = 0.01


def eigenstate(basis, n):
    pr = (basis.proj_minus, basis.proj_plus)[n]
    return DensityMatrix(pr.c0 + pr.cz, complex(pr.cx, pr.cy))


class TestStepQuantities:
    def test_work_zero_for_static_hamiltonian(self):
        h = QubitOperator(0, 0.3, 0, 0.1)
        assert step_work(DensityMatrix(0.7, 0.2 + 0j), h, h) == 0.0

    def test_work_zero_for_centered_state(self):
        h0 = QubitOperator(0, 0.3, 0, 0.1)
        h1 = QubitOperator(0, 0.4, 0, 0.1)
        assert step_work(DensityMatrix(0.5, 0j), h0, h1) == 0.0

    def test_work_example(self):
        h0 = QubitOperator(0, 0.30, 0, 0.1)
        h1 = QubitOperator(0, 0.31, 0, 0.1)
        rho = DensityMatrix(0.5, 0.3 + 0j)
        assert step_work(rho, h0, h1) == pytest.approx(0.006, abs=1e-15)

    def test_heat_zero_for_zero_increment(self):
        assert step_heat(StateDelta(0.0, 0j), QubitOperator(0, 0.3, 0, 0.1)) == 0.0

    def test_heat_example(self):
        d = StateDelta(7e-4, 0j)
        assert step_heat(d, QubitOperator(0, 0.5, 0, 0.1)) == pytest.approx(
            1.4e-4, abs=1e-18
        )


class TestLedger:
    protocol = DriveProtocol(g=0.625, nu=8.0, tau=30.0, epsilon=0.1)

    def run_case(self, det, g=None):
        proto = self.protocol if g is None else DriveProtocol(
            g=g, nu=8.0, tau=30.0, epsilon=0.1
        )
        basis = eigendecompose(hamiltonian_at(0.0, proto))
        noise = NoiseProcess.for_run(9, 0, det.s0, DT)
        return integrate_trajectory(
            eigenstate(basis, 0), proto, det, noise, "stratonovich-heun", 3000
        )

    def test_unitary_run_has_no_heat(self):
        rec = self.run_case(DetectorModel.off())
        led = rec.ledger
        assert led.q_cum == 0.0
        assert abs(led.u_now - led.u0 - led.w_cum) < 1e-12

    def test_undriven_run_has_no_work(self):
        rec = self.run_case(DetectorModel(1.0, 2500.0), g=0.0)
        led = rec.ledger
        assert led.w_cum == 0.0
        assert abs(led.u_now - led.u0 - led.q_cum) < 1e-12

    def test_single_step_residual(self):
        det = DetectorModel(1.0, 2500.0)
        rec = self.run_case(det)
        assert rec.ledger.max_residual < 1e-12

    def test_inconsistent_inputs_raise(self):
        h0 = QubitOperator(0, 0.3, 0, 0.1)
        h_wrong = QubitOperator(0, 0.9, 0, 0.5)
        rho0 = DensityMatrix(0.7, 0.1 + 0j)
        rho1 = DensityMatrix(0.69, 0.11 + 0j)
        led = new_ledger(rho0, h0)
        dec = StepDecomposition(StateDelta(0.0, 0j), StateDelta(0.0, 0j), 0.0)
        with pytest.raises(FirstLawError):
            ledger_update(led, rho0, rho1, h0, h_wrong, dec)


class TestTransitionDecomposition:
    protocol = DriveProtocol(g=0.625, nu=8.0, tau=14.0, epsilon=0.1)
    det = DetectorModel(1.0, 2500.0)

    def records(self, n, det, n_traj=24, scheme="stratonovich-heun", seed=77):
        basis0 = eigendecompose(hamiltonian_at(0.0, self.protocol))
        init = eigenstate(basis0, n)
        out = []
        for i in range(n_traj):
            noise = NoiseProcess.for_run(seed, i, det.s0, DT)
            out.append(
                integrate_trajectory(init, self.protocol, det, noise, scheme, 1400)
            )
        return out

    def bases(self):
        return (
            eigendecompose(hamiltonian_at(0.0, self.protocol)),
            eigendecompose(hamiltonian_at(self.protocol.tau, self.protocol)),
        )

    def test_decoupled_detector_has_no_heat_column(self):
        basis0, basis_tau = self.bases()
        recs = self.records(0, DetectorModel.off(), n_traj=3)
        col = transition_decomposition(0, recs, basis0, basis_tau)
        assert np.abs(col.dp_q).max() == 0.0
        oracle = oracles.unitary_transition_matrix(0.625, 8.0, 14.0, 0.1, 28000)
        assert np.abs(col.p_tau - oracle[:, 0]).max() < 1e-8

    def test_per_trajectory_identity(self):
        basis0, basis_tau = self.bases()
        recs = self.records(1, self.det, n_traj=16)
        delta = np.array([0.0, 1.0])
        for rec in recs:
            p, w, q = per_trajectory_transitions(rec, basis_tau)
            assert np.abs(p - delta - (w - delta) - q).max() < 1e-10

    def test_mismatched_initial_state_rejected(self):
        basis0, basis_tau = self.bases()
        recs = self.records(0, self.det, n_traj=2)
        with pytest.raises(ValueError):
            transition_decomposition(1, recs, basis0, basis_tau)

    def test_record_route_matches_ensemble_route(self):
        # the record-based average and the vectorized ensemble driver
        # compute the same statistics for identical (seed, stream) noise
        basis0, basis_tau = self.bases()
        recs = self.records(0, self.det, n_traj=12, seed=55)
        col = transition_decomposition(0, recs, basis0, basis_tau)
        cfg = EnsembleConfig(
            n_traj=12, seed=55, scheme="stratonovich-heun", steps=1400,
            initial_state=InitialState.eigenstate(0),
        )
        res = run_ensemble(cfg, self.protocol, self.det)
        fast = res.columns[0]
        assert np.abs(col.p_tau - fast.p_tau).max() < 1e-13
        assert np.abs(col.dp_w - fast.dp_w).max() < 1e-13
        assert np.abs(col.dp_q - fast.dp_q).max() < 1e-13
        assert np.abs(col.se_p_tau - fast.se_p_tau).max() < 1e-13

    def test_averaged_additivity_and_column_sums(self):
        basis0, basis_tau = self.bases()
        cols = []
        for n in (0, 1):
            recs = self.records(n, self.det, n_traj=10, seed=91 + n)
            cols.append(transition_decomposition(n, recs, basis0, basis_tau))
        from measured_qubit.thermo import assemble_transition_decomposition

        decomp = assemble_transition_decomposition(*cols)
        decomp.validate(tol=1e-10)


class TestTpmDistribution:
    def bases(self, protocol):
        return (
            eigendecompose(hamiltonian_at(0.0, protocol)),
            eigendecompose(hamiltonian_at(protocol.tau, protocol)),
        )

    def test_default_support(self):
        protocol = DriveProtocol(g=0.625, nu=8.0, tau=30.0, epsilon=0.1)
        b0, bt = self.bases(protocol)
        p_tau = np.array([[0.9, 0.1], [0.1, 0.9]])
        dist = tpm_distribution(np.array([0.8, 0.2]), p_tau, b0, bt)
        assert np.allclose(dist.support, oracles.TPM_ATOMS, atol=1e-15)
        assert np.allclose(dist.support, [-0.7329, -0.5329, 0.5329, 0.7329], atol=1e-4)
        assert dist.probabilities.sum() == pytest.approx(1.0, abs=1e-15)

    def test_identity_evolution_single_atom(self):
        protocol = DriveProtocol(g=0.5, nu=0.0, tau=1.0, epsilon=0.0)
        b0, bt = self.bases(protocol)
        dist = tpm_distribution(np.array([0.75, 0.25]), np.eye(2), b0, bt)
        at_zero = dist.probabilities[np.isclose(dist.support, 0.0, atol=1e-12)]
        assert at_zero.sum() == pytest.approx(1.0, abs=1e-15)
        assert dist.probabilities.sum() == pytest.approx(1.0, abs=1e-15)

    def test_non_stochastic_rejected(self):
        protocol = DriveProtocol(g=0.625, nu=8.0, tau=30.0, epsilon=0.1)
        b0, bt = self.bases(protocol)
        with pytest.raises(ValueError):
            tpm_distribution(
                np.array([0.8, 0.2]), np.array([[0.9, 0.1], [0.2, 0.9]]), b0, bt
            )

    def test_distribution_validation(self):
        with pytest.raises(ValueError):
            DiscreteDistribution(np.array([0.0]), np.array([0.5]))


class TestJarzynski:
    @pytest.mark.parametrize("tau", [7.0, 14.0, 30.0])
    def test_unitary_statistics_reproduce_free_energy(self, tau):
        # brute-force four-term sum over exact unitary transition
        # probabilities must return the closed-form value
        protocol = DriveProtocol(g=0.625, nu=8.0, tau=tau, epsilon=0.1)
        b0 = eigendecompose(hamiltonian_at(0.0, protocol))
        bt = eigendecompose(hamiltonian_at(tau, protocol))
        p_tau = oracles.unitary_transition_matrix(0.625, 8.0, tau, 0.1, 40000)
        pops = np.array(oracles.gibbs_populations(10.0, b0.e_plus))
        dist = tpm_distribution(pops, p_tau, b0, bt)
        est, se = jarzynski_estimate(dist, 10.0)
        exact = free_energy_difference(
            ThermalSpec(10.0), hamiltonian_at(0.0, protocol), hamiltonian_at(tau, protocol)
        )
        assert abs(est - exact) < 1e-10
        assert se == 0.0

    def test_requires_positive_beta(self):
        dist = DiscreteDistribution(np.array([0.0]), np.array([1.0]))
        with pytest.raises(ValueError):
            jarzynski_estimate(dist, 0.0)

    def test_stderr_propagation(self):
        support = np.array([-0.5, 0.5])
        dist = DiscreteDistribution(
            support, np.array([0.6, 0.4]), variances=np.array([1e-4, 1e-4])
        )
        est, se = jarzynski_estimate(dist, 2.0)
        w = np.exp(-2.0 * support)
        s = float(np.dot(dist.probabilities, w))
        assert est == pytest.approx(-math.log(s) / 2.0, abs=1e-15)
        assert se == pytest.approx(
            math.sqrt(float(np.dot(dist.variances, w**2))) / (2.0 * s), abs=1e-15
        )
