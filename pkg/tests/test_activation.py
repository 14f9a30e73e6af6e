import numpy as np
import pytest

from cardioem import activation, fibers, geometry


@pytest.fixture(scope="module")
def slab():
    return geometry.build_slab(0.006, 0.006, 0.002, 0.001)


@pytest.fixture(scope="module")
def micro(slab):
    tc = geometry.compute_transmural_coordinate(slab, 0, 1)
    return fibers.generate_fibers(slab, tc, 0.0, 0.0, 0.0, 0.0)


def ca_transient(t_s, peak_uM=0.8, rest_uM=0.126, t_peak=0.03, tau=0.12):
    """Smooth synthetic calcium drive used by the oracle comparisons."""
    t = np.asarray(t_s)
    shape = (t / t_peak) * np.exp(1.0 - t / t_peak) * np.exp(-np.maximum(t - t_peak, 0) / tau)
    return rest_uM + (peak_uM - rest_uM) * shape


class TestForcingFixedPoints:
    def test_resting_calcium_keeps_gamma_zero(self, slab, micro):
        solver = activation.ActivationSolver(slab, geometry.healthy_map(slab))
        ca = np.full(slab.n_nodes, 0.126)  # below the 0.2 uM threshold
        for _ in range(200):
            solver.step(ca)
        assert np.max(np.abs(solver.gamma)) < 1e-12

    def test_scar_gamma_identically_zero(self, slab, micro):
        imap = geometry.synthesize_ischemia(slab, [((0.0, 0.0, 0.0), 0.003, "scar")])
        solver = activation.ActivationSolver(slab, imap)
        ca = np.full(slab.n_nodes, 0.9)
        for _ in range(400):
            solver.step(ca)
        scar = imap.scar_nodes
        assert np.all(solver.gamma[scar] == 0.0)
        assert np.min(solver.gamma) < -1e-3  # healthy tissue did contract

    def test_uniform_ca_matches_scalar_ode_oracle(self, slab):
        params = activation.ActivationParams(epsilon=0.0)
        imap = geometry.healthy_map(slab)
        solver = activation.ActivationSolver(slab, imap, params)
        dt = solver.dt
        gamma_ref = 0.0
        for k in range(4000):  # 0.2 s
            ca = float(ca_transient(k * dt))
            solver.step(np.full(slab.n_nodes, ca))
            gamma_ref = activation.local_ode_step(gamma_ref, ca, 1.0, 1.0, params, dt)
        assert np.max(np.abs(solver.gamma - gamma_ref)) < 1e-6

    def test_clamp_event_logged(self, slab):
        solver = activation.ActivationSolver(slab, geometry.healthy_map(slab))
        solver.step(np.full(slab.n_nodes, 0.01))
        assert solver.clamp_events > 0


class TestEtaEffects:
    def run_twitch(self, slab, eta_value, duration=0.5):
        imap = geometry.healthy_map(slab)
        imap.eta[:] = eta_value
        solver = activation.ActivationSolver(slab, imap)
        peak = 0.0
        n = int(duration / solver.dt)
        for k in range(n):
            ca = float(ca_transient(k * solver.dt))
            solver.step(np.full(slab.n_nodes, ca))
            peak = min(peak, solver.gamma.min())
        return peak

    def test_grey_zone_weaker_peak_for_same_drive(self, slab):
        peak_healthy = self.run_twitch(slab, 1.0)
        peak_grey = self.run_twitch(slab, 0.1)
        assert peak_healthy < -0.05
        assert abs(peak_grey) < abs(peak_healthy)

    def test_diffusion_does_not_create_extrema(self, slab):
        params0 = activation.ActivationParams(epsilon=0.0)
        params1 = activation.ActivationParams(epsilon=1e-7)
        imap = geometry.healthy_map(slab)
        s0 = activation.ActivationSolver(slab, imap, params0)
        s1 = activation.ActivationSolver(slab, imap, params1)
        rng = np.random.default_rng(3)
        bump = np.exp(-np.sum((slab.nodes - [0.003, 0.003, 0.001]) ** 2, axis=1) / 2e-6)
        for k in range(2000):
            ca = 0.126 + bump * (0.9 - 0.126) * min(1.0, k * 5e-5 / 0.05)
            s0.step(ca)
            s1.step(ca)
        assert np.max(np.abs(s1.gamma)) <= np.max(np.abs(s0.gamma)) + 1e-12


class TestActiveDeformation:
    def frame(self, n):
        rng = np.random.default_rng(11)
        f = rng.normal(size=(n, 3))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        tmp = rng.normal(size=(n, 3))
        s = tmp - np.sum(tmp * f, axis=1, keepdims=True) * f
        s /= np.linalg.norm(s, axis=1, keepdims=True)
        nn = np.cross(f, s)
        return fibers.Microstructure(f0=f, s0=s, n0=nn)

    def test_zero_shortening_is_identity(self):
        micro = self.frame(4)
        params = activation.ActivationParams()
        F = activation.assemble_active_deformation(
            np.zeros(4), np.full(4, 0.3), micro, params)
        assert np.allclose(F, np.eye(3), atol=1e-14)

    def test_endpoint_value_and_det(self):
        micro = self.frame(1)
        params = activation.ActivationParams()
        lam = np.array([params.lam_endo])
        gf = np.array([-0.2])
        gn = activation.gamma_n_of(gf, lam, params)
        expected = params.kbar_prime * params.kbar_endo * (1.0 / np.sqrt(0.8) - 1.0)
        assert gn[0] == pytest.approx(expected, abs=1e-14)
        F = activation.assemble_active_deformation(gf, lam, micro, params)
        assert abs(np.linalg.det(F[0]) - 1.0) < 1e-12

    def test_det_one_property_10k_samples(self):
        rng = np.random.default_rng(2024)
        n = 10_000
        micro = self.frame(n)
        params = activation.ActivationParams()
        gf = rng.uniform(-0.3, 0.1, size=n)
        lam = rng.uniform(0.0, 1.0, size=n)
        F = activation.assemble_active_deformation(gf, lam, micro, params)
        dets = np.linalg.det(F)
        assert np.max(np.abs(dets - 1.0)) < 1e-12

    def test_eigenvalue_structure(self):
        rng = np.random.default_rng(5)
        micro = self.frame(64)
        params = activation.ActivationParams()
        gf = rng.uniform(-0.3, 0.1, size=64)
        lam = rng.uniform(0.0, 1.0, size=64)
        gn = activation.gamma_n_of(gf, lam, params)
        gs = 1.0 / ((1.0 + gf) * (1.0 + gn)) - 1.0
        F = activation.assemble_active_deformation(gf, lam, micro, params)
        for i in range(64):
            eig = np.sort(np.linalg.eigvals(F[i]).real)
            expect = np.sort([1.0 + gf[i], 1.0 + gs[i], 1.0 + gn[i]])
            assert np.allclose(eig, expect, atol=1e-10)

    def test_kinematic_singularity_raises(self):
        micro = self.frame(1)
        params = activation.ActivationParams()
        with pytest.raises(activation.KinematicSingularity):
            activation.assemble_active_deformation(
                np.array([-1.0]), np.array([0.5]), micro, params)
