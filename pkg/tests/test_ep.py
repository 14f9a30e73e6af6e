import numpy as np
import pytest

from cardioem import ep, fem, fibers, geometry
from cardioem.ionic import ttp06


def make_cable(length=0.008, h=2e-4, transverse=False, sigma_scale=1.0):
    cs = 2 * h
    bar = geometry.build_slab(length, cs, cs, h)
    tc = geometry.compute_transmural_coordinate(bar, 0, 1)
    micro = fibers.generate_fibers(bar, tc, 0.0, 0.0, 0.0, 0.0)
    if transverse:
        # propagate across the fibers: swap the fiber out of the cable axis
        micro.f0, micro.n0 = -micro.n0, micro.f0.copy()
    params = ep.DiffusionTensorParams(
        0.6714e-4 * sigma_scale, 0.0746e-4 * sigma_scale, 0.0746e-4 * sigma_scale
    )
    solver = ep.EpSolver(bar, micro, geometry.healthy_map(bar), params)
    stim = ep.Stimulus(0.0, (0.0, cs / 2, cs / 2), duration=2e-3,
                       half_width=8e-4, amplitude=35.0)
    return bar, solver, stim


def measure_cv(length, h, transverse=False, sigma_scale=1.0):
    bar, solver, stim = make_cable(length, h, transverse, sigma_scale)
    cv_guess = (0.25 if transverse else 0.7) * np.sqrt(sigma_scale)
    res = solver.run_protocol([stim], length / cv_guess * 1.6 + 0.005)
    band = (bar.nodes[:, 0] > 0.3 * length) & (bar.nodes[:, 0] < 0.85 * length)
    return ep.conduction_velocity(bar.nodes, res.activation_times, [1, 0, 0], band)


class TestAssembly:
    def test_rowsums_and_symmetry(self):
        slab = geometry.build_slab(0.004, 0.004, 0.002, 0.001)
        tc = geometry.compute_transmural_coordinate(slab, 0, 1)
        micro = fibers.generate_fibers(slab, tc, 0.0, 0.0, 0.0, 0.0)
        K = ep.assemble_diffusion(slab, micro, geometry.healthy_map(slab),
                                  ep.DiffusionTensorParams())
        ones = np.ones(slab.n_nodes)
        assert np.max(np.abs(K @ ones)) < 1e-12
        assert (K - K.T).nnz == 0 or np.max(np.abs((K - K.T).data)) == 0.0

    def test_all_scar_gives_masked_zero_operator(self):
        slab = geometry.build_slab(0.004, 0.004, 0.002, 0.001)
        tc = geometry.compute_transmural_coordinate(slab, 0, 1)
        micro = fibers.generate_fibers(slab, tc, 0.0, 0.0, 0.0, 0.0)
        imap = geometry.synthesize_ischemia(slab, [((0.002, 0.002, 0.001), 1.0, "scar")])
        K = ep.assemble_diffusion(slab, micro, imap, ep.DiffusionTensorParams())
        assert K.nnz == 0 or np.max(np.abs(K.data)) == 0.0
        assert imap.excluded_elements.all()

    def test_single_element_matches_dense_quadrature_oracle(self):
        rng = np.random.default_rng(7)
        mesh = geometry.build_slab(0.01, 0.01, 0.01, 0.01)
        mesh.nodes = mesh.nodes + rng.normal(scale=5e-4, size=mesh.nodes.shape)
        A = rng.normal(size=(3, 3))
        D = A @ A.T + 3.0 * np.eye(3) * np.abs(A).max() ** 2  # SPD
        F = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
        if np.linalg.det(F) <= 0:
            F = -F
        D_qp = np.broadcast_to(
            ep.pullback_tensor(np.broadcast_to(D, (1, 8, 3, 3)),
                               np.broadcast_to(F, (1, 8, 3, 3))), (1, 8, 3, 3)
        )
        conn = mesh.elems[0]
        K = ep.assemble_scalar_stiffness(mesh, np.ascontiguousarray(D_qp)).toarray()
        K = K[np.ix_(conn, conn)]  # reorder to local element numbering

        # brute-force oracle: loop quadrature points and shape gradients
        Dp = np.linalg.det(F) * np.linalg.inv(F) @ D @ np.linalg.inv(F).T
        qp, qw = fem.gauss_points()
        K_ref = np.zeros((8, 8))
        coords = mesh.nodes[mesh.elems[0]]
        for q, w in zip(qp, qw):
            dn = fem.shape_gradients(q[None, :])[0]  # (8,3)
            J = dn.T @ coords
            detJ = np.linalg.det(J)
            g = dn @ np.linalg.inv(J)
            for a in range(8):
                for b in range(8):
                    K_ref[a, b] += w * detJ * g[a] @ Dp @ g[b]
        assert np.max(np.abs(K - K_ref)) < 1e-12 * max(1.0, np.max(np.abs(K_ref)))

    def test_inverted_deformation_rejected(self):
        mesh = geometry.build_slab(0.01, 0.01, 0.01, 0.01)
        D = np.broadcast_to(np.eye(3), (1, 8, 3, 3))
        F = np.broadcast_to(-np.eye(3), (1, 8, 3, 3))
        with pytest.raises(ep.EpSolverError):
            ep.pullback_tensor(D, F)


class TestEquilibriumAndScar:
    def test_rest_preserved_without_stimulus(self):
        slab = geometry.build_slab(0.004, 0.004, 0.001, 0.001)
        tc = geometry.compute_transmural_coordinate(slab, 0, 1)
        micro = fibers.generate_fibers(slab, tc, 0.0, 0.0, 0.0, 0.0)
        solver = ep.EpSolver(slab, micro, geometry.healthy_map(slab),
                             initial_state=ttp06.QUIESCENT_STATE)
        u0 = solver.u.copy()
        for _ in range(2000):  # 0.1 s
            solver.step()
        assert np.max(np.abs(solver.u - u0)) < 1e-10

    def test_scar_nodes_bit_identical(self):
        bar, solver, stim = make_cable(0.006, 2.5e-4)
        imap = geometry.synthesize_ischemia(
            bar, [((0.005, 0.0, 0.0), 8e-4, "scar")])
        solver = ep.EpSolver(bar, solver.micro, imap)
        scar = imap.scar_nodes
        u_scar0 = solver.u[scar].copy()
        res = solver.run_protocol([stim], 0.03)
        assert np.array_equal(solver.u[scar], u_scar0)
        assert np.all(np.isnan(res.activation_times[scar]))


class TestActivationDetection:
    def test_step_trace(self):
        t = np.arange(0, 0.1, 5e-5)
        v = np.where(t >= 0.042, 16.0, -84.0)
        at = ep.detect_activation_times(t, v[:, None])
        assert abs(at[0] - 0.042) <= 5e-5

    def test_never_activated_sentinel(self):
        t = np.arange(0, 0.1, 1e-3)
        v = np.full_like(t, -84.0)
        at = ep.detect_activation_times(t, v[:, None])
        assert np.isnan(at[0])

    def test_planar_wave_affine_activation(self):
        cv, r2 = measure_cv(0.006, 2.5e-4)
        assert r2 > 0.999


class TestBcl:
    def synth_trace(self, periods, dt=5e-5):
        events = np.cumsum([0.05] + list(periods))
        t = np.arange(0, events[-1] + 0.2, dt)
        v = np.full_like(t, -80.0)
        for te in events:
            v[(t >= te) & (t < te + 0.02)] = 20.0
        return t, v

    def test_periodic_upstrokes(self):
        t, v = self.synth_trace([0.42] * 6)
        res = ep.detect_bcl(t, v)
        assert res.sustained
        assert abs(res.bcl_s - 0.42) <= 5e-5

    def test_constant_trace_no_reentry(self):
        t = np.arange(0, 2.0, 1e-3)
        res = ep.detect_bcl(t, np.full_like(t, -80.0))
        assert not res.sustained and res.bcl_s is None

    def test_jittered_median(self):
        t, v = self.synth_trace([0.40, 0.42, 0.44] * 3)
        res = ep.detect_bcl(t, v)
        assert abs(res.bcl_s - 0.42) <= 5e-5


class TestProtocol:
    def test_empty_protocol_logs_nothing(self):
        bar, solver, _ = make_cable(0.004, 5e-4)
        res = solver.run_protocol([], 0.002)
        assert res.events == []

    def test_capture_and_refractory(self):
        bar, solver, s1 = make_cable(0.006, 2.5e-4)
        s2_blocked = ep.Stimulus(0.15, s1.center, duration=2e-3,
                                 half_width=8e-4, amplitude=35.0)
        res = solver.run_protocol([s1, s2_blocked], 0.2)
        assert res.events[0].captured
        assert not res.events[1].captured

    def test_capture_after_recovery(self):
        bar, solver, s1 = make_cable(0.006, 2.5e-4)
        s2 = ep.Stimulus(0.5, s1.center, duration=2e-3, half_width=8e-4, amplitude=35.0)
        solver.reset_activation_map()
        res = solver.run_protocol([s1, s2], 0.55)
        assert res.events[1].captured

    def test_overlap_flag(self):
        bar, solver, s1 = make_cable(0.004, 5e-4)
        s2 = ep.Stimulus(s1.t_start + 0.001, s1.center, duration=2e-3,
                         half_width=8e-4, amplitude=0.0)
        res = solver.run_protocol([s1, s2], 0.004)
        assert res.events[0].overlapped and res.events[1].overlapped


class TestGeometricMef:
    def test_uniform_shortening_changes_cv(self):
        bar, solver, stim = make_cable(0.006, 2.5e-4)
        res_ref = solver.run_protocol([stim], 0.02)
        band = (bar.nodes[:, 0] > 0.0018) & (bar.nodes[:, 0] < 0.0051)
        cv_ref, _ = ep.conduction_velocity(bar.nodes, res_ref.activation_times,
                                           [1, 0, 0], band)

        bar2, solver2, stim2 = make_cable(0.006, 2.5e-4)
        Fdef = np.diag([0.85, 1.0 / np.sqrt(0.85), 1.0 / np.sqrt(0.85)])
        E, Q = bar2.n_elems, 8
        solver2.set_deformation(np.broadcast_to(Fdef, (E, Q, 3, 3)))
        res_def = solver2.run_protocol([stim2], 0.02)
        cv_def, _ = ep.conduction_velocity(bar2.nodes, res_def.activation_times,
                                           [1, 0, 0], band)
        assert abs(cv_def - cv_ref) / cv_ref > 0.02
