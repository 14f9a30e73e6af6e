import numpy as np
import pytest

from cardioem import fem, geometry


class TestSlab:
    def test_element_and_node_counts(self):
        mesh = geometry.build_slab(0.02, 0.02, 0.004, 0.001)
        assert mesh.n_elems == 20 * 20 * 4
        assert mesh.n_nodes == 21 * 21 * 5

    def test_single_element(self):
        mesh = geometry.build_slab(0.01, 0.01, 0.01, 0.01)
        assert mesh.n_elems == 1
        assert mesh.n_nodes == 8

    def test_total_volume_exact(self):
        mesh = geometry.build_slab(0.02, 0.015, 0.004, 0.001)
        assert mesh.volume() == pytest.approx(0.02 * 0.015 * 0.004, rel=1e-12)

    def test_tags(self):
        mesh = geometry.build_slab(0.01, 0.01, 0.005, 0.0025)
        endo = mesh.facet_node_set("endo")
        epi = mesh.facet_node_set("epi")
        assert np.allclose(mesh.nodes[endo][:, 2], 0.0)
        assert np.allclose(mesh.nodes[epi][:, 2], 0.005)
        mesh.check_invariants()

    def test_positive_jacobians(self):
        mesh = geometry.build_slab(0.02, 0.01, 0.004, 0.002)
        dets = fem.jacobian_dets_at_vertices(mesh.element_coords())
        assert np.all(dets > 0)


@pytest.fixture(scope="module")
def lv():
    return geometry.build_ellipsoid_lv(0.02, 0.06, 0.008, 0.0, 0.0015)


@pytest.fixture(scope="module")
def slab():
    return geometry.build_slab(0.02, 0.02, 0.004, 0.001)


class TestEllipsoidLV:
    def test_h_mean_near_target(self, lv):
        assert 0.7 * 0.0015 <= lv.h_mean <= 1.3 * 0.0015

    def test_invariants(self, lv):
        lv.check_invariants()
        dets = fem.jacobian_dets_at_vertices(lv.element_coords())
        assert np.all(dets > 0)

    def test_surfaces_lie_on_ellipsoids(self, lv):
        a, c = 0.02, 0.06
        endo = lv.nodes[lv.facet_node_set("endo")]
        r = (endo[:, 0] / a) ** 2 + (endo[:, 1] / a) ** 2 + (endo[:, 2] / c) ** 2
        assert np.allclose(r, 1.0, atol=1e-9)
        a2, c2 = 0.028, 0.068
        epi = lv.nodes[lv.facet_node_set("epi")]
        r2 = (epi[:, 0] / a2) ** 2 + (epi[:, 1] / a2) ** 2 + (epi[:, 2] / c2) ** 2
        assert np.allclose(r2, 1.0, atol=1e-9)
        base = lv.nodes[lv.facet_node_set("base")]
        assert np.allclose(base[:, 2], 0.0, atol=1e-12)

    def test_refinement_scaling(self):
        coarse = geometry.build_ellipsoid_lv(0.02, 0.06, 0.008, 0.0, 0.003)
        fine = geometry.build_ellipsoid_lv(0.02, 0.06, 0.008, 0.0, 0.0015)
        ratio = fine.n_elems / coarse.n_elems
        assert 0.8 * 8 <= ratio <= 1.2 * 8

    def test_degenerate_rejected(self):
        with pytest.raises(geometry.GeometryError):
            geometry.build_ellipsoid_lv(0.02, 0.06, 0.07, 0.0, 0.0015)
        with pytest.raises(geometry.GeometryError):
            geometry.build_ellipsoid_lv(-0.02, 0.06, 0.008, 0.0, 0.0015)

    def test_wall_volume_close_to_analytic(self, lv):
        outer = geometry.analytic_cavity_volume(0.028, 0.068, 0.0)
        inner = geometry.analytic_cavity_volume(0.02, 0.06, 0.0)
        assert lv.volume() == pytest.approx(outer - inner, rel=0.02)


class TestIschemia:
    def test_empty_spec_all_healthy(self, slab):
        m = geometry.synthesize_ischemia(slab, [])
        assert np.all(m.eta == 1.0)
        assert not m.excluded_elements.any()

    def test_full_scar(self, slab):
        m = geometry.synthesize_ischemia(slab, [((0.01, 0.01, 0.002), 1.0, "scar")])
        assert np.all(m.eta == 0.0)
        assert m.excluded_elements.all()

    def test_concentric_rings_match_bruteforce(self, slab):
        center = (0.01, 0.01, 0.002)
        m = geometry.synthesize_ischemia(
            slab, [(center, 0.003, "scar"), (center, 0.006, "grey")]
        )
        d = np.linalg.norm(slab.nodes - np.asarray(center), axis=1)
        scar_ref = d <= 0.003
        grey_ref = (d <= 0.006) & ~scar_ref
        assert np.array_equal(m.labels == geometry.LABEL_SCAR, scar_ref)
        assert np.array_equal(m.labels == geometry.LABEL_GREY, grey_ref)
        assert set(np.unique(m.eta)) <= {0.0, 0.1, 1.0}

    def test_scar_precedence_on_overlap(self, slab):
        m = geometry.synthesize_ischemia(
            slab,
            [((0.01, 0.01, 0.002), 0.004, "grey"), ((0.01, 0.01, 0.002), 0.004, "scar")],
        )
        inside = np.linalg.norm(slab.nodes - np.array([0.01, 0.01, 0.002]), axis=1) <= 0.004
        assert np.all(m.labels[inside] == geometry.LABEL_SCAR)

    def test_outside_sphere_warns(self, slab):
        with pytest.warns(UserWarning):
            m = geometry.synthesize_ischemia(slab, [((1.0, 1.0, 1.0), 0.001, "scar")])
        assert np.all(m.eta == 1.0)


class TestTransmural:
    def test_slab_linear_profile(self):
        mesh = geometry.build_slab(0.01, 0.01, 0.004, 0.001)
        tc = geometry.compute_transmural_coordinate(mesh, 0.0, 1.0)
        assert np.allclose(tc.lam, mesh.nodes[:, 2] / 0.004, atol=1e-10)

    def test_constant_data(self):
        mesh = geometry.build_slab(0.01, 0.01, 0.004, 0.002)
        tc = geometry.compute_transmural_coordinate(mesh, 0.5, 0.5)
        assert np.allclose(tc.lam, 0.5, atol=1e-12)

    def test_ellipsoid_maximum_principle(self):
        lv = geometry.build_ellipsoid_lv(0.02, 0.06, 0.008, 0.0, 0.003)
        tc = geometry.compute_transmural_coordinate(lv, 0.0, 1.0)
        endo = lv.facet_node_set("endo")
        epi = lv.facet_node_set("epi")
        assert np.allclose(tc.lam[endo], 0.0, atol=1e-12)
        assert np.allclose(tc.lam[epi], 1.0, atol=1e-12)
        interior = np.setdiff1d(np.arange(lv.n_nodes), np.concatenate([endo, epi]))
        assert np.all(tc.lam[interior] > 0.0)
        assert np.all(tc.lam[interior] < 1.0)

    def test_missing_tags_raise(self):
        mesh = geometry.build_slab(0.01, 0.01, 0.004, 0.002)
        with pytest.raises(geometry.GeometryError):
            geometry.solve_laplace(mesh, [(np.array([], dtype=int), 0.0)])
