import numpy as np
import pytest

from cardioem import fibers, geometry, vtkio


@pytest.fixture(scope="module")
def slab():
    return geometry.build_slab(0.01, 0.01, 0.004, 0.001)


@pytest.fixture(scope="module")
def slab_tc(slab):
    return geometry.compute_transmural_coordinate(slab, 0.0, 1.0)


def test_zero_angles_give_circumferential_fibers(slab, slab_tc):
    micro = fibers.generate_fibers(slab, slab_tc, 0.0, 0.0, 0.0, 0.0)
    assert np.allclose(micro.f0, [1.0, 0.0, 0.0], atol=1e-9)
    assert np.allclose(micro.s0, [0.0, 0.0, 1.0], atol=1e-9)
    assert np.allclose(micro.n0, [0.0, -1.0, 0.0], atol=1e-9)


def test_midwall_angle_is_zero(slab, slab_tc):
    micro = fibers.generate_fibers(slab, slab_tc, 60.0, -60.0, 0.0, 0.0)
    mid = np.isclose(slab_tc.lam, 0.5, atol=1e-9)
    ang = np.degrees(np.arccos(np.clip(micro.f0[mid, 0], -1, 1)))
    assert np.all(np.abs(ang) < 0.5)


def test_paper_angles_linear_profile(slab, slab_tc):
    micro = fibers.generate_fibers(slab, slab_tc, 60.0, -60.0, -20.0, 20.0)
    # recover the helix angle from the projection on the (x, y) plane
    ang = np.degrees(np.arctan2(micro.f0[:, 1], micro.f0[:, 0]))
    expected = 60.0 - 120.0 * slab_tc.lam
    assert np.all(np.abs(ang - expected) < 1.0)


def test_orthonormal_invariants_random_meshes(slab, slab_tc):
    rng = np.random.default_rng(42)
    for _ in range(5):
        a_en, a_ep = rng.uniform(-80, 80, size=2)
        b_en, b_ep = rng.uniform(-30, 30, size=2)
        micro = fibers.generate_fibers(slab, slab_tc, a_en, a_ep, b_en, b_ep)
        micro.check_invariants()


def test_alpha_monotone_in_lambda(slab, slab_tc):
    micro = fibers.generate_fibers(slab, slab_tc, 60.0, -60.0, 0.0, 0.0)
    ang = np.degrees(np.arctan2(micro.f0[:, 1], micro.f0[:, 0]))
    order = np.argsort(slab_tc.lam, kind="stable")
    lam_sorted = slab_tc.lam[order]
    ang_sorted = ang[order]
    # strictly decreasing in lambda when alpha_endo > alpha_epi
    for lo, hi in [(0.0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0)]:
        m_lo = np.isclose(lam_sorted, lo)
        m_hi = np.isclose(lam_sorted, hi)
        assert ang_sorted[m_hi].mean() < ang_sorted[m_lo].mean()


def test_ellipsoid_frames_and_export(tmp_path):
    lv = geometry.build_ellipsoid_lv(0.02, 0.06, 0.008, 0.0, 0.004)
    tc = geometry.compute_transmural_coordinate(lv, 0.0, 1.0)
    micro = fibers.generate_fibers(lv, tc, 60.0, -60.0, -20.0, 20.0)
    micro.check_invariants()
    assert micro.fallback_nodes <= fibers.FALLBACK_LIMIT * lv.n_nodes
    path = tmp_path / "fibres.vtk"
    vtkio.write_vtk(path, lv, {"f0": micro.f0, "s0": micro.s0, "n0": micro.n0, "lambda": tc.lam})
    mesh2, data = vtkio.mesh_from_vtk(path)
    assert np.allclose(mesh2.nodes, lv.nodes)
    assert np.allclose(data["f0"], micro.f0)
    mesh2.check_invariants()
    for tag in ("endo", "epi", "base"):
        a = {tuple(sorted(f)) for f in lv.facets(tag)}
        b = {tuple(sorted(f)) for f in mesh2.facets(tag)}
        assert a == b
