import math

import numpy as np
import pytest

from oracles import monte_carlo_bridge_water, monte_carlo_fractions
from twoscale.errors import MeshFailure, MissingInterface, RadiusOrdering, UnsupportedDim
from twoscale.unit_cell import (Interface, Phase, build_geometry, dump_mesh, interface_quadrature,
                                lump_quadrature, mesh_cell, phase_measures, uniform_mesh)


@pytest.fixture(scope="module")
def annulus():
    return build_geometry(r_solid=0.2, r_water=0.35)


@pytest.fixture(scope="module")
def annulus_mesh(annulus):
    return mesh_cell(annulus, 0.05)


def test_annulus_closed_form_areas(annulus):
    m = annulus.analytic_measures()
    assert m["vol_s"] == pytest.approx(math.pi * 0.04, rel=1e-14)
    assert m["vol_w"] == pytest.approx(math.pi * (0.35**2 - 0.2**2), rel=1e-14)


@pytest.mark.parametrize("rs, rw", [(0.4, 0.3), (0.0, 0.3), (0.2, 0.5), (0.3, 0.3)])
def test_radius_ordering(rs, rw):
    with pytest.raises(RadiusOrdering):
        build_geometry(r_solid=rs, r_water=rw)


def test_unsupported_dim():
    with pytest.raises(UnsupportedDim):
        build_geometry(dim=4)
    with pytest.raises(UnsupportedDim):
        mesh_cell(build_geometry(dim=3), 0.1)


def test_bridged_area_matches_monte_carlo():
    g = build_geometry(r_solid=0.2, r_water=0.35, variant="bridged_water", bridge_width=0.06)
    mc = monte_carlo_bridge_water(0.2, 0.35, 0.06, (0, 1))
    assert g.analytic_measures()["vol_w"] == pytest.approx(mc, abs=1e-3)
    assert monte_carlo_fractions(g)[Phase.WATER] == pytest.approx(mc, abs=1e-3)


def test_phase_of_partition(annulus):
    pts = np.random.default_rng(0).random((1000, 2))
    lab = annulus.phase_of(pts)
    assert set(np.unique(lab)) <= {0, 1, 2}
    assert annulus.phase_of([[0.5, 0.5]])[0] == Phase.SOLID
    assert annulus.phase_of([[0.5 + 0.3, 0.5]])[0] == Phase.WATER
    assert annulus.phase_of([[0.01, 0.01]])[0] == Phase.AIR


def test_mesh_volumes_match_analytic(annulus, annulus_mesh):
    m = phase_measures(annulus_mesh)
    exact = annulus.analytic_measures()
    for key in ("vol_s", "vol_w", "vol_a"):
        assert m.as_dict()[key] == pytest.approx(exact[key], rel=0.02)
    assert m.vol_s + m.vol_w + m.vol_a == pytest.approx(1.0, abs=1e-10)


def test_mesh_too_coarse(annulus):
    with pytest.raises(MeshFailure):
        mesh_cell(annulus, 0.5)
    with pytest.raises(MeshFailure):
        mesh_cell(annulus, 0.2)  # coarser than r_w - r_s


def test_refinement_reduces_volume_error(annulus):
    exact = annulus.analytic_measures()["vol_w"]
    errs = [abs(phase_measures(mesh_cell(annulus, h)).vol_w - exact) for h in (0.05, 0.025)]
    assert errs[1] < errs[0]


def test_mesh_invariants(annulus_mesh):
    assert np.all(annulus_mesh.volumes > 0)
    for master, slave, axis in annulus_mesh.periodic_pairs:
        d = annulus_mesh.nodes[slave] - annulus_mesh.nodes[master]
        assert abs(abs(d[axis]) - 1.0) < 1e-12 and abs(d[1 - axis]) < 1e-12
        assert annulus_mesh.partner(annulus_mesh.partner(master, axis), axis) == master
    on_face = np.isclose(annulus_mesh.nodes, 0.0) | np.isclose(annulus_mesh.nodes, 1.0)
    paired = set(annulus_mesh.periodic_pairs[:, :2].ravel())
    assert set(np.flatnonzero(on_face.any(axis=1))) <= paired


def test_every_simplex_in_one_phase(annulus, annulus_mesh):
    centroids = annulus_mesh.nodes[annulus_mesh.simplices].mean(axis=1)
    assert np.array_equal(annulus.phase_of(centroids), annulus_mesh.phase_label)


def test_interface_facets_separate_declared_phases(annulus_mesh):
    for which, pair in ((Interface.GAMMA_SW, {Phase.SOLID, Phase.WATER}),
                        (Interface.GAMMA_WA, {Phase.WATER, Phase.AIR})):
        edges, normals = annulus_mesh.interface_facets[which]
        mid = annulus_mesh.nodes[edges].mean(axis=1)
        h = 0.01  # beyond the chord sagitta, well inside the phase gaps
        inside = annulus_mesh.geometry.phase_of(mid - h * normals)
        outside = annulus_mesh.geometry.phase_of(mid + h * normals)
        assert np.all(inside == Phase.WATER)
        assert set(np.unique(outside)) == pair - {Phase.WATER}


@pytest.mark.parametrize("which, r", [(Interface.GAMMA_SW, 0.2), (Interface.GAMMA_WA, 0.35)])
def test_interface_measure_close_to_circle(annulus_mesh, which, r):
    q = interface_quadrature(annulus_mesh, which)
    assert q.measure == pytest.approx(2 * math.pi * r, rel=0.01)
    assert np.allclose(np.linalg.norm(q.normals, axis=1), 1.0, atol=1e-12)
    edges, _ = annulus_mesh.interface_facets[which]
    tangent = annulus_mesh.nodes[edges[:, 1]] - annulus_mesh.nodes[edges[:, 0]]
    assert np.max(np.abs(np.einsum("ij,ij->i", tangent, q.normals))) < 1e-12


def test_perimeter_error_shrinks_at_least_linearly(annulus):
    errs = [2 * math.pi * 0.2 - interface_quadrature(mesh_cell(annulus, h), "GammaSW").measure
            for h in (0.04, 0.02)]
    assert errs[0] > 0 and errs[1] > 0
    assert errs[1] / errs[0] <= 0.55


def test_missing_interface():
    with pytest.raises(MissingInterface):
        interface_quadrature(uniform_mesh(4), "GammaSW")


def test_lumped_quadrature_preserves_measure(annulus_mesh):
    q = interface_quadrature(annulus_mesh, "GammaSW")
    lq = lump_quadrature(q, 16)
    assert len(lq) == 16
    assert lq.measure == pytest.approx(q.measure, rel=1e-14)


def test_measures_agree_with_monte_carlo():
    g = build_geometry(r_solid=0.2, r_water=0.35, variant="bridged_water", bridge_width=0.1,
                       bridge_axes=(0,))
    m = phase_measures(mesh_cell(g, 0.02))
    mc = monte_carlo_fractions(g)
    assert [m.vol_s, m.vol_w, m.vol_a] == pytest.approx(mc, abs=1e-3)


def test_dump_mesh(tmp_path, annulus_mesh):
    path = tmp_path / "mesh.txt"
    dump_mesh(annulus_mesh, path)
    text = path.read_text()
    assert "NODES" in text and "SIMPLICES" in text
