import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binrec.mesh import build_interval_mesh, build_square_mesh, cells_for_target_h


class TestIntervalMesh:
    def test_smallest_mesh(self):
        m = build_interval_mesh(1)
        assert m.n_nodes == 2
        assert m.n_elements == 1
        np.testing.assert_array_equal(m.nodes[:, 0], [0.0, 1.0])
        assert m.h == 1.0

    def test_uniform_spacing(self):
        m = build_interval_mesh(4)
        np.testing.assert_allclose(m.nodes[:, 0], [0.0, 0.25, 0.5, 0.75, 1.0])
        assert m.h == 0.25

    def test_paper_scale_grid(self):
        # ~6000 cells gives the 1.67e-4 grid width used by the 1D studies
        m = build_interval_mesh(6038)
        assert m.h == pytest.approx(1.656e-4, rel=1e-3)

    def test_zero_cells_rejected(self):
        with pytest.raises(ValueError):
            build_interval_mesh(0)

    @given(st.integers(min_value=1, max_value=300))
    @settings(max_examples=30, deadline=None)
    def test_invariants(self, n):
        m = build_interval_mesh(n)
        assert m.n_nodes == n + 1
        assert m.n_elements == n
        measures = m.element_measures()
        assert np.all(measures > 0)
        assert abs(measures.sum() - 1.0) < 1e-12
        # elements partition [0,1] without overlap
        lefts = m.nodes[m.elements[:, 0], 0]
        rights = m.nodes[m.elements[:, 1], 0]
        assert np.all(rights > lefts)
        np.testing.assert_array_equal(np.sort(lefts), lefts)
        np.testing.assert_allclose(rights[:-1], lefts[1:])
        # every node belongs to at least one element
        assert set(m.elements.ravel()) == set(range(m.n_nodes))

    def test_refinement_halves_h(self):
        for n in (3, 10, 17):
            assert build_interval_mesh(2 * n).h == pytest.approx(
                build_interval_mesh(n).h / 2
            )


class TestSquareMesh:
    def test_unit_square(self):
        m = build_square_mesh(1)
        assert m.n_nodes == 4
        assert m.n_elements == 2
        assert abs(m.element_measures().sum() - 1.0) < 1e-12

    def test_uniform_refinement(self):
        m = build_square_mesh(2)
        assert m.n_nodes == 9
        assert m.n_elements == 8
        np.testing.assert_allclose(m.element_measures(), 0.125)

    def test_paper_scale_grid(self):
        m = build_square_mesh(410)
        assert m.h == pytest.approx(0.00345, rel=1e-2)

    def test_zero_cells_rejected(self):
        with pytest.raises(ValueError):
            build_square_mesh(0)

    @given(st.integers(min_value=1, max_value=24))
    @settings(max_examples=20, deadline=None)
    def test_invariants(self, n):
        m = build_square_mesh(n)
        assert m.n_nodes == (n + 1) ** 2
        assert m.n_elements == 2 * n * n
        measures = m.element_measures()
        assert np.all(measures > 0)
        assert abs(measures.sum() - 1.0) < 1e-12
        assert m.h == pytest.approx(np.sqrt(2.0) / n)
        assert set(m.elements.ravel()) == set(range(m.n_nodes))

    def test_triangles_tile_without_overlap(self):
        # pairwise-disjoint interiors on a small mesh: sample points
        # uniformly and check each lands in exactly one triangle
        m = build_square_mesh(3)
        rng = np.random.default_rng(0)
        pts = rng.uniform(0.02, 0.98, size=(200, 2))
        verts = m.nodes[m.elements]
        v0, v1, v2 = verts[:, 0], verts[:, 1], verts[:, 2]
        counts = np.zeros(len(pts), dtype=int)
        for i, p in enumerate(pts):
            d = p - v0
            e1 = v1 - v0
            e2 = v2 - v0
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            s = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
            t = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
            inside = (s > 1e-12) & (t > 1e-12) & (s + t < 1 - 1e-12)
            counts[i] = np.count_nonzero(inside)
        assert np.all(counts <= 1)


class TestCellsForTargetH:
    def test_conservative_rounding(self):
        n = cells_for_target_h(0.3, 1)
        assert n == 4
        assert 1.0 / n <= 0.3

    def test_2d_accounts_for_diagonal(self):
        n = cells_for_target_h(0.00345, 2)
        assert np.sqrt(2.0) / n <= 0.00345

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            cells_for_target_h(0.0, 1)
        with pytest.raises(ValueError):
            cells_for_target_h(0.1, 3)

    def test_mesh_is_immutable(self):
        m = build_interval_mesh(4)
        with pytest.raises(ValueError):
            m.nodes[0] = 5.0
