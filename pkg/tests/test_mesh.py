"""Mesh construction, refinement and hanging-face bookkeeping.

Oracles: a uniform n x m tensor grid has (n+1)(m+1) vertices and n*m cells;
one uniform refinement quadruples the active cells; a slit on a k-cell line
duplicates exactly the vertices strictly left of the tip.
"""
import numpy as np
import pytest

from fracmix.mesh import Box, build_rectangle, refine_cells, refine_region, refine_uniform


class TestBuildRectangle:
    def test_counts(self):
        mesh = build_rectangle((0.0, 0.0), (1.0, 1.0), (3, 2))
        assert mesh.n_vertices == 4 * 3
        assert mesh.n_active == 6
        assert mesh.cells.shape == (6, 4)

    def test_vertex_extent(self):
        mesh = build_rectangle((-10.0, -10.0), (10.0, 10.0), (10, 10))
        box = mesh.bounding_box()
        assert (box.xmin, box.xmax, box.ymin, box.ymax) == (-10.0, 10.0, -10.0, 10.0)

    def test_counterclockwise_cells(self):
        mesh = build_rectangle((0.0, 0.0), (2.0, 1.0), (2, 1))
        for quad in mesh.cells:
            v = mesh.vertices[quad]
            area = 0.0
            for k in range(4):
                a, b = v[k], v[(k + 1) % 4]
                area += a[0] * b[1] - b[0] * a[1]
            assert area > 0.0

    def test_invalid_subdivisions(self):
        with pytest.raises(ValueError):
            build_rectangle((0.0, 0.0), (1.0, 1.0), (0, 2))

    def test_cell_geometry(self):
        mesh = build_rectangle((0.0, 0.0), (4.0, 2.0), (4, 2))
        assert mesh.cell_diameters().max() == pytest.approx(np.hypot(1.0, 1.0))
        centers = mesh.cell_centers()
        assert centers.shape == (8, 2)
        assert centers[:, 0].min() == pytest.approx(0.5)


class TestSlit:
    def test_doubled_vertices(self):
        # grid vertices on y=2 with x in [0,2) are 0, 0.5, 1, 1.5 -> 4 twins
        base = build_rectangle((0.0, 0.0), (4.0, 4.0), (8, 8))
        slit = build_rectangle((0.0, 0.0), (4.0, 4.0), (8, 8), slit=(0.0, 2.0, 2.0))
        assert slit.n_vertices == base.n_vertices + 4

    def test_tip_shared(self):
        mesh = build_rectangle((0.0, 0.0), (4.0, 4.0), (8, 8), slit=(0.0, 2.0, 2.0))
        at_tip = np.flatnonzero((np.abs(mesh.vertices[:, 0] - 2.0) < 1e-12)
                                & (np.abs(mesh.vertices[:, 1] - 2.0) < 1e-12))
        assert len(at_tip) == 1

    def test_lips_disconnected(self):
        """Cells below the slit must not share slit vertices with cells above."""
        mesh = build_rectangle((0.0, 0.0), (4.0, 4.0), (8, 8), slit=(0.0, 2.0, 2.0))
        on_line = lambda vid: abs(mesh.vertices[vid, 1] - 2.0) < 1e-12 \
            and mesh.vertices[vid, 0] < 2.0 - 1e-12
        upper, lower = set(), set()
        for cell, quad in enumerate(mesh.cells):
            cy = mesh.vertices[quad, 1].mean()
            for vid in quad:
                if on_line(vid):
                    (upper if cy > 2.0 else lower).add(int(vid))
        assert upper and lower and not (upper & lower)

    def test_survives_uniform_refinement(self):
        mesh = refine_uniform(
            build_rectangle((0.0, 0.0), (4.0, 4.0), (8, 8), slit=(0.0, 2.0, 2.0)), 1)
        xs = mesh.vertices[np.abs(mesh.vertices[:, 1] - 2.0) < 1e-12, 0]
        xs_left = np.sort(xs[xs < 2.0 - 1e-12])
        # every refined grid point left of the tip appears twice
        assert len(xs_left) == 2 * 8
        np.testing.assert_allclose(xs_left[0::2], xs_left[1::2])


class TestRefinement:
    def test_uniform_quadruples(self):
        mesh = refine_uniform(build_rectangle((0.0, 0.0), (1.0, 1.0), (2, 2)), 1)
        assert mesh.n_active == 16
        assert refine_uniform(mesh, 1).n_active == 64

    def test_refine_single_cell_creates_hanging_faces(self):
        mesh = refine_cells(build_rectangle((0.0, 0.0), (2.0, 1.0), (2, 1)), [0])
        assert mesh.n_active == 5
        faces = mesh.hanging_faces()
        assert len(faces) == 1
        assert len(mesh.hanging_vertices()) == 1

    def test_one_irregularity_enforced(self):
        """Refining twice on one side forces closure refinement of the neighbor."""
        mesh = build_rectangle((0.0, 0.0), (2.0, 1.0), (2, 1))
        mesh = refine_cells(mesh, [0])
        left_children = [c for c in mesh.active_cells() if mesh.level[c] == 1]
        mesh = refine_cells(mesh, left_children[:1])
        assert mesh.check_one_irregular()

    def test_region_refinement(self):
        mesh = refine_region(build_rectangle((-2.0, -2.0), (2.0, 2.0), (4, 4)),
                             Box(-0.5, 0.5, -0.5, 0.5))
        assert mesh.check_one_irregular()
        diam = mesh.cell_diameters()
        assert diam.min() == pytest.approx(diam.max() / 2.0)

    def test_levels_tracked(self):
        mesh = refine_uniform(build_rectangle((0.0, 0.0), (1.0, 1.0), (1, 1)), 3)
        assert mesh.level[mesh.active_cells()].max() == 3

    def test_parent_chain(self):
        mesh = refine_cells(build_rectangle((0.0, 0.0), (1.0, 1.0), (1, 1)), [0])
        for child in mesh.active_cells():
            assert mesh.parent[child] == 0
