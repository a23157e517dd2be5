import numpy as np
import pytest

from traction_split.mesh import build_rect_mesh, mesh_size, write_mesh_text


def test_single_cell_counts():
    mesh = build_rect_mesh(1, 1)
    assert mesh.n_triangles == 2
    assert mesh.n_vertices == 4
    assert len(mesh.boundary_facets) == 4


def test_two_by_two_counts():
    mesh = build_rect_mesh(2, 2)
    assert mesh.n_triangles == 8
    assert mesh.n_vertices == 9
    assert len(mesh.boundary_facets) == 8


def test_mesh_sizes_unit_square():
    assert mesh_size(build_rect_mesh(1, 1)) == pytest.approx((np.sqrt(2.0), 1.0))
    h_max, h_min = mesh_size(build_rect_mesh(64, 64))
    assert h_min == pytest.approx(0.015625, abs=1e-15)
    assert h_max == pytest.approx(np.sqrt(2.0) / 64.0)


def test_mesh_sizes_rectangle():
    mesh = build_rect_mesh(22, 4, extent=(2.2, 0.41))
    _, h_min = mesh_size(mesh)
    assert h_min == pytest.approx(0.1, rel=1e-12)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        build_rect_mesh(0, 4)
    with pytest.raises(ValueError):
        build_rect_mesh(4, -1)
    with pytest.raises(ValueError):
        build_rect_mesh(2, 2, extent=(1.0, 0.0))


@pytest.mark.parametrize("nx,ny,extent", [(1, 1, (1.0, 1.0)), (5, 3, (2.0, 0.5))])
def test_positive_areas_and_total_area(nx, ny, extent):
    mesh = build_rect_mesh(nx, ny, extent)
    areas = mesh.triangle_areas()
    assert np.all(areas > 0.0)
    assert np.sum(areas) == pytest.approx(extent[0] * extent[1], rel=1e-12)


def test_edge_incidence_counts():
    mesh = build_rect_mesh(3, 2)
    counts = np.zeros(mesh.n_edges, dtype=int)
    for es in mesh.tri_to_edge:
        counts[es] += 1
    boundary = mesh.boundary_edge_mask()
    assert np.all(counts[boundary] == 1)
    assert np.all(counts[~boundary] == 2)


def test_facet_geometry_invariants():
    mesh = build_rect_mesh(4, 3, extent=(2.0, 1.5))
    lx, ly = mesh.extent
    tags = set()
    for facet in mesh.boundary_facets:
        n, t = facet.outward_normal, facet.tangent
        assert abs(n @ t) <= 1e-14
        assert abs(np.hypot(*n) - 1.0) <= 1e-14
        assert abs(np.hypot(*t) - 1.0) <= 1e-14
        # tangent is the outward normal rotated by +90 degrees
        assert np.allclose(t, [-n[1], n[0]], atol=1e-14)
        # midpoint displaced along +-n leaves/stays in the rectangle
        mid = 0.5 * (mesh.vertices[facet.edge[0]] + mesh.vertices[facet.edge[1]])
        eps = 1e-6 * mesh.h_min
        outside = mid + eps * n
        inside = mid - eps * n
        assert not (0.0 < outside[0] < lx and 0.0 < outside[1] < ly) or (
            outside[0] <= 0.0 or outside[0] >= lx or outside[1] <= 0.0 or outside[1] >= ly
        )
        assert 0.0 < inside[0] < lx and 0.0 < inside[1] < ly
        tags.add(facet.tag)
    assert tags == {"left", "right", "bottom", "top"}


def test_normals_point_out_of_owning_triangle():
    mesh = build_rect_mesh(3, 3)
    for facet in mesh.boundary_facets:
        tri = mesh.triangles[facet.owning_triangle]
        centroid = mesh.vertices[tri].mean(axis=0)
        mid = 0.5 * (mesh.vertices[facet.edge[0]] + mesh.vertices[facet.edge[1]])
        assert (mid - centroid) @ facet.outward_normal > 0.0


def test_tag_coverage_lengths():
    mesh = build_rect_mesh(5, 2, extent=(2.5, 1.0))
    length = {tag: 0.0 for tag in ("left", "right", "bottom", "top")}
    for facet in mesh.boundary_facets:
        a, b = mesh.vertices[facet.edge[0]], mesh.vertices[facet.edge[1]]
        length[facet.tag] += float(np.hypot(*(b - a)))
    assert length["left"] == pytest.approx(1.0)
    assert length["right"] == pytest.approx(1.0)
    assert length["bottom"] == pytest.approx(2.5)
    assert length["top"] == pytest.approx(2.5)


def test_mesh_text_dump(tmp_path):
    mesh = build_rect_mesh(2, 1)
    path = tmp_path / "mesh.txt"
    write_mesh_text(mesh, path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"# vertices {mesh.n_vertices}"
    body = [ln for ln in lines if not ln.startswith("#")]
    assert len(body) == mesh.n_vertices + mesh.n_triangles + len(mesh.boundary_facets)
    facet_lines = body[mesh.n_vertices + mesh.n_triangles :]
    assert all(ln.split()[2] in ("left", "right", "bottom", "top") for ln in facet_lines)
