"""Structured simplicial meshes of rectangular (2D) and box (3D) rooms.

The box is subdivided into ``n_a = ceil(L_a / h_target)`` cells per axis.
Square cells are split into 2 triangles along the (min corner, max corner)
diagonal; cubic cells are split into 6 tetrahedra sharing the main diagonal
(Kuhn split), which is conforming across cell faces.  Wall patches are
rectangular faces of the box, tagged through a :class:`PatchLayout`;
untagged boundary defaults to a sound-hard (Neumann) wall.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, OutOfDomainError

NEUMANN = "N"

_AXIS_NAMES = {"x": 0, "y": 1, "z": 2, "0": 0, "1": 1, "2": 2}

# Barycentric slack when deciding containment; reconstruction stays well
# below the 1e-12 contract because vertex coordinates are exact grid points.
_BARY_TOL = 5e-13


@dataclass(frozen=True)
class Patch:
    """One tagged rectangular wall patch: the boundary plane axis = value."""

    tag: str
    axis: int
    side: str  # "min" or "max"


@dataclass(frozen=True)
class PatchLayout:
    """Box extents plus the tagged impedance patches.

    Patch tags must be unique; their order fixes the ordering of impedance
    components everywhere else in the toolkit.
    """

    extents: tuple
    patches: tuple

    def __post_init__(self):
        ext = tuple(float(e) for e in self.extents)
        if len(ext) not in (2, 3) or any(e <= 0 for e in ext):
            raise InvalidArgumentError(f"extents must be 2 or 3 positive lengths, got {self.extents}")
        object.__setattr__(self, "extents", ext)
        patches = tuple(self.patches)
        object.__setattr__(self, "patches", patches)
        tags = [p.tag for p in patches]
        if len(set(tags)) != len(tags):
            raise InvalidArgumentError(f"patch tags must be unique, got {tags}")
        for p in patches:
            if p.axis not in range(len(ext)):
                raise InvalidArgumentError(f"patch {p.tag}: axis {p.axis} outside dimension {len(ext)}")
            if p.side not in ("min", "max"):
                raise InvalidArgumentError(f"patch {p.tag}: side must be 'min' or 'max'")

    @property
    def dim(self):
        return len(self.extents)

    @property
    def robin_tags(self):
        return tuple(p.tag for p in self.patches)

    def plane_value(self, patch):
        return 0.0 if patch.side == "min" else self.extents[patch.axis]


def _parse_patch(tag, axis, side):
    a = _AXIS_NAMES.get(str(axis).lower()) if not isinstance(axis, int) else axis
    if a is None:
        raise InvalidArgumentError(f"unknown axis {axis!r} for patch {tag!r}")
    return Patch(tag=str(tag), axis=a, side=str(side))


@dataclass
class SimplicialMesh:
    """Triangulated box room with tagged boundary facets.

    ``h`` is the realized mesh size in the grid-spacing sense (the largest
    cell edge, guaranteed <= the requested h_target); ``max_diameter`` is the
    largest element diameter, which exceeds ``h`` by the cell-diagonal factor.
    """

    dim: int
    extents: tuple
    vertices: np.ndarray          # (nv, dim) float64
    elements: np.ndarray          # (ne, dim+1) int64, positive orientation
    boundary_facets: np.ndarray   # (nf, dim) int64
    facet_tags: tuple             # tag per boundary facet (str, NEUMANN default)
    layout: PatchLayout
    subdivisions: tuple           # cells per axis
    spacing: tuple                # realized cell edge per axis
    h: float                      # max(spacing)
    max_diameter: float

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    def facets_with_tag(self, tag):
        idx = [i for i, t in enumerate(self.facet_tags) if t == tag]
        return self.boundary_facets[idx]

    def element_vertices(self, e):
        return self.vertices[self.elements[e]]


def _vertex_grid(ns, spacing):
    axes = [np.arange(n + 1) * d for n, d in zip(ns, spacing)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _elements_2d(n1, n2):
    i, j = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    i = i.ravel()
    j = j.ravel()
    a = i * (n2 + 1) + j
    b = (i + 1) * (n2 + 1) + j
    c = (i + 1) * (n2 + 1) + (j + 1)
    d = i * (n2 + 1) + (j + 1)
    tris = np.empty((2 * n1 * n2, 3), dtype=np.int64)
    tris[0::2] = np.stack([a, b, c], axis=1)
    tris[1::2] = np.stack([a, c, d], axis=1)
    return tris


# Kuhn split: walk the cube edges in each axis order; all 6 tets share the
# main diagonal, and induced face diagonals match between neighboring cells.
_KUHN_PERMS = tuple(itertools.permutations((0, 1, 2)))


def _elements_3d(n1, n2, n3):
    i, j, k = np.meshgrid(np.arange(n1), np.arange(n2), np.arange(n3), indexing="ij")
    i = i.ravel()
    j = j.ravel()
    k = k.ravel()

    def vid(di, dj, dk):
        return ((i + di) * (n2 + 1) + (j + dj)) * (n3 + 1) + (k + dk)

    ncells = n1 * n2 * n3
    tets = np.empty((6 * ncells, 4), dtype=np.int64)
    for t, perm in enumerate(_KUHN_PERMS):
        corner = np.zeros(3, dtype=int)
        verts = [vid(0, 0, 0)]
        for axis in perm:
            corner = corner.copy()
            corner[axis] = 1
            verts.append(vid(*corner))
        # odd permutations produce negatively oriented tets; swap to fix
        parity = sum(1 for a in range(3) for b in range(a + 1, 3) if perm[a] > perm[b]) % 2
        if parity:
            verts[2], verts[3] = verts[3], verts[2]
        tets[t::6] = np.stack(verts, axis=1)
    return tets


def _signed_volumes(vertices, elements):
    coords = vertices[elements]
    edges = coords[:, 1:, :] - coords[:, :1, :]
    if coords.shape[1] == 3:
        return 0.5 * np.linalg.det(edges)
    return np.linalg.det(edges) / 6.0


def _boundary_facets(elements, dim):
    """Facets (sorted vertex tuples) that belong to exactly one element."""
    ne = elements.shape[0]
    nfac = dim + 1
    local = [tuple(v for v in range(dim + 1) if v != omit) for omit in range(nfac)]
    facets = np.concatenate([elements[:, idx] for idx in local], axis=0)
    facets_sorted = np.sort(facets, axis=1)
    order = np.lexsort(facets_sorted.T[::-1])
    fs = facets_sorted[order]
    boundary_mask = np.ones(len(fs), dtype=bool)
    same_as_prev = np.all(fs[1:] == fs[:-1], axis=1)
    boundary_mask[1:][same_as_prev] = False
    boundary_mask[:-1][same_as_prev] = False
    owner = np.tile(np.arange(ne), nfac)[order]
    if same_as_prev.size > 1 and np.any(same_as_prev[1:] & same_as_prev[:-1]):
        raise InvalidArgumentError("non-manifold facet found")  # cannot happen for box meshes
    return fs[boundary_mask], owner[boundary_mask]


def _tag_facets(vertices, facets, layout):
    tags = np.full(len(facets), NEUMANN, dtype=object)
    coords = vertices[facets]
    for p in layout.patches:
        value = layout.plane_value(p)
        on_plane = np.all(np.abs(coords[:, :, p.axis] - value) <= 1e-12, axis=1)
        tags[on_plane] = p.tag
    return tuple(tags)


def build_box_mesh(extents, h_target, layout=None, subdivisions=None):
    """Build the structured simplicial mesh of a box room.

    Parameters
    ----------
    extents : sequence of float
        Side lengths (meters), 2 or 3 entries.
    h_target : float
        Requested mesh size; each axis gets ceil(L_a / h_target) cells, so the
        realized spacing never exceeds h_target.
    layout : PatchLayout, optional
        Wall patch tagging; default is an all-Neumann box.
    subdivisions : sequence of int, optional
        Explicit cells per axis, overriding the h_target rule (used by the
        dyadic refinement studies to guarantee exact nesting).
    """
    ext = tuple(float(e) for e in extents)
    if len(ext) not in (2, 3) or any(e <= 0 for e in ext):
        raise InvalidArgumentError(f"extents must be 2 or 3 positive lengths, got {extents}")
    if layout is None:
        layout = PatchLayout(extents=ext, patches=())
    if layout.extents != ext:
        raise InvalidArgumentError("layout extents disagree with mesh extents")
    if subdivisions is None:
        if not (h_target > 0):
            raise InvalidArgumentError(f"h_target must be positive, got {h_target}")
        # the 1e-12 slack keeps exact divisors (L/h integral) from rounding up
        ns = tuple(int(math.ceil(L / float(h_target) - 1e-12)) for L in ext)
    else:
        ns = tuple(int(n) for n in subdivisions)
        if any(n < 1 for n in ns):
            raise InvalidArgumentError(f"subdivisions must be >= 1, got {subdivisions}")
    dim = len(ext)
    spacing = tuple(L / n for L, n in zip(ext, ns))

    vertices = _vertex_grid(ns, spacing)
    elements = _elements_2d(*ns) if dim == 2 else _elements_3d(*ns)

    vols = _signed_volumes(vertices, elements)
    if np.any(vols <= 0):
        raise InvalidArgumentError("negative element volume; orientation bug")
    box_volume = math.prod(ext)
    if abs(vols.sum() - box_volume) > 1e-12 * box_volume:
        raise InvalidArgumentError("element volumes do not tile the box")

    facets, _ = _boundary_facets(elements, dim)
    tags = _tag_facets(vertices, facets, layout)

    h = max(spacing)
    max_diameter = math.sqrt(sum(d * d for d in spacing))
    return SimplicialMesh(
        dim=dim,
        extents=ext,
        vertices=vertices,
        elements=elements,
        boundary_facets=facets,
        facet_tags=tags,
        layout=layout,
        subdivisions=ns,
        spacing=spacing,
        h=h,
        max_diameter=max_diameter,
    )


def _cell_element_ids(mesh, cell):
    """Element indices inside one grid cell, ascending."""
    ns = mesh.subdivisions
    if mesh.dim == 2:
        base = 2 * (cell[0] * ns[1] + cell[1])
        return (base, base + 1)
    base = 6 * ((cell[0] * ns[1] + cell[1]) * ns[2] + cell[2])
    return tuple(base + t for t in range(6))


def barycentric_coordinates(mesh, e, x):
    """Barycentric coordinates of x in element e (may be negative outside)."""
    coords = mesh.vertices[mesh.elements[e]]
    A = np.vstack([np.ones(mesh.dim + 1), coords.T])
    rhs = np.concatenate([[1.0], np.asarray(x, dtype=float)])
    return np.linalg.solve(A, rhs)


def locate_point(mesh, x):
    """Find the element containing x and its barycentric coordinates.

    Points on shared facets are assigned to the lowest element index.  The
    returned coordinates are clipped to be nonnegative and renormalized to
    sum to one; they reproduce x through the element vertices to 1e-12.

    Raises
    ------
    OutOfDomainError
        If x lies outside the closed box.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (mesh.dim,):
        raise InvalidArgumentError(f"point has dimension {x.shape}, mesh is {mesh.dim}D")
    scale = max(mesh.extents)
    tol = 1e-12 * scale
    if np.any(x < -tol) or np.any(x > np.asarray(mesh.extents) + tol):
        raise OutOfDomainError(f"point {tuple(x)} outside room {mesh.extents}")
    xc = np.minimum(np.maximum(x, 0.0), np.asarray(mesh.extents))

    ns = mesh.subdivisions
    cell = [min(int(xc[a] / mesh.spacing[a]), ns[a] - 1) for a in range(mesh.dim)]
    candidates = []
    for offsets in itertools.product(*[(-1, 0, 1)] * mesh.dim):
        c = tuple(cell[a] + offsets[a] for a in range(mesh.dim))
        if all(0 <= c[a] < ns[a] for a in range(mesh.dim)):
            candidates.extend(_cell_element_ids(mesh, c))
    for e in sorted(candidates):
        lam = barycentric_coordinates(mesh, e, xc)
        if np.all(lam >= -_BARY_TOL):
            lam = np.maximum(lam, 0.0)
            lam /= lam.sum()
            return e, lam
    raise OutOfDomainError(f"no containing element found for {tuple(x)}")  # pragma: no cover


def patch_measure(mesh, tag):
    """Total length (2D) or area (3D) of a boundary patch."""
    facets = mesh.facets_with_tag(tag)
    coords = mesh.vertices[facets]
    if mesh.dim == 2:
        return float(np.linalg.norm(coords[:, 1] - coords[:, 0], axis=1).sum())
    cross = np.cross(coords[:, 1] - coords[:, 0], coords[:, 2] - coords[:, 0])
    return float(0.5 * np.linalg.norm(cross, axis=1).sum())


def dump_text(mesh):
    """Plain-text node/element dump with per-patch facet sections (debugging)."""
    lines = [f"# roomimp mesh dim={mesh.dim} h={mesh.h!r}"]
    lines.append(f"# vertices {mesh.n_vertices}")
    for v in mesh.vertices:
        lines.append(" ".join(repr(c) for c in v))
    lines.append(f"# elements {mesh.n_elements}")
    for e in mesh.elements:
        lines.append(" ".join(str(i) for i in e))
    tags = sorted(set(mesh.facet_tags))
    for tag in tags:
        facets = mesh.facets_with_tag(tag)
        lines.append(f"# patch {tag} {len(facets)}")
        for f in facets:
            lines.append(" ".join(str(i) for i in f))
    return "\n".join(lines) + "\n"
