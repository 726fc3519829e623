"""Sudden-expansion channel triangulation with tagged boundary and interior facets.

Geometry (nondimensional): inlet duct [0,10]x[2.5,5] opening into the
expansion [10,50]x[0,7.5]. Structured criss-cross triangulation (each grid
rectangle split into 4 triangles about its centroid), built so that the
vertex set is *exactly* invariant under the mirror x2 -> 7.5 - x2 and so
that grid lines fall on x1 in {0, 10, 14, 47, 50}. The x1=14 line puts a
vertex at (14, 3.75): the mesh node nearest (14,4), self-mirrored, which
keeps the pitchfork symmetry of the scalar output exact.
"""

from __future__ import annotations

import numpy as np
from dataclasses import dataclass, field
from enum import IntEnum

from .errors import GeometryError, StructuralError

X_INLET_END = 10.0
X_OUTPUT = 14.0
X_OBS = 47.0
X_OUT = 50.0
Y_LO, Y_HI = 0.0, 7.5
Y_IN_LO, Y_IN_HI = 2.5, 5.0
DOMAIN_AREA = 10.0 * 2.5 + 40.0 * 7.5  # 325

OUTPUT_POINT = (14.0, 4.0)


class FacetTag(IntEnum):
    INLET = 0       # {0} x [2.5, 5]
    OUTLET = 1      # {50} x [0, 7.5]
    GAMMA_D = 2     # {10} x ([0,2.5] u [5,7.5])
    GAMMA_0 = 3     # remaining boundary walls
    GAMMA_OBS = 4   # interior line {47} x [0, 7.5]
    GAMMA_CH = 5    # interior line {10} x [2.5, 5]


BOUNDARY_TAGS = (FacetTag.INLET, FacetTag.OUTLET, FacetTag.GAMMA_D, FacetTag.GAMMA_0)

# preset -> (m, nx1, nx2, nx3, nx4): m = y-subdivisions of the inlet half-height
# grid (must be even so x2=3.75 is a grid line); nx* subdivide [0,10], [10,14],
# [14,47], [47,50].
PRESETS = {
    "paper": (4, 14, 6, 46, 4),    # 2912 cells, ~24.3k state+adjoint velocity dofs
    "medium": (4, 10, 4, 33, 3),   # unit-spaced x grid, same y resolution
    "coarse": (2, 8, 3, 26, 2),    # target cell size 1.25
    "tiny": (2, 4, 2, 12, 1),      # unit tests
}


@dataclass
class NearestNode:
    index: int
    distance: float


@dataclass
class Mesh:
    vertices: np.ndarray          # (nv, 2)
    triangles: np.ndarray         # (nt, 3), positively oriented
    facets: np.ndarray            # (nf, 2) vertex pairs
    facet_tags: np.ndarray        # (nf,) FacetTag values
    mirror_vertex: np.ndarray     # vertex permutation of x2 -> 7.5 - x2
    info: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.triangles)

    def facet_set(self, tag: FacetTag) -> np.ndarray:
        return self.facets[self.facet_tags == int(tag)]

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))


def _mirrored_linspace(lo: float, hi: float, n: int) -> np.ndarray:
    """n+1 points on [lo, hi] with vals[i] + vals[n-i] == lo+hi exactly."""
    if n % 2:
        raise StructuralError("mirrored linspace needs an even interval count")
    half = np.linspace(lo, (lo + hi) / 2.0, n // 2 + 1)
    return np.concatenate([half[:-1], (lo + hi) - half[::-1]])


def build_channel_mesh(refinement="paper") -> Mesh:
    """Conforming criss-cross triangulation of the channel.

    `refinement` is a preset name or a target cell size (grid spacing); the
    grid always contains the lines x1 in {0,10,14,47,50} and the mirror line
    x2=3.75. Facets are tagged per FacetTag; interior facet sets lie exactly
    on x1=47 (observation) and x1=10 (channel-control mouth).
    """
    if isinstance(refinement, str):
        try:
            m, n1, n2, n3, n4 = PRESETS[refinement]
        except KeyError:
            raise GeometryError(f"unknown mesh preset {refinement!r}") from None
    else:
        h = float(refinement)
        if not np.isfinite(h) or h <= 0 or h > 3.75:
            raise GeometryError(f"degenerate cell size {refinement!r}")
        m = max(2, 2 * round(2.5 / h / 2))
        n1 = max(1, round(10.0 / h))
        n2 = max(1, round(4.0 / h))
        n3 = max(1, round(33.0 / h))
        n4 = max(1, round(3.0 / h))

    # grid lines; y built symmetric about 3.75 so mirroring is exact
    xs = np.concatenate([
        np.linspace(0.0, 10.0, n1 + 1),
        np.linspace(10.0, 14.0, n2 + 1)[1:],
        np.linspace(14.0, 47.0, n3 + 1)[1:],
        np.linspace(47.0, 50.0, n4 + 1)[1:],
    ])
    ys = _mirrored_linspace(Y_LO, Y_HI, 3 * m)
    cys = np.empty(3 * m)
    cys[: 3 * m // 2] = 0.5 * (ys[: 3 * m // 2] + ys[1 : 3 * m // 2 + 1])
    cys[3 * m // 2:] = Y_HI - cys[: 3 * m // 2][::-1]
    ncx = len(xs) - 1

    j_lo, j_hi = m, 2 * m          # inlet duct spans ys[m..2m]
    i_step = n1                    # xs[i_step] == 10

    # grid vertices: columns left of x=10 carry only the duct rows
    vid = -np.ones((ncx + 1, 3 * m + 1), dtype=np.int64)
    coords = []
    for i in range(ncx + 1):
        jr = range(j_lo, j_hi + 1) if i < i_step else range(0, 3 * m + 1)
        for j in jr:
            vid[i, j] = len(coords)
            coords.append((xs[i], ys[j]))
    n_grid = len(coords)

    # rectangles and centroid vertices
    rects = []
    cid = {}
    for i in range(ncx):
        jr = range(j_lo, j_hi) if i < i_step else range(0, 3 * m)
        for j in jr:
            cid[(i, j)] = len(coords)
            coords.append((0.5 * (xs[i] + xs[i + 1]), cys[j]))
            rects.append((i, j))
    vertices = np.array(coords)

    tris = []
    for (i, j) in rects:
        bl, br = vid[i, j], vid[i + 1, j]
        tr, tl = vid[i + 1, j + 1], vid[i, j + 1]
        c = cid[(i, j)]
        tris.extend([(bl, br, c), (br, tr, c), (tr, tl, c), (tl, bl, c)])
    triangles = np.array(tris, dtype=np.int64)

    # facets
    fac, tags = [], []

    def add(v0, v1, tag):
        fac.append((v0, v1))
        tags.append(int(tag))

    for j in range(j_lo, j_hi):                      # inlet x=0
        add(vid[0, j], vid[0, j + 1], FacetTag.INLET)
    for j in range(0, 3 * m):                        # outlet x=50
        add(vid[ncx, j], vid[ncx, j + 1], FacetTag.OUTLET)
    for j in list(range(0, j_lo)) + list(range(j_hi, 3 * m)):   # expansion face
        add(vid[i_step, j], vid[i_step, j + 1], FacetTag.GAMMA_D)
    for i in range(0, i_step):                       # duct walls
        add(vid[i, j_lo], vid[i + 1, j_lo], FacetTag.GAMMA_0)
        add(vid[i, j_hi], vid[i + 1, j_hi], FacetTag.GAMMA_0)
    for i in range(i_step, ncx):                     # expansion walls
        add(vid[i, 0], vid[i + 1, 0], FacetTag.GAMMA_0)
        add(vid[i, 3 * m], vid[i + 1, 3 * m], FacetTag.GAMMA_0)
    i_obs = int(np.flatnonzero(xs == X_OBS)[0])      # interior lines
    for j in range(0, 3 * m):
        add(vid[i_obs, j], vid[i_obs, j + 1], FacetTag.GAMMA_OBS)
    for j in range(j_lo, j_hi):
        add(vid[i_step, j], vid[i_step, j + 1], FacetTag.GAMMA_CH)

    # exact mirror permutation from the index maps
    mirror = np.empty(len(vertices), dtype=np.int64)
    for i in range(ncx + 1):
        jr = range(j_lo, j_hi + 1) if i < i_step else range(0, 3 * m + 1)
        for j in jr:
            mirror[vid[i, j]] = vid[i, 3 * m - j]
    for (i, j) in rects:
        mirror[cid[(i, j)]] = cid[(i, 3 * m - 1 - j)]

    mesh = Mesh(vertices, triangles, np.array(fac, dtype=np.int64),
                np.array(tags, dtype=np.int64), mirror,
                info={"preset": refinement if isinstance(refinement, str) else None,
                      "m": m, "nx": (n1, n2, n3, n4),
                      "n_grid_vertices": n_grid,
                      "cells": len(triangles), "vertices": len(vertices)})
    if np.any(mesh.signed_areas() <= 0):
        raise GeometryError("non-positively-oriented triangle produced")
    return mesh


def expected_cell_count(m: int, nx: tuple) -> int:
    """Closed-form criss-cross count: 4 triangles per grid rectangle."""
    n1, n2, n3, n4 = nx
    return 4 * (n1 * m + (n2 + n3 + n4) * 3 * m)


def locate_output_node(mesh: Mesh, point=OUTPUT_POINT) -> NearestNode:
    """Vertex nearest `point` (Euclidean); ties break to the lowest index."""
    d2 = np.sum((mesh.vertices - np.asarray(point)) ** 2, axis=1)
    idx = int(np.argmin(d2))
    return NearestNode(idx, float(np.sqrt(d2[idx])))


def export_mesh(mesh: Mesh, path) -> None:
    """Text format: `channel-mesh v1`, vertices, triangles, tagged facets."""
    with open(path, "w") as f:
        f.write("channel-mesh v1\n")
        f.write(f"{mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            f.write(f"{float(x)!r} {float(y)!r}\n")
        f.write(f"{mesh.n_cells}\n")
        for a, b, c in mesh.triangles:
            f.write(f"{a} {b} {c}\n")
        f.write(f"{len(mesh.facets)}\n")
        for (a, b), t in zip(mesh.facets, mesh.facet_tags):
            f.write(f"{a} {b} {FacetTag(t).name}\n")


def import_mesh(path) -> Mesh:
    with open(path) as f:
        header = f.readline().strip()
        if header != "channel-mesh v1":
            raise StructuralError(f"bad mesh header {header!r}")
        nv = int(f.readline())
        verts = np.array([[float(t) for t in f.readline().split()] for _ in range(nv)])
        nt = int(f.readline())
        tris = np.array([[int(t) for t in f.readline().split()] for _ in range(nt)],
                        dtype=np.int64)
        nf = int(f.readline())
        fac, tags = [], []
        for _ in range(nf):
            a, b, name = f.readline().split()
            fac.append((int(a), int(b)))
            tags.append(int(FacetTag[name]))
    mirror = _mirror_from_coords(verts)
    return Mesh(verts, tris, np.array(fac, dtype=np.int64),
                np.array(tags, dtype=np.int64), mirror,
                info={"cells": nt, "vertices": nv})


def _mirror_from_coords(vertices: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Recover the mirror permutation by coordinate matching."""
    key = {(round(x, 9), round(y, 9)): i for i, (x, y) in enumerate(vertices)}
    mirror = np.empty(len(vertices), dtype=np.int64)
    for i, (x, y) in enumerate(vertices):
        j = key.get((round(x, 9), round(Y_HI - y, 9)))
        if j is None:
            raise GeometryError("vertex set is not mirror symmetric")
        mirror[i] = j
    return mirror
