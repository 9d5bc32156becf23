"""Structured triangular meshes of rectangles with tagged boundary facets."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidArgument, InvalidProbe


class BoundaryTag(enum.Enum):
    TOP = "top"
    BOTTOM = "bottom"
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True, eq=False)
class Mesh:
    """Linear triangle mesh of the rectangle [0, lx] x [0, ly].

    Attributes:
        nodes: (n_nodes, 2) coordinates in meters, row-major in y.
        elements: (n_elements, 3) node indices, counterclockwise.
        facets: (n_facets, 2) boundary node pairs, oriented with the domain on the left.
        facet_tags: one BoundaryTag per facet.
    """

    nodes: np.ndarray
    elements: np.ndarray
    facets: np.ndarray
    facet_tags: tuple
    lx: float
    ly: float
    nx: int
    ny: int

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        xy = self.nodes[self.elements]
        d1 = xy[:, 1] - xy[:, 0]
        d2 = xy[:, 2] - xy[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def gradients(self) -> np.ndarray:
        """Constant P1 shape-function gradients, shape (n_elements, 3, 2)."""
        xy = self.nodes[self.elements]
        x, y = xy[..., 0], xy[..., 1]
        b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        twice_area = 2.0 * self.signed_areas[:, None]
        return np.stack([b / twice_area, c / twice_area], axis=2)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def facets_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        tag = BoundaryTag(tag)
        mask = np.array([t is tag for t in self.facet_tags])
        return self.facets[mask]

    def boundary_nodes(self, tags=None) -> np.ndarray:
        """Sorted unique node indices lying on facets with any of ``tags`` (all if None)."""
        if tags is None:
            tags = list(BoundaryTag)
        chunks = [self.facets_with_tag(t).ravel() for t in tags]
        if not chunks:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(chunks))

    def edge_counts(self) -> dict:
        """Map each undirected edge to the number of elements containing it."""
        counts: dict = {}
        for tri in self.elements:
            for a, b in ((0, 1), (1, 2), (2, 0)):
                key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
                counts[key] = counts.get(key, 0) + 1
        return counts

    def locate(self, point, tol: float = 1e-12):
        """Return (element index, barycentric coordinates) of the element containing ``point``."""
        px, py = float(point[0]), float(point[1])
        scale = max(self.lx, self.ly)
        if not (-tol * scale <= px <= self.lx + tol * scale and -tol * scale <= py <= self.ly + tol * scale):
            raise InvalidProbe(f"point ({px}, {py}) lies outside the domain")
        xy = self.nodes[self.elements]
        grads = self.gradients
        rel = np.array([px, py])[None, :] - xy[:, 0]
        lam1 = np.einsum("ek,ek->e", grads[:, 1], rel)
        lam2 = np.einsum("ek,ek->e", grads[:, 2], rel)
        lam0 = 1.0 - lam1 - lam2
        bary = np.stack([lam0, lam1, lam2], axis=1)
        inside = np.all(bary >= -1e-10, axis=1)
        hits = np.flatnonzero(inside)
        if hits.size == 0:
            raise InvalidProbe(f"no element contains ({px}, {py})")
        e = int(hits[0])
        return e, bary[e]

    def interpolate(self, values: np.ndarray, point) -> np.ndarray:
        """Evaluate nodal P1 field(s) at ``point``; ``values`` has nodes on axis 0."""
        e, bary = self.locate(point)
        return np.tensordot(bary, values[self.elements[e]], axes=(0, 0))


def generate_rect_mesh(lx: float, ly: float, nx: int, ny: int, diagonal: str = "right") -> Mesh:
    """Split an nx-by-ny grid of [0, lx] x [0, ly] into 2*nx*ny triangles.

    ``diagonal="right"`` cuts every cell from its lower-left to upper-right corner.
    ``diagonal="alternating"`` flips the cut in a checkerboard pattern, which makes
    the mesh mirror-symmetric about both center lines when nx and ny are even.
    """
    if not (lx > 0 and ly > 0):
        raise InvalidArgument(f"extents must be positive, got lx={lx}, ly={ly}")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidArgument(f"subdivisions must be integers >= 1, got nx={nx}, ny={ny}")
    if diagonal not in ("right", "alternating"):
        raise InvalidArgument(f"unknown diagonal pattern {diagonal!r}")
    nx, ny = int(nx), int(ny)

    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    elements = []
    for j in range(ny):
        for i in range(nx):
            n00, n10, n01, n11 = nid(i, j), nid(i + 1, j), nid(i, j + 1), nid(i + 1, j + 1)
            if diagonal == "alternating" and (i + j) % 2 == 1:
                elements.append((n00, n10, n01))
                elements.append((n10, n11, n01))
            else:
                elements.append((n00, n10, n11))
                elements.append((n00, n11, n01))
    elements = np.array(elements, dtype=np.int64)

    facets, tags = [], []
    for i in range(nx):
        facets.append((nid(i, 0), nid(i + 1, 0)))
        tags.append(BoundaryTag.BOTTOM)
    for j in range(ny):
        facets.append((nid(nx, j), nid(nx, j + 1)))
        tags.append(BoundaryTag.RIGHT)
    for i in range(nx, 0, -1):
        facets.append((nid(i, ny), nid(i - 1, ny)))
        tags.append(BoundaryTag.TOP)
    for j in range(ny, 0, -1):
        facets.append((nid(0, j), nid(0, j - 1)))
        tags.append(BoundaryTag.LEFT)
    facets = np.array(facets, dtype=np.int64)

    # geometric re-check of the tags
    tol = 1e-12 * max(lx, ly)
    for (a, b), tag in zip(facets, tags):
        pa, pb = nodes[a], nodes[b]
        on = {
            BoundaryTag.BOTTOM: abs(pa[1]) <= tol and abs(pb[1]) <= tol,
            BoundaryTag.TOP: abs(pa[1] - ly) <= tol and abs(pb[1] - ly) <= tol,
            BoundaryTag.LEFT: abs(pa[0]) <= tol and abs(pb[0]) <= tol,
            BoundaryTag.RIGHT: abs(pa[0] - lx) <= tol and abs(pb[0] - lx) <= tol,
        }
        assert on[tag] and sum(on.values()) == 1

    for arr in (nodes, elements, facets):
        arr.setflags(write=False)
    return Mesh(nodes, elements, facets, tuple(tags), float(lx), float(ly), nx, ny)


def facets_with_tag(mesh: Mesh, tag: BoundaryTag) -> np.ndarray:
    return mesh.facets_with_tag(tag)
