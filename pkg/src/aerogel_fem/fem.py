"""P1 finite-element kernel: quadrature, basis, dof maps, assembly, constraints, solves."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, ConstraintConflict, InvalidArgument, SingularElement, SolverFailure
from .mesh import BoundaryTag, Mesh


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points and weights on the reference triangle (weights sum to 1/2)."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def physical(self, mesh: Mesh):
        """Quadrature points (n_el, n_q, 2) and weights scaled by element area (n_el, n_q)."""
        xy = mesh.nodes[mesh.elements]
        pts = np.einsum("qi,eik->eqk", self.points, xy)
        w = 2.0 * mesh.areas[:, None] * self.weights[None, :]
        return pts, w


def _rule(points, weights, degree):
    p = np.array(points, dtype=float)
    w = np.array(weights, dtype=float)
    p.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(p, w, degree)


VERTEX = _rule(np.eye(3), [1 / 6] * 3, 1)
CENTROID = _rule([[1 / 3, 1 / 3, 1 / 3]], [0.5], 1)
DEGREE2 = _rule(
    [[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]],
    [1 / 6] * 3,
    2,
)


def _dunavant4():
    a, b = 0.445948490915965, 0.091576213509771
    wa, wb = 0.223381589678011, 0.109951743655322
    pts, wts = [], []
    for c, w in ((a, wa), (b, wb)):
        d = 1.0 - 2.0 * c
        for perm in ((d, c, c), (c, d, c), (c, c, d)):
            pts.append(perm)
            wts.append(0.5 * w)
    return _rule(pts, wts, 4)


DEGREE4 = _dunavant4()

# two-point Gauss-Legendre on [0, 1], exact for cubics along a facet
_GAUSS2_S = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_GAUSS2_W = np.array([0.5, 0.5])


def p1_basis(element_xy, point):
    """Values and gradients of the three nodal shape functions at a barycentric point."""
    xy = np.asarray(element_xy, dtype=float)
    lam = np.asarray(point, dtype=float)
    d1, d2 = xy[1] - xy[0], xy[2] - xy[0]
    twice_area = d1[0] * d2[1] - d1[1] * d2[0]
    scale = max(np.abs(d1).max(), np.abs(d2).max(), 1e-300)
    if abs(twice_area) <= 1e-14 * scale * scale:
        raise SingularElement(f"element {xy.tolist()} has zero area")
    b = np.array([xy[1, 1] - xy[2, 1], xy[2, 1] - xy[0, 1], xy[0, 1] - xy[1, 1]])
    c = np.array([xy[2, 0] - xy[1, 0], xy[0, 0] - xy[2, 0], xy[1, 0] - xy[0, 0]])
    grads = np.column_stack([b, c]) / twice_area
    return lam.copy(), grads


@dataclass(frozen=True)
class DofMap:
    """Field-blocked numbering: field by field, node-major, component-minor."""

    n_nodes: int
    fields: tuple  # ((name, n_components), ...)

    def __post_init__(self):
        names = [f for f, _ in self.fields]
        if len(set(names)) != len(names):
            raise InvalidArgument("duplicate field names in DofMap")

    @property
    def offsets(self) -> dict:
        out, off = {}, 0
        for name, ncomp in self.fields:
            out[name] = off
            off += self.n_nodes * ncomp
        return out

    @property
    def n_dofs(self) -> int:
        return sum(self.n_nodes * nc for _, nc in self.fields)

    def components(self, name: str) -> int:
        return dict(self.fields)[name]

    def index(self, name, node, comp=0):
        ncomp = self.components(name)
        return self.offsets[name] + np.asarray(node) * ncomp + comp

    def field_slice(self, name) -> slice:
        off = self.offsets[name]
        return slice(off, off + self.n_nodes * self.components(name))

    def inverse(self, dof: int):
        for name, ncomp in self.fields:
            off = self.offsets[name]
            if off <= dof < off + self.n_nodes * ncomp:
                node, comp = divmod(dof - off, ncomp)
                return name, node, comp
        raise IndexError(dof)

    def element_dofs(self, elements: np.ndarray) -> np.ndarray:
        """Local-to-global map (n_el, n_local) for all fields in declaration order."""
        elements = np.atleast_2d(elements)
        blocks = []
        for name, ncomp in self.fields:
            base = self.offsets[name] + elements[:, :, None] * ncomp + np.arange(ncomp)
            blocks.append(base.reshape(len(elements), -1))
        return np.concatenate(blocks, axis=1)

    @property
    def n_local(self) -> int:
        return 3 * sum(nc for _, nc in self.fields)


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: dict = field(default_factory=dict)

    def __post_init__(self):
        n, m = self.matrix.shape
        if n != m or len(self.rhs) != n:
            raise AssemblyError(f"inconsistent system shapes {self.matrix.shape} and {self.rhs.shape}")


def assemble_batched(n_dofs: int, element_dofs, local_matrices=None, local_vectors=None) -> SparseSystem:
    """Sum element contributions into a CSR matrix and a vector."""
    element_dofs = np.asarray(element_dofs, dtype=np.int64)
    if element_dofs.size and (element_dofs.min() < 0 or element_dofs.max() >= n_dofs):
        raise AssemblyError(f"dof index out of range [0, {n_dofs})")
    n_el, n_loc = element_dofs.shape
    if local_matrices is not None:
        local_matrices = np.asarray(local_matrices, dtype=float)
        if local_matrices.shape != (n_el, n_loc, n_loc):
            raise AssemblyError(f"local matrices have shape {local_matrices.shape}, expected {(n_el, n_loc, n_loc)}")
        rows = np.repeat(element_dofs, n_loc, axis=1).ravel()
        cols = np.tile(element_dofs, (1, n_loc)).ravel()
        A = sp.coo_matrix((local_matrices.ravel(), (rows, cols)), shape=(n_dofs, n_dofs)).tocsr()
    else:
        A = sp.csr_matrix((n_dofs, n_dofs))
    b = np.zeros(n_dofs)
    if local_vectors is not None:
        local_vectors = np.asarray(local_vectors, dtype=float)
        if local_vectors.shape != (n_el, n_loc):
            raise AssemblyError(f"local vectors have shape {local_vectors.shape}, expected {(n_el, n_loc)}")
        np.add.at(b, element_dofs.ravel(), local_vectors.ravel())
    return SparseSystem(A, b)


def assemble(mesh: Mesh, dofmap: DofMap, element_kernel, elements=None) -> SparseSystem:
    """Generic assembly; ``element_kernel(e, xy)`` returns (local matrix, local vector).

    Either entry may be None. ``elements`` restricts and orders the element loop.
    """
    order = np.arange(mesh.n_elements) if elements is None else np.asarray(elements)
    n_loc = dofmap.n_local
    Ks = np.zeros((len(order), n_loc, n_loc))
    fs = np.zeros((len(order), n_loc))
    for k, e in enumerate(order):
        Ke, fe = element_kernel(int(e), mesh.nodes[mesh.elements[e]])
        try:
            if Ke is not None:
                Ks[k] = Ke
            if fe is not None:
                fs[k] = fe
        except ValueError as exc:
            raise AssemblyError(f"kernel output for element {e} does not match {n_loc} local dofs") from exc
    return assemble_batched(dofmap.n_dofs, dofmap.element_dofs(mesh.elements[order]), Ks, fs)


def _normalize_constraints(constraints) -> dict:
    if isinstance(constraints, dict):
        items = constraints.items()
    else:
        items = constraints
    out: dict = {}
    for idx, val in items:
        idx, val = int(idx), float(val)
        if idx in out and out[idx] != val:
            raise ConstraintConflict(f"dof {idx} constrained to both {out[idx]} and {val}")
        out[idx] = val
    return out


def apply_dirichlet(system: SparseSystem, constraints) -> SparseSystem:
    """Symmetric elimination: constrained rows/columns become identity, rhs carries values."""
    cons = _normalize_constraints(constraints)
    for idx, val in system.constrained.items():
        if idx in cons and cons[idx] != val:
            raise ConstraintConflict(f"dof {idx} already constrained to {val}")
        cons.setdefault(idx, val)
    n = system.matrix.shape[0]
    if not cons:
        return SparseSystem(system.matrix.copy(), system.rhs.copy(), {})
    idx = np.fromiter(cons.keys(), dtype=np.int64)
    if idx.min() < 0 or idx.max() >= n:
        raise AssemblyError(f"constraint index out of range [0, {n})")
    vals = np.fromiter(cons.values(), dtype=float)
    g = np.zeros(n)
    g[idx] = vals
    A = system.matrix.tocsr()
    b = system.rhs - A @ g
    keep = np.ones(n)
    keep[idx] = 0.0
    D = sp.diags(keep)
    A = (D @ A @ D + sp.diags(1.0 - keep)).tocsr()
    A.eliminate_zeros()
    b[idx] = vals
    return SparseSystem(A, b, cons)


def solve_linear(system: SparseSystem, rtol: float = 1e-10, ordering: str = "COLAMD") -> np.ndarray:
    """Direct sparse LU solve with a residual acceptance check.

    ``ordering`` is the SuperLU column permutation (``permc_spec``).
    """
    A = system.matrix.tocsc()
    b = system.rhs
    if not np.all(np.isfinite(b)) or not np.all(np.isfinite(A.data)):
        raise SolverFailure("non-finite entries in the linear system")
    # symmetric diagonal equilibration: the coupled systems mix Pa and m unknowns
    d = np.abs(A.diagonal())
    scale = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 1.0)
    S = sp.diags(scale)
    try:
        lu = spla.splu((S @ A @ S).tocsc(), permc_spec=ordering)
        x = scale * lu.solve(scale * b)
    except RuntimeError as exc:
        raise SolverFailure(f"sparse factorization failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverFailure("solution contains non-finite values")
    r = A @ x - b
    a_norm = spla.norm(A, np.inf)
    bound = rtol * (a_norm * np.abs(x).max(initial=0.0) + np.abs(b).max(initial=0.0))
    res = np.abs(r).max(initial=0.0)
    if res > bound:
        raise SolverFailure(f"residual {res:.3e} exceeds bound {bound:.3e}", residual=res)
    return x


# ---------------------------------------------------------------------------
# vectorized P1 operators used by the solvers

def element_mass(mesh: Mesh, coef=None) -> np.ndarray:
    """Consistent P1 mass matrices (n_el, 3, 3) with an optional per-element coefficient."""
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    scale = mesh.areas if coef is None else mesh.areas * np.broadcast_to(coef, mesh.areas.shape)
    return scale[:, None, None] * ref[None]


def element_lumped_mass(mesh: Mesh, coef=None) -> np.ndarray:
    scale = mesh.areas if coef is None else mesh.areas * np.broadcast_to(coef, mesh.areas.shape)
    return scale[:, None, None] * (np.eye(3) / 3.0)[None]


def element_stiffness(mesh: Mesh, coef=None) -> np.ndarray:
    """P1 diffusion matrices; ``coef`` is the per-element integral mean of the conductivity."""
    G = mesh.gradients
    scale = mesh.areas if coef is None else mesh.areas * np.broadcast_to(coef, mesh.areas.shape)
    return scale[:, None, None] * np.einsum("eik,ejk->eij", G, G)


def scalar_matrix(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    n = mesh.n_nodes
    return assemble_batched(n, mesh.elements, local).matrix


def facet_geometry(mesh: Mesh, tags):
    """Facets with the given tags, their lengths and outward unit normals."""
    facets = np.concatenate([mesh.facets_with_tag(t) for t in tags]) if tags else np.zeros((0, 2), dtype=np.int64)
    if len(facets) == 0:
        return facets, np.zeros(0), np.zeros((0, 2))
    d = mesh.nodes[facets[:, 1]] - mesh.nodes[facets[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    # boundary oriented with the domain on the left, so the outward normal is the right-hand normal
    normal = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    return facets, length, normal


def facet_quadrature(mesh: Mesh, facets: np.ndarray, length: np.ndarray):
    """Two-point Gauss data on facets: points (n_f, 2, 2), basis values (2, 2), weights (n_f, 2)."""
    a = mesh.nodes[facets[:, 0]]
    b = mesh.nodes[facets[:, 1]]
    s = _GAUSS2_S
    pts = a[:, None, :] * (1.0 - s)[None, :, None] + b[:, None, :] * s[None, :, None]
    phi = np.column_stack([1.0 - s, s])  # (q, local node)
    w = length[:, None] * _GAUSS2_W[None, :]
    return pts, phi, w


def boundary_mass(mesh: Mesh, tags, lumped: bool = False) -> sp.csr_matrix:
    """P1 mass matrix on the boundary facets carrying ``tags``."""
    facets, length, _ = facet_geometry(mesh, list(tags))
    if lumped:
        local = length[:, None, None] * (np.eye(2) / 2.0)[None]
    else:
        local = length[:, None, None] * ((np.ones((2, 2)) + np.eye(2)) / 6.0)[None]
    if len(facets) == 0:
        return sp.csr_matrix((mesh.n_nodes, mesh.n_nodes))
    return assemble_batched(mesh.n_nodes, facets, local).matrix


def boundary_load(mesh: Mesh, tags, func, time: float = 0.0) -> np.ndarray:
    """Integrate ``func(x, y, t)`` against P1 basis functions on tagged facets."""
    out = np.zeros(mesh.n_nodes)
    facets, length, _ = facet_geometry(mesh, list(tags))
    if len(facets) == 0:
        return out
    pts, phi, w = facet_quadrature(mesh, facets, length)
    vals = np.asarray(func(pts[..., 0], pts[..., 1], time), dtype=float) * np.ones(pts.shape[:2])
    local = np.einsum("fq,fq,qa->fa", vals, w, phi)
    np.add.at(out, facets.ravel(), local.ravel())
    return out


def load_vector(mesh: Mesh, func, time: float = 0.0, rule: QuadratureRule = DEGREE4) -> np.ndarray:
    """Integrate a scalar ``func(x, y, t)`` against P1 basis functions."""
    pts, w = rule.physical(mesh)
    vals = np.asarray(func(pts[..., 0], pts[..., 1], time), dtype=float) * np.ones(pts.shape[:2])
    local = np.einsum("eq,eq,qa->ea", vals, w, rule.points)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.elements.ravel(), local.ravel())
    return out


def l2_error(mesh: Mesh, nodal: np.ndarray, exact, time: float = 0.0, rule: QuadratureRule = DEGREE4) -> float:
    """L2 norm of (P1 interpolant of ``nodal``) - ``exact(x, y, t)`` over the mesh."""
    pts, w = rule.physical(mesh)
    uh = np.einsum("qa,ea->eq", rule.points, nodal[mesh.elements])
    ue = np.asarray(exact(pts[..., 0], pts[..., 1], time), dtype=float) * np.ones(pts.shape[:2])
    return float(np.sqrt(np.sum(w * (uh - ue) ** 2)))


def l2_norm(mesh: Mesh, func, time: float = 0.0, rule: QuadratureRule = DEGREE4) -> float:
    pts, w = rule.physical(mesh)
    ue = np.asarray(func(pts[..., 0], pts[..., 1], time), dtype=float) * np.ones(pts.shape[:2])
    return float(np.sqrt(np.sum(w * ue**2)))


ALL_TAGS = tuple(BoundaryTag)
