"""Taylor-Hood P2-P1 spaces and assembly of every variational form.

Velocity is vector P2 (component-stacked: all x-dofs then all y-dofs),
pressure P1, controls vector P2 restricted to their support (whole domain,
or a trace space on an edge set). All volume assembly is vectorized over
cells with a 6-point degree-4 triangle rule (7-point degree-5 behind the
`quad_order=5` flag); line terms use 3-point Gauss, exact for P2*P2.

Forms, with v, vbar, psi velocities and p pressure:
    a(v, psi; mu) = mu * int grad v : grad psi
    b(v, p)       = -int (div v) p
    s(v, vbar, psi) = int (v . grad vbar) . psi
    m(v, psi)     = int_{Gamma_obs} v . psi     (observation line)
    r(u, tau)     = L2 product on the control support
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from dataclasses import dataclass, field
from enum import Enum

from .errors import ConfigError, GeometryError, StructuralError
from .linalg import csr_from_triplets
from .mesh import FacetTag, Mesh

# degree-4 (6 pt) and degree-5 (7 pt) symmetric triangle rules; barycentric
# orbit generators, weights normalized to sum to 1.
_RULE4 = [
    (0.108103018168070, 0.445948490915965, 0.445948490915965, 0.223381589678011),
    (0.445948490915965, 0.108103018168070, 0.445948490915965, 0.223381589678011),
    (0.445948490915965, 0.445948490915965, 0.108103018168070, 0.223381589678011),
    (0.816847572980459, 0.091576213509771, 0.091576213509771, 0.109951743655322),
    (0.091576213509771, 0.816847572980459, 0.091576213509771, 0.109951743655322),
    (0.091576213509771, 0.091576213509771, 0.816847572980459, 0.109951743655322),
]
_RULE5 = [
    (1 / 3, 1 / 3, 1 / 3, 0.225),
    (0.059715871789770, 0.470142064105115, 0.470142064105115, 0.132394152788506),
    (0.470142064105115, 0.059715871789770, 0.470142064105115, 0.132394152788506),
    (0.470142064105115, 0.470142064105115, 0.059715871789770, 0.132394152788506),
    (0.797426985353087, 0.101286507323456, 0.101286507323456, 0.125939180544827),
    (0.101286507323456, 0.797426985353087, 0.101286507323456, 0.125939180544827),
    (0.101286507323456, 0.101286507323456, 0.797426985353087, 0.125939180544827),
]
_GAUSS1D = (  # nodes/weights on [0,1], exact to degree 5
    np.array([0.5 - np.sqrt(15) / 10, 0.5, 0.5 + np.sqrt(15) / 10]),
    np.array([5 / 18, 8 / 18, 5 / 18]),
)


class ControlKind(Enum):
    NEUMANN = "neumann"          # line force on Gamma_out
    DISTRIBUTED = "distributed"  # volume force on Omega
    CHANNEL = "channel"          # line force on Gamma_ch
    DIRICHLET_BC = "dirichlet"   # boundary value on Gamma_D (multiplier path)


def _p2_basis(lam: np.ndarray):
    """P2 values and reference gradients at barycentric points lam (nq,3)."""
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    N = np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                  4 * l1 * l2, 4 * l0 * l2, 4 * l0 * l1], axis=1)
    d0, d1, d2 = np.array([-1.0, -1.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0])
    nq = lam.shape[0]
    dN = np.empty((nq, 6, 2))
    dN[:, 0] = (4 * l0 - 1)[:, None] * d0
    dN[:, 1] = (4 * l1 - 1)[:, None] * d1
    dN[:, 2] = (4 * l2 - 1)[:, None] * d2
    dN[:, 3] = 4 * (l2[:, None] * d1 + l1[:, None] * d2)
    dN[:, 4] = 4 * (l2[:, None] * d0 + l0[:, None] * d2)
    dN[:, 5] = 4 * (l1[:, None] * d0 + l0[:, None] * d1)
    return N, dN


@dataclass
class Field:
    role: str  # velocity | pressure | control
    values: np.ndarray


class TaylorHoodSpace:
    """Dof maps, quadrature geometry and mirror permutations on one mesh."""

    def __init__(self, mesh: Mesh, quad_order: int = 4):
        self.mesh = mesh
        rule = np.array(_RULE4 if quad_order == 4 else _RULE5)
        if quad_order not in (4, 5):
            raise ConfigError("quad_order must be 4 or 5")
        self.quad_order = quad_order
        lam, self.qw = rule[:, :3], rule[:, 3]
        self.nq = len(self.qw)
        self.N, self._dNref = _p2_basis(lam)
        self.lam = lam

        tris = mesh.triangles
        nt = len(tris)
        # edge table; local edge k is opposite local vertex k
        e_all = np.concatenate([tris[:, [1, 2]], tris[:, [0, 2]], tris[:, [0, 1]]])
        e_sorted = np.sort(e_all, axis=1)
        self.edges, inv = np.unique(e_sorted, axis=0, return_inverse=True)
        self.cell_edges = inv.reshape(3, nt).T
        self.n_edges = len(self.edges)
        self.n_vertices = mesh.n_vertices
        self.n_scalar = self.n_vertices + self.n_edges
        self.n_vel = 2 * self.n_scalar
        self.n_p = self.n_vertices
        self.edge_index = {(int(a), int(b)): i for i, (a, b) in enumerate(self.edges)}

        self.cell_p2 = np.hstack([tris, self.cell_edges + self.n_vertices])
        self.cell_vel = np.hstack([self.cell_p2, self.cell_p2 + self.n_scalar])
        self.node_coords = np.vstack([
            mesh.vertices,
            0.5 * (mesh.vertices[self.edges[:, 0]] + mesh.vertices[self.edges[:, 1]]),
        ])

        # affine geometry per cell
        p = mesh.vertices[tris]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # (nt,2,2)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if np.any(det <= 0):
            raise GeometryError("negative cell Jacobian")
        self.area = 0.5 * det
        Jinv = np.empty_like(J)
        Jinv[:, 0, 0] = J[:, 1, 1] / det
        Jinv[:, 0, 1] = -J[:, 0, 1] / det
        Jinv[:, 1, 0] = -J[:, 1, 0] / det
        Jinv[:, 1, 1] = J[:, 0, 0] / det
        # grad[c,q,a,:] = dNref[q,a,:] @ Jinv[c]
        self.grad = np.einsum("qak,cki->cqai", self._dNref, Jinv)
        self.qpoints = np.einsum("qv,cvi->cqi", lam, p)  # (nt,nq,2)
        self.wdet = self.qw[None, :] * self.area[:, None]  # weights sum to 1 per cell

        self._mirror_scalar = None

    # -- mirror maps ---------------------------------------------------------
    @property
    def mirror_scalar(self) -> np.ndarray:
        if self._mirror_scalar is None:
            mv = self.mesh.mirror_vertex
            perm = np.empty(self.n_scalar, dtype=np.int64)
            perm[: self.n_vertices] = mv
            me = np.sort(mv[self.edges], axis=1)
            for i, (a, b) in enumerate(me):
                perm[self.n_vertices + i] = self.n_vertices + self.edge_index[(int(a), int(b))]
            self._mirror_scalar = perm
        return self._mirror_scalar

    def mirror_velocity(self, vec: np.ndarray) -> np.ndarray:
        """Pullback under x2 -> 7.5-x2 with the vertical component negated."""
        perm = self.mirror_scalar
        out = np.empty_like(vec)
        out[: self.n_scalar] = vec[perm]
        out[self.n_scalar:] = -vec[self.n_scalar + perm]
        return out

    def mirror_pressure(self, vec: np.ndarray) -> np.ndarray:
        return vec[self.mesh.mirror_vertex]

    # -- helpers -------------------------------------------------------------
    def velocity_at_qpoints(self, vel: np.ndarray):
        """Values (nt,nq,2) and gradients (nt,nq,2,2) of a velocity vector."""
        coef = vel[self.cell_vel].reshape(-1, 2, 6)  # (nt, comp, a)
        vq = np.einsum("qa,cia->cqi", self.N, coef)
        gq = np.einsum("cqaj,cia->cqij", self.grad, coef)
        return vq, gq

    def scatter_matrix(self, local: np.ndarray, rowmap: np.ndarray, colmap: np.ndarray,
                       shape) -> sp.csr_matrix:
        rows = np.repeat(rowmap, colmap.shape[1], axis=1).ravel()
        cols = np.tile(colmap, (1, rowmap.shape[1])).ravel()
        return csr_from_triplets(shape[0], shape[1], (rows, cols, local.ravel()))

    def scatter_vector(self, local: np.ndarray, dofmap: np.ndarray, n: int) -> np.ndarray:
        return np.bincount(dofmap.ravel(), weights=local.ravel(), minlength=n)


# -- volume forms -------------------------------------------------------------

def _symmetrize(A: sp.csr_matrix) -> sp.csr_matrix:
    # exact bitwise symmetry for symmetric forms (einsum reassociation leaves
    # O(eps) asymmetry otherwise)
    return (0.5 * (A + A.T)).tocsr()


def assemble_scalar_stiffness(space: TaylorHoodSpace) -> sp.csr_matrix:
    loc = np.einsum("cq,cqai,cqbi->cab", space.wdet, space.grad, space.grad)
    return _symmetrize(space.scatter_matrix(loc, space.cell_p2, space.cell_p2,
                                            (space.n_scalar, space.n_scalar)))


def assemble_scalar_mass(space: TaylorHoodSpace) -> sp.csr_matrix:
    loc = np.einsum("cq,qa,qb->cab", space.wdet, space.N, space.N)
    return _symmetrize(space.scatter_matrix(loc, space.cell_p2, space.cell_p2,
                                            (space.n_scalar, space.n_scalar)))


def _vector_expand(space: TaylorHoodSpace, A: sp.csr_matrix) -> sp.csr_matrix:
    return sp.block_diag([A, A], format="csr")


def assemble_diffusion(space: TaylorHoodSpace, mu: float = 1.0) -> sp.csr_matrix:
    """K(mu) = mu * K(1), the vector-Laplacian stiffness matrix."""
    if mu < 0:
        raise ConfigError("viscosity must be nonnegative")
    K = _vector_expand(space, assemble_scalar_stiffness(space))
    return (mu * K).tocsr() if mu != 1.0 else K


def assemble_velocity_mass(space: TaylorHoodSpace) -> sp.csr_matrix:
    return _vector_expand(space, assemble_scalar_mass(space))


def assemble_pressure_mass(space: TaylorHoodSpace) -> sp.csr_matrix:
    loc = np.einsum("cq,qa,qb->cab", space.wdet, space.lam, space.lam)
    return _symmetrize(space.scatter_matrix(loc, space.mesh.triangles,
                                            space.mesh.triangles,
                                            (space.n_p, space.n_p)))


def assemble_divergence(space: TaylorHoodSpace) -> sp.csr_matrix:
    """D with (D v)_q = b(v, q) = -int (div v) q; shape (n_p, n_vel)."""
    # loc[c, a(P1), (i,b)] = -sum_q wdet lam_a dN_b/dx_i; cols comp-major i*6+b
    loc = -np.einsum("cq,qa,cqbi->caib", space.wdet, space.lam, space.grad).reshape(
        len(space.area), 3, 12)
    return space.scatter_matrix(loc, space.mesh.triangles, space.cell_vel,
                                (space.n_p, space.n_vel))


def convection_residual(space: TaylorHoodSpace, vel: np.ndarray) -> np.ndarray:
    """Vector of s(v, v, psi) over velocity test functions."""
    vq, gq = space.velocity_at_qpoints(vel)
    conv = np.einsum("cqj,cqij->cqi", vq, gq)           # (v.grad)v
    loc = np.einsum("cq,qa,cqi->cia", space.wdet, space.N, conv)  # (nt,comp,a)
    return space.scatter_vector(loc, space.cell_vel, space.n_vel)


def convection_first(space: TaylorHoodSpace, vel: np.ndarray) -> sp.csr_matrix:
    """Matrix of s(v, ., .): component-diagonal transport by v."""
    vq, _ = space.velocity_at_qpoints(vel)
    a1 = np.einsum("cq,qa,cqj,cqbj->cab", space.wdet, space.N, vq, space.grad)
    loc = np.zeros((len(space.area), 12, 12))
    loc[:, :6, :6] = a1
    loc[:, 6:, 6:] = a1
    return space.scatter_matrix(loc, space.cell_vel, space.cell_vel,
                                (space.n_vel, space.n_vel))


def convection_second(space: TaylorHoodSpace, vel: np.ndarray) -> sp.csr_matrix:
    """Matrix of s(., v, .): reaction against grad v, dense in components."""
    _, gq = space.velocity_at_qpoints(vel)
    # entry[(i,a),(d,b)] = int N_a N_b dv_i/dx_d
    blk = np.einsum("cq,qa,qb,cqid->ciadb", space.wdet, space.N, space.N, gq)
    loc = blk.reshape(len(space.area), 12, 12)
    return space.scatter_matrix(loc, space.cell_vel, space.cell_vel,
                                (space.n_vel, space.n_vel))


def convection_linearized(space: TaylorHoodSpace, vel: np.ndarray) -> sp.csr_matrix:
    """S[v] = s(v, ., .) + s(., v, .), the Newton linearization at v."""
    return (convection_first(space, vel) + convection_second(space, vel)).tocsr()


def convection_hessian(space: TaylorHoodSpace, w: np.ndarray) -> sp.csr_matrix:
    """D_v(S[v]^T)[w]: symmetric matrix with entries
    s(phi_j, phi_i, w) + s(phi_i, phi_j, w)."""
    wq, _ = space.velocity_at_qpoints(w)
    # B[(i,a),(d,b)] = int N_b dN_a/dx_d w_i = s(phi_(d,b), phi_(i,a), w)
    blk = np.einsum("cq,qb,cqad,cqi->ciadb", space.wdet, space.N, space.grad, wq)
    B = blk.reshape(len(space.area), 12, 12)
    Bm = space.scatter_matrix(B, space.cell_vel, space.cell_vel,
                              (space.n_vel, space.n_vel))
    return (Bm + Bm.T).tocsr()


def assemble_convection(space: TaylorHoodSpace, v: Field, mode: str):
    """Spec surface: residual -> vector; linearized -> S[v]; adjoint -> S[v]^T."""
    if v.role != "velocity":
        raise TypeError(f"convection needs a velocity Field, got {v.role!r}")
    if mode == "residual":
        return convection_residual(space, v.values)
    if mode == "linearized":
        return convection_linearized(space, v.values)
    if mode == "adjoint":
        return convection_linearized(space, v.values).T.tocsr()
    raise ConfigError(f"unknown convection mode {mode!r}")


# -- line (trace) machinery ----------------------------------------------------

@dataclass
class TraceSpace:
    """Vector P2 space restricted to an edge set; own contiguous numbering."""

    tags: tuple
    scalar_dofs: np.ndarray        # P2 scalar dofs on the line, sorted
    n_dofs: int                    # = 2 * len(scalar_dofs)
    restriction: sp.csr_matrix     # (n_dofs, n_vel) 0/1 map
    mass: sp.csr_matrix            # L2 line product in trace numbering
    length: float

    def scalar_coords(self, space: TaylorHoodSpace) -> np.ndarray:
        return space.node_coords[self.scalar_dofs]


def _facet_p2(space: TaylorHoodSpace, fac: np.ndarray) -> np.ndarray:
    """(nf,3) P2 scalar dofs [a, b, midpoint] per facet."""
    out = np.empty((len(fac), 3), dtype=np.int64)
    out[:, :2] = fac
    for i, (a, b) in enumerate(np.sort(fac, axis=1)):
        out[i, 2] = space.n_vertices + space.edge_index[(int(a), int(b))]
    return out


def trace_space(space: TaylorHoodSpace, tags, exclude_vertices=()) -> TraceSpace:
    """Build the trace space carried by the facet sets `tags`.

    `exclude_vertices` drops the trace dofs at the given mesh vertices (used
    to prune Gamma_D corners shared with strongly-constrained walls).
    """
    tags = tuple(tags) if isinstance(tags, (list, tuple)) else (tags,)
    fac = np.vstack([space.mesh.facet_set(t) for t in tags])
    fdofs = _facet_p2(space, fac)
    keep = np.setdiff1d(np.unique(fdofs), np.asarray(exclude_vertices, dtype=np.int64))
    index_of = {int(d): i for i, d in enumerate(keep)}
    ns = len(keep)

    # line mass in trace numbering (vector: two identical component blocks)
    xq, wq = _GAUSS1D
    shp = np.stack([(1 - xq) * (1 - 2 * xq), xq * (2 * xq - 1), 4 * xq * (1 - xq)], axis=1)
    rows, cols, vals = [], [], []
    total = 0.0
    pa, pb = space.mesh.vertices[fac[:, 0]], space.mesh.vertices[fac[:, 1]]
    lengths = np.linalg.norm(pb - pa, axis=1)
    mloc = np.einsum("q,qa,qb->ab", wq, shp, shp)
    for f in range(len(fac)):
        total += lengths[f]
        gl = [index_of.get(int(d), -1) for d in fdofs[f]]
        for a in range(3):
            if gl[a] < 0:
                continue
            for b in range(3):
                if gl[b] < 0:
                    continue
                rows.append(gl[a]); cols.append(gl[b]); vals.append(lengths[f] * mloc[a, b])
    Ms = csr_from_triplets(ns, ns, (np.array(rows), np.array(cols), np.array(vals)))
    mass = sp.block_diag([Ms, Ms], format="csr")

    rr = np.concatenate([np.arange(ns), np.arange(ns) + ns])
    cc = np.concatenate([keep, keep + space.n_scalar])
    R = csr_from_triplets(2 * ns, space.n_vel, (rr, cc, np.ones(2 * ns)))
    return TraceSpace(tags, keep, 2 * ns, R, mass, total)


def assemble_control_coupling(space: TaylorHoodSpace, kind: ControlKind):
    """(C_v, M_u, trace) for c(u, psi) = int_{Omega_u} u . psi.

    C_v has velocity rows and control columns; M_u is the control-space L2
    product. DIRICHLET_BC must go through the multiplier path instead.
    """
    if kind == ControlKind.DIRICHLET_BC:
        raise ConfigError("Dirichlet control couples through trace multipliers, "
                          "not a volume/line coupling; see the multiplier blocks")
    if kind == ControlKind.DISTRIBUTED:
        Mv = assemble_velocity_mass(space)
        return Mv.copy(), Mv.copy(), None
    tag = FacetTag.OUTLET if kind == ControlKind.NEUMANN else FacetTag.GAMMA_CH
    tr = trace_space(space, tag)
    C_v = (tr.restriction.T @ tr.mass).tocsr()
    return C_v, tr.mass.copy(), tr


def assemble_observation_mass(space: TaylorHoodSpace) -> sp.csr_matrix:
    """m(v, psi) = int_{Gamma_obs} v . psi as a (n_vel, n_vel) matrix."""
    tr = trace_space(space, FacetTag.GAMMA_OBS)
    return (tr.restriction.T @ tr.mass @ tr.restriction).tocsr()


# -- boundary conditions -------------------------------------------------------

def inflow_profile(y):
    return 20.0 * (5.0 - y) * (y - 2.5)


@dataclass
class VelocityBC:
    constrained: np.ndarray   # velocity dof indices, sorted
    values: np.ndarray        # prescribed values at those dofs
    free: np.ndarray          # complement

    def apply(self, vec: np.ndarray) -> np.ndarray:
        vec = vec.copy()
        vec[self.constrained] = self.values
        return vec

    def zero(self, n_vel: int) -> np.ndarray:
        out = np.zeros(n_vel)
        out[self.constrained] = self.values
        return out


def apply_inflow_lift(space: TaylorHoodSpace) -> Field:
    """Velocity equal to the inflow parabola on Gamma_in dofs, zero elsewhere.

    P2 nodal interpolation reproduces the quadratic profile exactly.
    """
    vals = np.zeros(space.n_vel)
    tr = trace_space(space, FacetTag.INLET)
    y = space.node_coords[tr.scalar_dofs, 1]
    vals[tr.scalar_dofs] = inflow_profile(y)
    return Field("velocity", vals)


def velocity_bc(space: TaylorHoodSpace, strong_tags, lift: Field | None = None) -> VelocityBC:
    """Strong (eliminated) velocity dofs on `strong_tags`, with lift values."""
    dofs = [trace_space(space, t).scalar_dofs for t in strong_tags]
    scal = np.unique(np.concatenate(dofs))
    constrained = np.concatenate([scal, scal + space.n_scalar])
    constrained.sort()
    values = (lift.values if lift is not None else np.zeros(space.n_vel))[constrained]
    free = np.setdiff1d(np.arange(space.n_vel), constrained, assume_unique=True)
    return VelocityBC(constrained, values, free)


def state_bc(space: TaylorHoodSpace, constrain_gamma_d: bool = True) -> VelocityBC:
    tags = [FacetTag.INLET, FacetTag.GAMMA_0]
    if constrain_gamma_d:
        tags.append(FacetTag.GAMMA_D)
    return velocity_bc(space, tags, apply_inflow_lift(space))


def homogeneous_bc(space: TaylorHoodSpace, bc: VelocityBC) -> VelocityBC:
    return VelocityBC(bc.constrained, np.zeros_like(bc.values), bc.free)


# -- inner products -------------------------------------------------------------

@dataclass
class InnerProducts:
    K1: sp.csr_matrix      # vector stiffness at mu = 1
    Mv: sp.csr_matrix      # velocity L2 mass
    Mp: sp.csr_matrix      # pressure L2 mass
    H1v: sp.csr_matrix     # K1 + Mv
    Mobs: sp.csr_matrix    # observation line product (form m)


def build_inner_products(space: TaylorHoodSpace) -> InnerProducts:
    K1 = assemble_diffusion(space, 1.0)
    Mv = assemble_velocity_mass(space)
    return InnerProducts(K1, Mv, assemble_pressure_mass(space),
                         (K1 + Mv).tocsr(), assemble_observation_mass(space))


# -- evaluation and export -------------------------------------------------------

def _locate(space: TaylorHoodSpace, point) -> tuple:
    p = np.asarray(point, dtype=float)
    verts = space.mesh.vertices[space.mesh.triangles]
    v0 = verts[:, 0]
    d = p[None, :] - v0
    e1 = verts[:, 1] - v0
    e2 = verts[:, 2] - v0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    l1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
    l2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
    l0 = 1.0 - l1 - l2
    viol = np.minimum(np.minimum(l0, l1), l2)
    c = int(np.argmax(viol))
    if viol[c] < -1e-10:
        raise GeometryError(f"point {tuple(p)} outside the domain")
    return c, np.array([l0[c], l1[c], l2[c]])


def evaluate_field(space: TaylorHoodSpace, f: Field, point, nearest_node: bool = False):
    """FE interpolation at a point (or value at the nearest P2/P1 node)."""
    if nearest_node:
        if f.role == "pressure":
            i = int(np.argmin(np.sum((space.mesh.vertices - point) ** 2, axis=1)))
            return f.values[i]
        i = int(np.argmin(np.sum((space.node_coords - point) ** 2, axis=1)))
        if f.role == "velocity":
            return np.array([f.values[i], f.values[i + space.n_scalar]])
        return f.values[i]
    c, lam = _locate(space, point)
    if f.role == "pressure":
        return float(f.values[space.mesh.triangles[c]] @ lam)
    N, _ = _p2_basis(lam[None, :])
    dofs = space.cell_p2[c]
    if f.role == "velocity":
        return np.array([f.values[dofs] @ N[0], f.values[dofs + space.n_scalar] @ N[0]])
    return float(f.values[dofs] @ N[0])


def export_field(f: Field, path) -> None:
    with open(path, "w") as fh:
        fh.write("field v1\n")
        fh.write(f"{f.role}\n{len(f.values)}\n")
        for v in f.values:
            fh.write(repr(float(v)) + "\n")


def import_field(path) -> Field:
    with open(path) as fh:
        if fh.readline().strip() != "field v1":
            raise StructuralError("bad field header")
        role = fh.readline().strip()
        n = int(fh.readline())
        vals = np.array([float(fh.readline()) for _ in range(n)])
    return Field(role, vals)


def slice_values(space: TaylorHoodSpace, vel: Field, x1: float, n_samples: int = 97):
    """(x2, vx, vy) samples along a vertical line x1 = const."""
    lo, hi = (2.5, 5.0) if x1 < 10.0 else (0.0, 7.5)
    ys = np.linspace(lo, hi, n_samples)
    out = np.empty((n_samples, 3))
    for i, y in enumerate(ys):
        vx, vy = evaluate_field(space, vel, (x1, y))
        out[i] = (y, vx, vy)
    return out


def write_slice_csv(space: TaylorHoodSpace, fields: dict, x1: float, path,
                    n_samples: int = 97) -> None:
    """CSV columns: x2 then (vx, vy, mag) per named velocity field."""
    names = list(fields)
    cols = {}
    for name in names:
        cols[name] = slice_values(space, fields[name], x1, n_samples)
    with open(path, "w", newline="") as fh:
        header = ["x2"]
        for name in names:
            header += [f"{name}_vx", f"{name}_vy", f"{name}_mag"]
        fh.write(",".join(header) + "\n")
        for i in range(n_samples):
            row = [repr(float(cols[names[0]][i, 0]))]
            for name in names:
                vx, vy = float(cols[name][i, 1]), float(cols[name][i, 2])
                row += [repr(vx), repr(vy), repr(float(np.hypot(vx, vy)))]
            fh.write(",".join(row) + "\n")


# -- inf-sup ---------------------------------------------------------------------

def brezzi_inf_sup(space: TaylorHoodSpace, bc: VelocityBC | None = None,
                   ip: InnerProducts | None = None,
                   velocity_metric: str = "seminorm") -> float:
    """Smallest generalized singular value of D on the constrained velocity
    space, measured in the (H1 velocity, L2 pressure) metrics.

    The default velocity metric is the Dirichlet (H1 seminorm) product, the
    natural norm on a space with essential boundary conditions; on this
    elongated domain the full H1 norm deflates the constant by the Poincare
    factor. "full" selects K1+Mv (the metric the reduced bases use).
    """
    import scipy.linalg as la

    ip = ip or build_inner_products(space)
    bc = bc or state_bc(space)
    D = assemble_divergence(space)[:, bc.free].tocsc()
    Hmat = ip.K1 if velocity_metric == "seminorm" else ip.H1v
    H = Hmat[bc.free][:, bc.free].tocsc()
    from .linalg import LuFactor
    lu = LuFactor(H)
    X = np.empty((D.shape[1], D.shape[0]))
    Dt = D.T.tocsc()
    for j in range(D.shape[0]):
        X[:, j] = lu.solve(Dt[:, j].toarray().ravel())
    S = D @ X
    lam = la.eigh(S, ip.Mp.toarray(), eigvals_only=True)
    return float(np.sqrt(max(lam.min(), 0.0)))
