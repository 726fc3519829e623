"""POD-Galerkin reduction of the optimality system.

Branch-wise snapshots are compressed per variable (metric-weighted POD via
the snapshot Gramian), the velocity block is supremizer-enriched and
aggregated across state/adjoint (interleaved [v_i, T_p_i, w_i, T_q_i] so a
truncation to n keeps n modes of each kind), pressures share a 2N block and
the control keeps N modes: 13N reduced unknowns, 15N with the Dirichlet
trace multipliers. The quadratic convection is projected exactly into a
third-order tensor over the aggregated velocity modes plus the inflow lift,
so the reduced system is mu-affine with no hyper-reduction error.
"""

from __future__ import annotations

import json
import warnings
import numpy as np
from dataclasses import dataclass, field
from pathlib import Path

from . import fem, ocp
from .errors import ConfigError, StructuralError
from .linalg import LuFactor
from .newton import newton_solve


@dataclass
class SnapshotSet:
    mus: np.ndarray
    data: dict                 # var -> (dim, n_snaps) columns aligned with mus
    label: str = ""

    def n_snapshots(self) -> int:
        return len(self.mus)


def collect_snapshots(op: "ocp.OcpOperator", branch) -> SnapshotSet:
    """Lift-subtracted free-dof snapshot matrices from a converged OCP branch."""
    entries = [e for e in branch.entries if e.converged]
    if not entries:
        raise StructuralError("branch has no converged entries")
    f = op.free
    cols = {k: [] for k in ("v", "p", "u", "w", "q")}
    if op.dirichlet:
        cols["lt"], cols["lx"] = [], []
    for e in entries:
        X = e.solution
        cols["v"].append((X.v - op.lift)[f])
        cols["p"].append(X.p)
        cols["u"].append(X.u)
        cols["w"].append(X.w[f])
        cols["q"].append(X.q)
        if op.dirichlet:
            cols["lt"].append(X.lam_adjoint)
            cols["lx"].append(X.lam_state)
    data = {k: np.column_stack(v) for k, v in cols.items()}
    return SnapshotSet(np.array([e.mu for e in entries]), data, branch.label)


@dataclass
class PodResult:
    modes: np.ndarray
    singular_values: np.ndarray
    rank: int


def pod(snapshots: np.ndarray, metric, N: int, rel_tol: float = 1e-13) -> PodResult:
    """First N metric-orthonormal modes maximizing captured energy.

    Orthonormalizes the snapshot span in the metric (modified Gram-Schmidt,
    two passes), then takes the SVD of the small projected block; unlike the
    plain snapshot Gramian this avoids squaring the conditioning, so weak
    modes stay accurate to machine precision. If the snapshots have rank < N
    the effective rank is returned with a warning.
    """
    S = np.asarray(snapshots, dtype=float)
    if N > S.shape[1]:
        raise ConfigError(f"N={N} exceeds snapshot count {S.shape[1]}")
    mdot = ((lambda a, b: a @ (metric @ b)) if metric is not None
            else (lambda a, b: a @ b))
    Q = []
    for j in range(S.shape[1]):
        c = S[:, j].copy()
        ref = np.sqrt(max(mdot(c, c), 0.0))
        for _ in range(2):
            for q in Q:
                c = c - q * mdot(q, c)
        nrm = np.sqrt(max(mdot(c, c), 0.0))
        if nrm > 1e-13 * max(ref, 1e-300):
            Q.append(c / nrm)
    if not Q:
        raise ConfigError("snapshot set is identically zero")
    Q = np.column_stack(Q)
    B = Q.T @ (metric @ S) if metric is not None else Q.T @ S
    U, sv, _ = np.linalg.svd(B, full_matrices=False)
    rank = int(np.sum(sv > rel_tol * max(sv[0], 1e-300)))
    # retention is limited by the orthonormalizable span, not the sigma-based
    # rank: weak modes far below sigma_1 are still well-defined directions and
    # keeping them lets the reduced space reach the requested uniform size
    n_keep = min(N, Q.shape[1])
    if n_keep < N:
        warnings.warn(f"snapshot span dimension {Q.shape[1]} below requested "
                      f"N={N}; truncating")
    modes = Q @ U[:, :n_keep]
    sv_full = np.concatenate([sv, np.zeros(S.shape[1] - len(sv))])
    return PodResult(modes, sv_full, rank)


class SupremizerOperator:
    """Riesz representer of b(., s) in the velocity inner product.

    Solves (T s, phi)_V = b(phi, s) on the free velocity dofs; the forms here
    are viscosity-independent, so one factorization serves every mode.
    """

    def __init__(self, op: "ocp.OcpOperator"):
        f = op.free
        self._lu = LuFactor(op.ip.H1v[f][:, f].tocsc())
        self._Dt = op.D[:, f].T.tocsc()

    def __call__(self, p_coeffs: np.ndarray) -> np.ndarray:
        return self._lu.solve(self._Dt @ p_coeffs)


def compute_supremizer(op: "ocp.OcpOperator", p_mode: fem.Field,
                       mu_bar: float | None = None) -> fem.Field:
    """Spec surface for one pressure mode; mu_bar is accepted for symmetry
    with parametrized couplings (b carries no viscosity here)."""
    T = SupremizerOperator(op)(p_mode.values)
    full = np.zeros(op.space.n_vel)
    full[op.free] = T
    return fem.Field("velocity", full)


def _metric_gram_schmidt(V: np.ndarray, metric, passes: int = 2,
                         drop_tol: float = 1e-10) -> np.ndarray:
    out = V.copy()
    n = out.shape[1]
    for j in range(n):
        col = out[:, j]
        for _ in range(passes):
            if j:
                proj = out[:, :j].T @ (metric @ col)
                col = col - out[:, :j] @ proj
        nrm = float(np.sqrt(col @ (metric @ col)))
        ref = float(np.sqrt(V[:, j] @ (metric @ V[:, j])))
        if nrm < drop_tol * max(ref, 1e-300):
            raise StructuralError(
                f"aggregated basis column {j} is rank deficient; "
                "insufficient snapshots for the requested N")
        out[:, j] = col / nrm
    return out


@dataclass
class ReducedBasis:
    """Interleaved aggregated blocks; truncation to n slices leading columns."""

    N: int
    Z_v: np.ndarray               # (n_vfree, 4N): [v_i, Tp_i, w_i, Tq_i] per i
    Z_p: np.ndarray               # (n_p, 2N): [p_i, q_i] per i
    Z_u: np.ndarray               # (n_u, N)
    Z_lt: np.ndarray | None = None
    Z_lx: np.ndarray | None = None
    singular_values: dict = field(default_factory=dict)
    supremizers_enabled: bool = True
    seed: dict | None = None            # projected snapshots, per block
    seed_mus: np.ndarray | None = None

    @property
    def total_dimension(self) -> int:
        # 4N (v) + 2N (p) + N (u) + 4N (w) + 2N (q) [+ N + N]
        d = 2 * self.Z_v.shape[1] + 2 * self.Z_p.shape[1] + self.Z_u.shape[1]
        if self.Z_lt is not None:
            d += self.Z_lt.shape[1] + self.Z_lx.shape[1]
        return d

    def widths(self, n: int) -> tuple:
        """(velocity block, pressure block, control block) widths at size n."""
        per = 4 if self.supremizers_enabled else 2
        return per * n, 2 * n, n


def build_aggregated_basis(op: "ocp.OcpOperator", snaps: SnapshotSet, N: int,
                           supremizers: bool = True) -> ReducedBasis:
    """Supremizer-enriched aggregated POD basis of size N per variable.

    All variables share one basis size for the 13N/15N block structure; if
    some variable's snapshots are numerically rank deficient, N degrades to
    the smallest effective rank (the discarded modes carry relative energy
    below the POD rank tolerance). Requesting more modes than snapshots is
    an error.
    """
    if N > snaps.n_snapshots():
        raise StructuralError(f"insufficient snapshots ({snaps.n_snapshots()}) "
                              f"for N={N}")
    f = op.free
    Hv = op.ip.H1v[f][:, f].tocsr()
    pods = {}
    metrics = {"v": Hv, "w": Hv, "p": op.ip.Mp, "q": op.ip.Mp, "u": op.M_u}
    if op.dirichlet:
        metrics["lt"] = metrics["lx"] = op.M_u
    for var, M in metrics.items():
        pods[var] = pod(snaps.data[var], M, N)
    n_eff = min(p.modes.shape[1] for p in pods.values())
    if n_eff < N:
        warnings.warn(f"snapshot rank limits the aggregated basis to N={n_eff} "
                      f"(requested {N})")
        N = n_eff
    sup = SupremizerOperator(op)
    per = 4 if supremizers else 2
    nv = len(f)
    Z_v = np.empty((nv, per * N))
    for i in range(N):
        if supremizers:
            Z_v[:, 4 * i] = pods["v"].modes[:, i]
            Z_v[:, 4 * i + 1] = sup(pods["p"].modes[:, i])
            Z_v[:, 4 * i + 2] = pods["w"].modes[:, i]
            Z_v[:, 4 * i + 3] = sup(pods["q"].modes[:, i])
        else:
            Z_v[:, 2 * i] = pods["v"].modes[:, i]
            Z_v[:, 2 * i + 1] = pods["w"].modes[:, i]
    Z_v = _metric_gram_schmidt(Z_v, Hv)
    Z_p = np.empty((op.n_p, 2 * N))
    Z_p[:, 0::2] = pods["p"].modes[:, :N]
    Z_p[:, 1::2] = pods["q"].modes[:, :N]
    Z_p = _metric_gram_schmidt(Z_p, op.ip.Mp)
    Z_u = _metric_gram_schmidt(pods["u"].modes[:, :N], op.M_u)
    basis = ReducedBasis(N, Z_v, Z_p, Z_u,
                         singular_values={k: p.singular_values for k, p in pods.items()},
                         supremizers_enabled=supremizers)
    if op.dirichlet:
        basis.Z_lt = _metric_gram_schmidt(pods["lt"].modes[:, :N], op.M_u)
        basis.Z_lx = _metric_gram_schmidt(pods["lx"].modes[:, :N], op.M_u)
    # projected snapshots: branch-faithful seeds for the online solves
    basis.seed_mus = snaps.mus.copy()
    basis.seed = {
        "v": Z_v.T @ (Hv @ snaps.data["v"]),
        "p": Z_p.T @ (op.ip.Mp @ snaps.data["p"]),
        "u": Z_u.T @ (op.M_u @ snaps.data["u"]),
        "w": Z_v.T @ (Hv @ snaps.data["w"]),
        "q": Z_p.T @ (op.ip.Mp @ snaps.data["q"]),
    }
    if op.dirichlet:
        basis.seed["lt"] = basis.Z_lt.T @ (op.M_u @ snaps.data["lt"])
        basis.seed["lx"] = basis.Z_lx.T @ (op.M_u @ snaps.data["lx"])
    return basis


@dataclass
class ReducedOperators:
    """mu-affine reduced blocks and the exact quadratic convection tensor."""

    op: "ocp.OcpOperator"
    basis: ReducedBasis
    K_N: np.ndarray               # (4N,4N)
    Mobs_N: np.ndarray            # (4N,4N)
    D_N: np.ndarray               # (2N,4N)
    C_N: np.ndarray | None        # (4N,Nu)
    Mu_N: np.ndarray              # (Nu,Nu)
    tensor: np.ndarray            # (4N+1,4N+1,4N+1); index 0 = lift
    k_lift: np.ndarray            # Z' K1 lift
    d_lift: np.ndarray            # Z_p' D lift
    mobs_lift_vd: np.ndarray      # Z' Mobs (lift - v_d)
    Tr_v: np.ndarray | None = None   # Z_l' Tr Z_v (Dirichlet)
    tr_lift: np.ndarray | None = None
    Mu_xu: np.ndarray | None = None  # Z_lx' M_u Z_u
    Mu_ux: np.ndarray | None = None
    Tr_v_t: np.ndarray | None = None

    def truncate_info(self, n: int):
        b = self.basis
        kv, kp, ku = b.widths(n)
        return kv, kp, ku


def project_operators(op: "ocp.OcpOperator", basis: ReducedBasis) -> ReducedOperators:
    """Galerkin projection of every block; convection becomes a third-order
    tensor t[i,j,k] = s(zeta_i, zeta_j, zeta_k) over [lift] + velocity modes."""
    space = op.space
    f = op.free
    kv = basis.Z_v.shape[1]
    Zfull = np.zeros((space.n_vel, kv + 1))
    Zfull[:, 0] = op.lift
    Zfull[f, 1:] = basis.Z_v
    Z = Zfull[:, 1:]

    K_N = Z.T @ (op.ip.K1 @ Z)
    Mobs_N = Z.T @ (op.ip.Mobs @ Z)
    D_N = basis.Z_p.T @ (op.D @ Z)
    Mu_N = basis.Z_u.T @ (op.M_u @ basis.Z_u)
    C_N = None if op.dirichlet else Z.T @ (op.C_v @ basis.Z_u)

    ne = kv + 1
    tensor = np.empty((ne, ne, ne))
    for i in range(ne):
        C1 = fem.convection_first(space, Zfull[:, i])
        tensor[i] = (Zfull.T @ (C1 @ Zfull)).T  # [j,k] -> s(z_i, z_j, z_k)

    rops = ReducedOperators(
        op, basis, K_N, Mobs_N, D_N, C_N, Mu_N, tensor,
        k_lift=Z.T @ (op.ip.K1 @ op.lift),
        d_lift=basis.Z_p.T @ (op.D @ op.lift),
        mobs_lift_vd=Z.T @ (op.ip.Mobs @ (op.lift - op.v_d)))
    if op.dirichlet:
        rops.Tr_v = basis.Z_lx.T @ (op.Tr @ Zfull[:, 1:])
        rops.Tr_v_t = basis.Z_lt.T @ (op.Tr @ Zfull[:, 1:])
        rops.tr_lift = basis.Z_lx.T @ (op.Tr @ op.lift)
        rops.Mu_xu = basis.Z_lx.T @ (op.M_u @ basis.Z_u)
    return rops


class ReducedSolver:
    """Dense Newton on the 13N (15N) reduced optimality system at size n."""

    def __init__(self, rops: ReducedOperators, n: int):
        b = rops.basis
        if n > b.N:
            raise ConfigError(f"truncation n={n} exceeds basis size {b.N}")
        self.rops = rops
        self.n = n
        kv, kp, ku = b.widths(n)
        self.kv, self.kp, self.ku = kv, kp, ku
        self.dirichlet = rops.op.dirichlet
        self.alpha = rops.op.config.alpha
        iv = np.arange(kv)
        self.K = rops.K_N[np.ix_(iv, iv)]
        self.Mobs = rops.Mobs_N[np.ix_(iv, iv)]
        self.D = rops.D_N[np.ix_(np.arange(kp), iv)]
        self.Mu = rops.Mu_N[:ku, :ku]
        self.C = None if rops.C_N is None else rops.C_N[np.ix_(iv, np.arange(ku))]
        tsel = np.concatenate([[0], 1 + iv])
        self.T = rops.tensor[np.ix_(tsel, tsel, tsel)]
        self.k_lift = rops.k_lift[:kv]
        self.d_lift = rops.d_lift[:kp]
        self.mobs_lift_vd = rops.mobs_lift_vd[:kv]
        sizes = [kv, kp, ku, kv, kp]
        if self.dirichlet:
            sizes += [n, n]
            self.Tr_v = rops.Tr_v[:n, :kv]
            self.Tr_v_t = rops.Tr_v_t[:n, :kv]
            self.tr_lift = rops.tr_lift[:n]
            self.Mu_xu = rops.Mu_xu[:n, :ku]
        self.sizes = sizes
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.n_dofs = int(self.offsets[-1])

    def split(self, x):
        return [x[self.offsets[i]:self.offsets[i + 1]] for i in range(len(self.sizes))]

    # tensor contractions; av includes the implicit lift coefficient 1
    def _ext(self, av):
        return np.concatenate([[1.0], av])

    def residual(self, x: np.ndarray, mu: float) -> np.ndarray:
        parts = self.split(x)
        av, ap, au, aw, aq = parts[:5]
        ev, ew = self._ext(av), np.concatenate([[0.0], aw])
        T = self.T
        # t[i,j,k] = s(z_i, z_j, z_k); conv_k = s(v,v,z_k), sTw_k = s(v,z_k,w)+s(z_k,v,w)
        conv = np.einsum("i,j,ijk->k", ev, ev, T)[1:]
        sTw = (np.einsum("i,j,ikj->k", ev, ew, T)
               + np.einsum("i,j,kij->k", ev, ew, T))[1:]
        r_v = (self.Mobs @ av + self.mobs_lift_vd + mu * (self.K @ aw) + sTw
               + self.D.T @ aq)
        r_p = self.D @ aw
        r_w = (mu * (self.K @ av + self.k_lift) + conv + self.D.T @ ap)
        r_u = self.alpha * (self.Mu @ au)
        if self.dirichlet:
            alt, alx = parts[5], parts[6]
            r_v = r_v + self.Tr_v.T @ alx
            r_w = r_w + self.Tr_v_t.T @ alt
            r_u = r_u - self.Mu_xu.T @ alx
            r_t = self.Tr_v_t @ aw
            r_x = self.Tr_v @ av + self.tr_lift - self.Mu_xu @ au
        else:
            r_w = r_w - self.C @ au
            r_u = r_u - self.C.T @ aw
        r_q = self.D @ av + self.d_lift
        parts_out = [r_v, r_p, r_u, r_w, r_q]
        if self.dirichlet:
            parts_out += [r_t, r_x]
        return np.concatenate(parts_out)

    def _conv_matrices(self, av, aw):
        """(S_red[v], T_red[w]) at the current reduced state."""
        ev, ew = self._ext(av), np.concatenate([[0.0], aw])
        T = self.T
        # S_red[k,j] = sum_i ev_i (t[i,j,k] + t[j,i,k])
        S = (np.einsum("i,ijk->jk", ev, T) + np.einsum("i,jik->jk", ev, T))[1:, 1:].T
        # T_red[k,i] = sum_j ew_j (t[i,k,j] + t[k,i,j]); symmetric by construction
        Tw = (np.einsum("ikj,j->ik", T, ew) + np.einsum("kij,j->ik", T, ew))[1:, 1:].T
        return S, Tw

    def jacobian(self, x: np.ndarray, mu: float) -> np.ndarray:
        parts = self.split(x)
        av, aw = parts[0], parts[3]
        S, Tw = self._conv_matrices(av, aw)
        kv, kp, ku = self.kv, self.kp, self.ku
        J = np.zeros((self.n_dofs, self.n_dofs))
        o = self.offsets
        B = mu * self.K + S

        def put(i, j, M):
            J[o[i]:o[i + 1], o[j]:o[j + 1]] = M

        put(0, 0, self.Mobs + Tw)
        put(0, 3, B.T)
        put(0, 4, self.D.T)
        put(1, 3, self.D)
        put(2, 2, self.alpha * self.Mu)
        put(3, 0, B)
        put(3, 1, self.D.T)
        put(4, 0, self.D)
        if self.dirichlet:
            put(2, 6, -self.Mu_xu.T)
            put(6, 2, -self.Mu_xu)
            put(0, 6, self.Tr_v.T)
            put(6, 0, self.Tr_v)
            put(3, 5, self.Tr_v_t.T)
            put(5, 3, self.Tr_v_t)
        else:
            put(2, 3, -self.C.T)
            put(3, 2, -self.C)
        return J

    def seed(self, mu: float | None = None) -> np.ndarray | None:
        """Projection of the offline snapshot nearest `mu` (first if None),
        truncated to this solver's size; keeps online solves on the sampled
        branch through the bifurcation."""
        b = self.rops.basis
        s = b.seed
        if s is None:
            return None
        j = 0 if mu is None else int(np.argmin(np.abs(b.seed_mus - mu)))
        parts = [s["v"][: self.kv, j], s["p"][: self.kp, j], s["u"][: self.ku, j],
                 s["w"][: self.kv, j], s["q"][: self.kp, j]]
        if self.dirichlet:
            parts += [s["lt"][: self.n, j], s["lx"][: self.n, j]]
        return np.concatenate(parts)

    def solve(self, mu: float, guess: np.ndarray | None = None, tol: float = 1e-10,
              max_iter: int = 50):
        if guess is None:
            guess = self.seed(mu)
        x0 = np.zeros(self.n_dofs) if guess is None else guess
        return newton_solve(lambda y: self.residual(y, mu),
                            lambda y: self.jacobian(y, mu), x0,
                            tol=tol, max_iter=max_iter,
                            solve=lambda J, r: np.linalg.solve(J, r))

    # -- lifting --------------------------------------------------------------
    def lift_solution(self, x: np.ndarray) -> "ocp.OptimalityVector":
        op, b = self.rops.op, self.rops.basis
        parts = self.split(x)
        v = op.lift.copy()
        v[op.free] += b.Z_v[:, :self.kv] @ parts[0]
        w = np.zeros(op.space.n_vel)
        w[op.free] = b.Z_v[:, :self.kv] @ parts[3]
        X = ocp.OptimalityVector(v, b.Z_p[:, :self.kp] @ parts[1],
                                 b.Z_u[:, :self.ku] @ parts[2], w,
                                 b.Z_p[:, :self.kp] @ parts[4])
        if self.dirichlet:
            X.lam_adjoint = b.Z_lt[:, :self.n] @ parts[5]
            X.lam_state = b.Z_lx[:, :self.n] @ parts[6]
        return X

    def project(self, X: "ocp.OptimalityVector") -> np.ndarray:
        """Metric-orthogonal projection of a full-order solution (initial guesses)."""
        op, b = self.rops.op, self.rops.basis
        f = op.free
        Hv = op.ip.H1v[f][:, f]
        Zv = b.Z_v[:, :self.kv]
        av = Zv.T @ (Hv @ (X.v - op.lift)[f])
        aw = Zv.T @ (Hv @ X.w[f])
        Zp = b.Z_p[:, :self.kp]
        ap = Zp.T @ (op.ip.Mp @ X.p)
        aq = Zp.T @ (op.ip.Mp @ X.q)
        au = b.Z_u[:, :self.ku].T @ (op.M_u @ X.u)
        parts = [av, ap, au, aw, aq]
        if self.dirichlet:
            parts += [b.Z_lt[:, :self.n].T @ (op.M_u @ X.lam_adjoint),
                      b.Z_lx[:, :self.n].T @ (op.M_u @ X.lam_state)]
        return np.concatenate(parts)

    def reduced_brezzi(self, x: np.ndarray, mu: float) -> float:
        """Smallest singular value of the reduced constraint block B_N(mu).

        Bases are orthonormal in their metrics, so the generalized singular
        value reduces to the plain sigma_min of the assembled block.
        """
        av = self.split(x)[0]
        S, _ = self._conv_matrices(av, np.zeros(self.kv))
        B = np.zeros((self.kv + self.kp, self.kv + self.kp + self.ku))
        B[: self.kv, : self.kv] = mu * self.K + S
        B[: self.kv, self.kv:self.kv + self.kp] = self.D.T
        B[self.kv:, : self.kv] = self.D
        if self.C is not None:
            B[: self.kv, self.kv + self.kp:] = -self.C
        return float(np.linalg.svd(B, compute_uv=False)[-1])


def rom_continue(rops: ReducedOperators, mus, n: int, guess: np.ndarray | None = None,
                 tol: float = 1e-10, max_iter: int = 50, on_failure: str = "raise"):
    """Online sweep, each solve seeded by the nearest projected snapshot
    (falling back to the previous solution); returns (solver, solutions,
    infos). Snapshot seeding keeps the reduced Newton on the sampled branch
    through the bifurcation, where a plainly warm-started continuation can
    slide onto the coexisting branch. on_failure="skip" records a None
    solution for a diverged parameter (the paper flags reduced robustness
    issues for the 15N multiplier systems).
    """
    from .errors import NewtonDivergenceError

    solver = ReducedSolver(rops, n)
    sols, infos = [], []
    prev = guess
    for mu in mus:
        try:
            x, info = solver.solve(mu, None if guess is None else prev,
                                   tol=tol, max_iter=max_iter)
        except NewtonDivergenceError:
            try:  # retry from the other guess family
                x, info = solver.solve(mu, prev if guess is None else None,
                                       tol=tol, max_iter=max_iter)
            except NewtonDivergenceError:
                if on_failure == "raise":
                    raise
                sols.append(None)
                infos.append(None)
                continue
        sols.append(x)
        infos.append(info)
        prev = x.copy()
    return solver, sols, infos


# -- error studies ----------------------------------------------------------------

VAR_ORDER = ("v", "p", "u", "w", "q")
ABS_ERROR_FLOOR = 1e-6   # below this truth norm, report absolute errors


def _norms(op: "ocp.OcpOperator"):
    f = op.free
    Hv = op.ip.H1v[f][:, f]
    return {"v": lambda z: np.sqrt(z[f] @ (Hv @ z[f])),
            "w": lambda z: np.sqrt(z[f] @ (Hv @ z[f])),
            "p": lambda z: np.sqrt(z @ (op.ip.Mp @ z)),
            "q": lambda z: np.sqrt(z @ (op.ip.Mp @ z)),
            "u": lambda z: np.sqrt(z @ (op.M_u @ z))}


def solution_errors(op: "ocp.OcpOperator", X_fe: "ocp.OptimalityVector",
                    X_rom: "ocp.OptimalityVector") -> dict:
    """Per-variable errors in the variable inner-product norms; relative
    unless the truth magnitude is near zero (then absolute, err_kind 'abs')."""
    norms = _norms(op)
    out = {}
    for var in VAR_ORDER:
        d = getattr(X_rom, var) - getattr(X_fe, var)
        nrm = norms[var](getattr(X_fe, var) - (op.lift if var == "v" else 0.0))
        err = norms[var](d)
        if nrm > ABS_ERROR_FLOOR:
            out[var] = (float(err / nrm), "rel")
        else:
            out[var] = (float(err), "abs")
    return out


@dataclass
class ErrorStudy:
    avg_by_N: dict      # N -> {var: avg err}
    by_mu: dict         # mu -> {var: (err, kind)} at N = Nbar
    N_list: list
    mus: np.ndarray


def error_study(rops: ReducedOperators, truth, test_mus, N_list) -> ErrorStudy:
    """Average error vs N and mu-dependent error at the largest N.

    `truth` maps mu -> full-order OptimalityVector (computed on demand or
    cached by the caller). All N share one basis (truncations, no re-POD).
    """
    op = rops.op
    test_mus = np.asarray(test_mus)
    fes = [truth(mu) for mu in test_mus]
    avg_by_N = {}
    by_mu = {}
    for n in N_list:
        solver, sols, _ = rom_continue(rops, test_mus, n, on_failure="skip")
        errs = {var: [] for var in VAR_ORDER}
        for mu, x, X_fe in zip(test_mus, sols, fes):
            if x is None:
                e = {var: (np.nan, "failed") for var in VAR_ORDER}
            else:
                e = solution_errors(op, X_fe, solver.lift_solution(x))
            for var in VAR_ORDER:
                errs[var].append(e[var][0])
            if n == max(N_list):
                by_mu[float(mu)] = e
        avg_by_N[n] = {var: float(np.nanmean(v)) for var, v in errs.items()}
    return ErrorStudy(avg_by_N, by_mu, list(N_list), test_mus)


def write_error_csvs(study: ErrorStudy, avg_path, mu_path) -> None:
    with open(avg_path, "w", newline="") as f:
        f.write("N,var,avg_rel_err\n")
        for n in study.N_list:
            for var in VAR_ORDER:
                f.write(f"{n},{var},{float(study.avg_by_N[n][var])!r}\n")
    with open(mu_path, "w", newline="") as f:
        f.write("mu,var,err,err_kind\n")
        for mu in study.by_mu:
            for var in VAR_ORDER:
                err, kind = study.by_mu[mu][var]
                f.write(f"{float(mu)!r},{var},{float(err)!r},{kind}\n")


# -- snapshot archive ---------------------------------------------------------------

def save_snapshots(snaps: SnapshotSet, outdir) -> None:
    """Manifest JSON + little-endian float64 binary blob per variable."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {"mu_list": snaps.mus.tolist(), "label": snaps.label,
                "variables": {}}
    for var, M in snaps.data.items():
        fname = f"{var}.bin"
        M.astype("<f8").tofile(outdir / fname)
        manifest["variables"][var] = {"file": fname, "dims": list(M.shape),
                                      "metric": {"v": "H1", "w": "H1", "p": "L2",
                                                 "q": "L2"}.get(var, "L2-control")}
    (outdir / "snapshots.json").write_text(json.dumps(manifest, indent=1))


def load_snapshots(outdir) -> SnapshotSet:
    outdir = Path(outdir)
    manifest = json.loads((outdir / "snapshots.json").read_text())
    data = {}
    for var, rec in manifest["variables"].items():
        M = np.fromfile(outdir / rec["file"], dtype="<f8")
        data[var] = M.reshape(rec["dims"])
    return SnapshotSet(np.array(manifest["mu_list"]), data, manifest["label"])
