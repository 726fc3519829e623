"""Coupled optimality systems (state + adjoint + optimality) for four controls.

Unknown ordering X = (v, p, u, w, q) with (v,p) state, u control, (w,q)
adjoint; the Dirichlet-control case appends two trace multiplier blocks
(lam_adjoint pairing the state equation, lam_state enforcing v = u on
Gamma_D). The Newton matrix is the Hessian of the Lagrangian, hence exactly
symmetric:

    [ Mobs + T[w]   0      0       K^T+S[v]^T   D^T  | Tr^T      ]
    [ 0             0      0       D            0    |           ]
    [ 0             0      aMu     -C^T         0    |      -Mu  ]
    [ K+S[v]        D^T    -C      0            0    |           ]
    [ D             0      0       0            0    |           ]
    [ ------------------------------------------------           ]
    [ Tr(w row)                                     0            ]
    [ Tr(v row)            -Mu                      0            ]

with T[w] the convection Hessian and Tr the Gamma_D trace pairing.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from dataclasses import dataclass, field

from . import fem, ns
from .errors import ConfigError, NewtonDivergenceError, StructuralError
from .fem import ControlKind
from .linalg import BlockMatrix
from .newton import newton_solve

BELOW_MACHINE_EPS = 1e-14

GAMMA_D_CORNER_POINTS = ((10.0, 0.0), (10.0, 2.5), (10.0, 5.0), (10.0, 7.5))


@dataclass
class OcpConfig:
    kind: ControlKind
    alpha: float
    target: str = "symmetric"          # symmetric | asymmetric
    mu_d: float | None = None          # asymmetric-target viscosity (default 0.5)

    def __post_init__(self):
        if not (0 < self.alpha <= 1):
            raise ConfigError("penalization alpha must lie in (0, 1]")
        if self.target not in ("symmetric", "asymmetric"):
            raise ConfigError(f"unknown target {self.target!r}")


@dataclass
class CostReport:
    J: float
    tracking: float
    penalty: float
    below_machine_epsilon: bool

    @classmethod
    def from_terms(cls, tracking: float, penalty: float) -> "CostReport":
        J = tracking + penalty
        return cls(J, tracking, penalty, J < BELOW_MACHINE_EPS)


@dataclass
class OptimalityVector:
    """Full-length coefficient blocks for one parameter value."""

    v: np.ndarray
    p: np.ndarray
    u: np.ndarray
    w: np.ndarray
    q: np.ndarray
    lam_state: np.ndarray | None = None    # enforces v = u on Gamma_D
    lam_adjoint: np.ndarray | None = None  # enforces w = 0 on Gamma_D


def _corner_vertex_dofs(space: fem.TaylorHoodSpace) -> np.ndarray:
    """Scalar dofs at the four Gamma_D corner vertices shared with Gamma_0."""
    out = []
    for pt in GAMMA_D_CORNER_POINTS:
        d2 = np.sum((space.mesh.vertices - np.asarray(pt)) ** 2, axis=1)
        i = int(np.argmin(d2))
        if d2[i] > 1e-18:
            raise StructuralError(f"Gamma_D corner {pt} is not a mesh vertex")
        out.append(i)
    return np.array(sorted(out), dtype=np.int64)


def build_dirichlet_multiplier_blocks(space: fem.TaylorHoodSpace):
    """Trace-coupling matrices for weakly imposing v=u and w=0 on Gamma_D.

    Returns (Tr, M_u, trace): Tr pairs the (corner-pruned) P2 trace
    multipliers with full velocity dofs, M_u is the line mass on the pruned
    trace space, shared by the control and both multipliers. Corner dofs at
    the Gamma_0 junctions are removed from the trace space; the velocity is
    strongly zero there, and keeping them would leave the trace residual
    v - u with an unconstrainable corner component.
    """
    full = fem.trace_space(space, fem.FacetTag.GAMMA_D)
    if full.n_dofs == 0:
        raise ConfigError("empty Gamma_D dof set")
    corners = _corner_vertex_dofs(space)
    pruned = fem.trace_space(space, fem.FacetTag.GAMMA_D, exclude_vertices=corners)
    sel_scal = np.searchsorted(full.scalar_dofs, pruned.scalar_dofs)
    ns_full = len(full.scalar_dofs)
    sel = np.concatenate([sel_scal, sel_scal + ns_full])
    Tr = (full.mass @ full.restriction)[sel, :].tocsr()
    M_u = full.mass[sel][:, sel].tocsr()
    return Tr, M_u, pruned


class OcpOperator:
    """Assembled operators for one (space, control configuration) pair."""

    def __init__(self, space: fem.TaylorHoodSpace, config: OcpConfig,
                 ip: fem.InnerProducts | None = None,
                 target: fem.Field | None = None,
                 state_op: ns.StateOperator | None = None):
        self.space = space
        self.config = config
        self.ip = ip or fem.build_inner_products(space)
        self.state_op = state_op or ns.StateOperator(space, self.ip,
                                                     constrain_gamma_d=True)
        self.D = self.state_op.D
        self.K1 = self.ip.K1
        self.Mobs = self.ip.Mobs
        self.dirichlet = config.kind == ControlKind.DIRICHLET_BC
        self.bc = fem.state_bc(space, constrain_gamma_d=not self.dirichlet)
        self.lift = fem.apply_inflow_lift(space).values

        if self.dirichlet:
            self.Tr, self.M_u, self.trace = build_dirichlet_multiplier_blocks(space)
            self.C_v = None
            self.n_lam = self.Tr.shape[0]
        else:
            self.C_v, self.M_u, self.trace = fem.assemble_control_coupling(space, config.kind)
            self.Tr, self.n_lam = None, 0
        self.n_u = self.M_u.shape[0]

        if target is not None:
            self.target = target
        else:
            self.target = ns.make_target(self.state_op, config.target, config.mu_d)
        self.v_d = self.target.values

        f = self.bc.free
        self.free = f
        self.n_vf = len(f)
        self.n_p = space.n_p
        sizes = [self.n_vf, self.n_p, self.n_u, self.n_vf, self.n_p]
        if self.dirichlet:
            sizes += [self.n_lam, self.n_lam]
        self.block_sizes = sizes
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.n_dofs = int(self.offsets[-1])

        # mu-independent restricted blocks
        self.D_f = self.D[:, f].tocsr()
        self.K1_ff = self.K1[f][:, f].tocsr()
        self.Mobs_ff = self.Mobs[f][:, f].tocsr()
        self.mobs_rhs = (self.Mobs @ self.v_d)[f] - (self.Mobs @ self.lift)[f]
        if not self.dirichlet:
            self.C_f = self.C_v[f, :].tocsr()
        else:
            self.Tr_f = self.Tr[:, f].tocsr()

    # -- packing ---------------------------------------------------------------
    def split(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[self.offsets[i]:self.offsets[i + 1]] for i in range(len(self.block_sizes))]

    def to_vector(self, X: OptimalityVector) -> np.ndarray:
        parts = [X.v[self.free], X.p, X.u, X.w[self.free], X.q]
        if self.dirichlet:
            parts += [X.lam_adjoint, X.lam_state]
        return np.concatenate(parts)

    def to_fields(self, x: np.ndarray) -> OptimalityVector:
        parts = self.split(x)
        v = self.bc.zero(self.space.n_vel)
        v[self.free] = parts[0]
        w = np.zeros(self.space.n_vel)
        w[self.free] = parts[3]
        X = OptimalityVector(v, parts[1], parts[2], w, parts[4])
        if self.dirichlet:
            X.lam_adjoint, X.lam_state = parts[5], parts[6]
        return X

    def initial_guess(self, mu: float, state: ns.StateSolution | None = None) -> np.ndarray:
        """Uncontrolled state with zero control/adjoint blocks."""
        state = state or self.state_op.solve(mu)
        x = np.zeros(self.n_dofs)
        x[: self.n_vf] = state.v[self.free]
        x[self.offsets[1]:self.offsets[2]] = state.p
        return x

    # -- residual and Jacobian ---------------------------------------------------
    def residual(self, x: np.ndarray, mu: float, alpha: float | None = None) -> np.ndarray:
        alpha = self.config.alpha if alpha is None else alpha
        X = self.to_fields(x)
        f = self.free
        S = fem.convection_linearized(self.space, X.v)
        adj_mom = (self.Mobs @ X.v + mu * (self.K1 @ X.w) + S.T @ X.w
                   + self.D.T @ X.q - self.Mobs @ self.v_d)
        st_mom = (mu * (self.K1 @ X.v) + fem.convection_residual(self.space, X.v)
                  + self.D.T @ X.p)
        if self.dirichlet:
            adj_mom = adj_mom + self.Tr.T @ X.lam_state
            st_mom = st_mom + self.Tr.T @ X.lam_adjoint
            r_u = alpha * (self.M_u @ X.u) - self.M_u @ X.lam_state
        else:
            st_mom = st_mom - self.C_v @ X.u
            r_u = alpha * (self.M_u @ X.u) - self.C_v.T @ X.w
        parts = [adj_mom[f], self.D @ X.w, r_u, st_mom[f], self.D @ X.v]
        if self.dirichlet:
            parts += [self.Tr @ X.w, self.Tr @ X.v - self.M_u @ X.u]
        return np.concatenate(parts)

    def jacobian_blocks(self, x: np.ndarray, mu: float,
                        alpha: float | None = None) -> BlockMatrix:
        alpha = self.config.alpha if alpha is None else alpha
        X = self.to_fields(x)
        f = self.free
        S = fem.convection_linearized(self.space, X.v)
        T = fem.convection_hessian(self.space, X.w)
        B = (mu * self.K1 + S)[f][:, f].tocsr()   # linearized state on free dofs
        A11 = (self.Mobs_ff + T[f][:, f]).tocsr()
        aMu = (alpha * self.M_u).tocsr()
        n = len(self.block_sizes)
        blocks = [[None] * n for _ in range(n)]
        blocks[0][0] = A11
        blocks[0][3] = B.T.tocsr()
        blocks[0][4] = self.D_f.T.tocsr()
        blocks[1][3] = self.D_f
        blocks[2][2] = aMu
        blocks[3][0] = B
        blocks[3][1] = self.D_f.T.tocsr()
        blocks[4][0] = self.D_f
        if self.dirichlet:
            blocks[2][6] = (-self.M_u).tocsr()
            blocks[6][2] = (-self.M_u).tocsr()
            blocks[0][6] = self.Tr_f.T.tocsr()
            blocks[6][0] = self.Tr_f
            blocks[3][5] = self.Tr_f.T.tocsr()
            blocks[5][3] = self.Tr_f
        else:
            blocks[2][3] = (-self.C_f.T).tocsr()
            blocks[3][2] = (-self.C_f).tocsr()
        return BlockMatrix(blocks, self.block_sizes, self.block_sizes)

    def jacobian(self, x: np.ndarray, mu: float, alpha: float | None = None) -> sp.csc_matrix:
        return self.jacobian_blocks(x, mu, alpha).tocsr().tocsc()

    # -- solves -------------------------------------------------------------------
    def solve(self, mu: float, guess: np.ndarray | OptimalityVector | None = None,
              tol: float = 1e-8, max_iter: int = 50):
        """Newton on the coupled system; returns (X, CostReport, NewtonInfo).

        Cold starts seed from the uncontrolled state; strongly-controlled
        systems (small alpha, distributed coupling) that diverge from that
        seed are retried with a decreasing-alpha homotopy.
        """
        if guess is None:
            return self._cold_solve(mu, tol, max_iter)
        if isinstance(guess, OptimalityVector):
            x0 = self.to_vector(guess)
        else:
            x0 = np.asarray(guess)
        x, info = newton_solve(lambda y: self.residual(y, mu),
                               lambda y: self.jacobian(y, mu),
                               x0, tol=tol, max_iter=max_iter)
        X = self.to_fields(x)
        return X, self.evaluate_cost(X.v, X.u), info

    def _cold_solve(self, mu: float, tol: float, max_iter: int):
        x0 = self.initial_guess(mu)
        try:
            x, info = newton_solve(lambda y: self.residual(y, mu),
                                   lambda y: self.jacobian(y, mu),
                                   x0, tol=tol, max_iter=max_iter)
        except NewtonDivergenceError:
            alpha = self.config.alpha
            steps = max(1, int(np.ceil(np.log10(1.0 / alpha))))
            for a in np.geomspace(1.0, alpha, steps + 1):
                x0, info = newton_solve(
                    lambda y: self.residual(y, mu, alpha=a),
                    lambda y: self.jacobian(y, mu, alpha=a),
                    x0, tol=tol, max_iter=max_iter)
            x = x0
        X = self.to_fields(x)
        return X, self.evaluate_cost(X.v, X.u), info

    def evaluate_cost(self, v_full: np.ndarray, u: np.ndarray) -> CostReport:
        dv = v_full - self.v_d
        tracking = 0.5 * float(dv @ (self.Mobs @ dv))
        penalty = 0.5 * self.config.alpha * float(u @ (self.M_u @ u))
        return CostReport.from_terms(tracking, penalty)

    def output(self, X: OptimalityVector) -> float:
        return float(X.v[self.space.n_scalar + self.state_op.output_node])

    # -- symmetry -------------------------------------------------------------------
    def mirror_control(self, u: np.ndarray) -> np.ndarray:
        if self.config.kind == ControlKind.DISTRIBUTED:
            return self.space.mirror_velocity(u)
        scal = self.trace.scalar_dofs
        perm_in_trace = np.searchsorted(scal, self.space.mirror_scalar[scal])
        nsc = len(scal)
        out = np.empty_like(u)
        out[:nsc] = u[perm_in_trace]
        out[nsc:] = -u[nsc + perm_in_trace]
        return out

    def mirror(self, X: OptimalityVector) -> OptimalityVector:
        sp_ = self.space
        out = OptimalityVector(sp_.mirror_velocity(X.v), sp_.mirror_pressure(X.p),
                               self.mirror_control(X.u), sp_.mirror_velocity(X.w),
                               sp_.mirror_pressure(X.q))
        if self.dirichlet:
            scal = self.trace.scalar_dofs
            perm = np.searchsorted(scal, sp_.mirror_scalar[scal])
            nsc = len(scal)

            def mlam(lam):
                o = np.empty_like(lam)
                o[:nsc] = lam[perm]
                o[nsc:] = -lam[nsc + perm]
                return o

            out.lam_state, out.lam_adjoint = mlam(X.lam_state), mlam(X.lam_adjoint)
        return out


def solve_controlled_state(op: OcpOperator, mu: float, u: np.ndarray,
                           guess: np.ndarray | None = None, tol: float = 1e-8):
    """State solve with a fixed control forcing (Neumann/Distributed/Channel)."""
    if op.dirichlet:
        raise ConfigError("fixed-control state solves use the coupling path")
    forcing = op.C_v @ u
    sop = op.state_op
    if guess is None:
        st = sop.solve_stokes(mu)
        guess = sop.pack(st.v, st.p)
    x, info = newton_solve(
        lambda y: sop.residual(y, mu, forcing=forcing),
        lambda y: sop.jacobian(y, mu), guess, tol=tol)
    return sop.full_velocity(x), x[sop.n_vf:]


def adjoint_gradient(op: OcpOperator, mu: float, u: np.ndarray,
                     v_full: np.ndarray) -> np.ndarray:
    """Gradient of the reduced cost j(u) = J(v(u), u) via one adjoint solve.

    Solves the linear adjoint system at (v, u) and returns
    alpha*M_u u - C^T w, the discrete reduced gradient.
    """
    from .linalg import LuFactor

    f = op.free
    S = fem.convection_linearized(op.space, v_full)
    B = (mu * op.K1 + S)[f][:, f]
    A = sp.bmat([[B.T, op.D[:, f].T], [op.D[:, f], None]], format="csc")
    rhs = np.concatenate([-(op.Mobs @ (v_full - op.v_d))[f], np.zeros(op.n_p)])
    wq = LuFactor(A).solve(rhs)
    w = np.zeros(op.space.n_vel)
    w[f] = wq[: len(f)]
    return op.config.alpha * (op.M_u @ u) - op.C_v.T @ w


def reduced_cost(op: OcpOperator, mu: float, u: np.ndarray,
                 guess: np.ndarray | None = None) -> float:
    v, _ = solve_controlled_state(op, mu, u, guess)
    return op.evaluate_cost(v, u).J


def continue_ocp(op: OcpOperator, mus, guess=None, perturb: float = 0.0,
                 tol: float = 1e-8, max_iter: int = 50):
    """Warm-started optimality sweep; optional mirror-odd kick on the v block.

    Raises on the first failure; the branch tracer catches and records
    the outcome as data.
    """
    pert = ns.antisymmetric_perturbation(op.space)
    pert = pert / np.linalg.norm(pert)
    pert_f = pert[op.free]
    prev = guess
    sols, costs, infos = [], [], []
    for mu in mus:
        kicked = False
        if prev is None:
            x0 = None  # cold start (alpha homotopy engages on divergence)
        else:
            x0 = prev.copy()
            if perturb > 0:
                # scale by the state (v, p) blocks; the control block carries
                # an alpha^-1 factor that would blow the kick out of scale
                scale = np.linalg.norm(x0[: op.offsets[2]])
                x0[: op.n_vf] += perturb * scale * pert_f
                kicked = True
        try:
            X, cost, info = op.solve(mu, x0, tol=tol, max_iter=max_iter)
        except NewtonDivergenceError:
            if not kicked:
                raise
            X, cost, info = op.solve(mu, prev, tol=tol, max_iter=max_iter)
        sols.append(X)
        costs.append(cost)
        infos.append(info)
        prev = op.to_vector(X)
    return sols, costs, infos
