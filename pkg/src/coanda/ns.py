"""Uncontrolled steady Navier-Stokes: Newton solves, targets, scalar output.

The branch-defining output is the vertical velocity at the mesh node nearest
(14, 4); on the mirror-symmetric grids that node sits at (14, 3.75), so the
output of a mirrored solution is exactly the negated output.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from dataclasses import dataclass, field

from . import fem
from .errors import BranchSelectionError, NewtonDivergenceError
from .linalg import LuFactor
from .mesh import locate_output_node
from .newton import NewtonInfo, newton_solve

INLET_MAX_VELOCITY = 31.25
INLET_HEIGHT = 2.5


def reynolds(mu: float) -> float:
    """Re = U h / mu with U the peak inflow speed and h the inlet height."""
    if mu <= 0:
        raise ValueError("viscosity must be positive")
    return INLET_MAX_VELOCITY * INLET_HEIGHT / mu


@dataclass
class StateSolution:
    mu: float
    v: np.ndarray           # full velocity coefficients (lift included)
    p: np.ndarray
    newton_iters: int
    residual_norm: float
    converged: bool = True
    trace: list = field(default_factory=list)

    def velocity(self) -> fem.Field:
        return fem.Field("velocity", self.v)

    def pressure(self) -> fem.Field:
        return fem.Field("pressure", self.p)


class StateOperator:
    """Assembled operators and boundary data for the uncontrolled problem."""

    def __init__(self, space: fem.TaylorHoodSpace, ip: fem.InnerProducts | None = None,
                 constrain_gamma_d: bool = True):
        self.space = space
        self.ip = ip or fem.build_inner_products(space)
        self.K1 = self.ip.K1
        self.D = fem.assemble_divergence(space)
        self.bc = fem.state_bc(space, constrain_gamma_d)
        self.lift = fem.apply_inflow_lift(space).values
        self.n_vf = len(self.bc.free)
        self.n_p = space.n_p
        self.output_node = locate_output_node(space.mesh).index

    # packing: x = [v_free, p]
    def full_velocity(self, x: np.ndarray) -> np.ndarray:
        v = self.bc.zero(self.space.n_vel)
        v[self.bc.free] = x[: self.n_vf]
        return v

    def pack(self, v_full: np.ndarray, p: np.ndarray) -> np.ndarray:
        return np.concatenate([v_full[self.bc.free], p])

    def residual(self, x: np.ndarray, mu: float, forcing: np.ndarray | None = None) -> np.ndarray:
        v = self.full_velocity(x)
        p = x[self.n_vf:]
        mom = mu * (self.K1 @ v) + fem.convection_residual(self.space, v) + self.D.T @ p
        if forcing is not None:
            mom = mom - forcing
        return np.concatenate([mom[self.bc.free], self.D @ v])

    def jacobian(self, x: np.ndarray, mu: float) -> sp.csr_matrix:
        v = self.full_velocity(x)
        A = (mu * self.K1 + fem.convection_linearized(self.space, v))
        f = self.bc.free
        return sp.bmat([[A[f][:, f], self.D[:, f].T],
                        [self.D[:, f], None]], format="csc")

    def state_jacobian_free(self, v_full: np.ndarray, mu: float) -> sp.csr_matrix:
        """Linearized state operator on free dofs (for eigenproblems)."""
        A = (mu * self.K1 + fem.convection_linearized(self.space, v_full))
        f = self.bc.free
        return sp.bmat([[A[f][:, f], self.D[:, f].T],
                        [self.D[:, f], None]], format="csr")

    def solve(self, mu: float, guess: StateSolution | np.ndarray | None = None,
              tol: float = 1e-8, max_iter: int = 50) -> StateSolution:
        """Newton-converged steady solution; `guess` warm-starts continuation.

        A cold start (guess None) runs a Stokes solve first; from the lift
        alone Newton has no usable descent direction at these Reynolds numbers.
        """
        if guess is None:
            st = self.solve_stokes(mu)
            x0 = self.pack(st.v, st.p)
        elif isinstance(guess, StateSolution):
            x0 = self.pack(guess.v, guess.p)
        else:
            x0 = np.asarray(guess)
        x, info = newton_solve(lambda y: self.residual(y, mu),
                               lambda y: self.jacobian(y, mu),
                               x0, tol=tol, max_iter=max_iter)
        return StateSolution(mu, self.full_velocity(x), x[self.n_vf:],
                             info.iters, info.residuals[-1], info.converged,
                             info.residuals)

    def solve_stokes(self, mu: float = 1.0) -> StateSolution:
        """Drop the convective term: one linear saddle solve."""
        f = self.bc.free
        A = mu * self.K1
        J = sp.bmat([[A[f][:, f], self.D[:, f].T],
                     [self.D[:, f], None]], format="csc")
        rhs = np.concatenate([-(A @ self.lift)[f], -(self.D @ self.lift)])
        x = LuFactor(J).solve(rhs)
        v = self.bc.zero(self.space.n_vel)
        v[f] = x[: self.n_vf]
        return StateSolution(mu, v, x[self.n_vf:], 0, 0.0, True, [0.0])

    def output(self, sol: StateSolution) -> float:
        return bifurcation_output(self.space, sol, self.output_node)


def bifurcation_output(space: fem.TaylorHoodSpace, sol: StateSolution,
                       node: int | None = None) -> float:
    """v_x2 at the output node (mesh vertex nearest (14,4))."""
    if node is None:
        node = locate_output_node(space.mesh).index
    return float(sol.v[space.n_scalar + node])


def antisymmetric_perturbation(space: fem.TaylorHoodSpace) -> np.ndarray:
    """Mirror-odd velocity field used to kick Newton off the symmetric branch.

    Vertical bump supported in the expansion, vanishing on all walls:
    v2 = (x1-10)+ (50-x1) * x2 (7.5-x2), normalized to unit max.
    """
    x, y = space.node_coords[:, 0], space.node_coords[:, 1]
    g = np.clip(x - 10.0, 0.0, None) * np.clip(50.0 - x, 0.0, None) / 400.0
    b = y * (7.5 - y) / (3.75 ** 2)
    out = np.zeros(space.n_vel)
    out[space.n_scalar:] = g * b
    return out


def continue_state(op: StateOperator, mus, guess: StateSolution | None = None,
                   perturb: float = 0.0, tol: float = 1e-8,
                   max_iter: int = 50) -> list[StateSolution]:
    """Warm-started sweep over an ordered mu list; optional symmetry kick.

    With perturb > 0, each continuation guess is nudged by the mirror-odd
    field scaled to `perturb` of the solution norm; above the critical point
    Newton falls back onto the unique symmetric solution, below it the kick
    lets the iteration leave the (discretely invariant) symmetric subspace.
    """
    sols = []
    pert = antisymmetric_perturbation(op.space)
    pert = pert / np.linalg.norm(pert)
    prev = guess
    for mu in mus:
        if prev is None:
            x0 = None
        else:
            x0 = op.pack(prev.v, prev.p)
            if perturb > 0:
                x0 = x0 + perturb * np.linalg.norm(x0) * np.concatenate(
                    [pert[op.bc.free], np.zeros(op.n_p)])
        try:
            sol = op.solve(mu, x0, tol=tol, max_iter=max_iter)
        except NewtonDivergenceError:
            if prev is None or perturb <= 0:
                raise
            sol = op.solve(mu, op.pack(prev.v, prev.p), tol=tol, max_iter=max_iter)
        sols.append(sol)
        prev = sol
    return sols


def make_target(op: StateOperator, kind: str, mu_d: float | None = None,
                step: float = 0.05, perturb: float = 1e-2) -> fem.Field:
    """Desired velocity profiles.

    symmetric: Stokes flow with the same boundary data (the Stokes velocity
    is viscosity-independent). asymmetric: stable wall-hugging solution at
    mu_d (default 0.5), reached by continuation from mu=2 with the
    symmetry-breaking kick below mu ~ 1.
    """
    if kind == "symmetric":
        return op.solve_stokes(1.0).velocity()
    if kind != "asymmetric":
        raise ValueError(f"unknown target kind {kind!r}")
    mu_d = 0.5 if mu_d is None else mu_d
    mus_plain = np.arange(2.0, 1.0 - 1e-9, -step)
    sols = continue_state(op, mus_plain)
    mus_kick = np.arange(mus_plain[-1] - step, mu_d - 1e-9, -step)
    if abs(mus_kick[-1] - mu_d) > 1e-12:
        mus_kick = np.append(mus_kick, mu_d)
    for delta in (perturb, 10 * perturb):
        branch = continue_state(op, mus_kick, guess=sols[-1], perturb=delta)
        if abs(op.output(branch[-1])) > 1.0:
            return branch[-1].velocity()
    raise BranchSelectionError(
        f"continuation failed to capture the asymmetric branch at mu={mu_d}")
