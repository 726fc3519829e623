"""Ordered continuation with warm-started Newton: labeled solution branches.

One branch = one sweep over a monotone viscosity grid, each Newton solve
seeded by the previous solution (optionally kicked by the mirror-odd field:
that is how "natural" branches of mirror-symmetric systems acquire the
physically selected asymmetry on an exactly symmetric mesh). Non-natural
branches restart near the critical point from a symmetrized or mirrored
solution.
"""

from __future__ import annotations

import json
import numpy as np
from dataclasses import dataclass, field
from pathlib import Path

from . import fem, ns, ocp
from .errors import BranchSelectionError, ConfigError, NewtonDivergenceError
from .errors import BifurcationProximityError


@dataclass
class ContinuationPlan:
    mus: np.ndarray                      # strictly monotone (descending in practice)
    system: str = "state"                # state | ocp
    config: "ocp.OcpConfig | None" = None
    tol: float = 1e-8
    max_iter: int = 50
    guess: object = "zero"               # "zero" | "perturbed" | ("prior", x) | ("file", path)
    perturb: float = 0.0                 # per-step mirror-odd kick (relative)
    failure_policy: str = "truncate"     # truncate | skip
    label: str = "natural"

    def __post_init__(self):
        self.mus = np.asarray(self.mus, dtype=float)
        if self.mus.size == 0:
            raise ConfigError("empty viscosity grid")
        d = np.diff(self.mus)
        if d.size and not (np.all(d > 0) or np.all(d < 0)):
            raise ConfigError("viscosity grid must be strictly monotone")
        if self.system not in ("state", "ocp"):
            raise ConfigError(f"unknown system selector {self.system!r}")
        if self.system == "ocp" and self.config is None:
            raise ConfigError("ocp continuation requires a control config")
        if self.failure_policy not in ("truncate", "skip"):
            raise ConfigError(f"unknown failure policy {self.failure_policy!r}")


@dataclass
class BranchEntry:
    mu: float
    solution: object                 # StateSolution or OptimalityVector
    output: float
    cost: "ocp.CostReport | None"
    iters: int
    converged: bool
    reason: str = ""


@dataclass
class Branch:
    label: str
    system: str
    entries: list = field(default_factory=list)
    config: "ocp.OcpConfig | None" = None

    def mus(self) -> np.ndarray:
        return np.array([e.mu for e in self.entries])

    def outputs(self) -> np.ndarray:
        return np.array([e.output for e in self.entries])

    def entry_at(self, mu: float, atol: float = 1e-9) -> BranchEntry:
        for e in self.entries:
            if abs(e.mu - mu) <= atol:
                return e
        raise KeyError(f"mu={mu} not on branch {self.label!r}")


class BranchTracer:
    """Binds a Taylor-Hood space to the state/optimality solvers."""

    def __init__(self, space: fem.TaylorHoodSpace, ip: fem.InnerProducts | None = None):
        self.space = space
        self.ip = ip or fem.build_inner_products(space)
        self.state_op = ns.StateOperator(space, self.ip)
        self._ocp_cache: dict = {}

    def ocp_operator(self, config: "ocp.OcpConfig") -> "ocp.OcpOperator":
        key = (config.kind, config.target, config.mu_d)
        if key not in self._ocp_cache:
            self._ocp_cache[key] = ocp.OcpOperator(self.space, config, self.ip,
                                                   state_op=self.state_op)
        op = self._ocp_cache[key]
        if op.config.alpha != config.alpha:
            op = op.__class__(self.space, config, self.ip, target=op.target,
                              state_op=self.state_op)
            self._ocp_cache[key] = op
        return op

    # -- one continuation sweep -------------------------------------------------
    def run_continuation(self, plan: ContinuationPlan) -> Branch:
        state = plan.system == "state"
        op = self.state_op if state else self.ocp_operator(plan.config)
        branch = Branch(plan.label, plan.system, config=plan.config)

        pert = ns.antisymmetric_perturbation(self.space)
        pert = pert / np.linalg.norm(pert)
        n_vf = len(op.bc.free) if state else op.n_vf

        n_state = n_vf + (op.n_p if state else op.n_p)

        def kicked(x, delta):
            if delta <= 0:
                return x
            x = x.copy()
            # scale by the state (v, p) blocks; control blocks carry 1/alpha
            # factors that would blow the kick out of scale
            x[:n_vf] = x[:n_vf] + delta * np.linalg.norm(x[:n_state]) * pert[
                op.bc.free if state else op.free]
            return x

        def solve_at(mu, guess):
            if state:
                sol = op.solve(mu, guess, tol=plan.tol, max_iter=plan.max_iter)
                return sol, None, sol.newton_iters, op.pack(sol.v, sol.p)
            sol, cost, info = op.solve(mu, guess, tol=plan.tol,
                                       max_iter=plan.max_iter)
            return sol, cost, info.iters, op.to_vector(sol)

        prev = self._initial_vector(op, plan, state)
        perturb = plan.perturb if plan.perturb > 0 else (
            1e-2 if plan.guess == "perturbed" else 0.0)
        for j, mu in enumerate(plan.mus):
            guess = None if prev is None else kicked(prev, perturb)
            try:
                try:
                    sol, cost, iters, vec = solve_at(mu, guess)
                except NewtonDivergenceError:
                    if prev is None or perturb <= 0:
                        raise
                    sol, cost, iters, vec = solve_at(mu, prev)  # unkicked retry
                out = op.output(sol)
            except (NewtonDivergenceError, BifurcationProximityError) as exc:
                reason = ("non-C.: " + str(exc)) if isinstance(exc, NewtonDivergenceError) \
                    else ("singular: " + str(exc))
                if j == 0:
                    raise BranchSelectionError(
                        f"first continuation point mu={mu} failed: {reason}") from exc
                branch.entries.append(BranchEntry(mu, None, np.nan, None, 0, False, reason))
                if plan.failure_policy == "truncate":
                    break
                continue
            branch.entries.append(BranchEntry(mu, sol, out, cost, iters, True))
            prev = vec
        return branch

    def _initial_vector(self, op, plan: ContinuationPlan, state: bool):
        g = plan.guess
        if isinstance(g, tuple) and g[0] == "prior":
            x = g[1]
            if state and isinstance(x, ns.StateSolution):
                return op.pack(x.v, x.p)
            if not state and isinstance(x, ocp.OptimalityVector):
                return op.to_vector(x)
            return np.asarray(x)
        if isinstance(g, tuple) and g[0] == "file":
            return np.load(g[1])
        if g in ("zero", "perturbed"):
            return None  # cold start (Stokes-seeded state / uncontrolled-seeded ocp)
        raise ConfigError(f"unknown initial guess spec {g!r}")

    # -- tailored restarts -------------------------------------------------------
    def seed_non_natural(self, branch: Branch, mu_near_star: float,
                         mirror: bool = False, symmetrize: bool = True,
                         label: str = "non-natural") -> ContinuationPlan:
        """Plan restarting near the critical point to chase the other branch.

        The restart guess is the branch solution at `mu_near_star`, symmetrized
        (projected on the mirror-even subspace) or mirrored.
        """
        entry = branch.entry_at(mu_near_star)
        mus = branch.mus()
        rest = mus[np.flatnonzero(np.isclose(mus, mu_near_star))[0]:]
        if branch.system == "state":
            op = self.state_op
            sol = entry.solution
            v, p = sol.v, sol.p
            if symmetrize:
                v = 0.5 * (v + self.space.mirror_velocity(v))
                p = 0.5 * (p + self.space.mirror_pressure(p))
            if mirror:
                v, p = self.space.mirror_velocity(v), self.space.mirror_pressure(p)
            x0 = op.pack(v, p)
        else:
            op = self.ocp_operator(branch.config)
            X = entry.solution
            if symmetrize:
                Xm = op.mirror(X)
                X = ocp.OptimalityVector(
                    0.5 * (X.v + Xm.v), 0.5 * (X.p + Xm.p), 0.5 * (X.u + Xm.u),
                    0.5 * (X.w + Xm.w), 0.5 * (X.q + Xm.q),
                    None if X.lam_state is None else 0.5 * (X.lam_state + Xm.lam_state),
                    None if X.lam_adjoint is None else 0.5 * (X.lam_adjoint + Xm.lam_adjoint))
            if mirror:
                X = op.mirror(X)
            x0 = op.to_vector(X)
        return ContinuationPlan(rest, branch.system, branch.config,
                                guess=("prior", x0), perturb=0.0, label=label)


@dataclass
class CriticalPoint:
    found: bool
    mu_star: float = np.nan
    bracket: tuple = (np.nan, np.nan)


def detect_critical_point(mus, leading_real) -> CriticalPoint:
    """Linear interpolation of the zero crossing of the leading real part."""
    mus = np.asarray(mus, dtype=float)
    lead = np.asarray(leading_real, dtype=float)
    for i in range(len(mus) - 1):
        a, b = lead[i], lead[i + 1]
        if np.isnan(a) or np.isnan(b):
            continue
        if a == 0.0:
            return CriticalPoint(True, mus[i], (mus[i], mus[i]))
        if a * b < 0:
            t = a / (a - b)
            mu = mus[i] + t * (mus[i + 1] - mus[i])
            lo, hi = sorted((mus[i], mus[i + 1]))
            return CriticalPoint(True, float(mu), (lo, hi))
    return CriticalPoint(False)


# -- archives ---------------------------------------------------------------------

def save_branch(branch: Branch, space: fem.TaylorHoodSpace, outdir) -> None:
    """Directory archive: branch.json manifest + per-mu field files."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {"label": branch.label, "system": branch.system, "entries": []}
    if branch.config is not None:
        manifest["config"] = {"kind": branch.config.kind.value,
                              "alpha": branch.config.alpha,
                              "target": branch.config.target}
    for k, e in enumerate(branch.entries):
        rec = {"mu": e.mu, "output": None if np.isnan(e.output) else e.output,
               "iters": e.iters, "converged": e.converged, "reason": e.reason}
        if e.cost is not None:
            rec["cost"] = {"J": e.cost.J, "tracking": e.cost.tracking,
                           "penalty": e.cost.penalty,
                           "below_machine_epsilon": e.cost.below_machine_epsilon}
        if e.converged and e.solution is not None:
            fields = {}
            sol = e.solution
            if branch.system == "state":
                fields = {"v": fem.Field("velocity", sol.v),
                          "p": fem.Field("pressure", sol.p)}
            else:
                fields = {"v": fem.Field("velocity", sol.v),
                          "p": fem.Field("pressure", sol.p),
                          "u": fem.Field("control", sol.u),
                          "w": fem.Field("velocity", sol.w),
                          "q": fem.Field("pressure", sol.q)}
            rec["fields"] = {}
            for name, f in fields.items():
                fname = f"{k:04d}_{name}.txt"
                fem.export_field(f, outdir / fname)
                rec["fields"][name] = fname
        manifest["entries"].append(rec)
    (outdir / "branch.json").write_text(json.dumps(manifest, indent=1))


def write_state_branch_csv(branch: Branch, path) -> None:
    """Per-branch rows (mu, output, residual, iters)."""
    with open(path, "w", newline="") as f:
        f.write("mu,output,residual,iters\n")
        for e in branch.entries:
            if not e.converged:
                f.write(f"{float(e.mu)!r},,,{e.iters}\n")
                continue
            res = getattr(e.solution, "residual_norm", "")
            f.write(f"{float(e.mu)!r},{float(e.output)!r},"
                    f"{'' if res == '' else repr(float(res))},{e.iters}\n")


def write_bifurcation_csv(branches: list, path) -> None:
    """Rows (mu, output, J, branch_label); J empty for state-only branches."""
    with open(path, "w", newline="") as f:
        f.write("mu,output,J,branch_label\n")
        for b in branches:
            for e in b.entries:
                if not e.converged:
                    continue
                J = "" if e.cost is None else repr(float(e.cost.J))
                f.write(f"{float(e.mu)!r},{float(e.output)!r},{J},{b.label}\n")
