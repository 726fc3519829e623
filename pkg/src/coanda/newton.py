"""Damped Newton iteration shared by the state, optimality and reduced solvers."""

from __future__ import annotations

import numpy as np
from dataclasses import dataclass, field

from .errors import BifurcationProximityError, NewtonDivergenceError, SingularMatrixError
from .linalg import LuFactor


@dataclass
class NewtonInfo:
    iters: int = 0
    converged: bool = False
    residuals: list = field(default_factory=list)
    reason: str = ""


def newton_solve(residual, jacobian, x0: np.ndarray, tol: float = 1e-8,
                 max_iter: int = 50, max_halvings: int = 8,
                 solve=None) -> tuple[np.ndarray, NewtonInfo]:
    """Solve residual(x) = 0; on residual increase the step is halved up to
    `max_halvings` times, so non-convergence is a reported outcome rather
    than a blow-up. `solve` overrides the linear solver (reduced systems).
    """
    x = np.asarray(x0, dtype=float).copy()
    r = residual(x)
    rn = float(np.linalg.norm(r))
    info = NewtonInfo(residuals=[rn])
    for it in range(max_iter):
        if rn <= tol:
            info.converged = True
            info.iters = it
            return x, info
        J = jacobian(x)
        try:
            dx = solve(J, r) if solve is not None else LuFactor(J).solve(r)
        except SingularMatrixError as exc:
            raise BifurcationProximityError(
                f"singular Jacobian at iteration {it} (pivot {exc.pivot_index}): {exc}"
            ) from exc
        step = 1.0
        for _ in range(max_halvings + 1):
            xt = x - step * dx
            rt = residual(xt)
            rtn = float(np.linalg.norm(rt))
            if rtn < rn or rtn <= tol:
                break
            step *= 0.5
        else:
            raise NewtonDivergenceError(
                f"no residual decrease after {max_halvings} halvings "
                f"(residual {rn:.3e})", info.residuals, x)
        x, r, rn = xt, rt, rtn
        info.residuals.append(rn)
    info.iters = max_iter
    if rn <= tol:
        info.converged = True
        return x, info
    raise NewtonDivergenceError(
        f"not converged in {max_iter} iterations (residual {rn:.3e})",
        info.residuals, x)
