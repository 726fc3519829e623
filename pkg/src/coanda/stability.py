"""State and global generalized eigenproblems, spectral sweeps, diagnostics.

State problem: -Jac_y(v; mu) y = rho V_y y with V_y the velocity mass
(descriptor convention, zero pressure block); all Re(rho) < 0 means the flow
is linearly stable, and the leading real eigenvalue changes sign at the
pitchfork. Global problem: Jac(X; mu) X_e = sigma V X_e on the full
optimality Jacobian (no sign flip; its spectrum is diagnostic, not
dynamical). Both default metrics are the PSD mass products; the full scalar
product (H1/L2) metrics are selectable.
"""

from __future__ import annotations

import json
import numpy as np
import scipy.sparse as sp
from dataclasses import dataclass, field

from . import fem, ns, ocp
from .errors import ConfigError, ShiftRetryError
from .linalg import EigenPair, eigs_shift_invert

REAL_TOL = 1e-8          # |Im| below this counts as a real eigenvalue
MATCH_TOL = 1e-10        # shift-merge dedup tolerance
DEFAULT_SHIFTS = (0.0, 0.005, -0.005)
DEFAULT_WINDOW = (-0.01, 0.01)
SHEARS_GAP = 5e-3


@dataclass
class Spectrum:
    mu: float
    kind: str                      # state | global
    pairs: list                    # EigenPair, sorted by Re descending
    metric: str
    converged: bool = True
    message: str = ""

    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.pairs])

    def leading_real(self) -> float:
        """Largest real part among (numerically) real eigenvalues."""
        vals = self.values()
        re = vals.real[np.abs(vals.imag) <= REAL_TOL * np.maximum(1.0, np.abs(vals.real))]
        return float(re.max()) if re.size else np.nan


class StabilityOps:
    """Eigenproblem assembly bound to one Taylor-Hood space."""

    def __init__(self, space: fem.TaylorHoodSpace, ip: fem.InnerProducts | None = None,
                 state_op: ns.StateOperator | None = None):
        self.space = space
        self.ip = ip or fem.build_inner_products(space)
        self.state_op = state_op or ns.StateOperator(space, self.ip)
        f = self.state_op.bc.free
        self._Mv_ff = self.ip.Mv[f][:, f].tocsr()
        self._H1_ff = self.ip.H1v[f][:, f].tocsr()
        self._zero_p = sp.csr_matrix((space.n_p, space.n_p))

    def state_metric(self, metric: str = "mass") -> sp.csr_matrix:
        if metric == "mass":
            return sp.block_diag([self._Mv_ff, self._zero_p], format="csr")
        if metric == "full":
            return sp.block_diag([self._H1_ff, self.ip.Mp], format="csr")
        raise ConfigError(f"unknown metric {metric!r}")

    def global_metric(self, op: "ocp.OcpOperator", metric: str = "full") -> sp.csr_matrix:
        f = op.free
        if metric == "mass":
            vel, pre = self.ip.Mv[f][:, f], sp.csr_matrix((op.n_p, op.n_p))
        elif metric == "full":
            vel, pre = self.ip.H1v[f][:, f], self.ip.Mp
        else:
            raise ConfigError(f"unknown metric {metric!r}")
        blocks = [vel, pre, op.M_u, vel, pre]
        if op.dirichlet:
            z = sp.csr_matrix((op.n_lam, op.n_lam))
            blocks += [z, z]
        return sp.block_diag(blocks, format="csr")

    def state_eigs(self, v_full: np.ndarray, mu: float, k: int = 100,
                   shift: complex = 0.0, metric: str = "mass",
                   sign: float = -1.0) -> Spectrum:
        """Spectrum of the (sign-normalized) linearized state operator."""
        A = (sign * self.state_op.state_jacobian_free(v_full, mu)).tocsc()
        M = self.state_metric(metric)
        res = eigs_shift_invert(A, M, k=k, shift=shift)
        pairs = sorted(res.pairs, key=lambda p: -p.value.real)
        return Spectrum(mu, "state", pairs, metric, res.converged, res.message)

    def global_eigs(self, op: "ocp.OcpOperator", X: "ocp.OptimalityVector", mu: float,
                    k: int = 100, shifts=DEFAULT_SHIFTS,
                    metric: str = "full") -> Spectrum:
        """Optimality-Jacobian spectrum, deduplicated over the shift schedule."""
        A = op.jacobian(op.to_vector(X), mu)
        M = self.global_metric(op, metric)
        pairs: list[EigenPair] = []
        converged, msgs = True, []
        for s in shifts:
            try:
                res = eigs_shift_invert(A, M, k=k, shift=s)
            except ShiftRetryError as exc:
                msgs.append(str(exc))
                converged = False
                continue
            converged &= res.converged
            if res.message:
                msgs.append(res.message)
            for p in res.pairs:
                if all(abs(p.value - q.value) > MATCH_TOL for q in pairs):
                    pairs.append(p)
        pairs.sort(key=lambda p: -p.value.real)
        return Spectrum(mu, "global", pairs, metric, converged, "; ".join(msgs))


# -- sweeps -------------------------------------------------------------------------

@dataclass
class SweepRow:
    mu: float
    re: float
    im: float
    kind: str
    branch_label: str = ""


def spectral_sweep(stab: StabilityOps, branch, kind: str, k: int = 100,
                   window: tuple | None = None, shifts=DEFAULT_SHIFTS,
                   metric: str | None = None, op: "ocp.OcpOperator | None" = None,
                   subsample: int = 1) -> list[SweepRow]:
    """Per-mu spectra along a branch, filtered to a real-part window."""
    if metric is None:
        # descriptor mass metric for physical state stability, full scalar
        # products for the diagnostic global spectrum (the paper's windows)
        metric = "mass" if kind == "state" else "full"
    rows: list[SweepRow] = []
    for e in branch.entries[::subsample]:
        if not e.converged or e.solution is None:
            continue
        if kind == "state":
            v = e.solution.v
            specs = [stab.state_eigs(v, e.mu, k=k, shift=s, metric=metric)
                     for s in (shifts if np.iterable(shifts) else [shifts])]
            pairs = []
            for spec in specs:
                for p in spec.pairs:
                    if all(abs(p.value - q.value) > MATCH_TOL for q in pairs):
                        pairs.append(p)
        elif kind == "global":
            the_op = op or stab.state_op  # op required for ocp branches
            spec = stab.global_eigs(the_op, e.solution, e.mu, k=k, shifts=shifts,
                                    metric=metric)
            pairs = spec.pairs
        else:
            raise ConfigError(f"unknown problem kind {kind!r}")
        for p in pairs:
            re, im = p.value.real, p.value.imag
            if window is None or (window[0] <= re <= window[1]):
                rows.append(SweepRow(e.mu, float(re), float(im), kind, branch.label))
    return rows


def write_spectra_csv(rows: list, path, append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, newline="") as f:
        if not append:
            f.write("mu,re,im,problem_kind,branch_label\n")
        for r in rows:
            f.write(f"{float(r.mu)!r},{float(r.re)!r},{float(r.im)!r},{r.kind},{r.branch_label}\n")


# -- diagnostics ----------------------------------------------------------------------

@dataclass
class ShearsDiagnostics:
    shears_present: bool = False
    mu_star_star: float | None = None
    cluster_value: float | None = None
    min_gap: float = np.nan
    crossing_mu: float | None = None
    inconclusive: bool = False
    upper_trace: dict = field(default_factory=dict)
    lower_trace: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"shears": self.shears_present, "mu_star_star": self.mu_star_star,
                "cluster": self.cluster_value, "min_gap": None if np.isnan(self.min_gap)
                else self.min_gap, "crossing_mu": self.crossing_mu,
                "inconclusive": self.inconclusive}


def _real_values(rows: list, mu: float) -> np.ndarray:
    out = [r.re for r in rows
           if r.mu == mu and abs(r.im) <= REAL_TOL * max(1.0, abs(r.re))]
    return np.array(out)


def find_cluster(rows: list, rel_width: float = 0.10, min_count_per_mu: float = 2.0):
    """Accumulation point of positive real eigenvalues (the alpha cluster).

    Sliding relative window over all positive reals; a cluster needs at least
    `min_count_per_mu` members per swept parameter value on average.
    """
    mus = sorted({r.mu for r in rows})
    vals = np.sort(np.array([r.re for r in rows
                             if r.re > 0 and abs(r.im) <= REAL_TOL * max(1.0, abs(r.re))]))
    if vals.size == 0 or not mus:
        return None
    best_n, best_val = 0, None
    i = 0
    for j in range(len(vals)):
        while vals[j] > vals[i] * (1 + rel_width) / (1 - rel_width):
            i += 1
        n = j - i + 1
        if n > best_n:
            best_n, best_val = n, float(np.median(vals[i:j + 1]))
    if best_n >= min_count_per_mu * len(mus):
        return best_val
    return None


def classify_shears(rows: list, window: tuple = DEFAULT_WINDOW,
                    gap_threshold: float = SHEARS_GAP) -> ShearsDiagnostics:
    """Paired approaching eigenvalue curves, closest-approach mu**, cluster.

    Upper trace: smallest positive real eigenvalue in the window per mu
    (cluster members excluded); lower trace: largest negative. Shears are
    declared when both traces exist on most of the grid and their gap dips
    below the threshold; mu** is the interior minimizer of the upper trace.
    """
    diag = ShearsDiagnostics()
    mus = sorted({r.mu for r in rows})
    if len(mus) < 4:
        diag.inconclusive = True
        return diag
    diag.cluster_value = find_cluster(rows)

    upper, lower = {}, {}
    for mu in mus:
        re = _real_values(rows, mu)
        re = re[(re >= window[0]) & (re <= window[1])]
        if diag.cluster_value is not None:
            re = re[np.abs(re - diag.cluster_value) > 0.2 * diag.cluster_value]
        pos, neg = re[re > 0], re[re < 0]
        if pos.size:
            upper[mu] = float(pos.min())
        if neg.size:
            lower[mu] = float(neg.max())
    diag.upper_trace, diag.lower_trace = upper, lower

    both = [mu for mu in mus if mu in upper and mu in lower]
    if len(both) >= 0.6 * len(mus) and len(both) >= 4:
        gaps = np.array([upper[mu] - lower[mu] for mu in both])
        diag.min_gap = float(gaps.min())
        diag.shears_present = bool(diag.min_gap <= gap_threshold)
    if upper:
        ums = [mu for mu in mus if mu in upper]
        uvals = np.array([upper[mu] for mu in ums])
        i = int(np.argmin(uvals))
        if 0 < i < len(ums) - 1:      # interior closest approach only
            diag.mu_star_star = float(ums[i])

    # a genuine eigenvalue crossing migrates from one half-window to the
    # other: the positive count rises while the negative count falls (or
    # vice versa), with the migrating value near zero on both sides. A mere
    # sign alternation of the nearest eigenvalue (symmetric shears pairs)
    # does not change the counts.
    counts = {}
    for mu in mus:
        re = _real_values(rows, mu)
        if diag.cluster_value is not None:
            re = re[np.abs(re - diag.cluster_value) > 0.2 * diag.cluster_value]
        re = re[(re >= window[0]) & (re <= window[1])]
        pos, neg = re[re > 0], re[re < 0]
        if re.size and np.any(re == 0.0) and diag.crossing_mu is None:
            diag.crossing_mu = float(mu)
        counts[mu] = (len(pos), len(neg),
                      float(pos.min()) if pos.size else np.nan,
                      float(neg.max()) if neg.size else np.nan)
    if diag.crossing_mu is not None:
        return diag
    cmus = [mu for mu in mus if mu in counts]
    near = 0.5 * max(abs(window[0]), abs(window[1]))
    for a, b in zip(cmus, cmus[1:]):
        pa, na, upa, loa = counts[a]
        pb, nb, upb, lob = counts[b]
        if pb - pa >= 1 and nb - na <= -1 and abs(loa) <= near and upb <= near:
            t = abs(loa) / (abs(loa) + upb) if (abs(loa) + upb) > 0 else 0.5
            diag.crossing_mu = float(a + t * (b - a))
            break
        if pb - pa <= -1 and nb - na >= 1 and upa <= near and abs(lob) <= near:
            t = upa / (upa + abs(lob)) if (upa + abs(lob)) > 0 else 0.5
            diag.crossing_mu = float(a + t * (b - a))
            break
    return diag


def detect_complex_crossing(rows: list) -> "tuple[float, float] | None":
    """(mu_before, mu_after) where a complex-conjugate pair's real part
    changes sign along the sweep (Hopf signature)."""
    mus = sorted({r.mu for r in rows})
    lead = {}
    for mu in mus:
        cplx = [r.re for r in rows
                if r.mu == mu and abs(r.im) > REAL_TOL * max(1.0, abs(r.re))]
        if cplx:
            lead[mu] = max(cplx)
    ms = [mu for mu in mus if mu in lead]
    for a, b in zip(ms, ms[1:]):
        if lead[a] * lead[b] < 0:
            return (a, b)
    return None


def write_diagnostics_json(diag: ShearsDiagnostics, mu_star, path) -> None:
    payload = diag.to_json()
    payload["mu_star"] = mu_star
    with open(path, "w") as f:
        json.dump(payload, f, indent=1)
