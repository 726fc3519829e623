import numpy as np
import pytest
import scipy.sparse as sp

from coanda import branch as br, fem, ns, ocp, stability
from coanda.linalg import eigs_shift_invert


@pytest.fixture(scope="module")
def coarse_stab(coarse_space, coarse_ip, coarse_state_op):
    return stability.StabilityOps(coarse_space, coarse_ip, coarse_state_op)


def test_synthetic_pencil_sweep_closed_form():
    """diag(mu-1, -1, ..., -8) vs identity: leading eigenvalue mu-1 exactly."""
    mus = np.linspace(1.5, 0.6, 7)
    lead = []
    M = sp.identity(9, format="csr")
    for mu in mus:
        A = sp.diags([mu - 1.0] + [-(k + 1.0) for k in range(8)]).tocsr()
        res = eigs_shift_invert(A, M, k=3, shift=0.01)
        vals = res.values().real
        lead.append(vals.max())
    np.testing.assert_allclose(lead, mus - 1.0, atol=1e-9)
    cp = br.detect_critical_point(mus, lead)
    assert cp.found and cp.mu_star == pytest.approx(1.0, abs=1e-9)


def test_state_spectrum_stable_above_critical(coarse_stab, coarse_state_op):
    sol = coarse_state_op.solve(2.0)
    spec = coarse_stab.state_eigs(sol.v, 2.0, k=12)
    assert spec.kind == "state"
    vals = spec.values()
    assert np.all(vals.real < 0)                      # stable symmetric flow
    res = [p.residual_norm for p in spec.pairs]
    assert max(res) <= 1e-8
    # sorted by real part descending
    assert np.all(np.diff(vals.real) <= 1e-12)


def test_state_spectrum_residuals_reverified(coarse_stab, coarse_state_op):
    sol = coarse_state_op.solve(1.5)
    spec = coarse_stab.state_eigs(sol.v, 1.5, k=8)
    A = (-coarse_state_op.state_jacobian_free(sol.v, 1.5)).tocsr()
    M = coarse_stab.state_metric()
    for p in spec.pairs:
        r = np.linalg.norm(A @ p.vector - p.value * (M @ p.vector))
        assert r / np.linalg.norm(p.vector) == pytest.approx(p.residual_norm,
                                                             rel=1e-6, abs=1e-12)


def test_complex_eigenvalues_in_conjugate_pairs(coarse_stab, coarse_state_op):
    sol = coarse_state_op.solve(0.9)   # symmetric branch below critical
    spec = coarse_stab.state_eigs(sol.v, 0.9, k=30)
    vals = spec.values()
    cplx = vals[np.abs(vals.imag) > 1e-8]
    for v in cplx:
        assert np.min(np.abs(vals - np.conj(v))) <= 1e-7 * max(1.0, abs(v))


def test_sign_convention_flag(coarse_stab, coarse_state_op):
    sol = coarse_state_op.solve(2.0)
    neg = coarse_stab.state_eigs(sol.v, 2.0, k=5, sign=-1.0)
    pos = coarse_stab.state_eigs(sol.v, 2.0, k=5, sign=+1.0)
    a = np.sort(neg.values().real)
    b = np.sort(-pos.values().real)
    np.testing.assert_allclose(a, b, atol=1e-7)


def test_global_spectrum_alpha_cluster(coarse_space, coarse_ip, coarse_state_op,
                                       coarse_stokes_target, coarse_stab):
    alpha = 0.01
    cfg = ocp.OcpConfig(fem.ControlKind.NEUMANN, alpha=alpha)
    op = ocp.OcpOperator(coarse_space, cfg, coarse_ip,
                         target=coarse_stokes_target, state_op=coarse_state_op)
    X, cost, info = op.solve(1.4)
    spec = coarse_stab.global_eigs(op, X, 1.4, k=60, shifts=(0.0, alpha))
    vals = spec.values()
    real = vals.real[np.abs(vals.imag) <= 1e-8]
    cluster = real[np.abs(real - alpha) <= 0.1 * alpha]
    assert len(cluster) >= 5      # optimality-block eigenvalues pile up at alpha


def test_global_metric_blocks(coarse_space, coarse_ip, coarse_state_op,
                              coarse_stokes_target, coarse_stab):
    cfg = ocp.OcpConfig(fem.ControlKind.NEUMANN, alpha=0.1)
    op = ocp.OcpOperator(coarse_space, cfg, coarse_ip,
                         target=coarse_stokes_target, state_op=coarse_state_op)
    x = np.zeros(op.n_dofs)
    x[op.offsets[1]:op.offsets[2]] = 1.0   # a pressure-block direction
    # full scalar-product metric (default): SPD, pressure measured in L2
    V = coarse_stab.global_metric(op)
    assert V.shape == (op.n_dofs, op.n_dofs)
    assert x @ (V @ x) > 0
    # mass (descriptor) variant: zero pressure blocks
    Vm = coarse_stab.global_metric(op, metric="mass")
    assert np.abs(Vm @ x).max() == 0.0


def test_spectral_sweep_window_and_csv(tmp_path, coarse_stab, coarse_state_op):
    mus = np.array([2.0, 1.6, 1.2])
    branch = br.Branch("sym", "state")
    for mu in mus:
        sol = coarse_state_op.solve(mu)
        branch.entries.append(br.BranchEntry(mu, sol, 0.0, None, 1, True))
    rows = stability.spectral_sweep(coarse_stab, branch, "state", k=10,
                                    window=(-0.75, 0.0), shifts=(0.0,))
    assert rows and all(-0.75 <= r.re <= 0.0 for r in rows)
    empty = stability.spectral_sweep(coarse_stab, branch, "state", k=10,
                                     window=(10.0, 11.0), shifts=(0.0,))
    assert empty == []
    path = tmp_path / "spectra.csv"
    stability.write_spectra_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "mu,re,im,problem_kind,branch_label"
    assert len(lines) == len(rows) + 1


def _synthetic_rows(cluster_at=None):
    mus = np.linspace(2.0, 0.5, 16)
    rows = []
    for mu in mus:
        up = 0.002 + (mu - 1.1) ** 2 * 0.02
        lo = -0.002 - (mu - 1.1) ** 2 * 0.01
        rows.append(stability.SweepRow(mu, up, 0.0, "global", "b"))
        rows.append(stability.SweepRow(mu, lo, 0.0, "global", "b"))
        rows.append(stability.SweepRow(mu, -0.5, 0.3, "global", "b"))
        if cluster_at:
            for js in range(-2, 3):
                rows.append(stability.SweepRow(
                    mu, cluster_at * (1 + 0.01 * js), 0.0, "global", "b"))
    return mus, rows


def test_classify_shears_synthetic_two_parabolas():
    mus, rows = _synthetic_rows()
    diag = stability.classify_shears(rows)
    assert diag.shears_present
    assert diag.mu_star_star == pytest.approx(1.1, abs=0.06)
    assert diag.min_gap == pytest.approx(0.004, abs=1e-6)
    assert diag.cluster_value is None
    assert not diag.inconclusive


def test_classify_detects_cluster():
    mus, rows = _synthetic_rows(cluster_at=0.008)
    diag = stability.classify_shears(rows)
    assert diag.cluster_value == pytest.approx(0.008, rel=0.05)


def test_classify_inconclusive_on_sparse_grid():
    rows = [stability.SweepRow(1.0, 0.001, 0.0, "global", "b")]
    diag = stability.classify_shears(rows)
    assert diag.inconclusive


def test_crossing_detection_synthetic():
    mus = np.linspace(2.0, 0.5, 16)
    rows = [stability.SweepRow(mu, 0.004 * (mu - 1.0), 0.0, "global", "b")
            for mu in mus]
    diag = stability.classify_shears(rows)
    assert diag.crossing_mu == pytest.approx(1.0, abs=0.01)


def test_detect_complex_crossing_synthetic():
    mus = np.linspace(2.0, 0.5, 11)
    rows = []
    for mu in mus:
        rows.append(stability.SweepRow(mu, 0.003 * (0.9 - mu), 0.002, "state", "b"))
        rows.append(stability.SweepRow(mu, 0.003 * (0.9 - mu), -0.002, "state", "b"))
    hit = stability.detect_complex_crossing(rows)
    assert hit is not None
    assert hit[0] >= 0.9 >= hit[1] or hit[1] >= 0.9 >= hit[0]
    assert stability.detect_complex_crossing(rows[:4]) is None


def test_diagnostics_json(tmp_path):
    _, rows = _synthetic_rows()
    diag = stability.classify_shears(rows)
    path = tmp_path / "diag.json"
    stability.write_diagnostics_json(diag, 0.96, path)
    import json
    payload = json.loads(path.read_text())
    assert payload["shears"] is True
    assert payload["mu_star"] == 0.96
    assert set(payload) >= {"shears", "mu_star", "mu_star_star", "cluster"}
