import numpy as np
import pytest
import scipy.sparse.linalg as spla

from coanda import fem
from coanda.errors import ConfigError, GeometryError
from coanda.mesh import FacetTag, Mesh, build_channel_mesh


def reference_triangle_space():
    mesh = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                np.array([[0, 1, 2]]), np.zeros((0, 2), dtype=np.int64),
                np.zeros(0, dtype=np.int64), np.arange(3, dtype=np.int64))
    return fem.TaylorHoodSpace(mesh)


def test_p2_stiffness_matches_symbolic_oracle():
    """Reference-triangle P2 stiffness vs exact symbolic integration."""
    import sympy as sy

    x, y = sy.symbols("x y")
    l0, l1, l2 = 1 - x - y, x, y
    N = [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
         4 * l1 * l2, 4 * l0 * l2, 4 * l0 * l1]
    exact = np.empty((6, 6))
    for a in range(6):
        for b in range(6):
            integrand = (sy.diff(N[a], x) * sy.diff(N[b], x)
                         + sy.diff(N[a], y) * sy.diff(N[b], y))
            exact[a, b] = float(sy.integrate(sy.integrate(integrand,
                                                          (y, 0, 1 - x)), (x, 0, 1)))
    space = reference_triangle_space()
    K = fem.assemble_scalar_stiffness(space).toarray()
    # global dof order is [v0,v1,v2,e(0,1),e(0,2),e(1,2)]; local N ordering
    # puts the midpoint opposite each vertex
    perm = [0, 1, 2, 5, 4, 3]
    np.testing.assert_allclose(K[np.ix_(perm, perm)], exact, atol=1e-13)


def test_quadrature_exact_for_degree_four():
    """The 6-point rule integrates P2*P2 products of linears (degree 4) exactly."""
    import sympy as sy

    space = reference_triangle_space()
    x, y = sy.symbols("x y")
    for (i, j) in [(4, 0), (0, 4), (2, 2), (3, 1), (1, 3)]:
        exact = float(sy.integrate(sy.integrate(x ** i * y ** j, (y, 0, 1 - x)),
                                   (x, 0, 1)))
        q = space.qpoints[0]
        val = float(np.sum(space.wdet[0] * q[:, 0] ** i * q[:, 1] ** j))
        assert val == pytest.approx(exact, abs=1e-15)


def test_order5_rule_available():
    mesh = build_channel_mesh("tiny")
    space = fem.TaylorHoodSpace(mesh, quad_order=5)
    assert space.nq == 7
    with pytest.raises(ConfigError):
        fem.TaylorHoodSpace(mesh, quad_order=3)


def test_diffusion_zero_viscosity(tiny_space):
    K = fem.assemble_diffusion(tiny_space, 0.0)
    assert K.nnz == 0 or np.abs(K.data).max() == 0.0


def test_diffusion_affine_scaling(tiny_space):
    K1 = fem.assemble_diffusion(tiny_space, 1.0)
    K2 = fem.assemble_diffusion(tiny_space, 2.0)
    d = (K2 - 2.0 * K1).tocoo()
    scale = np.abs(K1.data).max()
    assert (np.abs(d.data).max() if d.nnz else 0.0) <= 1e-14 * scale


def test_divergence_of_rigid_translation_zero(tiny_space):
    D = fem.assemble_divergence(tiny_space)
    const = np.zeros(tiny_space.n_vel)
    const[: tiny_space.n_scalar] = 1.0
    assert np.abs(D @ const).max() <= 1e-12


def test_divergence_of_linear_solenoid_zero(tiny_space):
    D = fem.assemble_divergence(tiny_space)
    v = np.concatenate([tiny_space.node_coords[:, 0], -tiny_space.node_coords[:, 1]])
    assert np.abs(D @ v).max() <= 1e-12


def test_divergence_patch_area(tiny_space):
    # b((x1,0), 1) = -int div = -area, checked against the analytic integral
    D = fem.assemble_divergence(tiny_space)
    v = np.concatenate([tiny_space.node_coords[:, 0], np.zeros(tiny_space.n_scalar)])
    assert np.ones(tiny_space.n_p) @ (D @ v) == pytest.approx(-325.0, abs=1e-10)


def test_convection_zero_velocity(tiny_space):
    z = np.zeros(tiny_space.n_vel)
    assert np.all(fem.convection_residual(tiny_space, z) == 0)
    assert fem.convection_linearized(tiny_space, z).nnz == 0 or \
        np.abs(fem.convection_linearized(tiny_space, z).data).max() == 0


def test_convection_euler_identity(tiny_space, rng):
    v = rng.standard_normal(tiny_space.n_vel)
    S = fem.convection_linearized(tiny_space, v)
    r = fem.convection_residual(tiny_space, v)
    assert np.abs(S @ v - 2 * r).max() <= 1e-12 * np.abs(r).max()


def test_convection_finite_difference_richardson(tiny_space, rng):
    """(s(v+ed,v+ed,.) - s(v,v,.))/e -> S[v] d with observed order 1 in e."""
    v = rng.standard_normal(tiny_space.n_vel)
    d = rng.standard_normal(tiny_space.n_vel)
    S = fem.convection_linearized(tiny_space, v)
    ref = S @ d
    errs = []
    for eps in (1e-3, 5e-4):
        fd = (fem.convection_residual(tiny_space, v + eps * d)
              - fem.convection_residual(tiny_space, v)) / eps
        errs.append(np.linalg.norm(fd - ref))
    slope = np.log2(errs[0] / errs[1]) / np.log2(2.0)
    assert slope == pytest.approx(1.0, abs=0.1)


def test_convection_mode_dispatch(tiny_space, rng):
    v = fem.Field("velocity", rng.standard_normal(tiny_space.n_vel))
    S = fem.assemble_convection(tiny_space, v, "linearized")
    St = fem.assemble_convection(tiny_space, v, "adjoint")
    assert np.abs((S.T - St).toarray()).max() == 0.0
    with pytest.raises(TypeError):
        fem.assemble_convection(tiny_space, fem.Field("pressure", np.zeros(3)), "residual")
    with pytest.raises(ConfigError):
        fem.assemble_convection(tiny_space, v, "bogus")


def test_convection_hessian_is_derivative_of_adjoint(tiny_space, rng):
    v = rng.standard_normal(tiny_space.n_vel)
    w = rng.standard_normal(tiny_space.n_vel)
    d = rng.standard_normal(tiny_space.n_vel)
    T = fem.convection_hessian(tiny_space, w)
    eps = 1e-7
    Sp = fem.convection_linearized(tiny_space, v + eps * d)
    S0 = fem.convection_linearized(tiny_space, v)
    fd = (Sp.T @ w - S0.T @ w) / eps
    ref = T @ d
    assert np.linalg.norm(fd - ref) <= 1e-5 * np.linalg.norm(ref)
    assert np.abs((T - T.T).toarray()).max() == 0.0


# -- control couplings --------------------------------------------------------------

def test_distributed_coupling_is_mass(tiny_space):
    C, Mu, tr = fem.assemble_control_coupling(tiny_space, fem.ControlKind.DISTRIBUTED)
    ones = np.zeros(tiny_space.n_vel)
    ones[: tiny_space.n_scalar] = 1.0
    assert ones @ (C @ ones) == pytest.approx(325.0, abs=1e-10)
    assert tr is None


def test_neumann_coupling_support(tiny_space):
    C, Mu, tr = fem.assemble_control_coupling(tiny_space, fem.ControlKind.NEUMANN)
    rows = np.unique(C.tocoo().row)
    out_dofs = np.concatenate([tr.scalar_dofs, tr.scalar_dofs + tiny_space.n_scalar])
    assert set(rows) <= set(out_dofs.tolist())
    x = tiny_space.node_coords[tr.scalar_dofs, 0]
    assert np.all(np.abs(x - 50.0) <= 1e-12)


def test_channel_coupling_total_mass(tiny_space):
    C, Mu, tr = fem.assemble_control_coupling(tiny_space, fem.ControlKind.CHANNEL)
    assert tr.length == pytest.approx(2.5, abs=1e-12)
    nsc = len(tr.scalar_dofs)
    ux = np.zeros(2 * nsc)
    ux[:nsc] = 1.0   # unit horizontal control
    assert ux @ (Mu @ ux) == pytest.approx(2.5, abs=1e-12)


def test_dirichlet_coupling_redirects():
    mesh = build_channel_mesh("tiny")
    space = fem.TaylorHoodSpace(mesh)
    with pytest.raises(ConfigError, match="multiplier"):
        fem.assemble_control_coupling(space, fem.ControlKind.DIRICHLET_BC)


# -- inflow lift -----------------------------------------------------------------------

def test_inflow_profile_values(tiny_space):
    lift = fem.apply_inflow_lift(tiny_space)
    assert fem.evaluate_field(tiny_space, lift, (0.0, 3.75)) == pytest.approx([31.25, 0.0])
    assert fem.evaluate_field(tiny_space, lift, (0.0, 2.5)) == pytest.approx([0.0, 0.0])
    assert fem.evaluate_field(tiny_space, lift, (0.0, 5.0)) == pytest.approx([0.0, 0.0])
    # extended by zero inside and on other Dirichlet parts
    assert fem.evaluate_field(tiny_space, lift, (20.0, 3.0)) == pytest.approx([0.0, 0.0])


# -- evaluation --------------------------------------------------------------------------

def test_evaluate_constant_field(tiny_space):
    f = fem.Field("pressure", np.full(tiny_space.n_p, 2.5))
    assert fem.evaluate_field(tiny_space, f, (23.0, 1.0)) == pytest.approx(2.5)


def test_evaluate_linear_field(tiny_space):
    f = fem.Field("velocity", np.concatenate([tiny_space.node_coords[:, 0],
                                              np.zeros(tiny_space.n_scalar)]))
    assert fem.evaluate_field(tiny_space, f, (14.0, 4.0))[0] == pytest.approx(14.0)


def test_evaluate_quadratic_exact_at_edge_midpoint(tiny_space):
    import sympy as sy

    y = sy.symbols("y")
    f = fem.Field("velocity", np.concatenate([tiny_space.node_coords[:, 1] ** 2,
                                              np.zeros(tiny_space.n_scalar)]))
    edge = tiny_space.edges[10]
    mid = 0.5 * (tiny_space.mesh.vertices[edge[0]] + tiny_space.mesh.vertices[edge[1]])
    expected = float((y ** 2).subs(y, sy.Rational(mid[1]).limit_denominator(10 ** 9)))
    got = fem.evaluate_field(tiny_space, f, tuple(mid))[0]
    assert got == pytest.approx(expected, abs=1e-12)


def test_evaluate_outside_domain_raises(tiny_space):
    f = fem.Field("pressure", np.zeros(tiny_space.n_p))
    with pytest.raises(GeometryError):
        fem.evaluate_field(tiny_space, f, (5.0, 1.0))   # outside the inlet duct
    with pytest.raises(GeometryError):
        fem.evaluate_field(tiny_space, f, (60.0, 3.0))


def test_evaluate_nearest_node(tiny_space):
    f = fem.Field("velocity", np.concatenate([tiny_space.node_coords[:, 0],
                                              np.zeros(tiny_space.n_scalar)]))
    v = fem.evaluate_field(tiny_space, f, (14.0, 3.75), nearest_node=True)
    assert v[0] == pytest.approx(14.0)


# -- inner products / invariants ------------------------------------------------------------

def test_mass_matrices_spd(tiny_ip):
    for M in (tiny_ip.Mv, tiny_ip.Mp):
        lam = spla.eigsh(M.tocsc(), k=1, which="SA", return_eigenvectors=False)
        assert lam[0] > 0


def test_observation_mass_support(tiny_space, tiny_ip):
    tr = fem.trace_space(tiny_space, FacetTag.GAMMA_OBS)
    dofs = set(np.concatenate([tr.scalar_dofs, tr.scalar_dofs + tiny_space.n_scalar]))
    coo = tiny_ip.Mobs.tocoo()
    assert set(coo.row.tolist()) <= dofs and set(coo.col.tolist()) <= dofs
    x = tiny_space.node_coords[tr.scalar_dofs, 0]
    assert np.all(np.abs(x - 47.0) <= 1e-12)


def test_stiffness_symmetric(tiny_ip):
    d = (tiny_ip.K1 - tiny_ip.K1.T).tocoo()
    assert (np.abs(d.data).max() if d.nnz else 0.0) == 0.0


def test_reflection_equivariance(tiny_space, tiny_ip, rng):
    sp_ = tiny_space
    v = rng.standard_normal(sp_.n_vel)
    w = rng.standard_normal(sp_.n_vel)
    Rv, Rw = sp_.mirror_velocity(v), sp_.mirror_velocity(w)
    # K = R^T K R
    assert Rv @ (tiny_ip.K1 @ Rw) == pytest.approx(v @ (tiny_ip.K1 @ w), rel=1e-12)
    # divergence: b(Rv, R_p q) = b(v, q)
    D = fem.assemble_divergence(sp_)
    q = rng.standard_normal(sp_.n_p)
    Rq = sp_.mirror_pressure(q)
    assert Rq @ (D @ Rv) == pytest.approx(q @ (D @ v), rel=1e-12)
    # trilinear form: s(Rv, Rv, Rw) = s(v, v, w)
    s1 = fem.convection_residual(sp_, Rv) @ Rw
    s0 = fem.convection_residual(sp_, v) @ w
    assert s1 == pytest.approx(s0, rel=1e-12)


def test_brezzi_inf_sup_positive_and_mesh_independent():
    """Positivity and mesh-independence (within 20%) across 3 refinements."""
    betas = [fem.brezzi_inf_sup(fem.TaylorHoodSpace(build_channel_mesh(p)))
             for p in ("tiny", "coarse", "medium")]
    assert all(b > 0.05 for b in betas)           # measured ~0.074 on this domain
    assert max(betas) - min(betas) <= 0.2 * max(betas)


# -- export ------------------------------------------------------------------------------

def test_field_roundtrip(tmp_path, tiny_space, rng):
    f = fem.Field("velocity", rng.standard_normal(tiny_space.n_vel))
    path = tmp_path / "field.txt"
    fem.export_field(f, path)
    assert path.read_text().startswith("field v1\n")
    back = fem.import_field(path)
    assert back.role == "velocity"
    np.testing.assert_array_equal(back.values, f.values)


def test_slice_csv(tmp_path, tiny_space):
    lift = fem.apply_inflow_lift(tiny_space)
    for x1 in (47.0, 10.0, 45.0):
        path = tmp_path / f"slice{x1}.csv"
        fem.write_slice_csv(tiny_space, {"v": lift}, x1, path, n_samples=11)
        lines = path.read_text().splitlines()
        assert lines[0] == "x2,v_vx,v_vy,v_mag"
        assert len(lines) == 12
