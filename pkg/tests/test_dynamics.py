import numpy as np
import pytest
from hypothesis import given, strategies as st

from hangsim.dynamics import (
    CFLError, DT_MAX, DataError, SimConfig, SimState, acceleration, cfl_dt, initial_jets,
    mode_shape, parse_initial, pendulum, product_rule, read_csv_data, rotating, run,
    stationary, step, tension_flux,
)
from hangsim.mesh import build_mesh
from hangsim.tension import tension_from_state

DOWN = (0.0, 0.0, -1.0)
ZERO = (0.0, 0.0, 0.0)


def _centripetal(s):
    out = np.zeros((len(s), 3))
    out[:, 0] = -(1.0 - s)
    return out


def _state(data, g):
    tension = tension_from_state(data.mesh, data.x0, data.x1, g)
    return SimState(0.0, data.x0.copy(), data.x1.copy(), tension)


# -- configuration ----------------------------------------------------------

def test_config_accepts_unit_and_zero_gravity():
    assert SimConfig(g=(0, 0, -1)).g == DOWN
    assert SimConfig(g=(0, 0, 0)).g == ZERO
    assert SimConfig(g=(0.6, 0.0, -0.8)).g == (0.6, 0.0, -0.8)


@pytest.mark.parametrize("kwargs", [
    dict(g=(0, 0, -2)), dict(g=(0, -1)), dict(dt=0.0), dict(dt=-1e-3), dict(dt="fast"),
    dict(T_end=0.0), dict(c0=-0.1), dict(sample_every=0),
])
def test_config_rejects(kwargs):
    with pytest.raises(ValueError):
        SimConfig(**kwargs)


# -- acceleration -----------------------------------------------------------

@pytest.mark.parametrize("order", [2, 4])
def test_stationary_acceleration_vanishes(order):
    mesh = build_mesh(200, 2.0, order)
    data = stationary(mesh, DOWN)
    acc, tension = acceleration(mesh, data.x0, data.x1, DOWN)
    assert np.max(np.abs(acc)) <= 1e-6
    np.testing.assert_allclose(tension.tau, mesh.nodes, atol=1e-10)


def test_centripetal_acceleration_product_form():
    mesh = build_mesh(200, 2.0, 2)
    data = rotating(mesh)
    acc, _ = acceleration(mesh, data.x0, data.x1, ZERO, form="product")
    np.testing.assert_allclose(acc, _centripetal(mesh.nodes), atol=1e-6)


def test_centripetal_acceleration_flux_form_is_second_order():
    errors = []
    for n in (100, 200, 400):
        mesh = build_mesh(n, 2.0, 2)
        data = rotating(mesh)
        acc, _ = acceleration(mesh, data.x0, data.x1, ZERO)
        errors.append(np.max(np.abs(acc - _centripetal(mesh.nodes))))
    assert errors[1] <= 1e-5
    for coarse, fine in zip(errors, errors[1:]):
        assert coarse / fine == pytest.approx(4.0, rel=0.05)


def test_slack_string_has_no_acceleration():
    mesh = build_mesh(100, 2.0, 2)
    data = rotating(mesh)
    acc, tension = acceleration(mesh, data.x0, np.zeros_like(data.x0), ZERO)
    assert np.max(np.abs(acc)) == 0.0
    assert np.max(np.abs(tension.tau)) == 0.0


def test_fixed_end_is_pinned():
    mesh = build_mesh(80, 2.0, 2)
    data = pendulum(mesh, DOWN, 0.1)
    acc, _ = acceleration(mesh, data.x0, data.x1, DOWN)
    assert np.all(acc[-1] == 0.0)


def _operator_matrix(op, mesh, tau, dtau):
    n = mesh.n + 1
    cols = []
    for k in range(n - 1):
        y = np.zeros((n, 1))
        y[k] = 1.0
        cols.append(op(mesh, tau, dtau, y)[: n - 1, 0])
    return np.array(cols).T


def test_flux_form_spectrum_is_real_on_graded_mesh():
    """The reason the stepper uses the conservative form."""
    mesh = build_mesh(60, 2.0, 2)
    s = mesh.nodes
    flux = np.linalg.eigvals(_operator_matrix(tension_flux, mesh, s, np.ones_like(s)))
    product = np.linalg.eigvals(_operator_matrix(product_rule, mesh, s, np.ones_like(s)))
    assert np.max(np.abs(flux.imag)) <= 1e-8 * np.max(np.abs(flux))
    assert np.max(flux.real) < 0
    assert np.max(np.abs(product.imag)) > 1.0


# -- time step bound --------------------------------------------------------

def test_cfl_examples():
    mesh = build_mesh(100, 1.0, 2)
    s = mesh.nodes
    assert cfl_dt(mesh, s) == pytest.approx(5e-3, rel=1e-12)
    assert cfl_dt(mesh, np.zeros_like(s)) == DT_MAX
    fine = build_mesh(200, 1.0, 2)
    assert cfl_dt(fine, fine.nodes) == pytest.approx(0.5 * cfl_dt(mesh, s), rel=1e-12)


@given(st.integers(20, 400), st.floats(0.1, 10.0))
def test_cfl_scales_with_wave_speed(n, c):
    mesh = build_mesh(n, 1.0, 2)
    s = mesh.nodes
    base = 0.5 / n
    assert cfl_dt(mesh, c * s) == pytest.approx(min(base / np.sqrt(c), DT_MAX), rel=1e-12)


def test_step_rejects_large_dt_unless_forced():
    mesh = build_mesh(100, 1.0, 2)
    state = _state(stationary(mesh, DOWN), DOWN)
    with pytest.raises(CFLError):
        step(state, 0.1, DOWN)
    forced = step(state, 0.1, DOWN, force=True)
    assert forced.t == pytest.approx(0.1)


def test_step_checks_the_bound_above_the_cap():
    """A coarse mesh can have a CFL bound above DT_MAX; steps beyond it still fail."""
    mesh = build_mesh(40, 2.0, 2)
    state = _state(stationary(mesh, DOWN), DOWN)
    bare = cfl_dt(mesh, state.tau, cap=np.inf)
    assert bare > DT_MAX == cfl_dt(mesh, state.tau)
    step(state, bare, DOWN)
    with pytest.raises(CFLError):
        step(state, 2 * bare, DOWN)
    assert cfl_dt(mesh, np.zeros_like(state.tau), cap=np.inf) == np.inf


def test_zero_step_returns_state_unchanged():
    mesh = build_mesh(50, 2.0, 2)
    state = _state(rotating(mesh), ZERO)
    assert step(state, 0.0, ZERO) is state


def test_stationary_persists_for_hundred_steps():
    mesh = build_mesh(100, 2.0, 2)
    data = stationary(mesh, DOWN)
    state = _state(data, DOWN)
    dt = cfl_dt(mesh, state.tau)
    for _ in range(100):
        state = step(state, dt, DOWN)
    assert np.max(np.abs(state.x - data.x0)) <= 1e-6
    assert np.all(state.x[-1] == 0.0)


def test_rotating_string_short_arc():
    """A tenth of a period against the rigid rotation (1-s)(cos t, sin t, 0)."""
    mesh = build_mesh(100, 2.0, 2)
    state = _state(rotating(mesh), ZERO)
    dt = 2e-3
    for _ in range(50):
        state = step(state, dt, ZERO)
    t = state.t
    exact = np.outer(1 - mesh.nodes, [np.cos(t), np.sin(t), 0.0])
    assert np.max(np.abs(state.x - exact)) <= 1e-4


def test_renormalized_step_reduces_drift():
    # integrating the unit tangent and differentiating again is exact only to
    # the mesh truncation error, so the drift is small but not zero
    mesh = build_mesh(100, 2.0, 4)
    drifts = []
    for renorm in (False, True):
        state = _state(pendulum(mesh, DOWN, 0.2), DOWN)
        for _ in range(20):
            state = step(state, 5e-3, DOWN, renorm=renorm)
        dx = mesh.derivative(state.x, 1)
        drifts.append(np.max(np.abs(np.linalg.norm(dx, axis=1) - 1)))
    assert drifts[1] <= 1e-8
    assert drifts[1] < 0.1 * drifts[0]


# -- initial data -----------------------------------------------------------

@pytest.mark.parametrize("maker", [
    lambda m: stationary(m, DOWN),
    lambda m: stationary(m, (0.6, 0.0, -0.8)),
    lambda m: rotating(m, 2.0),
    lambda m: pendulum(m, DOWN, 0.05, 1),
    lambda m: pendulum(m, DOWN, 0.05, 3),
])
def test_builtin_families_satisfy_constraints(maker):
    data = maker(build_mesh(100, 2.0, 2))
    data.validate()
    assert np.all(data.x0[-1] == 0.0) and np.all(data.x1[-1] == 0.0)


def test_pendulum_tangent_integrates_to_position():
    mesh = build_mesh(400, 2.0, 4)
    data = pendulum(mesh, DOWN, 0.1)
    np.testing.assert_allclose(mesh.derivative(data.x0, 1), data.tangent, atol=1e-6)


def test_mode_shape_is_a_bessel_mode():
    """y = J0(j sqrt s) solves (s y')' + (j^2/4) y = 0 and vanishes at s=1."""
    j, y, dy = mode_shape(1)
    assert j == pytest.approx(2.404825557695773, abs=1e-12)
    assert y(np.array(1.0)) == pytest.approx(0.0, abs=1e-14)
    s = np.linspace(0.05, 1.0, 50)
    eps = 1e-5
    flux = lambda r: r * dy(r)
    residual = (flux(s + eps) - flux(s - eps)) / (2 * eps) + j**2 / 4 * y(s)
    assert np.max(np.abs(residual)) <= 1e-6


def test_pendulum_rejections():
    mesh = build_mesh(50, 2.0, 2)
    with pytest.raises(DataError):
        pendulum(mesh, ZERO)
    with pytest.raises(DataError):
        pendulum(mesh, DOWN, 5.0)
    with pytest.raises(DataError):
        pendulum(mesh, DOWN, 0.1, 0)


def test_validation_catches_each_constraint():
    mesh = build_mesh(60, 2.0, 2)
    data = rotating(mesh)
    stretched = type(data)(mesh, 1.1 * data.x0, data.x1, "bad", 1.1 * data.tangent,
                           data.dvelocity)
    with pytest.raises(DataError, match=r"\|x0'\|"):
        stretched.validate()
    twisted = type(data)(mesh, data.x0, data.x1, "bad", data.tangent, -data.tangent)
    with pytest.raises(DataError, match="x0'.x1'"):
        twisted.validate()
    loose = data.x0.copy()
    loose += 1e-3
    shifted = type(data)(mesh, loose, data.x1, "bad", data.tangent, data.dvelocity)
    with pytest.raises(DataError, match="fixed end"):
        shifted.validate()
    with pytest.raises(DataError):
        initial_jets(stretched, ZERO)


def _write_csv(path, s, x0, x1):
    table = np.column_stack([s, x0, x1])
    np.savetxt(path, table, delimiter=",", header="s,x1,x2,x3,v1,v2,v3", comments="")


def test_csv_roundtrip(tmp_path):
    mesh = build_mesh(120, 2.0, 2)
    data = rotating(mesh)
    path = tmp_path / "data.csv"
    _write_csv(path, mesh.nodes, data.x0, data.x1)
    back = read_csv_data(path)
    np.testing.assert_array_equal(back.mesh.nodes, mesh.nodes)
    np.testing.assert_array_equal(back.x0, data.x0)
    back.validate()
    assert back.name == f"csv:{path}"


def test_csv_errors(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text("s,x1,x2,x3\n0,1,0,0\n1,0,0,0\n")
    with pytest.raises(DataError, match="missing columns"):
        read_csv_data(path)
    mesh = build_mesh(60, 2.0, 2)
    s = mesh.nodes
    stretched = np.outer(1 - s, [1.5, 0, 0])
    path = tmp_path / "stretched.csv"
    _write_csv(path, s, stretched, np.zeros_like(stretched))
    with pytest.raises(DataError):
        read_csv_data(path).validate()


def test_parse_initial(tmp_path):
    mesh = build_mesh(60, 2.0, 2)
    assert parse_initial("stationary", mesh, DOWN).name == "stationary"
    assert parse_initial(" rotating(2) ", mesh, ZERO).name == "rotating(2)"
    assert parse_initial("rotating", mesh, ZERO).name == "rotating(1)"
    assert parse_initial("pendulum(0.01,2)", mesh, DOWN).name == "pendulum(0.01,2)"
    path = tmp_path / "d.csv"
    data = stationary(mesh, DOWN)
    _write_csv(path, mesh.nodes, data.x0, data.x1)
    assert parse_initial(f"csv:{path}", mesh, DOWN).x0.shape == data.x0.shape
    for bad, g in [("rotating(1)", DOWN), ("pendulum(0.01,1.5)", DOWN), ("whip", DOWN),
                   ("stationary(1)", DOWN)]:
        with pytest.raises(DataError):
            parse_initial(bad, mesh, g)


# -- jets -------------------------------------------------------------------

def test_stationary_jets_vanish():
    mesh = build_mesh(100, 2.0, 2)
    xtt, xttt = initial_jets(stationary(mesh, DOWN), DOWN)
    assert np.max(np.abs(xtt)) <= 1e-9
    assert np.max(np.abs(xttt)) <= 1e-9


@pytest.mark.parametrize("omega", [0.5, 1.0, 2.0])
def test_rotating_jets(omega):
    """Derivatives of (1-s)(cos wt, sin wt, 0) at t=0."""
    mesh = build_mesh(200, 2.0, 2)
    s = mesh.nodes
    xtt, xttt = initial_jets(rotating(mesh, omega), ZERO)
    expect2 = np.zeros_like(xtt)
    expect2[:, 0] = -(omega**2) * (1 - s)
    expect3 = np.zeros_like(xttt)
    expect3[:, 1] = -(omega**3) * (1 - s)
    np.testing.assert_allclose(xtt, expect2, atol=1e-6)
    np.testing.assert_allclose(xttt, expect3, atol=1e-5)


# -- runs -------------------------------------------------------------------

def test_slack_run_is_static():
    cfg = SimConfig(N=60, g=ZERO, T_end=0.2, sample_every=5)
    mesh = cfg.mesh()
    data = rotating(mesh)
    data = type(data)(mesh, data.x0, np.zeros_like(data.x0), "slack", data.tangent,
                      np.zeros_like(data.x0))
    result = run(cfg, data)
    assert result.status == "completed"
    assert all(np.max(np.abs(smp.tau)) <= 1e-10 for smp in result.samples)
    assert all(np.array_equal(smp.x, data.x0) for smp in result.samples)


def test_hanging_run_keeps_margin():
    cfg = SimConfig(N=60, T_end=0.5, sample_every=10)
    data = pendulum(cfg.mesh(), DOWN, 0.2)
    result = run(cfg, data)
    assert result.status == "completed"
    assert result.samples[-1].t == pytest.approx(0.5)
    margins = [smp.monitors["min_tau_over_s"] for smp in result.samples]
    assert min(margins) >= 0.5 * margins[0]
    assert all(smp.monitors["stability"].sc1_holds() for smp in result.samples)
    assert not result.certificate_failures


def test_run_samples_on_cadence():
    cfg = SimConfig(N=40, T_end=0.3, dt=0.01, sample_every=7)
    result = run(cfg, stationary(cfg.mesh(), DOWN))
    steps = [round(smp.t / 0.01) for smp in result.samples]
    assert steps == [0, 7, 14, 21, 28, 30]
    assert len(result.monitor_rows()) == len(steps)


def test_run_is_deterministic():
    cfg = SimConfig(N=40, T_end=0.1, sample_every=3)
    first = run(cfg, pendulum(cfg.mesh(), DOWN, 0.1))
    second = run(cfg, pendulum(cfg.mesh(), DOWN, 0.1))
    for a, b in zip(first.samples, second.samples):
        assert np.array_equal(a.x, b.x) and np.array_equal(a.xdot, b.xdot)
