import jax.numpy as jnp
import numpy as np
import pytest

from swe_fvpinn.diagnostics import (
    alpha_sweep, conservation_audit, error_report, gradient_check, l2_error, linf_error, momentum_scaled, velocity_l2,
    write_error_reports,
)
from swe_fvpinn.losses import LossContext, LossWeights, all_loss_terms, observations_from_state
from swe_fvpinn.mesh import INLET, WALL, generate_channel_mesh, generate_strip_mesh
from swe_fvpinn.network import NetworkConfig, Normalizer, init_network
from swe_fvpinn.swe import Discretization, PhysParams
from swe_fvpinn.teacher import TeacherConfig, run_teacher


def test_l2_examples():
    rng = np.random.default_rng(0)
    a, b, w = rng.normal(size=30), rng.normal(size=30), rng.uniform(0.5, 2, 30)
    assert l2_error(a, a, w) == 0.0
    assert l2_error(a + 0.3, a, w) == pytest.approx(0.3, rel=1e-14)
    assert l2_error(a, b, w) == pytest.approx(np.sqrt(sum(w[i] * (a[i] - b[i]) ** 2 for i in range(30)) / w.sum()))
    with pytest.raises(ValueError):
        l2_error(a, b[:-1])


def test_linf_examples():
    a = np.zeros(10)
    b = a.copy()
    b[4] = 0.7
    assert linf_error(a, a) == 0.0 and linf_error(b, a) == 0.7
    rng = np.random.default_rng(1)
    for _ in range(50):
        p, r = rng.normal(size=20), rng.normal(size=20)
        assert linf_error(p, r) >= l2_error(p, r, np.ones(20))
    with pytest.raises(ValueError):
        linf_error(a, a[:3])


def test_error_report_and_file(tmp_path):
    m = generate_strip_mesh(2.0, 4, 1.0, reference_ws=1.0)
    ref = np.zeros((4, 3))
    pred = ref.copy()
    pred[:, 0] = 0.1
    pred[:, 1] = 0.11
    rep = error_report(pred, ref, m, 1.0)
    assert rep.entries["h"][0] == pytest.approx(0.1)
    assert rep.entries["u"][0] == pytest.approx(0.1)
    assert velocity_l2(pred, ref, m) == pytest.approx(0.1)
    write_error_reports([rep], tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "time,var,l2,linf" and len(lines) == 1 + 7


def _setup():
    m = generate_channel_mesh(3.0, 2.0, None, 1.0, reference_ws=0.5, inlet=(INLET, 0.1))
    d = Discretization(m, PhysParams(manning_n=(0.02,)))
    net, p = init_network(NetworkConfig(8, 2, 4, 1.0), 0, Normalizer.for_domain(m.cell_centroid, 0.0, 1.0))
    s = np.column_stack([np.zeros(m.n_cells), 0.05 * np.ones(m.n_cells), np.zeros(m.n_cells)])
    obs = observations_from_state(m, s, 0.5, 10, 0)
    ctx = LossContext(d, 0.0, ic_state=np.zeros((m.n_cells, 3)), observations=obs)
    return m, net, p, ctx


def test_alpha_sweep_identity_and_depth_untouched():
    m, net, p, ctx = _setup()
    times = np.array([0.2, 0.7])
    curve = alpha_sweep(net, p, ctx, [0.5, 2.0], times)
    assert list(curve.alpha) == [0.0, 0.5, 1.0, 2.0]
    terms = all_loss_terms(net, jnp.asarray(p), ctx, jnp.asarray(times))
    assert curve.value("loss_fvm", 1.0) == pytest.approx(float(terms["fvm"]), rel=1e-12)
    assert curve.value("loss_data", 1.0) == pytest.approx(float(terms["data"]), rel=1e-12)
    xyt = np.column_stack([m.cell_centroid, np.full(m.n_cells, 0.3)])
    for a in (0.0, 0.5, 3.0):
        q = np.asarray(momentum_scaled(net, a)(p, xyt, m.cell_hs))
        q1 = np.asarray(net(p, xyt, m.cell_hs))
        assert np.array_equal(q[:, 0], q1[:, 0])
        np.testing.assert_allclose(q[:, 1:], a * q1[:, 1:], rtol=1e-15)


def test_landscape_save(tmp_path):
    _, net, p, ctx = _setup()
    c = alpha_sweep(net, p, ctx, [], np.array([0.5]), LossWeights(1, 0, 0, 1))
    c.save(tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "alpha,loss_fvm,loss_data,loss_total"
    assert c.value("loss_total", 1.0) == pytest.approx(c.value("loss_fvm", 1.0) + c.value("loss_data", 1.0))


def test_conservation_closed_and_inflow():
    m = generate_strip_mesh(10.0, 20, 1.0, reference_ws=1.0)
    d = Discretization(m, PhysParams())
    ic = np.zeros((20, 3))
    ic[:10, 0] = 0.3
    tr = run_teacher(ic, TeacherConfig(T=1.0, n_snap=5), d)
    rep = conservation_audit(tr, m)
    assert rep.passes(1e-10)
    vol = tr.states[:, :, 0] @ m.cell_area
    assert np.max(np.abs(vol - vol[0])) <= 1e-10 * (vol[0] + 10.0)

    q, w = 0.025, 2.0  # per unit width; the inlet patch carries the total discharge
    ch = generate_channel_mesh(4.0, w, None, 0.5, reference_ws=0.5, inlet=(INLET, q * w), exit=(WALL, 0.0))
    d = Discretization(ch, PhysParams())
    tr = run_teacher(np.zeros((ch.n_cells, 3)), TeacherConfig(T=2.0, n_snap=5), d)
    vol = tr.states[:, :, 0] @ ch.cell_area
    rate = np.diff(vol) / np.diff(tr.times)
    np.testing.assert_allclose(rate, q * w, rtol=0.01)
    assert conservation_audit(tr, ch).passes(1e-10)


def test_conservation_needs_two_snapshots():
    m = generate_strip_mesh(1.0, 1, 1.0, reference_ws=1.0)
    tr = run_teacher(np.zeros((1, 3)), TeacherConfig(T=0.1), Discretization(m, PhysParams()))
    tr.times, tr.states = tr.times[:1], tr.states[:1]
    with pytest.raises(ValueError):
        conservation_audit(tr, m)


def test_gradient_check_detects_wrong_gradient():
    rep = gradient_check(lambda p: jnp.sum(jnp.sin(p) * p), np.linspace(-1, 1, 7))
    assert rep.max_rel_error < 1e-8 and rep.n_checked == 7
    rep = gradient_check(lambda p: jnp.sum(p**2), np.ones(20), n_coords=5, seed=3)
    assert rep.n_checked == 5
