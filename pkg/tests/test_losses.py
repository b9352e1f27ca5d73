import jax.numpy as jnp
import numpy as np
import pytest

from swe_fvpinn.losses import (
    AnchorSet, LossContext, LossWeights, ObservationSet, add_noise, fvm_residuals, loss_bc, loss_data, loss_fvm,
    loss_ic, observations_from_state, read_anchor, read_observations, total_loss, write_anchor, write_observations,
)
from swe_fvpinn.mesh import EXIT, INLET, WALL, generate_channel_mesh, generate_strip_mesh
from swe_fvpinn.swe import Discretization, PhysParams
from swe_fvpinn.teacher import TeacherConfig, run_teacher


def constant_model(q0):
    q0 = jnp.asarray(q0, dtype=float)

    def model(params, xyt, h_s):
        return jnp.broadcast_to(q0, jnp.shape(xyt)[:-1] + (3,)) + 0.0 * xyt[..., :1]

    return model


def lookup_model(mesh, states):
    """Piecewise-constant field: nearest centroid, independent of time."""
    c = jnp.asarray(mesh.cell_centroid)
    s = jnp.asarray(states)

    def model(params, xyt, h_s):
        d2 = jnp.sum((xyt[..., None, :2] - c) ** 2, axis=-1)
        return s[jnp.argmin(d2, axis=-1)]

    return model


def _ctx(mesh, **kw):
    return LossContext(Discretization(mesh, PhysParams(**kw.pop("phys", {}))), 0.0, **kw)


def test_fvm_zero_for_rest_on_closed_flat_basin():
    m = generate_channel_mesh(3.0, 2.0, None, 0.5, reference_ws=1.0, inlet=(WALL, 0.0), exit=(WALL, 0.0))
    ctx = _ctx(m)
    r = fvm_residuals(constant_model([0.0, 0.0, 0.0]), None, ctx, jnp.array([0.1, 0.5]))
    assert np.all(np.asarray(r) == 0.0)
    assert float(loss_fvm(constant_model([0.0, 0.0, 0.0]), None, ctx, jnp.array([0.3]))) == 0.0


def test_fvm_formula_single_cell():
    m = generate_strip_mesh(np.sqrt(2.0), 1, np.sqrt(2.0), reference_ws=1.0)
    ctx = _ctx(m)
    model = lambda p, xyt, hs: jnp.stack([xyt[..., 2], 0 * xyt[..., 0], 0 * xyt[..., 0]], -1)  # noqa: E731
    # closed basin with uniform xi: flux divergence vanishes, R = (1, 0, 0); A = 2
    assert float(loss_fvm(model, None, ctx, jnp.array([0.0]))) == pytest.approx(2.0, rel=1e-14)


def test_lookup_of_teacher_state_has_teacher_residual():
    m = generate_channel_mesh(4.0, 2.0, (1.5, 2.5, 0.5, 1.5), 0.5, reference_ws=0.5,
                              inlet=(INLET, 0.1), exit=(EXIT, 0.5))
    disc = Discretization(m, PhysParams(manning_n=(0.03,)))
    traj = run_teacher(np.zeros((m.n_cells, 3)), TeacherConfig(T=5.0, n_snap=2), disc)
    q = traj.states[-1]
    own = np.abs(np.asarray(disc.rhs(q))).max()
    r = np.asarray(fvm_residuals(lookup_model(m, q), None, LossContext(disc, 0.0), jnp.array([1.0])))
    assert np.abs(r).max() <= own * (1 + 1e-12) + 1e-15


def test_ic_examples():
    m = generate_strip_mesh(2.0, 5, 1.0, reference_ws=1.0)
    rng = np.random.default_rng(0)
    ic = rng.normal(size=(5, 3))
    ctx = _ctx(m, ic_state=ic)
    assert float(loss_ic(lookup_model(m, ic), None, ctx)) == 0.0
    off = ic.copy()
    off[:, 0] += 0.3
    assert float(loss_ic(lookup_model(m, off), None, ctx)) == pytest.approx(0.09, rel=1e-12)
    brute = sum(float(np.sum(ic[i] ** 2)) for i in range(5)) / 5
    assert float(loss_ic(constant_model([0.0, 0.0, 0.0]), None, ctx)) == pytest.approx(brute, rel=1e-14)


def test_bc_examples():
    closed = generate_channel_mesh(2.0, 1.0, None, 0.5, reference_ws=1.0, inlet=(WALL, 0.0), exit=(WALL, 0.0))
    ctx = _ctx(closed)
    assert float(loss_bc(constant_model([0.2, 0.0, 0.0]), None, ctx, jnp.array([0.1, 0.9]))) == 0.0
    one = generate_strip_mesh(1.0, 1, 1.0, reference_ws=1.0, west=(INLET, 0.5))
    ctx = _ctx(one)
    nb = len(one.boundary_faces)
    assert nb * float(loss_bc(constant_model([0.0, 0.0, 0.0]), None, ctx, jnp.array([0.0]))) == pytest.approx(0.25)
    # the inflow that satisfies the inlet makes the west face exact; the east wall then sees u_n h = 0.5
    val = nb * float(loss_bc(constant_model([0.0, 0.5, 0.0]), None, ctx, jnp.array([0.0])))
    assert val == pytest.approx(0.25)


def test_bc_exit_level():
    m = generate_strip_mesh(1.0, 1, 1.0, reference_ws=1.0, east=(EXIT, 1.2))
    ctx = _ctx(m)
    assert float(loss_bc(constant_model([0.2, 0.0, 0.0]), None, ctx, jnp.array([0.0]))) == pytest.approx(0.0, abs=1e-28)


def test_data_examples():
    m = generate_strip_mesh(4.0, 4, 1.0, reference_ws=1.0)
    assert float(loss_data(constant_model([0, 0, 0]), None, _ctx(m))) == 0.0
    obs = ObservationSet([[0.5, 0.5, 0.0]], [[np.nan, 0.1, 99.0]], [[False, True, False]])
    ctx = _ctx(m, observations=obs)
    assert float(loss_data(constant_model([0, 0, 0]), None, ctx)) == pytest.approx(0.01, rel=1e-12)


def test_data_matches_brute_force_on_analytic_field():
    m = generate_channel_mesh(4.0, 2.0, None, 0.5, reference_ws=1.0)
    rng = np.random.default_rng(4)
    xyt = np.column_stack([rng.uniform(0, 4, 200), rng.uniform(0, 2, 200), rng.uniform(0, 1, 200)])
    vals = rng.normal(size=(200, 3))
    vals[:, 0] = 1.0 + 0.1 * vals[:, 0]
    mask = rng.random((200, 3)) < 0.6
    mask[~mask.any(1), 1] = True
    obs = ObservationSet(xyt, vals, mask)
    ctx = _ctx(m, observations=obs)

    def field(p, xyt, hs):
        x, y, t = xyt[..., 0], xyt[..., 1], xyt[..., 2]
        return jnp.stack([0.1 * jnp.sin(x) * t, 0.2 * y, -0.1 * x * t], -1)

    q = np.asarray(field(None, xyt, None))
    h = q[:, 0] + 1.0
    pred = np.column_stack([h, q[:, 1] / h, q[:, 2] / h])
    brute = np.sum(np.where(mask, (pred - vals) ** 2, 0.0)) / 200
    assert float(loss_data(field, None, ctx)) == pytest.approx(brute, rel=1e-12)


def test_data_pools_anchors():
    m = generate_strip_mesh(2.0, 2, 1.0, reference_ws=1.0)
    a = AnchorSet([0.5], np.ones((2, 3)))
    ctx = _ctx(m, anchors=a, anchor_weight=2.0)
    # two anchor cells, squared norm 3 each, weight 2, mean over the 2 data points
    assert float(loss_data(constant_model([0, 0, 0]), None, ctx)) == pytest.approx(2.0 * 3 * 2 / 2)


def test_total_examples():
    terms = {"fvm": 1.0, "bc": 1.0, "ic": 1.0, "data": 1.0}
    assert total_loss(terms, LossWeights(0, 0, 0, 0)).total == 0
    assert total_loss(terms, LossWeights(1, 30, 10, 10)).total == 51
    with pytest.raises(ValueError):
        LossWeights(-1.0)


def _obs(n=10_000, seed=0):
    rng = np.random.default_rng(seed)
    return ObservationSet(rng.random((n, 3)), np.column_stack([np.ones(n), rng.uniform(-1, 1, n), np.zeros(n)]),
                          np.tile([False, True, False], (n, 1)))


def test_noise():
    o = _obs()
    assert np.array_equal(add_noise(o, 0.0, 1).values, o.values)
    a, b = add_noise(o, 0.05, 3), add_noise(o, 0.05, 3)
    assert np.array_equal(a.values, b.values)
    umax = np.abs(o.values[:, 1]).max()
    std = np.std(a.values[:, 1] - o.values[:, 1])
    assert abs(std - 0.05 * umax) <= 0.02 * 0.05 * umax
    assert np.all(a.values[:, 2] == 0)  # masked component untouched


def test_observation_and_anchor_files(tmp_path):
    o = _obs(20)
    write_observations(o, tmp_path / "o.csv")
    o2 = read_observations(tmp_path / "o.csv")
    assert np.array_equal(o2.values, o.values) and np.array_equal(o2.mask, o.mask)
    s = np.random.default_rng(1).normal(size=(7, 3))
    write_anchor(s, tmp_path / "a.csv")
    assert np.array_equal(read_anchor(tmp_path / "a.csv", 7), s)
    with pytest.raises(ValueError):
        read_anchor(tmp_path / "a.csv", 8)


def test_observations_from_state_reads_cells():
    m = generate_channel_mesh(4.0, 2.0, (1.5, 2.5, 0.5, 1.5), 0.5, reference_ws=1.0)
    s = np.column_stack([np.zeros(m.n_cells), np.arange(m.n_cells, dtype=float), np.zeros(m.n_cells)])
    o = observations_from_state(m, s, 2.0, 50, 0)
    cells = m.locate(o.xyt[:, :2])
    np.testing.assert_allclose(o.values[:, 1], cells / m.cell_hs[cells])
    assert np.all(o.xyt[:, 2] == 2.0) and not o.mask[:, 0].any()
