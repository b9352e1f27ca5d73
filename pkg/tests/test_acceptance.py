"""Acceptance suite: one test per criterion, at the stated tolerances.

Criteria 4, 7, 8, 9 and 10 train networks and take tens of minutes on one CPU;
they are marked ``slow`` (deselect with ``-m "not slow"``).  Expensive runs are
cached per module so 8 reuses the data-guided checkpoint of 7 and 10 repeats
the run of 4.
"""
import csv
import json
from pathlib import Path

import numpy as np
import pytest

from oracles import roe_flux_eig
from swe_fvpinn.cli import run
from swe_fvpinn.config import build_case, dam_break_spec, load_config
from swe_fvpinn.diagnostics import conservation_audit, evaluate_model, l2_error, velocity_l2
from swe_fvpinn.mesh import WALL, generate_channel_mesh
from swe_fvpinn.network import load_checkpoint
from swe_fvpinn.reference import lake_at_rest, stoker_dambreak
from swe_fvpinn.swe import Discretization, PhysParams, normal_flux, roe_flux
from swe_fvpinn.teacher import heun_step, stable_dt
from swe_fvpinn.training import WindowedModel, train_windows

CASES = Path(__file__).resolve().parents[1] / "cases"
P = PhysParams()


def cli(*args):
    code = run([str(a) for a in args])
    assert code == 0, f"{args[0]} exited with {code}"
    return json.loads((Path(args[args.index("--out") + 1]) / "summary.json").read_text())


def history_rows(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [{k: v for k, v in r.items() if k != "wall_s"} for r in rows]


# --------------------------------------------------------------------------- 1


def test_c1_well_balanced_bumpy_basin():
    bed = lambda x, y: 0.15 * np.exp(-((x - 2.0) ** 2 + (y - 1.0) ** 2)) + 0.05 * np.sin(3 * x) * np.cos(2 * y)  # noqa: E731
    m = generate_channel_mesh(4.0, 2.0, (2.5, 3.0, 0.5, 1.0), 0.2, bed_profile=bed, reference_ws=0.5,
                              inlet=(WALL, 0.0), exit=(WALL, 0.0))
    d = Discretization(m, PhysParams(manning_n=(0.03,)))
    q = lake_at_rest(m)
    dt = stable_dt(q, d, 0.5)
    for _ in range(1000):
        q = heun_step(q, dt, d)
    assert np.abs(q).max(axis=0).max() <= 1e-12


# --------------------------------------------------------------------------- 2


def _wet_faces(rng, k):
    hs = rng.uniform(0.1, 3.0, k)
    ql = np.column_stack([rng.uniform(-0.5, 1.0, k) * hs, rng.normal(0, 2, k), rng.normal(0, 2, k)])
    qr = np.column_stack([rng.uniform(-0.5, 1.0, k) * hs, rng.normal(0, 2, k), rng.normal(0, 2, k)])
    th = rng.uniform(0, 2 * np.pi, k)
    return ql, qr, hs, np.column_stack([np.cos(th), np.sin(th)])


def test_c2_roe_consistency_antisymmetry_and_oracle():
    rng = np.random.default_rng(2024)
    ql, qr, hs, n = _wet_faces(rng, 10_000)

    f = np.asarray(normal_flux(ql, hs, n, P))
    scale = np.maximum(np.abs(f).max(axis=1, keepdims=True), 1e-300)
    assert np.max(np.abs(np.asarray(roe_flux(ql, ql, hs, n, P)) - f) / scale) <= 1e-13

    fwd = np.asarray(roe_flux(ql, qr, hs, n, P))
    back = np.asarray(roe_flux(qr, ql, hs, -n, P))
    scale = np.maximum(np.abs(fwd).max(axis=1, keepdims=True), 1e-300)
    assert np.max(np.abs(fwd + back) / scale) <= 1e-13

    k = 1000
    ref = np.array([roe_flux_eig(ql[i], qr[i], hs[i], n[i]) for i in range(k)])
    scale = np.maximum(np.abs(ref).max(axis=1, keepdims=True), 1.0)
    assert np.max(np.abs(fwd[:k] - ref) / scale) <= 1e-10


# --------------------------------------------------------------------------- 3


def test_c3_gradient_matches_finite_differences(tmp_path):
    s = cli("gradcheck", CASES / "gradcheck.toml", "mesh.Lx=3.0", "mesh.Ly=3.0", "mesh.target_size=1.0",
            "network.width=32", "network.depth=2", "network.n_fourier=8", "--out", tmp_path)
    case = build_case(load_config(CASES / "gradcheck.toml", ["mesh.Lx=3.0", "mesh.Ly=3.0", "mesh.target_size=1.0"]))
    assert case.mesh.n_cells == 9
    assert s["n_checked"] == s["n_params"]
    assert s["max_rel_error"] <= 1e-6


# --------------------------------------------------------------------------- 4 and 10


@pytest.fixture(scope="module")
def dambreak_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("dambreak")
    outs = []
    for k in range(2):
        out = root / f"run{k}"
        cli("train", CASES / "dambreak.toml", "--out", out)
        outs.append(out)
    return outs


@pytest.mark.slow
def test_c4_dambreak_against_stoker(dambreak_runs):
    s = cli("eval", CASES / "dambreak.toml", "--out", dambreak_runs[0])
    assert s["time"] == 1.0
    assert s["l2_h"] <= 1.2e-1


@pytest.mark.slow
def test_c10_repeat_is_bitwise_identical(dambreak_runs):
    a, b = dambreak_runs
    assert history_rows(a / "history.csv") == history_rows(b / "history.csv")
    _, pa, _ = load_checkpoint(a / "checkpoint.npz")
    _, pb, _ = load_checkpoint(b / "checkpoint.npz")
    assert all(np.array_equal(x, y) for x, y in zip(pa, pb))


# --------------------------------------------------------------------------- 5


def test_c5_teacher_converges_under_refinement():
    errs = []
    for n in (100, 200):
        cfg = load_config(CASES / "dambreak.toml", [f"mesh.n_cells={n}"])
        case = build_case(cfg, with_data=False)
        traj = case.teacher(2, 0.5)
        h_ref, _ = stoker_dambreak(dam_break_spec(cfg), case.mesh.cell_centroid[:, 0], 1.0)
        errs.append(l2_error(traj.at(1.0)[:, 0] + case.mesh.cell_hs, h_ref, case.mesh.cell_area))
    assert errs[0] / errs[1] >= 1.3


# --------------------------------------------------------------------------- 6


@pytest.mark.parametrize("name,overrides", [
    ("dambreak.toml", []),
    ("bic_reduced.toml", ["training.T=5.0"]),
])
def test_c6_mass_budget_per_interval(name, overrides):
    case = build_case(load_config(CASES / name, overrides), with_data=False)
    traj = case.teacher(11, 0.5)
    rep = conservation_audit(traj, case.mesh)
    assert rep.max_rel <= 1e-10


# --------------------------------------------------------------------------- 7 and 8


@pytest.fixture(scope="module")
def bic_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("bic")
    variants = {"physics": "training.weights.data=0.0", "guided": "training.weights.data=10.0"}
    out = {}
    for name, ov in variants.items():
        d = root / name
        cli("train", CASES / "bic_reduced.toml", ov, "--out", d)
        case = build_case(load_config(CASES / "bic_reduced.toml", [ov]))
        _, params, _ = load_checkpoint(d / "checkpoint.npz")
        T = case.train.T
        ref = case.teacher(7, 0.5).at(T)
        out[name] = (d, ov, velocity_l2(evaluate_model(case.net, params[0], case.mesh, T), ref, case.mesh))
    return out


@pytest.mark.slow
def test_c7_sparse_velocity_data_reduce_error(bic_runs):
    case = build_case(load_config(CASES / "bic_reduced.toml", ["training.weights.data=10.0"]))
    assert len(case.observations) == 200 and 250 <= case.mesh.n_cells <= 350
    physics, guided = bic_runs["physics"][2], bic_runs["guided"][2]
    assert physics >= 5.0 * guided, (physics, guided)


@pytest.mark.slow
def test_c8_landscape_separation(bic_runs):
    d, ov, _ = bic_runs["guided"]
    s = cli("landscape", CASES / "bic_reduced.toml", ov, "--out", d)
    assert 2.0 <= s["fvm_ratio"] <= 100.0
    assert s["data_ratio"] >= 10.0 * s["fvm_ratio"]


# --------------------------------------------------------------------------- 9


@pytest.mark.slow
def test_c9_more_windows_do_not_hurt():
    errs = {}
    for n in (1, 4):
        case = build_case(load_config(CASES / "long_strip.toml", [f"windows.n={n}"]))
        res = train_windows(case, case.plan)
        T = case.train.T
        model = WindowedModel(case.net, res.plan) if n > 1 else case.net
        params = res.params if n > 1 else res.params[0]
        pred = evaluate_model(model, params, case.mesh, T)
        ref = case.teacher(9, 0.5).at(T)
        errs[n] = l2_error(pred[:, 0], ref[:, 0], case.mesh.cell_area)
        if n > 1:
            for k, ic in enumerate(res.handoffs, start=1):
                tau = res.plan.boundaries[k]
                assert np.array_equal(ic, evaluate_model(case.net, res.params[k - 1], case.mesh, tau))
    assert errs[4] <= errs[1], errs
