"""Command-line entry point: ``swe-fvpinn <command> <config> [key=value ...] [--out DIR] [--seed N]``.

Commands: mesh-gen, teacher, train, eval, landscape, gradcheck.  Exit codes: 0 ok,
2 invalid configuration, 3 numerical failure, 4 missing input.  Failures print a
one-line JSON record on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import jax.numpy as jnp
import numpy as np

from ._io import atomic_write_text, write_csv
from .autodiff import NonFiniteError
from .config import Case, CaseConfig, ConfigError, MissingInputError, build_case, build_case_mesh, dam_break_spec, load_config
from .diagnostics import (
    alpha_sweep, conservation_audit, error_report, evaluate_model, gradient_check, primitives, write_error_reports,
)
from .losses import AnchorSet, LossContext, LossWeights, make_objective, observations_from_state
from .mesh import MeshError, geometry_audit, save_mesh
from .network import load_checkpoint, save_checkpoint
from .reference import stoker_dambreak
from .teacher import TeacherError, export_trajectory
from .training import TrainingError, WindowedModel, WindowPlan, sample_times, train_windows

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_MISSING = 0, 2, 3, 4
COMMANDS = ("mesh-gen", "teacher", "train", "eval", "landscape", "gradcheck")
FIELD_HEADER = ["cell_id", "x", "y", "t", "h", "u", "v", "xi", "uh", "vh"]

log = logging.getLogger("swe_fvpinn")


def _summary(out: Path, payload: dict) -> None:
    atomic_write_text(out / "summary.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(json.dumps(payload, sort_keys=True))


def write_fields(path, mesh, states, times) -> None:
    rows = []
    for t, s in zip(times, states):
        h, u, v = primitives(s, mesh.cell_hs)
        for i in range(mesh.n_cells):
            x, y = mesh.cell_centroid[i]
            rows.append((i, x, y, float(t), h[i], u[i], v[i], *map(float, s[i])))
    write_csv(path, FIELD_HEADER, rows)


def _checkpoint_path(cfg: CaseConfig, out: Path, given: str | None) -> Path:
    p = Path(given) if given else out / "checkpoint.npz"
    if not p.is_file():
        raise MissingInputError(f"checkpoint not found: {p}")
    return p


def _load_model(path: Path):
    net, params, meta = load_checkpoint(path)
    b = meta.get("extra", {}).get("windows")
    if len(params) > 1:
        return WindowedModel(net, WindowPlan(tuple(b))), [jnp.asarray(p) for p in params]
    return net, jnp.asarray(params[0])


# --------------------------------------------------------------------------- commands


def cmd_mesh_gen(cfg: CaseConfig, out: Path, args) -> dict:
    mesh = build_case_mesh(cfg)
    audit = geometry_audit(mesh)
    save_mesh(mesh, out / "mesh.swemesh")
    return {"cells": mesh.n_cells, "faces": len(mesh.face_left), "audit_ok": bool(audit.passed), "mesh": str(out / "mesh.swemesh")}


def cmd_teacher(cfg: CaseConfig, out: Path, args) -> dict:
    case = build_case(cfg, with_data=False)
    te = cfg["data"]["teacher"]
    traj = case.teacher(int(te["n_snap"]), float(te["cfl"]))
    index = export_trajectory(traj, out / "teacher")
    write_fields(out / "teacher_fields.csv", case.mesh, traj.states, traj.times)
    audit = conservation_audit(traj, case.mesh)
    return {"snapshots": len(traj.times), "steps": traj.n_steps, "index": str(index), "mass_rel_error": audit.max_rel}


def cmd_train(cfg: CaseConfig, out: Path, args) -> dict:
    case = build_case(cfg)
    extra = {"windows": list(case.plan.boundaries), "case": cfg["case"]["name"]}
    try:
        run = train_windows(case, case.plan)
    except TrainingError as e:
        good = e.last_good if isinstance(e.last_good, list) else [e.last_good]
        if good and good[-1] is not None:
            b = list(case.plan.boundaries[: len(good) + 1])
            save_checkpoint(out / "checkpoint_last_good.npz", case.net, good, {**extra, "windows": b, "aborted": True})
        if e.history is not None:
            e.history.save(out / "history.csv")
        raise
    save_checkpoint(out / "checkpoint.npz", case.net, run.params, extra)
    run.history.save(out / "history.csv")
    for k, ic in enumerate(run.handoffs, start=2):
        write_fields(out / f"handoff_w{k}.csv", case.mesh, [ic], [case.plan.boundaries[k - 1]])
    last = run.history.rows[-1]
    return {"steps": len(run.history.rows), "windows": case.plan.n, "final_loss": last[2],
            "checkpoint": str(out / "checkpoint.npz"), "history": str(out / "history.csv")}


def _reference(case: Case, cfg: CaseConfig):
    """List of ``(time, state)`` reference pairs according to ``[reference]``."""
    r = cfg["reference"]
    kind = r["type"]
    times = [float(t) for t in r["times"]] or [case.train.T]
    mesh = case.mesh
    if kind == "stoker":
        spec = dam_break_spec(cfg)
        out = []
        for t in times:
            h, u = stoker_dambreak(spec, mesh.cell_centroid[:, 0], t - case.train.t0)
            out.append((t, np.column_stack([h - mesh.cell_hs, h * u, np.zeros_like(h)])))
        return out
    if kind == "teacher":
        traj = case.teacher(int(r["n_snap"]), float(r["cfl"]))
        return [(t, traj.at(t)) for t in times] if r["times"] else [(traj.times[-1], traj.states[-1])]
    if kind == "anchors":
        if case.anchors is None or not len(case.anchors):
            raise ConfigError("reference.type = 'anchors' needs data.anchors")
        return list(zip(case.anchors.times.tolist(), case.anchors.states))
    raise ConfigError("eval needs reference.type other than 'none'")


def cmd_eval(cfg: CaseConfig, out: Path, args) -> dict:
    ckpt = _checkpoint_path(cfg, out, args.checkpoint)
    case = build_case(cfg)
    model, params = _load_model(ckpt)
    refs = _reference(case, cfg)
    reports, preds = [], []
    for t, ref in refs:
        pred = evaluate_model(model, params, case.mesh, t)
        preds.append(pred)
        reports.append(error_report(pred, ref, case.mesh, t))
    write_error_reports(reports, out / "errors.csv")
    write_fields(out / "fields.csv", case.mesh, preds, [t for t, _ in refs])
    last = reports[-1].entries
    return {"time": reports[-1].time, "l2_h": last["h"][0], "linf_h": last["h"][1], "l2_speed": last["speed"][0],
            "errors": str(out / "errors.csv")}


def _context(case: Case) -> LossContext:
    return LossContext(case.disc, case.train.t0, ic_state=case.ic, observations=case.observations, anchors=case.anchors,
                       sparse_weight=case.sparse_weight, anchor_weight=case.anchor_weight,
                       extra_anchors=case.extra_anchors, extra_weight=case.extra_weight)


def cmd_landscape(cfg: CaseConfig, out: Path, args) -> dict:
    ckpt = _checkpoint_path(cfg, out, args.checkpoint)
    case = build_case(cfg)
    model, params = _load_model(ckpt)
    ls = cfg["landscape"]
    times = sample_times(int(ls["n_t"]), case.train.t0, case.train.T, np.random.default_rng(int(ls["seed"])))
    curve = alpha_sweep(model, params, _context(case), ls["alphas"], times, case.train.weights)
    curve.save(out / "landscape.csv")
    return {
        "fvm_ratio": curve.value("loss_fvm", 0.0) / curve.value("loss_fvm", 1.0),
        "data_ratio": (curve.value("loss_data", 0.0) / curve.value("loss_data", 1.0)) if curve.value("loss_data", 1.0) > 0 else None,
        "landscape": str(out / "landscape.csv"),
    }


def cmd_gradcheck(cfg: CaseConfig, out: Path, args) -> dict:
    """Finite-difference check of the total loss with all four terms switched on."""
    case = build_case(cfg)
    tc = case.train
    ctx = _context(case)
    if ctx.n_data == 0:
        # synthesise data so the data term is exercised
        mid = 0.5 * (tc.t0 + tc.T)
        obs = observations_from_state(case.mesh, case.ic, mid, 4, tc.seed_noise, ("h", "u", "v"))
        ctx = LossContext(case.disc, tc.t0, ic_state=case.ic, observations=obs,
                          anchors=AnchorSet(np.array([tc.T]), case.ic[None]))
    w = tc.weights
    weights = LossWeights(*(v if v > 0 else 1.0 for v in (w.fvm, w.bc, w.ic, w.data)))
    times = sample_times(2, tc.t0, tc.T, np.random.default_rng(tc.seed_sampling))
    objective = make_objective(case.net, ctx, weights)
    gc = cfg["gradcheck"]
    n = int(gc["n_coords"]) or None
    rep = gradient_check(lambda p: objective(p, jnp.asarray(times))[0], case.params0, n, float(gc["step"]), tc.seed_init)
    write_csv(out / "gradcheck.csv", ["n_checked", "max_rel_error", "worst_index"], [(rep.n_checked, rep.max_rel_error, rep.worst_index)])
    return {"n_params": int(case.params0.size), "n_checked": rep.n_checked, "max_rel_error": rep.max_rel_error}


HANDLERS = {"mesh-gen": cmd_mesh_gen, "teacher": cmd_teacher, "train": cmd_train, "eval": cmd_eval,
            "landscape": cmd_landscape, "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swe-fvpinn", description="Finite-volume informed neural surrogates for the shallow water equations.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("config", help="TOML case file")
    p.add_argument("overrides", nargs="*", help="dotted key=value overrides, e.g. training.adam.epochs=100")
    p.add_argument("--out", help="output directory (default: output.dir of the case)")
    p.add_argument("--seed", type=int, help="base seed: init=N, sampling=N+1, noise=N+2")
    p.add_argument("--checkpoint", help="checkpoint for eval/landscape (default: OUT/checkpoint.npz)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"training.seed_init={args.seed}", f"training.seed_sampling={args.seed + 1}",
                      f"training.seed_noise={args.seed + 2}"]
    try:
        cfg = load_config(args.config, overrides)
        out = Path(args.out) if args.out else cfg.out_dir
        if args.command in ("eval", "landscape"):
            _checkpoint_path(cfg, out, args.checkpoint)  # fail before creating anything
        out.mkdir(parents=True, exist_ok=True)
        payload = HANDLERS[args.command](cfg, out, args)
        _summary(out, {"command": args.command, "status": "ok", **payload})
        return EXIT_OK
    except MissingInputError as e:
        return _fail(EXIT_MISSING, "missing_input", str(e), args.command)
    except (ConfigError, MeshError) as e:
        return _fail(EXIT_CONFIG, "config", str(e), args.command)
    except (TrainingError, TeacherError, NonFiniteError, FloatingPointError) as e:
        return _fail(EXIT_NUMERICAL, "numerical", str(e), args.command)


def _fail(code: int, kind: str, msg: str, command: str) -> int:
    print(json.dumps({"status": "error", "command": command, "kind": kind, "exit_code": code, "message": msg}), file=sys.stderr)
    return code


def main() -> None:  # pragma: no cover
    sys.exit(run())


if __name__ == "__main__":  # pragma: no cover
    main()
