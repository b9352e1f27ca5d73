"""TOML case files and the case builder.

A case file has the sections ``case``, ``mesh``, ``physics``, ``boundary``,
``initial``, ``network``, ``training`` (with ``weights``, ``adam``, ``lbfgs``),
``windows``, ``data`` (with ``sparse``, ``teacher``), ``reference``,
``landscape``, ``gradcheck`` and ``output``.  The full key list with defaults is in ``docs/config.md``.
Relative paths are resolved against the directory of the case file.
"""
from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .losses import AnchorSet, LossWeights, ObservationSet, add_noise, observations_from_state, read_anchor, read_observations
from .mesh import EXIT, INLET, WALL, Mesh, generate_channel_mesh, generate_strip_mesh, load_mesh
from .network import NetworkConfig, Normalizer, SurrogateNetwork, init_network
from .optim import AdamConfig, LBFGSConfig
from .reference import DamBreakSpec, bump_bed
from .swe import Discretization, PhysParams
from .teacher import TeacherConfig, Trajectory, run_teacher
from .training import TrainConfig, WindowPlan


class ConfigError(ValueError):
    """Invalid or inconsistent case configuration (CLI exit code 2)."""


class MissingInputError(FileNotFoundError):
    """A file referenced by the configuration does not exist (CLI exit code 4)."""


DEFAULTS: dict = {
    "case": {"name": "case"},
    "mesh": {"generator": "strip", "path": "", "length": 20.0, "n_cells": 100, "width": 0.2, "x0": 0.0,
             "Lx": 15.0, "Ly": 5.0, "block": [], "target_size": 0.5, "bed": "flat", "reference_ws": None},
    "physics": {"g": 9.81, "rho": 1000.0, "manning_n": [0.0], "h_min": 1e-6},
    "boundary": {},
    "initial": {"type": "uniform_wse", "wse": None, "x0": 10.0, "h_left": 2.0, "h_right": 0.5, "path": ""},
    "network": {"width": 64, "depth": 5, "n_fourier": 32, "sigma": 2.0, "residual": False, "activation": "tanh",
                "head_scale": 1.0},
    "training": {
        "t0": 0.0, "T": 1.0, "n_t": 5, "seed_init": 0, "seed_sampling": 1, "seed_noise": 2,
        "weights": {"fvm": 1.0, "bc": 0.0, "ic": 0.0, "data": 0.0},
        "adam": {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "decay_factor": 1.0, "decay_every": 0, "epochs": 1000},
        "lbfgs": {"memory": 10, "max_iter": 0, "c1": 1e-4, "c2": 0.9, "gtol": 1e-9, "max_ls": 25},
    },
    "windows": {"n": 1, "boundaries": []},
    "data": {
        "observations": "", "anchors": [], "sparse_weight": 1.0, "anchor_weight": 1.0, "noise": 0.0,
        "sparse": {"n": 0, "times": [], "components": ["u", "v"], "cfl": 0.5},
        "teacher": {"enabled": False, "n_snap": 31, "cfl": 0.5, "weight": 1.0},
    },
    "reference": {"type": "none", "times": [], "n_snap": 11, "cfl": 0.5},
    "landscape": {"alphas": [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5], "n_t": 10, "seed": 7},
    "gradcheck": {"n_coords": 0, "step": 1e-5},
    "output": {"dir": "out"},
}

_CHOICES = {
    ("mesh", "generator"): ("strip", "channel", "file"),
    ("mesh", "bed"): ("flat", "bump"),
    ("initial", "type"): ("uniform_wse", "dam_break", "file"),
    ("reference", "type"): ("none", "stoker", "teacher", "anchors"),
}
_KINDS = {"wall": WALL, "inlet_discharge": INLET, "exit_wse": EXIT}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base and path != "boundary.":
            raise ConfigError(f"unknown key '{where}'")
        if isinstance(base.get(k), dict) and path != "boundary.":
            if not isinstance(v, dict):
                raise ConfigError(f"'{where}' must be a section")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` strings; values are parsed as TOML literals when possible."""
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, val = item.split("=", 1)
        parts = key.strip().split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override '{key}' descends into a non-section")
        node[parts[-1]] = _parse_value(val.strip())
    return raw


@dataclass
class CaseConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, key):
        return self.raw[key]

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q

    @property
    def out_dir(self) -> Path:
        return self.path(self.raw["output"]["dir"])


def parse_config(text: str, base_dir=None, overrides=()) -> CaseConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"malformed case file: {e}") from None
    raw = apply_overrides(raw, overrides)
    cfg = CaseConfig(_merge(DEFAULTS, raw), Path(base_dir) if base_dir else Path.cwd())
    validate(cfg)
    return cfg


def load_config(path, overrides=()) -> CaseConfig:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"case file not found: {path}")
    return parse_config(path.read_text(), path.parent, overrides)


def validate(cfg: CaseConfig) -> None:
    r = cfg.raw
    for (sec, key), allowed in _CHOICES.items():
        if r[sec][key] not in allowed:
            raise ConfigError(f"{sec}.{key} must be one of {allowed}, got {r[sec][key]!r}")
    for name, spec in r["boundary"].items():
        if not isinstance(spec, dict) or spec.get("kind") not in _KINDS:
            raise ConfigError(f"boundary.{name}.kind must be one of {tuple(_KINDS)}")
    tr = r["training"]
    try:
        train_config(cfg)
        network_config(cfg)
        physics(cfg)
        window_plan(cfg)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    if not tr["t0"] < tr["T"]:
        raise ConfigError("training.t0 must be smaller than training.T")


# --------------------------------------------------------------------------- typed views


def physics(cfg: CaseConfig) -> PhysParams:
    p = cfg["physics"]
    n = p["manning_n"]
    return PhysParams(g=float(p["g"]), rho=float(p["rho"]), manning_n=tuple(float(v) for v in (n if isinstance(n, list) else [n])),
                      h_min=float(p["h_min"]))


def network_config(cfg: CaseConfig) -> NetworkConfig:
    n = cfg["network"]
    return NetworkConfig(int(n["width"]), int(n["depth"]), int(n["n_fourier"]), float(n["sigma"]), bool(n["residual"]),
                         n["activation"], float(n["head_scale"]))


def train_config(cfg: CaseConfig) -> TrainConfig:
    t = cfg["training"]
    return TrainConfig(
        t0=float(t["t0"]), T=float(t["T"]), n_t=int(t["n_t"]),
        weights=LossWeights(**{k: float(v) for k, v in t["weights"].items()}),
        adam=AdamConfig(**{k: (int(v) if k in ("epochs", "decay_every") else float(v)) for k, v in t["adam"].items()}),
        lbfgs=LBFGSConfig(**{k: (int(v) if k in ("memory", "max_iter", "max_ls") else float(v)) for k, v in t["lbfgs"].items()}),
        seed_init=int(t["seed_init"]), seed_sampling=int(t["seed_sampling"]), seed_noise=int(t["seed_noise"]),
    )


def window_plan(cfg: CaseConfig) -> WindowPlan:
    w, t = cfg["windows"], cfg["training"]
    if w["boundaries"]:
        return WindowPlan(tuple(float(b) for b in w["boundaries"]))
    return WindowPlan.uniform(float(t["t0"]), float(t["T"]), int(w["n"]))


def dam_break_spec(cfg: CaseConfig) -> DamBreakSpec:
    i = cfg["initial"]
    return DamBreakSpec(float(i["h_left"]), float(i["h_right"]), float(i["x0"]), float(cfg["physics"]["g"]))


# --------------------------------------------------------------------------- builders


def build_case_mesh(cfg: CaseConfig) -> Mesh:
    m = cfg["mesh"]
    bed = bump_bed if m["bed"] == "bump" else None
    ref = 0.0 if m["reference_ws"] is None else float(m["reference_ws"])
    gen = m["generator"]
    if gen == "file" or m["path"]:
        path = cfg.path(m["path"])
        if not path.is_file():
            raise MissingInputError(f"mesh file not found: {path}")
        mesh = load_mesh(path)
        if m["reference_ws"] is not None:
            mesh = mesh.with_reference_ws(ref)
    elif gen == "strip":
        mesh = generate_strip_mesh(float(m["length"]), int(m["n_cells"]), float(m["width"]), bed,
                                   x0=float(m["x0"]), reference_ws=ref)
    else:
        block = [float(v) for v in m["block"]] or None
        mesh = generate_channel_mesh(float(m["Lx"]), float(m["Ly"]), block, float(m["target_size"]),
                                     bed_profile=(lambda x, y: bump_bed(x)) if bed else None, reference_ws=ref)
    return _apply_boundaries(mesh, cfg)


def _apply_boundaries(mesh: Mesh, cfg: CaseConfig) -> Mesh:
    names = {p.name for p in mesh.patches}
    updates = {}
    for name, spec in cfg["boundary"].items():
        if name not in names:
            raise ConfigError(f"boundary.{name}: mesh has no such patch (have {sorted(names)})")
        updates[name] = (_KINDS[spec["kind"]], float(spec.get("value", 0.0)))
    return mesh.with_patch_values(updates) if updates else mesh


def initial_state(cfg: CaseConfig, mesh: Mesh) -> np.ndarray:
    i = cfg["initial"]
    q = np.zeros((mesh.n_cells, 3))
    if i["type"] == "uniform_wse":
        wse = mesh.reference_ws if i["wse"] is None else float(i["wse"])
        h = np.maximum(wse - mesh.cell_zb, 0.0)
        q[:, 0] = h - mesh.cell_hs
    elif i["type"] == "dam_break":
        x = mesh.cell_centroid[:, 0]
        h = np.where(x < float(i["x0"]), float(i["h_left"]), float(i["h_right"]))
        q[:, 0] = h - mesh.cell_hs
    else:
        q = read_anchor(_existing(cfg, i["path"]), mesh.n_cells)
    return q


def _existing(cfg: CaseConfig, p: str) -> Path:
    path = cfg.path(p)
    if not path.is_file():
        raise MissingInputError(f"input file not found: {path}")
    return path


@dataclass(eq=False)
class Case:
    """Everything needed to train and evaluate one configured case."""

    config: CaseConfig
    mesh: Mesh
    disc: Discretization
    ic: np.ndarray
    net: SurrogateNetwork
    params0: np.ndarray
    train: TrainConfig
    plan: WindowPlan
    observations: ObservationSet | None = None
    anchors: AnchorSet | None = None
    extra_anchors: AnchorSet | None = None
    sparse_weight: float = 1.0
    anchor_weight: float = 1.0
    extra_weight: float = 1.0
    _teacher: dict = field(default_factory=dict, repr=False)

    def teacher(self, n_snap: int, cfl: float) -> Trajectory:
        """Forward FVM trajectory from the case IC over ``[t0, T]`` (memoised)."""
        key = (int(n_snap), float(cfl))
        if key not in self._teacher:
            tc = TeacherConfig(T=self.train.T, t0=self.train.t0, n_snap=int(n_snap), cfl=float(cfl))
            self._teacher[key] = run_teacher(self.ic, tc, self.disc)
        return self._teacher[key]


def build_case(cfg: CaseConfig, *, with_data: bool = True) -> Case:
    mesh = build_case_mesh(cfg)
    disc = Discretization(mesh, physics(cfg))
    ic = initial_state(cfg, mesh)
    tc = train_config(cfg)
    norm = Normalizer.for_domain(mesh.cell_centroid, tc.t0, tc.T)
    net, p0 = init_network(network_config(cfg), tc.seed_init, norm)
    d = cfg["data"]
    case = Case(cfg, mesh, disc, ic, net, p0, tc, window_plan(cfg),
                sparse_weight=float(d["sparse_weight"]), anchor_weight=float(d["anchor_weight"]),
                extra_weight=float(d["teacher"]["weight"]))
    if with_data:
        _attach_data(case)
    return case


def _attach_data(case: Case) -> None:
    cfg, mesh, tc = case.config, case.mesh, case.train
    d = cfg["data"]
    obs_parts = []
    if d["observations"]:
        obs_parts.append(read_observations(_existing(cfg, d["observations"])))
    sp = d["sparse"]
    if int(sp["n"]) > 0:
        times = [float(t) for t in sp["times"]] or [tc.T]
        traj = _teacher_at(case, times, float(sp["cfl"]))
        counts = np.full(len(times), int(sp["n"]) // len(times))
        counts[: int(sp["n"]) % len(times)] += 1
        for k, (t, n) in enumerate(zip(times, counts)):
            obs_parts.append(observations_from_state(mesh, traj.at(t), t, int(n), tc.seed_noise + 1000 * (k + 1),
                                                     tuple(sp["components"])))
    if obs_parts:
        obs = ObservationSet(np.concatenate([o.xyt for o in obs_parts]), np.concatenate([o.values for o in obs_parts]),
                             np.concatenate([o.mask for o in obs_parts]))
        case.observations = add_noise(obs, float(d["noise"]), tc.seed_noise)
    if d["anchors"]:
        times, states = [], []
        for a in d["anchors"]:
            if not isinstance(a, dict) or "time" not in a or "path" not in a:
                raise ConfigError("data.anchors entries need 'time' and 'path'")
            times.append(float(a["time"]))
            states.append(read_anchor(_existing(cfg, a["path"]), mesh.n_cells))
        case.anchors = AnchorSet(np.array(times), np.stack(states))
    te = d["teacher"]
    if te["enabled"]:
        traj = case.teacher(int(te["n_snap"]), float(te["cfl"]))
        case.extra_anchors = AnchorSet(traj.times.copy(), traj.states.copy())


def _teacher_at(case: Case, times, cfl: float) -> Trajectory:
    """Teacher run whose snapshot grid contains every requested time."""
    tc = case.train
    span = tc.T - tc.t0
    for n in range(2, 10_002):
        grid = tc.t0 + span * np.arange(n) / (n - 1)
        if all(np.min(np.abs(grid - t)) <= 1e-9 * max(1.0, abs(t)) for t in times):
            return case.teacher(n, cfl)
    raise ConfigError("data.sparse.times must lie on a uniform grid over [t0, T]")
