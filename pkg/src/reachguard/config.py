"""Run configuration: an INI file with fixed sections and a canonical serialisation.

Grammar: ``[section]`` headers followed by ``key = value`` lines. Sections and keys are
fixed (see ``SCHEMA``); every key is optional and falls back to its default. Values are
decimal numbers, ``true``/``false``, or bare words; lists are comma separated. The
canonical form written by :func:`dump_config` lists every section and key in schema
order, so parsing it and dumping again reproduces the file byte for byte.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .dynamics import ControlBounds
from .env import EnvGenParams
from .hj_solver import SCHEMES, RecomputePolicy, SolverConfig
from .planner import VARIANTS, PlannerConfig
from .sim import EpisodeConfig

_ENV = EnvGenParams()

# section -> ordered (key, type, default)
SCHEMA = {
    "env": [
        ("width_cells", int, _ENV.width_cells),
        ("height_cells", int, _ENV.height_cells),
        ("cell_size", float, _ENV.cell_size),
        ("obstacle_count", int, _ENV.obstacle_count),
        ("obstacle_size_min", float, _ENV.obstacle_size_min),
        ("obstacle_size_max", float, _ENV.obstacle_size_max),
        ("safe_zone_count", int, _ENV.safe_zone_count),
        ("safe_zone_radius", float, _ENV.safe_zone_radius),
        ("zone_y_step", float, _ENV.zone_y_step),
        ("last_zone_offset", float, _ENV.last_zone_offset),
        ("goal_radius", float, _ENV.goal_radius),
        ("min_clearance", float, _ENV.min_clearance),
        ("trap_every", int, _ENV.trap_every),
        ("max_retries", int, _ENV.max_retries),
    ],
    "dynamics": [
        ("v_min", float, 0.0),
        ("v_max", float, 1.0),
        ("omega_max", float, 1.5),
        ("dt", float, 0.1),
    ],
    "solver": [
        ("horizon", float, 2.0),
        ("cfl_number", float, 0.8),
        ("scheme", str, "upwind"),
        ("n_theta", int, 24),
        ("n_cell", int, 25),
        ("dt_recomp", float, 2.0),
    ],
    "planner": [
        ("samples", int, 200),
        ("ancillary_groups", int, 2),
        ("horizon_steps", int, 20),
        ("sigma_v", float, 0.09),
        ("sigma_omega", float, 0.36),
        ("sigma_cross", float, 0.0),
        ("lam", float, 1.0),
        ("alpha", float, 0.9),
        ("delta", float, 0.15),
        ("w_pos", float, 1.0),
        ("w_term", float, 5.0),
        ("goal_cost", str, "geodesic"),
        ("tracker_lookahead", float, 0.4),
        ("tracker_gain", float, 2.0),
    ],
    "sim": [
        ("variant", str, "SCRAMPPI"),
        ("variants", list, list(VARIANTS)),
        ("base_seed", int, 1),
        ("n_envs", int, 20),
        ("robot_radius", float, 0.15),
        ("sensing_radius", float, 2.5),
        ("max_steps", int, 0),
        ("contingency_step", int, -1),
        ("contingency_substeps", int, 5),
    ],
    "output": [
        ("timing", str, "omitted"),
        ("dump_values", bool, False),
    ],
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {s: {k: (list(d) if t is list else d) for k, t, d in keys}
                                                  for s, keys in SCHEMA.items()})

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def episode_config(self) -> EpisodeConfig:
        e, d, s, p, m = (self.values[k] for k in ("env", "dynamics", "solver", "planner", "sim"))
        try:
            planner = PlannerConfig(
                M=p["samples"], M_a=p["ancillary_groups"], N=p["horizon_steps"], dt=d["dt"],
                sigma=((p["sigma_v"], p["sigma_cross"]), (p["sigma_cross"], p["sigma_omega"])),
                lam=p["lam"], alpha=p["alpha"], delta=p["delta"], w_pos=p["w_pos"], w_term=p["w_term"])
            return EpisodeConfig(
                env=EnvGenParams(**e),
                planner=planner,
                solver=SolverConfig(horizon=s["horizon"], cfl_number=s["cfl_number"], scheme=s["scheme"]),
                recompute=RecomputePolicy(n_cell=s["n_cell"], dt_recomp=s["dt_recomp"]),
                bounds=ControlBounds(d["v_min"], d["v_max"], d["omega_max"]),
                n_theta=s["n_theta"],
                robot_radius=m["robot_radius"],
                sensing_radius=m["sensing_radius"],
                max_steps=m["max_steps"],
                contingency_step=None if m["contingency_step"] < 0 else m["contingency_step"],
                contingency_substeps=m["contingency_substeps"],
                variant=m["variant"],
                goal_cost=p["goal_cost"],
                tracker_lookahead=p["tracker_lookahead"],
                tracker_gain=p["tracker_gain"],
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _parse_value(raw: str, typ, where: str):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ is list:
            return [x.strip() for x in raw.split(",") if x.strip()]
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {typ.__name__}") from None


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ", ".join(v)
    return str(v)


def _validate(cfg: RunConfig) -> None:
    if cfg["solver"]["scheme"] not in SCHEMES:
        raise ConfigError(f"solver.scheme must be one of {SCHEMES}")
    for v in [cfg["sim"]["variant"]] + list(cfg["sim"]["variants"]):
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; expected one of {VARIANTS}")
    if cfg["output"]["timing"] not in ("omitted", "measured"):
        raise ConfigError("output.timing must be 'omitted' or 'measured'")
    cfg.episode_config()


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = RunConfig()
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        types = {k: t for k, t, _ in SCHEMA[section]}
        for key, raw in cp.items(section):
            if key not in types:
                raise ConfigError(f"unknown key {section}.{key}")
            cfg.values[section][key] = _parse_value(raw, types[key], f"{section}.{key}")
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as f:
        return parse_config(f.read())


def dump_config(cfg: RunConfig) -> str:
    blocks = []
    for section, keys in SCHEMA.items():
        lines = [f"[{section}]"] + [f"{k} = {_format_value(cfg.values[section][k])}" for k, _, _ in keys]
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)
