"""INI-style run configuration: ``key = value`` lines under bracketed sections.

Every accepted key is listed in ``reference.ini`` next to this module; any
other section or key is rejected.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .geometry import ConfigError, MeshParams, ProblemConfig, SolverParams

REFERENCE = Path(__file__).with_name("reference.ini")

_PROBLEM = {"epsilon": float, "gamma": float, "beta": float, "p": float,
            "g": str, "psi": str, "h": str, "f": str}
_MESH = {"edge": float, "top_edge": float, "strip_layers": int, "grading": float,
         "refine": int, "limit_resolution": int}
_SOLVER = {"rtol": float, "atol": float, "max_iter": int, "delta": float, "delta_floor": float,
           "max_halvings": int, "p_step": float, "picard": bool}
_SWEEP = {"eps_list": "floats", "threads": int, "resolution_levels": "ints"}
_VERIFY = {"eps_list": "floats", "u": str, "phi": str, "composed": bool, "samples": int,
           "perturbation": float, "mu_points": int, "seed": int}
SECTIONS = {"problem": _PROBLEM, "mesh": _MESH, "solver": _SOLVER, "sweep": _SWEEP, "verify": _VERIFY}


@dataclass(frozen=True)
class SweepOptions:
    eps_list: tuple = (0.2, 0.1, 0.05, 0.025)
    threads: int = 1
    resolution_levels: tuple = ()


@dataclass(frozen=True)
class VerifyOptions:
    eps_list: tuple = (0.125, 0.0625, 0.03125, 0.015625, 0.0078125)
    u: str = "cos_exp"
    phi: str = "one"
    composed: bool = False
    samples: int = 4
    perturbation: float = 0.1
    mu_points: int = 50
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemConfig
    sweep: SweepOptions = field(default_factory=SweepOptions)
    verify: VerifyOptions = field(default_factory=VerifyOptions)

    def resolved(self) -> dict:
        """Plain-data view of every setting, defaults included."""
        pb = dataclasses.asdict(self.problem.replace(functions=None))
        pb.pop("functions", None)
        return {"problem": {k: v for k, v in pb.items() if k not in ("mesh", "solver")},
                "mesh": pb["mesh"], "solver": pb["solver"],
                "sweep": _listify(dataclasses.asdict(self.sweep)),
                "verify": _listify(dataclasses.asdict(self.verify))}

    def digest(self) -> str:
        """Hash of the resolved settings; the thread count does not change results and is left out."""
        data = self.resolved()
        data["sweep"].pop("threads")
        text = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _listify(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _convert(section: str, key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "floats":
            return tuple(float(t) for t in raw.replace(",", " ").split())
        if kind == "ints":
            return tuple(int(t) for t in raw.replace(",", " ").split())
        if kind is float and raw.lower() in ("", "none"):
            return None
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid value") from None


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {source}: {exc}".replace("\n", " ")) from None
    values = {}
    for sec in parser.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]; allowed: {', '.join(SECTIONS)}")
        allowed = SECTIONS[sec]
        values[sec] = {}
        for key, raw in parser.items(sec):
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{sec}]; allowed: {', '.join(allowed)}")
            values[sec][key] = _convert(sec, key, raw, allowed[key])
    mesh = dataclasses.replace(MeshParams(), **values.get("mesh", {}))
    solver = dataclasses.replace(SolverParams(), **values.get("solver", {}))
    problem = ProblemConfig(mesh=mesh, solver=solver, **values.get("problem", {}))
    return RunConfig(problem, SweepOptions(**values.get("sweep", {})),
                     VerifyOptions(**values.get("verify", {})))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def with_overrides(cfg: RunConfig, eps_list: Optional[tuple] = None, seed: Optional[int] = None,
                   threads: Optional[int] = None) -> RunConfig:
    sweep, verify = cfg.sweep, cfg.verify
    if eps_list is not None:
        sweep = dataclasses.replace(sweep, eps_list=eps_list)
        verify = dataclasses.replace(verify, eps_list=eps_list)
    if seed is not None:
        verify = dataclasses.replace(verify, seed=seed)
    if threads is not None:
        sweep = dataclasses.replace(sweep, threads=threads)
    return RunConfig(cfg.problem, sweep, verify)
