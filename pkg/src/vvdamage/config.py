"""Run configuration: ``key = value`` files with sections, and presets.

A file may name a ``preset`` in ``[run]``; its values are the base and every
key given in the file overrides them. :meth:`RunConfig.to_text` writes the
fully resolved configuration, which parses back to the same object.
"""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import Grid, interval, rectangle
from .loads import LoadProgram, TimeProfile
from .material import MaterialModel, parse_function
from .stepper import SolverConfig

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid configuration; the message names the section and key."""


_BOOL = {"1": True, "yes": True, "true": True, "on": True, "0": False, "no": False, "false": False, "off": False}


def _bool(text: str) -> bool:
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {text!r}") from None


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "preset": (str, ""),
        "snapshot_every": (int, 10),
        "seed": (int, 0),
    },
    "mesh": {
        "dim": (int, 1),
        "lx": (float, 1.0),
        "ly": (float, 1.0),
        "nx": (int, 100),
        "ny": (int, 1),
        "dirichlet": (str, "both"),
    },
    "material": {
        "q": (float, 4.0),
        "kappa": (float, 1.0),
        "f": (str, "square"),
        "g": (str, "smoothstep:0.1"),
        "youngs": (float, 1.0),
        "lame_lambda": (float, 0.0),
        "lame_mu": (float, 1.0),
        "allow_q_le_dim": (_bool, False),
    },
    "loads": {
        "horizon": (float, 1.0),
        "dirichlet_profile": (str, "zero"),
        "dirichlet_amplitude": (float, 0.0),
        "dirichlet_period": (float, 1.0),
        "dirichlet_t_ramp": (float, 1.0),
        "dirichlet_shape": (str, "linear_x"),
        "force_profile": (str, "zero"),
        "force_amplitude": (float, 0.0),
        "force_period": (float, 1.0),
        "force_t_ramp": (float, 1.0),
        "force_shape": (str, "uniform_x"),
    },
    "initial": {
        "kind": (str, "constant"),
        "value": (float, 1.0),
        "depth": (float, 0.0),
        "center": (float, 0.5),
        "width": (float, 0.5),
        "path": (str, ""),
    },
    "solver": {
        "n_steps": (int, 100),
        "eps": (float, 0.1),
        "tol_el": (float, 1e-8),
        "tol_am": (float, 1e-10),
        "max_am_iters": (int, 200),
        "max_newton_iters": (int, 60),
        "enforce_box": (_bool, True),
        "multistart": (_bool, False),
    },
    "tau_study": {
        "levels": (int, 3),
    },
    "eps_sweep": {
        "eps0": (float, 0.5),
        "levels": (int, 7),
        "factor": (float, 2.0),
        "tau_over_eps": (float, 2.0),
    },
}

PRESETS: dict[str, dict[str, dict]] = {
    # scalar-reducible: no loads, so the elastic part vanishes
    "homogeneous": {
        "mesh": {"dim": 1, "lx": 1.0, "nx": 4, "dirichlet": "both"},
        "material": {"q": 4.0, "kappa": 0.4, "f": "square", "g": "constant:1"},
        "loads": {"horizon": 5.0},
        "initial": {"kind": "constant", "value": 0.8},
        "solver": {"n_steps": 50, "eps": 1.0},
        "eps_sweep": {"eps0": 0.5, "levels": 7, "tau_over_eps": 2.0},
    },
    # smooth progressive damage of a bar pulled at its right end
    "ramp1d": {
        "mesh": {"dim": 1, "lx": 1.0, "nx": 100, "dirichlet": "both"},
        "material": {"q": 4.0, "kappa": 1.4, "f": "square", "g": "smoothstep:0.1"},
        "loads": {"horizon": 1.0, "dirichlet_profile": "ramp", "dirichlet_amplitude": 3.0},
        "initial": {"kind": "notch", "value": 0.45, "depth": 0.02, "center": 0.5, "width": 0.5},
        "solver": {"n_steps": 200, "eps": 0.1},
        "eps_sweep": {"eps0": 0.1, "levels": 4, "tau_over_eps": 0.05},
    },
    # plate with a weakened vertical band, pulled in x
    "notch2d": {
        "mesh": {"dim": 2, "lx": 1.0, "ly": 1.0, "nx": 16, "ny": 16, "dirichlet": "left_right"},
        "material": {"q": 4.0, "kappa": 1.6, "f": "square", "g": "smoothstep:0.1",
                     "lame_lambda": 0.0, "lame_mu": 1.0},
        "loads": {"horizon": 1.0, "dirichlet_profile": "ramp", "dirichlet_amplitude": 3.0},
        "initial": {"kind": "notch", "value": 0.45, "depth": 0.02, "center": 0.5, "width": 0.5},
        "solver": {"n_steps": 100, "eps": 0.1},
    },
    # stable state under static loads: nothing moves
    "frozen": {
        "mesh": {"dim": 1, "lx": 1.0, "nx": 20, "dirichlet": "both"},
        "material": {"q": 4.0, "kappa": 1.4, "f": "square", "g": "smoothstep:0.1"},
        "loads": {"horizon": 1.0},
        "initial": {"kind": "constant", "value": 0.45},
        "solver": {"n_steps": 20, "eps": 0.1},
    },
}


def _defaults() -> dict:
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def _merge(base: dict, over: dict) -> dict:
    out = {sec: dict(vals) for sec, vals in base.items()}
    for sec, vals in over.items():
        out[sec].update(vals)
    return out


@dataclass
class RunConfig:
    """Resolved configuration, one dict of typed values per section."""

    values: dict = field(default_factory=_defaults)

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    # construction -----------------------------------------------------
    @classmethod
    def from_preset(cls, name: str, **overrides) -> "RunConfig":
        """Preset values with optional ``section={key: value}`` overrides."""
        if name not in PRESETS:
            raise ConfigError(f"[run] preset: unknown preset {name!r} (choose from {', '.join(PRESETS)})")
        values = _merge(_merge(_defaults(), PRESETS[name]), overrides)
        values["run"]["preset"] = name
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        raw: dict[str, dict[str, str]] = {}
        for sec in parser.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"{source}: unknown section [{sec}]")
            for key, text_value in parser.items(sec):
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"{source}: [{sec}] unknown key {key!r}")
                raw.setdefault(sec, {})[key] = text_value
        preset = raw.get("run", {}).get("preset", "").strip()
        base = _defaults()
        if preset:
            if preset not in PRESETS:
                raise ConfigError(f"{source}: [run] preset: unknown preset {preset!r}")
            base = _merge(base, PRESETS[preset])
        typed: dict[str, dict] = {}
        for sec, keys in raw.items():
            for key, text_value in keys.items():
                conv = SCHEMA[sec][key][0]
                try:
                    typed.setdefault(sec, {})[key] = conv(text_value.strip())
                except ValueError as exc:
                    raise ConfigError(f"{source}: [{sec}] {key} = {text_value!r}: {exc}") from exc
        cfg = cls(_merge(base, typed))
        try:
            cfg.validate()
        except ConfigError as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        return cls.from_text(text, source=str(path))

    def to_text(self) -> str:
        lines = []
        for sec, keys in self.values.items():
            lines.append(f"[{sec}]")
            for key, value in keys.items():
                if isinstance(value, bool):
                    value = "yes" if value else "no"
                elif isinstance(value, float):
                    value = repr(value)
                lines.append(f"{key} = {value}")
            lines.append("")
        return "\n".join(lines)

    # validation -------------------------------------------------------
    def validate(self) -> None:
        """Build every component once so errors surface with their key."""
        mesh, mat = self["mesh"], self["material"]
        if mesh["dim"] not in (1, 2):
            raise ConfigError(f"[mesh] dim = {mesh['dim']}: must be 1 or 2")
        if not mat["q"] > mesh["dim"]:
            if not mat["allow_q_le_dim"]:
                raise ConfigError(
                    f"[material] q = {mat['q']}: need q > dim = {mesh['dim']} "
                    "(set allow_q_le_dim = yes to override)"
                )
            log.warning("q = %g <= dim = %d accepted by override", mat["q"], mesh["dim"])
        steps = [
            ("mesh", self.grid),
            ("material", self.model),
            ("loads", self.loads),
            ("solver", self.solver),
        ]
        for sec, build in steps:
            try:
                build()
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"[{sec}] {exc}") from exc
        try:
            self.z0(self.grid())
        except (ValueError, OSError) as exc:
            raise ConfigError(f"[initial] {exc}") from exc
        sw = self["eps_sweep"]
        if sw["tau_over_eps"] > 2.0 or sw["tau_over_eps"] <= 0.0:
            raise ConfigError(f"[eps_sweep] tau_over_eps = {sw['tau_over_eps']}: need 0 < tau/eps <= 2")
        if sw["levels"] < 1 or sw["eps0"] <= 0 or sw["factor"] <= 1:
            raise ConfigError("[eps_sweep] need levels >= 1, eps0 > 0 and factor > 1")
        if self["tau_study"]["levels"] < 1:
            raise ConfigError("[tau_study] levels must be >= 1")
        if self["run"]["snapshot_every"] < 0:
            raise ConfigError("[run] snapshot_every must be >= 0")

    # builders ---------------------------------------------------------
    def grid(self) -> Grid:
        m = self["mesh"]
        if m["dim"] == 1:
            return interval(m["lx"], m["nx"], m["dirichlet"])
        return rectangle(m["lx"], m["ly"], m["nx"], m["ny"], m["dirichlet"])

    def model(self) -> MaterialModel:
        m = self["material"]
        return MaterialModel(
            q=m["q"], kappa=m["kappa"], f=parse_function(m["f"]), g=parse_function(m["g"]),
            youngs=m["youngs"], lame_lambda=m["lame_lambda"], lame_mu=m["lame_mu"],
        )

    def loads(self) -> LoadProgram:
        ld = self["loads"]

        def profile(prefix):
            return TimeProfile(
                ld[f"{prefix}_profile"], ld[f"{prefix}_amplitude"], ld[f"{prefix}_period"], ld[f"{prefix}_t_ramp"]
            )

        return LoadProgram(
            horizon=ld["horizon"],
            dirichlet_time=profile("dirichlet"),
            dirichlet_shape=ld["dirichlet_shape"],
            force_time=profile("force"),
            force_shape=ld["force_shape"],
        )

    def solver(self, n_steps: int | None = None, eps: float | None = None, **kw) -> SolverConfig:
        s = self["solver"]
        return SolverConfig.uniform(
            self["loads"]["horizon"],
            s["n_steps"] if n_steps is None else n_steps,
            s["eps"] if eps is None else eps,
            tol_el=s["tol_el"], tol_am=s["tol_am"], max_am_iters=s["max_am_iters"],
            max_newton_iters=s["max_newton_iters"], enforce_box=s["enforce_box"],
            multistart=s["multistart"], **kw,
        )

    def z0(self, grid: Grid) -> np.ndarray:
        """Initial damage: ``constant``, ``notch`` (cosine dip in x) or ``file``."""
        ini = self["initial"]
        kind = ini["kind"]
        if kind == "constant":
            return np.full(grid.n_nodes, ini["value"])
        if kind == "notch":
            if ini["width"] <= 0:
                raise ValueError("notch width must be positive")
            r = (grid.node_coordinate(0) - ini["center"]) / ini["width"]
            bump = np.where(np.abs(r) <= 1.0, 0.5 * (1.0 + np.cos(np.pi * r)), 0.0)
            return ini["value"] - ini["depth"] * bump
        if kind == "file":
            z = np.loadtxt(ini["path"], ndmin=1)
            if z.shape != (grid.n_nodes,):
                raise ValueError(f"{ini['path']}: expected {grid.n_nodes} nodal values, got {z.size}")
            return z
        raise ValueError(f"unknown initial kind {kind!r}")

    def eps_levels(self) -> list[tuple[float, float]]:
        sw = self["eps_sweep"]
        return [
            (sw["eps0"] / sw["factor"] ** n, sw["tau_over_eps"] * sw["eps0"] / sw["factor"] ** n)
            for n in range(sw["levels"])
        ]
