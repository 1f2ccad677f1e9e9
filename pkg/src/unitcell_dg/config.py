"""Run configuration: flat ``section.key = value`` text files.

Every key has a type, a default and an optional check; unknown keys and
bad values raise :class:`ConfigError` naming the key.  Material fields are
overridden with ``materials.<region>.<field> = value``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


def _float(s: str) -> float:
    return float(s)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(t) for t in s.split(",") if t.strip())


def _names(s: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in s.split(",") if t.strip())


def _pairs(s: str) -> tuple[tuple[str, str], ...]:
    out = []
    for item in s.split(","):
        item = item.strip()
        if not item:
            continue
        name, sep, val = item.partition(":")
        if not sep:
            raise ValueError(f"expected name:value, got {item!r}")
        out.append((name.strip(), val.strip()))
    return tuple(out)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ", ".join(f"{a}:{b}" for a, b in v)
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _pos(v):
    return v > 0 and math.isfinite(v)


def _unit(v):
    return 0 < v < 1


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    check: Callable[[Any], bool] | None = None
    hint: str = ""


SCHEMA: dict[str, Key] = {
    "mesh.file": Key(str, ""),
    "mesh.dim": Key(int, 1, lambda v: v in (1, 2), "1 or 2"),
    "mesh.axis": Key(str, "y", lambda v: v in ("x", "y"), "x or y (1D only)"),
    "mesh.x_um": Key(_floats, (0.0, 0.18), lambda v: len(v) == 2 and v[1] > v[0], "lo, hi"),
    "mesh.y_um": Key(_floats, (0.0, 1.0), lambda v: len(v) == 2 and v[1] > v[0], "lo, hi"),
    "mesh.h_um": Key(_float, 0.05, _pos, "positive"),
    "mesh.stack": Key(_bool, True),
    "mesh.layers": Key(_pairs, ()),
    "mesh.blocks": Key(str, ""),
    "mesh.region": Key(str, "ltgaas"),
    "materials.preset": Key(str, "ltgaas-reference"),
    "device.p": Key(int, 2, lambda v: 1 <= v <= 6, "1..6"),
    "device.v_bias_V": Key(_float, 0.0, math.isfinite, "finite"),
    "device.w_sd_um": Key(_float, 2.7, _pos, "positive"),
    "device.periodic": Key(_names, ("x",), lambda v: set(v) <= {"x", "y"}, "subset of x, y"),
    "device.pdbc": Key(_bool, True),
    "device.electrodes": Key(_pairs, ()),
    "gummel.tol": Key(_float, 1e-5, _pos, "positive"),
    "gummel.max_iter": Key(int, 300, lambda v: v >= 1, ">= 1"),
    "gummel.relax": Key(_float, 1.0, lambda v: 0 < v <= 1, "in (0, 1]"),
    "linear.method": Key(str, "gmres", lambda v: v in ("gmres", "direct"), "gmres or direct"),
    "linear.restart": Key(int, 100, lambda v: v >= 1, ">= 1"),
    "linear.tol": Key(_float, 1e-10, _unit, "in (0, 1)"),
    "linear.max_iter": Key(int, 5000, lambda v: v >= 1, ">= 1"),
    "linear.preconditioner": Key(str, "ilu0", lambda v: v in ("ilu0", "none"), "ilu0 or none"),
    "maxwell.boundary": Key(_pairs, (("z_bottom", "abc"), ("z_top", "pec"), ("pml_outer", "pec"))),
    "maxwell.pml": Key(_bool, True),
    "maxwell.pml_reflection": Key(_float, 1e-6, _unit, "in (0, 1)"),
    "maxwell.pml_order": Key(int, 3, lambda v: v >= 1, ">= 1"),
    "maxwell.cfl": Key(_float, 0.5, _pos, "positive"),
    "maxwell.flux_alpha": Key(_float, 1.0, lambda v: 0 <= v <= 1, "in [0, 1]"),
    "pump.f1_THz": Key(_float, 374.5, _pos, "positive"),
    "pump.f2_THz": Key(_float, 375.5, _pos, "positive"),
    "pump.amplitude_V_per_m": Key(_float, 0.0, lambda v: v >= 0 and math.isfinite(v), ">= 0"),
    "pump.polarization": Key(str, "x", lambda v: v in ("x", "y", "z"), "x, y or z"),
    "pump.plane_um": Key(_float, math.nan),
    "pump.ramp_cycles": Key(_float, 2.0, lambda v: v >= 0, ">= 0"),
    "cosim.T_ps": Key(_float, 1.0, _pos, "positive"),
    "cosim.dt_em_ps": Key(_float, 0.0, lambda v: v >= 0, ">= 0 (0 = CFL limit)"),
    "cosim.ratio": Key(_float, 10.0, _pos, "positive integer"),
    "cosim.exchange": Key(str, "frozen", lambda v: v in ("frozen", "extrapolate"), "frozen or extrapolate"),
    "cosim.snapshot_stride": Key(int, 0, lambda v: v >= 0, ">= 0"),
    "cosim.lateral_bias": Key(_bool, False),
    "mobility.transient": Key(str, "instantaneous", lambda v: v in ("frozen", "instantaneous"),
                              "frozen or instantaneous"),
    "output.dir": Key(str, "out"),
    "output.vtk": Key(_bool, True),
}

MATERIAL_FIELDS = {"doping": _float, "n_i": _float, "eps_static": _float, "mu_r": _float,
                   "eta": _float, "photon_energy_ev": _float}


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)
    materials: dict[tuple[str, str], float] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def dump(self) -> str:
        lines = [f"{k} = {_fmt(v)}" for k, v in self.values.items()]
        lines += [f"materials.{r}.{f} = {_fmt(v)}" for (r, f), v in sorted(self.materials.items())]
        return "\n".join(lines) + "\n"


def parse_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = RunConfig({k: s.default for k, s in SCHEMA.items()}, {})
    if base is not None:
        cfg.values.update(base.values)
        cfg.materials.update(base.materials)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep:
            raise ConfigError(f"line {lineno}", f"expected 'section.key = value', got {raw!r}")
        if key.startswith("materials.") and key.count(".") == 2:
            _, region, fld = key.split(".")
            if fld not in MATERIAL_FIELDS:
                raise ConfigError(key, f"unknown material field; have {sorted(MATERIAL_FIELDS)}")
            try:
                cfg.materials[(region, fld)] = MATERIAL_FIELDS[fld](val)
            except ValueError as exc:
                raise ConfigError(key, str(exc)) from None
            continue
        spec = SCHEMA.get(key)
        if spec is None:
            raise ConfigError(key, "unknown key")
        try:
            v = spec.parse(val)
        except ValueError as exc:
            raise ConfigError(key, f"cannot parse {val!r} ({exc})") from None
        if spec.check is not None and not spec.check(v):
            raise ConfigError(key, f"invalid value {val!r}; expected {spec.hint}")
        cfg.values[key] = v
    return cfg


def preset_names() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("unitcell_dg.presets").iterdir()
                  if p.name.endswith(".cfg"))


def load_config(source: str | Path) -> RunConfig:
    """Read a config file, or a shipped preset when ``source`` names one."""
    path = Path(source)
    if path.is_file():
        return parse_text(path.read_text())
    name = str(source)
    if name in preset_names():
        return parse_text(resources.files("unitcell_dg.presets").joinpath(f"{name}.cfg").read_text())
    raise ConfigError("--config", f"no such file or preset {name!r}; presets: {preset_names()}")
