"""Run configuration: a YAML file fully determining every output byte.

Schema (all keys optional, defaults shown by DEFAULT_CONFIG):

    model:
      family: cat_suspension | da_suspension | product_skew
      matrix: [[2, 1], [1, 1]]
      roof: {kind: sinusoidal, alpha: 0.05, k: 2}   # or {kind: constant, c: 1.0}
                                                    # or {kind: piecewise_linear, knots: [[t, h], ...]}
      bump: {radius: 0.18, strength: null}          # da_suspension only
    resolution: [32, 32, 128]
    refinement: {rounds: 2, factors: [2, 2, 2]}
    budgets: {memory_cap: 50000000, orbit_length: 10.0}
    samples: {per_box: 9, prop1: 1000, orbits: 1000, hit_table: 200}
    section: {smoothing_width: 4.0, quadrature_step: 0.01}   # width in box diameters
    seed: 0
    output: out
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError, ModelError
from .models import (
    FAMILIES,
    RoofDiscretization,
    cat_suspension,
    da_suspension,
    product_skew,
)

DEFAULT_CONFIG: dict = {
    "model": {
        "family": "cat_suspension",
        "matrix": [[2, 1], [1, 1]],
        "roof": {"kind": "sinusoidal", "alpha": 0.05, "k": 2},
        "bump": {"radius": 0.18, "strength": None},
    },
    "resolution": [32, 32, 128],
    "refinement": {"rounds": 2, "factors": [2, 2, 2]},
    "budgets": {"memory_cap": 50_000_000, "orbit_length": 10.0},
    "samples": {"per_box": 9, "prop1": 1000, "orbits": 1000, "hit_table": 200},
    "section": {"smoothing_width": 4.0, "quadrature_step": 0.01},
    "seed": 0,
    "output": "out",
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict) and key != "roof":
            if not isinstance(val, dict):
                raise ConfigError(f"'{where}' must be a mapping")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class RunConfig:
    model: dict
    resolution: tuple[int, int, int]
    rounds: int
    factors: tuple[int, int, int]
    memory_cap: int
    orbit_length: float
    samples_per_box: int
    prop1_samples: int
    orbit_samples: int
    hit_table: int
    smoothing_width: float
    quadrature_step: float
    seed: int
    output: str
    raw: dict = field(repr=False, default_factory=dict)

    def build_map(self):
        return build_model(self.model)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def build_roof(roof: dict) -> RoofDiscretization:
    kind = roof.get("kind")
    try:
        if kind == "sinusoidal":
            return RoofDiscretization.sinusoidal(float(roof["alpha"]), int(roof["k"]))
        if kind == "constant":
            return RoofDiscretization.constant(float(roof.get("c", 1.0)))
        if kind == "piecewise_linear":
            return RoofDiscretization.piecewise_linear([tuple(map(float, kn)) for kn in roof["knots"]])
    except KeyError as exc:
        raise ConfigError(f"model.roof: missing field {exc.args[0]!r} for kind {kind!r}") from None
    raise ConfigError(f"model.roof.kind must be sinusoidal, constant or piecewise_linear, got {kind!r}")


def build_model(model: dict):
    fam = model.get("family")
    if fam not in FAMILIES:
        raise ConfigError(f"model.family must be one of {', '.join(FAMILIES)}, got {fam!r}")
    roof = build_roof(model.get("roof", {}))
    matrix = model.get("matrix", [[2, 1], [1, 1]])
    if fam == "cat_suspension":
        return cat_suspension(roof, matrix)
    if fam == "da_suspension":
        bump = model.get("bump") or {}
        return da_suspension(roof, matrix, float(bump.get("radius", 0.18)), bump.get("strength"))
    return product_skew(roof, matrix)


def _triple(val, name: str, minimum: int) -> tuple[int, int, int]:
    if not isinstance(val, (list, tuple)) or len(val) != 3:
        raise ConfigError(f"'{name}' must be a list of three integers")
    try:
        out = tuple(int(v) for v in val)
    except (TypeError, ValueError):
        raise ConfigError(f"'{name}' must be a list of three integers") from None
    if min(out) < minimum:
        raise ConfigError(f"'{name}' entries must be >= {minimum}, got {list(out)}")
    return out


def from_dict(data: dict | None) -> RunConfig:
    """Validate a config mapping; model invariants are checked eagerly by building the map."""
    raw = _merge(DEFAULT_CONFIG, data or {})
    res = _triple(raw["resolution"], "resolution", 4)
    ref = raw["refinement"]
    factors = _triple(ref["factors"], "refinement.factors", 1)
    rounds = int(ref["rounds"])
    if rounds < 0:
        raise ConfigError("'refinement.rounds' must be >= 0")
    smp = raw["samples"]
    if int(smp["per_box"]) < 8:
        raise ConfigError(f"'samples.per_box' must be >= 8, got {smp['per_box']}")
    sec = raw["section"]
    if float(sec["smoothing_width"]) < 2.0:
        raise ConfigError("'section.smoothing_width' must be >= 2 box diameters")
    if not 0 < float(sec["quadrature_step"]) <= 0.01:
        raise ConfigError("'section.quadrature_step' must lie in (0, 0.01]")
    cfg = RunConfig(
        model=raw["model"],
        resolution=res,
        rounds=rounds,
        factors=factors,
        memory_cap=int(raw["budgets"]["memory_cap"]),
        orbit_length=float(raw["budgets"]["orbit_length"]),
        samples_per_box=int(smp["per_box"]),
        prop1_samples=int(smp["prop1"]),
        orbit_samples=int(smp["orbits"]),
        hit_table=int(smp["hit_table"]),
        smoothing_width=float(sec["smoothing_width"]),
        quadrature_step=float(sec["quadrature_step"]),
        seed=int(raw["seed"]),
        output=str(raw["output"]),
        raw=raw,
    )
    cfg.build_map()  # raises ModelError subclasses (e.g. NonInvertibleRoof) on bad parameters
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return from_dict({})
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(data)


__all__ = ["DEFAULT_CONFIG", "RunConfig", "build_model", "from_dict", "load_config", "ModelError"]
