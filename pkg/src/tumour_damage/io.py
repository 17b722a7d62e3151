"""Flat ``key = value`` run configs and CSV snapshots."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .constitutive import ModelParams
from .errors import ParseError, SchemaError, ValidationError
from .grid import Grid
from .presets import parse_preset
from .stepper import StepState, steps_for

OUTPUT_ENV = "TUMOUR_DAMAGE_OUT"
CELL_COLUMNS = ("i", "j", "x", "y", "phi", "mu", "sigma", "z")
NODE_COLUMNS = ("i", "j", "x", "y", "u1", "u2", "v1", "v2")
COUPLINGS = ("growth", "supply", "robin", "perturbation", "treatment", "eigenstrain")
STUDY_FIELDS = ("phi", "mu", "sigma", "z")


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_ENV, "tumour_damage_out")


@dataclass(frozen=True)
class RunConfig:
    """Validated run description; ``params`` carries every constitutive constant."""

    nx: int = 32
    ny: int = 32
    lx: float = 1.0
    ly: float = 1.0
    T: float = 0.05
    params: ModelParams = field(default_factory=ModelParams)
    preset: str = "random-smooth(0)"
    output_dir: str = field(default_factory=default_output_dir)
    snapshot_stride: int = 10
    couple_growth: bool = True
    couple_supply: bool = True
    couple_robin: bool = True
    couple_perturbation: bool = True
    couple_treatment: bool = True
    couple_eigenstrain: bool = True
    treatment: tuple[tuple[float, float], ...] = ()
    study_field: str = "phi"

    def __post_init__(self):
        for name in ("nx", "ny"):
            if getattr(self, name) < 4:
                raise ValidationError(name, f"{name} >= 4", getattr(self, name))
        for name in ("lx", "ly", "T"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValidationError(name, f"{name} > 0", value)
        try:
            steps_for(self.T, self.params.tau)
        except ValueError:
            raise ValidationError("T", "T / tau integral within 1e-9", (self.T, self.params.tau)) \
                from None
        if self.snapshot_stride < 0:
            raise ValidationError("snapshot_stride", "snapshot_stride >= 0", self.snapshot_stride)
        try:
            parse_preset(self.preset)
        except ValueError as exc:
            raise ValidationError("preset", str(exc), self.preset) from None
        if self.study_field not in STUDY_FIELDS:
            raise ValidationError("study_field", f"one of {STUDY_FIELDS}", self.study_field)
        times = [t for t, _ in self.treatment]
        if any(b <= a for a, b in zip(times[:-1], times[1:])):
            raise ValidationError("treatment", "strictly increasing times", self.treatment)

    @property
    def tau(self) -> float:
        return self.params.tau

    @property
    def grid(self) -> Grid:
        return Grid(self.nx, self.ny, self.lx, self.ly)

    @property
    def n_steps(self) -> int:
        return steps_for(self.T, self.tau)

    def effective_params(self) -> ModelParams:
        """Params with every switched-off coupling zeroed."""
        p = self.params
        changes = {}
        if not self.couple_growth:
            changes["g_on"] = False
        if not self.couple_supply:
            changes["lambda_s0"] = 0.0
        if not self.couple_robin:
            changes["alpha"] = 0.0
        if not self.couple_perturbation:
            changes["c_pi"] = 0.0
        if not self.couple_treatment:
            changes["f"] = 0.0
        if not self.couple_eigenstrain:
            changes["r0"] = 0.0
        return replace(p, **changes)

    def treatment_fn(self):
        """Piecewise-linear treatment series, or ``None`` for the constant ``f``."""
        if not self.treatment or not self.couple_treatment:
            return None
        ts = np.array([t for t, _ in self.treatment])
        vs = np.array([v for _, v in self.treatment])
        return lambda t: float(np.interp(t, ts, vs))

    def sources_off(self) -> "RunConfig":
        return replace(self, couple_growth=False, couple_supply=False, couple_robin=False,
                       couple_perturbation=False, couple_treatment=False, treatment=())


_RUN_KEYS = ("nx", "ny", "lx", "ly", "tau", "T", "preset", "output_dir", "snapshot_stride",
             *(f"couple_{c}" for c in COUPLINGS), "treatment", "study_field")
_PARAM_KEYS = tuple(n for n in ModelParams.field_names() if n != "tau")
KEYS = _RUN_KEYS + _PARAM_KEYS


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


def _parse_series(text: str) -> tuple[tuple[float, float], ...]:
    if not text:
        return ()
    pairs = []
    for item in text.split(","):
        t, v = item.split(":")
        pairs.append((float(t), float(v)))
    return tuple(pairs)


def _kind(key: str):
    if key in ("nx", "ny", "snapshot_stride"):
        return _parse_int
    if key.startswith("couple_") or key == "g_on":
        return _parse_bool
    if key in ("preset", "output_dir", "study_field"):
        return str
    if key == "treatment":
        return _parse_series
    return float


def parse_config(text: str) -> RunConfig:
    """Parse and validate a config; absent keys keep their defaults."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(lineno, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ParseError(lineno, f"unknown key {key!r}")
        if key in values:
            raise ParseError(lineno, f"duplicate key {key!r}")
        try:
            values[key] = _kind(key)(value)
        except ValueError as exc:
            raise ParseError(lineno, f"bad value for {key}: {exc}") from None
    return config_from_values(values)


def config_from_values(values: dict) -> RunConfig:
    values = dict(values)
    param_values = {k: values.pop(k) for k in list(values) if k in _PARAM_KEYS}
    if "tau" in values:
        param_values["tau"] = values.pop("tau")
    params = ModelParams(**param_values)
    return RunConfig(params=params, **values)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(f"{t!r}:{v!r}" for t, v in value)
    return str(value)


def config_values(cfg: RunConfig) -> dict[str, object]:
    out: dict[str, object] = {}
    for key in _RUN_KEYS:
        out[key] = cfg.tau if key == "tau" else getattr(cfg, key)
    for key in _PARAM_KEYS:
        out[key] = getattr(cfg.params, key)
    return out


def serialize_config(cfg: RunConfig) -> str:
    """Every key written explicitly; floats use ``repr`` so parsing is exact."""
    return "".join(f"{k} = {_format(v)}\n" for k, v in config_values(cfg).items())


def load_config(path: str | os.PathLike) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# ------------------------------------------------------------------ snapshots


def _snapshot_paths(prefix: str | os.PathLike) -> tuple[Path, Path, Path]:
    prefix = str(prefix)
    return Path(prefix + "_cells.csv"), Path(prefix + "_nodes.csv"), Path(prefix + "_meta.json")


def write_snapshot(state: StepState, grid: Grid, prefix: str | os.PathLike) -> list[Path]:
    """Write ``<prefix>_cells.csv``, ``<prefix>_nodes.csv`` and ``<prefix>_meta.json``."""
    cells, nodes, meta = _snapshot_paths(prefix)
    cells.parent.mkdir(parents=True, exist_ok=True)
    x, y = grid.cell_centers()
    with cells.open("w", newline="") as fh:
        fh.write(",".join(CELL_COLUMNS) + "\n")
        for i in range(grid.nx):
            for j in range(grid.ny):
                vals = (x[i, j], y[i, j], state.phi[i, j], state.mu[i, j],
                        state.sigma[i, j], state.z[i, j])
                fh.write(f"{i},{j}," + ",".join("%.17g" % v for v in vals) + "\n")
    xn, yn = grid.nodes()
    u, v = state.u, state.v
    with nodes.open("w", newline="") as fh:
        fh.write(",".join(NODE_COLUMNS) + "\n")
        for i in range(grid.nx + 1):
            for j in range(grid.ny + 1):
                vals = (xn[i, j], yn[i, j], u[0, i, j], u[1, i, j], v[0, i, j], v[1, i, j])
                fh.write(f"{i},{j}," + ",".join("%.17g" % val for val in vals) + "\n")
    meta.write_text(json.dumps({"k": state.k, "t": state.t, "tau": state.tau, "nx": grid.nx,
                                "ny": grid.ny, "lx": grid.lx, "ly": grid.ly}, indent=1) + "\n")
    return [cells, nodes, meta]


def _read_table(path: Path, columns: tuple[str, ...], shape: tuple[int, int]) -> np.ndarray:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != columns:
        raise SchemaError(f"{path}: header must be {','.join(columns)}")
    body = rows[1:]
    if len(body) != shape[0] * shape[1]:
        raise SchemaError(f"{path}: expected {shape[0] * shape[1]} rows, found {len(body)}")
    out = np.empty((len(columns) - 4,) + shape)
    seen = np.zeros(shape, dtype=bool)
    for n, row in enumerate(body, start=2):
        if len(row) != len(columns):
            raise SchemaError(f"{path}:{n}: expected {len(columns)} columns, found {len(row)}")
        try:
            i, j = int(row[0]), int(row[1])
            values = [float(v) for v in row[4:]]
        except ValueError:
            raise SchemaError(f"{path}:{n}: non-numeric entry") from None
        if not (0 <= i < shape[0] and 0 <= j < shape[1]) or seen[i, j]:
            raise SchemaError(f"{path}:{n}: bad or repeated index ({i}, {j})")
        seen[i, j] = True
        out[:, i, j] = values
    return out


def read_snapshot(prefix: str | os.PathLike) -> tuple[StepState, Grid]:
    """Inverse of :func:`write_snapshot`.

    ``u_prev`` is not stored; it is rebuilt as ``u - tau * v``.
    """
    cells, nodes, meta_path = _snapshot_paths(prefix)
    meta = json.loads(meta_path.read_text())
    grid = Grid(meta["nx"], meta["ny"], meta["lx"], meta["ly"])
    c = _read_table(cells, CELL_COLUMNS, grid.shape)
    n = _read_table(nodes, NODE_COLUMNS, grid.node_shape)
    u, v = n[0:2].copy(), n[2:4].copy()
    tau = float(meta["tau"])
    state = StepState(phi=c[0].copy(), mu=c[1].copy(), sigma=c[2].copy(), z=c[3].copy(),
                      u=u, v=v, u_prev=u - tau * v, k=int(meta["k"]), t=float(meta["t"]),
                      tau=tau)
    return state, grid
