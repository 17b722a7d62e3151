"""Named initial-data presets and the portable seeded generator behind them."""

from __future__ import annotations

import re

import numpy as np

from .constitutive import ModelParams, ramp
from .grid import Grid
from .stepper import InitialData

_MASK = (1 << 64) - 1
LCG_MULTIPLIER = 6364136223846793005
LCG_INCREMENT = 1442695040888963407


class Lcg:
    """64-bit linear congruential generator; ``uniform`` keeps the top 53 bits."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next(self) -> int:
        self.state = (LCG_MULTIPLIER * self.state + LCG_INCREMENT) & _MASK
        return self.state

    def uniform(self, n: int) -> np.ndarray:
        return np.array([(self.next() >> 11) / 2.0**53 for _ in range(n)])


def smooth(f: np.ndarray, passes: int = 5) -> np.ndarray:
    """Jacobi averaging with mirrored ghosts (one explicit heat step per pass)."""
    for _ in range(passes):
        g = np.pad(f, 1, mode="edge")
        f = 0.2 * (g[1:-1, 1:-1] + g[2:, 1:-1] + g[:-2, 1:-1] + g[1:-1, 2:] + g[1:-1, :-2])
    return f


def random_smooth(grid: Grid, params: ModelParams, seed: int = 0) -> InitialData:
    """Smoothed noise: phi in (-1, 1), sigma in [0, M], z in [0, 1]."""
    rng = Lcg(seed)
    n = grid.nx * grid.ny
    phi = smooth(2.0 * rng.uniform(n).reshape(grid.shape) - 1.0)
    sigma = params.M * smooth(rng.uniform(n).reshape(grid.shape))
    z = smooth(rng.uniform(n).reshape(grid.shape))
    return InitialData(phi, sigma, z, grid.vector(), grid.vector())


def lesion_disc(grid: Grid, params: ModelParams, cx: float = 0.5, cy: float = 0.5,
                radius: float = 0.25) -> InitialData:
    """Tumour ring around a damaged crater (a surgical groove) centred at (cx, cy)."""
    x, y = grid.cell_centers()
    d = np.hypot(x - cx * grid.lx, y - cy * grid.ly)
    z = ramp((d - 0.5 * radius) / radius)
    phi = -1.0 + 2.0 * np.exp(-(((d - radius) / (0.5 * radius)) ** 2))
    sigma = params.M * z
    return InitialData(phi, sigma, z, grid.vector(), grid.vector())


def well_bottom(grid: Grid, params: ModelParams) -> InitialData:
    """Spatially constant state at the bottom of the tumour well."""
    return InitialData(grid.scalar(1.0), grid.scalar(params.sigma_s), grid.scalar(0.5),
                       grid.vector(), grid.vector())


def cosine_mode(grid: Grid, params: ModelParams) -> InitialData:
    """Nutrient in the first Neumann cosine mode along x; other fields at rest."""
    x, _ = grid.cell_centers()
    sigma = 0.5 * params.M * (1.0 + np.cos(np.pi * x / grid.lx))
    return InitialData(grid.scalar(-1.0), sigma, grid.scalar(0.0), grid.vector(), grid.vector())


PRESETS = ("well-bottom", "random-smooth", "lesion-disc", "cosine-mode")
_CALL = re.compile(r"^\s*([a-z-]+)\s*(?:\((.*)\))?\s*$")


def parse_preset(text: str) -> tuple[str, list[float]]:
    """Split ``name(arg, ...)`` into the name and numeric arguments."""
    m = _CALL.match(text)
    if not m or m.group(1) not in PRESETS:
        raise ValueError(f"unknown preset {text!r}; choose from {', '.join(PRESETS)}")
    args = [float(a) for a in m.group(2).split(",")] if m.group(2) and m.group(2).strip() else []
    limits = {"well-bottom": 0, "random-smooth": 1, "lesion-disc": 3, "cosine-mode": 0}
    if len(args) > limits[m.group(1)]:
        raise ValueError(f"preset {m.group(1)} takes at most {limits[m.group(1)]} arguments")
    return m.group(1), args


def build_initial_data(preset: str, grid: Grid, params: ModelParams) -> InitialData:
    name, args = parse_preset(preset)
    if name == "well-bottom":
        return well_bottom(grid, params)
    if name == "random-smooth":
        seed = int(args[0]) if args else 0
        if args and seed != args[0]:
            raise ValueError("random-smooth seed must be an integer")
        return random_smooth(grid, params, seed)
    if name == "lesion-disc":
        return lesion_disc(grid, params, *args)
    return cosine_mode(grid, params)
