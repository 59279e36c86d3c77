from __future__ import annotations

import os
from dataclasses import dataclass


@dataclass(frozen=True)
class Settings:
    workers: int
    chunk_paths: int
    fp_dt_fraction: float
    grid_nodes: int
    quad_points: int
    hist_bins: int
    mass_warn_fraction: float


def get_settings() -> Settings:
    return Settings(
        workers=max(1, int(os.getenv("DELAYDENSITY_WORKERS", "1"))),
        chunk_paths=max(1, int(os.getenv("DELAYDENSITY_CHUNK_PATHS", "4096"))),
        fp_dt_fraction=float(os.getenv("DELAYDENSITY_FP_DT_FRACTION", "1e-3")),
        grid_nodes=int(os.getenv("DELAYDENSITY_GRID_NODES", "65")),
        quad_points=int(os.getenv("DELAYDENSITY_QUAD_POINTS", "64")),
        hist_bins=int(os.getenv("DELAYDENSITY_HIST_BINS", "200")),
        mass_warn_fraction=float(os.getenv("DELAYDENSITY_MASS_WARN", "0.01")),
    )
