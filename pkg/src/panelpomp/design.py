"""Random starting designs for multi-start searches and likelihood profiles."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DomainError
from .params import unit_key
from .streams import stream


def _check_box(lower: Mapping[str, float], upper: Mapping[str, float]) -> None:
    if set(lower) != set(upper):
        raise DomainError("lower and upper must name the same parameters")
    bad = [k for k in lower if not lower[k] <= upper[k]]
    if bad:
        raise DomainError(f"lower exceeds upper for {bad}")


def _draw_columns(rng, lower, upper, specific_names, unit_names, nrow) -> dict:
    specific_names = list(specific_names)
    unknown = [s for s in specific_names if s not in lower]
    if unknown:
        raise DomainError(f"no bounds given for unit-specific {unknown}")
    cols = {}
    for k in lower:
        if k not in specific_names:
            cols[k] = rng.uniform(lower[k], upper[k], size=nrow)
    for u in unit_names:
        for s in specific_names:
            cols[unit_key(s, u)] = rng.uniform(lower[s], upper[s], size=nrow)
    return cols


def runif_panel_design(lower: Mapping[str, float], upper: Mapping[str, float],
                       specific_names: Sequence[str], unit_names: Sequence[str],
                       nseq: int, seed: int = 0) -> pd.DataFrame:
    """``nseq`` uniform draws from a box, one row per draw.

    Bounds for a unit-specific name apply to every unit, and each
    ``(name, unit)`` cell is drawn independently. Columns follow the
    vector ordering: shared names, then one block per unit.
    """
    _check_box(lower, upper)
    if nseq < 1:
        raise DomainError("nseq must be at least 1")
    rng = stream(seed, "runif_panel_design")
    return pd.DataFrame(_draw_columns(rng, lower, upper, specific_names, unit_names, nseq))


def profile_design(focal: str, grid: Sequence[float], lower: Mapping[str, float],
                   upper: Mapping[str, float], nprof: int, seed: int = 0,
                   specific_names: Sequence[str] = (),
                   unit_names: Sequence[str] = ()) -> pd.DataFrame:
    """Starting points for a profile over ``focal``.

    Each grid value is repeated ``nprof`` times (consecutive rows); the
    remaining parameters are drawn uniformly from the box, broadcasting
    unit-specific bounds across ``unit_names`` when given.
    """
    if focal in lower or focal in upper:
        raise DomainError(f"focal parameter {focal!r} must not also carry box bounds")
    _check_box(lower, upper)
    if nprof < 1:
        raise DomainError("nprof must be at least 1")
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size < 1:
        raise DomainError("empty profile grid")
    rng = stream(seed, "profile_design")
    cols = {focal: np.repeat(grid, nprof)}
    cols.update(_draw_columns(rng, lower, upper, specific_names, unit_names, grid.size * nprof))
    df = pd.DataFrame(cols)
    df.attrs["focal"] = focal
    return df
