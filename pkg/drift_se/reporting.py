"""Run artifacts: CSV traces, PCA snapshots, density grids and a JSON summary."""

from __future__ import annotations

import pathlib
import typing

import numpy as np
import pandas as pd
import ujson

from .logging import get_logger
from .metrics import Projected, centroid_distance, density_grid
from .settings import Settings, get_settings

logger = get_logger()


def _settings(settings: Settings | None) -> Settings:
    return settings or get_settings()


def write_csv(
    df: pd.DataFrame, path: pathlib.Path, *, settings: Settings | None = None
) -> pathlib.Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=_settings(settings).csv_float_format)
    logger.info(f'📝 Written 🧬 shape {df.shape} to {path}')
    return path


def write_trace(
    rows: typing.Sequence[dict[str, typing.Any]],
    path: pathlib.Path,
    *,
    settings: Settings | None = None,
) -> pathlib.Path:
    """Per-step (or per-epoch) metric rows, one column per metric."""
    return write_csv(pd.DataFrame.from_records(list(rows)), path, settings=settings)


def snapshot_frame(groups: dict[str, Projected]) -> pd.DataFrame:
    return pd.concat(
        [
            pd.DataFrame({'group': name, 'pc1': item.points[:, 0], 'pc2': item.points[:, 1]})
            for name, item in groups.items()
        ],
        ignore_index=True,
    )


def centroid_frame(groups: dict[str, Projected], reference: str = 'clean') -> pd.DataFrame:
    """Projected centroids plus each group's distance to the reference centroid."""
    records = []
    for name, item in groups.items():
        record = {'group': name, 'pc1': item.centroid[0], 'pc2': item.centroid[1]}
        if reference in groups:
            record['distance_to_' + reference] = centroid_distance(
                item.centroid_original, groups[reference].centroid_original
            )
        records.append(record)
    return pd.DataFrame.from_records(records)


def density_frame(groups: dict[str, Projected], bins: int) -> pd.DataFrame:
    """Long-format 2-D densities on a grid shared by all groups."""
    stacked = np.concatenate([item.points for item in groups.values()])
    bounds = (
        (float(stacked[:, 0].min()), float(stacked[:, 0].max())),
        (float(stacked[:, 1].min()), float(stacked[:, 1].max())),
    )
    bounds = tuple((lo, hi) if hi > lo else (lo - 0.5, hi + 0.5) for lo, hi in bounds)
    frames = []
    for name, item in groups.items():
        density, x_edges, y_edges = density_grid(item.points, bins=bins, bounds=bounds)
        x_centers = 0.5 * (x_edges[1:] + x_edges[:-1])
        y_centers = 0.5 * (y_edges[1:] + y_edges[:-1])
        xx, yy = np.meshgrid(x_centers, y_centers, indexing='ij')
        frames.append(
            pd.DataFrame(
                {'group': name, 'x': xx.ravel(), 'y': yy.ravel(), 'density': density.ravel()}
            )
        )
    return pd.concat(frames, ignore_index=True)


def write_snapshot(
    out_dir: pathlib.Path,
    epoch: int,
    groups: dict[str, Projected],
    *,
    settings: Settings | None = None,
) -> pd.DataFrame:
    """Write the point sets, centroids and density grids of one epoch.

    Returns the centroid table so callers can track the distribution evolution.
    """
    settings = _settings(settings)
    snapshot_dir = out_dir / 'snapshots'
    points_path = snapshot_dir / f'points_epoch_{epoch:04d}.csv'
    write_csv(snapshot_frame(groups), points_path, settings=settings)
    centroids = centroid_frame(groups)
    write_csv(centroids, snapshot_dir / f'centroids_epoch_{epoch:04d}.csv', settings=settings)
    write_csv(
        density_frame(groups, settings.density_grid_bins),
        snapshot_dir / f'density_epoch_{epoch:04d}.csv',
        settings=settings,
    )
    return centroids


def _jsonable(value: typing.Any) -> typing.Any:
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, float) and not np.isfinite(value):
        return repr(value)
    if isinstance(value, pathlib.Path):
        return str(value)
    return value


def write_summary(path: pathlib.Path, summary: dict[str, typing.Any]) -> pathlib.Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(ujson.dumps(_jsonable(summary), indent=2, sort_keys=True) + '\n')
    logger.info(f'📦 Summary written to {path}')
    return path
