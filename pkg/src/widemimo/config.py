"""Declarative experiment files: a single TOML document per curve run.

The file mirrors ExperimentSpec.  Scalar fields sit at the top level;
scene and search parameters may either sit at the top level too or be
grouped into [scene] / [search] tables, whichever reads better:

    scenario = "mimo_extended"
    estimator = "mimo_extended_map"
    detector = "mimo_extended"
    snr_grid_db = { start = -10, stop = 20, step = 2 }
    pfa = 1e-2
    trials = 1000
    seed = 0

    [scene]
    n_tx = 2
    n_rx = 2
    target_km = [20.0, 15.0, 0.0]

    [search]
    half_extent_m = 2000.0
    nodes = 41
    refine = true

Unknown keys are rejected rather than ignored; a silently misspelled
"trails = 100000" would otherwise burn hours.
"""

from __future__ import annotations

import os

try:
    import tomllib as _toml
except ModuleNotFoundError:
    import tomli as _toml

from .experiments import ExperimentSpec


class ConfigError(ValueError):
    """Unusable experiment file; message names the offending path."""


# keys accepted inside [scene] / [search] tables, mapped to spec fields
_SCENE_KEYS = {
    "n_tx": "n_tx",
    "n_rx": "n_rx",
    "target_km": "target_km",
    "carrier_freq_hz": "carrier_freq_hz",
    "path_loss_exp": "path_loss_exp",
    "pa_spacing_m": "pa_spacing_m",
    "zeta_mode": "zeta_mode",
}
_SEARCH_KEYS = {
    "half_extent_m": "search_half_extent_m",
    "nodes": "search_nodes",
    "refine": "refine",
}
_TOP_KEYS = {
    "scenario", "estimator", "detector", "snr_grid_db", "pfa", "trials",
    "seed", "outputs",
} | set(_SCENE_KEYS.values()) | set(_SEARCH_KEYS.values())


def _snr_grid(value, path: str) -> tuple:
    if isinstance(value, (list, tuple)):
        if not value or not all(isinstance(v, (int, float)) for v in value):
            raise ConfigError(f"{path}: snr_grid_db must be a non-empty "
                              "list of numbers")
        return tuple(float(v) for v in value)
    if isinstance(value, dict):
        extra = set(value) - {"start", "stop", "step"}
        if extra:
            raise ConfigError(f"{path}: snr_grid_db table has unknown keys "
                              f"{sorted(extra)}")
        try:
            start = float(value["start"])
            stop = float(value["stop"])
        except KeyError as missing:
            raise ConfigError(f"{path}: snr_grid_db table needs "
                              f"{missing.args[0]}") from None
        step = float(value.get("step", 1.0))
        if step <= 0:
            raise ConfigError(f"{path}: snr_grid_db step must be > 0")
        grid = []
        x = start
        # inclusive of stop up to float fuzz
        while x <= stop + 1e-9 * max(1.0, abs(step)):
            grid.append(round(x, 12))
            x += step
        if not grid:
            raise ConfigError(f"{path}: snr_grid_db range is empty")
        return tuple(grid)
    raise ConfigError(f"{path}: snr_grid_db must be a list or a "
                      "{start, stop, step} table")


def spec_from_dict(doc: dict, path: str = "<dict>") -> ExperimentSpec:
    """Validate a parsed document and build the ExperimentSpec."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a table")
    flat: dict = {}

    def put(key, value):
        if key in flat:
            raise ConfigError(f"{path}: {key} given more than once")
        flat[key] = value

    for key, value in doc.items():
        if key == "scene":
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: [scene] must be a table")
            for k, v in value.items():
                if k not in _SCENE_KEYS:
                    raise ConfigError(f"{path}: unknown key scene.{k}")
                put(_SCENE_KEYS[k], v)
        elif key == "search":
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: [search] must be a table")
            for k, v in value.items():
                if k not in _SEARCH_KEYS:
                    raise ConfigError(f"{path}: unknown key search.{k}")
                put(_SEARCH_KEYS[k], v)
        elif key in _TOP_KEYS:
            put(key, value)
        else:
            raise ConfigError(f"{path}: unknown key {key}")

    if "snr_grid_db" in flat:
        flat["snr_grid_db"] = _snr_grid(flat["snr_grid_db"], path)
    if "target_km" in flat:
        tk = flat["target_km"]
        if (not isinstance(tk, (list, tuple)) or len(tk) != 3
                or not all(isinstance(v, (int, float)) for v in tk)):
            raise ConfigError(f"{path}: target_km must be [x, y, z] in km")
        flat["target_km"] = tuple(float(v) for v in tk)
    try:
        return ExperimentSpec(**flat)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_spec(path: str) -> ExperimentSpec:
    """Read a TOML experiment file into an ExperimentSpec."""
    if not os.path.exists(path):
        raise ConfigError(f"spec file not found: {path}")
    try:
        with open(path, "rb") as fh:
            doc = _toml.load(fh)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: unreadable: {exc}") from exc
    return spec_from_dict(doc, path)
