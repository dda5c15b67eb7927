"""Configuration files: flat ``key = value`` text with dotted sections.

Unknown keys are rejected so typos fail loudly; missing keys fall back to
the estimator defaults.  Matrix-valued entries accept a scalar (multiple
of identity) or a comma-separated diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .adaptation import EstimatorConfig
from .errors import ConfigError
from .simulation import SimScenario


@dataclass
class RunSettings:
    """Everything a command needs: estimator config plus scenario and
    reporting options."""

    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    scenario: SimScenario = field(default_factory=SimScenario)
    truth_init: bool = True      # initialize drag/noise scales from the truth laws
    savgol: bool = False         # polynomial post-filter in reporting
    savgol_order: int = 3
    savgol_frame: int = 9
    replay_x0: np.ndarray = field(default_factory=lambda: np.zeros(6))


def _parse_bool(raw: str, key: str, line_no: int) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"line {line_no}: {key} expects a boolean, got {raw!r}")


def _parse_float(raw: str, key: str, line_no: int) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"line {line_no}: {key} expects a number, got {raw!r}") from exc


def _parse_int(raw: str, key: str, line_no: int) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"line {line_no}: {key} expects an integer, got {raw!r}") from exc


def _parse_vector(raw: str, key: str, line_no: int, n: int) -> np.ndarray:
    parts = [p for p in raw.replace(",", " ").split() if p]
    try:
        vec = np.array([float(p) for p in parts])
    except ValueError as exc:
        raise ConfigError(f"line {line_no}: {key} expects numbers, got {raw!r}") from exc
    if vec.shape != (n,):
        raise ConfigError(f"line {line_no}: {key} expects {n} values, got {len(parts)}")
    return vec


def _parse_matrix(raw: str, key: str, line_no: int, n: int) -> np.ndarray:
    """Scalar -> multiple of identity; n values -> diagonal."""
    parts = [p for p in raw.replace(",", " ").split() if p]
    if len(parts) == 1:
        return _parse_float(parts[0], key, line_no) * np.eye(n)
    return np.diag(_parse_vector(raw, key, line_no, n))


_EST_SCALARS = {
    "k_w": _parse_int,
    "lambda0": _parse_float,
    "f1": _parse_float,
    "f2": _parse_float,
    "epsilon": _parse_float,
    "b_u": _parse_float,
    "b_l": _parse_float,
    "phi0": _parse_float,
    "psi0": _parse_float,
    "warmup": _parse_int,
}
_EST_MATRICES = {"mu0": 3, "P0": 6, "Phi0": 6, "Psi0": 4}
_ABLATIONS = ("errprop_off", "coherence_off", "consistency_off", "drag_off", "adapt_off")
_SCENARIO_INTS = ("steps", "seed")
_SCENARIO_FLOATS = ("dt",)


def parse_config_text(text: str) -> RunSettings:
    settings = RunSettings()
    est_kwargs: dict = {}
    scen_kwargs: dict = {}

    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw_line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not value:
            raise ConfigError(f"line {line_no}: empty value for {key!r}")

        if key in _EST_SCALARS:
            est_kwargs[key] = _EST_SCALARS[key](value, key, line_no)
        elif key in _EST_MATRICES:
            est_kwargs[key] = _parse_matrix(value, key, line_no, _EST_MATRICES[key])
        elif key == "mode":
            mode = value.lower()
            if mode not in ("raswe", "dwe"):
                raise ConfigError(f"line {line_no}: mode must be raswe or dwe, got {value!r}")
            if mode == "dwe":
                est_kwargs["adapt_off"] = True
                est_kwargs["drag_off"] = True
        elif key.startswith("ablation."):
            name = key[len("ablation."):]
            if name not in _ABLATIONS:
                raise ConfigError(f"line {line_no}: unknown ablation flag {name!r}")
            est_kwargs[name] = _parse_bool(value, key, line_no)
        elif key.startswith("scenario."):
            name = key[len("scenario."):]
            if name in _SCENARIO_INTS:
                scen_kwargs[name] = _parse_int(value, key, line_no)
            elif name in _SCENARIO_FLOATS:
                scen_kwargs[name] = _parse_float(value, key, line_no)
            elif name == "anchor":
                scen_kwargs["anchor"] = _parse_vector(value, key, line_no, 3)
            elif name == "x0":
                scen_kwargs["x0"] = _parse_vector(value, key, line_no, 6)
            elif name in ("of_outage", "uwb_outage"):
                pair = _parse_vector(value, key, line_no, 2)
                scen_kwargs[name] = (int(pair[0]), int(pair[1]))
            elif name == "truth_init":
                settings.truth_init = _parse_bool(value, key, line_no)
            else:
                raise ConfigError(f"line {line_no}: unknown key {key!r}")
        elif key.startswith("report."):
            name = key[len("report."):]
            if name == "savgol":
                settings.savgol = _parse_bool(value, key, line_no)
            elif name == "savgol_order":
                settings.savgol_order = _parse_int(value, key, line_no)
            elif name == "savgol_frame":
                settings.savgol_frame = _parse_int(value, key, line_no)
            else:
                raise ConfigError(f"line {line_no}: unknown key {key!r}")
        elif key.startswith("replay."):
            name = key[len("replay."):]
            if name == "x0":
                settings.replay_x0 = _parse_vector(value, key, line_no, 6)
            else:
                raise ConfigError(f"line {line_no}: unknown key {key!r}")
        else:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")

    settings.estimator = replace(settings.estimator, **est_kwargs)
    scen_kwargs.setdefault("warmup", settings.estimator.warmup)
    settings.scenario = replace(settings.scenario, **scen_kwargs)
    try:
        settings.estimator.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return settings


def load_config(path) -> RunSettings:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)
