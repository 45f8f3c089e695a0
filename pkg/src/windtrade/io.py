"""File formats: production/forecast CSV ingestion, INI configuration, binary tensors."""
from __future__ import annotations

import configparser
import csv
import json
import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"WTTENS01"


class DataError(ValueError):
    """Unparseable input; the message names the file and line."""


# -- CSV ingestion ------------------------------------------------------------

def parse_timestamp(text: str) -> datetime:
    """ISO-8601 timestamp with explicit offset, returned in UTC."""
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp without timezone: {text!r}")
    return ts.astimezone(timezone.utc)


def _epoch_seconds(ts: datetime) -> float:
    return ts.timestamp()


def _rows(path, header):
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            raise DataError(f"{path}:1: empty file")
        if [c.strip() for c in first] != list(header):
            raise DataError(f"{path}:1: expected header {','.join(header)!r}, got {','.join(first)!r}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, row


@dataclass(frozen=True)
class ProductionData:
    times: np.ndarray     # epoch seconds (UTC)
    power: np.ndarray     # normalized to [0, 1]
    n_clamped_high: int = 0


def read_production(path, rated_power_kw: float) -> ProductionData:
    """``timestamp,power`` rows; power in kW divided by the rated power.

    Negative power is truncated to 0; values above the rated power are
    clamped to 1 and counted.
    """
    if not rated_power_kw > 0:
        raise ValueError("rated power must be positive")
    times, power = [], []
    for line, (ts, p) in _rows(path, ("timestamp", "power")):
        try:
            times.append(_epoch_seconds(parse_timestamp(ts)))
            power.append(float(p))
        except ValueError as exc:
            raise DataError(f"{path}:{line}: {exc}") from exc
        if not np.isfinite(power[-1]):
            raise DataError(f"{path}:{line}: non-finite power")
    if not times:
        raise DataError(f"{path}: no data rows")
    t = np.asarray(times)
    v = np.asarray(power) / rated_power_kw
    high = int(np.sum(v > 1.0))
    order = np.argsort(t, kind="stable")
    return ProductionData(t[order], np.clip(v, 0.0, 1.0)[order], high)


@dataclass(frozen=True)
class ForecastData:
    issue: np.ndarray
    target: np.ndarray
    value: np.ndarray
    n_clamped: int = 0

    @property
    def horizon_hours(self) -> np.ndarray:
        return (self.target - self.issue) / 3600.0


def read_forecasts(path, rated_power_kw: float) -> ForecastData:
    """``issue_time,target_time,forecast`` rows; forecasts clamped to ``[0, 1]`` after scaling."""
    if not rated_power_kw > 0:
        raise ValueError("rated power must be positive")
    issue, target, value = [], [], []
    for line, (a, b, f) in _rows(path, ("issue_time", "target_time", "forecast")):
        try:
            ta = _epoch_seconds(parse_timestamp(a))
            tb = _epoch_seconds(parse_timestamp(b))
            fv = float(f)
        except ValueError as exc:
            raise DataError(f"{path}:{line}: {exc}") from exc
        if not tb > ta:
            raise DataError(f"{path}:{line}: target_time must be after issue_time")
        if not np.isfinite(fv):
            raise DataError(f"{path}:{line}: non-finite forecast")
        issue.append(ta)
        target.append(tb)
        value.append(fv)
    if not issue:
        raise DataError(f"{path}: no data rows")
    v = np.asarray(value) / rated_power_kw
    clamped = int(np.sum((v < 0.0) | (v > 1.0)))
    return ForecastData(np.asarray(issue), np.asarray(target), np.clip(v, 0.0, 1.0), clamped)


def align(forecasts: ForecastData, production: ProductionData, tolerance_s: float = 300.0):
    """``(forecast, realized, horizon_hours)`` rows matched on the nearest production stamp.

    Forecasts whose target has no production record within ``tolerance_s``
    are dropped; returns ``(pairs, n_dropped)``.
    """
    pt = production.times
    idx = np.searchsorted(pt, forecasts.target)
    left = np.clip(idx - 1, 0, pt.size - 1)
    right = np.clip(idx, 0, pt.size - 1)
    use_right = np.abs(pt[right] - forecasts.target) < np.abs(pt[left] - forecasts.target)
    near = np.where(use_right, right, left)
    ok = np.abs(pt[near] - forecasts.target) <= tolerance_s
    pairs = np.column_stack([forecasts.value[ok], production.power[near[ok]],
                             forecasts.horizon_hours[ok]])
    return pairs, int(np.sum(~ok))


def _stamps(times_s) -> np.ndarray:
    t = np.asarray(times_s, float)
    return np.datetime_as_string(np.round(t).astype("datetime64[s]"), timezone="UTC")


def _write_csv(path, header, columns):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(zip(*columns))


def write_production(path, times_s, power_kw):
    """Inverse of :func:`read_production` (whole-second UTC stamps)."""
    _write_csv(path, ["timestamp", "power"],
               [_stamps(times_s), [format(float(p), ".10g") for p in power_kw]])


def write_forecasts(path, issue_s, target_s, forecast_kw):
    _write_csv(path, ["issue_time", "target_time", "forecast"],
               [_stamps(issue_s), _stamps(target_s), [format(float(f), ".10g") for f in forecast_kw]])


# -- binary tensors -----------------------------------------------------------

def write_tensor(path, array) -> None:
    """Header ``WTTENS01``, ``uint32`` ndim, ``uint64`` dims, then little-endian float64 (C order)."""
    a = np.ascontiguousarray(array, dtype="<f8")
    with Path(path).open("wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(a.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != TENSOR_MAGIC:
        raise DataError(f"{path}: not a tensor file")
    (ndim,) = struct.unpack_from("<I", data, 8)
    shape = struct.unpack_from(f"<{ndim}Q", data, 12)
    offset = 12 + 8 * ndim
    count = int(np.prod(shape)) if ndim else 1
    if len(data) != offset + 8 * count:
        raise DataError(f"{path}: size does not match header")
    return np.frombuffer(data, dtype="<f8", offset=offset, count=count).reshape(shape).copy()


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -- configuration ------------------------------------------------------------

# section -> key -> (type, default); None default means required
CONFIG_SCHEMA = {
    "production": {
        "x_min": (float, None),
        "x_max": (float, None),
        "nu_x": (float, None),
    },
    "forecast": {
        "model": (str, "constant_vol"),
        "sigma_over_horizon": (float, None),
        "sigma0_per_sqrt_hour": (float, None),
        "eta_per_hour": (float, None),
        "jump_b": (float, 0.0),
        "tau_star_hours": (float, float("inf")),
        "theta_file": (str, None),
    },
    "market": {
        "horizon_days": (float, None),
        "drift_eur_per_mwh_per_day": (float, None),
        "drift_eur_per_mwh_per_hour": (float, None),
        "drift_table_days_eur_per_mwh_per_day": (str, None),
        "penalty_p_eur_per_mwh2": (float, None),
        "gamma_eur_day_per_mwh2_h2": (float, None),
        "gamma_eur_h_per_mwh2": (float, None),
        "rated_power_mw": (float, 1.0),
    },
    "numerics": {
        "hjb_n_t": (int, 121),
        "hjb_n_phi": (int, 151),
        "hjb_n_y": (int, 151),
        "hjb_phi_max": (float, 1.5),
        "hjb_max_substeps": (int, 5_000_000),
        "threshold_updates": (int, 8),
        "threshold_n_x": (int, 201),
        "threshold_n_m": (int, 801),
    },
    "run": {
        "seed": (int, 0),
        "n_paths": (int, 10000),
    },
}


def read_config(path) -> dict:
    """Parse an INI config against :data:`CONFIG_SCHEMA`; unknown sections/keys are errors."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        read = cp.read(path)
    except configparser.Error as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not read:
        raise DataError(f"{path}: cannot read config")
    out = {}
    for section in cp.sections():
        if section not in CONFIG_SCHEMA:
            raise DataError(f"{path}: unknown section [{section}]")
    for section, keys in CONFIG_SCHEMA.items():
        given = cp[section] if cp.has_section(section) else {}
        for key in given:
            if key not in keys:
                raise DataError(f"{path}: unknown key {key!r} in [{section}]")
        vals = {}
        for key, (typ, default) in keys.items():
            if key in given:
                try:
                    vals[key] = typ(given[key])
                except ValueError as exc:
                    raise DataError(f"{path}: [{section}] {key}: {exc}") from exc
            else:
                vals[key] = default
        out[section] = vals
    return out
