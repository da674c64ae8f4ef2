"""Level-1 ingestion, quality control, four-channel alignment, reference
collocation (reanalysis grid and buoys), SWH capping, temporal splitting,
and the canonical sample file format.

Stages are pure functions over record lists and every stage reports a
rejection tally, so kept + rejected always reconciles with the input
count. File formats are JSON-based and deterministic: identical inputs
and seeds reproduce byte-identical outputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .config import AP_COLUMNS, DDM_TYPES, SWH_CAP_M, SplitSpec
from .errors import ConfigError, ContractError, FormatError

EARTH_RADIUS_KM = 6371.0
RCG_SCALE = 1e27
RCG_MIN = 3.0
FILL_VALUE_THRESHOLD = -9000.0     # the -9999 fill family
TRACKER_STATUS_OK = 1
ROLL_MAX_DEG = 30.0
YAW_MAX_DEG = 5.0
PITCH_MAX_DEG = 10.0
LAND_DISTANCE_MIN_KM = 25.0
QUALITY_FLAG_MASK = (1 << 28) - 1  # bits 1..28
BUOY_MAX_KM = 25.0
BUOY_MAX_S = 30.0 * 60.0

SCHEMA_VERSION = 1

QC_RULES = (
    "nan_inf",
    "fill_value",
    "negative_ap",
    "low_rcg",
    "solar_contamination",
    "tracker_attitude",
    "attitude_limits",
    "near_land",
    "quality_flags",
)

BASE_AP_FIELDS = ("ddm_nbrcs", "ddm_les", "ddm_snr", "gps_eirp", "sp_rx_gain", "sp_inc_angle")


def parse_time(text: str) -> float:
    """ISO date or datetime to UTC epoch seconds; naive times are UTC."""
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise FormatError(f"cannot parse time {text!r}: {exc}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def normalize_lon(lon: float) -> float:
    """Map a longitude into [-180, 180)."""
    return (lon + 180.0) % 360.0 - 180.0


# ---------------------------------------------------------------------------
# record types
# ---------------------------------------------------------------------------


@dataclass
class L1Record:
    timestamp: float
    channel: int
    sp_lat: float
    sp_lon: float
    ddms: np.ndarray               # (3, W, H) ordered brcs, eff_scatter, power_analog
    aps: dict[str, float]          # the six base auxiliary parameters
    range_tx_sp_m: float
    range_sp_rx_m: float
    quality_flags: int
    tracker_attitude_status: int
    roll_deg: float
    yaw_deg: float
    pitch_deg: float
    distance_to_land_km: float
    solar_contamination: bool
    rcg: float | None = None       # attached by quality control


@dataclass
class Era5Grid:
    """Hourly reanalysis SWH on a regular half-degree grid.

    `mask` is a static land mask: True marks an invalid (land) cell.
    """

    times: np.ndarray   # (nt,) epoch seconds, hourly
    lats: np.ndarray    # (nlat,)
    lons: np.ndarray    # (nlon,)
    swh: np.ndarray     # (nt, nlat, nlon)
    mask: np.ndarray    # (nlat, nlon) bool, True = invalid

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.lats = np.asarray(self.lats, dtype=np.float64)
        self.lons = np.asarray(self.lons, dtype=np.float64)
        self.swh = np.asarray(self.swh, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        for axis, name, spacing in ((self.times, "times", 3600.0), (self.lats, "lats", 0.5), (self.lons, "lons", 0.5)):
            if axis.size < 2:
                raise ConfigError(f"grid {name} axis needs at least two points")
            steps = np.diff(axis)
            if not np.all(steps > 0):
                raise ConfigError(f"grid {name} axis must be strictly increasing")
            if not np.allclose(steps, spacing, atol=1e-6):
                raise ConfigError(f"grid {name} axis spacing must be exactly {spacing}")
        if self.swh.shape != (self.times.size, self.lats.size, self.lons.size):
            raise ConfigError(f"grid swh shape {self.swh.shape} does not match axes")
        if self.mask.shape != (self.lats.size, self.lons.size):
            raise ConfigError(f"grid mask shape {self.mask.shape} does not match axes")


@dataclass
class BuoyRecord:
    station_id: str
    lat: float
    lon: float
    timestamp: float
    swh: float

    def __post_init__(self):
        if self.swh < 0:
            raise FormatError(f"buoy {self.station_id} has negative SWH {self.swh}")


@dataclass
class ChannelObs:
    channel: int
    sp_lat: float
    sp_lon: float
    ddms: np.ndarray            # (3, W, H)
    aps: np.ndarray             # (9,) in AP_COLUMNS order (rcg appended)
    swh_ref: float
    wind_speed: float | None = None


@dataclass
class FourChannelSample:
    timestamp: float
    source: str                 # "era5" | "buoy" | "synth"
    channels: list[ChannelObs]  # exactly 4, ordered by channel

    def __post_init__(self):
        if len(self.channels) != 4 or [c.channel for c in self.channels] != [1, 2, 3, 4]:
            raise ContractError("FourChannelSample requires channels 1..4 in order")

    def refs(self) -> np.ndarray:
        return np.array([c.swh_ref for c in self.channels])


# ---------------------------------------------------------------------------
# scalar physics helpers
# ---------------------------------------------------------------------------


def compute_rcg(sp_rx_gain: float, range_tx_sp_m: float, range_sp_rx_m: float) -> float:
    """Range-corrected gain: gain * 1e27 / (R_tx_sp^2 * R_sp_rx^2), ranges in meters."""
    if range_tx_sp_m <= 0 or range_sp_rx_m <= 0:
        raise ContractError(f"ranges must be positive, got {range_tx_sp_m}, {range_sp_rx_m}")
    return sp_rx_gain * RCG_SCALE / (range_tx_sp_m ** 2 * range_sp_rx_m ** 2)


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in km on a 6371.0 km sphere."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dphi = p2 - p1
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


# ---------------------------------------------------------------------------
# L1 parsing and quality control
# ---------------------------------------------------------------------------


def parse_l1_record(doc: dict) -> L1Record:
    """Build an L1Record from one interchange-format JSON object."""
    try:
        ddms = np.array([doc["ddms"][name] for name in DDM_TYPES], dtype=np.float64)
        if ddms.ndim != 3:
            raise FormatError(f"ddms must be three 2-D maps, got shape {ddms.shape}")
        aps = {k: float(doc["aps"][k]) for k in BASE_AP_FIELDS}
        flags = doc["flags"]
        channel = int(doc["channel"])
        lat = float(doc["sp_lat"])
        if channel not in (1, 2, 3, 4):
            raise FormatError(f"channel must be 1..4, got {channel}")
        if not -90.0 <= lat <= 90.0:
            raise FormatError(f"sp_lat out of range: {lat}")
        return L1Record(
            timestamp=float(doc["timestamp"]),
            channel=channel,
            sp_lat=lat,
            sp_lon=normalize_lon(float(doc["sp_lon"])),
            ddms=ddms,
            aps=aps,
            range_tx_sp_m=float(doc["geometry"]["range_tx_sp_m"]),
            range_sp_rx_m=float(doc["geometry"]["range_sp_rx_m"]),
            quality_flags=int(flags["quality_flags"]),
            tracker_attitude_status=int(flags["tracker_attitude_status"]),
            roll_deg=float(flags["roll_deg"]),
            yaw_deg=float(flags["yaw_deg"]),
            pitch_deg=float(flags["pitch_deg"]),
            distance_to_land_km=float(flags["distance_to_land_km"]),
            solar_contamination=bool(flags["solar_contamination"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed L1 record: {exc}") from exc


def _qc_violation(rec: L1Record) -> str | None:
    """First violated rule name, or None if the record passes. Attaches rcg."""
    numeric = np.concatenate([
        rec.ddms.reshape(-1),
        np.array([rec.aps[k] for k in BASE_AP_FIELDS]),
        np.array([rec.sp_lat, rec.sp_lon, rec.range_tx_sp_m, rec.range_sp_rx_m,
                  rec.roll_deg, rec.yaw_deg, rec.pitch_deg, rec.distance_to_land_km]),
    ])
    if not np.all(np.isfinite(numeric)):
        return "nan_inf"
    if np.any(numeric <= FILL_VALUE_THRESHOLD):
        return "fill_value"
    if any(rec.aps[k] < 0.0 for k in ("ddm_nbrcs", "ddm_les", "ddm_snr", "sp_rx_gain")):
        return "negative_ap"
    rec.rcg = compute_rcg(rec.aps["sp_rx_gain"], rec.range_tx_sp_m, rec.range_sp_rx_m)
    if rec.rcg < RCG_MIN:
        return "low_rcg"
    if rec.solar_contamination:
        return "solar_contamination"
    if rec.tracker_attitude_status != TRACKER_STATUS_OK:
        return "tracker_attitude"
    if abs(rec.roll_deg) > ROLL_MAX_DEG or abs(rec.yaw_deg) > YAW_MAX_DEG or abs(rec.pitch_deg) > PITCH_MAX_DEG:
        return "attitude_limits"
    if rec.distance_to_land_km < LAND_DISTANCE_MIN_KM:
        return "near_land"
    if rec.quality_flags & QUALITY_FLAG_MASK:
        return "quality_flags"
    return None


def quality_control(records) -> tuple[list[L1Record], dict[str, int]]:
    """Apply the nine screening rules in order; tally rejections per rule.

    Accepts L1Record instances or raw interchange dicts; records that
    cannot be parsed are tallied under "malformed" rather than raising.
    """
    tally = {rule: 0 for rule in QC_RULES}
    tally["malformed"] = 0
    kept: list[L1Record] = []
    n_input = 0
    for item in records:
        n_input += 1
        try:
            rec = item if isinstance(item, L1Record) else parse_l1_record(item)
            rule = _qc_violation(rec)
        except (FormatError, ContractError):
            tally["malformed"] += 1
            continue
        if rule is None:
            kept.append(rec)
        else:
            tally[rule] += 1
    tally["input"] = n_input
    tally["kept"] = len(kept)
    return kept, tally


# ---------------------------------------------------------------------------
# channel alignment
# ---------------------------------------------------------------------------


def align_channels(records: list[L1Record]) -> tuple[list[list[L1Record]], dict[str, int]]:
    """Group records by exact timestamp; keep only complete 4-channel groups.

    Duplicate (timestamp, channel) pairs invalidate the whole timestamp.
    Groups are returned ordered by timestamp with channels ascending.
    """
    by_time: dict[float, list[L1Record]] = {}
    for rec in records:
        by_time.setdefault(rec.timestamp, []).append(rec)
    groups: list[list[L1Record]] = []
    tally = {"incomplete_channels": 0, "duplicate_channel": 0, "groups": 0}
    for ts in sorted(by_time):
        recs = by_time[ts]
        channels = [r.channel for r in recs]
        if len(set(channels)) != len(channels):
            tally["duplicate_channel"] += 1
            continue
        if sorted(channels) != [1, 2, 3, 4]:
            tally["incomplete_channels"] += 1
            continue
        groups.append(sorted(recs, key=lambda r: r.channel))
    tally["groups"] = len(groups)
    return groups, tally


# ---------------------------------------------------------------------------
# reference matching
# ---------------------------------------------------------------------------


class _InterpError(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def _bracket(axis: np.ndarray, value: float, name: str) -> tuple[int, float]:
    """Lower bracketing index and fractional offset within [axis[0], axis[-1]]."""
    if value < axis[0] or value > axis[-1]:
        raise _InterpError("outside_grid")
    idx = int(np.searchsorted(axis, value, side="right") - 1)
    idx = min(idx, axis.size - 2)
    frac = (value - axis[idx]) / (axis[idx + 1] - axis[idx])
    return idx, frac


def interpolate_swh(grid: Era5Grid, lat: float, lon: float, t: float) -> float:
    """Bilinear interpolation in space at the two bracketing hours, then
    linear interpolation in time.

    Raises _InterpError("outside_grid") beyond the axes and
    _InterpError("masked_node") if any of the four surrounding cells is
    land-masked.
    """
    ti, tf = _bracket(grid.times, t, "time")
    yi, yf = _bracket(grid.lats, lat, "lat")
    xi, xf = _bracket(grid.lons, lon, "lon")
    if grid.mask[yi:yi + 2, xi:xi + 2].any():
        raise _InterpError("masked_node")
    values = []
    for k in (ti, ti + 1):
        plane = grid.swh[k]
        v = (plane[yi, xi] * (1 - yf) * (1 - xf)
             + plane[yi, xi + 1] * (1 - yf) * xf
             + plane[yi + 1, xi] * yf * (1 - xf)
             + plane[yi + 1, xi + 1] * yf * xf)
        values.append(v)
    return values[0] * (1 - tf) + values[1] * tf


def _record_to_obs(rec: L1Record, swh_ref: float) -> ChannelObs:
    ap_vec = np.array([rec.aps[k] for k in BASE_AP_FIELDS] + [rec.sp_lat, rec.sp_lon, rec.rcg])
    assert ap_vec.size == len(AP_COLUMNS)
    return ChannelObs(channel=rec.channel, sp_lat=rec.sp_lat, sp_lon=rec.sp_lon,
                      ddms=rec.ddms, aps=ap_vec, swh_ref=swh_ref)


def match_era5(group: list[L1Record], grid: Era5Grid) -> tuple[FourChannelSample | None, str | None]:
    """Attach interpolated reference SWH to each channel of one group."""
    obs = []
    for rec in group:
        try:
            swh = interpolate_swh(grid, rec.sp_lat, rec.sp_lon, rec.timestamp)
        except _InterpError as exc:
            return None, exc.reason
        obs.append(_record_to_obs(rec, swh))
    return FourChannelSample(timestamp=group[0].timestamp, source="era5", channels=obs), None


def match_era5_groups(groups, grid: Era5Grid) -> tuple[list[FourChannelSample], dict[str, int]]:
    tally = {"outside_grid": 0, "masked_node": 0, "matched": 0}
    samples = []
    for group in groups:
        sample, reason = match_era5(group, grid)
        if sample is None:
            tally[reason] += 1
        else:
            samples.append(sample)
    tally["matched"] = len(samples)
    return samples, tally


def match_buoy_record(rec: L1Record, buoys: list[BuoyRecord]) -> BuoyRecord | None:
    """Closest buoy within 25 km and 30 min; ties break to the nearest in time."""
    best = None
    for buoy in buoys:
        dt = abs(buoy.timestamp - rec.timestamp)
        if dt > BUOY_MAX_S:
            continue
        dist = haversine_km(rec.sp_lat, rec.sp_lon, buoy.lat, buoy.lon)
        if dist > BUOY_MAX_KM:
            continue
        key = (dist, dt)
        if best is None or key < best[0]:
            best = (key, buoy)
    return None if best is None else best[1]


def match_buoy_groups(groups, buoys: list[BuoyRecord]) -> tuple[list[FourChannelSample], dict[str, int]]:
    """Match each channel independently, then keep groups with all four matched."""
    tally = {"unmatched_channel": 0, "matched": 0}
    samples = []
    for group in groups:
        matched = [match_buoy_record(rec, buoys) for rec in group]
        if any(m is None for m in matched):
            tally["unmatched_channel"] += 1
            continue
        obs = [_record_to_obs(rec, buoy.swh) for rec, buoy in zip(group, matched)]
        samples.append(FourChannelSample(timestamp=group[0].timestamp, source="buoy", channels=obs))
    tally["matched"] = len(samples)
    return samples, tally


# ---------------------------------------------------------------------------
# capping and splitting
# ---------------------------------------------------------------------------


def cap_and_filter(samples: list[FourChannelSample]) -> tuple[list[FourChannelSample], dict[str, int]]:
    """Drop any sample where some channel's reference exceeds the 8 m cap."""
    kept = [s for s in samples if not np.any(s.refs() > SWH_CAP_M)]
    return kept, {"swh_above_cap": len(samples) - len(kept), "kept": len(kept)}


def split_dataset(samples: list[FourChannelSample], spec: SplitSpec
                  ) -> tuple[dict[str, list[FourChannelSample]], dict[str, int]]:
    """Assign samples to half-open [start, next_start) ranges by timestamp,
    then optionally subsample each split with a seeded uniform draw."""
    bounds = [parse_time(spec.train_start), parse_time(spec.val_start),
              parse_time(spec.test_start), parse_time(spec.test_end)]
    if not all(a < b for a, b in zip(bounds, bounds[1:])):
        raise ConfigError("split boundaries must be strictly increasing (disjoint ranges)")
    splits: dict[str, list[FourChannelSample]] = {"train": [], "val": [], "test": []}
    outside = 0
    for s in samples:
        if bounds[0] <= s.timestamp < bounds[1]:
            splits["train"].append(s)
        elif bounds[1] <= s.timestamp < bounds[2]:
            splits["val"].append(s)
        elif bounds[2] <= s.timestamp < bounds[3]:
            splits["test"].append(s)
        else:
            outside += 1
    rng = np.random.default_rng(spec.seed)
    for name, count in (("train", spec.train_subsample), ("val", spec.val_subsample),
                        ("test", spec.test_subsample)):
        pool = splits[name]
        if count is not None and count < len(pool):
            idx = np.sort(rng.choice(len(pool), size=count, replace=False))
            splits[name] = [pool[i] for i in idx]
    tally = {"outside_split": outside}
    tally.update({name: len(rows) for name, rows in splits.items()})
    return splits, tally


# ---------------------------------------------------------------------------
# standardization statistics
# ---------------------------------------------------------------------------


def compute_ap_stats(samples: list[FourChannelSample], include_wind: bool) -> dict:
    """Per-column mean/std over all channels of the given (training) samples."""
    if not samples:
        raise ContractError("cannot compute standardization statistics from zero samples")
    columns = list(AP_COLUMNS) + (["wind_speed"] if include_wind else [])
    rows = []
    for s in samples:
        for ch in s.channels:
            vec = list(ch.aps)
            if include_wind:
                if ch.wind_speed is None:
                    raise ConfigError("wind standardization requested but a sample lacks wind_speed")
                vec.append(ch.wind_speed)
            rows.append(vec)
    arr = np.asarray(rows)
    mean = arr.mean(axis=0)
    std = np.maximum(arr.std(axis=0), 1e-12)
    return {"columns": columns, "mean": mean.tolist(), "std": std.tolist()}


def standardize_ap(ap: np.ndarray, stats: dict) -> np.ndarray:
    mean = np.asarray(stats["mean"])
    std = np.asarray(stats["std"])
    if ap.shape[-1] != mean.size:
        raise ConfigError(f"AP vector has {ap.shape[-1]} columns, statistics cover {mean.size}")
    return (ap - mean) / std


# ---------------------------------------------------------------------------
# canonical sample file
# ---------------------------------------------------------------------------


def manifest_path(path: str) -> str:
    return path + ".manifest.json"


def _obs_to_doc(ch: ChannelObs) -> dict:
    return {
        "channel": ch.channel,
        "sp_lat": ch.sp_lat,
        "sp_lon": ch.sp_lon,
        "ddms": {name: ch.ddms[i].tolist() for i, name in enumerate(DDM_TYPES)},
        "aps": {name: float(ch.aps[i]) for i, name in enumerate(AP_COLUMNS)},
        "swh_ref": ch.swh_ref,
        "wind_speed": ch.wind_speed,
    }


def _obs_from_doc(doc: dict) -> ChannelObs:
    ddms = np.array([doc["ddms"][name] for name in DDM_TYPES], dtype=np.float64)
    aps = np.array([doc["aps"][name] for name in AP_COLUMNS], dtype=np.float64)
    wind = doc.get("wind_speed")
    return ChannelObs(channel=int(doc["channel"]), sp_lat=float(doc["sp_lat"]),
                      sp_lon=float(doc["sp_lon"]), ddms=ddms, aps=aps,
                      swh_ref=float(doc["swh_ref"]),
                      wind_speed=None if wind is None else float(wind))


def write_samples(path: str, samples: list[FourChannelSample], manifest: dict) -> None:
    """One JSON object per line plus a sidecar manifest document."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            doc = {"timestamp": s.timestamp, "source": s.source,
                   "channels": [_obs_to_doc(ch) for ch in s.channels]}
            fh.write(json.dumps(doc))
            fh.write("\n")
    full = {"schema_version": SCHEMA_VERSION, "n_samples": len(samples)}
    full.update(manifest)
    with open(manifest_path(path), "w", encoding="utf-8") as fh:
        json.dump(full, fh, indent=1)
        fh.write("\n")


def read_samples(path: str) -> tuple[list[FourChannelSample], dict]:
    try:
        with open(manifest_path(path), "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"missing manifest {manifest_path(path)}")
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest for {path} is not valid JSON: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(
            f"sample file schema version {manifest.get('schema_version')} unsupported "
            f"(expected {SCHEMA_VERSION})"
        )
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                samples.append(FourChannelSample(
                    timestamp=float(doc["timestamp"]), source=str(doc["source"]),
                    channels=[_obs_from_doc(c) for c in doc["channels"]]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, ContractError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed sample line: {exc}") from exc
    if manifest.get("n_samples") is not None and manifest["n_samples"] != len(samples):
        raise FormatError(
            f"{path} holds {len(samples)} samples but the manifest declares {manifest['n_samples']} "
            "(truncated file?)"
        )
    return samples, manifest


def read_l1_records(path: str) -> list[dict]:
    """Raw interchange dicts; parsing/validation happens in quality_control."""
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                docs.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    return docs


def write_era5_grid(path: str, grid: Era5Grid) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "times": grid.times.tolist(),
        "lats": grid.lats.tolist(),
        "lons": grid.lons.tolist(),
        "swh": grid.swh.tolist(),
        "mask": grid.mask.astype(int).tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def read_era5_grid(path: str) -> Era5Grid:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return Era5Grid(times=doc["times"], lats=doc["lats"], lons=doc["lons"],
                        swh=doc["swh"], mask=np.asarray(doc["mask"], dtype=bool))
    except json.JSONDecodeError as exc:
        raise FormatError(f"grid file {path} is not valid JSON: {exc}") from exc
    except (KeyError, TypeError) as exc:
        raise FormatError(f"grid file {path} is missing fields: {exc}") from exc


def read_buoys(path: str) -> list[BuoyRecord]:
    """CSV with header station_id, lat, lon, iso_time, swh_m."""
    import csv

    buoys = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"station_id", "lat", "lon", "iso_time", "swh_m"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise FormatError(f"buoy CSV must have columns {sorted(expected)}, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                buoys.append(BuoyRecord(
                    station_id=row["station_id"], lat=float(row["lat"]),
                    lon=normalize_lon(float(row["lon"])),
                    timestamp=parse_time(row["iso_time"]), swh=float(row["swh_m"])))
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed buoy row: {exc}") from exc
    return buoys


# ---------------------------------------------------------------------------
# aligned-group interchange (between `preprocess` and the match commands)
# ---------------------------------------------------------------------------


def write_groups(path: str, groups: list[list[L1Record]], tally: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for group in groups:
            doc = {"timestamp": group[0].timestamp, "records": [
                {
                    "timestamp": r.timestamp, "channel": r.channel,
                    "sp_lat": r.sp_lat, "sp_lon": r.sp_lon,
                    "ddms": {name: r.ddms[i].tolist() for i, name in enumerate(DDM_TYPES)},
                    "aps": {k: r.aps[k] for k in BASE_AP_FIELDS},
                    "rcg": r.rcg,
                } for r in group]}
            fh.write(json.dumps(doc))
            fh.write("\n")
    with open(manifest_path(path), "w", encoding="utf-8") as fh:
        json.dump({"schema_version": SCHEMA_VERSION, "n_groups": len(groups), "tally": tally}, fh, indent=1)
        fh.write("\n")


def read_groups(path: str) -> list[list[L1Record]]:
    """Groups written by write_groups: records are post-screening, so the
    screening-only fields (geometry, flags) are not persisted and are
    restored as pass-through placeholders."""
    groups = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                group = []
                for r in doc["records"]:
                    group.append(L1Record(
                        timestamp=float(r["timestamp"]), channel=int(r["channel"]),
                        sp_lat=float(r["sp_lat"]), sp_lon=float(r["sp_lon"]),
                        ddms=np.array([r["ddms"][name] for name in DDM_TYPES], dtype=np.float64),
                        aps={k: float(r["aps"][k]) for k in BASE_AP_FIELDS},
                        range_tx_sp_m=1.0, range_sp_rx_m=1.0, quality_flags=0,
                        tracker_attitude_status=TRACKER_STATUS_OK, roll_deg=0.0,
                        yaw_deg=0.0, pitch_deg=0.0, distance_to_land_km=np.inf,
                        solar_contamination=False, rcg=float(r["rcg"])))
                groups.append(group)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed group line: {exc}") from exc
    return groups
