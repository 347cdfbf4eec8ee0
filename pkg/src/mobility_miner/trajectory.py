"""GPS records, per-day segmentation and planar projection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import datetime as dt
import io
import math
from typing import NamedTuple

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
REQUIRED_COLUMNS = ("user_id", "timestamp", "lat", "lon")
RAW_DEGREES = "raw-degrees"
EQUIRECTANGULAR = "local-equirectangular"


class SchemaError(ValueError):
    """The input table lacks a required column."""


@dataclass(frozen=True)
class GeoRecord:
    user_id: str
    timestamp: int
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class ProjectionConfig:
    mode: str = RAW_DEGREES
    reference_point: tuple | None = None
    tz_offset_minutes: int = 0

    def __post_init__(self):
        if self.mode not in (RAW_DEGREES, EQUIRECTANGULAR):
            raise ValueError(f"unknown projection mode {self.mode!r}")
        if (self.mode == EQUIRECTANGULAR) != (self.reference_point is not None):
            raise ValueError(
                "reference_point is required for local-equirectangular and only then")
        if self.reference_point is not None:
            object.__setattr__(self, "reference_point",
                               tuple(float(v) for v in self.reference_point))

    def to_dict(self):
        return {"mode": self.mode,
                "reference_point": list(self.reference_point) if self.reference_point else None,
                "tz_offset_minutes": self.tz_offset_minutes}

    @classmethod
    def from_dict(cls, d):
        return cls(mode=d.get("mode", RAW_DEGREES),
                   reference_point=d.get("reference_point"),
                   tz_offset_minutes=int(d.get("tz_offset_minutes", 0)))


@dataclass(frozen=True, eq=False)
class DailyTrajectory:
    day_id: dt.date
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def point_count(self):
        return len(self.points)

    def is_fittable(self, min_points=10):
        return self.point_count >= min_points


@dataclass(frozen=True, eq=False)
class UserDataset:
    user_id: str
    trajectories: tuple = field(default_factory=tuple)

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        days = [t.day_id for t in trajs]
        if len(set(days)) != len(days):
            raise ValueError("duplicate day_id in dataset")
        if days != sorted(days):
            raise ValueError("trajectories must be sorted by day_id")
        object.__setattr__(self, "trajectories", trajs)

    def __len__(self):
        return len(self.trajectories)

    def day(self, day_id):
        for t in self.trajectories:
            if t.day_id == day_id:
                return t
        raise KeyError(day_id)

    def to_dict(self):
        return {"user_id": self.user_id,
                "days": [{"day_id": t.day_id.isoformat(), "points": t.points.tolist()}
                         for t in self.trajectories]}

    @classmethod
    def from_dict(cls, d):
        return cls(user_id=d["user_id"], trajectories=[
            DailyTrajectory(dt.date.fromisoformat(day["day_id"]), day["points"])
            for day in d["days"]])


class ParseResult(NamedTuple):
    records: list
    n_rejected: int


def _parse_timestamp(text, fmt):
    text = text.strip()
    if fmt == "unix":
        return int(text)
    if fmt == "iso8601":
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        when = dt.datetime.fromisoformat(text)
        if when.tzinfo is None:
            raise ValueError(f"ISO timestamp without UTC offset: {text!r}")
        return int(when.timestamp())
    raise ValueError(f"unknown timestamp format {fmt!r}")


def parse_records(stream, timestamp_format="unix") -> ParseResult:
    """Read GPS records from a CSV stream.

    The header must name ``user_id, timestamp, lat, lon`` (other columns are
    ignored). Rows that fail to parse or violate coordinate bounds are
    skipped and counted in ``n_rejected``.

    Parameters
    ----------
    stream : text or binary file object, or str path
    timestamp_format : {"unix", "iso8601"}
    """
    if timestamp_format not in ("unix", "iso8601"):
        raise ValueError(f"unknown timestamp format {timestamp_format!r}")
    if isinstance(stream, (str, bytes)) or hasattr(stream, "__fspath__"):
        with open(stream, "rb") as fh:
            return parse_records(fh, timestamp_format)
    if isinstance(stream, (io.RawIOBase, io.BufferedIOBase)) or "b" in getattr(stream, "mode", ""):
        stream = io.TextIOWrapper(stream, encoding="utf-8", newline="")
    reader = csv.DictReader(stream)
    header = reader.fieldnames or []
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}")
    records, rejected = [], 0
    for row in reader:
        try:
            rec = GeoRecord(user_id=row["user_id"],
                            timestamp=_parse_timestamp(row["timestamp"], timestamp_format),
                            lat=float(row["lat"]), lon=float(row["lon"]))
            if not (rec.user_id and math.isfinite(rec.lat) and math.isfinite(rec.lon)):
                raise ValueError("empty user or non-finite coordinate")
        except (ValueError, TypeError, AttributeError, OverflowError):
            rejected += 1
            continue
        records.append(rec)
    return ParseResult(records, rejected)


def local_date(timestamp, tz_offset_minutes=0):
    return dt.datetime.fromtimestamp(timestamp + 60 * tz_offset_minutes,
                                     tz=dt.timezone.utc).date()


def project(latlon, cfg: ProjectionConfig = ProjectionConfig()):
    """Map (lat, lon) degrees to 2-D coordinates.

    Raw-degrees mode returns the input unchanged (as (lat, lon) pairs). The
    local equirectangular mode returns metres east (x) and north (y) of the
    reference point.
    """
    pts = np.asarray(latlon, dtype=float)
    if cfg.mode == RAW_DEGREES:
        return pts.copy()
    lat0, lon0 = cfg.reference_point
    lat, lon = pts[..., 0], pts[..., 1]
    x = EARTH_RADIUS_M * np.radians(lon - lon0) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_M * np.radians(lat - lat0)
    return np.stack([x, y], axis=-1)


def unproject(xy, cfg: ProjectionConfig):
    """Inverse of :func:`project`."""
    pts = np.asarray(xy, dtype=float)
    if cfg.mode == RAW_DEGREES:
        return pts.copy()
    lat0, lon0 = cfg.reference_point
    lat = lat0 + np.degrees(pts[..., 1] / EARTH_RADIUS_M)
    lon = lon0 + np.degrees(pts[..., 0] / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return np.stack([lat, lon], axis=-1)


def segment_by_day(records, cfg: ProjectionConfig = ProjectionConfig()) -> UserDataset:
    """Group one user's records into per-day trajectories.

    Days are user-local calendar dates (timestamp shifted by the configured
    offset). Days come out ascending and points within a day are ordered by
    timestamp; equal timestamps fall back to (lat, lon) so that the result
    does not depend on input order.
    """
    records = list(records)
    if not records:
        return UserDataset(user_id="", trajectories=())
    users = {r.user_id for r in records}
    if len(users) != 1:
        raise ValueError(f"records span {len(users)} users; segment one user at a time")
    ordered = sorted(records, key=lambda r: (r.timestamp, r.lat, r.lon))
    by_day = {}
    for r in ordered:
        by_day.setdefault(local_date(r.timestamp, cfg.tz_offset_minutes), []).append(r)
    trajs = [DailyTrajectory(day, project([[r.lat, r.lon] for r in recs], cfg))
             for day, recs in sorted(by_day.items())]
    return UserDataset(user_id=users.pop(), trajectories=trajs)


def split_by_user(records):
    """Partition records by user id, keeping input order within each user."""
    out = {}
    for r in records:
        out.setdefault(r.user_id, []).append(r)
    return out
