"""File ingestion and spatial join.

POI tables, ward boundaries (a GeoJSON subset) and area-level deprivation
scores are parsed into immutable records; POIs are assigned to wards by
point-in-polygon and area scores are averaged up to wards.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from urbandep import geometry
from urbandep.errors import (
    DataError,
    DuplicateIdError,
    FormatError,
    GeometryError,
    RowError,
    UnresolvedAreaError,
)

log = logging.getLogger(__name__)

WGS84_CRS_NAMES = {
    "urn:ogc:def:crs:OGC:1.3:CRS84",
    "urn:ogc:def:crs:OGC::CRS84",
    "EPSG:4326",
    "urn:ogc:def:crs:EPSG::4326",
    "urn:ogc:def:crs:EPSG:4326",
}


class Source(str, Enum):
    VENUE = "venueService"
    MAP = "mapService"


@dataclass(frozen=True)
class Poi:
    id: str
    lon: float
    lat: float
    category: str
    source: Source
    checkins: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "lon", float(self.lon))
        object.__setattr__(self, "lat", float(self.lat))
        if not -180.0 <= self.lon <= 180.0:
            raise DataError(f"POI {self.id}: longitude out of range")
        if not -90.0 <= self.lat <= 90.0:
            raise DataError(f"POI {self.id}: latitude out of range")
        if not self.category or self.category != self.category.strip():
            raise DataError(f"POI {self.id}: category must be non-empty and trimmed")
        if self.checkins is not None and self.checkins < 0:
            raise DataError(f"POI {self.id}: negative checkins")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "lon": self.lon,
            "lat": self.lat,
            "category": self.category,
            "source": self.source.value,
            "checkins": self.checkins,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Poi":
        return cls(d["id"], float(d["lon"]), float(d["lat"]), d["category"],
                   Source(d["source"]), d.get("checkins"))


@dataclass(frozen=True)
class PoiFormat:
    """Column mapping for a POI table."""

    id: str = "id"
    lon: str = "lon"
    lat: str = "lat"
    category: str = "category"
    checkins: str | None = None

    @classmethod
    def from_mapping(cls, m: Mapping[str, str]) -> "PoiFormat":
        unknown = set(m) - {"id", "lon", "lat", "category", "checkins"}
        if unknown:
            raise FormatError(f"unknown column mapping keys: {sorted(unknown)}")
        return cls(**m)


class BadRowsError(DataError):
    def __init__(self, errors: list[RowError], total: int, limit: float):
        self.errors = errors
        shown = "; ".join(str(e) for e in errors[:5])
        super().__init__(
            f"{len(errors)} of {total} rows rejected (limit {limit:.1%}): {shown}"
        )


def _as_text(text) -> str:
    return text if isinstance(text, str) else text.read()


def _read_table(text, required: Sequence[str]):
    reader = csv.reader(io.StringIO(_as_text(text)))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise FormatError("empty table: no header row") from None
    index = {}
    for col in required:
        if col not in header:
            raise FormatError(f"missing column '{col}'")
        index[col] = header.index(col)
    return header, index, reader


def _enforce_bad_rows(bad, total, max_bad_rows, sink):
    if sink is not None:
        sink.extend(bad)
    if bad:
        log.warning("dropped %d of %d rows (first: %s)", len(bad), total, bad[0])
    if total and len(bad) / total > max_bad_rows:
        raise BadRowsError(bad, total, max_bad_rows)


def _parse_coord(raw: str, name: str, bound: float, line: int) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise RowError(line, f"non-numeric {name} {raw!r}") from None
    if not math.isfinite(v) or not -bound <= v <= bound:
        raise RowError(line, f"{name} out of range")
    return v


def parse_poi_table(
    text,
    source: Source | str,
    fmt: PoiFormat = PoiFormat(),
    *,
    max_bad_rows: float = 0.05,
    errors: list | None = None,
) -> list[Poi]:
    """Parse a header-first CSV of POIs.

    Rows with bad coordinates, empty categories or invalid check-in counts are
    dropped and reported through ``errors``; a :class:`BadRowsError` is raised
    when more than ``max_bad_rows`` of the rows are dropped.
    """
    source = Source(source)
    required = [fmt.id, fmt.lon, fmt.lat, fmt.category]
    if fmt.checkins:
        required.append(fmt.checkins)
    _, idx, reader = _read_table(text, required)
    pois, bad, total = [], [], 0
    for row in reader:
        if not row:
            continue
        total += 1
        line = reader.line_num
        try:
            if len(row) < len(idx) or max(idx.values()) >= len(row):
                raise RowError(line, "too few fields")
            lon = _parse_coord(row[idx[fmt.lon]], "longitude", 180.0, line)
            lat = _parse_coord(row[idx[fmt.lat]], "latitude", 90.0, line)
            cat = row[idx[fmt.category]].strip()
            if not cat:
                raise RowError(line, "empty category")
            checkins = None
            if fmt.checkins:
                raw = row[idx[fmt.checkins]].strip()
                if raw:
                    try:
                        checkins = int(raw)
                    except ValueError:
                        raise RowError(line, f"non-integer checkins {raw!r}") from None
                    if checkins < 0:
                        raise RowError(line, "negative checkins")
            pois.append(Poi(row[idx[fmt.id]], lon, lat, cat, source, checkins))
        except RowError as e:
            bad.append(e)
    _enforce_bad_rows(bad, total, max_bad_rows, errors)
    return pois


def serialize_poi_table(pois: Iterable[Poi], fmt: PoiFormat = PoiFormat()) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    cols = [fmt.id, fmt.lon, fmt.lat, fmt.category]
    if fmt.checkins:
        cols.append(fmt.checkins)
    w.writerow(cols)
    for p in pois:
        row = [p.id, repr(p.lon), repr(p.lat), p.category]
        if fmt.checkins:
            row.append("" if p.checkins is None else str(p.checkins))
        w.writerow(row)
    return out.getvalue()


@dataclass(frozen=True)
class WardBoundary:
    """One polygon part of a ward. Multi-part wards share ``ward_id``."""

    ward_id: str
    name: str
    exterior: tuple
    holes: tuple = ()
    part: int = 0

    def __post_init__(self):
        for ring in (self.exterior, *self.holes):
            _check_ring(ring, self.ward_id)
        if geometry.signed_area(self.exterior) == 0.0:
            raise GeometryError(f"ward {self.ward_id}: exterior ring has zero area")

    @property
    def rings(self) -> tuple:
        return (self.exterior, *self.holes)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        r = np.asarray(self.exterior)
        return r[:, 0].min(), r[:, 1].min(), r[:, 0].max(), r[:, 1].max()

    def contains(self, lon, lat) -> np.ndarray:
        return geometry.polygon_contains(self.exterior, self.holes, lon, lat)


def _check_ring(ring, ward_id):
    if len(ring) < 4:
        raise GeometryError(f"ward {ward_id}: ring has fewer than 4 vertices")
    if tuple(ring[0]) != tuple(ring[-1]):
        raise GeometryError(f"ward {ward_id}: ring is not closed")


def _ring_from_json(coords, ward_id):
    try:
        ring = tuple((float(c[0]), float(c[1])) for c in coords)
    except (TypeError, ValueError, IndexError):
        raise GeometryError(f"ward {ward_id}: malformed coordinates") from None
    _check_ring(ring, ward_id)
    return ring


def parse_boundaries(text) -> list[WardBoundary]:
    """Parse a FeatureCollection of Polygon/MultiPolygon ward features."""
    try:
        doc = json.loads(_as_text(text))
    except json.JSONDecodeError as e:
        raise FormatError(f"boundaries: invalid JSON ({e})") from None
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise FormatError("boundaries: expected a FeatureCollection")
    crs = doc.get("crs")
    if crs is not None:
        name = (crs.get("properties") or {}).get("name") if isinstance(crs, dict) else None
        if name not in WGS84_CRS_NAMES:
            raise FormatError(f"boundaries: unsupported crs {name!r}; only WGS84 is accepted")
    wards: list[WardBoundary] = []
    seen: set[str] = set()
    for i, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        ward_id, name = props.get("wardId"), props.get("name")
        if not isinstance(ward_id, str) or not isinstance(name, str):
            raise FormatError(f"feature {i}: properties need string 'wardId' and 'name'")
        if ward_id in seen:
            raise DuplicateIdError(f"duplicate wardId {ward_id!r}")
        seen.add(ward_id)
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        if gtype == "Polygon":
            polys = [geom.get("coordinates")]
        elif gtype == "MultiPolygon":
            polys = geom.get("coordinates")
        else:
            raise FormatError(f"ward {ward_id}: unsupported geometry type {gtype!r}")
        if not polys:
            raise GeometryError(f"ward {ward_id}: empty geometry")
        for part, rings in enumerate(polys):
            if not rings:
                raise GeometryError(f"ward {ward_id}: polygon without rings")
            ext = _ring_from_json(rings[0], ward_id)
            holes = tuple(_ring_from_json(h, ward_id) for h in rings[1:])
            wards.append(WardBoundary(ward_id, name, ext, holes, part))
    return wards


def boundaries_to_geojson(wards: Sequence[WardBoundary]) -> str:
    grouped: dict[str, list[WardBoundary]] = {}
    for w in wards:
        grouped.setdefault(w.ward_id, []).append(w)
    features = []
    for ward_id, parts in grouped.items():
        polys = [[[list(v) for v in ring] for ring in p.rings] for p in parts]
        geom = ({"type": "Polygon", "coordinates": polys[0]} if len(polys) == 1
                else {"type": "MultiPolygon", "coordinates": polys})
        features.append({
            "type": "Feature",
            "properties": {"wardId": ward_id, "name": parts[0].name},
            "geometry": geom,
        })
    return json.dumps({"type": "FeatureCollection", "features": features})


def ward_ids(wards: Sequence[WardBoundary]) -> list[str]:
    return sorted({w.ward_id for w in wards})


def ward_centroids(wards: Sequence[WardBoundary]) -> dict[str, tuple[float, float]]:
    """Exterior-ring centroid per ward; multi-part wards use the area-weighted mean."""
    acc: dict[str, list[float]] = {}
    for w in wards:
        a = abs(geometry.signed_area(w.exterior))
        cx, cy = geometry.ring_centroid(w.exterior)
        s = acc.setdefault(w.ward_id, [0.0, 0.0, 0.0])
        s[0] += a * cx
        s[1] += a * cy
        s[2] += a
    return {k: (v[0] / v[2], v[1] / v[2]) for k, v in sorted(acc.items())}


def point_in_polygon(p: tuple[float, float], b: WardBoundary) -> bool:
    """Boundary-inclusive containment of one point in one ward polygon."""
    return bool(b.contains(p[0], p[1])[0])


@dataclass
class WardAssignment:
    by_ward: dict[str, list[Poi]]
    unassigned: list[Poi] = field(default_factory=list)

    @property
    def n_assigned(self) -> int:
        return sum(len(v) for v in self.by_ward.values())

    def to_json(self) -> str:
        return json.dumps({
            "wards": {k: [p.to_dict() for p in v] for k, v in self.by_ward.items()},
            "unassigned": [p.to_dict() for p in self.unassigned],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "WardAssignment":
        d = json.loads(text)
        return cls({k: [Poi.from_dict(p) for p in v] for k, v in sorted(d["wards"].items())},
                   [Poi.from_dict(p) for p in d["unassigned"]])


def _containing_ward(wards: Sequence[WardBoundary], lon: np.ndarray, lat: np.ndarray) -> np.ndarray:
    """Index into ``ward_ids(wards)`` of the containing ward per point, -1 if none."""
    ids = ward_ids(wards)
    pos = {w: i for i, w in enumerate(ids)}
    owner = np.full(lon.shape, -1, dtype=np.int64)
    # sorted by id so the first match is the lexicographically smallest ward
    for w in sorted(wards, key=lambda b: (b.ward_id, b.part)):
        x0, y0, x1, y1 = w.bbox
        cand = np.flatnonzero((owner < 0) & (lon >= x0) & (lon <= x1) & (lat >= y0) & (lat <= y1))
        if cand.size == 0:
            continue
        hit = w.contains(lon[cand], lat[cand])
        owner[cand[hit]] = pos[w.ward_id]
    return owner


def assign_pois(pois: Sequence[Poi], wards: Sequence[WardBoundary]) -> WardAssignment:
    """Assign every POI to its containing ward, or to ``unassigned``.

    Points on shared edges or in overlapping wards go to the smallest wardId.
    """
    ids = ward_ids(wards)
    lon = np.array([p.lon for p in pois], dtype=float)
    lat = np.array([p.lat for p in pois], dtype=float)
    owner = _containing_ward(wards, lon, lat)
    by_ward: dict[str, list[Poi]] = {w: [] for w in ids}
    unassigned = []
    for p, o in zip(pois, owner):
        if o < 0:
            unassigned.append(p)
        else:
            by_ward[ids[o]].append(p)
    return WardAssignment(by_ward, unassigned)


@dataclass(frozen=True)
class AreaScore:
    area_id: str
    score: float
    ward_id: str | None = None


def parse_scores(text, *, max_bad_rows: float = 0.05, errors: list | None = None) -> list[AreaScore]:
    """Parse ``areaId,score[,wardId]`` rows; non-finite scores are row errors."""
    header, idx, reader = _read_table(text, ["areaId", "score"])
    ward_col = header.index("wardId") if "wardId" in header else None
    out, bad, total = [], [], 0
    for row in reader:
        if not row:
            continue
        total += 1
        line = reader.line_num
        try:
            if len(row) <= max(idx.values()):
                raise RowError(line, "too few fields")
            try:
                score = float(row[idx["score"]])
            except ValueError:
                raise RowError(line, f"non-numeric score {row[idx['score']]!r}") from None
            if not math.isfinite(score):
                raise RowError(line, "non-finite score")
            ward = None
            if ward_col is not None and ward_col < len(row) and row[ward_col].strip():
                ward = row[ward_col].strip()
            out.append(AreaScore(row[idx["areaId"]].strip(), score, ward))
        except RowError as e:
            bad.append(e)
    _enforce_bad_rows(bad, total, max_bad_rows, errors)
    return out


def serialize_scores(scores: Iterable[AreaScore]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["areaId", "score", "wardId"])
    for s in scores:
        w.writerow([s.area_id, repr(s.score), s.ward_id or ""])
    return out.getvalue()


def parse_centroids(text) -> dict[str, tuple[float, float]]:
    _, idx, reader = _read_table(text, ["areaId", "lon", "lat"])
    out = {}
    for row in reader:
        if not row:
            continue
        line = reader.line_num
        lon = _parse_coord(row[idx["lon"]], "longitude", 180.0, line)
        lat = _parse_coord(row[idx["lat"]], "latitude", 90.0, line)
        out[row[idx["areaId"]].strip()] = (lon, lat)
    return out


@dataclass(frozen=True)
class WardScore:
    ward_id: str
    score: float
    member_count: int
    member_std: float

    @property
    def consistent(self) -> bool:
        """Member spread is smaller than the ward mean's magnitude."""
        return self.member_std < abs(self.score)


@dataclass
class ScoreAggregation:
    scores: list[WardScore]
    empty_wards: list[str]

    def by_ward(self) -> dict[str, float]:
        return {s.ward_id: s.score for s in self.scores}


def aggregate_scores(
    scores: Sequence[AreaScore],
    wards: Sequence[WardBoundary],
    centroids: Mapping[str, tuple[float, float]] | None = None,
) -> ScoreAggregation:
    """Average area scores up to wards.

    An explicit ``ward_id`` on the area wins; otherwise the area's centroid is
    located by point-in-polygon. Areas resolvable by neither raise
    :class:`UnresolvedAreaError`.
    """
    ids = ward_ids(wards)
    known = set(ids)
    members: dict[str, list[float]] = {w: [] for w in ids}
    unresolved = []
    pending = []
    for s in scores:
        if s.ward_id is not None and s.ward_id in known:
            members[s.ward_id].append(s.score)
        elif s.ward_id is None and centroids is not None and s.area_id in centroids:
            pending.append(s)
        else:
            unresolved.append(s.area_id)
    if pending:
        lon = np.array([centroids[s.area_id][0] for s in pending])
        lat = np.array([centroids[s.area_id][1] for s in pending])
        owner = _containing_ward(wards, lon, lat)
        for s, o in zip(pending, owner):
            if o < 0:
                unresolved.append(s.area_id)
            else:
                members[ids[o]].append(s.score)
    if unresolved:
        raise UnresolvedAreaError(unresolved)
    out, empty = [], []
    for w in ids:
        vals = members[w]
        if not vals:
            empty.append(w)
            continue
        arr = np.asarray(vals, dtype=float)
        out.append(WardScore(w, float(arr.mean()), len(vals), float(arr.std())))
    return ScoreAggregation(out, empty)
