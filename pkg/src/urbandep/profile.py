"""Ward x category count matrices and the Offering Advantage profile.

Offering Advantage is a revealed-comparative-advantage ratio: a category's
share of a ward's POIs divided by its share of all POIs in the city. A value
of 1 means the ward offers the category at the city-average rate.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from urbandep.errors import EmptyInputError
from urbandep.ingest import Source, WardAssignment


class SourceFilter(str, Enum):
    VENUE = "venueService"
    MAP = "mapService"
    BOTH = "both"

    def accepts(self, source: Source) -> bool:
        return self is SourceFilter.BOTH or self.value == source.value


@dataclass(frozen=True)
class CountMatrix:
    ward_ids: tuple[str, ...]
    categories: tuple[str, ...]
    counts: np.ndarray  # (wards, categories), int64

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def grand_total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class OaMatrix:
    ward_ids: tuple[str, ...]
    categories: tuple[str, ...]
    counts: np.ndarray
    oa: np.ndarray
    excluded_wards: tuple[str, ...] = ()

    def column(self, category: str) -> np.ndarray:
        return self.oa[:, self.categories.index(category)]

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["wardId", *self.categories])
        for ward, row in zip(self.ward_ids, self.oa):
            w.writerow([ward, *(repr(float(v)) for v in row)])
        return out.getvalue()

    def to_dict(self) -> dict:
        return {
            "wardIds": list(self.ward_ids),
            "categories": list(self.categories),
            "oa": self.oa.tolist(),
            "excludedWards": list(self.excluded_wards),
        }


@dataclass(frozen=True)
class BaselineFeatures:
    ward_id: str
    fsq_checkins: int = 0
    fsq_poi_count: int = 0
    osm_poi_count: int = 0

    def as_row(self) -> list[int]:
        return [self.fsq_checkins, self.fsq_poi_count, self.osm_poi_count]


BASELINE_FEATURE_NAMES = ("fsqCheckins", "fsqPoiCount", "osmPoiCount")


def count_matrix(assignment: WardAssignment, source_filter: SourceFilter | str = SourceFilter.BOTH) -> CountMatrix:
    """Tally POIs per (ward, category), keeping only POIs from the filtered source.

    Wards with no matching POIs keep an all-zero row; categories with no
    matching POIs are not materialized.
    """
    source_filter = SourceFilter(source_filter)
    ward_ids = tuple(sorted(assignment.by_ward))
    cats = sorted({p.category for w in ward_ids for p in assignment.by_ward[w]
                   if source_filter.accepts(p.source)})
    if not cats:
        raise EmptyInputError(f"no assigned POIs for source filter {source_filter.value}")
    col = {c: j for j, c in enumerate(cats)}
    counts = np.zeros((len(ward_ids), len(cats)), dtype=np.int64)
    for i, w in enumerate(ward_ids):
        for p in assignment.by_ward[w]:
            if source_filter.accepts(p.source):
                counts[i, col[p.category]] += 1
    return CountMatrix(ward_ids, tuple(cats), counts)


def offering_advantage(m: CountMatrix) -> OaMatrix:
    rows = m.row_totals
    keep = rows > 0
    counts = m.counts[keep]
    # column totals over all wards: excluded wards contribute nothing anyway
    share_in_ward = counts / rows[keep][:, None]
    city_share = m.col_totals / m.grand_total
    # a category absent from the whole matrix has a zero numerator everywhere
    with np.errstate(invalid="ignore", divide="ignore"):
        oa = np.where(city_share[None, :] > 0, share_in_ward / np.where(city_share > 0, city_share, 1.0), 0.0)
    excluded = tuple(w for w, k in zip(m.ward_ids, keep) if not k)
    kept = tuple(w for w, k in zip(m.ward_ids, keep) if k)
    return OaMatrix(kept, m.categories, counts, oa, excluded)


def baseline_features(assignment: WardAssignment) -> list[BaselineFeatures]:
    out = []
    for w in sorted(assignment.by_ward):
        checkins = fsq = osm = 0
        for p in assignment.by_ward[w]:
            if p.source is Source.VENUE:
                fsq += 1
                checkins += p.checkins or 0
            else:
                osm += 1
        out.append(BaselineFeatures(w, checkins, fsq, osm))
    return out


def oa_json(oa: OaMatrix, meta: dict | None = None) -> str:
    d = oa.to_dict()
    if meta:
        d = {"meta": meta, **d}
    return json.dumps(d, indent=1)
