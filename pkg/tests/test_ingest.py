import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urbandep.errors import (
    DataError,
    DuplicateIdError,
    FormatError,
    GeometryError,
    UnresolvedAreaError,
)
from urbandep.ingest import (
    AreaScore,
    BadRowsError,
    Poi,
    PoiFormat,
    Source,
    WardBoundary,
    aggregate_scores,
    assign_pois,
    parse_boundaries,
    parse_centroids,
    parse_poi_table,
    parse_scores,
    point_in_polygon,
    serialize_poi_table,
)

SQUARE = ((0, 0), (1, 0), (1, 1), (0, 1), (0, 0))
FMT = PoiFormat(category="cat")


def square(ward_id, x0=0.0, y0=0.0, size=1.0):
    ring = ((x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size), (x0, y0))
    return WardBoundary(ward_id, ward_id, ring)


def feature(ward_id, coords, gtype="Polygon"):
    return {"type": "Feature", "properties": {"wardId": ward_id, "name": f"n{ward_id}"},
            "geometry": {"type": gtype, "coordinates": coords}}


def collection(*features, **extra):
    return json.dumps({"type": "FeatureCollection", "features": list(features), **extra})


# -- POI tables -------------------------------------------------------------

def test_parse_poi_row_maps_fields():
    pois = parse_poi_table("id,lon,lat,cat\nv1,-0.12,51.50,Pub\n", Source.VENUE, FMT)
    assert pois == [Poi("v1", -0.12, 51.50, "Pub", Source.VENUE, None)]


def test_header_only_is_empty():
    assert parse_poi_table("id,lon,lat,cat\n", "venueService", FMT) == []


def test_out_of_range_latitude_dropped_with_row_error():
    rows = "".join(f"v{i},0.1,51.0,Pub\n" for i in range(30))
    errors = []
    pois = parse_poi_table("id,lon,lat,cat\n" + rows + "bad,0.1,123.0,Pub\n", "venueService", FMT,
                           errors=errors)
    assert len(pois) == 30
    assert len(errors) == 1
    assert errors[0].line == 32
    assert "latitude out of range" in str(errors[0])


def test_too_many_bad_rows_aborts():
    text = "id,lon,lat,cat\nv1,0,0,Pub\nv2,abc,0,Pub\n"
    with pytest.raises(BadRowsError):
        parse_poi_table(text, "venueService", FMT)
    # a looser limit keeps the good row
    assert len(parse_poi_table(text, "venueService", FMT, max_bad_rows=0.5)) == 1


def test_missing_column_named():
    with pytest.raises(FormatError, match="'cat'"):
        parse_poi_table("id,lon,lat,category\n", "venueService", FMT)


def test_categories_trimmed_and_quoted():
    text = 'id,lon,lat,cat,n\nv1,1,2,"  Fish, Chips ",7\nv2,1,2,Pub,\n'
    pois = parse_poi_table(text, "venueService", PoiFormat(category="cat", checkins="n"))
    assert pois[0].category == "Fish, Chips"
    assert pois[0].checkins == 7
    assert pois[1].checkins is None


poi_strategy = st.builds(
    Poi,
    id=st.text("abcdefghij0123456789,\" ", min_size=1, max_size=8),
    lon=st.floats(-180, 180, allow_nan=False),
    lat=st.floats(-90, 90, allow_nan=False),
    category=st.text("abcXYZ ,&'", min_size=1, max_size=10).map(str.strip).filter(bool),
    source=st.just(Source.VENUE),
    checkins=st.one_of(st.none(), st.integers(0, 10**6)),
)


@settings(max_examples=100, deadline=None)
@given(st.lists(poi_strategy, max_size=20))
def test_poi_table_round_trip(pois):
    fmt = PoiFormat(checkins="checkins")
    once = parse_poi_table(serialize_poi_table(pois, fmt), Source.VENUE, fmt)
    twice = parse_poi_table(serialize_poi_table(once, fmt), Source.VENUE, fmt)
    assert once == pois
    assert twice == once


# -- boundaries -------------------------------------------------------------

def test_parse_square_feature():
    (w,) = parse_boundaries(collection(feature("W1", [[list(p) for p in SQUARE]])))
    assert w.ward_id == "W1"
    assert len(w.exterior) == 5


def test_unclosed_ring_rejected():
    ring = [[0, 0], [1, 0], [1, 1], [0, 1]]
    with pytest.raises(GeometryError):
        parse_boundaries(collection(feature("W1", [ring + [[0, 0.5]]])))


def test_duplicate_ward_id_rejected():
    ring = [[list(p) for p in SQUARE]]
    with pytest.raises(DuplicateIdError):
        parse_boundaries(collection(feature("W1", ring), feature("W1", ring)))


def test_multipolygon_parts_share_ward_id():
    a = [[list(p) for p in SQUARE]]
    b = [[[x + 5, y] for x, y in SQUARE]]
    parts = parse_boundaries(collection(feature("W1", [a, b], "MultiPolygon")))
    assert [(p.ward_id, p.part) for p in parts] == [("W1", 0), ("W1", 1)]
    assignment = assign_pois([Poi("p", 5.5, 0.5, "A", Source.MAP)], parts)
    assert [p.id for p in assignment.by_ward["W1"]] == ["p"]


def test_non_wgs84_crs_rejected():
    crs = {"type": "name", "properties": {"name": "EPSG:27700"}}
    with pytest.raises(FormatError, match="crs"):
        parse_boundaries(collection(feature("W1", [[list(p) for p in SQUARE]]), crs=crs))
    ok = {"type": "name", "properties": {"name": "urn:ogc:def:crs:OGC:1.3:CRS84"}}
    assert len(parse_boundaries(collection(feature("W1", [[list(p) for p in SQUARE]]), crs=ok))) == 1


def test_unsupported_geometry_type():
    with pytest.raises(FormatError):
        parse_boundaries(collection(feature("W1", [0, 0], "Point")))


# -- containment ------------------------------------------------------------

L_SHAPE = WardBoundary("L", "L", ((0, 0), (1, 0), (1, 0.5), (0.5, 0.5), (0.5, 1), (0, 1), (0, 0)))


@pytest.mark.parametrize("p, expected", [
    ((0.5, 0.5), True),
    ((2, 2), False),
    ((1, 0.5), True),   # on edge
    ((0, 0), True),     # vertex
])
def test_point_in_unit_square(p, expected):
    assert point_in_polygon(p, square("W1")) is expected


def test_concave_polygon():
    assert point_in_polygon((0.5, 0.25), L_SHAPE)
    assert not point_in_polygon((0.75, 0.75), L_SHAPE)


def test_hole_excludes_interior_but_keeps_its_edge():
    hole = ((0.25, 0.25), (0.75, 0.25), (0.75, 0.75), (0.25, 0.75), (0.25, 0.25))
    w = WardBoundary("H", "H", SQUARE, (hole,))
    assert not point_in_polygon((0.5, 0.5), w)
    assert point_in_polygon((0.25, 0.5), w)
    assert point_in_polygon((0.1, 0.1), w)


def test_assign_inside_and_outside():
    p_in, p_out = Poi("a", 0.5, 0.5, "A", Source.VENUE), Poi("b", 5, 5, "A", Source.VENUE)
    a = assign_pois([p_in, p_out], [square("W1")])
    assert a.by_ward == {"W1": [p_in]}
    assert a.unassigned == [p_out]


def test_shared_edge_goes_to_smallest_ward_id():
    p = Poi("e", 1.0, 0.5, "A", Source.VENUE)
    a = assign_pois([p], [square("W2", 1.0), square("W1")])
    assert a.by_ward["W1"] == [p]
    assert a.by_ward["W2"] == []


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 4), st.floats(-1, 4)), max_size=60), st.integers(0, 10**6))
def test_assignment_conserves_pois(points, seed):
    rng = np.random.default_rng(seed)
    wards = [square(f"W{i}", *rng.uniform(0, 3, 2), rng.uniform(0.2, 1.5)) for i in range(4)]
    pois = [Poi(str(i), x, y, "A", Source.VENUE) for i, (x, y) in enumerate(points)]
    a = assign_pois(pois, wards)
    assert a.n_assigned + len(a.unassigned) == len(pois)
    seen = sorted(p.id for v in a.by_ward.values() for p in v) + sorted(p.id for p in a.unassigned)
    assert sorted(seen) == sorted(p.id for p in pois)


# -- scores -----------------------------------------------------------------

def test_parse_scores_rows():
    s = parse_scores("areaId,score,wardId\nE01008881,34.2,W1\nE01008882,10,\n")
    assert s == [AreaScore("E01008881", 34.2, "W1"), AreaScore("E01008882", 10.0, None)]


def test_nan_score_is_row_error():
    errors = []
    with pytest.raises(BadRowsError):
        parse_scores("areaId,score\nE0100000,NaN\n", errors=errors)
    assert "non-finite" in str(errors[0])


def test_aggregate_mean_and_population_std():
    wards = [square("W1"), square("W9", 3)]
    agg = aggregate_scores([AreaScore("a", 10.0, "W1"), AreaScore("b", 20.0, "W1")], wards)
    (ws,) = agg.scores
    assert (ws.ward_id, ws.score, ws.member_count, ws.member_std) == ("W1", 15.0, 2, 5.0)
    assert ws.consistent
    assert agg.empty_wards == ["W9"]


def test_aggregate_single_member():
    (ws,) = aggregate_scores([AreaScore("a", 34.2, "W1")], [square("W1")]).scores
    assert ws.score == 34.2 and ws.member_std == 0.0


def test_aggregate_by_centroid_lookup():
    cents = parse_centroids("areaId,lon,lat\na,0.5,0.5\nb,1.5,0.5\n")
    agg = aggregate_scores([AreaScore("a", 4.0), AreaScore("b", 8.0)],
                           [square("W1"), square("W2", 1.0)], cents)
    assert [(s.ward_id, s.score) for s in agg.scores] == [("W1", 4.0), ("W2", 8.0)]


def test_unresolved_areas_listed():
    with pytest.raises(UnresolvedAreaError) as exc:
        aggregate_scores([AreaScore("a", 1.0), AreaScore("b", 1.0, "nope")], [square("W1")])
    assert exc.value.area_ids == ["a", "b"]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=12))
def test_member_std_bounded_by_range(values):
    scores = [AreaScore(str(i), v, "W1") for i, v in enumerate(values)]
    (ws,) = aggregate_scores(scores, [square("W1")]).scores
    assert ws.member_std <= max(values) - min(values) + 1e-9


def test_poi_invariants():
    with pytest.raises(DataError):
        Poi("x", 0, 0, " ", Source.VENUE)
    with pytest.raises(DataError):
        Poi("x", 200, 0, "A", Source.VENUE)
    with pytest.raises(DataError):
        Poi("x", 0, 0, "A", Source.VENUE, -1)
