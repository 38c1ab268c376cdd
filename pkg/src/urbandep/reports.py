"""Report builders: correlation tables, theme tables, dataset summaries."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from urbandep.errors import ConfigError
from urbandep.spatstat import CategoryStat


@dataclass
class ThemeMap:
    themes: dict[str, list[tuple[str, str]]] = field(default_factory=dict)

    def __post_init__(self):
        owner = {}
        for theme, members in self.themes.items():
            for m in members:
                key = tuple(m)
                if key in owner:
                    raise ConfigError(f"category {key} appears in themes {owner[key]!r} and {theme!r}")
                owner[key] = theme

    @classmethod
    def from_dict(cls, d: Mapping) -> "ThemeMap":
        themes = {}
        for name, members in d.items():
            pairs = []
            for m in members:
                if isinstance(m, Mapping):
                    pairs.append((m["source"], m["category"]))
                else:
                    source, category = m
                    pairs.append((source, category))
            themes[name] = pairs
        return cls(themes)


@dataclass
class ThemedTable:
    rows: list[tuple[str, str, str, float]]  # theme, source, category, r_s
    absent: list[tuple[str, str, str]]
    unthemed: list[tuple[str, str, float]]


def theme_report(stats: Sequence[CategoryStat], themes: ThemeMap) -> ThemedTable:
    by_key = {(s.source, s.category): s for s in stats}
    rows, absent, themed = [], [], set()
    for theme, members in themes.themes.items():
        for source, category in members:
            themed.add((source, category))
            s = by_key.get((source, category))
            if s is None:
                absent.append((theme, source, category))
            else:
                rows.append((theme, source, category, s.r_s))
    unthemed = [(s.source, s.category, s.r_s) for s in stats if (s.source, s.category) not in themed]
    return ThemedTable(rows, absent, unthemed)


def format_theme_table(t: ThemedTable) -> str:
    lines = [f"{'Theme':<24}{'Source':<14}{'Category':<32}r_s"]
    last = None
    for theme, source, category, r in t.rows:
        shown = theme if theme != last else ""
        last = theme
        lines.append(f"{shown:<24}{source:<14}{category:<32}{r:+.2f}")
    if t.absent:
        lines.append("")
        lines.append("absent (theme member not among tested categories):")
        for theme, source, category in t.absent:
            lines.append(f"  {theme:<22}{source:<14}{category}")
    lines.append("")
    lines.append("unthemed:")
    for source, category, r in t.unthemed:
        lines.append(f"  {'':<22}{source:<14}{category:<32}{r:+.2f}")
    return "\n".join(lines) + "\n"


CORRELATION_COLUMNS = ("source", "category", "rS", "effectiveN", "pValue", "qValue", "n", "selected")


def correlations_csv(stats: Sequence[CategoryStat], header_comment: str | None = None) -> str:
    out = io.StringIO()
    if header_comment:
        out.write(f"# {header_comment}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CORRELATION_COLUMNS)
    for s in stats:
        w.writerow([s.source, s.category, repr(s.r_s), repr(s.effective_n), repr(s.p_value),
                    repr(s.q_value), s.n, "true" if s.selected else "false"])
    return out.getvalue()


def dataset_summary(assignment, counts: Mapping[str, object], scores) -> dict:
    """Per-source POI, check-in and category tallies plus ward coverage.

    ``counts`` maps source name to its OaMatrix (for the excluded-ward lists);
    ``scores`` is the ward score aggregation.
    """
    pois = [p for v in assignment.by_ward.values() for p in v] + list(assignment.unassigned)
    blocks = {}
    for source in sorted({p.source.value for p in pois}):
        mine = [p for p in pois if p.source.value == source]
        freq = Counter(p.category for p in mine)
        table = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
        oa = counts.get(source)
        blocks[source] = {
            "poiCount": len(mine),
            "assignedPoiCount": sum(1 for w in assignment.by_ward.values() for p in w
                                    if p.source.value == source),
            "checkinTotal": sum(p.checkins or 0 for p in mine),
            "categoryCount": len(freq),
            "categoryFrequency": [{"category": c, "count": n} for c, n in table],
            "excludedWards": list(oa.excluded_wards) if oa is not None else [],
        }
    return {
        "sources": blocks,
        "wardCount": len(assignment.by_ward),
        "unassignedPoiCount": len(assignment.unassigned),
        "scoredWardCount": len(scores.scores),
        "wardsWithoutScores": list(scores.empty_wards),
        "inconsistentWards": [s.ward_id for s in scores.scores if not s.consistent],
    }


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"
