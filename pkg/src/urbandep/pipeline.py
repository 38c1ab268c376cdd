"""End-to-end pipeline: ingest -> profile -> correlate -> classify -> report.

Every artifact is rendered in memory first and written only once its
command has succeeded, so a failing run leaves no partial outputs behind.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import json
import logging
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml

from urbandep import classify, ingest, profile, reports, spatstat
from urbandep.errors import ConfigError, DegeneracyError, UrbandepError
from urbandep.ingest import PoiFormat, Source

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PoiSourceConfig:
    path: Path
    columns: PoiFormat = PoiFormat()


@dataclass
class PipelineConfig:
    poi_files: dict[str, PoiSourceConfig]
    boundaries: Path
    scores: Path
    centroids: Path | None = None
    themes: Path | None = None
    selection: spatstat.SelectionConfig = spatstat.SelectionConfig()
    bin_count: int = 10
    train_fraction: float = 0.25
    seed: int = 0
    fdr: str = "bh"
    knn: int = 8
    permutations: int = 999
    stratified: bool = False
    max_bad_rows: float = 0.05
    # execution-only settings, excluded from the config hash
    workers: int = 1
    output: Path | None = None

    def input_paths(self) -> list[Path]:
        paths = [s.path for s in self.poi_files.values()] + [self.boundaries, self.scores]
        return paths + [p for p in (self.centroids, self.themes) if p is not None]

    def hash(self) -> str:
        """SHA-256 over analysis settings and input file contents."""
        h = hashlib.sha256()
        settings = {
            "poi_files": {k: asdict(v.columns) for k, v in sorted(self.poi_files.items())},
            "selection": asdict(self.selection),
            "bin_count": self.bin_count,
            "train_fraction": self.train_fraction,
            "seed": self.seed,
            "fdr": self.fdr,
            "knn": self.knn,
            "permutations": self.permutations,
            "stratified": self.stratified,
            "max_bad_rows": self.max_bad_rows,
        }
        h.update(json.dumps(settings, sort_keys=True).encode())
        for role, p in [*((f"poi:{k}", v.path) for k, v in sorted(self.poi_files.items())),
                        ("boundaries", self.boundaries), ("scores", self.scores),
                        ("centroids", self.centroids), ("themes", self.themes)]:
            h.update(role.encode())
            if p is not None:
                h.update(hashlib.sha256(Path(p).read_bytes()).digest())
        return h.hexdigest()


SELECTION_KEYS = {"alpha", "min_abs_r", "bands", "max_q"}


def load_config(path, overrides: Mapping | None = None) -> PipelineConfig:
    """Read a YAML/JSON pipeline config; relative paths resolve against its directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML ({e})") from None
    raw = {**raw, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    return config_from_dict(raw, path.parent)


def config_from_dict(raw: Mapping, base: Path) -> PipelineConfig:
    raw = dict(raw)

    def resolve(p):
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else base / p

    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        sources = {}
        for name, spec in (raw.pop("poi_files", None) or {}).items():
            Source(name)
            if isinstance(spec, (str, Path)):
                spec = {"path": spec}
            sources[name] = PoiSourceConfig(resolve(spec["path"]),
                                            PoiFormat.from_mapping(spec.get("columns") or {}))
        if not sources:
            raise ConfigError("config needs at least one entry under poi_files")
        sel = raw.pop("selection", None) or {}
        if set(sel) - SELECTION_KEYS:
            raise ConfigError(f"unknown selection keys: {sorted(set(sel) - SELECTION_KEYS)}")
        cfg = PipelineConfig(
            poi_files=sources,
            boundaries=resolve(raw.pop("boundaries")),
            scores=resolve(raw.pop("scores")),
            centroids=resolve(raw.pop("centroids", None)),
            themes=resolve(raw.pop("themes", None)),
            selection=spatstat.SelectionConfig(**sel),
            output=resolve(raw.pop("output", None)),
            **raw,
        )
    except KeyError as e:
        raise ConfigError(f"missing config key {e}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config: {e}") from None
    for p in cfg.input_paths():
        if not Path(p).is_file():
            raise ConfigError(f"input file not found: {p}")
    if cfg.fdr not in ("bh", "storey"):
        raise ConfigError(f"fdr must be 'bh' or 'storey', got {cfg.fdr!r}")
    if not 0 < cfg.train_fraction < 1:
        raise ConfigError("train_fraction must lie in (0, 1)")
    if cfg.bin_count < 2:
        raise ConfigError("bin_count must be at least 2")
    return cfg


@contextlib.contextmanager
def stage(name: str):
    """Tag any pipeline error raised inside with the stage name."""
    try:
        yield
    except UrbandepError as e:
        if not getattr(e, "stage", None):
            e.stage = name
        raise


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# -- stages ----------------------------------------------------------------

@dataclass
class Ingested:
    pois: list
    wards: list
    assignment: ingest.WardAssignment
    scores: ingest.ScoreAggregation
    centroids: dict[str, tuple[float, float]]
    row_errors: dict[str, list[str]]


def run_ingest(cfg: PipelineConfig, assignment: ingest.WardAssignment | None = None) -> Ingested:
    """Parse every input; a previously cached ``assignment`` skips the spatial join."""
    with stage("ingest"):
        pois, row_errors = [], {}
        for name, src in sorted(cfg.poi_files.items()):
            errs = []
            pois += ingest.parse_poi_table(Path(src.path).read_text(encoding="utf-8"), name,
                                           src.columns, max_bad_rows=cfg.max_bad_rows, errors=errs)
            row_errors[name] = [str(e) for e in errs]
        wards = ingest.parse_boundaries(Path(cfg.boundaries).read_text(encoding="utf-8"))
        errs = []
        area_scores = ingest.parse_scores(Path(cfg.scores).read_text(encoding="utf-8"),
                                          max_bad_rows=cfg.max_bad_rows, errors=errs)
        row_errors["scores"] = [str(e) for e in errs]
        lookup = None
        if cfg.centroids is not None:
            lookup = ingest.parse_centroids(Path(cfg.centroids).read_text(encoding="utf-8"))
        return build_ingested(pois, wards, area_scores, lookup, row_errors, assignment)


def build_ingested(pois, wards, area_scores, centroid_lookup=None, row_errors=None,
                   assignment=None) -> Ingested:
    """Spatial join and score aggregation over already parsed records."""
    if assignment is None:
        assignment = ingest.assign_pois(pois, wards)
    aggregation = ingest.aggregate_scores(area_scores, wards, centroid_lookup)
    return Ingested(pois, wards, assignment, aggregation, ingest.ward_centroids(wards), row_errors or {})


@dataclass
class Profiled:
    oa: dict[str, profile.OaMatrix]
    baseline: list[profile.BaselineFeatures]


def run_profile(cfg: PipelineConfig, ing: Ingested) -> Profiled:
    with stage("profile"):
        oa = {}
        for name in sorted(cfg.poi_files):
            oa[name] = profile.offering_advantage(profile.count_matrix(ing.assignment, name))
        return Profiled(oa, profile.baseline_features(ing.assignment))


@dataclass
class Correlated:
    selections: dict[str, spatstat.Selection]
    moran: dict


def _moran_entry(values: Mapping[str, float], centroids, cfg: PipelineConfig, seed: int) -> dict:
    f = spatstat.SpatialField.from_mapping(values, centroids)
    try:
        m = spatstat.morans_i(f, min(cfg.knn, len(f) - 1), cfg.permutations, seed)
    except DegeneracyError as e:
        return {"error": str(e)}
    return {"I": m.I, "expected": m.expected, "pPerm": m.p_perm}


def run_correlate(cfg: PipelineConfig, ing: Ingested, prof: Profiled) -> Correlated:
    with stage("correlate"):
        imd = ing.scores.by_ward()
        selections = {}
        for name, oa in sorted(prof.oa.items()):
            selections[name] = spatstat.select_features(
                oa, imd, ing.centroids, cfg.selection, source=name, fdr=cfg.fdr, workers=cfg.workers)
        moran = {"imd": _moran_entry(imd, ing.centroids, cfg, derive_seed(cfg.seed, 0, 0)), "categories": {}}
        for si, (name, sel) in enumerate(sorted(selections.items()), start=1):
            oa = prof.oa[name]
            entries = {}
            for s in sel.selected:
                j = oa.categories.index(s.category)
                values = {w: float(v) for w, v in zip(oa.ward_ids, oa.oa[:, j]) if w in imd}
                entries[s.category] = _moran_entry(values, ing.centroids, cfg, derive_seed(cfg.seed, si, j + 1))
            moran["categories"][name] = entries
        return Correlated(selections, moran)


@dataclass
class Classified:
    bin_count: int
    edges: tuple[float, ...]
    train: list[str]
    test: list[str]
    features: list[str]
    model: classify.NbModel
    report: classify.EvalReport
    baseline: classify.EvalReport


def _feature_table(prof: Profiled, features: list[str], wards: list[str]) -> np.ndarray:
    cols = []
    for feat in features:
        source, category = feat.split(":", 1)
        oa = prof.oa[source]
        pos = {w: i for i, w in enumerate(oa.ward_ids)}
        col = oa.oa[:, oa.categories.index(category)]
        cols.append([col[pos[w]] for w in wards])
    return np.array(cols, dtype=float).T


def run_classify(cfg: PipelineConfig, ing: Ingested, prof: Profiled, bin_count: int) -> Classified:
    """Train/test one deprivation classifier and the count baseline.

    Bin edges and the feature selection see training wards only.
    """
    with stage("classify"):
        imd = ing.scores.by_ward()
        usable = set(imd)
        for oa in prof.oa.values():
            usable &= set(oa.ward_ids)
        wards = sorted(usable)
        strata = None
        if cfg.stratified:
            # stratify on quantile bins of all scores; used for the partition only
            spec = classify.BinningSpec.from_scores([imd[w] for w in wards], bin_count)
            strata = classify.bin_scores([imd[w] for w in wards], spec).tolist()
        train, test = classify.split(wards, cfg.train_fraction, cfg.seed, strata)
        spec = classify.BinningSpec.from_scores([imd[w] for w in train], bin_count)
        labels = dict(zip(wards, classify.bin_scores([imd[w] for w in wards], spec).tolist()))
        train_imd = {w: imd[w] for w in train}
        features = []
        for name, oa in sorted(prof.oa.items()):
            sel = spatstat.select_features(oa, train_imd, ing.centroids, cfg.selection,
                                           source=name, fdr=cfg.fdr, workers=cfg.workers)
            features += [f"{name}:{s.category}" for s in sorted(sel.selected, key=lambda s: s.category)]
        if not features:
            raise DegeneracyError("no category passed selection on the training wards")
        classes = list(range(bin_count))
        model, report = classify.fit_and_evaluate(
            _feature_table(prof, features, train), [labels[w] for w in train],
            _feature_table(prof, features, test), [labels[w] for w in test], classes, features)
        base = {b.ward_id: b.as_row() for b in prof.baseline}
        baseline = classify.run_baseline(base, labels, train, test, classes)
        return Classified(bin_count, spec.edges, train, test, features, model, report, baseline)


def apply_saved_model(ing: Ingested, prof: Profiled, saved: Mapping) -> classify.EvalReport:
    """Score every ward with a previously saved model and its bin edges."""
    with stage("classify"):
        model = classify.NbModel.from_dict(saved["model"])
        spec = classify.BinningSpec(len(saved["edges"]) + 1, tuple(saved["edges"]))
        imd = ing.scores.by_ward()
        usable = set(imd)
        for feat in model.feature_names:
            source = feat.split(":", 1)[0]
            if source not in prof.oa:
                raise ConfigError(f"saved model needs source {source!r}, not configured")
            usable &= set(prof.oa[source].ward_ids)
        wards = sorted(usable)
        try:
            X = _feature_table(prof, model.feature_names, wards)
        except ValueError as e:
            raise ConfigError(f"saved model feature missing from data: {e}") from None
        truth = classify.bin_scores([imd[w] for w in wards], spec).tolist()
        return classify.evaluate(classify.predict_many(model, X), truth, list(range(spec.bin_count)))


# -- rendering -------------------------------------------------------------

class Outputs:
    """In-memory artifact set committed to disk in one step."""

    def __init__(self, cfg_hash: str, seed: int):
        self.meta = {"configHash": cfg_hash, "seed": seed}
        self.files: dict[str, str] = {}

    def json(self, name: str, payload: Mapping):
        self.files[name] = reports.dumps({"meta": self.meta, **payload})

    def text(self, name: str, body: str, comment: str = "#"):
        self.files[name] = f"{comment} configHash={self.meta['configHash']} seed={self.meta['seed']}\n" + body

    def commit(self, out_dir: Path):
        out_dir = Path(out_dir)
        out_dir.parent.mkdir(parents=True, exist_ok=True)
        staging = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
        try:
            for name, body in self.files.items():
                (staging / name).write_text(body, encoding="utf-8")
            out_dir.mkdir(exist_ok=True)
            for name in self.files:
                os.replace(staging / name, out_dir / name)
        finally:
            shutil.rmtree(staging, ignore_errors=True)


def render_ingest(out: Outputs, ing: Ingested):
    out.json("assignment.json", json.loads(ing.assignment.to_json()))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["wardId", "score", "memberCount", "memberStdDev", "consistent"])
    for s in ing.scores.scores:
        w.writerow([s.ward_id, repr(s.score), s.member_count, repr(s.member_std),
                    "true" if s.consistent else "false"])
    out.text("ward_scores.csv", buf.getvalue())
    out.json("ingest_diagnostics.json", ingest_diagnostics(ing))


def ingest_diagnostics(ing: Ingested) -> dict:
    return {
        "droppedRows": ing.row_errors,
        "unassignedPoiCount": len(ing.assignment.unassigned),
        "wardsWithoutScores": ing.scores.empty_wards,
        "scoreConsistency": {s.ward_id: s.consistent for s in ing.scores.scores},
    }


def render_profile(out: Outputs, prof: Profiled):
    for name, oa in prof.oa.items():
        out.text(f"oa_{name}.csv", oa.to_csv())
        out.json(f"oa_{name}.json", oa.to_dict())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["wardId", *profile.BASELINE_FEATURE_NAMES])
    for b in prof.baseline:
        w.writerow([b.ward_id, *b.as_row()])
    out.text("baseline.csv", buf.getvalue())


def render_correlate(out: Outputs, ing: Ingested, prof: Profiled, cor: Correlated):
    all_stats = [s for _, sel in sorted(cor.selections.items()) for s in sel.all]
    out.text("correlations.csv", reports.correlations_csv(all_stats))
    out.json("qvalue_quartiles.json", {
        name: spatstat.qvalue_quartiles(sel.selected) for name, sel in sorted(cor.selections.items())
    })
    out.json("correlation_strength.json", {
        name: spatstat.strength_bins(sel.selected) for name, sel in sorted(cor.selections.items())
    })
    out.json("diagnostics.json", {
        **ingest_diagnostics(ing),
        "moran": cor.moran,
        "excludedWards": {n: list(oa.excluded_wards) for n, oa in sorted(prof.oa.items())},
        "degenerateCategories": {n: [list(d) for d in sel.degenerate] for n, sel in sorted(cor.selections.items())},
        "unmatchedWards": {n: sel.unmatched_wards for n, sel in sorted(cor.selections.items())},
    })


def _delta(model: classify.EvalReport, base: classify.EvalReport) -> dict:
    def rel(a, b):
        return [None if y == 0 else float((x - y) / y * 100) for x, y in zip(a, b)]
    return {
        "precision": rel(model.precision, base.precision),
        "recall": rel(model.recall, base.recall),
        "fMeasure": rel(model.f_measure, base.f_measure),
    }


def render_classify(out: Outputs, res: Classified):
    b = res.bin_count
    out.json(f"eval_{b}bin.json", {
        "binCount": b,
        "edges": list(res.edges),
        "trainSize": len(res.train),
        "testSize": len(res.test),
        "features": res.features,
        "model": res.report.to_dict(),
        "baseline": res.baseline.to_dict(),
        "deltaPercent": _delta(res.report, res.baseline),
    })
    body = ("Offering Advantage model (relative change vs. count baseline)\n"
            + classify.format_report(res.report, res.baseline)
            + "\nCount baseline\n" + classify.format_report(res.baseline))
    out.text(f"eval_{b}bin.txt", body)
    out.json(f"model_{b}bin.json", {"edges": list(res.edges), "model": res.model.to_dict()})


def render_report(out: Outputs, cfg: PipelineConfig, ing: Ingested, prof: Profiled, cor: Correlated):
    themes = reports.ThemeMap()
    if cfg.themes is not None:
        themes = reports.ThemeMap.from_dict(yaml.safe_load(Path(cfg.themes).read_text()) or {})
    selected = [s for _, sel in sorted(cor.selections.items()) for s in sel.selected]
    out.text("themes.txt", reports.format_theme_table(reports.theme_report(selected, themes)))
    out.json("summary.json", reports.dataset_summary(ing.assignment, prof.oa, ing.scores))


def run_pipeline(cfg: PipelineConfig, out_dir, bin_counts=(10, 2)) -> Outputs:
    """Run every stage and write the full report set to ``out_dir``."""
    out = Outputs(cfg.hash(), cfg.seed)
    ing = run_ingest(cfg)
    render_ingest(out, ing)
    prof = run_profile(cfg, ing)
    render_profile(out, prof)
    cor = run_correlate(cfg, ing, prof)
    render_correlate(out, ing, prof, cor)
    for b in bin_counts:
        render_classify(out, run_classify(cfg, ing, prof, b))
    with stage("report"):
        render_report(out, cfg, ing, prof, cor)
    out.commit(out_dir)
    return out
