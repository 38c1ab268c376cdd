"""Command line entry point.

Subcommands mirror pipeline stages; each one recomputes whatever upstream
state it needs from the config (or the ``assignment.json`` cache written by
``ingest``) and writes only its own artifacts.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from urbandep import pipeline, synth
from urbandep.errors import ConfigError, UrbandepError
from urbandep.ingest import WardAssignment

log = logging.getLogger("urbandep")


def _common(p: argparse.ArgumentParser):
    p.add_argument("config", help="pipeline config (YAML or JSON)")
    p.add_argument("--out", help="output directory (overrides config 'output')")
    p.add_argument("--seed", type=int)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--bins", type=int, dest="bin_count")
    p.add_argument("--alpha", type=float)
    p.add_argument("--min-abs-r", type=float)
    p.add_argument("--max-q", type=float)
    p.add_argument("--fdr", choices=["bh", "storey"])
    p.add_argument("--bands", type=int)
    p.add_argument("--knn", type=int)
    p.add_argument("--permutations", type=int)
    p.add_argument("--stratified", action="store_true", default=None)
    p.add_argument("--max-bad-rows", type=float)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urbandep", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("ingest", "validate inputs, spatial join, write assignment cache"),
        ("profile", "Offering Advantage matrices and baseline counts"),
        ("correlate", "corrected correlations, q-values, diagnostics"),
        ("classify", "train and evaluate the deprivation classifier"),
        ("report", "theme table and dataset summary"),
        ("run", "all stages"),
    ]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name == "classify":
            p.add_argument("--load-model", help="apply a saved model_<B>bin.json instead of training")
    s = sub.add_parser("synth", help="generate a synthetic fixture city")
    s.add_argument("--config", help="YAML/JSON with SynthConfig fields")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--grid", help="ROWSxCOLS")
    s.add_argument("--categories", type=int)
    s.add_argument("--planted", help="comma list of index:rho, e.g. 3:0.4,6:-0.4")
    s.add_argument("--tail", type=float)
    s.add_argument("--autocorr", type=float)
    s.add_argument("--budget", type=int)
    return parser


SELECTION_FLAGS = {"alpha": "alpha", "min_abs_r": "min_abs_r", "max_q": "max_q", "bands": "bands"}
PLAIN_FLAGS = ("seed", "train_fraction", "bin_count", "fdr", "knn", "permutations",
               "stratified", "max_bad_rows", "workers")


def load_pipeline_config(args) -> pipeline.PipelineConfig:
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML ({e})") from None
    for k in PLAIN_FLAGS:
        v = getattr(args, k, None)
        if v is not None:
            raw[k] = v
    sel = dict(raw.get("selection") or {})
    for flag, key in SELECTION_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            sel[key] = v
    if sel:
        raw["selection"] = sel
    cfg = pipeline.config_from_dict(raw, path.parent)
    if args.out:
        cfg.output = Path(args.out)
    if cfg.output is None:
        raise ConfigError("no output directory: pass --out or set 'output' in the config")
    return cfg


def _ingested(cfg: pipeline.PipelineConfig, cfg_hash: str) -> pipeline.Ingested:
    cache = Path(cfg.output) / "assignment.json"
    cached = None
    if cache.is_file():
        doc = json.loads(cache.read_text())
        if doc.get("meta", {}).get("configHash") == cfg_hash:
            log.info("using assignment cache %s", cache)
            cached = WardAssignment.from_json(json.dumps(doc))
    return pipeline.run_ingest(cfg, cached)


def run_command(args) -> int:
    if args.command == "synth":
        return run_synth(args)
    cfg = load_pipeline_config(args)
    h = cfg.hash()
    out = pipeline.Outputs(h, cfg.seed)
    if args.command == "run":
        pipeline.run_pipeline(cfg, cfg.output)
        return 0
    if args.command == "ingest":
        pipeline.render_ingest(out, pipeline.run_ingest(cfg))
        out.commit(cfg.output)
        return 0
    ing = _ingested(cfg, h)
    prof = pipeline.run_profile(cfg, ing)
    if args.command == "profile":
        pipeline.render_profile(out, prof)
    elif args.command == "correlate":
        pipeline.render_correlate(out, ing, prof, pipeline.run_correlate(cfg, ing, prof))
    elif args.command == "classify":
        if args.load_model:
            saved = json.loads(Path(args.load_model).read_text())
            report = pipeline.apply_saved_model(ing, prof, saved)
            out.json(f"eval_{len(saved['edges']) + 1}bin_reuse.json",
                     {"modelFile": Path(args.load_model).name, "model": report.to_dict()})
        else:
            pipeline.render_classify(out, pipeline.run_classify(cfg, ing, prof, cfg.bin_count))
    elif args.command == "report":
        cor = pipeline.run_correlate(cfg, ing, prof)
        with pipeline.stage("report"):
            pipeline.render_report(out, cfg, ing, prof, cor)
    out.commit(cfg.output)
    return 0


def run_synth(args) -> int:
    raw = {}
    if args.config:
        raw = yaml.safe_load(Path(args.config).read_text()) or {}
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.grid:
        rows, cols = args.grid.lower().split("x")
        raw["ward_grid"] = (int(rows), int(cols))
    if args.categories is not None:
        raw["n_categories"] = args.categories
    if args.planted:
        raw["planted"] = [{"category_index": int(i), "target_rho": float(r)}
                          for i, r in (item.split(":") for item in args.planted.split(","))]
    for flag, key in (("tail", "tail_exponent"), ("autocorr", "autocorr_length"), ("budget", "poi_budget")):
        v = getattr(args, flag)
        if v is not None:
            raw[key] = v
    try:
        cfg = synth.SynthConfig.from_dict(raw)
    except TypeError as e:
        raise ConfigError(f"invalid synth config: {e}") from None
    synth.generate_city(cfg).write(args.out)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run_command(args)
    except UrbandepError as e:
        tag = getattr(e, "stage", None) or args.command
        print(f"error [{tag}]: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:  # noqa: BLE001
        print(f"internal error [{args.command}]: {e!r}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
