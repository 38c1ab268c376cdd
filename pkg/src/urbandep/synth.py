"""Synthetic cities with planted category-deprivation relationships.

Wards are square grid cells. A deprivation surface is drawn as smoothed white
noise; category totals follow a rank power law; each category's POIs are
spread over wards by a multinomial whose weights combine a ward volume with a
category-specific intensity. Planted categories get intensities coupled to the
deprivation ranks, tuned until the Spearman correlation between their Offering
Advantage and the ward scores lands near the requested value.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, stats

from urbandep.errors import ConfigError, GenerationError
from urbandep.ingest import (
    AreaScore,
    Poi,
    PoiFormat,
    Source,
    WardBoundary,
    boundaries_to_geojson,
    serialize_poi_table,
    serialize_scores,
)

RHO_TOLERANCE = 0.05
MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class Planted:
    category_index: int
    target_rho: float


@dataclass(frozen=True)
class SynthConfig:
    ward_grid: tuple[int, int] = (10, 20)
    n_categories: int = 50
    planted: tuple[Planted, ...] = ()
    tail_exponent: float = 1.0
    autocorr_length: float = 1.5
    poi_budget: int = 20000
    seed: int = 0
    # mapService categories carry no planted signal
    map_categories: int = 10
    map_share: float = 0.3
    # volume_link "log": log volume = -count_coupling * z + noise;
    # "rank": volume = 1 + count_coupling * (centred reversed deprivation rank), times exp(noise)
    count_coupling: float = 0.0
    volume_link: str = "log"
    volume_noise: float = 0.3
    planted_dispersion: float = 1.0
    noise_dispersion: float = 0.5
    cell_size: float = 0.01
    origin: tuple[float, float] = (-0.5, 51.3)

    def __post_init__(self):
        rows, cols = self.ward_grid
        if rows < 1 or cols < 1:
            raise ConfigError("ward_grid must be positive")
        idx = [p.category_index for p in self.planted]
        if len(set(idx)) != len(idx):
            raise ConfigError("planted category indices must be distinct")
        if any(not 0 <= i < self.n_categories for i in idx):
            raise ConfigError("planted category index out of range")
        if any(not -1 < p.target_rho < 1 for p in self.planted):
            raise ConfigError("target_rho must lie in (-1, 1)")
        if self.tail_exponent <= 0 or self.autocorr_length < 0:
            raise ConfigError("tail_exponent must be > 0 and autocorr_length >= 0")
        if self.poi_budget < 10 * rows * cols:
            raise ConfigError("poi_budget must be at least 10 POIs per ward")
        if not 0 <= self.map_share < 1:
            raise ConfigError("map_share must lie in [0, 1)")
        if self.volume_link not in ("log", "rank"):
            raise ConfigError("volume_link must be 'log' or 'rank'")
        if self.volume_link == "rank" and not 0 <= self.count_coupling < 1:
            raise ConfigError("rank volume link needs 0 <= count_coupling < 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "planted" in d:
            d["planted"] = tuple(p if isinstance(p, Planted) else Planted(**p) for p in d["planted"])
        for key in ("ward_grid", "origin"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["planted"] = [asdict(p) for p in self.planted]
        d["ward_grid"] = list(self.ward_grid)
        d["origin"] = list(self.origin)
        return d


@dataclass
class SynthCity:
    config: SynthConfig
    wards: list[WardBoundary]
    pois: list[Poi]
    lsoa_scores: list[AreaScore]
    truth: list[dict]
    ward_volume: dict[str, float] = field(default_factory=dict)

    def truth_json(self) -> str:
        return json.dumps({"config": self.config.to_dict(), "planted": self.truth},
                          indent=1, sort_keys=True)

    def write(self, directory) -> dict[str, Path]:
        """Write ingest-format files plus truth.json and a pipeline config."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        fmt = PoiFormat(checkins="checkins")
        files = {
            "venue": d / "pois_venue.csv",
            "map": d / "pois_map.csv",
            "boundaries": d / "wards.geojson",
            "scores": d / "scores.csv",
            "truth": d / "truth.json",
            "config": d / "pipeline.yaml",
        }
        files["venue"].write_text(serialize_poi_table(
            [p for p in self.pois if p.source is Source.VENUE], fmt))
        files["map"].write_text(serialize_poi_table(
            [p for p in self.pois if p.source is Source.MAP], fmt))
        files["boundaries"].write_text(boundaries_to_geojson(self.wards))
        files["scores"].write_text(serialize_scores(self.lsoa_scores))
        files["truth"].write_text(self.truth_json())
        cols = {"id": "id", "lon": "lon", "lat": "lat", "category": "category", "checkins": "checkins"}
        cfg = {
            "poi_files": {
                "venueService": {"path": "pois_venue.csv", "columns": cols},
                "mapService": {"path": "pois_map.csv", "columns": cols},
            },
            "boundaries": "wards.geojson",
            "scores": "scores.csv",
            "seed": self.config.seed,
        }
        import yaml

        files["config"].write_text(yaml.safe_dump(cfg, sort_keys=True))
        return files


def category_names(n: int, prefix: str) -> list[str]:
    return [f"{prefix}-{i:03d}" for i in range(n)]


def power_law_totals(total: int, n: int, exponent: float) -> np.ndarray:
    """Split ``total`` over n ranks proportionally to rank^-exponent (largest remainder, min 1)."""
    if total < n:
        raise ConfigError(f"cannot give each of {n} categories a POI from a budget of {total}")
    w = np.arange(1, n + 1, dtype=float) ** -exponent
    raw = total * w / w.sum()
    base = np.maximum(np.floor(raw).astype(np.int64), 1)
    short = total - base.sum()
    if short > 0:
        order = np.argsort(-(raw - np.floor(raw)), kind="stable")
        base[order[:short]] += 1
    elif short < 0:
        # minimum-1 bumps overshot: take back from the largest categories
        i = 0
        for _ in range(-short):
            while base[i % n] <= 1:
                i += 1
            base[i % n] -= 1
            i += 1
    return base


def deprivation_surface(rows: int, cols: int, length: float, rng: np.random.Generator) -> np.ndarray:
    """Standardized smoothed white noise; ``length`` is the Gaussian sigma in cells."""
    z = rng.normal(size=(rows, cols))
    if length > 0:
        z = ndimage.gaussian_filter(z, sigma=length, mode="reflect")
    return (z - z.mean()) / z.std()


def _oa_spearman(counts: np.ndarray, j: int, score: np.ndarray) -> float:
    rows = counts.sum(axis=1)
    keep = rows > 0
    share = counts[keep, j] / rows[keep]
    if np.ptp(share) == 0:
        return 0.0
    return float(stats.spearmanr(share, score[keep])[0])


def generate_city(cfg: SynthConfig) -> SynthCity:
    rng = np.random.default_rng(cfg.seed)
    rows, cols = cfg.ward_grid
    n_wards = rows * cols
    z = deprivation_surface(rows, cols, cfg.autocorr_length, rng).ravel()
    scores = 25.0 + 12.0 * z

    noise = cfg.volume_noise * rng.normal(size=n_wards)
    if cfg.volume_link == "rank":
        centred = 1.0 - 2.0 * (stats.rankdata(z) - 1) / max(n_wards - 1, 1)
        volume = (1.0 + cfg.count_coupling * centred) * np.exp(noise)
    else:
        log_v = -cfg.count_coupling * z + noise
        volume = np.exp(log_v - log_v.max())
    volume /= volume.mean()

    n_map = cfg.map_categories if cfg.map_categories > 0 else 0
    map_budget = int(round(cfg.poi_budget * cfg.map_share)) if n_map else 0
    venue_budget = cfg.poi_budget - map_budget

    def spread(total, intensity):
        p = volume * intensity
        return rng.multinomial(total, p / p.sum())

    venue_totals = power_law_totals(venue_budget, cfg.n_categories, cfg.tail_exponent)
    venue = np.zeros((n_wards, cfg.n_categories), dtype=np.int64)
    for j in range(cfg.n_categories):
        venue[:, j] = spread(venue_totals[j], np.exp(cfg.noise_dispersion * rng.normal(size=n_wards)))

    truth = []
    coupling = {p.category_index: float(np.clip(p.target_rho, -0.995, 0.995)) for p in cfg.planted}
    achieved = {}
    attempts = {j: 0 for j in coupling}

    def draw(j):
        a = coupling[j]
        u = a * z + np.sqrt(1 - a * a) * rng.normal(size=n_wards)
        venue[:, j] = spread(venue_totals[j], np.exp(cfg.planted_dispersion * u))
        attempts[j] += 1

    pending = [p.category_index for p in cfg.planted]
    target = {p.category_index: p.target_rho for p in cfg.planted}
    while pending:
        for j in pending:
            draw(j)
            while True:
                achieved[j] = _oa_spearman(venue, j, scores)
                miss = target[j] - achieved[j]
                if abs(miss) <= RHO_TOLERANCE:
                    break
                if attempts[j] >= MAX_ATTEMPTS:
                    raise GenerationError(
                        f"planted category {j}: target rho {target[j]:.3f} not reached "
                        f"after {MAX_ATTEMPTS} attempts (achieved {achieved[j]:.3f})")
                coupling[j] = float(np.clip(coupling[j] + miss, -0.995, 0.995))
                draw(j)
        # later draws shift row totals; re-check everyone
        for j in coupling:
            achieved[j] = _oa_spearman(venue, j, scores)
        pending = [j for j in coupling if abs(target[j] - achieved[j]) > RHO_TOLERANCE]
        if pending and all(attempts[j] >= MAX_ATTEMPTS for j in pending):
            raise GenerationError(f"planted categories {pending} drifted off target")

    venue_names = category_names(cfg.n_categories, "venue")
    for p in cfg.planted:
        truth.append({
            "category": venue_names[p.category_index],
            "categoryIndex": p.category_index,
            "source": Source.VENUE.value,
            "targetRho": p.target_rho,
            "achievedRho": achieved[p.category_index],
            "attempts": attempts[p.category_index],
        })

    map_counts = np.zeros((n_wards, n_map), dtype=np.int64)
    if n_map:
        map_totals = power_law_totals(map_budget, n_map, cfg.tail_exponent)
        for j in range(n_map):
            map_counts[:, j] = spread(map_totals[j], np.exp(cfg.noise_dispersion * rng.normal(size=n_wards)))
    map_names = category_names(n_map, "map")

    x0, y0 = cfg.origin
    s = cfg.cell_size
    wards, lsoa, ids = [], [], []
    for r in range(rows):
        for c in range(cols):
            wid = f"W{r:03d}{c:03d}"
            ids.append(wid)
            lx, ly = x0 + c * s, y0 + r * s
            ring = ((lx, ly), (lx + s, ly), (lx + s, ly + s), (lx, ly + s), (lx, ly))
            wards.append(WardBoundary(wid, f"Ward {r}-{c}", ring))
    for k, wid in enumerate(ids):
        lsoa.append(AreaScore(f"L{wid[1:]}", float(scores[k]), wid))

    pois = []
    for src, mat, names, prefix in ((Source.VENUE, venue, venue_names, "v"),
                                    (Source.MAP, map_counts, map_names, "m")):
        serial = 0
        for k, wid in enumerate(ids):
            r, c = divmod(k, cols)
            for j, name in enumerate(names):
                m = int(mat[k, j])
                if m == 0:
                    continue
                # stay clear of cell edges so containment is unambiguous
                u = rng.uniform(0.02, 0.98, size=(m, 2))
                chk = rng.negative_binomial(1, 0.02, size=m) if src is Source.VENUE else [None] * m
                for (ux, uy), ck in zip(u, chk):
                    lon = round(float(x0 + (c + ux) * s), 7)
                    lat = round(float(y0 + (r + uy) * s), 7)
                    pois.append(Poi(f"{prefix}{serial:07d}", lon, lat, name, src,
                                    None if ck is None else int(ck)))
                    serial += 1

    return SynthCity(cfg, wards, pois, lsoa, truth, dict(zip(ids, volume.tolist())))
