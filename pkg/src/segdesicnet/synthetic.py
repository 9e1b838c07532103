"""Two-domain georeferenced segmentation benchmark.

Patches are laid out like aerial tiles: each domain holds a few zones,
and a zone is a contiguous grid of patch footprints (patch size times
ground resolution). Each patch is a Voronoi partition into land-cover classes. A class is
rendered as a base colour plus an oriented sinusoidal texture; every
patch is also tinted by a colour drift that varies smoothly with its
Lambert-93 position. Target-domain patches additionally pass through a
global colour affine map and have their texture frequencies scaled, both
proportional to ``shift_strength``.

Every patch derives its random stream from ``(texture_seed, patch_id)``,
so content never depends on generation order.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import pnm
from .errors import ConfigError, DataError, ShapeError
from .geodesy import Epsg2154Coord

SPLITS = ("source-train", "source-val", "target-train", "target-test")
_SPLIT_PREFIX = {"source-train": "src", "source-val": "val", "target-train": "tgt", "target-test": "tst"}


@dataclass(frozen=True)
class WorldConfig:
    num_classes: int = 6
    patch_size: int = 512
    source_box: tuple[float, float, float, float] = (470000.0, 6570000.0, 500000.0, 6600000.0)
    target_box: tuple[float, float, float, float] = (520000.0, 6570000.0, 550000.0, 6600000.0)
    shift_strength: float = 0.7
    texture_seed: int = 18
    num_source: int = 200
    num_target: int = 100
    num_target_test: int = 60
    source_val_fraction: float = 0.2
    min_sites: int = 3
    max_sites: int = 7
    noise_sigma: float = 6.0
    drift_amplitude: float = 18.0
    drift_period_m: float = 60000.0
    zones_per_domain: int = 4
    ground_resolution_m: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "source_box", tuple(float(v) for v in self.source_box))
        object.__setattr__(self, "target_box", tuple(float(v) for v in self.target_box))
        for name in ("source_box", "target_box"):
            e0, n0, e1, n1 = getattr(self, name)
            if not (e0 < e1 and n0 < n1):
                raise ConfigError(f"{name} must be (e_min, n_min, e_max, n_max) with min < max")
        if _boxes_overlap(self.source_box, self.target_box):
            raise ConfigError("source_box and target_box overlap")
        if not 0.0 <= self.shift_strength <= 1.0:
            raise ConfigError("shift_strength must lie in [0, 1]")
        if self.num_classes < 2 or self.patch_size < 2:
            raise ConfigError("need num_classes >= 2 and patch_size >= 2")
        if min(self.num_source, self.num_target, self.num_target_test) < 0:
            raise ConfigError("patch counts must be non-negative")
        if not 0.0 <= self.source_val_fraction < 1.0:
            raise ConfigError("source_val_fraction must lie in [0, 1)")
        if not 1 <= self.min_sites <= self.max_sites:
            raise ConfigError("need 1 <= min_sites <= max_sites")
        if self.zones_per_domain < 1 or not self.ground_resolution_m > 0:
            raise ConfigError("need zones_per_domain >= 1 and ground_resolution_m > 0")
        for name in ("source_box", "target_box"):
            e0, n0, e1, n1 = getattr(self, name)
            if min(e1 - e0, n1 - n0) <= self.zone_extent_m:
                raise ConfigError(f"{name} is too small to hold a {self.zone_extent_m:g} m zone")

    @property
    def num_source_val(self) -> int:
        return int(round(self.num_source * self.source_val_fraction))

    @property
    def patch_footprint_m(self) -> float:
        return self.patch_size * self.ground_resolution_m

    @property
    def zone_side(self) -> int:
        """Patches per row of the square tile grid that makes up one zone."""
        per_domain = max(self.num_source, self.num_target + self.num_target_test, 1)
        return math.ceil(math.sqrt(math.ceil(per_domain / self.zones_per_domain)))

    @property
    def zone_extent_m(self) -> float:
        return self.zone_side * self.patch_footprint_m

    def split_sizes(self) -> dict[str, int]:
        return {
            "source-train": self.num_source - self.num_source_val,
            "source-val": self.num_source_val,
            "target-train": self.num_target,
            "target-test": self.num_target_test,
        }


def _boxes_overlap(a, b) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


@dataclass
class GeoSample:
    image: np.ndarray  # H x W x 3 uint8
    labels: np.ndarray | None  # H x W uint8 class ids
    coord: Epsg2154Coord
    domain_tag: str  # "source" | "target"
    patch_id: str
    split: str = ""
    encoding: np.ndarray | None = field(default=None, repr=False)


def patch_seed(texture_seed: int, patch_id: str, salt: int = 0) -> int:
    digest = hashlib.sha256(f"{texture_seed}/{patch_id}/{salt}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class _AppearanceLaw:
    base: np.ndarray  # K x 3
    tex_dir: np.ndarray  # K x 3 unit colour directions
    tex_amp: np.ndarray  # K
    tex_freq: np.ndarray  # K, cycles per pixel
    tex_angle: np.ndarray  # K
    drift_phase: np.ndarray  # 3
    mix: np.ndarray  # 3 x 3 target colour mixing direction
    offset: np.ndarray  # 3 target colour offset direction


def appearance_law(cfg: WorldConfig) -> _AppearanceLaw:
    rng = np.random.default_rng(patch_seed(cfg.texture_seed, "__world__"))
    k = cfg.num_classes
    hues = (np.arange(k) / k + rng.uniform(-0.3, 0.3, k) / k) % 1.0
    base = np.stack([_hsv_to_rgb(h, 0.55, 0.72) for h in hues]) * 255.0
    tex_dir = rng.normal(size=(k, 3))
    tex_dir /= np.linalg.norm(tex_dir, axis=1, keepdims=True)
    mix = rng.normal(size=(3, 3))
    mix /= np.linalg.norm(mix, ord=2)
    offset = rng.normal(size=3)
    offset /= np.linalg.norm(offset)
    return _AppearanceLaw(
        base=base,
        tex_dir=tex_dir,
        tex_amp=rng.uniform(14.0, 28.0, k),
        tex_freq=rng.uniform(1.0 / 24.0, 1.0 / 6.0, k),
        tex_angle=rng.uniform(0.0, np.pi, k),
        drift_phase=rng.uniform(0.0, 2 * np.pi, 3),
        mix=mix,
        offset=offset,
    )


def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    return np.array([(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i])


def location_drift(cfg: WorldConfig, law: _AppearanceLaw, coord: Epsg2154Coord) -> np.ndarray:
    """Smooth per-channel colour offset as a function of position."""
    w = 2 * np.pi / cfg.drift_period_m
    e, n = coord
    args = np.array([w * e, w * n, w * (e + n) / np.sqrt(2.0)]) + law.drift_phase
    return cfg.drift_amplitude * np.sin(args)


def zone_centres(cfg: WorldConfig, domain: str) -> np.ndarray:
    """Seeded zone centres inside the domain box, kept a half zone away from its edges."""
    rng = np.random.default_rng(patch_seed(cfg.texture_seed, f"__zones_{domain}__"))
    e0, n0, e1, n1 = cfg.source_box if domain == "source" else cfg.target_box
    half = cfg.zone_extent_m / 2
    return np.column_stack(
        [rng.uniform(e0 + half, e1 - half, cfg.zones_per_domain), rng.uniform(n0 + half, n1 - half, cfg.zones_per_domain)]
    )


def patch_coordinate(cfg: WorldConfig, centres: np.ndarray, index: int) -> Epsg2154Coord:
    """Centre of the ``index``-th patch of a domain: zones are filled round-robin, each as a tile grid."""
    zone, slot = index % len(centres), index // len(centres)
    side = cfg.zone_side
    col, row = slot % side - (side - 1) / 2, slot // side - (side - 1) / 2
    step = cfg.patch_footprint_m
    return Epsg2154Coord(float(centres[zone, 0] + col * step), float(centres[zone, 1] + row * step))


def render_patch(
    cfg: WorldConfig, law: _AppearanceLaw, patch_id: str, domain: str, split: str, coord: Epsg2154Coord, salt: int = 0
) -> GeoSample:
    rng = np.random.default_rng(patch_seed(cfg.texture_seed, patch_id, salt))
    size = cfg.patch_size
    n_sites = int(rng.integers(cfg.min_sites, cfg.max_sites + 1))
    sites = rng.uniform(0.0, size, size=(n_sites, 2))
    site_class = rng.integers(0, cfg.num_classes, size=n_sites)
    phases = rng.uniform(0.0, 2 * np.pi, size=cfg.num_classes)
    noise = rng.normal(0.0, cfg.noise_sigma, size=(size, size, 3))

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    d2 = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
    labels = site_class[np.argmin(d2, axis=-1)].astype(np.uint8)

    s = cfg.shift_strength if domain == "target" else 0.0
    freq = law.tex_freq * (1.0 + 0.5 * s)
    proj = xx[..., None] * np.cos(law.tex_angle) + yy[..., None] * np.sin(law.tex_angle)
    wave = np.sin(2 * np.pi * freq * proj + phases)  # H x W x K
    wave = np.take_along_axis(wave, labels[..., None].astype(np.intp), axis=-1)[..., 0]
    colour = law.base[labels] + (law.tex_amp[labels] * wave)[..., None] * law.tex_dir[labels]
    colour = colour + location_drift(cfg, law, coord) + noise
    if s > 0:
        gain = np.eye(3) + s * law.mix
        colour = (colour - 128.0) @ gain.T + 128.0 + s * 45.0 * law.offset
    image = np.clip(np.rint(colour), 0, 255).astype(np.uint8)
    return GeoSample(image, labels, coord, domain, patch_id, split)


def _plan(cfg: WorldConfig) -> list[tuple[str, str, str, Epsg2154Coord]]:
    plan = []
    centres = {d: zone_centres(cfg, d) for d in ("source", "target")}
    counter = {"source": 0, "target": 0}
    for split, count in cfg.split_sizes().items():
        domain = "source" if split.startswith("source") else "target"
        for i in range(count):
            coord = patch_coordinate(cfg, centres[domain], counter[domain])
            counter[domain] += 1
            plan.append((f"{_SPLIT_PREFIX[split]}{i:04d}", domain, split, coord))
    return plan


def generate_world(cfg: WorldConfig) -> list[GeoSample]:
    """Render the whole corpus; target-train patches carry no labels."""
    law = appearance_law(cfg)
    plan = _plan(cfg)
    for salt in range(100):
        samples = [render_patch(cfg, law, pid, dom, split, coord, salt) for pid, dom, split, coord in plan]
        seen = np.zeros(cfg.num_classes, dtype=bool)
        for smp in samples:
            seen[np.unique(smp.labels)] = True
        if seen.all() or not samples:
            break
    else:
        raise DataError("could not draw a corpus covering every class")
    for smp in samples:
        if smp.split == "target-train":
            smp.labels = None
    return samples


def domain_colour_gap(samples: list[GeoSample]) -> float:
    """Mean absolute difference of per-channel mean colour between domains."""
    src = [s.image.reshape(-1, 3).mean(axis=0) for s in samples if s.domain_tag == "source"]
    tgt = [s.image.reshape(-1, 3).mean(axis=0) for s in samples if s.domain_tag == "target"]
    if not src or not tgt:
        raise DataError("both domains are needed to measure a colour gap")
    return float(np.abs(np.mean(src, axis=0) - np.mean(tgt, axis=0)).mean())


# --- cropping and tiling --------------------------------------------------


def crop_offsets(height: int, width: int, size: int, rng: np.random.Generator) -> tuple[int, int]:
    if size > height or size > width:
        raise ConfigError(f"crop size {size} exceeds patch {height}x{width}")
    return int(rng.integers(0, height - size + 1)), int(rng.integers(0, width - size + 1))


def random_crop(sample: GeoSample, size: int = 256, rng: np.random.Generator | None = None) -> GeoSample:
    rng = rng if rng is not None else np.random.default_rng()
    h, w = sample.image.shape[:2]
    y, x = crop_offsets(h, w, size, rng)
    labels = None if sample.labels is None else sample.labels[y : y + size, x : x + size]
    return GeoSample(
        sample.image[y : y + size, x : x + size],
        labels,
        sample.coord,
        sample.domain_tag,
        sample.patch_id,
        sample.split,
        sample.encoding,
    )


def tile(image: np.ndarray, size: int = 256) -> np.ndarray:
    """Non-overlapping row-major tiles: H x W x ... -> T x size x size x ..."""
    h, w = image.shape[:2]
    if h % size or w % size:
        raise ShapeError(f"{h}x{w} is not divisible by tile size {size}")
    rest = image.shape[2:]
    t = image.reshape(h // size, size, w // size, size, *rest)
    t = np.moveaxis(t, 2, 1)
    return t.reshape(-1, size, size, *rest)


def merge(tiles: np.ndarray, height: int, width: int) -> np.ndarray:
    size = tiles.shape[1]
    if height % size or width % size or tiles.shape[0] != (height // size) * (width // size):
        raise ShapeError(f"{tiles.shape[0]} tiles of {size} cannot cover {height}x{width}")
    rest = tiles.shape[3:]
    t = tiles.reshape(height // size, width // size, size, size, *rest)
    t = np.moveaxis(t, 2, 1)
    return t.reshape(height, width, *rest)


def tile_and_merge(image: np.ndarray, size: int = 256) -> np.ndarray:
    return merge(tile(image, size), image.shape[0], image.shape[1])


# --- corpus on disk ---------------------------------------------------------


def write_corpus(samples: list[GeoSample], out_dir: str | Path, cfg: WorldConfig) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for smp in samples:
        pnm.write_ppm(out / f"{smp.patch_id}.ppm", smp.image)
        entry = {"patch_id": smp.patch_id, "split": smp.split, "image": f"{smp.patch_id}.ppm"}
        if smp.labels is not None:
            pnm.write_pgm(out / f"{smp.patch_id}_mask.pgm", smp.labels)
            entry["mask"] = f"{smp.patch_id}_mask.pgm"
        meta = {
            "patch_id": smp.patch_id,
            "epsg": 2154,
            "c_lon": smp.coord.easting,
            "c_lat": smp.coord.northing,
            "domain": smp.domain_tag,
        }
        (out / f"{smp.patch_id}.json").write_text(json.dumps(meta, indent=2) + "\n")
        entry["metadata"] = f"{smp.patch_id}.json"
        files.append(entry)
    manifest = {
        "format": "segdesic-corpus/1",
        "world": world_to_dict(cfg),
        "seeds": {"texture_seed": cfg.texture_seed},
        "files": files,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def world_to_dict(cfg: WorldConfig) -> dict:
    d = asdict(cfg)
    d["source_box"] = list(cfg.source_box)
    d["target_box"] = list(cfg.target_box)
    return d


def read_manifest(data_dir: str | Path) -> dict:
    path = Path(data_dir) / "manifest.json"
    return json.loads(path.read_text())


def iter_corpus(data_dir: str | Path, splits: tuple[str, ...] = SPLITS) -> Iterator[GeoSample]:
    """Load samples of the requested splits; masks of target-train are never opened."""
    root = Path(data_dir)
    manifest = read_manifest(root)
    for entry in manifest["files"]:
        if entry["split"] not in splits:
            continue
        meta = json.loads((root / entry["metadata"]).read_text())
        image = pnm.read_ppm(root / entry["image"])
        labels = None
        if entry["split"] != "target-train" and "mask" in entry:
            labels = pnm.read_pgm(root / entry["mask"])
        yield GeoSample(
            image,
            labels,
            Epsg2154Coord(float(meta["c_lon"]), float(meta["c_lat"])),
            meta["domain"],
            meta["patch_id"],
            entry["split"],
        )
