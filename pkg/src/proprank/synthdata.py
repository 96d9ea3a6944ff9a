"""Deterministic synthetic datasets with planted structure.

All randomness comes from the Philox counter-based generator (numpy's
Philox4x64-10 bit generator). Each image draws from an independent substream
keyed by (seed, image index), so generation is reproducible bit for bit and
insensitive to evaluation order; the key scheme is recorded by
synth_metadata so dataset files can document their own provenance.

Feature-only mode plants a unit-norm scoring direction: every candidate gets
a latent quality y ~ Uniform[0, 1], features y * w_star + noise on the first
d - 1 coordinates, and iou_label = y. The final coordinate is a constant 1.
That constant is deliberate: with qualities in [0, 1] all planted scores are
non-negative, so without an intercept coordinate no linear scorer could push
negatives below a symmetric margin and the large-margin problem would be
infeasible by construction. Groundtruth lists are empty and boxes are unit
placeholders; these datasets exercise the solver, not the geometry.

Geometric mode lays out groundtruth boxes and candidate boxes (exact copies,
jittered copies, and uniform random boxes, shuffled), labels them with their
true best overlap, and embeds (iou_label, box geometry) into a fixed feature
vector plus noise. The embedding is a test-harness construction so that a
linear model can rank by IoU; it is not a claim about real descriptors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import Box, Candidate, DataError, Dataset, GroundTruthObject, ImageRecord, label_candidates

PLANTED_STREAM = 2**64 - 1
GEOMETRIC_FEATURE_DIM = 12
_PRNG_NAME = "numpy.random.Philox (Philox4x64-10)"
_KEY_SCHEME = "key = (seed << 64) | stream; stream = image index, planted vector stream = 2**64 - 1"

# Candidates built around each groundtruth box: one exact copy, a few tight
# jitters, and a spread of loose jitters; the rest of the budget is uniform.
_EXACT_COPIES = 1
_TIGHT_COPIES = 3
_LOOSE_COPIES = 8


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(seed << 64) | stream))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    num_images: int = 100
    candidates_per_image: int = 100
    feature_dim: int = 16
    noise_sigma: float = 0.0
    mode: str = "feature_only"
    image_size: tuple[int, int] = (640, 480)
    objects_per_image: tuple[int, int] = (1, 3)
    classes: int = 3
    planted_weight: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**63:
            raise DataError("seed must lie in [0, 2**63)")
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        object.__setattr__(self, "objects_per_image", tuple(int(v) for v in self.objects_per_image))
        if self.num_images < 1 or self.candidates_per_image < 1:
            raise DataError("num_images and candidates_per_image must be positive")
        if self.mode not in ("feature_only", "geometric"):
            raise DataError(f"mode must be 'feature_only' or 'geometric', got {self.mode!r}")
        if self.feature_dim < 2:
            raise DataError("feature_dim must be at least 2")
        if self.noise_sigma < 0 or not np.isfinite(self.noise_sigma):
            raise DataError("noise_sigma must be finite and non-negative")
        w, h = self.image_size
        if w < 8 or h < 8:
            raise DataError("image_size must be at least 8x8")
        lo, hi = self.objects_per_image
        if not 1 <= lo <= hi:
            raise DataError("objects_per_image must be an increasing range starting at 1 or more")
        if self.classes < 1:
            raise DataError("classes must be positive")
        if self.planted_weight is not None:
            vec = tuple(float(v) for v in self.planted_weight)
            if len(vec) != self.feature_dim - 1:
                raise DataError(
                    f"planted_weight must have length feature_dim - 1 = {self.feature_dim - 1} "
                    "(the last coordinate is the constant intercept)"
                )
            if not all(np.isfinite(vec)):
                raise DataError("planted_weight must be finite")
            object.__setattr__(self, "planted_weight", vec)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "num_images": self.num_images,
            "candidates_per_image": self.candidates_per_image,
            "feature_dim": self.feature_dim,
            "noise_sigma": self.noise_sigma,
            "mode": self.mode,
            "image_size": list(self.image_size),
            "objects_per_image": list(self.objects_per_image),
            "classes": self.classes,
            "planted_weight": None if self.planted_weight is None else list(self.planted_weight),
        }


def generate_feature_dataset(config: SynthConfig) -> tuple[Dataset, np.ndarray]:
    """Feature-only dataset plus the planted unit-norm scoring vector.

    The returned vector lives in the full feature space (zero on the constant
    coordinate) and reproduces the latent quality as its score, so it ranks
    every image's candidates exactly by iou_label when noise_sigma is zero.
    """
    if config.mode != "feature_only":
        raise DataError(f"config mode is {config.mode!r}, expected 'feature_only'")
    d = config.feature_dim
    if config.planted_weight is not None:
        direction = np.asarray(config.planted_weight, dtype=np.float64)
    else:
        raw = _rng(config.seed, PLANTED_STREAM).standard_normal(d - 1)
        norm = float(np.sqrt(raw @ raw))
        if norm == 0.0:  # pragma: no cover - measure-zero draw
            raise DataError("degenerate planted direction")
        direction = raw / norm
    planted = np.concatenate([direction, [0.0]])

    records = []
    n = config.candidates_per_image
    for j in range(config.num_images):
        rng = _rng(config.seed, j)
        quality = rng.uniform(0.0, 1.0, size=n)
        feats = quality[:, None] * direction[None, :]
        if config.noise_sigma > 0.0:
            feats = feats + config.noise_sigma * rng.standard_normal((n, d - 1))
        feats = np.concatenate([feats, np.ones((n, 1))], axis=1)
        cands = tuple(
            Candidate(Box(0.0, 0.0, 1.0, 1.0), iou_label=float(quality[i]), features=feats[i])
            for i in range(n)
        )
        records.append(ImageRecord(f"feat-{config.seed}-{j:05d}", 1, 1, (), cands))
    return Dataset(tuple(records), d), planted


def _uniform_box(rng: np.random.Generator, width: int, height: int) -> Box:
    w = float(rng.uniform(4.0, 0.9 * width))
    h = float(rng.uniform(4.0, 0.9 * height))
    x0 = float(rng.uniform(0.0, width - w))
    y0 = float(rng.uniform(0.0, height - h))
    return Box(x0, y0, x0 + w, y0 + h)


def _jittered_box(rng: np.random.Generator, base: Box, scale: float, width: int, height: int) -> Box:
    bw = base.x_max - base.x_min
    bh = base.y_max - base.y_min
    dx0, dx1, dy0, dy1 = rng.uniform(-scale, scale, size=4)
    x0 = min(max(base.x_min + dx0 * bw, 0.0), width - 2.0)
    y0 = min(max(base.y_min + dy0 * bh, 0.0), height - 2.0)
    x1 = min(max(base.x_max + dx1 * bw, x0 + 2.0), float(width))
    y1 = min(max(base.y_max + dy1 * bh, y0 + 2.0), float(height))
    return Box(x0, y0, x1, y1)


def _geometry_features(record: ImageRecord, rng: np.random.Generator, noise_sigma: float) -> ImageRecord:
    n = record.num_candidates
    noise = rng.standard_normal((n, 5))
    cands = []
    for i, cand in enumerate(record.candidates):
        b = cand.box
        label = cand.iou_label if cand.iou_label is not None else 0.0
        bw = (b.x_max - b.x_min) / record.width
        bh = (b.y_max - b.y_min) / record.height
        cx = 0.5 * (b.x_min + b.x_max) / record.width
        cy = 0.5 * (b.y_min + b.y_max) / record.height
        vec = np.array(
            [
                label + noise_sigma * noise[i, 0],
                2.0 * label - 1.0 + noise_sigma * noise[i, 1],
                label * label + noise_sigma * noise[i, 2],
                cx,
                cy,
                bw,
                bh,
                bw * bh,
                bw / (bw + bh),
                1.0,
                noise[i, 3],
                noise[i, 4],
            ],
            dtype=np.float64,
        )
        cands.append(Candidate(cand.box, cand.iou_label, vec, cand.source_index))
    return ImageRecord(record.image_id, record.width, record.height, record.groundtruth, tuple(cands))


def generate_geometric_dataset(config: SynthConfig) -> Dataset:
    """Boxes, groundtruth, true overlap labels, and rankable embedded features.

    Candidate order is shuffled per image, mimicking an unranked upstream
    proposal stage. Labels come from label_candidates applied to the real
    geometry. Feature vectors have GEOMETRIC_FEATURE_DIM coordinates as
    documented in _geometry_features (three noisy functions of the label,
    normalized geometry, a constant intercept, and two pure noise channels).
    """
    if config.mode != "geometric":
        raise DataError(f"config mode is {config.mode!r}, expected 'geometric'")
    width, height = config.image_size
    n = config.candidates_per_image
    records = []
    for j in range(config.num_images):
        rng = _rng(config.seed, j)
        lo, hi = config.objects_per_image
        num_objects = int(rng.integers(lo, hi + 1))
        groundtruth = []
        for _ in range(num_objects):
            cls = int(rng.integers(0, config.classes))
            bw = float(rng.uniform(0.15, 0.45) * width)
            bh = float(rng.uniform(0.15, 0.45) * height)
            x0 = float(rng.uniform(0.0, width - bw))
            y0 = float(rng.uniform(0.0, height - bh))
            groundtruth.append(GroundTruthObject(f"class-{cls}", Box(x0, y0, x0 + bw, y0 + bh)))

        structured: list[Box] = []
        for gt in groundtruth:
            for _ in range(_EXACT_COPIES):
                structured.append(gt.box)  # exact copy, iou_label 1.0 by construction
            for _ in range(_TIGHT_COPIES):
                structured.append(_jittered_box(rng, gt.box, 0.03, width, height))
            for _ in range(_LOOSE_COPIES):
                structured.append(_jittered_box(rng, gt.box, float(rng.uniform(0.1, 0.35)), width, height))
        max_structured = max(0, n - 2 * config.objects_per_image[1])
        structured = structured[:max_structured]
        boxes = structured + [_uniform_box(rng, width, height) for _ in range(n - len(structured))]
        perm = rng.permutation(len(boxes))
        cands = tuple(Candidate(boxes[int(i)]) for i in perm)
        record = label_candidates(
            ImageRecord(f"geo-{config.seed}-{j:05d}", width, height, tuple(groundtruth), cands)
        )
        records.append(_geometry_features(record, rng, config.noise_sigma))
    return Dataset(tuple(records), GEOMETRIC_FEATURE_DIM)


def synth_metadata(config: SynthConfig, planted: np.ndarray | None = None) -> dict:
    """Sidecar metadata documenting the generator, its constants, and the config."""
    meta = {
        "config": config.to_dict(),
        "prng": {"generator": _PRNG_NAME, "key_scheme": _KEY_SCHEME},
    }
    if planted is not None:
        meta["planted_weight"] = [float(v) for v in planted]
    if config.mode == "geometric":
        meta["feature_dim"] = GEOMETRIC_FEATURE_DIM
        meta["composition"] = {
            "exact_copies_per_object": _EXACT_COPIES,
            "tight_jitters_per_object": _TIGHT_COPIES,
            "loose_jitters_per_object": _LOOSE_COPIES,
        }
    return meta
