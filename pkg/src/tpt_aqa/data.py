"""Synthetic clip-feature videos with latent, temporally ordered phases.

Each video of category ``c`` is split into ``K_true`` contiguous phases.
Phase ``k`` carries a quality ``u_k`` in [0, 1]; every clip of that phase
has feature ``e_k + u_k * q_k + noise`` where ``e_k`` (phase embedding) and
``q_k`` (quality direction) are unit vectors fixed per category. The score
is an affine map of ``sum_k w_k u_k`` onto the score range, optionally
multiplied by a difficulty degree.
"""

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, SamplingError

SPLITS = ("train", "val", "test")


@dataclass
class GeneratorConfig:
    T: int = 20
    D: int = 64
    K_true: int = 5
    num_videos: dict = field(default_factory=lambda: {"train": 600, "val": 100, "test": 200})
    noise_std: float = 0.1
    score_range: tuple = (0.0, 100.0)
    difficulty_levels: tuple = None
    num_categories: int = 1
    seed: int = 0

    def validate(self):
        if self.K_true < 1 or self.K_true > self.T:
            raise ConfigError(f"K_true={self.K_true} must be in [1, T={self.T}]")
        if self.D < 1:
            raise ConfigError(f"D={self.D} must be positive")
        lo, hi = self.score_range
        if not lo < hi:
            raise ConfigError(f"score_range {self.score_range} must satisfy s_min < s_max")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std={self.noise_std} must be >= 0")
        if self.difficulty_levels is not None:
            if len(self.difficulty_levels) == 0 or min(self.difficulty_levels) <= 0:
                raise ConfigError("difficulty_levels must be a non-empty list of positive values")
        if self.num_categories < 1:
            raise ConfigError("num_categories must be >= 1")
        unknown = set(self.num_videos) - set(SPLITS)
        if unknown:
            raise ConfigError(f"unknown splits {sorted(unknown)}")
        return self

    def declared_range(self):
        """Score range including difficulty multipliers, used to normalise R-l2."""
        lo, hi = self.score_range
        if self.difficulty_levels:
            return lo * min(self.difficulty_levels), hi * max(self.difficulty_levels)
        return float(lo), float(hi)


@dataclass
class ScoredVideo:
    video_id: int
    clips: np.ndarray
    raw_score: float
    phase_boundaries: tuple
    category: int = 0
    difficulty: float = None
    qualities: np.ndarray = None

    @property
    def score(self):
        if self.difficulty is None:
            return self.raw_score
        return self.raw_score * self.difficulty

    @property
    def T(self):
        return self.clips.shape[0]


@dataclass
class TrainPair:
    test: ScoredVideo
    exemplar: ScoredVideo
    delta: float


@dataclass
class CategoryModel:
    phase_embeddings: np.ndarray
    quality_directions: np.ndarray
    weights: np.ndarray


def _unit_rows(rng, n, dim):
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def category_models(config):
    """Per-category phase embeddings, quality directions and score weights."""
    rng = np.random.default_rng([config.seed, 0xC0FFEE])
    models = []
    for _ in range(config.num_categories):
        w = rng.uniform(0.5, 1.5, config.K_true)
        models.append(
            CategoryModel(
                phase_embeddings=_unit_rows(rng, config.K_true, config.D),
                quality_directions=_unit_rows(rng, config.K_true, config.D),
                weights=w / w.sum(),
            )
        )
    return models


def sample_boundaries(rng, T, K):
    """Uniform composition of T clips into K non-empty runs, as 1-based run starts plus T+1."""
    cuts = np.sort(rng.choice(np.arange(2, T + 1), size=K - 1, replace=False))
    return (1, *(int(c) for c in cuts), T + 1)


def render_video(model, boundaries, qualities, noise_std, rng, D):
    T = boundaries[-1] - 1
    clips = np.empty((T, D))
    for k in range(len(boundaries) - 1):
        lo, hi = boundaries[k] - 1, boundaries[k + 1] - 1
        clips[lo:hi] = model.phase_embeddings[k] + qualities[k] * model.quality_directions[k]
    if noise_std > 0:
        clips += noise_std * rng.standard_normal(clips.shape)
    return clips


def quality_to_score(model, qualities, score_range):
    lo, hi = score_range
    return float(lo + (hi - lo) * np.dot(model.weights, qualities))


def generate_dataset(config):
    """Return ``{split: [ScoredVideo, ...]}``; pure given the config (and its seed)."""
    config.validate()
    models = category_models(config)
    out = {}
    next_id = 0
    for split_index, split in enumerate(SPLITS):
        videos = []
        for i in range(config.num_videos.get(split, 0)):
            rng = np.random.default_rng([config.seed, split_index, i])
            category = int(rng.integers(config.num_categories))
            model = models[category]
            boundaries = sample_boundaries(rng, config.T, config.K_true)
            u = rng.uniform(0.0, 1.0, config.K_true)
            clips = render_video(model, boundaries, u, config.noise_std, rng, config.D)
            difficulty = None
            if config.difficulty_levels:
                difficulty = float(rng.choice(config.difficulty_levels))
            videos.append(
                ScoredVideo(
                    video_id=next_id,
                    clips=clips,
                    raw_score=quality_to_score(model, u, config.score_range),
                    phase_boundaries=boundaries,
                    category=category,
                    difficulty=difficulty,
                    qualities=u,
                )
            )
            next_id += 1
        out[split] = videos
    return out


# ------------------------------------------------------------------- pairing


def relative_score(test, exemplar, difficulty_mode=False):
    if difficulty_mode:
        return test.raw_score - exemplar.raw_score
    return test.score - exemplar.score


def _eligible(pool, test, difficulty_mode):
    return [
        v for v in pool
        if v.video_id != test.video_id
        and v.category == test.category
        and (not difficulty_mode or v.difficulty == test.difficulty)
    ]


def sample_train_pair(videos, rng, test=None, difficulty_mode=False):
    """Draw a (test, exemplar) pair; the exemplar is uniform over eligible videos."""
    if test is None:
        test = videos[rng.integers(len(videos))]
    pool = _eligible(videos, test, difficulty_mode)
    if not pool:
        raise SamplingError(f"no eligible exemplar for video {test.video_id}")
    exemplar = pool[rng.integers(len(pool))]
    return TrainPair(test, exemplar, relative_score(test, exemplar, difficulty_mode))


def select_inference_exemplars(pool, test, M_ex=10, seed=0, difficulty_mode=False):
    """Pick ``M_ex`` distinct exemplars for ``test``, deterministic in ``seed``."""
    eligible = _eligible(pool, test, difficulty_mode)
    if not eligible:
        raise SamplingError(f"no eligible exemplar for video {test.video_id}")
    if len(eligible) < M_ex:
        warnings.warn(
            f"video {test.video_id}: only {len(eligible)} eligible exemplars (< {M_ex})",
            stacklevel=2,
        )
        return eligible
    rng = np.random.default_rng([seed, test.video_id])
    idx = rng.choice(len(eligible), size=M_ex, replace=False)
    return [eligible[i] for i in idx]


def pair_deltas(videos, difficulty_mode=False):
    """Relative scores over every eligible ordered pair (i, j), i != j."""
    deltas = []
    groups = {}
    for v in videos:
        key = (v.category, v.difficulty if difficulty_mode else None)
        groups.setdefault(key, []).append(v.raw_score if difficulty_mode else v.score)
    for scores in groups.values():
        s = np.asarray(scores, dtype=float)
        diff = s[:, None] - s[None, :]
        deltas.append(diff[~np.eye(len(s), dtype=bool)])
    return np.concatenate(deltas) if deltas else np.empty(0)


# ------------------------------------------------------------- serialization


def _config_echo(config):
    d = asdict(config)
    d["score_range"] = list(d["score_range"])
    if d["difficulty_levels"] is not None:
        d["difficulty_levels"] = list(d["difficulty_levels"])
    return d


def save_split(path, videos, config, split):
    """One ``.npz`` file per split: config echo header plus stacked per-video records."""
    T, D = config.T, config.D
    np.savez(
        path,
        header=np.array(json.dumps({"split": split, "config": _config_echo(config)})),
        video_id=np.array([v.video_id for v in videos], dtype=np.int64),
        clips=np.stack([v.clips for v in videos]) if videos else np.empty((0, T, D)),
        raw_score=np.array([v.raw_score for v in videos]),
        difficulty=np.array([np.nan if v.difficulty is None else v.difficulty for v in videos]),
        category=np.array([v.category for v in videos], dtype=np.int64),
        boundaries=np.array([v.phase_boundaries for v in videos], dtype=np.int64).reshape(
            len(videos), config.K_true + 1
        ),
        qualities=np.array([v.qualities for v in videos]).reshape(len(videos), config.K_true),
    )


def load_split(path):
    """Inverse of :func:`save_split`; returns ``(videos, header)``."""
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        videos = [
            ScoredVideo(
                video_id=int(z["video_id"][i]),
                clips=z["clips"][i].copy(),
                raw_score=float(z["raw_score"][i]),
                phase_boundaries=tuple(int(b) for b in z["boundaries"][i]),
                category=int(z["category"][i]),
                difficulty=None if np.isnan(z["difficulty"][i]) else float(z["difficulty"][i]),
                qualities=z["qualities"][i].copy(),
            )
            for i in range(len(z["video_id"]))
        ]
    return videos, header


def config_from_header(header):
    cfg = dict(header["config"])
    cfg["score_range"] = tuple(cfg["score_range"])
    if cfg["difficulty_levels"] is not None:
        cfg["difficulty_levels"] = tuple(cfg["difficulty_levels"])
    return GeneratorConfig(**cfg)


def write_manifest(path, splits):
    """CSV with one row per video: split, id, score, difficulty, phase boundaries."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "video_id", "category", "score", "raw_score", "difficulty", "phase_boundaries"])
        for split, videos in splits.items():
            for v in videos:
                writer.writerow([
                    split, v.video_id, v.category, f"{v.score:.9f}", f"{v.raw_score:.9f}",
                    "" if v.difficulty is None else v.difficulty,
                    " ".join(str(b) for b in v.phase_boundaries),
                ])
