"""Training, evaluation, ablation and gradient-check drivers."""

import copy
import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import assign, load_checkpoint, save_checkpoint
from .data import (
    GeneratorConfig,
    generate_dataset,
    pair_deltas,
    sample_train_pair,
    select_inference_exemplars,
)
from .decoder import TPTConfig
from .errors import CheckpointError, ConfigError, NumericError
from .losses import LossWeights
from .metrics import evaluate_predictions
from .model import (
    AQAModel,
    compute_losses,
    intervals_from_arrays,
    intervals_to_arrays,
    pair_scores,
    pair_targets,
    reduce_predictions,
)
from .regressor import intervals_from_deltas

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    tpt: TPTConfig = field(default_factory=TPTConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    B: int = 4
    lr_backbone: float = 1e-4
    lr_head: float = 1e-3
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    difficulty_mode: bool = False
    part_generator: str = "tpt"
    fusion: str = "part-wise"
    order_loss: str = "rank"
    diversity_sigma: float = 1.0
    detach_center: bool = False
    exemplar_reduce: str = "mean"
    M_ex: int = 10
    output_dir: str = None

    def validate(self):
        self.generator.validate()
        self.tpt.validate()
        self.weights.validate()
        if self.B < 1 or self.batch_size < 1 or self.epochs < 0 or self.M_ex < 1:
            raise ConfigError("B, batch_size and M_ex must be >= 1 and epochs >= 0")
        if self.difficulty_mode and not self.generator.difficulty_levels:
            raise ConfigError("difficulty_mode needs generator.difficulty_levels")
        if self.order_loss not in ("rank", "diversity"):
            raise ConfigError(f"unknown order_loss {self.order_loss!r}")
        if self.exemplar_reduce not in ("mean", "median"):
            raise ConfigError(f"unknown exemplar_reduce {self.exemplar_reduce!r}")
        return self

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    # key = value text format, dotted keys for nested sections

    def to_text(self):
        lines = []

        def walk(prefix, obj):
            for f in dataclasses.fields(obj):
                value = getattr(obj, f.name)
                key = f"{prefix}{f.name}"
                if dataclasses.is_dataclass(value):
                    walk(key + ".", value)
                else:
                    if isinstance(value, tuple):
                        value = list(value)
                    lines.append(f"{key} = {json.dumps(value)}")

        walk("", self)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, overrides=()):
        config = cls()
        pairs = []
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                pairs.append(line)
        config.apply_overrides(list(pairs) + list(overrides))
        return config

    def apply_overrides(self, items):
        for item in items:
            if "=" not in item:
                raise ConfigError(f"expected key = value, got {item!r}")
            key, raw = (s.strip() for s in item.split("=", 1))
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            set_path(self, key, value)
        return self


def set_path(obj, dotted, value):
    *parents, leaf = dotted.split(".")
    for name in parents:
        if not hasattr(obj, name):
            raise ConfigError(f"unknown config key {dotted!r}")
        obj = getattr(obj, name)
    if not dataclasses.is_dataclass(obj) or leaf not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config key {dotted!r}")
    current = getattr(obj, leaf)
    if isinstance(current, tuple) and isinstance(value, list):
        value = tuple(value)
    elif leaf == "difficulty_levels" and isinstance(value, list):
        value = tuple(value)
    elif isinstance(current, bool) and not isinstance(value, bool):
        raise ConfigError(f"{dotted} expects true/false")
    elif isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    setattr(obj, leaf, value)


def config_from_dict(d):
    d = copy.deepcopy(d)
    gen = d.pop("generator")
    gen["score_range"] = tuple(gen["score_range"])
    if gen.get("difficulty_levels") is not None:
        gen["difficulty_levels"] = tuple(gen["difficulty_levels"])
    return RunConfig(
        generator=GeneratorConfig(**gen),
        tpt=TPTConfig(**d.pop("tpt")),
        weights=LossWeights(**d.pop("weights")),
        **d,
    )


@dataclass
class RunArtifacts:
    model: AQAModel
    config: RunConfig
    config_hash: str
    history: list
    reports: list
    best_epoch: int
    initial_loss: float
    run_dir: str = None
    checkpoint: str = None


# ------------------------------------------------------------------- building


def build_model(config, D=None, T=None):
    D = config.generator.D if D is None else D
    T = config.generator.T if T is None else T
    rng = np.random.default_rng([config.seed, 1])
    return AQAModel(D, T, config.tpt, config.B, rng, config.part_generator, config.fusion)


def fit_intervals(model, train, config):
    model.intervals = intervals_from_deltas(pair_deltas(train, config.difficulty_mode), config.B)
    return model.intervals


def batch_loss(model, pairs, config):
    """Forward a list of TrainPairs; returns ``(total, components)``."""
    test_clips = np.stack([p.test.clips for p in pairs])
    ex_clips = np.stack([p.exemplar.clips for p in pairs])
    probs, regs, test_ps, ex_ps = model.forward_pairs(test_clips, ex_clips)
    labels, gammas = pair_targets(pairs, model.intervals, config.difficulty_mode)
    return compute_losses(
        probs, regs, labels, gammas, [test_ps, ex_ps], config.weights,
        config.order_loss, config.diversity_sigma, config.detach_center,
    )


def _check_finite(total, comp, epoch, step):
    values = {k: float(v.item()) for k, v in comp.items()}
    if not np.isfinite(total.item()) or not all(np.isfinite(list(values.values()))):
        items = ", ".join(f"{k}={v:.6g}" for k, v in values.items())
        raise NumericError(f"non-finite loss at epoch {epoch} step {step}: total={total.item()}, {items}")
    return values


# ------------------------------------------------------------------ training


def train(config, data=None, log_every=0):
    """Train per ``config``; returns :class:`RunArtifacts` with the best-by-validation model."""
    config.validate()
    data = generate_dataset(config.generator) if data is None else data
    train_set = data["train"]
    val_set = data.get("val") or data.get("test")
    config_hash = config.config_hash()
    model = build_model(config)
    fit_intervals(model, train_set, config)
    backbone, head = model.param_groups()
    opt = ad.Adam([(backbone, config.lr_backbone), (head, config.lr_head)])
    rng = np.random.default_rng([config.seed, 2])
    s_range = config.generator.declared_range()

    run_dir = None
    if config.output_dir:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = os.path.join(config.output_dir, f"{config_hash}-{stamp}")
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "config.txt"), "w") as fh:
            fh.write(f"# config_hash = {config_hash}\n")
            fh.write(config.to_text())
        model.intervals.to_csv(os.path.join(run_dir, "intervals.csv"))

    initial_loss = _initial_loss(model, train_set, config)
    history, reports = [], []
    best_state, best_rho, best_epoch = model.state(), -np.inf, -1
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        sums, steps = {}, 0
        for start in range(0, len(order), config.batch_size):
            tests = [train_set[i] for i in order[start:start + config.batch_size]]
            pairs = [sample_train_pair(train_set, rng, t, config.difficulty_mode) for t in tests]
            opt.zero_grad()
            with ad.Tape() as tape:
                total, comp = batch_loss(model, pairs, config)
                values = _check_finite(total, comp, epoch, steps)
                tape.backward(total)
            opt.step()
            values["total"] = float(total.item())
            for k, v in values.items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
            if log_every and steps % log_every == 0:
                log.info("epoch %d step %d loss %.5f", epoch, steps, values["total"])
        row = {k: v / max(steps, 1) for k, v in sums.items()}
        row["epoch"] = epoch
        report = evaluate(model, val_set, train_set, config, split="val", s_range=s_range)
        report.epoch, report.config_hash = epoch, config_hash
        row["val_spearman"] = report.spearman
        history.append(row)
        reports.append(report)
        log.info("epoch %d train %.5f val rho %.4f", epoch, row["total"], report.spearman)
        if report.spearman > best_rho:
            best_rho, best_epoch, best_state = report.spearman, epoch, model.state()
        if run_dir:
            report.append_csv(os.path.join(run_dir, "history.csv"))
    model.load_state(best_state)

    checkpoint = None
    if run_dir:
        checkpoint = os.path.join(run_dir, "checkpoint.npz")
        save_model(checkpoint, model, config)
        with open(os.path.join(run_dir, "reports.jsonl"), "w") as fh:
            for r in reports:
                fh.write(r.to_json() + "\n")
    return RunArtifacts(
        model=model, config=config, config_hash=config_hash, history=history,
        reports=reports, best_epoch=best_epoch, initial_loss=initial_loss,
        run_dir=run_dir, checkpoint=checkpoint,
    )


def _initial_loss(model, train_set, config):
    rng = np.random.default_rng([config.seed, 3])
    n = min(config.batch_size, len(train_set))
    pairs = [sample_train_pair(train_set, rng, train_set[i], config.difficulty_mode) for i in range(n)]
    total, _ = batch_loss(model, pairs, config)
    return float(total.item())


# ---------------------------------------------------------------- evaluation


def decode_parts(model, videos, chunk=64):
    """Forward-only decode; returns ``{video_id: (K, d) array}``."""
    out = {}
    for start in range(0, len(videos), chunk):
        batch = videos[start:start + chunk]
        parts = model.decode(np.stack([v.clips for v in batch])).parts.data
        for v, p in zip(batch, parts):
            out[v.video_id] = p
    return out


def predict(model, videos, pool, config, seed=None):
    """Multi-exemplar predictions for ``videos`` against exemplars drawn from ``pool``."""
    seed = config.seed if seed is None else seed
    chosen = [
        select_inference_exemplars(pool, v, config.M_ex, seed, config.difficulty_mode)
        for v in videos
    ]
    needed = {v.video_id: v for v in videos}
    for ex in chosen:
        needed.update({e.video_id: e for e in ex})
    parts = decode_parts(model, list(needed.values()))
    test_parts = np.concatenate([np.repeat(parts[v.video_id][None], len(ex), 0) for v, ex in zip(videos, chosen)])
    ex_parts = np.concatenate([np.stack([parts[e.video_id] for e in ex]) for ex in chosen])
    probs, regs = model.regressor(test_parts, ex_parts)
    preds, start = [], 0
    for v, ex in zip(videos, chosen):
        sl = slice(start, start + len(ex))
        scores = pair_scores(probs.data[sl], regs.data[sl], model.intervals, ex, v, config.difficulty_mode)
        preds.append(reduce_predictions(scores, config.exemplar_reduce))
        start += len(ex)
    return np.array(preds)


def evaluate(model, videos, pool, config, split="test", s_range=None, seed=None):
    """EvalReport for ``videos`` using the inference exemplar protocol."""
    s_range = config.generator.declared_range() if s_range is None else s_range
    preds = predict(model, videos, pool, config, seed)
    truth = np.array([v.score for v in videos])
    return evaluate_predictions(
        preds, truth, s_range[0], s_range[1], split=split, config_hash=config.config_hash()
    )


def save_model(path, model, config):
    meta = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "intervals": intervals_to_arrays(model.intervals),
    }
    save_checkpoint(path, model.named(), meta)


def load_model(path):
    """Rebuild an :class:`AQAModel` and its RunConfig from a checkpoint."""
    arrays, meta = load_checkpoint(path)
    if "config" not in meta:
        raise CheckpointError(f"{path} carries no run config")
    config = config_from_dict(meta["config"])
    model = build_model(config)
    assign(model.named(), arrays)
    model.intervals = intervals_from_arrays(meta["intervals"])
    return model, config


def evaluate_checkpoint(path, split="test", data=None, seed=None):
    model, config = load_model(path)
    data = generate_dataset(config.generator) if data is None else data
    return evaluate(model, data[split], data["train"], config, split=split, seed=seed)


# ------------------------------------------------------------------ ablation

VARIANTS = {
    "baseline": {"part_generator": "baseline"},
    "adaptive_pooling": {"part_generator": "adaptive_pooling"},
    "temporal_conv": {"part_generator": "temporal_conv"},
    "tpt": {},
    "tpt_no_attention_losses": {"weights.rank": 0.0, "weights.sparsity": 0.0},
    "tpt_no_rank": {"weights.rank": 0.0},
    "tpt_no_sparsity": {"weights.sparsity": 0.0},
    "diversity": {"order_loss": "diversity"},
    "pe_memory": {"tpt.positional_encoding": "memory"},
    "pe_memory_query": {"tpt.positional_encoding": "memory+query"},
    "part_enhanced_holistic": {"fusion": "part-enhanced-holistic"},
}


def variant_config(config, name):
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}")
    cfg = copy.deepcopy(config)
    cfg.output_dir = None
    for key, value in VARIANTS[name].items():
        set_path(cfg, key, value)
    return cfg.validate()


def ablate(config, variants, data=None, path=None):
    """Train and test each variant on the same data and seed; returns table rows."""
    configs = [variant_config(config, v) for v in variants]
    data = generate_dataset(config.generator) if data is None else data
    rows = []
    for name, cfg in zip(variants, configs):
        run = train(cfg, data)
        report = evaluate(run.model, data["test"], data["train"], cfg)
        rows.append({"variant": name, "spearman": report.spearman, "relative_l2": report.relative_l2})
        log.info("variant %s rho %.4f", name, report.spearman)
    if path:
        write_table(path, rows)
    return rows


def write_table(path, rows):
    with open(path, "w") as fh:
        fh.write("variant,spearman,relative_l2_x100\n")
        for r in rows:
            fh.write(f"{r['variant']},{r['spearman']:.6f},{100 * r['relative_l2']:.6f}\n")


# ----------------------------------------------------------- gradient check


def tiny_config(**overrides):
    """T=6, K=3, d=16, two layers: small enough to finite-difference every weight."""
    cfg = RunConfig(
        generator=GeneratorConfig(T=6, D=8, K_true=3, num_videos={"train": 6}, noise_std=0.1),
        tpt=TPTConfig(K=3, d=16, L=2, ffn_dim=32, self_attention_heads=2),
        batch_size=2,
    )
    cfg.apply_overrides(f"{k}={json.dumps(v)}" for k, v in overrides.items())
    return cfg.validate()


@dataclass
class GradcheckReport:
    errors: dict
    max_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self):
        return self.max_error < self.tolerance

    def lines(self):
        out = [f"{name}: {err:.3e}" for name, err in self.errors.items()]
        status = "PASS" if self.passed else "FAIL"
        out.append(f"max relative error {self.max_error:.3e} ({status}, tol {self.tolerance:g}), {self.seconds:.1f}s")
        return out


def gradcheck(config=None, step=1e-6, tolerance=1e-4):
    """Compare every parameter gradient of the full loss against central differences."""
    config = tiny_config() if config is None else config.validate()
    start = time.perf_counter()
    data = generate_dataset(config.generator)
    train_set = data["train"]
    model = build_model(config)
    fit_intervals(model, train_set, config)
    rng = np.random.default_rng([config.seed, 4])
    pairs = [sample_train_pair(train_set, rng, train_set[i], config.difficulty_mode)
             for i in range(config.batch_size)]

    with ad.Tape() as tape:
        total, _ = batch_loss(model, pairs, config)
        tape.backward(total)
    analytic = {name: (None if p.grad is None else p.grad.copy()) for name, p in model.named_parameters()}

    def f():
        return float(batch_loss(model, pairs, config)[0].item())

    errors = {}
    for name, p in model.named_parameters():
        numeric = ad.numerical_gradient(f, p.data, step)
        errors[name] = ad.relative_error(analytic[name], numeric)
    return GradcheckReport(errors, max(errors.values()), tolerance, time.perf_counter() - start)


# --------------------------------------------------------- attention export


def write_attention_csv(path, attention):
    K, T = attention.shape
    with open(path, "w") as fh:
        fh.write("query," + ",".join(f"clip_{t}" for t in range(1, T + 1)) + "\n")
        for k in range(K):
            fh.write(f"{k + 1}," + ",".join(f"{a:.9f}" for a in attention[k]) + "\n")


def write_pgm(path, attention, cell=8):
    """Binary 8-bit PGM, brightness proportional to attention / row-map maximum."""
    peak = attention.max()
    img = np.zeros_like(attention) if peak <= 0 else attention / peak
    img = np.round(255 * img).astype(np.uint8)
    img = np.kron(img, np.ones((cell, cell), dtype=np.uint8))
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())


def export_attention(model, videos, out_dir, cell=8):
    """Per-video, per-layer CSV and PGM dumps of the cross-attention maps."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for v in videos:
        partset = model.decode(v.clips)
        for i, alpha in enumerate(partset.attention):
            stem = os.path.join(out_dir, f"video{v.video_id:05d}_layer{i + 1}")
            write_attention_csv(stem + ".csv", alpha.data[0])
            write_pgm(stem + ".pgm", alpha.data[0], cell)
            written.append(stem)
    return written
