import math

import numpy as np
import pytest

from tpt_aqa import autodiff as ad
from tpt_aqa.checkpoint import load_checkpoint, save_checkpoint
from tpt_aqa.cli import main
from tpt_aqa.data import GeneratorConfig, generate_dataset, sample_train_pair, select_inference_exemplars
from tpt_aqa.decoder import TPTConfig
from tpt_aqa.errors import CheckpointError, ConfigError, ContractError
from tpt_aqa.harness import (
    RunConfig,
    ablate,
    batch_loss,
    build_model,
    evaluate,
    evaluate_checkpoint,
    export_attention,
    fit_intervals,
    gradcheck,
    load_model,
    predict,
    save_model,
    tiny_config,
    train,
    variant_config,
)
from tpt_aqa.metrics import relative_l2
from tpt_aqa.model import multi_exemplar_predict, reduce_predictions
from tpt_aqa.regressor import decode_score


def small_config(**overrides):
    cfg = RunConfig(
        generator=GeneratorConfig(T=8, D=8, K_true=3, num_videos={"train": 24, "val": 12, "test": 12}),
        tpt=TPTConfig(K=3, d=16, L=2, ffn_dim=16, self_attention_heads=2),
        epochs=2,
        batch_size=4,
        M_ex=5,
    )
    for key, value in overrides.items():
        cfg.apply_overrides([f"{key}={value}"])
    return cfg.validate()


@pytest.fixture(scope="module")
def small_run():
    cfg = small_config()
    data = generate_dataset(cfg.generator)
    return cfg, data, train(cfg, data)


# ------------------------------------------------------------------- config


def test_config_text_round_trip():
    cfg = small_config()
    cfg.generator.difficulty_levels = (2.0, 3.0)
    cfg.difficulty_mode = True
    back = RunConfig.from_text(cfg.to_text())
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()


def test_config_overrides_and_errors():
    cfg = RunConfig.from_text("epochs = 3\n# comment\ntpt.K = 2\n", ["lr_head=0.01"])
    assert (cfg.epochs, cfg.tpt.K, cfg.lr_head) == (3, 2, 0.01)
    with pytest.raises(ConfigError):
        RunConfig().apply_overrides(["tpt.nope=1"])
    with pytest.raises(ConfigError):
        RunConfig().apply_overrides(["epochs"])


def test_hash_ignores_output_dir():
    a, b = small_config(), small_config()
    b.output_dir = "/tmp/elsewhere"
    assert a.config_hash() == b.config_hash()
    assert small_config(seed=1).config_hash() != a.config_hash()


# ----------------------------------------------------------------- training


def test_initial_classification_loss_is_four_log_two():
    cfg = small_config(**{"weights.rank": 0.0, "weights.sparsity": 0.0, "weights.reg": 0.0})
    data = generate_dataset(cfg.generator)
    model = build_model(cfg)
    fit_intervals(model, data["train"], cfg)
    # zero the last layer of the classification head: sigmoid(0) = 1/2 on every group
    for p in (model.regressor.cls_head.fc2.weight, model.regressor.cls_head.fc2.bias):
        p.data[...] = 0.0
    rng = np.random.default_rng(0)
    pairs = [sample_train_pair(data["train"], rng) for _ in range(6)]
    total, comp = batch_loss(model, pairs, cfg)
    assert total.item() == pytest.approx(4 * math.log(2), abs=1e-12)
    assert comp["cls"].item() == pytest.approx(4 * math.log(2), abs=1e-12)


def test_untrained_classification_loss_near_four_log_two():
    cfg = small_config(**{"weights.rank": 0.0, "weights.sparsity": 0.0, "weights.reg": 0.0})
    data = generate_dataset(cfg.generator)
    model = build_model(cfg)
    fit_intervals(model, data["train"], cfg)
    rng = np.random.default_rng(0)
    pairs = [sample_train_pair(data["train"], rng) for _ in range(8)]
    total, _ = batch_loss(model, pairs, cfg)
    assert abs(total.item() - 4 * math.log(2)) < 0.5


def test_loss_is_weighted_sum_of_components():
    cfg = small_config(**{"weights.cls": 0.7, "weights.reg": 1.3, "weights.rank": 0.4, "weights.sparsity": 0.2})
    data = generate_dataset(cfg.generator)
    model = build_model(cfg)
    fit_intervals(model, data["train"], cfg)
    rng = np.random.default_rng(1)
    pairs = [sample_train_pair(data["train"], rng) for _ in range(4)]
    total, comp = batch_loss(model, pairs, cfg)
    w = cfg.weights
    expected = (w.cls * comp["cls"].item() + w.reg * comp["reg"].item()
                + w.rank * comp["rank"].item() + w.sparsity * comp["sparsity"].item())
    assert abs(total.item() - expected) < 1e-12


def test_same_seed_same_epoch_zero_loss(small_run):
    cfg, data, run = small_run
    again = train(small_config(), data)
    assert again.initial_loss == run.initial_loss
    assert again.history[0]["total"] == run.history[0]["total"]


def test_history_and_best_epoch(small_run):
    cfg, _, run = small_run
    assert len(run.history) == len(run.reports) == cfg.epochs
    best = max(range(cfg.epochs), key=lambda e: run.reports[e].spearman)
    assert run.best_epoch == best
    assert all(r.config_hash == run.config_hash for r in run.reports)


def test_report_n_equals_split_size(small_run):
    cfg, data, run = small_run
    report = evaluate(run.model, data["test"], data["train"], cfg)
    assert report.N == len(data["test"])
    assert report == evaluate(run.model, data["test"], data["train"], cfg)


def test_zero_delta_model_matches_oracle(small_run):
    cfg, data, run = small_run
    model = run.model
    iv = model.intervals
    zero_bin = int(np.searchsorted(iv.left, 0.0, side="right") - 1)
    assert iv.left[zero_bin] == pytest.approx(0.0, abs=1e-12)

    class ZeroDelta:
        def __call__(self, parts, exemplar_parts):
            n = len(parts)
            probs = np.zeros((n, iv.B))
            probs[:, zero_bin] = 1.0
            return ad.Tensor(probs), ad.Tensor(np.zeros((n, iv.B)))

    real = model.regressor
    model.regressor = ZeroDelta()
    try:
        report = evaluate(model, data["test"], data["train"], cfg)
    finally:
        model.regressor = real
    preds, truth = [], []
    for v in data["test"]:
        ex = select_inference_exemplars(data["train"], v, cfg.M_ex, cfg.seed)
        preds.append(sum(e.score for e in ex) / len(ex))
        truth.append(v.score)
    expected = sum((abs(s - p) / 100.0) ** 2 for p, s in zip(preds, truth)) / len(truth)
    assert report.relative_l2 == pytest.approx(expected, abs=1e-15)
    assert report.relative_l2 == pytest.approx(relative_l2(preds, truth, 0, 100), abs=1e-15)


def test_non_finite_loss_aborts_with_components():
    cfg = small_config()
    data = generate_dataset(cfg.generator)
    data["train"][0].clips[0, 0] = np.nan
    with pytest.raises(FloatingPointError, match="non-finite"):
        train(cfg, data)


@pytest.mark.slow
def test_training_improves_over_init():
    cfg = RunConfig()
    data = generate_dataset(cfg.generator)
    frozen = build_model(cfg)
    fit_intervals(frozen, data["train"], cfg)
    init_rho = evaluate(frozen, data["val"], data["train"], cfg, split="val").spearman
    run = train(cfg, data)
    assert run.reports[run.best_epoch].spearman > init_rho


# ---------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip_preserves_evaluation(tmp_path, small_run):
    cfg, data, run = small_run
    before = evaluate(run.model, data["test"], data["train"], cfg)
    path = tmp_path / "m.npz"
    save_model(path, run.model, cfg)
    model, config = load_model(path)
    assert config == cfg
    after = evaluate(model, data["test"], data["train"], config)
    assert after == before
    assert evaluate_checkpoint(path, data=data) == before
    for (name, a), (_, b) in zip(run.model.named_parameters(), model.named_parameters()):
        assert a.data.shape == b.data.shape, name
        np.testing.assert_array_equal(a.data, b.data)


def test_checkpoint_scalar_parameters_keep_shape(tmp_path):
    save_checkpoint(tmp_path / "s.npz", {"a": np.array(1.5), "b": np.ones((2, 3))})
    params, _ = load_checkpoint(tmp_path / "s.npz")
    assert params["a"].shape == () and params["b"].shape == (2, 3)


def test_checkpoint_shape_mismatch(tmp_path, small_run):
    cfg, _, run = small_run
    path = tmp_path / "m.npz"
    save_model(path, run.model, cfg)
    params, meta = load_checkpoint(path)
    params["regressor.cls_head.fc2.bias"] = np.zeros(7)
    save_checkpoint(path, params, meta)
    with pytest.raises(CheckpointError, match="shape"):
        load_model(path)


def test_run_directory_artifacts(tmp_path):
    cfg = small_config(epochs=1)
    cfg.output_dir = str(tmp_path)
    run = train(cfg, generate_dataset(cfg.generator))
    assert run.run_dir.split("/")[-1].startswith(run.config_hash)
    for name in ("config.txt", "intervals.csv", "history.csv", "checkpoint.npz", "reports.jsonl"):
        assert (tmp_path / run.run_dir.split("/")[-1] / name).exists()
    assert run.config_hash in (tmp_path / run.run_dir.split("/")[-1] / "config.txt").read_text()


# ------------------------------------------------------------------ ablation


def test_empty_variant_list_writes_header_only(tmp_path):
    path = tmp_path / "t.csv"
    assert ablate(small_config(), [], path=str(path)) == []
    assert path.read_text() == "variant,spearman,relative_l2_x100\n"


def test_unknown_variant():
    with pytest.raises(ConfigError):
        ablate(small_config(), ["tpt", "nope"])


def test_ablation_rows(tmp_path):
    path = tmp_path / "t.csv"
    rows = ablate(small_config(epochs=1), ["baseline", "tpt_no_rank"], path=str(path))
    assert [r["variant"] for r in rows] == ["baseline", "tpt_no_rank"]
    assert len(path.read_text().strip().splitlines()) == 3


def test_baseline_bypasses_decoder():
    cfg = variant_config(small_config(), "baseline")
    model = build_model(cfg)
    assert model.generator.decoder_parameters() == []
    names = [n for n, _ in model.named_parameters() if n.startswith("generator.")]
    assert all(n.startswith("generator.embed.") for n in names)
    data = generate_dataset(cfg.generator)
    fit_intervals(model, data["train"], cfg)
    pairs = [sample_train_pair(data["train"], np.random.default_rng(0)) for _ in range(2)]
    with ad.Tape() as tape:
        total, comp = batch_loss(model, pairs, cfg)
        tape.backward(total)
    assert comp["rank"].item() == 0.0 and comp["sparsity"].item() == 0.0
    # the TPT decoder, by contrast, receives gradient
    tpt = build_model(small_config())
    fit_intervals(tpt, data["train"], cfg)
    with ad.Tape() as tape:
        tape.backward(batch_loss(tpt, pairs, small_config())[0])
    assert np.abs(tpt.generator.queries.grad).sum() > 0


@pytest.mark.parametrize("variant", ["adaptive_pooling", "temporal_conv", "tpt"])
def test_part_generators_emit_k_by_d(variant):
    cfg = variant_config(small_config(), variant)
    model = build_model(cfg)
    clips = generate_dataset(cfg.generator)["test"][0].clips
    assert model.decode(clips).parts.shape == (1, cfg.tpt.K, cfg.tpt.d)


# ------------------------------------------------------------ gradient check


def test_gradcheck_full_loss():
    report = gradcheck()
    assert report.passed, report.lines()
    model = build_model(tiny_config())
    assert list(report.errors) == [n for n, _ in model.named_parameters()]
    assert len(set(report.errors)) == len(report.errors)


def test_gradcheck_classification_only():
    cfg = tiny_config(**{"weights.reg": 0.0, "weights.rank": 0.0, "weights.sparsity": 0.0})
    assert gradcheck(cfg).passed


# -------------------------------------------------------------------- export


def test_attention_export(tmp_path, small_run):
    cfg, data, run = small_run
    stems = export_attention(run.model, data["test"][:2], str(tmp_path))
    assert len(stems) == 2 * cfg.tpt.L
    lines = open(stems[0] + ".csv").read().strip().splitlines()
    assert lines[0] == "query," + ",".join(f"clip_{t}" for t in range(1, cfg.generator.T + 1))
    assert len(lines) == 1 + cfg.tpt.K
    rows = np.array([[float(x) for x in line.split(",")[1:]] for line in lines[1:]])
    np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-8)
    raw = open(stems[0] + ".pgm", "rb").read()
    header = f"P5\n{8 * cfg.generator.T} {8 * cfg.tpt.K}\n255\n".encode()
    assert raw.startswith(header)
    assert len(raw) == len(header) + 64 * cfg.generator.T * cfg.tpt.K
    assert max(raw[len(header):]) == 255


# ----------------------------------------------------------------------- cli


def test_cli_round_trip(tmp_path, capsys):
    common = ["--set", 'generator.num_videos={"train": 16, "val": 6, "test": 6}',
              "--set", "generator.T=8", "--set", "generator.K_true=3"]
    model = ["--set", "tpt.K=3", "--set", "tpt.d=16", "--set", "tpt.ffn_dim=16",
             "--set", "tpt.self_attention_heads=2", "--set", "epochs=1", "--set", "M_ex=4"]
    assert main(["gen-data", *common, "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "manifest.csv").exists()
    assert main(["train", *common, *model, "--data", str(tmp_path / "d"), "--out", str(tmp_path / "runs")]) == 0
    (ckpt,) = list((tmp_path / "runs").glob("*/checkpoint.npz"))
    capsys.readouterr()
    assert main(["eval", str(ckpt), "--data", str(tmp_path / "d")]) == 0
    assert '"N": 6' in capsys.readouterr().out
    assert main(["export-attention", str(ckpt), "--data", str(tmp_path / "d"),
                 "--count", "1", "--out", str(tmp_path / "att")]) == 0
    assert len(list((tmp_path / "att").glob("*.pgm"))) == 2
    assert main(["ablate", *common, *model, "--variants", "bogus"]) == 2


# ---------------------------------------------------------- multi-exemplar


def test_reduce_hand_listed_predictions():
    assert reduce_predictions([80.0, 82.0, 84.0]) == 82.0
    assert reduce_predictions([80.0, 82.0, 90.0], "median") == 82.0
    assert reduce_predictions([71.5] * 10) == 71.5
    with pytest.raises(ConfigError):
        reduce_predictions([1.0], "max")


def test_multi_exemplar_single_and_empty(small_run):
    cfg, data, run = small_run
    test, ex = data["test"][0], data["train"][3]
    probs, regs, _, _ = run.model.forward_pairs(test.clips[None], ex.clips[None])
    single = decode_score(probs.data[0], regs.data[0], run.model.intervals, ex.score)
    assert multi_exemplar_predict(run.model, test, [ex]) == pytest.approx(single, abs=1e-12)
    with pytest.raises(ContractError):
        multi_exemplar_predict(run.model, test, [])


def test_batched_predict_matches_per_video_path(small_run):
    cfg, data, run = small_run
    batched = predict(run.model, data["test"][:4], data["train"], cfg)
    for v, p in zip(data["test"][:4], batched):
        ex = select_inference_exemplars(data["train"], v, cfg.M_ex, cfg.seed)
        assert p == pytest.approx(multi_exemplar_predict(run.model, v, ex), abs=1e-9)
