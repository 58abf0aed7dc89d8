import numpy as np
import pytest

from travelrec import ablation
from travelrec.config import ConfigError, RunConfig, load_config, parse_config_text
from travelrec.data import generate_synthetic, temporal_split
from travelrec.evaluation import evaluate, popularity_baseline
from travelrec.model import RecommenderModel
from travelrec.optim import ParameterStore
from travelrec.sequence import TASKS, Vocabulary
from travelrec.training import (
    TrainingAborted,
    load_checkpoint,
    read_loss_log,
    resume,
    save_checkpoint,
    train,
)


def tiny_config(**kw):
    base = dict(
        users=40,
        pois=150,
        gids=15,
        categories=8,
        arids=4,
        weathers=5,
        actions=4,
        modes=4,
        embed_dim=12,
        depth=2,
        streams=2,
        max_seq_len=18,
        batch_size=16,
        epochs=2,
        seed=5,
    )
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def tiny_world():
    config = tiny_config()
    dataset = generate_synthetic(config.generator_settings(), config.seed)
    return config, dataset


def test_config_defaults_match_published_settings():
    config = RunConfig()
    assert config.embed_dim == 96
    assert config.max_seq_len == 120
    assert config.batch_size == 64
    assert config.learning_rate == 1e-3
    assert config.depth == 3
    assert config.shared_experts == 2 and config.private_experts == 1
    assert config.interactions_mean == 25.0


def test_config_text_round_trip(tmp_path):
    config = tiny_config(learning_rate=5e-4, precision="float32", variant="no_TSF")
    path = tmp_path / "run.cfg"
    path.write_text(config.to_text(), encoding="utf-8")
    loaded = load_config(path)
    assert loaded == config


def test_config_parser_rejects_unknown_keys_and_bad_values():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("nonsense = 1\n")
    with pytest.raises(ConfigError, match="bad value"):
        parse_config_text("embed_dim = soup\n")
    with pytest.raises(ConfigError, match="precision"):
        parse_config_text("precision = float16\n")
    assert parse_config_text("# comment\n\nembed_dim = 4\n").embed_dim == 4


def test_training_writes_log_and_checkpoint(tmp_path, tiny_world):
    config, dataset = tiny_world
    state = train(config, dataset, tmp_path / "run")
    rows = read_loss_log(tmp_path / "run" / "loss_log.tsv")
    assert len(rows) == 2 * ((40 + 15) // 16)  # epochs * ceil(users/batch)
    assert all(np.isfinite(r[1]) for r in rows)
    assert set(rows[0][2]) == set(TASKS)
    assert (tmp_path / "run" / "checkpoint.npz").exists()


def test_identical_runs_produce_byte_identical_loss_logs(tmp_path, tiny_world):
    config, dataset = tiny_world
    train(config, dataset, tmp_path / "a")
    train(config, dataset, tmp_path / "b")
    assert (tmp_path / "a" / "loss_log.tsv").read_bytes() == (tmp_path / "b" / "loss_log.tsv").read_bytes()


def test_checkpoint_round_trip_is_bit_exact(tmp_path, tiny_world):
    config, dataset = tiny_world
    state = train(config, dataset, tmp_path / "run")
    ckpt = tmp_path / "run" / "checkpoint.npz"
    loaded_config, step, arrays = load_checkpoint(ckpt)
    assert loaded_config == config
    store = ParameterStore()
    vocab = Vocabulary.from_dataset(dataset)
    model = RecommenderModel(store, vocab, loaded_config.model_settings(), loaded_config.seed)
    store.load_state_arrays(arrays)
    for name in state.store.names():
        np.testing.assert_array_equal(store[name].data, state.store[name].data)
        assert store.slot(name).step == state.store.slot(name).step


def test_resume_reproduces_uninterrupted_run_bit_exactly(tmp_path, tiny_world):
    config, dataset = tiny_world
    full = train(config, dataset, tmp_path / "full")

    partial_config = tiny_config(max_steps=3)
    train(partial_config, dataset, tmp_path / "partial")
    _, step, _ = load_checkpoint(tmp_path / "partial" / "checkpoint.npz")
    assert step == 3

    # patch the saved config to the full horizon, then resume from step 3
    resumed_config = tiny_config()
    full_steps = 2 * ((40 + 15) // 16)
    state = resume(tmp_path / "partial" / "checkpoint.npz", dataset, tmp_path / "resumed")
    # the checkpoint str carries max_steps=3, so that run is already done;
    # instead replay manually: load, then continue training to the horizon
    from travelrec.training import prepare

    state2 = prepare(resumed_config, dataset)
    _, _, arrays = load_checkpoint(tmp_path / "partial" / "checkpoint.npz")
    state2.store.load_state_arrays(arrays)
    train(resumed_config, dataset, tmp_path / "resumed2", start_state=state2, start_step=3)

    full_rows = read_loss_log(tmp_path / "full" / "loss_log.tsv")
    resumed_rows = read_loss_log(tmp_path / "resumed2" / "loss_log.tsv")
    assert [r for r in full_rows if r[0] >= 3] == resumed_rows


def test_checkpoint_version_mismatch_rejected(tmp_path, tiny_world):
    config, dataset = tiny_world
    from travelrec import training

    state = train(config, dataset, tmp_path / "run")
    save_checkpoint(tmp_path / "bad.npz", state.store, config, 1)
    original = training.CHECKPOINT_VERSION
    training.CHECKPOINT_VERSION = "travelrec-ckpt-999"
    try:
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(tmp_path / "bad.npz")
    finally:
        training.CHECKPOINT_VERSION = original


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # the explosion is the point
def test_nan_loss_aborts_and_keeps_previous_checkpoint(tmp_path, tiny_world):
    config, dataset = tiny_world
    bad = tiny_config(learning_rate=1e18, max_steps=12, checkpoint_every=1)
    with pytest.raises(TrainingAborted, match="non-finite"):
        train(bad, dataset, tmp_path / "explode")
    assert (tmp_path / "explode" / "checkpoint.npz").exists()
    _, step, _ = load_checkpoint(tmp_path / "explode" / "checkpoint.npz")
    assert step >= 1  # an earlier checkpoint survived the abort


def test_evaluation_reports_all_tasks_and_exclusions(tmp_path, tiny_world):
    config, dataset = tiny_world
    state = train(config, dataset, tmp_path / "run")
    report = evaluate(state.model, dataset, state.split, state.vocab, config, "test")
    for key in ("when.acc", "when.mae", "how.acc", "how.bcr", "where.hr@1", "where.hr@5", "where.cir",
                "via.hr@1", "via.hr@5", "via.cir"):
        assert key in report.values
    assert report.values["where.hr@5"] >= report.values["where.hr@1"]
    assert report.values["where.cir"] <= 1.0 - report.values["where.hr@1"]
    n_eval = report.counts["when"]
    assert report.counts["how"] + report.excluded["how"] == n_eval
    assert report.counts["via"] + report.excluded["via"] == n_eval
    report_val = evaluate(state.model, dataset, state.split, state.vocab, config, "val")
    assert report_val.counts["when"] == n_eval


def test_popularity_baseline_bounded_and_deterministic(tiny_world):
    config, dataset = tiny_world
    vocab = Vocabulary.from_dataset(dataset)
    split = temporal_split(dataset)
    a = popularity_baseline(dataset, split, vocab, config, "test")
    b = popularity_baseline(dataset, split, vocab, config, "test")
    assert a.values == b.values
    assert 0.0 <= a.get("where", "hr@1") <= 1.0


@pytest.mark.parametrize("variant", ablation.VARIANTS)
def test_every_variant_builds_and_takes_one_step(tmp_path, tiny_world, variant):
    config, dataset = tiny_world
    cfg = tiny_config(max_steps=1, variant=variant)
    settings, active = cfg.resolved_model()
    state = train(cfg, dataset, tmp_path / variant, settings=settings, active_tasks=active)
    rows = read_loss_log(tmp_path / variant / "loss_log.tsv")
    assert len(rows) == 1 and np.isfinite(rows[0][1])
    if variant in ("no_When", "no_How", "no_Where", "no_Via"):
        dropped = variant[3:].lower()
        assert dropped not in rows[0][2]
        assert len(rows[0][2]) == 3
    else:
        assert len(rows[0][2]) == 4


def test_unknown_variant_rejected():
    with pytest.raises(ablation.UnknownVariant, match="no_TSF"):
        ablation.apply_variant(RunConfig().model_settings(), "bogus")


def test_untrained_model_scores_at_chance_level():
    # a fresh model's destination HR@1 is statistically indistinguishable
    # from mean(1 / candidate count) over at least 2000 eval samples
    import math

    from travelrec.evaluation import eval_sequences
    from travelrec.objective import build_task_targets
    from travelrec.sequence import batchify
    from travelrec.training import prepare

    config = RunConfig(
        users=2300, pois=300, gids=30, categories=10, arids=5,
        embed_dim=12, depth=2, max_seq_len=60, batch_size=64, seed=9,
    )
    dataset = generate_synthetic(config.generator_settings(), config.seed)
    state = prepare(config, dataset)
    report = evaluate(state.model, dataset, state.split, state.vocab, config, "test")

    sequences = eval_sequences(dataset, state.split, state.vocab, config.max_seq_len, "test")
    users_by_id = {u.user_id: u for u in dataset.users}
    inverse_counts = []
    for batch in batchify(sequences, state.vocab, users_by_id, config.batch_size):
        targets = build_task_targets(batch, "where", dataset, state.vocab, config.seed)
        inverse_counts.extend(1.0 / targets.candidate_counts())
    n = len(inverse_counts)
    assert n >= 2000
    chance = float(np.mean(inverse_counts))
    sigma = math.sqrt(chance * (1.0 - chance) / n)
    assert abs(report.get("where", "hr@1") - chance) <= 5.0 * sigma


def test_constructed_memorizer_hits_exactly_one():
    # hand-set weights that copy the history's item indicator into the query:
    # identity POI table, pass-through values, uniform positive score bias,
    # identity output path; on a one-POI-per-user log HR@1 is exactly 1
    from travelrec.model import ModelSettings, RecommenderModel
    from travelrec.optim import ParameterStore
    from travelrec.sequence import TASKS as ALL_TASKS

    config = RunConfig(
        users=24, pois=40, gids=6, categories=4, arids=3, weathers=4,
        actions=3, modes=3, p_fav=1.0, interactions_mean=10.0,
        embed_dim=40, depth=1, max_seq_len=30, batch_size=24, seed=21,
    )
    dataset = generate_synthetic(config.generator_settings(), config.seed)
    vocab = Vocabulary.from_dataset(dataset)
    assert vocab.poi.size == config.embed_dim

    settings = ModelSettings(
        width=40, depth=1, streams=1, max_len=30, tasks=ALL_TASKS,
        use_hyper=False, tsg_task_gating=False,
    )
    store = ParameterStore()
    model = RecommenderModel(store, vocab, settings, config.seed)
    for name in store.names():
        store[name].data[:] = 0.0
    c = settings.width
    store["emb.poi"].data[:] = 0.5 * np.eye(c)
    f1 = store["layer0.att.f1.w"].data
    f1[:, c : 2 * c] = np.eye(c)  # values pass the token through
    store["layer0.att.f1.b"].data[0:c] = 1.0  # uniform gate
    store["layer0.att.bias.pos"].data[:] = 2.0  # uniform positive scores
    store["layer0.att.f2.w"].data[:] = np.eye(c)
    store["head.shared0.w"].data[:] = np.eye(c)
    store["head.filter.b2"].data[:] = 700.0  # feature gate saturates to 1

    split = temporal_split(dataset)
    report = evaluate(model, dataset, split, vocab, config, "test")
    assert report.get("where", "hr@1") == 1.0


def test_depth_scaling_smoke_runs_and_logs(tmp_path, tiny_world):
    # shallow depths complete with finite losses; results land in a figure
    from travelrec import report

    _, dataset = tiny_world
    final_losses = {}
    for depth in (1, 2, 4):
        cfg = tiny_config(depth=depth, max_steps=6)
        train(cfg, dataset, tmp_path / f"depth{depth}")
        rows = read_loss_log(tmp_path / f"depth{depth}" / "loss_log.tsv")
        assert np.isfinite(rows[-1][1])
        final_losses[depth] = rows[-1][1]
    report.render_depth_scaling(final_losses, tmp_path / "depth_scaling.png")
    assert (tmp_path / "depth_scaling.png").exists()
