import numpy as np
import pytest
from scipy import stats

from conftest import small_config
from groundcl import curriculum
from groundcl.checkpoint import from_bytes, load_checkpoint, to_bytes
from groundcl.config import RunMode, valid_modes
from groundcl.errors import ConfigError, NonFiniteLoss
from groundcl.curriculum import (RNG_STREAMS, LogRow, Trainer, TrainingLog, run_ablation,
                                 run_baseline, run_gcl, split_train_test)
from groundcl.taskgen import generate_task_pool

TEACHER_MODES = [m for m in valid_modes() if RunMode(m).uses_teacher]


def test_split_sizes_and_determinism():
    tasks = generate_task_pool(10, 1)
    train, test = split_train_test(tasks, 0.7, 5)
    assert len(train) == 7 and len(test) == 3
    again = split_train_test(tasks, 0.7, 5)
    assert train.ids() == again[0].ids() and test.ids() == again[1].ids()


def test_split_300_is_disjoint_and_complete():
    ids = [f"t{i}" for i in range(300)]

    class Stub:
        def __init__(self, i):
            self.id = i
    train, test = split_train_test([Stub(i) for i in ids], 0.7, 0)
    assert (len(train), len(test)) == (210, 90)
    assert not set(train.ids()) & set(test.ids())
    assert set(train.ids()) | set(test.ids()) == set(ids)


def test_split_rejects_bad_input():
    with pytest.raises(ValueError):
        split_train_test([], 0.7, 0)
    with pytest.raises(ValueError):
        split_train_test([1, 2], 1.0, 0)


def test_log_rejects_non_increasing_rows():
    log = TrainingLog([LogRow(1, "a", "real", 3, 0.0)])
    with pytest.raises(ValueError):
        log.append(LogRow(1, "b", "real", 3, 0.0))


def test_single_iteration_touches_all_three_policies():
    trainer = Trainer(small_config("gcl", iterations=1))
    trainer.pretrain()
    before = [a.policy.params.copy() for a in (trainer.student, trainer.antagonist, trainer.teacher)]
    _, log = trainer.run()
    assert len(log) == 1
    after = [a.policy.params for a in (trainer.student, trainer.antagonist, trainer.teacher)]
    assert all(not np.array_equal(b, a) for b, a in zip(before, after))


def test_student_and_antagonist_share_one_config():
    trainer = Trainer(small_config("gcl"))
    assert trainer.student.config is trainer.antagonist.config is trainer.config.student


def test_epsilon_one_selects_only_real_tasks():
    _, log = run_gcl(small_config("gcl", iterations=6, teacher__epsilon=1.0))
    assert set(log.column("source")) == {"real"}


@pytest.mark.parametrize("mode", valid_modes())
def test_fixed_seed_reproduces_log(mode):
    cfg = small_config(mode, iterations=5)
    assert Trainer(cfg).run()[1] == Trainer(cfg).run()[1]


@pytest.mark.parametrize("mode", TEACHER_MODES)
def test_teacher_family_log_audit(mode):
    cfg = small_config(mode, iterations=10, teacher__history=3)
    trainer = Trainer(cfg)
    _, log = trainer.run()
    test_ids = set(trainer.test_set.ids())
    assert log.column("iteration") == list(range(1, 11))
    for row in log:
        assert (row.student_updates, row.antagonist_updates, row.teacher_updates,
                row.state_updates) == (1, 1, 1, 1)
        assert row.regret == row.antagonist_return - row.student_return
        assert 1 <= row.state_length <= 3
        assert row.task_id not in test_ids


def test_manual_curriculum_is_nondecreasing():
    _, log = run_baseline(small_config("manual_cl", iterations=20))
    spl = log.column("shortest_path_length")
    assert spl == sorted(spl)


def test_base_rl_samples_uniformly():
    cfg = small_config("base_rl", iterations=1000, env__max_steps=3, student__hidden=(4,),
                       student__ppo_epochs=1, run__episodes_per_task=1)
    trainer = Trainer(cfg)
    _, log = trainer.run()
    counts = {i: 0 for i in trainer.train_set.ids()}
    for tid in log.column("task_id"):
        counts[tid] += 1
    assert stats.chisquare(list(counts.values())).pvalue > 0.01


def test_stateless_teacher_sees_constant_input():
    trainer = Trainer(small_config("stateless_teacher", iterations=8))
    _, log = trainer.run()
    assert all(np.array_equal(v, trainer.teacher_inputs[0]) for v in trainer.teacher_inputs)
    assert not trainer.teacher_inputs[0].any()
    assert all(r.fallback for r in log if r.source == "real")


def test_no_real_ablation_never_uses_real_tasks():
    _, log = run_ablation(small_config("gcl_no_real", iterations=10))
    assert "real" not in log.column("source")


def test_no_task_ablation_replays_noise_stream():
    cfg = small_config("gcl_no_task", iterations=8)
    trainer = Trainer(cfg)
    trainer.run()
    seeds = np.random.SeedSequence(cfg.run.master_seed).spawn(len(RNG_STREAMS))
    noise = np.random.default_rng(seeds[RNG_STREAMS.index("noise")])
    for latent, _ in trainer.state_entries:
        assert np.array_equal(latent, noise.standard_normal(cfg.vae.latent_dim))


def test_no_performance_ablation_uses_uniform_noise():
    cfg = small_config("gcl_no_performance", iterations=8)
    trainer = Trainer(cfg)
    _, log = trainer.run()
    seeds = np.random.SeedSequence(cfg.run.master_seed).spawn(len(RNG_STREAMS))
    noise = np.random.default_rng(seeds[RNG_STREAMS.index("noise")])
    perf = [p for _, p in trainer.state_entries]
    assert perf == [float(noise.random()) for _ in perf]
    assert perf != log.column("student_return")


def test_gcl_state_holds_real_returns():
    trainer = Trainer(small_config("gcl", iterations=5))
    _, log = trainer.run()
    assert [p for _, p in trainer.state_entries] == log.column("student_return")


def test_entry_points_check_mode():
    with pytest.raises(ConfigError):
        run_gcl(small_config("base_rl"))
    with pytest.raises(ConfigError):
        run_baseline(small_config("gcl_no_task"))
    with pytest.raises(ConfigError):
        run_ablation(small_config("gcl"))


@pytest.mark.parametrize("mode", valid_modes())
def test_resume_matches_uninterrupted_run(mode):
    cfg = small_config(mode, iterations=12, teacher__segment_length=4, teacher__history=2)
    straight = Trainer(cfg)
    straight.run()
    first = Trainer(cfg)
    first.run(7)
    resumed = Trainer.from_checkpoint(from_bytes(to_bytes(first.to_checkpoint())))
    resumed.run()
    assert resumed.log == straight.log
    assert np.array_equal(resumed.student.policy.params, straight.student.policy.params)


def test_periodic_checkpoints_and_log(tmp_path):
    cfg = small_config("gcl", iterations=6, run__checkpoint_every=2)
    trainer = Trainer(cfg, output_dir=tmp_path)
    trainer.run()
    names = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
    assert names == ["ckpt_000002.bin", "ckpt_000004.bin", "ckpt_000006.bin", "final.bin"]
    assert load_checkpoint(tmp_path / "checkpoints" / "ckpt_000004.bin").meta["iteration"] == 4
    assert (tmp_path / "log.csv").exists()


def test_resume_from_file_with_longer_budget(tmp_path):
    cfg = small_config("base_rl", iterations=4, run__checkpoint_every=4)
    Trainer(cfg, output_dir=tmp_path).run()
    longer = small_config("base_rl", iterations=8)
    resumed = Trainer.from_checkpoint(load_checkpoint(tmp_path / "checkpoints" / "final.bin"),
                                      config=longer)
    _, log = resumed.run()
    assert Trainer(longer).run()[1] == log
    with pytest.raises(ConfigError):
        Trainer.from_checkpoint(load_checkpoint(tmp_path / "checkpoints" / "final.bin"),
                                config=small_config("gcl"))


def test_non_finite_loss_aborts_with_dump(tmp_path, monkeypatch):
    cfg = small_config("gcl", iterations=5, run__checkpoint_every=0)
    trainer = Trainer(cfg, output_dir=tmp_path)
    real_update = curriculum.ppo_update
    calls = {"n": 0}

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] > 4:
            raise NonFiniteLoss("boom")
        return real_update(*args, **kw)
    monkeypatch.setattr(curriculum, "ppo_update", flaky)
    with pytest.raises(NonFiniteLoss):
        trainer.run()
    dump = load_checkpoint(tmp_path / "checkpoints" / "abort_000003.bin")
    assert dump.meta["iteration"] == 2
