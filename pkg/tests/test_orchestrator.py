import inspect

import numpy as np
import pytest

import fedsim.aggregation
from fedsim.aggregation import AggregatorConfig, ClientUpdate
from fedsim.csft import CsftConfig
from fedsim.errors import ConfigurationError
from fedsim.model import ModelSpec, TrainConfig, WeightVector
from fedsim.orchestrator import (
    AttackConfig,
    DataConfig,
    Experiment,
    ExperimentConfig,
    TriggerConfig,
    run_experiment,
    sweep,
    update_gap,
    validate_config,
)


def tiny_config(**overrides):
    """Small, fast experiment: 6 clients, 8-dim blobs, 3 rounds."""
    base = dict(
        n=6,
        m=1,
        s=6,
        total_rounds=3,
        master_seed=0,
        model=ModelSpec(input_dim=8, hidden_dims=(6,), num_classes=3),
        data=DataConfig(dim=8, per_class_train=40, per_class_val=20),
        trigger=TriggerConfig(size=3),
        benign_train=TrainConfig(learning_rate=0.2, local_epochs=1, batch_size=16),
        malicious_train=TrainConfig(learning_rate=0.2, local_epochs=2, batch_size=16),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestValidateConfig:
    def test_malicious_minority(self):
        with pytest.raises(ConfigurationError, match="m < n/2"):
            validate_config(tiny_config(m=3))

    def test_krum_constraint(self):
        with pytest.raises(ConfigurationError, match="2m\\+2 < n"):
            validate_config(tiny_config(aggregator=AggregatorConfig(rule="krum", m_assumed=2)))

    def test_subset_bound(self):
        with pytest.raises(ConfigurationError, match="s <= n"):
            validate_config(tiny_config(s=7))

    def test_attack_needs_matching_rule(self):
        with pytest.raises(ConfigurationError, match="adaptive_krum"):
            validate_config(tiny_config(attack=AttackConfig(kind="adaptive_krum")))

    def test_attack_needs_malicious_clients(self):
        with pytest.raises(ConfigurationError, match="m >= 1"):
            validate_config(tiny_config(m=0, attack=AttackConfig(kind="adaptive_mom")))

    def test_model_data_dims_must_agree(self):
        with pytest.raises(ConfigurationError, match="input_dim"):
            validate_config(tiny_config(model=ModelSpec(input_dim=9, num_classes=3)))


class TestRunRound:
    def test_no_malicious_clients(self):
        cfg = tiny_config(m=0, total_rounds=2)
        res = run_experiment(cfg)
        assert len(res.trace) == 2
        for rec in res.trace:
            assert rec.delta is None
            assert rec.alpha is None
            assert 0.0 <= rec.accuracy <= 1.0

    def test_data_poisoning_baseline(self):
        # attack "none" with m > 0 still trains malicious clients on poisoned shards
        cfg = tiny_config(attack=AttackConfig(kind="none", poison_fraction=1.0))
        exp = Experiment(cfg)
        mal = max(exp.malicious_ids)
        assert np.any(exp.poisoned_shards[mal].labels != exp.shards[mal].labels)
        res = run_experiment(cfg)
        assert all(rec.delta is not None for rec in res.trace)

    def test_krum_records_selection(self):
        cfg = tiny_config(aggregator=AggregatorConfig(rule="krum", m_assumed=1))
        res = run_experiment(cfg)
        for rec in res.trace:
            assert rec.krum_selected is not None
            assert rec.selected_is_malicious in (True, False)

    def test_round_reproducible_bitwise(self):
        cfg = tiny_config(aggregator=AggregatorConfig(rule="krum", m_assumed=1),
                          attack=AttackConfig(kind="adaptive_krum"))
        exp_a, exp_b = Experiment(cfg), Experiment(cfg)
        state_a, rec_a = exp_a.run_round(exp_a.initial_state())
        state_b, rec_b = exp_b.run_round(exp_b.initial_state())
        assert np.array_equal(state_a.weights.values, state_b.weights.values)
        assert rec_a == rec_b

    def test_partial_participation(self):
        cfg = tiny_config(s=4)
        exp = Experiment(cfg)
        participants = exp._participants(0)
        assert len(participants) == 4
        assert participants == sorted(participants)
        res = run_experiment(cfg)
        assert len(res.trace) == 3


class TestRunExperiment:
    def test_zero_rounds_initial_metrics(self):
        cfg = tiny_config(total_rounds=0, m=0)
        res = run_experiment(cfg)
        assert res.trace == ()
        from fedsim.backdoor import asr
        from fedsim.model import evaluate

        exp = Experiment(cfg)
        assert res.final_train_acc == evaluate(exp.initial_weights, exp.val_data)
        assert res.final_train_asr == asr(exp.initial_weights, exp.val_data, exp.trigger)
        assert res.ft_acc is None and res.acc_diff is None

    def test_csft_gamma_zero_keeps_train_metrics(self):
        cfg = tiny_config(csft=CsftConfig(total_epochs=3, gamma=0.0, batch_size=8))
        res = run_experiment(cfg)
        assert res.ft_acc == res.final_train_acc
        assert res.ft_asr == res.final_train_asr
        assert res.acc_diff == 0.0

    def test_determinism_full_run(self):
        cfg = tiny_config(aggregator=AggregatorConfig(rule="mom", num_groups=3),
                          attack=AttackConfig(kind="adaptive_mom"),
                          csft=CsftConfig(total_epochs=3, batch_size=8))
        a = run_experiment(cfg)
        b = run_experiment(cfg)
        assert a == b

    def test_parallel_matches_sequential(self):
        cfg = tiny_config(aggregator=AggregatorConfig(rule="krum", m_assumed=1),
                          attack=AttackConfig(kind="adaptive_krum"))
        assert run_experiment(cfg, workers=1) == run_experiment(cfg, workers=4)

    def test_attack_success_flags(self):
        cfg = tiny_config(m=0)
        res = run_experiment(cfg)
        assert res.train_attack_success == (res.final_train_asr > 0.5)
        assert res.ft_attack_success is None

    @pytest.mark.parametrize("kind,agg", [
        ("replacement", AggregatorConfig()),
        ("neurotoxin", AggregatorConfig()),
        ("dba", AggregatorConfig()),
        ("constrain_and_scale", AggregatorConfig(rule="norm_bound", threshold=0.5)),
        ("adaptive_norm", AggregatorConfig(rule="norm_bound", threshold=0.5)),
    ])
    def test_attack_kinds_run(self, kind, agg):
        cfg = tiny_config(m=2, attack=AttackConfig(kind=kind), aggregator=agg,
                          trigger=TriggerConfig(size=4))
        res = run_experiment(cfg)
        assert len(res.trace) == 3
        assert all(r.delta is not None for r in res.trace)


class TestIdxDataSource:
    def test_experiment_on_idx_files(self, tmp_path):
        import struct

        rng = np.random.default_rng(0)

        def write_pair(stem, count):
            images = rng.integers(0, 256, size=(count, 2, 4), dtype=np.uint8)
            labels = rng.integers(0, 2, size=count, dtype=np.uint8)
            img = tmp_path / f"{stem}-images.idx"
            lab = tmp_path / f"{stem}-labels.idx"
            img.write_bytes(struct.pack(">IIII", 0x803, count, 2, 4) + images.tobytes())
            lab.write_bytes(struct.pack(">II", 0x801, count) + labels.tobytes())
            return str(img), str(lab)

        train_img, train_lab = write_pair("train", 120)
        val_img, val_lab = write_pair("val", 40)
        cfg = tiny_config(
            model=ModelSpec(input_dim=8, hidden_dims=(6,), num_classes=2),
            data=DataConfig(
                source="idx",
                train_images=train_img,
                train_labels=train_lab,
                val_images=val_img,
                val_labels=val_lab,
            ),
            total_rounds=2,
        )
        res = run_experiment(cfg)
        assert len(res.trace) == 2
        assert 0.0 <= res.final_train_acc <= 1.0

    def test_idx_paths_required(self):
        with pytest.raises(ConfigurationError, match="idx data source needs paths"):
            validate_config(tiny_config(data=DataConfig(source="idx")))


class TestDeltaDiagnostic:
    def test_hand_value(self):
        layout = (("layer0_w", 0, 2),)
        a = WeightVector(np.array([1.0, 0.0]), layout)
        b = WeightVector(np.array([0.0, 1.0]), layout)
        assert update_gap(a, b) == pytest.approx(np.sqrt(2), rel=1e-15)

    def test_recorded_from_submitted_updates(self):
        # With adaptive_mom the submitted update is scale * w_m, so delta grows
        # with the scale even though local training is unchanged.
        small = run_experiment(
            tiny_config(attack=AttackConfig(kind="adaptive_mom", scale_factor=1.0),
                        aggregator=AggregatorConfig(rule="mom", num_groups=3))
        )
        large = run_experiment(
            tiny_config(attack=AttackConfig(kind="adaptive_mom", scale_factor=100.0),
                        aggregator=AggregatorConfig(rule="mom", num_groups=3))
        )
        assert large.trace[0].delta > small.trace[0].delta


class TestMetadataFirewall:
    def test_aggregation_module_never_reads_the_flag(self):
        source = inspect.getsource(fedsim.aggregation)
        assert "is_malicious" not in source

    def test_client_update_has_no_flag_field(self):
        fields = {f for f in ClientUpdate.__dataclass_fields__}
        assert fields == {"client_id", "update"}


class TestSweep:
    def test_single_value_equals_run_experiment(self):
        cfg = tiny_config()
        points = sweep(cfg, "m", [1])
        assert len(points) == 1
        assert points[0].results[0] == run_experiment(cfg)

    def test_m_axis(self):
        cfg = tiny_config(n=8, s=8)
        points = sweep(cfg, "m", [1, 2])
        assert [p.value for p in points] == [1.0, 2.0]
        for p in points:
            assert len(p.results) == 1

    def test_repeats_use_distinct_seeds(self):
        cfg = tiny_config()
        (point,) = sweep(cfg, "m", [1], repeats=2)
        assert point.results[0] != point.results[1]

    def test_unknown_axis(self):
        with pytest.raises(ConfigurationError):
            sweep(tiny_config(), "banana", [1])

    def test_csft_axis_requires_csft(self):
        with pytest.raises(ConfigurationError):
            sweep(tiny_config(), "csft_epochs", [5])

    def test_finetune_fraction_axis(self):
        cfg = tiny_config(csft=CsftConfig(total_epochs=2, batch_size=8))
        points = sweep(cfg, "finetune_fraction", [0.05, 0.1])
        assert all(p.results[0].ft_acc is not None for p in points)
