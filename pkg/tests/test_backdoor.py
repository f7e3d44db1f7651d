import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsim.backdoor import (
    TriggerSpec,
    apply_trigger,
    asr,
    blended_trigger,
    patch_trigger,
    poison_dataset,
    split_trigger_dba,
)
from fedsim.data import Dataset, gen_synthetic
from fedsim.errors import InputError
from fedsim.model import ModelSpec, WeightVector


class TestApplyTrigger:
    def test_patch_on_zeros(self):
        t = patch_trigger(dim=10, target_label=0, size=4)
        out = apply_trigger(np.zeros(10), t)
        assert np.array_equal(out, [1, 1, 1, 1, 0, 0, 0, 0, 0, 0])

    def test_half_blend(self):
        t = TriggerSpec("blended", np.ones(6), np.ones(6), target_label=1, blend_alpha=0.5)
        out = apply_trigger(np.zeros(6), t)
        assert np.array_equal(out, np.full(6, 0.5))

    def test_zero_mask_identity(self):
        t = TriggerSpec("blended", np.zeros(5), np.ones(5), target_label=0, blend_alpha=0.7)
        x = np.random.default_rng(0).uniform(size=5)
        assert np.array_equal(apply_trigger(x, t), x)

    def test_dim_mismatch(self):
        t = patch_trigger(dim=10, target_label=0)
        with pytest.raises(InputError):
            apply_trigger(np.zeros(9), t)

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(0, 1), min_size=4, max_size=12),
        st.floats(0.01, 1.0),
    )
    def test_output_stays_in_unit_box(self, xs, alpha):
        dim = len(xs)
        rng = np.random.default_rng(dim)
        t = TriggerSpec(
            "blended",
            rng.uniform(0, 1, dim),
            rng.uniform(0, 1, dim),
            target_label=0,
            blend_alpha=alpha,
        )
        out = apply_trigger(np.array(xs), t)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestPoisonDataset:
    def make(self, n=10, dim=8, seed=0):
        rng = np.random.default_rng(seed)
        return Dataset(rng.uniform(size=(n, dim)), rng.integers(1, 3, size=n))

    def test_full_fraction(self):
        d = self.make()
        t = patch_trigger(dim=8, target_label=0)
        b = poison_dataset(d, t, poison_fraction=1.0, seed=1)
        assert np.all(b.labels == 0)
        assert np.all(b.features[:, :4] == 1.0)

    def test_half_fraction_counts(self):
        d = self.make(n=10)
        t = patch_trigger(dim=8, target_label=0)
        b = poison_dataset(d, t, poison_fraction=0.5, seed=2)
        assert int(np.sum(b.labels == 0)) == 5

    def test_diff_against_source(self):
        d = self.make(n=20)
        t = patch_trigger(dim=8, target_label=0)
        b = poison_dataset(d, t, poison_fraction=0.3, seed=3)
        changed = [i for i in range(20) if not np.array_equal(b.features[i], d.features[i])]
        assert len(changed) == 6
        for i in changed:
            assert b.labels[i] == 0
            assert np.array_equal(b.features[i], apply_trigger(d.features[i], t))
        unchanged = sorted(set(range(20)) - set(changed))
        for i in unchanged:
            assert b.labels[i] == d.labels[i]

    def test_deterministic(self):
        d = self.make(n=12)
        t = patch_trigger(dim=8, target_label=0)
        a = poison_dataset(d, t, poison_fraction=0.4, seed=9)
        b = poison_dataset(d, t, poison_fraction=0.4, seed=9)
        assert np.array_equal(a.features, b.features)

    def test_empty_rejected(self):
        t = patch_trigger(dim=8, target_label=0)
        with pytest.raises(InputError):
            poison_dataset(Dataset(np.zeros((0, 8)), np.zeros(0, dtype=int)), t, 0.5, 0)


def constant_model(spec, cls):
    vals = np.zeros(spec.num_params)
    _, off, _ = spec.layout()[-1]
    vals[off + cls] = 50.0
    return WeightVector(vals, spec.layout())


class TestAsr:
    SPEC = ModelSpec(input_dim=8, hidden_dims=(), num_classes=3)

    def clean(self):
        return gen_synthetic(seed=4, num_classes=3, dim=8, per_class=10)

    def test_constant_target_model(self):
        t = patch_trigger(dim=8, target_label=1)
        assert asr(constant_model(self.SPEC, 1), self.clean(), t) == 1.0

    def test_constant_other_model(self):
        t = patch_trigger(dim=8, target_label=1)
        assert asr(constant_model(self.SPEC, 2), self.clean(), t) == 0.0

    def test_excludes_target_label_samples(self):
        d = Dataset(np.random.default_rng(1).uniform(size=(6, 8)), np.array([1, 1, 1, 1, 1, 2]))
        t = patch_trigger(dim=8, target_label=1)
        # Only the single label-2 sample counts; a constant-1 model scores 1.0.
        assert asr(constant_model(self.SPEC, 1), d, t) == 1.0

    def test_all_target_label_rejected(self):
        d = Dataset(np.zeros((3, 8)), np.ones(3, dtype=int))
        t = patch_trigger(dim=8, target_label=1)
        with pytest.raises(InputError):
            asr(constant_model(self.SPEC, 1), d, t)

    def test_matches_hand_enumeration(self):
        from fedsim.model import _forward, init_weights

        d = self.clean()
        t = blended_trigger(dim=8, target_label=0, blend_alpha=0.4)
        w = init_weights(self.SPEC, seed=5)
        hits = total = 0
        for x, y in zip(d.features, d.labels):
            if y == 0:
                continue
            _, logits = _forward(w.values, w.layout, apply_trigger(x, t)[None, :])
            hits += int(np.argmax(logits[0]) == 0)
            total += 1
        assert asr(w, d, t) == pytest.approx(hits / total)


class TestSplitTriggerDba:
    def test_two_way_split(self):
        t = patch_trigger(dim=10, target_label=0, size=4)
        subs = split_trigger_dba(t, 2)
        assert len(subs) == 2
        assert np.array_equal(subs[0].footprint, [0, 1])
        assert np.array_equal(subs[1].footprint, [2, 3])
        union = subs[0].mask + subs[1].mask
        assert np.array_equal(union, t.mask)

    def test_identity_split(self):
        t = patch_trigger(dim=10, target_label=0, size=4)
        assert split_trigger_dba(t, 1) == [t]

    def test_composition_equals_full_trigger(self):
        t = patch_trigger(dim=12, target_label=2, size=7, start=3)
        subs = split_trigger_dba(t, 3)
        x = np.random.default_rng(2).uniform(size=12)
        composed = x
        for sub in subs:
            composed = apply_trigger(composed, sub)
        assert np.array_equal(composed, apply_trigger(x, t))

    def test_footprint_too_small(self):
        t = patch_trigger(dim=10, target_label=0, size=2)
        with pytest.raises(InputError):
            split_trigger_dba(t, 3)

    def test_pairwise_disjoint(self):
        t = patch_trigger(dim=16, target_label=0, size=9, start=4)
        subs = split_trigger_dba(t, 4)
        seen = set()
        for sub in subs:
            fp = set(int(i) for i in sub.footprint)
            assert not seen & fp
            seen |= fp
        assert seen == set(int(i) for i in t.footprint)
