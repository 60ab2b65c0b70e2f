import numpy as np
import pytest
from conftest import make_interactions
from hypothesis import given, settings
from hypothesis import strategies as st

from streamrec.core import (
    ExperimentConfig,
    Interaction,
    Interactions,
    Reservoir,
    SeenIndex,
    StreamSchedule,
    reservoir_insert,
    seen_contains,
)


def ev(seq, user=0, item=0):
    return Interaction(user, item, seq, seq)


class TestReservoir:
    def test_fifo_eviction(self):
        r = Reservoir(2)
        a, b, c = ev(0, 1), ev(1, 2), ev(2, 3)
        reservoir_insert(r, a)
        reservoir_insert(r, b)
        reservoir_insert(r, c)
        assert r.buffer == [b, c]

    def test_empty_insert(self):
        r = Reservoir(3)
        reservoir_insert(r, ev(0))
        assert r.buffer == [ev(0)]

    def test_below_capacity_keeps_all(self):
        r = Reservoir(2)
        reservoir_insert(r, ev(0))
        reservoir_insert(r, ev(1))
        assert r.buffer == [ev(0), ev(1)]

    def test_rejects_out_of_order(self):
        r = Reservoir(4)
        r.insert(ev(5))
        with pytest.raises(ValueError, match="out-of-order"):
            r.insert(ev(5))
        with pytest.raises(ValueError, match="out-of-order"):
            r.extend(make_interactions([(0, 0)], start_seq=3))

    def test_rejects_bad_capacity(self):
        with pytest.raises(ValueError):
            Reservoir(0)

    @settings(max_examples=60, deadline=None)
    @given(capacity=st.integers(1, 64),
           chunks=st.lists(st.integers(0, 150), min_size=1, max_size=40))
    def test_extend_matches_brute_force(self, capacity, chunks):
        r = Reservoir(capacity)
        plain = []
        seq = 0
        for size in chunks:
            batch = make_interactions([(s % 7, s % 11) for s in range(seq, seq + size)], seq)
            r.extend(batch)
            plain.extend(batch)
            seq += size
            assert r.buffer == plain[-capacity:] if plain else r.buffer == []
            assert len(r) <= capacity
            assert np.all(np.diff(r.view().seq) > 0)

    def test_long_random_sequence(self, rng):
        capacity = 137
        r = Reservoir(capacity)
        plain = []
        for seq in range(10_000):
            x = ev(seq, int(rng.integers(50)), int(rng.integers(50)))
            r.insert(x)
            plain.append(x)
        assert r.buffer == plain[-capacity:]

    def test_older_than_is_prefix(self):
        r = Reservoir(10)
        r.extend(make_interactions([(0, i) for i in range(8)]))
        assert list(r.older_than(5).seq) == [0, 1, 2, 3, 4]
        assert len(r.older_than(0)) == 0


class TestSeenIndex:
    def test_examples(self):
        idx = SeenIndex(10, 10)
        assert not seen_contains(idx, 0, 0)
        idx.record(3, 7)
        assert seen_contains(idx, 3, 7)
        assert not seen_contains(idx, 3, 8)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 14)), max_size=80))
    def test_matches_brute_force(self, pairs):
        idx = SeenIndex(10, 15)
        half = len(pairs) // 2
        for u, v in pairs[:half]:
            idx.record(u, v)
        idx.record_batch(make_interactions(pairs[half:]))
        for u in range(10):
            for v in range(15):
                assert idx.contains(u, v) == ((u, v) in pairs)
            assert idx.count(u) == len({p for p in pairs if p[0] == u})
            assert idx.items_of(u) == {v for (uu, v) in pairs if uu == u}


def test_interactions_roundtrip():
    recs = [Interaction(1, 2, 10, 0), Interaction(3, 4, 11, 1)]
    batch = Interactions.from_records(recs)
    assert list(batch) == recs
    assert batch[1] == recs[1]
    assert len(batch.concat(batch)) == 4
    with pytest.raises(ValueError):
        Interactions(np.zeros(2), np.zeros(1), np.zeros(2), np.zeros(2))


def test_schedule_regimes():
    assert StreamSchedule(256, 128).regime == "underload"
    assert StreamSchedule(256, 512).regime == "overload"
    assert StreamSchedule(256, 256).regime == "balanced"
    with pytest.raises(ValueError):
        StreamSchedule(0, 5)


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert (cfg.alpha, cfg.lambda_new, cfg.lambda_res) == (0.5, 1.02, 1.005)
        assert cfg.batch_size == cfg.n_p == 256
        assert cfg.learning_rate == 0.001
        assert cfg.tower_widths == (32, 16, 8)
        assert cfg.window == cfg.batch_size

    @pytest.mark.parametrize("field,value,msg", [
        ("alpha", 1.5, "alpha"), ("alpha", -0.1, "alpha"),
        ("lambda_new", 0.9, "lambda_new"), ("lambda_res", 0.5, "lambda_res"),
        ("num_models", 0, "num_models"), ("n_r", -1, "n_r"),
        ("sampler_kind", "XYZ", "sampler_kind"), ("train_fraction", 1.0, "train_fraction"),
    ])
    def test_invalid(self, field, value, msg):
        with pytest.raises(ValueError, match=msg):
            ExperimentConfig(**{field: value})
