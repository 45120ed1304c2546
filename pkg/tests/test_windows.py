"""Input table behavior: gating, overlap, dummies, eviction, idle drops."""

import numpy as np
import pytest

from svcdetect.features import N_FEATURES, StepFeatures, TrafficMap, ZERO_FEATURES
from svcdetect.traffic import ConversationKey
from svcdetect.windows import (
    InputBuffer,
    InputTable,
    assemble_input,
    ingest_step,
)


def key(n):
    return ConversationKey("192.168.50.10", f"203.0.113.{n}")


def feats(count):
    # Distinct, recognizable per-step payload: ul_pkt_count carries the tag.
    return StepFeatures(ul_pkt_count=count, dl_pkt_count=1,
                        ul_avg_size_mb=count / 1000.0)


def tmap_for(step, entries):
    # A map that claims `step` was just consumed.
    return TrafficMap(entries=entries, step_index=step + 1)


def run_steps(table, per_step_entries):
    removed = []
    for step, entries in enumerate(per_step_entries):
        removed.append(ingest_step(table, tmap_for(step, entries)))
    return removed


class TestGate:
    def test_no_output_before_six_steps(self):
        table = InputTable()
        k = key(1)
        for step in range(5):
            ingest_step(table, tmap_for(step, {k: feats(step + 1)}))
            assert assemble_input(table.buffers[k], step) is None
        ingest_step(table, tmap_for(5, {k: feats(6)}))
        vec = assemble_input(table.buffers[k], 5)
        assert vec is not None
        assert vec.values.shape == (60,)
        assert vec.step_index == 5

    def test_vector_is_step_major_oldest_first(self):
        table = InputTable()
        k = key(1)
        for step in range(6):
            ingest_step(table, tmap_for(step, {k: feats(step + 1)}))
        vec = assemble_input(table.buffers[k], 5)
        # ul_pkt_count is feature index 2 inside each 10-wide step block.
        tags = vec.values[2::N_FEATURES]
        assert list(tags) == [1, 2, 3, 4, 5, 6]

    def test_overlap_property(self):
        table = InputTable()
        k = key(1)
        vecs = []
        for step in range(9):
            ingest_step(table, tmap_for(step, {k: feats(step + 1)}))
            vec = assemble_input(table.buffers[k], step)
            if vec is not None:
                vecs.append(vec.values.copy())
        assert len(vecs) == 4
        for prev, cur in zip(vecs, vecs[1:]):
            assert np.array_equal(prev[N_FEATURES:], cur[:-N_FEATURES])


class TestDummies:
    def test_idle_step_pushes_zero_chunk(self):
        table = InputTable()
        k = key(1)
        run_steps(table, [{k: feats(1)}, {}])
        buf = table.buffers[k]
        assert list(buf.slots)[-1] == ZERO_FEATURES
        assert buf.dummy_run == 1

    def test_dummy_steps_count_toward_gate(self):
        table = InputTable()
        k = key(1)
        run_steps(table, [{k: feats(1)}] + [{}] * 5)
        vec = assemble_input(table.buffers[k], 5)
        assert vec is not None
        assert vec.values[2] == 1          # real first step
        assert vec.values[N_FEATURES:].sum() == 0  # five dummies

    def test_traffic_resets_dummy_run(self):
        table = InputTable()
        k = key(1)
        run_steps(table, [{k: feats(1)}, {}, {}, {k: feats(2)}])
        assert table.buffers[k].dummy_run == 0

    def test_six_consecutive_dummies_drop_conversation(self):
        table = InputTable()
        k = key(1)
        removed = run_steps(table, [{k: feats(1)}] + [{}] * 6)
        assert k not in table.buffers
        assert removed[-1] == [k]
        assert all(r == [] for r in removed[:-1])

    def test_returning_conversation_starts_fresh(self):
        table = InputTable()
        k = key(1)
        run_steps(table, [{k: feats(1)}] + [{}] * 6)
        ingest_step(table, tmap_for(7, {k: feats(9)}))
        buf = table.buffers[k]
        assert buf.fill_count == 1
        assert assemble_input(buf, 7) is None


class TestEviction:
    def test_capacity_never_exceeded(self):
        table = InputTable(capacity=7)
        entries = {key(n): feats(n) for n in range(1, 11)}
        ingest_step(table, tmap_for(0, entries))
        assert len(table.buffers) == 7

    def test_least_recently_active_evicted(self):
        table = InputTable(capacity=2)
        run_steps(table, [
            {key(1): feats(1), key(2): feats(2)},
            {key(2): feats(2)},                      # key 1 goes idle
        ])
        removed = ingest_step(table, tmap_for(2, {key(3): feats(3)}))
        assert key(1) in removed
        assert set(table.buffers) == {key(2), key(3)}

    def test_eviction_tie_breaks_on_fill_then_key(self):
        table = InputTable(capacity=2)
        # Both conversations active in the same step, equal fill: lowest
        # key loses.
        ingest_step(table, tmap_for(0, {key(1): feats(1), key(2): feats(2)}))
        removed = ingest_step(table, tmap_for(1, {key(3): feats(3)}))
        assert removed == [key(1)]

    def test_insertion_of_known_key_is_update_not_eviction(self):
        table = InputTable(capacity=2)
        run_steps(table, [{key(1): feats(1), key(2): feats(2)}] * 3)
        assert set(table.buffers) == {key(1), key(2)}
        assert table.buffers[key(1)].fill_count == 3


class TestValidation:
    def test_table_rejects_bad_sizes(self):
        with pytest.raises(ValueError):
            InputTable(capacity=0)
        with pytest.raises(ValueError):
            InputTable(window_steps=0)

    def test_ingest_requires_consumed_step(self):
        with pytest.raises(ValueError):
            ingest_step(InputTable(), TrafficMap.empty())

    def test_buffer_tracks_last_active_step(self):
        buf = InputBuffer.create(key(1), window_steps=6, step_index=0)
        buf.push(feats(1), 0)
        buf.push(ZERO_FEATURES, 1)
        assert buf.last_active_step == 0
        buf.push(feats(2), 2)
        assert buf.last_active_step == 2


class TestRandomizedInvariants:
    def test_invariants_over_random_sequences(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            table = InputTable()
            last_vecs = {}
            for step in range(20):
                n_active = int(rng.integers(0, 9))
                active = rng.choice(20, size=n_active, replace=False)
                entries = {key(int(n)): feats(int(step * 100 + n))
                           for n in active}
                ingest_step(table, tmap_for(step, entries))
                assert len(table.buffers) <= 7
                for k, buf in table.buffers.items():
                    vec = assemble_input(buf, step)
                    if buf.fill_count < 6:
                        assert vec is None
                        continue
                    assert vec.values.shape == (60,)
                    prev = last_vecs.get(k)
                    if prev is not None and prev[0] == step - 1:
                        assert np.array_equal(prev[1][N_FEATURES:],
                                              vec.values[:-N_FEATURES])
                    last_vecs[k] = (step, vec.values.copy())
