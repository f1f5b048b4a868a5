"""Metrics ledger: rates, flips, serialization, the plot surface."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expmem import MetricsLedger, TaskResult, compute_metrics, plot_learning_curves
from expmem.errors import RaggedInputError


def epoch_of(*outcomes):
    """outcomes: (task_id, success, iterations) triples."""
    return [TaskResult(t, s, i) for t, s, i in outcomes]


class TestComputeMetrics:
    def test_single_epoch_rates(self):
        ledger = compute_metrics([
            epoch_of(("a", True, 1), ("b", False, 3), ("c", True, 2), ("d", True, 1)),
        ])
        m = ledger.epoch(1)
        assert m.success_rate == pytest.approx(0.75)
        assert m.cumulative_success_rate == pytest.approx(0.75)
        assert m.mean_iterations == pytest.approx((1 + 3 + 2 + 1) / 4)
        assert m.first_attempt_rate == pytest.approx(0.5)  # a and d
        assert m.iteration_histogram == {1: 2, 2: 1, 3: 1}

    def test_cumulative_rate_is_monotone_and_counts_ever_solved(self):
        ledger = compute_metrics([
            epoch_of(("a", True, 1), ("b", False, 3)),
            epoch_of(("a", False, 3), ("b", True, 2)),   # a regresses, b flips
            epoch_of(("a", False, 3), ("b", True, 1)),
        ])
        csr = [m.cumulative_success_rate for m in ledger.epochs]
        assert csr == [0.5, 1.0, 1.0]
        sr = [m.success_rate for m in ledger.epochs]
        assert sr == [0.5, 0.5, 0.5]

    def test_flip_detection(self):
        ledger = compute_metrics([
            epoch_of(("a", False, 3), ("b", True, 1), ("c", False, 3)),
            epoch_of(("a", False, 3), ("b", True, 1), ("c", False, 3)),
            epoch_of(("a", True, 2), ("b", True, 1), ("c", False, 3)),
        ])
        assert len(ledger.flips) == 1
        flip = ledger.flips[0]
        assert (flip.task_id, flip.last_fail_epoch, flip.first_pass_epoch) == ("a", 2, 3)

    def test_pass_then_fail_is_not_a_flip(self):
        ledger = compute_metrics([
            epoch_of(("a", True, 1)),
            epoch_of(("a", False, 3)),
        ])
        assert ledger.flips == []

    def test_ragged_task_sets_rejected(self):
        with pytest.raises(RaggedInputError):
            compute_metrics([
                epoch_of(("a", True, 1), ("b", True, 1)),
                epoch_of(("a", True, 1), ("c", True, 1)),
            ])

    def test_duplicate_ids_rejected(self):
        with pytest.raises(RaggedInputError):
            compute_metrics([epoch_of(("a", True, 1), ("a", False, 2))])

    def test_empty_input(self):
        ledger = compute_metrics([])
        assert ledger.epochs == [] and ledger.n_tasks == 0
        assert ledger.final_success_rate == 0.0

    @given(
        st.lists(
            st.tuples(st.booleans(), st.integers(1, 5)),
            min_size=1, max_size=30,
        ),
        st.integers(1, 4),
    )
    @settings(max_examples=50, deadline=None)
    def test_rates_always_in_unit_interval(self, rows, n_epochs):
        epochs = [
            [TaskResult(f"t{i}", s, it) for i, (s, it) in enumerate(rows)]
            for _ in range(n_epochs)
        ]
        ledger = compute_metrics(epochs)
        for m in ledger.epochs:
            assert 0.0 <= m.success_rate <= 1.0
            assert 0.0 <= m.first_attempt_rate <= m.success_rate + 1e-12
            assert m.cumulative_success_rate >= m.success_rate - 1e-12


class TestSerialization:
    def ledger(self):
        return compute_metrics([
            epoch_of(("a", False, 3), ("b", True, 1)),
            epoch_of(("a", True, 2), ("b", True, 1)),
        ])

    def test_json_round_trip(self):
        ledger = self.ledger()
        back = MetricsLedger.from_json(ledger.to_json())
        assert back.to_json() == ledger.to_json()
        assert back.epoch(2).success_rate == 1.0
        assert len(back.flips) == 1

    def test_save_load(self, tmp_path):
        path = tmp_path / "metrics.json"
        self.ledger().save(path)
        assert MetricsLedger.load(path).to_json() == self.ledger().to_json()

    def test_json_is_stable(self):
        a, b = self.ledger().to_json(), self.ledger().to_json()
        assert a == b
        json.loads(a)

    def test_text_table_shape(self):
        text = self.ledger().to_text()
        lines = text.splitlines()
        assert lines[0].startswith("epoch")
        assert len([l for l in lines if l[0].isdigit()]) == 2
        assert "flips: 1" in text


class TestPlot:
    def test_writes_a_png(self, tmp_path):
        path = tmp_path / "curves.png"
        ledger = compute_metrics([
            epoch_of(("a", False, 3), ("b", True, 1)),
            epoch_of(("a", True, 2), ("b", True, 1)),
        ])
        plot_learning_curves({"demo": ledger}, path)
        assert path.stat().st_size > 0
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
