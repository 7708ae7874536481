import logging

import numpy as np
import pytest

from dynembed import (Event, build_log, derive_link_status, load_adjacency,
                      load_events, save_events, split_slots)
from dynembed.events import EventFormatError, ValidationError


def _write(tmp_path, text, name="events.csv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestLoadEvents:
    def test_three_line_csv(self, tmp_path):
        path = _write(tmp_path, "0,1,0.5,1\n1,2,0.7,0\n0,2,0.9,1\n")
        log = load_events(path)
        assert len(log) == 3
        assert log.n_nodes == 3
        assert log.events[0] == Event(0, 1, 0.5, 0, 1)

    def test_header_is_skipped(self, tmp_path):
        path = _write(tmp_path, "u,v,t,k\n0,1,0.5,1\n1,2,0.7,0\n")
        assert len(load_events(path)) == 2

    def test_self_event_reports_line(self, tmp_path):
        path = _write(tmp_path, "5,5,1.0,1\n")
        with pytest.raises(EventFormatError, match="line 1"):
            load_events(path)

    def test_negative_timestamp(self, tmp_path):
        path = _write(tmp_path, "0,1,-2.0,1\n")
        with pytest.raises(EventFormatError, match="timestamp"):
            load_events(path)

    def test_unknown_event_type(self, tmp_path):
        path = _write(tmp_path, "0,1,1.0,7\n")
        with pytest.raises(EventFormatError, match="event type"):
            load_events(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_events(str(tmp_path / "nope.csv"))

    def test_jsonl(self, tmp_path):
        lines = '{"u": 0, "v": 1, "t": 0.5, "k": 1}\n{"u": 1, "v": 2, "t": 0.2, "k": 0}\n'
        path = _write(tmp_path, lines, name="events.jsonl")
        log = load_events(path)
        assert [e.t for e in log] == [0.2, 0.5]

    def test_string_labels_remapped_densely(self, tmp_path):
        path = _write(tmp_path, "alice,bob,0.5,1\nbob,carol,0.7,1\n")
        log = load_events(path)
        assert log.n_nodes == 3
        assert log.labels == ("alice", "bob", "carol")

    def test_sparse_int_ids_remapped(self, tmp_path):
        path = _write(tmp_path, "0,5,0.5,1\n5,9,0.7,1\n")
        log = load_events(path)
        assert log.n_nodes == 3
        assert log.labels == ("0", "5", "9")

    def test_sorted_with_stable_ties(self, tmp_path):
        path = _write(tmp_path, "0,1,2.0,1\n2,3,1.0,1\n1,2,1.0,1\n")
        log = load_events(path)
        assert [(e.u, e.v) for e in log] == [(2, 3), (1, 2), (0, 1)]

    def test_round_trip(self, tmp_path):
        path = _write(tmp_path, "0,1,0.5,0\n0,1,0.9,1\n1,2,1.3,1\n")
        log = load_events(path)
        out = str(tmp_path / "rewritten.csv")
        save_events(log, out)
        again = load_events(out)
        assert again.events == log.events
        assert again.n_nodes == log.n_nodes

    def test_round_trip_jsonl(self, tmp_path):
        path = _write(tmp_path, "0,1,0.5,0\n1,2,1.3,1\n")
        log = load_events(path)
        out = str(tmp_path / "rewritten.jsonl")
        save_events(log, out, format="jsonl")
        assert load_events(out).events == log.events


class TestDeriveLinkStatus:
    def test_edge_created_by_association(self):
        log = build_log([(0, 1, 1.0, 0, 0), (0, 1, 2.0, 0, 1)], n_nodes=2)
        out = derive_link_status(log)
        assert [e.l for e in out] == [0, 1]

    def test_initial_edge_counts(self):
        a0 = np.zeros((2, 2), dtype=int)
        a0[0, 1] = a0[1, 0] = 1
        log = build_log([(0, 1, 1.0, 0, 1)], n_nodes=2)
        assert derive_link_status(log, a0).events[0].l == 1

    def test_no_edge_means_zero(self):
        log = build_log([(2, 3, 1.0, 0, 1)], n_nodes=4)
        assert derive_link_status(log).events[0].l == 0

    def test_idempotent(self):
        log = build_log([(0, 1, 1.0, 0, 0), (0, 1, 2.0, 0, 1), (1, 2, 3.0, 0, 0)],
                        n_nodes=3)
        once = derive_link_status(log)
        assert derive_link_status(once).events == once.events

    def test_mismatch_warns_and_replay_wins(self, caplog):
        log = build_log([(0, 1, 1.0, 1, 1)], n_nodes=2)  # claims linked, is not
        with caplog.at_level(logging.WARNING):
            out = derive_link_status(log)
        assert out.events[0].l == 0
        assert any("replay wins" in r.message for r in caplog.records)


class TestSplitSlots:
    def _uniform_log(self):
        return build_log([(i % 3, (i + 1) % 3, float(i + 1), 0, 1) for i in range(100)],
                         horizon=(0.0, 100.0))

    def test_counts_and_widths(self):
        split = split_slots(self._uniform_log(), 0.5, 5)
        assert len(split.train) == 50
        # 50 time units remain after t=50; five slots of width 10
        assert split.boundaries == (60.0, 70.0, 80.0, 90.0, 100.0)
        assert [len(s) for s in split.test_slots] == [10, 10, 10, 10, 10]

    def test_single_slot_is_whole_test_window(self):
        log = self._uniform_log()
        split = split_slots(log, 0.5, 1)
        assert len(split.test_slots) == 1
        assert split.test_slots[0].events == log.events[50:]

    def test_empty_test_window(self):
        log = build_log([(0, 1, float(i), 0, 1) for i in range(1, 11)])
        with pytest.raises(ValidationError, match="empty test"):
            split_slots(log, 0.999, 3)

    def test_concatenation_recovers_log(self):
        rng = np.random.default_rng(5)
        recs = [(int(a), int(b), float(t), 0, 1)
                for a, b, t in zip(rng.integers(0, 6, 200), rng.integers(6, 12, 200),
                                   np.sort(rng.uniform(0, 40, 200)))]
        log = build_log(recs)
        split = split_slots(log, 0.7, 6)
        assert split.train.events + split.test_events == log.events

    def test_zero_event_slot_flagged(self, caplog):
        recs = [(0, 1, t, 0, 1) for t in (1.0, 2.0, 3.0, 50.0)]
        log = build_log(recs, horizon=(0.0, 50.0))
        with caplog.at_level(logging.WARNING):
            split = split_slots(log, 0.5, 4)
        assert any(len(s) == 0 for s in split.test_slots)
        assert any("no events" in r.message for r in caplog.records)

    def test_bad_fraction(self):
        with pytest.raises(ValidationError):
            split_slots(self._uniform_log(), 1.5, 2)


class TestAdjacencyFile:
    def test_edge_list(self, tmp_path):
        p = tmp_path / "adj.csv"
        p.write_text("0,1\n2,3\n")
        a = load_adjacency(str(p))
        assert a.shape == (4, 4)
        assert a[0, 1] == a[1, 0] == 1
        assert a[2, 3] == 1 and a[0, 2] == 0

    def test_self_loop_rejected(self, tmp_path):
        p = tmp_path / "adj.csv"
        p.write_text("1,1\n")
        with pytest.raises(EventFormatError):
            load_adjacency(str(p))
