import itertools

import numpy as np
import pytest

from seq2bf.errors import ConstraintError
from seq2bf.schedule import (BACKWARD, FORWARD, SEQ2BF_STRATEGIES, Strategy, assign_positions, build_decoder_mask,
                             build_schedule, causal_mask, order_stamps, read_anchor, render_mask)

SB, SF, TB, TF = SEQ2BF_STRATEGIES


def real_labels(schedule):
    return [e.label for e in schedule.real_events]


def allowed_set(schedule, position):
    positions = sorted(schedule.stamps)
    mask = build_decoder_mask(schedule.stamps)
    row = mask[positions.index(position)]
    return {p for p, ok in zip(positions, row) if ok}


class TestPositions:
    def test_single_token(self):
        assert assign_positions(0, 1, 0).phrase_positions == [0]

    def test_two_token_phrase(self):
        assert assign_positions(0, 2, 0).phrase_positions == [0, 1]

    def test_three_token_phrase_shifts_sides(self):
        layout = assign_positions(2, 3, 1)
        assert layout.phrase_positions == [-1, 0, 1]
        assert [layout.side_position(BACKWARD, k) for k in (1, 2)] == [-2, -3]
        assert layout.side_position(FORWARD, 1) == 2
        assert layout.positions == [-3, -2, -1, 0, 1, 2]

    def test_empty_phrase(self):
        with pytest.raises(ConstraintError):
            assign_positions(1, 0, 1)


class TestBuildSchedule:
    def test_seq_b(self):
        assert real_labels(build_schedule(SB, 2, 3)) == [-1, -2, 1, 2, 3]

    def test_seq_f(self):
        assert real_labels(build_schedule(SF, 2, 3)) == [1, 2, 3, -1, -2]

    def test_tok_b_unequal(self):
        assert real_labels(build_schedule(TB, 3, 1)) == [-1, 1, -2, -3]

    def test_tok_f_empty_backward(self):
        assert real_labels(build_schedule(TF, 0, 2)) == [1, 2]

    def test_markers_only_when_empty(self):
        s = build_schedule(TB, 0, 0)
        assert [repr(e) for e in s.events] == ["BOH", "EOH"]

    def test_marker_placement(self):
        assert [repr(e) for e in build_schedule(SB, 2, 2).events] == ["-1", "-2", "BOH", "+1", "+2", "EOH"]
        assert [repr(e) for e in build_schedule(TB, 3, 1).events] == ["-1", "+1", "-2", "EOH", "-3", "BOH"]

    def test_left_to_right_rejected(self):
        with pytest.raises(ValueError):
            build_schedule(Strategy.LEFT_TO_RIGHT, 1, 1)

    @pytest.mark.parametrize("strategy", SEQ2BF_STRATEGIES)
    def test_coverage_exhaustive(self, strategy):
        for M in range(21):
            for N in range(21 - M):
                s = build_schedule(strategy, M, N)
                assert sorted(real_labels(s)) == list(range(-M, 0)) + list(range(1, N + 1))
                markers = [e for e in s.events if e.marker]
                assert sorted(e.direction for e in markers) == [BACKWARD, FORWARD]

    def test_tok_reduces_to_seq_with_one_empty_side(self):
        for n in range(8):
            assert real_labels(build_schedule(TB, 0, n)) == real_labels(build_schedule(SF, 0, n))
            assert real_labels(build_schedule(TF, n, 0)) == real_labels(build_schedule(SB, n, 0))


class TestStamps:
    def test_seq_b(self):
        s = build_schedule(SB, 2, 2)
        assert order_stamps(s, s.layout) == {0: 0, -1: 1, -2: 2, 1: 3, 2: 4}

    def test_tok_b(self):
        s = build_schedule(TB, 2, 2)
        assert s.stamps == {0: 0, -1: 1, 1: 2, -2: 3, 2: 4}

    def test_phrase_only(self):
        assert build_schedule(TF, 0, 0, L=3).stamps == {-1: 0, 0: 0, 1: 0}


class TestMask:
    def test_seq_b(self):
        s = build_schedule(SB, 2, 2)
        assert allowed_set(s, -2) == {0, -1, -2}
        assert allowed_set(s, 2) == {-2, -1, 0, 1, 2}

    def test_tok_b(self):
        s = build_schedule(TB, 2, 2)
        assert allowed_set(s, -2) == {0, -1, 1, -2}

    def test_phrase_only(self):
        assert build_decoder_mask(build_schedule(SB, 0, 0, L=3).stamps).all()

    def test_self_and_phrase_always_allowed(self):
        for strategy in SEQ2BF_STRATEGIES:
            for M, L, N in itertools.product(range(5), range(1, 4), range(5)):
                s = build_schedule(strategy, M, N, L)
                positions = sorted(s.stamps)
                mask = build_decoder_mask(s.stamps)
                assert mask.diagonal().all()
                for p in s.layout.phrase_positions:
                    assert mask[:, positions.index(p)].all()

    def test_causal(self):
        m = causal_mask(4)
        assert m[2].tolist() == [True, True, True, False]

    def test_render(self):
        s = build_schedule(SB, 0, 0)
        assert render_mask(build_decoder_mask(s.stamps), sorted(s.stamps)).splitlines()[1].split() == ["+0", "."]


class TestAnchors:
    def test_seq_b(self):
        assert read_anchor(build_schedule(SB, 2, 2), 3) == -2

    def test_tok_b(self):
        assert read_anchor(build_schedule(TB, 2, 2), 2) == -1

    def test_first_backward_event_reads_leftmost_phrase_slot(self):
        for strategy in (SB, TB):
            assert read_anchor(build_schedule(strategy, 2, 2, L=3), 1) == -1

    def test_first_forward_event_reads_rightmost_phrase_slot(self):
        for strategy in (SF, TF):
            assert read_anchor(build_schedule(strategy, 2, 2, L=3), 1) == 1

    @pytest.mark.parametrize("strategy", SEQ2BF_STRATEGIES)
    def test_anchor_sees_exactly_observed_tokens(self, strategy):
        # brute force: Y_obs before event t = phrase + targets of earlier real events
        for M, L, N in itertools.product(range(6), range(1, 4), range(6)):
            s = build_schedule(strategy, M, N, L)
            layout = s.layout
            observed = set(layout.phrase_positions)
            for t, event in enumerate(s.events, 1):
                assert allowed_set(s, read_anchor(s, t)) == observed
                if not event.marker:
                    observed.add(layout.side_position(event.direction, event.k))

    @pytest.mark.parametrize("strategy", SEQ2BF_STRATEGIES)
    def test_slot_head_pairs_unique(self, strategy):
        for M, L, N in itertools.product(range(7), range(1, 4), range(7)):
            s = build_schedule(strategy, M, N, L)
            pairs = [(a, e.direction) for a, e in zip(s.anchors, s.events)]
            assert len(pairs) == len(set(pairs))
