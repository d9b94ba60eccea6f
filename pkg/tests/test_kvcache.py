import numpy as np
import pytest
import torch

from rollforge.kvcache import PLACEMENT_MODES, CacheConfig, CacheState
from rollforge.denoiser import KvEntry


def entry(i):
    return KvEntry(frame_index=i, keys=[torch.randn(1, 1, 2)],
                   values=[torch.randn(1, 1, 2)])


def filled(config, n):
    state = CacheState(config)
    for i in range(1, n + 1):
        state.append(entry(i))
    return state


def test_config_span_and_validation():
    cfg = CacheConfig(sink_frames=1, recent_frames=1, window_frames=5)
    assert cfg.span == 7
    assert CacheConfig(total_span=7).span == 7
    with pytest.raises(ValueError):
        CacheConfig(total_span=8)
    with pytest.raises(ValueError):
        CacheConfig(sink_frames=-1)
    with pytest.raises(ValueError):
        CacheConfig(window_frames=0)


def test_first_append_goes_to_sink():
    state = filled(CacheConfig(sink_frames=1, recent_frames=1), 1)
    assert [e.frame_index for e in state.sink] == [1]
    assert len(state.temporal) == 0
    assert state.next_frame_index == 2


def test_eviction_hand_simulation():
    # L_glo=1, L_tem=1, frames 1..5: sink pins frame 1, ring keeps only 5
    state = filled(CacheConfig(sink_frames=1, recent_frames=1), 5)
    assert [e.frame_index for e in state.sink] == [1]
    assert [e.frame_index for e in state.temporal] == [5]


def test_append_rejects_out_of_order_frames():
    state = filled(CacheConfig(), 2)
    with pytest.raises(ValueError):
        state.append(entry(2))
    with pytest.raises(ValueError):
        state.append(entry(4))


def test_memory_stays_bounded_over_long_streams():
    cfg = CacheConfig(sink_frames=2, recent_frames=3)
    state = CacheState(cfg)
    for i in range(1, 10001):
        state.append(entry(i))
        assert len(state) <= cfg.sink_frames + cfg.recent_frames
    assert [e.frame_index for e in state.sink] == [1, 2]
    assert [e.frame_index for e in state.temporal] == [9998, 9999, 10000]


def test_eviction_is_strictly_fifo():
    state = CacheState(CacheConfig(sink_frames=1, recent_frames=3))
    seen = []
    for i in range(1, 11):
        state.append(entry(i))
        seen.append([e.frame_index for e in state.temporal])
    assert seen[-1] == [8, 9, 10]
    for step in seen:
        assert step == sorted(step)


def test_view_positions_match_reindexing_formula():
    state = filled(CacheConfig(sink_frames=3, recent_frames=3), 99)
    view = state.view(100)
    np.testing.assert_array_equal(view.positions, [94, 95, 96, 97, 98, 99])
    assert view.sink_count == 3
    with pytest.raises(ValueError):
        state.view(99)


def test_view_empty_at_stream_start():
    state = CacheState(CacheConfig())
    view = state.view(1)
    assert len(view) == 0
    assert view.sink_count == 0


def test_sink_to_window_gap_is_constant():
    cfg = CacheConfig(sink_frames=2, recent_frames=3)
    state = CacheState(cfg)
    gaps = []
    for i in range(1, 61):
        state.append(entry(i))
        view = state.view(i + 1)
        if view.sink_count == cfg.sink_frames and len(view) == cfg.sink_frames + cfg.recent_frames:
            last_sink = view.positions[view.sink_count - 1]
            gaps.append((i + 1) - last_sink)
    assert gaps and set(gaps) == {cfg.recent_frames + 1}


def test_rebased_positions_independent_of_stream_index():
    cfg = CacheConfig(sink_frames=1, recent_frames=1)

    def canonical(n):
        state = filled(cfg, n)
        view = state.view(n + 1)
        window = np.arange(n + 1, n + 1 + cfg.window_frames)
        offset = min(view.positions.min(), window.min())
        return (view.positions - offset).tolist(), (window - offset).tolist()

    assert canonical(100) == canonical(100000)
    assert canonical(100)[0] == [0, 1]


def test_temporal_view_excludes_sink():
    state = filled(CacheConfig(sink_frames=2, recent_frames=2), 10)
    view = state.temporal_view(11)
    assert view.sink_count == 0
    assert len(view) == 2
    np.testing.assert_array_equal(view.positions, [9, 10])


def test_sliding_window_when_sink_disabled():
    state = filled(CacheConfig(sink_frames=0, recent_frames=3), 20)
    assert state.sink == []
    view = state.view(21)
    assert view.sink_count == 0
    np.testing.assert_array_equal(view.positions, [18, 19, 20])


def test_placement_mode_positions():
    state = filled(CacheConfig(sink_frames=3, recent_frames=3), 999)
    i = 1000
    fixed = state.placement_positions("fixed", i)
    assert fixed == [0, 1, 2]
    # fixed placement leaves relative offsets far beyond the trained range
    assert i - max(fixed) > 64
    rebased = state.placement_positions("rebased", i)
    assert rebased == [994, 995, 996]

    small = filled(CacheConfig(sink_frames=3, recent_frames=3), 9)
    overlap = small.placement_positions("overlap", 10)
    temporal = [e.frame_index for e in small.temporal]
    assert overlap == [7, 8, 9] and overlap == temporal
    in_window = small.placement_positions("in_window", 10)
    assert all(10 <= p <= 10 + small.config.window_frames - 1 for p in in_window)
    beyond = small.placement_positions("beyond", 10)
    assert all(p >= 10 + small.config.window_frames for p in beyond)
    with pytest.raises(ValueError):
        small.placement_positions("sideways", 10)
    assert set(PLACEMENT_MODES) == {"rebased", "fixed", "overlap", "in_window", "beyond"}


def test_rebased_relative_offset_constant_across_stream():
    cfg = CacheConfig(sink_frames=3, recent_frames=3, window_frames=5)
    state = CacheState(cfg)
    spans = set()
    for i in range(1, 200):
        state.append(entry(i))
        if len(state) == cfg.sink_frames + cfg.recent_frames:
            positions = state.placement_positions("rebased", i + 1)
            window_end = i + 1 + cfg.window_frames - 1
            spans.add(window_end - min(positions))
    assert spans == {cfg.span - 1}
