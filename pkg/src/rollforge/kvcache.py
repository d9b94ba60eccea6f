"""Streaming KV cache: attention sink plus a ring of recent frames.

The first sink_frames emitted frames are cached permanently (the
attention sink); after that each emitted frame enters a FIFO ring
holding the last recent_frames entries.  Total cached entries never
exceed sink_frames + recent_frames, so memory is constant for streams
of any length.

Effective positions re-index the sink to sit immediately before the
ring regardless of how old its frames really are: for a window
starting at stream index i, sink entries get positions ending at
i - recent_frames - 1 and ring entries positions ending at i - 1.  The
caller subtracts a common offset so the leftmost position becomes 0;
keys are stored unrotated, so this re-indexing is exact.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .denoiser import CacheView, KvEntry, stack_entries

PLACEMENT_MODES = ("rebased", "fixed", "overlap", "in_window", "beyond")


@dataclass(frozen=True)
class CacheConfig:
    """Cache geometry, measured in frames.

    span is the total bidirectional attention extent
    sink_frames + recent_frames + window_frames; it may be passed
    explicitly as a cross-check but must then match the sum.
    """

    sink_frames: int = 1
    recent_frames: int = 1
    window_frames: int = 5
    total_span: int | None = None

    def __post_init__(self):
        if self.sink_frames < 0 or self.recent_frames < 0:
            raise ValueError("cache sizes must be non-negative")
        if self.window_frames < 1:
            raise ValueError("window_frames must be positive")
        if self.total_span is not None and self.total_span != self.span:
            raise ValueError(f"total_span {self.total_span} != "
                             f"{self.sink_frames} + {self.recent_frames} + {self.window_frames}")

    @property
    def span(self) -> int:
        return self.sink_frames + self.recent_frames + self.window_frames


class CacheState:
    """Mutable cache of one stream; owned by a single generation loop."""

    def __init__(self, config: CacheConfig):
        self.config = config
        self.sink: list[KvEntry] = []
        self.temporal: deque[KvEntry] = deque(maxlen=config.recent_frames)
        self.next_frame_index = 1

    def __len__(self) -> int:
        return len(self.sink) + len(self.temporal)

    def append(self, entry: KvEntry):
        """File the entry for the next expected frame; evicts FIFO."""
        if entry.frame_index != self.next_frame_index:
            raise ValueError(f"expected frame {self.next_frame_index}, "
                             f"got {entry.frame_index}")
        if entry.frame_index <= self.config.sink_frames:
            self.sink.append(entry)
        else:
            self.temporal.append(entry)
        self.next_frame_index += 1
        self._check()

    def _check(self):
        cfg = self.config
        assert len(self.sink) <= cfg.sink_frames
        assert len(self.temporal) <= cfg.recent_frames
        indices = [e.frame_index for e in self.temporal]
        if indices:
            assert indices == list(range(self.next_frame_index - len(indices),
                                         self.next_frame_index))
        assert [e.frame_index for e in self.sink] == list(range(1, len(self.sink) + 1))

    def view(self, window_start: int) -> CacheView:
        """Sink + ring entries with their effective positions.

        Positions are the re-indexed ones (sink immediately before the
        ring, ring immediately before the window) and may be negative
        early in a stream; callers rebase by a common offset.
        """
        if window_start != self.next_frame_index:
            raise ValueError(f"view for window start {window_start} but next frame "
                             f"is {self.next_frame_index}")
        i, cfg = window_start, self.config
        positions = [i - cfg.recent_frames - len(self.sink) + s
                     for s in range(len(self.sink))]
        positions += [i - len(self.temporal) + u for u in range(len(self.temporal))]
        return stack_entries(list(self.sink) + list(self.temporal), positions,
                             sink_count=len(self.sink))

    def temporal_view(self, window_start: int) -> CacheView:
        """Ring entries only, as seen by the KV-encoding pass."""
        if window_start != self.next_frame_index:
            raise ValueError(f"view for window start {window_start} but next frame "
                             f"is {self.next_frame_index}")
        positions = [window_start - len(self.temporal) + u
                     for u in range(len(self.temporal))]
        return stack_entries(list(self.temporal), positions, sink_count=0)

    def placement_positions(self, mode: str, window_start: int) -> list[int]:
        """Sink positions each re-indexing option would assign.

        Only the first option (rebased) is used by generation; the
        rest exist for diagnostics: fixed keeps original indices 0..,
        overlap collides with the ring, in_window collides with the
        window, beyond places the sink past the window.
        """
        if mode not in PLACEMENT_MODES:
            raise ValueError(f"unknown placement mode {mode!r}; options: {PLACEMENT_MODES}")
        i, cfg = window_start, self.config
        n = len(self.sink)
        if mode == "rebased":
            return [i - cfg.recent_frames - n + s for s in range(n)]
        if mode == "fixed":
            return list(range(n))
        if mode == "overlap":
            return [i - cfg.sink_frames + s for s in range(n)]
        if mode == "in_window":
            return [i + s for s in range(n)]
        return [i + cfg.window_frames + s for s in range(n)]
