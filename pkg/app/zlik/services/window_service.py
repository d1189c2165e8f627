"""
Окна (история H, будущее P) по эпизодам.

Эпизоды хранятся склеенными плоскими массивами, окно задаётся смещениями, батч собирается
векторной индексацией. Для опорного момента t:
  история — элементы t−H+1..t относительной истории (s_{k−1}→s_k, u_k),
  будущие действия — u_{t+1}..u_{t+P−1},
  цели — s_{t+1}..s_{t+P} в системе s_t.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np
import torch

from app.zlik.core.frames import relative_history_array, relative_steps
from app.zlik.schemas.dataset import EpisodeRecord
from app.zlik.sim.damage import DamageClass

CLASS_INDEX = {c: i for i, c in enumerate(DamageClass)}
INDEX_CLASS = list(DamageClass)


@dataclass
class WindowBatch:
    history: torch.Tensor          # (B, H, 8)
    future_actions: torch.Tensor   # (B, P−1, 2)
    targets: torch.Tensor          # (B, P, 6)
    desc_idx: torch.Tensor         # (B,)
    class_idx: torch.Tensor        # (B,)
    window_idx: np.ndarray         # (B,)

    def __len__(self) -> int:
        return int(self.history.shape[0])


def anchor_range(n_states: int, h: int, p: int, stride: int) -> range:
    return range(h, n_states - p, stride)


class WindowSet:
    def __init__(
        self,
        records: Sequence[EpisodeRecord],
        h: int,
        p: int,
        stride: int = 1,
        descriptions: Optional[list[str]] = None,
    ) -> None:
        if h < 1 or p < 0 or stride < 1:
            raise ValueError(f"Некорректные параметры окон: h={h}, p={p}, stride={stride}")
        self.h, self.p, self.stride = h, p, stride
        self.descriptions = list(descriptions) if descriptions is not None else []
        desc_index = {d: i for i, d in enumerate(self.descriptions)}

        hist_parts, state_parts, action_parts = [], [], []
        hist_start, state_start, desc_idx, class_idx, episode_idx = [], [], [], [], []
        hist_off = state_off = 0
        for e, rec in enumerate(records):
            traj = rec.trajectory
            n = len(traj)
            if rec.description not in desc_index:
                desc_index[rec.description] = len(self.descriptions)
                self.descriptions.append(rec.description)
            anchors = np.asarray(anchor_range(n, h, p, stride), dtype=np.int64)
            if n >= 2:
                hist_parts.append(relative_history_array(traj))
                state_parts.append(traj.states)
                action_parts.append(traj.actions)
            if len(anchors):
                # строка истории k−1 соответствует элементу k
                hist_start.append(hist_off + anchors - h)
                state_start.append(state_off + anchors)
                desc_idx.append(np.full(len(anchors), desc_index[rec.description], dtype=np.int64))
                class_idx.append(np.full(len(anchors), CLASS_INDEX[rec.damage_class], dtype=np.int64))
                episode_idx.append(np.full(len(anchors), e, dtype=np.int64))
            if n >= 2:
                hist_off += n - 1
                state_off += n

        def _cat(parts: list, width: int, dtype) -> np.ndarray:
            return np.concatenate(parts).astype(dtype) if parts else np.zeros((0, width), dtype=dtype)

        self._hist = _cat(hist_parts, 8, np.float32)
        self._states = _cat(state_parts, 6, np.float64)
        self._actions = _cat(action_parts, 2, np.float32)
        self.hist_start = _cat(hist_start, 0, np.int64).reshape(-1)
        self.state_start = _cat(state_start, 0, np.int64).reshape(-1)
        self.desc_idx = _cat(desc_idx, 0, np.int64).reshape(-1)
        self.class_idx = _cat(class_idx, 0, np.int64).reshape(-1)
        self.episode_idx = _cat(episode_idx, 0, np.int64).reshape(-1)

    def __len__(self) -> int:
        return len(self.hist_start)

    def classes(self) -> list[DamageClass]:
        return [INDEX_CLASS[i] for i in np.unique(self.class_idx)]

    def indices_for(self, damage_class: DamageClass) -> np.ndarray:
        return np.flatnonzero(self.class_idx == CLASS_INDEX[damage_class])

    def history(self, idx: np.ndarray) -> np.ndarray:
        return self._hist[self.hist_start[idx, None] + np.arange(self.h)]

    def targets(self, idx: np.ndarray) -> np.ndarray:
        if self.p == 0:
            return np.zeros((len(idx), 0, 6), dtype=np.float32)
        rows = self.state_start[idx, None] + np.arange(1, self.p + 1)
        anchor = self._states[self.state_start[idx]][:, None, :]
        future = self._states[rows]
        return relative_steps(np.broadcast_to(anchor, future.shape), future).astype(np.float32)

    def future_actions(self, idx: np.ndarray) -> np.ndarray:
        if self.p <= 1:
            return np.zeros((len(idx), 0, 2), dtype=np.float32)
        rows = self.state_start[idx, None] + np.arange(1, self.p)
        return self._actions[rows]

    def batch(self, idx: np.ndarray) -> WindowBatch:
        idx = np.asarray(idx, dtype=np.int64)
        return WindowBatch(
            history=torch.from_numpy(self.history(idx)),
            future_actions=torch.from_numpy(np.ascontiguousarray(self.future_actions(idx))),
            targets=torch.from_numpy(self.targets(idx)),
            desc_idx=torch.from_numpy(self.desc_idx[idx]),
            class_idx=torch.from_numpy(self.class_idx[idx]),
            window_idx=idx,
        )

    def batches(
        self,
        batch_size: int,
        shuffle: bool = False,
        rng: Optional[np.random.Generator] = None,
        indices: Optional[np.ndarray] = None,
        limit: Optional[int] = None,
        drop_last: bool = False,
    ) -> Iterator[WindowBatch]:
        idx = np.arange(len(self)) if indices is None else np.asarray(indices, dtype=np.int64)
        if shuffle:
            idx = (rng or np.random.default_rng()).permutation(idx)
        if limit is not None:
            idx = idx[:limit]
        stop = len(idx) - (len(idx) % batch_size if drop_last else 0)
        for start in range(0, stop, batch_size):
            yield self.batch(idx[start:start + batch_size])

    def channel_stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Среднее и std каналов истории по всем шагам, покрытым окнами."""
        if len(self._hist) == 0:
            return np.zeros(8), np.ones(8)
        return self._hist.mean(axis=0, dtype=np.float64), self._hist.std(axis=0, dtype=np.float64)
