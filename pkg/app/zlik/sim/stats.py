"""
Сводные статистики эпизода и классификатор по ближайшему центроиду.
Используются для проверки того, что в данных есть сигнал, различающий классы.
"""
from __future__ import annotations

from typing import Hashable, Sequence

import numpy as np

from app.zlik.core.frames import relative_steps
from app.zlik.core.types import Trajectory

FEATURE_NAMES = ("speed_ratio", "yaw_bias", "z_rms", "roll_rms", "pitch_rms")


def episode_features(traj: Trajectory) -> np.ndarray:
    """
    speed_ratio — МНК-оценка v_eff / v по продольному смещению;
    yaw_bias — МНК-оценка |(dyaw − ω·dt) / (v·dt)|;
    *_rms — среднеквадратичные колебания z, roll, pitch.
    """
    rel = relative_steps(traj.states[:-1], traj.states[1:])
    cmd = traj.actions[:-1]
    vdt = cmd[:, 0] * traj.dt
    denom = float(vdt @ vdt) or 1.0
    speed_ratio = float(rel[:, 0] @ vdt) / denom
    yaw_resid = rel[:, 5] - cmd[:, 1] * traj.dt
    yaw_bias = abs(float(yaw_resid @ vdt) / denom)
    osc = traj.states[:, 2:5]
    rms = np.sqrt(np.mean((osc - osc.mean(axis=0)) ** 2, axis=0))
    return np.array([speed_ratio, yaw_bias, *rms], dtype=np.float64)


class NearestCentroid:
    """Классификатор по ближайшему центроиду в стандартизованных признаках."""

    def fit(self, features: np.ndarray, labels: Sequence[Hashable]) -> NearestCentroid:
        features = np.asarray(features, dtype=np.float64)
        self.scale_ = features.std(axis=0)
        self.scale_[self.scale_ == 0] = 1.0
        z = features / self.scale_
        self.classes_ = sorted(set(labels), key=str)
        labels_arr = np.asarray(labels, dtype=object)
        self.centroids_ = np.stack([z[labels_arr == c].mean(axis=0) for c in self.classes_])
        return self

    def predict(self, features: np.ndarray) -> list:
        z = np.asarray(features, dtype=np.float64) / self.scale_
        d = ((z[:, None, :] - self.centroids_[None, :, :]) ** 2).sum(axis=-1)
        return [self.classes_[i] for i in d.argmin(axis=1)]

    def score(self, features: np.ndarray, labels: Sequence[Hashable]) -> float:
        pred = self.predict(features)
        return float(np.mean([p == t for p, t in zip(pred, labels)]))
