"""
Детерминированный оракул динамики повреждённого автомобиля.

Номинальная модель — одноколёсная (unicycle). Повреждение:
- шины снижают тягу: v_eff = v·max(0, 1 − k_v·Σtire), сломанная ось умножает на axle_factor,
  класс MTPSB дополнительно ограничен по модулю v_cap_mtpsb;
- асимметрия шин по бортам даёт увод по рысканию: ω_eff = ω + k_ω·v·[(FL+RL) − (FR+RR)],
  повреждение слева уводит влево (ω > 0);
- z, roll, pitch — синусоиды с фазой колеса; амплитуда пропорциональна суммарной степени
  (шина + пружина) повреждённых углов. При sin(фазы) > 0 повреждённый перед клюёт вниз
  (pitch > 0, ось y влево), повреждённый левый борт проседает (roll < 0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from app.zlik.core.frames import wrap_angle
from app.zlik.core.types import Action, State, Trajectory
from app.zlik.schemas.config import SimConfig
from app.zlik.sim.damage import DamageClass, DamageSpec
from app.zlik.sim.policy import random_walk_policy

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, slots=True)
class _DamageTerms:
    """Предвычисленные для шага коэффициенты повреждения."""
    speed_factor: float
    speed_cap: float
    yaw_bias: float
    heave: float
    pitch_gain: float
    roll_gain: float


def _damage_terms(d: DamageSpec, cfg: SimConfig) -> _DamageTerms:
    t = d.tire_severity
    corner = d.corner_severity
    factor = max(0.0, 1.0 - cfg.k_v * sum(t))
    if any(d.axle_broken):
        factor *= cfg.axle_factor
    cap = cfg.v_cap_mtpsb if d.damage_class == DamageClass.MTPSB else math.inf
    amp = cfg.amplitude_scale
    front_minus_rear = float(corner[0] + corner[1] - corner[2] - corner[3])
    left_minus_right = float(corner[0] + corner[2] - corner[1] - corner[3])
    return _DamageTerms(
        speed_factor=factor,
        speed_cap=cap,
        yaw_bias=cfg.k_omega * ((t[0] + t[2]) - (t[1] + t[3])),
        heave=-cfg.k_z * amp * float(corner.sum()),
        pitch_gain=cfg.k_rp * amp * front_minus_rear,
        roll_gain=-cfg.k_rp * amp * left_minus_right,
    )


def validate_damage(d: DamageSpec) -> DamageSpec:
    """Повторная проверка инвариантов (защищает от объектов, собранных в обход валидации)."""
    return DamageSpec.parse(d.to_json_dict())


def _step(
    s: np.ndarray,
    v: float,
    omega: float,
    terms: _DamageTerms,
    phase: float,
    noise: np.ndarray,
    cfg: SimConfig,
) -> tuple[np.ndarray, float]:
    v_eff = v * terms.speed_factor
    if v_eff > terms.speed_cap:
        v_eff = terms.speed_cap
    elif v_eff < -terms.speed_cap:
        v_eff = -terms.speed_cap
    omega_eff = omega + terms.yaw_bias * v

    x, y, _, _, _, yaw = s
    x += v_eff * math.cos(yaw) * cfg.dt
    y += v_eff * math.sin(yaw) * cfg.dt
    yaw += omega_eff * cfg.dt

    phase = math.fmod(phase + abs(v_eff) * cfg.omega_wheel * cfg.dt, TWO_PI)
    osc = math.sin(phase)

    out = np.empty(6, dtype=np.float64)
    out[0] = x + noise[0]
    out[1] = y + noise[1]
    out[2] = terms.heave * osc + noise[2] + 0.0
    out[3] = wrap_angle(terms.roll_gain * osc + noise[3] + 0.0)
    out[4] = wrap_angle(terms.pitch_gain * osc + noise[4] + 0.0)
    out[5] = wrap_angle(yaw + noise[5])
    return out, phase


def _noise_std(cfg: SimConfig) -> np.ndarray:
    return np.array([cfg.noise_pos_std] * 3 + [cfg.noise_ang_std] * 3, dtype=np.float64)


def step(
    s: State,
    u: Action,
    d: DamageSpec,
    phase: float,
    rng: np.random.Generator,
    cfg: SimConfig | None = None,
) -> tuple[State, float]:
    """
    Один шаг интегрирования dt. Возвращает новое состояние и фазу колёс.
    """
    cfg = cfg or SimConfig()
    d = validate_damage(d)
    terms = _damage_terms(d, cfg)
    noise = rng.standard_normal(6) * _noise_std(cfg)
    out, phase = _step(s.as_array(), u.v, u.omega, terms, phase, noise, cfg)
    return State.from_array(out), phase


def simulate(
    d: DamageSpec,
    actions: np.ndarray,
    rng: np.random.Generator,
    cfg: SimConfig,
    initial: State | None = None,
    phase: float = 0.0,
) -> Trajectory:
    """
    Прогоняет последовательность действий (N, 2) и возвращает траекторию из N состояний:
    s_0 = initial, s_{k+1} = step(s_k, u_k). Последнее действие записывается, но не исполняется.
    """
    d = validate_damage(d)
    terms = _damage_terms(d, cfg)
    n = len(actions)
    states = np.empty((n, 6), dtype=np.float64)
    states[0] = (initial or State(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)).as_array()
    noise = rng.standard_normal((max(n - 1, 0), 6)) * _noise_std(cfg)
    for k in range(n - 1):
        states[k + 1], phase = _step(
            states[k], float(actions[k, 0]), float(actions[k, 1]), terms, phase, noise[k], cfg
        )
    return Trajectory(states=states, actions=actions, dt=cfg.dt)


def simulate_episode(d: DamageSpec, seed: int, cfg: SimConfig) -> Trajectory:
    """
    Эпизод случайного блуждания: траектория однозначно задаётся (d, seed, cfg).
    """
    ss = np.random.SeedSequence(seed)
    policy_ss, dyn_ss = ss.spawn(2)
    policy_rng = np.random.default_rng(policy_ss)
    dyn_rng = np.random.default_rng(dyn_ss)
    actions = random_walk_policy(policy_rng, cfg)
    yaw0 = wrap_angle(float(dyn_rng.uniform(-math.pi, math.pi)))
    phase0 = float(dyn_rng.uniform(0.0, TWO_PI))
    initial = State(0.0, 0.0, 0.0, 0.0, 0.0, yaw0)
    return simulate(d, actions, dyn_rng, cfg, initial=initial, phase=phase0)
