"""
Шаблонная грамматика текстовых описаний повреждений.

Каждое существительное/глагол повреждения имеет ≥ 3 синонимичных варианта,
позиции колёс называются явно. Выбор вариантов детерминирован генератором rng.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from app.zlik.sim.damage import DamageClass, DamageSpec, Wheel

HEALTHY_SENTENCE = "The vehicle is healthy with no structural damage."

WHEEL_WORDS = {
    Wheel.FL: "front left",
    Wheel.FR: "front right",
    Wheel.RL: "rear left",
    Wheel.RR: "rear right",
}
AXLE_WORDS = ("front", "rear")

TIRE_PRED = ("is punctured", "has burst", "is flat", "has been punctured")
TIRE_PRED_PLURAL = ("are punctured", "have burst", "are flat", "have been punctured")

SPRING_NOUN = ("suspension spring", "coil spring", "suspension")
SPRING_NOUN_PLURAL = ("suspension springs", "coil springs", "suspensions")
SPRING_PRED = ("is broken", "has snapped", "has failed")
SPRING_PRED_PLURAL = ("are broken", "have snapped", "have failed")

AXLE_NOUN = ("axle", "half-shaft", "drive shaft")
AXLE_PRED = ("is broken", "has snapped", "is fractured")
AXLE_ADJ = ("broken", "snapped", "fractured")

FALL_VERB = ("fell", "dropped", "tumbled")


def _pick(rng: np.random.Generator, options: Sequence[str]) -> str:
    return options[int(rng.integers(len(options)))]


def _join(words: list[str]) -> str:
    if len(words) == 1:
        return words[0]
    return ", ".join(words[:-1]) + " and " + words[-1]


def _positions(severity: Sequence[float]) -> list[str]:
    return [WHEEL_WORDS[Wheel(i)] for i, s in enumerate(severity) if s > 0]


def _tire_sentence(positions: list[str], rng: np.random.Generator) -> str:
    if len(positions) == 1:
        return f"The {positions[0]} tire {_pick(rng, TIRE_PRED)}."
    return f"The {_join(positions)} tires {_pick(rng, TIRE_PRED_PLURAL)}."


def _spring_sentence(positions: list[str], rng: np.random.Generator) -> str:
    if len(positions) == 1:
        return f"The {positions[0]} {_pick(rng, SPRING_NOUN)} {_pick(rng, SPRING_PRED)}."
    return f"The {_join(positions)} {_pick(rng, SPRING_NOUN_PLURAL)} {_pick(rng, SPRING_PRED_PLURAL)}."


def _axle_sentence(which: str, rng: np.random.Generator) -> str:
    noun = _pick(rng, AXLE_NOUN)
    if rng.random() < 0.5:
        return f"The {which} {noun} {_pick(rng, AXLE_PRED)}."
    return f"The vehicle has a {_pick(rng, AXLE_ADJ)} {which} {noun}."


def describe(d: DamageSpec, rng: np.random.Generator) -> str:
    """Описание повреждения на естественном языке."""
    cls_ = d.damage_class
    if cls_ == DamageClass.NO_DAMAGE:
        return HEALTHY_SENTENCE

    tires = _positions(d.tire_severity)
    springs = _positions(d.spring_severity)
    axles = [AXLE_WORDS[i] for i, broken in enumerate(d.axle_broken) if broken]

    if cls_ == DamageClass.TIRE_PUNCTURE:
        return _tire_sentence(tires, rng)

    if cls_ == DamageClass.TIRE_AND_SPRING:
        tire = _pick(rng, TIRE_PRED)
        noun = _pick(rng, SPRING_NOUN)
        pred = _pick(rng, SPRING_PRED)
        if rng.random() < 0.5:
            return f"The {tires[0]} tire {tire} and its {noun} {pred}."
        return f"The {tires[0]} tire {tire} and the {springs[0]} {noun} {pred}."

    if cls_ == DamageClass.MTPSB:
        both = [p for p in tires if p in springs]
        return (
            f"The {_join(both)} tires {_pick(rng, TIRE_PRED_PLURAL)} "
            f"and their {_pick(rng, SPRING_NOUN_PLURAL)} {_pick(rng, SPRING_PRED_PLURAL)}."
        )

    if cls_ == DamageClass.BROKEN_AXLE:
        return _axle_sentence(axles[0], rng)

    # FALL: перечисляем всё, что повреждено
    verb = _pick(rng, FALL_VERB)
    if d.fall_height_m is not None:
        parts = [f"The vehicle {verb} from about {round(d.fall_height_m):d} meters."]
    else:
        parts = [f"The vehicle {verb}."]
    if tires:
        parts.append(_tire_sentence(tires, rng))
    if springs:
        parts.append(_spring_sentence(springs, rng))
    for which in axles:
        parts.append(_axle_sentence(which, rng))
    if len(parts) == 1:
        parts.append("No structural damage is visible.")
    return " ".join(parts)


def describe_for_seed(d: DamageSpec, seed: int) -> str:
    """Описание, воспроизводимое по (d, seed)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E47]))
    return describe(d, rng)
