import numpy as np

from app.zlik.sim.damage import DamageClass, make_damage, sample_damage
from app.zlik.sim.describe import HEALTHY_SENTENCE, describe, describe_for_seed


def test_healthy_sentence():
    d = make_damage(damage_class=DamageClass.NO_DAMAGE)
    assert describe(d, np.random.default_rng(0)) == HEALTHY_SENTENCE


def test_describe_is_deterministic_per_seed():
    d = make_damage(damage_class=DamageClass.TIRE_PUNCTURE, tire_severity=(0, 1.0, 0, 0))
    assert describe_for_seed(d, 11) == describe_for_seed(d, 11)


def test_tire_puncture_names_wheel_and_varies_wording():
    d = make_damage(damage_class=DamageClass.TIRE_PUNCTURE, tire_severity=(0, 0, 0, 1.0))
    texts = {describe_for_seed(d, seed) for seed in range(50)}
    assert all("rear right" in t for t in texts)
    assert len(texts) >= 3


def test_mtpsb_mentions_both_wheels():
    d = make_damage(
        damage_class=DamageClass.MTPSB,
        tire_severity=(1.0, 0, 1.0, 0),
        spring_severity=(1.0, 0, 1.0, 0),
    )
    text = describe_for_seed(d, 3)
    assert "front left" in text and "rear left" in text


def test_broken_axle_names_axle():
    d = make_damage(damage_class=DamageClass.BROKEN_AXLE, axle_broken=(True, False))
    texts = {describe_for_seed(d, seed) for seed in range(30)}
    assert all("front" in t for t in texts)
    assert any("half-shaft" in t for t in texts)


def test_fall_mentions_height():
    d = sample_damage(DamageClass.FALL, np.random.default_rng(4))
    text = describe_for_seed(d, 4)
    assert f"{round(d.fall_height_m):d} meters" in text


def test_descriptions_are_nonempty_for_every_class():
    for i, cls_ in enumerate(DamageClass):
        d = sample_damage(cls_, np.random.default_rng(i))
        assert describe_for_seed(d, i).strip()
