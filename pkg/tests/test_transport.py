import math

import numpy as np
import pytest

from stokesmf.errors import CapacityError, ConvergenceError, ValidationError
from stokesmf.transport import (
    Cloud,
    CostSpec,
    ground_cost,
    round_to_marginals,
    wasserstein,
    wasserstein_bottleneck,
    wasserstein_exact,
    wasserstein_sinkhorn,
)

import oracles

E1 = np.array([1.0, 0.0, 0.0])


def random_cloud(rng, n, orient=False):
    r = rng.normal(size=(n, 3)) if orient else None
    if r is not None:
        r /= np.linalg.norm(r, axis=1, keepdims=True)
    return Cloud(rng.normal(size=(n, 3)), r)


def test_exact_examples():
    a = Cloud([[0, 0, 0], E1])
    b = Cloud([2 * E1, 2.5 * E1])
    res = wasserstein_exact(a, b, CostSpec(p=2))
    assert res.value == pytest.approx(math.sqrt(3.125), rel=1e-15)
    assert res.value == pytest.approx(1.76777, abs=1e-5)
    np.testing.assert_array_equal(res.plan, [0, 1])
    for p in (1, 2, 3.5):
        assert wasserstein_exact(Cloud([[0, 0, 0]]), Cloud([[3.0, 4.0, 0]]), CostSpec(p=p)).value == pytest.approx(5.0)
    perm = Cloud(b.x[::-1])
    assert wasserstein_exact(b, perm, CostSpec(p=2)).value == 0.0


def test_bottleneck_example():
    a = Cloud([[0, 0, 0], E1])
    b = Cloud([E1, 3 * E1])
    assert wasserstein_bottleneck(a, b).value == 2.0
    assert wasserstein_bottleneck(a, a).value == 0.0


def test_exact_matches_brute_force():
    rng = np.random.default_rng(0)
    for trial in range(200):
        n = 1 + trial % 7
        a, b = random_cloud(rng, n), random_cloud(rng, n)
        for p in (1.0, 2.0):
            got = wasserstein_exact(a, b, CostSpec(p=p)).value
            assert abs(got - oracles.brute_force_wp(a.x, b.x, p)) < 1e-12
        assert abs(wasserstein_bottleneck(a, b).value - oracles.brute_force_bottleneck(a.x, b.x)) < 1e-12


def test_plan_cost_equals_value():
    rng = np.random.default_rng(1)
    a, b = random_cloud(rng, 40), random_cloud(rng, 40)
    res = wasserstein_exact(a, b, CostSpec(p=2))
    c = ground_cost(a, b) ** 2
    assert abs(math.sqrt(c[np.arange(40), res.plan].mean()) - res.value) < 1e-12
    bn = wasserstein_bottleneck(a, b)
    assert sorted(bn.plan) == list(range(40))
    assert ground_cost(a, b)[np.arange(40), bn.plan].max() == bn.value


def test_metric_axioms():
    rng = np.random.default_rng(2)
    for _ in range(30):
        a, b, c = (random_cloud(rng, 6) for _ in range(3))
        for p in (1.0, 2.0):
            cs = CostSpec(p=p)
            ab = wasserstein_exact(a, b, cs).value
            assert ab == wasserstein_exact(b, a, cs).value
            assert wasserstein_exact(a, a, cs).value == 0.0
            assert ab <= wasserstein_exact(a, c, cs).value + wasserstein_exact(c, b, cs).value + 1e-9


def test_monotone_in_p():
    rng = np.random.default_rng(3)
    for _ in range(30):
        a, b = random_cloud(rng, 8), random_cloud(rng, 8)
        vals = [wasserstein_exact(a, b, CostSpec(p=p)).value for p in (1.0, 1.5, 2.0, 4.0)]
        vals.append(wasserstein_bottleneck(a, b).value)
        assert all(x <= y + 1e-12 for x, y in zip(vals, vals[1:]))


def test_translation_invariance():
    # dyadic coordinates and shift keep every difference exact in floating point
    rng = np.random.default_rng(4)
    a = Cloud(rng.integers(-64, 64, size=(10, 3)) / 8.0)
    b = Cloud(rng.integers(-64, 64, size=(10, 3)) / 8.0)
    v = np.array([0.5, -2.25, 3.0])
    for p in (1.0, 2.0):
        assert wasserstein_exact(a.shifted(v), b.shifted(v), CostSpec(p=p)).value == \
            wasserstein_exact(a, b, CostSpec(p=p)).value
    assert wasserstein_bottleneck(a.shifted(v), b.shifted(v)).value == wasserstein_bottleneck(a, b).value
    # generic shifts agree to rounding
    c, d = random_cloud(rng, 10), random_cloud(rng, 10)
    w = rng.normal(size=3)
    assert abs(wasserstein_exact(c.shifted(w), d.shifted(w)).value - wasserstein_exact(c, d).value) < 1e-13


def test_phase_cost():
    a = Cloud([[0, 0, 0]], [[0, 0, 1.0]])
    b = Cloud([[1.0, 0, 0]], [[0, 0, -1.0]])
    assert wasserstein_exact(a, b, CostSpec(ground="phase")).value == 3.0
    assert wasserstein_exact(a, b).value == 1.0
    with pytest.raises(ValidationError):
        wasserstein_exact(Cloud([[0, 0, 0]]), b, CostSpec(ground="phase"))


def test_validation_and_capacity():
    with pytest.raises(ValidationError):
        wasserstein_exact(Cloud(np.zeros((2, 3))), Cloud(np.zeros((3, 3))))
    with pytest.raises(ValidationError):
        wasserstein_bottleneck(Cloud(np.zeros((2, 3))), Cloud(np.zeros((3, 3))))
    with pytest.raises(ValidationError):
        CostSpec(p=0.5)
    with pytest.raises(ValidationError):
        Cloud(np.zeros((0, 3)))
    with pytest.raises(ValidationError):
        wasserstein_sinkhorn(Cloud([[0, 0, 0]]), Cloud([[1.0, 0, 0]]), reg=0.0)
    big = Cloud(np.zeros((2049, 3)))
    with pytest.raises(CapacityError):
        wasserstein_exact(big, big)


def test_sinkhorn_close_to_exact():
    rng = np.random.default_rng(5)
    for _ in range(20):
        a, b = random_cloud(rng, 6), random_cloud(rng, 6)
        for p in (1.0, 2.0):
            ex = wasserstein_exact(a, b, CostSpec(p=p)).value
            sk = wasserstein_sinkhorn(a, b, CostSpec(p=p))
            assert abs(sk.value - ex) <= 0.05 * ex
            w = np.full(6, 1 / 6)
            assert np.abs(sk.plan.sum(axis=0) - w).max() < 1e-6
            assert np.abs(sk.plan.sum(axis=1) - w).max() < 1e-6


def test_sinkhorn_identical_clouds_decrease_to_zero():
    a = random_cloud(np.random.default_rng(6), 12)
    vals = [wasserstein_sinkhorn(a, a, reg=reg).value for reg in (1.0, 0.3, 0.1, 0.03, 0.01)]
    assert all(y < x for x, y in zip(vals, vals[1:]))
    assert vals[-1] < 1e-3


def test_sinkhorn_scaling():
    rng = np.random.default_rng(7)
    a, b = random_cloud(rng, 10), random_cloud(rng, 10)
    v = wasserstein_sinkhorn(a, b).value
    assert wasserstein_sinkhorn(a.scaled(2.0), b.scaled(2.0)).value == pytest.approx(2.0 * v, rel=1e-12)
    assert wasserstein_exact(a.scaled(2.0), b.scaled(2.0)).value == pytest.approx(
        2.0 * wasserstein_exact(a, b).value, rel=1e-14)


def test_sinkhorn_nonconvergence_reports_violation():
    rng = np.random.default_rng(8)
    a, b = random_cloud(rng, 30), random_cloud(rng, 30)
    with pytest.raises(ConvergenceError) as exc:
        wasserstein_sinkhorn(a, b, reg=1e-4, iters=3)
    assert exc.value.violation > 0


def test_rounding_hits_marginals():
    rng = np.random.default_rng(9)
    plan = rng.uniform(size=(5, 5)) / 25
    w = np.full(5, 0.2)
    out = round_to_marginals(plan, w, w)
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=0), w, atol=1e-15)
    np.testing.assert_allclose(out.sum(axis=1), w, atol=1e-15)


def test_dispatcher():
    rng = np.random.default_rng(10)
    a, b = random_cloud(rng, 5), random_cloud(rng, 5)
    assert wasserstein(a, b).solver == "exact"
    assert wasserstein(a, b, CostSpec(p=math.inf)).solver == "bottleneck"
