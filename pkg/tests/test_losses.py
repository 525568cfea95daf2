import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpt_aqa import autodiff as ad
from tpt_aqa.autodiff import Parameter, Tape
from tpt_aqa.errors import ContractError
from tpt_aqa.losses import (
    aggregate_attention_losses,
    attention_center,
    diversity_loss,
    ranking_loss,
    sparsity_loss,
)


def point_mass(T, t):
    a = np.zeros(T)
    a[t - 1] = 1.0
    return a


def random_rows(rng, K, T, spread=2.0):
    return ad.softmax(rng.standard_normal((K, T)) * spread).data


# -------------------------------------------------------------------- centers


def test_center_point_mass():
    assert attention_center(point_mass(20, 7)[None]).data[0] == 7.0


def test_center_uniform():
    assert attention_center(np.full((1, 20), 1 / 20)).data[0] == pytest.approx(10.5, abs=1e-12)


def test_center_two_point():
    a = 0.5 * point_mass(10, 2) + 0.5 * point_mass(10, 6)
    assert attention_center(a[None]).data[0] == pytest.approx(4.0)


def test_center_rejects_unnormalised_rows():
    with pytest.raises(ContractError):
        attention_center(np.full((2, 5), 0.3))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 25), st.integers(0, 2**31 - 1))
def test_centers_within_clip_range(K, T, seed):
    a = random_rows(np.random.default_rng(seed), K, T, spread=5.0)
    c = attention_center(a).data
    assert np.all(c >= 1 - 1e-12) and np.all(c <= T + 1e-12)


# -------------------------------------------------------------------- ranking


def test_ranking_satisfied_margins_zero():
    assert ranking_loss(np.array([3.0, 9.0, 15.0]), 20, 1.0).item() == 0.0


def test_ranking_tied_centers():
    assert ranking_loss(np.array([10.0, 10.0]), 20, 1.0).item() == 1.0


def test_ranking_left_boundary_collapse():
    assert ranking_loss(np.array([1.0]), 20, 2.0).item() == 2.0


def _ranking_zero_condition(c, T, m):
    return (
        all(c[k + 1] - c[k] >= m for k in range(len(c) - 1))
        and c[0] >= 1 + m
        and c[-1] <= T - m
    )


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.integers(1, 20), min_size=1, max_size=6),
    st.sampled_from([0.5, 1.0, 2.0]),
)
def test_ranking_zero_iff_margins_hold(centers, m):
    c = np.array(centers, dtype=float)
    loss = ranking_loss(c, 20, m).item()
    assert loss >= 0
    assert (loss == 0.0) == _ranking_zero_condition(c, 20, m)


def test_ranking_reversal_is_penalised_but_diversity_is_not():
    c = np.array([3.0, 7.0, 12.0, 16.0])
    assert ranking_loss(c, 20, 1.0).item() == 0.0
    assert ranking_loss(c[::-1].copy(), 20, 1.0).item() > 0
    assert diversity_loss(c, 1.5).item() == diversity_loss(c[::-1].copy(), 1.5).item()


def test_ranking_batched_matches_rows():
    rng = np.random.default_rng(0)
    c = rng.uniform(1, 20, (5, 4))
    batched = ranking_loss(c, 20, 1.0).data
    np.testing.assert_allclose(batched, [ranking_loss(row, 20, 1.0).item() for row in c])


# ------------------------------------------------------------------- sparsity


def test_sparsity_point_mass_row_is_zero():
    a = np.stack([point_mass(12, 3), point_mass(12, 11)])
    assert sparsity_loss(a).item() < 1e-6


def test_sparsity_uniform_row_hand_value():
    assert sparsity_loss(np.full((1, 4), 0.25)).item() == pytest.approx(1.0, abs=1e-12)


def _mad_oracle(row):
    center = sum((t + 1) * row[t] for t in range(len(row)))
    return sum(abs((t + 1) - center) * row[t] for t in range(len(row)))


def test_sparsity_matches_scalar_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        K, T = rng.integers(1, 6), rng.integers(2, 25)
        a = random_rows(rng, K, T)
        expected = sum(_mad_oracle(list(row)) for row in a)
        assert sparsity_loss(a).item() == pytest.approx(expected, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(2, 20), st.integers(0, 2**31 - 1))
def test_sparsity_non_negative(K, T, seed):
    assert sparsity_loss(random_rows(np.random.default_rng(seed), K, T)).item() >= 0


def test_sparsity_gradient_flows_through_center():
    rng = np.random.default_rng(2)
    logits = Parameter("z", rng.standard_normal((3, 6)))
    with Tape() as tape:
        tape.backward(sparsity_loss(ad.softmax(logits)))
    full = logits.grad.copy()
    logits.grad = None
    with Tape() as tape:
        tape.backward(sparsity_loss(ad.softmax(logits), detach_center=True))
    assert not np.allclose(full, logits.grad)


# ------------------------------------------------------------------ diversity


def test_diversity_far_apart_is_zero():
    assert diversity_loss(np.array([1.0, 20.0]), 1.0).item() < 1e-40


def test_diversity_coincident_pair_is_one():
    assert diversity_loss(np.array([5.0, 5.0]), 2.0).item() == 1.0


def test_diversity_permutation_invariant():
    rng = np.random.default_rng(3)
    c = rng.uniform(1, 20, 5)
    base = diversity_loss(c, 3.0).item()
    for perm in itertools.permutations(range(5)):
        assert abs(diversity_loss(c[list(perm)], 3.0).item() - base) < 1e-12


# ---------------------------------------------------------------- aggregation


def test_aggregate_single_layer():
    a = random_rows(np.random.default_rng(4), 3, 10)
    rank, sparse = aggregate_attention_losses([a], margin=1.0)
    assert rank.item() == ranking_loss(attention_center(a), 10, 1.0).item()
    assert sparse.item() == sparsity_loss(a).item()


def test_aggregate_duplicate_layer_doubles():
    a = random_rows(np.random.default_rng(5), 3, 10, spread=4.0)
    r1, s1 = aggregate_attention_losses([a])
    r2, s2 = aggregate_attention_losses([a, a])
    assert r2.item() == pytest.approx(2 * r1.item()) and s2.item() == pytest.approx(2 * s1.item())


def test_aggregate_equals_sum_of_layers():
    rng = np.random.default_rng(6)
    maps = [random_rows(rng, 4, 12, spread=3.0) for _ in range(2)]
    rank, sparse = aggregate_attention_losses(maps, margin=1.5)
    r = sum(ranking_loss(attention_center(m), 12, 1.5).item() for m in maps)
    s = sum(sparsity_loss(m).item() for m in maps)
    assert abs(rank.item() - r) < 1e-12 and abs(sparse.item() - s) < 1e-12


@pytest.mark.parametrize("order_loss", ["rank", "diversity"])
def test_attention_loss_gradients_wrt_logits(order_loss):
    rng = np.random.default_rng(7)
    logits = [rng.standard_normal((2, 3, 8)) * 1.5 for _ in range(2)]

    def f(*zs):
        order, sparse = aggregate_attention_losses(
            [ad.softmax(z) for z in zs], margin=1.0, order_loss=order_loss, sigma=2.0
        )
        return order.sum() + sparse.sum()

    params = [Parameter(f"z{i}", z.copy()) for i, z in enumerate(logits)]
    with Tape() as tape:
        tape.backward(f(*params))
    for p in params:
        numeric = ad.numerical_gradient(lambda: float(f(*params).item()), p.data, 1e-6)
        assert ad.relative_error(p.grad, numeric) < 1e-4
