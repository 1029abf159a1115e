import numpy as np
import pytest

from facevoice._validation import ValidationError
from facevoice.adapter import CenterBank, loss_cen, loss_con, loss_rec, update_centers
from facevoice.embedding import RandomSource


def test_loss_rec_cases():
    s = RandomSource(0).normal(192)
    assert loss_rec(s, s) == pytest.approx(0.0, abs=1e-15)
    assert loss_rec(-s, s) == pytest.approx(2.0)
    e = np.eye(192)
    assert loss_rec(e[0], e[1]) == 1.0
    with pytest.raises(ValidationError):
        loss_rec(np.zeros(192), s)


def test_loss_con_cases():
    a = np.array([1.0, 0.0])
    b = np.array([0.5, np.sqrt(0.75)])  # cos(a, b) = 0.5
    assert loss_con([(a, 1), (a, 1)]) == pytest.approx(0.0, abs=1e-15)
    assert loss_con([(a, 1), (np.array([0.0, 1.0]), 2)], margin=0.2) == 0.0
    assert loss_con([(a, 1), (a, 1), (b, 2)], margin=0.2) == pytest.approx(0.2, abs=1e-12)
    with pytest.raises(ValidationError):
        loss_con([(a, 1)])


def test_loss_cen_cases():
    bank = CenterBank(0.5, 3)
    bank.update(np.zeros(3), "x")
    assert loss_cen([(np.array([1.0, 0, 0]), "x")], bank) == 0.5
    bank.update(np.array([1.0, 1.0, 1.0]), "y")
    bank.centers["y"] = np.array([1.0, 1.0, 1.0])
    batch = [(np.array([2.0, 0, 0]), "x"), (np.array([1.0, 1.0, 2.0]), "y")]
    assert loss_cen(batch, bank) == 2.5
    assert loss_cen([(np.zeros(3), "x"), (np.ones(3), "y")], bank) == 0.0
    with pytest.raises(ValidationError):
        loss_cen([(np.zeros(3), "unseen")], bank)


def test_update_centers_rates():
    for alpha, expected in ((1.0, [2.0, 2.0]), (0.0, [0.0, 0.0]), (0.5, [1.0, 1.0])):
        bank = CenterBank(alpha, 2)
        bank.update(np.zeros(2), "c")
        update_centers(bank, [(np.array([2.0, 2.0]), "c")])
        assert np.array_equal(bank.get("c"), expected)
    with pytest.raises(ValidationError):
        CenterBank(1.5)


@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
def test_center_fixed_point_is_geometric(alpha):
    bank = CenterBank(alpha, 4)
    bank.update(np.zeros(4), "c")
    target = RandomSource(1).normal(4)
    prev = np.linalg.norm(bank.get("c") - target)
    for _ in range(20):
        update_centers(bank, [(target, "c")])
        cur = np.linalg.norm(bank.get("c") - target)
        assert cur == pytest.approx((1 - alpha) * prev, rel=1e-9, abs=1e-15)
        prev = cur


def test_bank_copy_is_independent():
    bank = CenterBank(0.5, 2)
    bank.update(np.ones(2), "a")
    other = bank.copy()
    other.update(np.zeros(2), "a")
    assert np.array_equal(bank.get("a"), np.ones(2))
