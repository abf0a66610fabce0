import numpy as np
import pytest

from motionq.numkit import Rng
from motionq.queues import FeatureQueue, init_queues, mean_hidden, push_pop


def test_init_shapes_and_zero_content():
    queues = init_queues(1, 3, 32)
    assert len(queues) == 1
    assert queues[0].hidden.shape == (3, 32)
    assert queues[0].cell.shape == (3, 32)
    assert not queues[0].hidden.any() and not queues[0].cell.any()


def test_init_degenerate_single_slot():
    queues = init_queues(2, 1, 4)
    assert len(queues) == 2
    assert all(qu.q == 1 and qu.h == 4 for qu in queues)


def test_init_rejects_zero_counts():
    for bad in [(0, 3, 4), (1, 0, 4), (1, 3, 0)]:
        with pytest.raises(ValueError):
            init_queues(*bad)


def test_queue_rejects_nonfinite():
    with pytest.raises(ValueError):
        FeatureQueue(np.array([[np.inf, 0.0]]), np.zeros((1, 2)))


def test_push_pop_single_slot_fully_replaces():
    qu = init_queues(1, 1, 2)[0]
    out = push_pop(qu, np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    assert np.array_equal(out.hidden, [[1.0, 2.0]])
    assert np.array_equal(out.cell, [[3.0, 4.0]])


def test_push_pop_hand_trace():
    # four pushes onto a q=3 zero queue leave the last three
    qu = init_queues(1, 3, 1)[0]
    for v in (1.0, 2.0, 3.0, 4.0):
        qu = push_pop(qu, np.array([v]), np.array([-v]))
    assert np.array_equal(qu.hidden, [[2.0], [3.0], [4.0]])
    assert np.array_equal(qu.cell, [[-2.0], [-3.0], [-4.0]])


def test_push_pop_length_preserved():
    qu = init_queues(1, 4, 3)[0]
    out = push_pop(qu, np.ones(3), np.ones(3))
    assert out.q == 4 and out.h == 3


def test_push_pop_width_mismatch():
    qu = init_queues(1, 2, 3)[0]
    with pytest.raises(ValueError):
        push_pop(qu, np.ones(4), np.ones(3))


def test_push_pop_value_semantics():
    qu = init_queues(1, 2, 2)[0]
    before = qu.hidden.copy()
    push_pop(qu, np.ones(2), np.ones(2))
    assert np.array_equal(qu.hidden, before)


def test_full_turnover_after_q_pushes():
    rng = Rng(0)
    q, h = 3, 4
    a = FeatureQueue(rng.normal((q, h)), rng.normal((q, h)))
    b = FeatureQueue(rng.normal((q, h)), rng.normal((q, h)))
    pushes = [(rng.normal(h), rng.normal(h)) for _ in range(q)]
    for hv, cv in pushes:
        a = push_pop(a, hv, cv)
        b = push_pop(b, hv, cv)
    assert np.array_equal(a.hidden, b.hidden)
    assert np.array_equal(a.cell, b.cell)


def test_mean_hidden_zero_queue():
    qu = init_queues(1, 3, 5)[0]
    assert not mean_hidden(qu).any()


def test_mean_hidden_hand_value():
    qu = FeatureQueue(np.array([[2.0, 0.0], [0.0, 2.0]]), np.zeros((2, 2)))
    assert np.array_equal(mean_hidden(qu), [1.0, 1.0])


def test_mean_hidden_single_slot_identity():
    entry = np.array([0.3, -0.7, 2.5])
    qu = FeatureQueue(entry[None], np.zeros((1, 3)))
    assert np.array_equal(mean_hidden(qu), entry)


def test_mean_hidden_permutation_invariant():
    rng = Rng(1)
    hid = rng.normal((4, 6))
    base = mean_hidden(FeatureQueue(hid, np.zeros((4, 6))))
    perm = mean_hidden(FeatureQueue(hid[::-1].copy(), np.zeros((4, 6))))
    assert np.allclose(base, perm, atol=1e-15)
