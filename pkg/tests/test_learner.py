import numpy as np
import pytest
from conftest import random_examples

from stagepoly.errors import EmptyData, InvalidParam, NumericOverflow
from stagepoly.features import (
    Example,
    HashConfig,
    Monomial,
    SparseVector,
    constant_slot,
    expanded_monomials,
    hash_monomial,
)
from stagepoly.learner import (
    LearnerConfig,
    OnlineLearner,
    WeightVector,
    evaluate,
    gradient,
    sgd_step,
    step_size,
    train,
    tune_learning_rate,
)


def _sv(d):
    return SparseVector(np.array(list(d), dtype=np.int64), np.array(list(d.values()), dtype=float))


def test_gradient_examples():
    w = WeightVector(4)
    assert gradient(w, _sv({2: 1.0}), 1.0).to_dict() == {2: -1.0}
    w.weights[2] = 2.0
    assert gradient(w, _sv({2: 1.0}), 0.0, l2=0.5).to_dict() == {2: 3.0}
    assert gradient(w, _sv({2: 1.0}), 2.0).to_dict() == {2: 0.0}


def test_gradient_non_finite_prediction():
    w = WeightVector(4)
    w.weights[1] = np.inf
    with pytest.raises(NumericOverflow):
        gradient(w, _sv({1: 1.0}), 0.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_sgd_step_examples():
    w = WeightVector(4)
    sgd_step(w, _sv({3: -1.0}), 0.5)
    assert w.weights[3] == 0.5 and np.count_nonzero(w.weights) == 1
    before = w.weights.copy()
    sgd_step(w, SparseVector(np.array([], dtype=np.int64), np.array([])), 0.5)
    assert np.array_equal(w.weights, before)
    with pytest.raises(InvalidParam):
        sgd_step(w, _sv({3: 1.0}), 0.0)
    with pytest.raises(NumericOverflow):
        sgd_step(w, _sv({3: 1e308}), 1e10)


def test_sgd_step_adaptive_accumulates():
    w = WeightVector(4)
    sgd_step(w, _sv({1: 2.0}), 0.1, adaptive=True)
    sgd_step(w, _sv({1: 2.0}), 0.1, adaptive=True)
    assert w.grad_sq[1] == 8.0
    assert w.weights[1] == pytest.approx(-0.1 - 0.1 * 2.0 / np.sqrt(8.0))


def test_step_sizes():
    assert step_size("theorem", 9, l2=0.1) == pytest.approx(1.0)
    assert step_size("fixed", 4, learning_rate=0.5) == 0.25
    assert step_size("adaptive", 100, learning_rate=0.3) == 0.3


def test_config_validation():
    with pytest.raises(InvalidParam):
        LearnerConfig(step_mode="theorem")
    with pytest.raises(InvalidParam):
        LearnerConfig(stage_poly=True, expand="quad")
    with pytest.raises(InvalidParam):
        LearnerConfig(bits=40)
    LearnerConfig(stage_poly=True, expand="bigram")


def test_evaluate_examples():
    cfg = LearnerConfig(task="binary", stage_poly=False)
    m = OnlineLearner(cfg)
    ones = [Example([(1, 1.0)], label=1.0) for _ in range(3)]
    assert evaluate(m, ones) == 1.0
    m.w.weights[hash_monomial(Monomial((1,)), m.hash)] = 1.0
    mixed = ones + [Example([(2, 1.0)], label=-1.0)]
    assert evaluate(m, mixed) == 0.0
    reg = OnlineLearner(LearnerConfig(task="regression", stage_poly=False))
    assert evaluate(reg, [Example([(1, 1.0)], label=2.0)] * 4) == 4.0
    with pytest.raises(EmptyData):
        evaluate(reg, [])


def test_empty_stream():
    with pytest.raises(EmptyData):
        train([], LearnerConfig())


def test_one_epoch_equals_linear(small_stream):
    a = train(small_stream, LearnerConfig(task="regression", epochs=1, learning_rate=0.1))
    b = train(small_stream, LearnerConfig(task="regression", stage_poly=False, learning_rate=0.1))
    assert np.array_equal(a.model.w.weights, b.model.w.weights)
    assert a.model.state.parents == set()


def test_reproducible_bit_identical():
    data = random_examples(300, 8, seed=5)
    cfg = LearnerConfig(task="regression", learning_rate=0.1, heuristic="ssm")
    a, b = train(data, cfg), train(data, cfg)
    assert np.array_equal(a.model.w.weights, b.model.w.weights)
    assert np.array_equal(a.model.w.grad_sq, b.model.w.grad_sq)
    assert a.model.expansion_log == b.model.expansion_log
    assert (a.progressive_error, a.epoch_errors, a.features_per_example) == \
        (b.progressive_error, b.epoch_errors, b.features_per_example)


def test_untouched_slots_stay_zero():
    data = random_examples(300, 8, seed=7)
    rep = train(data, LearnerConfig(task="regression", learning_rate=0.1, bits=14))
    model = rep.model
    hc = HashConfig(14)
    touched = {constant_slot(hc)}
    # The final support contains every earlier support.
    for ex in data:
        touched |= {hash_monomial(m, hc) for m in expanded_monomials(ex.ids, model.state.parents)}
    nonzero = set(np.flatnonzero(model.w.weights).tolist()) | set(np.flatnonzero(model.w.grad_sq).tolist())
    assert nonzero <= touched


def test_progressive_validation_is_pre_update():
    cfg = LearnerConfig(task="binary", stage_poly=False, learning_rate=0.5)
    m = OnlineLearner(cfg)
    ex = Example([(4, 1.0)], label=1.0)
    before = m.predict_one(ex)
    assert m.learn_one(ex) == before == 0.0
    assert m.predict_one(ex) > 0
    assert m.report().progressive_error == 1.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_overflow_reports_example_index():
    data = [Example([(1, 1e200)], label=1.0) for _ in range(4)]
    cfg = LearnerConfig(task="regression", stage_poly=False, step_mode="fixed", learning_rate=1.0)
    with pytest.raises(NumericOverflow) as info:
        train(data, cfg)
    assert info.value.example_index == 1


def test_expansions_fire_on_schedule():
    data = random_examples(120, 6, seed=2)
    rep = train(data, LearnerConfig(task="regression", learning_rate=0.1, epochs=6))
    assert [t for t, _ in rep.model.expansion_log] == [20, 40, 60, 80, 100]
    assert len(rep.epoch_errors) == 6
    assert max(len(m) for m in rep.model.state.parents) <= 6


def test_weight_heuristic_targets_submonomials():
    # y = x0 x1 x2 with x ~ Bernoulli(0.3)^20; the linear fit puts ~p^2 on each factor.
    rng = np.random.default_rng(0)
    X = rng.random((20000, 20)) < 0.3
    y = (X[:, 0] & X[:, 1] & X[:, 2]).astype(float)
    A = np.c_[X, np.ones(len(X))]
    oracle = np.linalg.lstsq(A, y, rcond=None)[0]
    assert oracle[:3] == pytest.approx([0.09] * 3, abs=0.01)
    data = [Example(ids=np.flatnonzero(r).tolist(), values=[1.0] * int(r.sum()), label=float(v))
            for r, v in zip(X, y)]
    rep = train(data, LearnerConfig(task="regression", stage_poly=False, learning_rate=0.05, passes=3))
    w = rep.model.w.weights
    learned = [w[hash_monomial(Monomial((i,)), rep.model.hash)] for i in range(20)]
    assert set(np.argsort(np.abs(learned))[-3:]) == {0, 1, 2}
    assert learned[:3] == pytest.approx(oracle[:3], abs=0.02)


def test_tune_learning_rate_picks_minimum(small_stream):
    cfg = LearnerConfig(task="regression")
    best, scores = tune_learning_rate(small_stream, cfg, (0.01, 0.1, 0.5))
    assert scores[best] == min(scores.values())


def test_binary_labels_pm1_equivalent():
    a = [Example([(1, 1.0)], label=-1.0), Example([(2, 1.0)], label=1.0)] * 20
    b = [Example([(1, 1.0)], label=0.0), Example([(2, 1.0)], label=1.0)] * 20
    cfg = LearnerConfig(task="binary", stage_poly=False)
    assert np.array_equal(train(a, cfg).model.w.weights, train(b, cfg).model.w.weights)
