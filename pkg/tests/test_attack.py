import csv
import math

import numpy as np
import pytest

from bbuap.attack import (
    MAX_ITERATIONS,
    SUCCESS,
    TRACE_COLUMNS,
    AttackAborted,
    AttackConfig,
    objective_sum,
    run_attack,
)
from bbuap.oracle import CountingOracle, LinearSoftmaxOracle, OracleUnavailable, ScoreOracle
from bbuap.tensor import TensorError, lp_norm, xi_from_zeta
from bbuap.toy import make_preset


class TableOracle(ScoreOracle):
    """Scores looked up from the first pixel's value."""

    def __init__(self, table):
        self.table = {k: np.asarray(v, float) for k, v in table.items()}
        super().__init__((1, 1, 1), len(next(iter(self.table.values()))))

    def _score_batch(self, flat):
        return np.stack([self.table[round(float(x[0]), 6)] for x in flat])


class FlakyOracle(ScoreOracle):
    def __init__(self, inner, fail_after):
        super().__init__(inner.input_shape, inner.num_classes)
        self.inner, self.fail_after = inner, fail_after

    def _score_batch(self, flat):
        if self.query_count + flat.shape[0] > self.fail_after:
            raise OracleUnavailable("oracle unavailable: test")
        return self.inner.scores(flat.reshape((-1,) + self.input_shape))


@pytest.fixture(scope="module")
def binary():
    tp = make_preset("binary", seed=0)
    X = tp.images[:40]
    return tp, X, xi_from_zeta(0.10, X, 2)


def test_objective_sum_examples():
    orc = TableOracle({0.2: [0.9, 0.1], 0.4: [0.2, 0.8]})
    X = np.array([0.2, 0.4]).reshape(2, 1, 1, 1)
    total, sc = objective_sum(orc, X, [0, 1], np.zeros((1, 1, 1)))
    assert total == pytest.approx(1.7)
    assert sc.shape == (2, 2)

    orc = TableOracle({0.5: [0.25, 0.25, 0.25, 0.25]})
    total, _ = objective_sum(orc, np.full((1, 1, 1, 1), 0.5), [2], np.zeros((1, 1, 1)))
    assert total == 0.25


def test_objective_sum_matches_one_at_a_time(binary):
    tp, X, _ = binary
    X = X[:10]
    delta = np.random.default_rng(0).normal(0, 0.05, X.shape[1:])
    labels = tp.oracle.predict(X)
    total, _ = objective_sum(tp.oracle, X, labels, delta)
    single = [tp.oracle.scores(np.clip(x + delta, 0, 1))[0][lab] for x, lab in zip(X, labels)]
    assert total == pytest.approx(math.fsum(single), rel=0, abs=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(mode="targeted")
    with pytest.raises(ValueError):
        AttackConfig(epsilon=0)
    with pytest.raises(ValueError):
        AttackConfig(max_iterations=0)
    with pytest.raises(TensorError):
        AttackConfig(xi=-1)


def test_uniform_oracle_never_accepts():
    orc = LinearSoftmaxOracle(np.zeros((3, 16)), np.zeros(3), (4, 4, 1))
    X = np.random.default_rng(0).random((5, 4, 4, 1))
    rep = run_attack(orc, X, AttackConfig(xi=1.0, max_iterations=50, directions="pixel"))
    assert rep.accepted == 0
    assert rep.iterations == 50
    assert rep.reason == MAX_ITERATIONS
    assert not rep.delta.data.any()


def test_zero_budget_never_moves(binary):
    tp, X, _ = binary
    rep = run_attack(tp.oracle, X, AttackConfig(xi=0.0, max_iterations=30, directions="pixel"))
    assert rep.accepted == 0
    assert not rep.delta.data.any()


def test_empty_dataset(binary):
    with pytest.raises(TensorError, match="empty dataset"):
        run_attack(binary[0].oracle, [], AttackConfig(xi=1.0))


def test_shape_mismatch(binary):
    with pytest.raises(TensorError, match="shape mismatch"):
        run_attack(binary[0].oracle, np.zeros((2, 8, 8, 1)), AttackConfig(xi=1.0))


def test_query_cost_per_iteration(binary):
    tp, X, xi = binary
    n = X.shape[0]
    counted = CountingOracle(tp.oracle)
    rep = run_attack(counted, X, AttackConfig(xi=xi, max_iterations=300, directions="pixel", seed=1))
    prev = n
    for row in rep.trace:
        cost = row.queries - prev
        expected = n if row.alpha_sign == -1 else 2 * n
        assert cost == expected
        prev = row.queries
    assert rep.queries == counted.query_count == sum(counted.batch_sizes)
    assert counted.batch_sizes[0] == n
    assert rep.queries <= n * (1 + 2 * rep.iterations)


def test_monotone_objective_and_budget(binary):
    tp, X, xi = binary
    for norm in (1, 2, math.inf):
        budget = xi if norm == 2 else (xi * 3 if norm == 1 else 0.1)
        rep = run_attack(tp.oracle, X, AttackConfig(xi=budget, norm=norm, max_iterations=400,
                                                    directions="dct", freq_fraction=0.5, seed=2))
        objs = rep.accepted_objectives()
        assert len(objs) > 0
        assert all(b < a for a, b in zip(objs, objs[1:]))
        for row in rep.trace:
            assert row.delta_norm <= budget + 1e-9
        assert lp_norm(rep.delta.data, norm) <= budget + 1e-9


def test_rejected_iterations_keep_delta(binary):
    tp, X, xi = binary
    rep = run_attack(tp.oracle, X, AttackConfig(xi=xi, max_iterations=100, directions="pixel", seed=4))
    for a, b in zip(rep.trace, rep.trace[1:]):
        if not b.accepted:
            assert b.objective == a.objective and b.delta_norm == a.delta_norm and b.alpha_sign == 0


def test_seed_determinism(binary):
    tp, X, xi = binary
    cfg = AttackConfig(xi=xi, max_iterations=200, directions="pixel", seed=7)
    a = run_attack(tp.oracle, X, cfg)
    b = run_attack(tp.oracle, X, cfg)
    assert a.trace == b.trace
    np.testing.assert_array_equal(a.delta.data, b.delta.data)
    c = run_attack(tp.oracle, X, AttackConfig(xi=xi, max_iterations=200, directions="pixel", seed=8))
    assert c.trace != a.trace


def test_targeted_objective_increases():
    tp = make_preset("ternary", seed=0)
    X = tp.images[:30]
    xi = xi_from_zeta(0.10, X, 2)
    rep = run_attack(tp.oracle, X, AttackConfig(mode="targeted", target=2, xi=xi,
                                                max_iterations=400, directions="pixel"))
    objs = rep.accepted_objectives()
    assert len(objs) > 0
    assert all(b > a for a, b in zip(objs, objs[1:]))
    pred = tp.oracle.predict(np.clip(X + rep.delta.data, 0, 1))
    assert rep.success_rate == np.mean(pred == 2)


def test_targeted_rejects_unknown_class(binary):
    with pytest.raises(ValueError, match="unknown class"):
        run_attack(binary[0].oracle, binary[1], AttackConfig(mode="targeted", target=5, xi=1.0))


def test_stops_when_everything_is_fooled():
    # one image, weights tuned so a single pixel step flips the label
    W = np.zeros((2, 4))
    W[1, :] = 10.0
    orc = LinearSoftmaxOracle(W, np.array([0.0, -5.0]), (2, 2, 1))
    X = np.full((1, 2, 2, 1), 0.1)
    rep = run_attack(orc, X, AttackConfig(xi=1.0, max_iterations=100, directions="pixel"))
    assert rep.reason == SUCCESS
    assert rep.success_rate == 1.0
    assert rep.iterations < 100


def test_trace_csv(tmp_path, binary):
    tp, X, xi = binary
    path = tmp_path / "trace.csv"
    rep = run_attack(tp.oracle, X, AttackConfig(xi=xi, max_iterations=25, directions="pixel",
                                                trace_path=str(path)))
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == 26
    last = rows[-1]
    assert int(last[0]) == 25 and int(last[1]) == rep.queries
    assert float(last[2]) == rep.objective


def test_oracle_failure_keeps_partial_trace(binary):
    tp, X, xi = binary
    flaky = FlakyOracle(tp.oracle, fail_after=40 * 25)
    with pytest.raises(AttackAborted) as info:
        run_attack(flaky, X, AttackConfig(xi=xi, max_iterations=500, directions="pixel"))
    partial = info.value.report
    assert 0 < partial.iterations < 500
    assert len(partial.trace) == partial.iterations
    assert partial.reason is None


def test_without_replacement_runs(binary):
    tp, X, xi = binary
    rep = run_attack(tp.oracle, X, AttackConfig(xi=xi, max_iterations=300, directions="pixel",
                                                without_replacement=True))
    idx = [row.direction_index for row in rep.trace[:256]]
    assert sorted(idx) == list(range(256))
