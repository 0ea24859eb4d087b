import numpy as np
import pytest

from predbands.data import (
    ContextTable,
    Observation,
    PredictiveVector,
    QuerySpec,
    TaskKind,
    check_distribution,
    load_table,
    permute_rows,
    validate_context,
)
from predbands.errors import DataError


def test_task_kind_binary_has_two_classes():
    t = TaskKind.binary()
    assert t.n_classes == 2
    assert t.is_classification


def test_task_kind_multiclass_requires_k():
    with pytest.raises(DataError):
        TaskKind("multiclass")
    with pytest.raises(DataError):
        TaskKind.multiclass(1)
    assert TaskKind.multiclass(4).n_classes == 4


def test_task_kind_threshold_rules():
    t = TaskKind.regression(thresholds=(0.0, 1.5))
    assert t.thresholds == (0.0, 1.5)
    with pytest.raises(DataError):
        TaskKind.regression(thresholds=(1.0, 1.0))
    with pytest.raises(DataError):
        TaskKind("binary", thresholds=(0.0,))
    with pytest.raises(DataError):
        TaskKind("nope")


def test_context_table_basic(binary_table):
    t = binary_table(n=20)
    assert t.n == 20 and t.d == 1 and len(t) == 20
    assert t.ys.dtype == np.int64
    # arrays are frozen: mutation must fail loudly
    with pytest.raises(ValueError):
        t.xs[0, 0] = 99.0


def test_context_table_1d_covariates_promoted():
    t = ContextTable(np.array([1.0, 2.0]), np.array([0, 1]), TaskKind.binary())
    assert t.xs.shape == (2, 1)


def test_context_table_label_domain():
    with pytest.raises(DataError):
        ContextTable(np.zeros((2, 1)), np.array([0, 2]), TaskKind.binary())
    with pytest.raises(DataError):
        ContextTable(np.zeros((2, 1)), np.array([0.5, 1.0]), TaskKind.binary())
    with pytest.raises(DataError):
        ContextTable(np.zeros((2, 1)), np.array([0.0, np.nan]), TaskKind.regression())
    with pytest.raises(DataError):
        ContextTable(np.array([[np.inf]]), np.array([0]), TaskKind.binary())
    with pytest.raises(DataError):
        ContextTable(np.zeros((3, 1)), np.array([0, 1]), TaskKind.binary())
    with pytest.raises(DataError):
        ContextTable(np.zeros((0, 1)), np.array([]), TaskKind.binary())


def test_context_head_and_append(binary_table):
    t = binary_table(n=10)
    h = t.head(4)
    assert h.n == 4
    assert np.array_equal(h.xs, t.xs[:4])
    with pytest.raises(DataError):
        t.head(0)
    with pytest.raises(DataError):
        t.head(11)
    t2 = t.append_row([0.25], 1)
    assert t2.n == 11 and t2.ys[-1] == 1 and t.n == 10


def test_rows_roundtrip(regression_table):
    t = regression_table(n=5)
    back = validate_context(t.rows, t.task)
    assert np.array_equal(back.xs, t.xs)
    assert np.array_equal(back.ys, t.ys)


def test_validate_context_errors():
    with pytest.raises(DataError):
        validate_context([], TaskKind.binary())
    rows = [Observation((0.0,), 1), Observation((0.0, 1.0), 0)]
    with pytest.raises(DataError):
        validate_context(rows, TaskKind.binary())
    with pytest.raises(DataError):
        Observation((np.nan,), 0)


def test_permute_rows_deterministic(binary_table):
    t = binary_table(n=40, seed=3)
    a = permute_rows(t, 7)
    b = permute_rows(t, 7)
    assert np.array_equal(a.xs, b.xs) and np.array_equal(a.ys, b.ys)
    c = permute_rows(t, 8)
    assert not np.array_equal(a.ys, c.ys) or not np.array_equal(a.xs, c.xs)
    # multiset of rows preserved
    key = lambda tab: sorted(zip(tab.xs[:, 0].tolist(), tab.ys.tolist()))
    assert key(a) == key(t)


def test_query_spec_grid_and_validation():
    q = QuerySpec.for_grid([-1.0, 0.0, 1.0], 1)
    assert q.m == 3 and q.d == 1 and q.events == (1, 1, 1)
    q.validate_for(TaskKind.binary())
    q.validate_for(TaskKind.regression())  # 1 reads as a finite threshold there


def test_query_spec_class_domain():
    q = QuerySpec.for_grid([0.0], 5)
    with pytest.raises(DataError):
        q.validate_for(TaskKind.multiclass(3))
    QuerySpec.for_grid([0.0], 2).validate_for(TaskKind.multiclass(3))
    with pytest.raises(DataError):
        QuerySpec(np.zeros((2, 1)), (0,))
    with pytest.raises(DataError):
        QuerySpec(np.array([[np.nan]]), (0,))


def test_query_spec_from_pairs():
    q = QuerySpec.from_pairs([((0.0, 1.0), 2), ((3.0, 4.0), 0)])
    assert q.m == 2 and q.d == 2 and q.events == (2, 0)


def test_predictive_vector_range():
    v = PredictiveVector(np.array([0.0, 0.5, 1.0]), 3)
    assert v.m == 3
    with pytest.raises(DataError, match="index 1"):
        PredictiveVector(np.array([0.5, 1.2]), 3)
    with pytest.raises(DataError):
        PredictiveVector(np.array([np.nan]), 1)
    with pytest.raises(DataError):
        PredictiveVector(np.array([]), 0)
    with pytest.raises(DataError):
        PredictiveVector(np.array([0.5]), -1)


def test_check_distribution():
    check_distribution(np.array([0.2, 0.3, 0.5]))
    with pytest.raises(DataError):
        check_distribution(np.array([0.2, 0.3, 0.4]))


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_load_table_binary(tmp_path):
    p = _write(tmp_path / "t.csv", "x1,label,x2\n0.5,yes,1.0\n-0.5,no,2.0\n1.5,yes,3.0\n")
    table, classes = load_table(p, "label", TaskKind.binary())
    assert classes == ["no", "yes"]  # sorted order defines the index
    assert table.n == 3 and table.d == 2
    assert table.ys.tolist() == [1, 0, 1]
    assert table.xs[0].tolist() == [0.5, 1.0]


def test_load_table_regression(tmp_path):
    p = _write(tmp_path / "t.csv", "x,y\n1.0,2.5\n2.0,3.5\n")
    table, classes = load_table(p, "y", TaskKind.regression())
    assert classes is None
    assert table.ys.tolist() == [2.5, 3.5]


def test_load_table_errors(tmp_path):
    with pytest.raises(DataError, match="empty file"):
        load_table(_write(tmp_path / "a.csv", ""), "y", TaskKind.binary())
    with pytest.raises(DataError, match="no column"):
        load_table(_write(tmp_path / "b.csv", "x,y\n1,0\n"), "z", TaskKind.binary())
    with pytest.raises(DataError, match="no data rows"):
        load_table(_write(tmp_path / "c.csv", "x,y\n"), "y", TaskKind.binary())
    with pytest.raises(DataError, match=r":2: column 'x'"):
        load_table(_write(tmp_path / "d.csv", "x,y\nfoo,0\n"), "y", TaskKind.binary())
    with pytest.raises(DataError, match="3 distinct"):
        load_table(
            _write(tmp_path / "e.csv", "x,y\n1,a\n2,b\n3,c\n"), "y", TaskKind.binary()
        )
    with pytest.raises(DataError, match="expected 2 fields"):
        load_table(_write(tmp_path / "f.csv", "x,y\n1,0,9\n"), "y", TaskKind.binary())
    with pytest.raises(DataError, match="non-numeric response"):
        load_table(_write(tmp_path / "g.csv", "x,y\n1,huh\n"), "y", TaskKind.regression())
