import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rdlpf.datagen import Dataset, gen_eval_set, load_dataset, save_dataset
from rdlpf.evalreport import ErrorReport, evaluate, render_table
from rdlpf.lpfcore import LinearPFModel, VariableMap, train_ls


def vmap(nx, ny):
    return VariableMap(tuple((i + 2, "P") for i in range(nx)), tuple((i, "Pf") for i in range(ny)))


def model_of(A, method="LS"):
    A = np.atleast_2d(A)
    return LinearPFModel(A, np.zeros(A.shape[0]), vmap(A.shape[1], A.shape[0]), {"method": method})


def report(method, level, avg, wc):
    return ErrorReport(method, level, avg, wc, [avg], [wc], 10, 1)


def test_perfect_model_has_zero_error():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 4))
    X = rng.normal(size=(20, 4))
    data = Dataset(X, X @ A.T, vmap(4, 3))
    rep = evaluate(train_ls(data), data)
    assert rep.avg <= 1e-13 and rep.wc <= 1e-13


def test_single_cell_unit_conversion():
    data = Dataset([[1.0]], [[0.996]], vmap(1, 1), {"level": 1.2})
    rep = evaluate(model_of([[1.0]]), data)
    assert rep.avg == pytest.approx(0.004) and rep.wc == pytest.approx(0.004)
    assert rep.level == 1.2
    assert "| Avg. 120% | 4.00 |" in render_table([rep])
    assert "| WC. 120% | 4.00 |" in render_table([rep])


def test_dimension_mismatch():
    data = Dataset(np.ones((3, 2)), np.ones((3, 1)), vmap(2, 1))
    with pytest.raises(ValueError):
        evaluate(model_of(np.ones((1, 3))), Dataset(np.ones((3, 3)), np.ones((3, 2))))
    with pytest.raises(ValueError):
        evaluate(model_of(np.ones((1, 2))), Dataset(np.ones((0, 2)), np.ones((0, 1))))
    assert evaluate(model_of(np.ones((1, 2))), data).wc == pytest.approx(1.0)


@given(st.integers(0, 10**6), st.integers(2, 30))
def test_permutation_invariance(seed, K):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(K, 3))
    Y = X @ rng.normal(size=(2, 3)).T + rng.normal(0, 1e-3, (K, 2))
    model = model_of(rng.normal(size=(2, 3)))
    perm = rng.permutation(K)
    a = evaluate(model, Dataset(X, Y, vmap(3, 2)))
    b = evaluate(model, Dataset(X[perm], Y[perm], vmap(3, 2)))
    assert a.avg == b.avg and a.wc == b.wc
    assert np.array_equal(a.row_avg, b.row_avg) and np.array_equal(a.row_wc, b.row_wc)


@given(st.integers(0, 10**6))
def test_worst_case_is_max_of_sample_maxima(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(15, 3))
    Y = rng.normal(size=(15, 4))
    model = model_of(rng.normal(size=(4, 3)))
    full = evaluate(model, Dataset(X, Y, vmap(3, 4)))
    parts = [evaluate(model, Dataset(X[k:k + 1], Y[k:k + 1], vmap(3, 4))).wc for k in range(15)]
    assert full.wc == max(parts)
    assert full.wc >= full.avg >= 0


def test_bit_exact_from_files(tmp_path, case14, hist14):
    model = train_ls(hist14)
    ev = gen_eval_set(case14, 1.4, 20, 0.05, seed=1)
    (tmp_path / "m.json").write_text(model.to_json())
    save_dataset(ev, tmp_path / "ev.csv")
    first = evaluate(model, ev)
    m2 = LinearPFModel.from_dict(json.loads((tmp_path / "m.json").read_text()))
    second = evaluate(m2, load_dataset(tmp_path / "ev.csv"))
    assert first.avg == second.avg and first.wc == second.wc
    assert render_table([first]) == render_table([second])


def test_report_round_trip():
    rep = report("M2", 0.8, 0.0012, 0.0051)
    assert ErrorReport.from_dict(json.loads(json.dumps(rep.to_dict()))).to_dict() == rep.to_dict()


# ---------------------------------------------------------------------------
# tables


def test_empty_table_is_header_only():
    lines = render_table([]).splitlines()
    assert len(lines) == 2 and lines[0].startswith("| Error")
    assert render_table([], "csv").splitlines() == ["metric,level"]


def test_single_report_single_column():
    lines = render_table([report("LS", 0.6, 0.00179, 0.0042)]).splitlines()
    assert lines[0] == "| Error (x1e-3 p.u.) | LS |"
    assert lines[2:] == ["| Avg. 60% | 1.79 |", "| WC. 60% | 4.20 |"]


def test_table_one_shape():
    reps = [report(m, lv, 0.001 * (i + 1), 0.004 * (i + 1))
            for i, m in enumerate(["LS", "M1"]) for lv in (0.6, 0.8, 1.2, 1.4)]
    md = render_table(reps).splitlines()
    assert md[0] == "| Error (x1e-3 p.u.) | M1 | LS |"
    assert len(md) == 2 + 8
    assert [ln.split("|")[1].strip() for ln in md[2:]] == [
        "Avg. 60%", "Avg. 80%", "Avg. 120%", "Avg. 140%", "WC. 60%", "WC. 80%", "WC. 120%", "WC. 140%"]
    rows = list(csv.reader(io.StringIO(render_table(reps, "csv"))))
    assert rows[0] == ["metric", "level", "M1", "LS"] and len(rows) == 9
    js = json.loads(render_table(reps, "json"))
    assert js["methods"] == ["M1", "LS"] and len(js["rows"]) == 8


def test_column_order_and_extra_methods():
    reps = [report(m, 1.2, 0.001, 0.002) for m in ("zeta", "LS", "M2", "alpha", "M1")]
    assert render_table(reps).splitlines()[0] == "| Error (x1e-3 p.u.) | M1 | M2 | LS | alpha | zeta |"


@pytest.mark.parametrize("v,text", [(0.00088, "0.880"), (0.0121, "12.1"), (0.1234, "123"), (0.0, "0.00")])
def test_three_significant_digits(v, text):
    assert f"| {text} |" in render_table([report("M1", 1.0, v, v)])


def test_unknown_format():
    with pytest.raises(ValueError):
        render_table([], "html")


def test_m1_worst_case_not_above_ls_at_140(case14, hist14):
    # regression property on the fixed seed-7 history, not a general guarantee
    from rdlpf.drcc import TrainingConfig, train_rdlpf

    ev = gen_eval_set(case14, 1.4, 200, 0.05, seed=1)
    m1 = train_rdlpf(hist14, config=TrainingConfig("M1"))
    assert evaluate(m1, ev).wc <= evaluate(train_ls(hist14), ev).wc
