import numpy as np

from rdlpf.acpf import injections, solve_newton
from rdlpf.datagen import gen_eval_set, gen_history, load_dataset, load_multipliers, save_dataset
from rdlpf.lpfcore import VariableMap


def test_zero_perturbation_reproduces_base(case14):
    data = gen_history(case14, 5, 0.0, seed=3)
    x0, y0 = VariableMap.for_network(case14).extract(case14, solve_newton(case14))
    assert np.allclose(data.X, x0, atol=1e-12) and np.allclose(data.Y, y0, atol=1e-12)
    assert np.all(data.X == data.X[0])


def test_seeded_determinism(case14):
    a = gen_history(case14, 300, 0.2, seed=42)
    b = gen_history(case14, 300, 0.2, seed=42)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y) and a.meta == b.meta


def test_prefix_stability(case14):
    # per-sample streams: the first samples do not depend on how many are drawn
    a = gen_history(case14, 10, 0.2, seed=5)
    b = gen_history(case14, 25, 0.2, seed=5)
    assert np.array_equal(a.X, b.X[:10])


def test_history_multiplier_statistics(case14):
    data = gen_history(case14, 50, 0.2, seed=1)
    u = load_multipliers(case14, data)
    u = u[:, ~np.isnan(u).any(axis=0)]
    assert u.min() >= 0.8 - 1e-9 and u.max() <= 1.2 + 1e-9
    assert abs(u.mean() - 1.0) <= 0.05


def test_eval_level_bounds(case14):
    data = gen_eval_set(case14, 0.6, 40, 0.05, seed=2)
    u = load_multipliers(case14, data)
    u = u[:, ~np.isnan(u).any(axis=0)]
    assert u.min() >= 0.57 - 1e-9 and u.max() <= 0.63 + 1e-9


def test_eval_base_sample(case14):
    data = gen_eval_set(case14, 1.0, 1, 0.0, seed=0)
    x0, y0 = VariableMap.for_network(case14).extract(case14, solve_newton(case14))
    assert np.allclose(data.X[0], x0, atol=1e-12) and np.allclose(data.Y[0], y0, atol=1e-12)


def test_high_level_converges(case14):
    data = gen_eval_set(case14, 1.4, 200, 0.05, seed=0)
    assert data.K == 200 and np.all(np.isfinite(data.Y))


def test_samples_are_exact_pf_images(case14, hist14):
    vmap = hist14.map
    u = load_multipliers(case14, hist14)
    loads = [k for k, b in enumerate(case14.buses) if b.Pd or b.Qd]
    for k in (0, 17, 99):
        Pd = np.array([b.Pd for b in case14.buses])
        Qd = np.array([b.Qd for b in case14.buses])
        for j, bus in enumerate(loads):
            Pd[bus] *= u[k, j]
            Qd[bus] *= u[k, j]
        x, y = vmap.extract(case14, solve_newton(case14, injections(case14, Pd, Qd)))
        assert np.max(np.abs(x - hist14.X[k])) <= 1e-8
        assert np.max(np.abs(y - hist14.Y[k])) <= 1e-8


def test_csv_roundtrip(tmp_path, hist14):
    path = tmp_path / "hist.csv"
    save_dataset(hist14, path)
    back = load_dataset(path)
    assert np.array_equal(back.X, hist14.X) and np.array_equal(back.Y, hist14.Y)
    assert back.map == hist14.map
    header = path.read_text().splitlines()[0].split(",")
    assert header[0] == "x_0" and header[-1] == f"y_{hist14.Y.shape[1] - 1}"
