"""Model evaluation: built-in models, derivatives, datasets and CSV I/O."""

import numpy as np
import pytest

from elliplrt import model as M

THETA1 = np.array([0.5, 0.2, 0.0, 0.0, 0.005])
THETA2 = np.array([0.7, 0.5, 0.0, 0.0, 0.0, 500.0, 2.0, 200.0, 5.0])


def _model1_data(n=8, seed=0):
    rng = np.random.default_rng(seed)
    design = M.model1_design(n, rng)
    y = rng.uniform(0.5, 0.7, n)
    return M.model1_dataset(y, design["x1"], design["x2"])


def _model2_data(n=8, seed=0):
    rng = np.random.default_rng(seed)
    design = M.model2_design(n, rng)
    ys = [rng.normal(size=u["q"]) for u in design]
    return M.model2_dataset(ys, design), design


# ---------------------------------------------------------------------------
# spot values
# ---------------------------------------------------------------------------


def test_model1_mu_at_zero_covariates():
    data = M.model1_dataset([0.6], [0.0], [0.0])
    ev = M.evaluate(M.nonlinear_model1(), THETA1, data)
    assert ev.blocks[0].mu[0, 0] == pytest.approx(1.0 / 1.5, abs=1e-12)
    assert ev.blocks[0].sigma[0, 0, 0] == pytest.approx(0.005)


def test_model1_mu_and_derivatives_at_unit_covariates():
    data = M.model1_dataset([0.6], [1.0], [1.0])
    ev = M.evaluate(M.nonlinear_model1(), THETA1, data)
    mu = ev.blocks[0].mu[0, 0]
    assert mu == pytest.approx(1.0 / 1.7, abs=1e-12)
    # d mu / d beta0 = -mu^2 and d2 mu / d beta0^2 = 2 mu^3
    assert ev.blocks[0].dmu[0, 0, 0] == pytest.approx(-(mu**2), rel=1e-12)
    assert ev.blocks[0].d2mu[0, 0, 0, 0] == pytest.approx(2 * mu**3, rel=1e-12)


def test_model1_dmu_beta3_column():
    rng = np.random.default_rng(3)
    x1, x2 = rng.uniform(0, 1, 5), rng.uniform(0, 1, 5)
    data = M.model1_dataset(np.full(5, 0.6), x1, x2)
    ev = M.evaluate(M.nonlinear_model1(), THETA1, data)
    mu = ev.blocks[0].mu[:, 0]
    np.testing.assert_allclose(ev.blocks[0].dmu[:, 3, 0], -(x2**2) * mu**2, rtol=1e-10)


def test_model2_scalar_sigma_value():
    unit = M._m2_unit(1, 1, np.array([5.0]))
    data = M.model2_dataset([np.array([0.0])], [unit])
    ev = M.evaluate(M.mixed_model2(), THETA2, data)
    # Z = [1 5]: Sigma = g1 + 2*g2*5 + g3*25 + s2 = 500 + 20 + 5000 + 5
    assert ev.blocks[0].sigma[0, 0, 0] == pytest.approx(5525.0, abs=1e-9)
    # dSigma/dgamma2 = 2 z1 z2 = 10
    assert ev.blocks[0].dsigma[0, 6, 0, 0] == pytest.approx(10.0, abs=1e-12)


# ---------------------------------------------------------------------------
# analytic vs finite-difference derivatives
# ---------------------------------------------------------------------------


def _compare_evals(ev_a, ev_fd, rtol1, rtol2):
    for be_a, be_f in zip(ev_a.blocks, ev_fd.blocks):
        scale1 = max(np.max(np.abs(be_f.dmu)), 1e-8)
        np.testing.assert_allclose(be_a.dmu, be_f.dmu, rtol=rtol1, atol=rtol1 * scale1)
        scale2 = max(np.max(np.abs(be_f.dsigma)), 1e-8)
        np.testing.assert_allclose(be_a.dsigma, be_f.dsigma, rtol=rtol1, atol=rtol1 * scale2)
        d2mu_a = np.zeros_like(be_f.d2mu) if be_a.d2mu is None else be_a.d2mu
        scale3 = max(np.max(np.abs(be_f.d2mu)), 1e-4)
        np.testing.assert_allclose(d2mu_a, be_f.d2mu, rtol=rtol2, atol=rtol2 * scale3)
        d2s_a = np.zeros_like(be_f.d2sigma) if be_a.d2sigma is None else be_a.d2sigma
        scale4 = max(np.max(np.abs(be_f.d2sigma)), 1e-4)
        np.testing.assert_allclose(d2s_a, be_f.d2sigma, rtol=rtol2, atol=rtol2 * scale4)


def test_model1_fd_agreement():
    data = _model1_data()
    model = M.nonlinear_model1()
    _compare_evals(M.evaluate(model, THETA1, data), M.fd_derivatives(model, THETA1, data), 1e-5, 1e-3)


def test_model2_fd_agreement():
    data, _ = _model2_data()
    model = M.mixed_model2()
    _compare_evals(M.evaluate(model, THETA2, data), M.fd_derivatives(model, THETA2, data), 1e-5, 1e-3)


def test_fd_constant_model_all_zero():
    spec = M.ModelSpec(
        name="const",
        p=2,
        param_names=("a", "b"),
        mu_fn=lambda t, blk: np.full((blk.m, 1), 3.0),
        sigma_fn=lambda t, blk: np.ones((blk.m, 1, 1)),
    )
    data = M.Dataset([M.Observation(np.array([1.0]), {})])
    ev = M.fd_derivatives(spec, np.array([0.3, -1.2]), data)
    assert np.all(ev.blocks[0].dmu == 0.0)
    assert np.all(ev.blocks[0].d2mu == 0.0)
    assert np.all(ev.blocks[0].d2sigma == 0.0)


def test_fd_linear_sigma_second_derivative_zero():
    data = _model1_data()
    ev = M.fd_derivatives(M.nonlinear_model1(), THETA1, data)
    np.testing.assert_allclose(ev.blocks[0].d2sigma, 0.0, atol=1e-7)


# ---------------------------------------------------------------------------
# SPD failures and validation
# ---------------------------------------------------------------------------


def test_non_spd_raises_with_index():
    data, design = _model2_data(n=8, seed=1)
    bad = THETA2.copy()
    bad[5], bad[6], bad[7], bad[8] = 1.0, 50.0, 1.0, 0.01  # indefinite Delta
    with pytest.raises(M.NonSPDError) as err:
        M.evaluate(M.mixed_model2(), bad, data)
    i = err.value.index
    assert 0 <= i < data.n
    assert data.observations[i].q >= 2  # scalar units stay positive here


def test_theta_length_validated():
    data = _model1_data()
    with pytest.raises(ValueError):
        M.evaluate(M.nonlinear_model1(), np.zeros(4), data)


def test_parameter_vector_validation():
    with pytest.raises(ValueError):
        M.ParameterVector(np.zeros(3), (0, 0))
    with pytest.raises(ValueError):
        M.ParameterVector(np.zeros(3), (5,))
    pv = M.ParameterVector(np.zeros(3), (1,), [0.0])
    assert pv.interest_indices == (1,)


def test_observation_q_and_validation():
    with pytest.raises(ValueError):
        M.Observation(np.zeros((2, 2)))
    obs = M.Observation([1.0, 2.0])
    assert obs.q == 2
    with pytest.raises(ValueError):
        M.Dataset([])


# ---------------------------------------------------------------------------
# designs and datasets
# ---------------------------------------------------------------------------


def test_model2_design_rules():
    rng = np.random.default_rng(11)
    design = M.model2_design(12, rng)
    assert [u["group"] for u in design] == [(i % 4) + 1 for i in range(12)]
    for u in design:
        assert 1 <= u["q"] <= 5
        np.testing.assert_array_equal(u["time"], M.MODEL2_TIMES[: u["q"]])
        assert u["X"].shape == (u["q"], 5)
        assert u["Z"].shape == (u["q"], 2)
        # dummy columns encode the group: group g >= 2 lights column g
        if u["group"] == 1:
            assert np.all(u["X"][:, 2:] == 0.0)
        else:
            g = u["group"]
            assert np.all(u["X"][:, g] == 1.0)
            others = [c for c in (2, 3, 4) if c != g]
            assert np.all(u["X"][:, others] == 0.0)


def test_blocks_group_by_dimension():
    data, design = _model2_data(n=10, seed=3)
    blocks = data.blocks()
    qs = [b.q for b in blocks]
    assert qs == sorted(set(u["q"] for u in design))
    assert sum(b.m for b in blocks) == 10
    # per-observation accessor maps back to the right unit
    ev = M.evaluate(M.mixed_model2(), THETA2, data)
    for i, u in enumerate(design):
        assert ev.obs(i).mu.shape == (u["q"],)


# ---------------------------------------------------------------------------
# CSV round trips
# ---------------------------------------------------------------------------


def test_model1_csv_roundtrip(tmp_path):
    data = _model1_data(n=6, seed=5)
    path = tmp_path / "m1.csv"
    M.write_dataset_csv(path, data, "model1")
    back = M.read_dataset_csv(path, "model1")
    assert back.n == data.n
    for a, b in zip(data.observations, back.observations):
        np.testing.assert_array_equal(a.y, b.y)
        assert a.covariates["x1"] == b.covariates["x1"]


def test_model2_csv_roundtrip(tmp_path):
    data, _ = _model2_data(n=7, seed=6)
    path = tmp_path / "m2.csv"
    M.write_dataset_csv(path, data, "model2")
    back = M.read_dataset_csv(path, "model2")
    assert back.n == data.n
    for a, b in zip(data.observations, back.observations):
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.covariates["X"], b.covariates["X"])
        np.testing.assert_array_equal(a.covariates["Z"], b.covariates["Z"])


def test_csv_missing_column_is_named(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("unit_id,row_index,y,x1\n1,1,0.5,0.2\n")
    with pytest.raises(ValueError, match="x2"):
        M.read_dataset_csv(path, "model1")


def test_csv_rejects_bad_numbers_and_groups(tmp_path):
    path = tmp_path / "bad2.csv"
    path.write_text("unit_id,row_index,y,x1,x2\n1,1,abc,0.2,0.3\n")
    with pytest.raises(ValueError, match="row 2"):
        M.read_dataset_csv(path, "model1")
    path.write_text("unit_id,row_index,y,time,group\n1,1,0.5,5,9\n")
    with pytest.raises(ValueError, match="group"):
        M.read_dataset_csv(path, "model2")
