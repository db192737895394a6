import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from gptorque import (
    GPModel,
    Hyperparameters,
    TrainingSet,
    errors,
    fit,
    log_marginal_likelihood,
    optimize_hyperparameters,
)
from gptorque.gp import _chol_jittered, _lml_value_and_grad, kernel, kernel_matrix


def hp(sf2=1.0, ls=(1.0,), sn2=0.0):
    return Hyperparameters(
        signal_variance=sf2, lengthscales=np.asarray(ls, dtype=float), noise_variance=sn2
    )


def random_params(rng, d):
    return hp(
        sf2=float(rng.uniform(0.1, 10.0)),
        ls=rng.uniform(0.3, 3.0, size=d),
        sn2=float(rng.uniform(1e-3, 1.0)),
    )


# ---------------------------------------------------------------- kernel

def test_kernel_zero_distance_returns_signal_variance():
    p = hp(sf2=2.0, ls=(0.7, 1.3))
    x = np.array([0.4, -1.2])
    assert kernel(x, x, p) == 2.0


def test_kernel_known_half_value():
    p = hp(sf2=1.0, ls=(1.0,))
    x = np.array([0.0])
    z = np.array([math.sqrt(2.0 * math.log(2.0))])
    assert kernel(x, z, p) == pytest.approx(0.5, rel=1e-15)


def test_kernel_symmetry_100_random_pairs(rng):
    p = random_params(rng, 3)
    for _ in range(100):
        x = rng.uniform(-5.0, 5.0, size=3)
        z = rng.uniform(-5.0, 5.0, size=3)
        assert kernel(x, z, p) == kernel(z, x, p)


def test_kernel_dimension_mismatch_rejected():
    p = hp(ls=(1.0, 1.0))
    with pytest.raises(ValueError):
        kernel(np.array([0.0]), np.array([0.0, 1.0]), p)
    with pytest.raises(ValueError):
        kernel(np.zeros(3), np.zeros(3), p)


def test_kernel_matrix_symmetric_and_jitter_positive_definite(rng):
    p = random_params(rng, 2)
    x = rng.uniform(-2.0, 2.0, size=(8, 2))
    gram = kernel_matrix(x, x, p)
    assert np.array_equal(gram, gram.T)
    low, jitter = _chol_jittered(gram.copy(), p.signal_variance, 0)
    eigs = np.linalg.eigvalsh(gram + jitter * np.eye(8))
    assert eigs.min() > 0.0


# ---------------------------------------------------------------- fit

def test_fit_empty_data_predicts_prior():
    model = fit(TrainingSet(inputs=np.zeros((0, 2)), outputs=np.zeros((0, 1))), [hp(sf2=3.0, ls=(1.0, 1.0))])
    pred = model.predict(np.array([0.5, -0.5]))
    assert pred.mean[0] == 0.0
    assert pred.variance[0] == 3.0


def test_fit_single_point_caches_factor_sqrt_two():
    data = TrainingSet(inputs=np.array([[0.3]]), outputs=np.array([[1.0]]))
    model = fit(data, [hp(sf2=1.0, ls=(1.0,), sn2=1.0)])
    assert model._chol[0][0, 0] == pytest.approx(math.sqrt(2.0), rel=1e-15)


def test_fit_duplicate_inputs_zero_noise_survives_via_jitter():
    # The Gram matrix is singular; the jitter ladder regularizes it instead
    # of failing, and predictions stay finite.
    data = TrainingSet(inputs=np.array([[0.0], [0.0]]), outputs=np.array([[1.0], [1.0]]))
    model = fit(data, [hp(sn2=0.0)])
    pred = model.predict(np.array([0.0]))
    assert np.all(np.isfinite(pred.mean))
    assert pred.variance[0] >= 0.0


def test_factorization_failure_reports_output_index():
    indefinite = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1
    with pytest.raises(errors.NumericalError) as exc_info:
        _chol_jittered(indefinite, 1.0, output_index=1)
    assert exc_info.value.output_index == 1


def test_fit_rejects_mismatched_param_count():
    data = TrainingSet(inputs=np.zeros((2, 1)), outputs=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        fit(data, [hp()])


# ---------------------------------------------------------------- predict

def test_predict_single_point_frozen_conditioning():
    # X=[0], Y=[2], sf2=1, l=1, sn2=1: mean = 1/(1+1)*2 = 1, var = 1 - 1/2.
    data = TrainingSet(inputs=np.array([[0.0]]), outputs=np.array([[2.0]]))
    model = fit(data, [hp(sn2=1.0)])
    pred = model.predict(np.array([0.0]))
    assert pred.mean[0] == pytest.approx(1.0, rel=1e-14)
    assert pred.variance[0] == pytest.approx(0.5, rel=1e-14)


def test_predict_interpolates_training_point_as_noise_vanishes():
    data = TrainingSet(inputs=np.array([[0.2], [1.4]]), outputs=np.array([[2.0], [-1.0]]))
    model = fit(data, [hp(sn2=1e-12)])
    pred = model.predict(np.array([0.2]))
    assert pred.mean[0] == pytest.approx(2.0, abs=1e-9)
    assert pred.variance[0] <= 1e-9


def test_predict_matches_bruteforce_oracle_on_random_datasets(rng):
    for _ in range(40):
        m = int(rng.integers(1, 6))
        d = int(rng.integers(1, 7))
        p = random_params(rng, d)
        x = rng.uniform(-2.0, 2.0, size=(m, d))
        y = rng.normal(size=(m, 1))
        model = fit(TrainingSet(inputs=x, outputs=y), [p])
        for _ in range(3):
            q = rng.uniform(-2.0, 2.0, size=d)
            mean_o, var_o = oracles.conditioned_moments(
                x, y[:, 0], q, p.signal_variance, p.lengthscales, p.noise_variance
            )
            pred = model.predict(q)
            assert pred.mean[0] == pytest.approx(mean_o, rel=1e-8, abs=1e-8)
            assert pred.variance[0] == pytest.approx(max(var_o, 0.0), rel=1e-8, abs=1e-8)


def test_predict_variance_never_exceeds_prior(rng):
    p = random_params(rng, 2)
    x = rng.uniform(-2.0, 2.0, size=(20, 2))
    y = rng.normal(size=(20, 1))
    model = fit(TrainingSet(inputs=x, outputs=y), [p])
    for _ in range(50):
        q = rng.uniform(-4.0, 4.0, size=2)
        assert model.predict(q).variance[0] <= p.signal_variance * (1.0 + 1e-12)


def test_predict_batch_matches_pointwise(rng):
    p = random_params(rng, 3)
    x = rng.uniform(-1.0, 1.0, size=(10, 3))
    y = rng.normal(size=(10, 2))
    model = fit(TrainingSet(inputs=x, outputs=y), [p, random_params(rng, 3)])
    queries = rng.uniform(-1.5, 1.5, size=(7, 3))
    means, variances = model.predict_batch(queries)
    for i, q in enumerate(queries):
        pred = model.predict(q)
        np.testing.assert_allclose(means[i], pred.mean, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(variances[i], pred.variance, rtol=1e-12, atol=1e-12)


# ------------------------------------------------------- predict_marginal

def test_marginal_full_subset_equals_predict_exactly(rng):
    p = random_params(rng, 3)
    x = rng.uniform(-1.0, 1.0, size=(6, 3))
    y = rng.normal(size=(6, 1))
    model = fit(TrainingSet(inputs=x, outputs=y), [p])
    q = rng.uniform(-1.0, 1.0, size=3)
    full = model.predict(q)
    marginal = model.predict_marginal(q, np.arange(3))
    assert marginal.mean[0] == full.mean[0]
    assert marginal.variance[0] == full.variance[0]


def test_marginal_on_empty_model_returns_prior():
    model = fit(TrainingSet(inputs=np.zeros((0, 4)), outputs=np.zeros((0, 1))), [hp(sf2=2.5, ls=np.ones(4))])
    pred = model.predict_marginal(np.array([0.1]), [2])
    assert pred.variance[0] == 2.5


def test_marginal_single_point_reduced_conditioning_oracle():
    # m=1, d=2, subset={1}: the reduced kernel keeps lengthscale l2 only and
    # conditions against the second input coordinate.
    x = np.array([[0.5, -0.3]])
    y = np.array([[1.7]])
    p = hp(sf2=2.0, ls=(0.8, 1.4), sn2=0.3)
    model = fit(TrainingSet(inputs=x, outputs=y), [p])
    q = np.array([0.4])
    mean_o, var_o = oracles.conditioned_moments(
        x[:, [1]], y[:, 0], q, 2.0, np.array([1.4]), 0.3
    )
    pred = model.predict_marginal(q, [1])
    assert pred.mean[0] == pytest.approx(mean_o, rel=1e-12)
    assert pred.variance[0] == pytest.approx(var_o, rel=1e-12)


def test_marginal_matches_reduced_kernel_oracle_multi_point(rng):
    p = random_params(rng, 4)
    x = rng.uniform(-1.0, 1.0, size=(5, 4))
    y = rng.normal(size=(5, 1))
    model = fit(TrainingSet(inputs=x, outputs=y), [p])
    subset = np.array([1, 3])
    q = rng.uniform(-1.0, 1.0, size=2)
    # same regularized factorization, reduced kernel vectors
    gram = kernel_matrix(x, x, p) + p.noise_variance * np.eye(5)
    k_vec = np.array(
        [
            oracles.se_kernel(q, xi[subset], p.signal_variance, p.lengthscales[subset])
            for xi in x
        ]
    )
    inv = np.linalg.inv(gram)
    mean_o = float(k_vec @ inv @ y[:, 0])
    var_o = float(p.signal_variance - k_vec @ inv @ k_vec)
    pred = model.predict_marginal(q, subset)
    assert pred.mean[0] == pytest.approx(mean_o, rel=1e-9, abs=1e-12)
    assert pred.variance[0] == pytest.approx(var_o, rel=1e-9, abs=1e-12)


def test_marginal_rejects_bad_subsets(rng):
    p = random_params(rng, 3)
    model = fit(TrainingSet(inputs=np.zeros((1, 3)), outputs=np.zeros((1, 1))), [p])
    with pytest.raises(ValueError):
        model.predict_marginal(np.zeros(0), [])
    with pytest.raises(ValueError):
        model.predict_marginal(np.zeros(2), [0, 3])
    with pytest.raises(ValueError):
        model.predict_marginal(np.zeros(2), [1, 1])


# ----------------------------------------------------- marginal likelihood

def test_lml_standard_normal_at_zero():
    data = TrainingSet(inputs=np.array([[0.0]]), outputs=np.array([[0.0]]))
    assert log_marginal_likelihood(data, hp(sn2=0.0), 0) == pytest.approx(
        -0.9189385332046727, rel=1e-14
    )


def test_lml_unit_observation():
    data = TrainingSet(inputs=np.array([[0.0]]), outputs=np.array([[1.0]]))
    assert log_marginal_likelihood(data, hp(sn2=0.0), 0) == pytest.approx(
        -1.4189385332046727, rel=1e-14
    )


def test_lml_single_point_with_noise_frozen():
    data = TrainingSet(inputs=np.array([[0.0]]), outputs=np.array([[0.0]]))
    assert log_marginal_likelihood(data, hp(sn2=1.0), 0) == pytest.approx(
        -1.2655121234846454, rel=1e-14
    )


def test_lml_matches_gaussian_density_oracle(rng):
    for _ in range(10):
        m = int(rng.integers(1, 5))
        d = int(rng.integers(1, 4))
        p = random_params(rng, d)
        x = rng.uniform(-2.0, 2.0, size=(m, d))
        y = rng.normal(size=(m, 2))
        data = TrainingSet(inputs=x, outputs=y)
        gram = np.array(
            [
                [oracles.se_kernel(a, b, p.signal_variance, p.lengthscales) for b in x]
                for a in x
            ]
        ) + p.noise_variance * np.eye(m)
        for j in range(2):
            expected = oracles.gaussian_log_density(y[:, j], gram)
            assert log_marginal_likelihood(data, p, j) == pytest.approx(expected, rel=1e-10)


def test_lml_prefers_matching_signal_scale():
    # a single observation y=3 is best explained by sf2 = 9
    data = TrainingSet(inputs=np.array([[0.0]]), outputs=np.array([[3.0]]))
    good = log_marginal_likelihood(data, hp(sf2=9.0, sn2=0.0), 0)
    assert good > log_marginal_likelihood(data, hp(sf2=0.1, sn2=0.0), 0)
    assert good > log_marginal_likelihood(data, hp(sf2=1000.0, sn2=0.0), 0)


def test_lml_rejects_empty_data_and_bad_index():
    empty = TrainingSet(inputs=np.zeros((0, 1)), outputs=np.zeros((0, 1)))
    with pytest.raises(ValueError):
        log_marginal_likelihood(empty, hp(), 0)
    data = TrainingSet(inputs=np.zeros((1, 1)), outputs=np.zeros((1, 1)))
    with pytest.raises(ValueError):
        log_marginal_likelihood(data, hp(), 1)


def test_lml_gradient_matches_central_differences(rng):
    m, d = 6, 2
    x = rng.uniform(-2.0, 2.0, size=(m, d))
    y = rng.normal(size=m)
    diffs = x[:, None, :] - x[None, :, :]
    sq_dists = np.ascontiguousarray(np.transpose(diffs * diffs, (2, 0, 1)))
    for _ in range(5):
        theta = rng.uniform(-1.0, 1.0, size=d + 2)
        _, grad = _lml_value_and_grad(theta, sq_dists, y, 0)
        for k in range(d + 2):
            step = np.zeros(d + 2)
            step[k] = 1e-6
            up, _ = _lml_value_and_grad(theta + step, sq_dists, y, 0)
            down, _ = _lml_value_and_grad(theta - step, sq_dists, y, 0)
            fd = (up - down) / 2e-6
            assert grad[k] == pytest.approx(fd, rel=1e-4, abs=1e-6)


# ------------------------------------------------------------ optimization

def _sampled_gp_data(rng, m=25, sn=0.1):
    x = rng.uniform(-3.0, 3.0, size=(m, 1))
    gram = np.array([[oracles.se_kernel(a, b, 1.0, [1.0]) for b in x] for a in x])
    f = np.linalg.cholesky(gram + 1e-10 * np.eye(m)) @ rng.normal(size=m)
    y = f + sn * rng.normal(size=m)
    return TrainingSet(inputs=x, outputs=y[:, None])


def test_optimize_never_scores_below_init(rng):
    data = _sampled_gp_data(rng)
    init = hp(sf2=1.0, ls=(1.0,), sn2=0.01)
    best = optimize_hyperparameters(data, init, 0, n_restarts=3, seed=0)
    assert log_marginal_likelihood(data, best, 0) >= log_marginal_likelihood(data, init, 0) - 1e-9


def test_optimize_monotone_over_random_inits(rng):
    data = _sampled_gp_data(rng)
    for k in range(8):
        init = hp(
            sf2=float(rng.uniform(0.05, 20.0)),
            ls=(float(rng.uniform(0.1, 5.0)),),
            sn2=float(rng.uniform(1e-4, 0.5)),
        )
        best = optimize_hyperparameters(data, init, 0, n_restarts=2, seed=k)
        assert (
            log_marginal_likelihood(data, best, 0)
            >= log_marginal_likelihood(data, init, 0) - 1e-9
        )


def test_optimize_preserves_positivity(rng):
    data = _sampled_gp_data(rng, m=10)
    best = optimize_hyperparameters(data, hp(sf2=0.5, ls=(0.4,), sn2=1e-6), 0, n_restarts=2, seed=1)
    assert best.signal_variance > 0.0
    assert np.all(best.lengthscales > 0.0)
    assert best.noise_variance > 0.0


def test_optimize_rejects_empty_data():
    empty = TrainingSet(inputs=np.zeros((0, 1)), outputs=np.zeros((0, 1)))
    with pytest.raises(ValueError):
        optimize_hyperparameters(empty, hp(), 0)


# ------------------------------------------------------------ serialization

def test_training_set_csv_round_trip(tmp_path, rng):
    data = TrainingSet(inputs=rng.normal(size=(7, 3)), outputs=rng.normal(size=(7, 2)))
    path = tmp_path / "set.csv"
    data.save_csv(path)
    loaded = TrainingSet.load_csv(path)
    assert np.array_equal(loaded.inputs, data.inputs)
    assert np.array_equal(loaded.outputs, data.outputs)
    header = path.read_text().splitlines()[0]
    assert header == "x0,x1,x2,y0,y1"


def test_hyperparameters_json_round_trip():
    p = hp(sf2=2.5, ls=(0.5, 1.5), sn2=1e-4)
    again = Hyperparameters.from_dict(p.to_dict())
    assert again.signal_variance == p.signal_variance
    assert np.array_equal(again.lengthscales, p.lengthscales)
    assert again.noise_variance == p.noise_variance
    assert set(p.to_dict()) == {"signal_variance", "lengthscales", "noise_variance"}


def test_model_save_load_round_trip(tmp_path, rng):
    p = random_params(rng, 2)
    data = TrainingSet(inputs=rng.normal(size=(5, 2)), outputs=rng.normal(size=(5, 2)))
    model = fit(data, [p, random_params(rng, 2)])
    path = tmp_path / "model.json"
    model.save(path)
    loaded = GPModel.load(path)
    q = rng.normal(size=2)
    np.testing.assert_array_equal(loaded.predict(q).mean, model.predict(q).mean)
    np.testing.assert_array_equal(loaded.predict(q).variance, model.predict(q).variance)


def test_training_set_validation():
    with pytest.raises(ValueError):
        TrainingSet(inputs=np.zeros((2, 1)), outputs=np.zeros((3, 1)))
    with pytest.raises(ValueError):
        TrainingSet(inputs=np.array([[np.nan]]), outputs=np.array([[0.0]]))


def test_hyperparameters_validation():
    with pytest.raises(ValueError):
        hp(sf2=0.0)
    with pytest.raises(ValueError):
        hp(ls=(1.0, -1.0))
    with pytest.raises(ValueError):
        hp(sn2=-1e-3)


# ---------------------------------------------------------------- properties

point = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False, width=64)


@settings(max_examples=60, deadline=None)
@given(
    xs=st.lists(point, min_size=2, max_size=4),
    zs=st.lists(point, min_size=2, max_size=4),
    sf2=st.floats(min_value=0.01, max_value=100.0),
    ell=st.floats(min_value=0.1, max_value=5.0),
)
def test_property_kernel_symmetric_and_bounded(xs, zs, sf2, ell):
    d = min(len(xs), len(zs))
    p = hp(sf2=sf2, ls=np.full(d, ell))
    x = np.asarray(xs[:d])
    z = np.asarray(zs[:d])
    assert kernel(x, z, p) == kernel(z, x, p)
    assert 0.0 <= kernel(x, z, p) <= sf2
    assert kernel(x, x, p) == sf2


@settings(max_examples=25, deadline=None)
@given(data=st.data(), m=st.integers(min_value=1, max_value=6), seed=st.integers(0, 2**31))
def test_property_posterior_variance_within_prior(data, m, seed):
    gen = np.random.default_rng(seed)
    d = int(gen.integers(1, 4))
    p = random_params(gen, d)
    x = gen.uniform(-2.0, 2.0, size=(m, d))
    y = gen.normal(size=(m, 1))
    model = fit(TrainingSet(inputs=x, outputs=y), [p])
    q = gen.uniform(-3.0, 3.0, size=d)
    var = model.predict(q).variance[0]
    assert 0.0 <= var <= p.signal_variance * (1.0 + 1e-9)
    marginal = model.predict_marginal(q, np.arange(d))
    assert marginal.variance[0] == var
