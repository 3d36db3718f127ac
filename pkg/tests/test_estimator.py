import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import Pipeline

from blockfsq import BlockDiagonalResidualQuantizer, ValidationError


def small_estimator(**overrides):
    kwargs = dict(n_stages=3, latent_split=(3, 5), code_split=(1, 2),
                  levels=(3, 4, 4), random_state=0)
    kwargs.update(overrides)
    return BlockDiagonalResidualQuantizer(**kwargs)


@pytest.fixture
def data():
    return np.random.default_rng(42).normal(size=(30, 8))


class TestSklearnContract:
    def test_get_params_round_trip(self):
        est = small_estimator()
        params = est.get_params()
        assert params["n_stages"] == 3
        assert params["latent_split"] == (3, 5)
        rebuilt = BlockDiagonalResidualQuantizer(**params)
        assert rebuilt.get_params() == params

    def test_clone(self, data):
        est = small_estimator().fit(data)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()
        assert not hasattr(cloned, "params_")

    def test_set_params(self):
        est = small_estimator()
        est.set_params(active_stages=2)
        assert est.active_stages == 2

    def test_not_fitted_error(self, data):
        with pytest.raises(NotFittedError):
            small_estimator().transform(data)

    def test_pipeline_compose(self, data):
        pipe = Pipeline([("tokenize", small_estimator())])
        tokens = pipe.fit_transform(data)
        assert tokens.shape == (30, 3)


class TestFitTransform:
    def test_shapes_and_dtypes(self, data):
        est = small_estimator().fit(data)
        tokens = est.transform(data)
        assert tokens.shape == (30, 3)
        assert tokens.dtype == np.int64
        assert tokens.min() >= 0
        assert tokens.max() < est.config_.level_spec.codes_per_stage
        assert est.n_features_in_ == 8

    def test_deterministic_under_random_state(self, data):
        a = small_estimator(random_state=7).fit(data).transform(data)
        b = small_estimator(random_state=7).fit(data).transform(data)
        np.testing.assert_array_equal(a, b)
        c = small_estimator(random_state=8).fit(data).transform(data)
        assert not np.array_equal(a, c)

    def test_active_stages_prefix(self, data):
        full = small_estimator().fit(data)
        short = small_estimator(active_stages=2).fit(data)
        np.testing.assert_array_equal(short.transform(data), full.transform(data)[:, :2])

    def test_wrong_width_rejected(self, data):
        est = small_estimator().fit(data)
        with pytest.raises(ValidationError):
            est.transform(data[:, :5])

    def test_input_split_overrides_latent_split(self):
        x = np.random.default_rng(0).normal(size=(10, 6))
        est = small_estimator(input_split=(2, 4)).fit(x)
        assert est.transform(x).shape == (10, 3)

    def test_training_improves_score(self, data):
        plain = small_estimator().fit(data)
        trained = small_estimator(n_iter=300, batch_size=None).fit(data)
        assert trained.score(data) > plain.score(data)
        assert len(trained.loss_curve_) == 300


class TestInverseTransform:
    def test_round_trip_matches_quantized_latent(self, data):
        est = small_estimator().fit(data)
        tokens = est.transform(data)
        latent = est.inverse_transform(tokens)
        assert latent.shape == (30, 8)
        np.testing.assert_array_equal(latent, est.quantized_latent(data))

    def test_empty_input(self, data):
        est = small_estimator().fit(data)
        tokens = est.transform(np.empty((0, 8)))
        assert tokens.shape == (0, 3)
        assert est.inverse_transform(tokens).shape == (0, 8)
