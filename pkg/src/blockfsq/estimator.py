"""Scikit-learn style front end for the residual quantizer.

The estimator treats a feature matrix as the thing to tokenize: ``fit``
initializes (and optionally trains) the projections on X, ``transform``
encodes rows into per-stage composite tokens, and ``inverse_transform``
decodes tokens back to the quantized latent. It composes with sklearn
pipelines and ``clone`` via the standard get_params/set_params contract.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .analysis import TrainConfig, train_quantizer
from .errors import ValidationError
from .features import FeatureMatrix
from .quantizer import (
    QuantizerConfig,
    apply_post,
    decode_indices,
    encode,
    init_params,
)
from .rng import Rng


class BlockDiagonalResidualQuantizer(BaseEstimator, TransformerMixin):
    """Residual FSQ tokenizer with structurally separated feature partitions.

    Input rows are split column-wise into an emotion part and an acoustic
    part, projected into a partitioned latent, and quantized by a chain of
    residual stages whose projections never mix the partitions. Each stage
    emits one composite integer token per frame; decoding needs only those
    tokens and the fitted parameters.

    Parameters
    ----------
    n_stages : int, default=8
        Residual stage count K.
    latent_split : tuple of int, default=(256, 768)
        Latent partition sizes (emotion, acoustic).
    code_split : tuple of int, default=(3, 6)
        Quantized-space partition sizes per stage.
    levels : sequence of int, optional
        Per-dimension grid sizes; defaults to 2 per emotion dim and 4 per
        acoustic dim.
    input_split : tuple of int, optional
        Column split of X into (emotion, acoustic) inputs; defaults to
        ``latent_split``.
    epsilon : float, default=0.1
        Floor of the learnable per-dimension scale.
    frame_rate_hz : int, default=50
        Frames per second, carried into bitrate accounting and containers.
    block_diagonal : bool, default=True
        Keep the structural partition guarantee. Dense mode exists for
        baseline comparisons only.
    active_stages : int, optional
        Encode/decode only the first K' stages (variable bitrate); None
        means all.
    n_iter : int, default=0
        Training iterations during fit; 0 keeps the random initialization.
    learning_rate, batch_size, commitment_weight :
        Trainer settings, see :class:`blockfsq.analysis.TrainConfig`.
    random_state : int, default=0
        Seed for initialization and training batches.

    Attributes
    ----------
    config_ : QuantizerConfig
        Validated structural configuration.
    params_ : QuantizerParams
        Fitted projections and affine parameters.
    n_features_in_ : int
        Number of input columns seen during fit.
    loss_curve_ : list of float
        Training losses (empty when ``n_iter == 0``).

    Examples
    --------
    >>> import numpy as np
    >>> from blockfsq import BlockDiagonalResidualQuantizer
    >>> q = BlockDiagonalResidualQuantizer(n_stages=2, latent_split=(2, 3),
    ...                                    code_split=(1, 2), levels=(3, 4, 4))
    >>> x = np.random.default_rng(0).normal(size=(16, 5))
    >>> tokens = q.fit(x).transform(x)
    >>> tokens.shape
    (16, 2)
    """

    def __init__(self, n_stages=8, latent_split=(256, 768), code_split=(3, 6),
                 levels=None, input_split=None, epsilon=0.1, frame_rate_hz=50,
                 block_diagonal=True, active_stages=None, n_iter=0,
                 learning_rate=1e-3, batch_size=None, commitment_weight=0.25,
                 random_state=0):
        self.n_stages = n_stages
        self.latent_split = latent_split
        self.code_split = code_split
        self.levels = levels
        self.input_split = input_split
        self.epsilon = epsilon
        self.frame_rate_hz = frame_rate_hz
        self.block_diagonal = block_diagonal
        self.active_stages = active_stages
        self.n_iter = n_iter
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.commitment_weight = commitment_weight
        self.random_state = random_state

    def _make_config(self):
        d_e, d_a = (int(v) for v in self.latent_split)
        f_e, f_a = (int(v) for v in self.code_split)
        levels = self.levels
        if levels is None:
            levels = (2,) * f_e + (4,) * f_a
        return QuantizerConfig(
            K=int(self.n_stages), d_e=d_e, d_a=d_a, f_e=f_e, f_a=f_a,
            levels=tuple(int(v) for v in levels), epsilon=float(self.epsilon),
            frame_rate_hz=int(self.frame_rate_hz),
            block_diagonal=bool(self.block_diagonal),
        )

    def _input_split(self):
        split = self.input_split if self.input_split is not None else self.latent_split
        d_in_e, d_in_a = (int(v) for v in split)
        return d_in_e, d_in_a

    def _split(self, x):
        d_in_e, d_in_a = self._input_split()
        if x.shape[1] != d_in_e + d_in_a:
            raise ValidationError(
                f"X has {x.shape[1]} columns, input split expects {d_in_e}+{d_in_a}"
            )
        fe = FeatureMatrix(x[:, :d_in_e])
        fa = None if d_in_a == 0 else FeatureMatrix(x[:, d_in_e:])
        return fe, fa

    def fit(self, X, y=None):
        """Initialize parameters from ``random_state`` and optionally run
        ``n_iter`` straight-through training steps on X.

        Returns
        -------
        self : object
        """
        X = check_array(X, dtype=np.float64, ensure_min_samples=1)
        config = self._make_config()
        rng = Rng(int(self.random_state))
        params = init_params(config, rng, input_dims=self._input_split())
        curve = []
        if self.n_iter:
            cfg = TrainConfig(
                iterations=int(self.n_iter),
                learning_rate=float(self.learning_rate),
                batch_size=self.batch_size,
                seed=int(self.random_state),
                commitment_weight=float(self.commitment_weight),
            )
            params, curve = train_quantizer(FeatureMatrix(X), params, config, cfg)
        self.config_ = config
        self.params_ = params
        self.loss_curve_ = curve
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Encode rows of X into composite tokens.

        Returns
        -------
        tokens : ndarray of shape (n_samples, active_stages), dtype int64
        """
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        fe, fa = self._split(X)
        result = encode(fe, fa, self.params_, self.config_,
                        active_stages=self.active_stages)
        return result.tokens

    def inverse_transform(self, tokens):
        """Decode composite tokens back to the quantized latent.

        Returns
        -------
        latent : ndarray of shape (n_samples, d_e + d_a), dtype float32
        """
        check_is_fitted(self, "params_")
        tokens = np.asarray(tokens, dtype=np.int64)
        return np.asarray(decode_indices(tokens, self.params_, self.config_).data)

    def score(self, X, y=None):
        """Negative reconstruction MSE of the quantized latent (higher is
        better), so the estimator slots into sklearn model selection."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=1)
        fe, fa = self._split(X)
        result = encode(fe, fa, self.params_, self.config_,
                        active_stages=self.active_stages)
        err = result.cache.accum - result.cache.latent
        return -float(np.mean(err * err))

    def quantized_latent(self, X):
        """Encode and return the post-projected quantized latent for X."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        fe, fa = self._split(X)
        result = encode(fe, fa, self.params_, self.config_,
                        active_stages=self.active_stages)
        return np.asarray(apply_post(self.params_, result.quantized).data)
