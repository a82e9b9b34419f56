"""scikit-learn style wrapper around the pose regressor."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..kinematics import GripperModel, load_gripper
from .config import ConvSpec, auto_config
from .model import encode
from .training import LossSpec, TrainConfig, fit_arrays, predict_batched, residuals_from_predictions
from .validation import check_candidates, check_contexts, check_grids


class GraspPoseRegressor(RegressorMixin, BaseEstimator):
    """Occupancy grid in, grasp pose vector out.

    ``fit(X, y)`` takes grids ``(n, R, R, R)`` and candidate poses
    ``(n, K, 7+J)`` (or ``(n, 7+J)`` for a single target). The combined loss
    also needs ``contexts``, one ``(sdf, t_r)`` pair per grid. ``transform``
    returns the encoder features; ``score`` is the negative mean
    consistency residual, so higher is better.
    """

    def __init__(
        self,
        gripper="wide24",
        loss="consistency",
        beta=0.75,
        epochs=200,
        batch_size=16,
        learning_rate=1e-3,
        conv_layers=((8, 3, True), (16, 3, True), (32, 2, False)),
        hidden=(128, 64),
        random_state=0,
    ):
        self.gripper = gripper
        self.loss = loss
        self.beta = beta
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.conv_layers = conv_layers
        self.hidden = hidden
        self.random_state = random_state

    def _model(self):
        return self.gripper if isinstance(self.gripper, GripperModel) else load_gripper(self.gripper)

    def fit(self, X, y, contexts=None, X_test=None, y_test=None, contexts_test=None):
        X = check_grids(X)
        model = self._model()
        Y = check_candidates(y, len(X), model.pose_dim)
        contexts = check_contexts(contexts, len(X))
        spec = LossSpec.parse(self.loss, self.beta)
        convs = tuple(c if isinstance(c, ConvSpec) else ConvSpec(*c) for c in self.conv_layers)
        network = auto_config(X.shape[1], convs, tuple(self.hidden), model.pose_dim)
        test = {}
        if X_test is not None:
            Xt = check_grids(X_test, X.shape[1])
            test = dict(
                test_grids=Xt,
                test_candidates=check_candidates(y_test, len(Xt), model.pose_dim),
                test_contexts=check_contexts(contexts_test, len(Xt)),
            )
        result = fit_arrays(
            X,
            Y,
            model=model,
            loss=spec,
            seed=self.random_state,
            network=network,
            contexts=contexts,
            train_config=TrainConfig(
                epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate, log_beta=self.beta
            ),
            **test,
        )
        self.params_ = result.params
        self.network_ = result.config
        self.model_ = model
        self.log_ = result.log
        self.diverged_ = result.diverged
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        return predict_batched(self.params_, self.network_, check_grids(X, self.network_.input_resolution))

    def transform(self, X):
        check_is_fitted(self, "params_")
        return encode(self.params_, self.network_, check_grids(X, self.network_.input_resolution))

    def score(self, X, y, sample_weight=None):
        X = check_grids(X)
        Y = check_candidates(y, len(X))
        res = residuals_from_predictions(self.predict(X), Y)
        return -res["consistency"]
