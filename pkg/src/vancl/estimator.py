"""scikit-learn style wrapper around dual-flow training and the deployed tagger."""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .backbone import ModelConfig
from .core import LabelSet
from .metrics import evaluate
from .synthgen import DEFAULT_LABELS
from .training import TrainConfig, train


class VanclTagger(BaseEstimator):
    """Fit on a list of Documents, predict entity lists.

    Every constructor argument is a plain value so ``get_params``/``set_params``
    and ``sklearn.base.clone`` work.  Only the standard flow survives ``fit``.
    """

    def __init__(self, labels=DEFAULT_LABELS, mode="VANCL", lam=1.0, divergence="KL",
                 scheme=1, share_weights=True, painted=True, baseline=False, lr=3e-3,
                 epochs=20, batch_size=8, dropout_p=0.1, seed=0, d_model=64, n_layers=2,
                 outer_encoder="cnn4"):
        self.labels = labels
        self.mode = mode
        self.lam = lam
        self.divergence = divergence
        self.scheme = scheme
        self.share_weights = share_weights
        self.painted = painted
        self.baseline = baseline
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.dropout_p = dropout_p
        self.seed = seed
        self.d_model = d_model
        self.n_layers = n_layers
        self.outer_encoder = outer_encoder

    def _configs(self):
        cfg = TrainConfig(lr=self.lr, dropout_p=self.dropout_p, batch_size=self.batch_size,
                          epochs=self.epochs, lam=self.lam, divergence=self.divergence,
                          mode=self.mode, share_weights=self.share_weights, scheme=self.scheme,
                          painted=self.painted, baseline=self.baseline, seed=self.seed)
        mcfg = ModelConfig(d_model=self.d_model, n_layers=self.n_layers,
                           ffn_dim=2 * self.d_model, outer_encoder=self.outer_encoder)
        return cfg, mcfg

    def fit(self, X, y=None, dev=None):
        """X is a list of labelled Documents; y is ignored (labels live on the segments)."""
        cfg, mcfg = self._configs()
        result = train(list(X), LabelSet(tuple(self.labels)), cfg, mcfg, dev_docs=dev)
        self.tagger_ = result.tagger
        self.history_ = result.history
        return self

    def _check(self):
        if not hasattr(self, "tagger_"):
            raise NotFittedError("VanclTagger is not fitted yet; call fit first")

    def predict(self, X):
        self._check()
        return self.tagger_.predict_entities(list(X))

    def predict_tags(self, X):
        self._check()
        return self.tagger_.predict_tags(list(X))

    def score(self, X, y=None):
        """Micro entity F1 on labelled documents."""
        self._check()
        return evaluate(self.tagger_, list(X)).f1
