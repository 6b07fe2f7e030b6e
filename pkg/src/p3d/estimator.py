"""scikit-learn compatible wrapper around the P3D model."""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted

from . import tensor as tn
from .evaluation import chunk_probabilities, predict_videos
from .model import ModelConfig, batch_inputs, build_model, model_forward
from .pose.layout import PART_ORDER, REPRESENTATIONS
from .pose.sequence import PoseSequence, sample_eval_chunks
from .tensor import RngState
from .training import TrainConfig, train


def check_pose_sequences(X, config: ModelConfig | None = None) -> list[PoseSequence]:
    """Validate a collection of pose sequences and return it as a list.

    With ``config`` the sequences must also carry every block it selects
    and match its joint/expression layout.
    """
    if isinstance(X, PoseSequence):
        raise TypeError("expected a collection of PoseSequence, got a single sequence")
    try:
        seqs = list(X)
    except TypeError:
        raise TypeError(f"expected a collection of PoseSequence, got {type(X).__name__}") from None
    if not seqs:
        raise ValueError("found 0 sequences while a minimum of 1 is required")
    for i, s in enumerate(seqs):
        if not isinstance(s, PoseSequence):
            raise TypeError(f"element {i} is {type(s).__name__}, not PoseSequence")
    joints = {s.num_joints for s in seqs}
    if len(joints) > 1:
        raise ValueError(f"sequences disagree on the number of joints: {sorted(joints)}")
    if config is not None:
        lay = config.layout
        for s in seqs:
            for r in config.reps:
                if getattr(s, r) is None:
                    raise ValueError(f"sequence {s.id!r} lacks the {r} block required by the model")
            if s.num_joints != lay.total_joints:
                raise ValueError(f"sequence {s.id!r} has {s.num_joints} joints, layout expects {lay.total_joints}")
            if lay.uses_expression and s.expression_width != lay.expression_width:
                raise ValueError(f"sequence {s.id!r} has expression width {s.expression_width}, "
                                 f"expected {lay.expression_width}")
            for name, block in s._blocks().items():
                if not np.all(np.isfinite(block)):
                    raise ValueError(f"sequence {s.id!r} has non-finite values in {name}")
    return seqs


class P3DClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Part-wise pose-sequence classifier.

    ``fit`` takes a list of :class:`PoseSequence` and class labels (or uses
    each sequence's ``label`` when ``y`` is None). ``predict_proba`` averages
    four evaluation chunks per video; ``transform`` returns the time-pooled
    encoder features averaged the same way.
    """

    def __init__(self, T=32, parts=PART_ORDER, reps=REPRESENTATIONS, D=8, alpha=10, N=3, heads=4,
                 ffn_dim=256, dropout=0.3, block_composition="PET-WET", ensemble="early",
                 positional_encoding=True, stream_expression=False, norm_first=False,
                 joints_per_part=None, expression_width=10, precision="single",
                 lr=5e-4, weight_decay=5e-3, batch_size=512, epochs=500, random_state=0):
        self.T = T
        self.parts = parts
        self.reps = reps
        self.D = D
        self.alpha = alpha
        self.N = N
        self.heads = heads
        self.ffn_dim = ffn_dim
        self.dropout = dropout
        self.block_composition = block_composition
        self.ensemble = ensemble
        self.positional_encoding = positional_encoding
        self.stream_expression = stream_expression
        self.norm_first = norm_first
        self.joints_per_part = joints_per_part
        self.expression_width = expression_width
        self.precision = precision
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.random_state = random_state

    def _model_config(self, num_classes: int) -> ModelConfig:
        kw = dict(
            num_classes=num_classes, T=self.T, parts=tuple(self.parts), reps=tuple(self.reps), D=self.D,
            alpha=self.alpha, N=self.N, heads=self.heads, ffn_dim=self.ffn_dim, dropout=self.dropout,
            block_composition=self.block_composition, ensemble=self.ensemble,
            positional_encoding=self.positional_encoding, stream_expression=self.stream_expression,
            norm_first=self.norm_first, expression_width=self.expression_width, precision=self.precision,
        )
        if self.joints_per_part is not None:
            kw["joints_per_part"] = dict(self.joints_per_part)
        return ModelConfig(**kw)

    def _train_config(self) -> TrainConfig:
        seed = 0 if self.random_state is None else int(self.random_state)
        return TrainConfig(lr=self.lr, weight_decay=self.weight_decay, batch_size=self.batch_size,
                           epochs=self.epochs, seed=seed)

    def fit(self, X, y=None, callback=None):
        seqs = check_pose_sequences(X)
        if y is None:
            y = np.asarray([s.label for s in seqs])
        y = np.asarray(y)
        if len(y) != len(seqs):
            raise ValueError(f"X has {len(seqs)} sequences but y has {len(y)} labels")
        check_classification_targets(y)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        if len(self.classes_) < 2:
            raise ValueError("need samples of at least 2 classes")
        encoded = self._encoder.transform(y)

        config = self._model_config(len(self.classes_))
        check_pose_sequences(seqs, config)
        train_cfg = self._train_config()
        self.model_ = build_model(config, RngState(train_cfg.seed))
        relabelled = [dataclasses.replace(s, label=int(c)) for s, c in zip(seqs, encoded)]
        result = train(self.model_, relabelled, train_cfg, callback=callback)
        self.history_ = result.history
        self.n_features_in_ = config.input_width(0)
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        seqs = check_pose_sequences(X, self.model_.config)
        return predict_videos(seqs, self.model_)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def transform(self, X) -> np.ndarray:
        """(n_videos, d_model) pooled features, averaged over the evaluation chunks."""
        check_is_fitted(self, "model_")
        cfg = self.model_.config
        seqs = check_pose_sequences(X, cfg)
        feats = []
        with tn.no_grad():
            for s in seqs:
                out = model_forward(self.model_, batch_inputs(cfg, sample_eval_chunks(s, cfg.T)), training=False)
                feats.append(out.features.mean(axis=0))
        return np.stack(feats)

    def chunk_proba(self, seq: PoseSequence) -> np.ndarray:
        check_is_fitted(self, "model_")
        return chunk_probabilities(seq, self.model_)
