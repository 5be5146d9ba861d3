"""scikit-learn style wrapper around the training and inference pipeline."""
from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .config import RunConfig, config_from_dict
from .data import ActionSpan, SyntheticDataset, Video
from .evaluation import GroundTruthRecord, evaluate_map
from .inference import DetectionRecord
from .training import infer, train

Action = Tuple[int, int, int]  # (first snippet, last snippet, class id)


def _as_videos(X, y=None, feature_dim: Optional[int] = None) -> List[Video]:
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = list(X)
    if len(X) == 0:
        raise ValueError("X holds no videos")
    if y is not None and len(y) != len(X):
        raise ValueError(f"X has {len(X)} videos but y has {len(y)} action lists")
    videos = []
    for i, feats in enumerate(X):
        feats = check_array(feats, dtype=np.float64, ensure_min_samples=2)
        if feature_dim is not None and feats.shape[1] != feature_dim:
            raise ValueError(f"video {i}: expected {feature_dim} features per snippet, got {feats.shape[1]}")
        actions = []
        for start, end, cls in (y[i] if y is not None else ()):
            if not 0 <= start < end < feats.shape[0]:
                raise ValueError(f"video {i}: action [{start}, {end}] outside 0..{feats.shape[0] - 1}")
            actions.append(ActionSpan(int(start), int(end), int(cls)))
        videos.append(Video(f"video_{i:04d}", feats, actions))
    return videos


class TemporalActionDetector(BaseEstimator):
    """Fit on untrimmed feature sequences, predict scored action segments.

    ``X`` is a sequence of ``[T, D']`` arrays (or one ``[N, T, D']`` array);
    ``y`` lists ``(first_snippet, last_snippet, class_id)`` actions per video.
    ``config`` is a run-configuration dict; its ``data`` block supplies the
    window geometry and snippet duration.
    """

    def __init__(self, config: Optional[dict] = None, seed: int = 0, max_steps: Optional[int] = None):
        self.config = config
        self.seed = seed
        self.max_steps = max_steps

    def _run_config(self, feature_dim: int, num_classes: int) -> RunConfig:
        data = RunConfig().to_dict() if self.config is None else config_from_dict(self.config).to_dict()
        data["train"]["seed"] = self.seed
        if self.max_steps is not None:
            data["train"]["max_steps"] = self.max_steps
        data["data"]["feature_dim"] = data["model"]["input_dim"] = feature_dim
        data["data"]["num_classes"] = data["model"]["num_classes"] = num_classes
        return config_from_dict(data)

    def fit(self, X, y):
        videos = _as_videos(X, y)
        classes = [a.class_id for v in videos for a in v.actions]
        if not classes:
            raise ValueError("y holds no actions")
        if min(classes) < 0:
            raise ValueError("class ids must be non-negative")
        self.n_features_in_ = videos[0].features.shape[1]
        self.n_classes_ = int(max(classes)) + 1
        if self.config is not None and "model" in self.config and "num_classes" in self.config["model"]:
            self.n_classes_ = max(self.n_classes_, int(self.config["model"]["num_classes"]))
        cfg = self._run_config(self.n_features_in_, self.n_classes_)
        dataset = SyntheticDataset(videos, np.zeros((self.n_classes_, self.n_features_in_)), cfg.data)
        result = train(cfg, dataset)
        self.model_ = result.model
        self.n_steps_ = result.steps
        return self

    def predict(self, X) -> List[List[DetectionRecord]]:
        """Per video, detections in seconds sorted by descending score."""
        check_is_fitted(self, "model_")
        videos = _as_videos(X, feature_dim=self.n_features_in_)
        records = infer(self.model_, videos)
        by_video = {v.video_id: [] for v in videos}
        for r in records:
            by_video[r.video_id].append(r)
        return [by_video[v.video_id] for v in videos]

    def score(self, X, y) -> float:
        """Average mAP over tIoU 0.3..0.7 (0 when ``y`` holds no actions)."""
        videos = _as_videos(X, y, feature_dim=self.n_features_in_)
        sps = self.model_.config.data.seconds_per_snippet
        gts = [GroundTruthRecord(v.video_id, a.start * sps, a.end * sps, a.class_id)
               for v in videos for a in v.actions]
        detections = [r for per_video in self.predict(X) for r in per_video]
        report = evaluate_map(detections, gts)
        return 0.0 if report.average_map is None else report.average_map
