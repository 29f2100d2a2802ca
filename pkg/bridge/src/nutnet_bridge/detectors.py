"""Detector backends.

Two backends are provided:

- ``toy``: a dependency-free saturated-blob detector used for hermetic
  integration testing. It finds connected regions whose chroma (max
  channel minus min channel) exceeds a threshold and reports their
  bounding boxes.
- ``torchvision:<model>``: a real pretrained detector (e.g.
  ``torchvision:fasterrcnn_resnet50_fpn``) with COCO class names.
  Requires the ``torch`` extra and locally available weights.
"""

from __future__ import annotations

import numpy as np


class DetectorError(Exception):
    """A backend could not be constructed or failed during inference."""


class ToyBlobDetector:
    """Detects saturated color blobs on a neutral background.

    Intended only for integration tests: it is deterministic, fast, and
    needs no model weights. Confidence is the mean chroma of the blob,
    clipped to [0, 1].
    """

    model_id = "toy-blob"
    chroma_threshold = 0.25
    min_area = 16

    def detect(self, image: np.ndarray) -> list[dict]:
        from scipy import ndimage

        img = np.asarray(image, dtype=np.float32)
        chroma = img.max(axis=2) - img.min(axis=2)
        labels, n = ndimage.label(chroma > self.chroma_threshold)
        boxes = []
        h, w = chroma.shape
        for sl in ndimage.find_objects(labels):
            if sl is None:
                continue
            ys, xs = sl
            region = chroma[ys, xs]
            if region.size < self.min_area:
                continue
            conf = float(np.clip(region.mean() * 2.0, 0.0, 1.0))
            boxes.append(dict(
                **{"class": "blob"},
                class_id=0,
                conf=conf,
                x1=float(xs.start), y1=float(ys.start),
                x2=float(min(xs.stop, w)), y2=float(min(ys.stop, h)),
            ))
        boxes.sort(key=lambda b: -b["conf"])
        return boxes


class TorchvisionDetector:
    """A pretrained torchvision detection model with COCO labels."""

    def __init__(self, model_name: str):
        try:
            import torch
            import torchvision
            from torchvision.models import detection as tvd
        except ImportError as exc:  # pragma: no cover - env without torch
            raise DetectorError(f"torchvision backend unavailable: {exc}")
        try:
            factory = getattr(tvd, model_name)
            weights_enum = tvd.__dict__.get(
                "".join(p.capitalize() for p in model_name.split("_")) + "_Weights"
            )
            weights = weights_enum.DEFAULT if weights_enum else None
            self._model = factory(weights=weights)
        except Exception as exc:
            raise DetectorError(f"could not load {model_name!r}: {exc}")
        self._model.eval()
        self._torch = torch
        self.model_id = f"torchvision:{model_name}"
        meta = weights.meta if weights is not None else {}
        self._categories = meta.get("categories", [])

    def detect(self, image: np.ndarray) -> list[dict]:
        torch = self._torch
        h, w, _ = image.shape
        tensor = torch.from_numpy(
            np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32)
        )
        with torch.no_grad():
            [out] = self._model([tensor])
        boxes = []
        for (x1, y1, x2, y2), label, score in zip(
            out["boxes"].tolist(), out["labels"].tolist(), out["scores"].tolist()
        ):
            cid = int(label)
            name = (self._categories[cid]
                    if cid < len(self._categories) else str(cid))
            boxes.append(dict(
                **{"class": name},
                class_id=cid,
                conf=float(np.clip(score, 0.0, 1.0)),
                x1=float(np.clip(x1, 0, w)), y1=float(np.clip(y1, 0, h)),
                x2=float(np.clip(x2, 0, w)), y2=float(np.clip(y2, 0, h)),
            ))
        return boxes


def load_detector(spec: str):
    """Build a detector backend from its configuration string."""
    if spec == "toy":
        return ToyBlobDetector()
    if spec.startswith("torchvision:"):
        return TorchvisionDetector(spec.split(":", 1)[1])
    raise DetectorError(
        f"unknown detector {spec!r}; expected 'toy' or 'torchvision:<model>'"
    )
