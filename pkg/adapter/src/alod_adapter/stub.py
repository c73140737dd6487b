"""Stub trainer: a deterministic stand-in used for conformance testing.

It "trains" by counting the labeled classes and fabricates schema-exact
predictions, including aligned dropout samples whose arithmetic mean equals
the reported detection. Real adapters plug an actual training stack into the
same two-callable shape (build -> predict).
"""

from __future__ import annotations

import hashlib


def _image_salt(image_id: int) -> float:
    digest = hashlib.sha256(str(image_id).encode()).digest()
    return int.from_bytes(digest[:4], "big") / 2**32


def _mean(rows: list[list[float]]) -> list[float]:
    k = len(rows)
    return [sum(row[i] for row in rows) / k for i in range(len(rows[0]))]


class StubPredictor:
    def __init__(self, num_classes: int, checkpoint: str):
        self.num_classes = num_classes
        self.checkpoint = checkpoint

    def predict(self, image: dict, k: int) -> list[dict]:
        width = float(image["width"])
        height = float(image["height"])
        salt = _image_salt(int(image["id"]))
        detections = []
        for j in range(1 + int(salt * 2)):
            cls = int((salt * 7919 + j) % self.num_classes)
            probs = [0.3 / max(1, self.num_classes - 1)] * self.num_classes
            probs[cls] = 0.7 if self.num_classes > 1 else 1.0
            x0 = (0.1 + 0.35 * j + 0.2 * salt) * width
            y0 = (0.15 + 0.3 * j) * height
            base = [x0, y0, x0 + 0.2 * width, y0 + 0.25 * height]
            if k >= 2:
                rows = []
                for i in range(k):
                    jitter = 0.5 * (i - (k - 1) / 2.0)
                    score = min(0.95, 0.55 + 0.02 * i)
                    rows.append(
                        [base[0] + jitter, base[1] + jitter, base[2] + jitter, base[3] + jitter]
                        + [score]
                        + probs
                    )
                mean = _mean(rows)
                detections.append(
                    {
                        "bbox": mean[:4],
                        "score": mean[4],
                        "probs": mean[5:],
                        "samples": rows,
                    }
                )
            else:
                detections.append({"bbox": base, "score": 0.6, "probs": probs})
        return detections


def build(labeled: dict, settings) -> StubPredictor:
    """Trainer entry point: returns a predictor after a no-op "training"."""
    num_classes = len(labeled.get("categories", [])) or 1
    checkpoint = f"{settings.checkpoint_dir}/stub-{len(labeled.get('annotations', []))}.ckpt"
    return StubPredictor(num_classes=num_classes, checkpoint=checkpoint)


def broken_build(labeled: dict, settings):
    """Trainer that always fails; exercises the error path."""
    raise RuntimeError("synthetic training failure")
