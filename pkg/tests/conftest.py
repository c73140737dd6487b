import numpy as np
import pytest

from alod.synthgen import SynthConfig, generate_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small on-disk dataset for protocol and CLI tests."""
    root = tmp_path_factory.mktemp("tiny_data")
    config = SynthConfig(
        split_sizes={"train": 30, "test": 10}, image_size=(64, 64), seed=5
    )
    manifest = generate_dataset(config, root)
    return root, manifest


@pytest.fixture(scope="session")
def loop_dataset(tmp_path_factory):
    """Pool-scale dataset (2000 train / 200 test) for closed-loop tests."""
    root = tmp_path_factory.mktemp("loop_data")
    config = SynthConfig(
        split_sizes={"train": 2000, "test": 200}, image_size=(64, 64), seed=11
    )
    manifest = generate_dataset(config, root)
    return root, manifest


def random_detections(rng, n, num_classes=3, span=100.0):
    """Random valid detections for property tests."""
    from alod.types import BoundingBox, Detection

    dets = []
    for _ in range(n):
        x0, y0 = rng.uniform(0, span, 2)
        w, h = rng.uniform(1.0, span / 2, 2)
        probs = rng.dirichlet(np.ones(num_classes))
        dets.append(
            Detection(
                box=BoundingBox(x0, y0, x0 + w, y0 + h),
                score=float(rng.uniform(0, 1)),
                class_probs=tuple(probs),
            )
        )
    return dets
