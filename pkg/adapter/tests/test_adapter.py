import json
import subprocess
import sys
from pathlib import Path

import pytest

from alod_adapter import wire
from alod_adapter.adapter import AdapterConfig, load_trainer, serve_request


def write_request(path: Path, *, k=3, labeled_images=2, num_classes=3, pool=(10, 11), test=(20,)):
    path.mkdir(parents=True, exist_ok=True)
    images = {
        str(i): {"file_name": f"{i}.png", "width": 64, "height": 64}
        for i in (*pool, *test)
    }
    labeled = {
        "images": [
            {"id": i, "file_name": f"{i}.png", "width": 64, "height": 64}
            for i in range(labeled_images)
        ],
        "annotations": [
            {"id": 1, "image_id": 0, "category_id": 0, "bbox": [1, 1, 5, 5], "area": 25, "iscrowd": 0}
        ]
        if labeled_images
        else [],
        "categories": [{"id": c, "name": str(c)} for c in range(num_classes)],
    }
    request = {
        "protocol_version": wire.PROTOCOL_VERSION,
        "phase": "train_predict",
        "step": 0,
        "run_seed": 0,
        "k": k,
        "checkpoint": None,
        "manifest_path": None,
        "labeled": labeled,
        "pool_image_ids": list(pool),
        "test_image_ids": list(test),
        "images": images,
    }
    (path / wire.REQUEST_NAME).write_text(json.dumps(request))
    return request


def test_serves_schema_exact_response(tmp_path):
    write_request(tmp_path, k=10)
    serve_request(tmp_path, AdapterConfig())
    assert (tmp_path / wire.READY_NAME).exists()
    status = json.loads((tmp_path / wire.STATUS_NAME).read_text())
    assert status["ok"] is True
    assert status["checkpoint"].endswith(".ckpt")
    preds = json.loads((tmp_path / wire.PREDICTIONS_NAME).read_text())
    assert set(preds) == {"10", "11", "20"}
    for dets in preds.values():
        for det in dets:
            assert len(det["bbox"]) == 4
            assert 0 <= det["score"] <= 1
            assert abs(sum(det["probs"]) - 1.0) <= 1e-6
            assert len(det["samples"]) == 10
            k = len(det["samples"])
            width = len(det["samples"][0])
            mean = [sum(row[i] for row in det["samples"]) / k for i in range(width)]
            flat = det["bbox"] + [det["score"]] + det["probs"]
            assert max(abs(a - b) for a, b in zip(mean, flat)) <= 1e-9


def test_k1_requests_omit_samples(tmp_path):
    write_request(tmp_path, k=1)
    serve_request(tmp_path, AdapterConfig())
    preds = json.loads((tmp_path / wire.PREDICTIONS_NAME).read_text())
    assert all("samples" not in det for dets in preds.values() for det in dets)


def test_ready_marker_created_strictly_last(tmp_path, monkeypatch):
    import builtins

    order = []
    real_open = builtins.open
    real_touch = Path.touch

    def spy_open(path, *args, **kwargs):
        if args and "w" in str(args[0]):
            order.append(Path(path).name)
        return real_open(path, *args, **kwargs)

    def spy_touch(self, *args, **kwargs):
        order.append(self.name)
        return real_touch(self, *args, **kwargs)

    write_request(tmp_path, k=4)
    monkeypatch.setattr(builtins, "open", spy_open)
    monkeypatch.setattr(Path, "touch", spy_touch)
    serve_request(tmp_path, AdapterConfig())
    assert order[-1] == wire.READY_NAME
    assert set(order[:-1]) >= {wire.PREDICTIONS_NAME, wire.STATUS_NAME}


def test_empty_labeled_set_gives_error_status(tmp_path):
    write_request(tmp_path, labeled_images=0)
    with pytest.raises(ValueError):
        serve_request(tmp_path, AdapterConfig())
    status = json.loads((tmp_path / wire.STATUS_NAME).read_text())
    assert status["ok"] is False
    assert "empty labeled set" in status["message"]
    assert (tmp_path / wire.READY_NAME).exists()


def test_training_failure_reports_traceback_summary(tmp_path):
    write_request(tmp_path)
    config = AdapterConfig(trainer="alod_adapter.stub:broken_build")
    with pytest.raises(RuntimeError):
        serve_request(tmp_path, config)
    status = json.loads((tmp_path / wire.STATUS_NAME).read_text())
    assert status["ok"] is False
    assert "synthetic training failure" in status["message"]
    assert "Traceback" in status["message"]


def test_version_mismatch_rejected(tmp_path):
    request = write_request(tmp_path)
    request["protocol_version"] = 2
    (tmp_path / wire.REQUEST_NAME).write_text(json.dumps(request))
    with pytest.raises(wire.WireError):
        serve_request(tmp_path, AdapterConfig())
    assert json.loads((tmp_path / wire.STATUS_NAME).read_text())["ok"] is False


def test_config_validation():
    with pytest.raises(ValueError):
        AdapterConfig(k=1)
    with pytest.raises(ValueError):
        AdapterConfig.from_dict({"bogus": 1})
    assert load_trainer("alod_adapter.stub:build").__name__ == "build"


def test_cli_exit_codes(tmp_path):
    write_request(tmp_path)
    proc = subprocess.run(
        [sys.executable, "-m", "alod_adapter", "--request", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    bad = tmp_path / "bad"
    bad.mkdir()
    proc = subprocess.run(
        [sys.executable, "-m", "alod_adapter", "--request", str(bad)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 1


def test_passes_orchestrator_protocol_check(tmp_path):
    """Conformance through the orchestrator's own CLI, consumed externally."""
    backend_cmd = f"{sys.executable} -m alod_adapter"
    proc = subprocess.run(
        [
            sys.executable, "-m", "alod.cli", "protocol-check",
            "--backend", backend_cmd,
            "--workdir", str(tmp_path / "pc"),
            "--k", "3",
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr + proc.stdout
    assert "PASS" in proc.stdout
