"""End-to-end check of the external-oracle wire protocol against the
reference bridge under bridge/. Skipped when the bridge is not built, so the
core suite never depends on it."""

import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from lockmark.oracle import resolve_oracle
from lockmark.raster import RgbaImage

BRIDGE_MAIN = Path(__file__).parent.parent / "bridge" / "dist" / "src" / "main.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not BRIDGE_MAIN.exists(),
    reason="bridge not built (run `npm test` in bridge/)",
)


def solid(value, w=8, h=8):
    arr = np.full((h, w, 4), value, dtype=np.uint8)
    arr[:, :, 3] = 255
    return RgbaImage(arr)


@pytest.fixture
def stub_spec(tmp_path):
    model = tmp_path / "stub.json"
    model.write_text(
        json.dumps(
            {"kind": "stub", "classes": 3, "input_w": 8, "input_h": 8, "logits": [0.5, 2.0, -1.0]}
        )
    )
    return f"proc:node {BRIDGE_MAIN} --model {model}"


def test_python_client_scores_through_node_bridge(stub_spec):
    with resolve_oracle(stub_spec, timeout=30) as oracle:
        assert oracle.class_count == 3
        assert oracle.input_size == (8, 8)
        assert oracle.normalized
        scores = oracle.score(solid(40)).as_array()
        logits = np.array([0.5, 2.0, -1.0])
        expected = np.exp(logits - logits.max())
        expected /= expected.sum()
        assert np.allclose(scores, expected, atol=1e-9)


def test_batch_and_auto_resample_through_bridge(stub_spec):
    with resolve_oracle(stub_spec, timeout=30) as oracle:
        batch = oracle.score_batch([solid(0), solid(255, w=20, h=14), solid(128)])
        assert len(batch) == 3
        assert batch[0].scores == batch[1].scores == batch[2].scores  # stub is constant
        assert oracle.query_count == 3
