import numpy as np
import pytest

from bevground.data.schema import write_samples
from bevground.data.synth import SynthConfig, synth_corpus


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Tiny deterministic synthetic corpus shared across test modules."""
    root = tmp_path_factory.mktemp("corpus")
    cfg = SynthConfig(seed=5, n_scenes=8, prompts_per_scene=2)
    samples = synth_corpus(cfg, root)
    return root, samples


def _record(sample_id, center, category="car", num_points=25, scene_extra=()):
    box = list(center) + [4.5, 1.9, 1.6, 0.3]
    scene_boxes = [{"box": box, "category": category}]
    scene_boxes += [{"box": list(c) + [4.5, 1.9, 1.6, 0.0], "category": cat} for c, cat in scene_extra]
    return {
        "sample_id": sample_id,
        "scene_id": f"scene-{sample_id}",
        "prompt": f"the {category} over there",
        "lidar_ref": f"points/{sample_id}.bin",
        "image_refs": [f"images/{sample_id}/{i}.png" for i in range(6)],
        "referred": box,
        "category": category,
        "num_points": num_points,
        "scene_boxes": scene_boxes,
    }


@pytest.fixture
def preprocessing_fixture():
    """Ten raw records: 3 range violations, 2 empty boxes, 1 unmapped category.

    The four survivors are r00, r01 (unique car), r02 (one of two trucks),
    and r03 (pedestrian near the z ceiling, still strictly inside).
    """
    records = [
        _record("r00", (10.0, -5.0, 0.0)),
        _record("r01", (-30.0, 22.0, -1.0)),
        _record("r02", (5.0, 48.0, 0.5), category="truck",
                scene_extra=[((8.0, 40.0, 0.5), "truck")]),
        _record("r03", (0.0, 0.0, 2.9), category="pedestrian"),
        _record("r04", (54.0, 54.0, 3.0)),            # on the corner: strict bound
        _record("r05", (-60.0, 0.0, 0.0)),            # x below lo
        _record("r06", (0.0, 0.0, -5.0)),             # z exactly at lo
        _record("r07", (1.0, 2.0, 0.0), num_points=0),
        _record("r08", (3.0, 4.0, 0.0), num_points=0),
        _record("r09", (5.0, 6.0, 0.0), category="animal.dog"),  # unmapped
    ]
    survivors = {"r00", "r01", "r02", "r03"}
    attributes = {"r00": "unique", "r01": "unique", "r02": "multiple", "r03": "unique"}
    return records, survivors, attributes


@pytest.fixture
def write_corpus_file(tmp_path):
    def _write(samples, name="samples.jsonl"):
        path = tmp_path / name
        write_samples(path, samples)
        return path

    return _write
