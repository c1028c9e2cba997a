import json
import math
from pathlib import Path

import numpy as np
import pytest

from bevground.annotate import (
    CAPTION_PROMPT,
    PARAPHRASE_PROMPTS,
    SECTOR_PREFIXES,
    AnnotationJob,
    ClientError,
    FMClient,
    MockCaptioner,
    MockParaphraser,
    box_fully_visible,
    caption,
    paraphrase_and_localize,
    run_pipeline,
    sample_and_filter,
)
from bevground.cameras import make_default_rig
from bevground.data.schema import GroundingSample, read_samples
from bevground.geometry import Box3D


class RecordingClient(FMClient):
    """Wraps a mock and keeps every request for inspection."""

    def __init__(self, inner):
        super().__init__(kind=inner.kind, max_retries=0)
        self.inner = inner
        self.requests = []

    def _send(self, request):
        self.requests.append(request)
        return self.inner._send(request)


class FlakyClient(FMClient):
    def __init__(self, failures, **kwargs):
        super().__init__(**kwargs)
        self.failures = failures
        self.calls = 0

    def _send(self, request):
        self.calls += 1
        if self.calls <= self.failures:
            raise ConnectionError("synthetic transport failure")
        return {"text": "recovered"}


class TestClients:
    def test_mock_captioner_deterministic_template(self):
        client = MockCaptioner()
        req = {"meta": {"category": "car", "color": "red", "sector": "front_left"}}
        out = client.call(req)["text"]
        assert out == "A red car is in the front left of the scene."
        assert client.call(req)["text"] == out

    def test_mock_paraphraser_applies_synonyms(self):
        client = MockParaphraser()
        out = client.call({"sentence": "A car is driving down the street at night."})["text"]
        assert out == "A automobile is navigating down the boulevard at darkness."

    def test_retry_then_success(self):
        client = FlakyClient(failures=2, max_retries=2)
        assert client.call({})["text"] == "recovered"
        assert client.calls == 3

    def test_exhausted_retries_raise_client_error(self):
        client = FlakyClient(failures=10, max_retries=2)
        with pytest.raises(ClientError) as err:
            client.call({})
        assert "3 attempts" in str(err.value)
        assert "transport failure" in str(err.value)  # raw error kept for audit


class TestSampleAndFilter:
    def test_twenty_percent_of_hundred(self, small_corpus):
        _, samples = small_corpus
        frames = (samples * 13)[:100]
        kept, filtered = sample_and_filter(frames, rate=0.2, seed=0)
        assert len(kept) + len(filtered) == 20

    def test_rate_one_is_identity_before_filtering(self, small_corpus):
        _, samples = small_corpus
        kept, filtered = sample_and_filter(samples, rate=1.0, seed=0)
        assert len(kept) + len(filtered) == len(samples)

    def test_rate_ceils_fractional_counts(self, small_corpus):
        _, samples = small_corpus
        kept, filtered = sample_and_filter(samples[:7], rate=0.5, seed=0)
        assert len(kept) + len(filtered) == math.ceil(0.5 * 7)

    def test_deterministic_by_seed(self, small_corpus):
        _, samples = small_corpus
        a = sample_and_filter(samples, rate=0.5, seed=3)
        b = sample_and_filter(samples, rate=0.5, seed=3)
        assert [s.sample_id for s in a[0]] == [s.sample_id for s in b[0]]

    def test_invalid_rate_rejected(self, small_corpus):
        _, samples = small_corpus
        for rate in (0.0, 1.5, -0.1):
            with pytest.raises(ValueError):
                sample_and_filter(samples, rate=rate, seed=0)

    def test_clipped_box_discarded(self):
        rig = make_default_rig()
        cam = rig.by_name("front")
        # A tall box right in front of the camera: top corners leave the frame.
        clipped = Box3D(2.0, 0.0, 1.0, 1.0, 1.0, 4.0, 0.0)
        assert not box_fully_visible(clipped, cam)
        # The same box far away projects fully inside.
        visible = Box3D(25.0, 0.0, 0.0, 1.0, 1.0, 2.0, 0.0)
        assert box_fully_visible(visible, cam)


def _make_frame(sample_id="f0", sector="front"):
    centers = {"front": (20.0, 0.0), "back_right": (-14.0, -14.0)}
    x, y = centers[sector]
    box = Box3D(x, y, -0.5, 4.5, 1.9, 1.6, 0.2)
    return GroundingSample(
        sample_id=sample_id, scene_id=f"scene-{sample_id}", prompt="placeholder",
        lidar_ref="points/none.bin", image_refs=[f"images/{i}.png" for i in range(6)],
        referred=box, category="car", attribute="unique", viewpoint=sector,
        scene_boxes=[(box, "car")],
    )


class TestCaption:
    def test_request_carries_verbatim_instruction(self):
        recorder = RecordingClient(MockCaptioner())
        caption(_make_frame(), recorder)
        assert recorder.requests[0]["prompt"] == CAPTION_PROMPT

    def test_mock_caption_from_gt_metadata(self):
        out = caption(_make_frame(sector="back_right"), MockCaptioner())
        assert "car" in out and "back right" in out

    def test_failure_surfaces_as_client_error(self):
        with pytest.raises(ClientError):
            caption(_make_frame(), FlakyClient(failures=5, max_retries=1, kind="captioner"))


class TestParaphrase:
    def test_sector_prefix_and_substitutions(self):
        out = paraphrase_and_localize(
            "A car is driving down the street at night.", "back_right",
            MockParaphraser(), seed=0, ordinal=0,
        )
        assert out.startswith("Be aware of the back right!")
        assert "automobile" in out and "boulevard" in out and "darkness" in out

    def test_prefix_cycles_with_ordinal(self):
        outs = {paraphrase_and_localize("A car.", "front", MockParaphraser(), seed=0, ordinal=i).split("!")[0]
                for i in range(len(SECTOR_PREFIXES))}
        assert len(outs) == len(SECTOR_PREFIXES)

    def test_empty_description_rejected_before_any_call(self):
        recorder = RecordingClient(MockParaphraser())
        with pytest.raises(ValueError):
            paraphrase_and_localize("   ", "front", recorder)
        assert not recorder.requests

    def test_unknown_viewpoint_rejected(self):
        with pytest.raises(ValueError):
            paraphrase_and_localize("A car.", "sideways", MockParaphraser())

    def test_same_seed_same_output(self):
        args = ("A woman in a black dress is standing in a street.", "front_left")
        a = paraphrase_and_localize(*args, MockParaphraser(), seed=4, ordinal=2)
        b = paraphrase_and_localize(*args, MockParaphraser(), seed=4, ordinal=2)
        assert a == b

    def test_template_choice_cycles_by_seed(self):
        recorder = RecordingClient(MockParaphraser())
        for i in range(3):
            paraphrase_and_localize("A car.", "front", recorder, seed=0, ordinal=i)
        assert [r["prompt"] for r in recorder.requests] == list(PARAPHRASE_PROMPTS)


class TestPipeline:
    def test_accounting_balances_exactly(self, small_corpus, tmp_path):
        root, samples = small_corpus
        job = AnnotationJob(frames=samples, sampling_rate=1.0, seed=0)
        summary = run_pipeline(job, MockCaptioner(), MockParaphraser(), tmp_path / "out",
                               corpus_root=root)
        assert summary["emitted"] == summary["sampled"] - summary["filtered"] - summary["failed"]
        emitted = read_samples(tmp_path / "out" / "samples.jsonl")
        assert len(emitted) == summary["emitted"]
        failures = (tmp_path / "out" / "failures.jsonl").read_text().splitlines()
        assert len(failures) == summary["failed"]

    def test_byte_deterministic_by_seed(self, small_corpus, tmp_path):
        root, samples = small_corpus
        for name in ("a", "b"):
            job = AnnotationJob(frames=samples, sampling_rate=0.8, seed=9)
            run_pipeline(job, MockCaptioner(), MockParaphraser(), tmp_path / name,
                         corpus_root=root)
        for fname in ("samples.jsonl", "failures.jsonl", "review_queue.jsonl"):
            assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()

    def test_emitted_records_validate_against_schema(self, small_corpus, tmp_path):
        root, samples = small_corpus
        job = AnnotationJob(frames=samples, sampling_rate=1.0, seed=1)
        run_pipeline(job, MockCaptioner(), MockParaphraser(), tmp_path / "out", corpus_root=root)
        emitted = read_samples(tmp_path / "out" / "samples.jsonl")  # from_dict validates
        for s in emitted:
            assert s.prompt and s.prompt != "placeholder"

    def test_failures_recorded_but_pipeline_continues(self, small_corpus, tmp_path):
        root, samples = small_corpus

        class FailEveryOther(FMClient):
            def __init__(self):
                super().__init__(kind="captioner", max_retries=0)
                self.n = 0

            def _send(self, request):
                self.n += 1
                if self.n % 2 == 0:
                    raise ConnectionError("down")
                return MockCaptioner()._send(request)

        job = AnnotationJob(frames=samples, sampling_rate=1.0, seed=0)
        summary = run_pipeline(job, FailEveryOther(), MockParaphraser(), tmp_path / "out",
                               corpus_root=root)
        assert summary["failed"] > 0
        assert summary["emitted"] == summary["sampled"] - summary["filtered"] - summary["failed"]
        failures = [json.loads(l) for l in (tmp_path / "out" / "failures.jsonl").read_text().splitlines()]
        assert all("down" in f["error"] for f in failures)

    def test_review_queue_mirrors_emitted(self, small_corpus, tmp_path):
        root, samples = small_corpus
        job = AnnotationJob(frames=samples, sampling_rate=1.0, seed=0)
        run_pipeline(job, MockCaptioner(), MockParaphraser(), tmp_path / "out", corpus_root=root)
        queue = [json.loads(l) for l in (tmp_path / "out" / "review_queue.jsonl").read_text().splitlines()]
        emitted = read_samples(tmp_path / "out" / "samples.jsonl")
        assert [q["sample_id"] for q in queue] == [s.sample_id for s in emitted]
        assert all(q["status"] == "pending" for q in queue)

    def test_concurrent_run_matches_serial(self, small_corpus, tmp_path):
        root, samples = small_corpus
        job_serial = AnnotationJob(frames=samples, sampling_rate=1.0, seed=2, concurrency=1)
        job_pool = AnnotationJob(frames=samples, sampling_rate=1.0, seed=2, concurrency=4)
        run_pipeline(job_serial, MockCaptioner(), MockParaphraser(), tmp_path / "s", corpus_root=root)
        run_pipeline(job_pool, MockCaptioner(), MockParaphraser(), tmp_path / "p", corpus_root=root)
        assert (tmp_path / "s" / "samples.jsonl").read_bytes() == (tmp_path / "p" / "samples.jsonl").read_bytes()

    def test_invalid_job_parameters(self, small_corpus):
        _, samples = small_corpus
        with pytest.raises(ValueError):
            AnnotationJob(frames=samples, sampling_rate=0.0)
        with pytest.raises(ValueError):
            AnnotationJob(frames=samples, sampling_rate=0.5, paraphrase_prompts=())
