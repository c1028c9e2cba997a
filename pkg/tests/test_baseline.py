import math

import numpy as np
import pytest
import torch

from bevground.baseline import (
    MAX_PROPOSALS,
    MatchHead,
    MatcherTrainConfig,
    Proposal,
    ProposalFrame,
    match_scores,
    matcher_cross_entropy,
    read_proposals,
    reference_select,
    select_match,
    synthetic_detections,
    train_matcher,
    write_proposals,
)
from bevground.geometry import Box3D, iou_3d
from bevground.text import EncoderSpec, HashTextEncoder, TextEmbeddings, encode


def identity_head(dim):
    """MatchHead whose two MLPs are exact identities."""
    head = MatchHead(d_text=dim, d_obj=dim, hidden=dim, d_match=dim)
    with torch.no_grad():
        for mlp in (head.lang_mlp, head.obj_mlp):
            mlp[0].weight.copy_(torch.eye(dim))
            mlp[0].bias.zero_()
            mlp[2].weight.copy_(torch.eye(dim))
            mlp[2].bias.zero_()
    return head


def make_proposal(feature, score=0.5, category="car", x=5.0):
    return Proposal(Box3D(x, 0, 0, 4, 2, 1.5, 0.0), np.asarray(feature, dtype=float), score, category)


def embeddings_from_sentence(vec):
    vec = np.asarray(vec, dtype=float)
    return TextEmbeddings(word=vec.reshape(1, -1), sentence=vec, tokens=["stub"])


class TestMatchScores:
    def test_hand_built_two_by_two(self):
        # Identity MLPs, ReLU passes nonnegative inputs straight through:
        # scores are plain inner products.
        head = identity_head(2)
        emb = embeddings_from_sentence([1.0, 0.0])
        proposals = [make_proposal([1.0, 0.0]), make_proposal([0.0, 1.0], x=10.0)]
        scores = match_scores(proposals, emb, head)
        np.testing.assert_allclose(scores, [1.0, 0.0], atol=1e-6)
        assert select_match(proposals, emb, head) == 0

    def test_single_proposal_always_selected(self):
        torch.manual_seed(0)
        head = MatchHead(d_text=8, d_obj=8)
        emb = encode("any prompt at all", EncoderSpec(dim=8, seed=0))
        proposals = [make_proposal(np.random.default_rng(0).normal(size=8))]
        assert select_match(proposals, emb, head) == 0

    def test_positive_scaling_keeps_argmax(self):
        head = identity_head(3)
        base = embeddings_from_sentence([0.5, 0.25, 0.0])
        scaled = embeddings_from_sentence([1.5, 0.75, 0.0])
        proposals = [make_proposal([1.0, 0.0, 0.0]), make_proposal([0.0, 1.0, 0.0]),
                     make_proposal([0.3, 0.3, 0.0])]
        assert select_match(proposals, base, head) == select_match(proposals, scaled, head)

    def test_argmax_invariant_under_monotone_transform(self):
        torch.manual_seed(1)
        head = MatchHead(d_text=6, d_obj=6)
        emb = encode("the red truck", EncoderSpec(dim=6, seed=1))
        rng = np.random.default_rng(2)
        proposals = [make_proposal(rng.normal(size=6)) for _ in range(5)]
        scores = match_scores(proposals, emb, head)
        transformed = np.exp(2.0 * scores + 1.0)  # strictly increasing
        assert int(np.argmax(scores)) == int(np.argmax(transformed))

    def test_empty_proposals_rejected(self):
        head = identity_head(2)
        with pytest.raises(ValueError):
            match_scores([], embeddings_from_sentence([1.0, 0.0]), head)

    def test_dimension_mismatch_rejected(self):
        head = identity_head(2)
        with pytest.raises(RuntimeError):
            match_scores([make_proposal([1.0, 0.0, 0.0])], embeddings_from_sentence([1.0, 0.0]), head)


class _FakeSample:
    def __init__(self, sample_id, prompt, referred, scene_boxes=None):
        self.sample_id = sample_id
        self.scene_id = sample_id
        self.prompt = prompt
        self.referred = referred
        self.scene_boxes = scene_boxes or [(referred, "car")]


class TestTrainMatcher:
    def _separable_setup(self, n=24, dim=8, seed=0):
        """Prompts 'alpha'/'beta' label which of two feature clusters is
        positive: linearly separable by construction."""
        rng = np.random.default_rng(seed)
        enc = HashTextEncoder(dim=dim, seed=0)
        samples, frames, embeddings = [], [], {}
        for i in range(n):
            word = "alpha" if i % 2 == 0 else "beta"
            gt = Box3D(5.0, 0.0, 0.0, 4, 2, 1.5, 0.0)
            pos_feat = np.zeros(dim)
            pos_feat[0 if word == "alpha" else 1] = 1.0
            neg_feat = np.zeros(dim)
            neg_feat[1 if word == "alpha" else 0] = 1.0
            pos = Proposal(gt, pos_feat + rng.normal(0, 0.01, dim), 0.9, "car")
            neg = Proposal(Box3D(-20.0, 0, 0, 4, 2, 1.5, 0.0), neg_feat + rng.normal(0, 0.01, dim), 0.8, "car")
            sample = _FakeSample(f"f{i:03d}", word, gt)
            samples.append(sample)
            frames.append(ProposalFrame(sample.sample_id, [neg, pos]))
            embeddings[sample.sample_id] = enc.encode(word)
        return samples, frames, embeddings

    def test_reaches_perfect_selection_within_twenty_epochs(self):
        samples, frames, embeddings = self._separable_setup()
        torch.manual_seed(0)
        head = MatchHead(d_text=8, d_obj=8, hidden=32, d_match=16)
        result = train_matcher(samples, frames, embeddings, head,
                               MatcherTrainConfig(epochs=20, batch_size=4, lr=0.01, seed=0))
        assert result["skipped"] == 0
        correct = 0
        for sample, frame in zip(samples, frames):
            pick = select_match(frame.proposals, embeddings[sample.sample_id], head)
            best = int(np.argmax([iou_3d(p.box, sample.referred) for p in frame.proposals]))
            correct += int(pick == best)
        assert correct == len(samples)

    def test_default_schedule_is_twenty_epochs_batch_four(self):
        cfg = MatcherTrainConfig()
        assert cfg.epochs == 20 and cfg.batch_size == 4

    def test_text_embeddings_frozen_through_training(self):
        samples, frames, embeddings = self._separable_setup(n=8)
        before = {k: (v.word.copy(), v.sentence.copy()) for k, v in embeddings.items()}
        torch.manual_seed(0)
        head = MatchHead(d_text=8, d_obj=8, hidden=16, d_match=8)
        train_matcher(samples, frames, embeddings, head,
                      MatcherTrainConfig(epochs=2, batch_size=4, seed=0))
        for k, (word, sentence) in before.items():
            np.testing.assert_array_equal(embeddings[k].word, word)
            np.testing.assert_array_equal(embeddings[k].sentence, sentence)

    def test_skips_frames_without_qualified_proposal(self):
        samples, frames, embeddings = self._separable_setup(n=6)
        # Push one frame's proposals far from GT: max IoU < 0.25 -> skipped.
        far = [Proposal(Box3D(40, 40, 0, 4, 2, 1.5, 0), p.feature, p.score, p.category)
               for p in frames[0].proposals]
        frames[0] = ProposalFrame(frames[0].frame_id, far)
        torch.manual_seed(0)
        head = MatchHead(d_text=8, d_obj=8, hidden=16, d_match=8)
        result = train_matcher(samples, frames, embeddings, head,
                               MatcherTrainConfig(epochs=1, seed=0))
        assert result["skipped"] == 1
        assert result["used"] == 5

    def test_empty_usable_set_rejected(self):
        samples, frames, embeddings = self._separable_setup(n=2)
        empty = [ProposalFrame(f.frame_id, []) for f in frames]
        head = MatchHead(d_text=8, d_obj=8)
        with pytest.raises(ValueError):
            train_matcher(samples, empty, embeddings, head, MatcherTrainConfig(epochs=1))

    @pytest.mark.parametrize("seed", range(5))
    def test_cross_entropy_gradient_matches_finite_differences(self, seed):
        torch.manual_seed(seed)
        head = MatchHead(d_text=6, d_obj=6, hidden=12, d_match=8).double()
        rng = np.random.default_rng(seed)
        sentence = torch.tensor(rng.normal(size=6))
        feats = torch.tensor(rng.normal(size=(4, 6)))

        def loss_fn():
            return matcher_cross_entropy(head, sentence, feats, positive=2)

        loss = loss_fn()
        loss.backward()
        h = 1e-3
        checked = 0
        for p in head.parameters():
            flat, grad = p.detach().reshape(-1), p.grad.reshape(-1)
            for idx in rng.choice(flat.shape[0], size=min(4, flat.shape[0]), replace=False):
                idx = int(idx)
                with torch.no_grad():
                    orig = float(flat[idx])
                    flat[idx] = orig + h
                    lp = float(loss_fn())
                    flat[idx] = orig - h
                    lm = float(loss_fn())
                    flat[idx] = orig
                fd = (lp - lm) / (2 * h)
                an = float(grad[idx])
                if abs(fd) < 1e-8 and abs(an) < 1e-8:
                    continue
                rel = abs(fd - an) / max(abs(fd) + abs(an), 1e-8)
                assert rel <= 1e-4
                checked += 1
        assert checked > 0


class TestSyntheticDetector:
    def _sample(self):
        boxes = [(Box3D(10, 5, 0, 4.5, 1.9, 1.6, 0.2), "car"),
                 (Box3D(-8, 12, 0, 0.7, 0.7, 1.7, 0.0), "pedestrian"),
                 (Box3D(20, -15, 0, 7.0, 2.5, 2.8, 1.0), "truck")]
        return _FakeSample("s0", "the car", boxes[0][0], boxes)

    def test_deterministic_by_seed(self):
        a = synthetic_detections(self._sample(), seed=3)
        b = synthetic_detections(self._sample(), seed=3)
        assert len(a.proposals) == len(b.proposals)
        for p, q in zip(a.proposals, b.proposals):
            assert p.box.to_list() == q.box.to_list()
            np.testing.assert_array_equal(p.feature, q.feature)

    def test_respects_proposal_cap(self):
        frame = ProposalFrame("f", [make_proposal(np.zeros(4), score=i / 300.0, x=i % 50)
                                    for i in range(250)])
        capped = frame.capped()
        assert len(capped.proposals) == MAX_PROPOSALS
        assert min(p.score for p in capped.proposals) >= 50 / 300.0

    def test_jittered_boxes_stay_near_gt(self):
        frame = synthetic_detections(self._sample(), seed=0, n_distractors=(0, 0))
        sample = self._sample()
        for p in frame.proposals:
            best = max(iou_3d(p.box, b) for b, _ in sample.scene_boxes)
            assert best > 0.2

    def test_proposal_file_roundtrip(self, tmp_path):
        frames = [synthetic_detections(self._sample(), seed=1)]
        path = tmp_path / "proposals.jsonl"
        write_proposals(path, frames)
        back = read_proposals(path)
        assert back[0].frame_id == frames[0].frame_id
        assert len(back[0].proposals) == len(frames[0].proposals)
        np.testing.assert_allclose(back[0].proposals[0].feature, frames[0].proposals[0].feature)


class TestReferenceSelect:
    def _frame(self):
        return [make_proposal([0.0], score=0.2, x=5),
                make_proposal([0.0], score=0.9, x=10),
                make_proposal([0.0], score=0.9, x=15)]

    def test_pred_best_takes_highest_score(self):
        single = [make_proposal([0.0], score=0.9)]
        assert reference_select("pred-best", proposals=single).x == single[0].box.x

    def test_pred_best_tie_breaks_lowest_index(self):
        box = reference_select("pred-best", proposals=self._frame())
        assert box.x == 10

    def test_gt_rand_single_box(self):
        sample = _FakeSample("s", "p", Box3D(3, 3, 0, 4, 2, 1.5))
        for _ in range(5):
            box = reference_select("gt-rand", sample=sample, rng=np.random.default_rng(0))
            assert box.x == 3

    def test_pred_rand_reproducible_sequence(self):
        frame = self._frame()
        seq1 = [reference_select("pred-rand", proposals=frame, rng=np.random.default_rng(42)).x
                for _ in range(1)]
        rng_a = np.random.default_rng(7)
        rng_b = np.random.default_rng(7)
        seq_a = [reference_select("pred-rand", proposals=frame, rng=rng_a).x for _ in range(10)]
        seq_b = [reference_select("pred-rand", proposals=frame, rng=rng_b).x for _ in range(10)]
        assert seq_a == seq_b

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError):
            reference_select("pred-best", proposals=[])
        with pytest.raises(ValueError):
            reference_select("unknown-mode", proposals=self._frame())
