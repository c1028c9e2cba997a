"""Aggregate corpus statistics: attribute split, class histogram, referred
object range by attribute, prompt length and vocabulary."""

from __future__ import annotations

import math
from collections import Counter

from bevground.text import tokenize


def corpus_stats(samples) -> dict:
    """Deterministic aggregate report over a nonempty corpus."""
    if not samples:
        raise ValueError("corpus_stats requires a nonempty corpus")

    by_attr = Counter(s.attribute for s in samples)
    by_class = Counter(s.category for s in samples)
    scenes = Counter(s.scene_id for s in samples)

    dist_by_attr: dict[str, list[float]] = {"unique": [], "multiple": []}
    for s in samples:
        dist_by_attr[s.attribute].append(math.hypot(s.referred.x, s.referred.y))

    vocab = Counter()
    total_tokens = 0
    for s in samples:
        toks = tokenize(s.prompt)
        vocab.update(toks)
        total_tokens += len(toks)

    def mean(values):
        return sum(values) / len(values) if values else None

    return {
        "n_samples": len(samples),
        "n_scenes": len(scenes),
        "prompts_per_scene_mean": len(samples) / len(scenes),
        "attribute_counts": {k: by_attr.get(k, 0) for k in ("unique", "multiple")},
        "class_histogram": dict(sorted(by_class.items())),
        "mean_referred_distance": {
            "unique": mean(dist_by_attr["unique"]),
            "multiple": mean(dist_by_attr["multiple"]),
            "overall": mean(dist_by_attr["unique"] + dist_by_attr["multiple"]),
        },
        "prompt_tokens_mean": total_tokens / len(samples),
        "vocabulary_size": len(vocab),
        "vocabulary_top": dict(sorted(vocab.items(), key=lambda kv: (-kv[1], kv[0]))[:20]),
    }
