"""Text tokenization and pluggable prompt encoders.

Every encoder produces word-level rows plus one pooled sentence vector
behind the same contract. Built-ins are frozen and deterministic: a seeded
hashing encoder for tests and training without pretrained weights, and a
table-lookup encoder for vocabulary files (``token v1 ... vd`` per line).
External pretrained encoders register through ``register_encoder`` and may
supply their own pooled vector.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_PUNCT_TABLE = str.maketrans({ch: " " for ch in string.punctuation})


def tokenize(prompt: str) -> list[str]:
    """Lowercased, punctuation-stripped whitespace tokenization."""
    if not prompt or not prompt.strip():
        raise ValueError("prompt is empty")
    tokens = prompt.lower().translate(_PUNCT_TABLE).split()
    if not tokens:
        raise ValueError(f"prompt has no tokens after stripping punctuation: {prompt!r}")
    return tokens


@dataclass
class TextEmbeddings:
    """Word-level matrix (L x d), pooled sentence vector (d,), and tokens."""

    word: np.ndarray
    sentence: np.ndarray
    tokens: list[str]

    def __post_init__(self):
        self.word = np.asarray(self.word, dtype=np.float64)
        self.sentence = np.asarray(self.sentence, dtype=np.float64)
        if self.word.ndim != 2 or self.word.shape[0] != len(self.tokens):
            raise ValueError(f"word matrix shape {self.word.shape} does not match {len(self.tokens)} tokens")
        if self.sentence.shape != (self.word.shape[1],):
            raise ValueError("sentence vector width must equal the word embedding width")
        if not (np.all(np.isfinite(self.word)) and np.all(np.isfinite(self.sentence))):
            raise ValueError("embeddings contain non-finite values")

    @property
    def dim(self) -> int:
        return self.word.shape[1]


@dataclass(frozen=True)
class EncoderSpec:
    """Which encoder to use and how: name, width, seed, optional vocab file.

    ``trainable`` is honored only by external adapters; built-ins are frozen.
    """

    name: str = "hash-test"
    dim: int = 32
    seed: int = 0
    vocab_path: str | None = None
    trainable: bool = False


def _pooled(word: np.ndarray, rows_mask=None) -> np.ndarray:
    """L2-normalized mean over (optionally masked) word rows."""
    if rows_mask is not None and rows_mask.any():
        mean = word[rows_mask].mean(axis=0)
    else:
        mean = word.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    return mean / norm if norm > 1e-12 else mean


class HashTextEncoder:
    """Seeded hashing embeddings: stable across processes and platforms."""

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def _vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(
                token.encode("utf-8"), digest_size=16, key=str(self.seed).encode("utf-8")
            ).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(self.dim) / np.sqrt(self.dim)
            self._cache[token] = vec
        return vec

    def encode(self, prompt: str) -> TextEmbeddings:
        tokens = tokenize(prompt)
        word = np.stack([self._vector(t) for t in tokens])
        return TextEmbeddings(word=word, sentence=_pooled(word), tokens=tokens)


class TableLookupEncoder:
    """Static-vector lookup (GloVe-style files). OOV tokens get zero rows and
    are excluded from the sentence mean."""

    def __init__(self, dim: int, vocab_path):
        self.dim = dim
        self.table: dict[str, np.ndarray] = {}
        path = Path(vocab_path)
        if not path.exists():
            raise FileNotFoundError(f"vocabulary file not found: {vocab_path}")
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != dim + 1:
                    raise ValueError(
                        f"vocabulary row for {parts[0]!r} has {len(parts) - 1} values, expected {dim}"
                    )
                self.table[parts[0]] = np.array([float(v) for v in parts[1:]], dtype=np.float64)

    def encode(self, prompt: str) -> TextEmbeddings:
        tokens = tokenize(prompt)
        word = np.zeros((len(tokens), self.dim), dtype=np.float64)
        known = np.zeros(len(tokens), dtype=bool)
        for i, tok in enumerate(tokens):
            vec = self.table.get(tok)
            if vec is not None:
                word[i] = vec
                known[i] = True
        return TextEmbeddings(word=word, sentence=_pooled(word, known), tokens=tokens)


_REGISTRY: dict[str, callable] = {}


def register_encoder(name: str, factory) -> None:
    """Register an external adapter: ``factory(spec) -> object with .encode(prompt)``."""
    _REGISTRY[name] = factory


def build_encoder(spec: EncoderSpec):
    if spec.name == "hash-test":
        return HashTextEncoder(spec.dim, spec.seed)
    if spec.name == "table-lookup":
        if spec.dim not in (50, 100, 200):
            raise ValueError(f"table-lookup supports d in (50, 100, 200), got {spec.dim}")
        if spec.vocab_path is None:
            raise ValueError("table-lookup encoder needs a vocab_path")
        return TableLookupEncoder(spec.dim, spec.vocab_path)
    if spec.name in _REGISTRY:
        return _REGISTRY[spec.name](spec)
    raise ValueError(f"unknown text encoder {spec.name!r}")


def encode(prompt: str, spec: EncoderSpec) -> TextEmbeddings:
    """Encode a prompt under the given encoder spec (pure given spec + seed)."""
    return build_encoder(spec).encode(prompt)
