import numpy as np
import pytest

from bevground.text import (
    EncoderSpec,
    HashTextEncoder,
    TableLookupEncoder,
    build_encoder,
    encode,
    register_encoder,
    tokenize,
)


class TestTokenize:
    def test_strips_punctuation_and_lowercases(self):
        assert tokenize("Park next to the truck.") == ["park", "next", "to", "the", "truck"]

    def test_nine_token_sentence(self):
        assert len(tokenize("A car is driving down the street at night.")) == 9

    def test_idempotent_on_joined_output(self):
        tokens = tokenize("Look out! The RED car, ahead.")
        assert tokenize(" ".join(tokens)) == tokens

    @pytest.mark.parametrize("bad", ["", "   ", "\t\n"])
    def test_rejects_empty_prompts(self, bad):
        with pytest.raises(ValueError):
            tokenize(bad)


class TestHashEncoder:
    def test_deterministic_for_same_seed(self):
        spec = EncoderSpec(name="hash-test", dim=16, seed=3)
        a = encode("the red car ahead", spec)
        b = encode("the red car ahead", spec)
        np.testing.assert_array_equal(a.word, b.word)
        np.testing.assert_array_equal(a.sentence, b.sentence)

    def test_different_seeds_differ(self):
        a = encode("the red car", EncoderSpec(dim=16, seed=0))
        b = encode("the red car", EncoderSpec(dim=16, seed=1))
        assert not np.allclose(a.word, b.word)

    def test_sentence_is_unit_norm(self):
        emb = encode("a pedestrian crossing the street", EncoderSpec(dim=32, seed=0))
        assert np.linalg.norm(emb.sentence) == pytest.approx(1.0, abs=1e-6)

    def test_word_rows_follow_tokens(self):
        enc = HashTextEncoder(dim=16, seed=0)
        a = enc.encode("red car near bus")
        b = enc.encode("bus near car red")
        # Same multiset of tokens: rows permute exactly with token order.
        for i, tok in enumerate(b.tokens):
            j = a.tokens.index(tok)
            np.testing.assert_array_equal(b.word[i], a.word[j])

    def test_shape_contract(self):
        emb = encode("one two three", EncoderSpec(dim=24, seed=0))
        assert emb.word.shape == (3, 24)
        assert emb.sentence.shape == (24,)
        assert emb.dim == 24


class TestTableLookupEncoder:
    @pytest.fixture
    def vocab_file(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = {}
        path = tmp_path / "vocab50.txt"
        with open(path, "w") as fh:
            for token in ("car", "red", "truck"):
                vec = rng.uniform(-1, 1, 50)
                rows[token] = vec
                fh.write(token + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")
        return path, rows

    def test_known_tokens_lookup(self, vocab_file):
        path, rows = vocab_file
        enc = TableLookupEncoder(50, path)
        emb = enc.encode("red car")
        np.testing.assert_allclose(emb.word[0], np.round(rows["red"], 6), atol=1e-6)
        np.testing.assert_allclose(emb.word[1], np.round(rows["car"], 6), atol=1e-6)

    def test_oov_zero_row_excluded_from_sentence_mean(self, vocab_file):
        path, rows = vocab_file
        enc = TableLookupEncoder(50, path)
        emb = enc.encode("the red car")
        np.testing.assert_array_equal(emb.word[0], np.zeros(50))
        mean = (emb.word[1] + emb.word[2]) / 2.0
        expected = mean / np.linalg.norm(mean)
        np.testing.assert_allclose(emb.sentence, expected, atol=1e-9)

    def test_supported_widths_mirror_ablation(self, vocab_file):
        path, _ = vocab_file
        for dim in (50, 100, 200):
            spec = EncoderSpec(name="table-lookup", dim=dim, vocab_path=str(path))
            if dim == 50:
                assert build_encoder(spec) is not None
            else:
                with pytest.raises(ValueError):  # row width mismatch vs file
                    build_encoder(spec)
        with pytest.raises(ValueError):
            build_encoder(EncoderSpec(name="table-lookup", dim=64, vocab_path=str(path)))

    def test_missing_vocab_file(self):
        with pytest.raises(FileNotFoundError):
            build_encoder(EncoderSpec(name="table-lookup", dim=50, vocab_path="/nonexistent.txt"))


class TestEncoderRegistry:
    def test_unknown_encoder_rejected(self):
        with pytest.raises(ValueError):
            build_encoder(EncoderSpec(name="clip-vit", dim=512))

    def test_external_adapter_roundtrip(self):
        class Fixed:
            def encode(self, prompt):
                from bevground.text import TextEmbeddings, tokenize as tok

                tokens = tok(prompt)
                word = np.ones((len(tokens), 4))
                return TextEmbeddings(word=word, sentence=np.array([1.0, 0, 0, 0]), tokens=tokens)

        register_encoder("fixed-test", lambda spec: Fixed())
        emb = encode("hello world", EncoderSpec(name="fixed-test", dim=4))
        # Adapters may supply their own pooled vector.
        np.testing.assert_array_equal(emb.sentence, [1.0, 0, 0, 0])
