import json
import os
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_array_equal

from module.errors import ConfigError, DataError, SchemaError
from module.textprep import (
    OOV_INDEX,
    PAD_INDEX,
    PreprocessConfig,
    TextPreprocessor,
    Vocabulary,
    build_vocab,
    clean_text,
    encode,
    extract_hashtags,
    load_stopwords,
    pad,
    remove_stopwords,
    stem,
    tokenize,
)

# 经典 Porter 算法（原始定义）的参考输出
PORTER_CASES = {
    "caresses": "caress", "ponies": "poni", "ties": "ti", "caress": "caress", "cats": "cat",
    "feed": "feed", "agreed": "agre", "plastered": "plaster", "bled": "bled", "motoring": "motor",
    "sing": "sing", "conflated": "conflat", "troubled": "troubl", "sized": "size", "hopping": "hop",
    "tanned": "tan", "falling": "fall", "hissing": "hiss", "fizzed": "fizz", "failing": "fail",
    "filing": "file", "happy": "happi", "sky": "sky",
    "relational": "relat", "conditional": "condit", "rational": "ration", "digitizer": "digit",
    "operator": "oper", "feudalism": "feudal", "decisiveness": "decis", "hopefulness": "hope",
    "callousness": "callous", "goodness": "good", "triplicate": "triplic", "formative": "form",
    "formalize": "formal", "electrical": "electr", "hopeful": "hope",
    "revival": "reviv", "allowance": "allow", "inference": "infer", "airliner": "airlin",
    "gyroscopic": "gyroscop", "adjustable": "adjust", "defensible": "defens", "irritant": "irrit",
    "replacement": "replac", "adjustment": "adjust", "dependent": "depend", "adoption": "adopt",
    "communism": "commun", "activate": "activ", "effective": "effect", "bowdlerize": "bowdler",
    "homologous": "homolog",
    "probate": "probat", "rate": "rate", "cease": "ceas", "controlling": "control", "roll": "roll",
    "looking": "look", "running": "run", "spreading": "spread", "connected": "connect",
    "connecting": "connect", "connection": "connect", "hospitals": "hospit", "masks": "mask",
    "news": "new", "vaccines": "vaccin", "pandemic": "pandem", "lockdown": "lockdown",
    "outbreak": "outbreak", "coronavirus": "coronaviru", "virus": "viru",
    "generalizations": "gener", "oscillators": "oscil",
}


class CleanTokenizeTest(unittest.TestCase):
    def test_clean_text(self):
        self.assertEqual(clean_text("Check https://t.co/abc NOW!!! #Covid19 t.co/xyz"), "check now covid")
        self.assertEqual(clean_text("  Über-COOL\tnews\n"), "ber cool news")
        self.assertEqual(clean_text("http://a.b/c?d=1"), "")
        self.assertEqual(clean_text("12345 !!!"), "")

    def test_clean_text_output_alphabet(self):
        cleaned = clean_text("Don't PANIC: 5G & vaccines (2020) — read www.site.org!")
        self.assertRegex(cleaned, r"^[a-z]+( [a-z]+)*$")
        self.assertNotIn("  ", cleaned)

    def test_tokenize(self):
        self.assertEqual(tokenize("check now covid"), ["check", "now", "covid"])
        self.assertEqual(tokenize(""), [])

    def test_hashtags(self):
        self.assertEqual(extract_hashtags("Stay #Home and #COVID19 safe"), ["home", "covid19"])


class StopwordsTest(unittest.TestCase):
    def test_shipped_list(self):
        words = load_stopwords()
        self.assertEqual(len(words), 179)
        for word in ("the", "not", "no", "and"):
            self.assertIn(word, words)
        self.assertNotIn("covid", words)

    def test_remove_keeps_order(self):
        self.assertEqual(remove_stopwords(["the", "virus", "is", "not", "real"], {"the", "is", "not"}), ["virus", "real"])
        self.assertEqual(remove_stopwords(["a", "b"], ["a"]), ["b"])

    def test_custom_file_and_checksum(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "stop.txt")
            with open(path, "w", encoding="utf-8") as f:
                f.write("Foo\n\nbar\n")
            self.assertEqual(load_stopwords(path), frozenset({"foo", "bar"}))
            with self.assertRaises(DataError):
                load_stopwords(path, expected_sha256="0" * 64)
        with self.assertRaises(ConfigError):
            load_stopwords("/nonexistent/stopwords.txt")


class StemTest(unittest.TestCase):
    def test_reference_words(self):
        for word, expected in PORTER_CASES.items():
            with self.subTest(word=word):
                self.assertEqual(stem(word), expected)

    def test_idempotent_on_common_stems(self):
        for word in ("connect", "mask", "run", "look"):
            self.assertEqual(stem(stem(word)), stem(word))


class VocabularyTest(unittest.TestCase):
    def test_rank_by_frequency_then_token(self):
        corpus = [["b", "a", "c"], ["a", "b", "d"], ["a", "c", "e"]]
        vocab = build_vocab(corpus, PreprocessConfig(min_token_frequency=1))
        self.assertEqual(vocab.token_to_index, {"a": 2, "b": 3, "c": 4, "d": 5, "e": 6})
        self.assertEqual(len(vocab), 7)

    def test_min_frequency_and_max_size(self):
        corpus = [["b", "a", "c"], ["a", "b", "d"], ["a", "c", "e"]]
        vocab = build_vocab(corpus, PreprocessConfig(min_token_frequency=2))
        self.assertEqual(vocab.token_to_index, {"a": 2, "b": 3, "c": 4})
        vocab = build_vocab(corpus, PreprocessConfig(min_token_frequency=1, max_vocab_size=2))
        self.assertEqual(vocab.token_to_index, {"a": 2, "b": 3})

    def test_empty_corpus(self):
        with self.assertRaises(DataError):
            build_vocab([], PreprocessConfig())

    def test_indices_must_be_contiguous(self):
        with self.assertRaises(SchemaError):
            Vocabulary({"a": 2, "b": 4})

    def test_encode_maps_unknown_to_oov(self):
        vocab = Vocabulary({"virus": 2, "mask": 3})
        self.assertEqual(encode(["mask", "bleach", "virus"], vocab), [3, OOV_INDEX, 2])
        self.assertEqual(vocab.lookup("unknown"), 1)

    def test_save_load_and_tamper(self):
        vocab = Vocabulary({"virus": 2, "mask": 3})
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "vocab.json")
            vocab.save(path)
            self.assertEqual(Vocabulary.load(path), vocab)

            with open(path, "r", encoding="utf-8") as f:
                payload = json.load(f)
            self.assertEqual(payload["reserved"], {"pad": 0, "oov": 1})
            self.assertEqual(payload["checksum"], vocab.checksum())
            payload["tokens"]["virus"], payload["tokens"]["mask"] = 3, 2
            with open(path, "w", encoding="utf-8") as f:
                json.dump(payload, f)
            with self.assertRaises(SchemaError):
                Vocabulary.load(path)

            with open(path, "w", encoding="utf-8") as f:
                f.write("{not json")
            with self.assertRaises(SchemaError):
                Vocabulary.load(path)
        with self.assertRaises(ConfigError):
            Vocabulary.load(os.path.join(tmp, "missing.json"))


class PadTest(unittest.TestCase):
    def test_pre_and_post(self):
        self.assertEqual(pad([5, 6], 4, "pre"), [0, 0, 5, 6])
        self.assertEqual(pad([5, 6], 4, "post"), [5, 6, 0, 0])
        self.assertEqual(pad([1, 2, 3, 4, 5], 3, "pre"), [3, 4, 5])
        self.assertEqual(pad([1, 2, 3, 4, 5], 3, "post"), [1, 2, 3])
        self.assertEqual(pad([], 2), [PAD_INDEX, PAD_INDEX])
        self.assertEqual(pad([7, 8], 2), [7, 8])

    def test_invalid(self):
        with self.assertRaises(ValueError):
            pad([1], 0)
        with self.assertRaises(ValueError):
            pad([1], 2, "middle")


class TextPreprocessorTest(unittest.TestCase):
    def setUp(self):
        self.texts = [
            "The coronavirus is spreading in hospitals https://t.co/x",
            "Masks and vaccines stop the virus spreading",
            "Hospitals report new coronavirus cases",
            "Drinking bleach cures the virus",
        ]

    def test_tokens_remove_stopwords_before_stemming(self):
        preprocessor = TextPreprocessor(PreprocessConfig(min_token_frequency=1))
        self.assertEqual(preprocessor.tokens(self.texts[0]), ["coronaviru", "spread", "hospit"])
        unstemmed = TextPreprocessor(PreprocessConfig(stem=False))
        self.assertEqual(unstemmed.tokens(self.texts[1]), ["masks", "vaccines", "stop", "virus", "spreading"])

    def test_transform_shape_and_dtype(self):
        config = PreprocessConfig(max_sequence_length=6, min_token_frequency=2)
        preprocessor = TextPreprocessor(config)
        matrix = preprocessor.fit_transform(self.texts)
        self.assertEqual(matrix.shape, (4, 6))
        self.assertEqual(matrix.dtype, np.int64)
        self.assertEqual(set(preprocessor.vocab.token_to_index), {"coronaviru", "spread", "hospit", "viru"})
        # pre 填充：前面补 0，未入词表的 token 记为 1
        row = matrix[3]
        assert_array_equal(row[:2], [0, 0])
        self.assertEqual(list(row[2:]), [OOV_INDEX, OOV_INDEX, OOV_INDEX, preprocessor.vocab.lookup("viru")])

    def test_transform_before_fit(self):
        with self.assertRaises(DataError):
            TextPreprocessor(PreprocessConfig()).transform(["text"])

    def test_same_vocab_same_encoding(self):
        first = TextPreprocessor(PreprocessConfig(min_token_frequency=1))
        first.fit(self.texts)
        second = TextPreprocessor(PreprocessConfig(min_token_frequency=1), vocab=first.vocab)
        assert_array_equal(first.transform(self.texts), second.transform(self.texts))

    def test_invalid_config(self):
        with self.assertRaises(ConfigError):
            PreprocessConfig(pad_mode="middle")
        with self.assertRaises(ConfigError):
            PreprocessConfig(max_sequence_length=0)


if __name__ == "__main__":
    unittest.main()
