import contextlib
import io
import json
import os
import shutil
import tempfile
import unittest
from unittest import mock

from tweetcheck_cli import main
from module.config import OUTPUT_DIR_ENV, load_config
from module.errors import ConfigError
from module.textprep import Vocabulary
from pipeline_manager import PipelineManager
from tests.fixture_site import FixtureSite
from tests.synthetic import write_corpus_files

TOY_CONFIG = """
seed = 3

[paths]
tweets = {tweets}
trust_list = {trust_list}

[corpus]
cv_folds = 2

[preprocess]
max_sequence_length = 16
min_token_frequency = 1

[model]
embed_dim = 8
rnn_hidden = 8
conv_filters = 8
conv_kernel = 3
branch_dense_units = 4
dropout_rate = 0.2

[train]
epochs = 2
learning_rate = 0.01

[crawl]
request_delay = 0
workers = 2
"""


def run_cli(argv, output_dir, stdin=None):
    """运行 main()，返回 (退出码, stdout, stderr)"""
    stdout, stderr = io.StringIO(), io.StringIO()
    with contextlib.ExitStack() as stack:
        stack.enter_context(mock.patch.dict(os.environ, {OUTPUT_DIR_ENV: output_dir}))
        if stdin is not None:
            stack.enter_context(mock.patch("sys.stdin", io.StringIO(stdin)))
        stack.enter_context(contextlib.redirect_stdout(stdout))
        stack.enter_context(contextlib.redirect_stderr(stderr))
        code = main(argv)
    return code, stdout.getvalue(), stderr.getvalue()


class PipelineCliTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        root = cls.tmp.name
        data = os.path.join(root, "data")
        write_corpus_files(data, n=200, seed=0)
        cls.config_path = os.path.join(root, "config.toml")
        with open(cls.config_path, "w", encoding="utf-8") as f:
            f.write(TOY_CONFIG.format(
                tweets=json.dumps(os.path.join(data, "tweets.jsonl")),
                trust_list=json.dumps(os.path.join(data, "trust_list.csv")),
            ))
        cls.out = os.path.join(root, "out")
        cls.label_result = cls.cli(["label"])
        cls.train_result = cls.cli(["train", "--model", "bilstm"])
        cls.model_dir = os.path.join(cls.out, "models", "bilstm")

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    @classmethod
    def cli(cls, argv, output_dir=None, stdin=None):
        return run_cli(argv + ["--config", cls.config_path], output_dir or cls.out, stdin)

    def test_label(self):
        code, stdout, _ = self.label_result
        self.assertEqual(code, 0)
        self.assertIn("fake 100 条，real 100 条", stdout)
        with open(os.path.join(self.out, "corpus", "label_summary.json"), encoding="utf-8") as f:
            summary = json.load(f)
        self.assertEqual(summary["schema_version"], 1)
        self.assertEqual(summary["tweets_loaded"], 200)
        self.assertEqual(summary["after_keyword_filter"], 200)
        self.assertEqual(summary["stats"]["domains"], {"fake.example": 100, "real.example": 100})
        with open(os.path.join(self.out, "corpus", "labeled.jsonl"), encoding="utf-8") as f:
            self.assertEqual(len(f.read().splitlines()), 200)

    def test_train_artifacts(self):
        code, stdout, _ = self.train_result
        self.assertEqual(code, 0)
        self.assertIn("训练集 140 条，测试集 60 条", stdout)
        for name in ("checkpoint.npz", "model.json", "vocab.json", "epoch_log.csv", "test_split.jsonl"):
            self.assertTrue(os.path.exists(os.path.join(self.model_dir, name)), name)
        with open(os.path.join(self.model_dir, "epoch_log.csv"), encoding="utf-8") as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], "epoch,loss,train_acc,val_acc,val_loss")
        self.assertEqual(len(lines), 3)

    def test_training_is_byte_reproducible(self):
        other = os.path.join(self.tmp.name, "rerun")
        corpus = os.path.join(self.out, "corpus", "labeled.jsonl")
        code, _, _ = self.cli(["train", "--model", "bilstm", "--set", f"paths.corpus={corpus}"], output_dir=other)
        self.assertEqual(code, 0)
        for name in ("checkpoint.npz", "epoch_log.csv", "vocab.json", "model.json"):
            with open(os.path.join(self.model_dir, name), "rb") as a, \
                    open(os.path.join(other, "models", "bilstm", name), "rb") as b:
                self.assertEqual(a.read(), b.read(), name)

    def test_evaluate(self):
        code, stdout, _ = self.cli(["evaluate", "--model", "bilstm"])
        self.assertEqual(code, 0)
        self.assertIn("accuracy=", stdout)
        with open(os.path.join(self.model_dir, "metrics.json"), encoding="utf-8") as f:
            metrics = json.load(f)
        self.assertEqual(metrics["primary"], "positive_real")
        self.assertEqual(metrics["test_size"], 60)
        self.assertEqual(set(metrics["metrics"]), {"positive_real", "positive_fake"})
        confusion = metrics["metrics"]["positive_real"]["confusion"]
        self.assertEqual(sum(confusion.values()), 60)
        self.assertTrue(os.path.exists(os.path.join(self.model_dir, "confusion.csv")))

        code, _, _ = self.cli(["evaluate", "--model", "bilstm", "--positive-class", "fake"])
        self.assertEqual(code, 0)
        with open(os.path.join(self.model_dir, "metrics.json"), encoding="utf-8") as f:
            self.assertEqual(json.load(f)["primary"], "positive_fake")

    def test_predict(self):
        code, stdout, _ = self.cli(["predict", "--model", "bilstm", "--text", "first text", "--text", "second text"])
        self.assertEqual(code, 0)
        lines = stdout.splitlines()
        self.assertEqual(len(lines), 2)
        for line in lines:
            probability, label = line.split("\t")
            self.assertRegex(probability, r"^0\.\d{6}$|^1\.000000$")
            self.assertEqual(label, "fake" if float(probability) >= 0.5 else "real")

        path = os.path.join(self.tmp.name, "texts.txt")
        with open(path, "w", encoding="utf-8") as f:
            f.write("one\n\n   \ntwo\nthree\n")
        code, stdout, _ = self.cli(["predict", "--model", "bilstm", "--input", path])
        self.assertEqual((code, len(stdout.splitlines())), (0, 3))

        code, stdout, _ = self.cli(["predict", "--model", "bilstm", "--input", "-"], stdin="from stdin\n")
        self.assertEqual((code, len(stdout.splitlines())), (0, 1))

        code, stdout, _ = self.cli(["predict", "--model", "bilstm"])
        self.assertEqual((code, stdout), (0, ""))

        code, _, _ = self.cli(["predict", "--model", "bilstm", "--input", os.path.join(self.tmp.name, "none.txt")])
        self.assertEqual(code, 2)

    def test_cross_validation(self):
        code, stdout, _ = self.cli(["cv", "--model", "bilstm", "-k", "2", "--workers", "2"])
        self.assertEqual(code, 0)
        self.assertIn("2 折交叉验证", stdout)
        with open(os.path.join(self.out, "cv", "bilstm", "cv_report.json"), encoding="utf-8") as f:
            report = json.load(f)
        self.assertEqual(report["k"], 2)
        self.assertEqual(len(report["folds"]), 2)
        self.assertEqual(sum(fold["test_size"] for fold in report["folds"]), 200)

    def test_cross_validation_is_byte_reproducible(self):
        corpus = os.path.join(self.out, "corpus", "labeled.jsonl")
        reports = []
        for name in ("cv_a", "cv_b"):
            out = os.path.join(self.tmp.name, name)
            code, _, _ = self.cli(["cv", "--model", "bilstm", "-k", "2", "--set", f"paths.corpus={corpus}"], output_dir=out)
            self.assertEqual(code, 0)
            with open(os.path.join(out, "cv", "bilstm", "cv_report.json"), "rb") as f:
                reports.append(f.read())
        self.assertEqual(reports[0], reports[1])
        folds = json.loads(reports[0])["folds"]
        self.assertEqual(len(folds), 2)
        self.assertIn("confusion", folds[0]["metrics"])

    def test_evaluate_empty_test_split_exit_code(self):
        emptied = os.path.join(self.tmp.name, "emptied")
        shutil.copytree(self.model_dir, emptied)
        open(os.path.join(emptied, "test_split.jsonl"), "w", encoding="utf-8").close()
        code, _, stderr = self.cli(["evaluate", "--model", "bilstm", "--checkpoint", emptied])
        self.assertEqual(code, 3)
        self.assertIn("测试集为空", stderr)
        self.assertFalse(os.path.exists(os.path.join(emptied, "metrics.json")))

    def test_inputs_checked_before_any_work(self):
        partial = os.path.join(self.tmp.name, "partial")
        shutil.copytree(self.model_dir, partial)
        os.remove(os.path.join(partial, "test_split.jsonl"))
        with mock.patch("pipeline_manager.load_model") as load:
            code, _, stderr = self.cli(["evaluate", "--model", "bilstm", "--checkpoint", partial])
        self.assertEqual(code, 2)
        self.assertIn("test_split.jsonl", stderr)
        load.assert_not_called()

        manager = PipelineManager(load_config(self.config_path, ["paths.trust_list=/nonexistent/trust.csv"], environ={}))
        with self.assertRaises(ConfigError):
            manager.validate_inputs("label")
        self.assertEqual([what for _, what in manager.input_paths("evaluate", "bilstm")],
                         ["检查点", "模型侧车文件", "词表", "测试集"])
        with mock.patch.object(PipelineManager, "label") as label:
            code, _, _ = self.cli(["label", "--set", "paths.trust_list=/nonexistent/trust.csv"])
        self.assertEqual(code, 2)
        label.assert_not_called()

    def test_print_config(self):
        code, stdout, _ = self.cli(["train", "--print-config", "--seed", "9", "--set", "train.epochs=7"])
        self.assertEqual(code, 0)
        payload = json.loads(stdout)
        self.assertEqual(payload["seed"], 9)
        self.assertEqual(payload["sub_seeds"]["split"], 10)
        self.assertEqual(payload["train"]["epochs"], 7)
        self.assertEqual(payload["paths"]["output_dir"], self.out)

    def test_vocabulary_mismatch_exit_code(self):
        tampered = os.path.join(self.tmp.name, "tampered")
        shutil.copytree(self.model_dir, tampered)
        Vocabulary({"unrelated": 2}).save(os.path.join(tampered, "vocab.json"))
        code, _, stderr = self.cli(["evaluate", "--model", "bilstm", "--checkpoint", tampered])
        self.assertEqual(code, 3)
        self.assertIn("错误", stderr)

    def test_missing_inputs_exit_code(self):
        missing = os.path.join(self.tmp.name, "nothing")
        self.assertEqual(self.cli(["evaluate", "--model", "bilstm", "--checkpoint", missing])[0], 2)
        self.assertEqual(self.cli(["label", "--set", f"paths.tweets={missing}"])[0], 2)
        self.assertEqual(self.cli(["train", "--model", "bilstm"], output_dir=missing)[0], 2)
        self.assertEqual(run_cli(["label", "--config", missing], self.out)[0], 2)
        self.assertEqual(self.cli(["train", "--set", "train.epochs=0"])[0], 2)

    def test_single_class_corpus_exit_code(self):
        trust = os.path.join(self.tmp.name, "fake_only.csv")
        with open(trust, "w", encoding="utf-8") as f:
            f.write("domain,label\nfake.example,untrustworthy\n")
        out = os.path.join(self.tmp.name, "fake_only")
        self.assertEqual(self.cli(["label", "--set", f"paths.trust_list={trust}"], output_dir=out)[0], 0)
        code, _, stderr = self.cli(["train", "--model", "ensemble"], output_dir=out)
        self.assertEqual(code, 3)
        self.assertIn("real", stderr)

    def test_unknown_model(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit) as ctx:
                main(["train", "--model", "transformer"])
        self.assertEqual(ctx.exception.code, 2)
        manager = PipelineManager(load_config(self.config_path, environ={}))
        with self.assertRaises(ConfigError):
            manager.train("transformer")


class CrawlCliTest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = os.path.join(self.tmp.name, "out")
        self.trust = os.path.join(self.tmp.name, "trust.csv")

    def tearDown(self):
        self.tmp.cleanup()

    def crawl(self, *extra):
        argv = ["crawl", "--set", f"paths.trust_list={self.trust}", "--set", "crawl.request_delay=0"] + list(extra)
        return run_cli(argv, self.out)

    def test_missing_trust_list(self):
        self.assertEqual(self.crawl()[0], 2)

    def test_empty_trust_list(self):
        with open(self.trust, "w", encoding="utf-8") as f:
            f.write("domain,label\n")
        code, stdout, _ = self.crawl()
        self.assertEqual(code, 0)
        self.assertIn("爬取域名 0 个", stdout)
        with open(os.path.join(self.out, "crawl", "crawl_reports.json"), encoding="utf-8") as f:
            self.assertEqual(json.load(f)["domains"], 0)

    def test_crawl_fixture_site(self):
        with FixtureSite() as site:
            with open(self.trust, "w", encoding="utf-8") as f:
                f.write(f"domain,label,seed_url\n127.0.0.1,trustworthy,{site.url('/')}\n")
            code, stdout, _ = self.crawl("--workers", "1")
        self.assertEqual(code, 0)
        self.assertIn("新冠文章 3 篇", stdout)
        with open(os.path.join(self.out, "crawl", "articles.jsonl"), encoding="utf-8") as f:
            rows = [json.loads(line) for line in f]
        self.assertEqual([r["total_keyword_count"] for r in rows], [6, 7, 10])
        with open(os.path.join(self.out, "crawl", "crawl_reports.json"), encoding="utf-8") as f:
            report = json.load(f)["reports"][0]
        self.assertEqual(report["pages_visited"], 9)
        self.assertEqual(report["robots_skipped"], 1)
        self.assertEqual(report["errors"], {"non_html": 1, "not_found": 1})


if __name__ == "__main__":
    unittest.main()
