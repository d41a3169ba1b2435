"""
流水线管理模块
持有有效配置，校验输入路径，依次执行爬取、打标签、训练、评估、交叉验证与预测，并原子地写出产物
"""

import dataclasses
import logging
import os
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from module.artifacts import write_json
from module.checkpoint import LoadedModel, load_model, save_model
from module.config import PipelineConfig
from module.corpus import (
    FAKE,
    LABEL_NAMES,
    REAL,
    DatasetSplit,
    LabeledExample,
    balance_downsample,
    corpus_stats,
    deduplicate,
    filter_by_date,
    filter_by_keywords,
    label_tweets,
    load_trust_list,
    load_tweets,
    read_labeled_corpus,
    split_train_test,
    write_labeled_corpus,
)
from module.crawler import Fetcher, crawl_domains, write_article_jsonl
from module.errors import ConfigError, DegenerateCorpusError, VocabularyMismatchError
from module.nn import BILSTM, ENSEMBLE, build_model
from module.textprep import TextPreprocessor, Vocabulary
from module.train import (
    compute_metrics,
    confusion_matrix,
    cross_validate,
    metrics_to_json,
    predict,
    train,
    write_confusion_csv,
    write_epoch_log_csv,
)

logger = logging.getLogger(__name__)

# 命令行模型名 → 结构标签
MODEL_NAMES = {"bilstm": BILSTM, "ensemble": ENSEMBLE}
POSITIVE_CLASSES = {"real": REAL, "fake": FAKE}


class PipelineManager:
    """流水线管理类，每个命令对应一个方法"""

    def __init__(self, config: PipelineConfig, fetch: Optional[Fetcher] = None):
        """
        初始化流水线管理器

        Args:
            config: 有效配置
            fetch: 可选的页面抓取函数（测试时替代真实 HTTP）
        """
        self.config = config
        self.fetch = fetch
        self.output_dir = config.paths.output_dir

    # ------------------------------------------------------------------
    # 路径
    # ------------------------------------------------------------------

    @staticmethod
    def _require(path: str, what: str) -> str:
        if not path or not os.path.exists(path):
            raise ConfigError(f"{what}不存在: {path}")
        return path

    def _dir(self, *parts: str) -> str:
        path = os.path.join(self.output_dir, *parts)
        os.makedirs(path, exist_ok=True)
        return path

    @staticmethod
    def _architecture(model_name: str) -> str:
        if model_name not in MODEL_NAMES:
            raise ConfigError(f"未知的模型 {model_name!r}，可选: {', '.join(sorted(MODEL_NAMES))}")
        return MODEL_NAMES[model_name]

    def model_dir(self, model_name: str, checkpoint_dir: Optional[str] = None) -> str:
        self._architecture(model_name)
        return checkpoint_dir or os.path.join(self.output_dir, "models", model_name)

    def input_paths(self, command: str, model_name: Optional[str] = None,
                    checkpoint_dir: Optional[str] = None) -> List[Tuple[str, str]]:
        """命令读取的全部输入文件，(路径, 说明)"""
        paths = self.config.paths
        if command == "crawl":
            return [(paths.trust_list, "信任列表")]
        if command == "label":
            return [(paths.tweets, "推文归档"), (paths.trust_list, "信任列表")]
        if command in ("train", "cv"):
            self._architecture(model_name)
            return [(self.config.corpus_path(), "带标签语料")]
        if command in ("evaluate", "predict"):
            directory = self.model_dir(model_name, checkpoint_dir)
            required = [
                (os.path.join(directory, "checkpoint.npz"), "检查点"),
                (os.path.join(directory, "model.json"), "模型侧车文件"),
                (os.path.join(directory, "vocab.json"), "词表"),
            ]
            if command == "evaluate":
                required.append((os.path.join(directory, "test_split.jsonl"), "测试集"))
            return required
        raise ConfigError(f"未知的命令: {command}")

    def validate_inputs(self, command: str, model_name: Optional[str] = None, checkpoint_dir: Optional[str] = None):
        """开始任何工作之前检查命令的所有输入路径"""
        for path, what in self.input_paths(command, model_name, checkpoint_dir):
            self._require(path, what)

    # ------------------------------------------------------------------
    # 爬取与打标签
    # ------------------------------------------------------------------

    def crawl(self) -> Dict[str, Any]:
        """爬取信任列表中的所有域名，写出文章 URL 与每个域名的爬取报告"""
        trust = load_trust_list(self._require(self.config.paths.trust_list, "信任列表"))
        seeds = [(trust.seed_url(domain), label) for domain, label in trust.items()]
        reports = crawl_domains(seeds, self.config.crawl, fetch=self.fetch)

        out = self._dir("crawl")
        write_article_jsonl(os.path.join(out, "articles.jsonl"), reports)
        summary = {
            "domains": len(reports),
            "pages_visited": sum(r.pages_visited for r in reports),
            "articles": sum(len(r.articles) for r in reports),
            "reports": [r.summary() for r in reports],
        }
        write_json(os.path.join(out, "crawl_reports.json"), summary)
        return summary

    def label(self) -> Dict[str, Any]:
        """读取推文归档并按信任列表打标签"""
        tweets_path = self._require(self.config.paths.tweets, "推文归档")
        trust = load_trust_list(self._require(self.config.paths.trust_list, "信任列表"))
        archive = load_tweets(tweets_path)

        tweets = archive.records
        start, end = self.config.corpus.date_bounds()
        if start or end:
            tweets = filter_by_date(tweets, start, end)
        after_date = len(tweets)
        if self.config.corpus.keyword_filter:
            tweets = filter_by_keywords(tweets, self.config.corpus.keywords)

        result = label_tweets(tweets, trust)
        examples = result.examples
        if self.config.corpus.dedup:
            examples = deduplicate(examples)
        if not examples:
            logger.warning("没有任何推文命中信任列表，输出空语料")

        corpus_path = self.config.corpus_path()
        write_labeled_corpus(corpus_path, examples)
        summary = {
            "tweets_loaded": len(archive.records),
            "skipped_lines": archive.skipped,
            "after_date_filter": after_date,
            "after_keyword_filter": len(tweets),
            "duplicates_removed": len(result.examples) - len(examples),
            "stats": corpus_stats(examples),
        }
        summary.update(result.summary())
        write_json(os.path.join(os.path.dirname(corpus_path) or ".", "label_summary.json"), summary)
        return summary

    # ------------------------------------------------------------------
    # 训练相关
    # ------------------------------------------------------------------

    def _load_examples(self) -> List[LabeledExample]:
        examples = read_labeled_corpus(self._require(self.config.corpus_path(), "带标签语料"))
        if self.config.corpus.dedup:
            examples = deduplicate(examples)
        return balance_downsample(examples, self.config.sub_seed("balance"))

    def _split(self) -> DatasetSplit:
        return split_train_test(self._load_examples(), self.config.corpus.train_ratio, self.config.sub_seed("split"))

    def _builder(self, architecture: str, vocab: Vocabulary) -> Callable:
        model_config = dataclasses.replace(
            self.config.model,
            vocab_size=len(vocab),
            max_sequence_length=self.config.preprocess.max_sequence_length,
        )
        return lambda rng: build_model(architecture, model_config, rng)

    def train(self, model_name: str) -> Dict[str, Any]:
        """
        平衡 → 划分 → 预处理 → 训练，写出检查点、侧车、词表、epoch 日志与测试集

        Args:
            model_name: bilstm 或 ensemble

        Returns:
            训练摘要
        """
        architecture = self._architecture(model_name)
        split = self._split()
        preprocessor = TextPreprocessor(self.config.preprocess)
        X_train = preprocessor.fit_transform([e.text for e in split.train])
        X_test = preprocessor.transform([e.text for e in split.test])
        y_train = np.array([e.label for e in split.train], dtype=np.int64)
        y_test = np.array([e.label for e in split.test], dtype=np.int64)

        model, logs = train(
            self._builder(architecture, preprocessor.vocab),
            X_train,
            y_train,
            self.config.train_config(),
            validation=(X_test, y_test),
        )

        out = self._dir("models", model_name)
        save_model(model, os.path.join(out, "checkpoint.npz"), os.path.join(out, "model.json"),
                   self.config.preprocess, preprocessor.vocab)
        preprocessor.vocab.save(os.path.join(out, "vocab.json"))
        write_epoch_log_csv(os.path.join(out, "epoch_log.csv"), logs)
        write_labeled_corpus(os.path.join(out, "test_split.jsonl"), split.test)
        return {
            "model": model_name,
            "train_size": len(split.train),
            "test_size": len(split.test),
            "vocab_size": len(preprocessor.vocab),
            "parameters": model.parameter_count(),
            "epochs": len(logs),
            "final_loss": logs[-1].loss,
            "final_val_acc": logs[-1].val_acc,
            "output_dir": out,
        }

    def _load_trained(self, model_name: str, checkpoint_dir: Optional[str]) -> Tuple[LoadedModel, TextPreprocessor]:
        directory = self.model_dir(model_name, checkpoint_dir)
        loaded = load_model(
            self._require(os.path.join(directory, "checkpoint.npz"), "检查点"),
            self._require(os.path.join(directory, "model.json"), "模型侧车文件"),
        )
        vocab = Vocabulary.load(self._require(os.path.join(directory, "vocab.json"), "词表"))
        if vocab.checksum() != loaded.vocab_checksum:
            raise VocabularyMismatchError(f"{directory}: 词表与检查点记录的校验和不一致")
        return loaded, TextPreprocessor(loaded.preprocess, vocab=vocab)

    def evaluate(self, model_name: str, checkpoint_dir: Optional[str] = None, positive_class: str = "real") -> Dict[str, Any]:
        """在训练时保存的测试集上评估，两种正类约定都写入 metrics.json"""
        if positive_class not in POSITIVE_CLASSES:
            raise ConfigError(f"未知的正类 {positive_class!r}，可选: real, fake")
        directory = self.model_dir(model_name, checkpoint_dir)
        loaded, preprocessor = self._load_trained(model_name, checkpoint_dir)
        test = read_labeled_corpus(self._require(os.path.join(directory, "test_split.jsonl"), "测试集"))
        if not test:
            raise DegenerateCorpusError(f"测试集为空: {directory}")

        predictions = [label for _, label in predict(loaded.graph, preprocessor.transform([e.text for e in test]))]
        cm = confusion_matrix(predictions, [e.label for e in test])
        reports = {
            "positive_real": compute_metrics(cm, REAL),
            "positive_fake": compute_metrics(cm, FAKE),
        }
        payload = {
            "model": model_name,
            "architecture": loaded.graph.architecture,
            "test_size": len(test),
            "primary": f"positive_{positive_class}",
            "metrics": metrics_to_json(reports),
        }
        write_json(os.path.join(directory, "metrics.json"), payload)
        write_confusion_csv(os.path.join(directory, "confusion.csv"), cm)
        return payload

    def cross_validate(self, model_name: str, k: Optional[int] = None) -> Dict[str, Any]:
        """分层 K 折交叉验证，每折单独建词表"""
        architecture = self._architecture(model_name)
        k = k or self.config.corpus.cv_folds
        examples = self._load_examples()
        texts = [e.text for e in examples]
        labels = np.array([e.label for e in examples], dtype=np.int64)

        def encode_fold(train_idx: Sequence[int], test_idx: Sequence[int]):
            preprocessor = TextPreprocessor(self.config.preprocess)
            X_train = preprocessor.fit_transform([texts[i] for i in train_idx])
            X_test = preprocessor.transform([texts[i] for i in test_idx])
            return X_train, X_test, self._builder(architecture, preprocessor.vocab)

        report = cross_validate(None, texts, labels, k, self.config.train_config(), encode_fold=encode_fold)
        payload = {"model": model_name, "architecture": architecture}
        payload.update(report.to_dict())
        write_json(os.path.join(self._dir("cv", model_name), "cv_report.json"), payload)
        return payload

    def predict(self, model_name: str, texts: Sequence[str], checkpoint_dir: Optional[str] = None) -> List[Tuple[float, str]]:
        """对任意文本给出 (概率, fake/real)"""
        loaded, preprocessor = self._load_trained(model_name, checkpoint_dir)
        if not texts:
            return []
        return [(p, LABEL_NAMES[label]) for p, label in predict(loaded.graph, preprocessor.transform(list(texts)))]
