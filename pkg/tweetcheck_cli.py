#!/usr/bin/env python3
"""
新冠虚假信息检测命令行界面
爬取 → 打标签 → 训练 → 评估 / 交叉验证 → 预测，每个阶段一个子命令
"""

import argparse
import json
import logging
import sys
import traceback
from typing import List, Optional

from module.config import DEFAULT_CONFIG_PATH, load_config
from module.errors import ConfigError, PipelineError
from pipeline_manager import MODEL_NAMES, PipelineManager

logger = logging.getLogger("tweetcheck")

EXIT_OK = 0
EXIT_UNEXPECTED = 1


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        type=str,
        default=None,
        help=f"配置文件路径，TOML 或 JSON（默认: {DEFAULT_CONFIG_PATH}）"
    )
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="覆盖配置项，可重复，例如 --set train.epochs=3"
    )
    common.add_argument("--seed", type=int, default=None, help="全局随机种子")
    common.add_argument("--dedup", action="store_true", help="去掉 (text, label) 完全相同的重复样本")
    common.add_argument("--workers", type=int, default=None, help="爬虫线程数 / 交叉验证并行折数")
    common.add_argument("--print-config", action="store_true", help="打印合并后的有效配置（含子种子）并退出")
    common.add_argument(
        "--debug",
        "-d",
        action="store_true",
        help="启用调试模式，输出详细日志"
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    """构建命令行解析器"""
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="tweetcheck",
        description="新冠虚假信息检测流水线",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
示例:
  # 爬取信任列表中的域名，找出新冠文章
  python tweetcheck_cli.py crawl --config model_config/default_config.toml

  # 按域名信任列表给推文打标签
  python tweetcheck_cli.py label --set paths.tweets=data/tweets.jsonl

  # 训练集成模型并在测试集上评估
  python tweetcheck_cli.py train --model ensemble --seed 7
  python tweetcheck_cli.py evaluate --model ensemble --positive-class fake

  # 10 折交叉验证
  python tweetcheck_cli.py cv --model bilstm -k 10 --workers 4

  # 对任意文本预测
  python tweetcheck_cli.py predict --model bilstm --text "5g towers spread the virus"
        """
    )
    commands = parser.add_subparsers(dest="command", metavar="<command>")
    commands.required = True

    commands.add_parser("crawl", parents=[common], help="爬取信任列表域名，输出新冠文章 URL")
    commands.add_parser("label", parents=[common], help="给推文打标签，输出带标签语料")

    model_names = sorted(MODEL_NAMES)
    for name, help_text in (
        ("train", "平衡、划分、预处理并训练模型"),
        ("evaluate", "在保存的测试集上评估模型"),
        ("cv", "分层 K 折交叉验证"),
        ("predict", "对文本给出概率与标签"),
    ):
        sub = commands.add_parser(name, parents=[common], help=help_text)
        sub.add_argument("--model", choices=model_names, default="ensemble", help="模型（默认: ensemble）")
        if name in ("evaluate", "predict"):
            sub.add_argument("--checkpoint", type=str, default=None, help="模型目录（默认: <output_dir>/models/<model>）")
        if name == "evaluate":
            sub.add_argument("--positive-class", choices=["real", "fake"], default="real", help="主指标的正类（默认: real）")
        if name == "cv":
            sub.add_argument("-k", type=int, default=None, help="折数（默认取 corpus.cv_folds）")
        if name == "predict":
            sub.add_argument("--text", action="append", default=[], help="要预测的文本，可重复")
            sub.add_argument("--input", type=str, default=None, help="每行一条文本的文件，- 表示标准输入")
    return parser


def _overrides(args: argparse.Namespace) -> List[str]:
    """--set 在前，专用参数在后，后者优先"""
    items = list(args.overrides)
    if args.seed is not None:
        items.append(f"seed={args.seed}")
    if args.dedup:
        items.append("corpus.dedup=true")
    if args.workers is not None:
        items.append(f"crawl.workers={args.workers}")
        items.append(f"train.max_workers={args.workers}")
    return items


def _read_texts(args: argparse.Namespace) -> List[str]:
    texts = list(args.text)
    if args.input:
        if args.input == "-":
            lines = sys.stdin.read().splitlines()
        else:
            try:
                with open(args.input, "r", encoding="utf-8") as f:
                    lines = f.read().splitlines()
            except FileNotFoundError as e:
                raise ConfigError(f"输入文件不存在: {args.input}") from e
        texts.extend(line for line in lines if line.strip())
    return texts


def run(args: argparse.Namespace) -> int:
    config_path = args.config or DEFAULT_CONFIG_PATH
    config = load_config(config_path, _overrides(args))
    if args.print_config:
        print(json.dumps(config.to_dict(), indent=2, ensure_ascii=False, sort_keys=True))
        return EXIT_OK

    manager = PipelineManager(config)
    command = args.command
    manager.validate_inputs(command, getattr(args, "model", None), getattr(args, "checkpoint", None))
    texts = _read_texts(args) if command == "predict" else []

    if command == "crawl":
        summary = manager.crawl()
        print(f"✓ 爬取域名 {summary['domains']} 个，访问页面 {summary['pages_visited']} 个")
        print(f"✓ 新冠文章 {summary['articles']} 篇，已写入 {config.paths.output_dir}/crawl/")
    elif command == "label":
        summary = manager.label()
        print(f"✓ 读取推文 {summary['tweets_loaded']} 条（跳过 {summary['skipped_lines']} 行）")
        print(f"✓ fake {summary['fake']} 条，real {summary['real']} 条，冲突 {summary['conflicts']} 条，未命中 {summary['unmatched']} 条")
        print(f"✓ 带标签语料: {config.corpus_path()}")
    elif command == "train":
        summary = manager.train(args.model)
        print(f"✓ 训练集 {summary['train_size']} 条，测试集 {summary['test_size']} 条，词表 {summary['vocab_size']}")
        print(f"✓ 参数 {summary['parameters']} 个，{summary['epochs']} 个 epoch，最终 loss {summary['final_loss']:.4f}")
        if summary["final_val_acc"] is not None:
            print(f"✓ 测试集准确率 {summary['final_val_acc']:.4f}")
        print(f"✓ 产物目录: {summary['output_dir']}")
    elif command == "evaluate":
        payload = manager.evaluate(args.model, args.checkpoint, args.positive_class)
        primary = payload["metrics"][payload["primary"]]
        print(f"✓ 测试集 {payload['test_size']} 条，正类 {args.positive_class}")
        print(
            f"✓ accuracy={primary['accuracy']:.4f} precision={primary['precision']:.4f} "
            f"recall={primary['recall']:.4f} f1={primary['f1']:.4f}"
        )
    elif command == "cv":
        payload = manager.cross_validate(args.model, args.k)
        print(f"✓ {payload['k']} 折交叉验证: 平均准确率 {payload['mean_accuracy']:.4f} ± {payload['std_accuracy']:.4f}")
    elif command == "predict":
        for probability, label in manager.predict(args.model, texts, args.checkpoint):
            print(f"{probability:.6f}\t{label}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """主函数，返回退出码"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.debug else logging.INFO,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )
    try:
        return run(args)
    except PipelineError as e:
        print(f"错误: {e}", file=sys.stderr)
        if args.debug:
            traceback.print_exc()
        return e.exit_code
    except Exception as e:
        print(f"错误: 未预期的异常 {type(e).__name__}: {e}", file=sys.stderr)
        if args.debug:
            traceback.print_exc()
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
