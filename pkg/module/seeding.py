"""
随机种子模块
全局种子按固定偏移派生出各阶段的子种子，所有随机抽取都使用 numpy 的 PCG64 生成器
"""

from typing import Dict

import numpy as np

SEED_MODULUS = 2 ** 64

SEED_OFFSETS: Dict[str, int] = {
    "split": 1,
    "balance": 2,
    "kfold": 3,
    "init": 4,
    "shuffle": 5,
    "dropout": 6,
}


def derive_seed(seed: int, stage: str) -> int:
    """子种子 = (seed + 阶段偏移) mod 2^64"""
    if stage not in SEED_OFFSETS:
        raise KeyError(f"未知的随机阶段: {stage}")
    return (int(seed) + SEED_OFFSETS[stage]) % SEED_MODULUS


def sub_seeds(seed: int) -> Dict[str, int]:
    return {stage: derive_seed(seed, stage) for stage in SEED_OFFSETS}


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) % SEED_MODULUS))


def fold_seed(seed: int, fold: int) -> int:
    """交叉验证第 fold 折的基础种子；各折的 init/shuffle/dropout 流互不重叠"""
    state = np.random.SeedSequence([int(seed) % SEED_MODULUS, int(fold)]).generate_state(1, dtype=np.uint64)
    return int(state[0])
