"""
错误类型模块
流水线各阶段共用的异常层次，CLI 根据异常类型映射退出码
"""


class PipelineError(Exception):
    """流水线异常基类"""

    exit_code = 1


class ConfigError(PipelineError):
    """用法/配置错误，包括缺失的输入路径（退出码 2）"""

    exit_code = 2


class DataError(PipelineError):
    """数据错误：语料退化、格式不符等（退出码 3）"""

    exit_code = 3


class SchemaError(DataError):
    """文件内容不符合约定的格式"""


class MalformedURLError(DataError):
    """URL 无法解析出主机名"""


class DegenerateCorpusError(DataError):
    """语料缺少某个类别，或类别样本数不足以完成划分"""


class VocabularyMismatchError(DataError):
    """检查点记录的词表与当前词表不一致"""
