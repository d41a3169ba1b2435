"""
Module package
语料、文本预处理、张量与自动求导、神经网络层、训练、爬虫等核心模块
"""
