"""
单元测试
运行: python -m unittest discover -s tests -t .
"""
