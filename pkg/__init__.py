# gridos/__init__.py
"""
GridOS 网格操作系统仿真器
"""
__version__ = "1.0.0"
__author__ = "GridOS Team"
