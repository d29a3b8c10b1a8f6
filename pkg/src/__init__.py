"""hut-peft パッケージ"""

__version__ = "0.1.0"
