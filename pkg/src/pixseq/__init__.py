"""Pixel-to-sequence interface: one token vocabulary for detection, segmentation,
keypoints and captioning, plus training and constrained decoding around it."""

from .annotations import InstanceAnnotation, SceneAnnotation, Task
from .vocab import TokenKind, VocabConfig, Vocabulary, build_vocabulary, classify_token

__version__ = "0.1.0"
