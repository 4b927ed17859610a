"""Shared token-id space for detection, segmentation, keypoints and captions.

Layout (contiguous, starting at 0)::

    coordinate bins | class labels | noise class | specials (7) | text tokens

Coordinate ids equal their bin index, so a quantized coordinate needs no offset.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator


class TokenKind(enum.Enum):
    COORD_BIN = "CoordBin"
    CLASS_LABEL = "ClassLabel"
    NOISE_CLASS = "NoiseClass"
    SEPARATOR = "Separator"
    EOS = "Eos"
    INVISIBLE = "Invisible"
    PROMPT_DETECT = "PromptDetect"
    PROMPT_SEGMENT = "PromptSegment"
    PROMPT_KEYPOINT = "PromptKeypoint"
    PROMPT_CAPTION = "PromptCaption"
    TEXT_TOKEN = "TextToken"


_SPECIALS = (
    TokenKind.SEPARATOR,
    TokenKind.EOS,
    TokenKind.INVISIBLE,
    TokenKind.PROMPT_DETECT,
    TokenKind.PROMPT_SEGMENT,
    TokenKind.PROMPT_KEYPOINT,
    TokenKind.PROMPT_CAPTION,
)


@dataclass(frozen=True)
class VocabConfig:
    num_coord_bins: int = 1000
    num_classes: int = 80
    num_text_tokens: int = 32000
    keypoint_count: int = 14

    def validate(self) -> None:
        for name in ("num_coord_bins", "num_classes", "num_text_tokens", "keypoint_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_coord_bins < 2:
            raise ValueError("num_coord_bins must be >= 2")


@dataclass(frozen=True)
class VocabRange:
    kind: TokenKind
    start: int
    end: int  # exclusive

    def __contains__(self, token_id: int) -> bool:
        return self.start <= token_id < self.end


@dataclass(frozen=True)
class Vocabulary:
    config: VocabConfig
    ranges: tuple[VocabRange, ...]

    @property
    def total_size(self) -> int:
        return self.ranges[-1].end

    @property
    def num_coord_bins(self) -> int:
        return self.config.num_coord_bins

    @property
    def keypoint_count(self) -> int:
        return self.config.keypoint_count

    def range_of(self, kind: TokenKind) -> VocabRange:
        for r in self.ranges:
            if r.kind is kind:
                return r
        raise KeyError(kind)

    @property
    def class_base(self) -> int:
        return self.range_of(TokenKind.CLASS_LABEL).start

    @property
    def text_base(self) -> int:
        return self.range_of(TokenKind.TEXT_TOKEN).start

    def special(self, kind: TokenKind) -> int:
        r = self.range_of(kind)
        if r.end - r.start != 1:
            raise KeyError(f"{kind} is not a single-id token")
        return r.start

    @property
    def noise_id(self) -> int:
        return self.special(TokenKind.NOISE_CLASS)

    @property
    def separator_id(self) -> int:
        return self.special(TokenKind.SEPARATOR)

    @property
    def eos_id(self) -> int:
        return self.special(TokenKind.EOS)

    @property
    def invisible_id(self) -> int:
        return self.special(TokenKind.INVISIBLE)

    def class_token(self, class_id: int) -> int:
        if not 0 <= class_id < self.config.num_classes:
            raise ValueError(f"class id {class_id} outside [0, {self.config.num_classes})")
        return self.class_base + class_id

    def classify(self, token_id: int) -> TokenKind:
        return classify_token(self, token_id)

    def ids_of(self, *kinds: TokenKind) -> Iterator[int]:
        for r in self.ranges:
            if r.kind in kinds:
                yield from range(r.start, r.end)

    def manifest(self) -> str:
        return "".join(f"{r.kind.value} {r.start} {r.end}\n" for r in self.ranges)

    @classmethod
    def from_manifest(cls, text: str, keypoint_count: int = 14) -> "Vocabulary":
        sizes = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            kind, start, end = line.split()
            sizes[TokenKind(kind)] = int(end) - int(start)
        cfg = VocabConfig(
            num_coord_bins=sizes[TokenKind.COORD_BIN],
            num_classes=sizes[TokenKind.CLASS_LABEL],
            num_text_tokens=sizes[TokenKind.TEXT_TOKEN],
            keypoint_count=keypoint_count,
        )
        vocab = build_vocabulary(cfg)
        if vocab.manifest().split() != text.split():
            raise ValueError("manifest does not describe a standard layout")
        return vocab


def build_vocabulary(cfg: VocabConfig) -> Vocabulary:
    cfg.validate()
    sizes = [
        (TokenKind.COORD_BIN, cfg.num_coord_bins),
        (TokenKind.CLASS_LABEL, cfg.num_classes),
        (TokenKind.NOISE_CLASS, 1),
        *((kind, 1) for kind in _SPECIALS),
        (TokenKind.TEXT_TOKEN, cfg.num_text_tokens),
    ]
    ranges = []
    start = 0
    for kind, n in sizes:
        ranges.append(VocabRange(kind, start, start + n))
        start += n
    return Vocabulary(cfg, tuple(ranges))


def classify_token(v: Vocabulary, token_id: int) -> TokenKind:
    token_id = int(token_id)
    if not 0 <= token_id < v.total_size:
        raise ValueError(f"token id {token_id} outside [0, {v.total_size})")
    # few ranges, linear scan is fine
    for r in v.ranges:
        if token_id < r.end:
            return r.kind
    raise AssertionError("unreachable")
