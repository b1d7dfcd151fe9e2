"""The seven basic emotion classes and their stable integer codes."""

from __future__ import annotations

from enum import Enum


class EmotionLabel(Enum):
    """Basic emotion taxonomy shared by every dataset this package handles.

    Codes are stable and ordered; confusion matrices, checkpoint label maps
    and the annotation UI all rely on this exact ordering.
    """

    ANGER = 0
    DISGUST = 1
    FEAR = 2
    HAPPINESS = 3
    SADNESS = 4
    SURPRISE = 5
    NEUTRAL = 6

    @property
    def code(self) -> int:
        return self.value

    @property
    def display_name(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_code(cls, code: int) -> "EmotionLabel":
        return cls(code)

    @classmethod
    def from_name(cls, name: str) -> "EmotionLabel":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(
                f"unknown emotion label {name!r}; expected one of "
                f"{[label.display_name for label in cls]}"
            ) from None


NUM_CLASSES = len(EmotionLabel)

#: Verdict string used by annotators to flag images that contain no usable face.
IRRELEVANT = "Irrelevant"
