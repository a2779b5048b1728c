"""Five-dimension prompt records and their generation templates.

Each class gets one prompt per knowledge dimension: general appearance
(GA), fine-grained appearance (FA), functionality (FT), contextual
information (CI) and differential features (DF). DF prompts contrast the
class against its most frequently confused class, so they carry a
confusable class id.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError

DIMENSIONS = ("GA", "FA", "FT", "CI", "DF")

DIMENSION_TOPICS = {
    "GA": "visual features",
    "FA": "fine-grained-attribute",
    "FT": "functional-use",
    "CI": "contextual-scene",
    "DF": "differential-comparison",
}

DEFAULT_WORD_COUNT = 15

_TEMPLATES = {
    "GA": (
        'Provide a concise English phrase describing the key visual appearance features of a "{class-name}".\n'
        "Focus on what it looks like (e.g., shape, color, texture, notable parts).\n"
        "The phrase should be approximately {target-word-count} words and suitable to complete the sentence: "
        '"A {class-name} typically appears as [YOUR PHRASE HERE]."\n'
        'Output ONLY the descriptive phrase. Do NOT include "A {class-name} typically appears as".\n'
        'Descriptive phrase for "{class-name}":'
    ),
    "FA": (
        "Provide a concise English phrase describing one or two highly distinctive or fine-grained visual "
        'attributes of a "{class-name}" that make it unique or easily identifiable.\n'
        "Focus on specific, detailed characteristics.\n"
        "The description should be in English, concise, and approximately {target-word-count} words.\n"
        "Output ONLY the descriptive phrase itself, suitable for completing the sentence: "
        '"A distinctive feature of a {class-name} is [YOUR PHRASE HERE]."\n'
        'Output ONLY the descriptive phrase of the attribute(s). Do NOT include "A distinctive feature of a {class-name} is".\n'
        'Descriptive phrase of attribute(s) for "{class-name}":'
    ),
    "FT": (
        'Provide a concise English phrase describing the primary function or purpose of a "{class-name}".\n'
        "Focus on what it is used for.\n"
        "The phrase should be approximately {target-word-count} words and suitable to complete the sentence: "
        '"A {class-name} is used for [YOUR PHRASE HERE]."\n'
        'Output ONLY the descriptive phrase. Do NOT include "A {class-name} is used for".\n'
        'Descriptive phrase for "{class-name}":'
    ),
    "CI": (
        "Provide a concise English phrase describing the common environments or contexts where a "
        '"{class-name}" is typically found.\n'
        "Focus on its usual surroundings or scenarios.\n"
        "The phrase should be approximately {target-word-count} words and suitable to complete the sentence: "
        '"A {class-name} is commonly found in [YOUR PHRASE HERE]."\n'
        'Output ONLY the descriptive phrase. Do NOT include "A {class-name} is commonly found in".\n'
        'Descriptive phrase for "{class-name}":'
    ),
    "DF": (
        'Describe the key visual differences of a "{class-name}" when compared to a "{confusing-class-name}".\n'
        'Focus on features that distinguish a "{class-name}" from a "{confusing-class-name}".\n'
        "The description should be in English, concise, and approximately {target-word-count} words.\n"
        "Output ONLY the descriptive phrase itself, suitable for completing the sentence: "
        '"Unlike a {confusing-class-name}, a {class-name} has [YOUR PHRASE HERE]."\n'
        'Output ONLY the descriptive phrase of differences. Do NOT include "Unlike a {confusing-class-name}, a {class-name} has".\n'
        'Descriptive phrase of differences for "{class-name}" compared to "{confusing-class-name}":'
    ),
}

ANCHOR_TEMPLATE = "a photo of a {class-name}"


@dataclass(frozen=True)
class PromptRecord:
    """One rendered prompt for a (class, dimension) slot."""

    class_id: int
    dimension: str
    text: str
    word_count: int = DEFAULT_WORD_COUNT
    confusable_id: int | None = None

    def __post_init__(self) -> None:
        if self.dimension not in DIMENSIONS:
            raise ValidationError(f"unknown prompt dimension {self.dimension!r}")
        if self.dimension == "DF":
            if self.confusable_id is None:
                raise ValidationError("DF prompt records require a confusable class id")
            if self.confusable_id == self.class_id:
                raise ValidationError("DF confusable class must differ from the record's own class")
        elif self.confusable_id is not None:
            raise ValidationError(f"{self.dimension} prompt records must not carry a confusable id")
        if "{" in self.text:
            raise ValidationError("prompt text contains an unresolved '{' placeholder")


def render_prompt(
    dimension: str,
    class_name: str,
    confusable_name: str | None = None,
    target_word_count: int = DEFAULT_WORD_COUNT,
) -> str:
    """Render the generation template for one dimension with all placeholders substituted."""
    if dimension not in DIMENSIONS:
        raise ValidationError(f"unknown prompt dimension {dimension!r}")
    if target_word_count < 1:
        raise ValidationError("target_word_count must be positive")
    if dimension == "DF":
        if not confusable_name:
            raise ValidationError("DF prompts require a confusable class name")
    elif confusable_name is not None:
        raise ValidationError(f"{dimension} prompts take no confusable class name")
    text = _TEMPLATES[dimension]
    text = text.replace("{class-name}", class_name)
    text = text.replace("{target-word-count}", str(target_word_count))
    if dimension == "DF":
        text = text.replace("{confusing-class-name}", confusable_name)
    return text


def render_anchor(class_name: str) -> str:
    """The generic per-class anchor prompt."""
    return ANCHOR_TEMPLATE.replace("{class-name}", class_name)
