"""The four stigma subscales and their annotation guideline text.

Every other module keys on :class:`Subscale`; the enum order is fixed and
is the presentation order for reports, exports, and the annotation UI.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Subscale(str, Enum):
    PERSONALIZED_STIGMA = "personalized_stigma"
    DISCLOSURE_CONCERN = "disclosure_concern"
    NEGATIVE_SELF_IMAGE = "negative_self_image"
    PUBLIC_ATTITUDES = "public_attitudes"

    @classmethod
    def from_value(cls, value: str) -> "Subscale":
        try:
            return cls(value)
        except ValueError:
            raise ValueError(
                f"unknown subscale {value!r}; expected one of "
                f"{[s.value for s in cls]}"
            ) from None


SUBSCALES: tuple[Subscale, ...] = tuple(Subscale)


@dataclass(frozen=True)
class Guideline:
    """Annotation guideline for one subscale: display name, definition, items."""

    subscale: Subscale
    display_name: str
    definition: str
    example_items: tuple[str, ...]


GUIDELINES: dict[Subscale, Guideline] = {
    Subscale.PERSONALIZED_STIGMA: Guideline(
        subscale=Subscale.PERSONALIZED_STIGMA,
        display_name="Personalized Stigma",
        definition=(
            "Direct personal experiences of discrimination, prejudice, or "
            "negative treatment that an individual faces due to a "
            "stigmatized condition."
        ),
        example_items=(
            "I have been hurt by how people reacted to learning I have HIV.",
            "I have stopped socializing with some people because of their "
            "reactions to my having HIV.",
            "I have lost friends by telling them I have HIV.",
        ),
    ),
    Subscale.DISCLOSURE_CONCERN: Guideline(
        subscale=Subscale.DISCLOSURE_CONCERN,
        display_name="Disclosure Concern",
        definition=(
            "The act of revealing or sharing one's stigmatized condition or "
            "identity with others."
        ),
        example_items=(
            "I am very careful who I tell that I have HIV.",
            "I worry that people who know I have HIV will tell others.",
        ),
    ),
    Subscale.NEGATIVE_SELF_IMAGE: Guideline(
        subscale=Subscale.NEGATIVE_SELF_IMAGE,
        display_name="Negative Self-image",
        definition=(
            "The internalized feelings of shame, guilt, or low self-worth "
            "that an individual develops due to their stigmatized condition, "
            "characteristic, or identity."
        ),
        example_items=(
            "I feel that I am not as good a person as others because I have HIV.",
            "Having HIV makes me feel unclean.",
            "Having HIV makes me feel that I'm a bad person.",
        ),
    ),
    Subscale.PUBLIC_ATTITUDES: Guideline(
        subscale=Subscale.PUBLIC_ATTITUDES,
        display_name="Concern with Public Attitudes",
        definition=(
            "Collective beliefs, opinions, and perceptions held by society "
            "about a stigmatized condition."
        ),
        example_items=(
            "Most people think that a person with HIV is disgusting.",
            "Most people with HIV are rejected when others find out.",
        ),
    ),
}
