"""Question-template library: parsing, placeholder substitution, rotation.

Template files are UTF-8, one template per line; ``#`` starts a comment and
blank lines are ignored. Every template must contain the ``[TARGET]``
placeholder exactly once. Rotation walks a seeded permutation of the library
cyclically, so a long run covers every phrasing evenly while staying
reproducible.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

PLACEHOLDER = "[TARGET]"


class TemplateError(ValueError):
    """Template file could not be parsed into a valid library."""


@dataclass(frozen=True)
class QuestionTemplate:
    index: int  # 1-based position in the library file
    text: str

    def instantiate(self, knowledge: str) -> str:
        return instantiate(self, knowledge)


@dataclass(frozen=True)
class TemplateLibrary:
    templates: tuple[QuestionTemplate, ...]

    def __len__(self) -> int:
        return len(self.templates)

    def __iter__(self):
        return iter(self.templates)

    def by_index(self, index: int) -> QuestionTemplate:
        for t in self.templates:
            if t.index == index:
                return t
        raise KeyError(index)


def load_templates(source: str | Path) -> TemplateLibrary:
    path = Path(source)
    templates: list[QuestionTemplate] = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        count = line.count(PLACEHOLDER)
        if count != 1:
            raise TemplateError(
                f"{path}:{lineno}: template {line!r} has placeholder count {count}, expected 1"
            )
        if line in seen:
            raise TemplateError(
                f"{path}:{lineno}: duplicate template (first seen on line {seen[line]})"
            )
        seen[line] = lineno
        templates.append(QuestionTemplate(index=len(templates) + 1, text=line))
    if not templates:
        raise TemplateError(f"{path}: empty template library")
    return TemplateLibrary(tuple(templates))


def default_library() -> TemplateLibrary:
    """The question library shipped with the package."""
    with resources.as_file(
        resources.files("sdft").joinpath("data/question_templates.txt")
    ) as path:
        return load_templates(path)


def instantiate(template: QuestionTemplate, knowledge: str) -> str:
    if not knowledge.strip():
        raise ValueError("knowledge must be non-empty")
    return template.text.replace(PLACEHOLDER, knowledge)


@dataclass(frozen=True)
class RotationState:
    """Cursor into a seeded permutation of template indices."""

    seed: int
    cursor: int
    permutation: tuple[int, ...]

    @classmethod
    def new(cls, seed: int, library: TemplateLibrary) -> "RotationState":
        indices = [t.index for t in library.templates]
        random.Random(seed).shuffle(indices)
        return cls(seed=seed, cursor=0, permutation=tuple(indices))


def next_template(
    state: RotationState, library: TemplateLibrary
) -> tuple[QuestionTemplate, RotationState]:
    """Return the next template in the rotation and the advanced state."""
    if len(library) == 0:
        raise TemplateError("cannot rotate over an empty library")
    if len(state.permutation) != len(library):
        raise TemplateError("rotation state does not match library size")
    index = state.permutation[state.cursor]
    advanced = RotationState(
        seed=state.seed,
        cursor=(state.cursor + 1) % len(state.permutation),
        permutation=state.permutation,
    )
    return library.by_index(index), advanced
