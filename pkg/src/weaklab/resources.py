"""Access to the data files shipped with the package.

Three schemas (sentiment, disfluency, emotion), task-specific and
task-agnostic prompt specs, a default filler inventory, and a small demo
polarity lexicon.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .corpus import LabelSchema, Lexicon, load_lexicon, load_schema
from .prompts import load_prompt_specs
from .rules import load_filler_set


def resource_path(relative: str) -> Path:
    """Filesystem path of a shipped data file, e.g. ``schemas/sentiment.json``."""
    path = Path(str(resources.files("weaklab.data").joinpath(relative)))
    if not path.is_file():
        raise FileNotFoundError(f"no shipped resource {relative!r}")
    return path


def builtin_schema(name: str) -> LabelSchema:
    return load_schema(resource_path(f"schemas/{name}.json"))


def builtin_prompt_specs(name: str):
    return load_prompt_specs(resource_path(f"prompts/{name}.json"))


def builtin_fillers() -> frozenset[str]:
    return load_filler_set(resource_path("fillers.txt"))


def builtin_lexicon(name: str) -> Lexicon:
    return load_lexicon(resource_path(f"lexicons/{name}.tsv"))
