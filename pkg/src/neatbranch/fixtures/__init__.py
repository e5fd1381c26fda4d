"""Bundled example programs."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from neatbranch.program import BlockProgram, parse_program

# The five games used for the scaled experiment.
GAME_CORPUS = ("nested_xy_game", "fig1", "catcher", "hidden_else", "countdown")


def fixture_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files(__package__).iterdir() if p.name.endswith(".json"))


def fixture_text(name: str) -> str:
    return resources.files(__package__).joinpath(f"{name}.json").read_text()


def load_fixture(name: str) -> BlockProgram:
    return parse_program(fixture_text(name))


def resolve_program(ref: str | Path) -> BlockProgram:
    """Load a program from a path, falling back to a bundled fixture name."""
    path = Path(ref)
    if path.exists():
        return parse_program(path.read_bytes())
    if str(ref) in fixture_names():
        return load_fixture(str(ref))
    raise FileNotFoundError(f"no program file or bundled fixture named {str(ref)!r}")
