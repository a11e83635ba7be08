"""Prompt template loading and rendering.

Templates are plain text files with {name} placeholders. Rendering only
substitutes bound names, so literal braces in embedded code survive;
a placeholder-looking token with no binding is an error because a prompt
with a hole in it silently degrades every downstream stage.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

_PLACEHOLDER = re.compile(r"\{([a-z][a-z0-9_]*)\}")


def packaged_template_dir() -> Path:
    return Path(str(resources.files("xlrepair").joinpath("templates")))


def load_template(template_id: str, template_dir: Optional[str | Path] = None) -> str:
    base = Path(template_dir) if template_dir else packaged_template_dir()
    path = base / f"{template_id}.txt"
    if not path.exists():
        raise FileNotFoundError(f"prompt template not found: {path}")
    return path.read_text(encoding="utf-8")


def placeholders(template: str) -> set[str]:
    return set(_PLACEHOLDER.findall(template))


def render(template: str, bindings: Mapping[str, str]) -> str:
    """Substitute every {name} placeholder; unbound names are an error.

    Substituted values are inserted verbatim (no re-scanning), so braces
    inside program text cannot trigger further substitution.
    """
    unbound = placeholders(template) - set(bindings)
    if unbound:
        raise KeyError(f"unbound template placeholders: {sorted(unbound)}")

    def _sub(match: re.Match) -> str:
        return str(bindings[match.group(1)])

    return _PLACEHOLDER.sub(_sub, template)
