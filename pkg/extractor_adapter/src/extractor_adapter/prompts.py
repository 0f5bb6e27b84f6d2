"""One-shot prompt templates for structured keyword generation.

Each domain ships with a template file containing the full instruction and
a single worked example answer. The text is used byte-for-byte as stored;
tests pin the loaded prompt against the file so the template cannot drift
silently.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

BUILTIN_DOMAINS = ("baby", "pets", "clothing")


def prompt_path(domain: str) -> Path:
    if domain not in BUILTIN_DOMAINS:
        raise ValueError(f"no builtin prompt for domain {domain!r}")
    return Path(str(resources.files("extractor_adapter").joinpath(f"prompts/{domain}.txt")))


def build_prompt(domain_or_path: str) -> str:
    """Return the prompt text for a builtin domain or from a template file."""
    path = (
        prompt_path(domain_or_path)
        if domain_or_path in BUILTIN_DOMAINS
        else Path(domain_or_path)
    )
    return path.read_text(encoding="utf-8")


def prompt_slots(prompt_text: str) -> list[str]:
    """Slot names in template order, taken from the fill-in-the-blanks line."""
    import re

    head = prompt_text.split("For example", 1)[0]
    return re.findall(r"\[([^\]]+)\]", head)
