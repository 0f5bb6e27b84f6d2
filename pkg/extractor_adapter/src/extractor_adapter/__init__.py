"""Feature extraction jobs for the recommendation benchmark.

Runs encoders and vision-language models over item images and texts, then
writes the artifacts the benchmark consumes: binary feature files, answers
TSVs with slot-structured descriptions, and keyword synonym maps. Heavy
model backends load lazily; deterministic stub backends cover offline runs
and tests.
"""

__version__ = "0.1.0"

from .jobs import ExtractionJob, load_manifest  # noqa: F401
from .extract import extract_unimodal, extract_vlm  # noqa: F401
from .clustering import build_synonym_map  # noqa: F401
from .prompts import build_prompt, prompt_path  # noqa: F401
