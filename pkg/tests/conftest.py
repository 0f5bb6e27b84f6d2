import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import random_dataset  # noqa: E402


@pytest.fixture(scope="session")
def small_ds():
    """40 users x 30 items with real train/valid/test splits."""
    return random_dataset()
