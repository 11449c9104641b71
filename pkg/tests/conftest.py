from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kgqa.embedding import EmbeddingCache, ReferenceEmbedder


@pytest.fixture(scope="session")
def ref() -> ReferenceEmbedder:
    return ReferenceEmbedder()


@pytest.fixture()
def cache() -> EmbeddingCache:
    return EmbeddingCache()


@pytest.fixture(scope="session")
def mini_dataset():
    from kgqa.fixtures import build_mini_dataset

    return build_mini_dataset()
