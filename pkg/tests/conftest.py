from __future__ import annotations

import pytest

from ragpoison.fixtures import build_base_fixture, build_decoy_fixture, build_linear_bundle
from ragpoison.generation import GeneratorConfig


@pytest.fixture(scope="session")
def base_bundle():
    """1,000-record corpus with exact integer retrieval scores (verified)."""
    return build_base_fixture()


@pytest.fixture(scope="session")
def decoy_bundle():
    """Base corpus plus decoys and paraphrase bait for six cases (verified)."""
    return build_decoy_fixture()


@pytest.fixture(scope="session")
def linear_bundle():
    """Same corpus and cases under the differentiable linear encoder."""
    return build_linear_bundle()


@pytest.fixture(scope="session")
def mock_generator():
    return GeneratorConfig(kind="mock_reader")
