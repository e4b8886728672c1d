import random

import pytest

from dpverify.action import PlainVectors
from dpverify.predicate import PredicateStore


@pytest.fixture
def store8():
    return PredicateStore(8)


@pytest.fixture
def store32():
    return PredicateStore(32)


@pytest.fixture
def vec3():
    return PlainVectors(3)


@pytest.fixture
def rng():
    return random.Random(0xDA7A)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running differential suites")
