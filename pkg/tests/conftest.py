from __future__ import annotations

import sys

import pytest

from apv import corpus
from apv.anb import parse_protocol
from apv.checker import SearchConfig, search
from apv.terms import ProtocolSpec


def load(name: str) -> ProtocolSpec:
    return parse_protocol(corpus.read(f"{name}.anb"))


@pytest.fixture(scope="session")
def spec_of():
    cache: dict[str, ProtocolSpec] = {}

    def get(name: str) -> ProtocolSpec:
        if name not in cache:
            cache[name] = load(name)
        return cache[name]

    return get


@pytest.fixture(scope="session")
def nspk(spec_of) -> ProtocolSpec:
    return spec_of("NSPK")


@pytest.fixture(scope="session")
def nsl(spec_of) -> ProtocolSpec:
    return spec_of("NSL")


@pytest.fixture(scope="session")
def nspk_attack(nspk):
    return search(nspk, SearchConfig())


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
