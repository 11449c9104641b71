"""Shared generators and independent oracles used across the test suite."""

from __future__ import annotations

from random import Random

from kgqa.gateway import CostLedger, Gateway, ScriptedStubProvider
from kgqa.graph import KnowledgeGraph, load_graph

WORDS = (
    "amber", "basalt", "cobalt", "dune", "ember", "fjord", "garnet", "heron",
    "iris", "juniper", "krill", "lagoon", "mesa", "nectar", "onyx", "pumice",
    "quartz", "reed", "sable", "tundra", "umber", "vortex", "wheat", "xenon",
    "yarrow", "zephyr", "anchor", "bridge", "candle", "drift", "esker", "flume",
)


def fnv64_oracle(data: bytes) -> int:
    """Independent FNV-1a 64-bit implementation for cross-checking slots."""
    value = 14695981039346656037
    for byte in data:
        value = ((value ^ byte) * 1099511628211) % (2 ** 64)
    return value


def random_phrase(rng: Random, n_words: int = 3) -> str:
    return " ".join(rng.choice(WORDS) + str(rng.randrange(50)) for _ in range(n_words))


def random_records(rng: Random, n_triples: int) -> list[list[str]]:
    records = []
    seen = set()
    while len(records) < n_triples:
        s = random_phrase(rng, rng.randint(1, 2))
        r = rng.choice(WORDS) + "_" + rng.choice(WORDS)
        o = random_phrase(rng, rng.randint(1, 2))
        if (s, r, o) in seen:
            continue
        seen.add((s, r, o))
        records.append([s, r, o])
    return records


def random_graph(rng: Random, n_triples: int) -> KnowledgeGraph:
    return load_graph(random_records(rng, n_triples))


def random_queries(rng: Random, n: int) -> list[str]:
    return [random_phrase(rng, rng.randint(2, 5)) for _ in range(n)]


def stub_gateway(script: dict, ledger: CostLedger | None = None, **kwargs) -> Gateway:
    provider = ScriptedStubProvider(script=script, on_missing=kwargs.pop("on_missing", "error"))
    return Gateway(provider, ledger=ledger, sleep=lambda _: None, **kwargs)
