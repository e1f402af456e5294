"""Synthetic corpus generator tests: grammar validity, reachability replay,
determinism, and self-consistency of the emitted artifacts."""

from __future__ import annotations

import pytest

from adgcode.graph import build_adg
from adgcode.metrics import pov_toy
from adgcode.signatures import link_api_tokens, parse_signatures
from adgcode.synthetic import (
    SyntheticGenerationError,
    SyntheticSpec,
    generate,
    split_pairs,
)


def build_graph_for(corpus):
    sig = parse_signatures(corpus.signature_text)
    return build_adg(sig.nodes(), sig.hierarchy())


def replay_chain(adg, code_tokens):
    """Walk statements and assert counting-based reachability at each call."""
    available: set[str] = set()
    i = 0
    while i < len(code_tokens):
        assert code_tokens[i + 1] == "="
        name = code_tokens[i + 2]
        node_id = adg.id_of(name)
        assert node_id is not None, f"{name} is not a graph method"
        assert adg.is_reachable(node_id, available), (name, available)
        available |= set(adg.node(node_id).outputs)
        i = code_tokens.index(";", i) + 1


class TestGenerate:
    def test_single_source_method_forced_chain(self):
        spec = SyntheticSpec(n_types=1, n_methods=1, max_chain_len=1, corpus_size=1, seed=0)
        corpus = generate(spec)
        (desc, code), = corpus.pairs
        assert code == ("v0", "=", "m0", "(", ")", ";")
        assert "m0" in desc

    def test_all_codes_parse_under_toy_grammar(self):
        spec = SyntheticSpec(n_types=5, n_methods=12, max_chain_len=4, corpus_size=40, seed=1)
        corpus = generate(spec)
        assert pov_toy([code for _, code in corpus.pairs]) == 1.0

    def test_every_chain_reachable_step_by_step(self):
        spec = SyntheticSpec(n_types=6, n_methods=14, max_chain_len=5, corpus_size=30, seed=2)
        corpus = generate(spec)
        adg = build_graph_for(corpus)
        for _, code in corpus.pairs:
            replay_chain(adg, list(code))

    def test_deterministic_per_seed(self):
        spec = SyntheticSpec(n_types=4, n_methods=10, max_chain_len=3, corpus_size=12, seed=5)
        assert generate(spec) == generate(spec)

    def test_different_seeds_differ(self):
        a = generate(SyntheticSpec(4, 10, 3, 12, seed=5))
        b = generate(SyntheticSpec(4, 10, 3, 12, seed=6))
        assert a != b

    def test_signatures_parse_and_tokens_link(self):
        spec = SyntheticSpec(n_types=5, n_methods=10, max_chain_len=3, corpus_size=20, seed=7)
        corpus = generate(spec)
        adg = build_graph_for(corpus)
        code_tokens = {t for _, code in corpus.pairs for t in code}
        index = link_api_tokens(code_tokens, adg)
        method_tokens = {t for t in code_tokens if t.startswith("m") and t[1:].isdigit()}
        assert set(index) == method_tokens
        for node_id in index.values():
            assert 0 <= node_id < adg.num_nodes

    def test_chain_length_bounds_respected(self):
        spec = SyntheticSpec(n_types=5, n_methods=12, max_chain_len=5, corpus_size=25, seed=8, min_chain_len=4)
        corpus = generate(spec)
        for _, code in corpus.pairs:
            n_statements = code.count(";")
            assert 4 <= n_statements <= 5

    def test_order_sensitive_descriptions_sorted(self):
        spec = SyntheticSpec(
            n_types=5, n_methods=12, max_chain_len=4, corpus_size=20, seed=9,
            min_chain_len=3, order_sensitive=True,
        )
        corpus = generate(spec)
        for desc, code in corpus.pairs:
            names = [t for t in desc if t.startswith("m") and t[1:].isdigit()]
            assert names == sorted(names)

    def test_invalid_specs_rejected(self):
        with pytest.raises(SyntheticGenerationError):
            generate(SyntheticSpec(0, 5, 2, 4, seed=0))
        with pytest.raises(SyntheticGenerationError):
            generate(SyntheticSpec(3, 0, 2, 4, seed=0))
        with pytest.raises(SyntheticGenerationError):
            generate(SyntheticSpec(3, 5, 2, 0, seed=0))
        with pytest.raises(SyntheticGenerationError):
            generate(SyntheticSpec(3, 5, 2, 4, seed=0, min_chain_len=3))


class TestSplit:
    def test_tiny_corpus_reuses_everything(self):
        pairs = ((("a",), ("x",)),)
        train, valid, test = split_pairs(pairs)
        assert train == valid == test == list(pairs)

    def test_large_corpus_proportions(self):
        pairs = tuple(((f"d{i}",), (f"c{i}",)) for i in range(40))
        train, valid, test = split_pairs(pairs)
        assert len(valid) == 4 and len(test) == 4 and len(train) == 32
        assert train + valid + test == list(pairs)
