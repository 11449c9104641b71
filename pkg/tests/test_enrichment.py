from __future__ import annotations

import math

import pytest

from kgqa.enrichment import (
    ONTOLOGY_RELATIONS,
    EnrichedTriple,
    Provenance,
    associate_queries,
    associate_queries_via_provider,
    build_feature_prompt,
    build_query_filter_prompt,
    collect_entity_contexts,
    filter_and_build_structural_prompt,
    format_triple_compact,
    merge_enriched,
    parse_feature_output,
    parse_query_filter_output,
    parse_structural_output,
)
from kgqa.gateway import load_template
from kgqa.graph import EntityRef, Relation, Triple, load_graph
from kgqa.pruning import PrunedGraph, ScoredTriple
from kgqa.queries import Quadruple, build_quadruples

from sample_outputs import (
    FEATURE_EXAMPLE,
    FEATURE_EXAMPLE_TRIPLES,
    STRUCTURAL_EXAMPLE,
    STRUCTURAL_EXAMPLE_TRIPLES,
)


def triple(s, r, o, index=0):
    return Triple(EntityRef(s), Relation(r), EntityRef(o), index=index)


def pruned_from_rows(rows, k=None):
    g = load_graph(rows)
    kept = tuple(ScoredTriple(t, (0.0, 0.0, 0.0), float(len(g) - t.index)) for t in g)
    return PrunedGraph(kept=kept, k=k or len(g), source_size=len(g))


BACHELET_ROWS = [
    ["Michelle Bachelet", "people.person.nationality", "Chile"],
    ["Chile", "language.human_language.countries_spoken_in", "Spanish Language"],
]


class TestStructuralPrompt:
    def test_minimal_layout(self, ref):
        pruned = pruned_from_rows([["a", "r", "b"]])
        quads = [Quadruple("What is the r of a?", pruned.kept[0].triple)]
        prompt = filter_and_build_structural_prompt(
            pruned, quads, ["What is the r of a?"], template=load_template("structural_enrich"), provider=ref
        )
        assert "(a,r,b)-What is the r of a?" in prompt
        assert "1-hop:\n(a,r,b)\n2-hop:\n\n" in prompt

    def test_two_hop_chain_rendered(self, ref):
        pruned = pruned_from_rows(BACHELET_ROWS)
        quads = build_quadruples(load_graph(BACHELET_ROWS))
        prompt = filter_and_build_structural_prompt(
            pruned,
            quads,
            ["Who is Michelle Bachelet?"],
            template=load_template("structural_enrich"),
            provider=ref,
        )
        assert (
            "(Michelle Bachelet,people.person.nationality,Chile)"
            "->(Chile,language.human_language.countries_spoken_in,Spanish Language)"
        ) in prompt

    def test_infinite_tau_keeps_only_graph_query(self, ref):
        pruned = pruned_from_rows([["a", "r", "b"]])
        quads = [Quadruple("graph query text", pruned.kept[0].triple)]
        prompt = filter_and_build_structural_prompt(
            pruned,
            quads,
            ["graph query text", "another query"],
            template=load_template("structural_enrich"),
            provider=ref,
            tau=math.inf,
        )
        assert "(a,r,b)-graph query text\n" in prompt
        assert "another query" not in prompt.split("### Your Turn")[-1].split("1-hop:")[0]

    def test_deterministic(self, ref):
        pruned = pruned_from_rows(BACHELET_ROWS)
        quads = build_quadruples(load_graph(BACHELET_ROWS))
        args = dict(template=load_template("structural_enrich"), provider=ref)
        queries = ["Who is Michelle Bachelet?", "What language is spoken in this location?"]
        assert filter_and_build_structural_prompt(pruned, quads, queries, **args) == (
            filter_and_build_structural_prompt(pruned, quads, queries, **args)
        )

    def test_payload_cap_limits_lines(self, ref):
        rows = [[f"s{i}", f"rel_{i}", f"o{i}"] for i in range(10)]
        pruned = pruned_from_rows(rows)
        quads = build_quadruples(load_graph(rows))
        prompt = filter_and_build_structural_prompt(
            pruned, quads, ["anything"], template=load_template("structural_enrich"), provider=ref, payload_cap=3
        )
        body = prompt.split("### Your Turn")[-1]
        assert body.count("(s0,") == 2  # association line plus 1-hop line
        assert "(s5," not in body

    def test_empty_pruned_rejected(self, ref):
        pruned = PrunedGraph(kept=(), k=5, source_size=0)
        with pytest.raises(ValueError):
            filter_and_build_structural_prompt(
                pruned, [], ["q"], template=load_template("structural_enrich"), provider=ref
            )


class TestStructuralParse:
    def test_worked_example_verbatim(self):
        parse = parse_structural_output(STRUCTURAL_EXAMPLE)
        got = [(t.triple.subject.id, t.triple.relation.name, t.triple.object.id, t.provenance.value) for t in parse.triples]
        assert got == STRUCTURAL_EXAMPLE_TRIPLES
        assert parse.skipped == 0

    def test_non_triple_line_counts_as_skipped(self):
        parse = parse_structural_output("not a triple line")
        assert parse.triples == []
        assert parse.skipped == 1

    def test_whole_text_scanned_without_marker(self):
        parse = parse_structural_output("(a, r, b)\n(c, s, d)")
        assert [t.triple.key for t in parse.triples] == [("a", "r", "b"), ("c", "s", "d")]

    def test_markup_lines_ignored(self):
        parse = parse_structural_output("Final output:\n{/thought}\n(a,r,b)")
        assert parse.skipped == 0
        assert len(parse.triples) == 1

    def test_round_trip_on_formatted_triples(self):
        triples = [triple("x y", "rel_one", "z"), triple("m.01", "people.person.rel", "w", index=1)]
        text = "\n".join(format_triple_compact(t) for t in triples)
        parse = parse_structural_output(text)
        assert [t.triple.key for t in parse.triples] == [t.key for t in triples]
        assert parse.skipped == 0

    def test_default_provenance_is_similarity(self):
        parse = parse_structural_output("Final output:\n(a,r,b)")
        assert parse.triples[0].provenance is Provenance.SIMILARITY


class TestFeaturePrompt:
    def test_single_context_block(self):
        contexts = collect_entity_contexts([triple("a", "r", "b")], [["what is the r of a?"]])
        prompt = build_feature_prompt(contexts, load_template("feature_enrich"))
        assert "[$a$ context]" in prompt
        assert "relavent triple(s):(a,r,b)" in prompt
        assert "relavent user query(ies):what is the r of a?" in prompt
        assert "[/$a$ context]" in prompt

    def test_worked_example_fixture(self):
        g = load_graph(BACHELET_ROWS)
        contexts = collect_entity_contexts(list(g), [["Who is Michelle Bachelet?"], ["What language is spoken in this location?"]])
        prompt = build_feature_prompt(contexts, load_template("feature_enrich"))
        assert "(Michelle Bachelet,people.person.nationality,Chile)" in prompt
        chile_block = prompt.split("[$Chile$ context]")[1].split("[/$Chile$ context]")[0]
        assert "Who is Michelle Bachelet?" in chile_block
        assert "What language is spoken in this location?" in chile_block

    def test_entity_without_queries_allowed(self):
        contexts = collect_entity_contexts([triple("a", "r", "b")], [[]])
        prompt = build_feature_prompt(contexts, load_template("feature_enrich"))
        assert "relavent user query(ies):\n" in prompt

    def test_entities_in_first_occurrence_order(self):
        triples = [triple("a", "r", "b"), triple("b", "s", "c", index=1)]
        contexts = collect_entity_contexts(triples, [["q1"], ["q2"]])
        assert [c.entity.id for c in contexts] == ["a", "b", "c"]
        assert contexts[1].queries == ["q1", "q2"]

    def test_empty_contexts_rejected(self):
        with pytest.raises(ValueError):
            build_feature_prompt([], load_template("feature_enrich"))


class TestFeatureParse:
    def test_worked_example_verbatim(self):
        parse = parse_feature_output(FEATURE_EXAMPLE)
        got = [(t.triple.subject.id, t.triple.relation.name, t.triple.object.id) for t in parse.triples]
        assert got == FEATURE_EXAMPLE_TRIPLES
        assert all(t.provenance is Provenance.HIERARCHY for t in parse.triples)
        assert parse.rejected == 0

    def test_out_of_vocabulary_rejected(self):
        parse = parse_feature_output("{result}\n(X, made_up_relation, Y)\n{/result}")
        assert parse.triples == []
        assert parse.rejected == 1

    def test_closed_vocabulary(self):
        assert len(ONTOLOGY_RELATIONS) == 8
        for name in ONTOLOGY_RELATIONS:
            parse = parse_feature_output(f"{{result}}\n(e, {name}, o)\n{{/result}}")
            assert len(parse.triples) == 1
        parse = parse_feature_output("{result}\n(e, hypernym_isa, o)\n{/result}")
        assert parse.rejected == 1  # case-sensitive

    def test_last_result_block_wins(self):
        raw = "{result}\n(a, Hypernym_isA, b)\n{/result}\ntext\n{result}\n(c, Hypernym_isA, d)\n{/result}"
        parse = parse_feature_output(raw)
        assert [t.triple.subject.id for t in parse.triples] == ["c"]

    def test_all_parsed_triples_use_vocabulary(self):
        parse = parse_feature_output(FEATURE_EXAMPLE)
        for et in parse.triples:
            assert et.triple.relation.name in ONTOLOGY_RELATIONS


class TestAssociateQueries:
    def test_own_graph_query_always_first(self, ref):
        quads = [Quadruple("where is the amber mesa", triple("amber mesa", "located_in", "tundra"))]
        out = associate_queries(quads, ["where is the amber mesa located", "unrelated xylophone"], ref, tau=0.3)
        assert out[0][0] == "where is the amber mesa"
        assert "where is the amber mesa located" in out[0]
        assert "unrelated xylophone" not in out[0]


class TestProviderQueryFilter:
    QUADS = [
        Quadruple("what is the r of a?", triple("a", "r", "b")),
        Quadruple("what is the s of c?", triple("c", "s", "d", index=1)),
    ]
    QUERIES = ["who governs a", "what is c famous for"]

    def test_prompt_numbers_facts_and_questions(self):
        prompt = build_query_filter_prompt(self.QUADS, self.QUERIES)
        assert "1. what is the r of a?" in prompt
        assert "2. what is the s of c?" in prompt
        assert "1. who governs a" in prompt

    def test_parse_selects_by_number(self):
        out = parse_query_filter_output("1: 2\n2: none", 2, self.QUERIES)
        assert out == [["what is c famous for"], []]

    def test_parse_ignores_out_of_range(self):
        out = parse_query_filter_output("1: 9, 1\n7: 1", 2, self.QUERIES)
        assert out == [["who governs a"], []]

    def test_unusable_output_is_none(self):
        assert parse_query_filter_output("no structure here", 2, self.QUERIES) is None

    def test_provider_association_prepends_graph_query(self):
        from helpers import stub_gateway

        gateway = stub_gateway({"query_filter": {"q1": "1: 1\n2: none"}})
        out = associate_queries_via_provider(self.QUADS, self.QUERIES, gateway, question_id="q1")
        assert out == [["what is the r of a?", "who governs a"], ["what is the s of c?"]]

    def test_unusable_provider_output_returns_none(self):
        from helpers import stub_gateway

        gateway = stub_gateway({"query_filter": {"q1": "garbled"}})
        assert associate_queries_via_provider(self.QUADS, self.QUERIES, gateway, question_id="q1") is None

    def test_precomputed_associations_override_embedder(self, ref):
        pruned = pruned_from_rows([["a", "r", "b"]])
        quads = [Quadruple("own query", pruned.kept[0].triple)]
        prompt = filter_and_build_structural_prompt(
            pruned,
            quads,
            ["never matched"],
            template=load_template("structural_enrich"),
            provider=ref,
            associations=[["own query", "hand picked query"]],
        )
        assert "(a,r,b)-own query-hand picked query" in prompt

    def test_association_length_mismatch_rejected(self, ref):
        pruned = pruned_from_rows([["a", "r", "b"]])
        quads = [Quadruple("own query", pruned.kept[0].triple)]
        with pytest.raises(ValueError, match="associations"):
            filter_and_build_structural_prompt(
                pruned,
                quads,
                ["q"],
                template=load_template("structural_enrich"),
                provider=ref,
                associations=[],
            )


class TestMerge:
    def test_duplicate_of_base_dropped(self):
        pruned = pruned_from_rows([["a", "r", "b"]])
        generated = [EnrichedTriple(triple("a", "r", "b"), Provenance.SIMILARITY)]
        merged = merge_enriched(pruned, generated)
        assert merged.generated == []

    def test_duplicate_generated_kept_once(self):
        pruned = pruned_from_rows([["a", "r", "b"]])
        generated = [
            EnrichedTriple(triple("a", "s", "c"), Provenance.SIMILARITY),
            EnrichedTriple(triple("a", "s", "c"), Provenance.TRANSITIVITY),
        ]
        merged = merge_enriched(pruned, generated)
        assert len(merged.generated) == 1
        assert merged.generated[0].provenance is Provenance.SIMILARITY

    def test_disjoint_sizes_add(self):
        rows = [[f"s{i}", f"r{i}", f"o{i}"] for i in range(300)]
        pruned = pruned_from_rows(rows)
        generated = [
            EnrichedTriple(triple(f"g{i}", "Hypernym_isA", f"h{i}"), Provenance.HIERARCHY) for i in range(12)
        ]
        merged = merge_enriched(pruned, generated)
        assert len(merged.merged_triples()) == 312

    def test_base_never_removed_and_order_stable(self):
        pruned = pruned_from_rows([["a", "r", "b"], ["c", "s", "d"]])
        generated = [EnrichedTriple(triple("x", "t", "y"), Provenance.SYMMETRY)]
        merged = merge_enriched(pruned, generated)
        keys = [t.key for t in merged.merged_triples()]
        assert keys[:2] == [("a", "r", "b"), ("c", "s", "d")]
        assert keys[2] == ("x", "t", "y")
        assert len(keys) <= 2 + 1

    def test_grounded_flag(self):
        pruned = pruned_from_rows([["a", "r", "b"]])
        generated = [
            EnrichedTriple(triple("a", "is_a", "Politician"), Provenance.HIERARCHY),
            EnrichedTriple(triple("x", "t", "y"), Provenance.SIMILARITY),
        ]
        merged = merge_enriched(pruned, generated)
        assert merged.generated[0].grounded is True
        assert merged.generated[1].grounded is False

    def test_structural_sources_share_endpoints(self):
        pruned = pruned_from_rows([["a", "r", "b"], ["c", "s", "d"]])
        generated = [EnrichedTriple(triple("a", "fused", "d"), Provenance.TRANSITIVITY)]
        merged = merge_enriched(pruned, generated)
        assert merged.generated[0].source_indices == (0, 1)

    def test_hierarchy_sources_empty(self):
        pruned = pruned_from_rows([["a", "r", "b"]])
        generated = [EnrichedTriple(triple("a", "Hypernym_isA", "Thing"), Provenance.HIERARCHY)]
        merged = merge_enriched(pruned, generated)
        assert merged.generated[0].source_indices == ()

    def test_merged_indices_unique(self):
        pruned = pruned_from_rows([["a", "r", "b"], ["c", "s", "d"]])
        generated = [
            EnrichedTriple(triple("x", "t", "y"), Provenance.SIMILARITY),
            EnrichedTriple(triple("p", "u", "q"), Provenance.SYMMETRY),
        ]
        merged = merge_enriched(pruned, generated)
        indices = [t.index for t in merged.merged_triples()]
        assert len(indices) == len(set(indices))
