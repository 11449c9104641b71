"""Deterministic offline fixtures: a mini dataset plus a matching stub script.

Each question is built around a two-hop chain (topic -> mid -> answer) buried
in noise triples, and the stub script supplies well-formed provider outputs
for all four pipeline calls, so a full run needs no network and always lands
on the gold answers. Usable from tests and as a CLI demo:

    python -m kgqa.fixtures demo_dir
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from random import Random

from .pipeline import DatasetRecord, write_dataset

_TOPICS = (
    "Avery Lindqvist", "Borland Mills", "Cedar Rapids Guild", "Dahlia Okafor",
    "Evander Crane", "Farrow Institute", "Glenhaven City", "Harriet Boyle",
    "Ilya Petrovna", "Jasper Whitlock", "Kestrel Labs", "Lumen Harbor",
    "Mira Castellanos", "Northgate Assembly", "Ondine Farragut", "Pelham Works",
    "Quill Observatory", "Rosalind Mercer", "Silverbrook Town", "Tobias Renn",
)

_MIDS = (
    "Westdale Province", "the Ministry of Tides", "Oakum Valley", "the Copper Senate",
    "Hazel County", "the Argent Chamber", "Drift Hollow", "the Maritime Office",
    "Fennel Reach", "the Lantern Bureau", "Moss Landing", "the Granite Council",
    "Pike Crossing", "the Amber Syndicate", "Reed Flats", "the Beacon Authority",
    "Sable Ridge", "the Willow Commission", "Thorn Basin", "the Ivory Assembly",
)

_ANSWERS = (
    "Keldor Franc", "Solara Dinar", "Veridian Pound", "Crescent Mark",
    "Operetta House", "Galvani Engine", "Tessellate Bridge", "Halcyon Reservoir",
    "Dr. Imara Voss", "Prof. Callum Reyes", "Capt. Nia Okonkwo", "Sir Alden Pryce",
    "Meridian Charter", "Vesper Accord", "Aurora Statute", "Cobalt Treaty",
    "Juniper Square", "Falcon Terrace", "Ember Commons", "Winnow Court",
)

_NOISE_ENTITIES = (
    "river delta", "grain silo", "observatory dome", "printing press", "tram depot",
    "salt marsh", "clock tower", "cannery row", "glass works", "harbor master",
    "signal house", "north quarry", "tide pool", "mill race", "survey post",
    "beacon hill", "ferry slip", "stone arch", "water tower", "switch yard",
)

_NOISE_RELATIONS = (
    "adjacent_to", "founded_in", "painted_by", "weighs", "catalogued_as",
    "sponsored_by", "visible_from", "renovated_in", "measured_at", "archived_under",
    "sells", "borders.with", "built_from", "maps_to", "hosted.event",
)

_HOP1_RELATIONS = (
    "governs_region", "presides_over", "administers_district", "oversees_territory",
)

_HOP2_RELATIONS = (
    "official_currency", "ceremonial_anthem", "chief_scientist", "founding_charter",
)


def build_mini_dataset(
    n_questions: int = 20,
    seed: int = 7,
    min_triples: int = 30,
    max_triples: int = 300,
) -> tuple[list[DatasetRecord], dict[str, dict[str, str]]]:
    """Hand-shaped records with graphs of min..max triples and a full stub script."""
    rng = Random(seed)
    records: list[DatasetRecord] = []
    script: dict[str, dict[str, str]] = {
        "query_structuring": {},
        "structural_enrich": {},
        "feature_enrich": {},
        "question_answering": {},
    }
    for i in range(n_questions):
        qid = f"q{i + 1:03d}"
        topic = _TOPICS[i % len(_TOPICS)]
        mid = _MIDS[i % len(_MIDS)]
        answers = [_ANSWERS[i % len(_ANSWERS)]]
        if i % 4 == 0:
            answers.append(_ANSWERS[(i + 7) % len(_ANSWERS)])
        r1 = _HOP1_RELATIONS[i % len(_HOP1_RELATIONS)]
        r2 = _HOP2_RELATIONS[i % len(_HOP2_RELATIONS)]
        question = f"What is the {r2.replace('_', ' ')} of the place that {topic} {r1.replace('_', ' ').replace('governs region', 'governs')}?"

        triples: list[tuple[str, str, str]] = [(topic, r1, mid)]
        triples.extend((mid, r2, answer) for answer in answers)
        seen = set(triples)
        # confusables reuse the answer-path relations from the topic entity, so
        # they outscore the answer triples and coverage genuinely grows with k
        for j in range(8 + (i * 5) % 14):
            noise_object = f"{rng.choice(_NOISE_ENTITIES)} {rng.randrange(100)}"
            for confusable in ((topic, r2, noise_object), (topic, r1, noise_object) if j % 3 == 0 else None):
                if confusable and confusable not in seen:
                    seen.add(confusable)
                    triples.append(confusable)
        size = max(len(triples), min_triples + (i * 53) % (max_triples - min_triples + 1))
        attempts = 0
        while len(triples) < size and attempts < size * 20:
            attempts += 1
            kind = rng.random()
            if kind < 0.3:
                s = topic
            elif kind < 0.5:
                s = mid
            else:
                s = f"{rng.choice(_NOISE_ENTITIES)} {rng.randrange(100)}"
            t = (s, rng.choice(_NOISE_RELATIONS), f"{rng.choice(_NOISE_ENTITIES)} {rng.randrange(100)}")
            if t in seen:
                continue
            seen.add(t)
            triples.append(t)
        rng.shuffle(triples)

        records.append(
            DatasetRecord(
                id=qid,
                question=question,
                answers=tuple(answers),
                topic_entities=(topic,),
                graph=tuple(triples),
            )
        )

        r1_text = r1.replace("_", " ")
        r2_text = r2.replace("_", " ")
        script["query_structuring"][qid] = (
            f"{question}\n"
            f"-What place does {topic} {r1_text.split()[0]}?\n"
            f"--Who is {topic}?\n"
            f"--Which place has {r1_text}?\n"
            f"-What is the {r2_text} of this place?\n"
            f"--What does {r2_text} mean?\n"
        )
        generated = "\n".join(
            [f"({topic},{r1}_{r2},{answer})" for answer in answers]
            + [f"({mid},{r1}_reversed_by,{topic})"]
        )
        script["structural_enrich"][qid] = (
            "{thought}\n"
            "step 2:\n"
            f"Using the similarity property on the 1-hop subgraph ({topic},{r1},{mid}).\n"
            "Using the symmetry property, the reversed relation applies:\n"
            f"({mid},{r1}_reversed_by,{topic})\n"
            "step 3:\n"
            "Using the transitivity property on the 2-hop subgraph:\n"
            + "\n".join(f"({topic},{r1}_{r2},{answer})" for answer in answers)
            + "\nstep 4:\nFinal output:\n"
            + generated
            + "\n{/thought}\n"
        )
        script["feature_enrich"][qid] = (
            "{result}\n"
            f"({topic}, Hypernym_isA, Administrator)\n"
            f"({mid}, Hypernym_isA, Jurisdiction)\n"
            + "\n".join(f"({answer}, Induction_belongTo, {r2_text} registry)" for answer in answers)
            + "\n{/result}\n"
        )
        script["question_answering"][qid] = (
            "{thoughts & reason}\n"
            f"First, {topic} {r1_text} {mid}. Second, the {r2_text} of {mid} is "
            + " and ".join(answers)
            + ".\n{/thoughts & reason}\n"
            "Final answer:\n" + "<SEP>".join(answers) + "\n"
        )
    return records, script


def write_fixture(out_dir: str | Path, **kwargs) -> dict[str, Path]:
    """Write dataset.jsonl, stub_script.json, and a ready-to-run config.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, script = build_mini_dataset(**kwargs)
    dataset_path = write_dataset(records, out_dir / "dataset.jsonl")
    script_path = out_dir / "stub_script.json"
    script_path.write_text(json.dumps(script, ensure_ascii=False, indent=1, sort_keys=True), encoding="utf-8")
    config_path = out_dir / "config.json"
    config_path.write_text(
        json.dumps({"llm": {"kind": "stub", "script": str(script_path)}}, indent=1),
        encoding="utf-8",
    )
    return {"dataset": dataset_path, "script": script_path, "config": config_path}


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "fixture"
    paths = write_fixture(target)
    for name, path in paths.items():
        print(f"{name}: {path}")
