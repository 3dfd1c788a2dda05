import json

import numpy as np
import pytest

from convqg.constraints import RELATIONS, Constraint, render
from convqg.toyworld import (
    CATEGORIES,
    COLORS,
    D_IN,
    ONTOLOGY,
    IngestError,
    OntologyError,
    Example,
    Scene,
    SceneObject,
    generate_world,
    ingest_jsonl,
    load_examples,
    save_examples,
    scene_to_patches,
)


class TestGenerateWorld:
    def test_deterministic(self, tmp_path):
        a = generate_world(seed=7, n_scenes=10)
        b = generate_world(seed=7, n_scenes=10)
        assert a == b
        pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_examples(a, pa)
        save_examples(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_different_seeds_differ(self):
        assert generate_world(seed=1, n_scenes=10) != generate_world(seed=2, n_scenes=10)

    def test_relations_within_the_fifteen(self):
        for ex in generate_world(seed=3, n_scenes=100):
            assert ex.constraint.payload.relation in RELATIONS

    def test_split_sizes_2000(self):
        examples = generate_world(seed=5, n_scenes=2000)
        counts = {s: sum(e.split == s for e in examples) for s in ("train", "val", "test")}
        assert counts == {"train": 1600, "val": 200, "test": 200}

    def test_answer_is_masked_entity_from_ontology(self):
        onto = {(t.subject, t.relation, t.object) for t in ONTOLOGY}
        for ex in generate_world(seed=9, n_scenes=60):
            t = ex.constraint.payload
            assert (t.subject, t.relation, t.object) in onto
            assert ex.answer == t.answer
            # question grounds the scene and quotes the relation phrase
            target_colors = {o.color for o in ex.scene.objects if o.category == t.subject}
            assert any(c in ex.question for c in target_colors)

    def test_answerable_against_scene(self):
        for ex in generate_world(seed=11, n_scenes=40):
            cats = {o.category for o in ex.scene.objects}
            assert ex.constraint.payload.subject in cats

    def test_ontology_too_small(self):
        with pytest.raises(OntologyError):
            generate_world(seed=1, n_scenes=4, ontology_size=1)

    def test_truncated_ontology_still_works(self):
        examples = generate_world(seed=1, n_scenes=12, ontology_size=9)
        cats = {ex.constraint.payload.subject for ex in examples}
        assert cats <= {"cup", "box", "book"}


class TestScene:
    def test_duplicate_pair_rejected(self):
        objs = (
            SceneObject(0, 0, "cup", "red", "small"),
            SceneObject(1, 1, "cup", "red", "large"),
        )
        with pytest.raises(ValueError, match="pair"):
            Scene(4, objs, "s")

    def test_shared_cell_rejected(self):
        objs = (
            SceneObject(0, 0, "cup", "red", "small"),
            SceneObject(0, 0, "box", "blue", "large"),
        )
        with pytest.raises(ValueError, match="cell"):
            Scene(4, objs, "s")

    def test_needs_at_least_one_object(self):
        with pytest.raises(ValueError):
            Scene(4, (), "s")


class TestsceneToPatches:
    def test_shape_and_coordinates(self):
        scene = Scene(4, (SceneObject(2, 3, "cup", "red", "small"),), "s")
        patches = scene_to_patches(scene)
        assert patches.shape == (16, D_IN)
        # unoccupied rows: zero categorical block, coordinates still set
        empty_rows = [i for i in range(16) if i != 2 * 4 + 3]
        assert np.all(patches[empty_rows, :-2] == 0)
        np.testing.assert_allclose(patches[:, -2:].max(), 1.0)
        np.testing.assert_allclose(patches[6, -2:], [1 / 3, 2 / 3], rtol=1e-6)

    def test_single_object_has_single_categorical_row(self):
        scene = Scene(4, (SceneObject(0, 0, "cup", "red", "small"),), "s")
        patches = scene_to_patches(scene)
        nonzero = np.flatnonzero(patches[:, :-2].sum(axis=1))
        assert list(nonzero) == [0]
        assert patches[0, CATEGORIES.index("cup")] == 1.0
        assert patches[0, len(CATEGORIES) + COLORS.index("red")] == 1.0

    def test_permuting_two_objects_permutes_their_rows(self):
        a = SceneObject(0, 1, "cup", "red", "small")
        b = SceneObject(3, 2, "box", "blue", "large")
        swapped_a = SceneObject(0, 1, "box", "blue", "large")
        swapped_b = SceneObject(3, 2, "cup", "red", "small")
        p1 = scene_to_patches(Scene(4, (a, b), "s"))
        p2 = scene_to_patches(Scene(4, (swapped_a, swapped_b), "s"))
        ra, rb = 0 * 4 + 1, 3 * 4 + 2
        changed = [i for i in range(16) if not np.array_equal(p1[i], p2[i])]
        assert changed == [ra, rb]
        np.testing.assert_array_equal(p1[ra, :-2], p2[rb, :-2])

    def test_injective_on_generated_corpus(self):
        examples = generate_world(seed=13, n_scenes=80)
        seen = {}
        for ex in examples:
            key = scene_to_patches(ex.scene).tobytes()
            assert key not in seen or ex.scene == seen[key]
            seen[key] = ex.scene
        assert len(seen) == len(examples)


class TestIngestion:
    def _write(self, tmp_path, lines):
        path = tmp_path / "in.jsonl"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def test_kvqg_masks_the_answer_entity(self, tmp_path):
        rec = {
            "id": "k1",
            "question": "what can a container hold",
            "answer": "hold things",
            "triplet": ["container", "CapableOf", "hold things"],
            "features": [[0.0] * D_IN] * 4,
        }
        path = self._write(tmp_path, [json.dumps(rec)])
        (ex,) = ingest_jsonl(path, "kvqg")
        assert ex.constraint.kind == "triplet"
        assert ex.constraint.payload.masked_slot == "object"
        assert render(ex.constraint) == "container is capable of [MASK]"

    def test_kvqg_subject_answer(self, tmp_path):
        rec = {
            "question": "q",
            "answer": "Container",
            "triplet": ["container", "CapableOf", "hold things"],
            "features": [[0.0] * D_IN],
        }
        (ex,) = ingest_jsonl(self._write(tmp_path, [json.dumps(rec)]), "kvqg")
        assert ex.constraint.payload.masked_slot == "subject"

    def test_kvqg_answer_matching_neither_is_error(self, tmp_path):
        rec = {
            "question": "q",
            "answer": "bench",
            "triplet": ["container", "CapableOf", "hold things"],
            "features": [[0.0] * D_IN],
        }
        with pytest.raises(IngestError, match="line 1"):
            ingest_jsonl(self._write(tmp_path, [json.dumps(rec)]), "kvqg")

    def test_vqa_answer_constraint(self, tmp_path):
        rec = {"question": "what is on the desk", "answer": "a lamp",
               "features": [[0.5] * D_IN]}
        (ex,) = ingest_jsonl(self._write(tmp_path, [json.dumps(rec)]), "vqa")
        assert ex.constraint == Constraint("answer", "a lamp")
        assert render(ex.constraint) == "The answer to the question is a lamp"

    def test_vqgcoco_five_captions_five_examples(self, tmp_path):
        rec = {
            "id": "img9",
            "questions": [f"q{i}" for i in range(5)],
            "captions": [f"caption number {i}" for i in range(5)],
            "features": [[0.0] * D_IN],
        }
        out = ingest_jsonl(self._write(tmp_path, [json.dumps(rec)]), "vqgcoco")
        assert len(out) == 5
        assert [ex.constraint.payload for ex in out] == rec["captions"]
        assert [ex.question for ex in out] == rec["questions"]
        assert len({ex.id for ex in out}) == 5

    def test_fvqa_fact_constraint(self, tmp_path):
        rec = {"question": "q", "answer": "x", "fact": "cups hold liquid",
               "features": [[0.0] * D_IN]}
        (ex,) = ingest_jsonl(self._write(tmp_path, [json.dumps(rec)]), "fvqa")
        assert ex.constraint == Constraint("fact", "cups hold liquid")

    def test_truncated_json_names_the_line(self, tmp_path):
        good = json.dumps({"question": "q", "answer": "a", "features": [[0.0] * D_IN]})
        path = self._write(tmp_path, [good, '{"question": "q", "ans'])
        with pytest.raises(IngestError, match="line 2"):
            ingest_jsonl(path, "vqa")

    def test_unknown_format_tag(self, tmp_path):
        path = self._write(tmp_path, ["{}"])
        with pytest.raises(ValueError, match="unknown format"):
            ingest_jsonl(path, "cocoqa")

    def test_pixelless_record_rejected(self, tmp_path):
        rec = {"question": "q", "answer": "a"}
        with pytest.raises(IngestError, match="neither"):
            ingest_jsonl(self._write(tmp_path, [json.dumps(rec)]), "vqa")

    def test_scene_payload_accepted(self, tmp_path):
        rec = {
            "question": "q", "answer": "a",
            "scene": {
                "grid_size": 4,
                "objects": [{"row": 0, "col": 0, "category": "cup",
                             "color": "red", "size": "small"}],
            },
        }
        (ex,) = ingest_jsonl(self._write(tmp_path, [json.dumps(rec)]), "vqa")
        assert isinstance(ex.scene, Scene)


class TestRoundTrip:
    def test_generated_corpus_roundtrip(self, tmp_path):
        examples = generate_world(seed=21, n_scenes=25)
        path = tmp_path / "corpus.jsonl"
        save_examples(examples, path)
        assert load_examples(path) == examples

    def test_features_roundtrip(self, tmp_path):
        ex = Example(
            id="f1",
            question="what is this",
            answer="",
            constraint=Constraint("caption", "a grey blob"),
            split="test",
            features=np.arange(2 * D_IN, dtype=np.float32).reshape(2, D_IN) / 7,
        )
        path = tmp_path / "f.jsonl"
        save_examples([ex], path)
        assert load_examples(path) == [ex]
