"""Synthetic grid-world scenes, the ground-truth question grammar, the tiny
commonsense ontology, and JSONL ingestion for the four external record shapes.

A Scene is a G x G grid of optional objects; it plays the role of the image.
Each generated example pairs one scene with a masked knowledge triplet about
one of its objects; the masked entity is the answer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .constraints import (
    Constraint,
    KnowledgeTriplet,
    constraint_from_json,
    constraint_to_json,
    template,
)
from .vocab import normalize

CATEGORIES = (
    "cup", "box", "book", "lamp", "chair", "plant",
    "bottle", "clock", "ball", "shelf", "carrot", "container",
)
COLORS = ("red", "blue", "green", "yellow", "black", "white")
SIZES = ("small", "medium", "large")

# one feature row per cell: category one-hot + color one-hot + size one-hot + (row, col)
D_IN = len(CATEGORIES) + len(COLORS) + len(SIZES) + 2

_FACTS = (
    ("cup", "UsedFor", "drinking"),
    ("cup", "MadeUpOf", "ceramic"),
    ("cup", "AtLocation", "kitchen"),
    ("cup", "HasProperty", "fragile"),
    ("box", "UsedFor", "storage"),
    ("box", "MadeUpOf", "cardboard"),
    ("box", "ReceivesAction", "folded"),
    ("box", "CapableOf", "hold things"),
    ("book", "UsedFor", "reading"),
    ("book", "MadeUpOf", "paper"),
    ("book", "AtLocation", "shelf"),
    ("book", "IsA", "printed object"),
    ("lamp", "UsedFor", "lighting"),
    ("lamp", "HasA", "bulb"),
    ("lamp", "Causes", "light"),
    ("lamp", "AtLocation", "desk"),
    ("chair", "UsedFor", "sitting"),
    ("chair", "HasA", "legs"),
    ("chair", "MadeUpOf", "wood"),
    ("chair", "ReceivesAction", "moved"),
    ("plant", "Desires", "water"),
    ("plant", "NotDesires", "drought"),
    ("plant", "CapableOf", "growing"),
    ("plant", "HasPrerequisite", "sunlight"),
    ("bottle", "UsedFor", "pouring"),
    ("bottle", "MadeUpOf", "glass"),
    ("bottle", "HasProperty", "transparent"),
    ("bottle", "CapableOf", "hold water"),
    ("clock", "UsedFor", "timekeeping"),
    ("clock", "HasA", "hands"),
    ("clock", "AtLocation", "wall"),
    ("clock", "HasSubEvent", "ticking"),
    ("ball", "UsedFor", "playing"),
    ("ball", "HasProperty", "round"),
    ("ball", "ReceivesAction", "thrown"),
    ("ball", "CapableOf", "bouncing"),
    ("shelf", "AtLocation", "wall"),
    ("shelf", "UsedFor", "storing books"),
    ("shelf", "MadeUpOf", "wood"),
    ("shelf", "HasA", "boards"),
    ("carrot", "IsA", "vegetable"),
    ("carrot", "UsedFor", "cooking"),
    ("carrot", "HasProperty", "crunchy"),
    ("carrot", "CreatedBy", "farming"),
    ("container", "CapableOf", "hold things"),
    ("container", "UsedFor", "storage"),
    ("container", "MadeUpOf", "plastic"),
    ("container", "DefinedAs", "vessel"),
)

ONTOLOGY = tuple(KnowledgeTriplet(s, r, o) for s, r, o in _FACTS)


class OntologyError(ValueError):
    pass


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class SceneObject:
    row: int
    col: int
    category: str
    color: str
    size: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category: {self.category!r}")
        if self.color not in COLORS:
            raise ValueError(f"unknown color: {self.color!r}")
        if self.size not in SIZES:
            raise ValueError(f"unknown size: {self.size!r}")


@dataclass(frozen=True)
class Scene:
    grid_size: int
    objects: tuple
    scene_id: str

    def __post_init__(self):
        g = self.grid_size
        if g < 1:
            raise ValueError("grid_size must be positive")
        if not 1 <= len(self.objects) <= g * g:
            raise ValueError(f"scene must hold between 1 and {g * g} objects")
        cells = set()
        pairs = set()
        for o in self.objects:
            if not (0 <= o.row < g and 0 <= o.col < g):
                raise ValueError(f"object at ({o.row},{o.col}) is outside the {g}x{g} grid")
            if (o.row, o.col) in cells:
                raise ValueError(f"two objects share cell ({o.row},{o.col})")
            cells.add((o.row, o.col))
            if (o.category, o.color) in pairs:
                raise ValueError(f"duplicate (category,color) pair {o.category}/{o.color}")
            pairs.add((o.category, o.color))

    def objects_row_major(self) -> list[SceneObject]:
        return sorted(self.objects, key=lambda o: (o.row, o.col))


@dataclass
class Example:
    id: str
    question: str
    answer: str
    constraint: Constraint
    split: str
    scene: Scene | None = None
    features: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, Example):
            return NotImplemented
        if (self.id, self.question, self.answer, self.constraint, self.split, self.scene) != (
            other.id, other.question, other.answer, other.constraint, other.split, other.scene
        ):
            return False
        if (self.features is None) != (other.features is None):
            return False
        return self.features is None or np.array_equal(self.features, other.features)


def scene_to_patches(scene: Scene, dtype=np.float32) -> np.ndarray:
    """One feature row per grid cell in row-major order.

    Occupied cells carry category/color/size one-hots; empty cells a zero
    categorical block. Both carry normalized (row, col) coordinates.
    """
    g = scene.grid_size
    denom = float(max(g - 1, 1))
    out = np.zeros((g * g, D_IN), dtype=dtype)
    for idx in range(g * g):
        r, c = divmod(idx, g)
        out[idx, -2] = r / denom
        out[idx, -1] = c / denom
    n_cat, n_col = len(CATEGORIES), len(COLORS)
    for o in scene.objects:
        idx = o.row * g + o.col
        out[idx, CATEGORIES.index(o.category)] = 1.0
        out[idx, n_cat + COLORS.index(o.color)] = 1.0
        out[idx, n_cat + n_col + SIZES.index(o.size)] = 1.0
    return out


def position_phrase(obj: SceneObject, grid_size: int) -> str:
    """Coarse grid quadrant, e.g. "top left"."""
    vert = "top" if obj.row < grid_size / 2 else "bottom"
    horiz = "left" if obj.col < grid_size / 2 else "right"
    return f"{vert} {horiz}"


def _gt_question(target: SceneObject, triplet: KnowledgeTriplet, grid_size: int) -> str:
    """Grammar for ground-truth questions: a scene-grounded referring
    expression (size, color, grid quadrant: all readable only off the image)
    plus the relation phrase of the constraint. The visual attributes keep
    ground-truth questions well outside the default contrastive margin of
    both single-modality branches."""
    phrase = template(triplet.relation)
    where = position_phrase(target, grid_size)
    if triplet.masked_slot == "object":
        return f"the {target.size} {target.color} {triplet.subject} in the {where} {phrase} what"
    return f"which {target.size} {target.color} thing in the {where} {phrase} {triplet.object}"


def generate_world(seed: int, n_scenes: int, ontology_size: int | None = None,
                   grid_size: int = 4) -> list[Example]:
    """Deterministic synthetic corpus: one example per scene, split 80/10/10
    by scene index so scenes never straddle splits."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    onto = ONTOLOGY[:ontology_size] if ontology_size is not None else ONTOLOGY
    facts_by_cat: dict[str, list[KnowledgeTriplet]] = {}
    for t in onto:
        facts_by_cat.setdefault(t.subject, []).append(t)
    covered = [c for c in CATEGORIES if c in facts_by_cat]
    if len(covered) < 2:
        raise OntologyError(
            f"ontology with {len(onto)} facts covers {len(covered)} categories; "
            "need at least 2 for unambiguous scenes"
        )

    rng = np.random.default_rng(seed)
    train_end = (n_scenes * 8) // 10
    val_end = (n_scenes * 9) // 10
    max_objects = min(6, grid_size * grid_size, len(covered))
    examples = []
    for i in range(n_scenes):
        n_obj = int(rng.integers(1, max_objects + 1))
        cat_idx = rng.choice(len(covered), size=n_obj, replace=False)
        cells = rng.choice(grid_size * grid_size, size=n_obj, replace=False)
        color_idx = rng.integers(0, len(COLORS), size=n_obj)
        size_idx = rng.integers(0, len(SIZES), size=n_obj)
        objects = tuple(
            SceneObject(
                row=int(cells[j]) // grid_size,
                col=int(cells[j]) % grid_size,
                category=covered[int(cat_idx[j])],
                color=COLORS[int(color_idx[j])],
                size=SIZES[int(size_idx[j])],
            )
            for j in range(n_obj)
        )
        scene = Scene(grid_size=grid_size, objects=objects, scene_id=f"scene-{i:05d}")

        target = objects[int(rng.integers(0, n_obj))]
        facts = facts_by_cat[target.category]
        base = facts[int(rng.integers(0, len(facts)))]
        slot = "object" if rng.random() < 0.7 else "subject"
        triplet = base.with_mask(slot)
        split = "train" if i < train_end else ("val" if i < val_end else "test")
        examples.append(
            Example(
                id=scene.scene_id,
                question=_gt_question(target, triplet, grid_size),
                answer=triplet.answer,
                constraint=Constraint("triplet", triplet),
                split=split,
                scene=scene,
            )
        )
    return examples


def _scene_to_json(scene: Scene) -> dict:
    return {
        "grid_size": scene.grid_size,
        "scene_id": scene.scene_id,
        "objects": [
            {"row": o.row, "col": o.col, "category": o.category,
             "color": o.color, "size": o.size}
            for o in scene.objects
        ],
    }


def _scene_from_json(obj: dict) -> Scene:
    return Scene(
        grid_size=obj["grid_size"],
        objects=tuple(
            SceneObject(o["row"], o["col"], o["category"], o["color"], o["size"])
            for o in obj["objects"]
        ),
        scene_id=obj.get("scene_id", ""),
    )


def save_examples(examples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            rec = {
                "id": ex.id,
                "question": ex.question,
                "answer": ex.answer,
                "constraint": constraint_to_json(ex.constraint),
                "split": ex.split,
            }
            if ex.scene is not None:
                rec["scene"] = _scene_to_json(ex.scene)
            if ex.features is not None:
                rec["features"] = [[float(v) for v in row] for row in ex.features]
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_examples(path) -> list[Example]:
    """Read the native JSONL schema written by save_examples / gen-data."""
    out = []
    for line_no, obj in _iter_jsonl(path):
        try:
            out.append(
                Example(
                    id=obj["id"],
                    question=obj["question"],
                    answer=obj.get("answer", ""),
                    constraint=constraint_from_json(obj["constraint"]),
                    split=obj.get("split", "test"),
                    scene=_scene_from_json(obj["scene"]) if "scene" in obj else None,
                    features=_features_from_json(obj)
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise IngestError(f"line {line_no}: {exc}") from exc
    return out


def _features_from_json(obj):
    if "features" not in obj:
        return None
    return np.asarray(obj["features"], dtype=np.float32)


def _iter_jsonl(path):
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"line {line_no}: invalid JSON: {exc.msg}") from exc


def _pixelless_payload(obj, line_no):
    scene = _scene_from_json(obj["scene"]) if "scene" in obj else None
    feats = _features_from_json(obj)
    if scene is None and feats is None:
        raise IngestError(f"line {line_no}: record carries neither a scene nor raw features")
    return scene, feats


def _ingest_kvqg(obj, line_no):
    triplet = obj["triplet"]
    if not (isinstance(triplet, (list, tuple)) and len(triplet) == 3):
        raise IngestError(f"line {line_no}: triplet must be [subject, relation, object]")
    answer = obj["answer"]
    subject, relation, entity = triplet
    norm_answer = normalize(str(answer))
    if norm_answer == normalize(str(entity)):
        slot = "object"
    elif norm_answer == normalize(str(subject)):
        slot = "subject"
    else:
        raise IngestError(f"line {line_no}: answer {answer!r} matches neither triplet entity")
    scene, feats = _pixelless_payload(obj, line_no)
    kt = KnowledgeTriplet(str(subject), str(relation), str(entity), masked_slot=slot)
    return [Example(
        id=str(obj.get("id", f"line-{line_no}")),
        question=obj["question"],
        answer=str(answer),
        constraint=Constraint("triplet", kt),
        split=obj.get("split", "test"),
        scene=scene,
        features=feats,
    )]


def _ingest_vqa(obj, line_no):
    scene, feats = _pixelless_payload(obj, line_no)
    return [Example(
        id=str(obj.get("id", f"line-{line_no}")),
        question=obj["question"],
        answer=str(obj["answer"]),
        constraint=Constraint("answer", str(obj["answer"])),
        split=obj.get("split", "test"),
        scene=scene,
        features=feats,
    )]


def _ingest_vqgcoco(obj, line_no):
    captions = obj.get("captions")
    if captions is None:
        captions = [obj["caption"]]
    questions = obj.get("questions")
    if questions is None:
        questions = [obj["question"]]
    if not captions or not questions:
        raise IngestError(f"line {line_no}: vqgcoco record needs captions and questions")
    scene, feats = _pixelless_payload(obj, line_no)
    base_id = str(obj.get("id", f"line-{line_no}"))
    out = []
    for i, caption in enumerate(captions):
        out.append(Example(
            id=f"{base_id}-{i}" if len(captions) > 1 else base_id,
            question=questions[min(i, len(questions) - 1)],
            answer=str(obj.get("answer", "")),
            constraint=Constraint("caption", str(caption)),
            split=obj.get("split", "test"),
            scene=scene,
            features=feats,
        ))
    return out


def _ingest_fvqa(obj, line_no):
    scene, feats = _pixelless_payload(obj, line_no)
    return [Example(
        id=str(obj.get("id", f"line-{line_no}")),
        question=obj["question"],
        answer=str(obj.get("answer", "")),
        constraint=Constraint("fact", str(obj["fact"])),
        split=obj.get("split", "test"),
        scene=scene,
        features=feats,
    )]


_INGESTERS = {
    "kvqg": _ingest_kvqg,
    "vqa": _ingest_vqa,
    "vqgcoco": _ingest_vqgcoco,
    "fvqa": _ingest_fvqa,
}


def ingest_jsonl(path, format: str) -> list[Example]:
    """Map one of the four external record shapes onto Examples."""
    try:
        ingester = _INGESTERS[format]
    except KeyError:
        raise ValueError(
            f"unknown format tag {format!r}; expected one of {sorted(_INGESTERS)}"
        ) from None
    out = []
    for line_no, obj in _iter_jsonl(path):
        try:
            out.extend(ingester(obj, line_no))
        except IngestError:
            raise
        except (KeyError, ValueError, TypeError) as exc:
            missing = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
            raise IngestError(f"line {line_no}: {missing}") from exc
    return out
