"""Seeded synthetic scenes for spatial question answering at desk scale.

Every scene is a small canvas of K labeled text boxes: a planted
three-level nest (outer > mid > inner, used by the containment
questions) plus K-3 free boxes kept clear of any containment or heavy
overlap with the rest. The single question template is

    which text is <relation> of <anchor-label>

with relation drawn from {right, left, above, below, contains, inside}.
Ground truth comes from the same pairwise classifier the model's graph
uses, so generator and graph can never disagree. A scene is accepted
only if exactly one box satisfies the queried relation to the anchor and
exactly one (different) box satisfies the opposite relation; the decoy
is what a model fed a reversed graph will latch onto.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import BoundingBox, RelationType, build_graph

LABELS = (
    "ba", "ce", "di", "fo", "gu", "ha", "je", "ki", "lo", "mu",
    "na", "pe", "ri", "so", "tu", "va", "wi", "xo", "yu", "za",
)

RELATION_WORDS = ("right", "left", "above", "below", "contains", "inside")

OPPOSITE_WORD = {"right": "left", "left": "right", "above": "below",
                 "below": "above", "contains": "inside", "inside": "contains"}

# relation word -> accepted labels of the edge anchor -> candidate
WORD_TO_EDGES = {
    "right": (RelationType.DIR_8, RelationType.DIR_1),
    "below": (RelationType.DIR_2, RelationType.DIR_3),
    "left": (RelationType.DIR_4, RelationType.DIR_5),
    "above": (RelationType.DIR_6, RelationType.DIR_7),
    # "which text contains X": candidate contains anchor, so the edge
    # anchor -> candidate reads inside; and vice versa
    "contains": (RelationType.INSIDE,),
    "inside": (RelationType.CONTAINS,),
}

QUESTION_WORDS = ("which", "text", "is", "of")


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneParams:
    image_width: float = 100.0
    image_height: float = 100.0
    k_min: int = 4
    k_max: int = 8
    feature_dim: int = 16
    max_retries: int = 500

    def __post_init__(self):
        # the containment nest alone occupies three boxes
        if self.k_min < 3:
            raise ValueError(f"k_min must be >= 3, got {self.k_min}")
        if self.k_max < self.k_min:
            raise ValueError(f"k_max {self.k_max} < k_min {self.k_min}")


@dataclass
class SyntheticScene:
    image_width: float
    image_height: float
    boxes: list
    labels: list
    relation: str
    anchor: str
    answer: str
    question_id: int = 0
    feature_dim: int = 16

    @property
    def question(self) -> str:
        return f"which text is {self.relation} of {self.anchor}"

    @property
    def question_tokens(self) -> list:
        return ["which", "text", "is", self.relation, "of", self.anchor]

    @property
    def k(self) -> int:
        return len(self.boxes)

    def graph(self):
        return build_graph(self.boxes, self.image_width, self.image_height)

    def to_json(self) -> str:
        return json.dumps({
            "image_width": self.image_width,
            "image_height": self.image_height,
            "objects": [],
            "ocr": [{"box": list(b.as_tuple()), "text": t,
                     "feature": label_feature(t, self.feature_dim).tolist()}
                    for b, t in zip(self.boxes, self.labels)],
            "question": self.question,
            "answer": self.answer,
            "question_id": self.question_id,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "SyntheticScene":
        d = json.loads(line)
        tokens = d["question"].split()
        return cls(
            image_width=d["image_width"], image_height=d["image_height"],
            boxes=[BoundingBox(*o["box"]) for o in d["ocr"]],
            labels=[o["text"] for o in d["ocr"]],
            relation=tokens[3], anchor=tokens[5], answer=d["answer"],
            question_id=d.get("question_id", 0),
            feature_dim=len(d["ocr"][0]["feature"]) if d["ocr"] else 16,
        )


_FEATURE_CACHE: dict[tuple[str, int], np.ndarray] = {}


def label_feature(label: str, dim: int = 16) -> np.ndarray:
    """Stable per-label feature vector, independent of generation order."""
    key = (label, dim)
    if key not in _FEATURE_CACHE:
        digest = hashlib.md5(label.encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        _FEATURE_CACHE[key] = rng.standard_normal(dim).round(3)
    return _FEATURE_CACHE[key]


def _round_box(x0, y0, x1, y1) -> BoundingBox:
    return BoundingBox(round(float(x0), 2), round(float(y0), 2),
                       round(float(x1), 2), round(float(y1), 2))


def _place_nest(rng, params: SceneParams):
    """Outer > mid > inner boxes with clear margins."""
    w = rng.uniform(36.0, 52.0)
    h = rng.uniform(36.0, 52.0)
    x0 = rng.uniform(0.0, params.image_width - w)
    y0 = rng.uniform(0.0, params.image_height - h)
    outer = _round_box(x0, y0, x0 + w, y0 + h)

    def shrink(box, lo, hi):
        bw = box.width * rng.uniform(lo, hi)
        bh = box.height * rng.uniform(lo, hi)
        bx = rng.uniform(box.x_min + 1.0, box.x_max - bw - 1.0)
        by = rng.uniform(box.y_min + 1.0, box.y_max - bh - 1.0)
        return _round_box(bx, by, bx + bw, by + bh)

    mid = shrink(outer, 0.45, 0.6)
    inner = shrink(mid, 0.3, 0.45)
    return [outer, mid, inner]


def _place_free(rng, params: SceneParams, existing) -> BoundingBox | None:
    """A box that neither contains nor sits inside nor heavily overlaps
    anything already placed."""
    for _ in range(60):
        w = rng.uniform(6.0, 18.0)
        h = rng.uniform(6.0, 18.0)
        x0 = rng.uniform(0.0, params.image_width - w)
        y0 = rng.uniform(0.0, params.image_height - h)
        box = _round_box(x0, y0, x0 + w, y0 + h)
        ok = all(not box.contains(o) and not o.contains(box) and box.iou(o) < 0.5
                 for o in existing)
        if ok:
            return box
    return None


def _pick_question(rng, scene_boxes, relation, width, height):
    """(anchor_index, answer_index) if some anchor has a unique satisfier
    and a unique, different opposite satisfier, else None."""
    g = build_graph(scene_boxes, width, height)
    want = WORD_TO_EDGES[relation]
    decoy = WORD_TO_EDGES[OPPOSITE_WORD[relation]]
    options = []
    for a in range(len(scene_boxes)):
        row = g.relation[a]
        hits = [i for i in range(len(scene_boxes)) if i != a and row[i] in want]
        opps = [i for i in range(len(scene_boxes)) if i != a and row[i] in decoy]
        if len(hits) == 1 and len(opps) == 1 and hits[0] != opps[0]:
            options.append((a, hits[0]))
    if not options:
        return None
    return options[rng.integers(len(options))]


def generate_scene(rng, params: SceneParams, question_id: int = 0) -> SyntheticScene:
    relation = RELATION_WORDS[rng.integers(len(RELATION_WORDS))]
    for _ in range(params.max_retries):
        k = int(rng.integers(params.k_min, params.k_max + 1))
        boxes = _place_nest(rng, params)
        while len(boxes) < k:
            free = _place_free(rng, params, boxes)
            if free is None:
                break
            boxes.append(free)
        if len(boxes) < k:
            continue
        picked = _pick_question(rng, boxes, relation,
                                params.image_width, params.image_height)
        if picked is None:
            continue
        anchor_idx, answer_idx = picked
        labels = [str(w) for w in rng.choice(LABELS, size=k, replace=False)]
        return SyntheticScene(
            image_width=params.image_width, image_height=params.image_height,
            boxes=boxes, labels=labels, relation=relation,
            anchor=labels[anchor_idx], answer=labels[answer_idx],
            question_id=question_id, feature_dim=params.feature_dim)
    raise GenerationError(
        f"no scene with a unique '{relation}' answer after {params.max_retries} tries")


def generate_dataset(n: int, params: SceneParams, seed: int) -> list:
    """n scenes, deterministic per seed (each scene gets a derived stream)."""
    if n < 1:
        raise ValueError("need n >= 1")
    scenes = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        scenes.append(generate_scene(rng, params, question_id=i))
    return scenes


def write_dataset(scenes, path) -> None:
    with open(path, "w") as fh:
        for s in scenes:
            fh.write(s.to_json() + "\n")


def read_dataset(path) -> list:
    with open(path) as fh:
        return [SyntheticScene.from_json(line) for line in fh if line.strip()]


class Vocabulary:
    """Joint token list: specials, question words, then the label alphabet."""

    def __init__(self):
        from .model import SPECIAL_TOKENS
        self.tokens = list(SPECIAL_TOKENS) + list(QUESTION_WORDS) \
            + list(RELATION_WORDS) + list(LABELS)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, words) -> list:
        unk = self.index["<unk>"]
        return [self.index.get(w, unk) for w in words]

    def word(self, i: int) -> str:
        return self.tokens[i]
