"""Answer-quality metrics: VQA soft accuracy and ANLS.

Strings are compared after normalization: lowercase, trimmed, internal
whitespace collapsed to single spaces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def normalize_answer(s: str) -> str:
    return " ".join(s.lower().split())


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance, unit costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1,
                           cur[j - 1] + 1,
                           prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def anls(pred: str, gt) -> float:
    """Normalized Levenshtein similarity, truncated below 0.5 to zero.

    gt may be one string or several; the best reference counts. Two empty
    strings score 1 (distance 0 over nothing to get wrong).
    """
    refs = [gt] if isinstance(gt, str) else list(gt)
    best = 0.0
    p = normalize_answer(pred)
    for ref in refs:
        r = normalize_answer(ref)
        longest = max(len(p), len(r))
        s = 1.0 if longest == 0 else 1.0 - edit_distance(p, r) / longest
        best = max(best, s)
    return best if best >= 0.5 else 0.0


def vqa_accuracy(pred: str, answers) -> float:
    """min(matches / 3, 1) over the (typically 10) reference answers."""
    if not answers:
        raise ValueError("vqa_accuracy needs at least one reference answer")
    p = normalize_answer(pred)
    matches = sum(normalize_answer(a) == p for a in answers)
    return min(matches / 3.0, 1.0)


@dataclass
class EvalRecord:
    question_id: int
    prediction: str
    references: list = field(default_factory=list)
    score_vqa: float = 0.0
    score_anls: float = 0.0

    def to_dict(self) -> dict:
        return {"id": self.question_id, "prediction": self.prediction,
                "score_vqa": self.score_vqa, "score_anls": self.score_anls}


def score_records(records) -> dict:
    """Per-question scores plus aggregate means, JSON-ready."""
    for r in records:
        r.score_vqa = vqa_accuracy(r.prediction, r.references)
        r.score_anls = anls(r.prediction, r.references)
    return {
        "questions": [r.to_dict() for r in records],
        "mean_vqa_accuracy": float(np.mean([r.score_vqa for r in records])) if records else 0.0,
        "mean_anls": float(np.mean([r.score_anls for r in records])) if records else 0.0,
    }


def results_json(records) -> str:
    return json.dumps(score_records(records), sort_keys=True, indent=2)
