"""Per-head additive attention biases derived from the spatial graph.

A sequence is laid out as [question | objects | ocr | answers]. Objects
and ocr tokens carry boxes and participate in the spatial graph; between
any other pair of positions only the implicit everything-attends relation
holds. Each head h is assigned a subset T^h of relation labels (always
including the implicit one), and the bias entry for (i, j) is beta[h, t]
(zero by default) when the relation t from i to j is in T^h, else -inf.

Spatial layers additionally silence question rows: their bias is -inf
everywhere, attention output for them is exactly zero, and the model
carries their representations through the whole layer unchanged. Answer
rows are causal in every layer and are never spatially restricted; no
row outside the answer block ever reaches an answer column.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NEG_INF, Tensor, make_op
from .geometry import N_SPATIAL_TYPES, RELATION_NAMES, RelationType, SpatialGraph


@dataclass(frozen=True)
class ModalityLayout:
    n_ques: int
    n_obj: int
    n_ocr: int
    n_ans: int

    def __post_init__(self):
        for name in ("n_ques", "n_obj", "n_ocr", "n_ans"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def n_region(self) -> int:
        return self.n_obj + self.n_ocr

    @property
    def n_context(self) -> int:
        return self.n_ques + self.n_region

    @property
    def total(self) -> int:
        return self.n_context + self.n_ans

    @property
    def question(self) -> slice:
        return slice(0, self.n_ques)

    @property
    def objects(self) -> slice:
        return slice(self.n_ques, self.n_ques + self.n_obj)

    @property
    def ocr(self) -> slice:
        return slice(self.n_ques + self.n_obj, self.n_context)

    @property
    def region(self) -> slice:
        return slice(self.n_ques, self.n_context)

    @property
    def answers(self) -> slice:
        return slice(self.n_context, self.total)


@dataclass(frozen=True)
class HeadAssignment:
    """Which relation labels each head may look along.

    owned[h, t] says label t is in T^h; the implicit label is always owned.
    """

    n_heads: int
    context_size: int
    owned: np.ndarray = field(repr=False)

    def types_for_head(self, h: int) -> frozenset:
        return frozenset(int(t) for t in np.nonzero(self.owned[h])[0])

    def describe(self) -> list[list[str]]:
        return [[RELATION_NAMES[t] for t in sorted(self.types_for_head(h))]
                for h in range(self.n_heads)]


def assign_head_relations(n_heads: int, context_size: int) -> HeadAssignment:
    """Head h owns spatial labels h, h+1, ..., h+c-1 (mod 12) plus implicit.

    With 12 heads every label is covered for any c >= 1; fewer heads or a
    small c can leave labels unused, which only weakens the model, so that
    case warns instead of raising.
    """
    if n_heads < 1:
        raise ValueError("need at least one head")
    if not (1 <= context_size <= N_SPATIAL_TYPES):
        raise ValueError(
            f"context size must be in [1, {N_SPATIAL_TYPES}], got {context_size}")
    owned = np.zeros((n_heads, N_SPATIAL_TYPES + 2), dtype=bool)
    owned[:, RelationType.IMPLICIT] = True
    for h in range(n_heads):
        for m in range(context_size):
            owned[h, (h + m) % N_SPATIAL_TYPES] = True
    covered = owned[:, :N_SPATIAL_TYPES].any(axis=0)
    if not covered.all():
        missing = [RELATION_NAMES[t] for t in np.nonzero(~covered)[0]]
        warnings.warn(f"no head owns relation labels: {', '.join(missing)}", stacklevel=2)
    return HeadAssignment(n_heads=n_heads, context_size=context_size, owned=owned)


@dataclass
class AttentionBias:
    """Additive bias, values[h, i, j] in {finite beta, -inf}."""

    values: np.ndarray
    layout: ModalityLayout
    spatial: bool

    @property
    def n_heads(self) -> int:
        return self.values.shape[0]

    def allowed(self) -> np.ndarray:
        return np.isfinite(self.values)

    def density(self) -> np.ndarray:
        """Fraction of allowed entries per head."""
        return self.allowed().mean(axis=(1, 2))

    def to_json(self) -> str:
        cells = [[[v if np.isfinite(v) else None for v in map(float, row)]
                  for row in head] for head in self.values]
        return json.dumps({
            "spatial": self.spatial,
            "layout": [self.layout.n_ques, self.layout.n_obj,
                       self.layout.n_ocr, self.layout.n_ans],
            "allowed": self.allowed().astype(int).tolist(),
            "bias": cells,
        }, sort_keys=True)


def _type_index(relations: np.ndarray, layout: ModalityLayout) -> np.ndarray:
    """(B, N, N) label matrix: spatial labels inside the region block,
    implicit everywhere else."""
    b = relations.shape[0]
    idx = np.full((b, layout.total, layout.total), int(RelationType.IMPLICIT),
                  dtype=np.int64)
    idx[:, layout.region, layout.region] = relations
    return idx


def build_bias_batch(relations: np.ndarray, layout: ModalityLayout,
                     assign: HeadAssignment, spatial_layer: bool,
                     beta: np.ndarray | None = None) -> np.ndarray:
    """(B, H, N, N) bias stack for a batch of same-shape graphs.

    relations: (B, n_region, n_region) label matrices.
    """
    relations = np.asarray(relations)
    if relations.ndim != 3 or relations.shape[1:] != (layout.n_region, layout.n_region):
        raise ValueError(
            f"expected relations of shape (B, {layout.n_region}, {layout.n_region}), "
            f"got {relations.shape}")
    b = relations.shape[0]
    h = assign.n_heads
    n = layout.total
    ctx = layout.n_context

    allowed = np.zeros((b, h, n, n), dtype=bool)
    if spatial_layer:
        # region rows: question columns carry the implicit relation, region
        # columns open up only along each head's owned labels; question rows
        # stay fully silenced
        allowed[:, :, layout.region, layout.question] = True
        per_head = assign.owned.T[relations]            # (B, n_r, n_r, H)
        allowed[:, :, layout.region, layout.region] = np.moveaxis(per_head, -1, 1)
    else:
        allowed[:, :, :ctx, :ctx] = True
    for t in range(layout.n_ans):
        allowed[:, :, ctx + t, :ctx + t + 1] = True

    if beta is None:
        return np.where(allowed, 0.0, NEG_INF)
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (h, N_SPATIAL_TYPES + 2):
        raise ValueError(f"beta must have shape ({h}, {N_SPATIAL_TYPES + 2})")
    gathered = beta.T[_type_index(relations, layout)]   # (B, N, N, H)
    return np.where(allowed, np.moveaxis(gathered, -1, 1), NEG_INF)


def build_bias(g: SpatialGraph, layout: ModalityLayout, assign: HeadAssignment,
               spatial_layer: bool, beta: np.ndarray | None = None) -> AttentionBias:
    if g.n != layout.n_region:
        raise ValueError(f"graph has {g.n} nodes but layout expects {layout.n_region}")
    values = build_bias_batch(g.relation[None], layout, assign, spatial_layer, beta)[0]
    return AttentionBias(values=values, layout=layout, spatial=spatial_layer)


def mask_density(bias: AttentionBias) -> float:
    """Overall fraction of unmasked (finite) bias entries."""
    return float(bias.allowed().mean())


def top_k_filter(weights: Tensor, k: int) -> Tensor:
    """Keep the k largest entries of each row (last axis), renormalized to
    sum one. Ties break toward the lower index. Rows with at most k nonzero
    entries pass through untouched, so fully-masked (all-zero) rows stay
    zero and k >= row length is the identity.

    Entries are assumed non-negative, as produced by a softmax.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    w = weights.data
    if w.shape[-1] <= k:
        return weights
    apply_row = (np.count_nonzero(w, axis=-1) > k)[..., None]
    order = np.argsort(-w, axis=-1, kind="stable")
    keep = np.zeros_like(w, dtype=bool)
    np.put_along_axis(keep, order[..., :k], True, axis=-1)
    kept = np.where(keep, w, 0.0)
    s = kept.sum(axis=-1, keepdims=True)
    safe = np.where(s == 0.0, 1.0, s)
    out_data = np.where(apply_row, kept / safe, w)

    def backward(g):
        # filtered rows: y = m*w/S with S = sum(m*w), so
        # dL/dw_j = m_j * (g_j - sum_i g_i y_i) / S
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        d_filtered = keep * (g - inner) / safe
        return [(weights, np.where(apply_row, d_filtered, g))]

    return make_op(out_data, (weights,), backward)
