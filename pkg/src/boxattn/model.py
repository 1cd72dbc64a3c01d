"""Multimodal transformer over [question | objects | ocr | answers] tokens.

The layer stack mixes three kinds that share one parameter shape:

  N  full self-attention among question/object/ocr, causal answers
  S  graph-gated attention: object/ocr rows see question columns and the
     region columns whose relation the head owns; question rows bypass
     the layer entirely (output = input)
  T  like N but attention rows are post-softmax top-k filtered

Answers are decoded iteratively over the joint space vocab ∪ OCR-copy:
ids below vocab_size are vocabulary words, the rest index the scene's
OCR tokens. Scoring concatenates a linear vocabulary head with a
projected dot product against the OCR tokens' final representations.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .masks import ModalityLayout, assign_head_relations, build_bias_batch, top_k_filter
from .geometry import SpatialGraph
from .optim import adam_step

PAD, BEGIN, END, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<begin>", "<end>", "<unk>")

CHECKPOINT_VERSION = 1

_STRUCTURE_RE = re.compile(r"^(\d+)([NST])$")


def parse_structure(structure: str) -> str:
    """Expand e.g. '2N->4S' into the per-layer kind string 'NNSSSS'."""
    kinds = []
    for segment in structure.replace(" ", "").split("->"):
        m = _STRUCTURE_RE.match(segment)
        if not m:
            raise ValueError(f"bad structure segment {segment!r} in {structure!r}")
        kinds.append(m.group(2) * int(m.group(1)))
    return "".join(kinds)


@dataclass(frozen=True)
class ModelConfig:
    structure: str = "2N->4S"
    d_model: int = 768
    n_heads: int = 12
    intermediate_size: int = 3072
    context_size: int = 2
    dropout: float = 0.1
    vocab_size: int = 5000
    feature_dim: int = 2048
    n_ques: int = 20
    n_obj: int = 100
    n_ocr: int = 50
    n_ans: int = 12
    top_k: int | None = None

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        kinds = parse_structure(self.structure)
        if "T" in kinds and self.top_k is None:
            raise ValueError("structure has top-k layers but top_k is not set")
        if "S" in kinds and not kinds.startswith("N"):
            warnings.warn(
                "no normal layer precedes the first spatial layer; question tokens "
                "will reach the decoder uncontextualized", stacklevel=2)

    @property
    def layer_kinds(self) -> str:
        return parse_structure(self.structure)

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def layout(self) -> ModalityLayout:
        return ModalityLayout(self.n_ques, self.n_obj, self.n_ocr, self.n_ans)

    def to_dict(self) -> dict:
        return {
            "maximum_question_tokens": self.n_ques,
            "maximum_object_tokens": self.n_obj,
            "maximum_ocr_tokens": self.n_ocr,
            "maximum_decoding_steps": self.n_ans,
            "embedding_size": self.d_model,
            "number_of_multimodal_layers": self.structure,
            "multimodal_layer_intermediate_size": self.intermediate_size,
            "number_of_attention_heads": self.n_heads,
            "multimodal_layer_dropout": self.dropout,
            "context_size": self.context_size,
            "vocabulary_size": self.vocab_size,
            "feature_dimension": self.feature_dim,
            "top_k": self.top_k,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            structure=d["number_of_multimodal_layers"],
            d_model=d["embedding_size"],
            n_heads=d["number_of_attention_heads"],
            intermediate_size=d["multimodal_layer_intermediate_size"],
            context_size=d["context_size"],
            dropout=d["multimodal_layer_dropout"],
            vocab_size=d["vocabulary_size"],
            feature_dim=d["feature_dimension"],
            n_ques=d["maximum_question_tokens"],
            n_obj=d["maximum_object_tokens"],
            n_ocr=d["maximum_ocr_tokens"],
            n_ans=d["maximum_decoding_steps"],
            top_k=d["top_k"],
        )


@dataclass
class TokenBatch:
    """Fixed-size model inputs for a batch of scenes.

    Segments are not padded; batches are bucketed so every scene in a batch
    shares the same token counts. Boxes are normalized to [0, 1] by the
    image size.
    """

    question_ids: np.ndarray        # (B, n_ques) int
    obj_features: np.ndarray        # (B, n_obj, F)
    obj_boxes: np.ndarray           # (B, n_obj, 4)
    ocr_features: np.ndarray        # (B, n_ocr, F)
    ocr_boxes: np.ndarray           # (B, n_ocr, 4)
    ocr_texts: list = field(default_factory=list)   # B lists of n_ocr strings
    layout: ModalityLayout = None

    def __post_init__(self):
        b = self.question_ids.shape[0]
        if self.layout is None:
            self.layout = ModalityLayout(
                self.question_ids.shape[1], self.obj_features.shape[1],
                self.ocr_features.shape[1], 0)
        lay = self.layout
        checks = [
            (self.question_ids.shape, (b, lay.n_ques)),
            (self.obj_features.shape[:2], (b, lay.n_obj)),
            (self.obj_boxes.shape, (b, lay.n_obj, 4)),
            (self.ocr_features.shape[:2], (b, lay.n_ocr)),
            (self.ocr_boxes.shape, (b, lay.n_ocr, 4)),
        ]
        for got, want in checks:
            if tuple(got) != tuple(want):
                raise ValueError(f"batch shape {got} does not match layout {want}")
        if self.ocr_features.shape[2] != self.obj_features.shape[2]:
            raise ValueError("object and ocr feature dims differ")

    @property
    def size(self) -> int:
        return self.question_ids.shape[0]


@dataclass
class DecodeState:
    """Answer tokens emitted so far, as ids into vocab ∪ OCR-copy.

    tokens[b, t] for t >= step is PAD. Copy ids are vocab_size + slot.
    """

    tokens: np.ndarray              # (B, T) int
    step: int
    finished: np.ndarray            # (B,) bool

    @classmethod
    def initial(cls, batch_size: int, max_steps: int) -> "DecodeState":
        return cls(tokens=np.full((batch_size, max_steps), PAD, dtype=np.int64),
                   step=0, finished=np.zeros(batch_size, dtype=bool))

    @classmethod
    def teacher(cls, target_ids: np.ndarray) -> "DecodeState":
        target_ids = np.asarray(target_ids, dtype=np.int64)
        return cls(tokens=target_ids, step=target_ids.shape[1],
                   finished=np.ones(target_ids.shape[0], dtype=bool))

    def advance(self, ids: np.ndarray) -> "DecodeState":
        ids = np.where(self.finished, PAD, ids)
        tokens = self.tokens.copy()
        tokens[:, self.step] = ids
        return DecodeState(tokens=tokens, step=self.step + 1,
                           finished=self.finished | (ids == END))

    def feedback_ids(self) -> np.ndarray:
        """Previous-token ids per step: BEGIN at t=0, then shifted emissions."""
        b = self.tokens.shape[0]
        begin = np.full((b, 1), BEGIN, dtype=np.int64)
        return np.concatenate([begin, self.tokens[:, :-1]], axis=1)

    def emitted(self) -> list:
        """Per-sequence emitted ids, truncated before the first end token."""
        out = []
        for row in self.tokens[:, :self.step]:
            ids = []
            for t in row:
                if t == END:
                    break
                ids.append(int(t))
            out.append(ids)
        return out


def stack_relations(graphs) -> np.ndarray:
    """(B, n, n) label array from a list of same-size SpatialGraphs."""
    if isinstance(graphs, SpatialGraph):
        graphs = [graphs]
    if isinstance(graphs, np.ndarray):
        return graphs if graphs.ndim == 3 else graphs[None]
    return np.stack([g.relation for g in graphs])


class Model:
    """Trainable instance: parameters, forward pass, decoding, one-step Adam."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Parameter] = {}
        self.assignment = assign_head_relations(cfg.n_heads, cfg.context_size)
        d, f, inter = cfg.d_model, cfg.feature_dim, cfg.intermediate_size

        def p(name, *shape, zero=False):
            data = np.zeros(shape) if zero else self.rng.normal(0.0, 0.02, shape)
            self.params[name] = Parameter(data, name)

        p("emb.tok", cfg.vocab_size, d)
        p("emb.type", 4, d)
        p("emb.step", cfg.n_ans, d)
        p("emb.obj_feat", f, d)
        p("emb.obj_box", 4, d)
        p("emb.ocr_feat", f, d)
        p("emb.ocr_box", 4, d)
        for mod in ("ques", "obj", "ocr", "ans"):
            self.params[f"emb.ln_{mod}.gain"] = Parameter(np.ones(d), f"emb.ln_{mod}.gain")
            self.params[f"emb.ln_{mod}.shift"] = Parameter(np.zeros(d), f"emb.ln_{mod}.shift")
        for i in range(len(cfg.layer_kinds)):
            for w in ("q", "k", "v", "o"):
                p(f"layer{i}.W{w}", d, d)
                p(f"layer{i}.b{w}", d, zero=True)
            p(f"layer{i}.W_ff1", d, inter)
            p(f"layer{i}.b_ff1", inter, zero=True)
            p(f"layer{i}.W_ff2", inter, d)
            p(f"layer{i}.b_ff2", d, zero=True)
            for ln in ("ln1", "ln2"):
                self.params[f"layer{i}.{ln}.gain"] = Parameter(np.ones(d), f"layer{i}.{ln}.gain")
                self.params[f"layer{i}.{ln}.shift"] = Parameter(np.zeros(d), f"layer{i}.{ln}.shift")
        p("head.W_vocab", d, cfg.vocab_size)
        p("head.b_vocab", cfg.vocab_size, zero=True)
        p("head.W_ptr_q", d, d)
        p("head.b_ptr_q", d, zero=True)
        p("head.W_ptr_k", d, d)
        p("head.b_ptr_k", d, zero=True)

    @property
    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters)

    # -- embeddings ------------------------------------------------------

    def embed(self, batch: TokenBatch, state: DecodeState) -> Tensor:
        """(B, N, d) input sequence; answer rows embed the fed-back tokens."""
        P = self.params
        cfg = self.cfg
        lay = batch.layout

        def type_row(i):
            return ad.embedding(P["emb.type"], np.array(i))

        q = ad.embedding(P["emb.tok"], batch.question_ids) + type_row(0)
        q = ad.layer_norm(q, P["emb.ln_ques.gain"], P["emb.ln_ques.shift"])

        obj = (Tensor(batch.obj_features) @ P["emb.obj_feat"]
               + Tensor(batch.obj_boxes) @ P["emb.obj_box"] + type_row(1))
        obj = ad.layer_norm(obj, P["emb.ln_obj.gain"], P["emb.ln_obj.shift"])

        ocr = (Tensor(batch.ocr_features) @ P["emb.ocr_feat"]
               + Tensor(batch.ocr_boxes) @ P["emb.ocr_box"] + type_row(2))
        ocr = ad.layer_norm(ocr, P["emb.ln_ocr.gain"], P["emb.ln_ocr.shift"])

        prev = state.feedback_ids()
        if prev.shape != (batch.size, lay.n_ans):
            raise ValueError(f"decode state shape {prev.shape} does not match layout")
        is_copy = prev >= cfg.vocab_size
        if np.any(prev[is_copy] - cfg.vocab_size >= lay.n_ocr):
            raise ValueError("copy id beyond the batch's OCR count")
        tok_part = ad.embedding(P["emb.tok"], np.where(is_copy, PAD, prev))
        tok_part = tok_part * Tensor((~is_copy)[..., None].astype(np.float64))
        onehot = np.zeros((batch.size, lay.n_ans, lay.n_ocr))
        bb, tt = np.nonzero(is_copy)
        onehot[bb, tt, prev[is_copy] - cfg.vocab_size] = 1.0
        copy_part = Tensor(onehot) @ ocr
        steps = ad.embedding(P["emb.step"], np.arange(lay.n_ans))
        ans = tok_part + copy_part + steps + type_row(3)
        ans = ad.layer_norm(ans, P["emb.ln_ans.gain"], P["emb.ln_ans.shift"])

        return ad.concat([q, obj, ocr, ans], axis=1)

    # -- transformer stack ------------------------------------------------

    def _attention_layer(self, i: int, kind: str, x: Tensor, bias: Tensor,
                         training: bool, trace=None) -> Tensor:
        P = self.params
        cfg = self.cfg
        b, n, d = x.shape
        heads = cfg.n_heads

        def split(t):
            return ad.transpose(ad.reshape(t, (b, n, heads, cfg.d_head)), (0, 2, 1, 3))

        q = split(x @ P[f"layer{i}.Wq"] + P[f"layer{i}.bq"])
        k = split(x @ P[f"layer{i}.Wk"] + P[f"layer{i}.bk"])
        v = split(x @ P[f"layer{i}.Wv"] + P[f"layer{i}.bv"])
        logits = (q @ ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(cfg.d_head))
        att = ad.masked_softmax(logits, bias)
        if kind == "T":
            att = top_k_filter(att, cfg.top_k)
        if trace is not None:
            trace.setdefault("attention", []).append(att.data)
        ctx = ad.reshape(ad.transpose(att @ v, (0, 2, 1, 3)), (b, n, d))
        ctx = ctx @ P[f"layer{i}.Wo"] + P[f"layer{i}.bo"]
        if training and cfg.dropout > 0.0:
            ctx = ad.dropout(ctx, cfg.dropout, self.rng)
        h1 = ad.layer_norm(x + ctx, P[f"layer{i}.ln1.gain"], P[f"layer{i}.ln1.shift"])
        ff = ad.gelu(h1 @ P[f"layer{i}.W_ff1"] + P[f"layer{i}.b_ff1"])
        ff = ff @ P[f"layer{i}.W_ff2"] + P[f"layer{i}.b_ff2"]
        if training and cfg.dropout > 0.0:
            ff = ad.dropout(ff, cfg.dropout, self.rng)
        out = ad.layer_norm(h1 + ff, P[f"layer{i}.ln2.gain"], P[f"layer{i}.ln2.shift"])
        return out

    def forward(self, batch: TokenBatch, relations, answers_so_far: DecodeState,
                training: bool = False, trace=None) -> Tensor:
        """Per-step scores (B, n_ans, vocab_size + n_ocr) over vocab ∪ copy."""
        cfg = self.cfg
        lay = batch.layout
        relations = stack_relations(relations)
        if relations.shape[0] == 1 and batch.size > 1:
            relations = np.repeat(relations, batch.size, axis=0)

        kinds = cfg.layer_kinds
        bias_for = {}
        for kind in set(kinds):
            spatial = kind == "S"
            key = "S" if spatial else "NT"
            if key not in bias_for:
                bias_for[key] = Tensor(build_bias_batch(
                    relations, lay, self.assignment, spatial))
        ques_rows = np.zeros((1, lay.total, 1))
        ques_rows[0, lay.question, 0] = 1.0

        x = self.embed(batch, answers_so_far)
        if trace is not None:
            trace["embedding"] = x.data
        for i, kind in enumerate(kinds):
            out = self._attention_layer(
                i, kind, x, bias_for["S" if kind == "S" else "NT"], training, trace)
            if kind == "S" and lay.n_ques > 0:
                # question rows bypass the layer in full
                out = out * Tensor(1.0 - ques_rows) + x * Tensor(ques_rows)
            if trace is not None:
                trace.setdefault("hidden", []).append(out.data)
            x = out

        ans = ad.slice_axis(x, 1, lay.n_context, lay.total)
        ocr = ad.slice_axis(x, 1, lay.n_ques + lay.n_obj, lay.n_context)
        vocab_scores = ans @ self.params["head.W_vocab"] + self.params["head.b_vocab"]
        ptr_q = ans @ self.params["head.W_ptr_q"] + self.params["head.b_ptr_q"]
        ptr_k = ocr @ self.params["head.W_ptr_k"] + self.params["head.b_ptr_k"]
        copy_scores = ptr_q @ ad.swapaxes(ptr_k, -1, -2)
        return ad.concat([vocab_scores, copy_scores], axis=-1)

    # -- training ----------------------------------------------------------

    def train_step(self, batch: TokenBatch, relations, targets: np.ndarray,
                   teacher_ids: np.ndarray, lr: float,
                   clip_norm: float = 0.25) -> float:
        """Teacher-forced multi-label step; returns the scalar loss.

        targets: (B, T, vocab+n_ocr) multi-hot; steps whose row is all zero
        are padding and contribute nothing. teacher_ids: (B, T) joint ids
        fed back as the previous-token inputs.
        """
        scores = self.forward(batch, relations, DecodeState.teacher(teacher_ids),
                              training=True)
        per_class = ad.bce_with_logits(scores, targets)
        per_step = per_class.mean(axis=-1)
        valid = np.asarray(targets).any(axis=-1).astype(np.float64)
        denom = max(float(valid.sum()), 1.0)
        loss = (per_step * Tensor(valid)).sum() * (1.0 / denom)
        ad.zero_grads(self.parameters)
        ad.backward(loss)
        adam_step(self.parameters, lr=lr, clip_norm=clip_norm)
        return float(loss.data)

    # -- decoding ----------------------------------------------------------

    def decode_greedy(self, batch: TokenBatch, relations) -> DecodeState:
        """Iterative argmax decode; ties break toward the lower id."""
        state = DecodeState.initial(batch.size, batch.layout.n_ans)
        for t in range(batch.layout.n_ans):
            scores = self.forward(batch, relations, state).data
            state = state.advance(np.argmax(scores[:, t, :], axis=-1))
            if state.finished.all():
                break
        return state

    def decode_beam(self, batch: TokenBatch, relations, beam: int) -> list:
        """Per-scene beam search over summed log-probabilities.

        Returns one emitted-id list per scene (end token stripped).
        """
        if beam < 1:
            raise ValueError(f"beam must be >= 1, got {beam}")
        relations = stack_relations(relations)
        if relations.shape[0] == 1 and batch.size > 1:
            relations = np.repeat(relations, batch.size, axis=0)
        results = []
        t_max = batch.layout.n_ans
        for b in range(batch.size):
            single = TokenBatch(
                question_ids=batch.question_ids[b:b + 1],
                obj_features=batch.obj_features[b:b + 1],
                obj_boxes=batch.obj_boxes[b:b + 1],
                ocr_features=batch.ocr_features[b:b + 1],
                ocr_boxes=batch.ocr_boxes[b:b + 1],
                ocr_texts=batch.ocr_texts[b:b + 1] if batch.ocr_texts else [],
                layout=batch.layout)
            rel = relations[b:b + 1]

            def step_logprobs(prefixes):
                n = len(prefixes)
                length = len(prefixes[0])
                tokens = np.full((n, t_max), PAD, dtype=np.int64)
                for i, prefix in enumerate(prefixes):
                    tokens[i, :length] = prefix
                state = DecodeState(tokens=tokens, step=length,
                                    finished=np.zeros(n, dtype=bool))
                tiled = TokenBatch(
                    question_ids=np.repeat(single.question_ids, n, axis=0),
                    obj_features=np.repeat(single.obj_features, n, axis=0),
                    obj_boxes=np.repeat(single.obj_boxes, n, axis=0),
                    ocr_features=np.repeat(single.ocr_features, n, axis=0),
                    ocr_boxes=np.repeat(single.ocr_boxes, n, axis=0),
                    ocr_texts=single.ocr_texts * n,
                    layout=batch.layout)
                scores = self.forward(tiled, np.repeat(rel, n, axis=0), state).data
                return log_softmax(scores[:, state.step, :], axis=-1)

            best, _ = beam_search(step_logprobs,
                                  n_candidates=self.cfg.vocab_size + batch.layout.n_ocr,
                                  beam=beam, max_steps=t_max, end_id=END)
            results.append(list(best))
        return results

    # -- persistence --------------------------------------------------------

    def save(self, path: str) -> None:
        meta = json.dumps({"format_version": CHECKPOINT_VERSION,
                           "config": self.cfg.to_dict()}, sort_keys=True)
        np.savez(path, __meta__=np.array(meta),
                 **{name: p.data for name, p in self.params.items()})

    @classmethod
    def load(cls, path: str) -> "Model":
        with np.load(path) as f:
            meta = json.loads(str(f["__meta__"][()]))
            if meta.get("format_version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version: {meta.get('format_version')}")
            model = cls(ModelConfig.from_dict(meta["config"]))
            for name, p in model.params.items():
                if name not in f:
                    raise ValueError(f"checkpoint missing parameter {name}")
                if f[name].shape != p.data.shape:
                    raise ValueError(f"checkpoint shape mismatch for {name}")
                p.data = np.array(f[name], dtype=np.float64)
        return model


def beam_search(step_logprobs, n_candidates: int, beam: int, max_steps: int,
                end_id: int) -> tuple:
    """Length-wise beam over summed log-probabilities.

    step_logprobs(prefixes) maps equal-length prefixes to an array
    (len(prefixes), n_candidates) of next-token log-probabilities.
    Hypotheses retire on end_id; returns (tokens, score) for the best
    finished prefix (end token stripped from tokens, its log-prob still
    counted in score), or the best unfinished one after max_steps. Ties
    break toward the earlier beam and then the lower token id, which
    makes beam=1 coincide with greedy decoding.
    """
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    active = [((), 0.0)]
    finished: list[tuple[tuple, float]] = []
    for _ in range(max_steps):
        if not active:
            break
        lp = np.asarray(step_logprobs([list(p) for p, _ in active]))
        total = np.array([s for _, s in active])[:, None] + lp
        flat = total.ravel()
        take = min(beam, flat.size)
        top = np.argsort(-flat, kind="stable")[:take]
        next_active = []
        for idx in top:
            i, j = divmod(int(idx), n_candidates)
            hyp = (active[i][0] + (int(j),), float(flat[idx]))
            if j == end_id:
                finished.append(hyp)
            else:
                next_active.append(hyp)
        active = next_active
    pool = finished if finished else active
    best = max(enumerate(pool), key=lambda kv: (kv[1][1], -kv[0]))[1]
    prefix, score = best
    if prefix and prefix[-1] == end_id:
        prefix = prefix[:-1]
    return prefix, score
