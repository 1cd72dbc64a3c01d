"""Independent reference implementations used as test oracles.

Everything here is deliberately written from scratch against the documented
contracts, with different code paths than the library (interval logic instead
of the BoundingBox helpers, atan2 instead of the vectorized bin table, memoized
recursion instead of the DP edit distance, plain numpy instead of the autodiff
tape).  When a library result and an oracle result agree, the agreement means
something.
"""

import functools
import math

import numpy as np
from scipy.special import erf, expit

# Relation codes, restated here rather than imported, so a bookkeeping bug in
# the enum cannot silently propagate into the oracle.
SELF = 0
CONTAINS = 1
INSIDE = 2
OVERLAP = 3
DIR_BASE = 3            # dir-k == DIR_BASE + k, k in 1..8
NO_EDGE = 12
IMPLICIT = 13

INVERSE_TABLE = {SELF: SELF, CONTAINS: INSIDE, INSIDE: CONTAINS,
                 OVERLAP: OVERLAP, NO_EDGE: NO_EDGE}
for _k in range(1, 9):
    INVERSE_TABLE[DIR_BASE + _k] = DIR_BASE + ((_k + 3) % 8 + 1)


def classify_pair_oracle(a, b, image_width, image_height,
                         iou_threshold=0.5, distance_fraction=0.5):
    """Classify the (a -> b) relation from raw corner tuples.

    a, b are (x_min, y_min, x_max, y_max).  Rule priority: containment
    (non-strict, a-contains-b checked before b-contains-a), IoU overlap,
    then directional bins for centroids within half the image diagonal,
    measured clockwise from the positive x axis in image coordinates
    (y grows downward, so plain atan2 on raw dy already runs clockwise).
    """
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    if ax1 <= bx1 and ay1 <= by1 and ax2 >= bx2 and ay2 >= by2:
        return CONTAINS
    if bx1 <= ax1 and by1 <= ay1 and bx2 >= ax2 and by2 >= ay2:
        return INSIDE

    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if inter / union >= iou_threshold:
        return OVERLAP

    dx = (bx1 + bx2) / 2.0 - (ax1 + ax2) / 2.0
    dy = (by1 + by2) / 2.0 - (ay1 + ay2) / 2.0
    diag = math.hypot(image_width, image_height)
    if math.hypot(dx, dy) > distance_fraction * diag:
        return NO_EDGE
    theta = math.degrees(math.atan2(dy, dx)) % 360.0
    return DIR_BASE + 1 + int(theta // 45.0)


def build_graph_oracle(boxes, image_width, image_height):
    """Entrywise relation matrix built by classifying every ordered pair.

    The upper triangle is classified directly and the lower triangle is
    the inverse, matching the library's documented mirroring convention.
    """
    n = len(boxes)
    rel = np.full((n, n), SELF, dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            r = classify_pair_oracle(boxes[i], boxes[j],
                                     image_width, image_height)
            rel[i, j] = r
            rel[j, i] = INVERSE_TABLE[r]
    return rel


# -- plain-numpy transformer pieces ---------------------------------------

def softmax_ref(logits, bias):
    """Masked softmax: -inf bias entries are excluded; all-masked rows -> 0."""
    z = logits + bias
    out = np.zeros_like(z)
    finite = np.isfinite(z)
    it = np.ndindex(z.shape[:-1])
    for idx in it:
        row = z[idx]
        keep = finite[idx]
        if not keep.any():
            continue
        e = np.exp(row[keep] - row[keep].max())
        vals = np.zeros_like(row)
        vals[keep] = e / e.sum()
        out[idx] = vals
    return out


def layer_norm_ref(x, gain, shift, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + shift


def gelu_ref(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def bce_ref(logits, targets):
    """Elementwise binary cross-entropy with logits, the numerically
    stable max(z,0) - z*y + log(1+exp(-|z|)) form."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def sigmoid_ref(z):
    return expit(z)


def transformer_layer_ref(x, params, i, n_heads, bias):
    """Vanilla post-norm transformer layer on raw arrays.

    params maps the library's parameter names to numpy arrays; bias is the
    additive (H, N, N) or (B, H, N, N) attention bias.  Mirrors the layer
    contract: scaled dot-product attention, output projection, residual +
    layer norm, erf GELU feed-forward, residual + layer norm.
    """
    def g(name):
        return params[f"layer{i}.{name}"]

    b, n, d = x.shape
    dh = d // n_heads

    def split(t):
        return t.reshape(b, n, n_heads, dh).transpose(0, 2, 1, 3)

    q = split(x @ g("Wq") + g("bq"))
    k = split(x @ g("Wk") + g("bk"))
    v = split(x @ g("Wv") + g("bv"))
    logits = q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh)
    att = softmax_ref(logits, np.broadcast_to(bias, logits.shape))
    ctx = (att @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
    ctx = ctx @ g("Wo") + g("bo")
    h1 = layer_norm_ref(x + ctx, g("ln1.gain"), g("ln1.shift"))
    ff = gelu_ref(h1 @ g("W_ff1") + g("b_ff1")) @ g("W_ff2") + g("b_ff2")
    return layer_norm_ref(h1 + ff, g("ln2.gain"), g("ln2.shift"))


# -- finite differences -----------------------------------------------------

def finite_difference(loss_fn, array, h=1e-5):
    """Central-difference gradient of a scalar loss with respect to one
    array, perturbing every element in place."""
    grad = np.zeros_like(array, dtype=np.float64)
    for idx in np.ndindex(array.shape):
        keep = array[idx]
        array[idx] = keep + h
        hi = loss_fn()
        array[idx] = keep - h
        lo = loss_fn()
        array[idx] = keep
        grad[idx] = (hi - lo) / (2.0 * h)
    return grad


# -- string metrics ---------------------------------------------------------

@functools.lru_cache(maxsize=None)
def edit_distance_recursive(a, b):
    """Levenshtein distance by memoized recursion on suffixes."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    sub = edit_distance_recursive(a[1:], b[1:]) + (a[0] != b[0])
    ins = edit_distance_recursive(a, b[1:]) + 1
    dele = edit_distance_recursive(a[1:], b) + 1
    return min(sub, ins, dele)


def anls_oracle(pred, refs):
    """Single-prediction ANLS: best normalized similarity over references,
    zeroed below the 0.5 threshold.  Normalization here is only lowercase
    plus whitespace collapse, matching the metric contract."""
    def norm(s):
        return " ".join(s.lower().split())

    best = 0.0
    p = norm(pred)
    for r in refs:
        r = norm(r)
        if not p and not r:
            s = 1.0
        else:
            d = edit_distance_recursive(p, r)
            s = 1.0 - d / max(len(p), len(r))
        best = max(best, s)
    return best if best >= 0.5 else 0.0


def edit_distance_matrix(strs_a, strs_b):
    """Wagner-Fischer distances for every (a, b) pair at once.

    All strings in strs_a share one length, likewise strs_b.  The DP table
    holds one (len_a_set, len_b_set) matrix per cell, so the whole cross
    product is swept in numpy.  Independent of both the library DP and the
    recursive oracle above.
    """
    la = len(strs_a[0]) if strs_a else 0
    lb = len(strs_b[0]) if strs_b else 0
    a = np.array([[ord(c) for c in s] for s in strs_a],
                 dtype=np.int16).reshape(len(strs_a), la)
    b = np.array([[ord(c) for c in s] for s in strs_b],
                 dtype=np.int16).reshape(len(strs_b), lb)
    na, nb = len(strs_a), len(strs_b)
    prev = [np.full((na, nb), j, dtype=np.int16) for j in range(lb + 1)]
    for i in range(1, la + 1):
        cur = [np.full((na, nb), i, dtype=np.int16)]
        for j in range(1, lb + 1):
            sub = prev[j - 1] + (a[:, i - 1][:, None] != b[:, j - 1][None, :])
            cur.append(np.minimum(np.minimum(prev[j] + 1, cur[j - 1] + 1), sub))
        prev = cur
    return prev[lb]


# -- exhaustive sequence search ----------------------------------------------

def enumerate_best_sequence(step_logprobs, n_candidates, max_steps, end_id):
    """Brute-force optimum over every decode path of length <= max_steps.

    Sequences terminate early only by emitting end_id (whose log-prob is
    included in the score); otherwise they run exactly max_steps tokens.
    Returns (tokens_without_end, score) for the highest-scoring sequence.
    Mirrors the beam-search preference for finished hypotheses: if any
    path terminates, unfinished paths are not considered.
    """
    finished = []
    unfinished = []

    def walk(prefix, score):
        if prefix and prefix[-1] == end_id:
            finished.append((tuple(prefix[:-1]), score))
            return
        if len(prefix) == max_steps:
            unfinished.append((tuple(prefix), score))
            return
        lp = np.asarray(step_logprobs([list(prefix)]))[0]
        for tok in range(n_candidates):
            walk(prefix + [tok], score + float(lp[tok]))

    walk([], 0.0)
    pool = finished if finished else unfinished
    return max(pool, key=lambda kv: kv[1])
