"""Cross-attention fusion of a multimodal vector with knowledge vectors.

One record is classified by projecting its multimodal embedding to d_model
(the attention query) and its retrieved knowledge vectors to d_model (keys
and values), running multi-head scaled dot-product attention

    head_i = softmax(q W_i^Q (K W_i^K)^T / sqrt(d_h)) (K W_i^V)
    fused  = concat(head_1, ..., head_H) W^O

adding the projected multimodal vector back as a residual, and scoring two
logits. Training minimises cross-entropy with adaptive-moment updates whose
learning rate ramps linearly from zero over the first warmup fraction of
planned steps and then decays linearly back to zero.

All forward and backward passes are explicit numpy in float64; backward is
hand derived and is checked against central finite differences in the test
suite. The ablation flag use_knowledge=False skips attention entirely and
classifies the projected multimodal vector alone.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    NonFiniteError,
    StoreFormatError,
    TruncatedStoreError,
)
from .stores import CampaignRecord, EmbeddingStore

CHECKPOINT_MAGIC = b"FUSNET01"

# Share of a train+val pool given to validation when no explicit validation
# records are supplied; mirrors the default pipeline split shape.
DEFAULT_VAL_SHARE = 15000 / 60810


@dataclass
class FusionConfig:
    d_model: int = 256
    num_heads: int = 4
    multimodal_dim: int = 768
    knowledge_dim: int = 256
    learning_rate: float = 5e-5
    warmup_fraction: float = 0.1
    batch_size: int = 16
    epochs: int = 50
    early_stop_patience: int = 5
    seed: int = 0
    use_knowledge: bool = True
    train_concepts: bool = False

    def __post_init__(self) -> None:
        if self.d_model < 1 or self.num_heads < 1:
            raise ValueError("d_model and num_heads must be positive")
        if self.d_model % self.num_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} must divide evenly into "
                f"{self.num_heads} heads"
            )
        if self.multimodal_dim < 1 or self.knowledge_dim < 1:
            raise ValueError("embedding dims must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must be in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads


class FusionNet:
    """Parameter container. Weight matrices start uniform in
    [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases start at zero."""

    PARAM_NAMES = (
        "proj_mm_w",
        "proj_mm_b",
        "proj_kg_w",
        "proj_kg_b",
        "attn_q",
        "attn_k",
        "attn_v",
        "attn_out",
        "cls_w",
        "cls_b",
    )

    def __init__(self, cfg: FusionConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        d, h, dh = cfg.d_model, cfg.num_heads, cfg.head_dim

        def uniform(fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        self.proj_mm_w = uniform(cfg.multimodal_dim, (cfg.multimodal_dim, d))
        self.proj_mm_b = np.zeros(d)
        self.proj_kg_w = uniform(cfg.knowledge_dim, (cfg.knowledge_dim, d))
        self.proj_kg_b = np.zeros(d)
        self.attn_q = uniform(d, (h, d, dh))
        self.attn_k = uniform(d, (h, d, dh))
        self.attn_v = uniform(d, (h, d, dh))
        self.attn_out = uniform(d, (d, d))
        self.cls_w = uniform(d, (d, 2))
        self.cls_b = np.zeros(2)

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.PARAM_NAMES}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name).copy() for name in self.PARAM_NAMES}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, value in snap.items():
            getattr(self, name)[...] = value


@dataclass
class ForwardTrace:
    """Everything backward() needs, cached from one forward pass."""

    mm_vec: np.ndarray
    kg_vecs: np.ndarray | None
    q0: np.ndarray
    cls_in: np.ndarray
    logits: np.ndarray
    use_knowledge: bool
    kv0: np.ndarray | None = None
    q: np.ndarray | None = None  # [H, dh]
    k: np.ndarray | None = None  # [H, n_k, dh]
    v: np.ndarray | None = None  # [H, n_k, dh]
    attn: np.ndarray | None = None  # [H, n_k], rows sum to 1
    concat: np.ndarray | None = None

def _einsum(subscripts: str, *operands) -> np.ndarray:
    """einsum with contraction-path optimisation (BLAS-backed where possible)."""
    return np.einsum(subscripts, *operands, optimize=True)


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def attention(query: np.ndarray, keys: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Scaled dot-product attention softmax(Q K^T / sqrt(d)) V.

    query is [n_q, d], keys and values [n_k, d]; the softmax is stabilised
    by row-max subtraction. Raises ValueError on empty keys or mismatched
    shapes.
    """
    q = np.atleast_2d(np.asarray(query, dtype=np.float64))
    k = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    v = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if k.shape[0] == 0:
        raise ValueError("attention needs at least one key")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"query dim {q.shape[1]} != key dim {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"{k.shape[0]} keys but {v.shape[0]} values")
    weights = _softmax(q @ k.T / np.sqrt(q.shape[1]), axis=-1)
    return weights @ v


def cross_entropy(logits: np.ndarray, label: int) -> float:
    """-log softmax(logits)[label], computed stably."""
    shifted = logits - np.max(logits)
    return float(np.log(np.sum(np.exp(shifted))) - shifted[label])


def forward(
    net: FusionNet, mm_vec: np.ndarray, kg_vecs: np.ndarray | None
) -> tuple[np.ndarray, ForwardTrace]:
    """Logits for one record plus the cached trace.

    kg_vecs is [n_k, knowledge_dim] with n_k >= 1 when the net uses
    knowledge; it is ignored (and may be None) for the ablation net.
    """
    cfg = net.cfg
    x = np.asarray(mm_vec, dtype=np.float64).reshape(-1)
    if x.shape[0] != cfg.multimodal_dim:
        raise ValueError(
            f"multimodal vec dim {x.shape[0]}, expected {cfg.multimodal_dim}"
        )
    q0 = x @ net.proj_mm_w + net.proj_mm_b

    if not cfg.use_knowledge:
        logits = q0 @ net.cls_w + net.cls_b
        return logits, ForwardTrace(
            mm_vec=x,
            kg_vecs=None,
            q0=q0,
            cls_in=q0,
            logits=logits,
            use_knowledge=False,
        )

    kg = np.asarray(kg_vecs, dtype=np.float64)
    if kg.ndim != 2 or kg.shape[0] < 1 or kg.shape[1] != cfg.knowledge_dim:
        raise ValueError(
            f"knowledge matrix must be [n_k >= 1, {cfg.knowledge_dim}], "
            f"got {kg.shape}"
        )
    kv0 = kg @ net.proj_kg_w + net.proj_kg_b  # [n_k, d]
    q = _einsum("d,hde->he", q0, net.attn_q)
    k = _einsum("nd,hde->hne", kv0, net.attn_k)
    v = _einsum("nd,hde->hne", kv0, net.attn_v)
    scores = _einsum("he,hne->hn", q, k) / np.sqrt(cfg.head_dim)
    attn = _softmax(scores, axis=-1)
    head_out = _einsum("hn,hne->he", attn, v)
    concat = head_out.reshape(cfg.d_model)
    fused = concat @ net.attn_out
    cls_in = fused + q0
    logits = cls_in @ net.cls_w + net.cls_b
    return logits, ForwardTrace(
        mm_vec=x,
        kg_vecs=kg,
        q0=q0,
        cls_in=cls_in,
        logits=logits,
        use_knowledge=True,
        kv0=kv0,
        q=q,
        k=k,
        v=v,
        attn=attn,
        concat=concat,
    )


def backward(net: FusionNet, trace: ForwardTrace, label: int) -> dict[str, np.ndarray]:
    """Gradients of the cross-entropy loss for one record.

    Returns a dict keyed by parameter name plus "mm_vec" and "kg_vecs" for
    the input gradients. The ablation path leaves attention and knowledge
    projection gradients at zero.
    """
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    cfg = net.cfg
    g = {name: np.zeros_like(p) for name, p in net.params().items()}

    p = _softmax(trace.logits)
    dz = p.copy()
    dz[label] -= 1.0

    g["cls_w"] = np.outer(trace.cls_in, dz)
    g["cls_b"] = dz
    d_cls_in = net.cls_w @ dz

    if not trace.use_knowledge:
        d_q0 = d_cls_in
        g["proj_mm_w"] = np.outer(trace.mm_vec, d_q0)
        g["proj_mm_b"] = d_q0
        g["mm_vec"] = net.proj_mm_w @ d_q0
        g["kg_vecs"] = np.zeros((0, cfg.knowledge_dim))
        return g

    d_fused = d_cls_in
    d_q0 = d_cls_in.copy()

    g["attn_out"] = np.outer(trace.concat, d_fused)
    d_concat = net.attn_out @ d_fused
    d_head = d_concat.reshape(cfg.num_heads, cfg.head_dim)

    # Softmax backward: d_scores = A * (dA - sum(A * dA)) per row.
    d_v = _einsum("hn,he->hne", trace.attn, d_head)
    d_attn = _einsum("he,hne->hn", d_head, trace.v)
    inner = np.sum(trace.attn * d_attn, axis=-1, keepdims=True)
    d_scores = trace.attn * (d_attn - inner) / np.sqrt(cfg.head_dim)
    d_q = _einsum("hn,hne->he", d_scores, trace.k)
    d_k = _einsum("hn,he->hne", d_scores, trace.q)

    g["attn_q"] = _einsum("d,he->hde", trace.q0, d_q)
    d_q0 += _einsum("hde,he->d", net.attn_q, d_q)
    g["attn_k"] = _einsum("nd,hne->hde", trace.kv0, d_k)
    d_kv0 = _einsum("hde,hne->nd", net.attn_k, d_k)
    g["attn_v"] = _einsum("nd,hne->hde", trace.kv0, d_v)
    d_kv0 += _einsum("hde,hne->nd", net.attn_v, d_v)

    g["proj_kg_w"] = trace.kg_vecs.T @ d_kv0
    g["proj_kg_b"] = d_kv0.sum(axis=0)
    g["kg_vecs"] = d_kv0 @ net.proj_kg_w.T

    g["proj_mm_w"] = np.outer(trace.mm_vec, d_q0)
    g["proj_mm_b"] = d_q0
    g["mm_vec"] = net.proj_mm_w @ d_q0
    return g


# Batched twins of forward/backward. Records inside one batch share n_k so
# everything stacks; train_classifier groups batches accordingly. The
# single-record path above is the reference implementation and the batched
# path is asserted against it in the tests.


@dataclass
class _BatchTrace:
    x: np.ndarray
    kg: np.ndarray | None
    q0: np.ndarray
    cls_in: np.ndarray
    logits: np.ndarray
    kv0: np.ndarray | None = None
    q: np.ndarray | None = None
    k: np.ndarray | None = None
    v: np.ndarray | None = None
    attn: np.ndarray | None = None
    concat: np.ndarray | None = None


def _forward_batch(
    net: FusionNet, x: np.ndarray, kg: np.ndarray | None
) -> tuple[np.ndarray, _BatchTrace]:
    cfg = net.cfg
    q0 = x @ net.proj_mm_w + net.proj_mm_b  # [B, d]
    if not cfg.use_knowledge:
        logits = q0 @ net.cls_w + net.cls_b
        return logits, _BatchTrace(x=x, kg=None, q0=q0, cls_in=q0, logits=logits)

    kv0 = kg @ net.proj_kg_w + net.proj_kg_b  # [B, n_k, d]
    q = _einsum("bd,hde->bhe", q0, net.attn_q)
    k = _einsum("bnd,hde->bhne", kv0, net.attn_k)
    v = _einsum("bnd,hde->bhne", kv0, net.attn_v)
    scores = _einsum("bhe,bhne->bhn", q, k) / np.sqrt(cfg.head_dim)
    attn = _softmax(scores, axis=-1)
    head_out = _einsum("bhn,bhne->bhe", attn, v)
    concat = head_out.reshape(x.shape[0], cfg.d_model)
    cls_in = concat @ net.attn_out + q0
    logits = cls_in @ net.cls_w + net.cls_b
    return logits, _BatchTrace(
        x=x, kg=kg, q0=q0, cls_in=cls_in, logits=logits,
        kv0=kv0, q=q, k=k, v=v, attn=attn, concat=concat,
    )


def _backward_batch(
    net: FusionNet, trace: _BatchTrace, labels: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Mean-loss gradients over the batch, plus d kg_vecs [B, n_k, kg_dim]."""
    cfg = net.cfg
    batch = trace.x.shape[0]
    g = {name: np.zeros_like(p) for name, p in net.params().items()}

    p = _softmax(trace.logits, axis=-1)
    dz = p.copy()
    dz[np.arange(batch), labels] -= 1.0
    dz /= batch

    g["cls_w"] = trace.cls_in.T @ dz
    g["cls_b"] = dz.sum(axis=0)
    d_cls_in = dz @ net.cls_w.T

    if trace.kv0 is None:
        d_q0 = d_cls_in
        d_kg = np.zeros((batch, 0, cfg.knowledge_dim))
    else:
        d_fused = d_cls_in
        d_q0 = d_cls_in.copy()
        g["attn_out"] = trace.concat.T @ d_fused
        d_concat = d_fused @ net.attn_out.T
        d_head = d_concat.reshape(batch, cfg.num_heads, cfg.head_dim)

        d_v = _einsum("bhn,bhe->bhne", trace.attn, d_head)
        d_attn = _einsum("bhe,bhne->bhn", d_head, trace.v)
        inner = np.sum(trace.attn * d_attn, axis=-1, keepdims=True)
        d_scores = trace.attn * (d_attn - inner) / np.sqrt(cfg.head_dim)
        d_q = _einsum("bhn,bhne->bhe", d_scores, trace.k)
        d_k = _einsum("bhn,bhe->bhne", d_scores, trace.q)

        g["attn_q"] = _einsum("bd,bhe->hde", trace.q0, d_q)
        d_q0 += _einsum("hde,bhe->bd", net.attn_q, d_q)
        g["attn_k"] = _einsum("bnd,bhne->hde", trace.kv0, d_k)
        d_kv0 = _einsum("hde,bhne->bnd", net.attn_k, d_k)
        g["attn_v"] = _einsum("bnd,bhne->hde", trace.kv0, d_v)
        d_kv0 += _einsum("hde,bhne->bnd", net.attn_v, d_v)

        g["proj_kg_w"] = _einsum("bnd,bne->de", trace.kg, d_kv0)
        g["proj_kg_b"] = d_kv0.sum(axis=(0, 1))
        d_kg = _einsum("bne,de->bnd", d_kv0, net.proj_kg_w)

    g["proj_mm_w"] = trace.x.T @ d_q0
    g["proj_mm_b"] = d_q0.sum(axis=0)
    return g, d_kg


def warmup_lr(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear ramp from 0 over warmup_steps, then linear decay to 0."""
    if step < 1 or step > total_steps:
        raise ValueError(f"step {step} outside [1, {total_steps}]")
    if warmup_steps > 0 and step <= warmup_steps:
        return base_lr * step / warmup_steps
    if total_steps == warmup_steps:
        return 0.0
    return base_lr * (total_steps - step) / (total_steps - warmup_steps)


class _Adam:
    """Adaptive moments without bias correction; warmup covers the early
    low-magnitude steps."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, name: str, param: np.ndarray, grad_: np.ndarray, lr: float) -> None:
        if name not in self.m:
            self.m[name] = np.zeros_like(param)
            self.v[name] = np.zeros_like(param)
        m, v = self.m[name], self.v[name]
        m *= self.beta1
        m += (1.0 - self.beta1) * grad_
        v *= self.beta2
        v += (1.0 - self.beta2) * grad_ * grad_
        param -= lr * m / (np.sqrt(v) + self.eps)


@dataclass
class TrainResult:
    net: FusionNet
    history: list[dict]
    concept_vectors: np.ndarray | None = None


def _gather(records: list[CampaignRecord], concepts: np.ndarray, idx: np.ndarray):
    """Stack one equal-n_k batch: inputs, concept rows, labels, id matrix."""
    x = np.stack([records[i].multimodal_vec for i in idx]).astype(np.float64)
    ids = np.array([records[i].concept_ids for i in idx], dtype=np.int64)
    labels = np.array([records[i].label for i in idx], dtype=np.int64)
    kg = concepts[ids] if ids.size else np.zeros((len(idx), 0, concepts.shape[1]))
    return x, kg, ids, labels


def _batch_plan(
    ks: np.ndarray, order: np.ndarray, batch_size: int
) -> list[np.ndarray]:
    """Chunk a shuffled index order into batches of records sharing n_k."""
    groups: dict[int, list[int]] = {}
    for i in order:
        groups.setdefault(int(ks[i]), []).append(int(i))
    batches = []
    for k in sorted(groups):
        idx = groups[k]
        for start in range(0, len(idx), batch_size):
            batches.append(np.asarray(idx[start : start + batch_size]))
    return batches


def _eval_net(
    net: FusionNet, records: list[CampaignRecord], concepts: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(labels, predicted labels, positive-class probabilities), batched."""
    ks = np.array([len(r.concept_ids) for r in records])
    labels = np.array([r.label for r in records], dtype=np.int64)
    preds = np.empty(len(records), dtype=np.int64)
    p1 = np.empty(len(records), dtype=np.float64)
    for idx in _batch_plan(ks, np.arange(len(records)), 512):
        x, kg, _, _ = _gather(records, concepts, idx)
        logits, _ = _forward_batch(net, x, kg if net.cfg.use_knowledge else None)
        probs = _softmax(logits, axis=-1)
        # Equal logits resolve to label 0.
        preds[idx] = (probs[:, 1] > probs[:, 0]).astype(np.int64)
        p1[idx] = probs[:, 1]
    return labels, preds, p1


def _resolve_ids(records: list[CampaignRecord], n_concepts: int) -> None:
    for r in records:
        for c in r.concept_ids:
            if not 0 <= c < n_concepts:
                raise ValueError(
                    f"record {r.id}: concept id {c} outside store of {n_concepts}"
                )


def train_classifier(
    records: list[CampaignRecord],
    concept_store: EmbeddingStore,
    cfg: FusionConfig,
    val_records: list[CampaignRecord] | None = None,
) -> TrainResult:
    """Train the fusion classifier with early stopping on validation accuracy.

    When val_records is None a validation share is carved off records with
    the config seed. Training stops once validation accuracy has not
    improved for early_stop_patience consecutive epochs, and the parameters
    from the best epoch are restored. History rows carry epoch, final
    learning rate, mean train loss, train accuracy and validation accuracy.
    """
    if not records:
        raise ValueError("no training records")
    rng = np.random.default_rng(cfg.seed)
    net = FusionNet(cfg, rng=rng)

    if val_records is None:
        order = rng.permutation(len(records))
        n_val = max(1, int(round(len(records) * DEFAULT_VAL_SHARE)))
        if n_val >= len(records):
            raise ValueError("too few records to split off validation")
        val_records = [records[i] for i in order[:n_val]]
        records = [records[i] for i in order[n_val:]]

    labels_present = {r.label for r in records}
    if labels_present != {0, 1}:
        raise ValueError("training records must include both labels")

    concepts = concept_store.vectors.astype(np.float64)
    _resolve_ids(records, concept_store.n)
    _resolve_ids(val_records, concept_store.n)

    ks = np.array([len(r.concept_ids) for r in records])
    n_batches = len(_batch_plan(ks, np.arange(len(records)), cfg.batch_size))
    total_steps = cfg.epochs * n_batches
    warmup_steps = int(round(cfg.warmup_fraction * total_steps))

    adam = _Adam()
    history: list[dict] = []
    best_val = -1.0
    best_snap = net.snapshot()
    best_concepts = concepts.copy() if cfg.train_concepts else None
    stale = 0
    step = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(records))
        epoch_loss = 0.0
        lr = 0.0
        for idx in _batch_plan(ks, order, cfg.batch_size):
            step += 1
            lr = warmup_lr(step, total_steps, warmup_steps, cfg.learning_rate)
            x, kg, ids, batch_labels = _gather(records, concepts, idx)
            logits, trace = _forward_batch(
                net, x, kg if cfg.use_knowledge else None
            )
            shifted = logits - logits.max(axis=1, keepdims=True)
            lse = np.log(np.exp(shifted).sum(axis=1))
            losses = lse - shifted[np.arange(len(idx)), batch_labels]
            epoch_loss += float(losses.sum())
            grads, d_kg = _backward_batch(net, trace, batch_labels)
            params = net.params()
            for name in net.PARAM_NAMES:
                adam.step(name, params[name], grads[name], lr)
            if cfg.train_concepts and cfg.use_knowledge:
                gc = np.zeros_like(concepts)
                np.add.at(gc, ids, d_kg)
                adam.step("concepts", concepts, gc, lr)

        train_labels, train_preds, _ = _eval_net(net, records, concepts)
        val_labels, val_preds, _ = _eval_net(net, val_records, concepts)
        train_acc = float(np.mean(train_labels == train_preds))
        val_acc = float(np.mean(val_labels == val_preds))
        history.append(
            {
                "epoch": epoch + 1,
                "lr": lr,
                "train_loss": epoch_loss / len(records),
                "train_acc": train_acc,
                "val_acc": val_acc,
            }
        )
        if val_acc > best_val:
            best_val = val_acc
            best_snap = net.snapshot()
            if cfg.train_concepts:
                best_concepts = concepts.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break

    net.restore(best_snap)
    return TrainResult(
        net=net,
        history=history,
        concept_vectors=best_concepts if cfg.train_concepts else None,
    )


def predict(
    net: FusionNet, record: CampaignRecord, concept_store: EmbeddingStore
) -> tuple[int, tuple[float, float]]:
    """Label and class probabilities for one record; ties go to label 0."""
    _resolve_ids([record], concept_store.n)
    kg = concept_store.vectors[record.concept_ids].astype(np.float64)
    logits, _ = forward(net, record.multimodal_vec, kg if net.cfg.use_knowledge else None)
    probs = _softmax(logits)
    label = 1 if probs[1] > probs[0] else 0
    return label, (float(probs[0]), float(probs[1]))


def evaluate_records(
    net: FusionNet, records: list[CampaignRecord], concept_store: EmbeddingStore
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(labels, predictions, positive-class scores) over a record list."""
    if not records:
        raise ValueError("no records to evaluate")
    _resolve_ids(records, concept_store.n)
    return _eval_net(net, records, concept_store.vectors.astype(np.float64))


def _head_params(net: FusionNet):
    """Checkpoint order: projections, then per head Q, K, V, then the rest."""
    yield "proj_mm_w", net.proj_mm_w
    yield "proj_mm_b", net.proj_mm_b
    yield "proj_kg_w", net.proj_kg_w
    yield "proj_kg_b", net.proj_kg_b
    for i in range(net.cfg.num_heads):
        yield f"attn_q[{i}]", net.attn_q[i]
        yield f"attn_k[{i}]", net.attn_k[i]
        yield f"attn_v[{i}]", net.attn_v[i]
    yield "attn_out", net.attn_out
    yield "cls_w", net.cls_w
    yield "cls_b", net.cls_b


def save_checkpoint(net: FusionNet, path: str | Path) -> None:
    """Write FUSNET01 weights plus a JSON config sidecar at <path>.json."""
    cfg = net.cfg
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack(
            "<IIIII",
            cfg.d_model,
            cfg.num_heads,
            cfg.multimodal_dim,
            cfg.knowledge_dim,
            1 if cfg.use_knowledge else 0,
        ),
    ]
    parts.extend(
        np.ascontiguousarray(p, dtype="<f4").tobytes() for _, p in _head_params(net)
    )
    path = Path(path)
    path.write_bytes(b"".join(parts))
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(asdict(cfg), sort_keys=True, indent=2) + "\n")


def load_checkpoint(path: str | Path) -> FusionNet:
    """Read a FUSNET01 checkpoint (and its sidecar when present)."""
    path = Path(path)
    buf = path.read_bytes()
    if buf[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: not a fusion checkpoint (bad magic)")
    header_len = len(CHECKPOINT_MAGIC) + 20
    if len(buf) < header_len:
        raise TruncatedStoreError(f"{path}: header truncated")
    d_model, num_heads, mm_dim, kg_dim, flags = struct.unpack(
        "<IIIII", buf[len(CHECKPOINT_MAGIC) : header_len]
    )

    sidecar = path.with_name(path.name + ".json")
    if sidecar.exists():
        try:
            cfg_dict = json.loads(sidecar.read_text())
            cfg = FusionConfig(**cfg_dict)
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise StoreFormatError(f"{sidecar}: bad config sidecar: {exc}") from exc
        from_header = (d_model, num_heads, mm_dim, kg_dim, flags)
        from_sidecar = (
            cfg.d_model,
            cfg.num_heads,
            cfg.multimodal_dim,
            cfg.knowledge_dim,
            1 if cfg.use_knowledge else 0,
        )
        if from_header != from_sidecar:
            raise StoreFormatError(f"{path}: header disagrees with config sidecar")
    else:
        try:
            cfg = FusionConfig(
                d_model=d_model,
                num_heads=num_heads,
                multimodal_dim=mm_dim,
                knowledge_dim=kg_dim,
                use_knowledge=bool(flags),
            )
        except ValueError as exc:
            raise StoreFormatError(f"{path}: invalid header: {exc}") from exc

    net = FusionNet(cfg, rng=np.random.default_rng(0))
    pos = header_len
    for name, param in _head_params(net):
        nbytes = param.size * 4
        if pos + nbytes > len(buf):
            raise TruncatedStoreError(f"{path}: truncated in {name}")
        values = np.frombuffer(buf[pos : pos + nbytes], dtype="<f4")
        if not np.isfinite(values).all():
            raise NonFiniteError(f"{path}: non-finite values in {name}")
        param[...] = values.reshape(param.shape).astype(np.float64)
        pos += nbytes
    if pos != len(buf):
        raise StoreFormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return net
