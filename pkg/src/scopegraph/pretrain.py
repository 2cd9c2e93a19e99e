"""Toy continue-pretraining: aspect-masking (AOE), image-text matching (ITM)
and aspect-level sentiment (ASSC) objectives on a shared encoder.

The image is a fixed-length feature vector from the annotation file, projected
into the encoder space. Each matching head is a logistic unit over two cosine
similarities, text pool to image and scene-graph pool to image. A linear map of
the concatenated pools could not tell a matched image from a mismatched one,
since it scores each input separately.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .conllu import AnnotatedSample
from .graphs import uniform_init
from .model import MASK, EncoderStub, TrainConfig, TrainingDiverged, bce, build_vocab, sgd_step
from .tensor import Value

log = logging.getLogger(__name__)


@dataclass
class AoePair:
    sample_id: str
    text: list[str]
    masked_text: list[str]
    scene: list[str]
    masked_scene: list[str]
    image: np.ndarray

    def record(self) -> dict:
        return {
            "kind": "aoe",
            "sample_id": self.sample_id,
            "positive": {"text": self.text, "scene_graph": self.scene, "label": 1},
            "negative": {"text": self.masked_text, "scene_graph": self.masked_scene, "label": 0},
        }


@dataclass
class ItmPair:
    sample_id: str
    text: list[str]
    scene: list[str]
    image: np.ndarray
    negative_image: np.ndarray
    donor_id: str

    def record(self) -> dict:
        return {
            "kind": "itm",
            "sample_id": self.sample_id,
            "positive": {"image_from": self.sample_id, "label": 1},
            "negative": {"image_from": self.donor_id, "label": 0},
        }


@dataclass
class AsscInstance:
    sample_id: str
    text: list[str]
    mask: np.ndarray  # [N, S], 1 on each aspect's tokens
    labels: list[int]
    image: np.ndarray


def _image(sample: AnnotatedSample, dim: int) -> np.ndarray:
    return np.zeros(dim) if sample.image_feature is None else np.asarray(sample.image_feature, dtype=np.float64)


def image_dim(corpus: Sequence[AnnotatedSample]) -> int:
    dims = {len(s.image_feature) for s in corpus if s.image_feature is not None}
    if len(dims) > 1:
        raise ValueError(f"inconsistent image feature lengths {sorted(dims)}")
    return dims.pop() if dims else 1


def build_aoe_pairs(corpus: Sequence[AnnotatedSample]) -> list[AoePair]:
    dim = image_dim(corpus)
    pairs = []
    for s in corpus:
        if not s.aspects:
            log.debug("no aspects in %s, no AOE pair", s.sample_id)
            continue
        text = s.tree.forms
        positions = {i for a in s.aspects for i in range(a.start - 1, a.end)}
        aspect_words = {text[i] for i in positions}
        masked = [MASK if i in positions else w for i, w in enumerate(text)]
        scene = list(s.scene_graph or [])
        masked_scene = [MASK if w in aspect_words else w for w in scene]
        pairs.append(AoePair(s.sample_id, text, masked, scene, masked_scene, _image(s, dim)))
    return pairs


def build_itm_pairs(corpus: Sequence[AnnotatedSample], seed: int) -> list[ItmPair]:
    n = len(corpus)
    if n < 2:
        raise ValueError("ITM pairs need at least two samples")
    dim = image_dim(corpus)
    rng = np.random.default_rng(seed)
    pairs = []
    for i, s in enumerate(corpus):
        j = int(rng.integers(n - 1))
        j += j >= i
        donor = corpus[j]
        pairs.append(ItmPair(s.sample_id, s.tree.forms, list(s.scene_graph or []), _image(s, dim), _image(donor, dim), donor.sample_id))
    return pairs


def build_assc_instances(corpus: Sequence[AnnotatedSample]) -> list[AsscInstance]:
    dim = image_dim(corpus)
    out = []
    for s in corpus:
        if not s.aspects:
            continue
        mask = np.zeros((len(s.aspects), len(s.tree)))
        for r, a in enumerate(s.aspects):
            mask[r, a.start - 1 : a.end] = 1.0
        out.append(AsscInstance(s.sample_id, s.tree.forms, mask, [a.polarity for a in s.aspects], _image(s, dim)))
    return out


# ----------------------------------------------------------------------------
# objectives
# ----------------------------------------------------------------------------


def aoe_loss(label, predicted: Value) -> Value:
    return T.total(bce(predicted, label))


itm_loss = aoe_loss


def assc_loss(H: Value, mask: np.ndarray, labels: Sequence[int], W: Value, b: Value) -> Value:
    """Replicate ``H`` once per aspect, pool each copy under its mask row, classify.

    Replication followed by masked mean pooling is a single product with the
    row-normalised mask.
    """
    mask = np.asarray(mask, dtype=np.float64)
    counts = mask.sum(axis=1, keepdims=True)
    if mask.ndim != 2 or mask.shape[1] != H.shape[0]:
        raise T.ShapeError(f"aspect mask {list(mask.shape)} for {H.shape[0]} tokens")
    if np.any(counts == 0):
        raise ValueError("empty aspect mask row")
    pooled = T.matmul(Value(mask / counts), H)
    logp = T.log_softmax_rows(T.add_bias(T.matmul(pooled, W), b))
    picked = T.take(logp, (np.arange(len(labels)), np.asarray(labels)))
    return T.scale(T.mean(picked), -1.0)


def joint_pretrain_loss(aoe, itm, assc, qformer=0.0) -> Value:
    """``L_Q + L_AOE + L_ITM + L_ASSC``; the query-transformer term is a pluggable slot."""
    return T.add(T.add(T.add(T.as_value(qformer), aoe), itm), assc)


# ----------------------------------------------------------------------------
# model
# ----------------------------------------------------------------------------


class PretrainModel:
    def __init__(self, vocab: Sequence[str], img_dim: int, config: TrainConfig):
        rng = np.random.default_rng(config.seed)
        D = config.dim
        self.dim = D
        self.encoder = EncoderStub(vocab, D, rng, config.encoder_mixing, config.mix_window)
        self.W_v = uniform_init(rng, (img_dim, D), img_dim)
        self.aoe_W = uniform_init(rng, (2, 1), 2)
        self.aoe_b = uniform_init(rng, (1,), 2)
        self.itm_W = uniform_init(rng, (2, 1), 2)
        self.itm_b = uniform_init(rng, (1,), 2)
        self.assc_W = uniform_init(rng, (D, 3), D)
        self.assc_b = uniform_init(rng, (3,), D)

    def parameters(self) -> list[Value]:
        return self.encoder.parameters() + [self.W_v, self.aoe_W, self.aoe_b, self.itm_W, self.itm_b, self.assc_W, self.assc_b]

    def _pool(self, tokens: Sequence[str], ordered: bool = True) -> Value:
        if not tokens:
            return Value(np.zeros(self.dim))
        H = self.encoder.encode(tokens) if ordered else self.encoder.lookup(tokens)
        return T.masked_mean_pool(H, np.ones(H.shape[0]))

    def _image(self, image: np.ndarray) -> Value:
        return T.reshape(T.matmul(Value(image[None, :]), self.W_v), (self.dim,))

    def match_prob(self, head: str, text, scene, image) -> Value:
        # the scene graph is a bag of objects, so it skips the order-aware mixing
        t, v, s = self._pool(text), self._image(image), self._pool(scene, ordered=False)
        row = lambda x: T.reshape(x, (1, self.dim))
        z = T.concat([T.cosine_pairwise(row(t), row(v)), T.cosine_pairwise(row(s), row(v))], axis=1)
        W, b = (self.aoe_W, self.aoe_b) if head == "aoe" else (self.itm_W, self.itm_b)
        return T.reshape(T.sigmoid(T.add_bias(T.matmul(z, W), b)), (1,))

    def fused(self, text, image) -> Value:
        return T.add_bias(self.encoder.encode(text), self._image(image))

    def losses(self, aoe: AoePair | None, itm: ItmPair | None, assc: AsscInstance | None) -> dict[str, Value]:
        zero = Value(0.0)
        out = {"L_AOE": zero, "L_ITM": zero, "L_ASSC": zero}
        if aoe is not None:
            pos = aoe_loss([1.0], self.match_prob("aoe", aoe.text, aoe.scene, aoe.image))
            neg = aoe_loss([0.0], self.match_prob("aoe", aoe.masked_text, aoe.masked_scene, aoe.image))
            out["L_AOE"] = T.scale(T.add(pos, neg), 0.5)
        if itm is not None:
            pos = itm_loss([1.0], self.match_prob("itm", itm.text, itm.scene, itm.image))
            neg = itm_loss([0.0], self.match_prob("itm", itm.text, itm.scene, itm.negative_image))
            out["L_ITM"] = T.scale(T.add(pos, neg), 0.5)
        if assc is not None:
            out["L_ASSC"] = assc_loss(self.fused(assc.text, assc.image), assc.mask, assc.labels, self.assc_W, self.assc_b)
        return out

    def assc_predict(self, inst: AsscInstance) -> list[int]:
        H = self.fused(inst.text, inst.image)
        pooled = (inst.mask / inst.mask.sum(axis=1, keepdims=True)) @ H.data
        return [int(i) for i in np.argmax(pooled @ self.assc_W.data + self.assc_b.data, axis=1)]


def split(corpus: Sequence[AnnotatedSample], seed: int, holdout: float = 0.2):
    order = np.random.default_rng(seed).permutation(len(corpus))
    k = max(1, int(round(len(corpus) * holdout)))
    held = sorted(order[:k])
    train_idx = sorted(order[k:])
    return [corpus[i] for i in train_idx], [corpus[i] for i in held]


def _by_id(items):
    return {x.sample_id: x for x in items}


def evaluate_pretrain(model: PretrainModel, corpus: Sequence[AnnotatedSample], seed: int, qformer: float = 0.0) -> dict:
    aoe = build_aoe_pairs(corpus)
    itm = build_itm_pairs(corpus, seed) if len(corpus) >= 2 else []
    assc = build_assc_instances(corpus)
    aoe_hits = sum(
        (model.match_prob("aoe", p.text, p.scene, p.image).item() > 0.5)
        + (model.match_prob("aoe", p.masked_text, p.masked_scene, p.image).item() <= 0.5)
        for p in aoe
    )
    itm_hits = sum(
        (model.match_prob("itm", p.text, p.scene, p.image).item() > 0.5)
        + (model.match_prob("itm", p.text, p.scene, p.negative_image).item() <= 0.5)
        for p in itm
    )
    gold, pred = [], []
    for inst in assc:
        gold += inst.labels
        pred += model.assc_predict(inst)
    comps = {"L_AOE": 0.0, "L_ITM": 0.0, "L_ASSC": 0.0}
    a_map, i_map, s_map = _by_id(aoe), _by_id(itm), _by_id(assc)
    for s in corpus:
        for k, v in model.losses(a_map.get(s.sample_id), i_map.get(s.sample_id), s_map.get(s.sample_id)).items():
            comps[k] += v.item() / len(corpus)
    comps["L_Q"] = float(qformer)
    return {
        "aoe_acc": aoe_hits / (2 * len(aoe)) if aoe else 0.0,
        "itm_acc": itm_hits / (2 * len(itm)) if itm else 0.0,
        "assc_acc": sum(g == p for g, p in zip(gold, pred)) / len(gold) if gold else 0.0,
        **comps,
        "L_p": comps["L_Q"] + comps["L_AOE"] + comps["L_ITM"] + comps["L_ASSC"],
    }


def pretrain(
    corpus: Sequence[AnnotatedSample],
    config: TrainConfig,
    qformer: float = 0.0,
    eval_corpus: Sequence[AnnotatedSample] | None = None,
):
    """Train the three heads jointly.

    With ``eval_corpus`` the whole of ``corpus`` is used for training and the
    report comes from ``eval_corpus``; otherwise a fifth of ``corpus`` is held
    out. Returns ``(model, report)``; the report holds held-out accuracies and
    the held-out mean of each loss component.
    """
    if len(corpus) < 2:
        raise ValueError("pretraining needs at least two samples")
    if eval_corpus is None:
        train_set, held = split(corpus, config.seed)
    else:
        train_set, held = list(corpus), list(eval_corpus)
    model = PretrainModel(build_vocab(list(corpus) + list(held)), image_dim(corpus), config)
    params = model.parameters()
    aoe = _by_id(build_aoe_pairs(train_set))
    itm: dict[str, ItmPair] = {}
    assc = _by_id(build_assc_instances(train_set))
    rng = np.random.default_rng(config.seed + 1)
    for epoch in range(1, config.epochs + 1):
        if len(train_set) >= 2:
            # fresh donors each epoch so the matching head cannot memorise fixed negatives
            itm = _by_id(build_itm_pairs(train_set, config.seed + epoch))
        for idx in rng.permutation(len(train_set)):
            sid = train_set[idx].sample_id
            parts = model.losses(aoe.get(sid), itm.get(sid), assc.get(sid))
            loss = joint_pretrain_loss(parts["L_AOE"], parts["L_ITM"], parts["L_ASSC"], qformer)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite pretraining loss at epoch {epoch}, sample {sid}")
            if not loss.requires_grad:
                continue
            T.backward(loss)
            sgd_step(params, config.lr, 1, config.grad_clip)
    return model, {"task": "pretrain", **evaluate_pretrain(model, held, config.seed, qformer)}
