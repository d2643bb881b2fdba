"""Small BERT-style encoder used as a binary acceptor."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autograd as ag
from .automata import Alphabet
from .dataset import CLS_ID, SEP_ID, SequenceDataset, encode_tokens
from .rng import generator

log = logging.getLogger(__name__)

INIT_STD = 0.02


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TransformerConfig:
    vocab_size: int
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 64
    max_len: int = 64

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.max_len < 3:
            raise ValueError("max_len must be at least 3")
        if self.vocab_size < 3:
            raise ValueError("vocab_size must cover [CLS], [SEP] and one symbol")
        if min(self.d_model, self.n_layers, self.n_heads, self.d_ff) < 1:
            raise ValueError("all sizes must be positive")

    @classmethod
    def for_alphabet(cls, alphabet: Alphabet, **kwargs) -> "TransformerConfig":
        return cls(vocab_size=len(alphabet) + 2, **kwargs)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 5e-4
    batch_size: int = 1
    seed: int = 0
    # stop early once an epoch's mean loss is at or below this (off when None)
    stop_loss: Optional[float] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size != 1:
            raise ValueError("only batch_size=1 is supported")
        if self.stop_loss is not None and self.stop_loss < 0:
            raise ValueError("stop_loss must be non-negative")


def param_shapes(cfg: TransformerConfig) -> dict[str, tuple]:
    d, f = cfg.d_model, cfg.d_ff
    shapes = {
        "emb.token": (cfg.vocab_size, d),
        "emb.position": (cfg.max_len, d),
        "emb.ln.gain": (d,),
        "emb.ln.bias": (d,),
        "cls.weight": (d, 2),
        "cls.bias": (2,),
    }
    for i in range(cfg.n_layers):
        p = f"block{i}."
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"attn.{proj}.weight"] = (d, d)
            shapes[p + f"attn.{proj}.bias"] = (d,)
        shapes[p + "ln1.gain"] = (d,)
        shapes[p + "ln1.bias"] = (d,)
        shapes[p + "ff1.weight"] = (d, f)
        shapes[p + "ff1.bias"] = (f,)
        shapes[p + "ff2.weight"] = (f, d)
        shapes[p + "ff2.bias"] = (d,)
        shapes[p + "ln2.gain"] = (d,)
        shapes[p + "ln2.bias"] = (d,)
    return shapes


def param_count(cfg: TransformerConfig) -> int:
    """Closed form of the total parameter count."""
    d, f = cfg.d_model, cfg.d_ff
    per_block = 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d) + 2 * d
    return cfg.vocab_size * d + cfg.max_len * d + 2 * d + cfg.n_layers * per_block + 2 * d + 2


@dataclass
class TransformerModel:
    config: TransformerConfig
    alphabet: Alphabet
    params: ag.ParamStore
    seed: int = 0
    training_meta: dict = field(default_factory=dict)

    def encode(self, seq: str) -> list[int]:
        return encode_tokens(seq, self.alphabet, self.config.max_len)

    def rep(self, ids) -> np.ndarray:
        return rep(self, ids)

    def classify(self, seq: str) -> tuple[int, np.ndarray]:
        return classify(self, self.encode(seq))

    def label(self, seq: str) -> int:
        return self.classify(seq)[0]

    __call__ = label

    def fingerprint(self) -> str:
        return hashlib.sha256(self.params.flat.tobytes()).hexdigest()[:16]

    def classifier_params(self) -> dict[str, np.ndarray]:
        return {"weight": self.params["cls.weight"].copy(), "bias": self.params["cls.bias"].copy()}

    def save(self, path) -> None:
        header = {
            "model_kind": "transformer",
            "config": asdict(self.config),
            "alphabet": list(self.alphabet.symbols),
            "seed": self.seed,
            "training_meta": self.training_meta,
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"header": header, "params": self.params.to_json()}, f)

    @classmethod
    def load(cls, path) -> "TransformerModel":
        with open(path, encoding="utf-8") as f:
            obj = json.load(f)
        header = obj["header"]
        if header.get("model_kind") != "transformer":
            raise ValueError(f"not a transformer model file: {header.get('model_kind')!r}")
        cfg = TransformerConfig(**header["config"])
        params = ag.ParamStore.from_json(obj["params"], param_shapes(cfg))
        return cls(cfg, Alphabet(header["alphabet"]), params, header.get("seed", 0),
                   header.get("training_meta", {}))


def build_transformer(config: TransformerConfig, alphabet: Alphabet, seed: int = 0) -> TransformerModel:
    """Normal(0, 0.02) embeddings and weights, zero biases, unit layer-norm gains."""
    if config.vocab_size != len(alphabet) + 2:
        raise ValueError(f"vocab_size {config.vocab_size} does not match alphabet of size {len(alphabet)}")
    rng = generator(seed, "transformer-init")
    arrays = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gain"):
            arrays[name] = np.ones(shape)
        elif name.endswith(".bias"):
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = rng.normal(0.0, INIT_STD, size=shape)
    return TransformerModel(config, alphabet, ag.ParamStore(arrays), seed)


# ---------------------------------------------------------------------------
# forward pass


def _check_frame(ids, cfg: TransformerConfig) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or len(ids) < 2 or ids[0] != CLS_ID or ids[-1] != SEP_ID:
        raise ValueError("token ids must start with [CLS] and end with [SEP]")
    if len(ids) > cfg.max_len:
        raise ValueError(f"{len(ids)} tokens exceed max_len {cfg.max_len}")
    if (ids[1:-1] < 2).any() or (ids >= cfg.vocab_size).any():
        raise ValueError("interior ids must be alphabet symbols")
    return ids


def _attention(P, x, prefix: str, cfg: TransformerConfig, rows=None):
    """Multi-head self-attention built from primitive ops (reference version)."""
    n, d, h = x.shape[0], cfg.d_model, cfg.n_heads
    dh = d // h

    def heads(name, src):
        y = ag.linear(src, P[prefix + name + ".weight"], P[prefix + name + ".bias"])
        return ag.transpose(ag.reshape(y, (src.shape[0], h, dh)), (1, 0, 2))

    xq = x if rows is None else ag.index(x, rows)
    q, k, v = heads("q", xq), heads("k", x), heads("v", x)
    scores = ag.scale(q @ ag.transpose(k, (0, 2, 1)), 1.0 / math.sqrt(dh))
    ctx = ag.softmax(scores, axis=-1) @ v
    ctx = ag.reshape(ag.transpose(ctx, (1, 0, 2)), (xq.shape[0], d))
    return ag.linear(ctx, P[prefix + "o.weight"], P[prefix + "o.bias"])


def fused_attention(P, x, prefix: str, cfg: TransformerConfig, rows=None):
    """Same result as :func:`_attention` as one taped op with a manual backward.

    ``rows`` restricts the queries (and so the output rows) to a slice.
    """
    x = ag.as_tensor(x)
    names = [prefix + f"{p}.{w}" for p in "qkvo" for w in ("weight", "bias")]
    ts = [ag.as_tensor(P[k]) for k in names]
    Wq, bq, Wk, bk, Wv, bv, Wo, bo = (t.data for t in ts)
    X = x.data
    n, d, h = X.shape[0], cfg.d_model, cfg.n_heads
    dh = d // h
    c = 1.0 / math.sqrt(dh)
    Xq = X if rows is None else X[rows]
    m = Xq.shape[0]
    Q = (Xq @ Wq + bq).reshape(m, h, dh).transpose(1, 0, 2)
    K = (X @ Wk + bk).reshape(n, h, dh).transpose(1, 0, 2)
    V = (X @ Wv + bv).reshape(n, h, dh).transpose(1, 0, 2)
    S = (Q @ K.transpose(0, 2, 1)) * c
    S = np.exp(S - S.max(axis=-1, keepdims=True))
    Pm = S / S.sum(axis=-1, keepdims=True)
    C = (Pm @ V).transpose(1, 0, 2).reshape(m, d)
    out = C @ Wo + bo

    def bw(g):
        dC = (g @ Wo.T).reshape(m, h, dh).transpose(1, 0, 2)
        dP = dC @ V.transpose(0, 2, 1)
        dV = Pm.transpose(0, 2, 1) @ dC
        dS = Pm * (dP - (dP * Pm).sum(axis=-1, keepdims=True)) * c
        dQ = (dS @ K).transpose(1, 0, 2).reshape(m, d)
        dK = (dS.transpose(0, 2, 1) @ Q).transpose(1, 0, 2).reshape(n, d)
        dV = dV.transpose(1, 0, 2).reshape(n, d)
        grads = (Xq.T @ dQ, dQ.sum(0), X.T @ dK, dK.sum(0), X.T @ dV, dV.sum(0), C.T @ g, g.sum(0))
        for t, gr in zip(ts, grads):
            ag.accumulate(t, gr)
        dx = dK @ Wk.T + dV @ Wv.T
        if rows is None:
            dx += dQ @ Wq.T
        else:
            dx[rows] += dQ @ Wq.T
        ag.accumulate(x, dx)
    return ag.custom_op(out, [x] + ts, bw, "attention")


def encoder(P, ids: np.ndarray, cfg: TransformerConfig, cls_only: bool = False, fused: bool = True):
    """Hidden states of the last block, one row per token.

    With ``cls_only`` the last block computes just the [CLS] row (all later
    operations are row-wise, so row 0 is unchanged). ``fused=False`` uses the
    primitive-op attention.
    """
    attend = fused_attention if fused else _attention
    n = len(ids)
    x = ag.embedding_lookup(P["emb.token"], ids) + ag.index(P["emb.position"], slice(0, n))
    x = ag.layer_norm(x, P["emb.ln.gain"], P["emb.ln.bias"])
    for i in range(cfg.n_layers):
        p = f"block{i}."
        rows = slice(0, 1) if cls_only and i == cfg.n_layers - 1 else None
        res = x if rows is None else ag.index(x, rows)
        # post-norm (BERT) layout
        x = ag.layer_norm(res + attend(P, x, p + "attn.", cfg, rows), P[p + "ln1.gain"], P[p + "ln1.bias"])
        ff = ag.linear(ag.gelu(ag.linear(x, P[p + "ff1.weight"], P[p + "ff1.bias"])),
                       P[p + "ff2.weight"], P[p + "ff2.bias"])
        x = ag.layer_norm(x + ff, P[p + "ln2.gain"], P[p + "ln2.bias"])
    return x


def rep_tensor(P, ids, cfg: TransformerConfig, fused: bool = True):
    return ag.index(encoder(P, ids, cfg, cls_only=True, fused=fused), 0)


def logits_tensor(P, ids, cfg: TransformerConfig, fused: bool = True):
    return ag.linear(rep_tensor(P, ids, cfg, fused), P["cls.weight"], P["cls.bias"])


def rep(model: TransformerModel, ids) -> np.ndarray:
    """Last-block output at the [CLS] position."""
    ids = _check_frame(ids, model.config)
    return rep_tensor(ag.constants(model.params), ids, model.config).data.copy()


def decide(logits: np.ndarray) -> tuple[int, np.ndarray]:
    """Argmax label (ties go to 0) and softmax confidences."""
    z = logits - logits.max()
    p = np.exp(z)
    p /= p.sum()
    return int(logits[1] > logits[0]), p


def classify(model: TransformerModel, ids) -> tuple[int, np.ndarray]:
    ids = _check_frame(ids, model.config)
    return decide(logits_tensor(ag.constants(model.params), ids, model.config).data)


def loss_tensor(P, ids, label: int, cfg: TransformerConfig, fused: bool = True):
    return ag.cross_entropy(logits_tensor(P, ids, cfg, fused), label)


# ---------------------------------------------------------------------------
# training


def train_transformer(model: TransformerModel, dataset: SequenceDataset, tc: TrainConfig,
                      state: Optional[ag.AdamWState] = None) -> tuple[TransformerModel, list[float]]:
    """Minimise summed cross-entropy, one sequence per AdamW step.

    Each epoch visits the train split in a fresh seed-determined order.
    Returns the model (updated in place) and the mean loss of every epoch.
    """
    if dataset.alphabet != model.alphabet:
        raise ValueError(f"dataset alphabet {dataset.alphabet.symbols} != model alphabet {model.alphabet.symbols}")
    cfg = model.config
    train = dataset.train
    encoded = [(np.asarray(model.encode(it.tokens)), it.label) for it in train]
    rng = generator(tc.seed, "transformer-train")
    state = state or ag.AdamWState.for_params(model.params)
    history = []
    start = time.perf_counter()
    for epoch in range(tc.epochs):
        total = 0.0
        for k in rng.permutation(len(encoded)):
            ids, label = encoded[k]
            try:
                with ag.Tape() as tape:
                    loss = loss_tensor(tape.watch(model.params), ids, label, cfg)
                grads = ag.backward(tape, loss)
                ag.adamw_step(model.params, grads, state, tc.learning_rate)
            except ag.NonFiniteError as e:
                raise TrainingError(
                    f"non-finite value at epoch {epoch}, sequence {train[k].tokens!r}: {e}") from e
            total += loss.item()
        history.append(total / len(encoded))
        log.info("transformer epoch %d/%d loss %.5f (%.0fs)", epoch + 1, tc.epochs, history[-1],
                 time.perf_counter() - start)
        if tc.stop_loss is not None and history[-1] <= tc.stop_loss:
            break
    model.training_meta = {"epochs": tc.epochs, "epochs_run": len(history), "learning_rate": tc.learning_rate,
                           "seed": tc.seed, "final_loss": history[-1], "steps": state.step}
    return model, history
