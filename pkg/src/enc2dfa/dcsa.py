"""Deterministic continuous-state automata distilled from a transformer.

A DCSA reads raw symbols (no [CLS]/[SEP]) with a recurrent cell starting from
a learned state ``s0``; its acceptor is the transformer's classifier, copied
and frozen. For the LSTM cell the machine state is ``[h; c]`` (64 numbers
for a 32-wide cell); only ``h`` is exposed to the classifier and to the
representation alignment.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .automata import Alphabet
from .dataset import SequenceDataset, encode_tokens
from .rng import generator
from .transformer import TrainingError, TransformerModel, decide

log = logging.getLogger(__name__)


class DcsaKind(str, Enum):
    RNN = "rnn"
    GRU = "gru"
    LSTM = "lstm"


_GATES = {DcsaKind.RNN: 1, DcsaKind.GRU: 3, DcsaKind.LSTM: 4}


@dataclass(frozen=True)
class DistillConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    alpha: float = 1.0
    seed: int = 0
    # "per-example": an L_D step then an L_Rep step for every sequence;
    # "per-epoch": a full L_D pass, then a full L_Rep pass.
    alternation: str = "per-example"
    # stop early once an epoch's mean L_D is at or below this (off when None)
    stop_loss: Optional[float] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.alternation not in ("per-example", "per-epoch"):
            raise ValueError(f"unknown alternation {self.alternation!r}")
        if self.stop_loss is not None and self.stop_loss < 0:
            raise ValueError("stop_loss must be non-negative")


def param_shapes(kind: DcsaKind, vocab_size: int, dim: int) -> dict[str, tuple]:
    g = _GATES[kind] * dim
    shapes = {"emb": (vocab_size, dim), "cell.wx": (dim, g), "cell.wh": (dim, g), "cell.b": (g,),
              "s0": (2 * dim if kind is DcsaKind.LSTM else dim,)}
    if kind is DcsaKind.GRU:
        # GRU keeps a separate recurrent bias: the candidate uses r * (W_h h + b_h)
        shapes["cell.bh"] = (g,)
    return shapes


@dataclass
class DcsaModel:
    kind: DcsaKind
    alphabet: Alphabet
    params: ag.ParamStore
    classifier: ag.ParamStore
    state_dim: int
    source_transformer_hash: str = ""
    distill_config: dict = field(default_factory=dict)
    _const: Optional[dict] = field(default=None, init=False, repr=False, compare=False)
    _cls: Optional[dict] = field(default=None, init=False, repr=False, compare=False)

    @property
    def full_dim(self) -> int:
        return 2 * self.state_dim if self.kind is DcsaKind.LSTM else self.state_dim

    def constants(self) -> dict:
        """Frozen tensors for inference; call :meth:`invalidate` after training."""
        if self._const is None:
            self._const = ag.constants(self.params)
            self._cls = ag.constants(self.classifier)
        return self._const

    def classifier_tensors(self) -> dict:
        self.constants()
        return self._cls

    def invalidate(self) -> None:
        self._const = self._cls = None

    def symbol_id(self, ch: str) -> int:
        return encode_tokens(ch, self.alphabet)[1]

    def initial_state(self) -> np.ndarray:
        return self.params["s0"].copy()

    def exposed(self, state: np.ndarray) -> np.ndarray:
        return state[..., : self.state_dim]

    def step(self, state: np.ndarray, symbol_id: int) -> np.ndarray:
        return dcsa_step(self, state, symbol_id)

    def run(self, seq: str) -> np.ndarray:
        return dcsa_run(self, seq)

    def classify(self, seq: str) -> tuple[int, np.ndarray]:
        return dcsa_classify(self, seq)

    def label(self, seq: str) -> int:
        return self.classify(seq)[0]

    __call__ = label

    def label_of_state(self, state: np.ndarray) -> int:
        return int(self.logits_of_states(state[None, :])[0] > 0)

    def logits_of_states(self, states: np.ndarray) -> np.ndarray:
        """Logit difference (class 1 minus class 0) for a batch of full states."""
        w, b = self.classifier["weight"], self.classifier["bias"]
        logits = self.exposed(states) @ w + b
        return logits[:, 1] - logits[:, 0]

    def save(self, path) -> None:
        header = {
            "model_kind": "dcsa",
            "cell_kind": self.kind.value,
            "alphabet": list(self.alphabet.symbols),
            "state_dim": self.state_dim,
            "source_transformer_hash": self.source_transformer_hash,
            "distill_config": self.distill_config,
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"header": header, "params": self.params.to_json(),
                       "classifier": self.classifier.to_json()}, f)

    @classmethod
    def load(cls, path) -> "DcsaModel":
        with open(path, encoding="utf-8") as f:
            obj = json.load(f)
        header = obj["header"]
        if header.get("model_kind") != "dcsa":
            raise ValueError(f"not a DCSA model file: {header.get('model_kind')!r}")
        kind = DcsaKind(header["cell_kind"])
        alphabet = Alphabet(header["alphabet"])
        dim = header["state_dim"]
        params = ag.ParamStore.from_json(obj["params"], param_shapes(kind, len(alphabet) + 2, dim))
        classifier = ag.ParamStore.from_json(obj["classifier"], {"weight": (dim, 2), "bias": (2,)})
        return cls(kind, alphabet, params, classifier, dim, header.get("source_transformer_hash", ""),
                   header.get("distill_config", {}))


def build_dcsa(kind, transformer: TransformerModel, seed: int = 0) -> DcsaModel:
    """Fresh DCSA sharing the transformer's token embedding and classifier.

    Cell weights are uniform in +-1/sqrt(dim); ``s0`` starts at zero.
    """
    kind = DcsaKind(kind)
    dim = transformer.config.d_model
    rng = generator(seed, "dcsa-init")
    bound = 1.0 / math.sqrt(dim)
    arrays = {}
    for name, shape in param_shapes(kind, transformer.config.vocab_size, dim).items():
        if name == "emb":
            arrays[name] = transformer.params["emb.token"].copy()
        elif name == "s0":
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    classifier = ag.ParamStore(transformer.classifier_params())
    return DcsaModel(kind, transformer.alphabet, ag.ParamStore(arrays), classifier, dim,
                     transformer.fingerprint())


# ---------------------------------------------------------------------------
# cells; every function works on a single state (D,) or a batch (B, D)


def _cell(kind: DcsaKind, P, xw, state, dim: int):
    """One transition given the precomputed input projection ``xw``."""
    if kind is DcsaKind.RNN:
        return ag.tanh(xw + state @ P["cell.wh"])
    if kind is DcsaKind.GRU:
        gh = ag.linear(state, P["cell.wh"], P["cell.bh"])
        rz = ag.sigmoid(ag.index(xw, (..., slice(0, 2 * dim))) + ag.index(gh, (..., slice(0, 2 * dim))))
        r = ag.index(rz, (..., slice(0, dim)))
        z = ag.index(rz, (..., slice(dim, 2 * dim)))
        n = ag.tanh(ag.index(xw, (..., slice(2 * dim, None))) + r * ag.index(gh, (..., slice(2 * dim, None))))
        # update gate z = 1 moves fully to the candidate n
        return state + z * (n - state)
    h = ag.index(state, (..., slice(0, dim)))
    c = ag.index(state, (..., slice(dim, None)))
    gates = xw + h @ P["cell.wh"]
    ifo = ag.sigmoid(ag.concat([ag.index(gates, (..., slice(0, 2 * dim))),
                                ag.index(gates, (..., slice(3 * dim, None)))], axis=-1))
    i = ag.index(ifo, (..., slice(0, dim)))
    f = ag.index(ifo, (..., slice(dim, 2 * dim)))
    o = ag.index(ifo, (..., slice(2 * dim, None)))
    g = ag.tanh(ag.index(gates, (..., slice(2 * dim, 3 * dim))))
    c = f * c + i * g
    return ag.concat([o * ag.tanh(c), c], axis=-1)


def _input_proj(P, ids):
    return ag.linear(ag.embedding_lookup(P["emb"], ids), P["cell.wx"], P["cell.b"])


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def recurrent_scan(kind: DcsaKind, xw, wh, s0, dim: int, bh=None):
    """Final state after folding the cell over the rows of ``xw``.

    Same maths as repeated :func:`_cell`, as a single taped op with a
    hand-written backward pass through time (much less bookkeeping than one
    node per gate). Single sequence only: ``xw`` is (T, G), ``s0`` is 1-D.
    """
    xw, wh, s0 = ag.as_tensor(xw), ag.as_tensor(wh), ag.as_tensor(s0)
    X, W = xw.data, wh.data
    T = X.shape[0]
    parents = [xw, wh, s0] + ([ag.as_tensor(bh)] if bh is not None else [])
    B = parents[3].data if bh is not None else None
    states = [s0.data]
    cache = []
    s = s0.data
    for t in range(T):
        if kind is DcsaKind.RNN:
            s = np.tanh(X[t] + s @ W)
        elif kind is DcsaKind.GRU:
            gh = s @ W + B
            rz = _sig(X[t, : 2 * dim] + gh[: 2 * dim])
            r, z = rz[:dim], rz[dim:]
            n = np.tanh(X[t, 2 * dim:] + r * gh[2 * dim:])
            cache.append((gh, r, z, n))
            s = s + z * (n - s)
        else:
            h, c = s[:dim], s[dim:]
            g = X[t] + h @ W
            i, f, o = _sig(g[:dim]), _sig(g[dim: 2 * dim]), _sig(g[3 * dim:])
            gg = np.tanh(g[2 * dim: 3 * dim])
            c = f * c + i * gg
            tc = np.tanh(c)
            cache.append((i, f, o, gg, tc))
            s = np.concatenate([o * tc, c])
        states.append(s)

    def bw(g):
        dX = np.zeros_like(X)
        prev = np.stack(states[:-1]) if T else np.zeros((0, s0.data.shape[0]))
        gs = g.copy()
        if kind is DcsaKind.RNN:
            for t in range(T - 1, -1, -1):
                da = gs * (1.0 - states[t + 1] ** 2)
                dX[t] = da
                gs = W @ da
            ag.accumulate(wh, prev.T @ dX)
        elif kind is DcsaKind.GRU:
            dGH = np.zeros((T, W.shape[1]))
            for t in range(T - 1, -1, -1):
                gh, r, z, n = cache[t]
                h = states[t]
                dz = gs * (n - h)
                dan = gs * z * (1.0 - n * n)
                dr = dan * gh[2 * dim:]
                drz = np.concatenate([dr * r * (1.0 - r), dz * z * (1.0 - z)])
                dX[t, : 2 * dim] = drz
                dX[t, 2 * dim:] = dan
                dgh = np.concatenate([drz, dan * r])
                dGH[t] = dgh
                gs = gs * (1.0 - z) + W @ dgh
            ag.accumulate(wh, prev.T @ dGH)
            ag.accumulate(parents[3], dGH.sum(axis=0))
        else:
            for t in range(T - 1, -1, -1):
                i, f, o, gg, tc = cache[t]
                c_prev = states[t][dim:]
                dh, dc = gs[:dim], gs[dim:]
                do = dh * tc
                dc = dc + dh * o * (1.0 - tc * tc)
                dX[t] = np.concatenate([dc * gg * i * (1.0 - i), dc * c_prev * f * (1.0 - f),
                                        dc * i * (1.0 - gg * gg), do * o * (1.0 - o)])
                gs = np.concatenate([W @ dX[t], dc * f])
            ag.accumulate(wh, prev[:, :dim].T @ dX)
        ag.accumulate(xw, dX)
        ag.accumulate(s0, gs)
    return ag.custom_op(s, parents, bw, "recurrent_scan")


def run_tensor(model: DcsaModel, P, ids: Sequence[int], fused: bool = True):
    """Full final state for one symbol-id sequence, as a (taped) Tensor.

    ``fused=False`` composes one :func:`_cell` per symbol instead (the
    reference the fused scan is tested against).
    """
    state = P["s0"]
    if len(ids) == 0:
        return state
    xw = _input_proj(P, np.asarray(ids))
    if fused:
        return recurrent_scan(model.kind, xw, P["cell.wh"], state, model.state_dim,
                              P["cell.bh"] if model.kind is DcsaKind.GRU else None)
    for t in range(len(ids)):
        state = _cell(model.kind, P, ag.index(xw, t), state, model.state_dim)
    return state


def _symbol_ids(model: DcsaModel, seq: str) -> list[int]:
    return encode_tokens(seq, model.alphabet)[1:-1]


def dcsa_step(model: DcsaModel, state: np.ndarray, symbol_id: int) -> np.ndarray:
    """Apply the transition once. ``state`` is the full state (``[h; c]`` for LSTM)."""
    if not 2 <= symbol_id < len(model.alphabet) + 2:
        raise ValueError(f"token id {symbol_id} is not an alphabet symbol")
    state = np.asarray(state, dtype=np.float64)
    if state.shape[-1] != model.full_dim:
        raise ValueError(f"state has width {state.shape[-1]}, expected {model.full_dim}")
    if not np.isfinite(state).all():
        raise ag.NonFiniteError("non-finite DCSA state")
    P = model.constants()
    ids = np.full(state.shape[:-1], symbol_id, dtype=np.int64) if state.ndim > 1 else np.int64(symbol_id)
    out = _cell(model.kind, P, _input_proj(P, ids), ag.Tensor(state), model.state_dim)
    return out.data


def run_full(model: DcsaModel, seq: str) -> np.ndarray:
    state = model.initial_state()
    for sid in _symbol_ids(model, seq):
        state = dcsa_step(model, state, sid)
    return state


def dcsa_run(model: DcsaModel, seq: str) -> np.ndarray:
    """State(x): left fold of the transition from s0; the exposed part for LSTM."""
    return model.exposed(run_full(model, seq))


def run_batch(model: DcsaModel, seqs: Sequence[str]) -> np.ndarray:
    """Full final states for many sequences at once, shape (B, full_dim)."""
    states = np.tile(model.params["s0"], (len(seqs), 1))
    if not seqs:
        return states
    P = model.constants()
    lengths = np.array([len(s) for s in seqs])
    ids = np.full((len(seqs), max(lengths.max(), 1)), 2, dtype=np.int64)
    for k, s in enumerate(seqs):
        if s:
            ids[k, : len(s)] = _symbol_ids(model, s)
    for t in range(lengths.max()):
        rows = np.nonzero(lengths > t)[0]
        xw = _input_proj(P, ids[rows, t])
        states[rows] = _cell(model.kind, P, xw, ag.Tensor(states[rows]), model.state_dim).data
    return states


def dcsa_classify(model: DcsaModel, seq: str) -> tuple[int, np.ndarray]:
    """Frozen classifier on the final state; argmax label with ties to 0."""
    h = dcsa_run(model, seq)
    return decide(h @ model.classifier["weight"] + model.classifier["bias"])


def classify_batch(model: DcsaModel, seqs: Sequence[str]) -> np.ndarray:
    return (model.logits_of_states(run_batch(model, seqs)) > 0).astype(int)


# ---------------------------------------------------------------------------
# distillation


def _logits(model: DcsaModel, state):
    C = model.classifier_tensors()
    return ag.linear(ag.index(state, slice(0, model.state_dim)), C["weight"], C["bias"])


def distill(dcsa: DcsaModel, transformer: TransformerModel, dataset: SequenceDataset,
            dc: DistillConfig) -> tuple[DcsaModel, dict]:
    """Fit the DCSA to the transformer, alternating L_D and alpha * L_Rep steps.

    L_D is cross-entropy against the transformer's labels T(x); L_Rep is the
    L1 distance between Rep(x) (framed with [CLS]/[SEP]) and the exposed
    final state. The classifier is a constant and never updated. With
    ``alpha == 0`` the L_Rep step is skipped entirely.
    """
    if dataset.alphabet != dcsa.alphabet or transformer.alphabet != dcsa.alphabet:
        raise ValueError("alphabet mismatch between dataset, transformer and DCSA")
    if transformer.config.d_model != dcsa.state_dim:
        raise ValueError(f"d_model {transformer.config.d_model} != DCSA state_dim {dcsa.state_dim}")
    cls = transformer.classifier_params()
    if not (np.array_equal(cls["weight"], dcsa.classifier["weight"])
            and np.array_equal(cls["bias"], dcsa.classifier["bias"])):
        raise ValueError("DCSA classifier is not a copy of the transformer's classifier")

    train = dataset.train
    targets = []
    for it in train:
        r = transformer.rep(transformer.encode(it.tokens))
        label, _ = decide(r @ cls["weight"] + cls["bias"])
        targets.append((_symbol_ids(dcsa, it.tokens), label, r))

    rng = generator(dc.seed, "dcsa-train")
    # one AdamW state for both steps: Adam is scale-invariant per loss, so
    # separate moments would make alpha irrelevant beyond alpha > 0
    opt = ag.AdamWState.for_params(dcsa.params)
    history = {"loss_d": [], "rep_l1": []}
    start = time.perf_counter()

    def step_d(k):
        ids, label, _ = targets[k]
        with ag.Tape() as tape:
            final = run_tensor(dcsa, tape.watch(dcsa.params), ids)
            loss = ag.cross_entropy(_logits(dcsa, final), label)
        ag.adamw_step(dcsa.params, ag.backward(tape, loss), opt, dc.learning_rate)
        return loss.item()

    def step_rep(k):
        ids, _, target = targets[k]
        with ag.Tape() as tape:
            final = run_tensor(dcsa, tape.watch(dcsa.params), ids)
            dist = ag.l1_distance(target, ag.index(final, slice(0, dcsa.state_dim)))
            loss = ag.scale(dist, dc.alpha)
        ag.adamw_step(dcsa.params, ag.backward(tape, loss), opt, dc.learning_rate)
        return dist.item()

    for epoch in range(dc.epochs):
        order = rng.permutation(len(targets))
        loss_d = rep_l1 = 0.0
        try:
            if dc.alternation == "per-example":
                for k in order:
                    loss_d += step_d(k)
                    if dc.alpha > 0:
                        rep_l1 += step_rep(k)
            else:
                for k in order:
                    loss_d += step_d(k)
                if dc.alpha > 0:
                    for k in order:
                        rep_l1 += step_rep(k)
        except ag.NonFiniteError as e:
            raise TrainingError(f"non-finite value while distilling, epoch {epoch}: {e}") from e
        history["loss_d"].append(loss_d / len(targets))
        history["rep_l1"].append(rep_l1 / len(targets) if dc.alpha > 0 else None)
        log.info("dcsa epoch %d/%d L_D %.5f L_Rep(L1) %s (%.0fs)", epoch + 1, dc.epochs,
                 history["loss_d"][-1], history["rep_l1"][-1], time.perf_counter() - start)
        if dc.stop_loss is not None and history["loss_d"][-1] <= dc.stop_loss:
            break
    dcsa.invalidate()
    dcsa.distill_config = asdict(dc)
    return dcsa, history


def rep_state_diff(transformer: TransformerModel, dcsa: DcsaModel, seqs: Sequence[str], p: int = 1) -> float:
    """Mean L^p distance between Rep(x) and State(x) over ``seqs``."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    if transformer.config.d_model != dcsa.state_dim:
        raise ValueError("representation and state dimensions differ")
    if not seqs:
        raise ValueError("no sequences to evaluate")
    states = dcsa.exposed(run_batch(dcsa, list(seqs)))
    reps = np.stack([transformer.rep(transformer.encode(s)) for s in seqs])
    return float(np.linalg.norm(reps - states, ord=p, axis=1).mean())
