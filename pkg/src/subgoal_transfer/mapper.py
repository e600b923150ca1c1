"""Seq2seq subgoal mapping: BiLSTM encoder/decoder trained with cross-entropy.

The encoder (hidden 75 per direction, concatenated 150) reads the expert
subgoal tokens, conditioned on a task-context projection of (start, pawns).
A dense bridge compresses the encoder summary into a fixed vector that is fed
to the decoder (hidden 50 per direction, concatenated 100) at every step
alongside the previous target token embedding. Training is teacher-forced and
bidirectional over the shifted target sequence; at inference the backward
decoder direction receives zero states and decoding is greedy.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .dataset import Dataset, DatasetEntry, SubgoalSequence, kfold_split
from .env import Square, Task
from .meteor import corpus_meteor
from .seeding import derive_seed


class TokenVocab:
    """64 square tokens (by square index) + EOS + PAD, fixed ordering.

    EOS doubles as the decoder start-of-sequence token, so the vocabulary
    stays at 66 with no extra reserved slot.
    """

    n_squares = 64
    eos = 64
    pad = 65
    size = 66
    start = eos

    @staticmethod
    def encode_square(sq: Square) -> int:
        return sq.index

    @staticmethod
    def decode_token(token: int) -> Square:
        if not 0 <= token < TokenVocab.n_squares:
            raise ValueError(f"token {token} is not a square token")
        return Square.from_index(token)

    @staticmethod
    def encode_sequence(seq: SubgoalSequence) -> list[int]:
        return [sq.index for sq in seq.tokens]


VOCAB = TokenVocab()


@dataclass(frozen=True)
class MapperHyperparams:
    learning_rate: float = 1e-3
    epochs: int = 300
    max_len: int = 12
    seed: int = 0
    minibatch: int = 16

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.epochs <= 0 or self.max_len <= 0 \
                or self.minibatch <= 0:
            raise ValueError("hyperparameters must be positive")


def _context_onehot(task: Task) -> np.ndarray:
    """Concatenated one-hots of (start, low pawn, high pawn).

    Pawns are canonicalized by square index so swapping them leaves the
    encoding unchanged.
    """
    lo, hi = sorted(task.pawns(), key=lambda s: s.index)
    x = np.zeros(192)
    x[task.start.index] = 1.0
    x[64 + lo.index] = 1.0
    x[128 + hi.index] = 1.0
    return x


class MappingModel:
    """Encoder-decoder LSTM realizing the expert-to-learner subgoal mapping."""

    def __init__(self, *, emb_dim: int = 32, enc_hidden: int = 75,
                 dec_hidden: int = 50, bridge_dim: int = 100,
                 max_len: int = 12, seed: int = 0):
        self.emb_dim = emb_dim
        self.enc_hidden = enc_hidden
        self.dec_hidden = dec_hidden
        self.bridge_dim = bridge_dim
        self.max_len = max_len
        self.seed = seed
        rng = np.random.default_rng(seed)
        V = VOCAB.size
        self.embed = nn.Parameter("embed", nn.init_uniform(rng, (V, emb_dim), emb_dim))
        self.ctx = nn.Dense(192, enc_hidden, "tanh", rng=rng, name="ctx")
        self.enc_f = nn.LstmCell(emb_dim, enc_hidden, rng=rng, name="enc_f")
        self.enc_b = nn.LstmCell(emb_dim, enc_hidden, rng=rng, name="enc_b")
        self.bridge = nn.Dense(2 * enc_hidden, bridge_dim, "tanh", rng=rng, name="bridge")
        self.dec_f = nn.LstmCell(emb_dim + bridge_dim, dec_hidden, rng=rng, name="dec_f")
        self.dec_b = nn.LstmCell(emb_dim + bridge_dim, dec_hidden, rng=rng, name="dec_b")
        self.out = nn.Dense(2 * dec_hidden, V, "identity", rng=rng, name="out")

    def parameters(self) -> list[nn.Parameter]:
        params = [self.embed]
        for part in (self.ctx, self.enc_f, self.enc_b, self.bridge,
                     self.dec_f, self.dec_b, self.out):
            params.extend(part.parameters())
        return params

    def hyper_meta(self) -> dict[str, str]:
        return {
            "emb_dim": str(self.emb_dim),
            "enc_hidden": str(self.enc_hidden),
            "dec_hidden": str(self.dec_hidden),
            "bridge_dim": str(self.bridge_dim),
            "max_len": str(self.max_len),
            "vocab": str(VOCAB.size),
        }

    # -- context ------------------------------------------------------------

    def encode_context(self, task: Task) -> np.ndarray:
        """Initial encoder hidden state h0 from (start, pawns)."""
        return self.ctx(_context_onehot(task))

    # -- training forward/backward -------------------------------------------

    def _encode(self, expert_tokens: list[int], task: Task):
        ctx_x = _context_onehot(task)
        h0, ctx_cache = self.ctx.forward(ctx_x)
        xs = [self.embed.value[t] for t in expert_tokens]
        outputs, enc_cache = nn.bilstm_forward(self.enc_f, self.enc_b, xs, h0)
        # fixed-size summary: final forward state (+) final backward state
        H = self.enc_hidden
        summary = np.concatenate([outputs[-1][:H], outputs[0][H:]])
        s, bridge_cache = self.bridge.forward(summary)
        return s, (ctx_cache, enc_cache, bridge_cache)

    def sequence_loss(self, expert_tokens: list[int], target_tokens: list[int],
                      task: Task, *, backward: bool = False,
                      grad_scale: float = 1.0) -> tuple[float, int]:
        """Summed teacher-forced cross-entropy over target tokens plus EOS.

        Each step is scored on two views of the decoder output, averaged: the
        full bidirectional vector and the causal view [h_fwd ; 0] that greedy
        decoding uses, so the inference path is itself trained. With
        `backward=True` accumulates parameter gradients scaled by
        `grad_scale`. Returns (loss sum, number of scored steps).
        """
        if not expert_tokens:
            raise ValueError("expert sequence must be nonempty")
        if len(expert_tokens) > self.max_len or len(target_tokens) > self.max_len:
            raise ValueError(f"sequence longer than max_len={self.max_len}")

        s, enc_caches = self._encode(expert_tokens, task)
        tokens_in = [VOCAB.start] + list(target_tokens)
        targets = list(target_tokens) + [VOCAB.eos]
        xs = [np.concatenate([self.embed.value[t], s]) for t in tokens_in]
        outputs, dec_cache = nn.bilstm_forward(self.dec_f, self.dec_b, xs)

        H = self.dec_hidden
        loss = 0.0
        step_records = []
        for out_vec, target in zip(outputs, targets):
            causal_vec = out_vec.copy()
            causal_vec[H:] = 0.0
            logits_bi, cache_bi = self.out.forward(out_vec)
            logits_ca, cache_ca = self.out.forward(causal_vec)
            loss_bi, d_bi, _ = nn.softmax_cross_entropy(logits_bi, target)
            loss_ca, d_ca, _ = nn.softmax_cross_entropy(logits_ca, target)
            loss += 0.5 * (loss_bi + loss_ca)
            step_records.append((cache_bi, d_bi, cache_ca, d_ca))

        if backward:
            scale = 0.5 * grad_scale
            d_outputs = []
            for cache_bi, d_bi, cache_ca, d_ca in step_records:
                d_vec = self.out.backward(cache_bi, d_bi * scale)
                d_causal = self.out.backward(cache_ca, d_ca * scale)
                d_vec = d_vec.copy()
                d_vec[:H] += d_causal[:H]  # zeroed half is a constant, no grad
                d_outputs.append(d_vec)
            d_xs, _ = nn.bilstm_backward(self.dec_f, self.dec_b, dec_cache, d_outputs)
            d_s = np.zeros(self.bridge_dim)
            for t, dx in zip(tokens_in, d_xs):
                self.embed.grad[t] += dx[:self.emb_dim]
                d_s += dx[self.emb_dim:]
            self._encode_backward(expert_tokens, enc_caches, d_s)
        return loss, len(targets)

    def _encode_backward(self, expert_tokens: list[int], enc_caches, d_s: np.ndarray) -> None:
        ctx_cache, enc_cache, bridge_cache = enc_caches
        d_summary = self.bridge.backward(bridge_cache, d_s)
        d_xs, d_h0 = nn.bilstm_backward(
            self.enc_f, self.enc_b, enc_cache,
            [None] * len(expert_tokens),
            d_final_fwd=d_summary[:self.enc_hidden],
            d_final_bwd=d_summary[self.enc_hidden:],
        )
        for t, dx in zip(expert_tokens, d_xs):
            self.embed.grad[t] += dx
        self.ctx.backward(ctx_cache, d_h0)

    # -- inference ------------------------------------------------------------

    def predict_tokens(self, expert_tokens: list[int], task: Task) -> list[int]:
        """Greedy decode: argmax per step (lowest index wins ties) until EOS.

        The backward decoder direction contributes zero states at inference;
        PAD is masked out of the argmax.
        """
        if not expert_tokens:
            raise ValueError("expert sequence must be nonempty")
        if len(expert_tokens) > self.max_len:
            raise ValueError(f"expert sequence longer than max_len={self.max_len}")
        s, _ = self._encode(expert_tokens, task)
        h, c = self.dec_f.zero_state()
        zeros_b = np.zeros(self.dec_hidden)
        prev = VOCAB.start
        decoded: list[int] = []
        for _ in range(self.max_len):
            x = np.concatenate([self.embed.value[prev], s])
            h, c, _ = self.dec_f.step(x, h, c)
            logits = self.out(np.concatenate([h, zeros_b]))
            masked = logits.copy()
            masked[VOCAB.pad] = -np.inf
            token = int(np.argmax(masked))
            if token == VOCAB.eos:
                break
            decoded.append(token)
            prev = token
        return decoded

    def predict(self, expert: SubgoalSequence, task: Task) -> SubgoalSequence:
        tokens = self.predict_tokens(VOCAB.encode_sequence(expert), task)
        return SubgoalSequence(tuple(VOCAB.decode_token(t) for t in tokens))


def save_mapper(model: MappingModel, path: str,
                extra_meta: dict[str, str] | None = None) -> None:
    meta = model.hyper_meta()
    meta.update(extra_meta or {})
    nn.save_checkpoint(path, model.parameters(), meta)


def load_mapper(path: str) -> tuple[MappingModel, dict[str, str]]:
    meta, _ = nn.load_checkpoint(path)
    model = MappingModel(
        emb_dim=int(meta["emb_dim"]),
        enc_hidden=int(meta["enc_hidden"]),
        dec_hidden=int(meta["dec_hidden"]),
        bridge_dim=int(meta["bridge_dim"]),
        max_len=int(meta["max_len"]),
    )
    nn.load_into(model.parameters(), path)
    return model, meta


def train_mapper(entries: list[DatasetEntry], hp: MapperHyperparams,
                 *, model: MappingModel | None = None) -> tuple[MappingModel, list[float]]:
    """Train on (expert -> learner) pairs; returns model and per-epoch mean
    per-token loss history."""
    if not entries:
        raise ValueError("no training entries")
    if model is None:
        model = MappingModel(max_len=hp.max_len, seed=derive_seed(hp.seed, "mapper-init"))
    data = [
        (VOCAB.encode_sequence(e.expert), VOCAB.encode_sequence(e.learner), e.task)
        for e in entries
    ]
    adam = nn.Adam(model.parameters(), lr=hp.learning_rate)
    order_rng = np.random.default_rng(derive_seed(hp.seed, "mapper-order"))
    # history[0] is the pre-training loss; entry i>0 is the epoch-i mean
    pre_total, pre_steps = 0.0, 0
    for expert, target, task in data:
        loss, n = model.sequence_loss(expert, target, task)
        pre_total += loss
        pre_steps += n
    losses: list[float] = [pre_total / pre_steps]
    for _ in range(hp.epochs):
        order = order_rng.permutation(len(data))
        total, steps = 0.0, 0
        for lo in range(0, len(order), hp.minibatch):
            batch = [data[i] for i in order[lo:lo + hp.minibatch]]
            adam.zero_grad()
            for expert, target, task in batch:
                loss, n = model.sequence_loss(
                    expert, target, task, backward=True, grad_scale=1.0 / len(batch))
                total += loss
                steps += n
            adam.step()
        losses.append(total / steps)
        nn.assert_finite(model.parameters())
    return model, losses


def _run_fold(args) -> float:
    dataset, fold_index, train_ids, val_ids, hp = args
    fold_hp = replace(hp, seed=derive_seed(hp.seed, f"fold-{fold_index}"))
    model, _ = train_mapper([dataset.entries[i] for i in train_ids], fold_hp)
    pairs = []
    for i in val_ids:
        entry = dataset.entries[i]
        predicted = model.predict(entry.expert, entry.task)
        pairs.append((entry.learner.tokens, predicted.tokens))
    return corpus_meteor(pairs)


def evaluate_kfold(dataset: Dataset, k: int, hp: MapperHyperparams,
                   *, workers: int = 1) -> tuple[list[float], float]:
    """One model per fold: train on the rest, corpus METEOR on the fold."""
    splits = kfold_split(dataset, k)
    jobs = [(dataset, f, train_ids, val_ids, hp)
            for f, (train_ids, val_ids) in enumerate(splits)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(_run_fold, jobs))
    else:
        scores = [_run_fold(job) for job in jobs]
    return scores, sum(scores) / len(scores)
