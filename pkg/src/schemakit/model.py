"""Training state, checkpoints, and the sklearn-style decomposer estimator.

SingleStepDecomposer meta-trains the numpy transformer on the random-grammar
stream and predicts single decomposition steps for token sequences given a
grammar. Checkpoints are a versioned binary: magic, version, JSON header
(configs, step, rng state, loss history), then raw little-endian float32
tensors in declared parameter order, optionally followed by Adam moments.
"""

from __future__ import annotations

import io
import json
import struct
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import nn
from .codec import encode_library, encode_sample
from .datagen import GenConfig, Sample, bucketed_stream, gen_pair, random_grammar, stream
from .errors import NonFiniteLoss, SchemakitError
from .grammar import Grammar
from .nn import AdamConfig, AdamState, ModelConfig
from .tokens import EOS, PAD, SEP, Token, VocabConfig

MAGIC = b"SKDC"
VERSION = 1


def collate(token_batch: list[list[Token]], vocab: VocabConfig):
    """Pad, shift, and mask a batch of full training sequences.

    Loss positions are those predicting the tokens after SEP through EOS
    inclusive; PAD and prefix positions are masked out.
    """
    pad_id = vocab.token_to_id(PAD)
    sep_id = vocab.token_to_id(SEP)
    eos_id = vocab.token_to_id(EOS)
    rows = [vocab.encode_ids(toks) for toks in token_batch]
    T = max(len(r) for r in rows)
    B = len(rows)
    ids = np.full((B, T), pad_id, dtype=np.int64)
    targets = np.zeros((B, T), dtype=np.int64)
    mask = np.zeros((B, T), dtype=np.float32)
    for b, row in enumerate(rows):
        ids[b, : len(row)] = row
        sep_pos = row.index(sep_id)
        eos_pos = len(row) - 1
        if row[eos_pos] != eos_id:
            raise SchemakitError("training sample does not end with EOS")
        targets[b, : len(row) - 1] = row[1:]
        mask[b, sep_pos:eos_pos] = 1.0
    return ids, targets, mask


@dataclass
class TrainState:
    model_config: ModelConfig
    gen_config: GenConfig
    params: dict[str, np.ndarray]
    adam: AdamState
    adam_config: AdamConfig
    step: int = 0
    seed: int = 0
    rng_state: dict | None = None
    loss_history: list[float] = field(default_factory=list)

    @classmethod
    def fresh(cls, model_config: ModelConfig, gen_config: GenConfig,
              adam_config: AdamConfig | None = None, seed: int = 0) -> "TrainState":
        params = nn.init_params(model_config, seed=seed)
        return cls(
            model_config=model_config,
            gen_config=gen_config,
            params=params,
            adam=AdamState.zeros_like(params),
            adam_config=adam_config or AdamConfig(),
            seed=seed,
        )


def train_step(state: TrainState, batch: list[Sample], dropout_rng=None) -> float:
    """One gradient step on a batch of stream samples; returns the loss."""
    ids, targets, mask = collate([s.tokens for s in batch], state.gen_config.vocab)
    loss, grads = nn.loss_and_grads(
        state.params, ids, targets, mask, state.model_config, dropout_rng=dropout_rng
    )
    if not np.isfinite(loss):
        nn.check_finite(loss, state.params)
    nn.adam_step(state.params, grads, state.adam, state.adam_config)
    state.step += 1
    state.loss_history.append(loss)
    return loss


# --- checkpoint I/O -----------------------------------------------------------


def _config_header(state: TrainState, with_optimizer: bool) -> dict:
    gen = asdict(state.gen_config)
    return {
        "model": asdict(state.model_config),
        "gen": gen,
        "adam": asdict(state.adam_config),
        "step": state.step,
        "seed": state.seed,
        "rng_state": state.rng_state,
        "loss_history": state.loss_history,
        "with_optimizer": with_optimizer,
    }


def save_checkpoint(path, state: TrainState, with_optimizer: bool = True) -> None:
    header = json.dumps(_config_header(state, with_optimizer)).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        order = list(nn.param_shapes(state.model_config))
        for name in order:
            fh.write(np.ascontiguousarray(state.params[name], dtype="<f4").tobytes())
        if with_optimizer:
            fh.write(struct.pack("<q", state.adam.step))
            for name in order:
                fh.write(np.ascontiguousarray(state.adam.m[name], dtype="<f4").tobytes())
            for name in order:
                fh.write(np.ascontiguousarray(state.adam.v[name], dtype="<f4").tobytes())


def _gen_config_from(d: dict) -> GenConfig:
    d = dict(d)
    d["vocab"] = VocabConfig(**d["vocab"])
    return GenConfig(**d)


def load_checkpoint(path) -> TrainState:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise SchemakitError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise SchemakitError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen))
        model_cfg = ModelConfig(**header["model"])
        gen_cfg = _gen_config_from(header["gen"])
        adam_cfg = AdamConfig(**header["adam"])
        shapes = nn.param_shapes(model_cfg)

        def read_tree():
            tree = {}
            for name, shape in shapes.items():
                n = int(np.prod(shape))
                buf = fh.read(4 * n)
                tree[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
            return tree

        params = read_tree()
        state = TrainState(
            model_config=model_cfg,
            gen_config=gen_cfg,
            params=params,
            adam=AdamState.zeros_like(params),
            adam_config=adam_cfg,
            step=header["step"],
            seed=header["seed"],
            rng_state=header["rng_state"],
            loss_history=list(header["loss_history"]),
        )
        if header["with_optimizer"]:
            (state.adam.step,) = struct.unpack("<q", fh.read(8))
            state.adam.m = read_tree()
            state.adam.v = read_tree()
    return state


# --- held-out accuracy --------------------------------------------------------


def heldout_accuracy(
    params,
    model_cfg: ModelConfig,
    gen_cfg: GenConfig,
    n_samples: int,
    seed: int,
) -> float:
    """Exact-match single-step accuracy on fresh grammars never in any buffer."""
    rng = np.random.default_rng(seed)
    vocab = gen_cfg.vocab
    eos_id = vocab.token_to_id(EOS)
    hits = 0
    for _ in range(n_samples):
        g = random_grammar(gen_cfg, rng)
        inp, tgt = gen_pair(g, gen_cfg, rng)
        lib = encode_library(g, vocab, gen_cfg.include_priorities)
        prefix = vocab.encode_ids(encode_sample(lib, inp, None))
        try:
            got = nn.decode_greedy(
                params, model_cfg, prefix, eos_id, max_new=len(inp) + 2
            )
        except SchemakitError:
            continue
        if got == vocab.encode_ids(tgt):
            hits += 1
    return hits / n_samples


def training_curve_csv(curve: list[tuple[int, float, float]]) -> str:
    lines = ["step,loss,heldout_accuracy"]
    for step, loss, acc in curve:
        lines.append(f"{step},{loss:.6f},{acc if acc == acc else ''}")
    return "\n".join(lines) + "\n"


class SingleStepDecomposer(BaseEstimator):
    """Decoder-only transformer meta-trained for one decomposition step.

    fit() consumes the endless random-grammar stream (X and y are ignored;
    the estimator owns its data source, which is what meta-training means
    here). predict() maps (grammar, sequence) pairs to marked sequences.
    """

    def __init__(
        self,
        steps=20000,
        batch_size=64,
        lr=3e-4,
        warmup_steps=1000,
        clip_norm=1.0,
        seed=0,
        context_len=256,
        d_model=128,
        n_layers=6,
        n_heads=4,
        d_ff=512,
        dropout=0.0,
        n_primitives=16,
        n_modifiers=12,
        max_args_side=2,
        n_schemas=20,
        new_grammar_interval=100,
        smoothing=1.0,
        depth_mode="two_deep",
        include_priorities=True,
        p_sub=0.5,
        p_compound=0.35,
        max_eval_len=6,
        eval_interval=1000,
        eval_samples=200,
        heartbeat=100,
        bucket_groups=4,
        verbose=False,
    ):
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.clip_norm = clip_norm
        self.seed = seed
        self.context_len = context_len
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.dropout = dropout
        self.n_primitives = n_primitives
        self.n_modifiers = n_modifiers
        self.max_args_side = max_args_side
        self.n_schemas = n_schemas
        self.new_grammar_interval = new_grammar_interval
        self.smoothing = smoothing
        self.depth_mode = depth_mode
        self.include_priorities = include_priorities
        self.p_sub = p_sub
        self.p_compound = p_compound
        self.max_eval_len = max_eval_len
        self.eval_interval = eval_interval
        self.eval_samples = eval_samples
        self.heartbeat = heartbeat
        self.bucket_groups = bucket_groups
        self.verbose = verbose

    def _configs(self) -> tuple[ModelConfig, GenConfig, AdamConfig]:
        vocab = VocabConfig(
            self.n_primitives, self.n_modifiers, self.max_args_side, self.n_schemas
        )
        model_cfg = ModelConfig(
            context_len=self.context_len,
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            d_ff=self.d_ff,
            vocab_size=vocab.size,
            dropout=self.dropout,
        )
        gen_cfg = GenConfig(
            vocab=vocab,
            max_eval_len=self.max_eval_len,
            depth_mode=self.depth_mode,
            seed=self.seed,
            new_grammar_interval=self.new_grammar_interval,
            smoothing=self.smoothing,
            batch_size=self.batch_size,
            context_len=self.context_len,
            include_priorities=self.include_priorities,
            p_sub=self.p_sub,
            p_compound=self.p_compound,
        )
        adam_cfg = AdamConfig(
            lr=self.lr, warmup_steps=self.warmup_steps, clip_norm=self.clip_norm
        )
        return model_cfg, gen_cfg, adam_cfg

    def fit(self, X=None, y=None, checkpoint_path=None, checkpoint_every=0):
        model_cfg, gen_cfg, adam_cfg = self._configs()
        state = TrainState.fresh(model_cfg, gen_cfg, adam_cfg, seed=self.seed)
        drop_rng = np.random.default_rng(self.seed + 17) if self.dropout > 0 else None
        batches = bucketed_stream(gen_cfg, group=self.bucket_groups)
        self.curve_ = []
        t0 = time.time()
        for k in range(1, self.steps + 1):
            loss = train_step(state, next(batches), dropout_rng=drop_rng)
            if self.verbose and k % self.heartbeat == 0:
                rate = k / (time.time() - t0)
                print(f"step {k}/{self.steps} loss {loss:.4f} ({rate:.2f} steps/s)", flush=True)
            if self.eval_interval and k % self.eval_interval == 0:
                acc = heldout_accuracy(
                    state.params, model_cfg, gen_cfg, self.eval_samples, seed=self.seed + 999
                )
                self.curve_.append((k, loss, acc))
                if self.verbose:
                    print(f"step {k} held-out single-step accuracy {acc:.3f}", flush=True)
            if checkpoint_path and checkpoint_every and k % checkpoint_every == 0:
                save_checkpoint(checkpoint_path, state)
        self.state_ = state
        self.params_ = state.params
        self.model_config_ = model_cfg
        self.gen_config_ = gen_cfg
        if checkpoint_path:
            save_checkpoint(checkpoint_path, state)
        return self

    @classmethod
    def from_checkpoint(cls, path) -> "SingleStepDecomposer":
        state = load_checkpoint(path)
        est = cls()
        est.state_ = state
        est.params_ = state.params
        est.model_config_ = state.model_config
        est.gen_config_ = state.gen_config
        return est

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit() or from_checkpoint() first")

    def decode_step(self, grammar: Grammar, seq: list[Token],
                    include_priorities: bool | None = None) -> list[Token]:
        """One greedy decomposition step for a token sequence under a grammar."""
        self._check_fitted()
        vocab = self.gen_config_.vocab
        if include_priorities is None:
            include_priorities = self.gen_config_.include_priorities
        lib = encode_library(grammar, vocab, include_priorities)
        prefix = vocab.encode_ids(encode_sample(lib, seq, None))
        eos_id = vocab.token_to_id(EOS)
        got = nn.decode_greedy(
            self.params_, self.model_config_, prefix, eos_id, max_new=len(seq) + 2
        )
        return vocab.decode_ids(got)

    def predict(self, X, grammar: Grammar) -> list[list[Token] | None]:
        """Single-step decomposition for each token sequence in X.

        A sequence whose decode fails (no EOS within the cap, context
        overflow) yields None; downstream scoring counts it as wrong.
        """
        out = []
        for seq in X:
            try:
                out.append(self.decode_step(grammar, seq))
            except SchemakitError:
                out.append(None)
        return out

    def param_count(self) -> int:
        cfg = self.model_config_ if hasattr(self, "model_config_") else self._configs()[0]
        return nn.param_count(cfg)
