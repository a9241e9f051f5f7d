"""Cloned hidden Markov model: EM over transitions with fixed emissions.

Every observation symbol owns a block of n_clones hidden states that emit it
deterministically, so forward-backward and Viterbi only ever touch the
transition sub-blocks selected by consecutive observations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ..errors import SchemakitError
from .corpus import Episode, parse_demo_line


class ImpossibleSequence(SchemakitError):
    """A sequence has zero probability under the trained model."""


class ClonedHMM(BaseEstimator):
    """EM-trained transition structure over cloned states.

    Parameters mirror the usual estimator style: fit(sequences) consumes
    lists of token strings and learns transitions_ (n_states x n_states),
    start_probs_, and records the per-iteration corpus log-likelihood in
    loglik_history_ (non-decreasing by the EM guarantee). Unreachable states
    get their rows re-initialized uniformly and counted in degenerate_rows_.
    """

    def __init__(self, n_clones: int = 10, n_iter: int = 50, seed: int = 0, init_noise: float = 0.1):
        self.n_clones = n_clones
        self.n_iter = n_iter
        self.seed = seed
        self.init_noise = init_noise

    # block of states for observation index o: [o*n_clones, (o+1)*n_clones)
    def _block(self, o: int) -> slice:
        return slice(o * self.n_clones, (o + 1) * self.n_clones)

    def fit(self, sequences: list[list[str]]):
        rng = np.random.default_rng(self.seed)
        vocab: dict[str, int] = {}
        for seq in sequences:
            for w in seq:
                vocab.setdefault(w, len(vocab))
        if not vocab:
            raise SchemakitError("empty corpus")
        self.vocab_ = vocab
        n_obs = len(vocab)
        C = self.n_clones
        n_states = n_obs * C
        trans = np.ones((n_states, n_states)) / n_states
        trans += rng.gamma(self.init_noise, 1.0, size=trans.shape) * (1.0 / n_states)
        trans /= trans.sum(1, keepdims=True)
        start = np.ones(n_states) / n_states

        obs_seqs = [np.array([vocab[w] for w in seq]) for seq in sequences]
        self.loglik_history_ = []
        self.degenerate_rows_ = 0
        for _ in range(self.n_iter):
            trans_counts = np.zeros_like(trans)
            start_counts = np.zeros(n_states)
            loglik = 0.0
            for obs in obs_seqs:
                T = len(obs)
                alphas = []
                scales = []
                a = start[self._block(obs[0])].copy()
                s = a.sum()
                if s <= 0:
                    raise ImpossibleSequence("zero-probability start")
                a /= s
                scales.append(s)
                alphas.append(a)
                for t in range(1, T):
                    blk_prev, blk = self._block(obs[t - 1]), self._block(obs[t])
                    a = alphas[-1] @ trans[blk_prev, blk]
                    s = a.sum()
                    if s <= 0:
                        raise ImpossibleSequence("zero-probability continuation")
                    a /= s
                    scales.append(s)
                    alphas.append(a)
                loglik += float(np.log(scales).sum())
                # backward with the same scaling
                b = np.ones(C)
                start_block = self._block(obs[0])
                for t in range(T - 1, 0, -1):
                    blk_prev, blk = self._block(obs[t - 1]), self._block(obs[t])
                    xi = np.outer(alphas[t - 1], b) * trans[blk_prev, blk] / scales[t]
                    trans_counts[blk_prev, blk] += xi
                    b = trans[blk_prev, blk] @ b
                    b /= scales[t]
                gamma0 = alphas[0] * b
                start_counts[start_block] += gamma0 / max(gamma0.sum(), 1e-300)
            # M step
            row_sums = trans_counts.sum(1)
            dead = row_sums <= 0
            self.degenerate_rows_ += int(dead.sum())
            trans_counts[dead] = 1.0 / n_states
            trans = trans_counts / trans_counts.sum(1, keepdims=True)
            if start_counts.sum() > 0:
                start = start_counts / start_counts.sum()
            self.loglik_history_.append(loglik)
        self.transitions_ = trans
        self.start_probs_ = start
        self.n_states_ = n_states
        return self

    def _check_fitted(self):
        if not hasattr(self, "transitions_"):
            raise NotFittedError("fit the model first")

    def score(self, sequences: list[list[str]]) -> float:
        """Corpus log-likelihood under the trained transitions."""
        self._check_fitted()
        total = 0.0
        for seq in sequences:
            obs = [self.vocab_[w] for w in seq]
            a = self.start_probs_[self._block(obs[0])].copy()
            s = a.sum()
            if s <= 0:
                raise ImpossibleSequence("zero-probability start")
            a /= s
            total += float(np.log(s))
            for t in range(1, len(obs)):
                a = a @ self.transitions_[self._block(obs[t - 1]), self._block(obs[t])]
                s = a.sum()
                if s <= 0:
                    raise ImpossibleSequence("zero-probability continuation")
                a /= s
                total += float(np.log(s))
        return total

    def viterbi(self, seq: list[str]) -> list[int]:
        """Most probable state path (global state indices)."""
        self._check_fitted()
        obs = []
        for w in seq:
            if w not in self.vocab_:
                raise ImpossibleSequence(f"unknown token {w!r}")
            obs.append(self.vocab_[w])
        C = self.n_clones
        with np.errstate(divide="ignore"):
            log_trans = np.log(self.transitions_)
            delta = np.log(self.start_probs_[self._block(obs[0])])
        back = []
        for t in range(1, len(obs)):
            blk_prev, blk = self._block(obs[t - 1]), self._block(obs[t])
            scores = delta[:, None] + log_trans[blk_prev, blk]
            back.append(scores.argmax(0))
            delta = scores.max(0)
        if not np.isfinite(delta.max()):
            raise ImpossibleSequence("all paths have zero probability")
        path = [int(delta.argmax())]
        for t in range(len(obs) - 1, 0, -1):
            path.append(int(back[t - 1][path[-1]]))
        path.reverse()
        return [obs[t] * C + local for t, local in enumerate(path)]


def decode_episodes(model: ClonedHMM, lines: list[str]) -> tuple[list[Episode], list[int]]:
    """Viterbi-decode each demonstration line into an Episode.

    Returns (episodes, skipped_line_numbers); impossible sequences are
    skipped and reported rather than fatal.
    """
    episodes = []
    skipped = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        x, y = parse_demo_line(line, lineno)
        stream = ["IN:", *x, "<SEP>", *y, "<EOS>"]
        try:
            z = model.viterbi(stream)
        except ImpossibleSequence:
            skipped.append(lineno)
            continue
        episodes.append(Episode(tuple(x), tuple(y), tuple(z)))
    return episodes, skipped
