"""Objective functions: MAE/MSE/Bell regression losses and the trait-wise
multi-similarity embedding loss with extreme-anchor pair mining.

The regression losses average over all (sample, trait) cells. The Bell loss
is an inverted bell curve that keeps its gradient alive near small residuals,
countering the tendency of regressors on centralized targets to collapse
onto the mean. ``score_scale`` rescales residuals before the bell is
applied: with sigma=9 the curve only has curvature when scores live on a
0-100 scale, so training configs default to score_scale=100 while the
plain formula (scale 1) remains available.

The multi-similarity loss works on a batch of embeddings that carries one
row per (sample, modality) and five class labels per row. Pair candidates
are same-class (positives) and different-class (negatives) rows per trait;
the mining filter keeps only hard pairs, and anchors can be restricted to
rows whose trait class is an extreme (C1/C4).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datamodel import is_extreme
from .errors import ConfigError, DimensionError, NumericError
from .nncore import Tensor


@dataclass
class BellConfig:
    sigma: float = 9.0
    gamma: float = 300.0
    score_scale: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0 or self.gamma <= 0:
            raise ConfigError("bell loss needs sigma > 0 and gamma > 0")

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "gamma": self.gamma,
                "score_scale": self.score_scale}


@dataclass
class MSConfig:
    alpha: float = 2.0
    beta: float = 50.0
    lam: float = 1.0
    mining_margin: float = 0.1
    extreme_anchors_only: bool = True
    normalize_embeddings: bool = True
    # False: divide by the number of (anchor, trait) terms that contribute.
    # True: divide by 5 * batch rows regardless of how many terms survive.
    literal_normalization: bool = False

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError("ms loss needs alpha > 0 and beta > 0")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "lam": self.lam,
                "mining_margin": self.mining_margin,
                "extreme_anchors_only": self.extreme_anchors_only,
                "normalize_embeddings": self.normalize_embeddings,
                "literal_normalization": self.literal_normalization}


_EMPTY = np.array([], dtype=int)


@dataclass
class PairSets:
    """Mined positive/negative pairs, one term per contributing (anchor, trait).

    Pairs are stored flat for vectorized weighting: ``pos_anchor[k]`` /
    ``pos_col[k]`` index the similarity matrix and ``pos_term[k]`` names the
    (anchor, trait) term the pair belongs to (likewise for negatives).
    ``term_keys[t]`` recovers the (anchor, trait) of term ``t``.
    """

    n_rows: int
    term_keys: list = field(default_factory=list)
    pos_anchor: np.ndarray = _EMPTY
    pos_col: np.ndarray = _EMPTY
    pos_term: np.ndarray = _EMPTY
    neg_anchor: np.ndarray = _EMPTY
    neg_col: np.ndarray = _EMPTY
    neg_term: np.ndarray = _EMPTY

    @classmethod
    def from_terms(cls, n_rows: int, terms: dict) -> "PairSets":
        out = cls(n_rows=n_rows, term_keys=list(terms))
        pos = [(i, c, t) for t, ((i, _j), (p, _n)) in enumerate(terms.items())
               for c in p]
        neg = [(i, c, t) for t, ((i, _j), (_p, n)) in enumerate(terms.items())
               for c in n]
        if pos:
            out.pos_anchor, out.pos_col, out.pos_term = map(
                np.array, zip(*pos))
        if neg:
            out.neg_anchor, out.neg_col, out.neg_term = map(
                np.array, zip(*neg))
        return out

    @property
    def terms(self) -> dict:
        """Dict view {(anchor, trait): (positives, negatives)}."""
        out = {key: [[], []] for key in self.term_keys}
        for t, c in zip(self.pos_term, self.pos_col):
            out[self.term_keys[t]][0].append(int(c))
        for t, c in zip(self.neg_term, self.neg_col):
            out[self.term_keys[t]][1].append(int(c))
        return {key: (np.array(p, dtype=int), np.array(n, dtype=int))
                for key, (p, n) in out.items()}

    def positives(self, anchor: int, trait: int) -> np.ndarray:
        mask = [self.term_keys[t] == (anchor, trait) for t in self.pos_term]
        return self.pos_col[np.array(mask, dtype=bool)] if len(self.pos_term) else _EMPTY

    def negatives(self, anchor: int, trait: int) -> np.ndarray:
        mask = [self.term_keys[t] == (anchor, trait) for t in self.neg_term]
        return self.neg_col[np.array(mask, dtype=bool)] if len(self.neg_term) else _EMPTY

    def __len__(self) -> int:
        return len(self.term_keys)


# -- regression losses -----------------------------------------------------------


def _pair(y, y_hat) -> tuple:
    y = Tensor.as_tensor(y)
    y_hat = Tensor.as_tensor(y_hat)
    if y.shape != y_hat.shape:
        raise DimensionError(f"target shape {y.shape} != prediction shape {y_hat.shape}")
    return y, y_hat


def mae_loss(y, y_hat) -> Tensor:
    y, y_hat = _pair(y, y_hat)
    return (y - y_hat).abs().mean()


def mse_loss(y, y_hat) -> Tensor:
    y, y_hat = _pair(y, y_hat)
    return (y - y_hat).square().mean()


def bell_loss(y, y_hat, config: BellConfig) -> Tensor:
    y, y_hat = _pair(y, y_hat)
    scaled = (y - y_hat) * config.score_scale
    z = scaled.square() * (1.0 / (2.0 * config.sigma ** 2))
    return (config.gamma - (-z).exp() * config.gamma).mean()


def composite_loss(y, y_hat, config: BellConfig) -> Tensor:
    return mae_loss(y, y_hat) + mse_loss(y, y_hat) + bell_loss(y, y_hat, config)


# -- embedding similarity ----------------------------------------------------------


def similarity_matrix(embeddings, config: MSConfig) -> Tensor:
    """Pairwise dot products, on L2-normalized rows when configured."""
    emb = Tensor.as_tensor(embeddings)
    if emb.ndim != 2:
        raise DimensionError("similarity_matrix expects a 2-D embedding batch")
    if config.normalize_embeddings:
        sq_norms = (emb * emb).sum(axis=1, keepdims=True)
        zero_rows = np.flatnonzero(sq_norms.data == 0.0)
        if zero_rows.size:
            raise NumericError(
                f"cannot normalize zero-norm embedding at row {zero_rows[0]}")
        emb = emb / sq_norms.sqrt()
    return emb @ emb.T


# -- pair mining --------------------------------------------------------------------


def build_pairs(labels: np.ndarray, extremes: np.ndarray, similarities,
                config: MSConfig) -> PairSets:
    """Mine hard positive/negative pairs per (anchor, trait).

    Candidates share (positives) or differ in (negatives) the anchor's
    trait class; the anchor's own row is never a candidate. The mining
    filter keeps negatives more similar than the weakest candidate positive
    minus the margin, and positives less similar than the strongest
    candidate negative plus the margin. An anchor contributes on a trait
    only when both mined sets are non-empty, and only extreme-class rows
    anchor when ``extreme_anchors_only`` is set.
    """
    sim = similarities.data if isinstance(similarities, Tensor) else np.asarray(similarities)
    labels = np.asarray(labels)
    extremes = np.asarray(extremes, dtype=bool)
    n_rows, n_traits = labels.shape
    if sim.shape != (n_rows, n_rows):
        raise DimensionError(f"similarity matrix {sim.shape} does not match "
                             f"{n_rows} label rows")
    if extremes.shape != labels.shape:
        raise DimensionError("extremes mask must match label shape")
    eps = config.mining_margin
    not_self = ~np.eye(n_rows, dtype=bool)
    pairs = PairSets(n_rows=n_rows)
    pos_parts, neg_parts = [], []
    for j in range(n_traits):
        col = labels[:, j]
        same = col[None, :] == col[:, None]
        pos_cand = same & not_self
        neg_cand = ~same
        # min/max over candidates; +-inf sentinels make empty candidate sets
        # mine nothing, so such anchors drop out
        min_pos = np.where(pos_cand, sim, np.inf).min(axis=1)
        max_neg = np.where(neg_cand, sim, -np.inf).max(axis=1)
        mined_neg = neg_cand & (sim > (min_pos - eps)[:, None])
        mined_pos = pos_cand & (sim < (max_neg + eps)[:, None])
        anchors = extremes[:, j] if config.extreme_anchors_only else np.ones(n_rows, bool)
        valid = anchors & mined_pos.any(axis=1) & mined_neg.any(axis=1)
        row_term = np.full(n_rows, -1)
        row_term[valid] = len(pairs.term_keys) + np.arange(int(valid.sum()))
        pairs.term_keys.extend((int(i), j) for i in np.flatnonzero(valid))
        pa, pc = np.where(mined_pos & valid[:, None])
        na, nc = np.where(mined_neg & valid[:, None])
        pos_parts.append((pa, pc, row_term[pa]))
        neg_parts.append((na, nc, row_term[na]))
    pairs.pos_anchor, pairs.pos_col, pairs.pos_term = (
        np.concatenate([part[k] for part in pos_parts]) for k in range(3))
    pairs.neg_anchor, pairs.neg_col, pairs.neg_term = (
        np.concatenate([part[k] for part in neg_parts]) for k in range(3))
    return pairs


# -- multi-similarity weighting ------------------------------------------------------


def _stable_log1p_sum_exp(similarities: Tensor, rows, cols, seg_ids, n_terms: int,
                          scale: float, lam: float) -> Tensor:
    """Per-segment log(1 + sum_k exp(scale * (D - lam))), overflow-safe."""
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    seg_ids = np.asarray(seg_ids, dtype=int)
    gathered = similarities.take_pairs(rows, cols)
    exponents = (gathered - lam) * scale
    if exponents.data.max(initial=0.0) <= 500.0:
        # exp stays far from the float64 ceiling; no shift needed
        sums = exponents.exp().segment_sum(seg_ids, n_terms)
        return (sums + 1.0).log().sum()
    # shift each segment by max(0, max exponent); shifts are constants, so
    # the graph only sees well-scaled exp inputs
    seg_max = np.full(n_terms, -np.inf)
    np.maximum.at(seg_max, seg_ids, exponents.data)
    shift = np.maximum(seg_max, 0.0)
    shifted = exponents - Tensor(shift[seg_ids])
    sums = shifted.exp().segment_sum(seg_ids, n_terms)
    return ((sums + Tensor(np.exp(-shift))).log() + Tensor(shift)).sum()


def ms_weighting(similarities: Tensor, pairs: PairSets, config: MSConfig,
                 n_samples: int | None = None) -> Tensor:
    """Soft pos/neg weighting over mined pairs; returns the scalar loss.

    Terms with no pairs on one side contribute log(1 + 0) = 0 there.
    """
    n_terms = len(pairs.term_keys)
    if n_terms == 0:
        return Tensor(0.0)
    total = Tensor(0.0)
    if len(pairs.pos_term):
        total = total + _stable_log1p_sum_exp(
            similarities, pairs.pos_anchor, pairs.pos_col, pairs.pos_term,
            n_terms, -config.alpha, config.lam) * (1.0 / config.alpha)
    if len(pairs.neg_term):
        total = total + _stable_log1p_sum_exp(
            similarities, pairs.neg_anchor, pairs.neg_col, pairs.neg_term,
            n_terms, config.beta, config.lam) * (1.0 / config.beta)
    if config.literal_normalization:
        divisor = 5.0 * (n_samples if n_samples is not None else pairs.n_rows)
    else:
        divisor = float(n_terms)
    return total * (1.0 / divisor)


def ms_loss(embeddings, labels: np.ndarray, config: MSConfig,
            extremes: np.ndarray | None = None,
            n_samples: int | None = None) -> Tensor:
    """Trait-wise multi-similarity loss over a mixed-modality embedding batch.

    ``labels`` holds one row of five trait classes per embedding row; rows
    coming from the same sample share labels. ``extremes`` defaults to the
    C1/C4 mask derived from the labels.
    """
    emb = Tensor.as_tensor(embeddings)
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.shape[0] != emb.shape[0]:
        raise DimensionError(f"labels {labels.shape} do not match "
                             f"{emb.shape[0]} embedding rows")
    if extremes is None:
        extremes = is_extreme(labels)
    sims = similarity_matrix(emb, config)
    pairs = build_pairs(labels, extremes, sims.data, config)
    return ms_weighting(sims, pairs, config, n_samples=n_samples)
