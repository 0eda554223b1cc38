"""Candidate sampling, the regression + pairwise-rank objective, and the training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import model as qm
from .errors import DataError, LengthMismatch, LibraryTooSmall, NonFiniteLoss, ZeroVariance
from .library import TemplateLibrary
from .oracle import QualityOracle
from .syntree import LinearTemplate, SyntaxTree, linearize, parse_bracket, truncate

log = logging.getLogger(__name__)


@dataclass
class Example:
    source_tokens: list[str]
    source_tree: Optional[SyntaxTree] = None
    reference_tree: Optional[SyntaxTree] = None


def load_dataset(path) -> list[Example]:
    """JSON lines ``{"source_tokens": [...], "source_tree": str, "reference_tree": str}``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                toks = rec["source_tokens"]
                if isinstance(toks, str):
                    toks = toks.split()
                src = rec.get("source_tree")
                ref = rec.get("reference_tree")
                out.append(Example(
                    list(toks),
                    parse_bracket(src) if src else None,
                    parse_bracket(ref) if ref else None,
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"bad dataset record at line {lineno}: {exc}") from None
    return out


@dataclass
class CandidateSet:
    source_tokens: list[str]
    templates: list[LinearTemplate]
    qualities: np.ndarray
    source_tree: Optional[SyntaxTree] = None
    predictions: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return len(self.templates)


@dataclass
class TrainConfig:
    lambda_mse: float = 1.0
    lambda_rank: float = 1.0
    k: int = 10
    lr: float = 3e-5
    weight_decay: float = 0.01
    epochs: int = 10
    batch_size: int = 1  # candidate sets per optimizer step
    warmup_frac: float = 0.1
    seed: int = 0
    max_levels: int = 4
    grad_clip: Optional[float] = None

    def __post_init__(self):
        if self.lambda_mse < 0 or self.lambda_rank < 0:
            raise ValueError("loss weights must be non-negative")
        if self.k < 2:
            raise ValueError("k must be at least 2")


# ---------------------------------------------------------------------------
# candidates


def sample_candidates(
    x_tree: Optional[SyntaxTree],
    y_tree: Optional[SyntaxTree],
    lib: TemplateLibrary,
    k: int,
    seed,
    max_levels: Optional[int] = None,
) -> list[LinearTemplate]:
    """``k`` templates: those of x and y first (deduplicated), the rest drawn
    uniformly without replacement from the library."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if len(lib) < k:
        raise LibraryTooSmall(f"library has {len(lib)} entries, need at least {k}")
    levels = max_levels or lib.max_levels
    chosen: list[LinearTemplate] = []
    seen: set[str] = set()
    for tree in (x_tree, y_tree):
        if tree is None:
            continue
        tpl = linearize(truncate(tree, levels))
        if tpl.text not in seen:
            seen.add(tpl.text)
            chosen.append(tpl)
    rng = np.random.default_rng(seed)
    for idx in rng.permutation(len(lib)):
        if len(chosen) == k:
            break
        entry = lib.entries[int(idx)]
        if entry.text not in seen:
            seen.add(entry.text)
            chosen.append(entry.template)
    if len(chosen) < k:
        raise LibraryTooSmall(f"only {len(chosen)} distinct templates available for k={k}")
    return chosen


def build_candidate_sets(examples: Sequence[Example], lib: TemplateLibrary, oracle: QualityOracle,
                         k: int, seed: int, max_levels: Optional[int] = None) -> list[CandidateSet]:
    sets = []
    for i, ex in enumerate(examples):
        templates = sample_candidates(ex.source_tree, ex.reference_tree, lib, k, (seed, i), max_levels)
        q = np.array([oracle.quality(ex.source_tokens, ex.source_tree, t) for t in templates])
        sets.append(CandidateSet(list(ex.source_tokens), templates, q, ex.source_tree))
    return sets


# ---------------------------------------------------------------------------
# losses


def _check(S, Q, minimum):
    S = np.asarray(S, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if S.shape != Q.shape or S.ndim != 1:
        raise LengthMismatch(f"predictions {S.shape} vs qualities {Q.shape}")
    if S.shape[0] < minimum:
        raise LengthMismatch(f"need at least {minimum} entries")
    return S, Q


def mse_loss(S, Q) -> float:
    S, Q = _check(S, Q, 1)
    return float(np.mean((S - Q) ** 2))


def _rank_terms(S, Q):
    ds = S[:, None] - S[None, :]
    dq = Q[:, None] - Q[None, :]
    upper = np.triu(np.ones(ds.shape, dtype=bool), 1)
    gap = ds - dq
    active = upper & (dq < 0) & (gap > 0)
    return gap, active


def rank_loss(S, Q) -> float:
    """Sum over i<j of max((ds_ij - dq_ij) * [dq_ij < 0], 0)."""
    S, Q = _check(S, Q, 2)
    gap, active = _rank_terms(S, Q)
    return float(gap[active].sum())


def total_loss(S, Q, lambda_mse: float = 1.0, lambda_rank: float = 1.0) -> tuple[float, np.ndarray]:
    """Weighted objective and its gradient w.r.t. the predictions.

    The hinge's subgradient is 0 at the kink (inactive side).
    """
    S, Q = _check(S, Q, 1)
    loss = 0.0
    grad = np.zeros_like(S)
    if lambda_mse:
        diff = S - Q
        loss += lambda_mse * float(np.mean(diff**2))
        grad += lambda_mse * 2.0 * diff / len(S)
    if lambda_rank and len(S) >= 2:
        gap, active = _rank_terms(S, Q)
        loss += lambda_rank * float(gap[active].sum())
        a = active.astype(np.float64)
        grad += lambda_rank * (a.sum(1) - a.sum(0))
    return loss, grad


def pcc(predictions, qualities) -> float:
    x = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(qualities, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch("pcc needs two equal-length vectors")
    if len(x) < 2:
        raise LengthMismatch("pcc needs at least two points")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVariance("pcc undefined for a constant vector")
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return min(max(r, -1.0), 1.0)


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    """Adam with decoupled weight decay (matrices only) and an externally set lr."""

    def __init__(self, params: qm.ModelParams, weight_decay: float = 0.01,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.wd = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: qm.ModelParams, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, p in params.tensors.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if lr == 0.0:
                continue
            if self.wd and p.ndim >= 2:
                p -= lr * self.wd * p
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        params.touch()


def linear_schedule(step: int, total: int, warmup: int, base_lr: float) -> float:
    """Linear warmup to ``base_lr`` then linear decay to 0."""
    if warmup > 0 and step < warmup:
        return base_lr * (step + 1) / warmup
    rest = max(total - warmup, 1)
    return base_lr * max(0.0, (total - step) / rest)


# ---------------------------------------------------------------------------
# loop


def _flatten(sets: Sequence[CandidateSet]):
    sents = [cs.source_tokens for cs in sets]
    templates = [t for cs in sets for t in cs.templates]
    owner = np.repeat(np.arange(len(sets)), [cs.k for cs in sets])
    return sents, templates, owner


def batch_loss_and_grad(params: qm.ModelParams, sets: Sequence[CandidateSet], config: TrainConfig):
    """Mean objective over ``sets`` and parameter gradients."""
    sents, templates, owner = _flatten(sets)
    S, trace = qm.score_pairs(params, sents, templates, owner)
    dS = np.empty_like(S)
    total = 0.0
    lo = 0
    for cs in sets:
        hi = lo + cs.k
        loss, g = total_loss(S[lo:hi], cs.qualities, config.lambda_mse, config.lambda_rank)
        total += loss
        dS[lo:hi] = g
        lo = hi
    total /= len(sets)
    dS /= len(sets)
    if not math.isfinite(total):
        raise NonFiniteLoss(f"loss became {total}; predictions range [{S.min()}, {S.max()}]")
    return total, qm.backward(params, trace, dS), S


def train_step(params, opt: AdamW, sets, config: TrainConfig, lr: float) -> float:
    loss, grads, _ = batch_loss_and_grad(params, sets, config)
    if config.grad_clip:
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if norm > config.grad_clip:
            for g in grads.values():
                g *= config.grad_clip / norm
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteLoss(f"non-finite gradient in {name}")
    opt.step(params, grads, lr)
    return loss


def predict(params: qm.ModelParams, sets: Sequence[CandidateSet], chunk: int = 16) -> np.ndarray:
    out = []
    for lo in range(0, len(sets), chunk):
        sents, templates, owner = _flatten(sets[lo : lo + chunk])
        s, _ = qm.score_pairs(params, sents, templates, owner)
        out.append(s)
    return np.concatenate(out) if out else np.zeros(0)


def evaluate_pcc(params, sets: Sequence[CandidateSet]) -> float:
    preds = predict(params, sets)
    return pcc(preds, np.concatenate([cs.qualities for cs in sets]))


@dataclass
class TrainResult:
    params: qm.ModelParams
    log: list[dict] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_dev_pcc: Optional[float] = None


def train(
    params: qm.ModelParams,
    lib: TemplateLibrary,
    dataset: Sequence[Example],
    oracle: QualityOracle,
    config: TrainConfig,
    dev: Optional[Sequence[Example]] = None,
    log_path=None,
) -> TrainResult:
    """Train in place; returns the best-dev parameters (a copy) and the epoch log."""
    if not dataset:
        raise DataError("empty training set")
    train_sets = build_candidate_sets(dataset, lib, oracle, config.k, config.seed, config.max_levels)
    dev_sets = None
    if dev:
        dev_sets = build_candidate_sets(dev, lib, oracle, config.k, config.seed + 1_000_003, config.max_levels)
    return train_on_sets(params, train_sets, config, dev_sets, log_path)


def train_on_sets(params, train_sets, config: TrainConfig, dev_sets=None, log_path=None) -> TrainResult:
    rng = np.random.default_rng(config.seed)
    opt = AdamW(params, config.weight_decay)
    steps_per_epoch = math.ceil(len(train_sets) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    warmup = int(round(config.warmup_frac * total_steps))
    result = TrainResult(params.copy())
    step = 0
    log_fh = open(log_path, "w", encoding="utf-8", newline="\n") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(train_sets))
            losses = []
            for lo in range(0, len(order), config.batch_size):
                batch = [train_sets[int(i)] for i in order[lo : lo + config.batch_size]]
                lr = linear_schedule(step, total_steps, warmup, config.lr)
                losses.append(train_step(params, opt, batch, config, lr))
                step += 1
            rec = {"epoch": epoch, "mean_loss": float(np.mean(losses)), "dev_pcc": None}
            if dev_sets:
                rec["dev_pcc"] = evaluate_pcc(params, dev_sets)
            result.log.append(rec)
            log.info("epoch %d loss %.6f dev_pcc %s", epoch, rec["mean_loss"], rec["dev_pcc"])
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
                log_fh.flush()
            better = rec["dev_pcc"] is not None and (
                result.best_dev_pcc is None or rec["dev_pcc"] > result.best_dev_pcc
            )
            if better or not dev_sets:
                result.params = params.copy()
                result.best_epoch = epoch
                result.best_dev_pcc = rec["dev_pcc"]
    finally:
        if log_fh:
            log_fh.close()
    return result


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
