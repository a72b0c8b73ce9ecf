"""Adam optimization, kin-pair sampling, and LOSO cross-validation.

The protocol per relation: every annotated kin pair becomes one fold whose
two subjects are completely held out of training; the fold's training set is
a balanced positives + freshly-sampled-negatives pool over the remaining
subjects, with a validation slice carved out for early stopping. Test scores
from all folds are pooled downstream for one ROC per relation.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConfigError, GradError, InsufficientDataError, TrainingError
from .fileio import write_text_atomic
from .model import (
    KinPair,
    ModelConfig,
    ModelParams,
    PARAM_FIELDS,
    contrastive_loss,
    embed,
    embed_backward,
    init_params,
    save_checkpoint,
)
from .registry import KinRegistry
from .rppg import RppgSignal, read_rppg
from .seeding import rng_for, seed_sequence


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 200
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0
    test_partner_pairs: int = 2

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if not 0.0 < self.val_fraction < 0.5:
            raise ConfigError("val_fraction must lie in (0, 0.5)")
        if self.patience < 0 or self.max_epochs < 1:
            raise ConfigError("patience must be >= 0 and max_epochs >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.as_dict().items()},
            v={k: np.zeros_like(v) for k, v in params.as_dict().items()},
        )


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[ModelParams, AdamState]:
    """Standard bias-corrected Adam update, applied in place."""
    state.t += 1
    t = state.t
    for name in PARAM_FIELDS:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise GradError(f"non-finite gradient for tensor {name}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        getattr(params, name)[...] -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return params, state


@dataclass(frozen=True)
class LabeledPair:
    a: str
    b: str
    label: int


@dataclass
class FoldPlan:
    relation: str
    index: int
    held_out: tuple[str, str]
    train_pairs: list[LabeledPair]
    val_pairs: list[LabeledPair]
    test_pairs: list[LabeledPair]

    def subjects_in(self, pairs: Iterable[LabeledPair]) -> set[str]:
        out: set[str] = set()
        for p in pairs:
            out.update((p.a, p.b))
        return out


def _draw_negative(
    anchor: str,
    pool: list[str],
    anchor_family: str,
    registry: KinRegistry,
    taken: set[tuple[str, str]],
    rng: np.random.Generator,
) -> str | None:
    candidates = [
        s for s in pool
        if registry.family_of(s) != anchor_family and (anchor, s) not in taken
    ]
    if not candidates:
        return None
    return candidates[int(rng.integers(len(candidates)))]


def sample_pairs(
    registry: KinRegistry,
    relation: str,
    rng: np.random.Generator,
    exclude: frozenset[str] = frozenset(),
) -> list[LabeledPair]:
    """Balanced pair list: all kin pairs plus one sampled negative each.

    Negatives keep the relation's role structure (a parent is paired with a
    non-kin child of the same relation) and never share a family. Subjects in
    ``exclude`` appear in no pair.
    """
    positives = [
        p for p in registry.kin_pairs(relation)
        if p.a not in exclude and p.b not in exclude
    ]
    if len(positives) < 2:
        raise InsufficientDataError(
            f"relation {relation}: {len(positives)} usable kin pairs, need >= 2"
        )
    _, b_pool = registry.role_pools(relation)
    b_pool = [s for s in b_pool if s not in exclude]
    pairs = [LabeledPair(p.a, p.b, 1) for p in positives]
    taken: set[tuple[str, str]] = {(p.a, p.b) for p in pairs}
    for pos in positives:
        partner = _draw_negative(
            pos.a, b_pool, registry.family_of(pos.a), registry, taken, rng
        )
        if partner is None:
            raise InsufficientDataError(
                f"relation {relation}: no non-kin partner available for {pos.a}"
            )
        taken.add((pos.a, partner))
        pairs.append(LabeledPair(pos.a, partner, 0))
    return pairs


def loso_folds(
    registry: KinRegistry, relation: str, cfg: TrainConfig
) -> list[FoldPlan]:
    """One fold per kin pair; the pair's subjects never reach train or val.

    Each fold also withholds ``test_partner_pairs`` rotating partner kin
    pairs and builds its test negatives by crossing the held-out pair with
    the partner pairs (role-consistent, e.g. held father x partner son).
    Every scored test pair is therefore unseen-vs-unseen: scoring a held-out
    subject against a subject the model trained on would inflate AUC, since
    contrastive training spreads seen subjects apart. Training negatives are
    drawn once per fold (seeded by relation and fold index), so reruns and
    ablation variants under the same seed share pair lists.
    """
    positives = registry.kin_pairs(relation)
    if len(positives) < 3:
        raise InsufficientDataError(
            f"relation {relation}: {len(positives)} kin pairs, LOSO needs >= 3"
        )
    # partners leave at least 2 positives for the fold's training pool
    n_partners = max(0, min(cfg.test_partner_pairs, len(positives) - 3))
    folds = []
    for i, pos in enumerate(positives):
        partners = [positives[(i + 1 + k) % len(positives)] for k in range(n_partners)]
        excluded = {pos.a, pos.b}
        for partner in partners:
            excluded.update((partner.a, partner.b))
        rng = rng_for(cfg.seed, "fold", relation, i)
        pool = sample_pairs(registry, relation, rng, exclude=frozenset(excluded))
        order = rng.permutation(len(pool))
        n_val = max(1, int(round(cfg.val_fraction * len(pool))))
        val_idx = set(order[:n_val].tolist())
        train_pairs = [pool[k] for k in range(len(pool)) if k not in val_idx]
        val_pairs = [pool[k] for k in sorted(val_idx)]
        test_pairs = [LabeledPair(pos.a, pos.b, 1)]
        for partner in partners:
            test_pairs.append(LabeledPair(pos.a, partner.b, 0))
            test_pairs.append(LabeledPair(partner.a, pos.b, 0))
        folds.append(
            FoldPlan(
                relation=relation,
                index=i,
                held_out=(pos.a, pos.b),
                train_pairs=train_pairs,
                val_pairs=val_pairs,
                test_pairs=test_pairs,
            )
        )
    return folds


class SignalStore:
    """Maps subject ids to their pulse signals, loaded lazily from a cache dir."""

    def __init__(self, rppg_dir: str | Path):
        self.rppg_dir = Path(rppg_dir)
        self._paths: dict[str, Path] = {}
        self._cache: dict[str, RppgSignal] = {}
        for path in sorted(self.rppg_dir.glob("*.csv")):
            with open(path, encoding="utf-8") as fh:
                header = fh.readline()
            for token in header.split():
                if token.startswith("subject="):
                    self._paths.setdefault(token.split("=", 1)[1], path)

    def subjects(self) -> list[str]:
        return sorted(self._paths)

    def get(self, subject_id: str) -> RppgSignal:
        if subject_id not in self._cache:
            if subject_id not in self._paths:
                raise KeyError(f"no cached signal for subject {subject_id!r}")
            self._cache[subject_id] = read_rppg(self._paths[subject_id])
        return self._cache[subject_id]


class MemoryStore:
    """In-memory store keyed by subject id (tests, toy problems)."""

    def __init__(self, signals: dict[str, RppgSignal]):
        self._signals = dict(signals)

    def get(self, subject_id: str) -> RppgSignal:
        return self._signals[subject_id]


def materialize(
    pairs: list[LabeledPair], store
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x_p = np.stack([store.get(p.a).data for p in pairs])
    x_c = np.stack([store.get(p.b).data for p in pairs])
    labels = np.array([p.label for p in pairs], dtype=np.float64)
    return x_p, x_c, labels


def make_kin_pair(pair: LabeledPair, store) -> KinPair:
    return KinPair(p=store.get(pair.a), c=store.get(pair.b), label=pair.label)


class EpochRecord(NamedTuple):
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord]
    best_epoch: int
    best_val_loss: float


def _batch_loss_and_grads(params, model_cfg, x_p, x_c, labels, training, rng):
    e_p, cache_p = embed(params, model_cfg, x_p, training=training, rng=rng)
    e_c, cache_c = embed(params, model_cfg, x_c, training=training, rng=rng)
    loss, g_p, g_c = contrastive_loss(
        e_p, e_c, labels, model_cfg.margin, model_cfg.literal_squared_distance
    )
    grads_p = embed_backward(params, model_cfg, cache_p, g_p)
    grads_c = embed_backward(params, model_cfg, cache_c, g_c)
    return loss, {k: grads_p[k] + grads_c[k] for k in PARAM_FIELDS}


def _eval_loss(params, model_cfg, x_p, x_c, labels) -> float:
    e_p, _ = embed(params, model_cfg, x_p)
    e_c, _ = embed(params, model_cfg, x_c)
    return contrastive_loss(
        e_p, e_c, labels, model_cfg.margin, model_cfg.literal_squared_distance
    )[0]


def train_fold(
    fold: FoldPlan,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    store,
) -> TrainResult:
    """Train one fold with shuffled mini-batches and early stopping.

    Returns the parameters of the best validation epoch, never a later one.
    Raises TrainingError (with the epoch index) if the loss goes non-finite.
    """
    ss = seed_sequence(train_cfg.seed, "train", fold.relation, fold.index)
    init_ss, shuffle_ss, dropout_ss = ss.spawn(3)
    params = init_params(model_cfg, seed=init_ss)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)
    state = AdamState.for_params(params)

    x_p, x_c, y = materialize(fold.train_pairs, store)
    vx_p, vx_c, vy = materialize(fold.val_pairs, store)

    history: list[EpochRecord] = []
    best_val = np.inf
    best_epoch = -1
    best_params = params.copy()
    since_best = 0
    n = len(fold.train_pairs)
    for epoch in range(train_cfg.max_epochs):
        order = shuffle_rng.permutation(n)
        seen = 0
        loss_sum = 0.0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            loss, grads = _batch_loss_and_grads(
                params, model_cfg, x_p[idx], x_c[idx], y[idx],
                training=True, rng=dropout_rng,
            )
            if not np.isfinite(loss):
                raise TrainingError(f"training loss diverged at epoch {epoch}", epoch=epoch)
            adam_step(params, grads, state, train_cfg)
            loss_sum += loss * len(idx)
            seen += len(idx)
        train_loss = loss_sum / seen
        val_loss = _eval_loss(params, model_cfg, vx_p, vx_c, vy)
        if not np.isfinite(val_loss):
            raise TrainingError(f"validation loss diverged at epoch {epoch}", epoch=epoch)
        history.append(EpochRecord(epoch, train_loss, val_loss, train_cfg.lr))
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best > train_cfg.patience:
                break
    return TrainResult(
        params=best_params,
        history=history,
        best_epoch=best_epoch,
        best_val_loss=float(best_val),
    )


class ScoreRow(NamedTuple):
    relation: str
    fold: int
    subject_a: str
    subject_b: str
    label: int
    distance: float


def score_fold(
    params: ModelParams, model_cfg: ModelConfig, fold: FoldPlan, store
) -> list[ScoreRow]:
    x_p, x_c, y = materialize(fold.test_pairs, store)
    e_p, _ = embed(params, model_cfg, x_p)
    e_c, _ = embed(params, model_cfg, x_c)
    dist = np.linalg.norm(e_p - e_c, axis=1)
    return [
        ScoreRow(fold.relation, fold.index, p.a, p.b, p.label, float(d))
        for p, d in zip(fold.test_pairs, dist)
    ]


@dataclass
class RelationRun:
    relation: str
    folds: list[FoldPlan]
    scores: list[ScoreRow]
    histories: list[list[EpochRecord]] = field(default_factory=list)
    best_epochs: list[int] = field(default_factory=list)


def _fold_task(args) -> tuple[int, list[ScoreRow], list[EpochRecord], int]:
    fold, model_cfg, train_cfg, rppg_dir, checkpoint_path = args
    store = SignalStore(rppg_dir)
    result = train_fold(fold, model_cfg, train_cfg, store)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model_cfg, result.params)
    scores = score_fold(result.params, model_cfg, fold, store)
    return fold.index, scores, result.history, result.best_epoch


def run_relation(
    registry: KinRegistry,
    relation: str,
    rppg_dir: str | Path,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    checkpoint_dir: str | Path | None = None,
    jobs: int = 1,
) -> RelationRun:
    """Full LOSO pass over one relation; folds may run in parallel processes.

    Results are deterministic regardless of ``jobs``: every fold's seed chain
    depends only on (seed, relation, fold index), and outputs are reassembled
    in fold order.
    """
    folds = loso_folds(registry, relation, train_cfg)
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if checkpoint_dir is not None:
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    tasks = [
        (
            fold,
            model_cfg,
            train_cfg,
            str(rppg_dir),
            None
            if checkpoint_dir is None
            else checkpoint_dir / f"{relation}_fold{fold.index:03d}.pkin",
        )
        for fold in folds
    ]
    results: dict[int, tuple[list[ScoreRow], list[EpochRecord], int]] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for index, scores, history, best in pool.map(_fold_task, tasks):
                results[index] = (scores, history, best)
    else:
        for task in tasks:
            index, scores, history, best = _fold_task(task)
            results[index] = (scores, history, best)
    run = RelationRun(relation=relation, folds=folds, scores=[])
    for fold in folds:
        scores, history, best = results[fold.index]
        run.scores.extend(scores)
        run.histories.append(history)
        run.best_epochs.append(best)
    return run


def format_history(history: list[EpochRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
    for rec in history:
        writer.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_loss), repr(rec.lr)])
    return buf.getvalue()


def write_history(history: list[EpochRecord], path: str | Path) -> None:
    write_text_atomic(path, format_history(history))
