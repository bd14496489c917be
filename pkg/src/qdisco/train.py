"""Adam training over word parameters, checkpointing and model selection."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .circuit import FunctorConfig, ParamStore, build_circuits, vocabulary
from .sim import (DEFAULT_QUBIT_LIMIT, ParamModel, ResourceError, evaluate_pair, gradient,
                  make_plan)
from .stats import clopper_pearson, width_trend
from .story import Dialect

TRAIN_LOG_PERIOD = 3


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    dialect: Dialect = Dialect.TWO
    learning_rate: float = 0.005
    batch_size: int = 1
    epochs: int = 200
    seed: int = 0
    accuracy_log_period: int = TRAIN_LOG_PERIOD
    functor: FunctorConfig = field(default_factory=FunctorConfig)
    parallelism: int = 1
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    # stop once ValidA reaches this accuracy; None trains for all epochs
    stop_valid_accuracy: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "dialect", Dialect(self.dialect))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")

    def to_json(self) -> dict:
        return {"dialect": self.dialect.value, "learning_rate": self.learning_rate,
                "batch_size": self.batch_size, "epochs": self.epochs, "seed": self.seed,
                "accuracy_log_period": self.accuracy_log_period,
                "functor": self.functor.to_json(), "betas": list(self.betas), "eps": self.eps,
                "stop_valid_accuracy": self.stop_valid_accuracy}

    @classmethod
    def from_json(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        fun = data.pop("functor", None)
        fun = FunctorConfig.from_json(fun) if fun else FunctorConfig()
        if "betas" in data:
            data["betas"] = tuple(data["betas"])
        return cls(functor=fun, **data)


@dataclass(frozen=True)
class Checkpoint:
    epoch: int
    params: ParamStore
    loss: float
    valid_accuracy: float
    train_accuracy: float | None = None

    def row(self) -> dict:
        return {"epoch": self.epoch, "loss": self.loss, "validA_acc": self.valid_accuracy,
                "train_acc": "" if self.train_accuracy is None else self.train_accuracy}


@dataclass
class TrainResult:
    history: list[Checkpoint]
    selected: int | None  # index into history, None when no epochs ran
    params: ParamStore
    config: TrainConfig

    @property
    def best(self) -> Checkpoint | None:
        return None if self.selected is None else self.history[self.selected]

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["epoch", "loss", "validA_acc", "train_acc"])
            w.writeheader()
            for c in self.history:
                w.writerow(c.row())


def init_params(seed: int, dialect=Dialect.TWO, config: FunctorConfig = FunctorConfig()) -> ParamStore:
    """Uniform angles in [0, 2π), deterministic in ``seed``."""
    store = ParamStore.zeros(dialect, config)
    store.values[:] = np.random.default_rng(seed).uniform(0, 2 * np.pi, store.values.size)
    return store


class Adam:
    def __init__(self, size: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, values: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        return values - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def select_checkpoint(history) -> int | None:
    """Best validation accuracy; ties go to the closest logged training accuracy
    (the highest among the tied epochs, taking each epoch's nearest logged
    value), then the lower loss, then the earlier epoch."""
    if not history:
        return None
    logged = [(c.epoch, c.train_accuracy) for c in history if c.train_accuracy is not None]

    def nearest_train(c):
        if c.train_accuracy is not None:
            return c.train_accuracy
        if not logged:
            return 0.0
        return min(logged, key=lambda e: (abs(e[0] - c.epoch), e[0]))[1]

    return min(range(len(history)), key=lambda i: (
        -history[i].valid_accuracy, -nearest_train(history[i]), history[i].loss, history[i].epoch))


def _instances(stories, config: FunctorConfig):
    return [(s, *build_circuits(s, None, config)) for s in stories]


def _accuracy_of(params: ParamStore, instances, limit=DEFAULT_QUBIT_LIMIT) -> float:
    if not instances:
        return float("nan")
    model = ParamModel(params, instances[0][1].config)
    hits = sum(evaluate_pair(p, n, model, limit).answer == s.label for s, p, n in instances)
    return hits / len(instances)


def train(datasets, config: TrainConfig, init: ParamStore | None = None,
          checkpoint_dir=None, progress=None) -> TrainResult:
    """Mini-batch Adam on the cross-entropy loss.

    ``datasets`` maps "train" and "valid-a" to story lists. Every epoch ends
    with a checkpoint holding the mean loss and the ValidA accuracy; training
    accuracy is logged on epochs 1, 1 + period, ...
    """
    train_set = _instances(datasets["train"], config.functor)
    valid_set = _instances(datasets.get("valid-a", []), config.functor)
    params = init.copy() if init is not None else init_params(config.seed, config.dialect,
                                                             config.functor)
    history: list[Checkpoint] = []
    if config.epochs == 0 or not train_set:
        return TrainResult(history, None, params, config)
    opt = Adam(params.values.size, config.learning_rate, config.betas, config.eps)
    batch = min(config.batch_size, len(train_set))
    ckdir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckdir:
        ckdir.mkdir(parents=True, exist_ok=True)
    pool = ThreadPoolExecutor(config.parallelism) if config.parallelism > 1 else None
    try:
        for epoch in range(1, config.epochs + 1):
            order = np.random.default_rng([config.seed, epoch]).permutation(len(train_set))
            losses = []
            for start in range(0, len(order), batch):
                chunk = [train_set[i] for i in order[start:start + batch]]
                model = ParamModel(params, config.functor)
                for w in params.words:
                    model.derivatives(w)

                def grad_one(inst, model=model):
                    s, p, n = inst
                    return gradient(p, n, params, s.label, model=model)

                results = list(pool.map(grad_one, chunk)) if pool else [grad_one(c) for c in chunk]
                g = np.mean([r.grad for r in results], axis=0)
                losses += [r.loss for r in results]
                if not np.all(np.isfinite(g)) or not all(math.isfinite(r.loss) for r in results):
                    if ckdir:
                        (ckdir / "diagnostic.json").write_text(params.to_json(
                            epoch=epoch, batch_start=start, reason="non-finite loss or gradient"))
                    raise TrainingError(f"non-finite loss or gradient in epoch {epoch}")
                params = params.with_values(opt.step(params.values, g))
            train_acc = None
            if (epoch - 1) % config.accuracy_log_period == 0:
                train_acc = _accuracy_of(params, train_set)
            ck = Checkpoint(epoch, params.copy(), float(np.mean(losses)),
                            _accuracy_of(params, valid_set), train_acc)
            history.append(ck)
            if ckdir:
                (ckdir / f"epoch-{epoch:04d}.json").write_text(ck.params.to_json(
                    epoch=epoch, loss=ck.loss, valid_accuracy=ck.valid_accuracy,
                    train_accuracy=ck.train_accuracy, config=config.to_json()))
            if progress:
                progress(ck)
            if config.stop_valid_accuracy is not None and valid_set and \
                    ck.valid_accuracy >= config.stop_valid_accuracy:
                break
    finally:
        if pool:
            pool.shutdown()
    sel = select_checkpoint(history)
    return TrainResult(history, sel, history[sel].params, config)


# -- evaluation ---------------------------------------------------------------------

@dataclass
class AccuracyReport:
    rows: list[dict]
    records: list[dict]
    skipped: list[dict]

    @property
    def overall(self) -> float:
        ok = [r["correct"] for r in self.records]
        return sum(ok) / len(ok) if ok else float("nan")

    @property
    def interval(self) -> tuple[float, float]:
        ok = [r["correct"] for r in self.records]
        return clopper_pearson(sum(ok), len(ok))

    def trend(self):
        return width_trend([r["width"] for r in self.records],
                           [r["correct"] for r in self.records])


def accuracy(params, stories, evaluator="exact", config: FunctorConfig = FunctorConfig(),
             max_rows: int | None = None, limit: int = DEFAULT_QUBIT_LIMIT) -> AccuracyReport:
    """Per-width accuracy with Clopper-Pearson intervals.

    ``evaluator`` is "exact" or a callable (story, pos, neg) -> answer.
    With ``max_rows`` exact evaluation skips instances whose simulation would
    keep more qubits alive at once; skipped instances are listed.
    """
    records, skipped = [], []
    model = ParamModel(params, config) if isinstance(params, ParamStore) else params
    for s in stories:
        pos, neg = build_circuits(s, None, config)
        try:
            if evaluator == "exact":
                if max_rows is not None:
                    rows = make_plan(pos, channels=True).peak_rows
                    if rows > max_rows:
                        skipped.append({"id": s.id, "width": s.width, "reason": f"rows {rows}"})
                        continue
                ans = evaluate_pair(pos, neg, model, limit).answer
            else:
                ans = evaluator(s, pos, neg)
        except ResourceError as exc:
            skipped.append({"id": s.id, "width": s.width, "reason": str(exc)})
            continue
        records.append({"id": s.id, "width": s.width, "depth": s.depth, "tier": s.tier,
                        "label": s.label, "answer": bool(ans), "correct": bool(ans) == s.label})
    rows = []
    for w in sorted({r["width"] for r in records} | {r["width"] for r in skipped}):
        sel = [r["correct"] for r in records if r["width"] == w]
        if not sel:
            rows.append({"width": w, "n": 0, "accuracy": None, "ci_lo": None, "ci_hi": None,
                         "note": "empty"})
            continue
        lo, hi = clopper_pearson(sum(sel), len(sel))
        rows.append({"width": w, "n": len(sel), "accuracy": sum(sel) / len(sel),
                     "ci_lo": lo, "ci_hi": hi, "note": ""})
    return AccuracyReport(rows, records, skipped)


def cross_validate(pool, valid_comp, config: TrainConfig, folds: int = 5, iters: int = 5,
                   max_rows: int | None = None) -> list[dict]:
    """k-fold over the train+ValidA pool; each fold keeps its best-ValidA run of
    ``iters`` seeds and reports ValidComp accuracy per width."""
    pool = sorted(pool, key=lambda s: s.id)
    order = np.random.default_rng(config.seed).permutation(len(pool))
    parts = [[pool[i] for i in order[k::folds]] for k in range(folds)]
    out = []
    for k in range(folds):
        valid = parts[k]
        trn = [s for j, p in enumerate(parts) if j != k for s in p]
        runs = []
        for it in range(iters):
            cfg = TrainConfig(**{**config.__dict__, "seed": config.seed * 1000 + k * iters + it})
            res = train({"train": trn, "valid-a": valid}, cfg)
            runs.append(res)
        best = max(runs, key=lambda r: (r.best.valid_accuracy if r.best else -1))
        rep = accuracy(best.params, valid_comp, config=config.functor, max_rows=max_rows)
        out.append({"fold": k, "runs": [r.best.valid_accuracy if r.best else None for r in runs],
                    "selected_seed": best.config.seed,
                    "valid_accuracy": best.best.valid_accuracy if best.best else None,
                    "validcomp": rep.rows, "validcomp_overall": rep.overall})
    return out


def parameter_count(dialect, config: FunctorConfig = FunctorConfig()) -> int:
    return sum(vocabulary(dialect, config).values())
