"""Episodic class-incremental training.

Each strategy is an sklearn-style estimator: every `partial_fit(X, y)` call
is one training episode introducing the novel classes found in `y`, and
`predict` / `predict_proba` classify over everything seen so far. The
adapter-expansion strategy follows: initialize the task's adapters, expand
the unified classifier with the inherited block intact, add the diversity
head from the second episode on, train on the task data joined with the
exemplar buffer, then freeze the adapters, drop the diversity head and
re-herd the buffer.

`run_scenario` drives an estimator across a task stream, evaluating every
seen task after each episode to fill the accuracy matrix.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import losses as L
from .backbone import Backbone, BackboneConfig, build_backbone
from .data import FingerprintSpec, TaskSpec, generate_stream, load_manifest, preprocess_batch
from .errors import ConfigurationError, DataError
from .expansion import ExpandingClassifier, FullRankNetwork, LoraxNetwork
from .lora import count_all, count_trainable
from .metrics import AccuracyMatrix, MultiRealMap, metrics_summary, task_accuracy_counts
from .rehearsal import ExemplarBuffer, training_set
from .validation import as_image_tensor, as_label_array

EVAL_BATCH = 256


class StrategyKind(str, enum.Enum):
    LORAX = "lorax"
    FINETUNE = "finetune"
    FULL_RANK_EXPANSION = "der"
    ORACLE = "oracle"

    @classmethod
    def parse(cls, value) -> "StrategyKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ConfigurationError(f"unknown strategy {value!r}; expected one of: {valid}") from None


@dataclass(frozen=True)
class Strategy:
    kind: StrategyKind
    rank: int = 4
    combo: str = "all"
    diversity_weight: float = 0.1
    adapter_scale: float = 1.0
    learning_rate: float | None = None  # per-strategy override of the scenario value

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind.parse(self.kind))
        if self.kind is StrategyKind.LORAX and self.rank < 1:
            raise ConfigurationError(f"adapter rank must be >= 1, got {self.rank}")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Strategy":
        d = dict(d)
        if "lambda" in d:
            d["diversity_weight"] = d.pop("lambda")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown strategy fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Scenario:
    """A named task stream plus the training settings shared by all episodes."""

    name: str
    tasks: list[TaskSpec]
    budget: int = 500
    epochs: int = 20
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    allow_resize: bool = False
    momentum: float = 0.9
    validation_fraction: float = 0.0
    pretrain: dict | None = None
    source: dict | None = None

    def __post_init__(self):
        if not self.tasks:
            raise ConfigurationError("scenario has no tasks")
        if self.budget < 0:
            raise ConfigurationError(f"budget must be >= 0, got {self.budget}")
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ConfigurationError("epochs, batch_size and learning_rate must be positive")
        if not (0.0 <= self.validation_fraction < 1.0):
            raise ConfigurationError("validation_fraction must be in [0, 1)")
        seen: set[int] = set()
        for t in self.tasks:
            ids = set(t.class_ids)
            overlap = seen & ids
            if overlap:
                raise DataError(f"task {t.name!r} reuses class ids {sorted(overlap)}")
            seen |= ids

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def multi_real_map(self) -> MultiRealMap:
        return MultiRealMap.from_tasks(self.tasks)

    @classmethod
    def from_config(cls, cfg: dict, base_dir: str | None = None) -> "Scenario":
        cfg = dict(cfg)
        source = dict(cfg.get("source") or {})
        kind = source.get("type")
        backbone = BackboneConfig.from_dict(cfg.get("backbone") or {})
        if kind == "synthetic":
            fps = source.get("fingerprints")
            fingerprints = [FingerprintSpec(**fp) for fp in fps] if fps else None
            tasks = generate_stream(
                num_tasks=int(source["num_tasks"]),
                samples_per_class=int(source["samples_per_class"]),
                image_size=int(source.get("image_size", backbone.image_size)),
                seed=int(source.get("seed", 0)),
                train_fraction=float(source.get("train_fraction", 0.85)),
                amplitude=float(source.get("amplitude", 0.12)),
                fingerprints=fingerprints,
            )
        elif kind == "manifest":
            path = source["path"]
            if base_dir and not os.path.isabs(path):
                path = os.path.join(base_dir, path)
            tasks = load_manifest(path, channels=backbone.channels)
        else:
            raise ConfigurationError(f"scenario source type must be 'synthetic' or 'manifest', got {kind!r}")
        return cls(
            name=cfg.get("name", "scenario"),
            tasks=tasks,
            budget=int(cfg.get("budget", 500)),
            epochs=int(cfg.get("epochs", 20)),
            learning_rate=float(cfg.get("learning_rate", 0.05)),
            batch_size=int(cfg.get("batch_size", 32)),
            seed=int(cfg.get("seed", 0)),
            backbone=backbone,
            allow_resize=bool(cfg.get("allow_resize", False)),
            momentum=float(cfg.get("momentum", 0.9)),
            validation_fraction=float(cfg.get("validation_fraction", 0.0)),
            pretrain=cfg.get("pretrain"),
            source=source or None,
        )

    def to_config(self) -> dict:
        return {
            "name": self.name,
            "source": self.source,
            "budget": self.budget,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "backbone": self.backbone.to_dict(),
            "allow_resize": self.allow_resize,
            "momentum": self.momentum,
            "validation_fraction": self.validation_fraction,
            "pretrain": self.pretrain,
        }


def _episode_seeds(seed: int, task_index: int) -> tuple[int, int]:
    ss = np.random.SeedSequence([abs(int(seed)), task_index])
    a, b = ss.generate_state(2, dtype=np.uint32)
    return int(a), int(b)


def _run_sgd(params, loss_for_batch, n_samples, epochs, batch_size, learning_rate, momentum, rng):
    trainable = [p for p in params if p.requires_grad]
    opt = torch.optim.SGD(trainable, lr=learning_rate, momentum=momentum)
    total_steps = max(1, epochs * math.ceil(n_samples / batch_size))
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=total_steps)
    for _ in range(epochs):
        perm = rng.permutation(n_samples)
        for start in range(0, n_samples, batch_size):
            idx = perm[start:start + batch_size]
            loss = loss_for_batch(idx)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()


class _EpisodicClassifier(BaseEstimator):
    """Shared plumbing: input checks, seeds, buffer, prediction surfaces."""

    def __init__(self, backbone=None, epochs=20, batch_size=32, learning_rate=0.05,
                 momentum=0.9, budget=500, seed=0):
        self.backbone = backbone
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.budget = budget
        self.seed = seed

    # -- setup ---------------------------------------------------------
    def _backbone_config(self) -> BackboneConfig:
        if self.backbone is None:
            return BackboneConfig()
        if isinstance(self.backbone, BackboneConfig):
            return self.backbone
        if isinstance(self.backbone, dict):
            return BackboneConfig.from_dict(self.backbone)
        raise ConfigurationError("backbone must be a BackboneConfig, dict or None")

    def _ensure_setup(self):
        if getattr(self, "_ready", False):
            return
        self._config = self._backbone_config()
        self.classes_ = np.array([], dtype=np.int64)
        self.n_tasks_ = 0
        self.trainable_params_per_task_ = []
        self._buffer = ExemplarBuffer(int(self.budget))
        self._init_state()
        self._ready = True

    def _init_state(self):
        raise NotImplementedError

    def set_initial_backbone(self, module: Backbone):
        """Install a prepared (for example pretrained) backbone before the first episode."""
        if getattr(self, "_ready", False):
            raise DataError("backbone can only be replaced before the first episode")
        self._preset_backbone = module

    def _fresh_backbone(self) -> Backbone:
        preset = getattr(self, "_preset_backbone", None)
        if preset is not None:
            return preset
        return build_backbone(self._config)

    # -- data helpers ---------------------------------------------------
    def _tensor(self, images) -> torch.Tensor:
        return as_image_tensor(images, channels=self._config.channels,
                               image_size=self._config.image_size)

    def _check_fitted(self):
        if not getattr(self, "_ready", False) or self.n_tasks_ == 0:
            raise NotFittedError("estimator has not seen any training episode yet")

    # -- estimator surface ----------------------------------------------
    def partial_fit(self, X, y, sample_refs=None):
        """Run one training episode on the given task data; returns self."""
        self._ensure_setup()
        y = as_label_array(y, len(X))
        X = np.asarray(X, dtype=np.float32)
        new_classes = sorted(int(c) for c in np.unique(y))
        self._fit_episode(X, y, new_classes, sample_refs)
        self.classes_ = np.asarray(list(self.classes_) + new_classes, dtype=np.int64)
        self.n_tasks_ += 1
        return self

    def fit(self, X, y, sample_refs=None):
        """Train from scratch on a single episode."""
        for attr in ("_ready",):
            if hasattr(self, attr):
                delattr(self, attr)
        return self.partial_fit(X, y, sample_refs)

    def _fit_episode(self, X, y, new_classes, sample_refs):
        raise NotImplementedError

    def _logits(self, xb: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        xt = self._tensor(np.asarray(X, dtype=np.float32))
        outs = []
        with torch.no_grad():
            for start in range(0, len(xt), EVAL_BATCH):
                outs.append(self._logits(xt[start:start + EVAL_BATCH]).softmax(dim=-1))
        return torch.cat(outs).cpu().numpy()

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]

    def score(self, X, y) -> float:
        """Plain label accuracy (no multi-real collapse)."""
        y = as_label_array(y, len(X))
        return float(np.mean(self.predict(X) == y))

    def buffer_manifest(self) -> dict:
        self._check_fitted()
        return self._buffer.manifest()

    def total_parameter_count(self) -> int:
        raise NotImplementedError

    # -- shared episode pieces -------------------------------------------
    def _update_buffer(self, X, y, new_classes, sample_refs, feature_fn):
        if self.budget <= 0:
            return
        self._buffer.update(X, y, new_classes, feature_fn=feature_fn, refs=sample_refs)


class _ExpansionClassifierBase(_EpisodicClassifier):
    """Common episode loop for the strategies that grow one extractor per task."""

    diversity_weight = 0.1  # overridden by constructor params in subclasses

    def _add_task(self, new_classes, seed: int):
        raise NotImplementedError

    def _fit_episode(self, X, y, new_classes, sample_refs):
        net = self._network
        t_index = self.n_tasks_
        s_task, s_shuffle = _episode_seeds(self.seed, t_index)
        previous_classes = list(self.classes_)
        self._add_task(new_classes, s_task)

        train_X, train_y = training_set(self._buffer, X, y)
        xt = self._tensor(train_X)
        n = len(xt)

        # embeddings of already-frozen extractors never change during the
        # episode, so compute them once for the whole training set
        old_feats = None
        if net.n_tasks > 1:
            with torch.no_grad():
                parts = []
                for start in range(0, n, EVAL_BATCH):
                    xb = xt[start:start + EVAL_BATCH]
                    parts.append(torch.cat([ex.embed(xb) for ex in net.extractors[:-1]], dim=-1))
                old_feats = torch.cat(parts)

        div_map = None
        if t_index >= 1:
            div_map = L.build_div_target_map(new_classes, previous_classes)
        target_idx = L.label_indices(train_y, net.class_ids)

        params = list(net.trainable_parameters())
        self.trainable_params_per_task_.append(count_trainable(params))
        rng = np.random.default_rng(s_shuffle)
        extractor = net.extractors[-1]

        def loss_for_batch(idx):
            bidx = torch.as_tensor(idx)
            e_new = extractor.embed(xt[bidx])
            logits = net.logits_from_parts(None if old_feats is None else old_feats[bidx], e_new)
            clf = L.classification_loss_from_logits(logits, target_idx[bidx])
            if div_map is None:
                return clf
            div = L.diversity_loss(net.div_logits_from_embedding(e_new), train_y[idx], div_map)
            return L.total_loss(clf, div, self.diversity_weight)

        _run_sgd(params, loss_for_batch, n, self.epochs, self.batch_size,
                 self.learning_rate, self.momentum, rng)
        net.end_episode()

        def feature_fn(images):
            with torch.no_grad():
                t = self._tensor(np.asarray(images, dtype=np.float32))
                parts = [net.super_feature(t[s:s + EVAL_BATCH]) for s in range(0, len(t), EVAL_BATCH)]
            return torch.cat(parts).cpu().numpy()

        self._update_buffer(X, y, new_classes, sample_refs, feature_fn)

    def _logits(self, xb):
        return self._network.logits(xb)

    def super_feature(self, X) -> np.ndarray:
        """Concatenated per-task embeddings for inspection and tests."""
        self._check_fitted()
        with torch.no_grad():
            return self._network.super_feature(self._tensor(np.asarray(X, dtype=np.float32))).cpu().numpy()

    def total_parameter_count(self) -> int:
        return self._network.total_parameter_count()


class LoraxClassifier(_ExpansionClassifierBase):
    """Per-task low-rank adapters over one frozen backbone, growing head."""

    def __init__(self, backbone=None, rank=4, combo="all", diversity_weight=0.1,
                 adapter_scale=1.0, epochs=20, batch_size=32, learning_rate=0.05,
                 momentum=0.9, budget=500, seed=0):
        super().__init__(backbone=backbone, epochs=epochs, batch_size=batch_size,
                         learning_rate=learning_rate, momentum=momentum, budget=budget, seed=seed)
        self.rank = rank
        self.combo = combo
        self.diversity_weight = diversity_weight
        self.adapter_scale = adapter_scale

    def _init_state(self):
        if self.rank < 1:
            raise ConfigurationError(f"adapter rank must be >= 1, got {self.rank}")
        self._network = LoraxNetwork(self._fresh_backbone())

    def _add_task(self, new_classes, seed):
        self._network.add_task(new_classes, rank=int(self.rank), combo=self.combo,
                               scale=float(self.adapter_scale), seed=seed)

    @property
    def network_(self) -> LoraxNetwork:
        self._check_fitted()
        return self._network


class FullRankExpansionClassifier(_ExpansionClassifierBase):
    """A whole new trainable backbone per task, same head machinery."""

    def __init__(self, backbone=None, diversity_weight=0.1, epochs=20, batch_size=32,
                 learning_rate=0.05, momentum=0.9, budget=500, seed=0):
        super().__init__(backbone=backbone, epochs=epochs, batch_size=batch_size,
                         learning_rate=learning_rate, momentum=momentum, budget=budget, seed=seed)
        self.diversity_weight = diversity_weight

    def _init_state(self):
        self._network = FullRankNetwork(self._config)

    def _add_task(self, new_classes, seed):
        self._network.add_task(new_classes, seed=seed)

    @property
    def network_(self) -> FullRankNetwork:
        self._check_fitted()
        return self._network


class FinetuneClassifier(_EpisodicClassifier):
    """One backbone retrained every episode; only the head grows.

    Beyond replaying whatever the exemplar budget allows, nothing counters
    forgetting.
    """

    def _init_state(self):
        self._net = self._fresh_backbone()
        self._head = ExpandingClassifier()

    def _fit_episode(self, X, y, new_classes, sample_refs):
        t_index = self.n_tasks_
        s_task, s_shuffle = _episode_seeds(self.seed, t_index)
        g = torch.Generator().manual_seed(s_task)
        self._head.expand(new_classes, in_dim=self._config.embed_dim, generator=g)

        train_X, train_y = training_set(self._buffer, X, y)
        xt = self._tensor(train_X)
        target_idx = L.label_indices(train_y, self._head.class_ids)
        params = list(self._net.parameters()) + list(self._head.parameters())
        self.trainable_params_per_task_.append(count_trainable(params))
        rng = np.random.default_rng(s_shuffle)

        def loss_for_batch(idx):
            bidx = torch.as_tensor(idx)
            logits = self._head(self._net(xt[bidx]))
            return L.classification_loss_from_logits(logits, target_idx[bidx])

        _run_sgd(params, loss_for_batch, len(xt), self.epochs, self.batch_size,
                 self.learning_rate, self.momentum, rng)

        def feature_fn(images):
            with torch.no_grad():
                t = self._tensor(np.asarray(images, dtype=np.float32))
                parts = [self._net(t[s:s + EVAL_BATCH]) for s in range(0, len(t), EVAL_BATCH)]
            return torch.cat(parts).cpu().numpy()

        self._update_buffer(X, y, new_classes, sample_refs, feature_fn)

    def _logits(self, xb):
        return self._head(self._net(xb))

    def total_parameter_count(self) -> int:
        return count_all(self._net) + count_all(self._head)


class OracleClassifier(_EpisodicClassifier):
    """Joint training on the union of all episodes: the upper-bound reference."""

    def _init_state(self):
        self._net = self._fresh_backbone()
        self._head = ExpandingClassifier()

    def _fit_episode(self, X, y, new_classes, sample_refs):
        if self.n_tasks_ > 0:
            raise DataError("the oracle trains once on all data; call fit exactly once")
        s_task, s_shuffle = _episode_seeds(self.seed, 0)
        g = torch.Generator().manual_seed(s_task)
        self._head.expand(new_classes, in_dim=self._config.embed_dim, generator=g)
        xt = self._tensor(X)
        target_idx = L.label_indices(y, self._head.class_ids)
        params = list(self._net.parameters()) + list(self._head.parameters())
        self.trainable_params_per_task_.append(count_trainable(params))
        rng = np.random.default_rng(s_shuffle)

        def loss_for_batch(idx):
            bidx = torch.as_tensor(idx)
            logits = self._head(self._net(xt[bidx]))
            return L.classification_loss_from_logits(logits, target_idx[bidx])

        _run_sgd(params, loss_for_batch, len(xt), self.epochs, self.batch_size,
                 self.learning_rate, self.momentum, rng)

    def _logits(self, xb):
        return self._head(self._net(xb))

    def total_parameter_count(self) -> int:
        return count_all(self._net) + count_all(self._head)


def build_estimator(scenario: Scenario, strategy: Strategy) -> _EpisodicClassifier:
    lr = strategy.learning_rate if strategy.learning_rate is not None else scenario.learning_rate
    common = dict(backbone=scenario.backbone, epochs=scenario.epochs,
                  batch_size=scenario.batch_size, learning_rate=lr,
                  momentum=scenario.momentum, budget=scenario.budget, seed=scenario.seed)
    if strategy.kind is StrategyKind.LORAX:
        return LoraxClassifier(rank=strategy.rank, combo=strategy.combo,
                               diversity_weight=strategy.diversity_weight,
                               adapter_scale=strategy.adapter_scale, **common)
    if strategy.kind is StrategyKind.FULL_RANK_EXPANSION:
        return FullRankExpansionClassifier(diversity_weight=strategy.diversity_weight, **common)
    if strategy.kind is StrategyKind.FINETUNE:
        return FinetuneClassifier(**common)
    if strategy.kind is StrategyKind.ORACLE:
        common["budget"] = 0
        return OracleClassifier(**common)
    raise ConfigurationError(f"unhandled strategy kind {strategy.kind}")


@dataclass
class RunRecord:
    strategy: dict
    config: dict
    matrix: AccuracyMatrix
    metrics: dict
    trainable_params_per_task: list[int]
    total_params: int
    wall_time_s: float
    seed: int
    estimator: object = field(default=None, repr=False, compare=False)


def pretrain_backbone(config: BackboneConfig, pretrain_cfg: dict) -> Backbone:
    """Train a fresh backbone on a synthetic pretext stream, jointly over
    all pretext classes, and return it unfrozen."""
    cfg = dict(pretrain_cfg)
    tasks = generate_stream(
        num_tasks=int(cfg.get("num_tasks", 2)),
        samples_per_class=int(cfg.get("samples_per_class", 60)),
        image_size=config.image_size,
        seed=int(cfg.get("seed", 1234)),
    )
    X = np.concatenate([t.train.images for t in tasks])
    y = np.concatenate([t.train.labels for t in tasks])
    est = OracleClassifier(backbone=config, epochs=int(cfg.get("epochs", 2)),
                           batch_size=int(cfg.get("batch_size", 32)),
                           learning_rate=float(cfg.get("learning_rate", 0.05)),
                           budget=0, seed=int(cfg.get("seed", 1234)))
    est.fit(X, y)
    return est._net


def _split_validation(images, labels, fraction, rng):
    n = len(labels)
    n_val = int(round(n * fraction))
    if n_val == 0:
        return images, labels, None, None
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    return images[train_idx], labels[train_idx], images[val_idx], labels[val_idx]


def run_scenario(scenario: Scenario, strategy: Strategy) -> RunRecord:
    """Train a strategy across the stream, evaluating after every episode."""
    start = time.perf_counter()
    est = build_estimator(scenario, strategy)
    if scenario.pretrain:
        est.set_initial_backbone(pretrain_backbone(scenario.backbone, scenario.pretrain))
    mmap = scenario.multi_real_map()
    size = scenario.backbone.image_size
    n = scenario.n_tasks

    test_sets = [
        (preprocess_batch(t.test.images, size, scenario.allow_resize), t.test.labels)
        for t in scenario.tasks
    ]

    if strategy.kind is StrategyKind.ORACLE:
        X = np.concatenate([preprocess_batch(t.train.images, size, scenario.allow_resize)
                            for t in scenario.tasks])
        y = np.concatenate([t.train.labels for t in scenario.tasks])
        est.fit(X, y)
        matrix = AccuracyMatrix(n)
        for i in range(n):
            xi, yi = test_sets[i]
            c, tot = task_accuracy_counts(est.predict, xi, yi, mmap)
            matrix.set_counts(i, n - 1, c, tot)
        final = [matrix.value(i, n - 1) for i in range(n)]
        metrics = {"AA": float(np.mean(final)), "AAF": float(np.mean(final)), "BWT": None, "n": n}
    else:
        matrix = AccuracyMatrix(n)
        val_matrix = AccuracyMatrix(n) if scenario.validation_fraction > 0 else None
        val_sets: list = []
        for j, task in enumerate(scenario.tasks):
            Xj = preprocess_batch(task.train.images, size, scenario.allow_resize)
            yj = task.train.labels
            refs = task.train.refs
            if scenario.validation_fraction > 0:
                rng = np.random.default_rng(_episode_seeds(scenario.seed, 1000 + j)[0])
                Xj, yj, xv, yv = _split_validation(Xj, yj, scenario.validation_fraction, rng)
                val_sets.append((xv, yv))
                refs = None
            est.partial_fit(Xj, yj, sample_refs=refs)
            for i in range(j + 1):
                xi, yi = test_sets[i]
                c, tot = task_accuracy_counts(est.predict, xi, yi, mmap)
                matrix.set_counts(i, j, c, tot)
                if val_matrix is not None and val_sets[i][0] is not None:
                    c, tot = task_accuracy_counts(est.predict, val_sets[i][0], val_sets[i][1], mmap)
                    val_matrix.set_counts(i, j, c, tot)
        metrics = metrics_summary(matrix)
        if val_matrix is not None and val_matrix.is_complete():
            vm = metrics_summary(val_matrix)
            metrics.update({"val_AA": vm["AA"], "val_AAF": vm["AAF"], "val_BWT": vm["BWT"]})

    wall = time.perf_counter() - start
    return RunRecord(
        strategy=strategy.to_dict(),
        config=scenario.to_config(),
        matrix=matrix,
        metrics=metrics,
        trainable_params_per_task=list(est.trainable_params_per_task_),
        total_params=est.total_parameter_count(),
        wall_time_s=wall,
        seed=scenario.seed,
        estimator=est,
    )


def run_oracle(scenario: Scenario, strategy: Strategy | None = None) -> RunRecord:
    """Joint-training upper bound; the accuracy matrix holds only the final column."""
    strat = strategy or Strategy(kind=StrategyKind.ORACLE)
    if strat.kind is not StrategyKind.ORACLE:
        strat = dataclasses.replace(strat, kind=StrategyKind.ORACLE)
    return run_scenario(scenario, strat)
