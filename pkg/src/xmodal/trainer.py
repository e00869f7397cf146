"""Four-stage training orchestration.

Stage 1 trains each modality encoder (with its own linear head) on the
composite regression loss, then freezes them. Stage 2 trains the fusion net
over concatenated hidden representations. Stage 3 trains the Siamese
projector with the trait-wise multi-similarity loss over triple-size
mixed-modality batches. Stage 4 trains the final fusion net over hidden
representations concatenated with the frozen embeddings. Every stage early
stops on its validation loss and restores the best epoch's parameters;
normalization stats and class thresholds are fitted on the training split
only and ride along on the model.
"""

from __future__ import annotations

import hashlib
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import (Dataset, assign_classes, fit_thresholds, is_extreme,
                        minmax_normalize, split_features, split_traits)
from .errors import UsageError
from .losses import BellConfig, MSConfig, composite_loss, ms_loss
from .model import TraitModel
from .nncore import Adam, AdamConfig, Tensor

SPLITS = ("train", "val", "test")


@dataclass
class StagePlan:
    """Schedule and optimizer settings for one learning stage."""

    stage: int
    epochs: int = 40
    batch_size: int = 32
    patience: int = 8
    lr0: float = 0.001
    end_lr: float = 0.0
    decay_power: float = 1.0
    # stage 1 only: {"audio": {"epochs": ..., "batch_size": ...}, ...}
    per_modality: dict = field(default_factory=dict)
    # stage 3 only: guarantee >=1 extreme sample per trait per batch
    stratified: bool = True

    def for_modality(self, modality: str) -> "StagePlan":
        override = self.per_modality.get(modality, {})
        return StagePlan(stage=self.stage,
                         epochs=int(override.get("epochs", self.epochs)),
                         batch_size=int(override.get("batch_size", self.batch_size)),
                         patience=int(override.get("patience", self.patience)),
                         lr0=self.lr0, end_lr=self.end_lr,
                         decay_power=self.decay_power)

    def to_dict(self) -> dict:
        return {"stage": self.stage, "epochs": self.epochs,
                "batch_size": self.batch_size, "patience": self.patience,
                "lr0": self.lr0, "end_lr": self.end_lr,
                "decay_power": self.decay_power,
                "per_modality": dict(self.per_modality),
                "stratified": self.stratified}


def early_stop(history, patience: int) -> bool:
    """True when the last improvement lies ``patience`` or more epochs back.

    An improvement is a strictly lower validation loss than everything
    before it; ties do not reset the counter.
    """
    if not len(history):
        return False
    best_index = int(np.argmin(history))  # first occurrence wins
    return (len(history) - 1 - best_index) >= patience


def _rng(seed: int, *tags) -> np.random.Generator:
    parts = [seed & 0xFFFFFFFF] + [zlib.crc32(str(t).encode()) for t in tags]
    return np.random.default_rng(parts)


def plain_batches(n: int, batch_size: int, rng: np.random.Generator) -> list:
    order = rng.permutation(n)
    return [np.sort(order[lo:lo + batch_size]) for lo in range(0, n, batch_size)]


def stratified_batches(extreme: np.ndarray, batch_size: int,
                       rng: np.random.Generator) -> list:
    """Batches seeded so each one holds an extreme sample for every trait
    that has any; remaining slots fill with the leftover shuffle."""
    n, n_traits = extreme.shape
    n_batches = max(1, math.ceil(n / batch_size))
    batches = [[] for _ in range(n_batches)]
    assigned = np.zeros(n, dtype=bool)
    for j in range(n_traits):
        pool = [int(i) for i in rng.permutation(np.flatnonzero(extreme[:, j]))
                if not assigned[i]]
        pos = 0
        for b in range(n_batches):
            if any(extreme[i, j] for i in batches[b]):
                continue
            if pos >= len(pool):
                break
            batches[b].append(pool[pos])
            assigned[pool[pos]] = True
            pos += 1
    rest = [int(i) for i in rng.permutation(n) if not assigned[i]]
    for b in range(n_batches):
        while len(batches[b]) < batch_size and rest:
            batches[b].append(rest.pop())
    while rest:  # batch sizes already saturated; spread the tail evenly
        smallest = min(range(n_batches), key=lambda b: len(batches[b]))
        batches[smallest].append(rest.pop())
    return [np.sort(np.array(b, dtype=int)) for b in batches if b]


# -- prepared data ------------------------------------------------------------------


@dataclass
class PreparedData:
    """Normalized feature matrices, traits, and class labels per split."""

    features: dict  # split -> modality -> (n, dim)
    traits: dict    # split -> (n, 5)
    labels: dict    # split -> (n, 5) class ids


def prepare_data(model: TraitModel, dataset: Dataset,
                 threshold_ddof: int = 0) -> PreparedData:
    """Fit normalization and thresholds on train; transform all splits."""
    if not dataset.train:
        raise UsageError("training split is empty")
    refit = not model.norm_stats
    features = {s: {} for s in SPLITS}
    for m in model.config.modalities:
        train_matrix = split_features(dataset.train, m)
        if refit:
            normed, stats = minmax_normalize(train_matrix)
            model.norm_stats[m] = stats
        else:
            normed, _ = minmax_normalize(train_matrix, model.norm_stats[m])
        features["train"][m] = normed
        for split in ("val", "test"):
            samples = dataset.split(split)
            if samples:
                features[split][m], _ = minmax_normalize(
                    split_features(samples, m), model.norm_stats[m])
            else:
                features[split][m] = np.zeros((0, train_matrix.shape[1]))
    traits = {s: (split_traits(dataset.split(s)) if dataset.split(s)
                  else np.zeros((0, 5))) for s in SPLITS}
    if model.thresholds is None:
        model.thresholds = fit_thresholds(traits["train"], ddof=threshold_ddof)
    labels = {s: assign_classes(traits[s], model.thresholds) for s in SPLITS}
    return PreparedData(features=features, traits=traits, labels=labels)


# -- trainer -----------------------------------------------------------------------


class Trainer:
    def __init__(self, model: TraitModel, dataset: Dataset,
                 plans: dict, bell: BellConfig, ms: MSConfig,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8,
                 threshold_ddof: int = 0):
        self.model = model
        self.plans = plans
        self.bell = bell
        self.ms = ms
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.data = prepare_data(model, dataset, threshold_ddof)
        self.records: list = []

    # -- generic loop ---------------------------------------------------------------

    def _adam(self, nets: list, plan: StagePlan, n_train: int) -> Adam:
        n_batches = max(1, math.ceil(n_train / plan.batch_size))
        config = AdamConfig(lr0=plan.lr0, beta1=self.beta1, beta2=self.beta2,
                            epsilon=self.epsilon,
                            total_steps=max(1, plan.epochs * n_batches),
                            decay_power=plan.decay_power, end_lr=plan.end_lr)
        params = [p for net in nets for p in net.parameters()]
        return Adam(params, config)

    def _fit(self, nets: list, plan: StagePlan, batch_loss, val_loss,
             make_batches, tag: str) -> dict:
        model = self.model
        n_train = self.data.traits["train"].shape[0]
        opt = self._adam(nets, plan, n_train)
        params = [p for net in nets for p in net.parameters()]
        best = {"val": np.inf, "epoch": -1,
                "params": [p.data.copy() for p in params]}
        history = []
        skipped_steps = 0
        for epoch in range(plan.epochs):
            model.set_training(True)
            rng = _rng(model.seed, "shuffle", tag, epoch)
            batch_losses = []
            for idx in make_batches(plan.batch_size, rng):
                opt.zero_grad()
                loss = batch_loss(idx)
                if not loss.requires_grad:
                    skipped_steps += 1
                    continue
                loss.backward()
                for net in nets:
                    net.apply_weight_decay()
                opt.step()
                batch_losses.append(loss.item())
            model.set_training(False)
            val = float(val_loss())
            history.append({"epoch": epoch,
                            "train_loss": float(np.mean(batch_losses))
                            if batch_losses else None,
                            "val_loss": val})
            if val < best["val"]:
                best = {"val": val, "epoch": epoch,
                        "params": [p.data.copy() for p in params]}
            if early_stop([h["val_loss"] for h in history], plan.patience):
                break
        for p, data in zip(params, best["params"]):
            p.data = data.copy()
        return {"tag": tag, "epochs_run": len(history),
                "best_epoch": best["epoch"], "best_val_loss": best["val"],
                "early_stopped": len(history) < plan.epochs,
                "skipped_steps": skipped_steps, "history": history}

    # -- stage 1: modality encoders ----------------------------------------------------

    def run_stage1(self) -> dict:
        if self.model.stage != 0:
            raise UsageError(f"stage 1 requires a fresh model, found stage "
                             f"{self.model.stage}")
        plan = self.plans[1]
        data = self.data
        parts = []
        for m in self.model.config.modalities:
            mplan = plan.for_modality(m)
            x_train, y_train = data.features["train"][m], data.traits["train"]
            x_val, y_val = data.features["val"][m], data.traits["val"]

            def batch_loss(idx, m=m, x=x_train, y=y_train):
                pred = self.model.forward({m: x[idx]}, route=m)
                return composite_loss(y[idx], pred, self.bell)

            def val_loss(m=m, x=x_val, y=y_val):
                pred = self.model.forward({m: x}, route=m)
                return composite_loss(y, pred, self.bell).item()

            nets = [self.model.encoders[m], self.model.heads[m]]
            n = x_train.shape[0]
            parts.append(self._fit(
                nets, mplan, batch_loss, val_loss,
                lambda bs, rng, n=n: plain_batches(n, bs, rng),
                tag=f"stage1-{m}"))
        self.model.finish_stage(1)
        record = {"stage": 1, "plan": plan.to_dict(), "parts": parts}
        self.records.append(record)
        return record

    # -- stage 2: baseline fusion -------------------------------------------------------

    def _hiddens(self, split: str) -> dict:
        self.model.set_training(False)
        return {m: self.model.encode(m, self.data.features[split][m]).data
                for m in self.model.config.modalities}

    def run_stage2(self) -> dict:
        if self.model.stage != 1:
            raise UsageError("stage 2 requires a completed stage 1")
        plan = self.plans[2]
        h_train = self._hiddens("train")
        h_val = self._hiddens("val")
        y_train, y_val = self.data.traits["train"], self.data.traits["val"]

        def batch_loss(idx):
            pred = self.model.fuse_baseline(
                {m: Tensor(h[idx]) for m, h in h_train.items()})
            return composite_loss(y_train[idx], pred, self.bell)

        def val_loss():
            pred = self.model.fuse_baseline(
                {m: Tensor(h) for m, h in h_val.items()})
            return composite_loss(y_val, pred, self.bell).item()

        nets = [self.model.m1, self.model.heads["fusion1"]]
        n = y_train.shape[0]
        part = self._fit(nets, plan, batch_loss, val_loss,
                         lambda bs, rng: plain_batches(n, bs, rng), tag="stage2")
        self.model.finish_stage(2)
        record = {"stage": 2, "plan": plan.to_dict(), "parts": [part]}
        self.records.append(record)
        return record

    # -- stage 3: Siamese embedding ------------------------------------------------------

    def _embedding_batch(self, hiddens: dict, labels: np.ndarray, idx) -> tuple:
        stacked = np.vstack([hiddens[m][idx] for m in self.model.config.modalities])
        tiled = np.tile(labels[idx], (len(self.model.config.modalities), 1))
        return stacked, tiled

    def run_stage3(self) -> dict:
        if self.model.stage != 2:
            raise UsageError("stage 3 requires a completed stage 2")
        plan = self.plans[3]
        h_train = self._hiddens("train")
        h_val = self._hiddens("val")
        labels_train = self.data.labels["train"]
        labels_val = self.data.labels["val"]
        extreme_train = is_extreme(labels_train)
        n = labels_train.shape[0]
        n_traits = labels_train.shape[1]

        def batch_loss(idx):
            stacked, tiled = self._embedding_batch(h_train, labels_train, idx)
            emb = self.model.embed(Tensor(stacked))
            return ms_loss(emb, tiled, self.ms, n_samples=len(idx))

        def val_loss():
            stacked, tiled = self._embedding_batch(
                h_val, labels_val, np.arange(labels_val.shape[0]))
            emb = self.model.embed(Tensor(stacked))
            return ms_loss(emb, tiled, self.ms,
                           n_samples=labels_val.shape[0]).item()

        def make_batches(bs, rng):
            if plan.stratified:
                return stratified_batches(extreme_train, bs, rng)
            return plain_batches(n, bs, rng)

        nets = [self.model.siamese]
        part = self._fit(nets, plan, batch_loss, val_loss, make_batches,
                         tag="stage3")
        self.model.finish_stage(3)
        record = {"stage": 3, "plan": plan.to_dict(), "parts": [part],
                  "n_traits": n_traits}
        self.records.append(record)
        return record

    # -- stage 4: full fusion --------------------------------------------------------------

    def _embeddings_for(self, hiddens: dict) -> dict:
        self.model.set_training(False)
        return {m: self.model.embed(Tensor(h)).data for m, h in hiddens.items()}

    def run_stage4(self) -> dict:
        if self.model.stage != 3:
            raise UsageError("stage 4 requires a completed stage 3")
        plan = self.plans[4]
        h_train, h_val = self._hiddens("train"), self._hiddens("val")
        e_train = self._embeddings_for(h_train)
        e_val = self._embeddings_for(h_val)
        y_train, y_val = self.data.traits["train"], self.data.traits["val"]

        def batch_loss(idx):
            pred = self.model.fuse_full(
                {m: Tensor(h[idx]) for m, h in h_train.items()},
                {m: Tensor(e[idx]) for m, e in e_train.items()})
            return composite_loss(y_train[idx], pred, self.bell)

        def val_loss():
            pred = self.model.fuse_full(
                {m: Tensor(h) for m, h in h_val.items()},
                {m: Tensor(e) for m, e in e_val.items()})
            return composite_loss(y_val, pred, self.bell).item()

        nets = [self.model.m2, self.model.heads["fusion2"]]
        n = y_train.shape[0]
        part = self._fit(nets, plan, batch_loss, val_loss,
                         lambda bs, rng: plain_batches(n, bs, rng), tag="stage4")
        self.model.finish_stage(4)
        record = {"stage": 4, "plan": plan.to_dict(), "parts": [part]}
        self.records.append(record)
        return record

    # -- driver ------------------------------------------------------------------------

    STAGE_RUNNERS = {1: run_stage1, 2: run_stage2, 3: run_stage3, 4: run_stage4}

    def run_stages(self, stages) -> list:
        for stage in stages:
            self.model.reseed_dropout(stage)
            self.STAGE_RUNNERS[stage](self)
        return self.records


# -- run manifest --------------------------------------------------------------------


def config_hash(config_snapshot: dict) -> str:
    canonical = json.dumps(config_snapshot, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_manifest(path, dataset_path: str, seed: int, config_snapshot: dict,
                   records: list, checkpoint_path: str) -> dict:
    manifest = {
        "dataset": str(dataset_path),
        "seed": seed,
        "config_hash": config_hash(config_snapshot),
        "config": config_snapshot,
        "stages": records,
        "final_checkpoint": str(checkpoint_path),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest
