"""Network graph: modality encoders, linear trait heads, fusion nets, and the
shared-weight Siamese projector.

Data flow, per modality m with feature vector x_m:

    h_m = encoder_m(x_m)                           (dim Q)
    e_m = siamese(h_m)                             (dim E, weights shared)
    baseline  = head_fusion1(m1(h_a (+) h_v (+) h_t))        (dim 5)
    full      = head_fusion2(m2(m1(...) (+) e_a (+) e_v (+) e_t))

Each head is a separate linear map because its input dimension differs per
site. Training happens in four stages; networks finished in one stage are
frozen for all later stages. Raw head outputs feed the losses; clipping to
[0, 1] happens only at prediction/report time.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .datamodel import MODALITIES, ClassThresholds, MinMaxStats
from .errors import ConfigError, DataError, DimensionError, UsageError
from .nncore import Dense, Dropout, Network, Tensor, concat


@dataclass
class ModelConfig:
    feature_dims: dict
    hidden_dim: int = 32
    fused_dim: int = 64
    embed_dim: int = 16
    siamese_hidden: tuple = (25, 25)
    encoder_dropout: float = 0.0
    siamese_dropout: float = 0.0
    weight_decay: float = 0.0005
    modalities: tuple = MODALITIES

    # paper-scale dims: Q=256 fused into O=512, embeddings E=128 from a
    # [200, 200] projector with 0.5 dropout everywhere
    PAPER = {"hidden_dim": 256, "fused_dim": 512, "embed_dim": 128,
             "siamese_hidden": (200, 200), "encoder_dropout": 0.5,
             "siamese_dropout": 0.5}
    DESK = {"hidden_dim": 32, "fused_dim": 64, "embed_dim": 16,
            "siamese_hidden": (25, 25), "encoder_dropout": 0.0,
            "siamese_dropout": 0.0}

    def __post_init__(self):
        self.modalities = tuple(self.modalities)
        self.siamese_hidden = tuple(self.siamese_hidden)
        for m in self.modalities:
            if m not in MODALITIES:
                raise ConfigError(f"unknown modality {m!r}")
            if m not in self.feature_dims:
                raise ConfigError(f"feature_dims missing modality {m!r}")
        dims = [self.hidden_dim, self.fused_dim, self.embed_dim,
                *self.siamese_hidden, *[self.feature_dims[m] for m in self.modalities]]
        if any(d <= 0 for d in dims):
            raise ConfigError("all network dims must be positive")

    @classmethod
    def preset(cls, name: str, feature_dims: dict, **overrides) -> "ModelConfig":
        if name == "desk":
            base = dict(cls.DESK)
        elif name == "paper":
            base = dict(cls.PAPER)
        else:
            raise ConfigError(f"unknown model preset {name!r}")
        base.update(overrides)
        return cls(feature_dims=feature_dims, **base)

    def to_dict(self) -> dict:
        return {"feature_dims": dict(self.feature_dims),
                "hidden_dim": self.hidden_dim,
                "fused_dim": self.fused_dim,
                "embed_dim": self.embed_dim,
                "siamese_hidden": list(self.siamese_hidden),
                "encoder_dropout": self.encoder_dropout,
                "siamese_dropout": self.siamese_dropout,
                "weight_decay": self.weight_decay,
                "modalities": list(self.modalities)}

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["siamese_hidden"] = tuple(d["siamese_hidden"])
        d["modalities"] = tuple(d["modalities"])
        return ModelConfig(**d)


def _seed_for(root_seed: int, *tags) -> np.random.Generator:
    parts = [root_seed & 0xFFFFFFFF] + [zlib.crc32(str(t).encode()) for t in tags]
    return np.random.default_rng(parts)


def clip_prediction(raw: np.ndarray) -> np.ndarray:
    """Clamp raw head outputs into [0, 1] for evaluation and reporting."""
    return np.clip(raw, 0.0, 1.0)


class TraitModel:
    """All subnetworks plus freeze bookkeeping; the unit checkpoints capture."""

    HEAD_SITES = ("audio", "video", "text", "fusion1", "fusion2")

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = int(seed)
        self.stage = 0  # highest completed learning stage
        self.norm_stats: dict = {}
        self.thresholds: ClassThresholds | None = None
        q, o, e = config.hidden_dim, config.fused_dim, config.embed_dim
        wd = config.weight_decay
        self.encoders = {}
        self.heads = {}
        for m in config.modalities:
            n = config.feature_dims[m]
            layers = [Dense(n, q, "relu", wd, seed=_seed_for(seed, "enc", m, 0))]
            if config.encoder_dropout > 0:
                layers.append(Dropout(config.encoder_dropout,
                                      _seed_for(seed, "encdrop", m)))
            layers.append(Dense(q, q, "relu", wd, seed=_seed_for(seed, "enc", m, 1)))
            self.encoders[m] = Network(layers)
            self.heads[m] = Network([Dense(q, 5, "linear", wd,
                                           seed=_seed_for(seed, "head", m))])
        self.m1 = Network([Dense(len(config.modalities) * q, o, "relu", wd,
                                 seed=_seed_for(seed, "m1"))])
        self.heads["fusion1"] = Network([Dense(o, 5, "linear", wd,
                                               seed=_seed_for(seed, "head", "fusion1"))])
        self.m2 = Network([Dense(o + 3 * e, o, "relu", wd,
                                 seed=_seed_for(seed, "m2"))])
        self.heads["fusion2"] = Network([Dense(o, 5, "linear", wd,
                                               seed=_seed_for(seed, "head", "fusion2"))])
        # the Siamese projector: shared weights, linear output, no weight decay
        s_layers = []
        prev = q
        for li, width in enumerate(config.siamese_hidden):
            s_layers.append(Dense(prev, width, "relu", 0.0,
                                  seed=_seed_for(seed, "siamese", li)))
            if li == 0 and config.siamese_dropout > 0:
                s_layers.append(Dropout(config.siamese_dropout,
                                        _seed_for(seed, "siamdrop")))
            prev = width
        s_layers.append(Dense(prev, e, "linear", 0.0,
                              seed=_seed_for(seed, "siamese", "out")))
        self.siamese = Network(s_layers)

    # -- structure ----------------------------------------------------------------

    def networks(self) -> dict:
        nets = {f"encoder_{m}": enc for m, enc in self.encoders.items()}
        nets.update({f"head_{site}": net for site, net in self.heads.items()})
        nets["m1"] = self.m1
        nets["m2"] = self.m2
        nets["siamese"] = self.siamese
        return nets

    def set_training(self, flag: bool) -> None:
        for net in self.networks().values():
            if not net.frozen:
                net.set_training(flag)

    def reseed_dropout(self, stage: int) -> None:
        """Give every dropout layer a fresh per-stage stream so stage
        execution is independent of what ran before it."""
        for name, net in self.networks().items():
            for li, layer in enumerate(net.layers):
                if isinstance(layer, Dropout):
                    layer.rng = _seed_for(self.seed, "drop", name, li, stage)

    def finish_stage(self, stage: int) -> None:
        """Mark a stage done and freeze the networks it trained."""
        if stage != self.stage + 1:
            raise UsageError(f"cannot finish stage {stage} after stage {self.stage}")
        frozen_by_stage = {
            1: [f"encoder_{m}" for m in self.config.modalities]
               + [f"head_{m}" for m in self.config.modalities],
            2: ["m1", "head_fusion1"],
            3: ["siamese"],
            4: ["m2", "head_fusion2"],
        }
        nets = self.networks()
        for name in frozen_by_stage[stage]:
            nets[name].set_frozen(True)
        self.stage = stage

    # -- forward paths ---------------------------------------------------------------

    def encode(self, modality: str, features) -> Tensor:
        if modality not in self.encoders:
            raise UsageError(f"model has no encoder for {modality!r}")
        x = Tensor.as_tensor(features)
        expected = self.config.feature_dims[modality]
        if x.ndim != 2 or x.shape[1] != expected:
            raise DimensionError(f"{modality} features must be (batch, {expected}), "
                                 f"got {x.shape}")
        return self.encoders[modality](x)

    def predict_head(self, site: str, hidden: Tensor) -> Tensor:
        if site not in self.heads:
            raise UsageError(f"unknown head site {site!r}")
        return self.heads[site](hidden)

    def fuse_baseline(self, hiddens: dict) -> Tensor:
        """Raw trait prediction from concatenated hidden representations."""
        missing = [m for m in self.config.modalities if m not in hiddens]
        if missing:
            raise UsageError(f"fuse_baseline missing modalities: {missing}")
        fused = self.m1(concat([hiddens[m] for m in self.config.modalities], axis=1))
        return self.predict_head("fusion1", fused)

    def embed(self, hidden: Tensor) -> Tensor:
        return self.siamese(hidden)

    def fuse_full(self, hiddens: dict, embeddings: dict) -> Tensor:
        """Raw prediction from fused hiddens concatenated with embeddings."""
        missing = [m for m in MODALITIES
                   if m not in hiddens or m not in embeddings]
        if missing:
            raise UsageError(f"fuse_full missing modalities: {missing}")
        fused = self.m1(concat([hiddens[m] for m in self.config.modalities], axis=1))
        stacked = concat([fused] + [embeddings[m] for m in MODALITIES], axis=1)
        return self.predict_head("fusion2", self.m2(stacked))

    def forward(self, features: dict, route: str) -> Tensor:
        """Raw (unclipped) predictions along a named route."""
        if route in self.config.modalities:
            return self.predict_head(route, self.encode(route, features[route]))
        hiddens = {m: self.encode(m, features[m]) for m in self.config.modalities}
        if route == "fusion1":
            return self.fuse_baseline(hiddens)
        if route == "fusion2":
            embeddings = {m: self.embed(hiddens[m]) for m in self.config.modalities}
            return self.fuse_full(hiddens, embeddings)
        raise UsageError(f"unknown route {route!r}")

    def default_route(self) -> str:
        if self.stage >= 4:
            return "fusion2"
        if self.stage >= 2:
            return "fusion1"
        if len(self.config.modalities) == 1:
            return self.config.modalities[0]
        raise UsageError("model has no trained fusion path yet; pick a route")

    def predict(self, features: dict, route: str | None = None) -> np.ndarray:
        self.set_training(False)
        raw = self.forward(features, route or self.default_route())
        return clip_prediction(raw.data)

    # -- persistence -------------------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        payload = {
            "format": "xmodal-checkpoint-v1",
            "stage": self.stage,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "normalization": {m: s.to_dict() for m, s in self.norm_stats.items()},
            "thresholds": self.thresholds.to_dict() if self.thresholds else None,
            "subnetworks": {
                name: {"frozen": net.frozen,
                       "params": {pname: p.data.tolist()
                                  for pname, p in net.named_parameters()}}
                for name, net in self.networks().items()
            },
        }
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load_checkpoint(path) -> "TraitModel":
        path = Path(path)
        if not path.exists():
            raise DataError(f"checkpoint {path} does not exist")
        with open(path) as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: invalid checkpoint JSON: {exc}") from None
        if payload.get("format") != "xmodal-checkpoint-v1":
            raise DataError(f"{path}: not a recognized checkpoint file")
        model = TraitModel(ModelConfig.from_dict(payload["config"]),
                           seed=payload["seed"])
        model.stage = int(payload["stage"])
        model.norm_stats = {m: MinMaxStats.from_dict(d)
                            for m, d in payload["normalization"].items()}
        if payload["thresholds"] is not None:
            model.thresholds = ClassThresholds.from_dict(payload["thresholds"])
        nets = model.networks()
        for name, entry in payload["subnetworks"].items():
            if name not in nets:
                raise DataError(f"{path}: unknown subnetwork {name!r}")
            net = nets[name]
            params = dict(net.named_parameters())
            for pname, values in entry["params"].items():
                if pname not in params:
                    raise DataError(f"{path}: unknown parameter {name}.{pname}")
                arr = np.asarray(values, dtype=float)
                if arr.shape != params[pname].data.shape:
                    raise DataError(f"{path}: shape mismatch for {name}.{pname}")
                params[pname].data = arr
            net.set_frozen(bool(entry["frozen"]))
        return model
