"""Samples, trait class segmentation, normalization, dataset I/O, synthetic data.

A sample carries one precomputed feature vector per modality (audio, video,
text) plus five continuous trait scores in [0, 1]. Scores are segmented into
four classes per trait using thresholds (mean - std, mean, mean + std)
fitted on the training split; classes C1 and C4 are the extremes. Class
labels are always derived from thresholds at use time, never stored in
dataset files.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DimensionError, UsageError

TRAITS = ("ext", "neu", "agr", "con", "ope")
MODALITIES = ("audio", "video", "text")

C1, C2, C3, C4 = 1, 2, 3, 4


@dataclass
class TraitVector:
    """The five Big-Five scores of one sample, each in [0, 1]."""

    ext: float
    neu: float
    agr: float
    con: float
    ope: float

    def __post_init__(self):
        for name in TRAITS:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DataError(f"trait {name}={v} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, t) for t in TRAITS])

    @staticmethod
    def from_array(values) -> "TraitVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (5,):
            raise DimensionError(f"trait vector must have 5 entries, got {values.shape}")
        return TraitVector(*[float(v) for v in values])


@dataclass
class Sample:
    id: str
    audio: np.ndarray
    video: np.ndarray
    text: np.ndarray
    traits: TraitVector

    def features(self, modality: str) -> np.ndarray:
        if modality not in MODALITIES:
            raise UsageError(f"unknown modality {modality!r}")
        return getattr(self, modality)


# -- class thresholds ---------------------------------------------------------


@dataclass
class ClassThresholds:
    """Per-trait mean and std fitted on the training split.

    Cut points are (mean - std, mean, mean + std). ``ddof`` records whether
    the std was population (0) or sample (1).
    """

    mean: np.ndarray
    std: np.ndarray
    ddof: int = 0

    def cuts(self, trait_index: int) -> tuple:
        m, s = self.mean[trait_index], self.std[trait_index]
        return (m - s, m, m + s)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "ddof": self.ddof}

    @staticmethod
    def from_dict(d: dict) -> "ClassThresholds":
        return ClassThresholds(np.array(d["mean"], dtype=float),
                               np.array(d["std"], dtype=float), int(d["ddof"]))


def fit_thresholds(train_traits, ddof: int = 0) -> ClassThresholds:
    """Fit per-trait mean/std on training trait scores.

    Accepts a list of TraitVector or an (n, 5) array. Population std
    (ddof=0) by default.
    """
    matrix = traits_matrix(train_traits)
    if matrix.shape[0] < 2:
        raise UsageError("fit_thresholds needs at least 2 samples")
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0, ddof=ddof)
    low, high = mean - std, mean + std
    if np.any(low <= 0) or np.any(high >= 1) or np.any(std == 0):
        warnings.warn("degenerate trait distribution: class cut points do not "
                      "split (0, 1) into four non-empty ranges", stacklevel=2)
    return ClassThresholds(mean, std, ddof)


def assign_classes(traits, thresholds: ClassThresholds) -> np.ndarray:
    """Segment scores into classes 1..4 per trait.

    Intervals: C1 = [0, m-s), C2 = [m-s, m), C3 = [m, m+s), C4 = [m+s, 1].
    With s = 0 nothing counts as extreme: scores below the mean fall to C2,
    the rest to C3.
    """
    matrix = traits_matrix(traits)
    mean, std = thresholds.mean, thresholds.std
    labels = np.full(matrix.shape, C2, dtype=np.int64)
    labels[matrix >= mean] = C3
    pos_std = std > 0
    labels[(matrix < mean - std) & pos_std] = C1
    labels[(matrix >= mean + std) & pos_std] = C4
    return labels


def is_extreme(labels: np.ndarray) -> np.ndarray:
    return (labels == C1) | (labels == C4)


def traits_matrix(traits) -> np.ndarray:
    """Coerce TraitVector / list of TraitVector / array to a float matrix."""
    if isinstance(traits, TraitVector):
        return traits.as_array()
    if isinstance(traits, np.ndarray):
        return traits.astype(float, copy=False)
    if len(traits) == 0:
        raise UsageError("empty trait collection")
    if isinstance(traits[0], TraitVector):
        return np.stack([t.as_array() for t in traits])
    return np.asarray(traits, dtype=float)


# -- min-max normalization ------------------------------------------------------


@dataclass
class MinMaxStats:
    mins: np.ndarray
    maxs: np.ndarray

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "MinMaxStats":
        return MinMaxStats(np.array(d["mins"], dtype=float),
                           np.array(d["maxs"], dtype=float))


def minmax_normalize(matrix: np.ndarray, fit_stats: MinMaxStats | None = None):
    """Rescale columns into [0, 1].

    Without ``fit_stats`` the column min/max are fitted on ``matrix`` (the
    training path); with it, the given stats are applied and out-of-range
    values are clipped (the test path). Constant columns map to 0.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise UsageError("minmax_normalize expects a non-empty 2-D matrix")
    if fit_stats is None:
        stats = MinMaxStats(matrix.min(axis=0), matrix.max(axis=0))
    else:
        if fit_stats.mins.shape != (matrix.shape[1],):
            raise DimensionError(
                f"stats fitted for {fit_stats.mins.shape[0]} features, "
                f"matrix has {matrix.shape[1]}")
        stats = fit_stats
    span = stats.maxs - stats.mins
    safe_span = np.where(span > 0, span, 1.0)
    out = (matrix - stats.mins) / safe_span
    out[:, span == 0] = 0.0
    np.clip(out, 0.0, 1.0, out=out)
    return out, stats


# -- dataset container ------------------------------------------------------------


@dataclass
class Dataset:
    train: list
    val: list
    test: list
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list:
        if name not in ("train", "val", "test"):
            raise UsageError(f"unknown split {name!r}")
        return getattr(self, name)

    def dims(self) -> dict:
        probe = (self.train or self.val or self.test)[0]
        return {m: probe.features(m).shape[0] for m in MODALITIES}


def split_traits(samples) -> np.ndarray:
    return np.stack([s.traits.as_array() for s in samples])


def split_features(samples, modality: str) -> np.ndarray:
    return np.stack([s.features(modality) for s in samples])


# -- synthetic generator ------------------------------------------------------------


@dataclass
class SyntheticConfig:
    """Generator settings for the planted-factor multimodal dataset.

    Each modality's feature vector is a fixed random projection of the
    sample's trait vector, scaled by that modality's informativeness, plus
    Gaussian noise. Informativeness 0 yields pure noise.

    ``trait_correlation`` is the pairwise correlation of the latent trait
    draws (apparent-trait annotations are strongly halo-correlated);
    per-trait marginals stay Normal(trait_mean, trait_std) regardless.
    """

    n_samples: int = 600
    audio_dim: int = 16
    video_dim: int = 24
    text_dim: int = 12
    trait_mean: tuple = (0.5, 0.5, 0.5, 0.5, 0.5)
    trait_std: tuple = (0.15, 0.15, 0.15, 0.15, 0.15)
    trait_correlation: float = 0.6
    informativeness: dict = field(
        default_factory=lambda: {"audio": 0.75, "video": 1.0, "text": 0.6})
    noise: dict = field(
        default_factory=lambda: {"audio": 0.3, "video": 0.2, "text": 0.4})
    split: tuple = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        for name, dim in (("audio_dim", self.audio_dim),
                          ("video_dim", self.video_dim),
                          ("text_dim", self.text_dim)):
            if dim <= 0:
                raise ConfigError(f"{name} must be positive, got {dim}")
        if self.n_samples <= 0:
            raise ConfigError("n_samples must be positive")
        if len(self.trait_mean) != 5 or len(self.trait_std) != 5:
            raise ConfigError("trait_mean and trait_std need 5 entries")
        if abs(sum(self.split) - 1.0) > 1e-9 or len(self.split) != 3:
            raise ConfigError("split fractions must be 3 values summing to 1")
        # equicorrelation matrix is positive semi-definite only on [-1/4, 1]
        if not -0.25 <= self.trait_correlation <= 1.0:
            raise ConfigError("trait_correlation must lie in [-0.25, 1]")
        for m in MODALITIES:
            if m not in self.informativeness or m not in self.noise:
                raise ConfigError(f"informativeness/noise missing modality {m!r}")

    def dim(self, modality: str) -> int:
        return {"audio": self.audio_dim, "video": self.video_dim,
                "text": self.text_dim}[modality]

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "audio_dim": self.audio_dim,
            "video_dim": self.video_dim,
            "text_dim": self.text_dim,
            "trait_mean": list(self.trait_mean),
            "trait_std": list(self.trait_std),
            "trait_correlation": self.trait_correlation,
            "informativeness": dict(self.informativeness),
            "noise": dict(self.noise),
            "split": list(self.split),
            "seed": self.seed,
        }


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Draw a full train/val/test dataset; a pure function of the config."""
    rng = np.random.default_rng(config.seed)
    n = config.n_samples
    cov = np.full((5, 5), config.trait_correlation)
    np.fill_diagonal(cov, 1.0)
    # eigen square root: tolerates the singular corners (rho = 1 or -1/4)
    eigvals, eigvecs = np.linalg.eigh(cov)
    root = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))
    z = rng.normal(size=(n, 5)) @ root.T
    traits = np.asarray(config.trait_mean) + np.asarray(config.trait_std) * z
    np.clip(traits, 0.0, 1.0, out=traits)

    # one fixed projection per modality so the latent factors are recoverable
    projections = {m: rng.normal(0.0, 1.0, size=(5, config.dim(m)))
                   for m in MODALITIES}
    features = {}
    for m in MODALITIES:
        signal = config.informativeness[m] * (traits @ projections[m])
        noise = config.noise[m] * rng.normal(0.0, 1.0, size=(n, config.dim(m)))
        features[m] = signal + noise

    samples = [
        Sample(id=f"syn-{i:05d}",
               audio=features["audio"][i],
               video=features["video"][i],
               text=features["text"][i],
               traits=TraitVector.from_array(traits[i]))
        for i in range(n)
    ]
    n_train = int(round(config.split[0] * n))
    n_val = int(round(config.split[1] * n))
    meta = {"dims": {m: config.dim(m) for m in MODALITIES},
            "generator": config.to_dict()}
    return Dataset(train=samples[:n_train],
                   val=samples[n_train:n_train + n_val],
                   test=samples[n_train + n_val:],
                   meta=meta)


# -- file I/O -------------------------------------------------------------------

_SPLIT_FILES = {"train": "train.jsonl", "val": "val.jsonl", "test": "test.jsonl"}


def _sample_to_obj(sample: Sample) -> dict:
    return {
        "id": sample.id,
        "traits": {t: getattr(sample.traits, t) for t in TRAITS},
        "audio": sample.audio.tolist(),
        "video": sample.video.tolist(),
        "text": sample.text.tolist(),
    }


def _sample_from_obj(obj: dict, dims: dict | None, path: str, line_no: int) -> Sample:
    sample_id = obj.get("id")
    if not isinstance(sample_id, str) or not sample_id:
        raise DataError(f"{path}:{line_no}: sample missing string 'id'")
    traits_obj = obj.get("traits")
    if not isinstance(traits_obj, dict) or set(traits_obj) != set(TRAITS):
        raise DataError(f"sample {sample_id!r}: 'traits' must map exactly {TRAITS}")
    try:
        traits = TraitVector(**{t: float(traits_obj[t]) for t in TRAITS})
    except DataError as exc:
        raise DataError(f"sample {sample_id!r}: {exc}") from None
    vectors = {}
    for m in MODALITIES:
        block = obj.get(m)
        if not isinstance(block, list) or not block:
            raise DataError(f"sample {sample_id!r}: missing {m!r} feature block")
        vec = np.asarray(block, dtype=float)
        if vec.ndim != 1:
            raise DataError(f"sample {sample_id!r}: {m!r} block is not a flat vector")
        if dims is not None and vec.shape[0] != dims[m]:
            raise DataError(f"sample {sample_id!r}: {m} dim {vec.shape[0]} != "
                            f"expected {dims[m]}")
        vectors[m] = vec
    return Sample(id=sample_id, traits=traits, **vectors)


def save_dataset(dataset: Dataset, path) -> None:
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    for split, fname in _SPLIT_FILES.items():
        with open(out_dir / fname, "w") as fh:
            for sample in dataset.split(split):
                fh.write(json.dumps(_sample_to_obj(sample)) + "\n")
    meta = dict(dataset.meta)
    meta.setdefault("dims", dataset.dims())
    with open(out_dir / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path) -> Dataset:
    in_dir = Path(path)
    meta_path = in_dir / "meta.json"
    if not meta_path.exists():
        raise DataError(f"dataset directory {in_dir} has no meta.json")
    with open(meta_path) as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{meta_path}: invalid JSON: {exc}") from None
    dims = meta.get("dims")
    splits = {}
    for split, fname in _SPLIT_FILES.items():
        fpath = in_dir / fname
        if not fpath.exists():
            raise DataError(f"dataset directory {in_dir} is missing {fname}")
        samples = []
        with open(fpath) as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{fpath}:{line_no}: invalid JSON: {exc}") from None
                samples.append(_sample_from_obj(obj, dims, str(fpath), line_no))
        splits[split] = samples
    return Dataset(train=splits["train"], val=splits["val"], test=splits["test"],
                   meta=meta)
