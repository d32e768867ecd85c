"""Text/image embedding sets and the fusions that turn them into router features.

Two fusions are provided: an equal-weight average and the adaptive fusion
that reweights modalities per instance by a confidence score and adds
agreement (elementwise product) and mismatch (absolute difference) terms.
Unimodal ``text`` / ``image`` featurizations exist for modality studies.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MMRE"
VERSION = 1
NORM_TOL = 1e-6
FEATURE_MODES = ("equal", "adaptive", "text", "image")


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    text: np.ndarray
    image: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        t = np.asarray(self.text, dtype=np.float64)
        i = np.asarray(self.image, dtype=np.float64)
        if t.ndim != 2 or t.shape != i.shape:
            raise ValueError(f"text {t.shape} and image {i.shape} matrices must share n x d")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(i))):
            raise ValueError("embeddings must be finite")
        if self.normalized:
            for name, m in (("text", t), ("image", i)):
                r = np.linalg.norm(m, axis=1)
                bad = (r > 0) & (np.abs(r - 1) > NORM_TOL)
                if bad.any():
                    raise ValueError(
                        f"{name} row {int(np.flatnonzero(bad)[0])} has norm "
                        f"{r[bad][0]:.8f}, expected 1 for a normalized set")
        object.__setattr__(self, "text", t)
        object.__setattr__(self, "image", i)

    @property
    def n(self) -> int:
        return self.text.shape[0]

    @property
    def dim(self) -> int:
        return self.text.shape[1]

    @property
    def mask(self) -> np.ndarray:
        """n x 2 modality availability bits derived from nonzero rows."""
        return np.stack([np.any(self.text != 0, axis=1),
                         np.any(self.image != 0, axis=1)], axis=1).astype(int)

    def subset(self, rows) -> "EmbeddingSet":
        rows = np.asarray(rows, dtype=int)
        return EmbeddingSet(self.text[rows], self.image[rows], self.normalized)


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, r, out=np.zeros_like(x), where=r > 0)


def mask_modality(emb: EmbeddingSet, which: str) -> EmbeddingSet:
    """Copy of ``emb`` with every row of one modality replaced by zeros."""
    if which == "image":
        return EmbeddingSet(emb.text.copy(), np.zeros_like(emb.image), emb.normalized)
    if which == "text":
        return EmbeddingSet(np.zeros_like(emb.text), emb.image.copy(), emb.normalized)
    raise ValueError(f"unknown modality {which!r}")


# ---------------------------------------------------------------------------
# file formats


def write_embeddings(path, emb: EmbeddingSet) -> None:
    n, d = emb.text.shape
    with Path(path).open("wb") as fh:
        fh.write(MAGIC + struct.pack("<III", VERSION, n, d))
        fh.write(emb.text.astype("<f4").tobytes())
        fh.write(emb.image.astype("<f4").tobytes())


def _renorm_f32(m: np.ndarray) -> np.ndarray:
    # float32 storage perturbs norms by ~1e-7; restore exact unit rows
    return l2_normalize_rows(m)


def load_embeddings(path, expected_n: int | None = None, normalized: bool = True) -> EmbeddingSet:
    """Load the binary ``MMRE`` layout, or comma-separated text (2n lines:
    text rows then image rows)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == MAGIC:
        if len(raw) < 16:
            raise ValueError(f"{path}: truncated header")
        version, n, d = struct.unpack("<III", raw[4:16])
        if version != VERSION:
            raise ValueError(f"{path}: unsupported embedding file version {version}")
        need = 16 + 2 * n * d * 4
        if len(raw) != need:
            raise ValueError(f"{path}: expected {need} bytes for n={n}, d={d}, got {len(raw)}")
        body = np.frombuffer(raw, dtype="<f4", offset=16).astype(np.float64)
        text, image = body[: n * d].reshape(n, d), body[n * d:].reshape(n, d)
    else:
        rows = [line for line in raw.decode("utf-8").splitlines()
                if line.strip() and not line.lstrip().startswith("#")]
        if len(rows) % 2:
            raise ValueError(f"{path}: text layout needs an even number of rows (text then image)")
        mat = np.array([[float(x) for x in line.split(",")] for line in rows], dtype=np.float64)
        n = len(rows) // 2
        text, image = mat[:n], mat[n:]
    if expected_n is not None and text.shape[0] != expected_n:
        raise ValueError(f"{path}: {text.shape[0]} embedding rows but outcome table has {expected_n}")
    if normalized:
        text, image = _renorm_f32(text), _renorm_f32(image)
    return EmbeddingSet(text, image, normalized)


# ---------------------------------------------------------------------------
# fusion


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "adaptive"
    temperature: float = 5.0
    interaction_alpha: float = 0.5
    interaction_beta: float = 0.5

    def __post_init__(self):
        if self.mode not in FEATURE_MODES:
            raise ValueError(f"unknown fusion mode {self.mode!r}")
        if not self.temperature > 0:
            raise ValueError("fusion temperature must be positive")


@dataclass(frozen=True, eq=False)
class FusedFeatures:
    z: np.ndarray
    config: FusionConfig
    zero_rows: tuple[int, ...] = ()


@dataclass(frozen=True)
class ConfidenceStats:
    """Setwise statistics behind modality confidence, one entry per modality
    in (text, image) order.  Fit once on training data and reuse."""
    prototypes: tuple[np.ndarray, np.ndarray]
    norm_mean: tuple[float, float]
    norm_std: tuple[float, float]

    @classmethod
    def fit(cls, emb: EmbeddingSet) -> "ConfidenceStats":
        protos, means, stds = [], [], []
        for m in (emb.text, emb.image):
            r = np.linalg.norm(m, axis=1)
            protos.append(m.mean(axis=0))
            means.append(float(r.mean()))
            stds.append(float(r.std()))
        return cls(tuple(protos), tuple(means), tuple(stds))


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def _confidence_one(x, proto, r_mean, r_std):
    r = np.linalg.norm(x, axis=1)
    p_norm = np.linalg.norm(proto)
    cos = np.zeros(len(x))
    ok = (r > 0) & (p_norm > 0)
    cos[ok] = (x[ok] @ proto) / (r[ok] * p_norm)
    proto_score = np.where(ok, (cos + 1.0) / 2.0, 0.0)
    if r_std > NORM_TOL:
        norm_score = _sigmoid((r - r_mean) / r_std)
    else:
        # all training norms equal: rows at that norm score 0.5, others saturate
        gap = r - r_mean
        norm_score = np.where(np.abs(gap) <= NORM_TOL, 0.5, np.where(gap > 0, 1.0, 0.0))
    return np.clip(0.5 * proto_score + 0.5 * norm_score, 0.0, 1.0)


def modality_confidence(emb: EmbeddingSet, stats: ConfidenceStats | None = None) -> np.ndarray:
    """Per-instance ``(conf_text, conf_img)`` in [0,1], shape n x 2.

    Confidence averages a prototype score ((cos + 1) / 2 against the
    modality mean) and a sigmoid of the standardized embedding norm.  A
    zero row gets prototype score 0 and is scored at norm 0.  ``stats``
    defaults to statistics of ``emb`` itself.
    """
    if stats is None:
        if emb.n < 2:
            raise ValueError("confidence statistics need at least two instances")
        stats = ConfidenceStats.fit(emb)
    cols = [_confidence_one(m, stats.prototypes[k], stats.norm_mean[k], stats.norm_std[k])
            for k, m in enumerate((emb.text, emb.image))]
    return np.stack(cols, axis=1)


def softmax_weights(conf: np.ndarray, temperature: float) -> np.ndarray:
    logits = temperature * np.asarray(conf, dtype=np.float64)
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def _finish(z: np.ndarray, config: FusionConfig) -> FusedFeatures:
    zero = tuple(int(i) for i in np.flatnonzero(~np.any(z != 0, axis=1)))
    return FusedFeatures(l2_normalize_rows(z), config, zero)


def equal_fuse(emb: EmbeddingSet, config: FusionConfig | None = None) -> FusedFeatures:
    """Average text and image rows (missing modality = zero), then renormalize."""
    config = config or FusionConfig(mode="equal")
    return _finish(0.5 * (emb.text + emb.image), config)


def adaptive_fuse(emb: EmbeddingSet, conf: np.ndarray, config: FusionConfig) -> FusedFeatures:
    if config.mode != "adaptive":
        raise ValueError("adaptive_fuse requires an adaptive FusionConfig")
    conf = np.asarray(conf, dtype=np.float64)
    if conf.shape != (emb.n, 2):
        raise ValueError(f"confidence shape {conf.shape} does not match n={emb.n}")
    w = softmax_weights(conf, config.temperature)
    xt, xi = emb.text, emb.image
    z = (w[:, :1] * xt + w[:, 1:] * xi
         + config.interaction_alpha * (xt * xi)
         + config.interaction_beta * np.abs(xt - xi))
    return _finish(z, config)


def unimodal(emb: EmbeddingSet, which: str) -> FusedFeatures:
    m = emb.text if which == "text" else emb.image
    return _finish(m.copy(), FusionConfig(mode=which))


@dataclass
class Featurizer:
    """Turns an EmbeddingSet into router features, freezing any setwise
    statistics on the data passed to :meth:`fit`."""
    config: FusionConfig = field(default_factory=FusionConfig)
    stats: ConfidenceStats | None = None

    def fit(self, emb: EmbeddingSet) -> "Featurizer":
        if self.config.mode == "adaptive":
            self.stats = ConfidenceStats.fit(emb)
        return self

    def transform(self, emb: EmbeddingSet) -> FusedFeatures:
        mode = self.config.mode
        if mode == "equal":
            return equal_fuse(emb, self.config)
        if mode in ("text", "image"):
            return unimodal(emb, mode)
        if self.stats is None:
            raise RuntimeError("adaptive featurizer used before fit()")
        return adaptive_fuse(emb, modality_confidence(emb, self.stats), self.config)

    def fit_transform(self, emb: EmbeddingSet) -> FusedFeatures:
        return self.fit(emb).transform(emb)
