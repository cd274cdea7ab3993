"""Target classifiers, synthetic datasets, and hard-label query oracles.

The attack side of the package only ever talks to a model through a
:class:`HardLabelOracle`, which returns a single class index per query and
counts every query in a :class:`QueryLedger`.
"""

from __future__ import annotations

import json
import math
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np
import requests

from .errors import QueryFailure, TrainingFailure

DATASET_MAGIC = b"MIADS1\n"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    """Flat float32 feature vector in [0, 1] plus its (height, width, channels) shape."""

    data: np.ndarray
    shape: tuple[int, int, int]

    def __post_init__(self):
        h, w, c = (int(v) for v in self.shape)
        if min(h, w, c) < 1:
            raise ValueError(f"shape dims must all be >= 1, got {self.shape}")
        data = np.asarray(self.data, dtype=np.float32).reshape(-1).copy()
        if data.size != h * w * c:
            raise ValueError(f"data length {data.size} does not match shape {(h, w, c)}")
        if not np.all(np.isfinite(data)):
            raise ValueError("sample values must be finite")
        if float(data.min()) < 0.0 or float(data.max()) > 1.0:
            raise ValueError("sample values must lie in [0, 1]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "shape", (h, w, c))

    @property
    def dim(self) -> int:
        return int(self.data.size)

    def as_image(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    @classmethod
    def from_image(cls, image: np.ndarray) -> "Sample":
        arr = np.asarray(image)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"expected a (h, w) or (h, w, c) image, got ndim={arr.ndim}")
        return cls(arr.reshape(-1), tuple(int(s) for s in arr.shape))


@dataclass(frozen=True)
class LabeledSample:
    sample: Sample
    label: int


@dataclass
class Dataset:
    """Ordered collection of labeled samples sharing one shape."""

    samples: list[LabeledSample]
    n_classes: int
    role: str = "train"

    def __post_init__(self):
        if not self.samples:
            raise ValueError("dataset must be non-empty")
        if self.role not in ("train", "test", "aux"):
            raise ValueError(f"role must be train|test|aux, got {self.role!r}")
        shape = self.samples[0].sample.shape
        for i, ls in enumerate(self.samples):
            if ls.sample.shape != shape:
                raise ValueError(f"sample {i} shape {ls.sample.shape} != {shape}")
            if not 0 <= ls.label < self.n_classes:
                raise ValueError(f"sample {i} label {ls.label} outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.samples[0].sample.shape

    @property
    def dim(self) -> int:
        return self.samples[0].sample.dim

    def data_matrix(self) -> np.ndarray:
        return np.stack([ls.sample.data for ls in self.samples])

    def label_vector(self) -> np.ndarray:
        return np.array([ls.label for ls in self.samples], dtype=np.int64)


@dataclass(frozen=True)
class TrainConfig:
    """Adam training hyperparameters; `hidden` sets the MLP hidden-layer widths."""

    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-3
    hidden: tuple[int, ...] = (64,)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be >= 1")


@dataclass
class MlpModel:
    """Fully connected ReLU network; weights stored as float32 (out, in) matrices."""

    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("model needs at least input and output widths")
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count does not match widths")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.widths[i + 1], self.widths[i])
            if w.shape != expect:
                raise ValueError(f"layer {i} weight shape {w.shape} != {expect}")
            if b.shape != (self.widths[i + 1],):
                raise ValueError(f"layer {i} bias shape {b.shape} != {(self.widths[i + 1],)}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")

    @property
    def n_classes(self) -> int:
        return self.widths[-1]

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    def logits(self, x: np.ndarray) -> np.ndarray:
        a = np.asarray(x, dtype=np.float32)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w.T + b
            if i < last:
                a = np.maximum(a, 0.0)
        return a

    def weight_bytes(self) -> bytes:
        return b"".join(w.tobytes() for w in self.weights) + b"".join(b.tobytes() for b in self.biases)


# ---------------------------------------------------------------------------
# core operations
# ---------------------------------------------------------------------------


def softmax(logits) -> np.ndarray:
    """Overflow-safe softmax over the last axis (max subtraction, float64)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("softmax of empty input")
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input must be finite")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_vector(x) -> np.ndarray:
    if isinstance(x, Sample):
        return x.data
    return np.asarray(x, dtype=np.float32).reshape(-1)


def predict_label(model: MlpModel, x) -> int:
    """Hard label: index of the max logit, ties broken toward the lowest index."""
    vec = _as_vector(x)
    if vec.size != model.input_dim:
        raise ValueError(f"input dim {vec.size} != model input dim {model.input_dim}")
    return int(np.argmax(model.logits(vec)))


def train_mlp(train: Dataset, config: TrainConfig) -> MlpModel:
    """Train an MLP by mini-batch cross-entropy descent with Adam.

    Deterministic for a fixed (dataset, config, seed): weight init and the
    per-epoch shuffle come from one seeded generator. Raises
    :class:`TrainingFailure` with the epoch index if the loss goes non-finite.
    """
    X = train.data_matrix()
    Y = train.label_vector()
    n, dim = X.shape
    widths = [dim, *config.hidden, train.n_classes]
    rng = np.random.default_rng(config.seed)

    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(np.float32))
        biases.append(np.zeros(fan_out, dtype=np.float32))

    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]
    onehot = np.eye(train.n_classes, dtype=np.float32)[Y]
    step = 0

    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            acts = [X[idx]]
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is detected below
                for li, (w, b) in enumerate(zip(weights, biases)):
                    z = acts[-1] @ w.T + b
                    acts.append(np.maximum(z, 0.0) if li < len(weights) - 1 else z)
            if not np.all(np.isfinite(acts[-1])):
                raise TrainingFailure(f"loss became non-finite at epoch {epoch}", epoch=epoch)
            probs = softmax(acts[-1])
            picked = probs[np.arange(len(idx)), Y[idx]]
            loss = -float(np.mean(np.log(np.maximum(picked, 1e-300))))
            if not math.isfinite(loss):
                raise TrainingFailure(f"loss became non-finite at epoch {epoch}", epoch=epoch)

            grad = (probs - onehot[idx]).astype(np.float32) / len(idx)
            step += 1
            bc1 = 1.0 - ADAM_BETA1**step
            bc2 = 1.0 - ADAM_BETA2**step
            for li in range(len(weights) - 1, -1, -1):
                g_w = grad.T @ acts[li]
                g_b = grad.sum(axis=0)
                if li > 0:
                    grad = (grad @ weights[li]) * (acts[li] > 0)
                for g, p, m, v in ((g_w, weights[li], m_w[li], v_w[li]), (g_b, biases[li], m_b[li], v_b[li])):
                    m += (1.0 - ADAM_BETA1) * (g - m)
                    v += (1.0 - ADAM_BETA2) * (g * g - v)
                    p -= config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)

    return MlpModel(widths=widths, weights=weights, biases=biases)


def accuracy(model: MlpModel, dataset: Dataset) -> float:
    preds = np.argmax(model.logits(dataset.data_matrix()), axis=1)
    return float(np.mean(preds == dataset.label_vector()))


def make_synthetic_dataset(
    n_classes: int,
    n_per_class: int,
    shape: tuple[int, int, int],
    spread: float,
    seed: int,
    role: str = "train",
    smooth_centers: bool = False,
) -> Dataset:
    """Gaussian class clusters clamped to [0, 1], grouped by class.

    Class centers are drawn once from the seed. With ``smooth_centers`` each
    center is a spatial Gaussian bump (position, width, and amplitude drawn
    per class), so one-pixel translations of a sample stay close in L2;
    otherwise centers are iid uniform per component.
    """
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    if not spread > 0:
        raise ValueError("cluster spread must be > 0")
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    h, w, c = (int(v) for v in shape)
    dim = h * w * c
    rng = np.random.default_rng(seed)

    if smooth_centers:
        centers = np.empty((n_classes, dim))
        yy, xx = np.mgrid[0:h, 0:w]
        for k in range(n_classes):
            cy = rng.uniform(0, h - 1)
            cx = rng.uniform(0, w - 1)
            sigma = rng.uniform(0.8, 1.8)
            amp = rng.uniform(0.5, 0.9)
            base = rng.uniform(0.05, 0.2)
            bump = base + amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
            centers[k] = np.repeat(bump[:, :, None], c, axis=2).reshape(-1)
    else:
        centers = rng.uniform(0.2, 0.8, size=(n_classes, dim))

    samples = []
    for k in range(n_classes):
        vecs = np.clip(centers[k] + spread * rng.standard_normal((n_per_class, dim)), 0.0, 1.0)
        for row in vecs:
            samples.append(LabeledSample(Sample(row, (h, w, c)), k))
    return Dataset(samples=samples, n_classes=n_classes, role=role)


def split_dataset(dataset: Dataset, per_class_counts: dict[str, int]) -> dict[str, Dataset]:
    """Split into role-tagged datasets, taking per-class slices in role order."""
    by_class: dict[int, list[LabeledSample]] = {}
    for ls in dataset.samples:
        by_class.setdefault(ls.label, []).append(ls)
    need = sum(per_class_counts.values())
    for k, group in by_class.items():
        if len(group) < need:
            raise ValueError(f"class {k} has {len(group)} samples, need {need} for the split")
    out = {}
    offset = 0
    for role, count in per_class_counts.items():
        chosen = []
        for k in sorted(by_class):
            chosen.extend(by_class[k][offset : offset + count])
        out[role] = Dataset(samples=chosen, n_classes=dataset.n_classes, role=role)
        offset += count
    return out


# ---------------------------------------------------------------------------
# query accounting and oracles
# ---------------------------------------------------------------------------


class QueryLedger:
    """Monotone, thread-safe query counter with per-phase breakdown."""

    def __init__(self):
        self._lock = threading.Lock()
        self._phases: dict[str, int] = {}
        self._total = 0

    @property
    def total(self) -> int:
        with self._lock:
            return self._total

    def phases(self) -> dict[str, int]:
        with self._lock:
            return dict(self._phases)

    def phase_total(self, phase: str) -> int:
        with self._lock:
            return self._phases.get(phase, 0)

    def count(self, phase: str, n: int = 1) -> None:
        if n < 1:
            raise ValueError("query count increment must be >= 1")
        with self._lock:
            self._total += n
            self._phases[phase] = self._phases.get(phase, 0) + n

    def merge(self, other: "QueryLedger") -> None:
        snapshot = other.phases()
        with self._lock:
            for phase, n in snapshot.items():
                self._total += n
                self._phases[phase] = self._phases.get(phase, 0) + n


class HardLabelOracle:
    """Query channel to a target model: one hard label per query, all queries counted.

    Implementations override :meth:`_label_batch`. Inputs are cast to float32
    before evaluation, so decisions match the stored :class:`Sample` precision.
    """

    def __init__(self, ledger: QueryLedger | None = None):
        self.ledger = ledger if ledger is not None else QueryLedger()

    def _label_batch(self, x2d: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def query(self, x, phase: str = "query") -> int:
        vec = _as_vector(x)
        self.ledger.count(phase)
        return int(self._label_batch(vec[None, :])[0])

    def query_batch(self, xs, phase: str = "query") -> np.ndarray:
        mat = np.asarray(xs, dtype=np.float32)
        if mat.ndim != 2:
            raise ValueError("query_batch expects a 2-D array of row vectors")
        self.ledger.count(phase, len(mat))
        return self._label_batch(mat)


class ModelOracle(HardLabelOracle):
    """In-process oracle over an MlpModel (argmax of the logits)."""

    def __init__(self, model: MlpModel, ledger: QueryLedger | None = None):
        super().__init__(ledger)
        self.model = model

    def _label_batch(self, x2d: np.ndarray) -> np.ndarray:
        return np.argmax(self.model.logits(x2d), axis=1)


class LinearOracle(HardLabelOracle):
    """Analytic linear classifier: argmax of W x + b."""

    def __init__(self, weights, bias, ledger: QueryLedger | None = None):
        super().__init__(ledger)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)

    def _label_batch(self, x2d: np.ndarray) -> np.ndarray:
        return np.argmax(x2d.astype(np.float64) @ self.weights.T + self.bias, axis=1)


def half_plane_oracle(normal, offset: float = 0.0, ledger: QueryLedger | None = None) -> LinearOracle:
    """Two-class oracle: class 1 iff normal . x + offset > 0 (ties go to class 0)."""
    normal = np.asarray(normal, dtype=np.float64)
    weights = np.stack([np.zeros_like(normal), normal])
    return LinearOracle(weights, np.array([0.0, offset]), ledger)


class NearestCentroidOracle(HardLabelOracle):
    """Analytic classifier: label of the nearest centroid (ties to the lowest index)."""

    def __init__(self, centroids, ledger: QueryLedger | None = None):
        super().__init__(ledger)
        self.centroids = np.asarray(centroids, dtype=np.float64)

    def _label_batch(self, x2d: np.ndarray) -> np.ndarray:
        x = x2d.astype(np.float64)
        d2 = ((x[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)


class RemoteOracle(HardLabelOracle):
    """Client for the HTTP prediction endpoint.

    POSTs ``{"x": [floats]}`` to the URL and expects ``{"label": int}``.
    Transport errors and non-200 responses are retried with doubling backoff;
    after ``retries`` attempts a :class:`QueryFailure` is raised.
    """

    def __init__(
        self,
        url: str,
        ledger: QueryLedger | None = None,
        retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 10.0,
    ):
        super().__init__(ledger)
        self.url = url
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout

    def _post_one(self, vec: np.ndarray) -> int:
        delay = self.backoff
        for attempt in range(1, self.retries + 1):
            try:
                resp = requests.post(self.url, json={"x": [float(v) for v in vec]}, timeout=self.timeout)
                if resp.status_code == 200:
                    return int(resp.json()["label"])
            except (requests.RequestException, ValueError, KeyError, TypeError):
                pass
            if attempt < self.retries:
                time.sleep(delay)
                delay *= 2
        raise QueryFailure(f"remote oracle at {self.url} failed after {self.retries} attempts", attempts=self.retries)

    def _label_batch(self, x2d: np.ndarray) -> np.ndarray:
        return np.array([self._post_one(row) for row in x2d], dtype=np.int64)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_dataset(dataset: Dataset, path) -> None:
    """Write the binary dataset format (magic, u32 header, f32 data, u32 labels)."""
    h, w, c = dataset.shape
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<5I", len(dataset), h, w, c, dataset.n_classes))
        f.write(np.ascontiguousarray(dataset.data_matrix(), dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(dataset.label_vector(), dtype="<u4").tobytes())


def load_dataset(path, role: str = "train") -> Dataset:
    with open(path, "rb") as f:
        magic = f.read(len(DATASET_MAGIC))
        if magic != DATASET_MAGIC:
            raise ValueError(f"{path}: not a MIADS1 dataset file")
        n, h, w, c, n_classes = struct.unpack("<5I", f.read(20))
        dim = h * w * c
        data = np.frombuffer(f.read(4 * n * dim), dtype="<f4").reshape(n, dim)
        labels = np.frombuffer(f.read(4 * n), dtype="<u4")
    samples = [LabeledSample(Sample(data[i], (h, w, c)), int(labels[i])) for i in range(n)]
    return Dataset(samples=samples, n_classes=int(n_classes), role=role)


def model_to_dict(model: MlpModel) -> dict:
    return {
        "widths": [int(v) for v in model.widths],
        "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in zip(model.weights, model.biases)],
    }


def model_from_dict(doc: dict) -> MlpModel:
    widths = [int(v) for v in doc["widths"]]
    weights = [np.asarray(layer["w"], dtype=np.float32) for layer in doc["layers"]]
    biases = [np.asarray(layer["b"], dtype=np.float32) for layer in doc["layers"]]
    return MlpModel(widths=widths, weights=weights, biases=biases)


def save_model(model: MlpModel, path) -> None:
    with open(path, "w") as f:
        json.dump(model_to_dict(model), f)


def load_model(path) -> MlpModel:
    with open(path) as f:
        return model_from_dict(json.load(f))
