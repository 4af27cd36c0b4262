"""Bidirectional LSTM segment classifier written directly in numpy.

Architecture: two bidirectional LSTM layers, a tanh feed-forward layer fed
with the final forward and final backward states of the second layer, and a
single sigmoid output. Gradients are obtained by backpropagation through
time; training uses Adam on the mean binary cross-entropy of minibatches of
fixed-width segments.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

log = logging.getLogger(__name__)

SEGMENT_FRAMES = 51
SEGMENT_STRIDE = 10
PROB_EPS = 1e-7

CHECKPOINT_MAGIC = b"RVKM"
CHECKPOINT_VERSION = 1


# -- segmentation -------------------------------------------------------------


def segment_starts(n_frames: int, window: int = SEGMENT_FRAMES, stride: int = SEGMENT_STRIDE) -> np.ndarray:
    if n_frames <= 0:
        raise ValueError("feature matrix has no frames")
    if n_frames < window:
        return np.zeros(1, dtype=np.int64)
    return np.arange(0, n_frames - window + 1, stride, dtype=np.int64)


def _window(fm: np.ndarray, start: int, window: int) -> np.ndarray:
    n = fm.shape[1]
    if n < window:
        # short files are padded by repeating their frames cyclically
        return fm[:, np.arange(window) % n]
    return fm[:, start : start + window]


def segment_file(fm: np.ndarray, window: int = SEGMENT_FRAMES, stride: int = SEGMENT_STRIDE) -> np.ndarray:
    """Cut a (features x frames) matrix into an array of shape (n_segments, features, window)."""
    fm = np.asarray(fm)
    if fm.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    return np.stack([_window(fm, s, window) for s in segment_starts(fm.shape[1], window, stride)])


@dataclass
class SegmentSet:
    """Segments of many files, materialised lazily by :meth:`frames`.

    ``files[k]`` is a feature matrix; row ``i`` of ``index`` is
    ``(file number, start frame)`` and ``labels[i]`` its label.
    """

    files: list[np.ndarray]
    index: np.ndarray
    labels: np.ndarray
    file_ids: list[str] = field(default_factory=list)
    window: int = SEGMENT_FRAMES

    @classmethod
    def from_files(
        cls,
        files: Sequence[np.ndarray],
        labels: Sequence[int],
        file_ids: Sequence[str] | None = None,
        window: int = SEGMENT_FRAMES,
        stride: int = SEGMENT_STRIDE,
    ) -> "SegmentSet":
        rows, seg_labels = [], []
        for k, (fm, y) in enumerate(zip(files, labels)):
            for s in segment_starts(fm.shape[1], window, stride):
                rows.append((k, s))
                seg_labels.append(y)
        index = np.asarray(rows, dtype=np.int64).reshape(-1, 2)
        return cls(list(files), index, np.asarray(seg_labels, dtype=np.int64), list(file_ids or []), window)

    def __len__(self) -> int:
        return len(self.labels)

    def frames(self, rows: Sequence[int] | np.ndarray) -> np.ndarray:
        return np.stack([_window(self.files[self.index[i, 0]], self.index[i, 1], self.window) for i in rows])


def oversample(labels: Sequence[int], seed) -> np.ndarray:
    """Indices of a class-balanced, shuffled epoch.

    Every original index appears at least once; the minority class is topped
    up by sampling with replacement until both classes have equal counts.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) != 2:
        raise ValueError(f"oversampling needs exactly two classes, found {classes.tolist()}")
    rng = np.random.default_rng(seed)
    groups = [np.flatnonzero(labels == c) for c in classes]
    target = max(len(g) for g in groups)
    parts = []
    for g in groups:
        parts.append(g)
        if len(g) < target:
            parts.append(rng.choice(g, target - len(g), replace=True))
    idx = np.concatenate(parts)
    return idx[rng.permutation(len(idx))]


# -- model --------------------------------------------------------------------

_LSTM_NAMES = ("l1f", "l1b", "l2f", "l2b")


class BlstmModel:
    """Parameters of the BLSTM classifier plus forward and backward passes.

    LSTM weights are stored as one ``(inputs + hidden, 4 * hidden)`` matrix
    per direction with gate blocks ordered input, forget, output, candidate.
    """

    def __init__(self, params: dict[str, np.ndarray], input_size: int, hidden1: int, hidden2: int, ff_size: int):
        self.params = params
        self.input_size = input_size
        self.hidden1 = hidden1
        self.hidden2 = hidden2
        self.ff_size = ff_size

    # construction ---------------------------------------------------------

    @classmethod
    def shapes(cls, input_size: int, hidden1: int, hidden2: int, ff_size: int) -> dict[str, tuple[int, ...]]:
        return {
            "l1f_W": (input_size + hidden1, 4 * hidden1),
            "l1f_b": (4 * hidden1,),
            "l1b_W": (input_size + hidden1, 4 * hidden1),
            "l1b_b": (4 * hidden1,),
            "l2f_W": (2 * hidden1 + hidden2, 4 * hidden2),
            "l2f_b": (4 * hidden2,),
            "l2b_W": (2 * hidden1 + hidden2, 4 * hidden2),
            "l2b_b": (4 * hidden2,),
            "ff_W": (2 * hidden2, ff_size),
            "ff_b": (ff_size,),
            "out_W": (ff_size,),
            "out_b": (1,),
        }

    @classmethod
    def init(
        cls,
        input_size: int = 192,
        hidden1: int = 128,
        hidden2: int | None = None,
        ff_size: int = 64,
        seed=0,
        dtype=np.float32,
    ) -> "BlstmModel":
        """Uniform(+-1/sqrt(fan_in)) weights, zero biases except forget gates at +1."""
        hidden2 = hidden1 if hidden2 is None else hidden2
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in cls.shapes(input_size, hidden1, hidden2, ff_size).items():
            if name.endswith("_W"):
                bound = 1.0 / math.sqrt(shape[0])
                params[name] = rng.uniform(-bound, bound, size=shape)
            else:
                b = np.zeros(shape)
                if name[:3] in _LSTM_NAMES:
                    h = shape[0] // 4
                    b[h : 2 * h] = 1.0
                params[name] = b
        return cls({k: v.astype(dtype) for k, v in params.items()}, input_size, hidden1, hidden2, ff_size)

    @classmethod
    def zeros(cls, input_size: int, hidden1: int, hidden2: int, ff_size: int, dtype=np.float64) -> "BlstmModel":
        shapes = cls.shapes(input_size, hidden1, hidden2, ff_size)
        return cls({k: np.zeros(s, dtype=dtype) for k, s in shapes.items()}, input_size, hidden1, hidden2, ff_size)

    def copy(self) -> "BlstmModel":
        return BlstmModel({k: v.copy() for k, v in self.params.items()}, *self.architecture)

    def astype(self, dtype) -> "BlstmModel":
        return BlstmModel({k: v.astype(dtype) for k, v in self.params.items()}, *self.architecture)

    @property
    def architecture(self) -> tuple[int, int, int, int]:
        return (self.input_size, self.hidden1, self.hidden2, self.ff_size)

    @property
    def dtype(self):
        return self.params["out_W"].dtype

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())

    # forward --------------------------------------------------------------

    def _prepare(self, segments) -> np.ndarray:
        x = np.asarray(segments, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1] != self.input_size:
            raise ValueError(f"expected (batch, {self.input_size}, frames) input, got {x.shape}")
        # (batch, features, time) -> (time, batch, features)
        return np.ascontiguousarray(x.transpose(2, 0, 1))

    def _forward(self, xs: np.ndarray):
        p = self.params
        out1f, c1f = _lstm_forward(p["l1f_W"], p["l1f_b"], xs)
        out1b, c1b = _lstm_forward(p["l1b_W"], p["l1b_b"], xs[::-1])
        h1 = np.concatenate([out1f, out1b[::-1]], axis=2)
        out2f, c2f = _lstm_forward(p["l2f_W"], p["l2f_b"], h1)
        out2b, c2b = _lstm_forward(p["l2b_W"], p["l2b_b"], h1[::-1])
        readout = np.concatenate([out2f[-1], out2b[-1]], axis=1)
        hidden = np.tanh(readout @ p["ff_W"] + p["ff_b"])
        logits = hidden @ p["out_W"] + p["out_b"][0]
        cache = (xs, h1, (c1f, c1b, c2f, c2b), readout, hidden)
        return logits, cache

    def predict(self, segments) -> np.ndarray:
        """Probabilities for a batch shaped (batch, features, frames), or a single segment."""
        if not self.is_finite():
            raise ValueError("model parameters contain NaN or infinity")
        logits, _ = self._forward(self._prepare(segments))
        return np.clip(expit(logits), PROB_EPS, 1 - PROB_EPS)

    def forward(self, segment) -> float:
        return float(self.predict(segment)[0])

    # backward -------------------------------------------------------------

    def loss_and_grads(self, segments, labels) -> tuple[float, dict[str, np.ndarray]]:
        """Mean BCE over the batch and its gradient for every parameter."""
        xs = self._prepare(segments)
        y = np.asarray(labels, dtype=np.float64).reshape(-1)
        if len(y) != xs.shape[1] or len(y) == 0:
            raise ValueError("labels must match a non-empty batch")
        logits, (xs, h1, (c1f, c1b, c2f, c2b), readout, hidden) = self._forward(xs)
        prob = expit(logits.astype(np.float64))
        clipped = np.clip(prob, PROB_EPS, 1 - PROB_EPS)
        batch = len(y)
        loss = float(-np.mean(y * np.log(clipped) + (1 - y) * np.log(1 - clipped)))

        inside = (prob > PROB_EPS) & (prob < 1 - PROB_EPS)
        dlogit = (np.where(inside, prob - y, 0.0) / batch).astype(self.dtype)

        p = self.params
        g = {}
        g["out_W"] = hidden.T @ dlogit
        g["out_b"] = np.array([dlogit.sum()], dtype=self.dtype)
        dpre = np.outer(dlogit, p["out_W"]) * (1 - hidden**2)
        g["ff_W"] = readout.T @ dpre
        g["ff_b"] = dpre.sum(axis=0)
        dread = dpre @ p["ff_W"].T

        T, B = xs.shape[:2]
        H2 = self.hidden2
        dout2f = np.zeros((T, B, H2), dtype=self.dtype)
        dout2f[-1] = dread[:, :H2]
        dout2b = np.zeros((T, B, H2), dtype=self.dtype)
        dout2b[-1] = dread[:, H2:]
        dh1_f, g["l2f_W"], g["l2f_b"] = _lstm_backward(p["l2f_W"], c2f, dout2f)
        dh1_b, g["l2b_W"], g["l2b_b"] = _lstm_backward(p["l2b_W"], c2b, dout2b)
        dh1 = dh1_f + dh1_b[::-1]

        H1 = self.hidden1
        _, g["l1f_W"], g["l1f_b"] = _lstm_backward(p["l1f_W"], c1f, dh1[:, :, :H1], need_dx=False)
        _, g["l1b_W"], g["l1b_b"] = _lstm_backward(p["l1b_W"], c1b, dh1[::-1, :, H1:], need_dx=False)
        return loss, {k: g[k] for k in p}


def _lstm_forward(W: np.ndarray, b: np.ndarray, xs: np.ndarray):
    """One direction over time-major ``xs`` of shape (T, B, D)."""
    T, B, D = xs.shape
    H = b.shape[0] // 4
    Wx, Wh = W[:D], W[D:]
    zx = xs.reshape(T * B, D) @ Wx
    zx = zx.reshape(T, B, 4 * H) + b
    dtype = xs.dtype
    hs = np.empty((T + 1, B, H), dtype=dtype)
    cs = np.empty((T + 1, B, H), dtype=dtype)
    gates = np.empty((T, B, 4 * H), dtype=dtype)
    tcs = np.empty((T, B, H), dtype=dtype)
    hs[0] = 0
    cs[0] = 0
    for t in range(T):
        z = zx[t] + hs[t] @ Wh
        a = gates[t]
        a[:, : 3 * H] = expit(z[:, : 3 * H])
        a[:, 3 * H :] = np.tanh(z[:, 3 * H :])
        i, f, o, gg = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        cs[t + 1] = f * cs[t] + i * gg
        tcs[t] = np.tanh(cs[t + 1])
        hs[t + 1] = o * tcs[t]
    return hs[1:], (xs, hs, cs, gates, tcs)


def _lstm_backward(W: np.ndarray, cache, dhs: np.ndarray, need_dx: bool = True):
    xs, hs, cs, gates, tcs = cache
    T, B, D = xs.shape
    H = gates.shape[2] // 4
    Wx, Wh = W[:D], W[D:]
    dz_all = np.empty_like(gates)
    dh_next = np.zeros((B, H), dtype=gates.dtype)
    dc_next = np.zeros((B, H), dtype=gates.dtype)
    for t in range(T - 1, -1, -1):
        a = gates[t]
        i, f, o, gg = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        dh = dhs[t] + dh_next
        dc = dh * o * (1 - tcs[t] ** 2) + dc_next
        dz = dz_all[t]
        dz[:, :H] = dc * gg * i * (1 - i)
        dz[:, H : 2 * H] = dc * cs[t] * f * (1 - f)
        dz[:, 2 * H : 3 * H] = dh * tcs[t] * o * (1 - o)
        dz[:, 3 * H :] = dc * i * (1 - gg**2)
        dc_next = dc * f
        dh_next = dz @ Wh.T
    flat = dz_all.reshape(T * B, 4 * H)
    dW = np.empty_like(W)
    dW[:D] = xs.reshape(T * B, D).T @ flat
    dW[D:] = hs[:-1].reshape(T * B, H).T @ flat
    db = flat.sum(axis=0)
    dx = (flat @ Wx.T).reshape(T, B, D) if need_dx else None
    return dx, dW, db


# -- training -------------------------------------------------------------------


@dataclass
class TrainConfig:
    seed: int = 0
    learning_rate: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden_size: int = 128
    ff_size: int = 64
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "max_epochs", "patience", "hidden_size", "ff_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params[k] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(params[k].dtype)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, model: BlstmModel, history: list[dict]):
        super().__init__(message)
        self.model = model
        self.history = history


def train(
    model: BlstmModel,
    train_set: SegmentSet,
    val_files: Sequence[tuple[np.ndarray, int]],
    config: TrainConfig,
) -> tuple[BlstmModel, list[dict]]:
    """Train in place and return the best-validation-AUC copy and the epoch log.

    Each epoch draws a fresh class-balanced order, runs Adam over minibatches
    and scores every validation file (mean segment probability). Training
    stops after ``patience`` epochs without a validation AUC improvement.
    When the validation set has a single class, the lowest training loss
    picks the checkpoint instead.
    """
    from .evaluation import roc_auc, score_file

    if len(val_files) == 0:
        raise ValueError("validation set is empty")
    val_labels = np.array([y for _, y in val_files])
    use_auc = len(np.unique(val_labels)) == 2
    opt = Adam(model.params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)

    history: list[dict] = []
    best = model.copy()
    best_key = -math.inf
    stale = 0
    for epoch in range(config.max_epochs):
        order = oversample(train_set.labels, [config.seed, epoch])
        last_good = model.copy()
        losses = []
        for start in range(0, len(order), config.batch_size):
            rows = order[start : start + config.batch_size]
            loss, grads = model.loss_and_grads(train_set.frames(rows), train_set.labels[rows])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch}", last_good, history)
            opt.step(model.params, grads)
            losses.append(loss)
        if not model.is_finite():
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}", last_good, history)

        entry = {"epoch": epoch, "loss": float(np.mean(losses))}
        if use_auc:
            scores = [score_file(model, fm).probability for fm, _ in val_files]
            entry["val_auc"] = roc_auc(scores, val_labels).auc
            key = entry["val_auc"]
        else:
            key = -entry["loss"]
        history.append(entry)
        log.debug("epoch %d: %s", epoch, entry)

        if key > best_key:
            best_key, best, stale = key, model.copy(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best, history


# -- checkpoints ------------------------------------------------------------------


def save_checkpoint(model: BlstmModel, path: str | Path, config: TrainConfig | None = None, history: Iterable[dict] | None = None) -> None:
    """Binary parameter file plus a JSON sidecar (``<path>.json``).

    Parameters are stored as little-endian float32 in declared order.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arch = model.architecture
    tmp = path.with_suffix(path.suffix + ".part")
    with tmp.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(arch)))
        fh.write(struct.pack(f"<{len(arch)}I", *arch))
        for name in BlstmModel.shapes(*arch):
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f4").tobytes())
    sidecar = {
        "architecture": dict(zip(("input_size", "hidden1", "hidden2", "ff_size"), arch)),
        "config": asdict(config) if config is not None else None,
        "history": list(history) if history is not None else [],
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> BlstmModel:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    version, ndesc = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    arch = struct.unpack_from(f"<{ndesc}I", raw, 12)
    offset = 12 + 4 * ndesc
    params = {}
    for name, shape in BlstmModel.shapes(*arch).items():
        count = int(np.prod(shape))
        params[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float32)
        offset += 4 * count
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return BlstmModel(params, *arch)


def read_checkpoint_sidecar(path: str | Path) -> dict:
    return json.loads(Path(str(path) + ".json").read_text())


def checkpoint_complete(path: str | Path) -> bool:
    path = Path(path)
    return path.is_file() and Path(str(path) + ".json").is_file()

