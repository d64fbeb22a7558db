"""One-hidden-layer feed-forward classifier trained with minibatch SGD.

The hidden activation is either the exact sigmoid or the affine surrogate
0.238 z + 0.5, which is what makes encrypted inference possible. Training
uses softmax + cross-entropy; encrypted inference stops at the logits.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .encinfer import ACT_INTERCEPT, ACT_SLOPE, QuantizedModel
from .fixedpoint import DEFAULT_FRAC_BITS

log = logging.getLogger(__name__)

SIGMOID = "sigmoid"
LINEAR_APPROX = "linear_approx"
ACTIVATION_MODES = (SIGMOID, LINEAR_APPROX)

# activation is only fitted on [-1, 1]
APPROX_INTERVAL = 1.0
# max |0.238 z + 0.5 - sigmoid(z)| on [-1, 1] is 0.00694
APPROX_MAX_ERROR = 0.007


class TrainingDivergedError(RuntimeError):
    pass


class ExcursionCounter:
    """Counts pre-activations outside the interval the surrogate was fitted on.

    Logs at most once per power of ten so long runs do not flood the log.
    """

    def __init__(self):
        self.count = 0
        self._next_report = 1

    def add(self, n: int) -> None:
        if n <= 0:
            return
        self.count += n
        if self.count >= self._next_report:
            log.warning("linear activation evaluated outside [-1, 1] %d times so far", self.count)
            while self._next_report <= self.count:
                self._next_report *= 10

    def reset(self) -> None:
        self.count = 0
        self._next_report = 1


excursions = ExcursionCounter()


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def approx_activation(z, counter: ExcursionCounter | None = excursions):
    z = np.asarray(z, dtype=float)
    if counter is not None:
        counter.add(int(np.count_nonzero(np.abs(z) > APPROX_INTERVAL)))
    out = ACT_SLOPE * z + ACT_INTERCEPT
    return out if out.ndim else float(out)


def softmax(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, onehot) -> float:
    """Mean over the batch of -sum_k t_k log y_k."""
    probs = np.atleast_2d(probs)
    onehot = np.atleast_2d(onehot)
    return float(-np.sum(onehot * np.log(np.clip(probs, 1e-300, None))) / probs.shape[0])


def one_hot(labels, n_classes: int) -> np.ndarray:
    """Labels are 1-based."""
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels - 1] = 1.0
    return out


@dataclass
class NetworkModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    activation_mode: str = LINEAR_APPROX
    frac_bits: int = DEFAULT_FRAC_BITS

    def __post_init__(self):
        self.W1, self.b1, self.W2, self.b2 = (
            np.array(a, dtype=float) for a in (self.W1, self.b1, self.W2, self.b2))
        if self.activation_mode not in ACTIVATION_MODES:
            raise ValueError(f"activation_mode must be one of {ACTIVATION_MODES}")
        n_i, n_d = self.W1.shape
        if self.b1.shape != (n_d,) or self.W2.shape[0] != n_d or self.b2.shape != (self.W2.shape[1],):
            raise ValueError("inconsistent layer dimensions")
        if not all(np.all(np.isfinite(a)) for a in (self.W1, self.b1, self.W2, self.b2)):
            raise ValueError("weights must be finite")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W1.shape[0], self.W1.shape[1], self.W2.shape[1]

    def copy(self, **changes) -> "NetworkModel":
        arrays = {k: getattr(self, k).copy() for k in ("W1", "b1", "W2", "b2")}
        arrays.update(changes)
        return replace(self, **arrays)

    def activate(self, h):
        if self.activation_mode == SIGMOID:
            return sigmoid(h)
        return approx_activation(h)

    def forward(self, x):
        """Return (logits, class probabilities) for one sample or a batch."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.W1.shape[0]:
            raise ValueError(f"expected {self.W1.shape[0]} features, got {x.shape[-1]}")
        a = self.activate(x @ self.W1 + self.b1)
        logits = a @ self.W2 + self.b2
        return logits, softmax(logits)

    def predict(self, X) -> np.ndarray:
        """1-based class labels; ties resolve to the lowest class."""
        logits, _ = self.forward(X)
        return np.argmax(np.atleast_2d(logits), axis=1) + 1

    def loss_and_grads(self, X, T) -> tuple[float, dict[str, np.ndarray]]:
        """Mean cross-entropy over the batch and its gradient w.r.t. every parameter."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        T = np.atleast_2d(T)
        B = X.shape[0]
        H = X @ self.W1 + self.b1
        if self.activation_mode == SIGMOID:
            A = sigmoid(H)
            dA_dH = A * (1.0 - A)
        else:
            A = approx_activation(H)
            dA_dH = ACT_SLOPE
        P = softmax(A @ self.W2 + self.b2)
        loss = cross_entropy(P, T)
        dZ = (P - T) / B
        dH = (dZ @ self.W2.T) * dA_dH
        grads = {"W1": X.T @ dH, "b1": dH.sum(axis=0), "W2": A.T @ dZ, "b2": dZ.sum(axis=0)}
        return loss, grads

    def sgd_step(self, grads: dict[str, np.ndarray], eta: float) -> None:
        for k, g in grads.items():
            getattr(self, k)[...] -= eta * g

    def export(self, frac_bits: int | None = None) -> QuantizedModel:
        return export_model(self, self.frac_bits if frac_bits is None else frac_bits)

    def to_dict(self) -> dict:
        def dec(a):
            return [repr(float(v)) for v in a] if a.ndim == 1 else [dec(r) for r in a]

        return {"dims": list(self.dims), "activation_mode": self.activation_mode,
                "frac_bits": self.frac_bits,
                "W1": dec(self.W1), "b1": dec(self.b1), "W2": dec(self.W2), "b2": dec(self.b2)}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkModel":
        def arr(v):
            return np.array(v, dtype=float)

        model = cls(arr(d["W1"]), arr(d["b1"]), arr(d["W2"]), arr(d["b2"]),
                    d["activation_mode"], int(d["frac_bits"]))
        if list(model.dims) != list(d["dims"]):
            raise ValueError("dims field does not match weight shapes")
        return model


def init_model(n_i: int, n_d: int, n_o: int, activation_mode: str = LINEAR_APPROX,
               seed: int = 0, frac_bits: int = DEFAULT_FRAC_BITS) -> NetworkModel:
    """Weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    W1 = rng.uniform(-1, 1, (n_i, n_d)) / math.sqrt(n_i)
    W2 = rng.uniform(-1, 1, (n_d, n_o)) / math.sqrt(n_d)
    return NetworkModel(W1, np.zeros(n_d), W2, np.zeros(n_o), activation_mode, frac_bits)


def export_model(model: NetworkModel, frac_bits: int) -> QuantizedModel:
    return QuantizedModel.from_arrays(model.W1, model.b1, model.W2, model.b2, frac_bits)


def suggest_hidden_size(n_i: int, n_o: int) -> tuple[int, int]:
    """Range of hidden widths from m = sqrt(n_i + n_o) + a, a in [1, 10]."""
    if n_i < 1 or n_o < 1:
        raise ValueError("n_i and n_o must be >= 1")
    base = math.isqrt(n_i + n_o - 1) + 1  # ceil(sqrt(n)) for integer n >= 1
    return base + 1, base + 10


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    iters_num: int = 20000
    batch_size: int = 100
    eta0: float = 0.2
    eta_floor: float = 0.01
    seed: int = 0
    # raw schedule values under this are replaced by eta_floor
    clamp_threshold: float = 0.011

    def __post_init__(self):
        if self.iters_num <= 0 or self.batch_size <= 0:
            raise ValueError("iters_num and batch_size must be positive")
        if not 0 < self.eta_floor < self.eta0:
            raise ValueError("need 0 < eta_floor < eta0")


def lr_schedule(cfg: TrainConfig, train_size: int, epoch: int) -> float:
    """Annealed learning rate eta = t0 / (20 i + t1), floored at eta_floor.

    t0 = eta0 * iter_per_epoch and t1 = iter_per_epoch, so eta(0) = eta0.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    iter_per_epoch = train_size / cfg.batch_size
    t1 = iter_per_epoch
    # eta0 * (t1 / ...) rather than (eta0*t1) / ... keeps eta(0) == eta0 bit-exact
    eta = cfg.eta0 * (t1 / (epoch * 20 + t1))
    if eta < cfg.clamp_threshold:
        eta = cfg.eta_floor
    return eta


@dataclass
class EpochRecord:
    epoch: int
    eta: float
    loss: float
    train_acc: float
    excursions: int = 0


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,eta,loss,train_acc,excursions"]
        lines += [f"{r.epoch},{r.eta!r},{r.loss!r},{r.train_acc!r},{r.excursions}" for r in self.records]
        return "\n".join(lines) + "\n"

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


def accuracy(model: NetworkModel, X, y) -> float:
    return float(np.mean(model.predict(X) == np.asarray(y)))


def train(model: NetworkModel, X, y, cfg: TrainConfig) -> tuple[NetworkModel, TrainHistory]:
    """Minibatch SGD with the annealed learning-rate schedule.

    The input model is not modified. The learning rate is updated at each
    epoch boundary, i.e. after floor(e * train_size / batch_size) steps.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    n, n_i = X.shape
    if n == 0:
        raise ValueError("empty training set")
    if n_i != model.dims[0]:
        raise ValueError(f"model expects {model.dims[0]} features, data has {n_i}")
    if cfg.batch_size > n:
        raise ValueError("batch_size exceeds training-set size")
    n_o = model.dims[2]
    if y.min() < 1 or y.max() > n_o:
        raise ValueError(f"labels must lie in [1, {n_o}]")

    model = model.copy()
    T = one_hot(y, n_o)
    rng = np.random.default_rng(cfg.seed)
    iter_per_epoch = n / cfg.batch_size
    history = TrainHistory()
    counter = excursions
    epoch = 0
    eta = lr_schedule(cfg, n, 0)
    next_boundary = math.floor(iter_per_epoch)
    start_count = counter.count

    for step in range(1, cfg.iters_num + 1):
        idx = rng.choice(n, cfg.batch_size, replace=False)
        loss, grads = model.loss_and_grads(X[idx], T[idx])
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss at step {step} (eta={eta})")
        model.sgd_step(grads, eta)
        if step == next_boundary or step == cfg.iters_num:
            _, P = model.forward(X)
            full_loss = cross_entropy(P, T)
            if not math.isfinite(full_loss):
                raise TrainingDivergedError(f"non-finite loss after epoch {epoch}")
            history.records.append(EpochRecord(
                epoch, eta, full_loss, float(np.mean(np.argmax(P, axis=1) + 1 == y)),
                counter.count - start_count))
            start_count = counter.count
            if step == next_boundary:
                epoch += 1
                eta = lr_schedule(cfg, n, epoch)
                next_boundary = math.floor((epoch + 1) * iter_per_epoch)
    return model, history
