"""
Traffic-state classifier: one tanh hidden layer, softmax output, cross-entropy loss

Parameters live in a flat vector so that federated averaging, meta updates and
checkpoints all work on the same container. Layout of the flat vector:
W1 (input_dim x hidden_width, row-major), b1, W2 (hidden_width x num_classes), b2.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

NUM_CLASSES = 3  # low / moderate / high congestion
PROB_FLOOR = 1e-12

_ARCH_DTYPE = np.dtype("<u4")
_VALUE_DTYPE = np.dtype("<f8")


@dataclass(frozen=True)
class ModelArch:
    input_dim: int = 5
    hidden_width: int = 8
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        for name in ("input_dim", "hidden_width", "num_classes"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")

    @property
    def param_count(self):
        return ((self.input_dim + 1) * self.hidden_width
                + (self.hidden_width + 1) * self.num_classes)


@dataclass(frozen=True, eq=False)
class ParamVector:
    """
    Flat, immutable float64 parameter vector tagged with its architecture.

    `arch` may be None for bare vectors (surrogate problems, tests); such
    vectors support the arithmetic but cannot be unpacked or serialized.
    """
    values: np.ndarray
    arch: ModelArch = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if self.arch is not None and values.shape[0] != self.arch.param_count:
            raise ValueError(
                f"parameter length {values.shape[0]} does not match "
                f"arch {self.arch} ({self.arch.param_count} parameters)"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter vector contains NaN or Inf")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.shape[0]

    def unpack(self):
        """Return (W1, b1, W2, b2) views into the flat vector"""
        a = self.arch
        i = 0
        W1 = self.values[i:i + a.input_dim * a.hidden_width].reshape(a.input_dim, a.hidden_width)
        i += a.input_dim * a.hidden_width
        b1 = self.values[i:i + a.hidden_width]
        i += a.hidden_width
        W2 = self.values[i:i + a.hidden_width * a.num_classes].reshape(a.hidden_width, a.num_classes)
        i += a.hidden_width * a.num_classes
        b2 = self.values[i:i + a.num_classes]
        return W1, b1, W2, b2

    def to_bytes(self):
        """Arch triple as three little-endian uint32, then little-endian float64 values"""
        if self.arch is None:
            raise ValueError("cannot serialize a parameter vector without an architecture")
        header = np.array(
            [self.arch.input_dim, self.arch.hidden_width, self.arch.num_classes],
            dtype=_ARCH_DTYPE,
        )
        return header.tobytes() + self.values.astype(_VALUE_DTYPE).tobytes()

    @classmethod
    def from_bytes(cls, data):
        header = np.frombuffer(data[:12], dtype=_ARCH_DTYPE)
        if header.shape[0] != 3:
            raise ValueError("truncated parameter header")
        arch = ModelArch(*(int(v) for v in header))
        values = np.frombuffer(data[12:], dtype=_VALUE_DTYPE)
        return cls(values, arch)

    def allclose(self, other, atol=1e-12):
        return self.arch == other.arch and np.allclose(self.values, other.values, rtol=0, atol=atol)

    def array_equal(self, other):
        return self.arch == other.arch and np.array_equal(self.values, other.values)


def pack(W1, b1, W2, b2, arch):
    return ParamVector(np.concatenate([np.ravel(W1), b1, np.ravel(W2), b2]), arch)


def zeros_like(params):
    return ParamVector(np.zeros(len(params)), params.arch)


def batch_arrays(batch):
    """
    Normalize a batch to (X, y) arrays.

    Accepts a list of samples with `.features`/`.label`, anything exposing
    `.X`/`.y` (datasets), or an explicit (X, y) pair.
    """
    if isinstance(batch, tuple) and len(batch) == 2:
        X, y = batch
    elif hasattr(batch, "X") and hasattr(batch, "y"):
        X, y = batch.X, batch.y
    else:
        batch = list(batch)
        if not batch:
            raise ValueError("batch must be non-empty")
        X = np.stack([np.asarray(s.features, dtype=np.float64) for s in batch])
        y = np.array([s.label for s in batch], dtype=np.int64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    if y.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    return X, y


def init_params(arch, seed):
    """Uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases"""
    rng = np.random.default_rng(seed)
    bound1 = 1.0 / np.sqrt(arch.input_dim)
    bound2 = 1.0 / np.sqrt(arch.hidden_width)
    W1 = rng.uniform(-bound1, bound1, size=(arch.input_dim, arch.hidden_width))
    W2 = rng.uniform(-bound2, bound2, size=(arch.hidden_width, arch.num_classes))
    return pack(W1, np.zeros(arch.hidden_width), W2, np.zeros(arch.num_classes), arch)


def _check_inputs(params, X):
    if X.shape[1] != params.arch.input_dim:
        raise ValueError(
            f"feature dimension {X.shape[1]} does not match input_dim {params.arch.input_dim}"
        )


def _forward_batch(params, X):
    W1, b1, W2, b2 = params.unpack()
    hidden = np.tanh(X @ W1 + b1)
    probs = softmax(hidden @ W2 + b2, axis=1)
    return hidden, probs


def predict_proba(params, X):
    """Class probabilities for every row of X"""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check_inputs(params, X)
    return _forward_batch(params, X)[1]


def forward(params, x):
    """Class probabilities for a single feature vector"""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward expects a single feature vector")
    return predict_proba(params, x[None, :])[0]


def predict(params, X):
    """Argmax class per row; ties go to the lowest class index"""
    return np.argmax(predict_proba(params, X), axis=1)


def loss(params, batch):
    """Mean cross-entropy, probabilities floored at 1e-12 before the log"""
    X, y = batch_arrays(batch)
    _check_inputs(params, X)
    _, probs = _forward_batch(params, X)
    p_true = probs[np.arange(y.shape[0]), y]
    return float(np.mean(-np.log(np.maximum(p_true, PROB_FLOOR))))


def grad(params, batch):
    """Backpropagated gradient of `loss`"""
    X, y = batch_arrays(batch)
    _check_inputs(params, X)
    n = y.shape[0]
    W1, b1, W2, b2 = params.unpack()
    hidden, probs = _forward_batch(params, X)

    d_logits = probs.copy()
    d_logits[np.arange(n), y] -= 1.0
    # Rows whose true-class probability sits on the floor have zero slope
    floored = probs[np.arange(n), y] < PROB_FLOOR
    d_logits[floored] = 0.0
    d_logits /= n

    dW2 = hidden.T @ d_logits
    db2 = d_logits.sum(axis=0)
    d_hidden = (d_logits @ W2.T) * (1.0 - hidden ** 2)
    dW1 = X.T @ d_hidden
    db1 = d_hidden.sum(axis=0)
    return pack(dW1, db1, dW2, db2, params.arch)


def sgd_step(params, g, eta):
    """params - eta * g"""
    if len(params) != len(g):
        raise ValueError(f"length mismatch: params {len(params)} vs gradient {len(g)}")
    if not np.isfinite(eta) or eta <= 0:
        raise ValueError(f"eta must be a positive finite number, got {eta}")
    return ParamVector(params.values - eta * g.values, params.arch)
