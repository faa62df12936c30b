"""From-scratch single-layer LSTM regressor for hourly bandwidth forecasting.

One recurrent hidden layer plus a scalar ReLU output head, trained with Huber
loss, exact backpropagation through time, and Adam with global-norm gradient
clipping. Everything runs in normalized [0, 1] space; `predict_next` and
`predict_horizon` convert back to Mbps. All randomness is owned by explicit
seeds, so training is bit-reproducible.
"""

import json
import math
from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

from .preprocess import (
    NormalizationParams,
    denormalize,
    filter_outliers,
    fit_normalizer,
    make_windows,
    normalize,
    split_train_test,
)
from .traces import TraceSeries

MODEL_FORMAT_VERSION = 1

# early stop (optional): plateau if relative train-loss improvement over the
# last 5 epochs falls below 1e-4
EARLY_STOP_WINDOW = 5
EARLY_STOP_REL_TOL = 1e-4

_MATRIX_FIELDS = ("w_i", "w_f", "w_o", "w_g")
_VECTOR_FIELDS = ("b_i", "b_f", "b_o", "b_g", "w_out")


class ModelFormatError(ValueError):
    """Corrupted or version-incompatible serialized model."""


class TrainingDiverged(ArithmeticError):
    """Non-finite loss or gradient encountered while training."""

    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass(eq=False)
class LstmParams:
    """Gate weights/biases plus the scalar output head, for hidden size H.

    Each gate matrix has shape (H, 1+H): the input column followed by the
    recurrent columns, acting on the concatenated [x_t; h_prev] vector.
    """

    hidden_size: int
    w_i: np.ndarray
    w_f: np.ndarray
    w_o: np.ndarray
    w_g: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray
    w_out: np.ndarray
    b_out: float

    def __post_init__(self):
        h = self.hidden_size
        if h < 1:
            raise ValueError(f"hidden_size must be >= 1, got {h}")
        for name in _MATRIX_FIELDS:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (h, 1 + h):
                raise ValueError(f"{name} must have shape ({h}, {1 + h}), got {arr.shape}")
            setattr(self, name, arr)
        for name in _VECTOR_FIELDS:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (h,):
                raise ValueError(f"{name} must have shape ({h},), got {arr.shape}")
            setattr(self, name, arr)
        self.b_out = float(self.b_out)
        if not all(np.all(np.isfinite(getattr(self, n))) for n in _MATRIX_FIELDS + _VECTOR_FIELDS):
            raise ValueError("parameters contain non-finite entries")
        if not math.isfinite(self.b_out):
            raise ValueError("b_out is not finite")

    def __eq__(self, other) -> bool:
        if not isinstance(other, LstmParams):
            return NotImplemented
        return (
            self.hidden_size == other.hidden_size
            and all(
                np.array_equal(getattr(self, n), getattr(other, n))
                for n in _MATRIX_FIELDS + _VECTOR_FIELDS
            )
            and self.b_out == other.b_out
        )

    def as_vector(self) -> np.ndarray:
        """Flatten all parameters (row-major, fixed field order) into one vector."""
        parts = [getattr(self, n).ravel() for n in _MATRIX_FIELDS + _VECTOR_FIELDS]
        parts.append(np.array([self.b_out]))
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, hidden_size: int, vec: np.ndarray) -> "LstmParams":
        h = hidden_size
        sizes = [h * (1 + h)] * 4 + [h] * 5 + [1]
        if vec.shape != (sum(sizes),):
            raise ValueError(f"expected vector of length {sum(sizes)}, got {vec.shape}")
        pieces = np.split(vec, np.cumsum(sizes)[:-1])
        mats = [p.reshape(h, 1 + h) for p in pieces[:4]]
        return cls(h, *mats, *pieces[4:9], float(pieces[9][0]))

    @classmethod
    def zeros(cls, hidden_size: int) -> "LstmParams":
        h = hidden_size
        return cls.from_vector(h, np.zeros(4 * h * (1 + h) + 5 * h + 1))


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run; every field is overridable."""

    window_length: int = 24
    hidden_size: int = 32
    epochs: int = 50
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    huber_delta: float = 1.0
    batch_size: int = 32
    seed: int = 0
    gradient_clip_norm: float = 5.0
    early_stop: bool = False

    def __post_init__(self):
        positive = (
            "window_length", "hidden_size", "epochs", "learning_rate",
            "adam_epsilon", "huber_delta", "batch_size", "gradient_clip_norm",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative 64-bit integer")


@dataclass
class ForecastModel:
    """Trained parameters plus the normalization needed to use them."""

    provider_id: str
    params: LstmParams
    norm: NormalizationParams
    config: TrainConfig
    training_loss_history: tuple


@dataclass
class AdamState:
    """First/second moment estimates, flat like LstmParams.as_vector()."""

    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def init_params(hidden_size: int, seed: int) -> LstmParams:
    """Seeded uniform init in [-1/sqrt(1+H), +1/sqrt(1+H)]; b_f starts at 1.

    The forget-gate bias of 1 keeps early cell-state gradients from vanishing.
    """
    if hidden_size < 1:
        raise ValueError(f"hidden_size must be >= 1, got {hidden_size}")
    h = hidden_size
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(1 + h)
    mats = [rng.uniform(-bound, bound, (h, 1 + h)) for _ in range(4)]
    w_out = rng.uniform(-bound, bound, h)
    return LstmParams(
        h, *mats,
        b_i=np.zeros(h), b_f=np.ones(h), b_o=np.zeros(h), b_g=np.zeros(h),
        w_out=w_out, b_out=0.0,
    )


def cell_forward(params: LstmParams, x_t: float, h_prev: np.ndarray, c_prev: np.ndarray):
    """One LSTM cell step: returns (h_t, c_t)."""
    h = params.hidden_size
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    if h_prev.shape != (h,) or c_prev.shape != (h,):
        raise ValueError(f"state vectors must have shape ({h},)")
    h_t, c_t = _cell(params, float(x_t), h_prev, c_prev)
    if not (np.all(np.isfinite(h_t)) and np.all(np.isfinite(c_t))):
        raise TrainingDiverged(0, "non-finite cell state")
    return h_t, c_t


def _cell(params, x_t, h_prev, c_prev):
    z = np.concatenate(([x_t], h_prev))
    i = _sigmoid(params.w_i @ z + params.b_i)
    f = _sigmoid(params.w_f @ z + params.b_f)
    o = _sigmoid(params.w_o @ z + params.b_o)
    g = np.tanh(params.w_g @ z + params.b_g)
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


def forward_window(params: LstmParams, window) -> float:
    """Run the cell over a normalized window from zero state; ReLU head.

    Returns relu(w_out . h_last + b_out), a scalar >= 0.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 1 or window.size < 1:
        raise ValueError("window must be a non-empty 1-d sequence")
    h = np.zeros(params.hidden_size)
    c = np.zeros(params.hidden_size)
    for x_t in window:
        h, c = _cell(params, x_t, h, c)
    a = float(params.w_out @ h + params.b_out)
    return a if a > 0.0 else 0.0


def huber_loss(y: float, y_hat: float, delta: float):
    """Huber loss and its derivative with respect to the prediction y_hat."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    e = y_hat - y
    if abs(e) <= delta:
        return 0.5 * e * e, e
    return delta * (abs(e) - 0.5 * delta), delta * math.copysign(1.0, e)


def _gate_matrix(params):
    w_all = np.concatenate([params.w_i, params.w_f, params.w_o, params.w_g])
    b_all = np.concatenate([params.b_i, params.b_f, params.b_o, params.b_g])
    return w_all, b_all


def _forward_batch(params, windows):
    """Vectorized forward over a (B, L) batch; returns head pre-activations,
    predictions, and the per-step cache needed for BPTT."""
    b, length = windows.shape
    h_size = params.hidden_size
    w_all, b_all = _gate_matrix(params)
    h = np.zeros((b, h_size))
    c = np.zeros((b, h_size))
    steps = []
    for t in range(length):
        z = np.concatenate((windows[:, t:t + 1], h), axis=1)
        pre = z @ w_all.T + b_all
        i = _sigmoid(pre[:, :h_size])
        f = _sigmoid(pre[:, h_size:2 * h_size])
        o = _sigmoid(pre[:, 2 * h_size:3 * h_size])
        g = np.tanh(pre[:, 3 * h_size:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        steps.append((z, i, f, o, g, c, tc))
        c = c_new
        h = o * tc
    a = h @ params.w_out + params.b_out
    y_hat = np.maximum(a, 0.0)
    return a, y_hat, (steps, h, w_all)


def _backward_batch(params, cache, a, d_yhat):
    """Exact gradients of sum_b d_yhat[b] * yhat[b] pieces through the net.

    `d_yhat` carries the loss derivative per sample (already scaled for batch
    averaging by the caller); the ReLU subgradient at 0 is taken as 0.
    """
    steps, h_last, w_all = cache
    h_size = params.hidden_size
    da = d_yhat * (a > 0.0)
    g_w_out = h_last.T @ da
    g_b_out = float(np.sum(da))
    gw_all = np.zeros_like(w_all)
    gb_all = np.zeros(4 * h_size)
    dh = np.outer(da, params.w_out)
    dc = np.zeros_like(dh)
    for z, i, f, o, g, c_prev, tc in reversed(steps):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        d_pre = np.concatenate(
            (di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g * g)),
            axis=1,
        )
        gw_all += d_pre.T @ z
        gb_all += d_pre.sum(axis=0)
        dz = d_pre @ w_all
        dh = dz[:, 1:]
        dc = dc * f
    mats = np.split(gw_all, 4)
    vecs = np.split(gb_all, 4)
    return LstmParams(h_size, *mats, *vecs, w_out=g_w_out, b_out=g_b_out)


def backward_window(params: LstmParams, window, target: float, delta: float = 1.0) -> LstmParams:
    """Exact BPTT gradients of huber_loss(target, forward_window(params, window)).

    The result reuses the LstmParams shape: each field holds the gradient of
    the corresponding parameter.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 1 or window.size < 1:
        raise ValueError("window must be a non-empty 1-d sequence")
    a, y_hat, cache = _forward_batch(params, window[None, :])
    _, dl = huber_loss(float(target), float(y_hat[0]), delta)
    grads = _backward_batch(params, cache, a, np.array([dl]))
    if not np.all(np.isfinite(grads.as_vector())):
        raise TrainingDiverged(0, "non-finite gradient")
    return grads


def adam_step(params: LstmParams, grads: LstmParams, state: AdamState, t: int, config: TrainConfig):
    """One Adam update, after rescaling so the global gradient L2 norm is
    at most config.gradient_clip_norm. Returns (new params, new state)."""
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    theta = params.as_vector()
    g = grads.as_vector()
    norm = float(np.linalg.norm(g))
    if norm > config.gradient_clip_norm:
        g = g * (config.gradient_clip_norm / norm)
    b1, b2 = config.adam_beta1, config.adam_beta2
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    theta = theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
    return LstmParams.from_vector(params.hidden_size, theta), AdamState(m, v)


def _huber_batch(targets, y_hat, delta):
    e = y_hat - targets
    quad = np.abs(e) <= delta
    losses = np.where(quad, 0.5 * e * e, delta * (np.abs(e) - 0.5 * delta))
    dl = np.where(quad, e, delta * np.sign(e))
    return losses, dl


def train(
    series: TraceSeries,
    config: TrainConfig,
    train_fraction: float = 0.8,
    hampel_window: int = 7,
    hampel_k: float = 3.0,
) -> ForecastModel:
    """Train one provider's model end to end from a raw trace.

    Pipeline: Hampel outlier filtering (skipped when the series is shorter
    than the filter window), min-max normalization, supervised windowing with
    L = config.window_length, chronological split, then minibatch Adam for
    config.epochs epochs (the fixed epoch count is the termination rule;
    config.early_stop optionally breaks on a train-loss plateau). Fully
    deterministic given config.seed.
    """
    if len(series) >= hampel_window:
        series = filter_outliers(series, hampel_window, hampel_k)
    norm = fit_normalizer(series)
    normalized = normalize(series.samples, norm)
    dataset = make_windows(normalized, config.window_length)
    train_set, _ = split_train_test(dataset, train_fraction)

    params = init_params(config.hidden_size, config.seed)
    state = AdamState.zeros(params.as_vector().size)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    n = len(train_set)
    history = []
    step = 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, config.batch_size):
            batch = order[lo:lo + config.batch_size]
            windows = train_set.inputs[batch]
            targets = train_set.targets[batch]
            a, y_hat, cache = _forward_batch(params, windows)
            losses, dl = _huber_batch(targets, y_hat, config.huber_delta)
            if not np.all(np.isfinite(losses)):
                raise TrainingDiverged(epoch, "non-finite training loss")
            loss_sum += float(np.sum(losses))
            grads = _backward_batch(params, cache, a, dl / batch.size)
            step += 1
            params, state = adam_step(params, grads, state, step, config)
        history.append(loss_sum / n)
        if (
            config.early_stop
            and len(history) > EARLY_STOP_WINDOW
            and history[-1 - EARLY_STOP_WINDOW] > 0.0
            and (history[-1 - EARLY_STOP_WINDOW] - history[-1])
            < EARLY_STOP_REL_TOL * history[-1 - EARLY_STOP_WINDOW]
        ):
            break
    return ForecastModel(series.provider_id, params, norm, config, tuple(history))


def _recent_window(model: ForecastModel, recent) -> np.ndarray:
    if isinstance(recent, TraceSeries):
        recent = recent.samples
    recent = np.asarray(recent, dtype=np.float64)
    expected = model.config.window_length
    if recent.shape != (expected,):
        raise ValueError(f"expected exactly {expected} recent samples, got {recent.shape}")
    return normalize(recent, model.norm)


def predict_next(model: ForecastModel, recent) -> float:
    """Forecast the next hour in Mbps from the last L hours of actuals."""
    window = _recent_window(model, recent)
    y_norm = forward_window(model.params, window)
    return float(denormalize(np.array([y_norm]), model.norm)[0])


def predict_horizon(model: ForecastModel, recent, horizon: int) -> np.ndarray:
    """Iterated one-step forecasts in Mbps.

    Each normalized prediction is appended to the sliding window to produce
    the next step, so errors compound with the horizon.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    window = _recent_window(model, recent)
    preds = np.empty(horizon)
    for step in range(horizon):
        y_norm = forward_window(model.params, window)
        preds[step] = y_norm
        window = np.concatenate((window[1:], [y_norm]))
    return denormalize(preds, model.norm)


def save_model(model: ForecastModel) -> str:
    """Serialize a model to a versioned JSON document (float-exact)."""
    params = model.params
    arrays = {}
    for name in _MATRIX_FIELDS + _VECTOR_FIELDS:
        arr = getattr(params, name)
        arrays[name] = {"dims": list(arr.shape), "data": [float(x) for x in arr.ravel()]}
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "provider_id": model.provider_id,
        "config": {f.name: getattr(model.config, f.name) for f in dataclass_fields(TrainConfig)},
        "normalization": {"min_value": model.norm.min_value, "max_value": model.norm.max_value},
        "params": {"hidden_size": params.hidden_size, "b_out": params.b_out, **arrays},
        "training_loss_history": [float(x) for x in model.training_loss_history],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def load_model(payload) -> ForecastModel:
    """Parse a serialized model; exact inverse of save_model."""
    if isinstance(payload, bytes):
        payload = payload.decode("utf-8")
    try:
        doc = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"corrupted model file: {exc}") from None
    try:
        version = doc["format_version"]
        if version != MODEL_FORMAT_VERSION:
            raise ModelFormatError(
                f"unsupported model format version {version!r} (expected {MODEL_FORMAT_VERSION})"
            )
        config = TrainConfig(**doc["config"])
        norm = NormalizationParams(**doc["normalization"])
        raw = doc["params"]
        h = raw["hidden_size"]
        arrays = {}
        for name in _MATRIX_FIELDS + _VECTOR_FIELDS:
            dims = tuple(raw[name]["dims"])
            arrays[name] = np.array(raw[name]["data"], dtype=np.float64).reshape(dims)
        params = LstmParams(h, **arrays, b_out=raw["b_out"])
        return ForecastModel(
            doc["provider_id"], params, norm, config, tuple(doc["training_loss_history"])
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"corrupted model file: {exc}") from None
