"""Trace cleaning, min-max normalization, windowing, and chronological splits.

Everything here is a pure function over immutable inputs; the supervised
pipeline is: filter_outliers -> fit_normalizer/normalize -> make_windows ->
split_train_test.
"""

import math
from dataclasses import dataclass

import numpy as np

from .traces import TraceSeries

# scales MAD to the standard deviation of Gaussian data
MAD_SCALE = 1.4826


@dataclass(frozen=True)
class NormalizationParams:
    """Min-max bounds fitted on a training series."""

    min_value: float
    max_value: float

    def __post_init__(self):
        if not (math.isfinite(self.min_value) and math.isfinite(self.max_value)):
            raise ValueError("normalization bounds must be finite")
        if self.max_value < self.min_value:
            raise ValueError(f"max_value {self.max_value} < min_value {self.min_value}")

    @property
    def span(self) -> float:
        return self.max_value - self.min_value


@dataclass(frozen=True, eq=False)
class SupervisedDataset:
    """Aligned (window, next-hour target) pairs over a normalized sequence.

    Window i covers hours [i, i+L); target i is hour i+L. All values lie in
    [0, 1].
    """

    window_length: int
    inputs: np.ndarray   # shape (n, L)
    targets: np.ndarray  # shape (n,)

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[1] != self.window_length:
            raise ValueError(f"inputs must have shape (n, {self.window_length})")
        if targets.shape != (inputs.shape[0],):
            raise ValueError("inputs and targets must have equal count")
        for name, arr in (("inputs", inputs), ("targets", targets)):
            if arr.size and (np.min(arr) < 0.0 or np.max(arr) > 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        inputs = inputs.copy()
        targets = targets.copy()
        inputs.flags.writeable = False
        targets.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    def __len__(self) -> int:
        return self.targets.size


def filter_outliers(series: TraceSeries, window: int = 7, k: float = 3.0) -> TraceSeries:
    """Hampel-filter a series: replace spikes with the local window median.

    For each point, the median m and median absolute deviation MAD are taken
    over the centered `window` (truncated near the edges); a point is replaced
    by m when |x - m| > k * 1.4826 * MAD. Note the MAD = 0 degenerate case:
    any point that differs at all from a flat window's median is replaced.
    """
    if window % 2 == 0 or window < 3:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if len(series) < window:
        raise ValueError(f"series of length {len(series)} is shorter than window {window}")

    x = series.samples
    half = window // 2
    filtered = x.copy()
    for i in range(x.size):
        neighborhood = x[max(0, i - half):min(x.size, i + half + 1)]
        m = np.median(neighborhood)
        mad = np.median(np.abs(neighborhood - m))
        if abs(x[i] - m) > k * MAD_SCALE * mad:
            filtered[i] = m
    return TraceSeries(series.provider_id, series.start, filtered)


def fit_normalizer(series: TraceSeries) -> NormalizationParams:
    """Min and max of the samples."""
    if len(series) == 0:
        raise ValueError("cannot fit a normalizer on an empty series")
    return NormalizationParams(float(np.min(series.samples)), float(np.max(series.samples)))


def normalize(values, params: NormalizationParams) -> np.ndarray:
    """Map values to [0, 1] via (x - min) / (max - min).

    A degenerate constant series (max == min) maps to 0.5 everywhere, keeping
    values mid-range rather than dividing by zero.
    """
    values = np.asarray(values, dtype=np.float64)
    if params.span == 0.0:
        return np.full_like(values, 0.5)
    return (values - params.min_value) / params.span


def denormalize(values, params: NormalizationParams) -> np.ndarray:
    """Exact inverse of normalize when max > min; the constant min otherwise."""
    values = np.asarray(values, dtype=np.float64)
    if params.span == 0.0:
        return np.full_like(values, params.min_value)
    return values * params.span + params.min_value


def make_windows(sequence, window_length: int) -> SupervisedDataset:
    """Slide a length-L window over the sequence, pairing it with hour i+L."""
    sequence = np.asarray(sequence, dtype=np.float64)
    if window_length < 1:
        raise ValueError(f"window_length must be >= 1, got {window_length}")
    if sequence.size <= window_length:
        raise ValueError(
            f"sequence of length {sequence.size} is too short for window_length {window_length}"
        )
    inputs = np.lib.stride_tricks.sliding_window_view(sequence[:-1], window_length)
    return SupervisedDataset(window_length, inputs, sequence[window_length:])


def split_train_test(dataset: SupervisedDataset, train_fraction: float):
    """Chronological split: first floor(f*N) pairs train, remainder test."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset)
    n_train = math.floor(train_fraction * n)
    if n_train == 0 or n_train == n:
        raise ValueError(
            f"split of {n} pairs at fraction {train_fraction} leaves an empty side"
        )
    train = SupervisedDataset(dataset.window_length, dataset.inputs[:n_train], dataset.targets[:n_train])
    test = SupervisedDataset(dataset.window_length, dataset.inputs[n_train:], dataset.targets[n_train:])
    return train, test
