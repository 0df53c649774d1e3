"""Price ingestion, return transforms, time mapping, and evaluation splits.

Models consume a series of return vectors y_1..y_N observed at scalar
inputs x in (0, 1]. Returns come from a price table as lagged log ratios,
optionally demeaned per asset. Evaluation uses a sliding window: every
split trains on a fixed-length window and is tested on the block of
``horizon`` points immediately after it; the test blocks tile the final
``n_splits * horizon`` observations without overlap.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np
import pandas as pd

from .errors import DataError


class PriceTable(NamedTuple):
    prices: np.ndarray          # (T, D), positive
    names: tuple
    dates: Optional[tuple]      # row labels when the file had them


def load_prices(path) -> PriceTable:
    """Read a CSV of asset prices, one column per asset.

    A leading non-numeric column (dates or other labels) is kept as row
    labels. Prices must be finite and positive with at least two rows.
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"could not read price table {path!r}: {exc}") from exc
    if frame.shape[1] == 0:
        raise DataError(f"price table {path!r} has no columns")
    dates = None
    first = frame.columns[0]
    if not pd.api.types.is_numeric_dtype(frame[first]):
        dates = tuple(str(v) for v in frame[first])
        frame = frame.drop(columns=[first])
    if frame.shape[1] == 0:
        raise DataError(f"price table {path!r} has no numeric price columns")
    try:
        values = frame.to_numpy(dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataError(f"price table {path!r} has non-numeric entries: {exc}") from exc
    if values.shape[0] < 2:
        raise DataError(f"price table {path!r} needs at least two rows, got {values.shape[0]}")
    if not np.isfinite(values).all():
        raise DataError(f"price table {path!r} contains missing or non-finite values")
    if not (values > 0.0).all():
        raise DataError(f"price table {path!r} contains non-positive prices")
    return PriceTable(prices=values, names=tuple(str(c) for c in frame.columns), dates=dates)


def to_log_returns(prices, *, log1p_returns: bool = False) -> np.ndarray:
    """Lagged log returns of a positive price series, shape (T-1, D).

    The standard transform is log(P_{t+1} / P_t). ``log1p_returns``
    switches to log(1 + P_{t+1} / P_t), which reproduces runs that used
    that variant of the formula.
    """
    prices = np.asarray(prices, dtype=np.float64)
    if prices.ndim == 1:
        prices = prices[:, None]
    if prices.ndim != 2 or prices.shape[0] < 2:
        raise DataError(f"need a (T, D) price array with T >= 2, got shape {prices.shape}")
    if not np.isfinite(prices).all() or not (prices > 0.0).all():
        raise DataError("prices must be finite and positive")
    ratio = prices[1:] / prices[:-1]
    return np.log1p(ratio) if log1p_returns else np.log(ratio)


def map_time_inputs(n_or_durations) -> np.ndarray:
    """Scalar inputs in (0, 1] for a series of observations.

    Given an integer N, the points are equally spaced at j / N. Given N
    positive durations between consecutive observations, the points are
    cumulative elapsed time rescaled so the last one lands on 1.
    """
    if np.isscalar(n_or_durations):
        n = int(n_or_durations)
        if n < 1:
            raise DataError(f"need at least one observation, got {n}")
        return np.arange(1, n + 1, dtype=np.float64) / n
    durations = np.asarray(n_or_durations, dtype=np.float64)
    if durations.ndim != 1 or durations.size == 0:
        raise DataError(f"durations must be a non-empty 1-d array, got shape {durations.shape}")
    if not np.isfinite(durations).all() or not (durations > 0.0).all():
        raise DataError("durations must be finite and positive")
    elapsed = np.cumsum(durations)
    return elapsed / elapsed[-1]


def extend_time_inputs(n_train: int, horizon: int) -> np.ndarray:
    """Forecast inputs continuing past 1 with the training grid's spacing."""
    if n_train < 1 or horizon < 1:
        raise DataError(f"invalid extension: n_train={n_train}, horizon={horizon}")
    return (n_train + np.arange(1, horizon + 1, dtype=np.float64)) / n_train


class ReturnsDataset(NamedTuple):
    """Return series with its time mapping and demeaning record."""

    x: np.ndarray        # (N,)
    y: np.ndarray        # (N, D)
    names: tuple
    mean: np.ndarray     # (D,) per-asset mean removed from y (zeros if kept)
    demeaned: bool

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.y.shape[1]

    @classmethod
    def from_prices(
        cls,
        prices,
        names=None,
        *,
        demean: bool = True,
        log1p_returns: bool = False,
    ) -> "ReturnsDataset":
        returns = to_log_returns(prices, log1p_returns=log1p_returns)
        return cls.from_returns(returns, names, demean=demean)

    @classmethod
    def from_returns(cls, returns, names=None, *, demean: bool = True) -> "ReturnsDataset":
        y = np.asarray(returns, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[0] < 1:
            raise DataError(f"returns must be a non-empty (N, D) array, got shape {y.shape}")
        if not np.isfinite(y).all():
            raise DataError("returns contain non-finite values")
        if names is None:
            names = tuple(f"series_{i}" for i in range(y.shape[1]))
        names = tuple(str(n) for n in names)
        if len(names) != y.shape[1]:
            raise DataError(f"{len(names)} names for {y.shape[1]} series")
        mean = y.mean(axis=0) if demean else np.zeros(y.shape[1])
        return cls(
            x=map_time_inputs(y.shape[0]),
            y=y - mean,
            names=names,
            mean=mean,
            demeaned=demean,
        )


class Split(NamedTuple):
    index: int
    train_idx: np.ndarray
    val_idx: np.ndarray     # empty outside the designated split
    test_idx: np.ndarray

    @property
    def window(self) -> int:
        """Length of the training window, validation tail included."""
        return self.train_idx.size + self.val_idx.size


class SplitPlan(NamedTuple):
    n: int
    n_splits: int
    horizon: int
    val_fraction: float
    val_split_index: int
    splits: tuple


def make_splits(
    n: int,
    n_splits: int,
    horizon: int,
    *,
    val_fraction: float = 0.0,
    val_split_index: int = 0,
) -> SplitPlan:
    """Sliding-window evaluation plan over a series of length n.

    Every window has length n - n_splits * horizon; window i starts at
    i * horizon and its test block is the next ``horizon`` points, so the
    test blocks cover the final n_splits * horizon observations exactly
    once. In the designated split only, a validation tail of
    round(val_fraction * window) points is carved off the training window.
    """
    if n_splits < 1 or horizon < 1:
        raise DataError(f"n_splits and horizon must be positive, got {n_splits}, {horizon}")
    window = n - n_splits * horizon
    if window < 2:
        raise DataError(
            f"series of length {n} is too short for {n_splits} splits at horizon {horizon}"
        )
    if not 0.0 <= val_fraction < 1.0:
        raise DataError(f"val_fraction must be in [0, 1), got {val_fraction}")
    if not 0 <= val_split_index < n_splits:
        raise DataError(f"val_split_index {val_split_index} out of range for {n_splits} splits")
    n_val = int(round(val_fraction * window))
    if val_fraction > 0.0:
        n_val = max(n_val, 1)
    if n_val >= window:
        raise DataError(f"validation tail of {n_val} would consume the whole window")

    splits = []
    for i in range(n_splits):
        start = i * horizon
        cut = window - n_val if i == val_split_index else window
        splits.append(
            Split(
                index=i,
                train_idx=np.arange(start, start + cut),
                val_idx=np.arange(start + cut, start + window),
                test_idx=np.arange(start + window, start + window + horizon),
            )
        )
    return SplitPlan(
        n=n,
        n_splits=n_splits,
        horizon=horizon,
        val_fraction=val_fraction,
        val_split_index=val_split_index,
        splits=tuple(splits),
    )


class SplitFrame(NamedTuple):
    """One split's data remapped onto its own window clock."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


def split_frame(dataset: ReturnsDataset, split: Split) -> SplitFrame:
    """Inputs and targets for one split.

    The window gets its own time mapping j / window for j = 1..window, and
    the test inputs continue that grid past 1.
    """
    window = split.window
    x_window = map_time_inputs(window)
    n_train = split.train_idx.size
    return SplitFrame(
        x_train=x_window[:n_train],
        y_train=dataset.y[split.train_idx],
        x_val=x_window[n_train:],
        y_val=dataset.y[split.val_idx],
        x_test=extend_time_inputs(window, split.test_idx.size),
        y_test=dataset.y[split.test_idx],
    )
