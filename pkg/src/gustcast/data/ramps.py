from __future__ import annotations

import numpy as np


def ramp_labels(power: np.ndarray, threshold: float = 0.5, window: int = 1) -> np.ndarray:
    """True at t iff ``|power[t] - power[t - window]| >= threshold``.

    ``power`` is normalised output; the first ``window`` entries are False.
    """
    power = np.asarray(power, dtype=float)
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if not 1 <= window < len(power):
        raise ValueError(f"window must lie in [1, {len(power)}), got {window}")
    labels = np.zeros(len(power), dtype=bool)
    labels[window:] = np.abs(power[window:] - power[:-window]) >= threshold
    return labels


def class_weights(labels: np.ndarray) -> tuple[float, float]:
    """Balanced weights ``total / (2 * count)`` for the positive and negative class."""
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"both classes need instances (positives={n_pos}, negatives={n_neg})")
    total = labels.size
    return total / (2.0 * n_pos), total / (2.0 * n_neg)
