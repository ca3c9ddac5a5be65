"""
Best-layer selection from a per-layer metrics table using
standard-deviation margins.
"""
import logging
import math
from dataclasses import dataclass, asdict

import numpy as np

from constants import SELECTION_STRATEGIES
from .errors import InvalidArgument

logger = logging.getLogger(__name__)


@dataclass
class SelectionConfig:
    alpha: float = 0.5
    beta: float = 0.5
    strategy: str = 'dominance'

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise InvalidArgument("alpha and beta must be finite")
        if self.alpha < 0 or self.beta < 0:
            raise InvalidArgument("alpha and beta must be non-negative")
        if self.strategy not in SELECTION_STRATEGIES:
            raise InvalidArgument(f"unknown selection strategy '{self.strategy}'")


@dataclass
class SelectionResult:
    selected: list
    sigma_m1: float
    sigma_m2: float
    delta_m1: float
    delta_m2: float
    strategy: str
    alpha: float = 0.0
    beta: float = 0.0
    fallback: bool = False

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def _columns(table):
    m1 = np.asarray(table.m1, dtype=np.float64)
    m2 = np.asarray(table.m2, dtype=np.float64)
    if m1.size == 0 or m1.shape != m2.shape:
        raise InvalidArgument("metrics table needs matching non-empty m1/m2 columns")
    return m1, m2


def compute_margins(table, alpha, beta):
    """Population std of each metric column and the margins alpha*sigma, beta*sigma"""
    m1, m2 = _columns(table)
    if not (math.isfinite(alpha) and math.isfinite(beta)) or alpha < 0 or beta < 0:
        raise InvalidArgument("alpha and beta must be finite and non-negative")
    sigma_m1 = float(np.std(m1))
    sigma_m2 = float(np.std(m2))
    return sigma_m1, sigma_m2, alpha * sigma_m1, beta * sigma_m2


def _result(selected, margins, strategy, alpha, beta, fallback=False):
    sigma_m1, sigma_m2, delta_m1, delta_m2 = margins
    return SelectionResult(
        selected=[int(l) for l in selected],
        sigma_m1=sigma_m1, sigma_m2=sigma_m2,
        delta_m1=delta_m1, delta_m2=delta_m2,
        strategy=strategy, alpha=alpha, beta=beta, fallback=fallback,
    )


def select_dominance(table, config):
    """Drop layer l iff some other layer beats it on both metrics by the margins"""
    m1, m2 = _columns(table)
    margins = compute_margins(table, config.alpha, config.beta)
    _, _, delta_m1, delta_m2 = margins
    # rows: candidate l, columns: challenger l'
    beats = (
        (m1[None, :] >= m1[:, None] + delta_m1)
        & (m2[None, :] >= m2[:, None] + delta_m2)
        & ((m1[None, :] > m1[:, None]) | (m2[None, :] > m2[:, None]))
    )
    np.fill_diagonal(beats, False)
    kept = np.flatnonzero(~beats.any(axis=1)) + 1
    return _result(kept, margins, 'dominance', config.alpha, config.beta)


def _threshold(table, alpha, beta, strategy):
    m1, m2 = _columns(table)
    margins = compute_margins(table, alpha, beta)
    _, _, delta_m1, delta_m2 = margins
    passing = (m1 >= m1.max() - delta_m1) & (m2 >= m2.max() - delta_m2)
    kept = np.flatnonzero(passing) + 1
    if kept.size:
        return _result(kept, margins, strategy, alpha, beta)
    best = int(np.argmax(m1 + m2)) + 1
    logger.warning(f"{strategy} rule kept no layer; falling back to layer {best} (best m1 + m2)")
    return _result([best], margins, strategy, alpha, beta, fallback=True)


def select_threshold(table, config):
    return _threshold(table, config.alpha, config.beta, 'threshold')


def select_first_std(table):
    return _threshold(table, 1.0, 1.0, 'first-std')


def select_layers(table, config):
    if config.strategy == 'dominance':
        result = select_dominance(table, config)
    elif config.strategy == 'threshold':
        result = select_threshold(table, config)
    else:
        result = select_first_std(table)
    logger.info(f"Selected layers {result.selected} ({result.strategy}, "
                f"delta_m1={result.delta_m1:.4f}, delta_m2={result.delta_m2:.4f})")
    return result


def select_all(table):
    """Every layer, for the all-layers-trainable baseline"""
    margins = compute_margins(table, 0.0, 0.0)
    return _result(range(1, len(table.m1) + 1), margins, 'all', 0.0, 0.0)
