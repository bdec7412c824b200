# src/problems/sparse_logistic.py
"""
Sparse binary classification: logistic loss under a minimax concave penalty
(MCP) constraint.

    f(x, {a, b}) = log(1 + exp(-b a^T x))
    g(x)         = lam ||x||_1 - sum_k h([x]_k) - tau <= 0

h is the convex part of the MCP split,

    h(x) = x^2 / (2 theta)             |x| <= kappa
           lam |x| - c0                otherwise

with kappa = theta lam and c0 = theta lam^2 / 2. The smoothed variant uses
|x|_varrho = sqrt(x^2 + varrho) - sqrt(varrho) in place of |x| and moves the
switch point to kappa = sqrt(theta^2 lam^2 - varrho) so h stays convex and C^1.
"""

from dataclasses import dataclass
from typing import Optional, Union
import logging
import math

import numpy as np
import scipy.sparse as sp
from scipy.special import expit
from sklearn.datasets import make_classification
from sklearn.model_selection import train_test_split
from sklearn.utils.extmath import row_norms

from src.core.exceptions import InvalidConfigError, InvalidInputError
from src.core.problem import ConstraintBlock, StochasticProblem
from src.models.schemas import McpParams, SmoothnessMeta
from src.optim.surrogate import CONVEX_COMPOSITE, ConstraintSurrogate

logger = logging.getLogger(__name__)

Features = Union[np.ndarray, sp.csr_matrix]


@dataclass(frozen=True)
class Dataset:
    """Feature rows, +-1 labels and a fixed train/test split."""

    features: Features
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        n_rows = self.features.shape[0]
        if n_rows == 0:
            raise InvalidInputError("dataset has no rows")
        if self.labels.shape != (n_rows,):
            raise InvalidInputError(f"{self.labels.shape[0]} labels for {n_rows} rows")
        if not np.isin(self.labels, (-1.0, 1.0)).all():
            raise InvalidInputError("labels must be -1 or +1")
        if len(self.train_idx) == 0:
            raise InvalidInputError("training split is empty")

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def train(self):
        return self.features[self.train_idx], self.labels[self.train_idx]

    def test(self):
        return self.features[self.test_idx], self.labels[self.test_idx]


def split_dataset(
    features: Features,
    labels: np.ndarray,
    test_fraction: float = 0.2,
    seed: int = 0,
    name: str = "dataset",
) -> Dataset:
    """Stratified train/test split, deterministic given the seed."""
    labels = np.asarray(labels, dtype=float)
    idx = np.arange(features.shape[0])
    stratify = labels if len(np.unique(labels)) > 1 else None
    train_idx, test_idx = train_test_split(idx, test_size=test_fraction, random_state=seed, stratify=stratify)
    return Dataset(features, labels, np.sort(train_idx), np.sort(test_idx), name=name)


def make_synthetic_dataset(
    samples: int = 400,
    features: int = 50,
    informative: int = 5,
    seed: int = 0,
    test_fraction: float = 0.2,
) -> Dataset:
    """Classification data where only a few features carry signal."""
    X, y = make_classification(
        n_samples=samples,
        n_features=features,
        n_informative=min(informative, features),
        n_redundant=0,
        n_repeated=0,
        random_state=seed,
    )
    return split_dataset(X, np.where(y > 0, 1.0, -1.0), test_fraction, seed, name="synthetic")


# ---------------------------------------------------------------------------
# MCP
# ---------------------------------------------------------------------------

def _switch_point(p: McpParams, smoothed: bool) -> float:
    if not smoothed:
        return p.theta * p.lam
    inner = (p.theta * p.lam) ** 2 - p.varrho
    if inner <= 0:
        raise InvalidConfigError(
            f"smoothing constant {p.varrho} too large for theta*lam = {p.theta * p.lam}"
        )
    return math.sqrt(inner)


def _abs(x: np.ndarray, p: McpParams, smoothed: bool) -> np.ndarray:
    if smoothed:
        return np.sqrt(x * x + p.varrho) - math.sqrt(p.varrho)
    return np.abs(x)


def _abs_derivative(x: np.ndarray, p: McpParams, smoothed: bool) -> np.ndarray:
    if smoothed:
        return x / np.sqrt(x * x + p.varrho)
    return np.sign(x)


def mcp_concave_part(x, p: McpParams, smoothed: bool = False) -> np.ndarray:
    """Per-coordinate h(x), the convex piece subtracted from lam |x|."""
    x = np.asarray(x, dtype=float)
    kappa = _switch_point(p, smoothed)
    offset = p.lam * (_abs(np.array(kappa), p, smoothed)) - kappa ** 2 / (2.0 * p.theta)
    inner = x * x / (2.0 * p.theta)
    outer = p.lam * _abs(x, p, smoothed) - offset
    return np.where(np.abs(x) <= kappa, inner, outer)


def mcp_concave_derivative(x, p: McpParams, smoothed: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    kappa = _switch_point(p, smoothed)
    return np.where(np.abs(x) <= kappa, x / p.theta, p.lam * _abs_derivative(x, p, smoothed))


def mcp_value(x, p: McpParams, smoothed: bool = False) -> float:
    """
    lam * sum |x_k| - sum h(x_k), with |.| smoothed when requested.

    Examples:
        lam=2, theta=5, x=(1,)  -> 1.9
        lam=1, theta=1, x=(3,)  -> 0.5
    """
    x = np.asarray(x, dtype=float)
    return float(p.lam * _abs(x, p, smoothed).sum() - mcp_concave_part(x, p, smoothed).sum())


def mcp_gradient(x, p: McpParams, smoothed: bool = False) -> np.ndarray:
    """Gradient (sign subgradient at 0 when unsmoothed)."""
    x = np.asarray(x, dtype=float)
    return p.lam * _abs_derivative(x, p, smoothed) - mcp_concave_derivative(x, p, smoothed)


def mcp_surrogate(anchor, p: McpParams, smoothed: bool = False, level: float = 0.0) -> ConstraintSurrogate:
    """
    Convex majorizer of mcp(x) - level: the concave part -h is replaced by its
    tangent at the anchor, written in point-slope form so the value at the
    anchor reproduces mcp_value exactly.
    """
    anchor = np.asarray(anchor, dtype=float).copy()
    h0 = mcp_concave_part(anchor, p, smoothed)
    slope = mcp_concave_derivative(anchor, p, smoothed)

    def value(x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        tangent = h0 + slope * (x - anchor)
        return np.array([p.lam * _abs(x, p, smoothed).sum() - tangent.sum() - level])

    def jacobian(x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (p.lam * _abs_derivative(x, p, smoothed) - slope)[None, :]

    return ConstraintSurrogate(
        name="mcp",
        anchor=anchor,
        size=1,
        value=value,
        jacobian=jacobian,
        tag=CONVEX_COMPOSITE,
    )


# ---------------------------------------------------------------------------
# Problem
# ---------------------------------------------------------------------------

def _logistic_loss(margins: np.ndarray) -> np.ndarray:
    # log(1 + exp(-m)), stable for large |m|
    return np.logaddexp(0.0, -margins)


def build_sparse_logistic(
    dataset: Dataset,
    p: McpParams,
    batch_size: int = 1,
    smoothed: bool = True,
) -> StochasticProblem:
    """
    Logistic regression on the training split with the MCP sparsity
    constraint mcp(x) <= tau.

    A sample is a batch of training-row indices drawn uniformly with
    replacement. Exact expectations average over the whole training split.

    Raises:
        InvalidInputError: If the training split is empty
    """
    if batch_size < 1:
        raise InvalidInputError(f"batch size must be at least 1, got {batch_size}")
    A, b = dataset.train()
    if sp.issparse(A):
        A = sp.csr_matrix(A)
    m, n = A.shape
    if m == 0:
        raise InvalidInputError("training split is empty")

    def sample(rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, m, size=batch_size)

    def _loss_and_weights(x, rows: Optional[np.ndarray]):
        A_rows = A if rows is None else A[rows]
        b_rows = b if rows is None else b[rows]
        margins = b_rows * np.asarray(A_rows @ x).reshape(-1)
        return A_rows, b_rows, margins

    def value(x, rows) -> float:
        _, _, margins = _loss_and_weights(x, rows)
        return float(_logistic_loss(margins).mean())

    def gradient(x, rows) -> np.ndarray:
        A_rows, b_rows, margins = _loss_and_weights(x, rows)
        weights = -b_rows * expit(-margins)
        return np.asarray(A_rows.T @ weights).reshape(-1) / len(b_rows)

    def mcp_block_value(x) -> np.ndarray:
        return np.array([mcp_value(x, p, smoothed) - p.tau])

    def mcp_block_jacobian(x) -> np.ndarray:
        return mcp_gradient(x, p, smoothed)[None, :]

    block = ConstraintBlock(
        name="mcp",
        size=1,
        value=mcp_block_value,
        jacobian=mcp_block_jacobian,
        surrogate=lambda anchor: mcp_surrogate(anchor, p, smoothed, level=p.tau),
    )

    norms = row_norms(A)
    G = float(norms.max())
    L_loss = G ** 2 / 4.0
    L_mcp = max(p.lam / math.sqrt(p.varrho), 1.0 / p.theta) if smoothed else 1.0 / p.theta
    meta = SmoothnessMeta(L=max(L_loss, L_mcp), G=G, sigma=2.0 * G)

    logger.info(
        f"Built sparse logistic on '{dataset.name}': {m} training rows, {n} features, "
        f"batch={batch_size}, tau={p.tau}, smoothed={smoothed}"
    )
    return StochasticProblem(
        name="sparse-logistic",
        dimension=n,
        sample=sample,
        value=value,
        gradient=gradient,
        nonconvex=(block,),
        meta=meta,
        expected_value=lambda x: value(x, None),
        expected_gradient=lambda x: gradient(x, None),
        initial_point=np.zeros(n),
    )


def accuracy(x, dataset: Dataset, split: str = "test") -> float:
    """Fraction of rows where sign(a^T x) matches the label; sign(0) counts as +1."""
    A, b = dataset.test() if split == "test" else dataset.train()
    if A.shape[0] == 0:
        return math.nan
    scores = np.asarray(A @ np.asarray(x, dtype=float)).reshape(-1)
    predictions = np.where(scores >= 0, 1.0, -1.0)
    return float(np.mean(predictions == b))
