# src/problems/datasets.py
"""
LIBSVM dataset ingestion.

Files use the sparse text format "label index:value ...", 1-based indices.
Labels are mapped to +-1 at load time:

- "sign":      label > 0 -> +1, else -1
- "pm1":       labels must already be +-1
- "digit:<d>": label == d -> +1, else -1 (MNIST "5 vs rest" is "digit:5")
"""

from pathlib import Path
from typing import Optional
import bz2
import logging

import numpy as np
import requests
import scipy.sparse as sp
from requests.adapters import HTTPAdapter
from sklearn.datasets import load_svmlight_file
from urllib3.util.retry import Retry

from src.config import DATA_DIR, DOWNLOAD_TIMEOUT, LIBSVM_BASE_URL
from src.core.exceptions import InvalidConfigError, InvalidInputError
from src.problems.sparse_logistic import Dataset, split_dataset

logger = logging.getLogger(__name__)

# name -> path under the LIBSVM base URL
LIBSVM_REGISTRY = {
    "mnist": "multiclass/mnist.bz2",
    "mnist.t": "multiclass/mnist.t.bz2",
    "gisette": "binary/gisette_scale.bz2",
    "gisette.t": "binary/gisette_scale.t.bz2",
}


def map_labels(raw: np.ndarray, rule: str) -> np.ndarray:
    """
    Apply a label rule.

    Raises:
        InvalidConfigError: On an unknown rule
        InvalidInputError: If "pm1" meets labels other than +-1
    """
    raw = np.asarray(raw, dtype=float)
    if rule == "sign":
        return np.where(raw > 0, 1.0, -1.0)
    if rule == "pm1":
        if not np.isin(raw, (-1.0, 1.0)).all():
            bad = sorted(set(np.unique(raw)) - {-1.0, 1.0})[:5]
            raise InvalidInputError(f"labels outside +-1: {bad}")
        return raw.copy()
    if rule.startswith("digit:"):
        try:
            digit = float(rule.split(":", 1)[1])
        except ValueError:
            raise InvalidConfigError(f"bad digit in label rule '{rule}'")
        return np.where(raw == digit, 1.0, -1.0)
    raise InvalidConfigError(f"unknown label rule '{rule}'")


def load_libsvm(path, label_rule: str = "sign", n_features: Optional[int] = None):
    """
    Read one LIBSVM file.

    Args:
        path: File path
        label_rule: See module docstring
        n_features: Force the column count (train and test must agree)

    Returns:
        (features as CSR matrix, labels in {-1, +1})

    Raises:
        InvalidInputError: If the file has no rows
    """
    path = Path(path)
    logger.info(f"Loading LIBSVM file {path}")
    X, y = load_svmlight_file(str(path), n_features=n_features, dtype=np.float64)
    if X.shape[0] == 0:
        raise InvalidInputError(f"dataset {path} is empty")
    labels = map_labels(y, label_rule)
    logger.info(f"Loaded {X.shape[0]} rows x {X.shape[1]} features, {int((labels > 0).sum())} positive")
    return sp.csr_matrix(X), labels


def load_dataset(
    train_path,
    test_path=None,
    label_rule: str = "sign",
    n_features: Optional[int] = None,
    test_fraction: float = 0.2,
    split_seed: int = 0,
) -> Dataset:
    """
    Build a Dataset from LIBSVM files.

    With a test file, rows are stacked and the split follows the files;
    otherwise a stratified split is drawn from the training file.
    """
    X_train, y_train = load_libsvm(train_path, label_rule, n_features)
    name = Path(train_path).stem
    if test_path is None:
        return split_dataset(X_train, y_train, test_fraction, split_seed, name=name)

    X_test, y_test = load_libsvm(test_path, label_rule, n_features or X_train.shape[1])
    features = sp.vstack([X_train, X_test], format="csr")
    labels = np.concatenate([y_train, y_test])
    m = X_train.shape[0]
    return Dataset(
        features=features,
        labels=labels,
        train_idx=np.arange(m),
        test_idx=np.arange(m, m + X_test.shape[0]),
        name=name,
    )


def _session() -> requests.Session:
    session = requests.Session()
    retries = Retry(
        total=3,
        backoff_factor=2,
        status_forcelist=[403, 429, 500, 502, 503],
        allowed_methods=["GET"],
    )
    adapter = HTTPAdapter(max_retries=retries)
    session.mount("https://", adapter)
    session.mount("http://", adapter)
    return session


def fetch_libsvm(name: str, data_dir: Optional[Path] = None, session: Optional[requests.Session] = None) -> Path:
    """
    Download a registered LIBSVM file into data_dir, decompressing .bz2.

    The file is reused when already present.

    Returns:
        Path of the uncompressed file

    Raises:
        InvalidConfigError: If the name is not registered
        requests.HTTPError: If the download fails after retries
    """
    if name not in LIBSVM_REGISTRY:
        raise InvalidConfigError(f"unknown dataset '{name}'; known: {sorted(LIBSVM_REGISTRY)}")
    remote = LIBSVM_REGISTRY[name]
    data_dir = Path(data_dir) if data_dir is not None else DATA_DIR
    data_dir.mkdir(parents=True, exist_ok=True)

    target = data_dir / Path(remote).name.removesuffix(".bz2")
    if target.exists():
        logger.info(f"Using cached {target}")
        return target

    url = f"{LIBSVM_BASE_URL}/{remote}"
    logger.info(f"Downloading {url}")
    session = session or _session()
    resp = session.get(url, timeout=DOWNLOAD_TIMEOUT)
    resp.raise_for_status()

    payload = bz2.decompress(resp.content) if remote.endswith(".bz2") else resp.content
    target.write_bytes(payload)
    logger.info(f"Saved {len(payload)} bytes to {target}")
    return target
