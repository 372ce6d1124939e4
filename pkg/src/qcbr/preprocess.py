"""PCA dimension reduction and deflation FastICA.

The 2D classifier path projects the 2n time features onto their two leading
principal directions and then rotates that plane to maximally independent
coordinates with FastICA.  The 8D path uses raw features and skips both.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateInstance, InvalidArgument

# eigenvalues below this fraction of the largest count as zero
RANK_TOLERANCE = 1e-10


def _as_data(data) -> np.ndarray:
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise InvalidArgument("data must be a samples x features matrix")
    if not np.all(np.isfinite(X)):
        raise InvalidArgument("data contains non-finite values")
    return X


def _sorted_eigh(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(values)[::-1]
    values = np.clip(values[order], 0.0, None)
    vectors = vectors[:, order]
    # fix each direction's sign so the largest loading is positive
    pivots = np.argmax(np.abs(vectors), axis=0)
    vectors = vectors * np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    return values, vectors


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (out_dim, d), orthonormal rows
    explained_variance: np.ndarray
    total_variance: float
    informative: int

    @property
    def out_dim(self) -> int:
        return self.components.shape[0]

    @property
    def rank_deficient(self) -> bool:
        return self.informative < self.out_dim

    @property
    def explained_fraction(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance


def pca_fit(data, out_dim: int) -> PcaModel:
    """Principal directions from the eigendecomposition of the sample covariance.

    When the data span fewer than ``out_dim`` directions the surplus
    components carry zero variance, their projections are zeroed, and a
    ``RuntimeWarning`` is issued.
    """
    X = _as_data(data)
    samples, d = X.shape
    if not 1 <= out_dim <= d:
        raise InvalidArgument(f"out_dim must lie in [1, {d}]")
    if samples <= out_dim:
        raise InvalidArgument("need more samples than output dimensions")
    mean = X.mean(axis=0)
    cov = np.cov(X - mean, rowvar=False).reshape(d, d)
    values, vectors = _sorted_eigh(cov)
    top = values[0] if values.size else 0.0
    informative = int(np.sum(values[:out_dim] > RANK_TOLERANCE * max(top, 1.0)))
    explained = values[:out_dim].copy()
    explained[informative:] = 0.0
    if informative < out_dim:
        warnings.warn(f"data span only {informative} of {out_dim} requested directions; "
                      "the remaining components are zero-padded", RuntimeWarning, stacklevel=2)
    return PcaModel(mean, vectors[:, :out_dim].T.copy(), explained, float(values.sum()), informative)


def pca_transform(model: PcaModel, data) -> np.ndarray:
    X = _as_data(data)
    if X.shape[1] != model.mean.size:
        raise InvalidArgument(f"expected {model.mean.size} features, got {X.shape[1]}")
    Z = (X - model.mean) @ model.components.T
    Z[:, model.informative:] = 0.0
    return Z


# ---------------------------------------------------------------------------
# FastICA


@dataclass
class IcaModel:
    mean: np.ndarray
    whitening: np.ndarray  # (k, d): centered data -> unit-covariance coordinates
    unmixing: np.ndarray   # (k, k): unit-norm rows acting on whitened data
    converged: np.ndarray  # per component
    iterations: np.ndarray

    @property
    def num_components(self) -> int:
        return self.unmixing.shape[0]

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


def whiten(X: np.ndarray, num_components: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (mean, whitening matrix) onto the leading ``num_components`` directions."""
    mean = X.mean(axis=0)
    d = X.shape[1]
    cov = np.cov(X - mean, rowvar=False).reshape(d, d)
    values, vectors = _sorted_eigh(cov)
    kept = values[:num_components]
    if kept.size == 0 or kept[-1] <= RANK_TOLERANCE * max(values[0], 1.0):
        raise DegenerateInstance(
            f"covariance has fewer than {num_components} non-zero directions; cannot whiten")
    return mean, vectors[:, :num_components].T / np.sqrt(kept)[:, None]


def ica_fit(data, num_components: int, seed: int = 0, max_iterations: int = 500,
            tolerance: float = 1e-6) -> IcaModel:
    """Deflation FastICA with the tanh contrast.

    Components are extracted one at a time; each new direction is kept
    orthogonal to the earlier ones by Gram-Schmidt.  A component counts as
    converged once ``|<w_new, w_old>| > 1 - tolerance``; otherwise it is
    flagged after ``max_iterations`` and the last iterate is kept.
    """
    X = _as_data(data)
    samples, d = X.shape
    if not 1 <= num_components <= d:
        raise InvalidArgument(f"num_components must lie in [1, {d}]")
    if samples < 10 * d:
        raise InvalidArgument(f"need at least {10 * d} samples for {d} features")
    mean, K = whiten(X, num_components)
    Z = (X - mean) @ K.T
    rng = np.random.default_rng(seed)
    W = np.zeros((num_components, num_components))
    converged = np.zeros(num_components, dtype=bool)
    iterations = np.zeros(num_components, dtype=int)
    for p in range(num_components):
        w = rng.standard_normal(num_components)
        w -= W[:p].T @ (W[:p] @ w)
        w /= np.linalg.norm(w)
        for it in range(1, max_iterations + 1):
            g = np.tanh(Z @ w)
            w_new = Z.T @ g / samples - np.mean(1.0 - g ** 2) * w
            w_new -= W[:p].T @ (W[:p] @ w_new)
            w_new /= np.linalg.norm(w_new)
            done = abs(float(w_new @ w)) > 1.0 - tolerance
            w = w_new
            if done:
                converged[p] = True
                break
        iterations[p] = it
        W[p] = w
    return IcaModel(mean, K, W, converged, iterations)


def ica_transform(model: IcaModel, data) -> np.ndarray:
    X = _as_data(data)
    if X.shape[1] != model.mean.size:
        raise InvalidArgument(f"expected {model.mean.size} features, got {X.shape[1]}")
    return (X - model.mean) @ model.whitening.T @ model.unmixing.T


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class Preprocessor:
    """PCA down to ``pca.out_dim`` dimensions, then FastICA within that subspace."""

    pca: PcaModel
    ica: Optional[IcaModel]

    @property
    def out_dim(self) -> int:
        return self.pca.out_dim

    def transform(self, data) -> np.ndarray:
        Z = pca_transform(self.pca, data)
        return Z if self.ica is None else ica_transform(self.ica, Z)


def fit_preprocessor(data, out_dim: int = 2, seed: int = 0, use_ica: bool = True) -> Preprocessor:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pca = pca_fit(data, out_dim)
    ica = None
    if use_ica:
        if pca.rank_deficient:
            raise DegenerateInstance(
                f"features span only {pca.informative} directions, {out_dim} needed for ICA")
        ica = ica_fit(pca_transform(pca, data), out_dim, seed=seed)
    return Preprocessor(pca, ica)


# ---------------------------------------------------------------------------
# serialization


def _arr(a) -> list:
    return np.asarray(a).tolist()


def preprocessor_to_dict(pre: Preprocessor) -> dict:
    p = pre.pca
    doc = {
        "format": "qcbr.preprocessor",
        "version": 1,
        "pca": {"mean": _arr(p.mean), "components": _arr(p.components),
                "explained_variance": _arr(p.explained_variance),
                "total_variance": p.total_variance, "informative": p.informative},
        "ica": None,
    }
    if pre.ica is not None:
        i = pre.ica
        doc["ica"] = {"mean": _arr(i.mean), "whitening": _arr(i.whitening),
                      "unmixing": _arr(i.unmixing), "converged": _arr(i.converged),
                      "iterations": _arr(i.iterations)}
    return doc


def preprocessor_from_dict(doc: dict) -> Preprocessor:
    if doc.get("format") != "qcbr.preprocessor":
        raise InvalidArgument("not a preprocessor document")
    p = doc["pca"]
    pca = PcaModel(np.array(p["mean"], dtype=float), np.array(p["components"], dtype=float),
                   np.array(p["explained_variance"], dtype=float), float(p["total_variance"]),
                   int(p["informative"]))
    ica = None
    if doc.get("ica") is not None:
        i = doc["ica"]
        ica = IcaModel(np.array(i["mean"], dtype=float), np.array(i["whitening"], dtype=float),
                       np.array(i["unmixing"], dtype=float), np.array(i["converged"], dtype=bool),
                       np.array(i["iterations"], dtype=int))
    return Preprocessor(pca, ica)
