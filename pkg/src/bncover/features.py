"""Linear feature extraction over layer pre-activation values.

Each analysed layer gets an affine map into a low-dimensional feature
space: feat(v) = (v / scale) @ W + B, with ``scale`` absent unless the
technique standardises neurons first.  Supported techniques: PCA (plain
and pre-scaled) and FastICA.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

TECHNIQUES = ("pca", "pca_scaled", "ica")

ICA_MAX_ITER = 500
ICA_TOL = 1e-6
SCALE_FLOOR = 1e-12


class FeatureFitError(ValueError):
    """Feature extraction could not produce the requested mapping."""


class IcaConvergenceError(FeatureFitError):
    """FastICA fixed-point iteration did not converge within its budget."""


@dataclass(frozen=True)
class FeatureMap:
    """Affine projection from one layer's neuron-value space.

    W has shape (layer size, components); B has shape (components,).
    ``mean``/``scale`` keep the fitted standardisation for reconstruction;
    projection itself only divides by ``scale`` (the mean is folded into B).
    """

    layer: int
    technique: str
    W: np.ndarray
    B: np.ndarray
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    seed: int | None = None
    explained_variance: np.ndarray | None = None

    def __post_init__(self):
        # one canonical memory layout: projections must be bit-identical
        # whether the map was just fitted or reloaded from a container
        for name in ("W", "B", "mean", "scale", "explained_variance"):
            a = getattr(self, name)
            if a is not None:
                a = np.ascontiguousarray(a, dtype=np.float64)
                a.flags.writeable = False
                object.__setattr__(self, name, a)

    @property
    def components(self) -> int:
        return self.W.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[0]

    def with_layer(self, layer: int) -> "FeatureMap":
        return replace(self, layer=layer)


def _flip_signs(W: np.ndarray) -> np.ndarray:
    """Deterministic sign convention: largest-|.| entry of each column > 0."""
    idx = np.argmax(np.abs(W), axis=0)
    signs = np.sign(W[idx, np.arange(W.shape[1])])
    signs[signs == 0] = 1.0
    return W * signs


def _check_input(X: np.ndarray, t: int):
    if t < 1:
        raise FeatureFitError(f"component count must be >= 1, got {t}")
    if X.ndim != 2 or X.shape[0] < 2:
        raise FeatureFitError("need a 2-d sample with at least 2 rows")
    if not np.all(np.isfinite(X)):
        raise FeatureFitError("sample contains non-finite values")
    if t > min(X.shape):
        raise FeatureFitError(
            f"cannot extract {t} components from a {X.shape[0]}x{X.shape[1]} sample"
        )


def _pca(X: np.ndarray, t: int):
    n = X.shape[0]
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    if s[0] <= 0.0:
        raise FeatureFitError("sample has zero variance on all neurons")
    rank = int(np.sum(s > s[0] * 1e-12))
    if rank < t:
        raise FeatureFitError(
            f"sample rank {rank} is smaller than the requested {t} components"
        )
    W = _flip_signs(Vt[:t].T)
    var = (s[:t] ** 2) / (n - 1)
    return mean, W, var


def _ica(X: np.ndarray, t: int, rng_seed: int):
    """FastICA with log-cosh contrast and symmetric decorrelation."""
    n = X.shape[0]
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    if s[0] <= 0.0:
        raise FeatureFitError("sample has zero variance on all neurons")
    rank = int(np.sum(s > s[0] * 1e-12))
    if rank < t:
        raise FeatureFitError(
            f"sample rank {rank} is smaller than the requested {t} components"
        )
    K = Vt[:t].T / s[:t] * np.sqrt(n)  # whitening: cov(Xc @ K) = I
    Z = Xc @ K

    rng = np.random.default_rng(rng_seed)
    W = rng.standard_normal((t, t))
    W = _sym_decorrelate(W)
    for _ in range(ICA_MAX_ITER):
        S = Z @ W.T
        G = np.tanh(S)
        g_prime = 1.0 - G ** 2
        W_new = (G.T @ Z) / n - g_prime.mean(axis=0)[:, None] * W
        W_new = _sym_decorrelate(W_new)
        lim = np.max(np.abs(np.abs(np.einsum("ij,ij->i", W_new, W)) - 1.0))
        W = W_new
        if lim < ICA_TOL:
            break
    else:
        raise IcaConvergenceError(
            f"FastICA did not converge in {ICA_MAX_ITER} iterations (lim {lim:.2e})"
        )
    W_full = _flip_signs(K @ W.T)
    return mean, W_full


def _sym_decorrelate(W: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(W @ W.T)
    vals = np.maximum(vals, 1e-18)
    return (vecs / np.sqrt(vals)) @ vecs.T @ W


def fit_feature_map(technique: str, layer_preacts, t: int, rng_seed: int = 0,
                    layer: int = -1) -> FeatureMap:
    """Fit an affine feature map on a (samples x neurons) pre-activation matrix.

    PCA components come out ordered by decreasing explained variance; ICA
    is deterministic given ``rng_seed``.
    """
    if technique not in TECHNIQUES:
        raise FeatureFitError(f"unknown technique {technique!r}")
    X = np.asarray(layer_preacts, dtype=np.float64)
    _check_input(X, t)

    if technique == "pca":
        mean, W, var = _pca(X, t)
        return FeatureMap(layer=layer, technique=technique, W=W, B=-(mean @ W),
                          mean=mean, scale=None, seed=rng_seed, explained_variance=var)
    if technique == "pca_scaled":
        mean = X.mean(axis=0)
        scale = np.maximum(X.std(axis=0), SCALE_FLOOR)
        Z = (X - mean) / scale
        mean_z, W, var = _pca(Z, t)  # mean_z only carries rounding residue
        B = -((mean / scale + mean_z) @ W)
        return FeatureMap(layer=layer, technique=technique, W=W, B=B,
                          mean=mean, scale=scale, seed=rng_seed, explained_variance=var)
    mean, W = _ica(X, t, rng_seed)
    return FeatureMap(layer=layer, technique="ica", W=W, B=-(mean @ W),
                      mean=mean, scale=None, seed=rng_seed, explained_variance=None)


def project(fm: FeatureMap, preact) -> np.ndarray:
    """Affine image of one pre-activation vector in feature space."""
    v = np.asarray(preact, dtype=np.float64).ravel()
    if v.shape[0] != fm.input_size:
        raise ValueError(f"expected vector of length {fm.input_size}, got {v.shape[0]}")
    if fm.scale is not None:
        v = v / fm.scale
    return v @ fm.W + fm.B


def project_dataset(fm: FeatureMap, preacts) -> np.ndarray:
    """Row-wise projection of a (samples x neurons) matrix.

    Each row goes through exactly the single-vector arithmetic of
    ``project``: partition boundaries are fitted from these values, so
    later per-input projections must reproduce them bit-for-bit.
    """
    X = np.asarray(preacts, dtype=np.float64)
    if X.ndim != 2 or (X.size and X.shape[1] != fm.input_size):
        raise ValueError(f"expected matrix with {fm.input_size} columns")
    if X.shape[0] == 0:
        return np.empty((0, fm.components))
    return np.stack([project(fm, row) for row in X])


def reconstruct(fm: FeatureMap, feats) -> np.ndarray:
    """Pseudo-inverse of ``project`` for (ortho-columned) PCA maps."""
    if fm.technique not in ("pca", "pca_scaled"):
        raise FeatureFitError("reconstruction is only defined for PCA maps")
    F = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    V = (F - fm.B) @ fm.W.T
    if fm.scale is not None:
        V = V * fm.scale
    return V if np.asarray(feats).ndim == 2 else V[0]
