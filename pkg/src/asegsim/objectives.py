"""Regularized finite-sum objectives with gradient and Hessian-vector oracles.

Both losses carry an explicit l2 penalty ``lam * ||x||^2`` and are kept
un-halved:

* quadratic:  (1/n) sum_j (<x, a_j> - b_j)^2 + lam ||x||^2
* logistic:   (1/n) sum_j ln(1 + exp(-b_j <x, a_j>)) + lam ||x||^2,  b_j in {-1,+1}

Every objective exposes ``value``, ``grad``, ``hess_vec`` and a row-sampled
``stochastic_grad`` so solvers never need dense Hessians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import ReferenceSolveError

QUADRATIC = "quadratic"
LOGISTIC = "logistic"


@dataclass(frozen=True)
class LossModel:
    """Loss family plus l2 penalty strength."""

    kind: str = QUADRATIC
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in (QUADRATIC, LOGISTIC):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not self.lam >= 0.0:
            raise ValueError("lam must be nonnegative")


class Dataset:
    """Sparse feature rows plus one label per row."""

    def __init__(self, features, labels):
        if not sp.issparse(features):
            features = sp.csr_matrix(np.asarray(features, dtype=float))
        self.features = features.tocsr().astype(float)
        # cached transpose: A.T @ v dominates gradient cost otherwise
        self.features_t = self.features.T.tocsr()
        self.labels = np.asarray(labels, dtype=float)
        if self.labels.ndim != 1:
            raise ValueError("labels must be one-dimensional")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"row count mismatch: {self.features.shape[0]} feature rows, "
                f"{self.labels.shape[0]} labels"
            )
        if self.features.shape[0] < 1:
            raise ValueError("dataset needs at least one row")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.features[rows], self.labels[rows])


def normalize_classification_labels(ds: Dataset) -> Dataset:
    """Map a two-class label column onto {-1, +1} (larger value becomes +1)."""
    values = np.unique(ds.labels)
    if set(values.tolist()) <= {-1.0, 1.0}:
        return ds
    if values.size != 2:
        raise ValueError(
            f"expected exactly two label values for classification, got {values.size}"
        )
    labels = np.where(ds.labels == values[1], 1.0, -1.0)
    return Dataset(ds.features, labels)


class Objective:
    """One node's regularized empirical risk over its local rows."""

    def __init__(self, model: LossModel, data: Dataset):
        self.model = model
        self.data = data
        if model.kind == LOGISTIC and not np.all(np.isin(data.labels, (-1.0, 1.0))):
            raise ValueError(
                "logistic loss needs labels in {-1,+1}; "
                "run normalize_classification_labels first"
            )

    @property
    def dim(self) -> int:
        return self.data.dim

    @property
    def n_points(self) -> int:
        return self.data.n

    def _check_point(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected point of shape ({self.dim},), got {x.shape}")
        return x

    def value(self, x) -> float:
        x = self._check_point(x)
        A, b = self.data.features, self.data.labels
        if self.model.kind == QUADRATIC:
            r = A @ x - b
            data_term = float(r @ r) / self.data.n
        else:
            z = b * (A @ x)
            data_term = float(np.mean(np.logaddexp(0.0, -z)))
        return data_term + self.model.lam * float(x @ x)

    def grad(self, x) -> np.ndarray:
        x = self._check_point(x)
        return self._data_grad_rows(x, None) + 2.0 * self.model.lam * x

    def hess_vec(self, x, v) -> np.ndarray:
        x = self._check_point(x)
        v = self._check_point(v)
        A, At, b = self.data.features, self.data.features_t, self.data.labels
        if self.model.kind == QUADRATIC:
            data_term = 2.0 * (At @ (A @ v)) / self.data.n
        else:
            z = b * (A @ x)
            w = expit(z) * expit(-z)
            data_term = (At @ (w * (A @ v))) / self.data.n
        return data_term + 2.0 * self.model.lam * v

    def gram_vec(self, v) -> np.ndarray:
        """Apply (1/n) A^T A, the data Gram operator without loss curvature."""
        v = self._check_point(v)
        A, At = self.data.features, self.data.features_t
        return (At @ (A @ v)) / self.data.n

    # row-sampled pieces, used by the inexact subproblem solvers

    def sample_rows(self, rng, size: int):
        return rng.integers(0, self.data.n, size=size)

    def stochastic_grad(self, x, rows) -> np.ndarray:
        x = self._check_point(x)
        return self._data_grad_rows(x, rows) + 2.0 * self.model.lam * x

    def _data_grad_rows(self, x, rows) -> np.ndarray:
        A, At, b = self.data.features, self.data.features_t, self.data.labels
        if rows is not None:
            rows = np.asarray(rows, dtype=int)
            A, b = A[rows], b[rows]
            At = A.T
        m = A.shape[0]
        if self.model.kind == QUADRATIC:
            return 2.0 * (At @ (A @ x - b)) / m
        z = b * (A @ x)
        return (At @ (-b * expit(-z))) / m


class MixtureObjective:
    """Uniform average of component objectives sharing one loss model."""

    def __init__(self, components):
        components = list(components)
        if not components:
            raise ValueError("mixture needs at least one component")
        dim = components[0].dim
        model = components[0].model
        for c in components[1:]:
            if c.dim != dim:
                raise ValueError("mixture components disagree on dimension")
            if c.model != model:
                raise ValueError("mixture components disagree on loss model")
        self.components = components
        self.model = model
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def n_points(self) -> int:
        return sum(c.n_points for c in self.components)

    def value(self, x) -> float:
        return sum(c.value(x) for c in self.components) / len(self.components)

    def grad(self, x) -> np.ndarray:
        out = np.zeros(self._dim)
        for c in self.components:
            out += c.grad(x)
        return out / len(self.components)

    def hess_vec(self, x, v) -> np.ndarray:
        out = np.zeros(self._dim)
        for c in self.components:
            out += c.hess_vec(x, v)
        return out / len(self.components)

    def gram_vec(self, v) -> np.ndarray:
        out = np.zeros(self._dim)
        for c in self.components:
            out += c.gram_vec(v)
        return out / len(self.components)

    def sample_rows(self, rng, size: int):
        # one (component, row) pair per draw keeps the estimator unbiased for
        # the uniform mixture even when component row counts differ
        for c in self.components:
            if isinstance(c, MixtureObjective):
                raise TypeError("row sampling supports one level of mixing only")
        comps = rng.integers(0, len(self.components), size=size)
        rows = np.empty(size, dtype=int)
        for i, ci in enumerate(comps):
            rows[i] = rng.integers(0, self.components[ci].data.n)
        return comps, rows

    def stochastic_grad(self, x, rows) -> np.ndarray:
        comps, rows = rows
        out = np.zeros(self._dim)
        for ci in np.unique(comps):
            mask = comps == ci
            part = self.components[ci]._data_grad_rows(x, rows[mask])
            out += np.count_nonzero(mask) * part
        out /= len(comps)
        return out + 2.0 * self.model.lam * np.asarray(x, dtype=float)


@dataclass
class SmoothnessEstimate:
    value: float
    converged: bool
    iterations: int


def power_iteration(op, dim: int, *, tol: float = 1e-10, max_iters: int = 5000,
                    seed: int = 0):
    """Top eigenvalue of a symmetric PSD operator given as a matvec.

    Returns (eigenvalue, converged, iterations). Convergence is a relative
    change below ``tol`` between successive Rayleigh quotients.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    eig = 0.0
    for it in range(1, max_iters + 1):
        w = op(v)
        eig_new = float(v @ w)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0, True, it
        v = w / norm_w
        if it > 1 and abs(eig_new - eig) <= tol * max(abs(eig_new), 1e-30):
            return eig_new, True, it
        eig = eig_new
    return eig, False, max_iters


def estimate_smoothness(obj, *, tol: float = 1e-10, max_iters: int = 5000,
                        seed: int = 0) -> SmoothnessEstimate:
    """Smoothness constant L of the regularized objective.

    Quadratic: exact top Hessian eigenvalue by power iteration (the Hessian is
    constant). Logistic: the bound lam_max((1/n) A^T A)/2 + 2 lam, using the
    1/4 cap on the logistic curvature times the un-halved convention factor 2.
    """
    if obj.model.kind == QUADRATIC:
        x0 = np.zeros(obj.dim)
        eig, ok, it = power_iteration(lambda v: obj.hess_vec(x0, v), obj.dim,
                                      tol=tol, max_iters=max_iters, seed=seed)
        return SmoothnessEstimate(float(eig), ok, it)
    eig, ok, it = power_iteration(obj.gram_vec, obj.dim,
                                  tol=tol, max_iters=max_iters, seed=seed)
    return SmoothnessEstimate(float(eig) / 2.0 + 2.0 * obj.model.lam, ok, it)


def dense_gram(obj) -> np.ndarray:
    """Materialize the averaged data Gram (1/n) A^T A column by column."""
    d = obj.dim
    G = np.empty((d, d))
    e = np.zeros(d)
    for j in range(d):
        e[j] = 1.0
        G[:, j] = obj.gram_vec(e)
        e[j] = 0.0
    return G


def estimate_mu(obj) -> float:
    """Strong convexity modulus: 2 lam + 2 lam_min(Gram) for quadratics,
    the penalty floor 2 lam for logistic."""
    if obj.model.kind == QUADRATIC:
        eigs = np.linalg.eigvalsh(dense_gram(obj))
        return 2.0 * obj.model.lam + 2.0 * max(float(eigs[0]), 0.0)
    return 2.0 * obj.model.lam


@dataclass
class ReferenceSolution:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int


def solve_reference(obj, *, tol: float = 1e-12, max_iters: int = 200_000,
                    mu: float | None = None, smoothness: float | None = None,
                    x0=None) -> ReferenceSolution:
    """High-accuracy minimizer by accelerated full-gradient descent.

    Uses the constant-momentum strongly convex scheme when a positive modulus
    is available, otherwise the t_k momentum sequence. Stops at
    ``||grad|| <= tol``; raises ReferenceSolveError (carrying the best iterate)
    if the cap is hit first.
    """
    L = smoothness if smoothness is not None else estimate_smoothness(obj).value
    mu_eff = mu if mu is not None else estimate_mu(obj)
    if L <= 0.0:
        raise ValueError("need a positive smoothness constant")

    x = np.zeros(obj.dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    y = x.copy()
    if mu_eff > 0.0:
        kappa = L / mu_eff
        beta = (np.sqrt(kappa) - 1.0) / (np.sqrt(kappa) + 1.0)
    t = 1.0
    best_norm, best_x = np.inf, x.copy()

    for it in range(max_iters):
        g = obj.grad(y)
        gn = float(np.linalg.norm(g))
        if gn < best_norm:
            best_norm, best_x = gn, y.copy()
        if gn <= tol:
            return ReferenceSolution(y, obj.value(y), gn, it)
        x_new = y - g / L
        if mu_eff > 0.0:
            y = x_new + beta * (x_new - x)
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        x = x_new

    raise ReferenceSolveError(
        f"reference solve did not reach ||grad|| <= {tol:g} in {max_iters} "
        f"iterations (best {best_norm:.3e})",
        best_x=best_x, best_grad_norm=best_norm,
    )


@dataclass
class ProblemConstants:
    """Estimated or exact run constants bundled for tuning and reporting."""

    mu: float
    smoothness: float
    server_smoothness: float
    delta: float | None = None
    sigma_sim_sq: float | None = None
    x_star: np.ndarray | None = None
    r_star: float | None = None
