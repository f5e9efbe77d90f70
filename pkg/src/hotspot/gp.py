"""Heteroscedastic Gaussian-process regression.

Zero-mean GP with a squared-exponential kernel and a diagonal, per-point
noise matrix. Two inference back ends share one interface (``mean``,
``variance``, ``cov``) over a fixed set of test points:

* :class:`ExactGP` -- Cholesky of ``K(X, X) + Q``.
* :class:`SparseGP` -- FITC through ``S`` inducing points.

The conditional predictive variance of an arm is the variance left at the
arm's test points after hypothetically observing them once more with the
arm's noise level.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist

JITTER = 1e-8


class FactorizationError(LinAlgError):
    """Raised when a Gram matrix is not numerically positive definite."""


@dataclass(frozen=True)
class Hyperparams:
    length_scale: float = 2.0
    signal_variance: float = 100.0
    noise_variances: tuple[float, ...] = (0.75, 2.25, 3.75)

    def __post_init__(self):
        if self.length_scale <= 0 or self.signal_variance <= 0:
            raise ValueError("length scale and signal variance must be positive")
        nv = tuple(float(v) for v in self.noise_variances)
        if any(v <= 0 for v in nv):
            raise ValueError("noise variances must be positive")
        if any(b < a for a, b in zip(nv, nv[1:])):
            raise ValueError("noise variances must be non-decreasing with altitude")
        object.__setattr__(self, "noise_variances", nv)
        object.__setattr__(self, "length_scale", float(self.length_scale))
        object.__setattr__(self, "signal_variance", float(self.signal_variance))


@dataclass(frozen=True, eq=False)
class TrainingSet:
    X: np.ndarray
    Y: np.ndarray
    noise: np.ndarray
    levels: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float).reshape(-1, 2)
        Y = np.asarray(self.Y, dtype=float).ravel()
        noise = np.asarray(self.noise, dtype=float).ravel()
        if not (len(X) == len(Y) == len(noise)):
            raise ValueError("X, Y and noise must have equal lengths")
        if np.any(noise <= 0):
            raise ValueError("noise variances must be strictly positive")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "noise", noise)
        if self.levels is not None:
            object.__setattr__(self, "levels", np.asarray(self.levels, dtype=int).ravel())

    def __len__(self):
        return len(self.Y)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0), np.zeros(0, dtype=int))

    def append(self, X, Y, noise, level=None) -> "TrainingSet":
        X = np.asarray(X, dtype=float).reshape(-1, 2)
        noise = np.broadcast_to(np.asarray(noise, dtype=float), (len(X),))
        levels = None
        if self.levels is not None and level is not None:
            levels = np.concatenate([self.levels, np.full(len(X), level, dtype=int)])
        return TrainingSet(np.vstack([self.X, X]), np.concatenate([self.Y, np.ravel(Y)]),
                           np.concatenate([self.noise, noise]), levels)


@dataclass(frozen=True, eq=False)
class Posterior:
    mean: np.ndarray
    variance: np.ndarray


def se_kernel(x, x2, hyper: Hyperparams):
    """Squared-exponential covariance.

    Accepts single points (returns a float) or ``(n, 2)`` / ``(m, 2)`` arrays
    (returns an ``(n, m)`` matrix).
    """
    a = np.asarray(x, dtype=float)
    b = np.asarray(x2, dtype=float)
    scalar = a.ndim == 1 and b.ndim == 1
    d2 = cdist(a.reshape(-1, 2), b.reshape(-1, 2), "sqeuclidean")
    k = hyper.signal_variance * np.exp(-0.5 * d2 / hyper.length_scale**2)
    return float(k[0, 0]) if scalar else k


def _chol(A, what="Gram matrix"):
    try:
        return cholesky(A, lower=True, check_finite=False)
    except LinAlgError:
        raise FactorizationError(f"{what} is not positive definite") from None


def _chol_jittered(K, scale, what="inducing Gram matrix"):
    """Cholesky with the smallest escalating jitter ``j * scale`` that works.

    Jitter starts at 1e-12 because any jitter perturbs the FITC posterior in
    proportion to ``j * scale / noise``; beyond ``JITTER`` it is a last resort.
    """
    try:
        return cholesky(K, lower=True, check_finite=False)
    except LinAlgError:
        pass
    eye = np.eye(len(K))
    for j in (1e-12, 1e-11, 1e-10, 1e-9, JITTER, 1e-7, 1e-6, 1e-5, 1e-4):
        try:
            return cholesky(K + j * scale * eye, lower=True, check_finite=False)
        except LinAlgError:
            continue
    raise FactorizationError(f"{what} is singular even after jitter")


def _prior_stack(test_points, idx, hyper, prior_blocks):
    if prior_blocks is not None:
        return np.array(prior_blocks, dtype=float, copy=True)
    pts = test_points[idx]
    d2 = np.sum((pts[:, :, None, :] - pts[:, None, :, :]) ** 2, axis=-1)
    return hyper.signal_variance * np.exp(-0.5 * d2 / hyper.length_scale**2)


def _clamp_var(v):
    return np.where(v < 0, 0.0, v)


class ExactGP:
    """Exact posterior over ``test_points`` given ``train``.

    Whitened cross-covariances ``L^-1 K(X, X*)`` are computed lazily per
    test-point column, so scoring a handful of arms costs only their columns.
    ``cross`` may supply a precomputed ``K(X*, X)``.
    """

    def __init__(self, train: TrainingSet, hyper: Hyperparams, test_points, cross=None):
        self.train = train
        self.hyper = hyper
        self.test_points = np.asarray(test_points, dtype=float).reshape(-1, 2)
        n = len(train)
        self.n = n
        self.cross = cross
        if n:
            K = se_kernel(train.X, train.X, hyper)
            K[np.diag_indices(n)] += train.noise
            self.L = _chol(K, "K(X, X) + Q")
            self.alpha = cho_solve((self.L, True), train.Y, check_finite=False)
        self._V = np.empty((n, len(self.test_points)))
        self._have = np.zeros(len(self.test_points), dtype=bool)
        self._mean = None

    def _ensure(self, idx):
        missing = idx[~self._have[idx]]
        if len(missing) and self.n:
            if self.cross is not None:
                Ks = self.cross[missing].T
            else:
                Ks = se_kernel(self.train.X, self.test_points[missing], self.hyper)
            self._V[:, missing] = solve_triangular(self.L, Ks, lower=True, check_finite=False)
        self._have[missing] = True

    def _index(self, idx):
        if idx is None:
            return np.arange(len(self.test_points))
        return np.asarray(idx, dtype=int)

    def mean(self, idx=None) -> np.ndarray:
        if self._mean is None:
            if self.n == 0:
                self._mean = np.zeros(len(self.test_points))
            elif self.cross is not None:
                self._mean = self.cross @ self.alpha
            else:
                self._mean = np.empty(len(self.test_points))
                for s in range(0, len(self.test_points), 4096):
                    blk = self.test_points[s:s + 4096]
                    self._mean[s:s + 4096] = se_kernel(blk, self.train.X, self.hyper) @ self.alpha
        return self._mean if idx is None else self._mean[self._index(idx)]

    def variance(self, idx=None) -> np.ndarray:
        idx = self._index(idx)
        prior = np.full(len(idx), self.hyper.signal_variance)
        if self.n == 0:
            return prior
        self._ensure(idx)
        V = self._V[:, idx]
        return _clamp_var(prior - np.einsum("ij,ij->j", V, V))

    def cov(self, idx, prior_block=None) -> np.ndarray:
        idx = self._index(idx)
        pb = None if prior_block is None else prior_block[None]
        return self.cov_stack(idx[None], pb)[0]

    def cov_stack(self, idx, prior_blocks=None) -> np.ndarray:
        """Covariance blocks for a ``(g, m)`` stack of index rows, shape ``(g, m, m)``."""
        idx = np.asarray(idx, dtype=int)
        P = _prior_stack(self.test_points, idx, self.hyper, prior_blocks)
        if self.n:
            self._ensure(np.unique(idx))
            V = self._V[:, idx].transpose(1, 0, 2)
            P -= V.transpose(0, 2, 1) @ V
        return P


class SparseGP:
    """FITC posterior through inducing points ``Z``.

    ``cache`` (a dict) may be shared across models with the same ``Z``,
    hyperparameters and test points; it holds the inducing Cholesky factor and
    the whitened test cross-covariances, which do not change as data arrive.
    """

    def __init__(self, train: TrainingSet, hyper: Hyperparams, test_points, inducing, cache=None):
        self.train = train
        self.hyper = hyper
        self.test_points = np.asarray(test_points, dtype=float).reshape(-1, 2)
        Z = np.asarray(inducing, dtype=float).reshape(-1, 2)
        if len(Z) < 1:
            raise ValueError("need at least one inducing point")
        self.Z = Z
        self.cache = {} if cache is None else cache
        sf2 = hyper.signal_variance
        if "Luu" not in self.cache:
            self.cache["Luu"] = _chol_jittered(se_kernel(Z, Z, hyper), sf2)
            self.cache["Vs"] = np.empty((len(Z), len(self.test_points)))
            self.cache["have"] = np.zeros(len(self.test_points), dtype=bool)
        self.Luu = self.cache["Luu"]
        n = len(train)
        self.n = n
        S = len(Z)
        if n:
            Kuf = se_kernel(Z, train.X, hyper)
            Vf = solve_triangular(self.Luu, Kuf, lower=True, check_finite=False)
            lam = np.maximum(sf2 - np.einsum("ij,ij->j", Vf, Vf), 0.0) + train.noise
            Vl = Vf / np.sqrt(lam)
            A = Vl @ Vl.T
            A[np.diag_indices(S)] += 1.0
            self.La = _chol(A, "FITC system")
            b = solve_triangular(self.La, Vl @ (train.Y / np.sqrt(lam)), lower=True, check_finite=False)
            self.w = solve_triangular(self.La.T, b, lower=False, check_finite=False)
        self._C = {}
        self._mean = None

    def _Vs(self, idx):
        have = self.cache["have"]
        Vs = self.cache["Vs"]
        missing = idx[~have[idx]]
        if len(missing):
            Kus = se_kernel(self.Z, self.test_points[missing], self.hyper)
            Vs[:, missing] = solve_triangular(self.Luu, Kus, lower=True, check_finite=False)
            have[missing] = True
        return Vs[:, idx]

    def _index(self, idx):
        if idx is None:
            return np.arange(len(self.test_points))
        return np.asarray(idx, dtype=int)

    def mean(self, idx=None) -> np.ndarray:
        if self._mean is None:
            if self.n == 0:
                self._mean = np.zeros(len(self.test_points))
            else:
                self._mean = self._Vs(np.arange(len(self.test_points))).T @ self.w
        return self._mean if idx is None else self._mean[self._index(idx)]

    def _parts(self, idx):
        Vs = self._Vs(idx)
        if self.n == 0:
            return Vs, None
        C = solve_triangular(self.La, Vs, lower=True, check_finite=False)
        return Vs, C

    def variance(self, idx=None) -> np.ndarray:
        idx = self._index(idx)
        Vs, C = self._parts(idx)
        v = np.full(len(idx), self.hyper.signal_variance)
        if C is not None:
            # K** - Q** + Q** - (reduction) == sf2 - |Vs|^2 + |C|^2 on the diagonal
            v = v - np.einsum("ij,ij->j", Vs, Vs) + np.einsum("ij,ij->j", C, C)
        return _clamp_var(v)

    def cov(self, idx, prior_block=None) -> np.ndarray:
        idx = self._index(idx)
        pb = None if prior_block is None else prior_block[None]
        return self.cov_stack(idx[None], pb)[0]

    def cov_stack(self, idx, prior_blocks=None) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        P = _prior_stack(self.test_points, idx, self.hyper, prior_blocks)
        g, m = idx.shape
        Vs, C = self._parts(idx.ravel())
        if C is not None:
            Vs = Vs.reshape(-1, g, m).transpose(1, 0, 2)
            C = C.reshape(-1, g, m).transpose(1, 0, 2)
            P -= Vs.transpose(0, 2, 1) @ Vs
            P += C.transpose(0, 2, 1) @ C
        return P


class ArmPriors:
    """Prior quantities for index blocks that depend only on geometry and hyperparameters.

    For block ``I`` with self-noise ``s`` this holds ``K_II``, the inverse of
    ``K_II + s I`` and its log-determinant. Safe to share across episodes.
    """

    def __init__(self, test_points, hyper: Hyperparams, blocks, noise):
        self.test_points = np.asarray(test_points, dtype=float)
        self.hyper = hyper
        self.blocks = [np.asarray(b, dtype=int) for b in blocks]
        self.noise = np.asarray(noise, dtype=float)
        self._K: dict[int, np.ndarray] = {}
        self._inv: dict[int, tuple[np.ndarray, float]] = {}

    def K(self, b: int) -> np.ndarray:
        out = self._K.get(b)
        if out is None:
            pts = self.test_points[self.blocks[b]]
            out = self._K[b] = se_kernel(pts, pts, self.hyper)
        return out

    def inverse(self, b: int):
        out = self._inv.get(b)
        if out is None:
            A = self.K(b).copy()
            A[np.diag_indices(len(A))] += self.noise[b]
            L = _chol(A, "K_II + sI")
            Linv = solve_triangular(L, np.eye(len(A)), lower=True, check_finite=False)
            out = self._inv[b] = (Linv.T @ Linv, 2.0 * float(np.sum(np.log(np.diag(L)))))
        return out


def _add_gram(A, H):
    """``A += H^T H`` in place."""
    A += H.T @ H
    return A


class IncrementalGP:
    """Exact heteroscedastic posterior grown one batch of measurements at a time.

    Keeps the Cholesky factor of ``K(X, X) + Q`` together with the whitened
    cross-covariance ``V = L^-1 K(X, X*)``, so each batch of ``r`` new points
    costs ``O(r n L)`` rather than a refactorisation. With ``priors`` set it
    also tracks, per index block, ``(P_I + s I)^-1`` and its log-determinant
    through rank-``r`` Woodbury updates; these give the conditional predictive
    variance and the mutual-information gain of observing the block.
    """

    def __init__(self, hyper: Hyperparams, test_points, priors: ArmPriors | None = None):
        self.hyper = hyper
        self.test_points = np.asarray(test_points, dtype=float).reshape(-1, 2)
        self.priors = priors
        m = len(self.test_points)
        self.X = np.zeros((0, 2))
        self.Y = np.zeros(0)
        self.noise = np.zeros(0)
        self.L = np.zeros((0, 0))
        self.V = np.zeros((0, m))
        self.z = np.zeros(0)
        self._mean = np.zeros(m)
        self._var = np.full(m, hyper.signal_variance)
        self._blk: dict[int, list] = {}

    @property
    def n(self) -> int:
        return len(self.Y)

    @property
    def train(self) -> TrainingSet:
        return TrainingSet(self.X, self.Y, self.noise)

    def add(self, X, Y, noise):
        Xn = np.asarray(X, dtype=float).reshape(-1, 2)
        Yn = np.asarray(Y, dtype=float).ravel()
        qn = np.broadcast_to(np.asarray(noise, dtype=float), (len(Xn),)).copy()
        if np.any(qn <= 0):
            raise ValueError("noise variances must be strictly positive")
        r, n = len(Xn), self.n
        Knn = se_kernel(Xn, Xn, self.hyper)
        Knn[np.diag_indices(r)] += qn
        if n:
            B = solve_triangular(self.L, se_kernel(self.X, Xn, self.hyper), lower=True, check_finite=False).T
            S = Knn - B @ B.T
        else:
            B = np.zeros((r, 0))
            S = Knn
        L22 = _chol(S, "K(X, X) + Q")
        Kns = se_kernel(Xn, self.test_points, self.hyper)
        Vn = solve_triangular(L22, Kns - B @ self.V, lower=True, check_finite=False)
        zn = solve_triangular(L22, Yn - B @ self.z, lower=True, check_finite=False)
        L = np.zeros((n + r, n + r))
        L[:n, :n] = self.L
        L[n:, :n] = B
        L[n:, n:] = L22
        self.L = L
        self.V = np.vstack([self.V, Vn])
        self.z = np.concatenate([self.z, zn])
        self.X = np.vstack([self.X, Xn])
        self.Y = np.concatenate([self.Y, Yn])
        self.noise = np.concatenate([self.noise, qn])
        self._mean += Vn.T @ zn
        self._var -= np.einsum("ij,ij->j", Vn, Vn)

    def _index(self, idx):
        return slice(None) if idx is None else np.asarray(idx, dtype=int)

    def mean(self, idx=None) -> np.ndarray:
        return self._mean[self._index(idx)]

    def variance(self, idx=None) -> np.ndarray:
        return _clamp_var(self._var[self._index(idx)])

    def cov(self, idx, prior_block=None) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        return self.cov_stack(idx[None], None if prior_block is None else prior_block[None])[0]

    def cov_stack(self, idx, prior_blocks=None) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        P = _prior_stack(self.test_points, idx, self.hyper, prior_blocks)
        if self.n:
            V = self.V[:, idx].transpose(1, 0, 2)
            P -= V.transpose(0, 2, 1) @ V
        return P

    # -- per-block tracking ------------------------------------------------

    def _catch_up(self, blocks):
        """Bring ``(P_I + sI)^-1`` and its log-determinant up to date for ``blocks``."""
        pri = self.priors
        todo: dict[tuple, list[int]] = {}
        for b in blocks:
            st = self._blk.get(b)
            if st is None:
                Ainv, logdet = pri.inverse(b)
                st = self._blk[b] = [Ainv, logdet, 0]
            if st[2] < self.n:
                todo.setdefault((len(pri.blocks[b]), st[2]), []).append(b)
        for (m, done), bs in todo.items():
            r = self.n - done
            I = np.stack([pri.blocks[b] for b in bs])
            U = self.V[done:, I].transpose(1, 2, 0)  # (g, m, r)
            if r >= m:
                # cheaper to rebuild from the full whitened block
                V = self.V[:, I].transpose(1, 0, 2)
                A = np.stack([pri.K(b) for b in bs]) - V.transpose(0, 2, 1) @ V
                A += pri.noise[bs][:, None, None] * np.eye(m)
                Lc = np.linalg.cholesky(A)
                Linv = np.linalg.inv(Lc)
                Ainv = Linv.transpose(0, 2, 1) @ Linv
                logdet = 2.0 * np.log(np.einsum("gii->gi", Lc)).sum(axis=1)
                for j, b in enumerate(bs):
                    self._blk[b] = [Ainv[j], float(logdet[j]), self.n]
                continue
            if m >= 64:
                # large blocks: update in place, one at a time, to avoid copying stacks
                for j, b in enumerate(bs):
                    st = self._blk[b]
                    Uj = U[j]
                    G = st[0] @ Uj
                    Lm = _chol(np.eye(r) - Uj.T @ G, "Woodbury core")
                    H = solve_triangular(Lm, G.T, lower=True, check_finite=False)
                    st[0] = st[0] + H.T @ H if st[2] == 0 else _add_gram(st[0], H)
                    st[1] += 2.0 * float(np.sum(np.log(np.diag(Lm))))
                    st[2] = self.n
                continue
            Ainv = np.stack([self._blk[b][0] for b in bs])
            G = Ainv @ U
            M = np.eye(r) - U.transpose(0, 2, 1) @ G
            Lm = np.linalg.cholesky(M)
            H = np.linalg.solve(Lm, G.transpose(0, 2, 1))  # (g, r, m)
            Ainv += H.transpose(0, 2, 1) @ H
            dlog = 2.0 * np.log(np.einsum("gii->gi", Lm)).sum(axis=1)
            for j, b in enumerate(bs):
                st = self._blk[b]
                self._blk[b] = [Ainv[j], st[1] + float(dlog[j]), self.n]

    def block_cpv(self, blocks) -> list[np.ndarray]:
        """Conditional predictive variance for each block, ``s - s^2 diag((P + sI)^-1)``."""
        self._catch_up(blocks)
        out = []
        for b in blocks:
            s = self.priors.noise[b]
            out.append(_clamp_var(s - s * s * np.diag(self._blk[b][0])))
        return out

    def block_information(self, blocks) -> np.ndarray:
        """``0.5 log det(I + P_I / s)`` for each block."""
        self._catch_up(blocks)
        pri = self.priors
        return np.array([0.5 * (self._blk[b][1] - len(pri.blocks[b]) * np.log(pri.noise[b])) for b in blocks])


def posterior(train: TrainingSet, test_points, hyper: Hyperparams) -> Posterior:
    pts = np.asarray(test_points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("test_points must be non-empty")
    gp = ExactGP(train, hyper, pts)
    return Posterior(gp.mean(), gp.variance())


def sparse_posterior(train: TrainingSet, test_points, inducing, hyper: Hyperparams) -> Posterior:
    pts = np.asarray(test_points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("test_points must be non-empty")
    gp = SparseGP(train, hyper, pts, inducing)
    return Posterior(gp.mean(), gp.variance())


def cpv_from_cov(P: np.ndarray, noise_variance) -> np.ndarray:
    """Diagonal of ``P - P (P + s I)^-1 P``.

    This is the variance at a block of test points after they are observed
    once more with noise ``s``; it equals the plain posterior variance of the
    training set augmented with those points. ``P`` may be a single block or a
    ``(g, m, m)`` stack (with ``s`` scalar or one value per block).
    """
    if P.ndim == 2:
        A = P.copy()
        A[np.diag_indices(len(A))] += noise_variance
        try:
            L = cholesky(A, lower=True, check_finite=False)
        except LinAlgError:
            A[np.diag_indices(len(A))] += JITTER * max(1.0, float(np.max(np.diag(P))))
            L = _chol(A, "conditioned covariance")
        W = solve_triangular(L, P, lower=True, check_finite=False)
        return _clamp_var(np.diag(P) - np.einsum("ij,ij->j", W, W))
    m = P.shape[-1]
    s = np.broadcast_to(np.asarray(noise_variance, dtype=float), (len(P),))
    A = P + s[:, None, None] * np.eye(m)
    X = np.linalg.solve(A, P)
    diag = np.einsum("gii->gi", P)
    return _clamp_var(diag - np.einsum("gij,gij->gj", P, X))


def conditional_predictive_variance(train: TrainingSet, arm, grid, hyper: Hyperparams,
                                    method: str = "block", model=None) -> np.ndarray:
    """CPV at the arm's test points, in the order of ``arm.test_indices``.

    ``method="augmented"`` builds ``X' = X + x*_I`` with the arm's noise on the
    appended rows and evaluates the dense posterior directly; ``"block"``
    conditions the current posterior covariance block instead (same value,
    far cheaper). Existing rows keep their own noise in both.
    """
    idx = np.asarray(arm.test_indices)
    s2 = grid.levels[arm.level].noise_variance
    if method == "augmented":
        pts = grid.test_points[idx]
        aug = train.append(pts, np.zeros(len(pts)), s2)
        return posterior(aug, pts, hyper).variance
    if method != "block":
        raise ValueError(f"unknown CPV method {method!r}")
    if model is None:
        model = ExactGP(train, hyper, grid.test_points)
    return cpv_from_cov(model.cov(idx), s2)


def mutual_information_gain(P: np.ndarray, noise_variance: float) -> float:
    """``0.5 * log det(I + P / s)`` for a covariance block ``P``."""
    if not np.isfinite(noise_variance):
        return 0.0
    A = P / noise_variance
    A[np.diag_indices(len(A))] += 1.0
    L = _chol(A, "information matrix")
    return float(np.sum(np.log(np.diag(L))))


def select_inducing_points(source, S: int, method: str = "lattice", seed: int = 0) -> np.ndarray:
    """Inducing locations.

    ``source`` is an extent ``(w, h)`` (or ``((ox, oy), (w, h))``) for the
    lattice method, or a :class:`TrainingSet` / point array for k-means. The
    lattice has about ``S`` cell-centred points with aspect-matched counts.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    if method == "lattice":
        if isinstance(source, TrainingSet):
            lo, hi = source.X.min(axis=0), source.X.max(axis=0)
            origin, (w, h) = lo, tuple(hi - lo)
        elif np.ndim(source[0]) == 1:
            origin, (w, h) = source
        else:
            origin, (w, h) = (0.0, 0.0), source
        w, h = max(w, 1e-12), max(h, 1e-12)
        nx = max(1, int(round(np.sqrt(S * w / h))))
        ny = max(1, int(round(S / nx)))
        xs = origin[0] + w * (np.arange(nx) + 0.5) / nx
        ys = origin[1] + h * (np.arange(ny) + 0.5) / ny
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])
    if method == "kmeans":
        X = source.X if isinstance(source, TrainingSet) else np.asarray(source, dtype=float)
        uniq = np.unique(X, axis=0)
        if S >= len(uniq):
            return uniq
        centers, _ = kmeans2(X, S, seed=np.random.default_rng(seed), minit="++")
        return centers
    raise ValueError(f"unknown inducing method {method!r}")


# -- hyperparameter learning -------------------------------------------------

def log_marginal_likelihood(train: TrainingSet, hyper: Hyperparams, levels=None) -> float:
    """Log evidence of the heteroscedastic model.

    If ``levels`` (per-point level labels) is given, each point's noise is
    ``hyper.noise_variances[level]``; otherwise ``train.noise`` is used.
    """
    n = len(train)
    noise = train.noise if levels is None else np.asarray(hyper.noise_variances)[levels]
    K = se_kernel(train.X, train.X, hyper)
    K[np.diag_indices(n)] += noise
    L = _chol(K)
    a = solve_triangular(L, train.Y, lower=True, check_finite=False)
    return float(-0.5 * a @ a - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi))


def _monotone(v):
    """Least-squares projection onto non-decreasing sequences (pool adjacent violators)."""
    blocks = []
    for x in v:
        blocks.append([x, 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            m2, c2 = blocks.pop()
            m1, c1 = blocks.pop()
            blocks.append([(m1 * c1 + m2 * c2) / (c1 + c2), c1 + c2])
    return np.concatenate([[m] * c for m, c in blocks])


LOG_FLOOR = np.log(1e-6)


def fit_hyperparams(train: TrainingSet, levels=None, num_levels: int | None = None,
                    starts=None, tol: float = 1e-3, max_evals: int = 600) -> Hyperparams:
    """Maximise the log marginal likelihood by multi-start coordinate search.

    Parameters are searched in log space: length scale, signal variance and
    one noise variance per level. Noise values are projected onto the
    non-decreasing cone before every evaluation. Variances are floored at
    1e-6.
    """
    levels = train.levels if levels is None else np.asarray(levels, dtype=int)
    if levels is None:
        raise ValueError("level labels are required")
    if len(train) < 3:
        raise ValueError("need at least three observations")
    m = int(levels.max()) + 1 if num_levels is None else num_levels
    if len(np.unique(levels)) < m:
        raise ValueError("every level needs at least one observation")

    Y = train.Y
    ms = max(float(np.mean(Y**2)), 1e-6)
    spread = np.ptp(train.X, axis=0).max() or 1.0
    if starts is None:
        starts = [(spread * f, ms, ms * g) for f in (0.05, 0.15, 0.4) for g in (0.01, 0.1)]

    def unpack(theta):
        th = theta.copy()
        th[1:] = np.maximum(th[1:], LOG_FLOOR)
        th[2:] = _monotone(th[2:])
        return th

    def score(theta):
        th = unpack(theta)
        h = Hyperparams(float(np.exp(th[0])), float(np.exp(th[1])), tuple(np.exp(th[2:])))
        try:
            return log_marginal_likelihood(train, h, levels)
        except FactorizationError:
            return -np.inf

    best_theta, best_val = None, -np.inf
    for ell, sf2, sn2 in starts:
        evals = 0
        theta = np.log(np.array([ell, sf2] + [sn2] * m, dtype=float))
        theta = unpack(theta)
        val = score(theta)
        step = 1.0
        while step > tol and evals < max_evals:
            improved = False
            for j in range(len(theta)):
                for sgn in (1.0, -1.0):
                    cand = theta.copy()
                    cand[j] += sgn * step
                    cand = unpack(cand)
                    v = score(cand)
                    evals += 1
                    if v > val:
                        theta, val, improved = cand, v, True
                        break
            if not improved:
                step *= 0.5
        if val > best_val:
            best_theta, best_val = theta, val
    th = unpack(best_theta)
    return Hyperparams(float(np.exp(th[0])), float(np.exp(th[1])), tuple(float(v) for v in np.exp(th[2:])))


def with_levels(hyper: Hyperparams, noise_variances) -> Hyperparams:
    return replace(hyper, noise_variances=tuple(noise_variances))
