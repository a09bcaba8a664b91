"""Weak-form linear systems and the OLS / covariance-reweighted (IRLS) estimators."""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .grid import Trajectory
from .systems import OdeSystem, feature_jacobian, feature_matrix
from .testfunctions import TestFunctionBasis


class RankDeficiencyError(np.linalg.LinAlgError):
    pass


class Method(str, enum.Enum):
    OLS = "ols"
    IRLS = "irls"


@dataclass(frozen=True)
class WeakSystem:
    G: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    row_blocks: tuple[slice, ...]
    col_blocks: tuple[slice, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return self.G.shape


def assemble_weak_system(system: OdeSystem, data: Trajectory, basis: TestFunctionBasis) -> WeakSystem:
    if basis.grid != data.grid:
        raise ValueError("basis and data live on different grids")
    if data.d != system.d:
        raise ValueError(f"data has {data.d} columns, {system.name} needs {system.d}")
    K, d = basis.K, system.d
    col_blocks = tuple(system.blocks())
    row_blocks = tuple(slice(i * K, (i + 1) * K) for i in range(d))
    G = np.zeros((K * d, system.n_params))
    b = np.empty(K * d)
    for i in range(d):
        G[row_blocks[i], col_blocks[i]] = basis.phi @ feature_matrix(system, i, data)
        b[row_blocks[i]] = -(basis.phidot @ data.column(i))
    return WeakSystem(G, b, row_blocks, col_blocks)


@dataclass
class EstimationResult:
    w_hat: np.ndarray
    method: Method
    iterations: int = 0
    converged: bool = True
    walltime_ms: float = 0.0
    history: list = field(default_factory=list, repr=False)

    def to_dict(self, w_star=None) -> dict:
        from .grid import e2_metric

        out = {
            "w_hat": [float(v) for v in self.w_hat],
            "method": self.method.value,
            "iterations": self.iterations,
            "converged": self.converged,
            "walltime_ms": self.walltime_ms,
        }
        if w_star is not None:
            out["E2"] = e2_metric(self.w_hat, w_star)
        return out


def _qr_solve(A: np.ndarray, y: np.ndarray, label: str = "") -> np.ndarray:
    """Least squares by QR on column-equilibrated A, with a scale-free rank test."""
    scale = np.linalg.norm(A, axis=0)
    if np.any(scale == 0):
        raise RankDeficiencyError(f"rank-deficient regression matrix{label}: zero column")
    Q, R = np.linalg.qr(A / scale)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-12 * max(A.shape):
        raise RankDeficiencyError(f"rank-deficient regression matrix{label}")
    return sla.solve_triangular(R, Q.T @ y) / scale


def wendy_ols(ws: WeakSystem) -> EstimationResult:
    """Least squares via QR, one independent solve per (decoupled) dimension block."""
    t0 = time.perf_counter()
    w = np.empty(ws.G.shape[1])
    for i, (rows, cols) in enumerate(zip(ws.row_blocks, ws.col_blocks)):
        w[cols] = _qr_solve(ws.G[rows, cols], ws.b[rows], f" in block {i + 1}")
    return EstimationResult(w, Method.OLS, 0, True, 1e3 * (time.perf_counter() - t0))


@dataclass(frozen=True)
class IrlsConfig:
    alpha: float = 1e-10
    tol: float = 1e-6
    max_iter: int = 100

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")


def _jacobian_weights(system: OdeSystem, data: Trajectory, w: np.ndarray) -> np.ndarray:
    """D[i, j, m] = sum_q w_iq d f_iq / d u_j at sample m."""
    D = np.empty((system.d, system.d, data.grid.M + 1))
    for i, blk in enumerate(system.blocks()):
        jac = feature_jacobian(system, i, data)           # (M+1, J_i, d)
        D[i] = np.einsum("mqj,q->jm", jac, w[blk])
    return D


def build_covariance_factor(system: OdeSystem, data: Trajectory, basis: TestFunctionBasis, w) -> np.ndarray:
    """First-order map from the stacked noise vec(eps) to the weak residual.

    Block (i, j) is ``Phi diag(sum_q w_iq df_iq/du_j) + [i == j] Phidot``; rows
    follow the dimension-major ordering of :func:`assemble_weak_system`.
    """
    w = np.asarray(w, dtype=float)
    D = _jacobian_weights(system, data, w)
    K, N, d = basis.K, data.grid.M + 1, system.d
    L = np.zeros((K * d, N * d))
    for i in range(d):
        for j in range(d):
            blk = basis.phi * D[i, j][None, :]
            if i == j:
                blk = blk + basis.phidot
            L[i * K:(i + 1) * K, j * N:(j + 1) * N] = blk
    return L


class _Whitener:
    """Cholesky factor of C = (1 - alpha) L L^T + alpha I with rows interleaved by center.

    For translate bases C is banded in the interleaved ordering and is assembled
    lag by lag from the overlapping windows of each row pair, then factored in
    banded form. Orthonormalized (global) bases use the dense path.
    """

    def __init__(self, system, data, basis, w, alpha):
        K, d = basis.K, system.d
        self.n = K * d
        # interleaved row index k*d + i  <->  dimension-major i*K + k
        self.perm = (np.arange(d)[None, :] * K + np.arange(K)[:, None]).ravel()
        steps = np.diff(basis.centers)
        local = not basis.orthonormalized and (K == 1 or np.all(steps == steps[0]))
        if not local:
            L = build_covariance_factor(system, data, basis, w)[self.perm]
            self.banded = False
            self._factor(L @ L.T, alpha)
            return
        ab = self._banded_gram(system, data, basis, w)
        self.bw = ab.shape[0] - 1
        self.banded = self.bw < self.n // 4
        if not self.banded:
            full = np.zeros((self.n, self.n))
            for off in range(self.bw + 1):
                idx = np.arange(self.n - off)
                full[idx + off, idx] = ab[off, :self.n - off]
                full[idx, idx + off] = ab[off, :self.n - off]
            ab = full
        self._factor(ab, alpha)

    def _banded_gram(self, system, data, basis, w):
        """Lower band of L L^T, built from the overlap of each row pair at each center lag.

        Block (i, p) of L L^T is Phi E_ip Phi^T + Phi D_ip Phidot^T + Phidot D_pi Phi^T
        + [i == p] Phidot Phidot^T with E_ip = sum_j D_ij D_pj. When every row is
        the same translated kernel, each term at every lag is one matrix product
        against a table of lagged kernel products.
        """
        K, d = basis.K, system.d
        m = int(round(basis.radius / data.grid.dt))
        width = 2 * m + 1
        stride = int(basis.centers[1] - basis.centers[0]) if K > 1 else 1
        idx = basis.centers[:, None] + np.arange(-m, m + 1)[None, :]
        rows = np.arange(K)[:, None]
        win_phi, win_dot = basis.phi[rows, idx], basis.phidot[rows, idx]
        D = _jacobian_weights(system, data, np.asarray(w, float))
        max_lag = min(2 * m // stride, K - 1)
        n_lag = max_lag + 1
        if not (np.array_equal(win_phi, np.broadcast_to(win_phi[0], win_phi.shape))
                and np.array_equal(win_dot, np.broadcast_to(win_dot[0], win_dot.shape))):
            return self._banded_gram_rowwise(win_phi, win_dot, D, idx, stride, max_lag, d)

        def lagged(a, b):
            H = np.zeros((width, n_lag))
            for lag in range(n_lag):
                sh = lag * stride
                H[sh:, lag] = a[sh:] * b[:width - sh]
            return H

        f, g = win_phi[0], win_dot[0]
        E = np.einsum("ijn,pjn->ipn", D, D)
        Dw = D[:, :, idx]                                          # (i, p, K, o)
        V = (E[:, :, idx].reshape(-1, width) @ lagged(f, f)).reshape(d, d, K, n_lag)
        V += (Dw.reshape(-1, width) @ lagged(f, g)).reshape(d, d, K, n_lag)
        V += (Dw.reshape(-1, width) @ lagged(g, f)).reshape(d, d, K, n_lag).transpose(1, 0, 2, 3)
        dd = lagged(g, g).sum(axis=0)
        for i in range(d):
            V[i, i] += dd
        return self._fill_band(lambda lag: V[:, :, :K - lag, lag].transpose(2, 0, 1), K, d, max_lag)

    def _banded_gram_rowwise(self, win_phi, win_dot, D, idx, stride, max_lag, d):
        K, width = win_phi.shape
        A = win_phi[:, None, None, :] * D[:, :, idx].transpose(2, 0, 1, 3)     # (K, i, j, o)
        for i in range(d):
            A[:, i, i, :] += win_dot

        def block(lag):
            sh = lag * stride
            X = np.ascontiguousarray(A[:K - lag, :, :, sh:]).reshape(K - lag, d, -1)
            Y = np.ascontiguousarray(A[lag:, :, :, :width - sh]).reshape(K - lag, d, -1)
            return X @ Y.transpose(0, 2, 1)

        return self._fill_band(block, K, d, max_lag)

    def _fill_band(self, block, K, d, max_lag):
        """Scatter lag blocks vals[k, i, p] = C[(k, i), (k + lag, p)] into lower band storage."""
        ab = np.zeros(((max_lag + 1) * d, self.n))
        ii, pp = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
        for lag in range(max_lag + 1):
            vals = block(lag)
            diff = lag * d + pp - ii
            keep = diff >= 0
            cols = np.arange(K - lag)[:, None, None] * d + ii[None]
            ab[np.broadcast_to(diff, vals.shape)[:, keep], cols[:, keep]] = vals[:, keep]
        return ab

    def _factor(self, gram, alpha):
        for attempt in range(4):
            try:
                if self.banded:
                    ab = (1 - alpha) * gram
                    ab[0] += alpha
                    self.chol = sla.cholesky_banded(ab, lower=True)
                else:
                    C = (1 - alpha) * gram
                    C[np.diag_indices_from(C)] += alpha
                    self.chol = sla.cholesky(C, lower=True)
                self.alpha = alpha
                return
            except np.linalg.LinAlgError:
                alpha = min(10 * alpha, 1.0)
        raise np.linalg.LinAlgError("covariance is not positive definite even after regularization")

    def whiten(self, A: np.ndarray) -> np.ndarray:
        A = A[self.perm]
        if not self.banded:
            return sla.solve_triangular(self.chol, A, lower=True)
        x, info = sla.lapack.dtbtrs(self.chol, A.reshape(self.n, -1), uplo="L")
        if info != 0:
            raise np.linalg.LinAlgError("singular covariance factor")
        return x.reshape(A.shape)


def gls_step(ws: WeakSystem, system, data, basis, w, alpha: float) -> np.ndarray:
    wh = _Whitener(system, data, basis, w, alpha)
    Ab = wh.whiten(np.column_stack([ws.G, ws.b]))
    return _qr_solve(Ab[:, :-1], Ab[:, -1], " after whitening")
def wendy_irls(ws: WeakSystem, system: OdeSystem, data: Trajectory, basis: TestFunctionBasis,
               cfg: IrlsConfig = IrlsConfig(), w0=None, keep_history: bool = False) -> EstimationResult:
    """Iteratively reweighted least squares with the linearized noise covariance.

    Starts from OLS. Stops when the relative step falls below ``cfg.tol``; if
    ``max_iter`` is reached first, returns the iterate that followed the
    smallest step, flagged as not converged. A breakdown of the covariance
    solve (diverging iterates) ends the iteration the same way.
    """
    t0 = time.perf_counter()
    w = wendy_ols(ws).w_hat if w0 is None else np.asarray(w0, float)
    history = [w.copy()] if keep_history else []
    best, best_step = w, np.inf
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        try:
            w_new = gls_step(ws, system, data, basis, w, cfg.alpha)
        except (ValueError, np.linalg.LinAlgError):
            # iterates diverged far enough that the covariance or its solve broke down
            break
        if keep_history:
            history.append(w_new.copy())
        step = np.linalg.norm(w_new - w) / max(np.linalg.norm(w), 1e-300)
        if step < best_step:
            best, best_step = w_new, step
        w = w_new
        if step <= cfg.tol:
            converged = True
            break
    if not converged:
        w = best
    return EstimationResult(w, Method.IRLS, it, converged, 1e3 * (time.perf_counter() - t0), history)


def estimate(system: OdeSystem, data: Trajectory, basis: TestFunctionBasis, method="irls",
             cfg: IrlsConfig = IrlsConfig()) -> EstimationResult:
    t0 = time.perf_counter()
    ws = assemble_weak_system(system, data, basis)
    if Method(method) is Method.OLS:
        res = wendy_ols(ws)
    else:
        res = wendy_irls(ws, system, data, basis, cfg)
    res.walltime_ms = 1e3 * (time.perf_counter() - t0)
    return res
