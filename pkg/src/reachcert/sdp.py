"""Block-diagonal SDP in standard form and a primal-dual interior-point solver.

Problem (primal)::

    minimize    sum_k <C_k, X_k> + c_f . z
    subject to  sum_k <A_ik, X_k> + (B z)_i = b_i     i = 1..m
                X_k PSD,  z free

Dual::

    maximize    b . y
    subject to  sum_i y_i A_ik + S_k = C_k,  B^T y = c_f,  S_k PSD

The solver takes Mehrotra predictor-corrector steps along the
Nesterov-Todd direction. Free variables are projected out up front with an
orthogonal split of the rows, so they are neither split nor regularised.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"
NUMERICAL_FAILURE = "numerical_failure"


class SdpError(RuntimeError):
    pass


@dataclass
class SdpStandardForm:
    """Sparse storage for the problem above.

    Block coefficients are kept as upper-triangle COO quadruples
    ``(row, i, j, value)`` with ``i <= j``; an off-diagonal value stands for
    both ``(i, j)`` and ``(j, i)``, as in the SDPA sparse format.
    """

    block_dims: list[int]
    rhs: np.ndarray
    block_entries: list[list[tuple[int, int, int, float]]]
    free_entries: list[tuple[int, int, float]] = field(default_factory=list)
    n_free: int = 0
    block_cost: list[list[tuple[int, int, float]]] | None = None
    free_cost: np.ndarray | None = None
    row_labels: list[str] = field(default_factory=list)
    block_labels: list[str] = field(default_factory=list)
    free_labels: list[str] = field(default_factory=list)
    variable_map: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.rhs = np.asarray(self.rhs, dtype=float)
        if self.block_cost is None:
            self.block_cost = [[] for _ in self.block_dims]
        if self.free_cost is None:
            self.free_cost = np.zeros(self.n_free)
        self.free_cost = np.asarray(self.free_cost, dtype=float)
        if len(self.block_entries) != len(self.block_dims):
            raise ValueError("one entry list per block required")
        for k, ents in enumerate(self.block_entries):
            n = self.block_dims[k]
            for r, i, j, _ in ents:
                if not (0 <= i <= j < n):
                    raise ValueError(f"block {k}: entry ({i},{j}) not upper-triangular within {n}")
                if not 0 <= r < self.n_rows:
                    raise ValueError(f"block {k}: row {r} out of range")

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    @property
    def n_scalar_vars(self) -> int:
        """Free scalars: upper triangles of every block plus free variables."""
        return sum(n * (n + 1) // 2 for n in self.block_dims) + self.n_free

    def nnz(self) -> int:
        """Nonzeros of the constraint data and objective, counted as SDPA stores them.

        SDPA has no free variables, so each free entry is stored twice (``z+`` and ``z-``).
        """
        count = sum(1 for ents in self.block_entries for e in ents if e[3] != 0.0)
        count += 2 * sum(1 for e in self.free_entries if e[2] != 0.0)
        count += sum(1 for ents in self.block_cost for e in ents if e[2] != 0.0)
        count += 2 * int(np.count_nonzero(self.free_cost))
        return count

    def is_feasibility(self) -> bool:
        return not any(self.block_cost) and not np.any(self.free_cost)

    # dense views ---------------------------------------------------------------
    def dense_block(self, k: int, row: int) -> np.ndarray:
        n = self.block_dims[k]
        A = np.zeros((n, n))
        for r, i, j, v in self.block_entries[k]:
            if r == row:
                A[i, j] += v
                if i != j:
                    A[j, i] += v
        return A

    def dense_cost(self, k: int) -> np.ndarray:
        n = self.block_dims[k]
        C = np.zeros((n, n))
        for i, j, v in self.block_cost[k]:
            C[i, j] += v
            if i != j:
                C[j, i] += v
        return C

    def free_matrix(self) -> np.ndarray:
        B = np.zeros((self.n_rows, self.n_free))
        for r, c, v in self.free_entries:
            B[r, c] += v
        return B

    def apply(self, X: list[np.ndarray], z: np.ndarray | None = None) -> np.ndarray:
        """``A(X) + B z`` for an explicit point."""
        out = np.zeros(self.n_rows)
        for k, ents in enumerate(self.block_entries):
            Xk = X[k]
            for r, i, j, v in ents:
                out[r] += v * (Xk[i, j] if i == j else Xk[i, j] + Xk[j, i])
        if self.n_free:
            out += self.free_matrix() @ (np.zeros(self.n_free) if z is None else z)
        return out

    def objective(self, X: list[np.ndarray], z: np.ndarray | None = None) -> float:
        val = sum(float(np.sum(self.dense_cost(k) * X[k])) for k in range(len(self.block_dims)))
        if self.n_free and z is not None:
            val += float(self.free_cost @ z)
        return val


@dataclass
class SdpSolution:
    status: str
    X: list[np.ndarray]
    y: np.ndarray
    S: list[np.ndarray]
    z: np.ndarray
    primal_residual: float
    dual_residual: float
    gap: float
    primal_objective: float
    dual_objective: float
    iterations: int
    history: list[dict] = field(default_factory=list)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 200
    step_fraction: float = 0.98
    regularization: float = 1e-10
    rank_tol: float = 1e-14  # Schur factor treated as singular below this relative pivot
    feasibility_perturbation: float = 1e-6
    seed: int = 0
    infeasibility_tol: float = 1e-8
    record_history: bool = False

# -----------------------------------------------------------------------------
# internal dense representation


class _Reduced:
    """Dense, row-equilibrated problem with the free variables projected out.

    With ``B = U diag(s) V^T`` the constraints split into ``U2^T A(X) = U2^T b``
    (no free variables) and ``z = V diag(1/s) U1^T (b - A(X))``. The split is
    orthogonal, so it does not degrade the conditioning of the rows.
    """

    def __init__(self, prob: SdpStandardForm, opts: SolverOptions):
        m = prob.n_rows
        self.dims = list(prob.block_dims)
        A_full = []
        for k, n in enumerate(self.dims):
            Ak = np.zeros((m, n, n))
            for r, i, j, v in prob.block_entries[k]:
                Ak[r, i, j] += v
                if i != j:
                    Ak[r, j, i] += v
            A_full.append(Ak)
        self.A_full = A_full
        self.b_full = prob.rhs.copy()
        self.B = prob.free_matrix()
        C = [prob.dense_cost(k) for k in range(len(self.dims))]
        cf = prob.free_cost.copy()
        self.const = 0.0

        if self.B.shape[1]:
            U, s, Vt = np.linalg.svd(self.B, full_matrices=True)
            r = int(np.sum(s > max(self.B.shape) * np.finfo(float).eps * (s[0] if len(s) else 0.0)))
            self.U1, self.U2 = U[:, :r], U[:, r:]
            self.Vr, self.sr = Vt[:r].T, s[:r]
            resid = cf - self.Vr @ (self.Vr.T @ cf)
            if np.linalg.norm(resid) > 1e-9 * (1.0 + np.linalg.norm(cf)):
                raise SdpError("free-variable cost outside the row space of B: problem unbounded")
            g = self.U1 @ ((self.Vr.T @ cf) / self.sr)
            self.g = g
            if np.any(g):
                for k in range(len(C)):
                    C[k] = C[k] - np.tensordot(g, A_full[k], axes=1)
                self.const = float(g @ self.b_full)
            A = [np.tensordot(self.U2.T, Ak, axes=1) for Ak in A_full]
            b = self.U2.T @ self.b_full
        else:
            self.U1 = np.zeros((m, 0))
            self.U2 = np.eye(m)
            self.Vr = np.zeros((0, 0))
            self.sr = np.zeros(0)
            self.g = np.zeros(m)
            A = [Ak.copy() for Ak in A_full]
            b = self.b_full.copy()

        # drop rows the projection emptied; a nonzero rhs there is a certificate of infeasibility
        sq = sum(np.einsum("tij,tij->t", Ak, Ak) for Ak in A) if A else np.zeros(len(b))
        scale_b = 1.0 + np.linalg.norm(self.b_full)
        keep = sq > (1e-24 * max(1.0, float(np.max(sq)) if len(sq) else 1.0))
        self.trivially_infeasible = bool(np.any(np.abs(b[~keep]) > 1e-9 * scale_b))
        self.keep = keep
        A = [Ak[keep] for Ak in A]
        b = b[keep]
        sq = sq[keep]
        self.row_scale = 1.0 / np.sqrt(sq)
        self.A = [Ak * self.row_scale[:, None, None] for Ak in A]
        self.b = b * self.row_scale
        self.m = len(b)

        self.perturbed = False
        if prob.is_feasibility() and opts.feasibility_perturbation > 0:
            # bounded, seeded, positive-definite tilt so the central path exists
            rng = np.random.default_rng(opts.seed)
            for k, n in enumerate(self.dims):
                R = rng.standard_normal((n, n))
                C[k] = opts.feasibility_perturbation * (np.eye(n) + 0.1 * R @ R.T / n)
            self.perturbed = True
        self.C = C
        self.norm_b = 1.0 + np.linalg.norm(self.b_full)
        self.norm_C = 1.0 + np.sqrt(sum(np.sum(Ck**2) for Ck in C))
        self.n_total = sum(self.dims)

    def A_op(self, X: list[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.m)
        for Ak, Xk in zip(self.A, X):
            out += Ak.reshape(self.m, -1) @ Xk.ravel()
        return out

    def At_op(self, y: np.ndarray) -> list[np.ndarray]:
        return [np.tensordot(y, Ak, axes=1) for Ak in self.A]

    def full_A_op(self, X: list[np.ndarray]) -> np.ndarray:
        out = np.zeros(len(self.b_full))
        for Ak, Xk in zip(self.A_full, X):
            out += Ak.reshape(len(out), -1) @ Xk.ravel()
        return out

    def recover_z(self, X: list[np.ndarray]) -> np.ndarray:
        if not self.B.shape[1]:
            return np.zeros(0)
        return self.Vr @ ((self.U1.T @ (self.b_full - self.full_A_op(X))) / self.sr)

    def recover_y(self, y: np.ndarray) -> np.ndarray:
        y_red = np.zeros(len(self.keep))
        y_red[self.keep] = y * self.row_scale
        return self.U2 @ y_red + self.g


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _chol(M: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(_sym(M))
        w = np.maximum(w, 1e-300)
        # square rather than triangular; only L L^T = M is relied on
        return V * np.sqrt(w)


def _well_posed(R: np.ndarray, rank_tol: float) -> bool:
    diag = np.abs(np.diag(R))
    return bool(np.all(np.isfinite(R)) and diag.min() > rank_tol * diag.max())


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    Linv = np.linalg.inv(_chol(X))
    P = _sym(Linv @ dX @ Linv.T)
    lam = np.linalg.eigvalsh(P)[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _nt_scaling(X: np.ndarray, S: np.ndarray):
    """Return ``(G, d)`` with ``G^{-1} X G^{-T} = G^T S G = diag(d)``."""
    LX = _chol(X)
    LS = _chol(S)
    U, d, Vt = np.linalg.svd(LS.T @ LX)
    d = np.maximum(d, 1e-300)
    G = LX @ Vt.T / np.sqrt(d)[None, :]
    return G, d


def solve(problem: SdpStandardForm, tol: float = 1e-8, max_iter: int = 200, **kwargs) -> SdpSolution:
    """Solve ``problem``; see module docstring for the form.

    Feasibility problems (all-zero objective) are given a small seeded
    positive-definite objective so the iterates stay well centred; the
    solution is an interior feasible point rather than a vertex.
    """
    opts = SolverOptions(tol=tol, max_iter=max_iter, **kwargs)
    P = _Reduced(problem, opts)
    dims = P.dims
    nb = len(dims)
    X = [np.eye(n) for n in dims]
    S = [np.eye(n) for n in dims]
    y = np.zeros(P.m)
    history: list[dict] = []
    status = MAX_ITER
    message = ""
    it = 0

    def residuals(X, y, S):
        rp = P.b - P.A_op(X)
        AtY = P.At_op(y)
        Rd = [_sym(P.C[k] - S[k] - AtY[k]) for k in range(nb)]
        return rp, Rd

    def measures(X, y, S, Rd):
        # primal residual in the caller's rows, free variables recovered
        z = P.recover_z(X)
        rp_raw = P.b_full - P.full_A_op(X) - P.B @ z
        pres = np.linalg.norm(rp_raw) / P.norm_b
        dres = np.sqrt(sum(np.sum(R**2) for R in Rd)) / P.norm_C
        pobj = sum(float(np.sum(P.C[k] * X[k])) for k in range(nb)) + P.const
        dobj = float(P.b @ y) + P.const
        gap_abs = sum(float(np.sum(X[k] * S[k])) for k in range(nb))
        rgap = max(abs(pobj - dobj), gap_abs) / (1.0 + abs(pobj) + abs(dobj))
        return pres, dres, pobj, dobj, rgap

    if P.trivially_infeasible:
        status = INFEASIBLE
        message = "a constraint row has no matrix part and a nonzero right-hand side"
        max_iter = -1

    try:
        for it in range(max(max_iter, 0) + 1):
            rp, Rd = residuals(X, y, S)
            pres, dres, pobj, dobj, rgap = measures(X, y, S, Rd)
            mu = sum(float(np.sum(X[k] * S[k])) for k in range(nb)) / max(P.n_total, 1)
            if opts.record_history:
                history.append(dict(iter=it, pres=pres, dres=dres, pobj=pobj, dobj=dobj, gap=rgap, mu=mu))
            log.debug("it %3d pres %.2e dres %.2e gap %.2e pobj %.6e dobj %.6e", it, pres, dres, rgap, pobj, dobj)
            if pres <= tol and dres <= tol and rgap <= tol:
                status = OPTIMAL
                break
            # primal infeasibility: with b.y > 0 and A^T y <= t I, every feasible X
            # has trace(X) >= b.y / t, so a tiny t certifies infeasibility in practice
            by = float(P.b @ y)
            if by > 0:
                top = max(float(np.linalg.eigvalsh(Ak)[-1]) for Ak in P.At_op(y))
                if top / by < opts.infeasibility_tol:
                    status = INFEASIBLE
                    message = f"Farkas ray found: lambda_max(A^T y) / b.y = {top / by:.2e}"
                    break
            if it == max_iter:
                break

            # NT scaling and Schur complement
            Gs, ds, Ws = [], [], []
            for k in range(nb):
                G, d = _nt_scaling(X[k], S[k])
                Gs.append(G)
                ds.append(d)
                Ws.append(G @ G.T)
            # Schur complement M = Ã Ã^T with Ã the svec'd rows G^T A_i G. Instead of
            # forming M we QR-factor Ã^T = Qf R: the primal correction is taken as
            # Qf w with R^T w = r, so A(dX) = rp holds to backward-stable accuracy
            # however ill-conditioned R becomes near the boundary
            cols, ius = [], []
            for k in range(nb):
                At = np.einsum("ji,tjl,lk->tik", Gs[k], P.A[k], Gs[k], optimize=True)
                iu = np.triu_indices(dims[k])
                w = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
                cols.append(At[:, iu[0], iu[1]] * w)
                ius.append((iu, w))
            At_all = np.hstack(cols) if cols else np.zeros((P.m, 0))
            Qf, R = np.linalg.qr(At_all.T, mode="reduced")
            reg = 0.0
            if P.m and not _well_posed(R, opts.rank_tol):
                # rank-deficient scaled rows: fall back to static regularization,
                # growing it a hundredfold per attempt
                scale_M = max(1.0, float(np.max(np.sum(At_all**2, axis=1))))
                for attempt in range(3):
                    reg = opts.regularization * scale_M * 100.0**attempt
                    stacked = np.vstack([At_all.T, np.sqrt(reg) * np.eye(P.m)])
                    R = np.linalg.qr(stacked, mode="r")
                    if _well_posed(R, opts.rank_tol):
                        break
                else:
                    status = NUMERICAL_FAILURE
                    message = "Schur complement lost positive definiteness after 3 regularization attempts"
                    break
            offs = np.cumsum([0] + [len(iu[0]) for iu, _ in ius])

            def unsvec(v, k):
                (iu, w), n = ius[k], dims[k]
                T = np.zeros((n, n))
                T[iu] = v[offs[k] : offs[k + 1]] / w
                return T + np.triu(T, 1).T

            def direction(Rc):
                Q = []
                for k in range(nb):
                    d = ds[k]
                    T = 2.0 * Rc[k] / (d[:, None] + d[None, :])
                    Q.append(Gs[k] @ T @ Gs[k].T)
                base = [Q[k] - Ws[k] @ Rd[k] @ Ws[k] for k in range(nb)]
                r1 = rp - P.A_op(base)
                wv = sla.solve_triangular(R, r1, trans="T")
                dy = sla.solve_triangular(R, wv)
                # the orthonormal factor is only exact without regularization
                corr = Qf @ wv if reg == 0.0 else At_all.T @ dy
                dS = [_sym(Rd[k] - Ak) for k, Ak in enumerate(P.At_op(dy))]
                dX = [_sym(base[k] + Gs[k] @ unsvec(corr, k) @ Gs[k].T) for k in range(nb)]
                return dX, dy, dS

            def steps(dX, dS):
                ap = min([1.0] + [_max_step(X[k], dX[k]) for k in range(nb)])
                ad = min([1.0] + [_max_step(S[k], dS[k]) for k in range(nb)])
                return ap, ad

            # predictor
            Rc_aff = [-np.diag(d**2) for d in ds]
            dXa, dya, dSa = direction(Rc_aff)
            ap, ad = steps(dXa, dSa)
            mu_aff = sum(float(np.sum((X[k] + ap * dXa[k]) * (S[k] + ad * dSa[k]))) for k in range(nb)) / P.n_total
            sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
            # keep complementarity from outrunning primal feasibility
            if it == 0:
                mu0, pres0 = mu, max(pres, 1e-300)
            floor = 0.1 * mu0 * min(1.0, pres / pres0)
            if pres > tol and sigma * mu < floor:
                sigma = min(1.0, floor / mu)

            # corrector with second-order term in scaled space
            Rc = []
            for k in range(nb):
                Ginv = np.linalg.inv(Gs[k])
                dXt = Ginv @ dXa[k] @ Ginv.T
                dSt = Gs[k].T @ dSa[k] @ Gs[k]
                Rc.append(sigma * mu * np.eye(dims[k]) - np.diag(ds[k] ** 2) - _sym(dXt @ dSt))
            dX, dy, dS = direction(Rc)
            ap, ad = steps(dX, dS)
            ap = min(1.0, opts.step_fraction * ap)
            ad = min(1.0, opts.step_fraction * ad)
            if opts.record_history:
                history[-1].update(ap=ap, ad=ad, sigma=sigma)
            X = [_sym(X[k] + ap * dX[k]) for k in range(nb)]
            y = y + ad * dy
            S = [_sym(S[k] + ad * dS[k]) for k in range(nb)]
            if not all(np.all(np.isfinite(Xk)) for Xk in X) or not np.all(np.isfinite(y)):
                status = NUMERICAL_FAILURE
                message = "non-finite iterate"
                break
    except (np.linalg.LinAlgError, ValueError) as exc:
        # eigen/Cholesky breakdown close to the boundary; keep the last iterate
        status = NUMERICAL_FAILURE
        message = f"linear algebra failure: {exc}"

    rp, Rd = residuals(X, y, S)
    pres, dres, pobj, dobj, rgap = measures(X, y, S, Rd)
    return SdpSolution(
        status=status,
        X=X,
        y=P.recover_y(y),
        S=S,
        z=P.recover_z(X),
        primal_residual=pres,
        dual_residual=dres,
        gap=rgap,
        primal_objective=pobj,
        dual_objective=dobj,
        iterations=it,
        history=history,
        message=message,
    )


def is_psd(M: np.ndarray, shift: float = 1e-9) -> bool:
    """Shifted-Cholesky PSD test: ``M + shift*I`` must factor."""
    try:
        np.linalg.cholesky(_sym(M) + shift * np.eye(len(M)))
        return True
    except np.linalg.LinAlgError:
        return False
