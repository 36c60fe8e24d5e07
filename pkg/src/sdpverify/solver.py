"""Primal-dual interior-point solver for block-diagonal SDPs.

Standard form: minimize sum_b tr(C_b X_b) subject to sum_b tr(A_jb X_b) = b_j
and every block of X positive semidefinite (diagonal blocks are elementwise
nonnegative vectors; free blocks are unconstrained).  The method is an
infeasible-start path follower using the HKM direction with Mehrotra's
predictor-corrector:

    1. residuals  r_p = b - A(X), R_d = C - S - A^T(y), mu = <X, S>/n
    2. predictor  solve the Newton system with sigma = 0
    3. centering  sigma = (mu_aff / mu)^3 from the boundary step lengths
    4. corrector  re-solve against the sigma mu I target plus the
                  second-order term dX_aff dS_aff, reusing the factorization
    5. step       fraction tau to the boundary, separately for X and (y, S)

Eliminating dX and dS leaves the Schur system M dy = rhs with
M_jk = tr(A_j X A_k S^{-1}).  Constraint matrices here have few nonzero
rows, so each column of M costs two thin matrix products; diagonal blocks
collapse to elementwise scalar updates.

Free variables carry no barrier: they ride along in the Newton system as
the augmented equations M dy + B df = rhs, B^T dy = c_f - B^T y, solved by
eliminating df through the small dense B^T M^{-1} B complement.  Their
dual slack is identically zero, so they never restrict a step length.
Splitting a free variable into a difference of cone variables instead
would leave the dual side without an interior and hence without a central
path; the augmented system keeps both sides strictly feasible whenever
the underlying problem is.

Everything is deterministic: same problem and config, same iterates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .sdpform import SdpProblem

__all__ = [
    "OPTIMAL",
    "MAX_ITERATIONS",
    "NUMERICAL_FAILURE",
    "UNBOUNDED",
    "SolverConfig",
    "SdpSolution",
    "solve",
    "residuals",
]

OPTIMAL = "Optimal"
MAX_ITERATIONS = "MaxIterations"
NUMERICAL_FAILURE = "NumericalFailure"
UNBOUNDED = "Unbounded"

# Objective below this is treated as a divergence certificate.
_UNBOUNDED_OBJ = -1e12
# Schur regularization ladder, relative to the diagonal scale.
_REG_LADDER = tuple(1e-12 * 10.0**k for k in range(7))
# Steps below this in both cones count as a stall.
_STALL_STEP = 1e-10


class _NumericalProblem(Exception):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Termination tolerances and algorithm knobs.

    initial_scale is the mu_0 of the starting point X = S = mu_0 I; None
    picks 100 times the largest input coefficient magnitude, floored so the
    start never degenerates on all-zero data.
    """

    gap_tol: float = 1e-6
    feas_tol: float = 1e-7
    max_iter: int = 200
    tau: float = 0.95
    initial_scale: float | None = None
    corrector: bool = True

    def __post_init__(self):
        if not (self.gap_tol > 0 and self.feas_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.initial_scale is not None and not self.initial_scale > 0:
            raise ValueError("initial_scale must be positive")


@dataclass
class SdpSolution:
    """Final iterate of a solve run, whatever the status."""

    status: str
    xblocks: list
    y: np.ndarray
    sblocks: list
    primal_obj: float
    dual_obj: float
    gap: float
    primal_res: float
    dual_res: float
    iterations: int


class _CompiledBlock:
    """Per-block constraint data in solver-friendly form."""

    def __init__(self, kind, dim, C, Avec, rowsets):
        self.kind = kind
        self.dim = dim
        self.C = C  # dense (d, d) for psd, (d,) for diag
        self.Avec = Avec  # csr: (m, d*d) for psd, (m, d) for diag
        self.rowsets = rowsets  # psd: per-constraint (row index set, A[rows, :])


def _compile(prob: SdpProblem):
    m = prob.num_constraints
    compiled = []
    for bidx, blk in enumerate(prob.blocks):
        d = blk.dim
        cmat = prob.objective.get(bidx)
        if blk.kind == "psd":
            C = cmat.toarray() if cmat is not None else np.zeros((d, d))
            rows_all, cols_all, vals_all, cons_all = [], [], [], []
            rowsets = []
            for j, cons in enumerate(prob.constraints):
                mat = cons.terms.get(bidx)
                if mat is None:
                    rowsets.append(None)
                    continue
                coo = mat.tocoo()
                coo.sum_duplicates()
                cons_all.append(np.full(coo.nnz, j))
                rows_all.append(coo.row)
                cols_all.append(coo.col)
                vals_all.append(coo.data)
                rset = np.unique(coo.row)
                slot = np.searchsorted(rset, coo.row)
                Asub = np.zeros((rset.size, d))
                np.add.at(Asub, (slot, coo.col), coo.data)
                rowsets.append((rset, Asub))
            if cons_all:
                Avec = sp.coo_matrix(
                    (
                        np.concatenate(vals_all),
                        (
                            np.concatenate(cons_all),
                            np.concatenate(rows_all) * d + np.concatenate(cols_all),
                        ),
                    ),
                    shape=(m, d * d),
                ).tocsr()
            else:
                Avec = sp.csr_matrix((m, d * d))
            compiled.append(_CompiledBlock("psd", d, C, Avec, rowsets))
        else:
            C = np.zeros(d)
            if cmat is not None:
                coo = cmat.tocoo()
                np.add.at(C, coo.row, coo.data)
            cons_all, idx_all, vals_all = [], [], []
            for j, cons in enumerate(prob.constraints):
                mat = cons.terms.get(bidx)
                if mat is None:
                    continue
                coo = mat.tocoo()
                coo.sum_duplicates()
                cons_all.append(np.full(coo.nnz, j))
                idx_all.append(coo.row)
                vals_all.append(coo.data)
            if cons_all:
                Avec = sp.coo_matrix(
                    (
                        np.concatenate(vals_all),
                        (np.concatenate(cons_all), np.concatenate(idx_all)),
                    ),
                    shape=(m, d),
                ).tocsr()
            else:
                Avec = sp.csr_matrix((m, d))
            compiled.append(_CompiledBlock(blk.kind, d, C, Avec, None))
    return compiled


def _free_matrix(compiled, m):
    """Constraint columns B for the free blocks, or None if there are none."""
    parts = [cb.Avec.toarray() for cb in compiled if cb.kind == "free"]
    if not parts:
        return None
    return np.hstack(parts) if len(parts) > 1 else parts[0]


def _max_coefficient(prob: SdpProblem, compiled) -> float:
    best = 0.0
    for cb in compiled:
        if cb.Avec.nnz:
            best = max(best, float(np.abs(cb.Avec.data).max()))
        if np.size(cb.C):
            best = max(best, float(np.abs(cb.C).max()))
    if prob.num_constraints:
        best = max(best, float(np.abs(prob.rhs_vector()).max()))
    return best


def _apply_A(compiled, xblocks) -> np.ndarray:
    m = compiled[0].Avec.shape[0] if compiled else 0
    out = np.zeros(m)
    for cb, xb in zip(compiled, xblocks):
        out += cb.Avec @ (xb.ravel() if cb.kind == "psd" else xb)
    return out


def _apply_AT(cb: _CompiledBlock, y: np.ndarray):
    if cb.kind == "psd":
        Aty = (cb.Avec.T @ y).reshape(cb.dim, cb.dim)
        return (Aty + Aty.T) / 2.0
    return cb.Avec.T @ y


def _residual_triplet(compiled, bvec, xblocks, y, sblocks, rd_blocks):
    m = bvec.size
    pres = 0.0
    if m:
        ax = _apply_A(compiled, xblocks)
        pres = float(np.max(np.abs(ax - bvec) / (1.0 + np.abs(bvec))))
    dual_sq = sum(float((rd**2).sum()) for rd in rd_blocks)
    c_sq = sum(float((cb.C**2).sum()) for cb in compiled)
    dres = float(np.sqrt(dual_sq) / (1.0 + np.sqrt(c_sq)))
    pobj = sum(float((cb.C * xb).sum()) for cb, xb in zip(compiled, xblocks))
    dobj = float(bvec @ y) if m else 0.0
    gap = abs(pobj - dobj) / (1.0 + abs(pobj))
    return pres, dres, gap, pobj, dobj


def residuals(prob: SdpProblem, xblocks, y, sblocks) -> tuple[float, float, float]:
    """Scaled primal/dual infeasibility and duality gap at a candidate point.

    primal: max_j |tr(A_j X) - b_j| / (1 + |b_j|)
    dual:   ||C - S - A^T(y)||_F / (1 + ||C||_F)
    gap:    |tr(C X) - b^T y| / (1 + |tr(C X)|)
    """
    compiled = _compile(prob)
    y = np.asarray(y, dtype=float)
    rd_blocks = [cb.C - sb - _apply_AT(cb, y) for cb, sb in zip(compiled, sblocks)]
    pres, dres, gap, _, _ = _residual_triplet(
        compiled, prob.rhs_vector(), xblocks, y, sblocks, rd_blocks
    )
    return pres, dres, gap


def _chol_factor_schur(M: np.ndarray):
    if not np.isfinite(M).all():
        raise _NumericalProblem("non-finite Schur complement")
    scale = max(1.0, float(np.abs(np.diag(M)).max())) if M.size else 1.0
    try:
        return sla.cho_factor(M, lower=True)
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(M.shape[0])
    for reg in _REG_LADDER:
        try:
            return sla.cho_factor(M + reg * scale * eye, lower=True)
        except np.linalg.LinAlgError:
            continue
    raise _NumericalProblem("Schur complement factorization failed")


def _psd_inverse(Smat: np.ndarray) -> np.ndarray:
    try:
        L = sla.cholesky(Smat, lower=True)
    except np.linalg.LinAlgError as exc:
        raise _NumericalProblem("dual iterate left the cone") from exc
    inv = sla.cho_solve((L, True), np.eye(Smat.shape[0]))
    return (inv + inv.T) / 2.0


def _max_step_psd(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest t with X + t dX still positive semidefinite."""
    if not np.isfinite(dX).all():
        raise _NumericalProblem("non-finite direction")
    try:
        L = sla.cholesky(X, lower=True)
    except np.linalg.LinAlgError as exc:
        raise _NumericalProblem("primal iterate left the cone") from exc
    W = sla.solve_triangular(L, dX, lower=True)
    W = sla.solve_triangular(L, W.T, lower=True)
    lam = float(sla.eigvalsh((W + W.T) / 2.0)[0])
    return np.inf if lam >= 0.0 else -1.0 / lam


def _max_step_diag(x: np.ndarray, dx: np.ndarray) -> float:
    if not np.isfinite(dx).all():
        raise _NumericalProblem("non-finite direction")
    neg = dx < 0.0
    if not neg.any():
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


def _max_step(compiled, xblocks, dxblocks) -> float:
    step = np.inf
    for cb, xb, dxb in zip(compiled, xblocks, dxblocks):
        if cb.kind == "free":
            if not np.isfinite(dxb).all():
                raise _NumericalProblem("non-finite direction")
            continue
        step = min(
            step,
            _max_step_psd(xb, dxb) if cb.kind == "psd" else _max_step_diag(xb, dxb),
        )
    return step


def solve(
    prob: SdpProblem, config: SolverConfig | None = None, trace=None
) -> SdpSolution:
    """Run the interior-point iteration on a standard-form problem.

    Returns the final iterate with one of the statuses Optimal,
    MaxIterations, NumericalFailure, or Unbounded; a line search stalled in
    both cones for three consecutive iterations also ends the run with
    MaxIterations.  `trace`, when given, receives one text line per
    iteration: iter=.. mu=.. pres=.. dres=.. gap=..
    """
    if any(c.sense != "=" for c in prob.constraints):
        raise ValueError("solver expects standard form (equalities only)")
    cfg = config or SolverConfig()
    compiled = _compile(prob)
    m = prob.num_constraints
    bvec = prob.rhs_vector()
    n_cone = sum(cb.dim for cb in compiled if cb.kind != "free")
    if n_cone == 0:
        raise ValueError("problem needs at least one cone block")
    Bfree = _free_matrix(compiled, m)
    free_slices = {}
    offset = 0
    for bi, cb in enumerate(compiled):
        if cb.kind == "free":
            free_slices[bi] = slice(offset, offset + cb.dim)
            offset += cb.dim

    mu0 = cfg.initial_scale
    if mu0 is None:
        mu0 = max(1.0, 100.0 * _max_coefficient(prob, compiled))
    xblocks = []
    sblocks = []
    for cb in compiled:
        if cb.kind == "psd":
            xblocks.append(np.eye(cb.dim) * mu0)
            sblocks.append(np.eye(cb.dim) * mu0)
        elif cb.kind == "diag":
            xblocks.append(np.full(cb.dim, mu0))
            sblocks.append(np.full(cb.dim, mu0))
        else:
            # free: no cone, dual slack pinned at zero so the generic
            # residual formulas reduce to B^T y = c_f
            xblocks.append(np.zeros(cb.dim))
            sblocks.append(np.zeros(cb.dim))
    y = np.zeros(m)

    def snapshot(status: str, k: int) -> SdpSolution:
        rd = [cb.C - sb - _apply_AT(cb, y) for cb, sb in zip(compiled, sblocks)]
        pres, dres, gap, pobj, dobj = _residual_triplet(
            compiled, bvec, xblocks, y, sblocks, rd
        )
        return SdpSolution(
            status=status,
            xblocks=[np.array(xb) for xb in xblocks],
            y=np.array(y),
            sblocks=[np.array(sb) for sb in sblocks],
            primal_obj=pobj,
            dual_obj=dobj,
            gap=gap,
            primal_res=pres,
            dual_res=dres,
            iterations=k,
        )

    # A run that breaks down late should hand back its best iterate, not
    # whatever the failed step left behind.
    best_score = np.inf
    best_state = None

    def fallback(status: str, k: int) -> SdpSolution:
        nonlocal xblocks, y, sblocks
        if best_state is not None:
            rd = [
                cb.C - sb - _apply_AT(cb, y) for cb, sb in zip(compiled, sblocks)
            ]
            pres, dres, gap, _, _ = _residual_triplet(
                compiled, bvec, xblocks, y, sblocks, rd
            )
            if best_score < max(pres, dres, gap):
                xblocks, y, sblocks = best_state
        return snapshot(status, k)

    stall = 0
    k = 0
    try:
        for k in range(cfg.max_iter):
            rd_blocks = [
                cb.C - sb - _apply_AT(cb, y) for cb, sb in zip(compiled, sblocks)
            ]
            pres, dres, gap, pobj, _ = _residual_triplet(
                compiled, bvec, xblocks, y, sblocks, rd_blocks
            )
            mu = (
                sum(float((xb * sb).sum()) for xb, sb in zip(xblocks, sblocks))
                / n_cone
            )
            if trace is not None:
                trace.write(
                    f"iter={k} mu={mu:.6e} pres={pres:.6e} "
                    f"dres={dres:.6e} gap={gap:.6e}\n"
                )
            if gap <= cfg.gap_tol and pres <= cfg.feas_tol and dres <= cfg.feas_tol:
                return snapshot(OPTIMAL, k)
            if pobj < _UNBOUNDED_OBJ:
                return snapshot(UNBOUNDED, k)
            score = max(pres, dres, gap)
            if score < best_score:
                best_score = score
                best_state = (
                    [np.array(xb) for xb in xblocks],
                    np.array(y),
                    [np.array(sb) for sb in sblocks],
                )

            sinv = []
            for cb, sb in zip(compiled, sblocks):
                if cb.kind == "psd":
                    sinv.append(_psd_inverse(sb))
                elif cb.kind == "diag":
                    sinv.append(1.0 / sb)
                else:
                    sinv.append(None)

            # Schur complement M_jk = tr(A_j X A_k S^{-1}), blockwise.
            M = np.zeros((m, m))
            for cb, xb, sb, si in zip(compiled, xblocks, sblocks, sinv):
                if cb.Avec.nnz == 0 or cb.kind == "free":
                    continue
                if cb.kind == "diag":
                    weighted = cb.Avec.multiply(xb / sb)
                    M += (weighted @ cb.Avec.T).toarray()
                else:
                    for j in range(m):
                        rs = cb.rowsets[j]
                        if rs is None:
                            continue
                        rows, Asub = rs
                        V = xb[:, rows] @ (Asub @ si)
                        M[:, j] += cb.Avec @ V.T.ravel()
            M = (M + M.T) / 2.0
            factor = _chol_factor_schur(M) if m else None
            BtMiB_factor = None
            MiB = None
            if Bfree is not None:
                MiB = sla.cho_solve(factor, Bfree)
                BtMiB = Bfree.T @ MiB
                try:
                    BtMiB_factor = sla.cho_factor(
                        (BtMiB + BtMiB.T) / 2.0, lower=True
                    )
                except np.linalg.LinAlgError as exc:
                    raise _NumericalProblem(
                        "free-variable complement is singular"
                    ) from exc
                f_now = np.concatenate(
                    [xblocks[bi] for bi in sorted(free_slices)]
                )
                rf_now = np.concatenate(
                    [rd_blocks[bi] for bi in sorted(free_slices)]
                )
                b_eff = bvec - Bfree @ f_now
            else:
                b_eff = bvec

            # constant rhs pieces: tr(A_j S^{-1}) and tr(A_j X R_d S^{-1})
            a_sinv = np.zeros(m)
            g_rd = np.zeros(m)
            for cb, xb, si, rd in zip(compiled, xblocks, sinv, rd_blocks):
                if cb.Avec.nnz == 0 or cb.kind == "free":
                    continue
                if cb.kind == "diag":
                    a_sinv += cb.Avec @ si
                    g_rd += cb.Avec @ (xb * rd * si)
                else:
                    a_sinv += cb.Avec @ si.ravel()
                    G = xb @ rd @ si
                    g_rd += cb.Avec @ G.T.ravel()

            def newton(sigma_mu: float, corr):
                rhs = b_eff - sigma_mu * a_sinv + g_rd
                if corr is not None:
                    dxa, dsa = corr
                    for cb, si, cx, cs in zip(compiled, sinv, dxa, dsa):
                        if cb.Avec.nnz == 0 or cb.kind == "free":
                            continue
                        if cb.kind == "diag":
                            rhs += cb.Avec @ (cx * cs * si)
                        else:
                            G2 = cx @ cs @ si
                            rhs += cb.Avec @ G2.T.ravel()
                if Bfree is None:
                    dy = sla.cho_solve(factor, rhs) if m else np.zeros(0)
                    dfree = None
                else:
                    u1 = sla.cho_solve(factor, rhs)
                    dfree = sla.cho_solve(BtMiB_factor, Bfree.T @ u1 - rf_now)
                    dy = u1 - MiB @ dfree
                dsb = []
                dxb = []
                for bi, (cb, xb, si, rd) in enumerate(
                    zip(compiled, xblocks, sinv, rd_blocks)
                ):
                    if cb.kind == "free":
                        dsb.append(np.zeros(cb.dim))
                        dxb.append(np.array(dfree[free_slices[bi]]))
                        continue
                    ds = rd - _apply_AT(cb, dy)
                    if cb.kind == "diag":
                        dx = sigma_mu * si - xb - xb * ds * si
                        if corr is not None:
                            dx = dx - corr[0][bi] * corr[1][bi] * si
                    else:
                        dx = sigma_mu * si - xb - xb @ ds @ si
                        if corr is not None:
                            dx = dx - corr[0][bi] @ corr[1][bi] @ si
                        dx = (dx + dx.T) / 2.0
                    dsb.append(ds)
                    dxb.append(dx)
                return dxb, dy, dsb

            if cfg.corrector:
                # predictor: pure Newton step toward complementarity zero
                dxa, dya, dsa = newton(0.0, None)
                ap_aff = min(1.0, _max_step(compiled, xblocks, dxa))
                ad_aff = min(1.0, _max_step(compiled, sblocks, dsa))
                mu_aff = (
                    sum(
                        float(((xb + ap_aff * dx) * (sb + ad_aff * ds)).sum())
                        for xb, dx, sb, ds in zip(xblocks, dxa, sblocks, dsa)
                    )
                    / n_cone
                )
                mu_aff = max(mu_aff, 0.0)
                sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0

                # corrector: recentered step with the second-order term
                dxb, dy, dsb = newton(sigma * mu, (dxa, dsa))
            else:
                # fixed-centering short step; slow but a useful cross-check
                dxb, dy, dsb = newton(0.25 * mu, None)
            ap = min(1.0, cfg.tau * _max_step(compiled, xblocks, dxb))
            ad = min(1.0, cfg.tau * _max_step(compiled, sblocks, dsb))
            if ap < _STALL_STEP and ad < _STALL_STEP:
                stall += 1
                if stall >= 3:
                    return fallback(MAX_ITERATIONS, k)
            else:
                stall = 0

            for bi, cb in enumerate(compiled):
                if cb.kind == "psd":
                    xn = xblocks[bi] + ap * dxb[bi]
                    sn = sblocks[bi] + ad * dsb[bi]
                    xblocks[bi] = (xn + xn.T) / 2.0
                    sblocks[bi] = (sn + sn.T) / 2.0
                else:
                    xblocks[bi] = xblocks[bi] + ap * dxb[bi]
                    sblocks[bi] = sblocks[bi] + ad * dsb[bi]
            y = y + ad * dy
    except _NumericalProblem:
        return fallback(NUMERICAL_FAILURE, k)

    return fallback(MAX_ITERATIONS, cfg.max_iter)
