"""Spectral bounds, verdicts, and report serialization.

The moment matrix of any feasible point has bounded blocks: the input box
caps the input block trace, and the complementarity rows.propagate that cap
forward layer by layer.  With W~_i the extended matrix of layer i (bias as
first column) and T_i the block trace caps,

    T_0     = (||center||_2 + rho sqrt(n_0))^2
    T_{i+1} = (1 + T_i) ||W~_i||_F^2

each diagonal entry of the block for layer i+1 is at most
(1 + T_i) ||W~_i(j,:)||_2^2, so the smallest such cap bounds the minimum
eigenvalue of every feasible moment matrix.  A cap near zero means the
feasible set hugs the boundary of the cone: no interior point survives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .network import Network
from . import solver as _solver

__all__ = [
    "trace_bounds",
    "diagonal_bounds",
    "min_eig_bound",
    "min_eigenvalue",
    "verdict",
    "TargetResult",
    "VerificationReport",
    "BoundReport",
    "SweepRow",
    "SWEEP_CSV_COLUMNS",
    "format_sweep_csv",
]


def trace_bounds(net: Network, center: np.ndarray, rho: float) -> np.ndarray:
    """Trace caps T_0 .. T_H, one per moment block x_0 (input) .. x_H."""
    center = np.asarray(center, dtype=float)
    if center.shape != (net.input_dim,):
        raise ValueError("center does not match network input dimension")
    if rho < 0:
        raise ValueError("rho must be non-negative")
    H = net.num_hidden
    T = np.empty(H + 1)
    T[0] = (np.linalg.norm(center) + rho * np.sqrt(net.input_dim)) ** 2
    for i in range(H):
        T[i + 1] = (1.0 + T[i]) * float((net.extended(i) ** 2).sum())
    return T


def diagonal_bounds(net: Network, center: np.ndarray, rho: float) -> list[np.ndarray]:
    """Caps on the diagonal entries of the blocks for layers 1 .. H.

    Entry j of list element i bounds the (j, j) entry of the moment block
    of layer i+1: (1 + T_i) ||W~_i(j,:)||_2^2.
    """
    T = trace_bounds(net, center, rho)
    caps = []
    for i in range(net.num_hidden):
        row_sq = (net.extended(i) ** 2).sum(axis=1)
        caps.append((1.0 + T[i]) * row_sq)
    return caps


def min_eig_bound(net: Network, center: np.ndarray, rho: float) -> float:
    """Upper bound on the minimum eigenvalue of any feasible moment matrix."""
    return float(min(caps.min() for caps in diagonal_bounds(net, center, rho)))


def min_eigenvalue(M: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix, asymmetry checked."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(1.0, float(np.abs(M).max()) if M.size else 1.0)
    if float(np.abs(M - M.T).max()) > 1e-9 * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    return float(np.linalg.eigvalsh((M + M.T) / 2.0)[0])


@dataclass
class TargetResult:
    """Outcome of one verification solve against one competitor label."""

    target: int
    gamma: float
    status: str
    gap: float
    lambda_min: float
    runtime_ms: float


def verdict(results: list[TargetResult]) -> str:
    """Fold per-target outcomes into Robust / Undetermined / SolverFailed.

    Robust needs every competitor pushed above zero by a converged solve;
    any numerical breakdown poisons the run; everything else (a converged
    but nonpositive margin) is Undetermined.
    """
    if not results:
        raise ValueError("no target results to judge")
    if all(r.status == _solver.OPTIMAL and r.gamma > 0.0 for r in results):
        return "Robust"
    if any(
        r.status in (_solver.NUMERICAL_FAILURE, _solver.MAX_ITERATIONS)
        for r in results
    ):
        return "SolverFailed"
    return "Undetermined"


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


@dataclass
class VerificationReport:
    """Everything cmd_verify learned about one network and box."""

    verdict: str
    predicted: int
    rho: float
    variant: str
    targets: list
    bound_method: str = "ibp"
    pruned_neurons: int = 0
    layer_sizes: list = field(default_factory=list)
    lambda_star: float | None = None
    dscale: bool = False
    wscale: bool = False

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)


@dataclass
class BoundReport:
    """Strict-feasibility diagnosis for one network and box."""

    variant: str
    lambda_star: float
    status: str
    gap: float
    iterations: int
    min_eig_bound: float
    trace_bounds: list
    bound_method: str = "ibp"
    pruned_neurons: int = 0
    layer_sizes: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)


SWEEP_CSV_COLUMNS = (
    "seed",
    "L",
    "variant",
    "target",
    "gamma",
    "status",
    "gap",
    "lambda_star",
    "min_eig_bound",
    "runtime_ms",
)


@dataclass
class SweepRow:
    """One sweep cell: a (depth, seed, variant) verification plus diagnosis."""

    seed: int
    L: int
    variant: str
    target: int
    gamma: float
    status: str
    gap: float
    lambda_star: float
    min_eig_bound: float
    runtime_ms: float

    def csv_fields(self) -> list[str]:
        return [
            str(self.seed),
            str(self.L),
            self.variant,
            str(self.target),
            _num(self.gamma),
            self.status,
            _num(self.gap),
            _num(self.lambda_star),
            _num(self.min_eig_bound),
            _num(self.runtime_ms),
        ]


def _num(v: float) -> str:
    return f"{float(v):.10g}"


def format_sweep_csv(rows: list[SweepRow]) -> str:
    lines = [",".join(SWEEP_CSV_COLUMNS)]
    lines.extend(",".join(r.csv_fields()) for r in rows)
    return "\n".join(lines) + "\n"
