"""Graph-regularized estimation of the missing table by ADMM edge splitting.

Solves, for a fixed table of aggregated responsibilities ``q``:

    minimize  -sum_{v,t} q[v,t] log phi[v,t]
              + lam * sum_{{u,v} in E} ||phi_u - phi_v||^2
    over rows of phi on the probability simplex,

by keeping one copy of each endpoint per edge, so every iteration is a sweep
of independent per-vertex updates, independent per-edge updates, and a dual
ascent step. The per-vertex subproblem has a closed form up to the simplex
multiplier nu, which bisection pins down; the per-edge subproblem is an exact
convex combination with a constant mixing weight

    alpha = (1 + rho / (4 lam + rho)) / 2  in (1/2, 1].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, DomainError, NumericError
from .missing import MissingTable
from .perms import CayleyGraph

NU_TOL = 1e-12          # target on the simplex residual |sum(phi) - 1|
NU_HARD_TOL = 1e-10     # failure threshold (would violate the row-sum contract)
_MAX_BISECT = 300


@dataclass
class AdmmState:
    """Primal rows, per-directed-edge copies and duals, and residuals."""

    phi: np.ndarray        # (V, r-1)
    copies_uv: np.ndarray  # (E, r-1), copy owned by edge slot u -> v
    copies_vu: np.ndarray  # (E, r-1), copy owned by edge slot v -> u
    duals_uv: np.ndarray   # (E, r-1)
    duals_vu: np.ndarray   # (E, r-1)
    iteration: int = 0
    res_primal: float = np.inf
    res_dual: float = np.inf


@dataclass(frozen=True)
class AdmmResult:
    phi: MissingTable
    converged: bool
    iterations: int
    res_primal: float
    res_dual: float
    objective: float


def mixing_weight(lam: float, rho: float) -> float:
    """Exact minimizer weight for the per-edge subproblem."""
    if lam < 0 or rho <= 0:
        raise DomainError("need lam >= 0 and rho > 0")
    return 0.5 * (1.0 + rho / (4.0 * lam + rho))


def edge_update(a: np.ndarray, b: np.ndarray, lam: float, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """Minimize lam||x-y||^2 + (rho/2)(||a-x||^2 + ||b-y||^2) over (x, y)."""
    alpha = mixing_weight(lam, rho)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return alpha * a + (1.0 - alpha) * b, alpha * b + (1.0 - alpha) * a


def _phi_of_nu(nu: np.ndarray, y: np.ndarray, q: np.ndarray, scale: float) -> np.ndarray:
    """Row minimizers at multiplier nu; stable on both signs of y + nu."""
    z = y + nu[:, None]
    root = np.sqrt(z * z + 2.0 * scale * q)
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = 2.0 * q / (root + z)
    neg = (root - z) / scale
    return np.where(z > 0, pos, neg)


def _vertex_update_batch(q: np.ndarray, y: np.ndarray, rho: float, degree: int) -> np.ndarray:
    """Solve every per-vertex subproblem at once; rows land on the simplex."""
    scale = 2.0 * rho * degree
    q = np.asarray(q, dtype=float)
    y = np.asarray(y, dtype=float)
    qsum = q.sum(axis=1)
    lo = -y.max(axis=1) - rho * degree          # s(lo) >= 0
    hi = -y.min(axis=1) + np.maximum(qsum, 1.0)  # s(hi) <= 0
    nu = 0.5 * (lo + hi)
    for _ in range(_MAX_BISECT):
        nu = 0.5 * (lo + hi)
        s = _phi_of_nu(nu, y, q, scale).sum(axis=1) - 1.0
        above = s >= 0
        lo = np.where(above, nu, lo)
        hi = np.where(above, hi, nu)
        if np.max(np.abs(s)) <= NU_TOL:
            break
        if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(nu))):
            break
    phi = _phi_of_nu(nu, y, q, scale)
    worst = np.max(np.abs(phi.sum(axis=1) - 1.0))
    if worst > NU_HARD_TOL:
        raise NumericError(f"simplex multiplier search stalled at residual {worst:.3e}")
    # trim float fuzz just past the box; the multiplier residual bounds the change
    return np.clip(phi, 0.0, 1.0)


def vertex_update(q_row: np.ndarray, y: np.ndarray, rho: float, degree: int) -> np.ndarray:
    """Closed-form simplex minimizer for one vertex.

    ``q_row`` holds the aggregated responsibilities of the vertex, ``y`` is
    rho * sum over neighbors of (dual - copy). Entries come out zero exactly
    where ``q_row`` is zero and the multiplier pushes them to the boundary.
    """
    if rho <= 0 or degree < 1:
        raise DomainError("need rho > 0 and degree >= 1")
    q_row = np.asarray(q_row, dtype=float)
    if np.any(q_row < 0):
        raise DomainError("responsibilities must be nonnegative")
    return _vertex_update_batch(q_row[None, :], np.asarray(y, dtype=float)[None, :], rho, degree)[0]


# ---------------------------------------------------------------------------
# Objective and diagnostics.
# ---------------------------------------------------------------------------


def phi_objective(phi: np.ndarray, q: np.ndarray, graph: CayleyGraph, lam: float) -> float:
    """-sum q log phi (0 log 0 = 0) plus the edge penalty."""
    mask = q > 0
    vals = phi[mask]
    if np.any(vals <= 0):
        return np.inf
    nll = -float((q[mask] * np.log(vals)).sum())
    eu, ev = graph.edges[:, 0], graph.edges[:, 1]
    return nll + lam * float(((phi[eu] - phi[ev]) ** 2).sum())


def augmented_lagrangian(state: AdmmState, q: np.ndarray, graph: CayleyGraph, lam: float, rho: float) -> float:
    """The penalty-split objective driving the vertex and edge sweeps."""
    mask = q > 0
    vals = state.phi[mask]
    if np.any(vals <= 0):
        return np.inf
    total = -float((q[mask] * np.log(vals)).sum())
    eu, ev = graph.edges[:, 0], graph.edges[:, 1]
    total += lam * float(((state.copies_uv - state.copies_vu) ** 2).sum())
    total -= 0.5 * rho * float((state.duals_uv**2).sum() + (state.duals_vu**2).sum())
    total += 0.5 * rho * float(((state.phi[eu] - state.copies_uv + state.duals_uv) ** 2).sum())
    total += 0.5 * rho * float(((state.phi[ev] - state.copies_vu + state.duals_vu) ** 2).sum())
    return total


# ---------------------------------------------------------------------------
# Full solver.
# ---------------------------------------------------------------------------


def init_state(graph: CayleyGraph, phi0: np.ndarray) -> AdmmState:
    eu, ev = graph.edges[:, 0], graph.edges[:, 1]
    return AdmmState(
        phi=np.array(phi0, dtype=float),
        copies_uv=phi0[eu].astype(float),
        copies_vu=phi0[ev].astype(float),
        duals_uv=np.zeros((graph.n_edges, phi0.shape[1])),
        duals_vu=np.zeros((graph.n_edges, phi0.shape[1])),
    )


def vertex_sweep(state: AdmmState, q: np.ndarray, graph: CayleyGraph, rho: float) -> None:
    eu, ev = graph.edges[:, 0], graph.edges[:, 1]
    y = np.zeros_like(state.phi)
    np.add.at(y, eu, state.duals_uv - state.copies_uv)
    np.add.at(y, ev, state.duals_vu - state.copies_vu)
    y *= rho
    state.phi = _vertex_update_batch(q, y, rho, graph.r - 1)


def edge_sweep(state: AdmmState, graph: CayleyGraph, lam: float, rho: float) -> None:
    eu, ev = graph.edges[:, 0], graph.edges[:, 1]
    a = state.phi[eu] + state.duals_uv
    b = state.phi[ev] + state.duals_vu
    alpha = mixing_weight(lam, rho)
    state.copies_uv = alpha * a + (1.0 - alpha) * b
    state.copies_vu = alpha * b + (1.0 - alpha) * a


def dual_sweep(state: AdmmState, graph: CayleyGraph) -> None:
    eu, ev = graph.edges[:, 0], graph.edges[:, 1]
    state.duals_uv = state.duals_uv + (state.phi[eu] - state.copies_uv)
    state.duals_vu = state.duals_vu + (state.phi[ev] - state.copies_vu)


def solve_phi(
    q_table: np.ndarray,
    graph: CayleyGraph,
    lam: float,
    rho: float = 1.0,
    phi0: MissingTable | np.ndarray | None = None,
    eps_primal: float = 1.0,
    eps_dual: float = 1.0,
    max_iter: int = 100,
    trace_path: str | Path | None = None,
) -> AdmmResult:
    """Run the splitting iteration on the aggregated responsibilities.

    Stops once both residuals drop below their thresholds, else at
    ``max_iter``; a non-converged run returns the best iterate seen (by
    objective) with ``converged=False`` rather than raising.
    """
    if lam < 0 or rho <= 0:
        raise DomainError("need lam >= 0 and rho > 0")
    q = np.asarray(q_table, dtype=float)
    if q.shape != (graph.n_vertices, graph.r - 1):
        raise DimensionError(f"q_table shape {q.shape} does not match graph over r={graph.r}")
    if np.any(q < 0):
        raise DomainError("responsibilities must be nonnegative")
    if phi0 is None:
        phi0 = np.full((graph.n_vertices, graph.r - 1), 1.0 / (graph.r - 1))
    elif isinstance(phi0, MissingTable):
        phi0 = phi0.probs
    state = init_state(graph, np.asarray(phi0, dtype=float))
    eu, ev = graph.edges[:, 0], graph.edges[:, 1]

    trace_rows = [] if trace_path is not None else None
    best_phi = state.phi
    best_obj = np.inf
    while (state.res_primal >= eps_primal or state.res_dual >= eps_dual) and state.iteration < max_iter:
        copies_before = (state.copies_uv, state.copies_vu)
        vertex_sweep(state, q, graph, rho)
        edge_sweep(state, graph, lam, rho)
        dual_sweep(state, graph)
        state.res_primal = float(
            np.sqrt(((state.phi[eu] - state.copies_uv) ** 2).sum() + ((state.phi[ev] - state.copies_vu) ** 2).sum())
        )
        state.res_dual = float(
            np.sqrt(
                ((state.copies_uv - copies_before[0]) ** 2).sum()
                + ((state.copies_vu - copies_before[1]) ** 2).sum()
            )
        )
        state.iteration += 1
        obj = phi_objective(state.phi, q, graph, lam)
        if obj < best_obj:
            best_obj = obj
            best_phi = state.phi
        if trace_rows is not None:
            trace_rows.append((state.iteration, obj, state.res_primal, state.res_dual))

    converged = state.res_primal < eps_primal and state.res_dual < eps_dual
    phi = state.phi if converged else best_phi
    if trace_rows is not None:
        with open(trace_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iter", "objective", "res_p", "res_d"])
            writer.writerows(trace_rows)
    return AdmmResult(
        phi=MissingTable(graph.r, phi),
        converged=converged,
        iterations=state.iteration,
        res_primal=state.res_primal,
        res_dual=state.res_dual,
        objective=phi_objective(phi, q, graph, lam),
    )
