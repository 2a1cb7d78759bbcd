"""EM estimation of the ranking mixture and the per-vertex missing table.

One EM iteration computes posterior responsibilities over the latent complete
rankings (and components) behind each observation, then minimizes the two
separable surrogate pieces: location/concentration/weights per component, and
the missing table, which goes through the graph-regularized solver when
``lam > 0`` and through the closed form ``q[v,t] / sum_t q[v,t]`` when
``lam = 0``.

Two devices from the experimental protocol are built in: several restarts
from distinct initial locations, and a location-transition proposal during
the first few iterations. A proposal is only accepted when it does not
increase the penalized objective, which keeps every recorded trace
non-increasing. The missing-table step keeps the previous table whenever an
inexact inner solve would increase its surrogate objective, for the same
reason.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import admm
from .errors import (
    DegenerateClusterError,
    DegenerateLikelihoodError,
    DimensionError,
    DomainError,
)
from .mallows import MallowsParams, MixtureParams, component_log_pmf, log_normalizer
from .missing import Dataset, MissingTable, ObservationGroups
from .perms import DEFAULT_CAP, Permutation, build_cayley_graph, distance_matrix, index_of, perm_table, unindex


@dataclass(frozen=True)
class FitConfig:
    """Knobs for :func:`fit` and :func:`fit_me`."""

    n_clusters: int = 1
    lam: float = 10.0
    rho: float = 1.0
    em_tol: float = 1.0
    em_max_iter: int = 200
    admm_eps_primal: float = 1.0
    admm_eps_dual: float = 1.0
    admm_max_iter: int = 100
    restarts: int = 10
    transition_iters: int = 5
    c_min: float = 1e-4
    c_max: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1 or self.restarts < 1 or self.em_max_iter < 1 or self.admm_max_iter < 1:
            raise DomainError("counts must be at least 1")
        if self.lam < 0 or self.rho <= 0:
            raise DomainError("need lam >= 0 and rho > 0")
        if min(self.em_tol, self.admm_eps_primal, self.admm_eps_dual) <= 0:
            raise DomainError("tolerances must be positive")
        if self.transition_iters < 0:
            raise DomainError("transition_iters must be nonnegative")
        if not 0 < self.c_min < self.c_max:
            raise DomainError("need 0 < c_min < c_max")


@dataclass
class Responsibilities:
    """Posterior weights per observation plus the aggregates the M-steps use."""

    r: int
    n: int
    n_clusters: int
    q_table: np.ndarray        # (V, r-1): sum over observations of length t
    cluster_vertex: np.ndarray  # (K, V): sum over observations per component
    cluster_mass: np.ndarray   # (K,)
    gamma: np.ndarray          # (n, K) per-observation component posteriors
    groups: ObservationGroups = field(repr=False)
    block_weights: list[np.ndarray] = field(repr=False)  # per block, (K, G, m)

    def per_observation(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Compatible vertex indices and the (K, m) posterior weights of one row."""
        b = int(self.groups.obs_block[i])
        pos = int(self.groups.obs_pos[i])
        return self.groups.blocks[b].members[pos], self.block_weights[b][:, pos, :]


def e_step(theta: MixtureParams, phi: MissingTable, dataset: Dataset, cap: int = DEFAULT_CAP) -> Responsibilities:
    """Posterior weights over compatible rankings, in log space throughout."""
    if theta.r != dataset.r or phi.r != dataset.r:
        raise DimensionError("model, mechanism, and data disagree on item count")
    groups = dataset.groups(cap)
    n_vertices = perm_table(dataset.r, cap).n_vertices
    k = theta.n_clusters
    log_comp = component_log_pmf(theta, cap) + np.log(theta.weights)[:, None]
    with np.errstate(divide="ignore"):
        log_phi = np.log(phi.probs)

    q_table = np.zeros((n_vertices, dataset.r - 1))
    cluster_vertex = np.zeros((k, n_vertices))
    gamma = np.empty((len(dataset), k))
    block_weights: list[np.ndarray] = []
    for b, block in enumerate(groups.blocks):
        logits = log_comp[:, block.members] + log_phi[block.members, block.t - 1][None, :, :]
        top = logits.max(axis=(0, 2))
        if np.any(np.isneginf(top)):
            g = int(np.argmax(np.isneginf(top)))
            bad = int(np.nonzero((groups.obs_block == b) & (groups.obs_pos == g))[0][0])
            raise DegenerateLikelihoodError(
                f"observation {bad} has zero likelihood: the mechanism vanishes on its compatible set"
            )
        weights = np.exp(logits - top[None, :, None])
        weights /= weights.sum(axis=(0, 2))[None, :, None]
        block_weights.append(weights)
        scaled = weights * block.counts[None, :, None]
        np.add.at(q_table, (block.members, block.t - 1), scaled.sum(axis=0))
        for kk in range(k):
            np.add.at(cluster_vertex[kk], block.members, scaled[kk])
        block_gamma = weights.sum(axis=2)  # (K, G)
        mask = groups.obs_block == b
        gamma[mask] = block_gamma[:, groups.obs_pos[mask]].T
    return Responsibilities(
        r=dataset.r,
        n=len(dataset),
        n_clusters=k,
        q_table=q_table,
        cluster_vertex=cluster_vertex,
        cluster_mass=cluster_vertex.sum(axis=1),
        gamma=gamma,
        groups=groups,
        block_weights=block_weights,
    )


def _golden_section(f, lo: float, hi: float, tol: float = 1e-8) -> float:
    """Minimize a unimodal scalar function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def m_step_theta(
    q: Responsibilities,
    dataset: Dataset,
    n_clusters: int | None = None,
    c_min: float = 1e-4,
    c_max: float = 20.0,
    cap: int = DEFAULT_CAP,
) -> MixtureParams:
    """Exact per-component minimizers given the aggregated responsibilities.

    The location is the exhaustive minimizer of the expected distance
    (lexicographically smallest on ties); the concentration solves the 1-D
    convex problem on [c_min, c_max] by golden section.
    """
    if n_clusters is not None and n_clusters != q.n_clusters:
        raise DimensionError(f"responsibilities carry K={q.n_clusters}, requested {n_clusters}")
    if dataset.r != q.r:
        raise DimensionError("responsibilities and data disagree on item count")
    dist = distance_matrix(q.r, cap)
    components = []
    total = q.cluster_mass.sum()
    for k in range(q.n_clusters):
        mass = float(q.cluster_mass[k])
        if mass <= 0:
            raise DegenerateClusterError(f"component {k} received no posterior mass")
        scores = q.cluster_vertex[k] @ dist
        sigma_idx = int(np.argmin(scores))
        expected_dist = float(scores[sigma_idx])
        c_hat = _golden_section(
            lambda c: c * expected_dist + mass * log_normalizer(c, q.r), c_min, c_max
        )
        components.append(MallowsParams(unindex(sigma_idx, q.r), c_hat))
    raw = [float(m) / float(total) for m in q.cluster_mass]
    # renormalize away float drift so the simplex check stays happy
    weights = tuple(w / sum(raw) for w in raw)
    return MixtureParams(tuple(components), weights)


# ---------------------------------------------------------------------------
# Objectives.
# ---------------------------------------------------------------------------


def observable_nll(theta: MixtureParams, phi: MissingTable, dataset: Dataset, cap: int = DEFAULT_CAP) -> float:
    """Negative log-likelihood of the observed top-t rankings."""
    groups = dataset.groups(cap)
    log_comp = component_log_pmf(theta, cap) + np.log(theta.weights)[:, None]
    with np.errstate(divide="ignore"):
        log_phi = np.log(phi.probs)
    total = 0.0
    for block in groups.blocks:
        logits = log_comp[:, block.members] + log_phi[block.members, block.t - 1][None, :, :]
        top = logits.max(axis=(0, 2))
        if np.any(np.isneginf(top)):
            return np.inf
        ll = top + np.log(np.exp(logits - top[None, :, None]).sum(axis=(0, 2)))
        total -= float((block.counts * ll).sum())
    return total


def phi_penalty(phi_probs: np.ndarray, r: int, cap: int = DEFAULT_CAP) -> float:
    """Sum over graph edges of the squared row difference."""
    graph = build_cayley_graph(r, cap)
    eu, ev = graph.edges[:, 0], graph.edges[:, 1]
    return float(((phi_probs[eu] - phi_probs[ev]) ** 2).sum())


def penalized_nll(
    theta: MixtureParams, phi: MissingTable, dataset: Dataset, lam: float, cap: int = DEFAULT_CAP
) -> float:
    """The estimation objective: observable NLL plus lam times the penalty."""
    value = observable_nll(theta, phi, dataset, cap)
    if lam > 0:
        value += lam * phi_penalty(phi.probs, dataset.r, cap)
    return value


def closed_form_phi(q_table: np.ndarray) -> np.ndarray:
    """Unregularized missing-table step: normalized rows, uniform where empty."""
    totals = q_table.sum(axis=1, keepdims=True)
    uniform = np.full_like(q_table, 1.0 / q_table.shape[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        rows = q_table / totals
    return np.where(totals > 0, rows, uniform)


# ---------------------------------------------------------------------------
# Fit results.
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    theta: MixtureParams
    phi: MissingTable
    nll: float
    trace: list[float]
    restart: int
    posteriors: np.ndarray
    converged: bool
    method: str
    config: FitConfig

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "r": self.theta.r,
            "theta": {
                "components": [
                    {
                        "sigma": ">".join(str(x) for x in comp.sigma.inverse),
                        "c": comp.c,
                        "w": w,
                    }
                    for comp, w in zip(self.theta.components, self.theta.weights)
                ]
            },
            "phi": [[float(x) for x in row] for row in self.phi.probs],
            "nll": self.nll,
            "trace": list(self.trace),
            "restart": self.restart,
            "converged": self.converged,
            "config": asdict(self.config),
        }

    def save_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def load_fit_json(path: str | Path) -> tuple[MixtureParams, MissingTable, str]:
    """Reload the fitted parameters (and method label) from a saved result."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    components = tuple(
        MallowsParams(Permutation.from_ordering([int(x) for x in entry["sigma"].split(">")]), float(entry["c"]))
        for entry in payload["theta"]["components"]
    )
    weights = tuple(float(entry["w"]) for entry in payload["theta"]["components"])
    theta = MixtureParams(components, tuple(w / sum(weights) for w in weights))
    phi = MissingTable(int(payload["r"]), np.array(payload["phi"], dtype=float))
    return theta, phi, payload.get("method", "?")


# ---------------------------------------------------------------------------
# EM drivers.
# ---------------------------------------------------------------------------


def _initial_locations(rng: np.random.Generator, n_vertices: int, k: int, restarts: int) -> list[tuple[int, ...]]:
    """Per-restart location tuples, kept distinct across restarts when possible."""
    if k > n_vertices:
        raise DomainError(f"cannot place {k} distinct locations among {n_vertices} rankings")
    seen: set[tuple[int, ...]] = set()
    inits = []
    for _ in range(restarts):
        pick = tuple(int(v) for v in rng.choice(n_vertices, size=k, replace=False))
        for _ in range(100):
            if pick not in seen:
                break
            pick = tuple(int(v) for v in rng.choice(n_vertices, size=k, replace=False))
        seen.add(pick)
        inits.append(pick)
    return inits


def _propose_transition(theta: MixtureParams, rng: np.random.Generator, graph) -> MixtureParams | None:
    """Move each location to a random distance-1 neighbor with probability 1/2."""
    new_components = []
    moved = False
    for comp in theta.components:
        if rng.random() < 0.5:
            nbrs = graph.neighbors[index_of(comp.sigma)]
            target = int(nbrs[rng.integers(len(nbrs))])
            new_components.append(MallowsParams(unindex(target, theta.r), comp.c))
            moved = True
        else:
            new_components.append(comp)
    if not moved:
        return None
    return MixtureParams(tuple(new_components), theta.weights)


def _run_em(
    dataset: Dataset,
    config: FitConfig,
    init_vertices: tuple[int, ...],
    rng: np.random.Generator,
    mode: str,
    me_phi: MissingTable | None,
    cap: int,
) -> tuple[MixtureParams, MissingTable, list[float], bool]:
    r = dataset.r
    graph = build_cayley_graph(r, cap)
    lam = config.lam if mode == "regularized" else 0.0
    theta = MixtureParams(
        tuple(MallowsParams(unindex(v, r), 1.0) for v in init_vertices),
        tuple(1.0 / config.n_clusters for _ in range(config.n_clusters)),
    )
    phi = me_phi if mode == "me" else MissingTable.uniform(r, cap)
    current = penalized_nll(theta, phi, dataset, lam, cap)
    trace = [current]
    converged = False
    for m in range(1, config.em_max_iter + 1):
        resp = e_step(theta, phi, dataset, cap)
        if mode == "me":
            phi_new = phi
        elif lam > 0:
            solved = admm.solve_phi(
                resp.q_table,
                graph,
                lam,
                config.rho,
                phi0=phi.probs,
                eps_primal=config.admm_eps_primal,
                eps_dual=config.admm_eps_dual,
                max_iter=config.admm_max_iter,
            )
            # an inexact inner solve must never push the surrogate uphill
            if solved.objective <= admm.phi_objective(phi.probs, resp.q_table, graph, lam):
                phi_new = solved.phi
            else:
                phi_new = phi
        else:
            phi_new = MissingTable(r, closed_form_phi(resp.q_table))
        theta_new = m_step_theta(resp, dataset, config.n_clusters, config.c_min, config.c_max, cap)
        value = penalized_nll(theta_new, phi_new, dataset, lam, cap)
        if m <= config.transition_iters:
            proposal = _propose_transition(theta_new, rng, graph)
            if proposal is not None:
                alt = penalized_nll(proposal, phi_new, dataset, lam, cap)
                if alt <= value:
                    theta_new, value = proposal, alt
        theta, phi = theta_new, phi_new
        trace.append(value)
        if abs(current - value) < config.em_tol:
            current = value
            converged = True
            break
        current = value
    return theta, phi, trace, converged


def _fit_common(dataset: Dataset, config: FitConfig, mode: str, cap: int) -> FitResult:
    if len(dataset) == 0:
        raise DomainError("cannot fit an empty dataset")
    n_vertices = perm_table(dataset.r, cap).n_vertices
    seq = np.random.SeedSequence(config.seed)
    children = seq.spawn(config.restarts + 1)
    init_rng = np.random.default_rng(children[0])
    inits = _initial_locations(init_rng, n_vertices, config.n_clusters, config.restarts)

    me_phi = None
    if mode == "me":
        counts = np.bincount(dataset.lengths, minlength=dataset.r)[1:]
        me_phi = MissingTable.homogeneous(dataset.r, counts / counts.sum(), cap)

    best = None
    for j in range(config.restarts):
        rng = np.random.default_rng(children[j + 1])
        theta, phi, trace, converged = _run_em(dataset, config, inits[j], rng, mode, me_phi, cap)
        if best is None or trace[-1] < best[3]:
            best = (j, theta, phi, trace[-1], trace, converged)

    restart, theta, phi, nll, trace, converged = best
    posteriors = e_step(theta, phi, dataset, cap).gamma
    if mode == "me":
        method = "ME"
    elif config.lam > 0:
        method = f"R{config.lam:g}"
    else:
        method = "NR"
    return FitResult(
        theta=theta,
        phi=phi,
        nll=nll,
        trace=trace,
        restart=restart,
        posteriors=posteriors,
        converged=converged,
        method=method,
        config=config,
    )


def fit(dataset: Dataset, config: FitConfig, cap: int = DEFAULT_CAP) -> FitResult:
    """The proposed estimator: graph-regularized when lam > 0, plain (NR) at lam = 0."""
    return _fit_common(dataset, config, "regularized" if config.lam > 0 else "nr", cap)


def fit_me(dataset: Dataset, config: FitConfig, cap: int = DEFAULT_CAP) -> FitResult:
    """Homogeneous-missingness baseline.

    The likelihood splits into a missing part and a ranking part, so the
    missing table is the empirical length histogram copied to every vertex
    and EM only runs on the ranking mixture.
    """
    return _fit_common(dataset, config, "me", cap)
