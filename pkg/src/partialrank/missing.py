"""Missing mechanisms, the observable top-t distribution, and data generation.

The missing parameter is a table with one row per complete ranking: row ``pi``
is the conditional distribution of the observed prefix length t over
``{1, ..., r-1}``. A top-(r-1) ranking pins down the complete ranking, so
"nothing missing" is t = r-1 and "all but the first preference missing" is
t = 1.

Dataset CSV format (bit-exact; UTF-8, LF line endings)::

    t,items
    3,2>5>1

``items`` holds the top-t item ids joined by ``>`` in preference order.
Simulated data may carry two extra columns: ``true_perm`` (the latent
complete ranking, ``>``-joined) and ``true_cluster`` (0-based component id).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, DimensionError, DomainError
from .mallows import MixtureParams, component_log_pmf, log_normalizer, mixture_pmf, sample_vertices
from .perms import (
    DEFAULT_CAP,
    Permutation,
    TopTRanking,
    distances_from,
    index_of,
    perm_table,
    prefix_tables,
)

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-10


@dataclass(frozen=True)
class MissingTable:
    """Per-vertex length distributions: ``probs[v, t-1] = P(t | pi_v)``."""

    r: int
    probs: np.ndarray  # (r!, r-1) rows on the simplex

    def __post_init__(self):
        expected = (math.factorial(self.r), self.r - 1)
        if self.probs.shape != expected:
            raise DimensionError(f"expected shape {expected}, got {self.probs.shape}")
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise DomainError("entries must lie in [0, 1]")
        if np.max(np.abs(self.probs.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
            raise DomainError("rows must sum to 1")
        self.probs.flags.writeable = False

    @classmethod
    def uniform(cls, r: int, cap: int = DEFAULT_CAP) -> "MissingTable":
        v = perm_table(r, cap).n_vertices
        return cls(r, np.full((v, r - 1), 1.0 / (r - 1)))

    @classmethod
    def homogeneous(cls, r: int, row, cap: int = DEFAULT_CAP) -> "MissingTable":
        """The same length distribution at every vertex (the MAR case)."""
        v = perm_table(r, cap).n_vertices
        row = np.asarray(row, dtype=float)
        return cls(r, np.tile(row, (v, 1)))


@dataclass(frozen=True)
class ClusterMissingSpec:
    """Generator-side mechanism where t depends on the mixture component."""

    r: int
    rows: np.ndarray  # (K, r-1) rows on the simplex

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[1] != self.r - 1:
            raise DimensionError(f"expected (K, {self.r - 1}), got {self.rows.shape}")
        if np.any(self.rows < 0) or np.any(self.rows > 1):
            raise DomainError("entries must lie in [0, 1]")
        if np.max(np.abs(self.rows.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
            raise DomainError("rows must sum to 1")
        self.rows.flags.writeable = False

    @property
    def n_clusters(self) -> int:
        return self.rows.shape[0]


# ---------------------------------------------------------------------------
# Datasets.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupBlock:
    """Observations of one length, grouped by identical prefix."""

    t: int
    rows: np.ndarray      # (G,) rows into the length-t PrefixTable
    counts: np.ndarray    # (G,) multiplicities
    members: np.ndarray   # (G, (r-t)!) compatible vertex indices


@dataclass(frozen=True)
class ObservationGroups:
    r: int
    n: int
    blocks: list[GroupBlock]
    obs_block: np.ndarray  # (n,) block index per observation
    obs_pos: np.ndarray    # (n,) row within the block per observation


@dataclass
class Dataset:
    """Top-t observations over a common r, with optional simulation truth."""

    r: int
    rankings: list[TopTRanking]
    true_perms: list[Permutation] | None = None
    true_clusters: np.ndarray | None = None
    _groups: ObservationGroups | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for tau in self.rankings:
            if tau.r != self.r:
                raise DimensionError(f"observation over {tau.r} items in r={self.r} dataset")
        if self.true_perms is not None and len(self.true_perms) != len(self.rankings):
            raise DimensionError("truth length does not match observations")
        if self.true_clusters is not None and len(self.true_clusters) != len(self.rankings):
            raise DimensionError("truth length does not match observations")

    def __len__(self) -> int:
        return len(self.rankings)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([tau.t for tau in self.rankings], dtype=np.int64)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.r,
            [self.rankings[i] for i in indices],
            [self.true_perms[i] for i in indices] if self.true_perms is not None else None,
            self.true_clusters[indices] if self.true_clusters is not None else None,
        )

    def groups(self, cap: int = DEFAULT_CAP) -> ObservationGroups:
        """Group observations sharing a prefix; cached after the first call."""
        if self._groups is None:
            tables = prefix_tables(self.r, cap)
            keys: dict[tuple[int, int], int] = {}
            per_key_count: list[int] = []
            obs_key = np.empty(len(self), dtype=np.int64)
            for i, tau in enumerate(self.rankings):
                row = tables[tau.t - 1].index[tau.items]
                key = (tau.t, row)
                slot = keys.get(key)
                if slot is None:
                    slot = len(keys)
                    keys[key] = slot
                    per_key_count.append(0)
                per_key_count[slot] += 1
                obs_key[i] = slot
            ordered = sorted(keys.items(), key=lambda kv: kv[0])
            blocks: list[GroupBlock] = []
            key_to_block_pos = {}
            for t in sorted({t for (t, _), _ in ordered}):
                rows = [row for (tt, row), _ in ordered if tt == t]
                slots = [slot for (tt, _), slot in ordered if tt == t]
                for pos, slot in enumerate(slots):
                    key_to_block_pos[slot] = (len(blocks), pos)
                rows_arr = np.array(rows, dtype=np.int32)
                counts = np.array([per_key_count[s] for s in slots], dtype=np.int64)
                members = tables[t - 1].members[rows_arr]
                blocks.append(GroupBlock(t, rows_arr, counts, members))
            obs_block = np.empty(len(self), dtype=np.int64)
            obs_pos = np.empty(len(self), dtype=np.int64)
            for i in range(len(self)):
                obs_block[i], obs_pos[i] = key_to_block_pos[int(obs_key[i])]
            self._groups = ObservationGroups(self.r, len(self), blocks, obs_block, obs_pos)
        return self._groups

    # -- CSV round trip ------------------------------------------------------

    def save_csv(self, path: str | Path) -> None:
        with_truth = self.true_perms is not None
        with_cluster = self.true_clusters is not None
        header = ["t", "items"]
        if with_truth:
            header.append("true_perm")
        if with_cluster:
            header.append("true_cluster")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i, tau in enumerate(self.rankings):
                row = [str(tau.t), ">".join(str(x) for x in tau.items)]
                if with_truth:
                    row.append(">".join(str(x) for x in self.true_perms[i].inverse))
                if with_cluster:
                    row.append(str(int(self.true_clusters[i])))
                writer.writerow(row)

    @classmethod
    def load_csv(cls, path: str | Path, r: int) -> "Dataset":
        """Parse and validate a dataset file; errors carry line numbers."""
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
        if not rows:
            logger.warning("empty dataset file %s", path)
            return cls(r, [])
        header = rows[0]
        if header[:2] != ["t", "items"]:
            raise DataFormatError(f"expected header starting with t,items; got {header}", line=1)
        has_perm = "true_perm" in header
        has_cluster = "true_cluster" in header
        perm_col = header.index("true_perm") if has_perm else -1
        cluster_col = header.index("true_cluster") if has_cluster else -1
        rankings: list[TopTRanking] = []
        perms: list[Permutation] = []
        clusters: list[int] = []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                t = int(row[0])
            except ValueError as exc:
                raise DataFormatError(f"bad length field {row[0]!r}", line=lineno) from exc
            try:
                items = tuple(int(x) for x in row[1].split(">"))
            except ValueError as exc:
                raise DataFormatError(f"bad items field {row[1]!r}", line=lineno) from exc
            if t != len(items):
                raise DataFormatError(f"length {t} does not match {len(items)} items", line=lineno)
            try:
                tau = TopTRanking(items, r)
            except DomainError as exc:
                raise DataFormatError(str(exc), line=lineno) from exc
            rankings.append(tau)
            if has_perm:
                try:
                    perms.append(Permutation.from_ordering([int(x) for x in row[perm_col].split(">")]))
                except (ValueError, DomainError) as exc:
                    raise DataFormatError(f"bad true_perm field {row[perm_col]!r}", line=lineno) from exc
            if has_cluster:
                try:
                    clusters.append(int(row[cluster_col]))
                except ValueError as exc:
                    raise DataFormatError(f"bad true_cluster field {row[cluster_col]!r}", line=lineno) from exc
        if not rankings:
            logger.warning("dataset file %s holds no observations", path)
        return cls(
            r,
            rankings,
            perms if has_perm else None,
            np.array(clusters, dtype=np.int64) if has_cluster else None,
        )


# ---------------------------------------------------------------------------
# Observable partial-ranking distribution.
# ---------------------------------------------------------------------------


def enumerate_partial_rankings(r: int, cap: int = DEFAULT_CAP) -> list[TopTRanking]:
    """Canonical enumeration of all top-t rankings: t ascending, prefixes lex."""
    out = []
    for table in prefix_tables(r, cap):
        out.extend(TopTRanking(p, r) for p in table.prefixes)
    return out


def partial_prob_vector(theta: MixtureParams, phi: MissingTable, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Probabilities of every partial ranking, in enumeration order."""
    if theta.r != phi.r:
        raise DimensionError(f"model over {theta.r} items, mechanism over {phi.r}")
    pmf = mixture_pmf(theta, cap)
    chunks = []
    for table in prefix_tables(theta.r, cap):
        members = table.members
        chunks.append((phi.probs[members, table.t - 1] * pmf[members]).sum(axis=1))
    return np.concatenate(chunks)


def empirical_partial_counts(dataset: Dataset, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Observation counts aligned with :func:`enumerate_partial_rankings`."""
    tables = prefix_tables(dataset.r, cap)
    offsets = np.cumsum([0] + [len(tb.prefixes) for tb in tables])
    counts = np.zeros(offsets[-1], dtype=np.int64)
    for tau in dataset.rankings:
        counts[offsets[tau.t - 1] + tables[tau.t - 1].index[tau.items]] += 1
    return counts


def partial_pmf(tau: TopTRanking, theta: MixtureParams, phi: MissingTable) -> float:
    """P(tau) = sum over compatible complete rankings of P(t|pi) P(pi)."""
    if tau.r != theta.r or tau.r != phi.r:
        raise DimensionError("dimension mismatch between observation, model, and mechanism")
    table = prefix_tables(tau.r)[tau.t - 1]
    members = table.members[table.index[tau.items]]
    pmf = mixture_pmf(theta)
    return float((phi.probs[members, tau.t - 1] * pmf[members]).sum())


# ---------------------------------------------------------------------------
# Simulation-study mechanisms.
# ---------------------------------------------------------------------------


def tilt_concentration_mechanism(
    c: float, c_star: float, big_r: float, sigma0: Permutation, cap: int = DEFAULT_CAP
) -> MissingTable:
    """Binary mechanism whose complete-observation rate tilts the concentration.

    Row pi is (1 - C_pi, 0, ..., 0, C_pi) with

        C_pi = min{1, (Z(c)/Z(c_star)) * R * exp(-(c_star - c) d(pi, sigma0))},

    so when the min never binds the t = r-1 marginal, renormalized, is the
    single-component model with concentration c_star.
    """
    if c <= 0 or c_star <= 0:
        raise DomainError("concentrations must be positive")
    if not 0 <= big_r <= 1:
        raise DomainError(f"R must lie in [0, 1], got {big_r}")
    r = sigma0.r
    if r < 3:
        raise DomainError("binary mechanism needs r >= 3 so that t=1 and t=r-1 differ")
    dist = distances_from(r, index_of(sigma0), cap)
    log_ratio = log_normalizer(c, r) - log_normalizer(c_star, r)
    rate = np.minimum(1.0, big_r * np.exp(log_ratio - (c_star - c) * dist))
    probs = np.zeros((dist.shape[0], r - 1))
    probs[:, 0] = 1.0 - rate
    probs[:, r - 2] = rate
    return MissingTable(r, probs)


def tilt_mixture_mechanism(w, w_star, big_r: float, r: int) -> ClusterMissingSpec:
    """Binary per-cluster mechanism with complete-observation rate (w*_k/w_k) R."""
    w = np.asarray(w, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    if w.shape != w_star.shape:
        raise DimensionError("w and w_star must have the same length")
    for name, vec in (("w", w), ("w_star", w_star)):
        if np.any(vec < 0) or abs(vec.sum() - 1.0) > 1e-12:
            raise DomainError(f"{name} must lie on the simplex")
    if np.any(w == 0):
        raise DomainError("w entries must be positive")
    if not 0 <= big_r <= 1:
        raise DomainError(f"R must lie in [0, 1], got {big_r}")
    if r < 3:
        raise DomainError("binary mechanism needs r >= 3 so that t=1 and t=r-1 differ")
    rate = (w_star / w) * big_r
    if np.any(rate > 1):
        raise DomainError(f"(w*_k/w_k) R exceeds 1: {rate}")
    rows = np.zeros((w.shape[0], r - 1))
    rows[:, 0] = 1.0 - rate
    rows[:, r - 2] = rate
    return ClusterMissingSpec(r, rows)


def induced_table(spec: ClusterMissingSpec, theta: MixtureParams, cap: int = DEFAULT_CAP) -> MissingTable:
    """Per-vertex table equivalent to a per-cluster mechanism.

    P(t | pi) = sum_k P(k | pi) phi_{k,t}; the induced (pi, t) joint law equals
    the generator's, which is what the losses need.
    """
    if spec.n_clusters != theta.n_clusters:
        raise DimensionError("cluster counts differ")
    if spec.r != theta.r:
        raise DimensionError("item counts differ")
    logits = component_log_pmf(theta, cap) + np.log(theta.weights)[:, None]
    top = logits.max(axis=0)
    gamma = np.exp(logits - top)
    gamma /= gamma.sum(axis=0)
    return MissingTable(spec.r, gamma.T @ spec.rows)


def generate_dataset(
    theta: MixtureParams,
    mech: MissingTable | ClusterMissingSpec,
    n: int,
    rng_seed: int,
    cap: int = DEFAULT_CAP,
) -> Dataset:
    """Draw (pi, k), draw t given pi or k, truncate; truth rides along."""
    if mech.r != theta.r:
        raise DimensionError(f"mechanism over {mech.r} items, model over {theta.r}")
    if isinstance(mech, ClusterMissingSpec) and mech.n_clusters != theta.n_clusters:
        raise DimensionError("cluster counts differ")
    r = theta.r
    rng = np.random.default_rng(rng_seed)
    vertices, clusters = sample_vertices(theta, n, rng, cap)
    if isinstance(mech, ClusterMissingSpec):
        rows = mech.rows[clusters]
    else:
        rows = mech.probs[vertices]
    cdf = np.cumsum(rows, axis=1)
    draws = rng.random(n)
    ts = (draws[:, None] > cdf).sum(axis=1) + 1
    ts = np.minimum(ts, r - 1)
    orderings = perm_table(r, cap).orderings
    rankings = []
    true_perms = []
    for i in range(n):
        ordering = tuple(int(x) for x in orderings[vertices[i]])
        rankings.append(TopTRanking(ordering[: int(ts[i])], r))
        true_perms.append(Permutation.from_ordering(ordering))
    return Dataset(r, rankings, true_perms, clusters.astype(np.int64))
