"""Domain types, synthetic-data generators, and recovery metrics.

The covariance of the synthetic models is ``Sigma = L + S`` with a low-rank
``L = M diag(tau^2) M^T`` and a residual part that is either itself sparse
(models 1-3) or has sparse inverse (models 4-6). Ground truth carries the
constituents plus the support used for false-positive / false-negative
accounting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .graphs import UndirectedGraph

__all__ = [
    "ObservationMatrix",
    "Hyperparameters",
    "FactorState",
    "SparseState",
    "PrecisionState",
    "SimulationSpec",
    "GroundTruth",
    "ring_of_squares_graph",
    "simulate",
    "assemble_sigma",
    "matrix_losses",
    "support_metrics",
    "save_matrix_csv",
    "load_matrix_csv",
]


@dataclass(frozen=True)
class ObservationMatrix:
    """A q x n data matrix: rows are variables, columns are i.i.d. samples."""

    data: np.ndarray

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if data.ndim != 2:
            raise ValueError("observations must form a 2-d matrix")
        if not np.all(np.isfinite(data)):
            raise ValueError("observations contain non-finite entries")
        object.__setattr__(self, "data", data)

    @property
    def q(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    def centered(self) -> "ObservationMatrix":
        """Center each variable at its sample mean (the model assumes mean zero)."""
        return ObservationMatrix(self.data - self.data.mean(axis=1, keepdims=True))

    def sample_covariance(self) -> np.ndarray:
        centered = self.data - self.data.mean(axis=1, keepdims=True)
        return centered @ centered.T / max(self.n - 1, 1)

    @classmethod
    def from_csv(cls, path) -> "ObservationMatrix":
        return cls(load_matrix_csv(path))

    def to_csv(self, path) -> None:
        save_matrix_csv(path, self.data)


@dataclass
class Hyperparameters:
    """Prior hyperparameters shared across the three model variants.

    ``a_rho, b_rho`` drive the selection probabilities of the sparse
    covariance entries (``lrsd``) or of the precision entries
    (``gfm-lasso``); ``delta, Phi`` parameterize the HIW prior and ``xi_max``
    bounds the uniform prior on the graph-size penalty exponent.
    """

    r: int
    a_p: float = 1.0
    b_p: float = 10.0
    a_pi: float = 0.1
    b_pi: float = 0.9
    a_tau: float = 1.0
    b_tau: float = 1.0
    a_lambda: float = 1.0
    b_lambda: float = 1.0
    a_rho: float = 0.5
    b_rho: float = 0.5
    delta: float = 3.0
    Phi: np.ndarray | None = None
    xi_max: float = 5.0

    def __post_init__(self):
        positives = {
            "r": self.r,
            "a_p": self.a_p,
            "b_p": self.b_p,
            "a_pi": self.a_pi,
            "b_pi": self.b_pi,
            "a_tau": self.a_tau,
            "b_tau": self.b_tau,
            "a_lambda": self.a_lambda,
            "b_lambda": self.b_lambda,
            "a_rho": self.a_rho,
            "b_rho": self.b_rho,
            "delta": self.delta,
            "xi_max": self.xi_max,
        }
        for name, value in positives.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")

    @classmethod
    def defaults(cls, q: int, r: int | None = None, variant: str = "lrsd") -> "Hyperparameters":
        """Default hyperparameters for a q-dimensional problem.

        The factor-inclusion priors penalize rank heavily; the lasso variant
        uses a sparser Beta prior on the precision selection probabilities.
        """
        if r is None:
            r = min(10, q)
        if r > q:
            raise ValueError(f"candidate factor count r={r} exceeds dimension q={q}")
        hyper = cls(
            r=r,
            a_p=1.0,
            b_p=float(r),
            a_pi=1.0 / q,
            b_pi=1.0 - 1.0 / q if q > 1 else 0.5,
        )
        if variant == "gfm-lasso":
            hyper.a_rho = 1.0
            hyper.b_rho = float(q)
        elif variant not in ("lrsd", "gfm-hiw"):
            raise ValueError(f"unknown variant {variant!r}")
        return hyper

    def phi_matrix(self, q: int) -> np.ndarray:
        if self.Phi is None:
            return np.eye(q)
        phi = np.asarray(self.Phi, dtype=float)
        if phi.shape != (q, q):
            raise ValueError("Phi must be q x q")
        return phi


@dataclass
class FactorState:
    """Low-rank half of the model: loadings, scores, indicators, variances."""

    loadings: np.ndarray        # q x r
    scores: np.ndarray          # r x n
    indicators: np.ndarray      # r, values in {0, 1}
    variances: np.ndarray       # r, positive
    inclusion_probs: np.ndarray  # r, in [0, 1]
    pi: float

    @property
    def active_count(self) -> int:
        return int(self.indicators.sum())

    def low_rank_matrix(self) -> np.ndarray:
        weights = self.indicators * self.variances
        return (self.loadings * weights) @ self.loadings.T


@dataclass
class SparseState:
    """Sparse residual covariance with its shrinkage and selection parameters."""

    S: np.ndarray
    lam: float
    rho: np.ndarray  # q x q symmetric, upper triangle meaningful


@dataclass
class PrecisionState:
    """Sparse residual precision with its shrinkage and selection parameters."""

    C: np.ndarray
    lam: float
    rho: np.ndarray


@dataclass(frozen=True)
class SimulationSpec:
    model_id: int
    q: int
    n: int
    seed: int = 0

    def __post_init__(self):
        if self.model_id not in range(1, 7):
            raise ValueError(f"model_id must be in 1..6, got {self.model_id}")
        if self.q < 1 or self.n < 1:
            raise ValueError("q and n must be positive")
        if self.model_id in (2, 3, 5) and self.q % 5 != 0:
            raise ValueError("block-structured models need q divisible by 5")
        if self.model_id == 6 and self.q % 3 != 0:
            raise ValueError("model 6 needs q divisible by 3 (ring of shared 4-cycles)")


@dataclass
class GroundTruth:
    """True covariance constituents and support for a simulation model."""

    Sigma: np.ndarray
    L: np.ndarray
    S: np.ndarray
    rank: int
    edges: frozenset[tuple[int, int]]
    C: np.ndarray | None = None
    model_id: int = 0

    def to_json(self, path) -> None:
        payload = {
            "model_id": self.model_id,
            "rank": self.rank,
            "edges": sorted(map(list, self.edges)),
            "Sigma": self.Sigma.tolist(),
            "L": self.L.tolist(),
            "S": self.S.tolist(),
            "C": self.C.tolist() if self.C is not None else None,
        }
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def from_json(cls, path) -> "GroundTruth":
        payload = json.loads(Path(path).read_text())
        return cls(
            Sigma=np.asarray(payload["Sigma"], dtype=float),
            L=np.asarray(payload["L"], dtype=float),
            S=np.asarray(payload["S"], dtype=float),
            rank=int(payload["rank"]),
            edges=frozenset(tuple(e) for e in payload["edges"]),
            C=None if payload["C"] is None else np.asarray(payload["C"], dtype=float),
            model_id=int(payload.get("model_id", 0)),
        )


def _orthonormal_columns(q: int, k: int, rng: np.random.Generator) -> np.ndarray:
    m, r = np.linalg.qr(rng.standard_normal((q, k)))
    return m * np.sign(np.diag(r))


def _unit_vector(q: int, rng: np.random.Generator, support: slice | None = None) -> np.ndarray:
    v = np.zeros(q)
    if support is None:
        support = slice(0, q)
    v[support] = rng.standard_normal(len(range(*support.indices(q))))
    return v / np.linalg.norm(v)


def _block_diagonal_residual(q: int) -> tuple[np.ndarray, frozenset]:
    block = 0.7 * np.ones((5, 5)) + 0.3 * np.eye(5)
    s = np.zeros((q, q))
    edges = set()
    for start in range(0, q, 5):
        s[start : start + 5, start : start + 5] = block
        for j in range(start, start + 5):
            for jp in range(j + 1, start + 5):
                edges.add((j, jp))
    return s, frozenset(edges)


def ring_of_squares_graph(q: int) -> UndirectedGraph:
    """Non-chordal residual graph: a ring of 4-cycles sharing single vertices.

    Vertices come in groups of three per square (shared corner plus two
    private vertices); square ``s`` is the chordless cycle
    ``corner_s - a_s - corner_{s+1} - b_s``.
    """
    if q % 3 != 0 or q < 6:
        raise ValueError("need q divisible by 3 and at least 6")
    n_squares = q // 3
    edges = []
    for s in range(n_squares):
        corner = 3 * s
        a = 3 * s + 1
        b = 3 * s + 2
        nxt = (3 * (s + 1)) % q
        edges += [(corner, a), (a, nxt), (corner, b), (b, nxt)]
    return UndirectedGraph(q, edges)


def _model6_precision(q: int) -> tuple[np.ndarray, frozenset]:
    graph = ring_of_squares_graph(q)
    adj = graph.to_adjacency().astype(float)
    weight = 0.3
    eigmin = float(np.linalg.eigvalsh(adj).min())
    if 1.0 + weight * eigmin < 0.05:
        weight = 0.95 / abs(eigmin)  # scale edge weights down until safely SPD
    c = np.eye(q) + weight * adj
    return c, frozenset(graph.edges)


def simulate(
    spec: SimulationSpec, rng: np.random.Generator | None = None
) -> tuple[ObservationMatrix, GroundTruth]:
    """Generate data ``y ~ N_q(0, Sigma_true)`` plus the ground truth.

    Models 1-3 target the covariance-support task (sparse ``S``); models 4-6
    target graph recovery (sparse ``S^-1``). All randomness comes from the
    supplied generator, or from ``spec.seed`` when none is given.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    q, n = spec.q, spec.n
    c_true: np.ndarray | None = None

    if spec.model_id in (1, 3):
        m = _orthonormal_columns(q, 3, rng)
        d = np.full(3, 8.0 * q / n)
        low_rank = (m * d) @ m.T
        rank = 3
        if spec.model_id == 1:
            residual, edges = np.eye(q), frozenset()
        else:
            residual, edges = _block_diagonal_residual(q)
    elif spec.model_id == 2:
        low_rank = 0.3 * np.ones((q, q))
        rank = 1
        residual, edges = _block_diagonal_residual(q)
    elif spec.model_id == 4:
        m = _unit_vector(q, rng)
        low_rank = 4.0 * np.outer(m, m)
        rank = 1
        idx = np.arange(q)
        residual = 0.7 ** np.abs(idx[:, None] - idx[None, :])
        edges = frozenset((j, j + 1) for j in range(q - 1))
        c_true = np.linalg.inv(residual)
    elif spec.model_id == 5:
        half = q // 2
        m1 = _unit_vector(q, rng, slice(0, half))
        m2 = _unit_vector(q, rng, slice(half, q))
        low_rank = 4.0 * (np.outer(m1, m1) + np.outer(m2, m2))
        rank = 2
        residual, edges = _block_diagonal_residual(q)
        c_true = np.linalg.inv(residual)
    else:  # model 6
        m = _unit_vector(q, rng)
        low_rank = 4.0 * np.outer(m, m)
        rank = 1
        c_true, edges = _model6_precision(q)
        residual = np.linalg.inv(c_true)

    sigma = low_rank + residual
    root = np.linalg.cholesky(sigma)
    data = root @ rng.standard_normal((q, n))
    truth = GroundTruth(
        Sigma=sigma,
        L=low_rank,
        S=residual,
        rank=rank,
        edges=edges,
        C=c_true,
        model_id=spec.model_id,
    )
    return ObservationMatrix(data), truth


def assemble_sigma(factor: FactorState, sparse: SparseState) -> np.ndarray:
    """Covariance implied by the current state: loadings part plus residual."""
    q = factor.loadings.shape[0]
    if sparse.S.shape != (q, q):
        raise ValueError("factor and sparse states have mismatched dimensions")
    sigma = factor.low_rank_matrix() + sparse.S
    return (sigma + sigma.T) / 2.0


def matrix_losses(estimate: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    """Entrywise l1 and Frobenius norms of the estimation error."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    diff = estimate - truth
    return float(np.abs(diff).sum()), float(np.sqrt((diff * diff).sum()))


def support_metrics(
    estimated_support: Iterable[tuple[int, int]],
    true_support: Iterable[tuple[int, int]],
) -> tuple[int, int]:
    """False positives and false negatives over strictly-upper-tri positions."""

    def normalize(pairs):
        out = set()
        for j, jp in pairs:
            if j == jp:
                continue
            out.add((j, jp) if j < jp else (jp, j))
        return out

    est = normalize(estimated_support)
    true = normalize(true_support)
    return len(est - true), len(true - est)


def save_matrix_csv(path, matrix: np.ndarray, header: str = "") -> None:
    np.savetxt(path, np.atleast_2d(matrix), delimiter=",", header=header)


def load_matrix_csv(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ValueError(f"could not parse numeric CSV {path}: {exc}") from exc
