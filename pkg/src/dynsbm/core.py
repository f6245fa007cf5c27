"""Domain types for the dynamic stochastic block model with finitely many edge states.

States are 0-based everywhere inside the package. Anything that leaves the
package (JSON files, CSV rows, CLI output) uses 1-based node states; the
conversion lives in :func:`to_one_based` / :func:`from_one_based` and in the
JSON codecs below.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

PROB_TOL = 1e-12

SCENARIOS = ("scenario1", "scenario1_inhomogeneous", "scenario2")


def to_one_based(states):
    return np.asarray(states, dtype=np.int64) + 1


def from_one_based(states):
    return np.asarray(states, dtype=np.int64) - 1


def state_pairs(Q: int) -> list[tuple[int, int]]:
    """Unordered state pairs ``(q, l)`` with ``q <= l`` in lexicographic order."""
    return [(q, l) for q in range(Q) for l in range(q, Q)]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModelParams:
    """Parameters of a dynamic SBM with ``kappa`` edge states.

    Parameters
    ----------
    pi : array (Q,)
        Initial node-state distribution.
    rho : array (R, Q, Q)
        Transition matrices. ``rho[s]`` drives the move from time ``s + 1`` to
        ``s + 2`` (1-based), i.e. it is the paper-style ``rho^{s+2}``. A
        homogeneous model stores a single shared matrix (``R == 1``).
    edge_probs : array (T, Q, Q, kappa)
        ``edge_probs[t, q, l]`` is the law of an edge state between nodes in
        states ``q`` and ``l`` at time ``t``.
    homogeneous : bool
    """

    pi: np.ndarray
    rho: np.ndarray
    edge_probs: np.ndarray
    homogeneous: bool = True

    def __post_init__(self):
        object.__setattr__(self, "pi", _frozen(self.pi))
        rho = np.array(self.rho, dtype=float)
        if rho.ndim == 2:
            rho = rho[None]
        object.__setattr__(self, "rho", _frozen(rho))
        object.__setattr__(self, "edge_probs", _frozen(self.edge_probs))
        if self.pi.ndim != 1:
            raise ValueError("pi must be a vector")
        if self.rho.ndim != 3 or self.edge_probs.ndim != 4:
            raise ValueError("rho must be (R, Q, Q) and edge_probs (T, Q, Q, kappa)")

    @property
    def Q(self) -> int:
        return self.pi.shape[0]

    @property
    def T(self) -> int:
        return self.edge_probs.shape[0]

    @property
    def kappa(self) -> int:
        return self.edge_probs.shape[3]

    def transition(self, t: int) -> np.ndarray:
        """Transition matrix from time ``t - 1`` to ``t`` (1-based, ``2 <= t <= T``)."""
        if not 2 <= t <= self.T:
            raise IndexError(f"transition index {t} outside 2..{self.T}")
        return self.rho[0] if self.homogeneous else self.rho[t - 2]

    def transitions(self) -> np.ndarray:
        """All ``T - 1`` transition matrices, homogeneous ones repeated."""
        if self.T < 2:
            return np.zeros((0, self.Q, self.Q))
        return np.stack([self.transition(t) for t in range(2, self.T + 1)])

    def state_law(self, t: int) -> np.ndarray:
        """Marginal law of one node's state at time ``t`` (1-based): pi rho^2 ... rho^t."""
        law = np.array(self.pi)
        for s in range(2, t + 1):
            law = law @ self.transition(s)
        return law

    def sparsity(self) -> np.ndarray:
        """Edge presence probabilities ``1 - bp(0)``, shape (T, Q, Q)."""
        return 1.0 - self.edge_probs[..., 0]

    def conditional_nonzero_law(self) -> np.ndarray:
        """Law of the edge state given that the edge is present, shape (T, Q, Q, kappa - 1)."""
        present = self.sparsity()[..., None]
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(present > 0, self.edge_probs[..., 1:] / present, np.nan)

    def truncate(self, T: int) -> "ModelParams":
        """The same model observed on the first ``T`` time points only."""
        if not 1 <= T <= self.T:
            raise ValueError(f"cannot truncate T={self.T} to {T}")
        rho = self.rho if self.homogeneous else self.rho[: T - 1]
        return ModelParams(self.pi, rho, self.edge_probs[:T], self.homogeneous)

    def with_edge_probs(self, edge_probs) -> "ModelParams":
        return ModelParams(self.pi, self.rho, edge_probs, self.homogeneous)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (
            self.homogeneous == other.homogeneous
            and _same(self.pi, other.pi)
            and _same(self.rho, other.rho)
            and _same(self.edge_probs, other.edge_probs)
        )

    __hash__ = None


def _same(a, b):
    return a.shape == b.shape and bool(np.array_equal(a, b))


@dataclass(frozen=True)
class LabelPermutation:
    """A bijection of node states, stored 0-based.

    Applying it with :func:`permute_labels` gives new parameters whose state
    ``q`` carries the old state ``sigma[q]``.
    """

    sigma: tuple[int, ...]

    def __post_init__(self):
        sigma = tuple(int(s) for s in self.sigma)
        if sorted(sigma) != list(range(len(sigma))):
            raise ValueError(f"not a permutation: {sigma}")
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def identity(cls, Q: int) -> "LabelPermutation":
        return cls(tuple(range(Q)))

    @classmethod
    def from_one_based(cls, sigma) -> "LabelPermutation":
        return cls(tuple(int(s) - 1 for s in sigma))

    def one_based(self) -> list[int]:
        return [s + 1 for s in self.sigma]

    def inverse(self) -> "LabelPermutation":
        inv = [0] * len(self.sigma)
        for q, s in enumerate(self.sigma):
            inv[s] = q
        return LabelPermutation(tuple(inv))

    def then(self, other: "LabelPermutation") -> "LabelPermutation":
        """Permutation equivalent to applying ``self`` and then ``other``."""
        return LabelPermutation(tuple(self.sigma[s] for s in other.sigma))

    def __len__(self):
        return len(self.sigma)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.sigma, dtype=np.int64)


@dataclass(frozen=True)
class LatentStates:
    """Node states ``states[t, i]`` (0-based) for ``T`` time points and ``n`` nodes."""

    states: np.ndarray

    def __post_init__(self):
        s = _frozen(self.states, dtype=np.int64)
        if s.ndim != 2:
            raise ValueError("latent states must be a (T, n) array")
        if s.size and s.min() < 0:
            raise ValueError("negative node state")
        object.__setattr__(self, "states", s)

    @property
    def T(self) -> int:
        return self.states.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]


def edge_index(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Node pairs ``i < j`` in upper-triangular row-major order."""
    return np.triu_indices(n, k=1)


@dataclass(frozen=True)
class ObservedNetwork:
    """Edge-state snapshots ``edges[t, e]`` over the canonical edge order of :func:`edge_index`."""

    n: int
    kappa: int
    edges: np.ndarray

    def __post_init__(self):
        e = _frozen(self.edges, dtype=np.int64)
        if e.ndim == 1:
            e = _frozen(e[None])
        if e.ndim != 2:
            raise ValueError("edges must be a (T, n(n-1)/2) array")
        if self.n < 1:
            raise ValueError("a network needs at least one node")
        if e.shape[1] != self.n * (self.n - 1) // 2:
            raise ValueError(
                f"expected {self.n * (self.n - 1) // 2} edges per snapshot, got {e.shape[1]}"
            )
        if self.kappa < 2:
            raise ValueError("kappa must be at least 2")
        if e.size and (e.min() < 0 or e.max() >= self.kappa):
            raise ValueError(f"edge states must lie in 0..{self.kappa - 1}")
        object.__setattr__(self, "edges", e)

    @property
    def T(self) -> int:
        return self.edges.shape[0]

    def dense(self) -> np.ndarray:
        """Symmetric (T, n, n) edge-state array with ``-1`` on the diagonal."""
        out = np.full((self.T, self.n, self.n), -1, dtype=np.int64)
        iu, ju = edge_index(self.n)
        out[:, iu, ju] = self.edges
        out[:, ju, iu] = self.edges
        return out

    @classmethod
    def from_dense(cls, X, kappa: int | None = None) -> "ObservedNetwork":
        X = np.asarray(X)
        if X.ndim == 2:
            X = X[None]
        n = X.shape[1]
        iu, ju = edge_index(n)
        edges = X[:, iu, ju]
        if not np.array_equal(edges, X[:, ju, iu]):
            raise ValueError("edge-state matrix is not symmetric")
        if kappa is None:
            kappa = max(2, int(edges.max(initial=0)) + 1)
        return cls(n, kappa, edges)


# --------------------------------------------------------------------------
# validation and Markov-chain helpers


def validate(params: ModelParams) -> list[str]:
    """Return the violated invariants of ``params``; an empty list means valid."""
    problems = []
    pi, rho, bp = params.pi, params.rho, params.edge_probs
    Q = pi.shape[0]
    if Q < 1:
        problems.append("Q must be at least 1")
    if params.T < 1:
        problems.append("T must be at least 1")
    if params.kappa < 2:
        problems.append("kappa must be at least 2")
    if rho.shape[1:] != (Q, Q):
        problems.append(f"rho matrices must be {Q}x{Q}")
    if bp.shape[1:3] != (Q, Q):
        problems.append(f"edge_probs must be indexed by {Q}x{Q} state pairs")
    expected = 1 if params.homogeneous else max(params.T - 1, 0)
    if rho.shape[0] != expected:
        problems.append(f"expected {expected} transition matrices, got {rho.shape[0]}")
    if problems:
        return problems

    if np.any(pi < 0) or not np.all(np.isfinite(pi)):
        problems.append("pi has negative or non-finite entries")
    if abs(pi.sum() - 1.0) > PROB_TOL:
        problems.append("pi not normalized")
    if np.any(rho < 0) or not np.all(np.isfinite(rho)):
        problems.append("rho has negative or non-finite entries")
    if rho.size and np.max(np.abs(rho.sum(axis=-1) - 1.0)) > PROB_TOL:
        problems.append("rho rows not normalized")
    if np.any(bp < 0) or not np.all(np.isfinite(bp)):
        problems.append("edge_probs has negative or non-finite entries")
    if np.max(np.abs(bp.sum(axis=-1) - 1.0)) > PROB_TOL:
        problems.append("edge_probs not normalized")
    if not np.array_equal(bp, bp.transpose(0, 2, 1, 3)):
        problems.append("edge_probs symmetry violated: bp[t][q][l] != bp[t][l][q]")
    return problems


def check_valid(params: ModelParams) -> None:
    problems = validate(params)
    if problems:
        raise ValueError("invalid parameters: " + "; ".join(problems))


def is_ergodic(rho) -> bool:
    """Irreducible and aperiodic, i.e. some power of ``rho`` is strictly positive.

    Uses Wielandt's bound: a primitive Q x Q matrix has ``rho^k > 0`` for
    ``k = (Q - 1)^2 + 1``.
    """
    pattern = (np.asarray(rho) > 0).astype(np.int64)
    Q = pattern.shape[0]
    k = (Q - 1) ** 2 + 1
    acc = np.eye(Q, dtype=np.int64)
    base = pattern
    while k:
        if k & 1:
            acc = np.minimum(acc @ base, 1)
        base = np.minimum(base @ base, 1)
        k >>= 1
    return bool(acc.all())


def spectral_gap(rho) -> float:
    """``1 - |lambda_2|`` for the second largest eigenvalue modulus (1.0 for Q = 1)."""
    ev = np.sort(np.abs(np.linalg.eigvals(np.asarray(rho))))[::-1]
    return 1.0 if ev.size < 2 else float(1.0 - ev[1])


def stationary_distribution(rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if not is_ergodic(rho):
        raise ValueError("transition matrix is not ergodic; no unique stationary law")
    Q = rho.shape[0]
    A = np.vstack([rho.T - np.eye(Q), np.ones((1, Q))])
    b = np.zeros(Q + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def permute_labels(params: ModelParams, sigma: LabelPermutation) -> ModelParams:
    """Relabel states so that new state ``q`` is old state ``sigma[q]``."""
    s = sigma.array
    if len(s) != params.Q:
        raise ValueError(f"permutation of size {len(s)} for Q={params.Q}")
    return ModelParams(
        pi=params.pi[s],
        rho=params.rho[:, s][:, :, s],
        edge_probs=params.edge_probs[:, s][:, :, s],
        homogeneous=params.homogeneous,
    )


# --------------------------------------------------------------------------
# presets

_SC1_ROWS = [
    [0.2, 0.1, 0.1, 0.1, 0.1, 0.4],
    [0.2, 0.1, 0.1, 0.1, 0.4, 0.1],
    [0.2, 0.1, 0.1, 0.4, 0.1, 0.1],
    [0.2, 0.1, 0.4, 0.1, 0.1, 0.1],
    [0.2, 0.4, 0.1, 0.1, 0.1, 0.1],
    [0.4, 0.1, 0.1, 0.1, 0.1, 0.2],
]
_SC2_ROWS = [
    [0.1, 0.55, 0.35],
    [0.2, 0.45, 0.35],
    [0.3, 0.35, 0.35],
    [0.4, 0.25, 0.35],
    [0.5, 0.15, 0.35],
    [0.6, 0.05, 0.35],
]
# row order of the tables above: 11, 22, 33, 12, 13, 23
_TABLE_ORDER = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]

_RHO_SC1 = [[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]]
_RHO3_INHOM = [[0.15, 0.15, 0.7], [0.7, 0.15, 0.15], [0.15, 0.7, 0.15]]
_RHO4_INHOM = [[1 / 3] * 3] * 3


def edge_probs_from_rows(rows, pairs, Q: int, T: int) -> np.ndarray:
    """Symmetric (T, Q, Q, kappa) tensor, constant in time, from per-pair rows."""
    rows = np.asarray(rows, dtype=float)
    bp = np.zeros((Q, Q, rows.shape[1]))
    for (q, l), row in zip(pairs, rows):
        bp[q, l] = bp[l, q] = row
    return np.repeat(bp[None], T, axis=0)


def scenario_preset(name: str) -> ModelParams:
    """Parameter sets of the simulation scenarios (1-based names, 0-based arrays)."""
    if name == "scenario1":
        return ModelParams(
            pi=[0.2, 0.33, 0.47],
            rho=_RHO_SC1,
            edge_probs=edge_probs_from_rows(_SC1_ROWS, _TABLE_ORDER, 3, 2),
        )
    if name == "scenario1_inhomogeneous":
        return ModelParams(
            pi=[0.2, 0.33, 0.47],
            rho=[_RHO_SC1, _RHO3_INHOM, _RHO4_INHOM],
            edge_probs=edge_probs_from_rows(_SC1_ROWS, _TABLE_ORDER, 3, 4),
            homogeneous=False,
        )
    if name == "scenario2":
        return ModelParams(
            pi=[1 / 3, 1 / 3, 1 / 3],
            rho=_RHO_SC1,
            edge_probs=edge_probs_from_rows(_SC2_ROWS, _TABLE_ORDER, 3, 3),
        )
    raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")


# --------------------------------------------------------------------------
# JSON codec

_PARAM_KEYS = {"Q", "T", "kappa", "pi", "rho", "homogeneous", "edge_probs"}


def params_to_dict(params: ModelParams) -> dict:
    edge_probs = []
    for t in range(params.T):
        edge_probs.append(
            [
                {"q": q + 1, "l": l + 1, "probs": params.edge_probs[t, q, l].tolist()}
                for q, l in state_pairs(params.Q)
            ]
        )
    return {
        "Q": params.Q,
        "T": params.T,
        "kappa": params.kappa,
        "homogeneous": params.homogeneous,
        "pi": params.pi.tolist(),
        "rho": params.rho.tolist(),
        "edge_probs": edge_probs,
    }


def params_from_dict(doc: dict) -> ModelParams:
    unknown = set(doc) - _PARAM_KEYS
    if unknown:
        raise ValueError(f"unknown fields in parameter document: {sorted(unknown)}")
    missing = {"Q", "T", "kappa", "pi", "rho", "edge_probs"} - set(doc)
    if missing:
        raise ValueError(f"missing fields in parameter document: {sorted(missing)}")
    Q, T, kappa = int(doc["Q"]), int(doc["T"]), int(doc["kappa"])
    homogeneous = bool(doc.get("homogeneous", False))
    if len(doc["edge_probs"]) != T:
        raise ValueError(f"edge_probs lists {len(doc['edge_probs'])} time points, T={T}")
    bp = np.full((T, Q, Q, kappa), np.nan)
    for t, cells in enumerate(doc["edge_probs"]):
        for cell in cells:
            extra = set(cell) - {"q", "l", "probs"}
            if extra:
                raise ValueError(f"unknown fields in edge_probs cell: {sorted(extra)}")
            q, l = int(cell["q"]) - 1, int(cell["l"]) - 1
            if not (0 <= q <= l < Q):
                raise ValueError(f"edge_probs cell ({q + 1},{l + 1}) must satisfy 1 <= q <= l <= Q")
            probs = np.asarray(cell["probs"], dtype=float)
            if probs.shape != (kappa,):
                raise ValueError(f"edge_probs cell ({q + 1},{l + 1}) needs {kappa} entries")
            bp[t, q, l] = bp[t, l, q] = probs
    if np.isnan(bp).any():
        raise ValueError("edge_probs does not cover every pair q <= l at every time point")
    rho = np.asarray(doc["rho"], dtype=float)
    if rho.ndim == 2:
        rho = rho[None]
    params = ModelParams(pi=doc["pi"], rho=rho, edge_probs=bp, homogeneous=homogeneous)
    if params.Q != Q:
        raise ValueError(f"pi has {params.Q} entries, Q={Q}")
    return params


def save_params(params: ModelParams, path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params), indent=2) + "\n")


def load_params(path) -> ModelParams:
    return params_from_dict(json.loads(Path(path).read_text()))


def all_permutations(Q: int):
    for p in itertools.permutations(range(Q)):
        yield LabelPermutation(p)
