"""Identifiability checks and constructive parameter recovery.

Covers the conditional matrix of edge-state assignments given node-state
assignments on ``m`` nodes, numerical rank certificates for it, the
transition-recovery routes through consecutive edge laws (``Phi``) and through
the ``m``-node hidden Markov model, and the static recovery of ``pi`` and the
edge laws from a row-shuffled conditional matrix.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    LabelPermutation,
    ModelParams,
    check_valid,
    is_ergodic,
    spectral_gap,
    state_pairs,
)

logger = logging.getLogger(__name__)

MEMORY_BUDGET = 2**26
RANK_REL_TOL = 1e-9
MATCH_TOL = 1e-9
DISTINCT_TOL = 1e-9
STABLE_TOL = 1e-12


# --------------------------------------------------------------------------
# conditional matrix


@dataclass(frozen=True)
class ConditionalMatrix:
    """Conditional law of the edge states on ``m`` nodes given their node states.

    Rows enumerate node-state assignments ``z`` in lexicographic order (node 0
    most significant); columns enumerate edge-state assignments over the edges
    ``(0,1), (0,2), ..., (m-2,m-1)`` in the same way. This matches the index
    layout of :func:`kron_power`.
    """

    m: int
    Q: int
    kappa: int
    data: np.ndarray

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(itertools.combinations(range(self.m), 2))

    def row_index(self, z) -> int:
        return int(np.ravel_multi_index(tuple(np.asarray(z)), (self.Q,) * self.m))

    def row_states(self, index: int) -> tuple[int, ...]:
        return tuple(int(v) for v in np.unravel_index(index, (self.Q,) * self.m))

    def col_index(self, x) -> int:
        return int(np.ravel_multi_index(tuple(np.asarray(x)), (self.kappa,) * len(self.edges)))

    def col_states(self, index: int) -> tuple[int, ...]:
        return tuple(int(v) for v in np.unravel_index(index, (self.kappa,) * len(self.edges)))


def _check_budget(rows: int, cols: int, budget: int):
    if rows * cols > budget:
        raise MemoryError(f"dense {rows}x{cols} matrix exceeds the budget of {budget} entries")


def build_conditional_matrix(bp, m: int, budget: int = MEMORY_BUDGET) -> ConditionalMatrix:
    """Dense conditional matrix for a symmetric (Q, Q, kappa) edge-law tensor."""
    bp = np.asarray(bp, dtype=float)
    Q, _, kappa = bp.shape
    if m < 2:
        raise ValueError("the conditional matrix needs m >= 2 nodes")
    n_edges = m * (m - 1) // 2
    _check_budget(Q**m, kappa**n_edges, budget)
    Z = np.array(list(itertools.product(range(Q), repeat=m)), dtype=np.int64)
    data = np.ones((Z.shape[0], 1))
    for i, j in itertools.combinations(range(m), 2):
        data = (data[:, :, None] * bp[Z[:, i], Z[:, j]][:, None, :]).reshape(Z.shape[0], -1)
    return ConditionalMatrix(m, Q, kappa, data)


def numerical_row_rank(matrix, rel_tol: float = RANK_REL_TOL) -> int:
    """Number of singular values above ``rel_tol`` times the largest one."""
    a = np.asarray(matrix, dtype=float)
    if a.size == 0:
        raise ValueError("rank of an empty matrix is undefined")
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def draw_distinct_edge_probs(
    Q: int, kappa: int, rng: np.random.Generator, spacing: float = 1e-3, max_tries: int = 2000
) -> np.ndarray:
    """Random symmetric edge laws whose free entries are pairwise at least ``spacing`` apart.

    Each cell ``q <= l`` is a Dirichlet(1) draw; a cell is redrawn until its
    free entries (all but the last) keep the spacing to each other and to the
    cells already accepted. Large ``Q * kappa`` grids cannot reach 1e-3 by
    rejection, so after ``max_tries`` failed redraws the spacing is halved and
    the draw starts over.
    """
    while True:
        bp = _try_draw(Q, kappa, rng, spacing, max_tries)
        if bp is not None:
            return bp
        spacing /= 2
        logger.debug("relaxing edge-law spacing to %.3g for Q=%d, kappa=%d", spacing, Q, kappa)


def _try_draw(Q, kappa, rng, spacing, max_tries):
    bp = np.zeros((Q, Q, kappa))
    accepted = np.empty(0)
    for q, l in state_pairs(Q):
        for _ in range(max_tries):
            cell = rng.dirichlet(np.ones(kappa))
            free = cell[:-1]
            vals = np.sort(np.concatenate([accepted, free]))
            if vals.size < 2 or np.min(np.diff(vals)) >= spacing:
                break
        else:
            return None
        accepted = np.concatenate([accepted, free])
        bp[q, l] = bp[l, q] = cell
    return bp


def minimal_m_search(
    Q: int,
    kappa: int,
    n_trials: int = 20,
    m_max: int | None = None,
    rel_tol: float = RANK_REL_TOL,
    budget: int = MEMORY_BUDGET,
    seed=0,
) -> int | None:
    """Smallest ``m`` whose conditional matrix has full row rank in every random trial.

    Returns ``None`` when no ``m`` up to ``m_max`` (or up to the memory budget)
    qualifies.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be positive")
    rng = np.random.default_rng(seed)
    m = 2
    while m_max is None or m <= m_max:
        rows, cols = Q**m, kappa ** (m * (m - 1) // 2)
        if rows * cols > budget:
            return None
        if rows <= cols and all(
            numerical_row_rank(build_conditional_matrix(draw_distinct_edge_probs(Q, kappa, rng), m).data, rel_tol)
            == rows
            for _ in range(n_trials)
        ):
            return m
        m += 1
    return None


def generic_binary_bound(Q: int) -> int:
    """Node count above which the binary conditional matrix generically has full row rank."""
    if Q < 2:
        raise ValueError("the bound is stated for Q >= 2")
    if Q % 2 == 0:
        return Q - 1 + (Q + 2) ** 2 // 4
    return Q - 1 + (Q + 1) * (Q + 3) // 4


# --------------------------------------------------------------------------
# static recovery from a row-shuffled conditional matrix


@dataclass(frozen=True)
class StaticRecovery:
    """``pi`` and edge laws recovered up to one global relabeling of the states."""

    pi: np.ndarray
    edge_probs: np.ndarray
    diagonal_rows: tuple[int, ...]


def _edge_marginals(row, m, kappa):
    """Per-edge marginal laws of one conditional-matrix row, shape (n_edges, kappa)."""
    n_edges = m * (m - 1) // 2
    cube = row.reshape((kappa,) * n_edges)
    out = np.empty((n_edges, kappa))
    for e in range(n_edges):
        axes = tuple(a for a in range(n_edges) if a != e)
        out[e] = cube.sum(axis=axes)
    return out


def recover_static_params(cmat: ConditionalMatrix, lam, m: int | None = None, tol: float = MATCH_TOL) -> StaticRecovery:
    """Recover ``pi`` and the edge laws from a conditional matrix with unknown row order.

    ``lam`` holds the probabilities of the node-state assignments in the same
    (unknown) row order. Every row is reduced to the set of distinct per-edge
    marginal laws it contains: constant assignments give a single law (a
    diagonal ``bp_qq``), assignments with exactly one deviating node give
    ``{bp_qq, bp_ql}``, and the off-diagonal laws are placed by the two
    diagonal laws they co-occur with.
    """
    m = cmat.m if m is None else m
    Q, kappa = cmat.Q, cmat.kappa
    lam = np.asarray(lam, dtype=float)
    if m < 3 or Q < 2:
        raise ValueError("static recovery needs m >= 3 and Q >= 2")
    if m != cmat.m:
        raise ValueError("m does not match the conditional matrix")
    if lam.shape != (cmat.data.shape[0],):
        raise ValueError("lam must have one entry per conditional-matrix row")

    catalog: list[np.ndarray] = []

    def lookup(v):
        for k, c in enumerate(catalog):
            if np.max(np.abs(c - v)) <= tol:
                return k
        catalog.append(v)
        return len(catalog) - 1

    row_sets = []
    for row in cmat.data:
        row_sets.append(frozenset(lookup(v) for v in _edge_marginals(row, m, kappa)))

    n_pairs = Q * (Q + 1) // 2
    if len(catalog) != n_pairs:
        raise ValueError(
            f"hypothesis violated: found {len(catalog)} distinct edge laws, expected {n_pairs}"
        )
    gaps = [np.max(np.abs(a - b)) for a, b in itertools.combinations(catalog, 2)]
    if min(gaps) <= 10 * tol:
        raise ValueError("ambiguous matching: edge laws closer than ten times the matching tolerance")

    singletons = [r for r, s in enumerate(row_sets) if len(s) == 1]
    if len(singletons) != Q:
        raise ValueError(f"hypothesis violated: {len(singletons)} single-law rows, expected Q={Q}")
    diag_ids = [next(iter(row_sets[r])) for r in singletons]
    if len(set(diag_ids)) != Q:
        raise ValueError("hypothesis violated: repeated diagonal law")
    state_of = {k: q for q, k in enumerate(diag_ids)}

    if np.any(lam[singletons] <= 0):
        raise ValueError("hypothesis violated: a state has zero probability")
    pi = lam[singletons] ** (1.0 / m)

    partners: dict[int, set[int]] = {}
    for s in row_sets:
        if len(s) != 2:
            continue
        a, b = tuple(s)
        if (a in state_of) == (b in state_of):
            continue
        diag, off = (a, b) if a in state_of else (b, a)
        partners.setdefault(off, set()).add(state_of[diag])

    bp = np.full((Q, Q, kappa), np.nan)
    for q, k in enumerate(diag_ids):
        bp[q, q] = catalog[k]
    for off, states in partners.items():
        if len(states) != 2:
            raise ValueError(f"ambiguous matching: off-diagonal law paired with states {sorted(states)}")
        q, l = sorted(states)
        if not np.isnan(bp[q, l, 0]):
            raise ValueError(f"ambiguous matching: two laws claim the pair ({q + 1},{l + 1})")
        bp[q, l] = bp[l, q] = catalog[off]
    if np.isnan(bp).any():
        raise ValueError("hypothesis violated: some off-diagonal laws could not be placed")
    return StaticRecovery(pi, bp, tuple(singletons))


# --------------------------------------------------------------------------
# transition recovery through consecutive edge laws


@dataclass(frozen=True)
class PhiMatrix:
    """Joint law of the unordered state pairs of one edge at two consecutive times."""

    data: np.ndarray
    pairs: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class TransitionRecovery:
    rho: np.ndarray
    residual: float


def build_phi(pi, rho) -> PhiMatrix:
    pi = np.asarray(pi, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.max(np.abs(pi @ rho - pi)) > 1e-9:
        logger.info("pi is not stationary for rho; evaluating Phi with the given marginal")
    pairs = state_pairs(pi.size)
    phi = np.empty((len(pairs), len(pairs)))
    for a, (q1, l1) in enumerate(pairs):
        for b, (q2, l2) in enumerate(pairs):
            if q1 == l1 and q2 == l2:
                v = pi[q1] ** 2 * rho[q1, q2] ** 2
            elif q1 == l1:
                v = 2 * pi[q1] ** 2 * rho[q1, q2] * rho[q1, l2]
            elif q2 == l2:
                v = 2 * pi[q1] * pi[l1] * rho[q1, q2] * rho[l1, q2]
            else:
                v = 2 * pi[q1] * pi[l1] * (rho[q1, q2] * rho[l1, l2] + rho[q1, l2] * rho[l1, q2])
            phi[a, b] = v
    return PhiMatrix(phi, tuple(pairs))


def pair_law_matrix(bp) -> np.ndarray:
    """Edge laws stacked by unordered pair ``q <= l``, shape (Q(Q+1)/2, kappa)."""
    bp = np.asarray(bp, dtype=float)
    return np.stack([bp[q, l] for q, l in state_pairs(bp.shape[0])])


def joint_consecutive_edge_distribution(params: ModelParams, t0: int) -> np.ndarray:
    """Joint law (kappa, kappa) of one edge's states at times ``t0`` and ``t0 + 1`` (1-based)."""
    if not 1 <= t0 <= params.T - 1:
        raise ValueError(f"t0 must lie in 1..{params.T - 1}")
    phi = build_phi(params.state_law(t0), params.transition(t0 + 1))
    M0 = pair_law_matrix(params.edge_probs[t0 - 1])
    M1 = pair_law_matrix(params.edge_probs[t0])
    return M0.T @ phi.data @ M1


def recover_transitions_via_phi(joint, bp_t0, bp_t1, pi) -> TransitionRecovery:
    """Transition matrix from the consecutive-edge joint law and the two edge-law tensors.

    Needs linearly independent pair laws at both times; the square
    cdf-evaluation matrices of the continuous argument are replaced by
    pseudo-inverses of the full pair-law matrices.
    """
    pi = np.asarray(pi, dtype=float)
    joint = np.asarray(joint, dtype=float)
    Q = pi.size
    if Q == 1:
        return TransitionRecovery(np.ones((1, 1)), 0.0)
    M0, M1 = pair_law_matrix(bp_t0), pair_law_matrix(bp_t1)
    for name, M in (("t0", M0), ("t0+1", M1)):
        s = np.linalg.svd(M, compute_uv=False)
        if M.shape[0] > M.shape[1] or s[-1] <= RANK_REL_TOL * s[0]:
            raise ValueError(f"hypothesis violated: pair laws at {name} are not linearly independent")
    phi = np.linalg.pinv(M0.T) @ joint @ np.linalg.pinv(M1)
    pairs = state_pairs(Q)
    diag_idx = [pairs.index((q, q)) for q in range(Q)]
    block = phi[np.ix_(diag_idx, diag_idx)]
    if block.min() < -1e-10:
        raise ValueError("inconsistent input: negative entry in the diagonal block of Phi")
    if np.any(pi <= 0):
        raise ValueError("pi must be strictly positive")
    rho = np.sqrt(np.clip(block, 0.0, None)) / pi[:, None]
    rho = rho / rho.sum(axis=1, keepdims=True)
    residual = float(np.max(np.abs(M0.T @ phi @ M1 - joint)))
    return TransitionRecovery(rho, residual)


# --------------------------------------------------------------------------
# transition recovery through the m-node hidden Markov model


def time_reversal(rho, pi, pi_next=None) -> np.ndarray:
    """``diag(pi_next)^-1 rho' diag(pi)``; ``pi_next`` defaults to ``pi`` (stationary case)."""
    rho = np.asarray(rho, dtype=float)
    pi = np.asarray(pi, dtype=float)
    pi_next = pi if pi_next is None else np.asarray(pi_next, dtype=float)
    if np.any(pi == 0) or np.any(pi_next == 0):
        raise ValueError("time reversal needs strictly positive marginals")
    return (rho.T * pi[None, :]) / pi_next[:, None]


def kron_power(M, m: int, budget: int = MEMORY_BUDGET) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if m < 1:
        raise ValueError("Kronecker power needs m >= 1")
    if M.ndim == 1:
        _check_budget(1, M.size**m, budget)
    else:
        _check_budget(M.shape[0] ** m, M.shape[1] ** m, budget)
    out = M
    for _ in range(m - 1):
        out = np.kron(out, M)
    return out


def triple_product(v, M1, M2, M3) -> np.ndarray:
    """Three-way tensor ``sum_l v_l M1[l, i] M2[l, j] M3[l, k]``."""
    v = np.asarray(v, dtype=float)
    Ms = [np.asarray(M, dtype=float) for M in (M1, M2, M3)]
    if any(M.ndim != 2 or M.shape[0] != v.size for M in Ms):
        raise ValueError("all factors need one row per entry of v")
    return np.einsum("l,li,lj,lk->ijk", v, *Ms)


def _constant_rows(Q, m):
    return [q * sum(Q**k for k in range(m)) for q in range(Q)]


def recover_transitions_via_hmm(params: ModelParams, m: int, t0: int, reverse: bool = False) -> TransitionRecovery:
    """Transition matrix recovered from the exact ``m``-node HMM factors around time ``t0``.

    Forward (default): the law of the snapshot at ``t0 + 1`` given the
    states at ``t0`` is ``rho^{(t0+1) (x) m} C^{t0+1}``; right-multiplying by
    the pseudo-inverse of ``C^{t0+1}`` returns the Kronecker power, whose
    constant-assignment entries are ``rho_ql ** m``. The result is
    ``rho^{t0+1}``.

    Reverse: uses the backward factor ``rho~^{t0 (x) m} C^{t0-1}`` and undoes the
    time reversal with the marginal state laws; the result is ``rho^{t0}``.
    ``residual`` is the sup-norm distance of the recovered Kronecker power to
    the true one.
    """
    check_valid(params)
    if m < 1:
        raise ValueError("m must be positive")
    if not 2 <= t0 <= params.T - 1:
        raise ValueError(f"t0 must lie in 2..{params.T - 1}")
    Q = params.Q
    if reverse:
        target_t = t0
        rho = params.transition(t0)
        pi_prev, pi_cur = params.state_law(t0 - 1), params.state_law(t0)
        factor = kron_power(time_reversal(rho, pi_prev, pi_cur), m)
        C = build_conditional_matrix(params.edge_probs[t0 - 2], m).data
    else:
        target_t = t0 + 1
        rho = params.transition(t0 + 1)
        factor = kron_power(rho, m)
        C = build_conditional_matrix(params.edge_probs[t0], m).data
    if numerical_row_rank(C) < C.shape[0]:
        raise ValueError("hypothesis violated: conditional matrix lacks full row rank")
    A = factor @ C
    est, *_ = np.linalg.lstsq(C.T, A.T, rcond=None)
    est = est.T
    if reverse:
        w_prev = kron_power(pi_prev, m)
        w_cur = kron_power(pi_cur, m)
        est = (est.T * w_cur[None, :]) / w_prev[:, None]
    truth = kron_power(rho, m)
    idx = _constant_rows(Q, m)
    block = est[np.ix_(idx, idx)]
    if block.min() < -1e-10:
        raise ValueError("inconsistent input: negative extracted transition entry")
    rho_hat = np.clip(block, 0.0, None) ** (1.0 / m)
    logger.debug("recovered rho^%d with Kronecker residual %.3g", target_t, np.max(np.abs(est - truth)))
    return TransitionRecovery(rho_hat, float(np.max(np.abs(est - truth))))


# --------------------------------------------------------------------------
# hypothesis checks


@dataclass
class Hypothesis:
    name: str
    theorems: tuple[str, ...]
    satisfied: bool
    evidence: dict

    def to_dict(self):
        return {
            "name": self.name,
            "theorems": list(self.theorems),
            "satisfied": self.satisfied,
            "evidence": self.evidence,
        }


@dataclass
class IdentReport:
    hypotheses: list[Hypothesis] = field(default_factory=list)
    n: int = 0
    m: int = 3

    def add(self, name, theorems, satisfied, **evidence):
        self.hypotheses.append(Hypothesis(name, tuple(theorems), bool(satisfied), _plain(evidence)))

    def verdict(self, theorem: str) -> bool | None:
        hs = [h for h in self.hypotheses if theorem in h.theorems]
        if not hs:
            return None
        return all(h.satisfied for h in hs)

    @property
    def verdicts(self) -> dict:
        return {th: self.verdict(th) for th in ("theorem1", "theorem2", "theorem3", "corollary")}

    def to_dict(self):
        return {
            "n": self.n,
            "m": self.m,
            "verdicts": self.verdicts,
            "hypotheses": [h.to_dict() for h in self.hypotheses],
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _min_gap(values) -> float:
    v = np.sort(np.asarray(values, dtype=float).ravel())
    return float(np.min(np.diff(v))) if v.size > 1 else math.inf


def _min_pairwise_sup(vectors) -> float:
    gaps = [np.max(np.abs(a - b)) for a, b in itertools.combinations(vectors, 2)]
    return float(min(gaps)) if gaps else math.inf


def check_conditions(params: ModelParams, n: int, m: int = 3, rel_tol: float = RANK_REL_TOL) -> IdentReport:
    """Evaluate the identification hypotheses with numerical evidence."""
    check_valid(params)
    Q, T, kappa = params.Q, params.T, params.kappa
    bp = params.edge_probs
    rhos = params.transitions()
    report = IdentReport(n=n, m=m)
    T1, T2, T3, COR = "theorem1", "theorem2", "theorem3", "corollary"
    diag = bp[:, np.arange(Q), np.arange(Q)]  # (T, Q, kappa)

    # first theorem: linearly independent pair laws
    n_pairs = Q * (Q + 1) // 2
    ranks, ratios = [], []
    for t in range(T):
        M = pair_law_matrix(bp[t])
        s = np.linalg.svd(M, compute_uv=False)
        ranks.append(int(np.count_nonzero(s > rel_tol * s[0])))
        ratios.append(float(s[-1] / s[0]) if M.shape[0] <= M.shape[1] else 0.0)
    report.add(
        "pair_laws_linearly_independent",
        [T1],
        all(r == n_pairs for r in ranks),
        ranks=ranks,
        pairs=n_pairs,
        min_singular_ratio=min(ratios),
    )
    report.add("edges_present", [T1], np.all(bp[..., 0] < 1), max_bp0=float(bp[..., 0].max()))

    laws = [params.state_law(t) for t in range(1, T + 1)]
    min_law = float(min(l.min() for l in laws))
    report.add("state_laws_positive", [T1, T2, T3], min_law > 0, min_marginal=min_law)

    pi_gap = _min_gap(params.pi)
    cond = params.conditional_nonzero_law()[:, np.arange(Q), np.arange(Q)]
    drift = float(np.nanmax(np.abs(cond[:, : Q - 1] - cond[:1, : Q - 1]))) if Q > 1 else 0.0
    if Q > 1 and np.isnan(cond[:, : Q - 1]).any():
        drift = math.inf
    report.add(
        "global_alignment",
        [T1],
        pi_gap > DISTINCT_TOL or drift <= STABLE_TOL,
        pi_min_gap=pi_gap,
        diagonal_conditional_drift=drift,
    )
    report.add("size_first", [T1], n >= 9 and T >= 2, n=n, T=T)

    # static small-kappa theorem, per time point
    full = []
    c_ranks = []
    try:
        for t in range(T):
            C = build_conditional_matrix(bp[t], m).data
            r = numerical_row_rank(C, rel_tol)
            c_ranks.append(r)
            full.append(r == C.shape[0])
        rank_ok = all(full)
    except MemoryError:
        rank_ok = False
    report.add("m_at_least_3", [T2, T3], m >= 3, m=m)
    report.add("conditional_matrix_full_row_rank", [T2, T3], rank_ok, ranks=c_ranks, rows=Q**m)
    report.add("size_static", [T2, T3], n >= m * m, n=n, required=m * m)

    # dynamic small-kappa theorem
    gaps = [spectral_gap(r) for r in rhos]
    ergodic = len(rhos) > 0 and all(is_ergodic(r) for r in rhos)
    report.add("rho_ergodic", [T3], ergodic, min_spectral_gap=min(gaps) if gaps else 0.0)
    sv = [np.linalg.svd(r, compute_uv=False) for r in rhos]
    min_sv = float(min(s[-1] for s in sv)) if sv else 0.0
    report.add("rho_full_rank", [T3], len(rhos) > 0 and min_sv > rel_tol, min_singular_value=min_sv)
    report.add("T_at_least_3", [T3], T >= 3, T=T)
    diag_drift = float(np.max(np.abs(diag - diag[:1])))
    diag_gap = _min_pairwise_sup(list(diag[0]))
    report.add(
        "diagonal_laws_stable_and_distinct",
        [T3],
        diag_drift <= STABLE_TOL and diag_gap > DISTINCT_TOL,
        drift=diag_drift,
        min_pairwise_gap=diag_gap,
    )

    if kappa == 2 and Q in (2, 3):
        p = params.sparsity()  # (T, Q, Q)
        iu = np.triu_indices(Q)
        card = [int(np.count_nonzero(np.diff(np.sort(p[t][iu])) > DISTINCT_TOL) + 1) for t in range(T)]
        report.add("rho_full_rank_binary", [COR], len(rhos) > 0 and min_sv > rel_tol, min_singular_value=min_sv)
        report.add("T_at_least_3_binary", [COR], T >= 3, T=T)
        report.add(
            "distinct_sparsities",
            [COR],
            all(c == len(iu[0]) for c in card),
            cardinalities=card,
            required=len(iu[0]),
        )
        if Q == 2:
            dg = np.array([[r[0, 0], r[1, 1]] for r in rhos])
            report.add(
                "rho_diagonal_interior",
                [COR],
                dg.size > 0 and bool(np.all((dg > 0) & (dg < 1))),
                diagonals=dg,
            )
            asym = [abs(r[0, 1] - r[1, 0]) for r in rhos]
            p11_drift = float(np.max(np.abs(p[:, 0, 0] - p[0, 0, 0])))
            report.add(
                "rho_asymmetric_or_p11_stable",
                [COR],
                (len(asym) > 0 and min(asym) > DISTINCT_TOL) or p11_drift <= STABLE_TOL,
                min_asymmetry=min(asym) if asym else 0.0,
                p11_drift=p11_drift,
            )
            report.add("size_binary", [COR], n >= 16, n=n, required=16)
        else:
            report.add("rho_ergodic_binary", [COR], ergodic, min_spectral_gap=min(gaps) if gaps else 0.0)
            drift12 = float(np.max(np.abs(p[:, [0, 1], [0, 1]] - p[:1, [0, 1], [0, 1]])))
            report.add("p11_p22_stable", [COR], drift12 <= STABLE_TOL, drift=drift12)
            report.add("size_binary", [COR], n >= 25, n=n, required=25)
    return report


def best_permutation(pi_hat, bp_hat, pi, bp) -> tuple[LabelPermutation, float]:
    """Relabeling of recovered static parameters that minimizes the sup-norm error to the truth."""
    Q = len(pi)
    best = (None, math.inf)
    for perm in itertools.permutations(range(Q)):
        s = np.array(perm)
        err = max(
            np.max(np.abs(np.asarray(pi_hat)[s] - pi)),
            np.max(np.abs(np.asarray(bp_hat)[s][:, s] - bp)),
        )
        if err < best[1]:
            best = (LabelPermutation(perm), float(err))
    return best
