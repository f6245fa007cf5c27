"""Variational EM for the dynamic SBM with finitely many edge states.

The variational family gives each node an independent Markov chain over
states, parametrized by initial responsibilities ``lambda1[i, q]`` and
conditional transition responsibilities ``lam[t - 1, i, q, l]``. With all
other nodes held fixed, the best chain for node ``i`` is the posterior of a
small HMM whose emission log-potentials are

    psi[t, q] = sum_{j != i} sum_l delta[t, j, l] * log bp[t, q, l, x_ij^t],

so the E-step is a sequential sweep of exact per-node forward-backward
updates. Every node update is a block-coordinate maximization of the ELBO,
which therefore never decreases during the E-step.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp, xlogy

from .core import (
    LabelPermutation,
    LatentStates,
    ModelParams,
    ObservedNetwork,
    all_permutations,
    check_valid,
    edge_index,
    permute_labels,
    state_pairs,
)

logger = logging.getLogger(__name__)

BP_FLOOR = 1e-10
_LOG_FLOOR = 1e-300
MAX_ALIGN_Q = 8


@dataclass
class VariationalState:
    """Variational parameters of the per-node Markov chains.

    ``lambda1`` is (n, Q), ``lam`` is (T - 1, n, Q, Q) with ``lam[t - 1]``
    describing the move into time ``t`` (0-based), and ``delta`` (T, n, Q)
    holds the derived marginals.
    """

    lambda1: np.ndarray
    lam: np.ndarray
    delta: np.ndarray = None
    sweeps: int = 0
    converged: bool = True

    def __post_init__(self):
        self.lambda1 = np.array(self.lambda1, dtype=float)
        self.lam = np.array(self.lam, dtype=float)
        if self.delta is None:
            self.recompute_delta()
        else:
            self.delta = np.array(self.delta, dtype=float)

    @property
    def n(self) -> int:
        return self.lambda1.shape[0]

    @property
    def Q(self) -> int:
        return self.lambda1.shape[1]

    @property
    def T(self) -> int:
        return self.lam.shape[0] + 1

    def recompute_delta(self) -> None:
        delta = np.empty((self.T,) + self.lambda1.shape)
        delta[0] = self.lambda1
        for t in range(1, self.T):
            delta[t] = np.einsum("iq,iql->il", delta[t - 1], self.lam[t - 1])
        self.delta = delta

    def copy(self) -> "VariationalState":
        return VariationalState(
            self.lambda1.copy(), self.lam.copy(), self.delta.copy(), self.sweeps, self.converged
        )

    def permuted(self, sigma: LabelPermutation) -> "VariationalState":
        """Relabel states the same way :func:`permute_labels` relabels parameters."""
        s = sigma.array
        return VariationalState(
            self.lambda1[:, s], self.lam[:, :, s][:, :, :, s], self.delta[:, :, s], self.sweeps, self.converged
        )

    @classmethod
    def from_marginals(cls, marginals) -> "VariationalState":
        """Chains whose states are independent across time with the given marginals (T, n, Q)."""
        marginals = np.asarray(marginals, dtype=float)
        T, n, Q = marginals.shape
        lam = np.broadcast_to(marginals[1:, :, None, :], (T - 1, n, Q, Q)).copy()
        return cls(marginals[0].copy(), lam, marginals.copy())

    @classmethod
    def from_latent(cls, latent: LatentStates, Q: int) -> "VariationalState":
        """Point-mass variational law on the given latent states."""
        return cls.from_marginals(np.eye(Q)[latent.states])

    def check(self, atol: float = 1e-10) -> list[str]:
        problems = []
        if np.any(self.lambda1 < 0) or np.any(self.lam < 0):
            problems.append("negative responsibilities")
        if np.max(np.abs(self.lambda1.sum(-1) - 1)) > atol:
            problems.append("lambda1 rows not normalized")
        if self.lam.size and np.max(np.abs(self.lam.sum(-1) - 1)) > atol:
            problems.append("lambda rows not normalized")
        ref = VariationalState(self.lambda1, self.lam)
        if np.max(np.abs(ref.delta - self.delta)) > atol:
            problems.append("delta recursion violated")
        return problems


@dataclass(frozen=True)
class FitConfig:
    Q: int
    homogeneous: bool = True
    n_restarts: int = 25
    max_outer_iterations: int = 100
    elbo_rel_tol: float = 1e-6
    e_step_fixed_point_iters: int = 50
    e_step_tol: float = 1e-6
    init_strategy: str = "spectral"
    seed: int | None = 0

    def __post_init__(self):
        if self.Q < 1:
            raise ValueError("Q must be at least 1")
        for name in ("n_restarts", "max_outer_iterations", "e_step_fixed_point_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("elbo_rel_tol", "e_step_tol"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.init_strategy not in ("random", "spectral"):
            raise ValueError(f"unknown init strategy {self.init_strategy!r}")


@dataclass
class FitResult:
    params_hat: ModelParams
    elbo: float
    n_iterations: int
    n_restarts: int
    converged: bool
    alignment: LabelPermutation
    elbo_trace: list[float] = field(default_factory=list)
    restart_elbos: list[float] = field(default_factory=list)
    restart_traces: list[list[float]] = field(default_factory=list)
    empty_cells: list[tuple] = field(default_factory=list)
    vstate: VariationalState | None = None

    def to_dict(self) -> dict:
        from .core import params_to_dict

        return {
            "params_hat": params_to_dict(self.params_hat),
            "elbo": self.elbo,
            "n_iterations": self.n_iterations,
            "n_restarts": self.n_restarts,
            "converged": self.converged,
            "alignment": self.alignment.one_based(),
            "elbo_trace": self.elbo_trace,
            "restart_elbos": self.restart_elbos,
            "empty_cells": [list(c) for c in self.empty_cells],
        }


# --------------------------------------------------------------------------
# ELBO


def elbo(params: ModelParams, network: ObservedNetwork, vstate: VariationalState) -> float:
    """Expected complete-data log-likelihood plus the entropy of the variational law.

    Returns ``-inf`` when a zero-probability event carries positive weight.
    """
    X = network.dense()
    delta, lam = vstate.delta, vstate.lam
    with np.errstate(divide="ignore", invalid="ignore"):
        total = xlogy(delta[0], params.pi).sum() - xlogy(vstate.lambda1, vstate.lambda1).sum()
        for t in range(1, network.T):
            w = delta[t - 1][:, :, None] * lam[t - 1]
            total += xlogy(w, params.transition(t + 1)[None]).sum()
            total -= (w * _safe_log(lam[t - 1])).sum()
        for t in range(network.T):
            S = _pair_weights(X[t], delta[t], network.kappa)
            total += 0.5 * xlogy(S, params.edge_probs[t]).sum()
    return float(total) if not math.isnan(total) else -math.inf


def _safe_log(a):
    with np.errstate(divide="ignore"):
        return np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), 0.0)


def _pair_weights(Xt, delta_t, kappa):
    """``S[q, l, x] = sum_{i != j} delta[i, q] delta[j, l] [x_ij = x]`` (each unordered edge counted twice)."""
    Q = delta_t.shape[1]
    S = np.empty((Q, Q, kappa))
    for x in range(kappa):
        A = (Xt == x).astype(float)
        S[:, :, x] = delta_t.T @ (A @ delta_t)
    return S


def brute_force_log_likelihood(params: ModelParams, network: ObservedNetwork, max_paths: int = 2**22) -> float:
    """Exact marginal log-likelihood by summing over every latent path of every node."""
    n, T, Q = network.n, network.T, params.Q
    n_paths = Q ** (n * T)
    if n_paths > max_paths:
        raise ValueError(f"{n_paths} latent configurations exceed the brute-force budget")
    Z = np.array(list(itertools.product(range(Q), repeat=n * T)), dtype=np.int64).reshape(-1, T, n)
    iu, ju = edge_index(n)
    with np.errstate(divide="ignore"):
        logp = np.log(params.pi)[Z[:, 0]].sum(axis=1)
        for t in range(1, T):
            logp += np.log(params.transition(t + 1))[Z[:, t - 1], Z[:, t]].sum(axis=1)
        for t in range(T):
            logbp = np.log(params.edge_probs[t])
            logp += logbp[Z[:, t, iu], Z[:, t, ju], network.edges[t][None, :]].sum(axis=1)
    return float(logsumexp(logp))


# --------------------------------------------------------------------------
# E-step


@numba.njit(cache=True)
def _e_sweep(X, delta, lambda1, lam, logpi, logrho, logbp):
    T, n, Q = delta.shape
    K = logbp.shape[3]
    psi = np.empty((T, Q))
    counts = np.empty((K, Q))
    logbeta = np.empty((T, Q))
    work = np.empty(Q)
    maxdiff = 0.0
    for i in range(n):
        for t in range(T):
            counts[:, :] = 0.0
            for j in range(n):
                x = X[t, i, j]
                if x >= 0:
                    for l in range(Q):
                        counts[x, l] += delta[t, j, l]
            for q in range(Q):
                s = 0.0
                for x in range(K):
                    for l in range(Q):
                        s += counts[x, l] * logbp[t, q, l, x]
                psi[t, q] = s
        logbeta[T - 1, :] = 0.0
        for t in range(T - 1, 0, -1):
            for q in range(Q):
                m = -np.inf
                for l in range(Q):
                    work[l] = logrho[t - 1, q, l] + psi[t, l] + logbeta[t, l]
                    if work[l] > m:
                        m = work[l]
                s = 0.0
                for l in range(Q):
                    s += np.exp(work[l] - m)
                logbeta[t - 1, q] = m + np.log(s)
        m = -np.inf
        for q in range(Q):
            work[q] = logpi[q] + psi[0, q] + logbeta[0, q]
            if work[q] > m:
                m = work[q]
        s = 0.0
        for q in range(Q):
            work[q] = np.exp(work[q] - m)
            s += work[q]
        for q in range(Q):
            v = work[q] / s
            d = abs(v - lambda1[i, q])
            if d > maxdiff:
                maxdiff = d
            lambda1[i, q] = v
            delta[0, i, q] = v
        for t in range(1, T):
            for q in range(Q):
                m = -np.inf
                for l in range(Q):
                    work[l] = logrho[t - 1, q, l] + psi[t, l] + logbeta[t, l]
                    if work[l] > m:
                        m = work[l]
                s = 0.0
                for l in range(Q):
                    work[l] = np.exp(work[l] - m)
                    s += work[l]
                for l in range(Q):
                    v = work[l] / s
                    d = abs(v - lam[t - 1, i, q, l])
                    if d > maxdiff:
                        maxdiff = d
                    lam[t - 1, i, q, l] = v
            for l in range(Q):
                v = 0.0
                for q in range(Q):
                    v += delta[t - 1, i, q] * lam[t - 1, i, q, l]
                d = abs(v - delta[t, i, l])
                if d > maxdiff:
                    maxdiff = d
                delta[t, i, l] = v
    return maxdiff


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def e_step(
    params: ModelParams,
    network: ObservedNetwork,
    vstate: VariationalState,
    max_iters: int = 50,
    tol: float = 1e-6,
    dense=None,
) -> VariationalState:
    """Sequential mean-field sweeps until responsibilities move less than ``tol`` (sup norm)."""
    check_valid(params)
    out = vstate.copy()
    if params.Q == 1:
        out.lambda1[:] = 1.0
        out.lam[:] = 1.0
        out.recompute_delta()
        out.sweeps, out.converged = 0, True
        return out
    X = network.dense() if dense is None else dense
    logpi = _log(params.pi)
    logrho = _log(params.transitions()) if network.T > 1 else np.zeros((0, params.Q, params.Q))
    logbp = np.log(np.maximum(params.edge_probs, _LOG_FLOOR))
    out.converged = False
    for sweep in range(1, max_iters + 1):
        diff = _e_sweep(X, out.delta, out.lambda1, out.lam, logpi, np.ascontiguousarray(logrho), logbp)
        if diff < tol:
            out.converged = True
            break
    out.sweeps = sweep
    if not out.converged:
        logger.debug("E-step fixed point not reached after %d sweeps (last change %.3g)", sweep, diff)
    return out


# --------------------------------------------------------------------------
# M-step


def m_step(
    vstate: VariationalState,
    network: ObservedNetwork,
    homogeneous: bool = True,
    return_flags: bool = False,
    dense=None,
):
    """Closed-form maximization of the ELBO in the model parameters.

    Cells with no responsibility mass get a uniform law and are reported in
    the flag list (returned when ``return_flags`` is true).
    """
    if network.n < 2:
        raise ValueError("the M-step needs at least two nodes (no edges otherwise)")
    if vstate.n != network.n or vstate.T != network.T:
        raise ValueError("variational state does not match the network dimensions")
    Q, T, kappa = vstate.Q, network.T, network.kappa
    delta, lam = vstate.delta, vstate.lam
    flags = []

    pi = delta[0].mean(axis=0)
    pi = pi / pi.sum()

    counts = np.einsum("tiq,tiql->tql", delta[:-1], lam) if T > 1 else np.zeros((0, Q, Q))
    if homogeneous:
        counts = counts.sum(axis=0, keepdims=True)
        if T == 1:
            counts = np.ones((1, Q, Q))
    rho = np.empty_like(counts)
    for s, c in enumerate(counts):
        rows = c.sum(axis=1)
        for q in range(Q):
            if rows[q] > 0:
                rho[s, q] = c[q] / rows[q]
            else:
                rho[s, q] = 1.0 / Q
                flags.append(("rho", None if homogeneous else s + 2, q + 1))

    X = network.dense() if dense is None else dense
    bp = np.empty((T, Q, Q, kappa))
    for t in range(T):
        S = _pair_weights(X[t], delta[t], kappa)
        S = 0.5 * (S + S.transpose(1, 0, 2))
        tot = S.sum(axis=-1)
        for q, l in state_pairs(Q):
            if tot[q, l] > 0:
                cell = S[q, l] / tot[q, l]
            else:
                cell = np.full(kappa, 1.0 / kappa)
                flags.append(("bp", t + 1, q + 1, l + 1))
            cell = np.maximum(cell, BP_FLOOR)
            bp[t, q, l] = bp[t, l, q] = cell / cell.sum()

    params = ModelParams(pi, rho, bp, homogeneous)
    if flags:
        logger.debug("empty cells in M-step: %s", flags)
    return (params, flags) if return_flags else params


# --------------------------------------------------------------------------
# initialization and fitting


def initial_state(network: ObservedNetwork, Q: int, strategy: str, rng: np.random.Generator) -> VariationalState:
    n, T = network.n, network.T
    if strategy == "random" or Q == 1:
        return VariationalState.from_marginals(rng.dirichlet(np.ones(Q), size=(T, n)))
    X = network.dense()
    feats = [(X == x).mean(axis=0) for x in range(1, network.kappa)]
    F = np.hstack(feats)
    U, s, _ = np.linalg.svd(F, full_matrices=False)
    emb = U[:, :Q] * s[:Q]
    _, labels = kmeans2(emb, Q, minit="++", seed=rng)
    hard = np.eye(Q)[labels]
    noise = rng.dirichlet(np.ones(Q), size=(T, n))
    return VariationalState.from_marginals(0.8 * hard[None] + 0.2 * noise)


def _relative_change(old, new):
    return abs(new - old) / (1.0 + abs(new))


def run_restart(network: ObservedNetwork, config: FitConfig, vstate: VariationalState, dense=None):
    """One VEM run from the given initial responsibilities.

    Returns ``(params, vstate, elbo_trace, converged, flags)``.
    """
    X = network.dense() if dense is None else dense
    params, flags = m_step(vstate, network, config.homogeneous, return_flags=True, dense=X)
    trace = [elbo(params, network, vstate)]
    converged = False
    for _ in range(config.max_outer_iterations):
        vstate = e_step(
            params, network, vstate, config.e_step_fixed_point_iters, config.e_step_tol, dense=X
        )
        params, flags = m_step(vstate, network, config.homogeneous, return_flags=True, dense=X)
        trace.append(elbo(params, network, vstate))
        if _relative_change(trace[-2], trace[-1]) < config.elbo_rel_tol:
            converged = True
            break
    return params, vstate, trace, converged, flags


def _restart_job(args):
    network, config, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    init = initial_state(network, config.Q, config.init_strategy, rng)
    return run_restart(network, config, init)


def fit(network: ObservedNetwork, config: FitConfig, jobs: int = 1, align: bool = True) -> FitResult:
    """Multi-restart VEM; keeps the restart with the largest final ELBO."""
    if network.n < 2 or network.T < 1:
        raise ValueError("cannot fit an empty network")
    if config.Q > network.n:
        raise ValueError(f"Q={config.Q} exceeds the number of nodes n={network.n}")
    n_restarts = 1 if config.Q == 1 else config.n_restarts
    seeds = np.random.SeedSequence(config.seed).spawn(n_restarts)
    jobs_args = [(network, config, s) for s in seeds]
    if jobs > 1 and n_restarts > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_restart_job, jobs_args))
    else:
        runs = [_restart_job(a) for a in jobs_args]

    finals = [r[2][-1] for r in runs]
    best = int(np.argmax(finals))
    params, vstate, trace, converged, flags = runs[best]
    sigma = LabelPermutation.identity(config.Q)
    if align:
        params, sigma = align_labels(params)
        vstate = vstate.permuted(sigma)
    return FitResult(
        params_hat=params,
        elbo=finals[best],
        n_iterations=len(trace) - 1,
        n_restarts=n_restarts,
        converged=converged,
        alignment=sigma,
        elbo_trace=list(trace),
        restart_elbos=list(finals),
        restart_traces=[list(r[2]) for r in runs],
        empty_cells=list(flags),
        vstate=vstate,
    )


# --------------------------------------------------------------------------
# label alignment


def _tv(a, b):
    return 0.5 * np.abs(a - b).sum(axis=-1)


def align_labels(params_hat: ModelParams, reference: ModelParams | None = None):
    """Choose a global relabeling of ``params_hat``.

    With a reference, the permutation minimizes the summed total-variation
    distance between diagonal edge laws over all time points. Without one,
    states are sorted by their diagonal edge law at the first time point
    (lexicographically, so ``bp_qq(0)`` decides first).

    Returns ``(aligned_params, sigma)`` with ``aligned = permute_labels(params_hat, sigma)``.
    """
    Q = params_hat.Q
    if Q > MAX_ALIGN_Q:
        raise ValueError(f"alignment enumerates Q! permutations; Q={Q} exceeds {MAX_ALIGN_Q}")
    diag_hat = params_hat.edge_probs[:, np.arange(Q), np.arange(Q)]
    if reference is None:
        order = sorted(range(Q), key=lambda q: tuple(diag_hat[0, q]))
        sigma = LabelPermutation(tuple(order))
    else:
        if reference.Q != Q:
            raise ValueError("reference has a different number of states")
        T = min(params_hat.T, reference.T)
        diag_ref = reference.edge_probs[:T, np.arange(Q), np.arange(Q)]
        best, sigma = math.inf, None
        for cand in all_permutations(Q):
            cost = _tv(diag_hat[:T][:, cand.array], diag_ref).sum()
            if cost < best - 1e-15:
                best, sigma = cost, cand
    return permute_labels(params_hat, sigma), sigma


# --------------------------------------------------------------------------
# flat estimate tables

ESTIMATE_HEADER = ["replicate", "group", "t", "q", "l", "x", "estimate", "truth"]


def estimate_rows(params: ModelParams, truth: ModelParams | None = None, replicate: int = 0) -> list[dict]:
    """One row per parameter entry, states 1-based, edge states as their values."""
    rows = []

    def add(group, t, q, l, x, est, true):
        rows.append(
            {
                "replicate": replicate,
                "group": group,
                "t": t,
                "q": q,
                "l": l,
                "x": x,
                "estimate": repr(float(est)),
                "truth": "" if true is None else repr(float(true)),
            }
        )

    for q in range(params.Q):
        add("pi", 1, q + 1, "", "", params.pi[q], None if truth is None else truth.pi[q])
    for t in range(2, params.T + 1):
        if params.homogeneous and t > 2:
            break
        rho = params.transition(t)
        true_rho = None if truth is None else truth.transition(t)
        label = "" if params.homogeneous else t
        for q in range(params.Q):
            for l in range(params.Q):
                add("rho", label, q + 1, l + 1, "", rho[q, l], None if truth is None else true_rho[q, l])
    for t in range(params.T):
        for q, l in state_pairs(params.Q):
            for x in range(params.kappa):
                true = None if truth is None else truth.edge_probs[t, q, l, x]
                add("bp", t + 1, q + 1, l + 1, x, params.edge_probs[t, q, l, x], true)
    return rows


def write_estimates_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ESTIMATE_HEADER, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
