"""Sampling latent node chains and edge-state snapshots.

Randomness is split with :class:`numpy.random.SeedSequence`: one child
stream per node for the latent chain and one child stream per time point for
the edge states, so the output depends only on ``(params, n, seed)``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    LatentStates,
    ModelParams,
    ObservedNetwork,
    check_valid,
    edge_index,
    from_one_based,
    is_ergodic,
    stationary_distribution,
    to_one_based,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimOutput:
    latent: LatentStates
    network: ObservedNetwork
    seed: int | None


def _inverse_cdf(probs, u):
    """Draw category indices by inversion; ``probs`` is (..., K) and ``u`` matches its batch shape."""
    cdf = np.cumsum(probs, axis=-1)
    return (u[..., None] >= cdf[..., :-1]).sum(axis=-1)


def sample_node_chain(pi, rho_list, T: int, rng: np.random.Generator) -> np.ndarray:
    """One latent trajectory of length ``T`` (0-based states)."""
    pi = np.asarray(pi, dtype=float)
    rho_list = [np.asarray(r, dtype=float) for r in rho_list]
    if len(rho_list) != T - 1:
        raise ValueError(f"need {T - 1} transition matrices for T={T}, got {len(rho_list)}")
    for r in rho_list:
        if r.shape != (pi.size, pi.size):
            raise ValueError("transition matrix shape does not match pi")
    u = rng.random(T)
    return _chains_from_uniforms(pi, rho_list, u[None])[:, 0]


def _chains_from_uniforms(pi, rho_list, U):
    """Latent states (T, n) from uniforms ``U`` of shape (n, T)."""
    n, T = U.shape
    Z = np.empty((T, n), dtype=np.int64)
    Z[0] = _inverse_cdf(np.broadcast_to(pi, (n, pi.size)), U[:, 0])
    for t in range(1, T):
        Z[t] = _inverse_cdf(rho_list[t - 1][Z[t - 1]], U[:, t])
    return Z


def sample_network(params: ModelParams, n: int, seed=None) -> SimOutput:
    """Simulate latent chains for ``n`` nodes and the ``T`` edge-state snapshots.

    ``seed`` may be an int, ``None`` or a :class:`numpy.random.SeedSequence`.
    """
    if n < 2:
        raise ValueError("a network needs n >= 2 nodes")
    check_valid(params)
    if params.T >= 2 and params.homogeneous and is_ergodic(params.rho[0]):
        stat = stationary_distribution(params.rho[0])
        if np.max(np.abs(stat - params.pi)) > 1e-9:
            logger.info("initial distribution is not stationary for rho; simulating a non-stationary chain")

    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    node_ss, edge_ss = ss.spawn(2)
    U = np.stack([np.random.default_rng(c).random(params.T) for c in node_ss.spawn(n)])
    Z = _chains_from_uniforms(params.pi, list(params.transitions()), U)

    iu, ju = edge_index(n)
    edges = np.empty((params.T, iu.size), dtype=np.int64)
    for t, child in enumerate(edge_ss.spawn(params.T)):
        u = np.random.default_rng(child).random(iu.size)
        edges[t] = _inverse_cdf(params.edge_probs[t][Z[t, iu], Z[t, ju]], u)

    used_seed = seed if isinstance(seed, (int, np.integer)) else ss.entropy
    return SimOutput(LatentStates(Z), ObservedNetwork(n, params.kappa, edges), int(used_seed))


def marginal_edge_distribution(params: ModelParams, t: int) -> np.ndarray:
    """Law of a single edge state at time ``t`` (1-based) with node states integrated out."""
    law = params.state_law(t)
    out = np.einsum("q,l,qlx->x", law, law, params.edge_probs[t - 1])
    return out / out.sum()


# --------------------------------------------------------------------------
# JSON files


def sim_to_dict(sim: SimOutput, include_latent: bool = True) -> dict:
    net = sim.network
    doc = {"n": net.n, "T": net.T, "kappa": net.kappa, "seed": sim.seed}
    if include_latent:
        doc["latent"] = to_one_based(sim.latent.states).tolist()
    doc["edges"] = net.edges.tolist()
    return doc


def save_sim(sim: SimOutput, path, include_latent: bool = True) -> None:
    Path(path).write_text(json.dumps(sim_to_dict(sim, include_latent)) + "\n")


def network_from_dict(doc: dict) -> tuple[ObservedNetwork, LatentStates | None]:
    """Read a simulation document or a bare ``{"n", "edges"[, "kappa"]}`` edges document."""
    for key in ("n", "edges"):
        if key not in doc:
            raise ValueError(f"network document lacks {key!r}")
    edges = np.asarray(doc["edges"], dtype=np.int64)
    kappa = doc.get("kappa")
    if kappa is None:
        kappa = max(2, int(edges.max(initial=0)) + 1)
    net = ObservedNetwork(int(doc["n"]), int(kappa), edges)
    if "T" in doc and int(doc["T"]) != net.T:
        raise ValueError(f"document declares T={doc['T']} but holds {net.T} snapshots")
    latent = None
    if doc.get("latent") is not None:
        latent = LatentStates(from_one_based(doc["latent"]))
    return net, latent


def load_network(path) -> tuple[ObservedNetwork, LatentStates | None]:
    return network_from_dict(json.loads(Path(path).read_text()))
