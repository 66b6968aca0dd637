"""Federated aggregation of follower actor networks, gated by the ledger.

Followers upload parameter deltas only; states and transitions never leave
the follower. The leader forms a weighted sum of deltas, commits the digest
of the new global model on the ledger and only then issues it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ledger import Ledger, Status, Transaction, submit
from .nn import PolicyParams, check_layout, dumps_params


class IssuingRefused(RuntimeError):
    """The aggregation transaction was closed, so the global model is not issued."""


def compute_delta(global_params: PolicyParams, local: PolicyParams) -> PolicyParams:
    """I = Z - Z_local, element-wise."""
    check_layout(global_params, local)
    return global_params.axpy(-1.0, local)


def aggregation_weight(task_bits, slant_dist, total_bits, total_dist):
    """Mean of the follower's share of task bits and its share of slant distance."""
    if np.any(np.asarray(total_bits) <= 0) or np.any(np.asarray(total_dist) <= 0):
        raise ValueError("totals must be > 0")
    return 0.5 * (np.asarray(task_bits, float) / total_bits + np.asarray(slant_dist, float) / total_dist)


def follower_weights(task_bits, slant_dist) -> np.ndarray:
    bits = np.asarray(task_bits, float)
    dist = np.asarray(slant_dist, float)
    return aggregation_weight(bits, dist, bits.sum(), dist.sum())


@dataclass
class FederationRound:
    global_model: PolicyParams
    deltas: list
    weights: np.ndarray
    agg_lr: float

    def validate(self, atol: float = 1e-9) -> None:
        w = np.asarray(self.weights, float)
        if w.shape != (len(self.deltas),):
            raise ValueError(f"{len(self.deltas)} deltas but {w.size} weights")
        if np.any(w < 0) or abs(w.sum() - 1.0) > atol:
            raise ValueError("weights must be non-negative and sum to 1")
        for d in self.deltas:
            check_layout(self.global_model, d)


def aggregate(rnd: FederationRound) -> PolicyParams:
    """Z(t+1) = Z(t) + u * sum_k w_k I_k(t)."""
    rnd.validate()
    step = PolicyParams.zeros(rnd.global_model.layout)
    for w, d in zip(rnd.weights, rnd.deltas):
        step = step.axpy(float(w), d)
    if not np.any(step.flat()):
        return rnd.global_model.copy()
    return rnd.global_model.axpy(rnd.agg_lr, step)


def aggregate_and_issue(rnd: FederationRound, ledger: Ledger, followers: dict | None = None,
                        tamper=None, tx_id=None, block_size: float = 0.0, initiator=("leader",)):
    """Aggregate, commit the new model's digest, then issue it.

    ``followers`` maps follower keys to objects with an ``actor`` attribute;
    each gets its own copy of Z(t+1). When verification closes the
    transaction, :class:`IssuingRefused` is raised and followers keep their
    local parameters. Returns (Z(t+1), committed transaction).
    """
    new_global = aggregate(rnd)
    tx = Transaction.create(tuple(initiator), dumps_params(new_global), block_size, tx_id=tx_id)
    tx = submit(ledger, tx, tamper)
    if tx.status is not Status.COMMITTED:
        raise IssuingRefused(f"transaction {tx.id} closed; global model not issued")
    if followers is not None:
        for agent in followers.values():
            agent.actor = new_global.copy()
    return new_global, tx


class Federator:
    """Keeps the global actor and runs rounds over a MADFRL policy's agents."""

    def __init__(self, cfg, init_model: PolicyParams, ledger: Ledger | None = None):
        self.cfg = cfg
        self.global_model = init_model.copy()
        self.ledger = ledger if ledger is not None else Ledger(
            n_delegates=cfg.n_delegates, block_min=cfg.block_min, block_max=cfg.block_max)
        self.rounds = 0
        self.refused = 0

    def run_round(self, agents: dict, task_bits, slant_dist, tamper=None) -> bool:
        """One round over ``agents`` (key -> Agent). Returns True when issued."""
        keys = sorted(agents)
        deltas = [compute_delta(self.global_model, agents[k].actor) for k in keys]
        bits = np.array([task_bits[k] for k in keys], float)
        dist = np.array([slant_dist[k] for k in keys], float)
        rnd = FederationRound(self.global_model, deltas, follower_weights(bits, dist), self.cfg.agg_lr)
        self.rounds += 1
        try:
            self.global_model, _ = aggregate_and_issue(
                rnd, self.ledger, agents, tamper=tamper, tx_id=f"fed-{self.rounds}",
                block_size=self.cfg.block_min)
        except IssuingRefused:
            self.refused += 1
            return False
        return True
