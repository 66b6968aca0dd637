"""Privacy-protection overhead and a simulated transaction-verification ledger.

Consensus is simulated at the state-machine level: a committee of delegates
recomputes the payload digest and votes; a two-thirds quorum commits the
transaction, anything else closes it.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


# --- overhead -------------------------------------------------------------

@dataclass(frozen=True)
class OverheadBreakdown:
    aggregation: float
    transmission: float
    verification: float

    @property
    def total(self) -> float:
        return self.aggregation + self.transmission + self.verification


def aggregation_overhead(model_size, mbs_cpu_freq):
    if np.any(np.asarray(mbs_cpu_freq) <= 0):
        raise ZeroDivisionError("MBS CPU frequency must be > 0")
    return model_size / mbs_cpu_freq


def transmission_overhead(delta, n_mbs, model_size, uplink_rate):
    return delta * math.log2(n_mbs) * model_size / uplink_rate


def verification_overhead(delta, n_mbs, followers, block_size, downlink_rate, follower_freqs):
    """Block download time plus the slowest follower's verification time.

    Followers with zero CPU frequency take no part in verification.
    """
    freqs = np.asarray(follower_freqs, float)
    active = freqs[freqs > 0]
    if active.size == 0:
        raise ValueError("at least one follower must have a positive CPU frequency")
    download = delta * math.log2(followers * n_mbs) * block_size / downlink_rate
    return download + block_size / active.min()


def total_overhead(aggregation, transmission, verification) -> OverheadBreakdown:
    return OverheadBreakdown(float(aggregation), float(transmission), float(verification))


def slot_overheads(cfg, block_size, freqs) -> np.ndarray:
    """C_SBC per follower for one slot.

    ``block_size`` and ``freqs`` are (N, M). Model size and block size are
    converted to CPU workloads with ``cfg.workload_factor``. An MBS whose
    followers are all idle pays only the download term.
    """
    wf = cfg.workload_factor
    n, m = cfg.n_mbs, cfg.followers_per_mbs
    c1 = aggregation_overhead(cfg.model_size * wf, cfg.mbs_cpu_freq)
    c2 = transmission_overhead(cfg.model_tx_factor, n, cfg.model_size, cfg.uplink_rate)
    block = np.asarray(block_size, float)
    freqs = np.asarray(freqs, float)
    download = cfg.model_tx_factor * math.log2(m * n) * block / cfg.downlink_rate
    masked = np.where(freqs > 0, freqs, np.inf)
    slowest = masked.min(axis=1, keepdims=True)
    verify = np.where(np.isfinite(slowest), block * wf / slowest, 0.0)
    return c1 + c2 + download + verify


# --- transactions ---------------------------------------------------------

class Status(enum.Enum):
    GENERATED = "Generated"
    BROADCAST = "Broadcast"
    PACKAGED = "Packaged"
    VERIFYING = "Verifying"
    COMMITTED = "Committed"
    CLOSED = "Closed"


class Event(enum.Enum):
    BROADCAST = "broadcast"
    PACKAGE = "package"
    VERIFY = "verify"
    COMMIT = "commit"
    CLOSE = "close"


class IllegalTransition(RuntimeError):
    def __init__(self, status, event):
        self.status, self.event = status, event
        super().__init__(f"illegal transition: {event.value} while {status.value}")


_TRANSITIONS = {
    (Status.GENERATED, Event.BROADCAST): Status.BROADCAST,
    (Status.BROADCAST, Event.PACKAGE): Status.PACKAGED,
    (Status.PACKAGED, Event.VERIFY): Status.VERIFYING,
    (Status.VERIFYING, Event.COMMIT): Status.COMMITTED,
    (Status.VERIFYING, Event.CLOSE): Status.CLOSED,
}

_ids = itertools.count()


def digest(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class Transaction:
    id: str
    initiator: tuple
    payload_digest: str
    payload: bytes
    status: Status = Status.GENERATED
    block_size: float = 0.0

    @classmethod
    def create(cls, initiator, payload: bytes, block_size: float = 0.0, tx_id=None) -> "Transaction":
        tx_id = tx_id if tx_id is not None else f"tx{next(_ids)}"
        return cls(id=tx_id, initiator=tuple(initiator), payload_digest=digest(payload),
                   payload=bytes(payload), block_size=float(block_size))


def advance_transaction(tx: Transaction, event: Event, ledger: "Ledger | None" = None) -> Transaction:
    """Move ``tx`` one step through its life cycle.

    ``Event.COMMIT`` at Verifying runs the delegate vote on ``ledger``: a
    digest mismatch or a failed quorum closes the transaction instead.
    """
    key = (tx.status, event)
    if key not in _TRANSITIONS:
        raise IllegalTransition(tx.status, event)
    if event is Event.COMMIT:
        if ledger is None:
            raise ValueError("committing requires a ledger")
        if not ledger.vote(tx):
            return dataclasses.replace(tx, status=Status.CLOSED)
        committed = dataclasses.replace(tx, status=Status.COMMITTED)
        ledger.append(committed)
        return committed
    moved = dataclasses.replace(tx, status=_TRANSITIONS[key])
    if event is Event.CLOSE and ledger is not None:
        ledger.closed.append(moved)
    return moved


@dataclass(frozen=True)
class Block:
    size: float
    transactions: tuple
    height: int


@dataclass
class Ledger:
    """Append-only chain of committed transactions plus closed-transaction log."""

    n_delegates: int = 7
    faulty_delegates: int = 0
    block_min: float = 0.0
    block_max: float = math.inf
    coin_reward: float = 1.0
    blocks: list = field(default_factory=list)
    closed: list = field(default_factory=list)
    balances: dict = field(default_factory=dict)

    @property
    def quorum(self) -> int:
        return math.ceil(2 * self.n_delegates / 3)

    @property
    def height(self) -> int:
        return len(self.blocks)

    def vote(self, tx: Transaction) -> bool:
        honest = self.n_delegates - self.faulty_delegates
        ok = digest(tx.payload) == tx.payload_digest
        yes = honest if ok else 0
        passed = yes >= self.quorum
        if not passed:
            self.closed.append(dataclasses.replace(tx, status=Status.CLOSED))
        return passed

    def append(self, tx: Transaction) -> Block:
        size = min(max(tx.block_size, self.block_min), self.block_max)
        block = Block(size=size, transactions=(tx,), height=self.height)
        self.blocks.append(block)
        self.balances[tx.initiator] = self.balances.get(tx.initiator, 0.0) + self.coin_reward
        return block

    def records(self):
        for b in self.blocks:
            for tx in b.transactions:
                yield {"height": b.height, "tx_id": tx.id, "initiator": list(tx.initiator),
                       "status": tx.status.value, "block_size": b.size}
        for tx in self.closed:
            yield {"height": None, "tx_id": tx.id, "initiator": list(tx.initiator),
                   "status": tx.status.value, "block_size": tx.block_size}

    def export(self, path) -> Path:
        path = Path(path)
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return path


def submit(ledger: Ledger, tx: Transaction, tamper=None) -> Transaction:
    """Run ``tx`` from Generated to Committed or Closed.

    ``tamper`` may rewrite the payload bytes after the digest was taken,
    simulating an attack between broadcast and verification.
    """
    tx = advance_transaction(tx, Event.BROADCAST)
    tx = advance_transaction(tx, Event.PACKAGE)
    if tamper is not None:
        tx = dataclasses.replace(tx, payload=tamper(tx.payload))
    tx = advance_transaction(tx, Event.VERIFY)
    return advance_transaction(tx, Event.COMMIT, ledger)


def audit_records(lines) -> list[str]:
    """Check an exported ledger; returns a list of problems (empty when clean)."""
    problems, last = [], -1
    valid = {s.value for s in Status}
    for i, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            problems.append(f"record {i}: not JSON ({exc})")
            continue
        missing = {"height", "tx_id", "initiator", "status", "block_size"} - rec.keys()
        if missing:
            problems.append(f"record {i}: missing {sorted(missing)}")
            continue
        if rec["status"] not in valid:
            problems.append(f"record {i}: unknown status {rec['status']!r}")
        if rec["status"] == Status.COMMITTED.value:
            if rec["height"] is None or rec["height"] <= last:
                problems.append(f"record {i}: height {rec['height']} does not increase past {last}")
            else:
                last = rec["height"]
        elif rec["height"] is not None:
            problems.append(f"record {i}: {rec['status']} transaction carries a height")
    return problems
