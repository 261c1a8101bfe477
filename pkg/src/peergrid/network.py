"""Simulated message bus with per-iteration Bernoulli link failures.

Each outer iteration the orchestrator draws one active-link set: a link
either delivers both directions or drops both, so the failure unit is the
link, not the message.  Draws are a pure function of (seed, iteration,
canonical edge order), which makes whole runs reproducible bit for bit
regardless of agent scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .topology import Topology

__all__ = [
    "LossModel",
    "ActiveLinkSet",
    "ProtocolError",
    "draw_active_links",
    "MessageBus",
    "round_robin_schedule",
]


class ProtocolError(RuntimeError):
    """An agent violated the post-once-per-iteration exchange contract."""


@dataclass(frozen=True)
class LossModel:
    """Per-link failure probabilities and the RNG seed of a run.

    ``default_failure_prob`` applies to every link not listed in
    ``per_link`` (keys are canonical (min id, max id) pairs).  A failure
    probability of 0 is the ideal network; 1 is rejected because such a
    link never delivers.
    """

    default_failure_prob: float = 0.0
    per_link: Mapping[Tuple[str, str], float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        for name, p in [("default_failure_prob", self.default_failure_prob),
                        *((f"link {k}", v) for k, v in self.per_link.items())]:
            if not (0.0 <= p < 1.0):
                raise ValueError(f"{name}: failure probability {p} outside [0, 1)")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must fit in 64 bits")

    def failure_probs(self, topology: Topology) -> np.ndarray:
        """Failure probability per canonical edge."""
        out = np.full(topology.n_edges, self.default_failure_prob)
        for key, p in self.per_link.items():
            a, b = key
            canon = (a, b) if a <= b else (b, a)
            if canon not in topology.edge_index:
                raise ValueError(f"loss model names unknown link {key!r}")
            out[topology.edge_index[canon]] = p
        return out


@dataclass(frozen=True)
class ActiveLinkSet:
    """Edges whose exchange succeeded at one iteration (symmetric)."""

    iteration: int
    active: np.ndarray  # bool per canonical edge

    def is_active(self, topology: Topology, a: str, b: str) -> bool:
        return bool(self.active[topology.edge_row(a, b)])

    @property
    def count(self) -> int:
        return int(np.sum(self.active))


def draw_active_links(loss: LossModel, iteration: int, topology: Topology) -> ActiveLinkSet:
    """Draw one symmetric active-link set for the given iteration.

    Deterministic in (seed, iteration): every iteration gets its own
    child RNG stream, and draws follow the canonical edge order.
    """
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=int(loss.seed), spawn_key=(int(iteration),))
    )
    u = rng.random(topology.n_edges)
    active = u >= loss.failure_probs(topology)
    active.flags.writeable = False
    return ActiveLinkSet(iteration=iteration, active=active)


def round_robin_schedule(topology: Topology):
    """Scripted degenerate schedule: exactly one link active per iteration,
    cycling through the canonical edge order."""

    def schedule(iteration: int) -> ActiveLinkSet:
        active = np.zeros(topology.n_edges, dtype=bool)
        active[(iteration - 1) % topology.n_edges] = True
        active.flags.writeable = False
        return ActiveLinkSet(iteration=iteration, active=active)

    return schedule


class MessageBus:
    """Barrier-synchronized price exchange between neighbor agents.

    Agents post their iteration-k price estimate once; ``deliver`` then
    hands every agent the estimates of exactly those neighbors whose link
    is in the active set.  Posting twice for the same iteration is a
    protocol violation.
    """

    def __init__(self, topology: Topology):
        self.topology = topology
        self._iteration: Optional[int] = None
        self._posts: Dict[str, np.ndarray] = {}

    def post(self, iteration: int, agent: str, message: np.ndarray) -> None:
        if self._iteration is None or iteration != self._iteration:
            self._iteration = iteration
            self._posts = {}
        if agent in self._posts:
            raise ProtocolError(f"agent {agent!r} posted twice for iteration {iteration}")
        if agent not in self.topology.neighbors:
            raise ProtocolError(f"unknown agent {agent!r}")
        self._posts[agent] = message

    def deliver(self, iteration: int, links: ActiveLinkSet) -> Dict[str, Dict[str, np.ndarray]]:
        """Inbox per agent: neighbor id -> posted message, active links only."""
        if self._iteration != iteration:
            raise ProtocolError(f"no posts recorded for iteration {iteration}")
        missing = set(self.topology.nodes) - set(self._posts)
        if missing:
            raise ProtocolError(f"agents {sorted(missing)} did not post for iteration {iteration}")
        inboxes: Dict[str, Dict[str, np.ndarray]] = {i: {} for i in self.topology.nodes}
        for a, b in self.topology.edges:
            if links.is_active(self.topology, a, b):
                inboxes[a][b] = self._posts[b]
                inboxes[b][a] = self._posts[a]
        return inboxes
