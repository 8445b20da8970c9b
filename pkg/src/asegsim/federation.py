"""Client sampling, privacy noise, addressed randomness, contact accounting.

Node ids are 1-based; node 1 is the server and holds the first objective in
the client list. Round one draws from nodes 2..M, round two from 1..M. Every
transmitted gradient counts as one contact; the server evaluating its own
objective is local and free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objectives import MixtureObjective

NOISE_NONE = "none"
NOISE_GAUSSIAN = "gaussian"
NOISE_UNIFORM = "uniform"

ROUND_ONE = 1
ROUND_TWO = 2
ROUND_PROX = 3


@dataclass(frozen=True)
class NoiseModel:
    """Additive per-coordinate noise on transmitted gradients.

    ``scale`` is the per-coordinate standard deviation (gaussian) or the
    half-width (uniform).
    """

    kind: str = NOISE_NONE
    scale: float = 0.0

    def __post_init__(self):
        if self.kind not in (NOISE_NONE, NOISE_GAUSSIAN, NOISE_UNIFORM):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.scale < 0.0:
            raise ValueError("noise scale must be nonnegative")
        if self.kind == NOISE_NONE and self.scale != 0.0:
            raise ValueError("noise kind 'none' cannot carry a scale")

    def variance_bound(self, dim: int) -> float:
        """E ||xi||^2 for one transmitted vector of the given dimension."""
        if self.kind == NOISE_NONE:
            return 0.0
        if self.kind == NOISE_GAUSSIAN:
            return dim * self.scale ** 2
        return dim * self.scale ** 2 / 3.0

    def sample(self, rng, dim: int):
        if self.kind == NOISE_NONE or self.scale == 0.0:
            return None
        if self.kind == NOISE_GAUSSIAN:
            return rng.normal(0.0, self.scale, size=dim)
        return rng.uniform(-self.scale, self.scale, size=dim)


@dataclass(frozen=True)
class SamplingPlan:
    """How many nodes each round contacts and how they are drawn.

    ``reweight`` rescales the round-one aggregate by (M-1)/M so its
    expectation matches the gradient of the full correction term; turning it
    off reproduces the plain average over the sampled pool.
    ``full_participation`` contacts every node each round (the deterministic
    extragradient regime) and ignores ``batch``.
    """

    batch: int = 1
    replacement: bool = True
    full_participation: bool = False
    reweight: bool = True

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch size must be at least 1")


class CommLedger:
    """Exact communication counters for one run."""

    def __init__(self, n_nodes: int):
        self.n_nodes = n_nodes
        self.contacts = 0
        self.bits_sent = 0
        self._batch_units = 0

    @property
    def normalized_rounds(self) -> float:
        # accumulated as integer batch units so N iterations at batch B give
        # exactly N * B / M
        return self._batch_units / self.n_nodes

    def record_contact(self, count: int = 1):
        self.contacts += count

    def record_round(self):
        # one participation bit to every non-server node per round
        self.bits_sent += self.n_nodes - 1

    def record_iteration_units(self, batch_units: int):
        self._batch_units += batch_units

    def snapshot(self):
        return self.contacts, self.normalized_rounds, self.bits_sent


class RngPolicy:
    """Deterministic generator streams addressed by integer keys.

    Streams derive from one master seed through SeedSequence spawn keys, so
    any (iteration, round, slot, node) address yields the same draws no
    matter which order, process or thread asks for it.
    """

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)

    def stream(self, *key: int) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=tuple(int(k) for k in key))
        return np.random.default_rng(seq)


class Federation:
    """The simulated network: node objectives plus sampling, noise, ledger."""

    def __init__(self, clients, plan: SamplingPlan,
                 noise: NoiseModel = NoiseModel(), master_seed: int = 0):
        clients = list(clients)
        if len(clients) < 2:
            raise ValueError("need at least two nodes")
        self.clients = clients
        self.server = clients[0]
        self.global_obj = MixtureObjective(clients)
        self.plan = plan
        self.noise = noise
        self.rng = RngPolicy(master_seed)
        self.ledger = CommLedger(len(clients))

    @classmethod
    def full_participation(cls, clients, master_seed: int = 0) -> "Federation":
        """Deterministic regime: every node, every round, no noise."""
        return cls(clients, SamplingPlan(full_participation=True),
                   NoiseModel(), master_seed)

    @property
    def n_nodes(self) -> int:
        return len(self.clients)

    @property
    def dim(self) -> int:
        return self.server.dim

    def objective(self, node: int):
        return self.clients[node - 1]

    def sample_clients(self, k: int, round_id: int) -> np.ndarray:
        """Node ids contacted at iteration k for the given round."""
        low = 2 if round_id == ROUND_ONE else 1
        pool = self.n_nodes - low + 1
        if self.plan.full_participation:
            return np.arange(low, self.n_nodes + 1)
        rng = self.rng.stream(k, round_id, 0, 0)
        if self.plan.replacement:
            return rng.integers(low, self.n_nodes + 1, size=self.plan.batch)
        if self.plan.batch > pool:
            raise ValueError(
                f"cannot draw {self.plan.batch} of {pool} nodes without replacement")
        return rng.choice(np.arange(low, self.n_nodes + 1), size=self.plan.batch,
                          replace=False)

    def noisy_grad(self, node: int, x, k: int, round_id: int, slot: int,
                   record: bool = True) -> np.ndarray:
        """Gradient as transmitted by a node: local gradient plus channel noise.

        Noise streams are addressed by (iteration, round, slot, node); the slot
        index keeps repeated draws of the same node independent.
        """
        g = self.objective(node).grad(x)
        xi = self.noise.sample(self.rng.stream(k, round_id, slot, node), self.dim)
        if xi is not None:
            g = g + xi
        if record:
            self.ledger.record_contact()
        return g

    def aggregate_round_one(self, sampled, x_g, k: int) -> np.ndarray:
        """Correction direction from the sampled pool against the local model."""
        g1 = self.server.grad(x_g)
        acc = np.zeros(self.dim)
        for slot, node in enumerate(sampled, start=1):
            acc += self.noisy_grad(int(node), x_g, k, ROUND_ONE, slot)
        s = acc / len(sampled) - g1
        if self.plan.reweight:
            s *= (self.n_nodes - 1) / self.n_nodes
        return s

    def aggregate_round_two(self, sampled, x_f, k: int) -> np.ndarray:
        """Average gradient over the round-two pool at the extrapolated point."""
        acc = np.zeros(self.dim)
        for slot, node in enumerate(sampled, start=1):
            if self.plan.full_participation and node == 1:
                acc += self.server.grad(x_f)
            else:
                acc += self.noisy_grad(int(node), x_f, k, ROUND_TWO, slot)
        return acc / len(sampled)

    def round_one(self, k: int, x_g) -> np.ndarray:
        sampled = self.sample_clients(k, ROUND_ONE)
        units = len(sampled) if self.plan.full_participation else self.plan.batch
        self.ledger.record_iteration_units(units)
        self.ledger.record_round()
        return self.aggregate_round_one(sampled, x_g, k)

    def round_two(self, k: int, x_f) -> np.ndarray:
        sampled = self.sample_clients(k, ROUND_TWO)
        self.ledger.record_round()
        return self.aggregate_round_two(sampled, x_f, k)
