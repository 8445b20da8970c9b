"""libsvm text IO, server/client partitioning, synthetic quadratic problems."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ParseError
from .objectives import (Dataset, LossModel, MixtureObjective, Objective,
                         ProblemConstants, QUADRATIC)


@dataclass
class LibsvmRecord:
    label: float
    entries: list  # [(index, value)] with 1-based strictly increasing indices


def _iter_lines(source):
    if isinstance(source, str):
        return io.StringIO(source)
    return source


def parse_records(source):
    """Parse libsvm text into records. '#' starts a comment, blank lines skip."""
    records = []
    for lineno, raw in enumerate(_iter_lines(source), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise ParseError(f"label {tokens[0]!r} is not numeric", lineno) from None
        entries = []
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep or not idx_s or not val_s:
                raise ParseError(f"malformed feature token {tok!r}", lineno)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"malformed feature token {tok!r}", lineno) from None
            if idx <= 0:
                raise ParseError(f"feature index {idx} must be positive", lineno)
            if idx <= prev:
                raise ParseError(
                    f"feature index {idx} not strictly increasing", lineno)
            entries.append((idx, val))
            prev = idx
        records.append(LibsvmRecord(label, entries))
    if not records:
        raise ParseError("no data rows found")
    return records


def records_to_dataset(records, dim: int | None = None):
    """Assemble records into a Dataset. Returns (dataset, inferred_dim).

    ``dim`` widens the coordinate system (never narrows it) so shards parsed
    separately can share one width.
    """
    inferred = max((e[0] for r in records for e in r.entries), default=0)
    width = max(inferred, dim or 0)
    rows, cols, vals = [], [], []
    for i, rec in enumerate(records):
        for idx, val in rec.entries:
            rows.append(i)
            cols.append(idx - 1)
            vals.append(val)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(len(records), width))
    labels = np.array([r.label for r in records], dtype=float)
    return Dataset(mat, labels), inferred


def parse_libsvm(source, dim: int | None = None):
    """Parse libsvm text from a string or line iterable into a Dataset."""
    return records_to_dataset(parse_records(source), dim=dim)


def write_libsvm(ds: Dataset, stream=None) -> str | None:
    """Serialize a Dataset back to libsvm text (explicit zeros preserved)."""
    out = stream or io.StringIO()
    A = ds.features
    for i in range(ds.n):
        parts = [repr(float(ds.labels[i]))]
        for k in range(A.indptr[i], A.indptr[i + 1]):
            parts.append(f"{A.indices[k] + 1}:{float(A.data[k])!r}")
        out.write(" ".join(parts) + "\n")
    if stream is None:
        return out.getvalue()
    return None


@dataclass
class BatchPlan:
    """Which shuffled batches feed the server mixture and which the clients."""

    total_batches: int
    server_batches: list
    client_batches: list  # batch id per client node 2..M, in node order
    dropped_batches: list
    shuffle_seed: int


@dataclass
class Partition:
    server: object
    clients: list  # node objectives; clients[0] is the server objective
    global_obj: MixtureObjective
    plan: BatchPlan


def build_partition(ds: Dataset, model: LossModel, n_clients: int,
                    n_server_batches: int, seed: int) -> Partition:
    """Shuffle rows once and deal M + N near-equal batches.

    The server objective is the uniform mixture of the first N batches and is
    also node 1 of the M clients; nodes 2..M get one batch each. Exactly one
    batch is left over and dropped.
    """
    M, N = n_clients, n_server_batches
    if M < 2:
        raise ValueError("need at least two client nodes")
    if not 1 <= N < M:
        raise ValueError("server batch count must satisfy 1 <= N < M")
    total = M + N
    if ds.n < total:
        raise ValueError(f"{ds.n} rows cannot fill {total} batches")

    perm = np.random.default_rng(seed).permutation(ds.n)
    batches = np.array_split(perm, total)
    objs = [Objective(model, ds.subset(rows)) for rows in batches]

    server = objs[0] if N == 1 else MixtureObjective(objs[:N])
    clients = [server] + objs[N:N + M - 1]
    plan = BatchPlan(
        total_batches=total,
        server_batches=list(range(N)),
        client_batches=list(range(N, N + M - 1)),
        dropped_batches=[total - 1],
        shuffle_seed=seed,
    )
    return Partition(server, clients, MixtureObjective(clients), plan)


@dataclass
class SynthSpec:
    """Synthetic quadratic family with a controlled cross-node Hessian spread."""

    d: int = 30
    M: int = 20
    points_per_node: int = 40
    hetero: float = 0.5
    seed: int = 0
    lam: float = 0.1
    label_noise: float = 0.0


@dataclass
class SynthProblem:
    server: Objective
    clients: list
    global_obj: MixtureObjective
    constants: ProblemConstants
    grams: list = field(repr=False, default_factory=list)


def gen_synthetic_quadratic(spec: SynthSpec) -> SynthProblem:
    """Quadratic nodes with known Grams, hence exact delta, mu and L.

    Node m gets Gram G_m = A0 + hetero * E_m with E_m a random PSD matrix of
    unit spectral norm, so the spread never threatens positive definiteness
    and the smallest eigenvalue of the average Gram stays near the small
    fixed floor of A0 (keeping mu below delta for moderate spreads). Each G_m
    is embedded exactly: the node's data matrix stacks sqrt(n) * C_m
    (C_m^T C_m = G_m) on zero padding rows, so (1/n) X^T X = G_m to machine
    precision. Labels come from one shared reference point, which makes node
    minimizers, and hence gradients at the global optimum, disagree whenever
    lam > 0 or the Grams differ.
    """
    d, M, n = spec.d, spec.M, spec.points_per_node
    if M < 2:
        raise ValueError("need at least two nodes")
    if n < d:
        raise ValueError("points_per_node must be at least d for exact embedding")
    if spec.hetero < 0:
        raise ValueError("hetero must be nonnegative")

    seq = np.random.SeedSequence(spec.seed)
    rng = np.random.default_rng(seq)
    # labels draw from a child stream so toggling label_noise cannot shift
    # the Gram geometry
    label_rng = np.random.default_rng(seq.spawn(1)[0])
    W = rng.standard_normal((d, d)) / np.sqrt(d)
    A0 = 0.5 * (W.T @ W) + 0.05 * np.eye(d)
    x_ref = rng.standard_normal(d)
    model = LossModel(QUADRATIC, spec.lam)

    grams, clients = [], []
    for _ in range(M):
        R = rng.standard_normal((d, d))
        S = R.T @ R
        S /= np.linalg.norm(S, 2)
        G = A0 + spec.hetero * S
        grams.append(G)

        vals, vecs = np.linalg.eigh(G)
        vals = np.clip(vals, 0.0, None)
        C = np.sqrt(vals)[:, None] * vecs.T
        X = np.zeros((n, d))
        X[:d] = np.sqrt(n) * C
        b = X @ x_ref
        if spec.label_noise > 0:
            b[:d] += spec.label_noise * label_rng.standard_normal(d)
        clients.append(Objective(model, Dataset(sp.csr_matrix(X), b)))

    G_bar = sum(grams) / M
    delta = 2.0 * float(np.linalg.norm(grams[0] - G_bar, 2))
    eigs = np.linalg.eigvalsh(G_bar)
    constants = ProblemConstants(
        mu=2.0 * spec.lam + 2.0 * max(float(eigs[0]), 0.0),
        smoothness=2.0 * float(eigs[-1]) + 2.0 * spec.lam,
        server_smoothness=2.0 * float(np.linalg.eigvalsh(grams[0])[-1]) + 2.0 * spec.lam,
        delta=delta,
    )
    return SynthProblem(clients[0], clients, MixtureObjective(clients),
                        constants, grams)
