"""Chimera graphs, random +-1 spin-glass instances and their text format.

Site numbering: cells are laid out row-major on a ``rows x cols`` grid and
site ``8*(r*cols + c) + 4*z + k`` is spin ``k`` (0..3) on side ``z`` of cell
``(r, c)``. Side ``z=0`` (sites 0-3 of a cell) couples to the same ``k`` in
the cells above and below; side ``z=1`` (sites 4-7) couples to the same ``k``
in the cells left and right. Inside a cell every ``z=0`` site couples to
every ``z=1`` site (K4,4).

The graph is bipartite with colour ``(z + r + c) mod 2``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .rng import Stream

MAX_L = 16


class InvalidParameter(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def site(cols: int, r: int, c: int, z: int, k: int) -> int:
    return 8 * (r * cols + c) + 4 * z + k


@dataclass(frozen=True, eq=False)
class ChimeraGraph:
    """``rows x L`` grid of K4,4 cells; ``rows`` defaults to ``L``."""

    L: int
    rows: int
    edges: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return 8 * self.L * self.rows

    N = n

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def is_square(self) -> bool:
        return self.rows == self.L

    def colouring(self) -> np.ndarray:
        """Bipartition class (0/1) of every site."""
        idx = np.arange(self.n)
        cell, rem = np.divmod(idx, 8)
        r, c = np.divmod(cell, self.L)
        return ((rem // 4) + r + c) % 2

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {(int(i), int(j)): e for e, (i, j) in enumerate(self.edges)}

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def __eq__(self, other):
        if not isinstance(other, ChimeraGraph):
            return NotImplemented
        return (self.L, self.rows) == (other.L, other.rows)

    def __hash__(self):
        return hash((self.L, self.rows))


def build_chimera(L: int, rows: int | None = None) -> ChimeraGraph:
    if not isinstance(L, (int, np.integer)) or not 1 <= L <= MAX_L:
        raise InvalidParameter(f"L must be in [1, {MAX_L}], got {L!r}")
    rows = L if rows is None else rows
    if not 1 <= rows <= MAX_L:
        raise InvalidParameter(f"rows must be in [1, {MAX_L}], got {rows!r}")
    cols = L
    edges = []
    for r in range(rows):
        for c in range(cols):
            for ka in range(4):
                a = site(cols, r, c, 0, ka)
                for kb in range(4):
                    edges.append((a, site(cols, r, c, 1, kb)))
                if r + 1 < rows:
                    edges.append((a, site(cols, r + 1, c, 0, ka)))
            for kb in range(4):
                if c + 1 < cols:
                    edges.append((site(cols, r, c, 1, kb), site(cols, r, c + 1, 1, kb)))
    arr = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)
    return ChimeraGraph(L=int(L), rows=int(rows), edges=arr)


def is_bipartite(graph: ChimeraGraph) -> bool:
    """BFS two-colouring; independent of :meth:`ChimeraGraph.colouring`."""
    adj: list[list[int]] = [[] for _ in range(graph.n)]
    for i, j in graph.edges:
        adj[i].append(int(j))
        adj[j].append(int(i))
    colour = [-1] * graph.n
    for start in range(graph.n):
        if colour[start] >= 0:
            continue
        colour[start] = 0
        queue = deque([start])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if colour[w] < 0:
                    colour[w] = 1 - colour[v]
                    queue.append(w)
                elif colour[w] == colour[v]:
                    return False
    return True


@dataclass(frozen=True, eq=False)
class Adjacency:
    """CSR neighbour lists with the coupling on each half-edge."""

    offsets: np.ndarray
    neighbours: np.ndarray
    couplings: np.ndarray


@dataclass(frozen=True, eq=False)
class CouplingInstance:
    graph: ChimeraGraph
    couplings: np.ndarray
    seed: int = 0
    id: int = 0

    def __post_init__(self):
        J = np.asarray(self.couplings, dtype=np.int8)
        if J.shape != (self.graph.n_edges,):
            raise InvalidParameter(
                f"expected {self.graph.n_edges} couplings, got {J.shape}"
            )
        if not np.all(np.abs(J) == 1):
            raise InvalidParameter("couplings must be +-1")
        J.setflags(write=False)
        object.__setattr__(self, "couplings", J)

    @property
    def n(self) -> int:
        return self.graph.n

    @cached_property
    def adjacency(self) -> Adjacency:
        return adjacency_from_edges(self.graph.n, self.graph.edges, self.couplings)

    def gauge(self, flip: np.ndarray) -> CouplingInstance:
        """Instance with spins in ``flip`` (boolean mask) redefined as their negation."""
        flip = np.asarray(flip, dtype=bool)
        i, j = self.graph.edges.T
        sign = np.where(flip[i] ^ flip[j], -1, 1).astype(np.int8)
        return CouplingInstance(self.graph, self.couplings * sign, self.seed, self.id)

    def __eq__(self, other):
        if not isinstance(other, CouplingInstance):
            return NotImplemented
        return (
            self.graph == other.graph
            and self.seed == other.seed
            and self.id == other.id
            and np.array_equal(self.couplings, other.couplings)
        )

    __hash__ = None


def adjacency_from_edges(n: int, edges: np.ndarray, couplings: np.ndarray) -> Adjacency:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    J = np.asarray(couplings, dtype=np.int64)
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    val = np.concatenate([J, J])
    order = np.lexsort((dst, src))
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.add.at(offsets, src + 1, 1)
    return Adjacency(
        offsets=np.cumsum(offsets),
        neighbours=dst[order].astype(np.int64),
        couplings=val[order].astype(np.int64),
    )


def generate_instance(graph: ChimeraGraph, seed: int, instance_id: int = 0) -> CouplingInstance:
    """Independent fair +-1 couplings from the xoshiro256** stream keyed by ``seed``.

    Coupling ``e`` (edge-list order) is ``+1`` when the top bit of the
    ``e``-th 64-bit output is set, else ``-1``.
    """
    words = Stream(seed).u64(graph.n_edges)
    top = (words >> np.uint64(63)).astype(np.int8)
    return CouplingInstance(graph, 2 * top - 1, int(seed), int(instance_id))


def ferromagnet(graph: ChimeraGraph, sign: int = 1) -> CouplingInstance:
    return CouplingInstance(graph, np.full(graph.n_edges, sign, dtype=np.int8))


def _check_config(instance: CouplingInstance, config) -> np.ndarray:
    s = np.asarray(config)
    if s.shape != (instance.n,):
        raise InvalidParameter(f"config has shape {s.shape}, expected ({instance.n},)")
    return s.astype(np.int64)


def energy(instance: CouplingInstance, config) -> int:
    s = _check_config(instance, config)
    i, j = instance.graph.edges.T
    return int(-np.sum(instance.couplings.astype(np.int64) * s[i] * s[j]))


def write_instance(instance: CouplingInstance, path) -> None:
    g = instance.graph
    lines = [f"chimera {g.L} {g.n} {instance.seed}"]
    lines += [f"{i} {j} {J}" for (i, j), J in zip(g.edges.tolist(), instance.couplings.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_instance(path, instance_id: int = 0) -> CouplingInstance:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise ParseError(1, "empty file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "chimera":
        raise ParseError(1, "header must be 'chimera L N seed'")
    try:
        L, n, seed = int(head[1]), int(head[2]), int(head[3])
    except ValueError:
        raise ParseError(1, "non-integer header field") from None
    if not 1 <= L <= MAX_L or n <= 0 or n % (8 * L) or not 1 <= n // (8 * L) <= MAX_L:
        raise ParseError(1, f"inconsistent size L={L} N={n}")
    if not 0 <= seed <= (1 << 64) - 1:
        raise ParseError(1, "seed is not a 64-bit unsigned integer")
    graph = build_chimera(L, n // (8 * L))
    J = np.zeros(graph.n_edges, dtype=np.int8)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(lineno, "expected 'i j J'")
        try:
            i, j, v = (int(p) for p in parts)
        except ValueError:
            raise ParseError(lineno, "non-integer field") from None
        if not (0 <= i < n and 0 <= j < n):
            raise ParseError(lineno, f"site index out of range [0, {n})")
        if v not in (-1, 1):
            raise ParseError(lineno, f"coupling must be -1 or 1, got {v}")
        e = graph.edge_index.get((min(i, j), max(i, j)))
        if e is None:
            raise ParseError(lineno, f"({i}, {j}) is not a chimera edge")
        if J[e]:
            raise ParseError(lineno, f"duplicate edge ({i}, {j})")
        J[e] = v
    missing = np.flatnonzero(J == 0)
    if len(missing):
        i, j = graph.edges[missing[0]]
        raise ParseError(len(lines) + 1, f"{len(missing)} edges missing, first ({i}, {j})")
    return CouplingInstance(graph, J, seed, instance_id)
