"""Areal adjacency structure and intrinsic CAR precision algebra.

The ICAR precision ``Q = D - W`` is never materialised; every quadratic form
goes through the pairwise-difference identity over the undirected edge list.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np


class AdjacencyError(ValueError):
    """Raised for malformed or unsupported adjacency input."""


@dataclass(frozen=True, eq=False)
class AdjacencyGraph:
    """Immutable undirected neighbour structure over ``n`` areal units."""

    n: int
    neighbor_lists: tuple[tuple[int, ...], ...]
    degrees: np.ndarray
    edge_list: np.ndarray  # shape (m, 2), rows (i, j) with i < j
    # CSR layout consumed by the compiled sweep kernels
    nbr_ptr: np.ndarray = field(repr=False)
    nbr_idx: np.ndarray = field(repr=False)

    @property
    def n_edges(self) -> int:
        return int(self.edge_list.shape[0])

    @property
    def n_components(self) -> int:
        seen = np.zeros(self.n, dtype=bool)
        count = 0
        for start in range(self.n):
            if seen[start]:
                continue
            count += 1
            stack = [start]
            seen[start] = True
            while stack:
                i = stack.pop()
                for j in self.neighbor_lists[i]:
                    if not seen[j]:
                        seen[j] = True
                        stack.append(j)
        return count

    @property
    def is_connected(self) -> bool:
        return self.n_components == 1

    @property
    def precision_rank(self) -> int:
        """Rank of ``Q``: one null direction per connected component."""
        return self.n - self.n_components

    def dense_precision(self) -> np.ndarray:
        """Dense ``D - W``; intended for small graphs, tests and simulation."""
        q = np.diag(self.degrees.astype(float))
        i, j = self.edge_list[:, 0], self.edge_list[:, 1]
        q[i, j] = -1.0
        q[j, i] = -1.0
        return q

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self.neighbor_lists[i]


def from_edges(edges: Iterable[tuple[int, int]], n: int) -> AdjacencyGraph:
    """Build a validated graph from 0-based ``(i, j)`` pairs.

    Duplicate and reversed pairs collapse to one undirected edge.
    """
    if n < 1:
        raise AdjacencyError(f"n must be positive, got {n}")
    pairs = set()
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < n and 0 <= j < n):
            raise AdjacencyError(f"edge ({i}, {j}) out of range for n={n}")
        if i == j:
            raise AdjacencyError(f"self-loop at unit {i}")
        pairs.add((min(i, j), max(i, j)))
    return _build(pairs, n)


def _build(pairs: set[tuple[int, int]], n: int) -> AdjacencyGraph:
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for i, j in pairs:
        nbrs[i].add(j)
        nbrs[j].add(i)
    isolated = [i for i in range(n) if not nbrs[i]]
    if isolated:
        raise AdjacencyError(f"isolated unit(s) with no neighbours: {isolated}")
    neighbor_lists = tuple(tuple(sorted(s)) for s in nbrs)
    degrees = np.array([len(s) for s in neighbor_lists], dtype=np.int64)
    edge_list = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    nbr_ptr = np.zeros(n + 1, dtype=np.int64)
    nbr_ptr[1:] = np.cumsum(degrees)
    nbr_idx = np.array([j for s in neighbor_lists for j in s], dtype=np.int64)
    for arr in (degrees, edge_list, nbr_ptr, nbr_idx):
        arr.setflags(write=False)
    return AdjacencyGraph(n, neighbor_lists, degrees, edge_list, nbr_ptr, nbr_idx)


def load_adjacency(source: TextIO | str, n: int) -> AdjacencyGraph:
    """Parse an edge-list CSV (optional ``from,to`` header, 0-based indices).

    ``source`` is an open text stream or a path. Errors carry the 1-based line
    number of the offending row.
    """
    if isinstance(source, str):
        with open(source, encoding="utf-8", newline="") as fh:
            return load_adjacency(fh, n)
    if n < 1:
        raise AdjacencyError(f"n must be positive, got {n}")
    pairs: set[tuple[int, int]] = set()
    reader = csv.reader(source)
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not tok.strip() for tok in row):
            continue
        tokens = [tok.strip() for tok in row]
        if lineno == 1 and [t.lower() for t in tokens] == ["from", "to"]:
            continue
        if len(tokens) != 2:
            raise AdjacencyError(f"line {lineno}: expected 2 fields, got {len(tokens)}")
        try:
            i, j = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise AdjacencyError(f"line {lineno}: non-integer token in {tokens!r}") from None
        if not (0 <= i < n and 0 <= j < n):
            raise AdjacencyError(f"line {lineno}: index out of range [0, {n}) in ({i}, {j})")
        if i == j:
            raise AdjacencyError(f"line {lineno}: self-loop at unit {i}")
        pairs.add((min(i, j), max(i, j)))
    return _build(pairs, n)


def write_adjacency(g: AdjacencyGraph, stream: TextIO) -> None:
    stream.write("from,to\n")
    for i, j in g.edge_list:
        stream.write(f"{i},{j}\n")


def adjacency_to_text(g: AdjacencyGraph) -> str:
    buf = io.StringIO()
    write_adjacency(g, buf)
    return buf.getvalue()


def lattice(rows: int, cols: int) -> AdjacencyGraph:
    """Rook-contiguity grid, units numbered row-major."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c
            if c + 1 < cols:
                edges.append((k, k + 1))
            if r + 1 < rows:
                edges.append((k, k + cols))
    return from_edges(edges, rows * cols)


def path(n: int) -> AdjacencyGraph:
    return from_edges([(i, i + 1) for i in range(n - 1)], n)


def _check_len(g: AdjacencyGraph, *vectors: np.ndarray) -> None:
    for v in vectors:
        if v.shape != (g.n,):
            raise ValueError(f"expected vector of length {g.n}, got shape {v.shape}")


def precision_quadform(g: AdjacencyGraph, u, m=None) -> float:
    """``(u - m)' Q (u - m)`` as a sum of squared differences over edges."""
    u = np.asarray(u, dtype=float)
    if m is None:
        r = u
        _check_len(g, u)
    else:
        m = np.asarray(m, dtype=float)
        if np.ndim(m) == 0:
            m = np.full(g.n, float(m))
        _check_len(g, u, m)
        r = u - m
    d = r[g.edge_list[:, 0]] - r[g.edge_list[:, 1]]
    return float(d @ d)


def conditional_mean(g: AdjacencyGraph, i: int, values, means) -> float:
    """ICAR conditional mean of unit ``i`` given its neighbours.

    The matching conditional variance is ``tau2 / degrees[i]``.
    """
    if not 0 <= i < g.n:
        raise IndexError(f"unit index {i} out of range [0, {g.n})")
    values = np.asarray(values, dtype=float)
    means = np.asarray(means, dtype=float)
    _check_len(g, values, means)
    nb = list(g.neighbor_lists[i])
    return float(means[i] + np.sum(values[nb] - means[nb]) / g.degrees[i])
