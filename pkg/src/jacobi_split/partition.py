"""Preprocessing: splitting a global system into per-rank payloads.

Three strategies are produced here, consumed by the solver:

* band-row: contiguous row bands over the global column space;
* band-row with dependency lists: the same bands plus per-neighbor
  send/receive node lists covering exactly the external vector entries
  each local matrix touches;
* substructuring: non-overlapping subdomains sharing interface nodes,
  whose local matrices carry partial interface blocks that sum to the
  global coefficients.

Partitioning uses deterministic greedy graph growing instead of an
external graph partitioner: seed at the unassigned vertex of minimum
degree (lowest index on ties), grow breadth-first until the part reaches
its target size, reseed when the frontier empties.  An externally
computed node assignment can be imported from a file instead.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .sparse import CsrMatrix

# Interface coefficients shared by several subdomains must sum to the
# global value; equal division keeps that exact up to one rounding.
PARTIAL_SUM_RTOL = 1e-12


@dataclass(eq=False)
class BandRowPartition:
    """Contiguous rows ``[row_begin, row_end)`` of the global system."""

    rank: int
    row_begin: int
    row_end: int
    local_matrix: CsrMatrix  # row_end - row_begin rows, global column space
    local_rhs: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.row_end - self.row_begin


@dataclass(eq=False)
class DependencyLists:
    """Per-neighbor exchange lists for one band-row rank.

    ``recv_lists[q]`` holds the sorted global indices this rank reads from
    rank ``q``'s range; ``send_lists[q]`` the owned indices rank ``q``
    reads from here (mirror of q's receive list).  ``ghost_map`` assigns
    each received global index a compact ghost slot, ordered by global
    index.  Neighbors with empty lists are omitted.
    """

    rank: int
    send_lists: dict[int, np.ndarray] = field(default_factory=dict)
    recv_lists: dict[int, np.ndarray] = field(default_factory=dict)
    ghost_map: dict[int, int] = field(default_factory=dict)


@dataclass(eq=False)
class ElementConnectivity:
    """Mesh elements over the unknowns, with optional per-element data.

    ``elements[e]`` lists the node indices of element ``e`` (up to 8 for a
    hexahedron; fewer when boundary corners were eliminated).  When
    ``element_matrices``/``element_loads`` are present they assemble to
    the global matrix and right-hand side; without them the splitter
    distributes global coefficients equally over the covering elements.
    """

    n_nodes: int
    elements: list[tuple[int, ...]]
    element_matrices: list[np.ndarray] | None = None
    element_loads: list[np.ndarray] | None = None

    def validate(self):
        if not self.elements:
            raise ValueError("element connectivity without elements")
        touched = np.zeros(self.n_nodes, dtype=bool)
        for e, nodes in enumerate(self.elements):
            arr = np.asarray(nodes, dtype=np.int64)
            if arr.size == 0 or arr.min() < 0 or arr.max() >= self.n_nodes:
                raise ValueError(f"element {e} has node index out of range")
            if np.unique(arr).size != arr.size:
                raise ValueError(f"element {e} repeats a node")
            touched[arr] = True
        if not touched.all():
            missing = int(np.flatnonzero(~touched)[0])
            raise ValueError(f"node {missing} is not referenced by any element")
        if self.element_matrices is not None and len(self.element_matrices) != len(self.elements):
            raise ValueError("element_matrices must align with elements")
        if self.element_loads is not None and len(self.element_loads) != len(self.elements):
            raise ValueError("element_loads must align with elements")


@dataclass(eq=False)
class Substructure:
    """One subdomain: local system over interior-then-interface numbering.

    ``neighbors[q]`` lists this side's local interface indices shared with
    subdomain ``q``, ordered by ascending global index; the matching list
    on ``q``'s side visits the same global nodes in the same order.
    Interface rows/columns of ``local_matrix`` and interface entries of
    ``local_rhs`` are partial: summed over all sharers they reproduce the
    global coefficients.  ``interface_ownership[j]`` is the lowest sharing
    rank of the j-th local interface node; owners count shared nodes once
    in reductions.
    """

    rank: int
    local_matrix: CsrMatrix
    local_to_global: np.ndarray
    interior_count: int
    interface_count: int
    neighbors: dict[int, np.ndarray]
    interface_ownership: np.ndarray
    local_rhs: np.ndarray

    @property
    def n_local(self) -> int:
        return self.interior_count + self.interface_count

    def owned_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_local, dtype=bool)
        mask[: self.interior_count] = True
        mask[self.interior_count :] = self.interface_ownership == self.rank
        return mask


# -- band-row splitting -----------------------------------------------------


def band_row_ranges(n: int, p: int) -> list[tuple[int, int]]:
    """Contiguous bands of floor(n/p) or ceil(n/p) rows tiling [0, n).

    The remainder goes to the last ranks, which reproduces the reference
    three-band split of a 10-row matrix as (3, 3, 4).
    """
    if p < 1:
        raise ValueError("rank count must be at least 1")
    if p > n:
        raise ValueError(f"rank count {p} exceeds row count {n}")
    base, rem = divmod(n, p)
    sizes = [base] * (p - rem) + [base + 1] * rem
    ranges = []
    begin = 0
    for size in sizes:
        ranges.append((begin, begin + size))
        begin += size
    return ranges


def band_row_split(A: CsrMatrix, b, p: int) -> list[BandRowPartition]:
    """Split into ``p`` horizontal bands; concatenated bands reproduce A."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.n_rows,):
        raise ValueError("rhs length does not match matrix")
    parts = []
    for rank, (lo, hi) in enumerate(band_row_ranges(A.n_rows, p)):
        parts.append(
            BandRowPartition(rank, lo, hi, A.row_slice(lo, hi), b[lo:hi].copy())
        )
    return parts


def receive_lists(part: BandRowPartition, all_ranges) -> dict[int, np.ndarray]:
    """External columns of the local band, grouped by owning rank."""
    cols = np.unique(part.local_matrix.col_idx)
    external = cols[(cols < part.row_begin) | (cols >= part.row_end)]
    lists: dict[int, np.ndarray] = {}
    for q, (lo, hi) in enumerate(all_ranges):
        if lo == part.row_begin and hi == part.row_end:
            continue
        needed = external[(external >= lo) & (external < hi)]
        if needed.size:
            lists[q] = needed
    return lists


def build_dependency_lists(parts: list[BandRowPartition]) -> list[DependencyLists]:
    """Receive lists from each band's sparsity pattern, sends by mirroring.

    The symbolic exchange happens at preprocessing time where every band
    is visible, so ``send(q -> p)`` is simply ``recv(p <- q)``.
    """
    ranges = [(p.row_begin, p.row_end) for p in parts]
    recv = [receive_lists(part, ranges) for part in parts]
    deps = []
    for rank, part in enumerate(parts):
        sends = {
            q: recv[q][rank].copy() for q in range(len(parts)) if rank in recv[q]
        }
        ghosts = np.unique(np.concatenate([*recv[rank].values()])) if recv[rank] else np.array([], dtype=np.int64)
        deps.append(
            DependencyLists(
                rank=rank,
                send_lists=sends,
                recv_lists={q: lst.copy() for q, lst in recv[rank].items()},
                ghost_map={int(g): slot for slot, g in enumerate(ghosts)},
            )
        )
    return deps


# -- greedy graph growing -----------------------------------------------------


def _grow_partition(adjacency: list[np.ndarray], p: int) -> np.ndarray:
    """Assign each vertex a part id by breadth-first greedy growing."""
    n = len(adjacency)
    if p < 1:
        raise ValueError("part count must be at least 1")
    if p > n:
        raise ValueError(f"part count {p} exceeds vertex count {n}")
    degrees = np.array([len(a) for a in adjacency])
    base, rem = divmod(n, p)
    targets = [base] * (p - rem) + [base + 1] * rem
    assign = np.full(n, -1, dtype=np.int64)
    n_left = n
    for part in range(p):
        size = 0
        frontier: deque[int] = deque()
        while size < targets[part] and n_left > 0:
            if not frontier:
                unassigned = np.flatnonzero(assign < 0)
                seed = int(unassigned[np.argmin(degrees[unassigned])])
                assign[seed] = part
                size += 1
                n_left -= 1
                frontier.append(seed)
                continue
            v = frontier.popleft()
            for w in adjacency[v]:
                if size >= targets[part]:
                    break
                if assign[w] < 0:
                    assign[w] = part
                    size += 1
                    n_left -= 1
                    frontier.append(w)
    return assign


def matrix_adjacency(A: CsrMatrix) -> list[np.ndarray]:
    """Symmetrized structural adjacency (no self loops), sorted neighbors."""
    rows = A.nnz_rows()
    off = rows != A.col_idx
    i = np.concatenate([rows[off], A.col_idx[off]])
    j = np.concatenate([A.col_idx[off], rows[off]])
    order = np.lexsort((j, i))
    i, j = i[order], j[order]
    if i.size:
        keep = np.ones(i.size, dtype=bool)
        keep[1:] = (i[1:] != i[:-1]) | (j[1:] != j[:-1])
        i, j = i[keep], j[keep]
    starts = np.searchsorted(i, np.arange(A.n_rows + 1))
    return [j[starts[v] : starts[v + 1]] for v in range(A.n_rows)]


def element_adjacency(conn: ElementConnectivity) -> list[np.ndarray]:
    """Elements are adjacent when they share at least one node."""
    node_elems: list[list[int]] = [[] for _ in range(conn.n_nodes)]
    for e, nodes in enumerate(conn.elements):
        for v in nodes:
            node_elems[int(v)].append(e)
    neigh = [set() for _ in range(len(conn.elements))]
    for elems in node_elems:
        for e in elems:
            neigh[e].update(elems)
    return [np.array(sorted(s - {e}), dtype=np.int64) for e, s in enumerate(neigh)]


# -- substructuring ------------------------------------------------------------


def substructure_split(
    A: CsrMatrix,
    b,
    p: int,
    elements: ElementConnectivity | None = None,
) -> list[Substructure]:
    """Decompose into ``p`` subdomains sharing interface nodes.

    With elements, groups of elements define the subdomains and nodes
    touched by several groups become interface nodes; local matrices are
    assembled from each group's elements only, so partial interface
    blocks sum to the global ones by construction.  Without elements the
    split is algebraic: nodes are grouped on the matrix adjacency graph,
    both endpoints of any edge cut by the grouping become interface, and
    coefficients coupling two interface nodes (and interface diagonals
    and rhs entries) are divided equally among the sharing subdomains.
    """
    b = np.asarray(b, dtype=np.float64)
    if A.n_rows != A.n_cols:
        raise ValueError("substructure_split: matrix must be square")
    if b.shape != (A.n_rows,):
        raise ValueError("rhs length does not match matrix")
    if elements is not None:
        elements.validate()
        if elements.n_nodes != A.n_rows:
            raise ValueError("element connectivity node count does not match matrix")
        groups = _grow_partition(element_adjacency(elements), p)
        return _split_by_element_groups(A, b, elements, groups, p)
    assign = _grow_partition(matrix_adjacency(A), p)
    return _split_by_node_assignment(A, b, assign, p)


def import_node_partition(A: CsrMatrix, b, part_file) -> list[Substructure]:
    """Build substructures from an externally computed node assignment.

    File format: a count line, then one part id per line where line i
    holds node i's part (0-based).  Part ids are compacted to a dense
    0..p-1 range, so sparse id sets from external tools are accepted.
    """
    b = np.asarray(b, dtype=np.float64)
    with open(part_file) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{part_file}: empty partition file")
    count = int(lines[0])
    if count != A.n_rows:
        raise ValueError(
            f"{part_file}: assignment count {count} does not match {A.n_rows} nodes"
        )
    if len(lines) - 1 != count:
        raise ValueError(f"{part_file}: expected {count} assignments, got {len(lines) - 1}")
    raw = np.array([int(v) for v in lines[1:]], dtype=np.int64)
    if raw.min() < 0:
        raise ValueError(f"{part_file}: negative part id")
    ids = np.unique(raw)
    remap = {int(old): new for new, old in enumerate(ids)}
    assign = np.array([remap[int(v)] for v in raw], dtype=np.int64)
    return _split_by_node_assignment(A, b, assign, len(ids))


def _csr_lookup(A: CsrMatrix, rows, cols) -> np.ndarray:
    """Values of A at the given coordinates (0.0 where not stored)."""
    out = np.zeros(len(rows))
    for k, (i, j) in enumerate(zip(rows, cols)):
        lo, hi = A.row_ptr[i], A.row_ptr[i + 1]
        pos = lo + np.searchsorted(A.col_idx[lo:hi], j)
        if pos < hi and A.col_idx[pos] == j:
            out[k] = A.values[pos]
    return out


def _assemble_group_csr(entries_rows, entries_cols, entries_vals, local_of, n_local):
    rows = local_of[np.asarray(entries_rows, dtype=np.int64)]
    cols = local_of[np.asarray(entries_cols, dtype=np.int64)]
    return CsrMatrix.from_coo(n_local, n_local, rows, cols, entries_vals)


def _finish_substructures(A, n_parts, part_nodes, node_parts, coo_per_part, rhs_per_part):
    """Common tail: local numbering, neighbor lists, ownership."""
    interface = np.array([len(s) > 1 for s in node_parts])
    subs = []
    local_index = np.full(A.n_rows, -1, dtype=np.int64)
    for s in range(n_parts):
        nodes = part_nodes[s]
        interior = nodes[~interface[nodes]]
        iface = nodes[interface[nodes]]
        l2g = np.concatenate([interior, iface])
        local_index[:] = -1
        local_index[l2g] = np.arange(l2g.size)
        rows, cols, vals = coo_per_part[s]
        local_matrix = _assemble_group_csr(rows, cols, vals, local_index, l2g.size)
        neighbors: dict[int, np.ndarray] = {}
        for q in range(n_parts):
            if q == s:
                continue
            shared = iface[[q in node_parts[g] for g in iface]]
            if shared.size:
                neighbors[q] = local_index[shared]
        ownership = np.array([min(node_parts[g]) for g in iface], dtype=np.int64)
        rhs = np.zeros(l2g.size)
        rhs_idx, rhs_vals = rhs_per_part[s]
        np.add.at(rhs, local_index[rhs_idx], rhs_vals)
        subs.append(
            Substructure(
                rank=s,
                local_matrix=local_matrix,
                local_to_global=l2g,
                interior_count=int(interior.size),
                interface_count=int(iface.size),
                neighbors=neighbors,
                interface_ownership=ownership,
                local_rhs=rhs,
            )
        )
    return subs


def _split_by_element_groups(A, b, conn, groups, n_parts):
    n_elems = len(conn.elements)
    # which groups touch each node
    node_parts = [set() for _ in range(A.n_rows)]
    for e in range(n_elems):
        g = int(groups[e])
        for v in conn.elements[e]:
            node_parts[int(v)].add(g)
    part_nodes = [
        np.array(sorted(v for v in range(A.n_rows) if s in node_parts[v]), dtype=np.int64)
        for s in range(n_parts)
    ]

    have_mats = conn.element_matrices is not None
    if have_mats:
        _validate_element_assembly(A, conn)
    else:
        cover = _pair_cover_counts(A, conn)

    coo_per_part = []
    rhs_per_part = []
    for s in range(n_parts):
        elems = [e for e in range(n_elems) if groups[e] == s]
        rows_acc, cols_acc, vals_acc = [], [], []
        rhs_idx_acc, rhs_val_acc = [], []
        for e in elems:
            nodes = np.asarray(conn.elements[e], dtype=np.int64)
            k = nodes.size
            rr = np.repeat(nodes, k)
            cc = np.tile(nodes, k)
            if have_mats:
                vv = np.asarray(conn.element_matrices[e], dtype=np.float64).ravel()
                if vv.size != k * k:
                    raise ValueError(f"element {e} matrix shape does not match its nodes")
            else:
                vv = _csr_lookup(A, rr, cc) / _csr_lookup(cover, rr, cc)
            rows_acc.append(rr)
            cols_acc.append(cc)
            vals_acc.append(vv)
            if conn.element_loads is not None:
                load = np.asarray(conn.element_loads[e], dtype=np.float64)
                if load.shape != (k,):
                    raise ValueError(f"element {e} load shape does not match its nodes")
                rhs_idx_acc.append(nodes)
                rhs_val_acc.append(load)
        rows = np.concatenate(rows_acc) if rows_acc else np.array([], dtype=np.int64)
        cols = np.concatenate(cols_acc) if cols_acc else np.array([], dtype=np.int64)
        vals = np.concatenate(vals_acc) if vals_acc else np.array([])
        coo_per_part.append((rows, cols, vals))
        if conn.element_loads is not None:
            rhs_per_part.append(
                (
                    np.concatenate(rhs_idx_acc) if rhs_idx_acc else np.array([], dtype=np.int64),
                    np.concatenate(rhs_val_acc) if rhs_val_acc else np.array([]),
                )
            )
        else:
            nodes_s = part_nodes[s]
            share = np.array([len(node_parts[g]) for g in nodes_s], dtype=np.float64)
            rhs_per_part.append((nodes_s, b[nodes_s] / share))
    return _finish_substructures(A, n_parts, part_nodes, node_parts, coo_per_part, rhs_per_part)


def _pair_cover_counts(A, conn):
    """Count, per stored coefficient, how many elements cover it.

    Only used when per-element matrices are unavailable; every stored
    entry must be covered by at least one element so global coefficients
    can be distributed over element groups.  Returned as a CSR matrix of
    counts over the element footprint pattern.
    """
    rows_acc, cols_acc = [], []
    for nodes in conn.elements:
        idx = np.asarray(nodes, dtype=np.int64)
        rows_acc.append(np.repeat(idx, idx.size))
        cols_acc.append(np.tile(idx, idx.size))
    rr = np.concatenate(rows_acc)
    cc = np.concatenate(cols_acc)
    cover = CsrMatrix.from_coo(A.n_rows, A.n_rows, rr, cc, np.ones(rr.size))
    counts = _csr_lookup(cover, A.nnz_rows(), A.col_idx)
    if np.any(counts == 0):
        k = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(
            f"elements do not cover matrix entry ({int(A.nnz_rows()[k])}, {int(A.col_idx[k])})"
        )
    return cover


def _validate_element_assembly(A, conn):
    rows_acc, cols_acc, vals_acc = [], [], []
    for e, nodes in enumerate(conn.elements):
        idx = np.asarray(nodes, dtype=np.int64)
        k = idx.size
        mat = np.asarray(conn.element_matrices[e], dtype=np.float64)
        if mat.shape != (k, k):
            raise ValueError(f"element {e} matrix shape does not match its nodes")
        rows_acc.append(np.repeat(idx, k))
        cols_acc.append(np.tile(idx, k))
        vals_acc.append(mat.ravel())
    assembled = CsrMatrix.from_coo(
        A.n_rows,
        A.n_cols,
        np.concatenate(rows_acc),
        np.concatenate(cols_acc),
        np.concatenate(vals_acc),
    )
    scale = max(np.max(np.abs(A.values)) if A.nnz else 0.0, 1e-300)
    diff = np.abs(assembled.to_dense() - A.to_dense()).max()
    if diff > 1e-10 * scale:
        raise ValueError(
            f"element matrices do not assemble to the global matrix (max deviation {diff:.3e})"
        )


def _split_by_node_assignment(A, b, assign, n_parts):
    n = A.n_rows
    if np.any((assign < 0) | (assign >= n_parts)):
        raise ValueError("node assignment contains out-of-range part ids")
    # sharers: home part plus the parts of coupled nodes across the cut
    node_parts = [{int(assign[v])} for v in range(n)]
    rows = A.nnz_rows()
    off = rows != A.col_idx
    ei, ej = rows[off], A.col_idx[off]
    cross = assign[ei] != assign[ej]
    for i, j in zip(ei[cross], ej[cross]):
        node_parts[int(i)].add(int(assign[j]))
        node_parts[int(j)].add(int(assign[i]))
    part_nodes = [
        np.array(sorted(v for v in range(n) if s in node_parts[v]), dtype=np.int64)
        for s in range(n_parts)
    ]
    interface = np.array([len(s) > 1 for s in node_parts])

    coo_acc: list[tuple[list, list, list]] = [([], [], []) for _ in range(n_parts)]

    def put(s, i, j, v):
        coo_acc[s][0].append(i)
        coo_acc[s][1].append(j)
        coo_acc[s][2].append(v)

    for k in range(A.nnz):
        i, j, v = int(rows[k]), int(A.col_idx[k]), float(A.values[k])
        if i == j:
            sharers = node_parts[i]
            if len(sharers) == 1:
                put(next(iter(sharers)), i, j, v)
            else:
                share = v / len(sharers)
                for s in sharers:
                    put(s, i, j, share)
        elif interface[i] and interface[j]:
            common = node_parts[i] & node_parts[j]
            share = v / len(common)
            for s in common:
                put(s, i, j, share)
        elif interface[i]:
            put(int(assign[j]), i, j, v)  # j interior: its home holds the row pair
        else:
            put(int(assign[i]), i, j, v)

    coo_per_part = [
        (
            np.array(ri, dtype=np.int64),
            np.array(ci, dtype=np.int64),
            np.array(vi, dtype=np.float64),
        )
        for ri, ci, vi in coo_acc
    ]
    rhs_per_part = []
    for s in range(n_parts):
        nodes_s = part_nodes[s]
        share = np.array([len(node_parts[g]) for g in nodes_s], dtype=np.float64)
        rhs_per_part.append((nodes_s, b[nodes_s] / share))
    return _finish_substructures(A, n_parts, part_nodes, node_parts, coo_per_part, rhs_per_part)
