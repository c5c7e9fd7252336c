"""Matrix market files, vector files, and partition bundle directories.

The matrix market coordinate format is the exchange surface for matrices:
header ``%%MatrixMarket matrix coordinate real|integer general|symmetric``,
1-based indices in the file, 0-based in memory.  Symmetric input stores
the lower triangle and is expanded to full storage on read.

A partition bundle is a directory holding everything one solver rank
needs to start independently: a manifest, and per rank a local matrix
(matrix market), a local right-hand side (vector file), and a metadata
file with maps and dependency or interface lists.  Values are written
with 17 significant digits so doubles round-trip exactly.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .partition import BandRowPartition, DependencyLists, Substructure
from .sparse import CsrMatrix

FORMAT_VERSION = 1

STRATEGY_BANDROW = "bandrow-naive"
STRATEGY_BANDROW_SPARSITY = "bandrow-sparsity"
STRATEGY_SUBSTRUCTURING = "substructuring"
STRATEGIES = (STRATEGY_BANDROW, STRATEGY_BANDROW_SPARSITY, STRATEGY_SUBSTRUCTURING)


class MatrixMarketError(ValueError):
    pass


class BundleFormatError(ValueError):
    pass


# -- matrix market -----------------------------------------------------------


def read_matrix_market(path) -> CsrMatrix:
    """Parse a coordinate real/integer general/symmetric file into CSR."""
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("%%MatrixMarket"):
            raise MatrixMarketError(f"{path}: missing %%MatrixMarket header")
        tokens = header.split()
        if len(tokens) != 5:
            raise MatrixMarketError(f"{path}: malformed header: {header.strip()}")
        _, obj, fmt, fieldkind, symmetry = (t.lower() for t in tokens)
        if obj != "matrix" or fmt != "coordinate":
            raise MatrixMarketError(f"{path}: unsupported object/format {obj}/{fmt}")
        if fieldkind not in ("real", "integer"):
            raise MatrixMarketError(f"{path}: unsupported field {fieldkind}")
        if symmetry not in ("general", "symmetric"):
            raise MatrixMarketError(f"{path}: unsupported symmetry {symmetry}")
        size_line = None
        data_lines = []
        for line in fh:
            stripped = line.strip()
            if not stripped or stripped.startswith("%"):
                continue
            if size_line is None:
                size_line = stripped
            else:
                data_lines.append(stripped)
        if size_line is None:
            raise MatrixMarketError(f"{path}: missing size line")
    try:
        n_rows, n_cols, nnz = (int(t) for t in size_line.split())
    except ValueError as exc:
        raise MatrixMarketError(f"{path}: malformed size line: {size_line}") from exc
    if len(data_lines) != nnz:
        raise MatrixMarketError(
            f"{path}: declared {nnz} entries, found {len(data_lines)}"
        )
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    for k, entry in enumerate(data_lines):
        parts = entry.split()
        if len(parts) != 3:
            raise MatrixMarketError(f"{path}: malformed entry: {entry}")
        i, j = int(parts[0]), int(parts[1])
        if not (1 <= i <= n_rows) or not (1 <= j <= n_cols):
            raise MatrixMarketError(
                f"{path}: index ({i}, {j}) outside declared {n_rows}x{n_cols}"
            )
        rows[k], cols[k] = i - 1, j - 1
        vals[k] = float(parts[2])
    if symmetry == "symmetric":
        if n_rows != n_cols:
            raise MatrixMarketError(f"{path}: symmetric matrix must be square")
        if np.any(cols > rows):
            raise MatrixMarketError(
                f"{path}: symmetric file must store the lower triangle only"
            )
        strict = cols < rows
        r0, c0, v0 = rows, cols, vals
        rows = np.concatenate([r0, c0[strict]])
        cols = np.concatenate([c0, r0[strict]])
        vals = np.concatenate([v0, v0[strict]])
    return CsrMatrix.from_coo(n_rows, n_cols, rows, cols, vals)


def write_matrix_market(A: CsrMatrix, path) -> None:
    """Write coordinate real general; explicit zeros are preserved."""
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{A.n_rows} {A.n_cols} {A.nnz}\n")
        rows = A.nnz_rows()
        for i, j, v in zip(rows, A.col_idx, A.values):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def write_vector(x, path) -> None:
    x = np.asarray(x, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write(f"{x.size}\n")
        for v in x:
            fh.write(f"{v:.17g}\n")


def read_vector(path) -> np.ndarray:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty vector file")
    count = int(lines[0])
    if len(lines) - 1 != count:
        raise ValueError(f"{path}: declared {count} values, found {len(lines) - 1}")
    return np.array([float(v) for v in lines[1:]])


def write_elements(conn_elements, path, slots: int = 8) -> None:
    """Connectivity file: count line, then one element per line with
    ``slots`` node indices, -1 padding slots left by eliminated nodes."""
    with open(path, "w") as fh:
        fh.write(f"{len(conn_elements)}\n")
        for nodes in conn_elements:
            padded = list(nodes) + [-1] * (slots - len(nodes))
            fh.write(" ".join(str(int(v)) for v in padded) + "\n")


def read_elements(path) -> list[tuple[int, ...]]:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty element file")
    count = int(lines[0])
    if len(lines) - 1 != count:
        raise ValueError(f"{path}: declared {count} elements, found {len(lines) - 1}")
    elements = []
    for entry in lines[1:]:
        nodes = tuple(int(v) for v in entry.split() if int(v) >= 0)
        elements.append(nodes)
    return elements


# -- partition bundles ---------------------------------------------------------


class PartitionBundle:
    """Per-rank payloads of one strategy plus the bundle header fields."""

    def __init__(self, strategy, global_n, parts, deps=None):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        if strategy == STRATEGY_BANDROW_SPARSITY and deps is None:
            raise ValueError("sparsity-pattern bundle requires dependency lists")
        self.strategy = strategy
        self.global_n = int(global_n)
        self.parts = list(parts)
        self.deps = list(deps) if deps is not None else None
        self.n_ranks = len(self.parts)
        self.validate()

    def validate(self):
        """Owned global indices of all ranks must tile [0, global_n)."""
        if self.strategy in (STRATEGY_BANDROW, STRATEGY_BANDROW_SPARSITY):
            ranges = sorted((p.row_begin, p.row_end) for p in self.parts)
            cursor = 0
            for lo, hi in ranges:
                if lo != cursor or hi <= lo:
                    raise BundleFormatError("band ranges do not tile the row space")
                cursor = hi
            if cursor != self.global_n:
                raise BundleFormatError("band ranges do not cover all rows")
        else:
            owned = np.zeros(self.global_n, dtype=np.int64)
            seen = np.zeros(self.global_n, dtype=np.int64)
            for sub in self.parts:
                owned_nodes = sub.local_to_global[sub.owned_mask()]
                owned[owned_nodes] += 1
                seen[sub.local_to_global] += 1
            if np.any(owned != 1):
                raise BundleFormatError("interface ownership does not tile the nodes")
            if np.any(seen < 1):
                raise BundleFormatError("some node belongs to no substructure")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _rank_paths(directory, rank):
    stem = os.path.join(directory, f"rank_{rank:04d}")
    return stem + "_matrix.mtx", stem + "_rhs.txt", stem + "_meta.json"


def write_partition_bundle(bundle: PartitionBundle, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "strategy": bundle.strategy,
        "n_ranks": bundle.n_ranks,
        "global_n": bundle.global_n,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    for rank, part in enumerate(bundle.parts):
        mtx_path, rhs_path, meta_path = _rank_paths(directory, rank)
        write_matrix_market(part.local_matrix, mtx_path)
        write_vector(part.local_rhs, rhs_path)
        meta = {
            "rank": rank,
            "checksums": {"matrix": _sha256(mtx_path), "rhs": _sha256(rhs_path)},
        }
        if bundle.strategy in (STRATEGY_BANDROW, STRATEGY_BANDROW_SPARSITY):
            meta["row_begin"] = part.row_begin
            meta["row_end"] = part.row_end
            if bundle.strategy == STRATEGY_BANDROW_SPARSITY:
                dep = bundle.deps[rank]
                meta["send_lists"] = {str(q): [int(v) for v in lst] for q, lst in dep.send_lists.items()}
                meta["recv_lists"] = {str(q): [int(v) for v in lst] for q, lst in dep.recv_lists.items()}
                meta["ghost_map"] = {str(g): slot for g, slot in dep.ghost_map.items()}
        else:
            meta["local_to_global"] = [int(v) for v in part.local_to_global]
            meta["interior_count"] = part.interior_count
            meta["interface_count"] = part.interface_count
            meta["neighbors"] = {str(q): [int(v) for v in lst] for q, lst in part.neighbors.items()}
            meta["interface_ownership"] = [int(v) for v in part.interface_ownership]
        with open(meta_path, "w") as fh:
            json.dump(meta, fh, indent=2)
            fh.write("\n")


def read_partition_bundle(directory) -> PartitionBundle:
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise BundleFormatError(f"{directory}: missing manifest.json")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise BundleFormatError(
            f"{directory}: format version {version} not supported (expected {FORMAT_VERSION})"
        )
    strategy = manifest["strategy"]
    if strategy not in STRATEGIES:
        raise BundleFormatError(f"{directory}: unknown strategy {strategy!r}")
    n_ranks = int(manifest["n_ranks"])
    global_n = int(manifest["global_n"])
    parts = []
    deps = [] if strategy == STRATEGY_BANDROW_SPARSITY else None
    for rank in range(n_ranks):
        mtx_path, rhs_path, meta_path = _rank_paths(directory, rank)
        for p in (mtx_path, rhs_path, meta_path):
            if not os.path.exists(p):
                raise BundleFormatError(
                    f"{directory}: manifest declares {n_ranks} ranks but {os.path.basename(p)} is missing"
                )
        with open(meta_path) as fh:
            meta = json.load(fh)
        if meta.get("rank") != rank:
            raise BundleFormatError(f"{meta_path}: rank mismatch")
        checks = meta.get("checksums", {})
        if checks.get("matrix") != _sha256(mtx_path):
            raise BundleFormatError(f"{mtx_path}: checksum failure")
        if checks.get("rhs") != _sha256(rhs_path):
            raise BundleFormatError(f"{rhs_path}: checksum failure")
        local_matrix = read_matrix_market(mtx_path)
        local_rhs = read_vector(rhs_path)
        if strategy in (STRATEGY_BANDROW, STRATEGY_BANDROW_SPARSITY):
            part = BandRowPartition(
                rank=rank,
                row_begin=int(meta["row_begin"]),
                row_end=int(meta["row_end"]),
                local_matrix=local_matrix,
                local_rhs=local_rhs,
            )
            parts.append(part)
            if strategy == STRATEGY_BANDROW_SPARSITY:
                deps.append(
                    DependencyLists(
                        rank=rank,
                        send_lists={
                            int(q): np.array(lst, dtype=np.int64)
                            for q, lst in meta["send_lists"].items()
                        },
                        recv_lists={
                            int(q): np.array(lst, dtype=np.int64)
                            for q, lst in meta["recv_lists"].items()
                        },
                        ghost_map={int(g): int(s) for g, s in meta["ghost_map"].items()},
                    )
                )
        else:
            parts.append(
                Substructure(
                    rank=rank,
                    local_matrix=local_matrix,
                    local_to_global=np.array(meta["local_to_global"], dtype=np.int64),
                    interior_count=int(meta["interior_count"]),
                    interface_count=int(meta["interface_count"]),
                    neighbors={
                        int(q): np.array(lst, dtype=np.int64)
                        for q, lst in meta["neighbors"].items()
                    },
                    interface_ownership=np.array(meta["interface_ownership"], dtype=np.int64),
                    local_rhs=local_rhs,
                )
            )
    extra = os.path.join(directory, f"rank_{n_ranks:04d}_meta.json")
    if os.path.exists(extra):
        raise BundleFormatError(
            f"{directory}: more rank files than the manifest's {n_ranks} ranks"
        )
    return PartitionBundle(strategy, global_n, parts, deps)
