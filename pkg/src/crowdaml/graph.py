"""Transaction graph data model, account grouping and label handling.

A :class:`TransactionGraph` is a directed multigraph of accounts (rows of a
feature matrix) and transactions (rows of an attribute matrix, each with a
source and destination account).  Account groups are sets of accounts; the
per-transaction group indicator marks transactions whose two endpoints lie
in the same group.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

ATTRIBUTE_COLUMNS = ("amount", "timestamp", "fee", "token")
# heavy-tailed columns are log-compressed before z-scoring
LOG_COLUMNS = ("amount", "fee")
UNKNOWN = -1


@dataclass(frozen=True, eq=False)
class TransactionGraph:
    """Accounts, attributed transactions and an incidence index.

    ``src``/``dst`` hold dense account indices, transaction ``i`` is row ``i``
    of ``attributes``.  ``account_ids`` and ``tx_ids`` keep the external ids.
    """

    account_features: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    attributes: np.ndarray
    account_ids: tuple = ()
    tx_ids: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n, m = len(self.account_features), len(self.src)
        if self.account_features.ndim != 2 or self.attributes.ndim != 2:
            raise DataError("features and attributes must be 2-d")
        if len(self.dst) != m or len(self.attributes) != m:
            raise DataError("src, dst and attributes disagree on transaction count")
        if m and (min(self.src.min(), self.dst.min()) < 0
                  or max(self.src.max(), self.dst.max()) >= n):
            raise DataError("transaction endpoint outside account range")
        if not self.account_ids:
            object.__setattr__(self, "account_ids", tuple(str(i) for i in range(n)))
        if not self.tx_ids:
            object.__setattr__(self, "tx_ids", tuple(str(i) for i in range(m)))
        for arr in (self.account_features, self.src, self.dst, self.attributes):
            arr.setflags(write=False)

    @classmethod
    def from_arrays(cls, account_features, src, dst, attributes, account_ids=(), tx_ids=()):
        return cls(
            np.asarray(account_features, dtype=np.float64).reshape(len(account_features), -1),
            np.asarray(src, dtype=np.int64),
            np.asarray(dst, dtype=np.int64),
            np.asarray(attributes, dtype=np.float64).reshape(len(src), -1),
            tuple(account_ids),
            tuple(tx_ids),
        )

    @property
    def num_accounts(self) -> int:
        return len(self.account_features)

    @property
    def num_transactions(self) -> int:
        return len(self.src)

    @property
    def incidence(self) -> list[np.ndarray]:
        """Per account, the sorted ids of transactions touching it (either direction)."""
        if "incidence" not in self._cache:
            ends = np.concatenate([self.src, self.dst])
            txs = np.concatenate([np.arange(self.num_transactions)] * 2)
            order = np.lexsort((txs, ends))
            ends, txs = ends[order], txs[order]
            bounds = np.searchsorted(ends, np.arange(self.num_accounts + 1))
            inc = [np.unique(txs[bounds[a]:bounds[a + 1]]) for a in range(self.num_accounts)]
            self._cache["incidence"] = inc
        return self._cache["incidence"]

    def neighbor_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique (account, neighbor) pairs, direction ignored.

        Each distinct neighbor counts once however many transactions link
        the pair.  Sorted by account then neighbor.
        """
        if "pairs" not in self._cache:
            a = np.concatenate([self.src, self.dst])
            b = np.concatenate([self.dst, self.src])
            pairs = np.unique(np.stack([a, b], axis=1), axis=0) if len(a) else np.zeros((0, 2), np.int64)
            self._cache["pairs"] = (pairs[:, 0].copy(), pairs[:, 1].copy())
        return self._cache["pairs"]

    def check_incidence(self) -> bool:
        """Round-trip the incidence index against the transaction list."""
        seen = np.zeros(self.num_transactions, dtype=np.int64)
        for acc, txs in enumerate(self.incidence):
            for t in txs:
                if acc not in (self.src[t], self.dst[t]):
                    return False
                seen[t] += 1
        expected = np.where(self.src == self.dst, 1, 2)
        return bool(np.array_equal(seen, expected))

    def subgraph(self, tx_index) -> tuple["TransactionGraph", np.ndarray]:
        """Edge-induced subgraph; returns it with the global account index."""
        tx_index = np.asarray(tx_index, dtype=np.int64)
        accounts = np.unique(np.concatenate([self.src[tx_index], self.dst[tx_index]]))
        remap = np.full(self.num_accounts, -1, dtype=np.int64)
        remap[accounts] = np.arange(len(accounts))
        sub = TransactionGraph(
            self.account_features[accounts].copy(),
            remap[self.src[tx_index]],
            remap[self.dst[tx_index]],
            self.attributes[tx_index].copy(),
            tuple(self.account_ids[a] for a in accounts),
            tuple(self.tx_ids[t] for t in tx_index),
        )
        return sub, accounts

    def standardized(self, fit_mask=None) -> "TransactionGraph":
        """Z-score account features and transaction attributes.

        Attribute statistics come from the rows selected by ``fit_mask``
        (all rows when omitted); constant columns map to zero.
        """
        return TransactionGraph(
            _zscore(self.account_features, None),
            self.src.copy(),
            self.dst.copy(),
            _zscore(self.attributes, fit_mask),
            self.account_ids,
            self.tx_ids,
        )


def _zscore(x: np.ndarray, fit_mask) -> np.ndarray:
    ref = x if fit_mask is None else x[np.asarray(fit_mask, dtype=bool)]
    if len(ref) == 0:
        ref = x
    mu = ref.mean(axis=0) if len(ref) else np.zeros(x.shape[1])
    sd = ref.std(axis=0) if len(ref) else np.ones(x.shape[1])
    out = np.zeros_like(x, dtype=np.float64)
    live = sd > 1e-12
    out[:, live] = (x[:, live] - mu[live]) / sd[live]
    return out


@dataclass(frozen=True)
class GroupPartition:
    groups: tuple[frozenset, ...]

    def __post_init__(self):
        seen = set()
        for g in self.groups:
            if seen & g:
                raise ValueError("groups overlap")
            seen |= g

    def __len__(self):
        return len(self.groups)

    def __iter__(self):
        return iter(self.groups)

    def sizes(self) -> list[int]:
        return [len(g) for g in self.groups]

    def membership(self) -> dict:
        return {acc: j for j, g in enumerate(self.groups) for acc in g}

    def canonical(self) -> frozenset:
        return frozenset(self.groups)


@dataclass(frozen=True)
class GroupVector:
    bits: np.ndarray
    degenerate: bool


@dataclass(frozen=True)
class LabelSet:
    """Laundering labels (1, 0 or ``UNKNOWN``) with train/test masks."""

    laundering: np.ndarray
    train_mask: np.ndarray
    test_mask: np.ndarray

    def __post_init__(self):
        if np.any(self.train_mask & self.test_mask):
            raise ValueError("train and test masks overlap")
        if np.any(self.laundering[self.train_mask] == UNKNOWN):
            raise ValueError("training mask covers unlabeled transactions")

    @classmethod
    def unsplit(cls, laundering) -> "LabelSet":
        lab = np.asarray(laundering, dtype=np.int64)
        empty = np.zeros(len(lab), dtype=bool)
        return cls(lab, empty, empty.copy())

    def class_counts(self, mask) -> tuple[int, int]:
        y = self.laundering[mask]
        return int(np.sum(y == 0)), int(np.sum(y == 1))


class _UnionFind:
    def __init__(self):
        self.parent = {}
        self.rank = {}

    def find(self, x):
        parent = self.parent
        if x not in parent:
            parent[x] = x
            self.rank[x] = 0
            return x
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1


def weakly_connected_components(relation_edges) -> GroupPartition:
    """Group accounts by connectivity of an undirected relation.

    Accounts that appear only in self-relations stay singletons and are
    dropped, as are accounts not mentioned at all.
    """
    uf = _UnionFind()
    for a, b in relation_edges:
        uf.union(a, b)
    comps: dict = {}
    for x in uf.parent:
        comps.setdefault(uf.find(x), set()).add(x)
    groups = [frozenset(c) for c in comps.values() if len(c) >= 2]
    groups.sort(key=lambda g: (-len(g), min(map(repr, g))))
    return GroupPartition(tuple(groups))


def build_group_vector(graph: TransactionGraph, partition: GroupPartition) -> GroupVector:
    """Mark transactions with both endpoints inside one group.

    Group members may be given as dense indices or external account ids.
    """
    label = np.full(graph.num_accounts, -1, dtype=np.int64)
    index = {aid: i for i, aid in enumerate(graph.account_ids)}
    for j, group in enumerate(partition):
        for acc in group:
            i = acc if isinstance(acc, (int, np.integer)) else index.get(acc)
            if i is None or not 0 <= i < graph.num_accounts:
                raise DataError(f"group member {acc!r} is not an account of the graph")
            label[i] = j
    ls, ld = label[graph.src], label[graph.dst]
    bits = ((ls >= 0) & (ls == ld)).astype(np.int64)
    bits.setflags(write=False)
    return GroupVector(bits, bool(len(bits) and bits.min() == 1))


def split_labels(labels: LabelSet, train_ratio: float, seed: int) -> LabelSet:
    """Stratified train/test split of the labeled transactions.

    Each class contributes ``round(train_ratio * size)`` training entries;
    every other labeled transaction goes to the test mask.
    """
    if not 0 < train_ratio <= 1:
        raise ConfigError(f"train_ratio must lie in (0, 1], got {train_ratio}")
    y = labels.laundering
    rng = np.random.default_rng(seed)
    train = np.zeros(len(y), dtype=bool)
    for cls in (0, 1):
        members = np.flatnonzero(y == cls)
        if len(members) == 0:
            raise DataError(f"no labeled transactions of class {cls}")
        take = int(np.floor(train_ratio * len(members) + 0.5))
        train[rng.permutation(members)[:take]] = True
    test = (y != UNKNOWN) & ~train
    return LabelSet(y, train, test)


@dataclass(frozen=True)
class SubgraphView:
    """A batch: local graph, global ids of its transactions and accounts,
    and local indices of the transactions that are loss targets."""

    graph: TransactionGraph
    tx_index: np.ndarray
    account_index: np.ndarray
    targets: np.ndarray


def sample_subgraph_batches(graph: TransactionGraph, batch_count: int, seed: int,
                            hops: int = 2) -> list[SubgraphView]:
    """Split transactions into ``batch_count`` random chunks with context.

    Each chunk is closed over every transaction within ``hops`` account hops
    of its endpoints, so a ``hops``-layer encoder sees the same neighborhoods
    for target transactions as on the full graph.
    """
    m = graph.num_transactions
    if batch_count < 1:
        raise ConfigError("batch_count must be at least 1")
    if batch_count > m:
        raise ConfigError(f"batch_count {batch_count} exceeds transaction count {m}")
    if batch_count == 1:
        return [SubgraphView(graph, np.arange(m), np.arange(graph.num_accounts), np.arange(m))]
    perm = np.random.default_rng(seed).permutation(m)
    views = []
    inc = graph.incidence
    for chunk in np.array_split(perm, batch_count):
        chunk = np.sort(chunk)
        frontier = np.unique(np.concatenate([graph.src[chunk], graph.dst[chunk]]))
        accounts = set(frontier.tolist())
        txs = set(chunk.tolist())
        for _ in range(hops):
            nxt = set()
            for a in frontier:
                for t in inc[a]:
                    t = int(t)
                    if t not in txs:
                        txs.add(t)
                    for b in (int(graph.src[t]), int(graph.dst[t])):
                        if b not in accounts:
                            nxt.add(b)
            accounts |= nxt
            frontier = np.fromiter(nxt, dtype=np.int64)
        tx_index = np.array(sorted(txs), dtype=np.int64)
        sub, acc_index = graph.subgraph(tx_index)
        targets = np.searchsorted(tx_index, chunk)
        views.append(SubgraphView(sub, tx_index, acc_index, targets))
    return views


# --- CSV interfaces -------------------------------------------------------

def _read_rows(path, required):
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: missing header row")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        # row numbers count the header as row 1
        return reader.fieldnames, [(n, row) for n, row in enumerate(reader, start=2)]


def _float(value, path, rownum, col):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise DataError(f"{path}: row {rownum}: column {col!r} is not numeric: {value!r}") from None


def read_graph(nodes_path, edges_path) -> TransactionGraph:
    """Parse ``nodes.csv`` and ``edges.csv`` without standardizing."""
    fields, rows = _read_rows(nodes_path, ["account_id"])
    feat_cols = [c for c in fields if c != "account_id"]
    ids, feats, index = [], [], {}
    for n, row in rows:
        aid = row["account_id"]
        if aid in index:
            raise DataError(f"{nodes_path}: row {n}: duplicate account id {aid!r}")
        index[aid] = len(ids)
        ids.append(aid)
        feats.append([_float(row[c], nodes_path, n, c) for c in feat_cols])

    _, rows = _read_rows(edges_path, ["tx_id", "src", "dst", *ATTRIBUTE_COLUMNS])
    tx_ids, src, dst, attrs, seen = [], [], [], [], set()
    for n, row in rows:
        tid = row["tx_id"]
        if tid in seen:
            raise DataError(f"{edges_path}: row {n}: duplicate transaction id {tid!r}")
        seen.add(tid)
        for end in ("src", "dst"):
            if row[end] not in index:
                raise DataError(f"{edges_path}: row {n}: {end} references unknown account {row[end]!r}")
        tx_ids.append(tid)
        src.append(index[row["src"]])
        dst.append(index[row["dst"]])
        attrs.append([_float(row[c], edges_path, n, c) for c in ATTRIBUTE_COLUMNS])

    feats = np.asarray(feats, dtype=np.float64).reshape(len(ids), len(feat_cols))
    attrs = np.asarray(attrs, dtype=np.float64).reshape(len(tx_ids), len(ATTRIBUTE_COLUMNS))
    return TransactionGraph.from_arrays(feats, src, dst, compress_attributes(attrs), ids, tx_ids)


def compress_attributes(raw: np.ndarray) -> np.ndarray:
    """Signed ``log1p`` on the heavy-tailed attribute columns."""
    out = np.array(raw, dtype=np.float64)
    for j, col in enumerate(ATTRIBUTE_COLUMNS):
        if col in LOG_COLUMNS:
            out[:, j] = np.sign(out[:, j]) * np.log1p(np.abs(out[:, j]))
    return out


def load_graph(nodes_path, edges_path, fit_mask=None) -> TransactionGraph:
    """Read and standardize a transaction graph from CSV files."""
    return read_graph(nodes_path, edges_path).standardized(fit_mask)


def load_labels(labels_path, graph: TransactionGraph) -> LabelSet:
    _, rows = _read_rows(labels_path, ["tx_id", "label"])
    index = {tid: i for i, tid in enumerate(graph.tx_ids)}
    y = np.full(graph.num_transactions, UNKNOWN, dtype=np.int64)
    for n, row in rows:
        tid = row["tx_id"]
        if tid not in index:
            raise DataError(f"{labels_path}: row {n}: unknown transaction id {tid!r}")
        if row["label"] not in ("0", "1"):
            raise DataError(f"{labels_path}: row {n}: label must be 0 or 1, got {row['label']!r}")
        y[index[tid]] = int(row["label"])
    return LabelSet.unsplit(y)


def load_relation_edges(groups_path, graph: TransactionGraph | None = None) -> list[tuple[str, str]]:
    _, rows = _read_rows(groups_path, ["account_a", "account_b"])
    known = set(graph.account_ids) if graph is not None else None
    pairs = []
    for n, row in rows:
        a, b = row["account_a"], row["account_b"]
        if known is not None and (a not in known or b not in known):
            raise DataError(f"{groups_path}: row {n}: relation references unknown account")
        pairs.append((a, b))
    return pairs


def write_graph_csv(out_dir, graph: TransactionGraph, raw_attributes: np.ndarray,
                    labels: np.ndarray, relation_edges=()) -> dict[str, Path]:
    """Write nodes/edges/labels/groups CSVs; ``raw_attributes`` are unscaled."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {k: out_dir / f"{k}.csv" for k in ("nodes", "edges", "labels", "groups")}
    nf = graph.account_features.shape[1]
    with paths["nodes"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["account_id", *(f"f{j}" for j in range(nf))])
        for aid, row in zip(graph.account_ids, graph.account_features):
            w.writerow([aid, *(repr(float(v)) for v in row)])
    with paths["edges"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tx_id", "src", "dst", *ATTRIBUTE_COLUMNS])
        for i, tid in enumerate(graph.tx_ids):
            amount, ts, fee, token = raw_attributes[i]
            w.writerow([tid, graph.account_ids[graph.src[i]], graph.account_ids[graph.dst[i]],
                        repr(float(amount)), repr(float(ts)), repr(float(fee)), int(token)])
    with paths["labels"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tx_id", "label"])
        for tid, y in zip(graph.tx_ids, labels):
            if y != UNKNOWN:
                w.writerow([tid, int(y)])
    with paths["groups"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["account_a", "account_b"])
        for a, b in relation_edges:
            w.writerow([a, b])
    return paths
