"""Seeded synthetic laundering benchmarks and alternative group sources.

Two scenarios:

* crowdsourcing -- several gangs, each a pyramid of agents paying labor
  accounts, with labor shared across gangs and a large benign background.
  Delegation (resource lending) relations among gang members and among
  small benign clusters form the account groups.
* hacker -- one source fanning through a few layers of controlled
  accounts, no group information.

Delegation is a separate relation from transfers.  It shows up in the
transaction data only indirectly: delegated accounts usually pay no fee and
report received resources in their account features.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .graph import (
    UNKNOWN,
    GroupPartition,
    LabelSet,
    TransactionGraph,
    build_group_vector,
    compress_attributes,
    weakly_connected_components,
    write_graph_csv,
)

DAY = 86400.0
ACCOUNT_FEATURES = ("log_out_degree", "log_in_degree", "log_received_resources", "age_days", "log_balance")
TOKENS = (0, 1, 2)  # USDT, TRX, other


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    gang_count: int = 3
    agent_depth: int = 2
    agent_fanout: int = 3
    labor_per_agent: int = 8
    laundering_rounds: int = 2
    cross_gang_sharing: float = 0.1
    background_account_count: int = 600
    background_tx_rate: float = 2.0
    hub_count: int = 10
    hub_share: float = 0.3
    member_benign_rate: float = 12.0
    benign_cluster_count: int = 40
    benign_cluster_min: int = 3
    benign_cluster_max: int = 8
    benign_cluster_tx: float = 3.0
    delegation_coverage: float = 0.9
    fee_free_prob: float = 0.8
    amount_mu: float = 4.0
    amount_sigma: float = 1.5
    gang_amount_sigma: float = 0.4
    gang_active_share: float = 0.3
    benign_usdt_share: float = 0.6
    laundering_usdt_share: float = 1.0
    labor_age_days: float = 1500.0
    camouflage: float = 0.7
    resource_visibility: float = 0.85
    label_coverage: float = 0.05
    time_window_days: float = 30.0

    def __post_init__(self):
        counts = ("gang_count", "agent_depth", "agent_fanout", "labor_per_agent",
                  "laundering_rounds", "background_account_count", "benign_cluster_min")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        for name in ("cross_gang_sharing", "hub_share", "delegation_coverage", "fee_free_prob",
                     "gang_active_share", "benign_usdt_share", "laundering_usdt_share",
                     "camouflage", "resource_visibility", "label_coverage"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be a probability")
        if self.label_coverage == 0.0:
            raise ConfigError("label_coverage must be positive")
        if self.benign_cluster_max < self.benign_cluster_min:
            raise ConfigError("benign_cluster_max below benign_cluster_min")
        if self.background_tx_rate < 0 or self.member_benign_rate < 0 or self.benign_cluster_tx < 0:
            raise ConfigError("transaction rates must be non-negative")
        if self.hub_count < 0 or self.hub_count > self.background_account_count:
            raise ConfigError("hub_count must lie in [0, background_account_count]")

    def pyramid_edges(self) -> int:
        """Laundering transfers one gang emits per round without sharing."""
        f, d = self.agent_fanout, self.agent_depth
        return sum(f ** level for level in range(1, d + 1)) + f ** d * self.labor_per_agent


@dataclass(frozen=True)
class HackerConfig:
    seed: int = 0
    layer_count: int = 3
    width: int = 8
    background_account_count: int = 800
    background_tx_rate: float = 2.5
    amount_mu: float = 4.0
    amount_sigma: float = 1.5
    benign_usdt_share: float = 0.6
    time_window_days: float = 30.0

    def __post_init__(self):
        for name in ("layer_count", "width", "background_account_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")


@dataclass
class SyntheticDataset:
    """Generated graph (attributes log-compressed, not standardized) and ground truth.

    ``labels`` holds the observed annotations written to ``labels.csv``;
    ``truth`` labels every transaction.
    """

    graph: TransactionGraph
    labels: LabelSet
    partition: GroupPartition | None
    relation_edges: list[tuple[str, str]]
    raw_attributes: np.ndarray
    config: dict
    truth: np.ndarray
    gangs: list[frozenset] = field(default_factory=list)
    scenario: str = "crowdsourcing"

    def summary(self) -> dict:
        y = self.labels.laundering
        out = {
            "accounts": self.graph.num_accounts,
            "transactions": self.graph.num_transactions,
            "laundering": int(np.sum(self.truth == 1)),
            "benign": int(np.sum(self.truth == 0)),
            "labeled_laundering": int(np.sum(y == 1)),
            "labeled_benign": int(np.sum(y == 0)),
            "relation_edges": len(self.relation_edges),
        }
        if self.partition is not None:
            bits = build_group_vector(self.graph, self.partition).bits
            out["groups"] = len(self.partition)
            out["intra_group_transactions"] = int(bits.sum())
        return out

    def write(self, out_dir) -> dict[str, Path]:
        paths = write_graph_csv(out_dir, self.graph, self.raw_attributes,
                                self.labels.laundering, self.relation_edges)
        manifest = {
            "scenario": self.scenario,
            "config": self.config,
            "seed": self.config["seed"],
            "summary": self.summary(),
            "account_features": list(ACCOUNT_FEATURES),
            "files": {k: p.name for k, p in paths.items()},
        }
        paths["manifest"] = Path(out_dir) / "manifest.json"
        paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return paths


class _Ledger:
    """Accumulates transactions and account metadata during generation."""

    def __init__(self, rng):
        self.rng = rng
        self.ids: list[str] = []
        self.kind: list[str] = []
        self.src, self.dst, self.amount, self.time, self.token, self.label = [], [], [], [], [], []

    def account(self, name, kind):
        self.ids.append(name)
        self.kind.append(kind)
        return len(self.ids) - 1

    def tx(self, s, d, amount, t, token, label):
        self.src.append(s)
        self.dst.append(d)
        self.amount.append(amount)
        self.time.append(t)
        self.token.append(token)
        self.label.append(label)


def _benign_amount(rng, cfg, n=None):
    return rng.lognormal(cfg.amount_mu, cfg.amount_sigma, size=n)


def _token(rng, usdt_share):
    if rng.random() < usdt_share:
        return 0
    return 1 if rng.random() < 0.75 else 2


def _finish(led: _Ledger, delegated: np.ndarray, fee_free_prob: float, labor_age: float,
            resource_visibility: float = 0.85):
    """Fees, account features, shuffling and graph assembly."""
    rng = led.rng
    n, m = len(led.ids), len(led.src)
    src = np.asarray(led.src, dtype=np.int64)
    dst = np.asarray(led.dst, dtype=np.int64)
    # delegated senders usually burn borrowed resources instead of paying
    free = np.where(delegated[src], rng.random(m) < fee_free_prob, rng.random(m) < 0.1)
    fee = np.where(free, 0.0, np.round(rng.lognormal(1.0, 0.5, size=m), 4))

    kind = np.asarray(led.kind)
    age = np.where(kind == "labor", rng.uniform(1, labor_age, n),
                   np.where(kind == "agent", rng.uniform(30, 400, n), rng.uniform(1, 1500, n)))
    resources = np.where(delegated & (rng.random(n) < resource_visibility), rng.lognormal(8.0, 1.0, n),
                         np.where(rng.random(n) < 0.05, rng.lognormal(6.0, 1.0, n), 0.0))
    feats = np.stack([
        np.log1p(np.bincount(src, minlength=n)),
        np.log1p(np.bincount(dst, minlength=n)),
        np.round(np.log1p(resources), 3),
        np.round(age, 1),
        np.round(rng.normal(5.0, 2.0, n), 3),
    ], axis=1)

    acc_perm = rng.permutation(n)
    inv = np.empty(n, dtype=np.int64)
    inv[acc_perm] = np.arange(n)
    order = np.lexsort((rng.random(m), np.asarray(led.time)))
    raw = np.stack([
        np.round(np.asarray(led.amount, dtype=np.float64), 2)[order],
        np.round(np.asarray(led.time, dtype=np.float64), 0)[order],
        fee[order],
        np.asarray(led.token, dtype=np.float64)[order],
    ], axis=1)
    ids = [led.ids[i] for i in acc_perm]
    tx_ids = [f"t{i:06d}" for i in range(m)]
    graph = TransactionGraph.from_arrays(feats[acc_perm], inv[src[order]], inv[dst[order]],
                                         compress_attributes(raw), ids, tx_ids)
    return graph, np.asarray(led.label, dtype=np.int64)[order], raw


def _observe(rng, truth, coverage):
    """Hide all but a ``coverage`` fraction of labels, as sparse annotations would."""
    seen = truth.copy()
    if coverage < 1.0:
        seen[rng.random(len(truth)) >= coverage] = UNKNOWN
    return LabelSet.unsplit(seen)


def _laundering_tx(led, cfg, s, d, mu, start, span, window):
    rng = led.rng
    if rng.random() < cfg.camouflage:
        # mimics ordinary payments entirely
        led.tx(s, d, _benign_amount(rng, cfg), rng.uniform(0, window), _token(rng, cfg.benign_usdt_share), 1)
    else:
        led.tx(s, d, rng.lognormal(mu, cfg.gang_amount_sigma), start + rng.uniform(0, span),
               _token(rng, cfg.laundering_usdt_share), 1)


def gen_crowdsourcing(config: SynthConfig) -> SyntheticDataset:
    """Multi-gang pyramid laundering over a benign background."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    led = _Ledger(rng)
    window = cfg.time_window_days * DAY

    background = [led.account(f"b{i}", "background") for i in range(cfg.background_account_count)]
    hubs = background[:cfg.hub_count]
    gangs, styles, leaves, labor_of = [], [], [], []
    relations: list[tuple[int, int]] = []
    for g in range(cfg.gang_count):
        boss = led.account(f"g{g}_a0", "agent")
        members, tree, level, leaf_agents = [boss], [], [boss], []
        for depth in range(1, cfg.agent_depth + 1):
            nxt = []
            for parent in level:
                for c in range(cfg.agent_fanout):
                    child = led.account(f"g{g}_a{depth}_{len(nxt)}", "agent")
                    tree.append((parent, child))
                    nxt.append(child)
            members += nxt
            level = nxt
        leaf_agents = level
        labor = []
        for a_i, agent in enumerate(leaf_agents):
            for j in range(cfg.labor_per_agent):
                worker = led.account(f"g{g}_l{a_i}_{j}", "labor")
                tree.append((agent, worker))
                labor.append(worker)
        members += labor
        gangs.append(members)
        leaves.append(leaf_agents)
        labor_of.append(labor)
        # per-gang laundering style: its own amount band and active period
        mu = rng.uniform(cfg.amount_mu - 1.0, cfg.amount_mu + 1.5)
        span = cfg.gang_active_share * window
        start = rng.uniform(0, window - span)
        for _ in range(cfg.laundering_rounds):
            for s, d in tree:
                _laundering_tx(led, cfg, s, d, mu, start, span, window)
        for s, d in tree:
            if rng.random() < cfg.delegation_coverage:
                relations.append((s, d))
        styles.append((mu, start, span))

    # shared labor: a worker also runs transfers for another gang's agent
    if cfg.gang_count >= 2:
        for g in range(cfg.gang_count):
            for worker in labor_of[g]:
                if rng.random() < cfg.cross_gang_sharing:
                    h = int(rng.choice([x for x in range(cfg.gang_count) if x != g]))
                    agent = leaves[h][int(rng.integers(len(leaves[h])))]
                    mu, start, span = styles[h]
                    for _ in range(cfg.laundering_rounds):
                        _laundering_tx(led, cfg, agent, worker, mu, start, span, window)
                    if rng.random() < cfg.delegation_coverage:
                        relations.append((agent, worker))

    # benign delegation clusters among non-hub background accounts
    pool = background[cfg.hub_count:]
    chosen = rng.permutation(pool)
    cursor = 0
    for _ in range(cfg.benign_cluster_count):
        size = int(rng.integers(cfg.benign_cluster_min, cfg.benign_cluster_max + 1))
        if cursor + size > len(chosen):
            break
        cluster = [int(x) for x in chosen[cursor:cursor + size]]
        cursor += size
        provider = cluster[0]
        relations += [(provider, c) for c in cluster[1:]]
        for _ in range(int(round(cfg.benign_cluster_tx * size))):
            s, d = rng.choice(cluster, size=2, replace=False)
            led.tx(int(s), int(d), _benign_amount(rng, cfg), rng.uniform(0, window), _token(rng, cfg.benign_usdt_share), 0)

    # background commerce, a share of it through hubs (exchanges)
    n_bg = int(round(cfg.background_tx_rate * len(background)))
    for _ in range(n_bg):
        if hubs and rng.random() < cfg.hub_share:
            s, d = int(rng.choice(background)), int(rng.choice(hubs))
            if rng.random() < 0.5:
                s, d = d, s
        else:
            s, d = rng.choice(background, size=2, replace=False)
        led.tx(int(s), int(d), _benign_amount(rng, cfg), rng.uniform(0, window), _token(rng, cfg.benign_usdt_share), 0)

    # gang members are ordinary users too; benign traffic never links two members
    member_ids = [m for members in gangs for m in members]
    for member in sorted(set(member_ids)):
        for _ in range(rng.poisson(cfg.member_benign_rate)):
            other = int(rng.choice(hubs)) if hubs and rng.random() < 0.5 else int(rng.choice(background))
            s, d = (member, other) if rng.random() < 0.5 else (other, member)
            led.tx(s, d, _benign_amount(rng, cfg), rng.uniform(0, window), _token(rng, cfg.benign_usdt_share), 0)

    delegated = np.zeros(len(led.ids), dtype=bool)
    for a, b in relations:
        delegated[b] = True
        delegated[a] = True
    graph, truth, raw = _finish(led, delegated, cfg.fee_free_prob, cfg.labor_age_days,
                                cfg.resource_visibility)
    labels = _observe(rng, truth, cfg.label_coverage)
    rel_ids = [(led.ids[a], led.ids[b]) for a, b in relations]
    partition = weakly_connected_components(rel_ids)
    if build_group_vector(graph, partition).degenerate:
        raise ConfigError("configuration puts every transaction inside a group")
    gang_sets = [frozenset(led.ids[m] for m in members) for members in gangs]
    return SyntheticDataset(graph, labels, partition, rel_ids, raw, asdict(cfg), truth, gang_sets,
                            "crowdsourcing")


def gen_hacker(config: HackerConfig) -> SyntheticDataset:
    """Layered single-source laundering with no group information."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    led = _Ledger(rng)
    window = cfg.time_window_days * DAY
    background = [led.account(f"b{i}", "background") for i in range(cfg.background_account_count)]

    source = led.account("h_src", "agent")
    layers = [[source]]
    for depth in range(1, cfg.layer_count + 1):
        layers.append([led.account(f"h{depth}_{j}", "agent") for j in range(cfg.width)])
    mu = rng.uniform(cfg.amount_mu + 1.0, cfg.amount_mu + 3.0)
    t = rng.uniform(0, 0.5 * window)
    for depth in range(1, cfg.layer_count + 1):
        prev, cur = layers[depth - 1], layers[depth]
        t += rng.uniform(0.01, 0.05) * window
        # every account in the layer is fed by at least one account of the previous layer
        for j, acc in enumerate(cur):
            led.tx(prev[j % len(prev)], acc, rng.lognormal(mu - depth * 0.3, 0.3), t + rng.uniform(0, DAY), 0, 1)
        for s in prev:
            for d in cur:
                if rng.random() < 0.3 and not (prev.index(s) == cur.index(d) % len(prev)):
                    led.tx(s, d, rng.lognormal(mu - depth * 0.3, 0.3), t + rng.uniform(0, DAY), 0, 1)

    n_bg = int(round(cfg.background_tx_rate * len(background)))
    for _ in range(n_bg):
        s, d = rng.choice(background, size=2, replace=False)
        led.tx(int(s), int(d), _benign_amount(rng, cfg), rng.uniform(0, window), _token(rng, cfg.benign_usdt_share), 0)
    # sinks cash out through ordinary-looking transfers
    for acc in layers[-1]:
        led.tx(acc, int(rng.choice(background)), _benign_amount(rng, cfg), rng.uniform(0, window), 0, 0)

    graph, truth, raw = _finish(led, np.zeros(len(led.ids), dtype=bool), 0.0, 120.0)
    labels = LabelSet.unsplit(truth)
    members = frozenset(led.ids[a] for layer in layers for a in layer)
    return SyntheticDataset(graph, labels, None, [], raw, asdict(cfg), truth, [members], "hacker")


# --- modularity communities ---------------------------------------------

def _undirected_weights(n, src, dst):
    adj = [dict() for _ in range(n)]
    for s, d in zip(src, dst):
        s, d = int(s), int(d)
        # a self-loop touches its node twice
        adj[s][d] = adj[s].get(d, 0.0) + (2.0 if s == d else 1.0)
        if s != d:
            adj[d][s] = adj[d].get(s, 0.0) + 1.0
    return adj


def modularity(adj, community, resolution=1.0) -> float:
    """Newman modularity of a node -> community assignment on a weighted adjacency."""
    two_m = sum(sum(nb.values()) for nb in adj)
    if two_m == 0:
        return 0.0
    deg = [sum(nb.values()) for nb in adj]
    inside, tot = {}, {}
    for u, nb in enumerate(adj):
        c = community[u]
        tot[c] = tot.get(c, 0.0) + deg[u]
        for v, w in nb.items():
            if community[v] == c:
                inside[c] = inside.get(c, 0.0) + w
    return sum(inside.get(c, 0.0) / two_m - resolution * (tot[c] / two_m) ** 2 for c in tot)


def _local_moving(adj, rng, resolution):
    n = len(adj)
    deg = [sum(nb.values()) for nb in adj]
    two_m = sum(deg)
    comm = list(range(n))
    tot = list(deg)
    moved_any = False
    improved = True
    while improved:
        improved = False
        for u in rng.permutation(n):
            u = int(u)
            cu = comm[u]
            links = {}
            for v, w in adj[u].items():
                if v != u:
                    links[comm[v]] = links.get(comm[v], 0.0) + w
            tot[cu] -= deg[u]
            best, best_gain = cu, links.get(cu, 0.0) - resolution * tot[cu] * deg[u] / two_m
            for c in sorted(links):
                gain = links[c] - resolution * tot[c] * deg[u] / two_m
                if gain > best_gain + 1e-12:
                    best, best_gain = c, gain
            tot[best] += deg[u]
            if best != cu:
                comm[u] = best
                improved = moved_any = True
    return comm, moved_any


def louvain(adj, seed=0, resolution=1.0) -> list[int]:
    """Multi-level greedy modularity optimization; returns a community label per node."""
    rng = np.random.default_rng(seed)
    node_comm = list(range(len(adj)))
    while True:
        comm, moved = _local_moving(adj, rng, resolution)
        if not moved:
            break
        relabel = {c: i for i, c in enumerate(sorted(set(comm)))}
        comm = [relabel[c] for c in comm]
        node_comm = [comm[c] for c in node_comm]
        agg = [dict() for _ in range(len(relabel))]
        for u, nb in enumerate(adj):
            cu = comm[u]
            for v, w in nb.items():
                cv = comm[v]
                agg[cu][cv] = agg[cu].get(cv, 0.0) + w
        adj = agg
    return node_comm


def derive_groups_modularity(graph: TransactionGraph, seed: int = 0, resolution: float = 1.0) -> GroupPartition:
    """Louvain communities of the undirected projection, singletons dropped."""
    if graph.num_accounts == 0:
        raise ConfigError("cannot derive groups from an empty graph")
    adj = _undirected_weights(graph.num_accounts, graph.src, graph.dst)
    labels = louvain(adj, seed, resolution)
    groups = {}
    for node, c in enumerate(labels):
        groups.setdefault(c, set()).add(graph.account_ids[node])
    kept = sorted((frozenset(g) for g in groups.values() if len(g) >= 2),
                  key=lambda g: (-len(g), min(g)))
    return GroupPartition(tuple(kept))


def filter_groups(partition: GroupPartition, min_size: int = 2, max_size: int = 10000) -> GroupPartition:
    return GroupPartition(tuple(g for g in partition if min_size <= len(g) <= max_size))
