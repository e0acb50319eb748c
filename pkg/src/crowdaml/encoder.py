"""Shared multi-level transaction encoder.

Each layer updates three states:

* account embeddings ``A`` with a GIN step, ``perceptron((1 + eps) * A + M)``,
  where ``M`` is the mean of linearly transformed neighbor embeddings;
* transaction attribute embeddings ``W`` from ``[W_prev || T]``;
* fused transaction embeddings ``T`` from ``[T || W || A[src] || A[dst]]``.

Layer-0 states are learned linear lifts of the raw account features and
transaction attributes, and ``T`` starts at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import TransactionGraph


def perceptron_params(prefix: str, d_in: int, d_hidden: int, d_out: int, seed: int) -> dict[str, Tensor]:
    return {
        f"{prefix}.w1": ad.init_params((d_in, d_hidden), seed),
        f"{prefix}.b1": ad.init_params((d_hidden,), seed, bias=True),
        f"{prefix}.w2": ad.init_params((d_hidden, d_out), seed + 1),
        f"{prefix}.b2": ad.init_params((d_out,), seed, bias=True),
    }


def perceptron(x: Tensor, params: dict, prefix: str, out_relu: bool = True) -> Tensor:
    """Two linear layers with ReLU in between (and after, unless ``out_relu`` is off)."""
    h = ad.relu(ad.add(ad.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    out = ad.add(ad.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])
    return ad.relu(out) if out_relu else out


def linear(x: Tensor, params: dict, prefix: str) -> Tensor:
    out = ad.matmul(x, params[f"{prefix}.w"])
    if f"{prefix}.b" in params:
        out = ad.add(out, params[f"{prefix}.b"])
    return out


@dataclass
class EncoderParams:
    """Learnable encoder weights keyed by name, plus the layout they imply."""

    tensors: dict[str, Tensor]
    layers: int
    dim: int

    @classmethod
    def init(cls, account_dim: int, attr_dim: int, dim: int = 64, layers: int = 2,
             seed: int = 0) -> "EncoderParams":
        # every tensor gets its own seed so adding a layer does not reshuffle the rest
        seeds = iter(range(seed * 1000 + 1, seed * 1000 + 1000, 2))
        t = {
            "lift_a.w": ad.init_params((account_dim, dim), next(seeds)),
            "lift_a.b": ad.init_params((dim,), 0, bias=True),
            "lift_w.w": ad.init_params((attr_dim, dim), next(seeds)),
            "lift_w.b": ad.init_params((dim,), 0, bias=True),
        }
        for k in range(1, layers + 1):
            t[f"l{k}.msg.w"] = ad.init_params((dim, dim), next(seeds))
            t[f"l{k}.eps"] = Tensor(np.zeros(1), requires_grad=True)
            t.update(perceptron_params(f"l{k}.acc", dim, dim, dim, next(seeds)))
            t.update(perceptron_params(f"l{k}.attr", 2 * dim, dim, dim, next(seeds)))
            t.update(perceptron_params(f"l{k}.fuse", 4 * dim, dim, dim, next(seeds)))
        return cls(t, layers, dim)


def aggregate_neighbor_messages(a_prev: Tensor, graph: TransactionGraph, msg_weight: Tensor | None) -> Tensor:
    """Per-account mean of ``a_prev[neighbor] @ msg_weight``; isolated accounts get zeros.

    ``msg_weight=None`` means the identity transform.
    """
    target, source = graph.neighbor_pairs()
    h = a_prev if msg_weight is None else ad.matmul(a_prev, msg_weight)
    return ad.scatter_mean(ad.gather(h, source), target, graph.num_accounts)


def update_account_embedding(a_prev: Tensor, message: Tensor, params: dict, prefix: str,
                             eps: Tensor) -> Tensor:
    one = Tensor(np.ones(1))
    mixed = ad.add(ad.mul(a_prev, ad.add(one, eps)), message)
    return perceptron(mixed, params, prefix)


def update_attribute_embedding(w_prev: Tensor, t_cur: Tensor, params: dict, prefix: str) -> Tensor:
    return perceptron(ad.concat([w_prev, t_cur]), params, prefix)


def gather_endpoint_embeddings(a_k: Tensor, graph: TransactionGraph) -> Tensor:
    """Row ``i`` is ``[A[src_i] || A[dst_i]]``; source always first."""
    return ad.concat([ad.gather(a_k, graph.src), ad.gather(a_k, graph.dst)])


def fuse_transaction_embedding(t_prev: Tensor, w_k: Tensor, endpoints: Tensor, params: dict,
                               prefix: str) -> Tensor:
    return perceptron(ad.concat([t_prev, w_k, endpoints]), params, prefix)


def encode(graph: TransactionGraph, params: EncoderParams, return_states: bool = False):
    """Fused transaction embeddings (``m x dim``) after all layers.

    With ``return_states`` the per-layer ``(A, W, T)`` triples come back too.
    """
    p = params.tensors
    a = linear(Tensor(graph.account_features), p, "lift_a")
    w = linear(Tensor(graph.attributes), p, "lift_w")
    t = Tensor(np.zeros((graph.num_transactions, params.dim)))
    states = [(a, w, t)]
    for k in range(1, params.layers + 1):
        msg = aggregate_neighbor_messages(a, graph, p[f"l{k}.msg.w"])
        a = update_account_embedding(a, msg, p, f"l{k}.acc", p[f"l{k}.eps"])
        # W sees the fused state entering this layer; T is updated after
        w = update_attribute_embedding(w, t, p, f"l{k}.attr")
        t = fuse_transaction_embedding(t, w, gather_endpoint_embeddings(a, graph), p, f"l{k}.fuse")
        states.append((a, w, t))
    return (t, states) if return_states else t
