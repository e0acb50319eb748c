"""Shared classifier, joint losses and the batched training loop.

The classifier maps each fused transaction embedding to four logits.
Columns 0-1 score laundering (class 0/1), columns 2-3 score intra-group
membership (0/1); each pair is normalized by its own softmax.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .encoder import EncoderParams, encode, perceptron, perceptron_params
from .errors import ConfigError, DegenerateGroupError, NumericError
from .graph import GroupVector, LabelSet, TransactionGraph, sample_subgraph_batches

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    embed_dim: int = 64
    layers: int = 2
    lr: float = 0.006
    lam: float = 0.5
    epochs: int = 200
    batch_count: int = 1
    # None: inverse class frequency on the training mask
    class_weights: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lam must be non-negative, got {self.lam}")
        if self.class_weights is not None and min(self.class_weights) <= 0:
            raise ConfigError("class weights must be positive")
        if self.embed_dim < 1 or self.layers < 1 or self.epochs < 1:
            raise ConfigError("embed_dim, layers and epochs must be positive")


@dataclass
class ModelParams:
    encoder: EncoderParams
    classifier: dict[str, Tensor]

    @classmethod
    def init(cls, account_dim, attr_dim, dim=64, layers=2, seed=0) -> "ModelParams":
        enc = EncoderParams.init(account_dim, attr_dim, dim, layers, seed)
        return cls(enc, perceptron_params("cls", dim, dim, 4, seed * 1000 + 999))

    @property
    def tensors(self) -> dict[str, Tensor]:
        return {**self.encoder.tensors, **self.classifier}

    def layout(self) -> dict:
        return {"layers": self.encoder.layers, "dim": self.encoder.dim}

    def save(self, path, meta=None):
        ad.save_params(path, self.tensors, {**self.layout(), **(meta or {})})

    @classmethod
    def load(cls, path) -> tuple["ModelParams", dict]:
        tensors, meta = ad.load_params(path)
        enc = {k: v for k, v in tensors.items() if not k.startswith("cls.")}
        clf = {k: v for k, v in tensors.items() if k.startswith("cls.")}
        return cls(EncoderParams(enc, int(meta["layers"]), int(meta["dim"])), clf), meta


class DetectionMatrix:
    """``m x 4`` logits with per-task probabilities."""

    def __init__(self, logits):
        self.logits = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)

    @staticmethod
    def _softmax(z):
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    @property
    def laundering_proba(self) -> np.ndarray:
        return self._softmax(self.logits[:, :2])

    @property
    def group_proba(self) -> np.ndarray:
        return self._softmax(self.logits[:, 2:])

    @property
    def scores(self) -> np.ndarray:
        """Laundering probability per transaction, used for AUC."""
        return self.laundering_proba[:, 1]


def classify(embeddings: Tensor, classifier: dict) -> Tensor:
    return perceptron(embeddings, classifier, "cls", out_relu=False)


def _two_class_nll(logits: Tensor, start: int, rows: np.ndarray, targets: np.ndarray,
                   row_weights: np.ndarray) -> Tensor:
    logp = ad.log(ad.softmax(ad.columns(logits, start, start + 2)), floor=LOG_FLOOR)
    picked = ad.gather(logp, rows)
    coeff = np.zeros((len(rows), 2))
    coeff[np.arange(len(rows)), targets] = row_weights
    return ad.mul(ad.total(ad.mul(picked, Tensor(coeff))), Tensor(-1.0 / len(rows)))


def laundering_loss(logits: Tensor, labels: LabelSet, weights=(1.0, 1.0)) -> Tensor:
    """Class-weighted cross-entropy over the training-masked rows."""
    rows = np.flatnonzero(labels.train_mask)
    if len(rows) == 0:
        raise ConfigError("laundering loss needs at least one training transaction")
    y = labels.laundering[rows]
    w = np.asarray(weights, dtype=np.float64)[y]
    return _two_class_nll(logits, 0, rows, y, w)


def group_loss(logits: Tensor, group: GroupVector, rows=None) -> Tensor:
    """Unweighted cross-entropy of the group columns over ``rows`` (default: all)."""
    if group.degenerate:
        raise DegenerateGroupError("group indicator is all ones; it carries no supervision")
    bits = np.asarray(group.bits)
    rows = np.arange(len(bits)) if rows is None else np.asarray(rows)
    return _two_class_nll(logits, 2, rows, bits[rows], np.ones(len(rows)))


def total_loss(l_m: Tensor, l_g: Tensor | None, lam: float) -> Tensor:
    if l_g is None:
        return l_m
    return ad.add(l_m, ad.mul(l_g, Tensor(float(lam))))


def predict(matrix) -> tuple[np.ndarray, np.ndarray]:
    """Argmax per task; ties resolve to class 0."""
    z = matrix.logits if isinstance(matrix, DetectionMatrix) else np.asarray(matrix)
    return (z[:, 1] > z[:, 0]).astype(np.int64), (z[:, 3] > z[:, 2]).astype(np.int64)


def inverse_frequency_weights(labels: LabelSet) -> tuple[float, float]:
    n0, n1 = labels.class_counts(labels.train_mask)
    if n0 == 0 or n1 == 0:
        raise ConfigError(f"training mask needs both classes, got {n0} negatives and {n1} positives")
    n = n0 + n1
    return n / (2.0 * n0), n / (2.0 * n1)


def forward(graph: TransactionGraph, params: ModelParams) -> DetectionMatrix:
    return DetectionMatrix(classify(encode(graph, params.encoder), params.classifier))


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict] = field(default_factory=list)
    mode: str = "multi-task"
    class_weights: tuple[float, float] = (1.0, 1.0)

    def log_lines(self) -> str:
        return "".join(json.dumps(h, sort_keys=True) + "\n" for h in self.history)


def _batch_loss(params, view, labels, group, class_w, lam):
    """Joint loss on one batch, or None when nothing in it is supervised."""
    logits = classify(encode(view.graph, params.encoder), params.classifier)
    train_rows = view.targets[labels.train_mask[view.tx_index[view.targets]]]
    l_m = l_g = None
    if len(train_rows):
        y = labels.laundering[view.tx_index[train_rows]]
        l_m = _two_class_nll(logits, 0, train_rows, y, class_w[y])
    if group is not None:
        bits = np.asarray(group.bits)[view.tx_index]
        l_g = _two_class_nll(logits, 2, view.targets, bits[view.targets], np.ones(len(view.targets)))
    if l_m is None and (l_g is None or lam == 0):
        return None
    loss = ad.mul(l_g, Tensor(float(lam))) if l_m is None else total_loss(l_m, l_g, lam)
    return loss, l_m, l_g


def train(graph: TransactionGraph, labels: LabelSet, group: GroupVector | None,
          config: TrainConfig, on_epoch=None) -> TrainResult:
    """Jointly fit encoder and classifier with Adam over subgraph batches.

    Without a usable group indicator (absent or all ones) only the
    laundering loss is optimized and the result is flagged single-task.
    """
    if not np.any(labels.train_mask):
        raise ConfigError("no labeled training transactions")
    weights = config.class_weights or inverse_frequency_weights(labels)
    mode = "multi-task"
    if group is None or group.degenerate:
        log.info("group supervision %s; training single-task",
                 "absent" if group is None else "degenerate")
        group, mode = None, "single-task"

    params = ModelParams.init(graph.account_features.shape[1], graph.attributes.shape[1],
                              config.embed_dim, config.layers, config.seed)
    opt = Adam(params.tensors, lr=config.lr)
    result = TrainResult(params, mode=mode, class_weights=tuple(float(w) for w in weights))
    w_arr = np.asarray(weights, dtype=np.float64)

    for epoch in range(1, config.epochs + 1):
        views = sample_subgraph_batches(graph, config.batch_count, config.seed * 100003 + epoch,
                                        hops=config.layers)
        sums = {"loss_m": 0.0, "loss_g": 0.0, "loss_total": 0.0}
        steps = 0
        for b, view in enumerate(views):
            # overflow is reported below as NumericError, not as numpy warnings
            with np.errstate(over="ignore", invalid="ignore"):
                terms = _batch_loss(params, view, labels, group, w_arr, config.lam)
                if terms is None:
                    continue
                loss, l_m, l_g = terms
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
                opt.zero_grad()
                loss.backward()
            try:
                opt.step()
            except NumericError as exc:
                raise NumericError(f"{exc} at epoch {epoch}, batch {b}") from None
            sums["loss_m"] += float(l_m.data) if l_m is not None else 0.0
            sums["loss_g"] += float(l_g.data) if l_g is not None else 0.0
            sums["loss_total"] += value
            steps += 1
        entry = {"epoch": epoch, **{k: v / max(steps, 1) for k, v in sums.items()}}
        result.history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
    return result


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["class_weights"] = list(config.class_weights) if config.class_weights else None
    return d
