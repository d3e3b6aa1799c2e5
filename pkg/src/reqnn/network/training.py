"""Losses, SGD-with-momentum training and evaluation helpers."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import autodiff as ad
from ..autodiff import Var
from ..errors import InvalidArgumentError
from ..geometry import PointCloud, sq_dists
from ..q2r import cross_entropy
from .model import Network, forward_batches

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 16
    seed: int = 0


def chamfer_var(pred, target: np.ndarray) -> Var:
    """Symmetric Chamfer loss between predicted points (3, P, B) and targets (B, T, 3).

    Each direction averages squared nearest-neighbor distances; the two
    directions are averaged with weight 1/2 each.
    """
    pred = ad.as_var(pred)
    pv = pred.value
    B = pv.shape[2]
    target = np.asarray(target, dtype=np.float64)
    nn_p = np.empty((B, pv.shape[1]), dtype=np.int64)
    nn_t = np.empty((B, target.shape[1]), dtype=np.int64)
    for b in range(B):
        d = sq_dists(pv[:, :, b].T, target[b])
        nn_p[b] = np.argmin(d, axis=1)
        nn_t[b] = np.argmin(d, axis=0)
    bidx = np.arange(B)
    tgt_for_p = np.transpose(target[bidx[:, None], nn_p], (2, 1, 0))
    diff_p = pred - tgt_for_p
    term_p = ad.mean(ad.sum(diff_p * diff_p, axis=0))
    pred_for_t = ad.gather(pred, (slice(None), nn_t.T, bidx[None, :]))
    diff_t = pred_for_t - np.transpose(target, (2, 1, 0))
    term_t = ad.mean(ad.sum(diff_t * diff_t, axis=0))
    return 0.5 * term_p + 0.5 * term_t


def chamfer_loss(pred, target) -> tuple[float, np.ndarray]:
    """Chamfer loss between two clouds and its gradient with respect to ``pred`` (P, 3)."""
    p = _xyz(pred)
    t = _xyz(target)
    if len(p) == 0 or len(t) == 0:
        raise InvalidArgumentError("cloud", (len(p), len(t)), "Chamfer loss needs non-empty clouds")
    pv = Var(p.T[:, :, None], requires_grad=True)
    loss = chamfer_var(pv, t[None])
    (g,) = ad.backward(loss, [pv])
    return float(loss.value), g[:, :, 0].T


def _xyz(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.xyz
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


def decoder_points(out: Var) -> Var:
    """Imaginary channels (3, P, B) of a decoder output (4, P, B)."""
    return ad.gather(out, (slice(1, 4),)) if out.shape[0] == 4 else _twin_points(out)


def _twin_points(out: Var) -> Var:
    P = out.shape[1] // 3
    return ad.transpose(ad.reshape(out, (P, 3, out.shape[2])), (1, 0, 2))


def batch_loss(net: Network, xyz: np.ndarray, labels: Optional[np.ndarray], training: bool,
               rng: Optional[np.random.Generator]) -> tuple[Var, Var]:
    out = net.forward(xyz, training=training, rng=rng)
    if net.is_autoencoder:
        return chamfer_var(decoder_points(out), xyz), out
    return cross_entropy(out, labels), out


def train(net: Network, dataset, config: TrainConfig | None = None, log_path=None) -> list[dict]:
    """Mini-batch SGD with momentum.

    ``dataset`` is a ``Dataset`` (its training split is used) or an
    ``(xyz, labels)`` pair; labels may be ``None`` for autoencoders. Returns
    one record ``{epoch, loss, acc}`` per epoch (``acc`` is ``None`` for
    autoencoders) and appends them as JSON lines to ``log_path`` if given.
    """
    config = config or TrainConfig()
    if hasattr(dataset, "train_xyz"):
        xyz, labels = dataset.train_xyz, dataset.train_labels
    else:
        xyz, labels = dataset
    xyz = np.asarray(xyz, dtype=np.float64)
    if len(xyz) == 0:
        raise InvalidArgumentError("dataset", len(xyz), "training set is empty")
    if not net.is_autoencoder and labels is None:
        raise InvalidArgumentError("labels", None, "classification needs labels")
    rng = np.random.default_rng(config.seed)
    velocity = {name: np.zeros_like(p.value) for name, p in net.params.items()}
    records = []
    sink = open(log_path, "a") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            total, correct, seen = 0.0, 0, 0
            order = rng.permutation(len(xyz))
            for s in range(0, len(xyz), config.batch_size):
                idx = order[s:s + config.batch_size]
                batch_labels = None if labels is None else np.asarray(labels)[idx]
                loss, out = batch_loss(net, xyz[idx], batch_labels, True, rng)
                grads = net.backward(loss)
                for name, p in net.params.items():
                    v = velocity[name]
                    v *= config.momentum
                    v += grads[name]
                    p.value -= config.lr * v
                total += float(loss.value) * len(idx)
                seen += len(idx)
                if batch_labels is not None:
                    correct += int(np.sum(np.argmax(out.value, axis=0) == batch_labels))
            rec = {"epoch": epoch, "loss": total / seen,
                   "acc": None if net.is_autoencoder else correct / seen}
            records.append(rec)
            log.info("epoch %d loss %.5f acc %s", epoch, rec["loss"], rec["acc"])
            if sink:
                sink.write(json.dumps(rec) + "\n")
    finally:
        if sink:
            sink.close()
    return records


def accuracy(net: Network, xyz: np.ndarray, labels: np.ndarray, batch_size: int = 64) -> float:
    logits = forward_batches(net, np.asarray(xyz), batch_size)
    return float(np.mean(np.argmax(logits, axis=0) == np.asarray(labels)))


def reconstruction_error(net: Network, xyz: np.ndarray, batch_size: int = 64) -> float:
    """Mean eval-mode Chamfer loss of an autoencoder over ``xyz``."""
    total = 0.0
    for s in range(0, len(xyz), batch_size):
        chunk = xyz[s:s + batch_size]
        total += float(chamfer_var(decoder_points(net.forward(chunk)), chunk).value) * len(chunk)
    return total / len(xyz)
