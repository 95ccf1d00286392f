"""Instance encoding and the temperature-softmax classification likelihood.

Two similarity measures are supported: "dot" scores a query against prototype
v_r by the inner product, "euclidean" by minus half the squared distance. Both
feed a softmax with annealing temperature tau (logits are divided by tau).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import log_softmax_with_temperature, softmax_with_temperature

MEASURES = ("dot", "euclidean")


@dataclass
class EncoderParams:
    """Identity pass-through or a trainable affine map W x + bias."""

    mode: str = "identity"
    weight: np.ndarray | None = None  # (d, d_in)
    bias: np.ndarray | None = None  # (d,)

    def __post_init__(self) -> None:
        if self.mode not in ("identity", "linear"):
            raise ValueError(f"unknown encoder mode {self.mode!r}")
        if self.mode == "linear":
            if self.weight is None or self.bias is None:
                raise ValueError("linear encoder requires weight and bias")
            self.weight = np.asarray(self.weight, dtype=float)
            self.bias = np.asarray(self.bias, dtype=float)
            if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
                raise ValueError(
                    f"weight {self.weight.shape} and bias {self.bias.shape} are inconsistent"
                )

    @property
    def trainable(self) -> bool:
        return self.mode == "linear"


def encode(features, params: EncoderParams) -> np.ndarray:
    """Encode a single feature vector."""
    x = np.asarray(features, dtype=float)
    if params.mode == "identity":
        return x
    if x.shape[-1] != params.weight.shape[1]:
        raise ValueError(
            f"feature dim {x.shape[-1]} != encoder input dim {params.weight.shape[1]}"
        )
    return params.weight @ x + params.bias


def encode_batch(features, params: EncoderParams) -> np.ndarray:
    """Encode a (n, d_in) matrix of feature rows."""
    x = np.asarray(features, dtype=float)
    if params.mode == "identity":
        return x
    if x.shape[-1] != params.weight.shape[1]:
        raise ValueError(
            f"feature dim {x.shape[-1]} != encoder input dim {params.weight.shape[1]}"
        )
    return x @ params.weight.T + params.bias


def pairwise_logits(encodings: np.ndarray, prototypes: np.ndarray, measure: str) -> np.ndarray:
    """Similarity logits between encoding rows and prototype rows, (n, N)."""
    if measure not in MEASURES:
        raise ValueError(f"unknown measure {measure!r}")
    e = np.atleast_2d(np.asarray(encodings, dtype=float))
    v = np.asarray(prototypes, dtype=float)
    if e.shape[-1] != v.shape[-1]:
        raise ValueError(f"dimension mismatch: encodings {e.shape} vs prototypes {v.shape}")
    if measure == "dot":
        return e @ v.T
    diff = e[:, None, :] - v[None, :, :]
    return -0.5 * np.einsum("qnd,qnd->qn", diff, diff)


def class_log_probs(encoding, prototypes, measure: str, tau: float) -> np.ndarray:
    """Log class probabilities of one encoding against N prototypes."""
    v = np.asarray(prototypes, dtype=float)
    if v.ndim != 2 or v.shape[0] == 0:
        raise ValueError("empty class set")
    logits = pairwise_logits(encoding, v, measure)
    return log_softmax_with_temperature(logits, tau)[0]


def support_log_likelihood_and_grad(
    support_x,
    support_y,
    prototypes,
    encoder: EncoderParams,
    measure: str,
    tau: float,
    normalize_by_k: bool = True,
) -> tuple[float, np.ndarray]:
    """Support-set log-likelihood and its analytic gradient w.r.t. prototypes.

    value = scale * sum_s log p(y_s | x_s, V), with scale = 1/K when
    normalize_by_k is set (K support instances per class, required equal).
    The gradient row for class r is

        dot:       scale/tau * sum_s (1[y_s=r] - p_sr) e_s
        euclidean: scale/tau * sum_s (1[y_s=r] - p_sr) (e_s - v_r)
    """
    v = np.asarray(prototypes, dtype=float)
    y = np.asarray(support_y, dtype=int)
    n_way = v.shape[0]
    if y.size == 0:
        raise ValueError("empty support set")
    if np.any(y < 0) or np.any(y >= n_way):
        bad = int(y[(y < 0) | (y >= n_way)][0])
        raise ValueError(f"support label {bad} outside the {n_way} target classes")
    counts = np.bincount(y, minlength=n_way)
    if np.any(counts != counts[0]):
        raise ValueError(f"unequal support counts per class: {counts.tolist()}")
    k_shot = int(counts[0])

    e = encode_batch(support_x, encoder)
    logits = pairwise_logits(e, v, measure)
    log_p = log_softmax_with_temperature(logits, tau)
    probs = softmax_with_temperature(logits, tau)
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(y.size), y] = 1.0

    scale = (1.0 / k_shot) if normalize_by_k else 1.0
    value = scale * float(log_p[np.arange(y.size), y].sum())
    resid = one_hot - probs
    if measure == "dot":
        grad = resid.T @ e
    else:
        grad = resid.T @ e - resid.sum(axis=0)[:, None] * v
    grad *= scale / tau
    return value, grad
