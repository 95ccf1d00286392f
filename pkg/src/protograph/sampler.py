"""Posterior sampling of prototype vectors.

Per episode, L independent chains start from a shared warm-start point
(class mean + relation summary - grand support mean) and take M Langevin
steps on the log-posterior: the K-normalized support log-likelihood plus the
Gaussian prior around the relation summaries. Query predictions average the
per-chain softmax probabilities, a Monte Carlo estimate of the predictive
distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .likelihood import EncoderParams, MEASURES, encode_batch, pairwise_logits
from .numerics import RngStream, softmax_with_temperature, standard_normal_sample


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs of the per-episode sampler.

    chains (L) and steps (M) control the Monte Carlo budget; step_size is the
    initial Langevin step, decayed as step_size * t^(-step_decay) at step t.
    alpha and beta weight the relation summary and the grand support mean in
    the warm start. prior_weight / likelihood_weight scale the two gradient
    terms inside the chain (used by ablations); graph_prior=False replaces the
    summaries with zeros in both the warm start and the prior.
    """

    chains: int = 10
    steps: int = 5
    step_size: float = 0.1
    step_decay: float = 0.0
    alpha: float = 1.0
    beta: float = 1.0
    tau: float = 10.0
    measure: str = "dot"
    noise_enabled: bool = True
    graph_prior: bool = True
    prior_weight: float = 1.0
    likelihood_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.step_size < 0:
            raise ValueError("step_size must be non-negative")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.measure not in MEASURES:
            raise ValueError(f"unknown measure {self.measure!r}")

    def step_sizes(self) -> np.ndarray:
        t = np.arange(1, self.steps + 1, dtype=float)
        return self.step_size * t ** (-self.step_decay)


@dataclass
class SupportStatistics:
    """Per-class mean encodings m_r and the grand mean m of the support set."""

    class_means: np.ndarray  # (N, d)
    grand_mean: np.ndarray  # (d,)


@dataclass
class PrototypeSamples:
    """L chains of N x d prototype vectors, plus the streams that drove them."""

    values: np.ndarray  # (L, N, d)
    chain_streams: tuple[RngStream, ...] | None = None

    @property
    def n_chains(self) -> int:
        return self.values.shape[0]


@dataclass
class ChainRecord:
    """Trajectory of an SGLD run, kept for reverse-mode differentiation."""

    trajectory: np.ndarray  # (M+1, L, N, d), trajectory[0] is the init
    step_sizes: np.ndarray  # (M,)


def support_statistics(support_x, support_y, encoder: EncoderParams) -> SupportStatistics:
    """Exact per-class and grand means of the support encodings."""
    y = np.asarray(support_y, dtype=int)
    if y.size == 0:
        raise ValueError("empty support set")
    e = encode_batch(support_x, encoder)
    return _stats_from_encodings(e, y)


def _stats_from_encodings(encodings: np.ndarray, y: np.ndarray) -> SupportStatistics:
    n_way = int(y.max()) + 1
    counts = np.bincount(y, minlength=n_way)
    if np.any(counts == 0) or np.any(counts != counts[0]):
        raise ValueError(f"unequal support counts per class: {counts.tolist()}")
    one_hot = np.zeros((y.size, n_way))
    one_hot[np.arange(y.size), y] = 1.0
    class_means = (one_hot.T @ encodings) / counts[0]
    return SupportStatistics(class_means=class_means, grand_mean=encodings.mean(axis=0))


def init_prototypes(
    stats: SupportStatistics, summaries, alpha: float, beta: float, chains: int
) -> PrototypeSamples:
    """Warm start v_r = m_r + alpha h_r - beta m, replicated across chains.

    All chains start at the same point; sample diversity comes entirely from
    the per-chain Langevin noise.
    """
    h = np.asarray(summaries, dtype=float)
    if h.shape != stats.class_means.shape:
        raise ValueError(
            f"summaries {h.shape} do not match class means {stats.class_means.shape}"
        )
    v0 = stats.class_means + alpha * h - beta * stats.grand_mean
    return PrototypeSamples(values=np.broadcast_to(v0, (chains,) + v0.shape).copy())


def init_objective_and_grad(
    prototypes, stats: SupportStatistics, summaries, alpha: float = 1.0, beta: float = 1.0
) -> tuple[float, np.ndarray]:
    """Warm-start objective sum_r -1/2 ||v_r - m_r - alpha h_r + beta m||^2.

    This is the quadratic lower bound of the normalized log-posterior whose
    maximizer is the init point; the gradient vanishes exactly there.
    """
    v = np.asarray(prototypes, dtype=float)
    center = stats.class_means + alpha * np.asarray(summaries, dtype=float) - beta * stats.grand_mean
    if v.shape != center.shape:
        raise ValueError(f"prototypes {v.shape} do not match statistics {center.shape}")
    diff = v - center
    return -0.5 * float(np.sum(diff * diff)), -diff


def _chain_noise(
    rng: RngStream, chain: int, step: int, rank: np.ndarray, d: int
) -> np.ndarray:
    # One (N, d) draw per (chain, step), rows then assigned by sorted-target
    # rank so a permutation of the targets permutes the noise consistently.
    block = standard_normal_sample((rank.size, d), rng.child(chain, step))
    return block[rank]


def _posterior_gradient(
    values: np.ndarray,
    support_enc: np.ndarray | None,
    one_hot: np.ndarray | None,
    k_shot: int,
    summaries: np.ndarray,
    config: SamplerConfig,
) -> np.ndarray:
    """Gradient of the target log-density for every chain at once, (L, N, d)."""
    grad = config.prior_weight * (summaries[None, :, :] - values)
    if config.likelihood_weight != 0.0 and support_enc is not None:
        scale = config.likelihood_weight / (k_shot * config.tau)
        if config.measure == "dot":
            logits = np.einsum("sd,lnd->lsn", support_enc, values)
            probs = softmax_with_temperature(logits, config.tau)
            resid = one_hot[None, :, :] - probs
            grad += scale * np.einsum("lsn,sd->lnd", resid, support_enc)
        else:
            diff = support_enc[None, :, None, :] - values[:, None, :, :]
            logits = -0.5 * np.einsum("lsnd,lsnd->lsn", diff, diff)
            probs = softmax_with_temperature(logits, config.tau)
            resid = one_hot[None, :, :] - probs
            grad += scale * np.einsum("lsn,lsnd->lnd", resid, diff)
    return grad


def sgld_chain(
    support_x,
    support_y,
    targets,
    summaries,
    samples: PrototypeSamples,
    config: SamplerConfig,
    encoder: EncoderParams,
    rng: RngStream,
    record: bool = False,
):
    """Run M Langevin steps on every chain.

    Update at step t (1-based):
        v <- v + (eps_t / 2) * grad log p(v) + sqrt(eps_t) * z,
    with z ~ N(0, I) when noise is enabled and eps_t = step_size * t^-decay.
    The log-density combines the K-normalized support likelihood and the
    Gaussian prior around ``summaries`` (already zeroed by the caller when the
    graph prior is disabled). Returns the final samples, plus a ChainRecord of
    the full trajectory when ``record`` is set.
    """
    values = np.array(samples.values, dtype=float)
    chains, n_way, d = values.shape
    y = np.asarray(support_y, dtype=int)
    h = np.asarray(summaries, dtype=float)
    if h.shape != (n_way, d):
        raise ValueError(f"summaries {h.shape} do not match prototypes {values.shape[1:]}")

    if config.likelihood_weight != 0.0 and y.size > 0:
        if y.min() < 0 or y.max() >= n_way:
            raise ValueError(
                f"support label {int(y[(y < 0) | (y >= n_way)][0])} outside the "
                f"{n_way} target classes"
            )
        support_enc = encode_batch(support_x, encoder)
        counts = np.bincount(y, minlength=n_way)
        if np.any(counts == 0) or np.any(counts != counts[0]):
            raise ValueError(f"unequal support counts per class: {counts.tolist()}")
        k_shot = int(counts[0])
        one_hot = np.zeros((y.size, n_way))
        one_hot[np.arange(y.size), y] = 1.0
    else:
        support_enc, one_hot, k_shot = None, None, 1

    rank = np.argsort(np.argsort(np.asarray(targets, dtype=int)))
    eps = config.step_sizes()
    trajectory = [values.copy()] if record else None
    streams = tuple(rng.child(l) for l in range(chains))

    for t_idx, eps_t in enumerate(eps):
        grad = _posterior_gradient(values, support_enc, one_hot, k_shot, h, config)
        values = values + 0.5 * eps_t * grad
        if config.noise_enabled:
            noise = np.stack(
                [_chain_noise(rng, l, t_idx + 1, rank, d) for l in range(chains)]
            )
            values = values + np.sqrt(eps_t) * noise
        if not np.all(np.isfinite(values)):
            bad = np.where(~np.isfinite(values).reshape(chains, -1).all(axis=1))[0][0]
            raise RuntimeError(f"sampler diverged at chain {int(bad)} step {t_idx + 1}")
        if record:
            trajectory.append(values.copy())

    out = PrototypeSamples(values=values, chain_streams=streams)
    if record:
        return out, ChainRecord(trajectory=np.stack(trajectory), step_sizes=eps)
    return out


def predict_queries(
    query_x,
    samples: PrototypeSamples,
    encoder: EncoderParams,
    measure: str,
    tau: float,
    targets=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo query prediction: average softmax probabilities over chains.

    Returns (probs, predictions) where probs[q] is the chain-averaged class
    distribution and predictions[q] the argmax position, ties resolved toward
    the lowest relation id when ``targets`` is given (lowest position else).
    """
    if samples.values.size == 0 or samples.n_chains == 0:
        raise ValueError("no prototype samples")
    enc = encode_batch(query_x, encoder)
    logits = np.stack(
        [pairwise_logits(enc, samples.values[l], measure) for l in range(samples.n_chains)]
    )
    probs = softmax_with_temperature(logits, tau).mean(axis=0)

    if targets is None:
        order_key = np.arange(probs.shape[1])
    else:
        order_key = np.asarray(targets, dtype=int)
    preds = np.empty(probs.shape[0], dtype=int)
    for q in range(probs.shape[0]):
        best = np.flatnonzero(probs[q] == probs[q].max())
        preds[q] = best[np.argmin(order_key[best])]
    return probs, preds


def posterior_predict(
    support_x,
    support_y,
    targets,
    query_x,
    summaries,
    config: SamplerConfig,
    encoder: EncoderParams,
    rng: RngStream,
) -> tuple[np.ndarray, np.ndarray]:
    """Full per-episode pipeline: statistics, warm start, chain, prediction."""
    h = np.asarray(summaries, dtype=float)
    if not config.graph_prior:
        h = np.zeros_like(h)
    stats = support_statistics(support_x, support_y, encoder)
    samples = init_prototypes(stats, h, config.alpha, config.beta, config.chains)
    samples = sgld_chain(
        support_x, support_y, targets, h, samples, config, encoder, rng
    )
    return predict_queries(
        query_x, samples, encoder, config.measure, config.tau, targets
    )
