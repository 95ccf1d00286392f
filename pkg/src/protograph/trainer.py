"""End-to-end episodic training.

The per-episode objective is the negative Monte Carlo query log-likelihood,
sum_q -log[(1/L) sum_l p(y_q | x_q, v^(l))], where the v^(l) are the final
states of the SGLD chains. Gradients with respect to the graph-layer and
encoder parameters are computed by a hand-written reverse pass through the
whole pipeline: prediction, the unrolled chain (noise draws held fixed, so
each step is deterministic and differentiable), the warm start, the support
statistics, and the encodings. The reverse pass is validated everywhere
against the central-difference oracle.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, Episode, sample_episode
from .graph import RelationGraph
from .likelihood import EncoderParams, encode_batch, pairwise_logits
from .numerics import RngStream, softmax_with_temperature
from .prior import GnnParams, summary_rows
from .sampler import (
    SamplerConfig,
    init_prototypes,
    posterior_predict,
    sgld_chain,
    _stats_from_encodings,
)

CHECKPOINT_MAGIC = "protograph-checkpoint v1"

# stream namespaces inside train(); keeps episode sampling, chain noise,
# validation, and parameter init statistically independent
_NS_INIT, _NS_EPISODE, _NS_CHAIN, _NS_VAL = 0, 1, 2, 3


@dataclass
class ModelParams:
    """All trainable state: the graph layer and the instance encoder."""

    gnn: GnnParams
    encoder: EncoderParams


@dataclass
class TrainConfig:
    episodes_total: int
    n_way: int = 5
    k_shot: int = 1
    q_per: int = 5
    learning_rate: float = 0.1
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eval_every: int = 100
    val_episodes: int = 20
    checkpoint_path: str | Path | None = None
    log_path: str | Path | None = None
    seed: int = 0
    encoder_mode: str = "identity"
    gnn_activation: str = "identity"
    gnn_hops: int = 1
    record_timing: bool = False

    def __post_init__(self) -> None:
        if self.episodes_total < 0:
            raise ValueError("episodes_total must be >= 0")
        if min(self.n_way, self.q_per) < 1 or self.k_shot < 1:
            raise ValueError("n_way, k_shot, q_per must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def init_params(
    graph_dim: int,
    output_dim: int,
    rng: RngStream,
    encoder_mode: str = "identity",
    encoder_input_dim: int | None = None,
    activation: str = "identity",
    hops: int = 1,
) -> ModelParams:
    """Fan-in-scaled uniform init, U(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(graph_dim)
    gen = rng.child(0).generator()
    gnn = GnnParams(
        weight=gen.uniform(-bound, bound, size=(graph_dim, output_dim)),
        bias=gen.uniform(-bound, bound, size=output_dim),
        activation=activation,
        hops=hops,
    )
    if encoder_mode == "identity":
        encoder = EncoderParams(mode="identity")
    else:
        d_in = output_dim if encoder_input_dim is None else encoder_input_dim
        e_bound = 1.0 / np.sqrt(d_in)
        egen = rng.child(1).generator()
        encoder = EncoderParams(
            mode="linear",
            weight=egen.uniform(-e_bound, e_bound, size=(output_dim, d_in)),
            bias=egen.uniform(-e_bound, e_bound, size=output_dim),
        )
    return ModelParams(gnn=gnn, encoder=encoder)


def param_arrays(params: ModelParams) -> dict[str, np.ndarray]:
    """Name -> live array view of every trainable tensor."""
    out = {"gnn.weight": params.gnn.weight, "gnn.bias": params.gnn.bias}
    if params.encoder.trainable:
        out["encoder.weight"] = params.encoder.weight
        out["encoder.bias"] = params.encoder.bias
    return out


def params_to_vector(params: ModelParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in param_arrays(params).values()])


def set_params_from_vector(params: ModelParams, vec: np.ndarray) -> None:
    """Write a flat vector back into the parameter arrays, in place."""
    offset = 0
    for arr in param_arrays(params).values():
        n = arr.size
        arr[...] = np.asarray(vec[offset : offset + n]).reshape(arr.shape)
        offset += n
    if offset != vec.size:
        raise ValueError(f"vector length {vec.size} != parameter count {offset}")


@dataclass
class _ForwardCache:
    loss: float
    episode: Episode
    params: ModelParams
    config: SamplerConfig
    eff_summaries: np.ndarray  # (N, d) prior means actually used (zeros if no prior)
    summaries: np.ndarray  # (N, d) raw layer output rows
    prop_rows: np.ndarray  # (N, d_g) propagated node features for the targets
    support_enc: np.ndarray  # (S, d)
    query_enc: np.ndarray  # (Q, d)
    one_hot_s: np.ndarray  # (S, N)
    k_shot: int
    trajectory: np.ndarray  # (M+1, L, N, d)
    step_sizes: np.ndarray  # (M,)
    query_probs: np.ndarray  # (L, Q, N) per-chain softmax probabilities
    mean_probs: np.ndarray  # (Q, N)


def _softmax_backward(probs: np.ndarray, d_probs: np.ndarray) -> np.ndarray:
    """VJP of p = softmax(z) along the last axis."""
    inner = np.sum(d_probs * probs, axis=-1, keepdims=True)
    return probs * (d_probs - inner)


def _episode_forward(
    episode: Episode,
    graph: RelationGraph,
    params: ModelParams,
    config: SamplerConfig,
    rng: RngStream,
) -> _ForwardCache:
    targets = np.asarray(episode.targets, dtype=int)
    if targets.max() >= graph.n_nodes:
        raise ValueError(f"episode target {int(targets.max())} not in the graph")
    n_way = len(targets)

    prop_rows = graph.propagated(params.gnn.hops)[targets]
    summaries = prop_rows @ params.gnn.weight + params.gnn.bias
    if params.gnn.activation == "tanh":
        summaries = np.tanh(summaries)
    eff = summaries if config.graph_prior else np.zeros_like(summaries)

    support_enc = encode_batch(episode.support_x, params.encoder)
    query_enc = encode_batch(episode.query_x, params.encoder)
    y_s = episode.support_y
    one_hot_s = np.zeros((y_s.size, n_way))
    one_hot_s[np.arange(y_s.size), y_s] = 1.0
    stats = _stats_from_encodings(support_enc, y_s)
    k_shot = episode.k_shot

    samples = init_prototypes(stats, eff, config.alpha, config.beta, config.chains)
    samples, record = sgld_chain(
        episode.support_x,
        episode.support_y,
        episode.targets,
        eff,
        samples,
        config,
        params.encoder,
        rng,
        record=True,
    )

    # same primitives as predict_queries, so training-time probabilities are
    # bit-identical to the inference pipeline
    v_final = samples.values  # (L, N, d)
    logits = np.stack(
        [pairwise_logits(query_enc, v_final[l], config.measure) for l in range(config.chains)]
    )
    query_probs = softmax_with_temperature(logits, config.tau)
    mean_probs = query_probs.mean(axis=0)

    p_true = mean_probs[np.arange(len(episode.query_y)), episode.query_y]
    if not np.all(np.isfinite(p_true)) or np.any(p_true <= 0.0):
        raise RuntimeError(
            f"non-finite episode loss (replay stream seed={rng.seed} id={rng.stream_id})"
        )
    loss = float(-np.log(p_true).sum() + 0.0)  # + 0.0 folds -0.0 (single-class case)

    return _ForwardCache(
        loss=loss,
        episode=episode,
        params=params,
        config=config,
        eff_summaries=eff,
        summaries=summaries,
        prop_rows=prop_rows,
        support_enc=support_enc,
        query_enc=query_enc,
        one_hot_s=one_hot_s,
        k_shot=k_shot,
        trajectory=record.trajectory,
        step_sizes=record.step_sizes,
        query_probs=query_probs,
        mean_probs=mean_probs,
    )


def _likelihood_grad_vjp(
    v_prev: np.ndarray,
    cotangent: np.ndarray,
    cache: _ForwardCache,
) -> tuple[np.ndarray, np.ndarray]:
    """VJP through g(V) = scale * grad_V log p(y_S | x_S, V).

    Differentiating the analytic likelihood gradient brings in the softmax
    curvature (the Hessian term of the Langevin drift). Returns contributions
    (d_v_prev, d_support_enc) for the cotangent of g.
    """
    cfg = cache.config
    e_s = cache.support_enc
    t_s = cache.one_hot_s
    scale = cfg.likelihood_weight / (cache.k_shot * cfg.tau)
    u = cotangent  # (L, N, d)

    if cfg.measure == "dot":
        logits = np.einsum("sd,lnd->lsn", e_s, v_prev)
        z = logits / cfg.tau
        z = z - z.max(axis=-1, keepdims=True)
        ez = np.exp(z)
        probs = ez / ez.sum(axis=-1, keepdims=True)  # (L, S, N)

        a = np.einsum("sd,lnd->lsn", e_s, u)
        dz = _softmax_backward(probs, -scale * a)
        d_logits = dz / cfg.tau
        d_v = np.einsum("lsn,sd->lnd", d_logits, e_s)
        d_es = np.einsum("lsn,lnd->sd", d_logits, v_prev)
        d_es += scale * np.einsum("lsn,lnd->sd", t_s[None] - probs, u)
        return d_v, d_es

    diff = e_s[None, :, None, :] - v_prev[:, None, :, :]  # (L, S, N, d)
    logits = -0.5 * np.einsum("lsnd,lsnd->lsn", diff, diff)
    z = logits / cfg.tau
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=-1, keepdims=True)
    resid = t_s[None] - probs  # (L, S, N)

    d_mat = np.einsum("lsnd,lnd->lsn", diff, u)
    dz = _softmax_backward(probs, -scale * d_mat)
    d_logits = dz / cfg.tau
    d_v = np.einsum("lsn,lsnd->lnd", d_logits, diff)
    d_v -= scale * resid.sum(axis=1)[:, :, None] * u
    d_es = -np.einsum("lsn,lsnd->sd", d_logits, diff)
    d_es += scale * np.einsum("lsn,lnd->sd", resid, u)
    return d_v, d_es


def _episode_backward(cache: _ForwardCache) -> dict[str, np.ndarray]:
    cfg = cache.config
    episode = cache.episode
    chains = cfg.chains
    y_q = episode.query_y
    q_count = y_q.size
    v_final = cache.trajectory[-1]

    # loss -> chain-averaged probabilities -> per-chain softmax inputs
    d_mean = np.zeros_like(cache.mean_probs)
    d_mean[np.arange(q_count), y_q] = -1.0 / cache.mean_probs[np.arange(q_count), y_q]
    d_probs = np.broadcast_to(d_mean / chains, cache.query_probs.shape)
    dz = _softmax_backward(cache.query_probs, d_probs)
    d_logits = dz / cfg.tau

    if cfg.measure == "dot":
        d_v = np.einsum("lqn,qd->lnd", d_logits, cache.query_enc)
        d_eq = np.einsum("lqn,lnd->qd", d_logits, v_final)
    else:
        diff_q = cache.query_enc[None, :, None, :] - v_final[:, None, :, :]
        d_v = np.einsum("lqn,lqnd->lnd", d_logits, diff_q)
        d_eq = -np.einsum("lqn,lqnd->qd", d_logits, diff_q)

    # reverse through the unrolled chain; noise draws are constants
    d_es = np.zeros_like(cache.support_enc)
    d_eff = np.zeros_like(cache.eff_summaries)
    has_lik = cfg.likelihood_weight != 0.0 and episode.support_y.size > 0
    for t in range(len(cache.step_sizes) - 1, -1, -1):
        half = 0.5 * cache.step_sizes[t]
        v_prev = cache.trajectory[t]
        d_eff += half * cfg.prior_weight * d_v.sum(axis=0)
        d_v_next = d_v - half * cfg.prior_weight * d_v
        if has_lik:
            dv_lik, des_lik = _likelihood_grad_vjp(v_prev, half * d_v, cache)
            d_v_next = d_v_next + dv_lik
            d_es += des_lik
        d_v = d_v_next

    # warm start: v0 = class_means + alpha * eff - beta * grand_mean
    d_v0 = d_v.sum(axis=0)  # chains share the init
    d_eff += cfg.alpha * d_v0
    d_class_means = d_v0
    d_grand = -cfg.beta * d_v0.sum(axis=0)
    s_count = episode.support_y.size
    d_es += (cache.one_hot_s @ d_class_means) / cache.k_shot
    d_es += d_grand[None, :] / s_count

    # graph layer: summaries = act(prop_rows @ W + b)
    d_summ = d_eff if cfg.graph_prior else np.zeros_like(d_eff)
    if cache.params.gnn.activation == "tanh":
        d_pre = d_summ * (1.0 - cache.summaries**2)
    else:
        d_pre = d_summ
    grads = {
        "gnn.weight": cache.prop_rows.T @ d_pre,
        "gnn.bias": d_pre.sum(axis=0),
    }

    if cache.params.encoder.trainable:
        grads["encoder.weight"] = (
            d_es.T @ episode.support_x + d_eq.T @ episode.query_x
        )
        grads["encoder.bias"] = d_es.sum(axis=0) + d_eq.sum(axis=0)
    return grads


def episode_objective_and_grads(
    episode: Episode,
    graph: RelationGraph,
    params: ModelParams,
    config: SamplerConfig,
    rng: RngStream,
) -> tuple[float, dict[str, np.ndarray]]:
    """Negative query log-likelihood of one episode and its parameter gradients."""
    cache = _episode_forward(episode, graph, params, config, rng)
    return cache.loss, _episode_backward(cache)


def episode_loss(
    episode: Episode,
    graph: RelationGraph,
    params: ModelParams,
    config: SamplerConfig,
    rng: RngStream,
) -> float:
    """Forward-only objective; the replayable target for the gradient oracle."""
    return _episode_forward(episode, graph, params, config, rng).loss


def _validation_accuracy(
    dataset: Dataset,
    graph: RelationGraph,
    params: ModelParams,
    config: TrainConfig,
    rng: RngStream,
) -> float:
    correct, total = 0, 0
    for i in range(config.val_episodes):
        episode = sample_episode(
            dataset, "val", config.n_way, config.k_shot, config.q_per, rng.child(i, 0)
        )
        summaries = summary_rows(graph, params.gnn, episode.targets)
        _, preds = posterior_predict(
            episode.support_x,
            episode.support_y,
            episode.targets,
            episode.query_x,
            summaries,
            config.sampler,
            params.encoder,
            rng.child(i, 1),
        )
        correct += int(np.sum(preds == episode.query_y))
        total += len(episode.query_y)
    return correct / total


@dataclass
class LogRow:
    episode_index: int
    loss: float
    val_accuracy: float | None
    wall_ms: float | None

    def as_csv(self) -> str:
        val = "" if self.val_accuracy is None else repr(self.val_accuracy)
        ms = "" if self.wall_ms is None else repr(self.wall_ms)
        return f"{self.episode_index},{repr(self.loss)},{val},{ms}"


def write_training_log(rows: list[LogRow], path) -> None:
    lines = ["episode_index,loss,val_accuracy,wall_ms"]
    lines.extend(r.as_csv() for r in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def train(
    dataset: Dataset,
    graph: RelationGraph,
    config: TrainConfig,
    params: ModelParams | None = None,
    config_echo: dict | None = None,
) -> tuple[ModelParams, list[LogRow]]:
    """Alg-style episodic SGD: sample an episode, step on its objective.

    One episode per update, plain SGD at config.learning_rate. Validation
    accuracy is recorded (and a checkpoint written) every eval_every episodes;
    the final parameters are checkpointed at the end when a path is set.
    """
    rng = RngStream(config.seed)
    if params is None:
        params = init_params(
            graph_dim=graph.feature_dim,
            output_dim=dataset.d,
            rng=rng.child(_NS_INIT),
            encoder_mode=config.encoder_mode,
            encoder_input_dim=dataset.d,
            activation=config.gnn_activation,
            hops=config.gnn_hops,
        )
    arrays = param_arrays(params)
    rows: list[LogRow] = []

    for ep in range(config.episodes_total):
        t0 = time.perf_counter() if config.record_timing else None
        try:
            episode = sample_episode(
                dataset, "train", config.n_way, config.k_shot, config.q_per,
                rng.child(_NS_EPISODE, ep),
            )
            loss, grads = episode_objective_and_grads(
                episode, graph, params, config.sampler, rng.child(_NS_CHAIN, ep)
            )
        except (RuntimeError, ValueError) as exc:
            raise type(exc)(f"episode {ep}: {exc}") from exc
        for name, grad in grads.items():
            arrays[name] -= config.learning_rate * grad

        val_acc = None
        if config.eval_every and (ep + 1) % config.eval_every == 0:
            val_acc = _validation_accuracy(
                dataset, graph, params, config, rng.child(_NS_VAL, ep)
            )
            if config.checkpoint_path is not None:
                write_checkpoint(params, config.checkpoint_path, config_echo)
        wall = None
        if config.record_timing:
            wall = 1000.0 * (time.perf_counter() - t0)
        rows.append(LogRow(ep, loss, val_acc, wall))

    if config.checkpoint_path is not None:
        write_checkpoint(params, config.checkpoint_path, config_echo)
    if config.log_path is not None:
        write_training_log(rows, config.log_path)
    return params, rows


def _format_matrix(name: str, arr: np.ndarray) -> list[str]:
    mat = np.atleast_2d(np.asarray(arr, dtype=float))
    lines = [f"{name} {mat.shape[0]} {mat.shape[1]}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in mat)
    return lines


def write_checkpoint(params: ModelParams, path, config_echo: dict | None = None) -> None:
    """Versioned text checkpoint; decimal reprs round-trip exactly."""
    d = params.gnn.output_dim
    d_g = params.gnn.input_dim
    lines = [
        CHECKPOINT_MAGIC,
        f"d {d}",
        f"d_g {d_g}",
        f"gnn.activation {params.gnn.activation}",
        f"gnn.hops {params.gnn.hops}",
    ]
    lines += _format_matrix("gnn.weight", params.gnn.weight)
    lines += _format_matrix("gnn.bias", params.gnn.bias)
    lines.append(f"encoder.mode {params.encoder.mode}")
    if params.encoder.trainable:
        lines += _format_matrix("encoder.weight", params.encoder.weight)
        lines += _format_matrix("encoder.bias", params.encoder.bias)
    echo = config_echo or {}
    lines.append(f"config {len(echo)}")
    lines.extend(f"{k}={echo[k]}" for k in sorted(echo))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_checkpoint(path) -> tuple[ModelParams, dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC!r} file")
    pos = 1

    def take() -> str:
        nonlocal pos
        out = lines[pos]
        pos += 1
        return out

    def take_matrix(expect: str) -> np.ndarray:
        header = take().split(" ")
        if header[0] != expect:
            raise ValueError(f"{path}: expected {expect}, found {header[0]}")
        rows, cols = int(header[1]), int(header[2])
        mat = np.array(
            [[float(v) for v in take().split(" ")] for _ in range(rows)], dtype=float
        )
        if mat.shape != (rows, cols):
            raise ValueError(f"{path}: bad {expect} block")
        return mat

    d = int(take().split(" ")[1])
    d_g = int(take().split(" ")[1])
    activation = take().split(" ")[1]
    hops = int(take().split(" ")[1])
    weight = take_matrix("gnn.weight")
    bias = take_matrix("gnn.bias")[0]
    if weight.shape != (d_g, d) or bias.shape != (d,):
        raise ValueError(f"{path}: inconsistent dimensions")
    gnn = GnnParams(weight=weight, bias=bias, activation=activation, hops=hops)

    mode = take().split(" ")[1]
    if mode == "linear":
        e_weight = take_matrix("encoder.weight")
        e_bias = take_matrix("encoder.bias")[0]
        encoder = EncoderParams(mode="linear", weight=e_weight, bias=e_bias)
    else:
        encoder = EncoderParams(mode="identity")

    n_echo = int(take().split(" ")[1])
    echo = {}
    for _ in range(n_echo):
        key, _, value = take().partition("=")
        echo[key] = value
    return ModelParams(gnn=gnn, encoder=encoder), echo
