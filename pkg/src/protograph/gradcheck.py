"""Finite-difference verification of every analytic gradient in the package.

Each component pairs an analytic gradient with the central-difference oracle
on randomly drawn instances and reports the worst elementwise relative error
(relative to max(1, |analytic|)). The episode objective is checked through
the full pipeline: encoder, graph layer, warm start, unrolled chain with
fixed noise, and the Monte Carlo prediction.
"""

from __future__ import annotations

import numpy as np

from .data import Episode
from .graph import build_knn_graph
from .likelihood import EncoderParams, support_log_likelihood_and_grad
from .numerics import RngStream, finite_difference_gradient, max_relative_error
from .prior import prior_log_density_and_grad
from .sampler import SamplerConfig, SupportStatistics, init_objective_and_grad
from .trainer import (
    episode_loss,
    episode_objective_and_grads,
    init_params,
    param_arrays,
    params_to_vector,
    set_params_from_vector,
)


def random_episode(gen: np.random.Generator, n_way: int, k_shot: int, q_per: int, d: int,
                   n_relations: int) -> Episode:
    """Episode with standard-normal features over randomly chosen targets."""
    targets = [int(r) for r in gen.choice(n_relations, size=n_way, replace=False)]
    support_y = np.repeat(np.arange(n_way), k_shot)
    query_y = np.repeat(np.arange(n_way), q_per)
    return Episode(
        targets=targets,
        support_x=gen.standard_normal((n_way * k_shot, d)),
        support_y=support_y,
        query_x=gen.standard_normal((n_way * q_per, d)),
        query_y=query_y,
    )


def check_prior(gen, n_way: int, d: int) -> float:
    v = gen.standard_normal((n_way, d))
    h = gen.standard_normal((n_way, d))
    _, grad = prior_log_density_and_grad(v, h)
    fd = finite_difference_gradient(lambda x: prior_log_density_and_grad(x, h)[0], v)
    return max_relative_error(grad, fd)


def check_support_likelihood(gen, n_way: int, k_shot: int, d: int, measure: str,
                             tau: float) -> float:
    x = gen.standard_normal((n_way * k_shot, d))
    y = np.repeat(np.arange(n_way), k_shot)
    v = gen.standard_normal((n_way, d))
    encoder = EncoderParams(mode="identity")
    _, grad = support_log_likelihood_and_grad(x, y, v, encoder, measure, tau)
    fd = finite_difference_gradient(
        lambda p: support_log_likelihood_and_grad(x, y, p, encoder, measure, tau)[0], v
    )
    return max_relative_error(grad, fd)


def check_init_objective(gen, n_way: int, d: int) -> float:
    stats = SupportStatistics(
        class_means=gen.standard_normal((n_way, d)),
        grand_mean=gen.standard_normal(d),
    )
    h = gen.standard_normal((n_way, d))
    v = gen.standard_normal((n_way, d))
    _, grad = init_objective_and_grad(v, stats, h)
    fd = finite_difference_gradient(lambda x: init_objective_and_grad(x, stats, h)[0], v)
    return max_relative_error(grad, fd)


def check_episode_objective(seed: int, case: int, d: int, n_way: int, k_shot: int,
                            q_per: int, chains: int, steps: int, measure: str,
                            tau: float) -> float:
    gen = RngStream(seed).child(40, case).generator()
    n_relations = n_way + 3
    embeddings = gen.standard_normal((n_relations, d))
    graph = build_knn_graph(embeddings, k=2)
    episode = random_episode(gen, n_way, k_shot, q_per, d, n_relations)
    params = init_params(
        graph_dim=d, output_dim=d, rng=RngStream(seed).child(41, case),
        encoder_mode="linear", encoder_input_dim=d,
    )
    config = SamplerConfig(
        chains=chains, steps=steps, step_size=0.1, tau=tau, measure=measure,
        noise_enabled=True,
    )
    chain_rng = RngStream(seed).child(42, case)

    _, grads = episode_objective_and_grads(episode, graph, params, config, chain_rng)
    analytic = np.concatenate([grads[name].ravel() for name in param_arrays(params)])

    def loss_at(vec: np.ndarray) -> float:
        set_params_from_vector(params, vec)
        return episode_loss(episode, graph, params, config, chain_rng)

    base = params_to_vector(params)
    fd = finite_difference_gradient(loss_at, base)
    set_params_from_vector(params, base)
    return max_relative_error(analytic, fd)


def run_gradient_checks(
    seed: int = 0,
    d: int = 3,
    cases: int = 5,
    n_way: int = 2,
    k_shot: int = 1,
    q_per: int = 2,
    chains: int = 2,
    steps: int = 2,
    tau: float = 10.0,
) -> dict[str, float]:
    """Worst relative error per component over ``cases`` random instances."""
    results: dict[str, float] = {}

    gen = RngStream(seed).child(30).generator()
    results["prior"] = max(check_prior(gen, n_way, d) for _ in range(cases))
    results["init-objective"] = max(
        check_init_objective(gen, n_way, d) for _ in range(cases)
    )
    for measure in ("dot", "euclidean"):
        results[f"support-likelihood-{measure}"] = max(
            check_support_likelihood(gen, n_way, max(k_shot, 2), d, measure, tau)
            for _ in range(cases)
        )
    for measure in ("dot", "euclidean"):
        results[f"episode-objective-{measure}"] = max(
            check_episode_objective(
                seed, case, d, n_way, k_shot, q_per, chains, steps, measure, tau
            )
            for case in range(cases)
        )
    return results
