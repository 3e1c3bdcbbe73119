"""Denoising-diffusion math: squared-cosine schedule, forward noising, and
an eta-interpolated reverse sampler (eta=0 deterministic, eta=1 ancestral).

The sampler is network-agnostic: it takes a ``predict(a_k, k) -> eps_hat``
callable, so tests can drive it with closed-form oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "NoiseSchedule",
    "cosine_schedule",
    "forward_noise",
    "inference_timesteps",
    "ddim_sample",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative-product noise tables for K forward steps.

    ``alpha_bar[k]`` is defined for k in [0, K] with ``alpha_bar[0] == 1``;
    ``beta[k]`` for k in [1, K] (index 0 unused).
    """

    K: int
    s: float
    alpha_bar: np.ndarray  # (K+1,)
    beta: np.ndarray  # (K+1,), beta[0] = 0

    def __post_init__(self) -> None:
        if self.alpha_bar[0] != 1.0:
            raise ValueError("alpha_bar[0] must be exactly 1")
        if not np.all(np.diff(self.alpha_bar) < 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if not (np.all(self.beta[1:] > 0) and np.all(self.beta[1:] <= 0.999)):
            raise ValueError("beta values must lie in (0, 0.999]")


def cosine_schedule(K: int, s: float = 0.008) -> NoiseSchedule:
    """Squared-cosine schedule: f(k) = cos^2(((k/K + s)/(1 + s)) * pi/2)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    k = np.arange(K + 1, dtype=float)
    f = np.cos(((k / K + s) / (1.0 + s)) * np.pi / 2.0) ** 2
    alpha_bar = f / f[0]
    alpha_bar[0] = 1.0
    beta = np.zeros(K + 1)
    beta[1:] = np.minimum(1.0 - alpha_bar[1:] / alpha_bar[:-1], 0.999)
    # Keep alpha_bar consistent with the clipped betas.
    alpha_bar[1:] = np.cumprod(1.0 - beta[1:])
    return NoiseSchedule(K=K, s=s, alpha_bar=alpha_bar, beta=beta)


def forward_noise(
    a0: np.ndarray, k: np.ndarray | int, eps: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """DDPM forward process: A^k = sqrt(ab_k) A^0 + sqrt(1 - ab_k) eps.

    ``k`` may be a scalar or broadcastable integer array (per-sample steps).
    """
    ab = schedule.alpha_bar[np.asarray(k)]
    return np.sqrt(ab) * np.asarray(a0) + np.sqrt(1.0 - ab) * np.asarray(eps)


def inference_timesteps(K: int, k_inf: int) -> list[int]:
    """K_inf steps uniformly strided over [1, K], descending, ending at K."""
    if not 1 <= k_inf <= K:
        raise ValueError(f"k_inf must lie in [1, K]; got {k_inf} for K={K}")
    ks = [int(np.floor(i * K / k_inf + 0.5)) for i in range(1, k_inf + 1)]
    if len(set(ks)) != len(ks) or any(not 1 <= x <= K for x in ks):
        raise ValueError("inference stride produced invalid timesteps")
    return ks[::-1]


def ddim_sample(
    predict: Callable[[np.ndarray, int], np.ndarray],
    shape: Sequence[int],
    schedule: NoiseSchedule,
    k_inf: int,
    eta: float,
    rng: np.random.Generator,
    initial_noise: np.ndarray | None = None,
    clip: tuple[float, float] | None = None,
) -> np.ndarray:
    """Reverse denoising from Gaussian noise to a clean sample.

    Each step k -> k' projects the clean-sample estimate
    ``a0_hat = (a - sqrt(1 - ab_k) eps_hat) / sqrt(ab_k)`` and re-noises it
    to level k' with ``sigma = eta sqrt((1-ab_k')/(1-ab_k)) sqrt(1-ab_k/ab_k')``
    of fresh Gaussian noise (omitted on the final step, where sigma is 0
    anyway because ab_0 = 1). eta=0 makes the whole pass deterministic given
    the initial noise; eta=1 matches the ancestral update's posterior.

    ``clip`` bounds the clean-sample estimate each step; policy sampling
    uses the normalized action box [-1, 1], without which the 1/sqrt(ab_K)
    amplification blows up prediction error at the noisiest steps.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    ks = inference_timesteps(schedule.K, k_inf)
    a = rng.standard_normal(tuple(shape)) if initial_noise is None else np.array(initial_noise)
    ab = schedule.alpha_bar
    for i, k in enumerate(ks):
        k_next = ks[i + 1] if i + 1 < len(ks) else 0
        eps_hat = predict(a, k)
        a0_hat = (a - np.sqrt(1.0 - ab[k]) * eps_hat) / np.sqrt(ab[k])
        if clip is not None:
            a0_hat = np.clip(a0_hat, clip[0], clip[1])
        sigma = eta * np.sqrt((1.0 - ab[k_next]) / (1.0 - ab[k])) * np.sqrt(
            1.0 - ab[k] / ab[k_next]
        )
        a = np.sqrt(ab[k_next]) * a0_hat + np.sqrt(
            np.maximum(1.0 - ab[k_next] - sigma**2, 0.0)
        ) * eps_hat
        if i + 1 < len(ks) and sigma > 0.0:
            a = a + sigma * rng.standard_normal(a.shape)
    return a
