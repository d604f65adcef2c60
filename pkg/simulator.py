"""
Panel simulation for the dynamic factor model
Draws subjects through the transition recursion and records their item responses at every wave
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from config import RuntimeConfig
from dynamic_model import ModelSpec
from exceptions import InvalidInputError
from linalg_core import symmetric_sqrt

logger = logging.getLogger(__name__)

MAX_SEED = 2 ** 64


@dataclass(frozen=True, eq=False)
class TrajectoryPanel:
    """Observed item responses indexed (subject, wave, item), wave 0 being the initial state"""
    observations: np.ndarray
    seed: Optional[int] = None
    latents: Optional[np.ndarray] = None  # (subject, wave, factor), kept only on request

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim != 3 or min(obs.shape) < 1:
            raise InvalidInputError(f"Panel observations must be (subjects, waves, items), got {obs.shape}")
        if self.latents is not None:
            lat = np.asarray(self.latents, dtype=float)
            if lat.ndim != 3 or lat.shape[:2] != obs.shape[:2]:
                raise InvalidInputError("Panel latents must share the (subjects, waves) shape of observations")
            object.__setattr__(self, 'latents', lat)
        object.__setattr__(self, 'observations', obs)

    @property
    def n_subjects(self) -> int:
        return self.observations.shape[0]

    @property
    def n_waves(self) -> int:
        return self.observations.shape[1]

    @property
    def n_items(self) -> int:
        return self.observations.shape[2]

    def wave(self, t: int) -> np.ndarray:
        """(subjects, items) responses at wave t"""
        if not 0 <= t < self.n_waves:
            raise InvalidInputError(f"Wave {t} outside the panel's range 0..{self.n_waves - 1}")
        return self.observations[:, t, :]

    def to_frame(self) -> pd.DataFrame:
        """One row per (subject, wave) with columns subject, wave, item_1..item_p"""
        n, waves, p = self.observations.shape
        frame = pd.DataFrame(
            self.observations.reshape(n * waves, p),
            columns=[f"item_{i}" for i in range(1, p + 1)],
        )
        frame.insert(0, 'wave', np.tile(np.arange(waves), n))
        frame.insert(0, 'subject', np.repeat(np.arange(n), waves))
        return frame


def _subject_draws(seed: int, subject: int, n_waves: int, m: int, p: int) -> Tuple[np.ndarray, np.ndarray]:
    # one PCG64 substream per subject, so the panel does not depend on the thread count
    rng = np.random.default_rng(np.random.SeedSequence([seed, subject]))
    return rng.standard_normal((n_waves, m)), rng.standard_normal((n_waves, p))


def simulate_panel(spec: ModelSpec, n_waves: int, n_subjects: int, seed: int,
                   threads: Optional[int] = None, keep_latents: bool = False,
                   psd_tol: float = 1e-10) -> TrajectoryPanel:
    """
    Simulate n_subjects independent trajectories of waves 0..n_waves-1.

    eta^0 ~ N(mu0, Sigma0), eta^t = B eta^(t-1) + W^t with W^t ~ N(0, rho^t Sigma_w),
    and Y^t = L eta^t + eps with fresh eps ~ N(0, I) at every wave.
    """
    if not isinstance(n_waves, (int, np.integer)) or n_waves < 1:
        raise InvalidInputError(f"n_waves must be a positive integer, got {n_waves!r}")
    if not isinstance(n_subjects, (int, np.integer)) or n_subjects < 1:
        raise InvalidInputError(f"n_subjects must be a positive integer, got {n_subjects!r}")
    if not isinstance(seed, (int, np.integer)) or not 0 <= seed < MAX_SEED:
        raise InvalidInputError(f"seed must be a 64-bit unsigned integer, got {seed!r}")

    spec.require_valid(psd_tol=psd_tol)
    initial_root = symmetric_sqrt(spec.initial_cov, psd_tol, "sigma0")
    noise_root = symmetric_sqrt(spec.noise_base, psd_tol, "sigma_w")

    workers = threads if threads else RuntimeConfig.from_env().worker_count()
    m, p = spec.m, spec.p
    logger.info("Simulating %d subjects over %d waves (%d items, %d factors) with %d workers",
                n_subjects, n_waves, p, m, workers)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        draws = list(pool.map(
            lambda subject: _subject_draws(int(seed), subject, n_waves, m, p),
            range(n_subjects),
        ))
    latent_shocks = np.stack([d[0] for d in draws])
    errors = np.stack([d[1] for d in draws])

    b = spec.transition
    lam = spec.loadings
    observations = np.empty((n_subjects, n_waves, p))
    latents = np.empty((n_subjects, n_waves, m)) if keep_latents else None

    eta = spec.initial_mean + latent_shocks[:, 0, :] @ initial_root.T
    for t in range(n_waves):
        if t > 0:
            scale = np.sqrt(spec.noise_decay ** t)
            eta = eta @ b.T + scale * (latent_shocks[:, t, :] @ noise_root.T)
        observations[:, t, :] = eta @ lam.T + errors[:, t, :]
        if keep_latents:
            latents[:, t, :] = eta

    return TrajectoryPanel(observations=observations, seed=int(seed), latents=latents)
