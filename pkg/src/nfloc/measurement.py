"""Noisy delay and Doppler observations.

The measurement model is deliberately simple: one additive zero-mean
Gaussian per observable per (anchor, slot, element) triple, with a single
shared sigma per observable type.  The sigmas come from the per-triple
information entries (median-aggregated) so that the simulated estimator
front end performs at its theoretical accuracy.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .channel import Channel
from .errors import ConfigurationError, ContractViolation
from .fisher import triple_blocks

# second Philox key word, fixed so that unrelated simulations that happen
# to share a user seed do not share streams
_STREAM_SALT = 0x6E666C6F



@dataclass(frozen=True)
class MeasurementSet:
    """One noisy snapshot of every (anchor, slot, element) observable."""

    delay_meas: np.ndarray  # (B, K, U) seconds
    doppler_meas: np.ndarray  # (B, K, U) Hz
    sigma_tau: float
    sigma_doppler: float
    seed: int

    def __post_init__(self):
        if not (self.sigma_tau > 0 and self.sigma_doppler > 0):
            raise ContractViolation("measurement sigmas must be positive")
        if self.delay_meas.shape != self.doppler_meas.shape:
            raise ContractViolation("delay and Doppler tables must share a shape")

    @property
    def num_triples(self) -> int:
        return int(np.prod(self.delay_meas.shape))

    def to_csv(self) -> str:
        """CSV dump with columns b, u, k (1-based) plus both observables."""
        buf = io.StringIO()
        buf.write("b,u,k,delay_meas,doppler_meas\n")
        nb, nk, nu = self.delay_meas.shape
        for b in range(nb):
            for k in range(nk):
                for u in range(nu):
                    buf.write(
                        f"{b + 1},{u + 1},{k + 1},"
                        f"{float(self.delay_meas[b, k, u])!r},{float(self.doppler_meas[b, k, u])!r}\n"
                    )
        return buf.getvalue()


def noise_floor_from_crlb(
    channel: Channel, per_triple: bool = False
) -> tuple[np.ndarray, np.ndarray] | tuple[float, float]:
    """Delay/Doppler sigmas from the per-triple information entries.

    Default returns scalar medians of 1/sqrt(F) across all triples, one
    for delays and one for Dopplers.  ``per_triple=True`` keeps the full
    tables instead, for sensitivity studies.
    """
    blocks = triple_blocks(channel)
    f_tt = blocks[..., 0, 0]
    f_ff = blocks[..., 1, 1]
    if np.any(f_tt <= 0) or np.any(f_ff <= 0):
        raise ConfigurationError(
            "non-positive information entry; cannot derive measurement sigmas"
        )
    sig_tau = 1.0 / np.sqrt(f_tt)
    sig_dop = 1.0 / np.sqrt(f_ff)
    if per_triple:
        return sig_tau, sig_dop
    return float(np.median(sig_tau)), float(np.median(sig_dop))


def _triple_normals(seed: int, shape: tuple[int, int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Per-triple standard normals from counter-based streams.

    Each (anchor, slot, element) triple owns its own Philox counter, so
    the draw for a triple depends only on (seed, b, u, k, stream) and not
    on how many triples exist or in what order they are generated.
    """
    nb, nk, nu = shape
    z_tau = np.empty(shape)
    z_dop = np.empty(shape)
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, _STREAM_SALT], dtype=np.uint64)
    for b in range(nb):
        for k in range(nk):
            for u in range(nu):
                bits = np.random.Philox(
                    key=key,
                    counter=np.array([b + 1, u + 1, k + 1, 0], dtype=np.uint64),
                )
                z = np.random.Generator(bits).standard_normal(2)
                z_tau[b, k, u] = z[0]
                z_dop[b, k, u] = z[1]
    return z_tau, z_dop


def sample(channel: Channel, sigmas: tuple[float, float], seed: int) -> MeasurementSet:
    """Draw one noisy measurement set around the true channel tables."""
    sigma_tau, sigma_doppler = float(sigmas[0]), float(sigmas[1])
    if not (sigma_tau > 0 and sigma_doppler > 0):
        raise ContractViolation("sigmas must be positive")
    shape = channel.tables.delay.shape
    z_tau, z_dop = _triple_normals(int(seed), shape)
    return MeasurementSet(
        delay_meas=channel.tables.delay + sigma_tau * z_tau,
        doppler_meas=channel.tables.doppler + sigma_doppler * z_dop,
        sigma_tau=sigma_tau,
        sigma_doppler=sigma_doppler,
        seed=int(seed),
    )


def sample_auto(channel: Channel, seed: int) -> MeasurementSet:
    """Sample with sigmas taken from the information-entry noise floor."""
    return sample(channel, noise_floor_from_crlb(channel), seed)
