"""Physical-layer model: steering vectors, per-subcarrier link channels,
and the cascaded BS-RIS-user channel matrix.

All functions here are pure and operate in double-precision complex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class SystemConfig:
    """Array geometry, subcarrier grid and path counts for one scenario family."""

    m: int                      # BS antenna count (ULA)
    l_h: int                    # RIS horizontal element count
    l_v: int                    # RIS vertical element count
    k: int                      # subcarrier count
    f_c: float                  # carrier frequency [Hz]
    bandwidth: float            # OFDM bandwidth [Hz]
    d_over_lambda: float = 0.5  # element spacing / carrier wavelength
    p_h: int = 3                # BS-RIS path count
    p_g: int = 3                # RIS-user path count

    def __post_init__(self):
        if self.m < 1 or self.l_h < 1 or self.l_v < 1 or self.k < 1:
            raise ValueError("array/grid dimensions must be >= 1")
        if self.p_h < 1 or self.p_g < 1:
            raise ValueError("path counts must be >= 1")
        if not (self.f_c > 0 and self.bandwidth > 0 and self.d_over_lambda > 0):
            raise ValueError("f_c, bandwidth and d_over_lambda must be positive")

    @property
    def l(self) -> int:
        return self.l_h * self.l_v

    @property
    def t_s(self) -> float:
        """Sample period, 1/bandwidth."""
        return 1.0 / self.bandwidth

    def to_dict(self) -> dict:
        return {
            "m": self.m, "l_h": self.l_h, "l_v": self.l_v, "k": self.k,
            "f_c": self.f_c, "bandwidth": self.bandwidth,
            "d_over_lambda": self.d_over_lambda,
            "p_h": self.p_h, "p_g": self.p_g,
        }

    @staticmethod
    def from_dict(d: dict) -> "SystemConfig":
        return SystemConfig(
            m=int(d["m"]), l_h=int(d["l_h"]), l_v=int(d["l_v"]), k=int(d["k"]),
            f_c=float(d["f_c"]), bandwidth=float(d["bandwidth"]),
            d_over_lambda=float(d["d_over_lambda"]),
            p_h=int(d["p_h"]), p_g=int(d["p_g"]),
        )

    def shifted(self, delta_f: float) -> "SystemConfig":
        """Config at carrier f_c + delta_f with the same physical element spacing.

        The spacing d is fixed hardware, so d/lambda scales with the carrier.
        """
        factor = (self.f_c + delta_f) / self.f_c
        return SystemConfig(
            m=self.m, l_h=self.l_h, l_v=self.l_v, k=self.k,
            f_c=self.f_c + delta_f, bandwidth=self.bandwidth,
            d_over_lambda=self.d_over_lambda * factor,
            p_h=self.p_h, p_g=self.p_g,
        )


@dataclass
class PathParams:
    """One scattering path: complex gain, delay and arrival/departure angles."""

    gain: complex
    delay: float          # seconds
    azimuth: float        # theta [rad]
    elevation: float      # phi [rad]
    departure: Optional[float] = None  # psi [rad], BS side only

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("delay must be non-negative")
        angles = [self.azimuth, self.elevation]
        if self.departure is not None:
            angles.append(self.departure)
        if not all(math.isfinite(a) for a in angles):
            raise ValueError("angles must be finite")


@dataclass
class ScenarioParams:
    """One user's multipath realization for both links."""

    bs_ris_paths: list = field(default_factory=list)
    ris_user_paths: list = field(default_factory=list)


@dataclass
class CascadedChannel:
    """Complex (M*L) x K matrix; column k is the column-stacked cascaded C_k."""

    data: np.ndarray
    config: SystemConfig

    def __post_init__(self):
        expect = (self.config.m * self.config.l, self.config.k)
        if self.data.shape != expect:
            raise ValueError(f"cascaded channel shape {self.data.shape} != {expect}")


def ula_steering(psi: float, m: int, d_over_lambda: float) -> np.ndarray:
    """BS-side ULA response; entry i = (1/sqrt(M)) exp(+j 2 pi (d/lambda) i sin(psi))."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if not math.isfinite(psi):
        raise ValueError("angle must be finite")
    idx = np.arange(m)
    return np.exp(1j * 2 * np.pi * d_over_lambda * idx * np.sin(psi)) / np.sqrt(m)


def upa_steering(phi: float, theta: float, l_h: int, l_v: int,
                 d_over_lambda: float) -> np.ndarray:
    """RIS-side UPA response, Kronecker product of elevation and azimuth factors.

    Unit-modulus entries, no normalization.
    """
    if l_h < 1 or l_v < 1:
        raise ValueError("l_h and l_v must be >= 1")
    if not (math.isfinite(phi) and math.isfinite(theta)):
        raise ValueError("angles must be finite")
    a_el = np.exp(-1j * 2 * np.pi * d_over_lambda * np.arange(l_v) * np.cos(phi))
    a_az = np.exp(-1j * 2 * np.pi * d_over_lambda * np.arange(l_h)
                  * np.sin(phi) * np.cos(theta))
    return np.kron(a_el, a_az)


def _delay_phase(k: int, delay: float, config: SystemConfig) -> complex:
    return np.exp(-1j * 2 * np.pi * k * delay / (config.k * config.t_s))


def bs_ris_channel(config: SystemConfig, paths: list, k: int) -> np.ndarray:
    """L x M channel between BS and RIS at subcarrier k."""
    if not 0 <= k < config.k:
        raise IndexError(f"subcarrier index {k} out of range [0, {config.k})")
    h = np.zeros((config.l, config.m), dtype=complex)
    for p in paths:
        a_r = upa_steering(p.elevation, p.azimuth, config.l_h, config.l_v,
                           config.d_over_lambda)
        a_t = ula_steering(p.departure, config.m, config.d_over_lambda)
        h += p.gain * _delay_phase(k, p.delay, config) * np.outer(a_r, a_t.conj())
    return h / np.sqrt(config.k)


def ris_user_channel(config: SystemConfig, paths: list, k: int) -> np.ndarray:
    """Length-L RIS-to-user channel column g_k at subcarrier k.

    The physical channel is the row g_k^H; this returns its conjugate transpose,
    so the gain and delay phase enter conjugated while the steering vector does not.
    """
    if not 0 <= k < config.k:
        raise IndexError(f"subcarrier index {k} out of range [0, {config.k})")
    g = np.zeros(config.l, dtype=complex)
    for p in paths:
        a_t = upa_steering(p.elevation, p.azimuth, config.l_h, config.l_v,
                           config.d_over_lambda)
        g += np.conj(p.gain * _delay_phase(k, p.delay, config)) * a_t
    return g / np.sqrt(config.k)


def cascaded_channel_k(h_k: np.ndarray, g_k: np.ndarray) -> np.ndarray:
    """C_k = diag(g_k) H_k; row l of H_k scaled by g_k[l]."""
    if h_k.ndim != 2 or g_k.ndim != 1 or h_k.shape[0] != g_k.shape[0]:
        raise ValueError(f"shape mismatch: H {h_k.shape}, g {g_k.shape}")
    return g_k[:, None] * h_k


def assemble_cascaded(config: SystemConfig, scenario: ScenarioParams) -> CascadedChannel:
    """Full (M*L) x K cascaded channel; column k = vec(C_k), column-stacked.

    Entry (m*L + l, k) equals C_k[l, m].
    """
    if len(scenario.bs_ris_paths) != config.p_h:
        raise ValueError("BS-RIS path count does not match config")
    if len(scenario.ris_user_paths) != config.p_g:
        raise ValueError("RIS-user path count does not match config")
    out = np.empty((config.m * config.l, config.k), dtype=complex)
    for k in range(config.k):
        h_k = bs_ris_channel(config, scenario.bs_ris_paths, k)
        g_k = ris_user_channel(config, scenario.ris_user_paths, k)
        c_k = cascaded_channel_k(h_k, g_k)
        out[:, k] = c_k.flatten(order="F")
    return CascadedChannel(data=out, config=config)
