"""Dataset construction: scenario randomization, RIS element sub-sampling
masks, (masked input, full label) pairs, normalization and binary persistence.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .channel import (CascadedChannel, PathParams, ScenarioParams,
                      SystemConfig, assemble_cascaded)

MAGIC = b"RISEXT01"

_MASK64 = (1 << 64) - 1


def mix64(seed: int, index: int) -> int:
    """SplitMix64-style mixing of (seed, index) into one 64-bit stream seed."""
    z = (seed + 0x9E3779B97F4A7C15 * (index + 1)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class UnsupportedRateError(ValueError):
    pass


class DegenerateDataError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass
class SamplingPattern:
    """Regular on/off grid over the L_h x L_v RIS lattice."""

    mask: np.ndarray          # bool[L], kron(vertical, horizontal) element order
    rate: Fraction
    stride_h: int
    stride_v: int

    @property
    def n_selected(self) -> int:
        return int(np.count_nonzero(self.mask))


def uniform_pattern(l_h: int, l_v: int, r) -> SamplingPattern:
    """Uniform sub-sampling pattern at rate r = N/L.

    1/r must factor into integer strides (s_h, s_v) with s_h >= s_v, the larger
    stride assigned horizontally, s_h | l_h and s_v | l_v.
    """
    r = Fraction(r).limit_denominator(10 ** 6)
    if not 0 < r <= 1:
        raise UnsupportedRateError(f"rate {r} outside (0, 1]")
    inv = 1 / r
    if inv.denominator != 1:
        raise UnsupportedRateError(f"1/r = {inv} is not an integer")
    s = inv.numerator
    # smallest divisor of s that is >= sqrt(s) goes to the horizontal stride
    s_h = min(d for d in range(1, s + 1) if s % d == 0 and d * d >= s)
    s_v = s // s_h
    if l_h % s_h != 0 or l_v % s_v != 0:
        raise UnsupportedRateError(
            f"strides ({s_h}, {s_v}) for rate {r} do not divide grid ({l_h}, {l_v})")
    rows_on = np.arange(l_v) % s_v == 0
    cols_on = np.arange(l_h) % s_h == 0
    mask = np.kron(rows_on, cols_on).astype(bool)
    return SamplingPattern(mask=mask, rate=r, stride_h=s_h, stride_v=s_v)


@dataclass
class SynthDistribution:
    """Parameters of the randomized multipath draw."""

    delay_span_frac: float = 0.125   # delays uniform on [0, frac * K * T_s]
    azimuth_lo: float = -math.pi / 2
    azimuth_hi: float = math.pi / 2
    elevation_lo: float = math.pi / 4
    elevation_hi: float = 3 * math.pi / 4

    def to_dict(self) -> dict:
        return {
            "delay_span_frac": self.delay_span_frac,
            "azimuth_lo": self.azimuth_lo, "azimuth_hi": self.azimuth_hi,
            "elevation_lo": self.elevation_lo, "elevation_hi": self.elevation_hi,
        }

    @staticmethod
    def from_dict(d: dict) -> "SynthDistribution":
        return SynthDistribution(**{k: float(v) for k, v in d.items()})


def _draw_paths(rng, config: SystemConfig, dist: SynthDistribution,
                count: int, with_departure: bool) -> list:
    paths = []
    delay_span = dist.delay_span_frac * config.k * config.t_s
    sigma = math.sqrt(1.0 / (2 * count))  # per-component std for CN(0, 1/P)
    for _ in range(count):
        gain = complex(rng.normal(0, sigma), rng.normal(0, sigma))
        delay = rng.uniform(0, delay_span)
        azimuth = rng.uniform(dist.azimuth_lo, dist.azimuth_hi)
        elevation = rng.uniform(dist.elevation_lo, dist.elevation_hi)
        departure = rng.uniform(-math.pi / 2, math.pi / 2) if with_departure else None
        paths.append(PathParams(gain=gain, delay=delay, azimuth=azimuth,
                                elevation=elevation, departure=departure))
    return paths


def sample_scenario(config: SystemConfig, dist: SynthDistribution,
                    rng: np.random.Generator) -> ScenarioParams:
    """Draw one user's multipath realization from the declared distributions."""
    return ScenarioParams(
        bs_ris_paths=_draw_paths(rng, config, dist, config.p_h, True),
        ris_user_paths=_draw_paths(rng, config, dist, config.p_g, False),
    )


@dataclass
class SamplePair:
    """Network input (masked, scaled, real/imag-stacked) and its full label."""

    z_in: np.ndarray   # float64 (M*L, K, 2)
    z_ta: np.ndarray
    scenario_id: int


def channel_to_planes(c: np.ndarray) -> np.ndarray:
    """Complex (ML, K) -> real (ML, K, 2) with real/imag planes."""
    return np.stack([c.real, c.imag], axis=-1)


def planes_to_channel(z: np.ndarray) -> np.ndarray:
    return z[..., 0] + 1j * z[..., 1]


def row_mask(pattern: SamplingPattern, m: int) -> np.ndarray:
    """Boolean mask over the M*L rows; element l covers rows m*L + l."""
    return np.tile(pattern.mask, m)


def build_pair(channel: CascadedChannel, pattern: SamplingPattern, scale: float,
               noise_std: float = 0.0, rng=None, scenario_id: int = 0) -> SamplePair:
    """Label = scaled real/imag planes of C; input = same with the rows of
    non-selected RIS elements zeroed, plus optional noise on surviving entries.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    cfg = channel.config
    if pattern.mask.shape[0] != cfg.l:
        raise ValueError("pattern length does not match RIS size")
    z_ta = channel_to_planes(channel.data) * scale
    rows = row_mask(pattern, cfg.m)
    z_in = np.where(rows[:, None, None], z_ta, 0.0)
    if noise_std > 0:
        if rng is None:
            raise ValueError("noise_std > 0 requires an rng")
        noise = rng.normal(0, noise_std, size=z_in.shape)
        z_in = z_in + np.where(rows[:, None, None], noise, 0.0)
    return SamplePair(z_in=z_in, z_ta=z_ta, scenario_id=scenario_id)


def compute_scale(channels: list) -> float:
    """1 / RMS of |C| entries over the training channels."""
    if not channels:
        raise DegenerateDataError("empty training set")
    total = 0.0
    count = 0
    for ch in channels:
        data = ch.data if isinstance(ch, CascadedChannel) else ch
        total += float(np.sum(np.abs(data) ** 2))
        count += data.size
    rms = math.sqrt(total / count)
    if rms == 0:
        raise DegenerateDataError("all-zero training set")
    return 1.0 / rms


def split(items: list, rng: np.random.Generator):
    """Shuffled 4:1 split; train gets ceil(0.8 n), test the rest."""
    n = len(items)
    order = rng.permutation(n)
    n_train = math.ceil(0.8 * n)
    train = [items[i] for i in order[:n_train]]
    test = [items[i] for i in order[n_train:]]
    return train, test


@dataclass
class DatasetManifest:
    config: SystemConfig
    pattern: SamplingPattern
    n_train: int
    n_test: int
    scale: float
    base_seed: int
    noise_std: float = 0.0
    dist: SynthDistribution = field(default_factory=SynthDistribution)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "rate": str(self.pattern.rate),
            "stride_h": self.pattern.stride_h,
            "stride_v": self.pattern.stride_v,
            "n_train": self.n_train, "n_test": self.n_test,
            "scale": self.scale, "base_seed": self.base_seed,
            "noise_std": self.noise_std,
            "dist": self.dist.to_dict(),
            "dtype": "f64", "layout": "row-major ML x K x 2",
        }


@dataclass
class Dataset:
    manifest: DatasetManifest
    train: list
    test: list


# offset of the per-sample noise streams within the base seed's stream space,
# kept clear of the scenario streams indexed 0..n-1
_NOISE_STREAM_OFFSET = 1 << 32
_SPLIT_STREAM_INDEX = (1 << 33) + 1


def generate_dataset(config: SystemConfig, rate, n_samples: int, base_seed: int,
                     noise_std: float = 0.0,
                     dist: SynthDistribution | None = None,
                     target_config: SystemConfig | None = None) -> Dataset:
    """Generate a reproducible dataset of (masked input, full label) pairs.

    When target_config is given, labels come from the same scenarios re-evaluated
    under it (frequency-gap studies); inputs always come from `config`.
    """
    dist = dist or SynthDistribution()
    pattern = uniform_pattern(config.l_h, config.l_v, rate)
    channels = []
    targets = []
    for i in range(n_samples):
        rng = np.random.default_rng(mix64(base_seed, i))
        scenario = sample_scenario(config, dist, rng)
        channels.append((i, assemble_cascaded(config, scenario)))
        if target_config is not None:
            targets.append(assemble_cascaded(target_config, scenario))
    split_rng = np.random.default_rng(mix64(base_seed, _SPLIT_STREAM_INDEX))
    idx_train, idx_test = split(list(range(n_samples)), split_rng)
    label_of = (lambda i: targets[i]) if target_config is not None \
        else (lambda i: channels[i][1])
    scale = compute_scale([label_of(i) for i in idx_train])

    def make(i):
        noise_rng = np.random.default_rng(
            mix64(base_seed, _NOISE_STREAM_OFFSET + i)) if noise_std > 0 else None
        pair = build_pair(channels[i][1], pattern, scale, noise_std,
                          rng=noise_rng, scenario_id=i)
        if target_config is not None:
            pair.z_ta = channel_to_planes(label_of(i).data) * scale
        return pair

    manifest = DatasetManifest(config=config, pattern=pattern,
                               n_train=len(idx_train), n_test=len(idx_test),
                               scale=scale, base_seed=base_seed,
                               noise_std=noise_std, dist=dist)
    return Dataset(manifest=manifest,
                   train=[make(i) for i in idx_train],
                   test=[make(i) for i in idx_test])


def save_dataset(path, dataset: Dataset) -> None:
    """Binary dump: magic, length-prefixed JSON manifest, z_ta payloads
    (train then test, each with its scenario id), then the element mask.
    """
    man = dataset.manifest.to_dict()
    man["scenario_ids"] = [p.scenario_id for p in dataset.train + dataset.test]
    blob = json.dumps(man, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(blob).to_bytes(4, "little"))
        f.write(blob)
        for pair in dataset.train + dataset.test:
            f.write(np.ascontiguousarray(pair.z_ta, dtype="<f8").tobytes())
        f.write(dataset.manifest.pattern.mask.astype(np.uint8).tobytes())


def _read_manifest(f) -> dict:
    magic = f.read(8)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}")
    raw = f.read(4)
    if len(raw) != 4:
        raise DatasetFormatError("truncated manifest length")
    length = int.from_bytes(raw, "little")
    blob = f.read(length)
    if len(blob) != length:
        raise DatasetFormatError("truncated manifest")
    return json.loads(blob)


def _manifest_from_dict(man: dict) -> DatasetManifest:
    config = SystemConfig.from_dict(man["config"])
    pattern = uniform_pattern(config.l_h, config.l_v, Fraction(man["rate"]))
    if (pattern.stride_h, pattern.stride_v) != (man["stride_h"], man["stride_v"]):
        raise DatasetFormatError("stride mismatch between manifest and rate rule")
    return DatasetManifest(config=config, pattern=pattern,
                           n_train=int(man["n_train"]), n_test=int(man["n_test"]),
                           scale=float(man["scale"]),
                           base_seed=int(man["base_seed"]),
                           noise_std=float(man["noise_std"]),
                           dist=SynthDistribution.from_dict(man["dist"]))


def load_manifest(path) -> DatasetManifest:
    """Read the header only; tensor payloads stay on disk."""
    with open(path, "rb") as f:
        return _manifest_from_dict(_read_manifest(f))


def load_dataset(path) -> Dataset:
    """Inverse of save_dataset; z_in is rebuilt from z_ta, mask and noise seed."""
    with open(path, "rb") as f:
        man = _read_manifest(f)
        manifest = _manifest_from_dict(man)
        cfg = manifest.config
        shape = (cfg.m * cfg.l, cfg.k, 2)
        n = manifest.n_train + manifest.n_test
        ids = man["scenario_ids"]
        if len(ids) != n:
            raise DatasetFormatError("scenario id count mismatch")
        count = int(np.prod(shape))
        pairs = []
        for sid in ids:
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise DatasetFormatError("truncated tensor payload")
            z_ta = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            pairs.append((sid, z_ta))
        mask_raw = f.read(cfg.l)
        if len(mask_raw) != cfg.l:
            raise DatasetFormatError("truncated mask payload")
        mask = np.frombuffer(mask_raw, dtype=np.uint8).astype(bool)
        if not np.array_equal(mask, manifest.pattern.mask):
            raise DatasetFormatError("stored mask disagrees with manifest rate")

    rows = row_mask(manifest.pattern, cfg.m)

    def rebuild(sid, z_ta):
        z_in = np.where(rows[:, None, None], z_ta, 0.0)
        if manifest.noise_std > 0:
            rng = np.random.default_rng(
                mix64(manifest.base_seed, _NOISE_STREAM_OFFSET + sid))
            noise = rng.normal(0, manifest.noise_std, size=z_in.shape)
            z_in = z_in + np.where(rows[:, None, None], noise, 0.0)
        return SamplePair(z_in=z_in, z_ta=z_ta, scenario_id=sid)

    built = [rebuild(sid, z) for sid, z in pairs]
    return Dataset(manifest=manifest,
                   train=built[:manifest.n_train],
                   test=built[manifest.n_train:])


def manifest_csv_row(manifest: DatasetManifest) -> dict:
    cfg = manifest.config
    return {
        "m": cfg.m, "l_h": cfg.l_h, "l_v": cfg.l_v, "k": cfg.k,
        "f_c": cfg.f_c, "rate": str(manifest.pattern.rate),
        "n_train": manifest.n_train, "n_test": manifest.n_test,
        "scale": manifest.scale, "base_seed": manifest.base_seed,
        "noise_std": manifest.noise_std,
    }
