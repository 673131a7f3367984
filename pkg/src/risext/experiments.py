"""Experiment runners: the sampling-rate sweep and the frequency-gap study,
with CSV/JSON result emission.

Each cell (architecture, rate or gap, seed index) trains a fresh model on a
deterministically derived dataset, so cells can run in any order or in
parallel without changing results.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, replace
from fractions import Fraction
from multiprocessing import Pool

from .channel import SystemConfig
from .data import SynthDistribution, generate_dataset, mix64
from .network import Model, ModelSpec, save_model
from .training import TrainHistory, TrainingConfig, train


@dataclass
class CellResult:
    arch: str
    rate: str            # sampling rate, or frequency gap in Hz for gap studies
    seed_index: int
    data_seed: int
    model_seed: int
    history: TrainHistory

    @property
    def final_train_loss(self) -> float:
        return self.history.train_loss[-1]

    @property
    def final_test_loss(self) -> float:
        return self.history.test_loss[-1]

    @property
    def final_nmse_db(self) -> float:
        return self.history.test_nmse_db[-1]


@dataclass(frozen=True)
class _CellJob:
    sys_config: SystemConfig
    target_config: SystemConfig | None
    rate: Fraction
    label: str
    n_samples: int
    noise_std: float
    arch: str
    channels: int
    blocks: int
    train_config: TrainingConfig
    dist: SynthDistribution | None
    seed_index: int
    data_seed: int
    model_seed: int
    checkpoint_path: str | None


def _run_cell(job: _CellJob) -> CellResult:
    dataset = generate_dataset(job.sys_config, job.rate, job.n_samples,
                               job.data_seed, noise_std=job.noise_std,
                               dist=job.dist, target_config=job.target_config)
    spec = ModelSpec(arch=job.arch, channels=job.channels, blocks=job.blocks)
    model = Model(spec, job.model_seed)
    cfg = replace(job.train_config, seed=job.model_seed)
    history = train(model, dataset, cfg)
    if job.checkpoint_path:
        save_model(job.checkpoint_path, model)
    return CellResult(arch=job.arch, rate=job.label, seed_index=job.seed_index,
                      data_seed=job.data_seed, model_seed=job.model_seed,
                      history=history)


def _run_jobs(jobs, n_workers: int):
    if n_workers > 1:
        with Pool(n_workers) as pool:
            return pool.map(_run_cell, jobs)
    return [_run_cell(j) for j in jobs]


def _worker_cap(requested: int) -> int:
    cap = os.environ.get("RISEXT_THREADS")
    return min(requested, int(cap)) if cap else requested


def run_rate_sweep(archs, rates, sys_config: SystemConfig, n_samples: int,
                   train_config: TrainingConfig, n_seeds: int = 1,
                   channels: int = 16, blocks: int = 1, base_seed: int = 0,
                   noise_std: float = 0.0, dist: SynthDistribution | None = None,
                   out_dir=None, jobs: int = 1):
    """Train every (arch, rate, seed) cell; same dataset across archs within a
    (rate, seed) pair so architecture comparisons are paired.
    """
    jobs_list = []
    for ri, rate in enumerate(rates):
        rate = Fraction(rate)
        for si in range(n_seeds):
            data_seed = mix64(base_seed, 1 + ri * 1009 + si)
            for ai, arch in enumerate(archs):
                model_seed = mix64(base_seed,
                                   10_000 + ri * 10_000 + si * 100 + ai)
                ckpt = None
                if out_dir is not None:
                    ckpt = os.path.join(
                        out_dir, f"{arch}_r{rate.numerator}-{rate.denominator}"
                                 f"_s{si}.ckpt")
                jobs_list.append(_CellJob(
                    sys_config=sys_config, target_config=None, rate=rate,
                    label=str(rate), n_samples=n_samples, noise_std=noise_std,
                    arch=arch, channels=channels, blocks=blocks,
                    train_config=train_config, dist=dist, seed_index=si,
                    data_seed=data_seed, model_seed=model_seed,
                    checkpoint_path=ckpt))
    results = _run_jobs(jobs_list, _worker_cap(jobs))
    if out_dir is not None:
        write_results_csv(os.path.join(out_dir, "sweep.csv"), results)
        write_summary(os.path.join(out_dir, "sweep_summary.json"), results)
    return results


def run_frequency_gap(archs, gaps_hz, sys_config: SystemConfig, n_samples: int,
                      rate, train_config: TrainingConfig, n_seeds: int = 1,
                      channels: int = 16, blocks: int = 1, base_seed: int = 0,
                      dist: SynthDistribution | None = None,
                      out_dir=None, jobs: int = 1):
    """For each gap, inputs come from the base carrier and labels from the same
    scenarios re-evaluated at f_c + gap; gains stay fixed, only the
    wavelength-dependent phases move.
    """
    rate = Fraction(rate)
    jobs_list = []
    for gi, gap in enumerate(gaps_hz):
        target = sys_config.shifted(gap) if gap else None
        for si in range(n_seeds):
            data_seed = mix64(base_seed, 500_000 + si)  # same scenarios per gap
            for ai, arch in enumerate(archs):
                model_seed = mix64(base_seed,
                                   600_000 + gi * 10_000 + si * 100 + ai)
                jobs_list.append(_CellJob(
                    sys_config=sys_config, target_config=target, rate=rate,
                    label=str(gap), n_samples=n_samples, noise_std=0.0,
                    arch=arch, channels=channels, blocks=blocks,
                    train_config=train_config, dist=dist, seed_index=si,
                    data_seed=data_seed, model_seed=model_seed,
                    checkpoint_path=None))
    results = _run_jobs(jobs_list, _worker_cap(jobs))
    if out_dir is not None:
        write_results_csv(os.path.join(out_dir, "freqgap.csv"), results)
        write_summary(os.path.join(out_dir, "freqgap_summary.json"), results)
    return results


def write_results_csv(path, results) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["arch", "rate", "seed", "epoch", "train_loss",
                    "test_loss", "nmse_db", "lr"])
        for r in results:
            h = r.history
            for e in range(len(h)):
                w.writerow([r.arch, r.rate, r.seed_index, e,
                            repr(h.train_loss[e]), repr(h.test_loss[e]),
                            repr(h.test_nmse_db[e]), repr(h.lr[e])])


def write_summary(path, results) -> None:
    rows = [{
        "arch": r.arch, "rate": r.rate, "seed": r.seed_index,
        "data_seed": r.data_seed, "model_seed": r.model_seed,
        "final_train_loss": r.final_train_loss,
        "final_test_loss": r.final_test_loss,
        "final_nmse_db": r.final_nmse_db,
    } for r in results]
    with open(path, "w") as f:
        json.dump(rows, f, indent=2, sort_keys=True)
