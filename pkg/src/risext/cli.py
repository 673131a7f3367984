"""Batch command-line surface: dataset generation, training, sweeps,
frequency-gap studies and the built-in verification suite.

Configuration is a flat INI-style key=value document; every command echoes the
fully resolved config into its output directory. Exit codes: 0 success,
2 config error, 3 data error, 4 training divergence.
"""

from __future__ import annotations

import configparser
import hashlib
import os
import sys
from fractions import Fraction

import click
import numpy as np

from .channel import SystemConfig, ula_steering, upa_steering
from .data import (DatasetFormatError, DegenerateDataError,
                   SynthDistribution, UnsupportedRateError, generate_dataset,
                   load_dataset, save_dataset)
from .engine import grad_check
from .blocks import GOp, LFBlock, RK3Block
from .network import Model, ModelSpec, load_model, save_model
from .training import DivergenceError, TrainingConfig, evaluate_nmse, train
from .experiments import run_frequency_gap, run_rate_sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "system": {
        "m": "2", "l_h": "4", "l_v": "4", "k": "16",
        "f_c": "2.4e9", "bandwidth": "2e7", "d_over_lambda": "0.5",
        "p_h": "3", "p_g": "3",
    },
    "dataset": {
        "samples": "500", "rate": "1/2", "base_seed": "1234", "noise_std": "0",
        # multipath draw support; defaults match SynthDistribution
        "delay_span_frac": "0.125",
        "azimuth_lo": "-1.5707963267948966", "azimuth_hi": "1.5707963267948966",
        "elevation_lo": "0.7853981633974483",
        "elevation_hi": "2.356194490192345",
    },
    "model": {
        "arch": "rk3", "channels": "16", "blocks": "1",
    },
    "training": {
        "batch_size": "32", "epochs": "60", "lr0": "0.0005",
        "warm_epochs": "40", "decay": "0.8", "decay_period": "10",
        "seed": "7", "shuffle": "true",
    },
    "sweep": {
        "archs": "rk3,lf,euler,cascaded", "rates": "1/2,1/4,1/8", "seeds": "3",
    },
    "freqgap": {
        "gaps_mhz": "0,5,10,20", "archs": "rk3,cascaded", "seeds": "3",
        "rate": "1/2",
    },
}


def load_config(path) -> dict:
    """Merge the config file over the defaults; unknown sections/keys reject."""
    resolved = {s: dict(kv) for s, kv in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            read = parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in resolved:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in resolved[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                resolved[section][key] = value
    return resolved


def _system_config(cfg: dict) -> SystemConfig:
    s = cfg["system"]
    try:
        return SystemConfig(
            m=int(s["m"]), l_h=int(s["l_h"]), l_v=int(s["l_v"]), k=int(s["k"]),
            f_c=float(s["f_c"]), bandwidth=float(s["bandwidth"]),
            d_over_lambda=float(s["d_over_lambda"]),
            p_h=int(s["p_h"]), p_g=int(s["p_g"]))
    except ValueError as exc:
        raise ConfigError(f"bad [system] values: {exc}") from exc


def _distribution(cfg: dict) -> SynthDistribution:
    d = cfg["dataset"]
    try:
        return SynthDistribution(
            delay_span_frac=float(d["delay_span_frac"]),
            azimuth_lo=float(d["azimuth_lo"]), azimuth_hi=float(d["azimuth_hi"]),
            elevation_lo=float(d["elevation_lo"]),
            elevation_hi=float(d["elevation_hi"]))
    except ValueError as exc:
        raise ConfigError(f"bad [dataset] distribution values: {exc}") from exc


def _training_config(cfg: dict, epochs=None, seed=None) -> TrainingConfig:
    t = cfg["training"]
    try:
        return TrainingConfig(
            batch_size=int(t["batch_size"]),
            epochs=int(epochs if epochs is not None else t["epochs"]),
            lr0=float(t["lr0"]), warm_epochs=int(t["warm_epochs"]),
            decay=float(t["decay"]), decay_period=int(t["decay_period"]),
            seed=int(seed if seed is not None else t["seed"]),
            shuffle=t["shuffle"].strip().lower() in ("1", "true", "yes"))
    except ValueError as exc:
        raise ConfigError(f"bad [training] values: {exc}") from exc


def _model_spec(cfg: dict, arch=None) -> ModelSpec:
    m = cfg["model"]
    try:
        return ModelSpec(arch=(arch or m["arch"]), channels=int(m["channels"]),
                         blocks=int(m["blocks"]))
    except ValueError as exc:
        raise ConfigError(f"bad [model] values: {exc}") from exc


def echo_config(cfg: dict, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    parser = configparser.ConfigParser()
    for section, kv in cfg.items():
        parser[section] = kv
    with open(os.path.join(out_dir, "resolved_config.ini"), "w") as f:
        parser.write(f)


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    try:
        fn()
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except (UnsupportedRateError, DegenerateDataError, DatasetFormatError,
            FileNotFoundError) as exc:
        _fail(EXIT_DATA, str(exc))
    except DivergenceError as exc:
        _fail(EXIT_DIVERGED, str(exc))


@click.group()
def main():
    """RIS channel-extrapolation toolkit."""


@main.command("gen-data")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="override base seed")
@click.option("--rate", default=None, help="override sampling rate, e.g. 1/4")
def cmd_gen_data(config_path, out, seed, rate):
    """Generate and persist one dataset."""
    def run():
        cfg = load_config(config_path)
        if seed is not None:
            cfg["dataset"]["base_seed"] = str(seed)
        if rate is not None:
            cfg["dataset"]["rate"] = rate
        sys_cfg = _system_config(cfg)
        d = cfg["dataset"]
        dataset = generate_dataset(
            sys_cfg, Fraction(d["rate"]), int(d["samples"]),
            int(d["base_seed"]), noise_std=float(d["noise_std"]),
            dist=_distribution(cfg))
        os.makedirs(out, exist_ok=True)
        echo_config(cfg, out)
        path = os.path.join(out, "dataset.bin")
        save_dataset(path, dataset)
        man = dataset.manifest
        click.echo(f"wrote {path}")
        click.echo(f"L={sys_cfg.l} N={man.pattern.n_selected} "
                   f"r={man.pattern.rate} train={man.n_train} test={man.n_test}")
    _guarded(run)


@main.command("train")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--arch", default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--resume", type=click.Path(), default=None,
              help="checkpoint to continue from")
def cmd_train(config_path, dataset_path, out, arch, epochs, seed, resume):
    """Train one model on a stored dataset."""
    def run():
        cfg = load_config(config_path)
        dataset = load_dataset(dataset_path)
        spec = _model_spec(cfg, arch)
        tcfg = _training_config(cfg, epochs=epochs, seed=seed)
        if resume:
            model = load_model(resume)
            if model.spec != spec:
                raise ConfigError("resume checkpoint architecture differs "
                                  "from the configured one")
        else:
            model = Model(spec, tcfg.seed)
        history = train(model, dataset, tcfg)
        os.makedirs(out, exist_ok=True)
        echo_config(cfg, out)
        history.write_csv(os.path.join(out, "history.csv"))
        save_model(os.path.join(out, "model.ckpt"), model)
        nmse = evaluate_nmse(model, dataset.test, dataset.manifest.scale,
                             tcfg.batch_size)
        click.echo(f"final test NMSE: {nmse:.2f} dB")
    _guarded(run)


def _plot_histories(results, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(7, 5))
    for r in results:
        ax.plot(r.history.test_nmse_db,
                label=f"{r.arch} r={r.rate} s{r.seed_index}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("test NMSE [dB]")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _plot_gaps(results, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    by_arch = {}
    for r in results:
        by_arch.setdefault(r.arch, {}).setdefault(float(r.rate), []).append(
            r.final_nmse_db)
    fig, ax = plt.subplots(figsize=(7, 5))
    for arch, pts in sorted(by_arch.items()):
        gaps = sorted(pts)
        med = [float(np.median(pts[g])) for g in gaps]
        ax.plot([g / 1e6 for g in gaps], med, marker="o", label=arch)
    ax.set_xlabel("frequency gap [MHz]")
    ax.set_ylabel("median test NMSE [dB]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


@main.command("sweep")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--epochs", type=int, default=None)
@click.option("--jobs", type=int, default=1)
def cmd_sweep(config_path, out, epochs, jobs):
    """Train every (arch, rate, seed) cell and emit CSV + plot."""
    def run():
        cfg = load_config(config_path)
        sys_cfg = _system_config(cfg)
        tcfg = _training_config(cfg, epochs=epochs)
        sw = cfg["sweep"]
        archs = [a.strip() for a in sw["archs"].split(",") if a.strip()]
        rates = [Fraction(r.strip()) for r in sw["rates"].split(",")]
        os.makedirs(out, exist_ok=True)
        echo_config(cfg, out)
        results = run_rate_sweep(
            archs, rates, sys_cfg, int(cfg["dataset"]["samples"]), tcfg,
            n_seeds=int(sw["seeds"]), channels=int(cfg["model"]["channels"]),
            blocks=int(cfg["model"]["blocks"]),
            base_seed=int(cfg["dataset"]["base_seed"]),
            noise_std=float(cfg["dataset"]["noise_std"]),
            dist=_distribution(cfg), out_dir=out, jobs=jobs)
        _plot_histories(results, os.path.join(out, "sweep_nmse.svg"))
        for r in results:
            click.echo(f"{r.arch} r={r.rate} seed={r.seed_index}: "
                       f"{r.final_nmse_db:.2f} dB")
    _guarded(run)


@main.command("freqgap")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--epochs", type=int, default=None)
@click.option("--jobs", type=int, default=1)
def cmd_freqgap(config_path, out, epochs, jobs):
    """Frequency-gap study: inputs at f_c, labels at f_c + gap."""
    def run():
        cfg = load_config(config_path)
        sys_cfg = _system_config(cfg)
        tcfg = _training_config(cfg, epochs=epochs)
        fg = cfg["freqgap"]
        archs = [a.strip() for a in fg["archs"].split(",") if a.strip()]
        gaps = [float(g) * 1e6 for g in fg["gaps_mhz"].split(",")]
        os.makedirs(out, exist_ok=True)
        echo_config(cfg, out)
        results = run_frequency_gap(
            archs, gaps, sys_cfg, int(cfg["dataset"]["samples"]),
            Fraction(fg["rate"]), tcfg, n_seeds=int(fg["seeds"]),
            channels=int(cfg["model"]["channels"]),
            blocks=int(cfg["model"]["blocks"]),
            base_seed=int(cfg["dataset"]["base_seed"]),
            dist=_distribution(cfg), out_dir=out, jobs=jobs)
        _plot_gaps(results, os.path.join(out, "freqgap_nmse.svg"))
        for r in results:
            click.echo(f"{r.arch} gap={float(r.rate)/1e6:g}MHz "
                       f"seed={r.seed_index}: {r.final_nmse_db:.2f} dB")
    _guarded(run)


def _verify_checks(corrupt_backward: bool):
    checks = []

    a = ula_steering(0.37, 8, 0.5)
    checks.append(("ULA unit norm", abs(np.linalg.norm(a) - 1.0), 1e-12))

    u = upa_steering(0.9, -0.4, 3, 4, 0.5)
    checks.append(("UPA unit modulus", float(np.max(np.abs(np.abs(u) - 1))),
                   1e-12))

    lam = 0.1
    stub = _LinearStub(lam)
    block = RK3Block(1, ops=[stub, stub, stub])
    got = float(np.asarray(block.forward(np.ones((1, 1, 1)))).item())
    want = 1 + lam + lam ** 2 / 2 + lam ** 3 / 6
    checks.append(("RK3 amplification factor", abs(got - want) / want, 1e-12))

    lf = LFBlock(1, ops=[_LinearStub(lam) for _ in range(6)])
    got = float(np.asarray(lf.forward(np.ones((1, 1, 1)))).item())
    a_pp, a_p = 1.0, 1.0
    for _ in range(6):
        a_pp, a_p = a_p, a_pp + lam * a_p
    checks.append(("LF recurrence", abs(got - a_p), 1e-12))

    rng = np.random.default_rng(42)
    op = GOp(2, rng)
    x = rng.standard_normal((4, 3, 2))
    x[np.abs(x) < 1e-3] = 0.1  # keep away from ReLU kinks
    err = grad_check(op, x)
    if corrupt_backward:
        err += 1.0
    checks.append(("gradient check (ReLU-conv-multiplier)", err, 1e-6))
    return checks


class _LinearStub:
    def __init__(self, coef):
        self.coef = coef

    def params(self):
        return []

    def forward(self, x):
        return self.coef * x

    def backward(self, grad):
        return self.coef * grad


@main.command("verify")
@click.option("--corrupt-backward", is_flag=True, hidden=True,
              help="debug: inject a gradient error to prove detection")
def cmd_verify(corrupt_backward):
    """Run the built-in oracle suite and report pass/fail."""
    checks = _verify_checks(corrupt_backward)
    failed = False
    for name, err, tol in checks:
        ok = err < tol
        failed |= not ok
        click.echo(f"[{'PASS' if ok else 'FAIL'}] {name}: "
                   f"error {err:.3e} (tol {tol:g})")
    sys.exit(1 if failed else EXIT_OK)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


if __name__ == "__main__":
    main()
