"""Executes one validated ExperimentSpec and writes its artifacts."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from app.schemas import ExperimentSpec
from app.services import angle_optimizer, channel, detector, harness, link
from app.services.constellation import make_constellation
from app.utils import artifacts
from app.utils import rng as rng_streams
from app.utils.errors import EstimationError
from config import get_settings

logger = logging.getLogger("mdpsm_runner")

TAIL_THRESHOLDS = (0.5, 1.0, 2.0)
SIGMA_THRESHOLD = 0.1
COLLISION_MESSAGES = 1_000_000
CHANNEL_DUMP_STREAM = 3


@dataclass
class ExperimentOutcome:
    summary: str
    files: List[Path] = field(default_factory=list)
    values: Dict[str, object] = field(default_factory=dict)


def _stem(spec: ExperimentSpec, default: str) -> str:
    return spec.output or default


def _header(spec: ExperimentSpec, digest: str, **extra) -> dict:
    header = {"spec_hash": digest, "seed": spec.seed, "kind": spec.kind}
    header.update(extra)
    return header


def _try(func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except EstimationError as exc:
        logger.warning("%s", exc)
        return None


# ---------------------------------------------------------------------------
# Kinds
# ---------------------------------------------------------------------------


def run_angle_sweep(spec: ExperimentSpec, out: Path, digest: str, jobs: int) -> ExperimentOutcome:
    outcome = ExperimentOutcome(summary="")
    parts = []
    for scheme_a, scheme_b in spec.pairs:
        a, b = make_constellation(scheme_a), make_constellation(scheme_b)
        result = angle_optimizer.sweep(
            a, b, spec.theta_start, spec.theta_stop, spec.theta_step, spec.n_r, jobs
        )
        path = out / f"{_stem(spec, 'angle_sweep')}_{result.label}.csv"
        angle_optimizer.write_sweep_csv(result, path, _header(spec, digest, pair=result.label))
        outcome.files.append(path)
        outcome.values[result.label] = {
            "optimal_thetas": result.optimal_thetas,
            "dmin": result.best_dmin,
        }
        optima = ", ".join(f"{t:g}" for t in result.optimal_thetas[:6])
        if len(result.optimal_thetas) > 6:
            optima += f" ... {result.optimal_thetas[-1]:g}"
        parts.append(f"{result.label}: theta_opt={optima} dmin={result.best_dmin:.4f}")
    outcome.summary = "; ".join(parts)
    return outcome


def run_ber(spec: ExperimentSpec, out: Path, digest: str, jobs: int) -> ExperimentOutcome:
    started = artifacts.utc_now()
    snr = spec.snr_db or get_settings().default_snr_db
    stem = _stem(spec, "ber_run")
    run = dict(
        stop_rule=spec.stop_rule,
        seed=spec.seed,
        jobs=jobs,
        block_length=spec.block_length,
        method=spec.detector,
    )
    curve = harness.run_ber(spec.config, snr, **run)
    outcome = ExperimentOutcome(summary="")
    path = out / f"{stem}.csv"
    harness.write_curve_csv(curve, path, digest)
    outcome.files.append(path)

    diversity = _try(harness.estimate_diversity, curve, config=spec.config)
    outcome.values["curve"] = curve
    outcome.values["diversity"] = diversity
    parts = [f"{curve.label}: {int(curve.capped.sum())}/{len(curve.ber)} points capped"]
    if diversity is not None:
        parts.append(f"d={diversity.order:.2f} (theory {diversity.theoretical})")
    at_target = _try(harness.snr_at_ber, curve, spec.target_ber)
    outcome.values["snr_at_target"] = at_target

    extra = {}
    if spec.baseline is not None:
        base = harness.run_ber(spec.baseline, snr, **run)
        base_path = out / f"{stem}_baseline.csv"
        harness.write_curve_csv(base, base_path, digest)
        outcome.files.append(base_path)
        gap = _try(harness.snr_gap, base, curve, spec.target_ber)
        outcome.values["baseline_curve"] = base
        outcome.values["baseline_diversity"] = _try(
            harness.estimate_diversity, base, config=spec.baseline
        )
        outcome.values["gap_db"] = gap
        extra = {"baseline": spec.baseline.model_dump(), "gap_db": gap}
        gap_text = "n/a" if gap is None else f"{gap:.2f} dB"
        parts.append(f"gap vs {base.label} at BER {spec.target_ber:g}: {gap_text}")

    manifest = out / f"{stem}.manifest.json"
    harness.write_manifest(curve, manifest, started, digest, target_ber=spec.target_ber, **extra)
    outcome.files.append(manifest)
    outcome.summary = "; ".join(parts)
    return outcome


def run_ber_vs_theta(spec: ExperimentSpec, out: Path, digest: str, jobs: int) -> ExperimentOutcome:
    pilot = spec.snr_db[0] if spec.snr_db else None
    result = angle_optimizer.ber_refine(
        spec.config, spec.thetas, pilot, spec.stop_rule, spec.seed, jobs
    )
    path = out / f"{_stem(spec, 'ber_vs_theta')}.csv"
    artifacts.write_csv(
        result.table, path, _header(spec, digest, system=spec.config.label, snr_db=result.snr_db)
    )
    return ExperimentOutcome(
        summary=f"{spec.config.label}: theta_opt={result.theta:g} at {result.snr_db:.2f} dB",
        files=[path],
        values={"theta": result.theta, "snr_db": result.snr_db, "table": result.table},
    )


def run_complexity(spec: ExperimentSpec, out: Path, digest: str, jobs: int) -> ExperimentOutcome:
    configs = spec.configs or [spec.config]
    table = detector.complexity_table(configs)
    path = out / f"{_stem(spec, 'complexity')}.csv"
    artifacts.write_csv(table, path, _header(spec, digest))
    summary = ", ".join(
        f"{row.system}={row.real_multiplications}" for row in table.itertuples(index=False)
    )
    return ExperimentOutcome(summary=summary, files=[path], values={"table": table})


def run_channel_stats(spec: ExperimentSpec, out: Path, digest: str, jobs: int) -> ExperimentOutcome:
    config = spec.config
    rng = rng_streams.stream(spec.seed, 0)
    stats = channel.channel_stats(
        config.n_t1, config.n_r, spec.draws, rng, get_settings().condition_threshold
    )
    values: Dict[str, object] = stats.as_dict()
    values["tail_asymptotic"] = channel.min_singular_tail(config.n_r, SIGMA_THRESHOLD)
    empirical = channel.empirical_min_singular_tail(
        config.n_r, TAIL_THRESHOLDS, spec.draws, rng_streams.stream(spec.seed, 1)
    )
    for x, p in zip(TAIL_THRESHOLDS, empirical):
        values[f"tail_sq_{x:g}"] = float(p)
        values[f"tail_sq_{x:g}_exact"] = float(np.exp(-x))
    if config.is_mdpsm:
        count = max(spec.draws, COLLISION_MESSAGES)
        msgs = link.random_messages(config, count, rng_streams.stream(spec.seed, 2))
        values["collision_rate"] = float(np.mean(msgs.i1 == msgs.i2))

    path = out / f"{_stem(spec, 'channel_stats')}.csv"
    artifacts.write_csv(pd.DataFrame([values]), path, _header(spec, digest))
    files = [path]
    dump = min(get_settings().channel_dump_draws, spec.draws)
    if dump > 0:
        sample = channel.draw_channel_batch(
            config.n_t1, config.n_r, channel.channel_rng(spec.seed, CHANNEL_DUMP_STREAM), dump
        )
        files.append(
            channel.dump_channels_csv(
                sample.H,
                out / f"{_stem(spec, 'channel_stats')}_channels.csv",
                _header(spec, digest, stream=CHANNEL_DUMP_STREAM),
            )
        )
    expected = "undefined" if stats.expected_beta is None else f"{stats.expected_beta:g}"
    summary = (
        f"n_T={config.n_t1} n_R={config.n_r}: harmonic beta={stats.harmonic_mean_beta:.3f} "
        f"(E ref {expected}), mean beta={stats.mean_beta:.3f}, redraws={stats.redraws}"
    )
    return ExperimentOutcome(summary=summary, files=files, values=values)


EXECUTORS = {
    "angle_sweep": run_angle_sweep,
    "ber_run": run_ber,
    "ber_vs_theta": run_ber_vs_theta,
    "complexity_report": run_complexity,
    "channel_stats": run_channel_stats,
}


def run_experiment(
    spec: ExperimentSpec,
    out_dir,
    spec_text: str = "",
    jobs: int = 1,
    seed: Optional[int] = None,
) -> ExperimentOutcome:
    if seed is not None:
        spec = spec.model_copy(update={"seed": seed})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = artifacts.spec_hash(spec_text or spec.model_dump_json())
    logger.info("Starting %s (seed=%s, jobs=%d)", spec.kind, spec.seed, jobs)
    outcome = EXECUTORS[spec.kind](spec, out, digest, jobs)
    logger.info("Finished %s: %s", spec.kind, outcome.summary)
    return outcome
