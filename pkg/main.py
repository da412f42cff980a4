"""
Experiment runner.

    python main.py run --config config.yaml [--out DIR] [--seeds 0-15] [--parallel N]
    python main.py replay --replay results/manifest.json

Exit codes: 0 success, 1 invalid config (nothing written), 2 solver-fatal
(k-monotonicity violation, failed oracle suite), 3 replay drift.
"""
from __future__ import annotations

import argparse
import math
import sys
import tempfile
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence

import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError

from errors import HomogenizationError, MonotonicityError
from experiment_types import (ArtifactRecord, ExperimentConfig, Manifest, ReplayItem, load_config, parse_seeds,
                              summarize_replay)
from extension import (DEFAULT_GAMMA, calibrate_gamma, empirical_extension_constant, extension_battery,
                       extension_summary, random_extension_instance)
from geometry import density_ladder
from homogenize import (CheckReport, LadderResult, check_bounds, check_cauchy_decay, check_convexity_fhom,
                        check_soft_hole, check_symmetry, check_translation, estimate_fhom, estimate_ghom,
                        k_extrapolate, lattice_shift)
from solvers import random_surface_oracle, random_volume_oracle
from utils.async_utils import run_jobs
from utils.hash_utils import hash_file
from utils.json_utils import json_write, jsonl_write
from utils.log_utils import get_logger

logger = get_logger("main")

EXIT_OK, EXIT_VALIDATION, EXIT_FATAL, EXIT_DRIFT = 0, 1, 2, 3
MANIFEST_NAME = "manifest.json"


class ArtifactWriter:
    """Writes run outputs under one directory and remembers every file with its hash."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.records: List[ArtifactRecord] = []

    def _track(self, path: Path):
        self.records = [r for r in self.records if r.path != path.relative_to(self.root).as_posix()]
        self.records.append(ArtifactRecord.of(self.root, path))
        print(f"✓ wrote {path}")

    def csv(self, name: str, frame: pd.DataFrame):
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.17g")
        self._track(path)

    def ladder(self, name: str, ladder: LadderResult):
        path = self.root / name
        ladder.to_csv(path)
        self._track(path)

    def json(self, name: str, data: Any):
        path = self.root / name
        json_write(path, data)
        self._track(path)

    def jsonl(self, name: str, records: Sequence[Dict[str, Any]]):
        path = self.root / name
        jsonl_write(path, records)
        self._track(path)


class RunState:
    def __init__(self, config: ExperimentConfig, writer: ArtifactWriter):
        self.config = config
        self.writer = writer
        self.warnings: List[str] = []
        self.checks: List[CheckReport] = []
        self.fatal = False

    def check(self, report: CheckReport):
        print(report)
        self.checks.append(report)
        if not report.passed:
            self.warnings.append(f"check {report.name} failed: {report.details}")


def _fhom(state: RunState):
    cfg = state.config
    q, ks = cfg.volume.integrand(), cfg.hole_weight.volume_ks()
    mode = "soft" if cfg.hole_weight.mode == "soft" else None
    gen = cfg.generator.template(cfg.seeds[0])
    common = dict(n=cfg.n, delta=cfg.delta, r_star=cfg.r_star, h_over_delta=cfg.h_over_delta,
                  frame_width=cfg.frame_width, seeds=cfg.seeds, tol=cfg.tol, parallel=cfg.parallel)
    estimates = []
    for i, xi in enumerate(cfg.volume.xi):
        ladder = estimate_fhom(gen, q, xi, cfg.windows, ks, len(cfg.seeds), **common)
        state.warnings.extend(ladder.warnings)
        state.writer.ladder(f"fhom_ladder_{i}.csv", ladder)
        est = k_extrapolate(ladder, mode)
        estimates.append(est)
        print(f"✓ f_hom({list(xi)}) = {est.value:.12g} ± {est.dispersion:.2e} [{est.mode}]")
        state.check(check_bounds(est, c1=cfg.volume.c1, c2=cfg.volume.c2, delta=cfg.delta, n=cfg.n, p=cfg.volume.p))
        if mode == "soft":
            state.check(check_soft_hole(est, cfg.hole_weight.soft_rtol))
        state.check(check_cauchy_decay(ladder))
        if cfg.translation_check:
            shifted = estimate_fhom(gen, q, xi, cfg.windows, ks, len(cfg.seeds),
                                    origin=lattice_shift(gen, cfg.n), **common)
            state.check(check_translation(ladder, shifted))
    if len(estimates) >= 3:
        state.check(check_convexity_fhom([e.param for e in estimates], [e.value for e in estimates],
                                         [e.dispersion for e in estimates], p=cfg.volume.p))
    state.writer.jsonl("fhom_estimates.jsonl", [e.to_dict() for e in estimates])


def _ghom(state: RunState):
    cfg = state.config
    s, ks = cfg.surface.integrand(), cfg.hole_weight.surface_ks()
    mode = "soft" if cfg.hole_weight.mode == "soft" else None
    gen = cfg.generator.template(cfg.seeds[0])
    common = dict(n=cfg.n, delta=cfg.delta, r_star=cfg.r_star, h_over_delta=cfg.h_over_delta,
                  frame_width=cfg.frame_width, seeds=cfg.seeds, parallel=cfg.parallel)
    estimates = []
    for i, nu in enumerate(cfg.surface.nu):
        ladder = estimate_ghom(gen, s, nu, cfg.windows, ks, len(cfg.seeds), **common)
        state.warnings.extend(ladder.warnings)
        state.writer.ladder(f"ghom_ladder_{i}.csv", ladder)
        est = k_extrapolate(ladder, mode)
        estimates.append(est)
        print(f"✓ g_hom({[round(x, 6) for x in nu]}) = {est.value:.12g} ± {est.dispersion:.2e} [{est.mode}]")
        state.check(check_bounds(est, c3=cfg.surface.c3, c4=cfg.surface.c4, delta=cfg.delta, n=cfg.n))
        if mode == "soft":
            state.check(check_soft_hole(est, cfg.hole_weight.soft_rtol))
        state.check(check_cauchy_decay(ladder))
        if cfg.surface.symmetry:
            mirrored = estimate_ghom(gen, s, [-x for x in nu], cfg.windows, ks, len(cfg.seeds), **common)
            state.check(check_symmetry(ladder, mirrored))
        if cfg.translation_check:
            shifted = estimate_ghom(gen, s, nu, cfg.windows, ks, len(cfg.seeds),
                                    origin=lattice_shift(gen, cfg.n), **common)
            state.check(check_translation(ladder, shifted))
    state.writer.jsonl("ghom_estimates.jsonl", [e.to_dict() for e in estimates])


def _extension_battery(state: RunState):
    cfg, ext = state.config, state.config.extension
    if ext.calibrate_gamma:
        gamma = calibrate_gamma(seed=cfg.seeds[0], delta=cfg.delta, r_star=cfg.r_star, h=cfg.h, n=cfg.n)
    else:
        gamma = ext.gamma if ext.gamma is not None else DEFAULT_GAMMA
    print(f"✓ gamma threshold {gamma:.6g}")
    instances = [random_extension_instance(seed, n=cfg.n, t=ext.t, delta=cfg.delta, r_star=cfg.r_star,
                                           radius_law=ext.radius_law, intensity=ext.intensity, h=cfg.h, p=ext.p,
                                           kind=ext.field_kind) for seed in cfg.seeds]
    reports = extension_battery(instances, gamma, ext.lambdas, parallel=cfg.parallel)
    state.writer.csv("extension_summary.csv", extension_summary(reports))
    state.writer.jsonl("extension_reports.jsonl", [r.to_dict() for r in reports])
    constant = empirical_extension_constant(reports)
    state.writer.json("extension_constant.json", {'gamma': gamma, **constant.to_dict()})
    print(f"✓ empirical extension constant {constant.value:.6g} over {constant.n_used} instances")

    lambda_checks = [r.homothety_check for r in reports if r.homothety_check is not None]
    worst = max(lambda_checks, default=0.0)
    state.check(CheckReport('homothety', worst <= ext.homothety_rtol,
                            details={'worst_relative_change': worst, 'tolerance': ext.homothety_rtol}))


def _density_study(state: RunState):
    cfg = state.config
    gen = cfg.generator.template()
    rows, failures = [], 0
    for seed in cfg.seeds:
        ladder = density_ladder(gen.with_seed(seed), cfg.density.windows, n=cfg.n, delta=cfg.delta,
                                r_star=cfg.r_star)
        gaps = (math.nan,) + ladder.cauchy_gaps
        for record, gap in zip(ladder.to_records(), gaps):
            rows.append({'seed': seed, **record, 'cauchy_gap': gap})
            if not 0 < record['lower_bound'] <= record['density'] + 1e-6:
                failures += 1
    table = pd.DataFrame(rows, columns=['seed', 't', 'density', 'lower_bound', 'cauchy_gap'])
    state.writer.csv("density_ladder.csv", table)
    state.check(CheckReport('density_lower_bound', failures == 0, details={'failures': failures, 'rows': len(rows)}))

    summary = table.groupby('t')['density'].agg(['mean', 'std', 'count']).reset_index()
    summary['stderr'] = (summary['std'] / np.sqrt(summary['count'])).fillna(0.0)
    state.writer.csv("density_summary.csv", summary)
    expected = _expected_lattice_density(cfg)
    if expected is not None:
        last = summary.iloc[-1]
        allowed = 3 * float(last['stderr'])
        state.check(CheckReport('expected_density', abs(float(last['mean']) - expected) <= allowed + 1e-12,
                                details={'mean': float(last['mean']), 'expected': expected, 'allowed': allowed}))


def _expected_lattice_density(cfg: ExperimentConfig) -> float | None:
    """1 - p * (ball volume) / (lattice cell volume) for the planar Bernoulli lattice."""
    gen = cfg.generator
    if gen.kind != "bernoulli-lattice" or cfg.n != 2:
        return None
    cell = gen.spacing ** 2 * (math.sqrt(3) / 2 if gen.lattice == "triangular" else 1.0)
    return 1 - gen.occupation_prob * math.pi * gen.radius ** 2 / cell


def _oracle_suite(state: RunState):
    cfg = state.config
    surface = run_jobs([lambda s=s: random_surface_oracle(s) for s in range(cfg.oracle.n_surface)],
                       parallel=cfg.parallel, desc="surface oracle")
    volume = run_jobs([lambda s=s: random_volume_oracle(s, cfg.oracle.volume_rtol) for s in range(cfg.oracle.n_volume)],
                      parallel=cfg.parallel, desc="volume oracle")
    state.writer.jsonl("oracle_surface.jsonl", surface)
    state.writer.jsonl("oracle_volume.jsonl", volume)
    for name, records in (('surface_oracle', surface), ('volume_oracle', volume)):
        failed = [r['seed'] for r in records if not r['passed']]
        state.check(CheckReport(name, not failed, details={'instances': len(records), 'failed_seeds': failed,
                                                           'max_difference': max(r['difference'] for r in records)}))
        if failed:
            state.fatal = True


RUNNERS: Dict[str, Callable[[RunState], None]] = {
    'fhom': _fhom,
    'ghom': _ghom,
    'extension_battery': _extension_battery,
    'density_study': _density_study,
    'oracle_suite': _oracle_suite,
}


def run(config: ExperimentConfig, out: str | Path | None = None) -> int:
    """
    Run one experiment and write its artifacts plus manifest.json under `out` (default config.out).

    Returns:
        int: exit status
    """
    writer = ArtifactWriter(out if out is not None else config.out)
    state = RunState(config, writer)
    status = EXIT_OK
    try:
        RUNNERS[config.kind](state)
    except MonotonicityError as e:
        print(f"✗ {e}")
        state.warnings.append(str(e))
        status = EXIT_FATAL
    if state.fatal:
        status = EXIT_FATAL
    manifest = Manifest(config=config.model_dump(mode="json"), artifacts=writer.records, warnings=state.warnings,
                        checks=[c.to_dict() for c in state.checks], status=status)
    manifest.write(writer.root / MANIFEST_NAME)
    failed = [c.name for c in state.checks if not c.passed]
    print(f"{'✓' if status == EXIT_OK else '✗'} {config.kind}: {len(writer.records)} artifacts, "
          f"{len(state.warnings)} warnings, failed checks: {failed or 'none'}")
    return status


def replay(manifest_path: str | Path) -> List[ReplayItem]:
    """
    Compare the files listed in a manifest with their recorded hashes, then
    rerun the stored config in a scratch directory and compare again.
    """
    manifest_path = Path(manifest_path)
    manifest = Manifest.read(manifest_path)
    root = manifest_path.parent
    config = ExperimentConfig.model_validate(manifest.config)
    with tempfile.TemporaryDirectory() as scratch:
        run(config, scratch)
        rerun = {r.path: r.sha256 for r in Manifest.read(Path(scratch) / MANIFEST_NAME).artifacts}

    items = []
    for record in manifest.artifacts:
        path = root / record.path
        if not path.exists():
            items.append(ReplayItem(record.path, 'absent', record.sha256))
            continue
        found = hash_file(path)
        if found != record.sha256:
            items.append(ReplayItem(record.path, 'mismatch', record.sha256, found))
        elif rerun.get(record.path) != record.sha256:
            items.append(ReplayItem(record.path, 'drift', record.sha256, rerun.get(record.path)))
        else:
            items.append(ReplayItem(record.path, 'match', record.sha256, found))
    return items


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Stochastic homogenization experiments on perforated domains")
    parser.add_argument("command", nargs="?", choices=["run", "replay"], default="run")
    parser.add_argument("--config", default="config.yaml", help="YAML experiment config")
    parser.add_argument("--out", help="output directory (overrides config.out)")
    parser.add_argument("--seeds", help="seed list, e.g. 0,1,2 or 0-15")
    parser.add_argument("--parallel", type=int, help="concurrent jobs")
    parser.add_argument("--replay", metavar="MANIFEST", help="manifest.json to verify")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "replay" or args.replay:
        if not args.replay:
            print("✗ replay needs --replay MANIFEST")
            return EXIT_VALIDATION
        try:
            items = replay(args.replay)
        except (OSError, ValidationError, HomogenizationError) as e:
            print(f"✗ cannot replay {args.replay}: {e}")
            return EXIT_DRIFT
        for item in items:
            print(item)
        counts = summarize_replay(items)
        print(f"replay: {counts}")
        return EXIT_OK if all(item.status == 'match' for item in items) else EXIT_DRIFT

    try:
        overrides = {'out': args.out, 'parallel': args.parallel,
                     'seeds': parse_seeds(args.seeds) if args.seeds else None}
        config = load_config(args.config, overrides)
    except ValidationError as e:
        for error in e.errors():
            print(f"✗ {'.'.join(str(x) for x in error['loc']) or 'config'}: {error['msg']}")
        return EXIT_VALIDATION
    except (OSError, yaml.YAMLError, ValueError) as e:
        print(f"✗ config {args.config}: {e}")
        return EXIT_VALIDATION

    try:
        return run(config)
    except HomogenizationError as e:
        print(f"✗ {type(e).__name__}: {e}")
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
