"""Command-line interface.

Subcommands:
  run                   process a scan sequence and write trajectory + stats
  synth                 generate a synthetic scene, scans, and ground truth
  select-bench          benchmark selection strategies on random instances
  degeneracy-calibrate  per-frame degeneracy factors and histogram data
  eval                  ATE/RPE between two trajectory files

Exit codes: 0 success, 1 usage, 2 config error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from scanreg import evaluation
from scanreg.cloud_io import (
    ScanFormatError,
    TrajectoryRecord,
    read_scan,
    read_trajectory,
    write_scan_ply,
    write_trajectory,
)
from scanreg.config import ConfigError, build_pipeline_config, load_config
from scanreg.pipeline import frame_stats_dict, run_sequence
from scanreg.selector import (
    CandidatePool,
    SelectorConfig,
    brute_force_select,
    random_select,
    simple_greedy_select,
    stochastic_greedy_select,
)
from scanreg.synth import SensorModel, default_trajectory, generate_scene, save_scene, simulate_scan

log = logging.getLogger("scanreg")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _setup_logging():
    level = os.environ.get("GF_LOG_LEVEL", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scanreg", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="process a scan sequence")
    p_run.add_argument("--input", required=True, help="scan directory or manifest file")
    p_run.add_argument("--config", default=None, help="dotted-key config file")
    p_run.add_argument("--mode", choices=("gf", "rnd", "full"), default="gf")
    p_run.add_argument("--output", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=0)

    p_synth = sub.add_parser("synth", help="generate synthetic scans")
    p_synth.add_argument("--scene", choices=("corridor", "room", "outdoor-ground"),
                         required=True)
    p_synth.add_argument("--frames", type=int, required=True)
    p_synth.add_argument("--output", required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--sigma", type=float, default=0.02)
    p_synth.add_argument("--outlier-rate", type=float, default=0.0)
    p_synth.add_argument("--rings", type=int, default=16)
    p_synth.add_argument("--h-res-deg", type=float, default=1.0)

    p_bench = sub.add_parser("select-bench", help="selection strategy benchmark")
    p_bench.add_argument("--n", type=int, required=True)
    p_bench.add_argument("--m", type=int, required=True)
    p_bench.add_argument("--epsilon", type=float, default=0.1)
    p_bench.add_argument("--trials", type=int, default=100)
    p_bench.add_argument("--seed", type=int, default=0)

    p_cal = sub.add_parser("degeneracy-calibrate", help="per-frame degeneracy factors")
    p_cal.add_argument("--input", required=True)
    p_cal.add_argument("--config", default=None)
    p_cal.add_argument("--output", default=None, help="JSON output path (default: stdout)")
    p_cal.add_argument("--bins", type=int, default=20)

    p_eval = sub.add_parser("eval", help="trajectory accuracy metrics")
    p_eval.add_argument("--est", required=True)
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--rpe-delta", type=int, default=1)

    return parser


def load_scan_sequence(input_path: str):
    """Scans from a manifest file ("timestamp path" lines) or a directory.

    Directory scans are ordered by filename; a manifest.txt inside the
    directory takes precedence. Timestamps default to 10 Hz frame times
    when the source carries none.
    """
    path = Path(input_path)
    if path.is_dir() and (path / "manifest.txt").exists():
        path = path / "manifest.txt"
    if path.is_file():
        scans = []
        base = path.parent
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'timestamp path'")
            ts, rel = float(parts[0]), parts[1]
            scans.append(read_scan(base / rel, timestamp=ts))
        if not scans:
            raise ValueError(f"{path}: empty manifest")
        return scans
    if path.is_dir():
        files = sorted(p for p in path.iterdir()
                       if p.suffix.lower() in (".ply", ".raw", ".bin"))
        if not files:
            raise ValueError(f"{path}: no scan files found")
        return [read_scan(p, timestamp=0.1 * i) for i, p in enumerate(files)]
    raise FileNotFoundError(f"scan source not found: {input_path}")


def _cmd_run(args) -> int:
    try:
        values = load_config(args.config)
        config = build_pipeline_config(values, mode=args.mode, seed=args.seed)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        scans = load_scan_sequence(args.input)
    except (ScanFormatError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    results = run_sequence(scans, config)

    write_trajectory(
        [TrajectoryRecord(fr.timestamp, fr.pose) for fr in results], out / "traj.tum")
    with open(out / "stats.jsonl", "w") as fh:
        for fr in results:
            fh.write(json.dumps(frame_stats_dict(fr)) + "\n")

    logdets = [fr.logdet_selected for fr in results if fr.flagged != "bootstrap"]
    norm = [fr.logdet_selected_norm for fr in results if fr.flagged != "bootstrap"]
    summary = {
        "mode": config.mode,
        "seed": args.seed,
        "n_frames": len(results),
        "n_flagged": sum(1 for fr in results if fr.flagged not in (None, "bootstrap")),
        "logdet_selected_mean": float(np.mean(logdets)) if logdets else None,
        "logdet_selected_std": float(np.std(logdets)) if logdets else None,
        "logdet_selected_norm_mean": float(np.mean(norm)) if norm else None,
        "latency_ms_mean": {
            key: float(np.mean([fr.latencies_ms.get(key, 0.0) for fr in results]))
            for key in ("extract", "assoc_select", "optimize", "map", "total")
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    log.info("wrote %s", out)
    return EXIT_OK


def _cmd_synth(args) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    scene = generate_scene(args.scene, seed=args.seed)
    sensor = SensorModel(
        rings=args.rings,
        horizontal_resolution=math.radians(args.h_res_deg),
        range_noise_sigma=args.sigma,
        outlier_rate=args.outlier_rate,
    )
    trajectory = default_trajectory(scene, args.frames)
    manifest = []
    records = []
    for i, (ts, pose) in enumerate(trajectory):
        scan, _ = simulate_scan(scene, sensor, pose, rng_seed=args.seed + i, timestamp=ts)
        name = f"scan_{i:06d}.ply"
        write_scan_ply(out / name, scan)
        manifest.append(f"{ts:.9f} {name}")
        records.append(TrajectoryRecord(ts, pose))
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n")
    write_trajectory(records, out / "gt.tum")
    save_scene(scene, out / "scene.json")
    print(f"wrote {args.frames} scans to {out}")
    return EXIT_OK


def random_instance(n: int, seed: int) -> np.ndarray:
    """Random PSD 6x6 information blocks with mixed ranks and scales."""
    rng = np.random.default_rng(seed)
    ranks = rng.integers(1, 4, size=n)
    scales = rng.uniform(0.2, 3.0, size=n)
    lams = np.zeros((n, 6, 6))
    for i in range(n):
        g = rng.normal(size=(6, ranks[i]))
        lams[i] = scales[i] * (g @ g.T)
    return lams


def _cmd_select_bench(args) -> int:
    bound = 1.0 - 1.0 / math.e - args.epsilon
    prior = 1e-3
    prior_logdet = 6.0 * math.log(prior)
    stats = {"stochastic": [], "simple": [], "random": [], "brute": []}
    evals = {"stochastic": [], "simple": []}
    for trial in range(args.trials):
        lams = random_instance(args.n, seed=args.seed + 1000 * trial)
        brute = brute_force_select(CandidatePool.from_info_blocks(lams), args.m)
        opt = brute.achieved_metric - prior_logdet
        cfg = SelectorConfig(budget=args.m, epsilon=args.epsilon, t_max=10.0,
                             rng_seed=args.seed + trial)
        sto = stochastic_greedy_select(CandidatePool.from_info_blocks(lams), cfg)
        sim = simple_greedy_select(CandidatePool.from_info_blocks(lams), cfg)
        rnd = random_select(CandidatePool.from_info_blocks(lams), args.m,
                            rng_seed=args.seed + trial)
        stats["brute"].append(opt)
        stats["stochastic"].append((sto.achieved_metric - prior_logdet) / opt)
        stats["simple"].append((sim.achieved_metric - prior_logdet) / opt)
        stats["random"].append((rnd.achieved_metric - prior_logdet) / opt)
        evals["stochastic"].append(sto.oracle_evaluations)
        evals["simple"].append(sim.oracle_evaluations)

    mean_ratio = float(np.mean(stats["stochastic"]))
    print(f"instances: n={args.n} m={args.m} epsilon={args.epsilon} trials={args.trials}")
    print(f"{'method':<12}{'mean ratio':>12}{'min ratio':>12}{'mean evals':>12}")
    for name in ("stochastic", "simple", "random"):
        ratios = np.asarray(stats[name])
        ev = float(np.mean(evals[name])) if name in evals else float("nan")
        print(f"{name:<12}{ratios.mean():>12.4f}{ratios.min():>12.4f}{ev:>12.1f}")
    print(f"expected-ratio bound (1 - 1/e - eps): {bound:.4f}")
    print(f"mean ratio: {mean_ratio:.4f}")
    print(f"bound satisfied: {mean_ratio >= bound}")
    return EXIT_OK


def _cmd_degeneracy_calibrate(args) -> int:
    try:
        values = load_config(args.config)
        values["degeneracy.adaptive"] = True
        values["degeneracy.interval_frames"] = 1
        config = build_pipeline_config(values, mode="full", seed=0)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        scans = load_scan_sequence(args.input)
    except (ScanFormatError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA

    results = run_sequence(scans, config)
    lambdas = [fr.degeneracy.factor for fr in results if fr.degeneracy is not None]
    counts, edges = np.histogram(lambdas, bins=args.bins)
    payload = {
        "n_frames": len(lambdas),
        "lambda_per_frame": lambdas,
        "mean": float(np.mean(lambdas)) if lambdas else None,
        "std": float(np.std(lambdas)) if lambdas else None,
        "min": float(np.min(lambdas)) if lambdas else None,
        "max": float(np.max(lambdas)) if lambdas else None,
        "histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
        "lambda_th": config.degeneracy.lambda_th,
    }
    text = json.dumps(payload, indent=2)
    if args.output:
        Path(args.output).write_text(text)
        print(f"wrote {args.output}")
    else:
        print(text)
    return EXIT_OK


def _cmd_eval(args) -> int:
    try:
        est = read_trajectory(args.est)
        gt = read_trajectory(args.gt)
        ate_report = evaluation.ate(est, gt)
        rpe_report = evaluation.rpe(est, gt, delta_frames=args.rpe_delta)
    except (ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps({
        "ate": {
            "rmse_translation": ate_report.rmse_translation,
            "rmse_rotation_deg": ate_report.rmse_rotation_deg,
            "n_pairs": ate_report.n_pairs,
        },
        "rpe": {
            "delta_frames": rpe_report.delta_frames,
            "mean_translation": rpe_report.mean_translation,
            "median_translation": rpe_report.median_translation,
            "rmse_translation": rpe_report.rmse_translation,
            "mean_rotation_deg": rpe_report.mean_rotation_deg,
            "rmse_rotation_deg": rpe_report.rmse_rotation_deg,
            "n_pairs": rpe_report.n_pairs,
        },
    }, indent=2))
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "synth": _cmd_synth,
    "select-bench": _cmd_select_bench,
    "degeneracy-calibrate": _cmd_degeneracy_calibrate,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
