"""Command-line surface: generate / track / eval / bench.

Exit codes: 0 success, 2 config error, 3 IO or format error, 4 numerical
failure. All outputs are binary-first (RSTM/RSTS/RSTV) with CSV exports
for interop; every output directory carries a manifest with the config
hash, seed, and library version.
"""

from __future__ import annotations

import argparse
import math
import os
import shutil
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import io as rio
from .config import RunConfig, load_config
from .datagen import GroundTruth, gen_dataset, perturb_basis
from .errors import ConfigError, FormatError, Misalignment, RstrackError
from .linalg import Basis
from .metrics import RunMetrics, evaluate, summarize
from .tracker import (
    FrameEstimate,
    OfflineEstimate,
    Tracker,
    init_batch,
    offline_pass,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

METRICS_HEADER = [
    "t", "se", "l_rel_err", "x_abs_err", "supp_precision", "supp_recall",
    "phase", "j", "k", "detect_flag", "frame_time_us",
]


# ---------------------------------------------------------------- generate

def write_dataset(out_dir: str, Y: np.ndarray, truth: GroundTruth,
                  cfg_hash: str, seed: int, export_csv: bool = False) -> None:
    os.makedirs(out_dir, exist_ok=True)
    rio.write_matrix(os.path.join(out_dir, "Y.rstm"), Y)
    rio.write_matrix(os.path.join(out_dir, "L.rstm"), truth.L)
    rio.write_matrix(os.path.join(out_dir, "X.rstm"), truth.X)
    rio.write_matrix(os.path.join(out_dir, "V.rstm"), truth.V)
    rio.write_supports(os.path.join(out_dir, "supports.rsts"), truth.supports, truth.n)
    for j, basis in enumerate(truth.bases):
        rio.write_matrix(
            os.path.join(out_dir, f"truth_basis_{j:03d}.rstm"), basis.cols
        )
    rio.write_csv(
        os.path.join(out_dir, "segments.csv"),
        ["j", "t_j", "theta_j"],
        [(j + 1, t, th) for j, (t, th) in
         enumerate(zip(truth.change_times, truth.thetas))],
    )
    if export_csv:
        np.savetxt(os.path.join(out_dir, "Y.csv"), Y, delimiter=",", fmt="%.17g")
    rio.write_manifest(
        os.path.join(out_dir, "manifest.json"), "dataset",
        seed=seed, cfg_hash=cfg_hash,
        n=truth.n, t_max=truth.t_max,
        t_train=truth.descriptors.get("t_train"),
    )


def read_dataset(dir_path: str) -> tuple[np.ndarray, GroundTruth, dict]:
    manifest = rio.read_manifest(os.path.join(dir_path, "manifest.json"))
    Y = rio.read_matrix(os.path.join(dir_path, "Y.rstm"))
    L = rio.read_matrix(os.path.join(dir_path, "L.rstm"))
    X = rio.read_matrix(os.path.join(dir_path, "X.rstm"))
    v_path = os.path.join(dir_path, "V.rstm")
    V = rio.read_matrix(v_path) if os.path.exists(v_path) else np.zeros_like(Y)
    supports, n = rio.read_supports(os.path.join(dir_path, "supports.rsts"))
    if n != Y.shape[0] or len(supports) != Y.shape[1]:
        raise Misalignment("supports.rsts does not match Y.rstm")
    bases = []
    j = 0
    while True:
        path = os.path.join(dir_path, f"truth_basis_{j:03d}.rstm")
        if not os.path.exists(path):
            break
        bases.append(Basis(rio.read_matrix(path)))
        j += 1
    if not bases:
        raise FormatError(f"{dir_path}: no truth_basis files")
    change_times, thetas = [], []
    seg_path = os.path.join(dir_path, "segments.csv")
    if os.path.exists(seg_path):
        _, rows = rio.read_csv(seg_path)
        for row in rows:
            change_times.append(int(row[1]))
            thetas.append(float(row[2]))
    truth = GroundTruth(
        bases=bases, change_times=change_times, thetas=thetas,
        new_directions=[], supports=supports, L=L, X=X, V=V,
        seed=manifest.get("seed", 0),
        descriptors={"t_train": manifest.get("t_train")},
    )
    return Y, truth, manifest


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    Y, truth = gen_dataset(cfg.datagen, args.seed)
    write_dataset(
        args.out, Y, truth, rio.config_hash(cfg.raw_bytes), args.seed,
        export_csv=args.csv,
    )
    return EXIT_OK


# ------------------------------------------------------------------- track

def _initial_basis(cfg: RunConfig, Y: np.ndarray, input_dir: str,
                   oracle_se, seed: int) -> Basis:
    params = cfg.tracker.params
    if oracle_se is not None or cfg.tracker.init_kind == "oracle":
        se = cfg.tracker.init_oracle_se if oracle_se is None else float(oracle_se)
        p_true = Basis(
            rio.read_matrix(os.path.join(input_dir, "truth_basis_000.rstm"))
        )
        if se <= 0:
            return p_true
        rng = np.random.default_rng(seed ^ 0xACCE55)
        return perturb_basis(p_true, se, rng)
    return init_batch(Y[:, : params.t_train], params.r, iters=cfg.tracker.init_iters)


def write_track_outputs(out_dir: str, estimates, state, cfg_hash, seed,
                        offline=None, offline_bases=None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    n = state.p_star.n
    supports = [e.support for e in estimates]
    rio.write_supports(os.path.join(out_dir, "xhat.rsts"), supports, n)
    rio.write_values(
        os.path.join(out_dir, "xhat_values.rstv"),
        np.concatenate([e.x_hat[e.support] for e in estimates])
        if estimates else np.zeros(0),
    )
    rio.write_matrix(
        os.path.join(out_dir, "lhat.rstm"),
        np.column_stack([e.l_hat for e in estimates]),
    )
    rio.write_csv(
        os.path.join(out_dir, "frames.csv"),
        ["t", "phase", "j", "k", "detect_flag", "frame_time_us", "basis_id",
         "ls_fallback"],
        [(e.t, e.phase_tag, e.j, e.k, e.detect_flag, e.frame_time * 1e6,
          e.basis_id, e.ls_fallback) for e in estimates],
    )
    rio.write_csv(
        os.path.join(out_dir, "detects.csv"), ["t_hat"],
        [(t,) for t in state.detections],
    )
    bases_dir = os.path.join(out_dir, "bases")
    os.makedirs(bases_dir, exist_ok=True)
    for bid, basis in sorted(state.bases.items()):
        rio.write_matrix(
            os.path.join(bases_dir, f"basis_{bid:04d}.rstm"), basis.cols
        )
    if offline is not None:
        rio.write_supports(
            os.path.join(out_dir, "xhat_offline.rsts"),
            [e.support for e in offline], n,
        )
        rio.write_values(
            os.path.join(out_dir, "xhat_offline_values.rstv"),
            np.concatenate([e.x_hat[e.support] for e in offline])
            if offline else np.zeros(0),
        )
        rio.write_matrix(
            os.path.join(out_dir, "lhat_offline.rstm"),
            np.column_stack([e.l_hat for e in offline]),
        )
        rio.write_csv(
            os.path.join(out_dir, "frames_offline.csv"),
            ["t", "basis_id", "ls_fallback"],
            [(e.t, e.basis_id, e.ls_fallback) for e in offline],
        )
        off_dir = os.path.join(out_dir, "bases_offline")
        os.makedirs(off_dir, exist_ok=True)
        for bid, basis in sorted((offline_bases or {}).items()):
            rio.write_matrix(
                os.path.join(off_dir, f"basis_{-bid:04d}.rstm"), basis.cols
            )
    rio.write_manifest(
        os.path.join(out_dir, "manifest.json"), "track",
        seed=seed, cfg_hash=cfg_hash, n=n,
        t_start=estimates[0].t if estimates else None,
        t_stop=estimates[-1].t + 1 if estimates else None,
        offline=offline is not None,
    )


def run_track(cfg: RunConfig, input_dir: str, out_dir: str,
              offline_flag: bool, oracle_se, seed: int):
    Y = rio.read_matrix(os.path.join(input_dir, "Y.rstm"))
    params = cfg.tracker.params
    if offline_flag and not params.store_offline:
        from dataclasses import replace

        params = replace(params, store_offline=True)
    p0 = _initial_basis(cfg, Y, input_dir, oracle_se, seed)
    tracker = Tracker(p0, params)
    estimates = tracker.run(Y)
    offline = offline_bases = None
    if params.store_offline:
        offline, offline_bases = offline_pass(tracker.state, estimates)
    write_track_outputs(
        out_dir, estimates, tracker.state, rio.config_hash(cfg.raw_bytes),
        seed, offline=offline, offline_bases=offline_bases,
    )
    return tracker, estimates, offline, offline_bases


def cmd_track(args) -> int:
    cfg = load_config(args.config)
    manifest = rio.read_manifest(os.path.join(args.input, "manifest.json"))
    seed = manifest.get("seed") or 0
    run_track(cfg, args.input, args.out, args.offline, args.init_oracle, seed)
    return EXIT_OK


# -------------------------------------------------------------------- eval

def read_track_outputs(est_dir: str):
    manifest = rio.read_manifest(os.path.join(est_dir, "manifest.json"))
    supports, n = rio.read_supports(os.path.join(est_dir, "xhat.rsts"))
    values = rio.read_values(os.path.join(est_dir, "xhat_values.rstv"))
    lhat = rio.read_matrix(os.path.join(est_dir, "lhat.rstm"))
    header, rows = rio.read_csv(os.path.join(est_dir, "frames.csv"))
    if lhat.shape[0] != n or len(rows) != len(supports) or lhat.shape[1] != len(rows):
        raise Misalignment(f"{est_dir}: inconsistent estimate files")
    bases = {}
    bases_dir = os.path.join(est_dir, "bases")
    for name in sorted(os.listdir(bases_dir)):
        if name.endswith(".rstm"):
            bid = int(name[len("basis_"):-len(".rstm")])
            bases[bid] = Basis(rio.read_matrix(os.path.join(bases_dir, name)))
    estimates = []
    off = 0
    for row, supp in zip(rows, supports):
        t, phase, j, k, det, ft_us, bid, fb = row
        x_hat = np.zeros(n)
        x_hat[supp] = values[off:off + supp.size]
        off += supp.size
        estimates.append(
            FrameEstimate(
                t=int(t), x_hat=x_hat, l_hat=lhat[:, len(estimates)],
                support=supp, phase_tag=phase, j=int(j), k=int(k),
                detect_flag=det == "1", frame_time=float(ft_us) / 1e6,
                basis_id=int(bid), ls_fallback=fb == "1",
            )
        )
    offline = offline_bases = None
    if os.path.exists(os.path.join(est_dir, "lhat_offline.rstm")):
        osupports, _ = rio.read_supports(os.path.join(est_dir, "xhat_offline.rsts"))
        ovalues = rio.read_values(os.path.join(est_dir, "xhat_offline_values.rstv"))
        olhat = rio.read_matrix(os.path.join(est_dir, "lhat_offline.rstm"))
        _, orows = rio.read_csv(os.path.join(est_dir, "frames_offline.csv"))
        offline_bases = {}
        odir = os.path.join(est_dir, "bases_offline")
        if os.path.isdir(odir):
            for name in sorted(os.listdir(odir)):
                if name.endswith(".rstm"):
                    bid = -int(name[len("basis_"):-len(".rstm")])
                    offline_bases[bid] = Basis(
                        rio.read_matrix(os.path.join(odir, name))
                    )
        offline = []
        ooff = 0
        for row, supp in zip(orows, osupports):
            t, bid, fb = row
            x_hat = np.zeros(n)
            x_hat[supp] = ovalues[ooff:ooff + supp.size]
            ooff += supp.size
            offline.append(
                OfflineEstimate(
                    t=int(t), x_hat=x_hat, l_hat=olhat[:, len(offline)],
                    support=supp, basis_id=int(bid), ls_fallback=fb == "1",
                )
            )
    return estimates, bases, offline, offline_bases, manifest


def write_metrics_csv(out_path: str, metrics: RunMetrics) -> None:
    f = metrics.frames
    rows = []
    for i in range(len(f["t"])):
        rows.append(
            (f["t"][i], f["se"][i], f["l_rel_err"][i], f["x_abs_err"][i],
             f["supp_precision"][i], f["supp_recall"][i], f["phase"][i],
             f["j"][i], f["k"][i], f["detect_flag"][i],
             f["frame_time"][i] * 1e6)
        )
    rio.write_csv(out_path, METRICS_HEADER, rows)


def run_eval(est_dir: str, truth_dir: str, out_path: str) -> RunMetrics:
    Y, truth, _ = read_dataset(truth_dir)
    estimates, bases, offline, offline_bases, _ = read_track_outputs(est_dir)
    metrics = evaluate(estimates, truth, bases, offline=offline,
                       offline_bases=offline_bases)
    out_dir = os.path.dirname(os.path.abspath(out_path))
    os.makedirs(out_dir, exist_ok=True)
    write_metrics_csv(out_path, metrics)
    rio.write_csv(
        os.path.join(out_dir, "changes.csv"),
        ["j", "t_j", "t_hat_j", "delay_frames", "pipeline_overrun"],
        [(c.j, c.t_j, -1 if c.t_hat_j is None else c.t_hat_j,
          -1 if c.delay_frames is None else c.delay_frames,
          c.pipeline_overrun) for c in metrics.changes],
    )
    if metrics.offline_se is not None:
        rio.write_csv(
            os.path.join(out_dir, "metrics_offline.csv"),
            ["t", "se"],
            list(zip(metrics.frames["t"], metrics.offline_se)),
        )
    rio.write_csv(
        os.path.join(out_dir, "summary.csv"),
        ["mean_se", "mean_se_offline", "mean_frame_time_us",
         "false_detections", "detected_changes", "total_changes"],
        [(metrics.mean_se, metrics.mean_se_offline,
          metrics.mean_frame_time * 1e6, len(metrics.false_detections),
          sum(1 for c in metrics.changes if c.t_hat_j is not None),
          len(metrics.changes))],
    )
    return metrics


def cmd_eval(args) -> int:
    run_eval(args.est, args.truth, args.out)
    return EXIT_OK


# ------------------------------------------------------------------- bench

def _trial(config_path: str, seed: int, trial_dir: str,
           keep_artifacts: bool) -> dict:
    cfg = load_config(config_path)
    data_dir = os.path.join(trial_dir, "data")
    track_dir = os.path.join(trial_dir, "track")
    os.makedirs(trial_dir, exist_ok=True)
    Y, truth = gen_dataset(cfg.datagen, seed)
    write_dataset(data_dir, Y, truth, rio.config_hash(cfg.raw_bytes), seed)
    del Y, truth
    cfg_track = load_config(config_path)
    run_track(cfg_track, data_dir, track_dir,
              cfg_track.tracker.params.store_offline, None, seed)
    metrics = run_eval(track_dir, data_dir, os.path.join(trial_dir, "metrics.csv"))
    alpha = cfg.tracker.params.alpha
    t_train = cfg.tracker.params.t_train
    series = summarize(metrics, alpha=alpha, t_train=t_train)
    ok = (metrics.frames["supp_precision"] == 1.0) & (
        metrics.frames["supp_recall"] == 1.0
    )
    delays = [c.delay_frames for c in metrics.changes if c.delay_frames is not None]
    result = {
        "seed": seed,
        "mean_se": metrics.mean_se,
        "mean_se_offline": metrics.mean_se_offline,
        "mean_frame_time_us": metrics.mean_frame_time * 1e6,
        "false_detections": len(metrics.false_detections),
        "detected": sum(1 for c in metrics.changes if c.t_hat_j is not None),
        "changes": len(metrics.changes),
        "delays_ok": sum(1 for d in delays if 0 <= d <= 2 * alpha),
        "supp_exact_rate": float(ok.mean()),
        "series": [(row["k"], row["t"], row["se"], row["se_offline"])
                   for row in series if row["k"] >= 0],
    }
    if not keep_artifacts:
        shutil.rmtree(data_dir, ignore_errors=True)
        for name in ("xhat.rsts", "xhat_values.rstv", "lhat.rstm",
                     "xhat_offline.rsts", "xhat_offline_values.rstv",
                     "lhat_offline.rstm"):
            path = os.path.join(track_dir, name)
            if os.path.exists(path):
                os.remove(path)
    return result


def run_bench(config_path: str, trials: int, seed: int, out_dir: str,
              workers: int = 1, keep_artifacts: bool = True) -> tuple[list, list]:
    os.makedirs(out_dir, exist_ok=True)
    jobs = [
        (config_path, seed + i, os.path.join(out_dir, f"trial_{i:03d}"),
         keep_artifacts)
        for i in range(trials)
    ]
    results: list = [None] * trials
    failures: list = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(_trial, *job): i for i, job in enumerate(jobs)}
            for fut, i in futs.items():
                try:
                    results[i] = fut.result()
                except Exception as exc:  # noqa: BLE001 - partial-failure report
                    failures.append((i, repr(exc)))
    else:
        for i, job in enumerate(jobs):
            try:
                results[i] = _trial(*job)
            except Exception as exc:  # noqa: BLE001
                failures.append((i, repr(exc)))
                traceback.print_exc()

    done = [(i, r) for i, r in enumerate(results) if r is not None]
    rio.write_csv(
        os.path.join(out_dir, "bench_trials.csv"),
        ["trial", "seed", "mean_se", "mean_se_offline", "false_detections",
         "detected", "changes", "delays_ok", "supp_exact_rate"],
        [(i, r["seed"], r["mean_se"], r["mean_se_offline"],
          r["false_detections"], r["detected"], r["changes"], r["delays_ok"],
          r["supp_exact_rate"]) for i, r in done],
    )
    rio.write_csv(
        os.path.join(out_dir, "bench_timing.csv"),
        ["trial", "mean_frame_time_us"],
        [(i, r["mean_frame_time_us"]) for i, r in done],
    )
    if done:
        mean = lambda key: float(np.mean([r[key] for _, r in done]))  # noqa: E731
        agg_rows = [(
            len(done),
            mean("mean_se"),
            mean("mean_se_offline"),
            int(sum(r["false_detections"] for _, r in done)),
            int(sum(r["detected"] for _, r in done)),
            int(sum(r["changes"] for _, r in done)),
            int(sum(r["delays_ok"] for _, r in done)),
            min(r["supp_exact_rate"] for _, r in done),
            mean("supp_exact_rate"),
        )]
        rio.write_csv(
            os.path.join(out_dir, "bench_aggregate.csv"),
            ["trials", "mean_se", "mean_se_offline", "false_detections",
             "detected", "changes", "delays_ok", "min_supp_exact_rate",
             "mean_supp_exact_rate"],
            agg_rows,
        )
        # Fig-2-style series: mean across trials at each sampled t
        series_acc: dict = {}
        for _, r in done:
            for k, t, se, se_off in r["series"]:
                series_acc.setdefault((k, t), []).append((se, se_off))
        series_rows = []
        for (k, t), vals in sorted(series_acc.items()):
            ses = [v[0] for v in vals]
            offs = [v[1] for v in vals if v[1] == v[1]]
            series_rows.append(
                (k, t, float(np.mean(ses)),
                 float(np.mean(offs)) if offs else float("nan"), len(vals))
            )
        rio.write_csv(
            os.path.join(out_dir, "bench_series.csv"),
            ["k", "t", "mean_se", "mean_se_offline", "trials"],
            series_rows,
        )
    rio.write_csv(
        os.path.join(out_dir, "bench_failures.csv"),
        ["trial", "error"], failures,
    )
    rio.write_manifest(
        os.path.join(out_dir, "manifest.json"), "bench",
        seed=seed, cfg_hash=rio.config_hash(open(config_path, "rb").read()),
        trials=trials, failures=len(failures),
    )
    return [r for _, r in done], failures


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    trials = args.trials if args.trials is not None else cfg.bench.trials
    seed = args.seed if args.seed is not None else cfg.bench.seed
    workers = args.workers if args.workers is not None else cfg.bench.workers
    keep = cfg.bench.keep_artifacts if args.keep_artifacts is None else args.keep_artifacts
    _, failures = run_bench(
        args.config, trials, seed, args.out, workers=workers, keep_artifacts=keep
    )
    if failures:
        print(f"{len(failures)} trial(s) failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rstrack",
                                description="robust subspace tracking toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--csv", action="store_true", help="also export Y as csv")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("track", help="run the tracker over a dataset")
    t.add_argument("--input", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--offline", action="store_true",
                   help="also run the offline refinement pass")
    t.add_argument("--init-oracle", type=float, default=None, metavar="SE",
                   help="initialize from the true basis perturbed to this SE")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="score estimates against ground truth")
    e.add_argument("--est", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out", required=True, help="metrics.csv path")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="seeded generate+track+eval trials")
    b.add_argument("--config", required=True)
    b.add_argument("--trials", type=int, default=None)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--out", required=True)
    b.add_argument("--workers", type=int, default=None)
    b.add_argument("--keep-artifacts", action="store_true", default=None)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, Misalignment, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RstrackError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
