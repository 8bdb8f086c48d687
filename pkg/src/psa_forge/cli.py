"""Command-line pipeline driver.

Subcommands: preprocess | augment | pretrain | cluster-eval | sweep.
Global flags: --seed, --jobs, --profiles, --config. A JSON config file,
when given, overrides any flag of the selected subcommand. Exit codes:
0 success, 1 usage error, 2 data error, 3 numerical failure.

Reports contain no timestamps, so reruns with equal flags and seed are
byte-identical.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .augment import AugRanges, make_views, sample_aug
from .beamsim import POLARMIX_CROP_DEG, POLARMIX_RENDERS, resample_pattern, sample_config, sample_polarmix, apply_polarmix, PolarMixPlan
from .boxfit import FilterParams, PipelineParams, generate_pseudo_boxes
from .cluster import EPS_PRESETS
from .ground import GroundParams
from .losses import DEFAULT_TAU, LossConfig
from .network import TrainConfig
from .rng import SeededRng
from .scanio import (
    DEFAULT_CONFIG_PROBS,
    CacheError,
    MalformedScanError,
    ProfileError,
    default_profiles,
    load_lidar_profiles,
    read_scan,
    write_frame_cache,
    write_scan,
)
from .evalbox import cluster_eval, format_eval_report
from .synthetic import make_scene
from .train import eval_center_error, pretrain, save_params, write_trace_csv

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; remap to our contract.
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psa-forge", description=__doc__)
    parser.add_argument("--seed", type=int, default=0, help="root random seed (default 0)")
    parser.add_argument("--jobs", type=int, default=1, help="frame-level parallelism (default 1)")
    parser.add_argument("--profiles", type=Path, default=None, help="sensor profile JSON (default: built-in v32/v64/o64)")
    parser.add_argument("--config", type=Path, default=None, help="JSON file whose entries override any flag")
    sub = parser.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("preprocess", help="generate pseudo-box frame caches from scans")
    pre.add_argument("--scans", type=Path, required=True)
    pre.add_argument("--out", type=Path, required=True)
    pre.add_argument("--cluster-algo", choices=("dbscan", "hdbscan"), default="dbscan")
    pre.add_argument("--eps", type=float, default=EPS_PRESETS["semantickitti"],
                     help=f"clustering scale; presets: {EPS_PRESETS}")
    pre.add_argument("--min-cluster-size", type=int, default=20)
    pre.add_argument("--min-samples", type=int, default=None)
    pre.add_argument("--dbscan-min-pts", type=int, default=5)
    pre.add_argument("--ground-iters", type=int, default=GroundParams.iterations)
    pre.add_argument("--ground-threshold", type=float, default=GroundParams.inlier_threshold_m)
    pre.add_argument("--ground-zones", type=int, default=GroundParams.zone_count)
    pre.add_argument("--max-volume", type=float, default=FilterParams.max_volume_m3)
    pre.add_argument("--max-bottom", type=float, default=FilterParams.max_bottom_above_ground_m)
    pre.add_argument("--min-top", type=float, default=FilterParams.min_top_above_ground_m)
    pre.add_argument("--emit-ply", action="store_true", help="write colored PLY per frame")

    aug = sub.add_parser("augment", help="emit an augmented scan plus its replay record")
    aug.add_argument("--scan", type=Path, required=True)
    aug.add_argument("--profile", default=None, help="profile name for single-pattern mode (default: sampled)")
    aug.add_argument("--mode", choices=("single", "polarmix", "none"), default="single")
    aug.add_argument("--out", type=Path, required=True)
    aug.add_argument("--probs", default=",".join(str(p) for p in DEFAULT_CONFIG_PROBS),
                     help="comma-separated config sampling weights")

    tr = sub.add_parser("pretrain", help="run the toy pretraining loop")
    src = tr.add_mutually_exclusive_group(required=True)
    src.add_argument("--cache", type=Path, help="preprocessing cache dir (requires --scans)")
    src.add_argument("--synthetic", action="store_true", help="train on procedural scenes")
    tr.add_argument("--scans", type=Path, default=None)
    tr.add_argument("--iters", type=int, default=TrainConfig.iterations)
    tr.add_argument("--mode", choices=("cluster", "scene"), default="cluster")
    tr.add_argument("--beta2", type=float, default=LossConfig.beta2)
    tr.add_argument("--tau", type=float, default=None,
                    help=f"temperature (default per mode: {DEFAULT_TAU})")
    tr.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    tr.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    tr.add_argument("--queue-size", type=int, default=LossConfig.queue_size)
    tr.add_argument("--pattern", choices=("single_pattern", "polarmix", "none"), default="single_pattern")
    tr.add_argument("--probs", default=",".join(str(p) for p in DEFAULT_CONFIG_PROBS))
    tr.add_argument("--synthetic-frames", type=int, default=24)
    tr.add_argument("--out", type=Path, required=True)

    ce = sub.add_parser("cluster-eval", help="score a cache against reference boxes")
    ce.add_argument("--cache", type=Path, required=True)
    ce.add_argument("--truth", type=Path, required=True)
    ce.add_argument("--out", type=Path, default=None)

    sw = sub.add_parser("sweep", help="parameter sensitivity table on synthetic scenes")
    sw.add_argument("--param", choices=("eps", "prob_v32"), required=True)
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--frames", type=int, default=12)
    sw.add_argument("--iters", type=int, default=40, help="pretraining iterations per value")
    sw.add_argument("--draws", type=int, default=100_000, help="config draws for prob sweeps")
    sw.add_argument("--metric-script", type=Path, default=None,
                    help="optional script invoked with a context JSON path; prints one float")
    sw.add_argument("--out", type=Path, required=True)
    return parser


def _apply_config_file(args: argparse.Namespace) -> None:
    if args.config is None:
        return
    try:
        overrides = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CacheError(f"config file {args.config}: {exc}") from exc
    if not isinstance(overrides, dict):
        raise CacheError(f"config file {args.config}: expected a JSON object")
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise _UsageError(f"config file sets unknown flag {key!r}")
        if attr in ("scans", "out", "cache", "truth", "scan", "metric_script"):
            value = Path(value)
        setattr(args, attr, value)


def _load_profiles(args):
    return load_lidar_profiles(args.profiles) if args.profiles else default_profiles()


def _parse_probs(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in str(text).split(","))
    except ValueError as exc:
        raise _UsageError(f"invalid probability list {text!r}") from exc


def _write_ply(path: Path, cloud) -> None:
    palette = np.array(
        [[228, 26, 28], [55, 126, 184], [77, 175, 74], [152, 78, 163],
         [255, 127, 0], [255, 255, 51], [166, 86, 40], [247, 129, 191]]
    )
    labels = cloud.labels if cloud.labels is not None else np.full(len(cloud), -1)
    colors = np.where(
        labels[:, None] < 0, np.array([[120, 120, 120]]), palette[labels % len(palette)]
    )
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(cloud)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n")
        for (x, y, z), (r, g, b) in zip(cloud.xyz, colors):
            fh.write(f"{x:.4f} {y:.4f} {z:.4f} {r} {g} {b}\n")


def _pipeline_params(args) -> PipelineParams:
    return PipelineParams(
        ground=GroundParams(
            iterations=args.ground_iters,
            inlier_threshold_m=args.ground_threshold,
            zone_count=args.ground_zones,
        ),
        cluster_algo=args.cluster_algo,
        eps=args.eps,
        min_cluster_size=args.min_cluster_size,
        min_samples=args.min_samples,
        dbscan_min_pts=args.dbscan_min_pts,
        filters=FilterParams(
            max_volume_m3=args.max_volume,
            max_bottom_above_ground_m=args.max_bottom,
            min_top_above_ground_m=args.min_top,
        ),
    )


def _preprocess_worker(job):
    path_str, out_dir, seed, index, params, emit_ply = job
    path = Path(path_str)
    try:
        cloud = read_scan(path)
        labels, boxes, stats = generate_pseudo_boxes(
            cloud, SeededRng(seed).child(index), params, return_stats=True
        )
        write_frame_cache(cloud.frame_id, boxes, labels, out_dir)
        if emit_ply:
            _write_ply(Path(out_dir) / f"{cloud.frame_id}.ply", cloud.with_labels(labels))
        return {
            "frame_id": cloud.frame_id,
            "clusters": stats["clusters"],
            "boxes": len(boxes),
            "rejected": {k: stats[k] for k in ("volume", "floating", "underground")},
            "error": None,
        }
    except Exception as exc:  # per-frame failures skip the frame
        return {"frame_id": path.stem, "error": f"{type(exc).__name__}: {exc}"}


def cmd_preprocess(args) -> int:
    scans = sorted(Path(args.scans).glob("*.bin"))
    if not scans:
        print(f"error: no *.bin scans under {args.scans}", file=sys.stderr)
        return EXIT_DATA
    params = _pipeline_params(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [
        (str(p), str(out_dir), args.seed, i, params, args.emit_ply)
        for i, p in enumerate(scans)
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_preprocess_worker, jobs))
    else:
        results = [_preprocess_worker(j) for j in jobs]
    results.sort(key=lambda r: r["frame_id"])

    ok = [r for r in results if r["error"] is None]
    failed = [r for r in results if r["error"] is not None]
    for r in failed:
        print(f"warning: skipped {r['frame_id']}: {r['error']}", file=sys.stderr)
    lines = [
        "preprocess report",
        f"flags: cluster_algo={args.cluster_algo} eps={args.eps} "
        f"min_cluster_size={args.min_cluster_size} min_samples={args.min_samples} "
        f"dbscan_min_pts={args.dbscan_min_pts} ground_iters={args.ground_iters} "
        f"ground_threshold={args.ground_threshold} ground_zones={args.ground_zones} "
        f"max_volume={args.max_volume} max_bottom={args.max_bottom} min_top={args.min_top} "
        f"seed={args.seed}",
        f"frames processed: {len(ok)} (skipped {len(failed)})",
    ]
    if ok:
        rejected = {k: sum(r["rejected"][k] for r in ok) for k in ("volume", "floating", "underground")}
        lines += [
            f"mean clusters/frame: {np.mean([r['clusters'] for r in ok]):.3f}",
            f"boxes kept: {sum(r['boxes'] for r in ok)}",
            f"boxes rejected: volume={rejected['volume']} floating={rejected['floating']} "
            f"underground={rejected['underground']}",
        ]
        lines += [
            f"  {r['frame_id']}: clusters={r['clusters']} boxes={r['boxes']}" for r in ok
        ]
    report = "\n".join(lines) + "\n"
    print(report, end="")
    (out_dir / "report.txt").write_text(report)
    return EXIT_OK if ok else EXIT_DATA


def cmd_augment(args) -> int:
    profiles = _load_profiles(args)
    probs = _parse_probs(args.probs)
    cloud = read_scan(args.scan)
    rng = SeededRng(args.seed)
    rec = sample_aug(rng.child(0), AugRanges(), cloud.bounds())
    if args.mode == "single":
        if args.profile is not None:
            if args.profile not in profiles:
                raise CacheError(f"unknown profile {args.profile!r}")
            name = args.profile
        else:
            name = sample_config(rng.child(1), profiles, probs).name
        rec = replace(rec, lidar_config=name)
    elif args.mode == "polarmix":
        plan = sample_polarmix(rng.child(1), profiles, probs)
        rec = replace(rec, polarmix_configs=plan.config_names, polarmix_sectors=plan.sectors)
    from .augment import apply_to_points

    out_cloud = apply_to_points(cloud, rec, profiles)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_scan(out_dir / f"{cloud.frame_id}.bin", out_cloud)
    (out_dir / f"{cloud.frame_id}.aug.json").write_text(json.dumps(rec.to_dict(), indent=2) + "\n")
    print(f"{cloud.frame_id}: {len(cloud)} -> {len(out_cloud)} points")
    return EXIT_OK


def _synthetic_frames(seed: int, count: int, pseudo: bool, params: PipelineParams):
    """Scenes with pipeline pseudo-labels (pseudo=True) or true labels."""
    rng = SeededRng(seed)
    frames = []
    for i in range(count):
        scene = make_scene(rng.child(10, i), frame_id=f"syn{i:04d}")
        if pseudo:
            labels, boxes = generate_pseudo_boxes(scene.cloud, rng.child(11, i), params)
            frames.append((scene.cloud.with_labels(labels), boxes))
        else:
            frames.append((scene.cloud, list(scene.boxes)))
    return frames


def cmd_pretrain(args) -> int:
    profiles = _load_profiles(args)
    probs = _parse_probs(args.probs)
    tau = args.tau if args.tau is not None else DEFAULT_TAU[args.mode]
    loss_cfg = LossConfig(beta2=args.beta2, tau=tau, queue_size=args.queue_size)
    train_cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, iterations=args.iters)

    heldout = None
    if args.synthetic:
        frames = _synthetic_frames(args.seed, args.synthetic_frames, pseudo=True, params=PipelineParams())
        heldout = _synthetic_frames(args.seed + 1, max(4, args.synthetic_frames // 4), pseudo=False, params=PipelineParams())
    else:
        if args.scans is None:
            raise _UsageError("--cache requires --scans for the point data")
        from .scanio import list_cached_frames, read_frame_cache

        frames = []
        for fid in list_cached_frames(args.cache):
            scan_path = Path(args.scans) / f"{fid}.bin"
            if not scan_path.exists():
                raise CacheError(f"scan for cached frame {fid!r} not found at {scan_path}")
            cloud = read_scan(scan_path)
            boxes, labels = read_frame_cache(args.cache, fid)
            if len(labels) != len(cloud):
                raise CacheError(f"{fid}: cache has {len(labels)} labels for {len(cloud)} points")
            frames.append((cloud.with_labels(labels), boxes))
        if not frames:
            print(f"error: no cached frames under {args.cache}", file=sys.stderr)
            return EXIT_DATA

    result = pretrain(
        frames,
        loss_cfg,
        train_cfg,
        seed=args.seed,
        mode=args.mode,
        pattern_mode=args.pattern,
        profiles=profiles,
        probs=probs,
        heldout=heldout,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trace_csv(out_dir / "trace.csv", result.trace)
    save_params(out_dir / "params.bin", result.params)
    lines = [f"{k}: {v}" for k, v in sorted(result.metrics.items())]
    report = "pretrain metrics\n" + "\n".join(lines) + "\n"
    (out_dir / "metrics.txt").write_text(report)
    print(report, end="")
    return EXIT_OK


def cmd_cluster_eval(args) -> int:
    report = cluster_eval(args.cache, args.truth)
    text = format_eval_report(report)
    print(text, end="")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    return EXIT_OK


def _run_metric_script(script: Path, context: dict, out_dir: Path, tag: str) -> float:
    ctx_path = out_dir / f"metric_context_{tag}.json"
    ctx_path.write_text(json.dumps(context, indent=2))
    proc = subprocess.run(
        [sys.executable, str(script), str(ctx_path)], capture_output=True, text=True
    )
    if proc.returncode != 0:
        raise CacheError(f"metric script failed for {tag}: {proc.stderr.strip()}")
    return float(proc.stdout.strip())


def cmd_sweep(args) -> int:
    values = [v for v in str(args.values).split(",") if v]
    if not values:
        raise _UsageError("--values must be a non-empty comma list")
    profiles = _load_profiles(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for value_text in values:
        value = float(value_text)
        if args.param == "eps":
            if value <= 0:
                raise _UsageError(f"eps must be positive, got {value}")
            params = PipelineParams(eps=value)
            frames = _synthetic_frames(args.seed, args.frames, pseudo=True, params=params)
            clusters = [int(labels.max()) + 1 if labels.max() >= 0 else 0 for labels, _ in
                        ((f[0].labels, f[1]) for f in frames)]
            row = {
                "value": value,
                "mean_clusters": float(np.mean(clusters)),
                "total_boxes": int(sum(len(f[1]) for f in frames)),
            }
            probs = DEFAULT_CONFIG_PROBS
        else:
            if not 0 <= value <= 1:
                raise _UsageError(f"prob_v32 must lie in [0, 1], got {value}")
            rest = (1.0 - value) / (len(profiles) - 1)
            probs = (value,) + (rest,) * (len(profiles) - 1)
            rng = SeededRng(args.seed).child(7)
            names = list(profiles)
            counts = dict.fromkeys(names, 0)
            for _ in range(args.draws):
                counts[sample_config(rng, profiles, probs).name] += 1
            row = {"value": value}
            row.update({f"freq_{n}": counts[n] / args.draws for n in names})
            frames = _synthetic_frames(args.seed, args.frames, pseudo=True, params=PipelineParams())
        if args.iters > 0:
            result = pretrain(
                frames,
                LossConfig.for_mode("cluster"),
                TrainConfig(iterations=args.iters),
                seed=args.seed,
                profiles=profiles,
                probs=probs,
            )
            row["final_loss"] = result.metrics["final_window_mean"]
        if args.metric_script:
            context = {"param": args.param, "value": value, "row": row}
            row["custom"] = _run_metric_script(args.metric_script, context, out_dir, value_text)
        rows.append(row)

    cols = sorted({k for r in rows for k in r}, key=lambda c: (c != "value", c))
    lines = ["\t".join(cols)]
    for r in rows:
        lines.append("\t".join(f"{r.get(c, ''):.6g}" if isinstance(r.get(c), float) else str(r.get(c, "")) for c in cols))
    table = "\n".join(lines) + "\n"
    print(table, end="")
    (out_dir / f"sweep_{args.param}.tsv").write_text(table)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_file(args)
        handler = {
            "preprocess": cmd_preprocess,
            "augment": cmd_augment,
            "pretrain": cmd_pretrain,
            "cluster-eval": cmd_cluster_eval,
            "sweep": cmd_sweep,
        }[args.command]
        return handler(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, CacheError, ProfileError, MalformedScanError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
