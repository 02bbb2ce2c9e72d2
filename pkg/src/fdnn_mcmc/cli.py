"""Command-line driver: ``fdnn-mcmc <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, fileio, mcmc, optim, pde, pipeline
from .config import PRESETS, ExperimentConfig, preset

logger = logging.getLogger("fdnn_mcmc")

EXIT_CONFIG, EXIT_FORMAT, EXIT_SOLVER, EXIT_OPTIM, EXIT_SAMPLER = 2, 3, 4, 5, 6


def _parse_overrides(items):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not key=value")
        out[key.strip()] = value.strip()
    return out


def resolve_config(args) -> ExperimentConfig:
    cfg = preset(args.preset)
    if args.config:
        cfg = ExperimentConfig.load(args.config, base=cfg)
    overrides = _parse_overrides(args.set)
    if args.workdir:
        overrides["workdir"] = args.workdir
    return cfg.with_overrides(overrides)


def _prepare_workdir(cfg: ExperimentConfig, command: str) -> Path:
    wd = Path(cfg.workdir)
    wd.mkdir(parents=True, exist_ok=True)
    cfg.save(wd / f"resolved_{command}.ini")
    return wd


def _check_header(header: dict, expected: dict, path) -> None:
    for key, value in expected.items():
        if key in header and str(header[key]) != str(value):
            raise fileio.FormatError(f"{path}: header {key}={header[key]} contradicts config ({value})")


def cmd_snapshots(cfg: ExperimentConfig, workers: int = 1) -> Path:
    wd = _prepare_workdir(cfg, "snapshots")
    run = pipeline.generate_snapshots(cfg, workers)
    out = wd / "snapshots.bin"
    fileio.write_snapshots(out, run.snapshots.parameters, run.snapshots.snapshots,
                           {"m": cfg.m, "seed": cfg.seed_snapshots, "lower": repr(cfg.lower),
                            "upper": repr(cfg.upper), "newton_tol": repr(cfg.newton_tol)})
    with open(wd / "snapshots_manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "xi_1", "xi_2", "newton_iterations", "failed"])
        params = pde.latin_hypercube(cfg.n_samples, cfg.bounds, cfg.seed_snapshots)
        for i, (p, it) in enumerate(zip(params, run.newton_iterations)):
            w.writerow([i, repr(float(p[0])), repr(float(p[1])), it, int(i in run.failures)])
    print(f"wrote {out} ({run.snapshots.snapshots.shape[1]} snapshots, {run.seconds:.1f} s)")
    return out


def _load_snapshots(cfg: ExperimentConfig, path=None):
    path = Path(path) if path else cfg.path("snapshots.bin")
    params, S, header = fileio.read_snapshots(path)
    _check_header(header, {"m": cfg.m, "N_x": cfg.n_x}, path)
    if int(header["N_s"]) > cfg.n_samples:
        raise fileio.FormatError(f"{path}: holds {header['N_s']} snapshots, config expects {cfg.n_samples}")
    from .pod import SnapshotSet
    return SnapshotSet(params, S)


def cmd_train(cfg: ExperimentConfig, snapshot_path=None) -> Path:
    wd = _prepare_workdir(cfg, "train")
    snaps = _load_snapshots(cfg, snapshot_path)
    run = pipeline.train_surrogate(snaps, cfg)
    run.result.write_log(wd / "training_log.csv")
    ckpt = wd / "checkpoint.bin"
    pipeline.save_training(run, cfg, ckpt, wd / "basis.bin")
    print(f"wrote {ckpt}: {run.result.iterations_used} BFGS iterations, "
          f"loss {run.result.loss_history[-1]:.4e} ({run.seconds:.1f} s)")
    return ckpt


def _surrogate(cfg: ExperimentConfig, checkpoint=None):
    ckpt = Path(checkpoint) if checkpoint else cfg.path("checkpoint.bin")
    basis = ckpt.with_name("basis.bin")
    sur = pipeline.load_surrogate(ckpt, basis)
    if sur.basis.n_x != cfg.n_x:
        raise fileio.FormatError(f"{basis}: basis dimension {sur.basis.n_x} contradicts grid m={cfg.m}")
    return sur


def cmd_mcmc(cfg: ExperimentConfig, checkpoint=None, full: bool = False, output=None) -> Path:
    wd = _prepare_workdir(cfg, "mcmc")
    fmap = mcmc.FullForwardMap(pde.GridConfig(cfg.m), cfg.newton_tol) if full else _surrogate(cfg, checkpoint)
    run = pipeline.run_inverse_problem(cfg, fmap)
    out = Path(output) if output else wd / ("chain_full.csv" if full else "chain.csv")
    run.chain.meta["wall_seconds"] = f"{run.seconds:.3f}"
    run.chain.to_csv(out)
    print(f"wrote {out}: acceptance {run.chain.acceptance_rate:.3f}, {run.seconds:.1f} s")
    return out


def cmd_diagnose(chain_path, outdir=None) -> Path:
    chain = mcmc.Chain.from_csv(chain_path)
    outdir = Path(outdir) if outdir else Path(chain_path).parent
    outdir.mkdir(parents=True, exist_ok=True)
    stem = Path(chain_path).stem
    post = chain.post_burn_in
    rows = diagnostics.summarize(post, chain.accepted[chain.burn_in:])
    report = outdir / f"{stem}_report.csv"
    diagnostics.write_report(report, rows)
    diagnostics.write_acf_table(outdir / f"{stem}_acf.csv", post)
    with open(outdir / f"{stem}_hist.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["coordinate", "bin_lo", "bin_hi", "count"])
        for i in range(post.shape[1]):
            edges, counts = diagnostics.histogram(post[:, i], 30)
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([f"xi_{i + 1}", repr(float(lo)), repr(float(hi)), int(c)])
    for row in rows:
        print(f"{row['coordinate']}: mean {row['mean']:.5g}  95% CI [{row['ci_lo']:.5g}, {row['ci_hi']:.5g}]"
              f"  tau_int {row['tau_int']:.3g}  acceptance {row['acceptance_rate']:.3f}")
    return report


def cmd_held_out_error(cfg: ExperimentConfig, xi, checkpoint=None) -> float:
    sur = _surrogate(cfg, checkpoint)
    err = pipeline.held_out_error(sur, xi, pde.GridConfig(cfg.m), cfg.newton_tol)
    print(f"relative max-norm error at xi={tuple(xi)}: {err:.4e}")
    return err


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", choices=sorted(PRESETS), default="standard")
    common.add_argument("--config", help="INI file with [section] key = value entries")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--workdir", help="output directory (overrides [paths] workdir)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fdnn-mcmc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("snapshots", parents=[common], help="Latin hypercube forward solves")
    s.add_argument("--workers", type=int, default=1)
    s = sub.add_parser("train", parents=[common], help="POD + BFGS training of the fDNN")
    s.add_argument("--snapshots")
    s = sub.add_parser("mcmc", parents=[common], help="adaptive Metropolis on the posterior")
    s.add_argument("--checkpoint")
    s.add_argument("--full", action="store_true", help="use the full PDE solver as forward map")
    s.add_argument("--output")
    s = sub.add_parser("diagnose", parents=[common], help="chain statistics and ACF tables")
    s.add_argument("chain")
    s.add_argument("--outdir")
    s = sub.add_parser("error", parents=[common], help="held-out relative error of the surrogate")
    s.add_argument("--xi", default=None, help="comma-separated parameter (default: xi_true)")
    s.add_argument("--checkpoint")
    s = sub.add_parser("full-run", parents=[common], help="snapshots, train, mcmc and diagnose")
    s.add_argument("--workers", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "diagnose":
            cmd_diagnose(args.chain, args.outdir)
            return 0
        cfg = resolve_config(args)
        if args.command == "snapshots":
            cmd_snapshots(cfg, args.workers)
        elif args.command == "train":
            cmd_train(cfg, args.snapshots)
        elif args.command == "mcmc":
            cmd_mcmc(cfg, args.checkpoint, args.full, args.output)
        elif args.command == "error":
            xi = cfg.xi_true if args.xi is None else tuple(float(v) for v in args.xi.split(","))
            cmd_held_out_error(cfg, xi, args.checkpoint)
        elif args.command == "full-run":
            cmd_snapshots(cfg, args.workers)
            cmd_train(cfg)
            cmd_held_out_error(cfg, cfg.xi_true)
            cmd_diagnose(cmd_mcmc(cfg))
    except fileio.FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except pde.SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except optim.OptimizationError as exc:
        print(f"optimizer error: {exc}", file=sys.stderr)
        return EXIT_OPTIM
    except mcmc.ForwardFailure as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
