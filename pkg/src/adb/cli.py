"""Command line interface: ``adb <command> [options]``.

Exit status is 0 on success, 1 on usage errors and 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ADBError
from .grouping import GroupingResult, group_run
from .io import RunConfig, load_config, load_dataset
from .reduction import fit_reduction, zscore
from .sequencing import MODES, ScoringRun, score_all
from .theory import sweep
from .transport import PointCloud, SinkhornConfig, debiased_distance, exact_ot_oracle, sinkhorn

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

log = logging.getLogger("adb")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raise instead of exiting so usage errors map to status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _emit(text: str, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def _config(args) -> RunConfig:
    return load_config(args.config) if getattr(args, "config", None) else RunConfig()


def _pick(flag, default):
    return default if flag is None else flag


# ------------------------------------------------------------------ commands

def cmd_score(args):
    cfg = _config(args)
    ds = load_dataset(args.data, label=args.label)
    X = ds.X
    if args.normalize:
        X = zscore(X, "data")[0]
    if args.components:
        X = fit_reduction(X, args.components).transform(X)
    run = score_all(
        X,
        B=_pick(args.batch_size, cfg.B),
        M=_pick(args.perms, cfg.M),
        seed=_pick(args.seed, cfg.seed),
        mode=_pick(args.mode, cfg.mode),
        cfg=SinkhornConfig(epsilon=_pick(args.epsilon, cfg.epsilon)),
        subsample_cap=_pick(args.subsample_cap, cfg.subsample_cap),
        workers=args.workers,
    )
    _emit(run.to_json(), args.out)


def cmd_classify(args):
    cfg = _config(args)
    run = ScoringRun.from_json(Path(args.trajectories).read_text())
    res = group_run(run, _pick(args.q_low, cfg.q_low), _pick(args.q_high, cfg.q_high))
    _emit(res.to_json(), args.out)


def cmd_theory(args):
    rows = sweep(args.k, args.delta, n_mc=args.mc, seed=args.seed)
    lines = ["k,delta,rho,rho_mc,regime"]
    for k, d, rho, mc, neg in rows:
        mc_s = "" if np.isnan(mc) else repr(mc)
        lines.append(f"{k!r},{d!r},{rho!r},{mc_s},{str(neg).lower()}")
    _emit("\n".join(lines) + "\n", args.out)
    if args.plot:
        from .plotting import theory_plot
        theory_plot(rows, args.plot)


def cmd_experiment(args):
    from .harness.experiment import replicate, run_experiment

    cfg = _config(args)
    exp = cfg.experiment
    if args.perms is not None:
        exp = replace(exp, M=args.perms)
    n_seeds = _pick(args.seeds, cfg.seeds)
    start = _pick(args.seed, cfg.seed)
    out = Path(_pick(args.out, cfg.output_dir))
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(range(start, start + n_seeds))
    if len(seeds) == 1:
        reports = [run_experiment(exp, seeds[0], args.workers)]
        summary = None
    else:
        rep = replicate(exp, seeds, args.workers)
        reports = rep.reports
        summary = rep.summary()
    for r in reports:
        (out / f"report_seed{r.seed}.json").write_text(r.to_json())
        (out / f"models_seed{r.seed}.csv").write_text(r.models_csv())
        (out / f"scatter_seed{r.seed}.csv").write_text(r.scatter_csv())
        if args.plot:
            from .plotting import scatter_plot
            scatter_plot([m.id_mae for m in r.models], [m.ood_mae for m in r.models],
                         [m.group for m in r.models], out / f"scatter_seed{r.seed}.svg")
    if summary is not None:
        (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
        sys.stdout.write(json.dumps(summary, indent=1) + "\n")
    else:
        r = reports[0]
        sys.stdout.write(json.dumps({"seed": r.seed, "adb": r.adb, "cv_ood_mae": r.cv_baseline["ood_mae"],
                                     "percentile_rank": r.percentile_rank}, indent=1) + "\n")


def cmd_oracle_ot(args):
    a = PointCloud(load_dataset(args.a).X)
    b = PointCloud(load_dataset(args.b).X)
    eps = SinkhornConfig(epsilon=args.epsilon)
    exact = exact_ot_oracle(a, b)
    plan, cost = sinkhorn(a, b, eps)
    deb = debiased_distance(a, b, eps)
    doc = {"exact": exact, "sinkhorn": cost, "debiased_half": deb / 2.0,
           "marginal_violation": plan.marginal_violation(a, b), "iterations": plan.iterations}
    _emit(json.dumps(doc, indent=1) + "\n", args.out)


def cmd_plot(args):
    from .plotting import scatter_plot, trajectory_plot

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    did = False
    if args.trajectories:
        run = ScoringRun.from_json(Path(args.trajectories).read_text())
        labels = None
        if args.groups:
            labels = GroupingResult.from_json(Path(args.groups).read_text()).labels
        trajectory_plot(run.values, out / f"trajectories.{args.format}", labels)
        did = True
    if args.report:
        from .harness.evaluation import EvalReport
        rep = EvalReport.from_json(Path(args.report).read_text())
        scatter_plot([m.id_mae for m in rep.models], [m.ood_mae for m in rep.models],
                     [m.group for m in rep.models], out / f"scatter.{args.format}")
        did = True
    if not did:
        raise UsageError("plot: give --trajectories and/or --report")


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adb", description="Training-order deviation scoring and shift experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("score", help="score seeded permutations of a dataset")
    s.add_argument("--data", required=True, help="CSV with header, or binary latent file")
    s.add_argument("--label", help="CSV column to drop as the label")
    s.add_argument("--mode", choices=MODES)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--perms", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--subsample-cap", type=int)
    s.add_argument("--normalize", action="store_true", help="z-score columns before scoring")
    s.add_argument("--components", type=int, help="PCA components (default: use data as given)")
    s.add_argument("--workers", type=int)
    s.add_argument("--config")
    s.add_argument("--out", help="output path (default stdout)")
    s.set_defaults(func=cmd_score)

    c = sub.add_parser("classify", help="group scored permutations into Low/Medium/High")
    c.add_argument("--trajectories", required=True)
    c.add_argument("--q-low", type=float)
    c.add_argument("--q-high", type=float)
    c.add_argument("--config")
    c.add_argument("--out")
    c.set_defaults(func=cmd_classify)

    t = sub.add_parser("theory", help="closed-form and Monte Carlo correlation sweep")
    t.add_argument("--k", type=float, nargs="+", required=True)
    t.add_argument("--delta", type=float, nargs="+", required=True)
    t.add_argument("--mc", type=int, default=0, help="Monte Carlo draws per cell (0: off)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--plot", help="also write a figure (.svg or .png)")
    t.add_argument("--out")
    t.set_defaults(func=cmd_theory)

    e = sub.add_parser("experiment", help="end-to-end synthetic shift experiment")
    e.add_argument("--config")
    e.add_argument("--seeds", type=int, help="number of consecutive seeds")
    e.add_argument("--seed", type=int, help="first seed")
    e.add_argument("--perms", type=int)
    e.add_argument("--workers", type=int)
    e.add_argument("--plot", action="store_true", help="write scatter figures")
    e.add_argument("--out", help="output directory")
    e.set_defaults(func=cmd_experiment)

    o = sub.add_parser("oracle-ot", help="exact vs entropic transport between two small clouds")
    o.add_argument("--a", required=True)
    o.add_argument("--b", required=True)
    o.add_argument("--epsilon", type=float, default=0.005)
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle_ot)

    g = sub.add_parser("plot", help="figures and CSV data from saved artifacts")
    g.add_argument("--trajectories")
    g.add_argument("--groups")
    g.add_argument("--report")
    g.add_argument("--format", choices=("svg", "png"), default="svg")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"adb: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ADBError, OSError, ValueError) as exc:
        print(f"adb: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
