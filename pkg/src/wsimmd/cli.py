"""Command-line workflows: ``synth``, ``kernel``, ``cluster``, ``classify``, ``survival``.

Exit codes: 0 success, 1 validation error, 2 numerical error, 3 I/O error.
Failures print a one-line JSON object on stderr.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import DEFAULT_BACKEND
from .cluster import LINKAGES, agglomerate, cut, write_assignment
from .dataio import (DEFAULT_CENSOR_HORIZON, SynthSpec, generate_synthetic, load_manifest,
                     read_manifest, write_synthetic)
from .errors import NumericalError, UnfittableError, ValidationError
from .evaluation import (DEFAULT_BOOTSTRAP_RUNS, DEFAULT_OOB_RUNS, EvalReport, aggregate_pvalue,
                         bootstrap_auc_ci, c_index, km_estimate, logrank_test,
                         oob_split, optimal_threshold)
from .ksurv import DEFAULT_ALPHA, comparable_pairs, truncate
from .ksurv import fit as fit_survival
from .ksurv import risk_scores
from .ksvm import DEFAULT_C, decision_function, fit_smo
from .mmd import (DEFAULT_BLOCK_SIZE, DEFAULT_GAMMA, DEFAULT_SIGMA, DistanceMatrix, KernelMatrix,
                  PatchKernelConfig, distance_matrix, kernel_from_distance, median_inverse_gamma,
                  read_matrix, write_matrix)

log = logging.getLogger("wsimmd")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _g(x):
    return f"{float(x):.17g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_ids(path):
    with open(path) as fh:
        return [line.strip() for line in fh if line.strip()]


def _index(ids, wanted, what):
    pos = {v: i for i, v in enumerate(ids)}
    missing = [w for w in wanted if w not in pos]
    if missing:
        raise ValidationError(f"unknown id(s) in {what}: {missing[:5]}")
    return np.array([pos[w] for w in wanted], dtype=int)


def _metadata(args, **extra):
    params = {k: v for k, v in sorted(vars(args).items())
              if k not in ("func", "verbose", "out") and not callable(v)}
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in params.items()}
    return {"version": __version__, "backend": DEFAULT_BACKEND, "params": params, **extra}


def _compute_distance(args):
    ds = load_manifest(args.manifest, threads=args.threads)
    cfg = PatchKernelConfig(sigma=args.sigma, block_size=args.block_size)
    log.info("computing MMD^2 for %d feature sets (dim %d, sigma %g)", len(ds), ds.dim, args.sigma)
    return distance_matrix(ds.sets, cfg, threads=args.threads)


def _resolve_gamma(args, dist):
    if args.gamma_mode == "median":
        gamma = median_inverse_gamma(dist)
        log.info("gamma = 1/median(D) = %.6g", gamma)
        return gamma
    return args.gamma


def _kernel_from_inputs(args):
    """Kernel from ``--matrix`` (distance or kernel file) or from ``--manifest``."""
    if args.matrix is not None:
        m = read_matrix(args.matrix)
        if isinstance(m, KernelMatrix):
            # the binary format carries no gamma; recover it from the kernel sidecar
            sidecar = Path(args.matrix).with_name("kernel.json")
            if m.gamma is None and sidecar.exists():
                with open(sidecar) as fh:
                    m.gamma = json.load(fh).get("gamma")
            return m
        dist = m
    elif args.manifest is not None:
        dist = _compute_distance(args)
    else:
        raise ValidationError("provide --matrix or --manifest")
    return kernel_from_distance(dist, _resolve_gamma(args, dist))


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args):
    spec = SynthSpec.from_json(args.spec)
    data = generate_synthetic(spec)
    manifest = write_synthetic(data, args.out)
    log.info("wrote %d feature sets and %s", len(data.sets), manifest)


def cmd_kernel(args):
    if args.manifest is None:
        raise ValidationError("kernel requires --manifest")
    dist = _compute_distance(args)
    gamma = _resolve_gamma(args, dist)
    kern = kernel_from_distance(dist, gamma)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(dist, out / "distance.mmdk")
    write_matrix(dist, out / "distance.csv")
    write_matrix(kern, out / "kernel.mmdk")
    write_matrix(kern, out / "kernel.csv")
    log.info("kernel min eigenvalue %.3e, jitter %.3e", kern.min_eigenvalue, kern.jitter)
    meta = _metadata(args, gamma=gamma, min_eigenvalue=kern.min_eigenvalue,
                     jitter=kern.jitter, n=kern.n)
    with open(out / "kernel.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cmd_cluster(args):
    if args.matrix is None:
        raise ValidationError("cluster requires --matrix (a distance matrix file)")
    dist = read_matrix(args.matrix)
    if not isinstance(dist, DistanceMatrix):
        raise ValidationError("cluster operates on a distance matrix, got a kernel matrix")
    dendro = agglomerate(dist, args.linkage)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dendro.to_json(out / "dendrogram.json")
    write_assignment(dist.ids, cut(dendro, args.k), out / "clusters.csv")


def cmd_classify(args):
    if args.manifest is None or args.train is None or args.test is None:
        raise ValidationError("classify requires --manifest, --train and --test")
    entries = {e.id: e for e in read_manifest(args.manifest)}
    kern = _kernel_from_inputs(args)
    train_ids, test_ids = _read_ids(args.train), _read_ids(args.test)
    if set(train_ids) & set(test_ids):
        raise ValidationError("train and test index files overlap")
    tr = _index(kern.ids, train_ids, "train index file")
    te = _index(kern.ids, test_ids, "test index file")
    for i in train_ids + test_ids:
        if i not in entries or entries[i].label is None:
            raise ValidationError(f"no label for {i!r} in manifest")
    y_tr = np.array([entries[i].label for i in train_ids])
    y_te = np.array([entries[i].label for i in test_ids])

    model = fit_smo(kern.block(tr, tr), y_tr, C=args.svm_c, class_weight=args.class_weight)
    scores = decision_function(model, kern.block(te, tr))
    ci = bootstrap_auc_ci(y_te, scores, runs=args.bootstrap_runs, seed=args.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "scores.csv", ["id", "label", "score"],
               [(i, int(l), _g(s)) for i, l, s in zip(test_ids, y_te, scores)])
    model.params.update({"gamma": kern.gamma, "sigma": args.sigma, "train_ids": train_ids})
    model.to_json(out / "model.json")
    report = EvalReport("auc_roc", ci.point, ci.lower, ci.upper, 0.95, list(ci.values),
                        extra={"n_train": len(tr), "n_test": len(te),
                               "n_support": int(len(model.support_indices)),
                               "smo_iterations": model.iterations},
                        metadata=_metadata(args, gamma=kern.gamma))
    report.to_json(out / "report.json")
    log.info("test AUC %.4f (95%% CI %.4f-%.4f)", ci.point, ci.lower, ci.upper)


def cmd_survival(args):
    if args.manifest is None:
        raise ValidationError("survival requires --manifest for outcomes")
    entries = read_manifest(args.manifest)
    by_id = {e.id: e for e in entries}
    kern = _kernel_from_inputs(args)
    for i in kern.ids:
        e = by_id.get(i)
        if e is None or e.time is None or e.event is None:
            raise ValidationError(f"missing survival outcome for {i!r}")
    times, events = truncate([by_id[i].time for i in kern.ids],
                             [by_id[i].event for i in kern.ids], args.censor_horizon)
    if len(comparable_pairs(times, events)) == 0:
        raise UnfittableError("no comparable pairs in the cohort: every patient is censored "
                              "or no event precedes another patient's time")
    n = kern.n
    runs = []
    for r in range(args.oob_runs):
        split = oob_split(n, events, seed=[args.seed, r], times=times)
        tr, te = split.train, split.test
        model = fit_survival(kern.block(tr, tr), comparable_pairs(times[tr], events[tr]),
                             alpha=args.alpha, train_ids=[kern.ids[i] for i in tr])
        risk_te = risk_scores(model, kern.block(te, tr))
        risk_tr = risk_scores(model, kern.block(tr, tr))
        ci = c_index(times[te], events[te], risk_te)
        thr = optimal_threshold(risk_tr, times[tr], events[tr])
        high = risk_te > thr
        try:
            lr = logrank_test((times[te][high], events[te][high]),
                              (times[te][~high], events[te][~high]))
            p, defined = lr.p_value, True
        except ValidationError:
            p, defined = 1.0, False
        runs.append({"run": r, "c_index": ci, "p": p, "p_defined": defined, "threshold": thr,
                     "train": tr, "test": te, "model": model, "risk": risk_te, "high": high})

    cvals = np.array([x["c_index"] for x in runs])
    pvals = [x["p"] for x in runs]
    order = sorted(range(len(runs)), key=lambda k: (cvals[k], k))
    rep = runs[order[(len(runs) - 1) // 2]]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "runs.csv", ["run", "metric", "value", "p"],
               [(x["run"], "c_index", _g(x["c_index"]), _g(x["p"])) for x in runs])
    te = rep["test"]
    km_rows = []
    for name, mask in (("high", rep["high"]), ("low", ~rep["high"])):
        if mask.any():
            km_rows += km_estimate(times[te][mask], events[te][mask], group=name).rows()
    _write_csv(out / "km.csv", ["group", "time", "survival", "at_risk"],
               [(g, _g(t), _g(s), a) for g, t, s, a in km_rows])
    _write_csv(out / "risk.csv", ["id", "score"],
               [(kern.ids[i], _g(s)) for i, s in zip(te, rep["risk"])])
    rep["model"].params.update({"gamma": kern.gamma, "sigma": args.sigma,
                                "censor_horizon": args.censor_horizon, "run": rep["run"]})
    rep["model"].to_json(out / "model.json")
    std = float(cvals.std(ddof=1)) if len(cvals) > 1 else 0.0
    report = EvalReport(
        "c_index", float(cvals.mean()), per_run=list(cvals),
        extra={"std": std, "std_definition": "sample std (ddof=1) of test C-index across runs",
               "aggregated_logrank_p": aggregate_pvalue(pvals),
               "logrank_p_per_run": [float(p) for p in pvals],
               "undefined_logrank_runs": [x["run"] for x in runs if not x["p_defined"]],
               "representative_run": rep["run"], "representative_threshold": rep["threshold"]},
        metadata=_metadata(args, gamma=kern.gamma))
    report.to_json(out / "report.json")
    log.info("C-index %.4f +/- %.4f over %d runs; aggregated log-rank p %.4g",
             report.estimate, std, len(runs), report.extra["aggregated_logrank_p"])


# -- argument parsing ------------------------------------------------------------

def _common(p, *, matrix=False, gamma_mode="fixed"):
    p.add_argument("--manifest", type=Path, help="manifest CSV (id,path,label,time,event)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="64-bit seed for resampling")
    p.add_argument("--sigma", type=float, default=DEFAULT_SIGMA, help="patch kernel blur")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA, help="kernel gamma (fixed mode)")
    p.add_argument("--gamma-mode", choices=("fixed", "median"), default=gamma_mode)
    p.add_argument("--block-size", type=int, default=DEFAULT_BLOCK_SIZE)
    p.add_argument("--threads", type=int, default=1)
    if matrix:
        p.add_argument("--matrix", type=Path, help="distance or kernel matrix file (.mmdk/.csv)")


def build_parser():
    parser = argparse.ArgumentParser(prog="wsimmd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--spec", type=Path, required=True, help="synthetic spec JSON")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("kernel", help="MMD^2 distance and Mercer kernel matrices")
    _common(p)
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("cluster", help="hierarchical clustering of a distance matrix")
    _common(p, matrix=True)
    p.add_argument("--linkage", choices=LINKAGES, default="average")
    p.add_argument("--k", type=int, default=2)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("classify", help="precomputed-kernel SVM with bootstrap AUC")
    _common(p, matrix=True)
    p.add_argument("--train", type=Path, help="training ids, one per line")
    p.add_argument("--test", type=Path, help="test ids, one per line")
    p.add_argument("--svm-c", type=float, default=DEFAULT_C)
    p.add_argument("--class-weight", choices=("balanced",), default=None)
    p.add_argument("--bootstrap-runs", type=int, default=DEFAULT_BOOTSTRAP_RUNS)
    p.set_defaults(func=cmd_classify, needs_seed=True)

    p = sub.add_parser("survival", help="kernel survival SVM with out-of-bag evaluation")
    _common(p, matrix=True, gamma_mode="median")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--oob-runs", type=int, default=DEFAULT_OOB_RUNS)
    p.add_argument("--censor-horizon", type=float, default=DEFAULT_CENSOR_HORIZON)
    p.set_defaults(func=cmd_survival, needs_seed=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if getattr(args, "needs_seed", False) and args.seed is None:
            raise ValidationError(f"{args.command} is stochastic; --seed is required")
        args.func(args)
    except ValidationError as exc:
        return _fail(EXIT_VALIDATION, exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    return EXIT_OK


def _fail(code, exc):
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                 "exit_code": code}) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
