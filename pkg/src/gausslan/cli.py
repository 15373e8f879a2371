"""Command-line front end: ``gausslan {simulate,estimate,audit,fisher}``.

Exit codes: 0 success or audit pass, 1 partial failure or audit fail,
2 configuration error, 3 model error, 4 inconclusive audit.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .estimation import NewtonOptions, solve_mle
from .exceptions import ParameterError, UnsupportedModelError
from .likelihood import LikelihoodWorkspace, fisher_exact, fisher_whittle
from .simulation import SimulationPlan, make_rng, read_path, run_monte_carlo, write_path
from .spectral_models import envelope_table_for, make_model
from . import verification as ver

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG, EXIT_MODEL, EXIT_INCONCLUSIVE = 0, 1, 2, 3, 4
AUDITS = ("cond11", "cond12", "envelopes", "trace", "clt", "lan", "dahlhaus", "efficiency")
SCHEMA_LINE = "# schema=1"

log = logging.getLogger("gausslan")


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

class Outputs:
    """Tracks written files for the manifest."""

    def __init__(self, root: str):
        self.root = root
        self.files = []
        os.makedirs(root, exist_ok=True)

    def path(self, name: str) -> str:
        full = os.path.join(self.root, name)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        self.files.append(name)
        return full

    def write_json(self, name, obj):
        with open(self.path(name), "w") as fh:
            json.dump(ver._plain(obj), fh, sort_keys=True, indent=1)
            fh.write("\n")

    def write_jsonl(self, name, records):
        with open(self.path(name), "w") as fh:
            for rec in records:
                fh.write(json.dumps(ver._plain(rec), sort_keys=True) + "\n")

    def write_csv(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            fh.write(SCHEMA_LINE + "\n")
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def write_manifest(out: Outputs, cfg: ExperimentConfig, command: str, started: str, seeds):
    manifest = {
        "command": command, "config_hash": cfg.hash, "tool_version": __version__,
        "started": started, "finished": _now(), "seeds": seeds,
        "outputs": sorted(out.files),
    }
    with open(os.path.join(out.root, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _check_max_n(cfg, ns):
    if max(ns) > cfg.max_n:
        raise ConfigError(f"n={max(ns)} exceeds the safety cap --max-n={cfg.max_n}")


def _plan(cfg: ExperimentConfig) -> SimulationPlan:
    return SimulationPlan(cfg.model_id, cfg.theta, cfg.n_list, cfg.replications, cfg.seed,
                          cfg.sampler, cfg.workers, cfg.model_params)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig, out: Outputs) -> int:
    _check_max_n(cfg, cfg.n_list)
    model = make_model(cfg.model_id, **cfg.model_params)
    model.check_theta(cfg.theta)

    def per_path(path, n, r, seed):
        stem = f"paths/n{n}_r{r}"
        meta = {"model": cfg.model_id, "model_params": cfg.model_params, "theta": cfg.theta,
                "n": n, "r": r, "seed": seed, "sampler": cfg.sampler}
        write_path(path, out.path(stem + ".f64")[:-4], meta)
        out.files.append(stem + ".json")
        return {"file": stem, "mean": float(np.mean(path)), "var": float(np.var(path))}

    records = run_monte_carlo(_plan(cfg), per_path, model)
    out.write_jsonl("records.jsonl", records)
    failed = sum(rec["failed"] for rec in records)
    print(f"simulated {len(records) - failed}/{len(records)} paths")
    return EXIT_PARTIAL if failed else EXIT_OK


def _estimate_one(model, cfg, x, rng, opts):
    n = x.size
    theta0 = np.asarray(cfg.theta, dtype=float)
    init = cfg.estimate.get("theta_init")
    init = np.asarray(init, dtype=float) if init is not None else ver.perturbed_start(model, theta0, n, rng)
    res = solve_mle(LikelihoodWorkspace(model, data=x), init, opts, theta0=theta0)
    return res


def cmd_estimate(cfg: ExperimentConfig, out: Outputs) -> int:
    model = make_model(cfg.model_id, **cfg.model_params)
    model.check_theta(cfg.theta)
    est = cfg.estimate
    opts = NewtonOptions(tol=float(est.get("tol", 1e-8)), max_iter=int(est.get("max_iter", 100)),
                         curvature=str(est.get("curvature", "hessian")))
    records = []
    if "data" in est:
        stems = est["data"] if isinstance(est["data"], list) else [est["data"]]
        paths = []
        for stem in stems:
            full = cfg.resolve(stem)
            if not os.path.exists(full + ".f64"):
                raise ConfigError(f"data file not found: {full}.f64")
            paths.append(read_path(full))
        _check_max_n(cfg, [p.size for p in paths])
        for r, x in enumerate(paths):
            rng = make_rng(cfg.seed ^ r)
            try:
                res = _estimate_one(model, cfg, x, rng, opts)
                records.append({"n": x.size, "r": r, "seed": cfg.seed ^ r, "failed": False,
                                **res.to_record()})
            except Exception as exc:  # recorded, not raised
                records.append({"n": x.size, "r": r, "failed": True, "error": str(exc)})
    else:
        _check_max_n(cfg, cfg.n_list)

        def per_path(path, n, r, seed):
            res = _estimate_one(model, cfg, path, make_rng(seed ^ 0x5EED), opts)
            return res.to_record()

        records = run_monte_carlo(_plan(cfg), per_path, model)
    out.write_jsonl("estimates.jsonl", records)
    rows = []
    for n in sorted({rec["n"] for rec in records}):
        good = [rec for rec in records if rec["n"] == n and not rec["failed"]]
        conv = [rec for rec in good if rec["converged"]]
        errs = np.array([rec["standardized_error"] for rec in conv], dtype=float)
        M = len(cfg.theta)
        mean = errs.mean(axis=0) if len(errs) else np.full(M, np.nan)
        cov = (np.cov(errs, rowvar=False).reshape(M, M) if len(errs) > 1
               else np.full((M, M), np.nan))
        rows.append([n, len(good), len(conv), *mean, *cov.ravel()])
    M = len(cfg.theta)
    header = (["n", "count", "converged"] + [f"mean_{j}" for j in range(M)]
              + [f"cov_{j}_{k}" for j in range(M) for k in range(M)])
    out.write_csv("summary.csv", header, rows)
    failed = sum(rec["failed"] for rec in records)
    print(f"estimated {len(records) - failed}/{len(records)} paths")
    return EXIT_PARTIAL if failed else EXIT_OK


def run_audit(audit_id: str, cfg: ExperimentConfig) -> ver.AuditReport:
    """Dispatch one audit from a config; ``[audit]`` keys select its inputs."""
    settings = cfg.audit_settings()
    a = cfg.audit
    seed = cfg.seed
    if audit_id == "dahlhaus":
        grid = a.get("n_grid", [2**k for k in range(4, 11)])
        return ver.audit_dahlhaus_counterexample(grid, int(a.get("grid_points", 2**15)), settings)
    model = make_model(cfg.model_id, **cfg.model_params)
    theta = model.check_theta(cfg.theta)
    grid = a.get("n_grid", cfg.n_list)
    if audit_id in ("cond11", "cond12", "trace", "lan") and max(grid) > cfg.max_n:
        return ver.AuditReport(audit_id, {"n_grid": grid}, {}, {"max_n": cfg.max_n},
                               ver.INCONCLUSIVE, notes=[f"n grid exceeds the cap {cfg.max_n}"])
    if audit_id == "cond11":
        return ver.audit_cond_1_1(model, theta, grid, a.get("delta"), a.get("ball_points"),
                                  settings, seed)
    if audit_id == "cond12":
        return ver.audit_cond_1_2(model, theta, a.get("eta"), grid, settings)
    if audit_id == "envelopes":
        table = envelope_table_for(model, theta, eta=settings.envelope_eta)
        return ver.audit_envelopes(table, model, theta, grid, a.get("eps_grid"),
                                   settings=settings, seed=seed)
    if audit_id == "trace":
        table = envelope_table_for(model, theta, eta=settings.trace_eta)
        symbols = ver.derivative_symbols(model, theta, a.get("derivative_index"))
        return ver.audit_trace_theorem(model, theta, symbols, table, grid,
                                       a.get("epsilon"), a.get("eta"), settings)
    if audit_id == "clt":
        n = int(a.get("n", max(grid)))
        if n > cfg.max_n:
            return ver.AuditReport("clt", {"n": n}, {}, {"max_n": cfg.max_n}, ver.INCONCLUSIVE,
                                   notes=[f"n exceeds the cap {cfg.max_n}"])
        return ver.audit_clt(model, theta, n, cfg.replications, a.get("direction"), seed=seed,
                             sampler=cfg.sampler, settings=settings)
    if audit_id == "lan":
        return ver.audit_lan(model, theta, grid, cfg.replications, a.get("a_grid"), seed,
                             cfg.sampler, settings)
    if audit_id == "efficiency":
        n = int(a.get("n", max(grid)))
        if n > cfg.max_n:
            return ver.AuditReport("efficiency", {"n": n}, {}, {"max_n": cfg.max_n},
                                   ver.INCONCLUSIVE, notes=[f"n exceeds the cap {cfg.max_n}"])
        alpha = float(cfg.model_params.get("alpha", 0.15))
        return ver.audit_efficiency_ar1(n, cfg.replications, alpha, theta, seed, cfg.sampler,
                                        settings)
    raise ConfigError(f"unknown audit id {audit_id!r}; choose from {AUDITS}")


def cmd_audit(cfg: ExperimentConfig, out: Outputs, audit_id: str) -> int:
    report = run_audit(audit_id, cfg)
    report.inputs["config_hash"] = cfg.hash
    report.inputs["seed"] = cfg.seed
    out.write_json(f"audit_{audit_id}.json", report.to_dict())
    print(report.summary())
    return {ver.PASS: EXIT_OK, ver.FAIL: EXIT_PARTIAL}.get(report.verdict, EXIT_INCONCLUSIVE)


def cmd_fisher(cfg: ExperimentConfig, out: Outputs) -> int:
    model = make_model(cfg.model_id, **cfg.model_params)
    theta = model.check_theta(cfg.theta)
    ns = cfg.fisher.get("n", cfg.n_list)
    ns = [ns] if isinstance(ns, int) else list(ns)
    _check_max_n(cfg, ns)
    limit = model.limiting_fisher(theta)
    rows = []
    M = theta.size
    for n in ns:
        rate = model.rate_matrix(theta, n)
        exact = fisher_exact(model, theta, n)
        whittle = fisher_whittle(model, theta, n)
        for kind, mat in (("fisher_exact", exact), ("fisher_whittle", whittle),
                          ("scaled_exact", rate.T @ exact @ rate),
                          ("scaled_whittle", rate.T @ whittle @ rate), ("limit", limit)):
            rows.extend([n, kind, j, k, float(mat[j, k])] for j in range(M) for k in range(M))
    out.write_csv("fisher.csv", ["n", "kind", "i", "j", "value"], rows)
    print(f"wrote {len(rows)} rows for n={ns}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gausslan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML experiment file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
        p.add_argument("--workers", type=int, help="worker threads")
        p.add_argument("--max-n", type=int, dest="max_n", help="sample-size safety cap (default 4096)")
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("simulate", help="simulate paths"))
    common(sub.add_parser("estimate", help="fit the exact Gaussian MLE"))
    audit = sub.add_parser("audit", help="run one audit")
    audit.add_argument("audit_id", help=f"one of {', '.join(AUDITS)}")
    common(audit)
    common(sub.add_parser("fisher", help="tabulate Fisher information"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = _now()
    try:
        if args.command == "audit" and args.audit_id not in AUDITS:
            raise ConfigError(f"unknown audit id {args.audit_id!r}; choose from {', '.join(AUDITS)}")
        cfg = load_config(args.config, seed=args.seed, workers=args.workers, max_n=args.max_n)
        out = Outputs(args.out)
        if args.command == "simulate":
            code = cmd_simulate(cfg, out)
        elif args.command == "estimate":
            code = cmd_estimate(cfg, out)
        elif args.command == "audit":
            code = cmd_audit(cfg, out, args.audit_id)
        else:
            code = cmd_fisher(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnsupportedModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except ParameterError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_manifest(out, cfg, args.command, started, {"seed": cfg.seed})
    return code


if __name__ == "__main__":
    sys.exit(main())
