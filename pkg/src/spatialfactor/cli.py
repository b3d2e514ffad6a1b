"""Command-line entry point: ``fit``, ``simulate``, ``check`` and ``summarize``.

Exit codes: 0 success, 1 validation or usage error, 2 runtime failure,
3 failed check. Errors are reported as one JSON line on stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from .config import build_dataclass, read_kv
from .data import DataError, load_dataset, write_dataset
from .diagnostics import summarize, write_unit_table
from .graph import AdjacencyError, load_adjacency, write_adjacency
from .sampler import (DEFAULT_STEPS, SamplerConfig, SamplerError, config_dict, read_chain,
                      run_chains, write_acceptance_report, write_chain)
from .simulate import SimulationSpec, geweke_test, recovery_study, simulate_dataset

logger = logging.getLogger("spatialfactor")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

#: Proper priors used by the joint-distribution check unless the config overrides them.
GEWEKE_DEFAULTS = {
    "beta_prior_variance": "0.25",
    "intercept_prior_variance": "0.25",
    "variance_prior_shape": "6",
    "variance_prior_scale": "1.25",
    "step_nu": "0.3",
    "step_alpha": "0.5",
    "step_eps": "0.3",
    "step_intercepts": "0.15",
    "rows": "2",
    "cols": "3",
    "beta": "0.0",
    "censored_units": "2",
    "population_min": "10000",
    "population_max": "10000",
    "death_rate": "8e-4",
    "treatment_rate": "2e-3",
}


class ValidationError(ValueError):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("usage", message)
        sys.exit(EXIT_VALIDATION)


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": " ".join(str(message).split())}) + "\n")


def sampler_config_from_mapping(kv: dict) -> SamplerConfig:
    steps = {b: float(kv[f"step_{b}"]) for b in DEFAULT_STEPS if f"step_{b}" in kv}
    cfg = build_dataclass(SamplerConfig, {k: v for k, v in kv.items()
                                          if k != "initial_step_sizes"})
    cfg.initial_step_sizes = {**cfg.initial_step_sizes, **steps}
    SamplerConfig.__post_init__(cfg)
    return cfg


def _resolve(kv: dict, key: str) -> str:
    value = kv.get(key)
    if value is None:
        raise ValidationError(f"config is missing required key {key!r}")
    return value if os.path.isabs(value) else os.path.join(kv.get("__dir__", "."), value)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _load_kv(args) -> dict:
    kv = read_kv(args.config) if args.config else {"__dir__": os.getcwd()}
    if getattr(args, "seed", None) is not None:
        kv["seed"] = str(args.seed)
    if getattr(args, "chains", None) is not None:
        kv["chains"] = str(args.chains)
    for extra in getattr(args, "set", None) or []:
        if "=" not in extra:
            raise ValidationError(f"--set expects key=value, got {extra!r}")
        k, v = extra.split("=", 1)
        kv[k.strip()] = v.strip()
    return kv


def _count_rows(path: str) -> int:
    with open(path, encoding="utf-8") as fh:
        return max(sum(1 for line in fh if line.strip()) - 1, 0)


def cmd_fit(args) -> int:
    kv = _load_kv(args)
    paths = {k: _resolve(kv, k) for k in ("adjacency", "data", "covariates")}
    for k, p in paths.items():
        if not os.path.exists(p):
            raise ValidationError(f"{k} file not found: {p}")
    n = _count_rows(paths["data"])
    graph = load_adjacency(paths["adjacency"], n)
    wanted = [c.strip() for c in kv["covariate_names"].split(",")] if kv.get("covariate_names") else None
    data = load_dataset(paths["data"], paths["covariates"], n, wanted)
    config = sampler_config_from_mapping(kv)
    chains = int(kv.get("chains", 1))
    workers = int(kv.get("workers", 1))
    level = float(kv.get("level", 0.95))
    if chains < 1:
        raise ValidationError("chains must be >= 1")
    out = args.out or kv.get("out") or "fit_output"
    os.makedirs(out, exist_ok=True)

    results = run_chains(config, graph, data, chains, workers)
    chain_paths = []
    for r in results:
        path = os.path.join(out, f"chain_{r.chain_id}.csv")
        write_chain(r, path)
        chain_paths.append(path)
    write_acceptance_report(results, os.path.join(out, "acceptance.json"))
    columns = results[0].columns
    draws = [r.samples for r in results]
    summary = summarize(draws, columns, level)
    summary.to_csv(os.path.join(out, "summary.csv"))
    write_unit_table(draws, columns, os.path.join(out, "units.csv"), level)
    manifest = {
        "software": {"spatialfactor": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
        "command": "fit",
        "seed": config.seed,
        "chains": chains,
        "level": level,
        "sampler": config_dict(config),
        "inputs": {k: {"path": os.path.abspath(p), "sha256": _sha256(p)} for k, p in paths.items()},
        "covariates": list(data.covariate_names),
        "chain_files": [os.path.basename(p) for p in chain_paths],
        "chain_seeding": "chain c uses numpy SeedSequence(seed, spawn_key=(c,))",
    }
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"fit: {chains} chain(s), {results[0].samples.shape[0]} draws each -> {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    kv = _load_kv(args)
    if "adjacency" in kv and kv["adjacency"]:
        kv["adjacency"] = _resolve(kv, "adjacency")
    spec = SimulationSpec.from_mapping(kv)
    out = args.out or kv.get("out") or "simulation"
    os.makedirs(out, exist_ok=True)
    sim = simulate_dataset(spec, np.random.default_rng(spec.seed))
    with open(os.path.join(out, "adjacency.csv"), "w", encoding="utf-8", newline="") as fh:
        write_adjacency(sim.graph, fh)
    write_dataset(sim.data, os.path.join(out, "data.csv"), os.path.join(out, "covariates.csv"),
                  sim.raw_covariates)
    vec = sim.truth.to_vector()
    cols = sim.truth.column_names(sim.graph.n, sim.data.p)
    with open(os.path.join(out, "truth.csv"), "w", encoding="utf-8") as fh:
        fh.write("name,value\n")
        for c, v in zip(cols, vec):
            fh.write(f"{c},{float(v)!r}\n")
        for i, t in enumerate(sim.true_treatments):
            fh.write(f"true_treatments[{i}],{int(t)}\n")
    with open(os.path.join(out, "fit.cfg"), "w", encoding="utf-8") as fh:
        fh.write("adjacency = adjacency.csv\ndata = data.csv\ncovariates = covariates.csv\n")
    with open(os.path.join(out, "simulation.json"), "w", encoding="utf-8") as fh:
        json.dump({"spec": asdict(spec), "software": __version__}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"simulate: {sim.graph.n} units -> {out}")
    return EXIT_OK


def _write_rows(path: str, rows: list[dict]) -> None:
    if not rows:
        return
    keys = list(rows[0])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(keys) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in
                              (r[k] for k in keys)) + "\n")


def geweke_problem(kv: dict | None = None):
    """Graph, data template and sampler config for the joint-distribution check.

    Keys in ``kv`` override :data:`GEWEKE_DEFAULTS`; ``mutate=1`` adds one to
    every inverse-gamma shape to build a deliberately wrong sampler.
    """
    kv = {**GEWEKE_DEFAULTS, **(kv or {})}
    kv.setdefault("iterations", "2")
    kv.setdefault("burn_in", "1")
    kv.setdefault("thin", "1")
    spec = SimulationSpec.from_mapping(kv)
    config = sampler_config_from_mapping(kv)
    if int(kv.get("mutate", 0)):
        config.variance_shape_offset = 1.0
    sim = simulate_dataset(spec, np.random.default_rng(spec.seed))
    return sim.graph, sim.data, config


def cmd_check(args) -> int:
    kv = _load_kv(args)
    out = args.out or kv.get("out") or f"check_{args.kind}"
    os.makedirs(out, exist_ok=True)
    if args.kind == "geweke":
        kv = {**GEWEKE_DEFAULTS, **kv}
        graph, template, config = geweke_problem(kv)
        res = geweke_test(graph, template, config,
                          n_samples=int(kv.get("n_samples", 5000)),
                          n_chains=int(kv.get("n_chains", 3000)),
                          chain_length=int(kv.get("chain_length", 300)),
                          seed=int(kv.get("seed", 0)),
                          threshold=float(kv.get("threshold", 4.0)))
        _write_rows(os.path.join(out, "geweke.csv"), res.rows())
        if res.short:
            logger.warning("geweke: successive-conditional branch is short; z-scores may be unstable")
        print(f"geweke: max|z| = {res.max_abs_z:.3f} over {len(res.z)} statistics, "
              f"min ESS = {float(np.min(res.ess_successive)):.0f}: "
              f"{'PASS' if res.passed else 'FAIL'}")
        if not res.passed:
            raise CheckFailed("geweke")
        return EXIT_OK
    # recovery
    spec = SimulationSpec.from_mapping(kv)
    config = sampler_config_from_mapping(kv)
    replicates = int(kv.get("replicates", 20))
    res = recovery_study(spec, config, replicates, int(kv.get("workers", 1)),
                         float(kv.get("level", 0.95)))
    _write_rows(os.path.join(out, "recovery_replicates.csv"), res.rows)
    table = res.table()
    _write_rows(os.path.join(out, "recovery.csv"), table)
    min_cov = float(kv.get("min_coverage", 0.75))
    min_sign = float(kv.get("min_sign", 0.9))
    ok = True
    for row in table:
        if row["parameter"].startswith("beta["):
            good = (row["coverage"] >= min_cov and row["sign_recovered"] / row["replicates"] >= min_sign)
            ok &= good
        print(f"recovery: {row['parameter']}: covered {row['covered']}/{row['replicates']}, "
              f"sign {row['sign_recovered']}/{row['replicates']}, bias {row['mean_bias']:+.4f}")
    if not ok:
        raise CheckFailed("recovery")
    return EXIT_OK


def cmd_summarize(args) -> int:
    draws, columns = [], None
    for path in args.chains:
        if not os.path.exists(path):
            raise ValidationError(f"chain file not found: {path}")
        _, cols, samples = read_chain(path)
        if columns is not None and cols != columns:
            raise ValidationError(f"{path}: columns differ from the first chain")
        columns = cols
        draws.append(samples)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    summary = summarize(draws, columns, args.level)
    summary.to_csv(os.path.join(out, "summary.csv"))
    write_unit_table(draws, columns, os.path.join(out, "units.csv"), args.level)
    print(f"summarize: {len(draws)} chain(s), {summary.n_draws} draws -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spatialfactor", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, chains=False):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, help="top-level seed (overrides the config)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key; repeatable")
        if chains:
            p.add_argument("--chains", type=int, help="number of chains")

    p = sub.add_parser("fit", help="run the sampler on data files")
    common(p, chains=True)
    p.set_defaults(func=cmd_fit)
    p = sub.add_parser("simulate", help="write a synthetic dataset and its true parameters")
    common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("check", help="sampler correctness checks")
    p.add_argument("kind", choices=["geweke", "recovery"])
    common(p)
    p.set_defaults(func=cmd_check)
    p = sub.add_parser("summarize", help="summaries and per-unit tables from chain files")
    p.add_argument("chains", nargs="+")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CheckFailed as exc:
        _emit_error("check", f"{exc} check failed")
        return EXIT_CHECK
    except (ValidationError, AdjacencyError, DataError, ValueError, OSError) as exc:
        _emit_error("validation", exc)
        return EXIT_VALIDATION
    except SamplerError as exc:
        _emit_error("runtime", exc)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        _emit_error("runtime", f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
