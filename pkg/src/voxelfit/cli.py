"""Command-line front end: ``voxelfit {fit,predict,evaluate,simulate,bench}``.

Settings come from an INI-style config file with one section per command
(``[fit]``, ``[evaluate]``, ``[simulate]``, ``[bench]``) plus an optional
``[common]`` section; command-line flags override config keys.  All output
files are written deterministically (sorted keys, fixed float formatting,
no timestamps).
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .bench import run_bench, synthetic_table, write_bench
from .estimators import FittedModel, Method, fit_strata
from .exceptions import SchemaError, VoxelFitError
from .glm import IRLSConfig
from .metrics import cumulative_curve, evaluate, predict_counts, PredictionSet
from .simulate import SimConfig, run_sweep
from .subsample import SubsampleSpec
from .voxel import load_table, partition_by_stratum

log = logging.getLogger("voxelfit")

MODEL_FILE = "model.json"
METRICS_FILE = "metrics.json"
PREDICTIONS_FILE = "predictions.tsv"
CURVES_FILE = "curves.tsv"
SWEEP_FILE = "sweep.tsv"
BENCH_FILE = "bench.tsv"


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace(",", " ").split())


def _words(s: str) -> tuple[str, ...]:
    return tuple(x for x in s.replace(",", " ").split())


def _nu_bar(s: str):
    return "auto" if str(s).strip().lower() == "auto" else float(s)


@dataclass
class RunConfig:
    """Every setting the commands read, with its default."""

    learn: str | None = None
    test: str | None = None
    model: str | None = None
    out: str = "."
    method: str = "wclrl"
    pi0: float = 1.0
    pi1: float = 1.0
    bags: int = 1
    seed: int = 0
    threads: int = 1
    delimiter: str | None = None
    nu_bar: object = "auto"
    max_iter: int = 50
    score_tol: float = 1e-8
    step_halving_max: int = 10
    ridge: float = 0.0
    divergence_bound: float = 30.0
    # simulate
    k_values: tuple[int, ...] = tuple(range(9, 17))
    targets: tuple[float, ...] = (0.5, 0.9, 0.99, 0.999)
    beta_rest: tuple[float, ...] = (1.0, 1.0)
    replications: int = 200
    methods: tuple[str, ...] = ("pl", "brl-logit", "brl-cloglog", "wclrl")
    regime: str = "auto"
    pi0_values: tuple[float, ...] = ()
    # bench
    bench_cells: int = 1_000_000
    bench_nonempty: float = 0.01
    bench_pi0: tuple[float, ...] = (1.0, 0.1, 0.01, 0.001)
    extra: dict = field(default_factory=dict, repr=False)

    def spec(self) -> SubsampleSpec:
        return SubsampleSpec(self.pi0, self.pi1, self.bags, self.seed)

    def irls(self) -> IRLSConfig:
        return IRLSConfig(self.max_iter, self.score_tol, self.step_halving_max, self.ridge,
                          self.divergence_bound)


_PARSERS = {
    "learn": str, "test": str, "model": str, "out": str, "method": str,
    "pi0": float, "pi1": float, "bags": int, "seed": int, "threads": int,
    "delimiter": lambda s: "\t" if s in ("tab", "\\t") else s,
    "nu_bar": _nu_bar, "max_iter": int, "score_tol": float, "step_halving_max": int,
    "ridge": float, "divergence_bound": float, "k_values": _ints, "targets": _floats,
    "beta_rest": _floats, "replications": int, "methods": _words, "regime": str,
    "pi0_values": _floats, "bench_cells": int, "bench_nonempty": float, "bench_pi0": _floats,
}
_ALIASES = {"b": "replications", "n_bags": "bags", "j_log2": "k_values"}


def read_config(path, command: str) -> RunConfig:
    """Merge ``[common]`` and ``[<command>]`` sections into a :class:`RunConfig`."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    cfg = RunConfig()
    known = {f.name for f in fields(RunConfig)} - {"extra"}
    for section in ("common", command):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            name = _ALIASES.get(key, key)
            if name not in known:
                raise VoxelFitError(f"{path}: unknown key {key!r} in section [{section}]")
            try:
                setattr(cfg, name, _PARSERS[name](raw))
            except ValueError as exc:
                raise VoxelFitError(f"{path}: bad value for {key!r}: {exc}") from None
    return cfg


def _build_config(args) -> RunConfig:
    cfg = read_config(args.config, args.command) if args.config else RunConfig()
    for name in _PARSERS:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    # validate eagerly so bad settings fail before any work
    cfg.spec()
    cfg.irls()
    Method.parse(cfg.method)
    return cfg


def _write_json(obj, path: Path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _require(cfg: RunConfig, name: str) -> str:
    value = getattr(cfg, name)
    if not value:
        raise VoxelFitError(f"missing required setting {name!r} (flag --{name} or config key)")
    return value


# -- fit ----------------------------------------------------------------------


def cmd_fit(cfg: RunConfig) -> int:
    table = load_table(_require(cfg, "learn"), delimiter=cfg.delimiter)
    method = Method.parse(cfg.method)
    strata = partition_by_stratum(table)
    models = fit_strata(strata, method, cfg.spec(), cfg.irls(), n_jobs=cfg.threads)
    doc = {
        "toolkit": "voxelfit",
        "version": __version__,
        "method": method.value,
        "spec": cfg.spec().as_dict(),
        "irls": {f.name: getattr(cfg.irls(), f.name) for f in fields(IRLSConfig)},
        "covariate_names": list(table.covariate_names),
        "strata": {label: m.to_dict() for label, m in models.items()},
    }
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(doc, out / MODEL_FILE)
    for label, m in models.items():
        flag = "" if m.all_converged else (
            f" ({m.skipped_bags} skipped, {len(m.bag_fits) - m.n_converged} not converged)")
        log.info("stratum %s: %s%s", label, np.array2string(m.coefficients, precision=6), flag)
    return 0


def load_model(path) -> tuple[dict, dict[str, FittedModel]]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "strata" not in doc:
        raise SchemaError(f"{path}: not a voxelfit model file")
    return doc, {k: FittedModel.from_dict(v) for k, v in doc["strata"].items()}


# -- predict / evaluate --------------------------------------------------------


def _predictions(cfg: RunConfig):
    doc, models = load_model(_require(cfg, "model"))
    test = load_table(_require(cfg, "test"), delimiter=cfg.delimiter)
    names = tuple(doc.get("covariate_names", ()))
    if names and names != test.covariate_names:
        missing = [n for n in names if n not in test.covariate_names]
        raise SchemaError(
            f"test covariates {list(test.covariate_names)} do not match model "
            f"covariates {list(names)}" + (f"; missing {missing}" if missing else "")
        )
    parts = partition_by_stratum(test)
    unknown = [s for s in parts if s not in models]
    if unknown:
        raise VoxelFitError(f"test stratum {unknown[0]!r} has no fitted model")
    preds = {s: predict_counts(models[s], t) for s, t in parts.items()}
    return parts, preds


def _write_predictions(parts, preds, path: Path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("cell_id\tstratum\tvolume\tobserved\tpredicted\n")
        for s, t in parts.items():
            p = preds[s]
            for j in range(len(t)):
                fh.write(f"{t.cell_ids[j]}\t{s}\t{t.volumes[j]!r}\t{int(t.counts[j])}\t"
                         f"{p.predicted[j]!r}\n")


def cmd_predict(cfg: RunConfig) -> int:
    parts, preds = _predictions(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_predictions(parts, preds, out / PREDICTIONS_FILE)
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    parts, preds = _predictions(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = {s: evaluate(p, cfg.nu_bar).as_dict() for s, p in preds.items()}
    pooled = PredictionSet(
        np.concatenate([p.observed for p in preds.values()]),
        np.concatenate([p.predicted for p in preds.values()]),
    )
    # a user-supplied nu_bar is per stratum; pooled scores use the pooled maximum
    doc = {"strata": reports, "pooled": evaluate(pooled, "auto").as_dict()}
    _write_json(doc, out / METRICS_FILE)
    _write_predictions(parts, preds, out / PREDICTIONS_FILE)
    with open(out / CURVES_FILE, "w", encoding="utf-8") as fh:
        fh.write("stratum\tposition\tcell_id\tcum_observed\tcum_predicted\n")
        for s, t in parts.items():
            obs, pred = cumulative_curve(preds[s])
            for j in range(len(t)):
                fh.write(f"{s}\t{j}\t{t.cell_ids[j]}\t{obs[j]!r}\t{pred[j]!r}\n")
    for s, r in reports.items():
        if r["auc"] is None:
            log.warning("stratum %s: AUC undefined (single class in test split)", s)
        log.info("stratum %s: auc=%s ppv=%s ww=%.6g", s, r["auc"], r["ppv"], r["ww"])
    return 0


# -- simulate / bench ---------------------------------------------------------


def sim_config(cfg: RunConfig) -> SimConfig:
    return SimConfig(
        J_values=tuple(2**k for k in cfg.k_values),
        target_empty_values=cfg.targets,
        beta_rest=cfg.beta_rest,
        B=cfg.replications,
        seed=cfg.seed,
        methods=tuple(Method.parse(m) for m in cfg.methods),
        spec=cfg.spec(),
        regime=cfg.regime,
        pi0_values=cfg.pi0_values or None,
        irls=cfg.irls(),
    )


def cmd_simulate(cfg: RunConfig) -> int:
    result = run_sweep(sim_config(cfg), n_jobs=cfg.threads)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    result.write(out / SWEEP_FILE)
    n_fail = sum(r.failures for r in result.rows if r.coef_index == 0)
    if n_fail:
        log.warning("%d fit(s) failed and were excluded (see the failures column)", n_fail)
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    table = synthetic_table(cfg.bench_cells, cfg.bench_nonempty, cfg.seed, cfg.beta_rest)
    rows = run_bench(table, [Method.parse(m) for m in cfg.methods], cfg.bench_pi0,
                     pi1=cfg.pi1, bags=cfg.bags, seed=cfg.seed, config=cfg.irls())
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_bench(rows, out / BENCH_FILE)
    for r in rows:
        log.info("%-12s pi0=%-8g %.4fs/bag  rows=%.0f", r.method.value, r.pi0,
                 r.seconds_per_bag, r.mean_rows)
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
}


def _positive_pi1(s: str) -> float:
    x = float(s)
    if not 0.0 < x <= 1.0:
        raise argparse.ArgumentTypeError(f"pi1 must lie in (0, 1], got {s}")
    return x


def _unit(s: str) -> float:
    x = float(s)
    if not 0.0 <= x <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {s}")
    return x


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--method", type=lambda s: Method.parse(s).cli_name,
                        help="pl, brl-logit, brl-cloglog, clrl or wclrl")
    common.add_argument("--pi0", type=_unit, help="inclusion probability of empty cells")
    common.add_argument("--pi1", type=_positive_pi1, help="inclusion probability of non-empty cells")
    common.add_argument("--bags", type=int, help="number of subsample bags")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--learn", help="learn table (fit)")
    common.add_argument("--test", help="test table (predict, evaluate)")
    common.add_argument("--model", help="model file (predict, evaluate)")
    common.add_argument("--nu-bar", dest="nu_bar", type=_nu_bar, help="'auto' or a number")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="voxelfit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = _build_config(args)
        return COMMANDS[args.command](cfg)
    except (VoxelFitError, OSError, ValueError) as exc:
        print(f"voxelfit {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
