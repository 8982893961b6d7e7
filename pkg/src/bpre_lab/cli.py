"""Command-line entry point: ``bpre-lab <calibrate|simulate|renewal|experiment|oracle>``.

Exit codes: 0 success (all verdicts pass), 2 some verdict failed,
3 some verdict inconclusive (none failed), 1 errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shutil
import sys
import tempfile
import traceback
from dataclasses import dataclass, field

from . import bpre, experiments, oracle, walk
from .environment import EnvironmentSpec, lognormal_geometric, two_atom_oracle_spec
from .streams import AttemptsExhaustedError, Stream

SCHEMA_VERSION = 1
OUT_ENV = "BPRE_LAB_OUT"
DEFAULT_OUT_ROOT = "bpre_lab_runs"
BUILTIN_SPECS = {"two_atom": two_atom_oracle_spec}

EXIT_OK, EXIT_ERROR, EXIT_FAIL, EXIT_INCONCLUSIVE = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field or line."""


@dataclass
class RunConfig:
    """Everything needed to rerun a command. ``seed`` has no default."""

    command: str
    seed: int
    spec: dict | None = None
    experiment: str | None = None
    n: int | None = None
    r: int | None = None
    samples: int | None = None
    workers: int = 1
    out: str | None = None
    strategy: str = "tilted_rao_blackwell"
    functional: str = "Z_tau_r"
    thresholds: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config: top level must be a JSON object")
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"config field 'schema_version': expected {SCHEMA_VERSION}, got {version!r}")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"config field {unknown[0]!r}: unknown field")
        for key in ("command", "seed"):
            if d.get(key) is None:
                raise ConfigError(f"config field {key!r}: required")
        ints = ("seed", "n", "r", "samples", "workers")
        for key in ints:
            v = d.get(key)
            if v is not None and (isinstance(v, bool) or not isinstance(v, int)):
                raise ConfigError(f"config field {key!r}: expected an integer, got {v!r}")
        for key in ("thresholds", "parameters"):
            if key in d and not isinstance(d[key], dict):
                raise ConfigError(f"config field {key!r}: expected an object")
        if d.get("spec") is not None:
            try:
                EnvironmentSpec.from_dict(d["spec"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"config field 'spec': {exc}") from exc
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(d)

    def environment(self) -> EnvironmentSpec:
        if self.spec is None:
            raise ConfigError("config field 'spec': give --spec or --sigma2")
        return EnvironmentSpec.from_dict(self.spec)

    def stream(self) -> Stream:
        return Stream(int(self.seed)).with_workers(self.workers)


def load_spec(value: str) -> EnvironmentSpec:
    if value in BUILTIN_SPECS:
        return BUILTIN_SPECS[value]()
    try:
        with open(value, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"--spec: cannot read {value!r}: {exc.strerror}") from exc
    try:
        return EnvironmentSpec.from_json(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{value} line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{value}: invalid environment ({exc})") from exc


def _load_json(path: str, what: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{what}: cannot read {path!r}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


class _Parser(argparse.ArgumentParser):
    # usage errors exit with 1; 2 is reserved for failed verdicts
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run config; flags override its values")
    common.add_argument("--spec", help="environment JSON file or built-in name (two_atom)")
    common.add_argument("--sigma2", type=float, help="lognormal-geometric family with this variance")
    common.add_argument("--n", type=int)
    common.add_argument("--r", type=int)
    common.add_argument("--samples", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out", help="run directory (default: $BPRE_LAB_OUT/<run name>)")
    common.add_argument("--strategy", choices=bpre.STRATEGIES)
    common.add_argument("--threshold-file", help="JSON map experiment id -> threshold overrides")

    p = _Parser(prog="bpre-lab", description="Monte Carlo lab for branching processes in random environment.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("calibrate", parents=[common], help="print the environment, its regime and gamma")
    sub.add_parser("simulate", parents=[common], help="weighted samples given survival, to CSV")
    sub.add_parser("renewal", parents=[common], help="estimate the renewal tables u and v")
    ex = sub.add_parser("experiment", parents=[common], help="run an experiment (e1..e8) or all")
    ex.add_argument("experiment", help="experiment id or 'all'")
    orc = sub.add_parser("oracle", parents=[common], help="exact enumeration on a finite environment")
    orc.add_argument("--functional", choices=("Z1", "Zn", "Z_tau_r"))
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    base = _load_json(args.config, "--config") if args.config else {}
    if not isinstance(base, dict):
        raise ConfigError("config: top level must be a JSON object")
    base = {**base, "command": args.command}
    if args.seed is not None:
        base["seed"] = args.seed
    if base.get("seed") is None:
        raise ConfigError("--seed is required")
    cfg = RunConfig.from_dict(base)
    for name in ("seed", "n", "r", "samples", "workers", "out", "strategy"):
        v = getattr(args, name)
        if v is not None:
            setattr(cfg, name, v)
    if getattr(args, "experiment", None) is not None:
        cfg.experiment = args.experiment.lower()
    if getattr(args, "functional", None) is not None:
        cfg.functional = args.functional
    if args.spec is not None:
        cfg.spec = load_spec(args.spec).to_dict()
    elif args.sigma2 is not None:
        cfg.spec = lognormal_geometric(args.sigma2).to_dict()
    if args.threshold_file:
        cfg.thresholds = _load_json(args.threshold_file, "--threshold-file")
    if cfg.seed is None:
        raise ConfigError("--seed is required")
    if cfg.workers < 1:
        raise ConfigError("--workers must be positive")
    return RunConfig.from_dict(cfg.to_dict())


# -- output directories ------------------------------------------------------


def run_name(cfg: RunConfig) -> str:
    parts = [cfg.command]
    if cfg.experiment:
        parts.append(cfg.experiment)
    parts.append(f"seed{cfg.seed}")
    return "-".join(parts)


def open_run_dir(cfg: RunConfig) -> str:
    """Create the run directory atomically, holding the manifest and a ``partial`` marker."""
    target = cfg.out or os.path.join(os.environ.get(OUT_ENV, DEFAULT_OUT_ROOT), run_name(cfg))
    target = os.path.abspath(target)
    if os.path.exists(target):
        if not os.path.isdir(target) or os.listdir(target):
            raise ConfigError(f"--out: {target} already exists and is not empty")
        os.rmdir(target)
    parent = os.path.dirname(target)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".bpre-lab-", dir=parent)
    try:
        manifest = {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict()}
        with open(os.path.join(tmp, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(tmp, "config.json"), "w", encoding="utf-8") as fh:
            fh.write(cfg.to_json())
        open(os.path.join(tmp, "partial"), "w").close()
        os.rename(tmp, target)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return target


def close_run_dir(path: str) -> None:
    os.remove(os.path.join(path, "partial"))


# -- subcommands -------------------------------------------------------------


def cmd_calibrate(cfg: RunConfig) -> int:
    spec = cfg.environment()
    info = {
        "spec": spec.to_dict(),
        "classification": spec.classification.value,
        "gamma": spec.gamma,
        "E_X": spec.moments["E_X"],
        "E_XeX": spec.moments["E_XeX"],
    }
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    spec = cfg.environment()
    n = cfg.n or 64
    N = cfg.samples or 100_000
    out = open_run_dir(cfg)
    s = bpre.conditioned_survival_sampler(spec, n, cfg.r, N, cfg.stream(), cfg.strategy)
    meta = {k: v for k, v in s.meta.items()}
    meta["ess"] = s.ess
    s.to_csv(os.path.join(out, "samples.csv"))
    with open(os.path.join(out, "samples_manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(experiments._plain(meta), fh, indent=2, sort_keys=True)
        fh.write("\n")
    close_run_dir(out)
    print(f"{len(s)} weighted samples (ESS {s.ess:.1f}) written to {out}")
    return EXIT_OK


def cmd_renewal(cfg: RunConfig) -> int:
    spec = cfg.environment()
    N = cfg.samples or 200_000
    out = open_run_dir(cfg)
    stream = cfg.stream()
    for which in ("u", "v"):
        table = walk.estimate_renewal(spec, which, N=N, rng=stream.child("renewal", which))
        table.to_csv(os.path.join(out, f"renewal_{which}.csv"))
        extra = f", v(0) = {table.v_at_zero:.4f}" if which == "v" else ""
        print(f"{which}: {table.grid.size} grid points, K = {table.truncation_K}{extra}")
    close_run_dir(out)
    print(f"tables written to {out}")
    return EXIT_OK


# CLI flags -> experiment parameters
def experiment_parameters(eid: str, cfg: RunConfig) -> dict:
    p: dict = {}
    if cfg.samples is not None:
        p["N"] = cfg.samples
    n = cfg.n
    if n is not None:
        if eid in ("e1", "e2", "e5"):
            p["n_list"] = [n]
            if eid == "e5":
                p["arcsine_n"] = None
        elif eid in ("e3", "e8"):
            p["n"] = n
        elif eid == "e4":
            p["horizon_list"] = [max(1, n // 4), max(1, n // 2), n]
    if cfg.r is not None and eid == "e3":
        p["r"] = cfg.r
    if eid in ("e1", "e2", "e8"):
        p["strategy"] = cfg.strategy
    p.update(cfg.parameters.get(eid, {}))
    return p


def cmd_experiment(cfg: RunConfig) -> int:
    spec = cfg.environment()
    ids = list(experiments.EXPERIMENTS) if cfg.experiment == "all" else [cfg.experiment]
    for eid in ids:
        if eid not in experiments.RUNNERS:
            raise ConfigError(f"unknown experiment {eid!r}; choose from {', '.join(experiments.EXPERIMENTS)} or all")
        if spec.oracle_only and eid in experiments.LIMIT_EXPERIMENTS:
            raise ConfigError(f"{eid} needs a continuous environment; oracle-only specs are for the oracle")
    out = open_run_dir(cfg)
    verdicts = []
    for eid in ids:
        res = experiments.run_experiment(eid, spec, cfg.stream().child(eid), cfg.thresholds, **experiment_parameters(eid, cfg))
        res.write(out)
        verdicts.append(res.verdict)
        print(f"{eid}: {res.verdict}")
    close_run_dir(out)
    if "fail" in verdicts:
        return EXIT_FAIL
    if "inconclusive" in verdicts:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def cmd_oracle(cfg: RunConfig) -> int:
    spec = cfg.environment()
    if not spec.oracle_only:
        raise ConfigError("the oracle needs an oracle-only (finite) environment")
    n = cfg.n or 3
    law = oracle.enumerate_bpre(spec, n, cfg.functional, "survival", cfg.r)
    text = law.to_json()
    print(text)
    if cfg.out:
        out = open_run_dir(cfg)
        with open(os.path.join(out, "exact_law.json"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        close_run_dir(out)
    return EXIT_OK


COMMANDS = {
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "renewal": cmd_renewal,
    "experiment": cmd_experiment,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        return COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"bpre-lab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (AttemptsExhaustedError, experiments.OracleOnlySpecError, oracle.StateSpaceTooLargeError, ValueError, KeyError) as exc:
        print(f"bpre-lab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception:
        traceback.print_exc()
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
