"""Command-line entry point: ``modecert certify|simulate|ingest|rerun``.

Exit status: 0 certified (or reports written), 1 stream exhausted without
certification, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Sequence

from . import __version__
from .certifier import CertifierConfig, CiteCertifier
from .core import CiteParams, ConfigurationError, InvalidParameterError, load_params
from .ingest import IngestError, load_pools, pool_report
from .simharness import CSV_COLUMNS, SETTINGS, ConstructionError, run_trials, write_csv, write_json
from .weighted import InvalidObservationError, WCiteCertifier, WeightedObservation

OUT_ENV = "MODECERT_OUT"
EXIT_CERTIFIED, EXIT_EXHAUSTED, EXIT_USAGE = 0, 1, 2
INGEST_COLUMNS = CSV_COLUMNS + ("K_mean",)


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    version: str = __version__
    outputs: list = field(default_factory=list)
    wall_clock_s: float = 0.0

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str) -> "RunManifest":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(**d)
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise UsageError(f"{path}: unreadable manifest ({exc})") from exc


def _csv_list(text: str, conv=str) -> list:
    try:
        return [conv(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise UsageError(f"bad list {text!r}: {exc}") from exc


def _params(args) -> CiteParams:
    if args.config is not None:
        if args.epsilon is not None or args.grid_delta0 is not None:
            raise UsageError("--config cannot be combined with --epsilon or --grid-delta0")
        return load_params(args.config)
    eps = 0.05 if args.epsilon is None else args.epsilon
    return CiteParams.default(eps, args.grid_delta0)


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_stream(fh: IO[str], name: str, weighted: bool):
    """Yields (label, weight|None); lines are ``label`` or ``label<TAB>weight``."""
    for lineno, raw in enumerate(fh, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        label, sep, wtext = line.rpartition("\t")
        if not sep:
            label, wtext = line, None
        w = None
        if wtext is not None:
            try:
                w = float(wtext)
            except ValueError:
                raise UsageError(f"{name}:{lineno}: weight {wtext!r} is not a number") from None
        if weighted and w is None:
            raise UsageError(f"{name}:{lineno}: wcite needs 'label<TAB>weight' lines")
        if weighted and not (0.0 <= w <= 1.0):
            raise UsageError(f"{name}:{lineno}: weight {w!r} outside [0, 1]")
        yield label, w


def cmd_certify(args) -> int:
    params = _params(args)
    mode = args.mode
    if mode == "topk":
        if not args.targets:
            raise UsageError("--mode topk needs --targets")
        config = CertifierConfig.top_k(_csv_list(args.targets), params)
    else:
        if args.target is None:
            raise UsageError(f"--mode {mode} needs --target")
        config = CertifierConfig.unique(args.target, params)

    trace = open(args.trace, "w", encoding="utf-8") if args.trace else None
    src = sys.stdin if args.input in (None, "-") else None
    try:
        fh = src or open(args.input, encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"{args.input}: {exc}") from exc
    name = "<stdin>" if src else args.input
    try:
        if mode == "wcite":
            cert = WCiteCertifier(args.target, params, trace)
            for label, w in _read_stream(fh, name, weighted=True):
                cert.wstep(WeightedObservation(label, w))
                if cert.certified:
                    break
            lcb = cert.lcb_value
        else:
            cert = CiteCertifier(config, trace)
            for label, _ in _read_stream(fh, name, weighted=False):
                cert.step(label)
                if cert.certified:
                    break
            lcb = cert.lcb if cert.t else 0.0
    finally:
        if fh is not sys.stdin:
            fh.close()
        if trace is not None:
            trace.close()
    tau_pw, tau_lu = cert.diagnostics()
    record = {
        "certified": cert.certified, "tau": cert.tau, "t_seen": cert.t,
        "L": lcb, "U": cert.unseen_value, "pw_log_e": cert.pw_log_e,
        "tau_pw": tau_pw, "tau_lu": tau_lu, "mode": mode, "targets": list(config.targets),
    }
    print(json.dumps(record))
    return EXIT_CERTIFIED if cert.certified else EXIT_EXHAUSTED


def _write_reports(out: Path, stem: str, reports, columns) -> list[str]:
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    write_csv(reports, csv_path, columns)
    write_json(reports, json_path, columns)
    return [str(csv_path), str(json_path)]


def _simulate(config: dict, params: CiteParams, out: Path) -> list[str]:
    if config["setting"] not in SETTINGS:
        raise UsageError(f"--setting must be one of {sorted(SETTINGS)}")
    reports = run_trials(SETTINGS[config["setting"]], config["methods"], config["case"],
                         config["budgets"], config["reps"], config["seed"], config["gamma"],
                         params, config["workers"])
    stem = f"simulate-s{config['setting']}-{config['case']}"
    return _write_reports(out, stem, reports, CSV_COLUMNS)


def _ingest(config: dict, params: CiteParams, out: Path) -> list[str]:
    pools = load_pools(config["pool"])
    if config["problem"] is not None:
        if config["problem"] not in pools:
            raise UsageError(f"no problem {config['problem']!r} in {config['pool']}")
        pools = {config["problem"]: pools[config["problem"]]}
    reports = []
    for pool in pools.values():
        reports += pool_report(pool, config["methods"], config["budgets"], config["reps"],
                               config["case"], params.budget.epsilon, config["seed"], params)
    stem = f"ingest-{Path(config['pool']).stem}-{config['case']}"
    return _write_reports(out, stem, reports, INGEST_COLUMNS)


_RUNNERS = {"simulate": _simulate, "ingest": _ingest}


def _execute(command: str, config: dict, params: CiteParams, out: Path) -> int:
    start = time.perf_counter()
    outputs = _RUNNERS[command](config, params, out)
    manifest = RunManifest(command, {**config, "params": params.to_dict()}, config.get("seed"))
    manifest.outputs = outputs
    manifest.wall_clock_s = time.perf_counter() - start
    mpath = out / (Path(outputs[0]).stem + ".manifest.json")
    manifest.write(mpath)
    for p in outputs + [str(mpath)]:
        print(p)
    return EXIT_CERTIFIED


def cmd_simulate(args) -> int:
    config = {
        "setting": args.setting, "methods": _csv_list(args.methods), "case": args.case,
        "budgets": _csv_list(args.budgets, int), "reps": args.reps, "seed": args.seed,
        "gamma": args.gamma, "workers": args.workers,
    }
    return _execute("simulate", config, _params(args), _out_dir(args))


def cmd_ingest(args) -> int:
    config = {
        "pool": args.pool, "problem": args.problem, "methods": _csv_list(args.methods),
        "case": args.case, "budgets": _csv_list(args.budgets, int), "reps": args.reps,
        "seed": args.seed,
    }
    return _execute("ingest", config, _params(args), _out_dir(args))


def cmd_rerun(args) -> int:
    m = RunManifest.read(args.manifest)
    if m.command not in _RUNNERS:
        raise UsageError(f"manifest command {m.command!r} cannot be rerun")
    config = dict(m.config)
    params = CiteParams.from_dict(config.pop("params"))
    out = Path(args.out) if args.out else Path(m.outputs[0]).parent
    out.mkdir(parents=True, exist_ok=True)
    return _execute(m.command, config, params, out)


def _add_params(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, default=None, help="error level (default 0.05)")
    p.add_argument("--grid-delta0", type=float, default=None,
                   help="smallest gap the pairwise grid is tuned for (default 0.25)")
    p.add_argument("--config", default=None, help="INI file with a [cite] section")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="modecert", description="Anytime-valid certification of a unique mode.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("certify", help="stream labels through a certifier")
    c.add_argument("--target")
    c.add_argument("--targets", help="comma-separated target set for --mode topk")
    c.add_argument("--mode", choices=("cite", "wcite", "topk"), default="cite")
    c.add_argument("--input", default="-", help="file with one label per line, or - for stdin")
    c.add_argument("--trace", help="write a JSONL step trace here")
    _add_params(c)
    c.set_defaults(func=cmd_certify)

    s = sub.add_parser("simulate", help="Monte Carlo certification rates on a synthetic setting")
    s.add_argument("--setting", type=int, required=True)
    s.add_argument("--methods", default="cite")
    s.add_argument("--case", choices=("A", "B"), default="A")
    s.add_argument("--budgets", default="64,128,256,512,1024,2048")
    s.add_argument("--reps", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--gamma", type=float, default=0.0, help="rank weight decay for wcite")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    _add_params(s)
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("ingest", help="bootstrap certification rates on answer pools")
    g.add_argument("--pool", required=True)
    g.add_argument("--problem", help="only this problem_id")
    g.add_argument("--methods", default="cite")
    g.add_argument("--case", choices=("A", "B"), default="A")
    g.add_argument("--budgets", default="64,128,256,512,1024")
    g.add_argument("--reps", type=int, default=500)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    _add_params(g)
    g.set_defaults(func=cmd_ingest)

    r = sub.add_parser("rerun", help="repeat a simulate/ingest run from its manifest")
    r.add_argument("manifest")
    r.add_argument("--out", help="output directory (default: where the manifest's outputs went)")
    r.set_defaults(func=cmd_rerun)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, InvalidParameterError, IngestError,
            InvalidObservationError, ConstructionError) as exc:
        print(f"modecert: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
