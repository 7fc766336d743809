"""Command-line pipeline: transform, check, testgen, simulate, export."""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .anb import parse_protocol_result, pretty_print
from .checker import SearchBudgetExceeded, SearchConfig, search, verify_trace
from .checker.search import NotExecutableSpec
from .diagnostics import DiagnosticError
from .exporters import UnsupportedConstruct, export_anb, export_tamarin
from .hlmodel import load_grammar, load_hl_model, to_anb
from .simkit import simulate_atc
from .terms import ProtocolSpec
from .testgen import (
    atc_from_json, atc_to_json, dumps, trace_from_json, trace_to_atc, trace_to_json,
)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_INPUT = 2
EXIT_BUDGET = 3


class InputError(Exception):
    """Bad input; the message has already been printed."""


@dataclass(frozen=True)
class PipelineConfig:
    """Settings shared by the subcommands, normalized from argv."""

    input: Path
    command: str
    sessions: int = 2
    agents: tuple[str, ...] = ("a", "b", "i")
    seed: int = 0
    out_dir: Path = Path(".")
    format: str = "anb"

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "PipelineConfig":
        agents = getattr(args, "agents", "a,b,i")
        return cls(
            input=Path(getattr(args, "protocol", None) or args.model),
            command=args.command,
            sessions=getattr(args, "sessions", 2),
            agents=tuple(a.strip() for a in agents.split(",") if a.strip()),
            seed=getattr(args, "seed", 0),
            out_dir=Path(getattr(args, "out_dir", ".")),
            format=getattr(args, "format", "anb"),
        )

    @property
    def stem(self) -> str:
        name = self.input.name
        for suffix in (".anb", ".json"):
            if name.endswith(suffix):
                return name[: -len(suffix)]
        return name


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        _err(f"{path}: {exc.strerror}")
        raise InputError from None


def _report(exc: DiagnosticError, filename: str) -> None:
    for d in exc.diagnostics:
        _err(d.render(filename))


def load_spec(path: str) -> ProtocolSpec:
    res = parse_protocol_result(_read(path))
    for d in res.diagnostics:
        _err(d.render(path))
    if res.spec is None:
        raise InputError
    return res.spec


def _load_json(path: str):
    try:
        return json.loads(_read(path))
    except json.JSONDecodeError as exc:
        _err(f"{path}:{exc.lineno}:{exc.colno}: error[bad-json]: {exc.msg}")
        raise InputError from None


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    print(f"wrote {path}")


def _config(args) -> SearchConfig:
    cfg = PipelineConfig.from_args(args)
    try:
        return SearchConfig(max_sessions=cfg.sessions, agents=cfg.agents, max_depth=args.max_depth,
                            max_states=args.max_states, allow_large=args.allow_large)
    except ValueError as exc:
        _err(f"error: {exc}")
        raise InputError from None


def _search(spec: ProtocolSpec, config: SearchConfig):
    try:
        return search(spec, config)
    except NotExecutableSpec as exc:
        for p in exc.problems:
            _err(f"error[not-executable]: {p}")
        raise InputError from None


# --------------------------------------------------------------------------
# subcommands


def cmd_transform(args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            model = load_hl_model(_read(args.model))
            grammars = {}
            for g in args.grammar:
                gr = load_grammar(_read(g))
                grammars[gr.name] = gr
            spec = to_anb(model, grammars)
        except DiagnosticError as exc:
            _report(exc, args.model)
            return EXIT_INPUT
    for w in caught:
        _err(f"{args.model}: warning: {w.message}")
    text = pretty_print(spec)
    if args.output:
        _write(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_check(args) -> int:
    spec = load_spec(args.protocol)
    config = _config(args)
    res = _search(spec, config)
    if not res.is_attack:
        print(f"{spec.name}: safe at bound (sessions={config.max_sessions}, "
              f"agents={','.join(config.agents)}, states={res.stats.states})")
        return EXIT_OK
    tr = res.trace
    print(f"{spec.name}: attack on goal \"{tr.goal_label}\" (states={res.stats.states})")
    for g, kind in tr.violations:
        print(f"  violated: {spec.goals[g]} [{kind}]")
    print(f"  certificate: {'accepted' if verify_trace(spec, tr).ok else 'REJECTED'}")
    cfg = PipelineConfig.from_args(args)
    out = Path(args.output) if args.output else cfg.out_dir / f"{cfg.stem}.trace.json"
    _write(out, dumps(trace_to_json(tr)))
    return EXIT_VIOLATION


def cmd_testgen(args) -> int:
    spec = load_spec(args.protocol)
    try:
        tr = trace_from_json(_load_json(args.trace), spec)
    except DiagnosticError as exc:
        _report(exc, args.trace)
        return EXIT_INPUT
    verdict = verify_trace(spec, tr)
    if not verdict.ok:
        _err(f"{args.trace}: error[bad-trace]: {verdict.reason}")
        return EXIT_INPUT
    atc = trace_to_atc(tr)
    cfg = PipelineConfig.from_args(args)
    out = Path(args.output) if args.output else cfg.out_dir / f"{cfg.stem}.atc.json"
    _write(out, dumps(atc_to_json(atc)))
    return EXIT_OK


def _simulate(spec: ProtocolSpec, atc, seed: int, stem: str, out_dir: Path, report_path=None) -> int:
    rep = simulate_atc(spec, atc, seed=seed)
    v = rep.verdict
    if rep.reproduced:
        print(f"{spec.name}: violation reproduced at step {v.step}: {spec.goals[v.goal]}")
    else:
        print(f"{spec.name}: not reproduced ({v.reason}{': ' + v.detail if v.detail else ''})")
    _write(Path(report_path) if report_path else out_dir / f"{stem}.report.json", rep.dumps())
    _write(out_dir / f"{stem}.events.log", rep.log_lines())
    return EXIT_OK if rep.reproduced else EXIT_VIOLATION


def cmd_simulate(args) -> int:
    spec = load_spec(args.protocol)
    try:
        atc = atc_from_json(_load_json(args.atc), spec)
    except DiagnosticError as exc:
        _report(exc, args.atc)
        return EXIT_INPUT
    cfg = PipelineConfig.from_args(args)
    return _simulate(spec, atc, cfg.seed, cfg.stem, cfg.out_dir, args.output)


def cmd_export(args) -> int:
    spec = load_spec(args.protocol)
    try:
        art = export_anb(spec) if args.format == "anb" else export_tamarin(spec)
    except UnsupportedConstruct as exc:
        _err(f"{args.protocol}: error[unsupported]: {exc}")
        return EXIT_INPUT
    for w in art.warnings:
        _err(f"{args.protocol}: warning: {w}")
    if args.output:
        _write(Path(args.output), art.text)
    else:
        sys.stdout.write(art.text)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    spec = load_spec(args.protocol)
    config = _config(args)
    res = _search(spec, config)
    cfg = PipelineConfig.from_args(args)
    stem, out_dir = cfg.stem, cfg.out_dir
    if not res.is_attack:
        print(f"{spec.name}: safe at bound (states={res.stats.states}); nothing to reproduce")
        return EXIT_OK
    tr = res.trace
    print(f"{spec.name}: attack on goal \"{tr.goal_label}\" (states={res.stats.states})")
    _write(out_dir / f"{stem}.trace.json", dumps(trace_to_json(tr)))
    atc = trace_to_atc(tr)
    _write(out_dir / f"{stem}.atc.json", dumps(atc_to_json(atc)))
    return _simulate(spec, atc, cfg.seed, stem, out_dir)


# --------------------------------------------------------------------------


def _search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sessions", type=int, default=2, help="maximum number of sessions (default 2)")
    p.add_argument("--agents", default="a,b,i", help="agent pool; 'i' is the intruder (default a,b,i)")
    p.add_argument("--max-states", type=int, default=100_000)
    p.add_argument("--max-depth", type=int, default=64)
    p.add_argument("--allow-large", action="store_true", help="permit more than 3 sessions")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apv", description="Protocol modeling, checking and attack replay.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", help="lower an HL model to AnB")
    p.add_argument("model")
    p.add_argument("--grammar", action="append", required=True, help="payload grammar JSON (repeatable)")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("check", help="bounded attack search")
    p.add_argument("protocol")
    _search_flags(p)
    p.add_argument("-o", "--output", help="trace file (default <out-dir>/<name>.trace.json)")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("testgen", help="attack trace to abstract test case")
    p.add_argument("protocol")
    p.add_argument("--trace", required=True)
    p.add_argument("-o", "--output")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_testgen)

    p = sub.add_parser("simulate", help="replay an abstract test case in the simulator")
    p.add_argument("protocol")
    p.add_argument("--atc", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", help="report file (default <out-dir>/<name>.report.json)")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export", help="emit AnB or a Tamarin theory")
    p.add_argument("protocol")
    p.add_argument("--format", choices=["anb", "tamarin"], default="anb")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("pipeline", help="check, then testgen, then simulate")
    p.add_argument("protocol")
    _search_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_pipeline)
    return parser


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except InputError:
        return EXIT_INPUT
    except SearchBudgetExceeded as exc:
        _err(f"error[budget]: {exc}")
        return EXIT_BUDGET


def main(argv: Optional[Sequence[str]] = None) -> int:
    return run_command(argv)


if __name__ == "__main__":
    sys.exit(main())
