"""Command-line interface: ``dwlab <command> [flags]``.

Commands
--------
gen-math     write a DAG math dataset (JSON lines)
gen-writing  write a keyword-writing dataset (JSON lines)
verify       run the closed-form verifiers and the Monte Carlo agreement suite
simulate     compare one parameter point against its closed forms
run          run single and/or multi systems over a dataset
score        grade or score externally produced outputs
analyze      per-cell metrics, heatmaps and S-Scores from run records

Every command accepts ``--seed``, ``--config`` (JSON whose keys are flag
names with dashes replaced by underscores), ``--out`` and ``--jobs``.
Precedence is flags > config file > defaults.

Exit codes: 0 success, 2 usage, 3 pre-flight (bad input, missing file,
output collision, misconfigured backend), 4 task failures, 5 failed check.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

from . import __version__, debate, mathgen, metrics, simkit, tasks, theory, writegen
from .backends import ChatClient, OracleBackend, RemoteBackend, StochasticBackend, StochasticSummarizer
from .errors import DWLabError, ParameterError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PREFLIGHT = 3
EXIT_TASK_FAILURE = 4
EXIT_CHECK_FAILURE = 5

# Per-command defaults; ``None`` in a parsed namespace means "not given".
DEFAULTS = {
    "common": {"seed": 0, "config": None, "out": None, "jobs": 1},
    "gen-math": {"depths": "2,3,4", "widths": "2,3,4", "cells": None, "count": 100, "separate_answers": False,
                 "allow_duplicates": False},
    "gen-writing": {"K": "4,8,12,16,20", "count": 500, "no_bin": False, "lexicon": None},
    "verify": {"trials": 10_000, "repeats": 100, "threshold": 0.99, "inject": [], "ci_method": "auto"},
    "simulate": {
        "q": 0.9, "w": 2, "d": 2, "n_agents": 3, "r": 1.0, "aggregation": "task",
        "trials": 100_000, "ci_method": "auto",
    },
    "run": {
        "dataset": None, "answers": None, "system": "both", "backend": "synthetic",
        "q": 0.9, "r": 0.95, "n_agents": 3, "turns": 2, "base_url": None, "model": None,
        "temperature": 0.7, "summarizer_temperature": 0.0, "judge": "heuristic", "max_retries": 3,
        "resume": False, "timings": False, "paper_parity": False,
    },
    "score": {"dataset": None, "answers": None, "outputs": None, "judge": "heuristic", "base_url": None, "model": None,
              "max_retries": 3},
    "analyze": {"records": None, "width_predictor": "level"},
}

# Flags that never change results and are excluded from the run config hash.
NON_RESULT_KEYS = {"config", "out", "jobs", "resume", "timings", "command"}


class CLIError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _ints(text: str, name: str) -> list[int]:
    try:
        values = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise CLIError(f"--{name} expects comma-separated integers, got {text!r}", EXIT_USAGE) from None
    if not values:
        raise CLIError(f"--{name} is empty", EXIT_USAGE)
    return values


def _out_dir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _claim(path: str) -> str:
    """Refuse to overwrite an existing output file."""
    if os.path.exists(path):
        raise CLIError(f"refusing to overwrite existing output {path}", EXIT_PREFLIGHT)
    return path


def _write_json(path: str, obj) -> None:
    with open(_claim(path), "x") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_math(args) -> int:
    if args.cells:
        cells = []
        for item in args.cells.split(","):
            try:
                d, w = (int(x) for x in item.lower().split("x"))
            except ValueError:
                raise CLIError(f"--cells expects DxW items such as 2x3, got {item!r}", EXIT_USAGE) from None
            cells.append((d, w))
    else:
        cells = [(d, w) for d in _ints(args.depths, "depths") for w in _ints(args.widths, "widths")]
    if args.count < 1 or any(d < 1 or w < 1 for d, w in cells):
        raise CLIError("depth, width and count must all be >= 1", EXIT_USAGE)
    out = _out_dir(args)
    path = _claim(os.path.join(out, "math.jsonl"))
    answers = _claim(os.path.join(out, "math_answers.jsonl")) if args.separate_answers else None
    problems = []
    for d, w in cells:
        problems.extend(mathgen.generate_cell(d, w, args.count, args.seed, unique=not args.allow_duplicates))
    mathgen.write_jsonl(path, problems, answers)
    print(f"wrote {len(problems)} problems over {len(cells)} cells to {path}")
    return EXIT_OK


def cmd_gen_writing(args) -> int:
    Ks = _ints(args.K, "K")
    if args.count < 1 or any(k < 2 for k in Ks):
        raise CLIError("K must be >= 2 and count >= 1", EXIT_USAGE)
    if not args.no_bin and args.count % 5:
        raise CLIError(
            f"--count {args.count} is not divisible by 5, so quintile binning is impossible; pass --no-bin",
            EXIT_USAGE,
        )
    try:
        lexicon = writegen.load_lexicon(args.lexicon)
    except FileNotFoundError:
        raise CLIError(
            f"lexicon not found at {args.lexicon}; omit --lexicon to use the packaged default", EXIT_PREFLIGHT
        ) from None
    out = _out_dir(args)
    path = _claim(os.path.join(out, "writing.jsonl"))
    data = writegen.generate_dataset(Ks, args.count, args.seed, lexicon, binned=not args.no_bin)
    writegen.write_jsonl(path, data)
    cells = len({(t.K, t.quintile) for t in data})
    print(f"wrote {len(data)} writing tasks over {cells} cells to {path}")
    return EXIT_OK


def _parse_point(text: str) -> theory.ModelParams:
    keys = {"q": float, "w": int, "d": int, "n": int, "n_agents": int, "r": float}
    fields = {}
    for item in text.split(","):
        k, _, v = item.partition("=")
        k = k.strip()
        if k not in keys:
            raise CLIError(f"--inject keys are q,w,d,n,r; got {k!r}", EXIT_USAGE)
        fields["n_agents" if k == "n" else k] = keys[k](v)
    fields.setdefault("w", 1)
    fields.setdefault("d", 1)
    try:
        return theory.ModelParams(**fields)
    except (TypeError, ParameterError) as exc:
        raise CLIError(f"bad --inject point {text!r}: {exc}", EXIT_USAGE) from None


def cmd_verify(args) -> int:
    """Closed-form property checks on fixed parameters plus Monte Carlo agreement."""
    started = time.perf_counter()
    checks = []
    mono = theory.verify_monotonicity(theory.ModelParams(q=0.9, w=1, d=1, n_agents=3, r=0.95), (1, 6), (1, 6))
    checks.append(mono.to_dict())
    sat = theory.verify_width_saturation(theory.ModelParams(q=0.9, w=1, d=2, n_agents=3, r=1.0), 500, 1e-6)
    checks.append(sat.to_dict())
    try:
        d_star = theory.verify_depth_divergence(theory.ModelParams(q=0.9, w=2, d=1, n_agents=4, r=0.99), 1e6)
        checks.append({"check": "depth_divergence", "passed": True, "details": {"threshold": 1e6, "first_d": d_star}})
    except DWLabError as exc:
        checks.append({"check": "depth_divergence", "passed": False, "details": {"error": str(exc)}})
    for text in args.inject:
        point = _parse_point(text)
        rep = theory.verify_monotonicity(point, (1, 6), (1, 6))
        row = rep.to_dict()
        row["check"] = f"monotonicity@{text}"
        checks.append(row)

    suite = simkit.agreement_suite(
        simkit.canonical_grid(), args.trials, args.seed, repeats=args.repeats, ci_method=args.ci_method, jobs=args.jobs
    )
    failing = [r.to_dict() for r in suite["reports"] if not r.passed]
    checks.append({
        "check": "monte_carlo_agreement",
        "passed": suite["fraction"] >= args.threshold,
        "details": {
            "cells": suite["cells"], "agreeing": suite["agreeing"], "fraction": suite["fraction"],
            "threshold": args.threshold, "trials": args.trials, "repeats": args.repeats,
            "ci_method": args.ci_method, "disagreeing": failing,
        },
    })
    report = {
        "version": __version__,
        "seed": args.seed,
        "passed": all(c["passed"] for c in checks),
        "checks": checks,
    }
    if args.out:
        _write_json(os.path.join(_out_dir(args), "verify.json"), report)
    for c in checks:
        flagged = len(c.get("flagged", []))
        note = f" ({flagged} assumption-violating points flagged)" if flagged else ""
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['check']}{note}", file=sys.stderr)
    print(f"elapsed {time.perf_counter() - started:.1f}s", file=sys.stderr)
    if not args.out:
        _emit(report)
    return EXIT_OK if report["passed"] else EXIT_CHECK_FAILURE


def cmd_simulate(args) -> int:
    try:
        params = theory.ModelParams(
            q=args.q, w=args.w, d=args.d, n_agents=args.n_agents, r=args.r, aggregation=args.aggregation
        )
        cfg = simkit.TrialConfig(params, args.trials, args.seed)
    except ParameterError as exc:
        raise CLIError(str(exc), EXIT_USAGE) from None
    report = simkit.compare_to_closed_form(cfg, ci_method=args.ci_method, jobs=args.jobs).to_dict()
    if args.out:
        _write_json(os.path.join(_out_dir(args), "simulate.json"), report)
    else:
        _emit(report)
    return EXIT_OK


def load_dataset(path: str, answers: str | None = None) -> list[tasks.Task]:
    """Read a math or writing dataset written by ``gen-math``/``gen-writing``."""
    if not path or not os.path.exists(path):
        raise CLIError(f"dataset not found: {path}", EXIT_PREFLIGHT)
    with open(path) as fh:
        first = next((json.loads(line) for line in fh if line.strip()), None)
    if first is None:
        return []
    if "nodes" in first:
        problems = list(mathgen.read_jsonl(path, answers))
        missing = [p.id for p in problems if p.ground_truth is None]
        if missing:
            raise CLIError(
                f"{len(missing)} problems have no ground truth (first {missing[0]}); pass --answers", EXIT_PREFLIGHT
            )
        return [tasks.from_math(p) for p in problems]
    data = writegen.read_jsonl(path)
    unbinned = [t.id for t in data if t.quintile is None]
    if unbinned:
        raise CLIError(f"writing tasks must be quintile-binned to form cells (first {unbinned[0]})", EXIT_PREFLIGHT)
    return [tasks.from_writing(t) for t in data]


def _remote_client(args, temperature) -> ChatClient:
    if not args.base_url or not args.model:
        raise CLIError("remote backend needs --base-url and --model", EXIT_PREFLIGHT)
    return ChatClient(args.base_url, args.model, temperature=temperature, max_retries=args.max_retries)


def build_backends(args):
    """Single backend, debaters and summarizer for ``args.backend``."""
    n = args.n_agents
    if args.backend == "synthetic":
        single = StochasticBackend(args.q, args.seed, identity="single")
        debaters = [StochasticBackend(args.q, args.seed, identity=f"agent{i}") for i in range(n)]
        summarizer = StochasticSummarizer(args.r, args.seed)
    elif args.backend == "oracle":
        single = OracleBackend("single", args.seed)
        debaters = [OracleBackend(f"agent{i}", args.seed) for i in range(n)]
        summarizer = OracleBackend("summarizer", args.seed)
    elif args.backend == "remote":
        client = _remote_client(args, args.temperature)
        summ_client = _remote_client(args, args.summarizer_temperature)
        single = RemoteBackend(client, "single")
        debaters = [RemoteBackend(client, f"agent{i}") for i in range(n)]
        summarizer = RemoteBackend(summ_client, "summarizer")
    else:
        raise CLIError(f"unknown backend {args.backend!r}", EXIT_USAGE)
    return single, debaters, summarizer


def _judge(args):
    if args.judge == "heuristic":
        return writegen.HeuristicJudge()
    if args.judge == "remote":
        return writegen.RemoteJudge(_remote_client(args, 0.0))
    raise CLIError(f"unknown judge {args.judge!r}", EXIT_USAGE)


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def result_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in NON_RESULT_KEYS}


def cmd_run(args) -> int:
    systems = {"both": ["single", "multi"], "single": ["single"], "multi": ["multi"]}.get(args.system)
    if systems is None:
        raise CLIError("--system must be single, multi or both", EXIT_USAGE)
    dataset = load_dataset(args.dataset, args.answers)
    try:
        single, debaters, summarizer = build_backends(args)
        cfg = debate.DebateConfig(
            n_agents=args.n_agents, turns=args.turns, summarizer=summarizer, paper_parity=args.paper_parity
        )
    except ParameterError as exc:
        raise CLIError(str(exc), EXIT_PREFLIGHT) from None
    judge = _judge(args) if dataset and dataset[0].family == "writing" else None

    out = _out_dir(args)
    manifest_path = os.path.join(out, "run.json")
    records_path = os.path.join(out, "records.jsonl")
    config = result_config(args)
    digest = config_hash(config)
    if args.resume and os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            previous = json.load(fh)
        if previous.get("config_hash") != digest:
            raise CLIError("--resume with a different configuration than the existing run", EXIT_PREFLIGHT)
    else:
        _claim(records_path)
        _write_json(manifest_path, {"config": config, "config_hash": digest, "version": __version__})

    started = time.perf_counter()
    result = debate.run_cellwise(
        dataset,
        single_backend=single,
        debaters=debaters,
        cfg=cfg,
        systems=systems,
        judge=judge,
        records_path=records_path,
        transcripts_path=os.path.join(out, "transcripts.jsonl"),
        resume=True,
        jobs=args.jobs,
    )
    elapsed = time.perf_counter() - started
    total = len(debate.read_records(records_path))
    print(
        f"{len(result.records)} new records ({result.skipped} already done, {result.failures} failed); "
        f"{total} total in {records_path}",
        file=sys.stderr,
    )
    if args.timings:
        print(json.dumps({"elapsed_s": round(elapsed, 3), "records": len(result.records)}), file=sys.stderr)
    return EXIT_TASK_FAILURE if result.failures else EXIT_OK


def cmd_score(args) -> int:
    """Score ``{"id", "text"}`` lines against a dataset; writes scores.jsonl."""
    dataset = {t.id: t for t in load_dataset(args.dataset, args.answers)}
    if not args.outputs or not os.path.exists(args.outputs):
        raise CLIError(f"outputs file not found: {args.outputs}", EXIT_PREFLIGHT)
    judge = None
    if any(t.family == "writing" for t in dataset.values()):
        judge = _judge(args)
    out = _out_dir(args)
    path = _claim(os.path.join(out, "scores.jsonl"))
    missing = 0
    with open(args.outputs) as src, open(path, "x") as dst:
        for line in src:
            if not line.strip():
                continue
            item = json.loads(line)
            task = dataset.get(item.get("id"))
            if task is None:
                missing += 1
                continue
            rec = {"task_id": task.id, "family": task.family, "depth": task.depth, "width": task.width,
                   "system": item.get("system", "single"), "status": "ok"}
            rec.update(tasks.score_output(task, item.get("text", ""), judge))
            dst.write(json.dumps(rec) + "\n")
    if missing:
        print(f"{missing} outputs reference unknown task ids", file=sys.stderr)
        return EXIT_TASK_FAILURE
    return EXIT_OK


def cmd_analyze(args) -> int:
    paths = args.records if isinstance(args.records, list) else [args.records]
    if not paths or paths == [None]:
        raise CLIError("analyze needs --records", EXIT_USAGE)
    records = []
    for p in paths:
        if not os.path.exists(p):
            raise CLIError(f"records not found: {p}", EXIT_PREFLIGHT)
        records.extend(debate.read_records(p))
    families = sorted({r.get("family") for r in records})
    if len(families) > 1:
        raise CLIError(f"records mix task families {families}; analyze one family at a time", EXIT_PREFLIGHT)
    out = _out_dir(args)
    targets = {name: _claim(os.path.join(out, name))
               for name in ("cells.csv", "gain_heatmap.svg", "sscore.svg", "shapley.json")}
    try:
        cells = metrics.aggregate_cells(records)
        shapley = metrics.shapley_scores(cells, args.width_predictor)
    except ParameterError as exc:
        raise CLIError(str(exc), EXIT_PREFLIGHT) from None
    metrics.write_cells_csv(cells, targets["cells.csv"])
    metrics.emit_heatmap(cells, targets["gain_heatmap.svg"], value="gain", write_csv=False,
                         title=f"performance gain ({families[0] if families else 'empty'})")
    metrics.emit_sscore_chart(shapley, targets["sscore.svg"])
    payload = shapley.to_dict()
    payload["family"] = families[0] if families else None
    _write_json(targets["shapley.json"], payload)
    print(f"s_depth={shapley.s_depth:.4f} s_width={shapley.s_width:.4f} r2_full={shapley.r2_full:.4f} "
          f"dominant={shapley.dominant}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "gen-math": cmd_gen_math,
    "gen-writing": cmd_gen_writing,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "run": cmd_run,
    "score": cmd_score,
    "analyze": cmd_analyze,
}


# ---------------------------------------------------------------------------
# parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="top-level seed (default 0)")
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--jobs", type=int, help="worker bound for parallel sections (default 1)")

    parser = argparse.ArgumentParser(prog="dwlab", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"dwlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("gen-math", parents=[common], help="generate the DAG math dataset")
    p.add_argument("--depths", help="comma-separated depths (default 2,3,4)")
    p.add_argument("--widths", help="comma-separated widths (default 2,3,4)")
    p.add_argument("--cells", help="explicit DxW cells, e.g. 2x2,3x4 (overrides --depths/--widths)")
    p.add_argument("--count", type=int, help="problems per cell (default 100)")
    p.add_argument("--separate-answers", action="store_true", default=None,
                   help="write ground truths to math_answers.jsonl instead of inline")
    p.add_argument("--allow-duplicates", action="store_true", default=None,
                   help="keep repeated problem texts (small cells run out of distinct problems at large counts)")

    p = sub.add_parser("gen-writing", parents=[common], help="generate the keyword-writing dataset")
    p.add_argument("--K", help="comma-separated keyword counts (default 4,8,12,16,20)")
    p.add_argument("--count", type=int, help="keyword sets per K (default 500)")
    p.add_argument("--no-bin", action="store_true", default=None, help="skip quintile binning")
    p.add_argument("--lexicon", help="lexicon JSON (default: packaged lexicon)")

    p = sub.add_parser("verify", parents=[common], help="closed-form and Monte Carlo checks")
    p.add_argument("--trials", type=int, help="Monte Carlo trials per cell (default 10000)")
    p.add_argument("--repeats", type=int, help="independent repeats of the 18-cell grid (default 100)")
    p.add_argument("--threshold", type=float, help="required agreeing fraction (default 0.99)")
    p.add_argument("--ci-method", choices=["auto", "normal", "exact"])
    p.add_argument("--inject", action="append", metavar="q=..,w=..,n=..,r=..",
                   help="extra parameter point for the monotonicity check (repeatable)")

    p = sub.add_parser("simulate", parents=[common], help="simulate one parameter point")
    p.add_argument("--q", type=float)
    p.add_argument("--w", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--n-agents", type=int)
    p.add_argument("--r", type=float)
    p.add_argument("--aggregation", choices=["task", "step"])
    p.add_argument("--trials", type=int)
    p.add_argument("--ci-method", choices=["auto", "normal", "exact"])

    p = sub.add_parser("run", parents=[common], help="run systems over a dataset")
    p.add_argument("--dataset", help="math.jsonl or writing.jsonl")
    p.add_argument("--answers", help="separate math answers file")
    p.add_argument("--system", choices=["single", "multi", "both"])
    p.add_argument("--backend", choices=["synthetic", "oracle", "remote"])
    p.add_argument("--q", type=float, help="synthetic micro-operation success probability")
    p.add_argument("--r", type=float, help="synthetic summarizer reliability")
    p.add_argument("--n-agents", type=int, help="debaters, excluding the summarizer")
    p.add_argument("--turns", type=int)
    p.add_argument("--base-url")
    p.add_argument("--model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--summarizer-temperature", type=float)
    p.add_argument("--judge", choices=["heuristic", "remote"])
    p.add_argument("--max-retries", type=int, help="remote retries on 429/5xx/transport errors (default 3)")
    p.add_argument("--paper-parity", action="store_true", default=None,
                   help="require 4-6 agents including the summarizer")
    p.add_argument("--resume", action="store_true", default=None, help="continue an interrupted run")
    p.add_argument("--timings", action="store_true", default=None, help="print wall-clock timings to stderr")

    p = sub.add_parser("score", parents=[common], help="score external outputs")
    p.add_argument("--dataset")
    p.add_argument("--answers")
    p.add_argument("--outputs", help='JSON lines of {"id", "text"[, "system"]}')
    p.add_argument("--judge", choices=["heuristic", "remote"])
    p.add_argument("--base-url")
    p.add_argument("--model")
    p.add_argument("--max-retries", type=int)

    p = sub.add_parser("analyze", parents=[common], help="metrics and S-Scores from run records")
    p.add_argument("--records", action="append", help="records.jsonl (repeatable)")
    p.add_argument("--width-predictor", choices=["level", "mean_entropy"])
    return parser


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Apply defaults < config file < explicit flags."""
    merged = dict(DEFAULTS["common"])
    merged.update(DEFAULTS[args.command])
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except FileNotFoundError:
            raise CLIError(f"config file not found: {args.config}", EXIT_PREFLIGHT) from None
        except json.JSONDecodeError as exc:
            raise CLIError(f"config file is not valid JSON: {exc}", EXIT_USAGE) from None
        unknown = sorted(set(file_cfg) - set(merged))
        if unknown:
            raise CLIError(f"unknown config keys for {args.command}: {unknown}", EXIT_USAGE)
        merged.update(file_cfg)
    for k, v in vars(args).items():
        if v is not None:
            merged[k] = v
    return argparse.Namespace(**merged)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        raw = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        args = resolve(raw)
        if args.jobs < 1:
            raise CLIError("--jobs must be >= 1", EXIT_USAGE)
        return COMMANDS[args.command](args)
    except CLIError as exc:
        print(f"dwlab {raw.command}: {exc}", file=sys.stderr)
        return exc.code
    except FileExistsError as exc:
        print(f"dwlab {raw.command}: output exists: {exc.filename}", file=sys.stderr)
        return EXIT_PREFLIGHT
    except DWLabError as exc:
        print(f"dwlab {raw.command}: {exc}", file=sys.stderr)
        return EXIT_PREFLIGHT


if __name__ == "__main__":
    sys.exit(main())
