"""Command-line front end: plan, design, eval, sample, predictor-check.

Exit codes follow one convention across subcommands: 0 for a completed run
(including in-band failures such as an unsolved route written as Failure
JSON by `design`, or an invalid sample), 1 for usage, IO, or configuration
errors, and 2 for `plan` when the planner itself gives up. Every run logs
the fully resolved configuration to stderr so it can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .chemio import parse_smiles, write_smiles
from .config import EngineConfig, resolve_config
from .diffusion import (
    UNCONDITIONAL,
    GraphTokenization,
    OracleDenoiser,
    UniformDenoiser,
    build_transition,
    cosine_schedule,
    linear_schedule,
    sample_graph,
    tokenize_graph,
)
from .errors import ConfigError, MolforgeError, ParseError, PredictorUnavailable
from .evalharness import TableOracle, load_benchmark, record_from_json, run_benchmark
from .molgraph import to_graph_json
from .orchestrator import (
    FingerprintEncoder,
    GenerationSession,
    ScriptedLM,
    run_session,
)
from .retro import (
    Failure,
    FixedLogitsHeuristic,
    Route,
    Stock,
    TableProposalProvider,
    ZeroHeuristic,
    load_templates_db,
    plan,
    route_to_json,
)
from .wire import WireClient, WirePredictor


def _log_config(config: EngineConfig) -> None:
    print(
        "resolved config: " + json.dumps(config.to_dict(), sort_keys=True),
        file=sys.stderr,
    )


def _emit(out: Optional[str], text: str) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True)


def _load_json_file(path: str, what: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError(f"{what} {path} must hold one JSON object")
    return doc


def _split_address(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"predictor.address must be host:port, got {address!r}")
    try:
        return host, int(port)
    except ValueError:
        raise ConfigError(f"predictor.address port must be an integer, got {port!r}")


def _heuristic(config: EngineConfig):
    if config.planner.heuristic == "zero":
        return ZeroHeuristic()
    return FixedLogitsHeuristic()


def _open_predictor(config: EngineConfig, templates_db: Optional[dict]):
    """Returns (predictor, wire client or None). The caller closes the client."""
    p = config.predictor
    if p.mode == "builtin-table":
        if not p.table:
            raise ConfigError("predictor.table is required in builtin-table mode")
        if not templates_db:
            raise ConfigError("planner.templates is required with a builtin-table predictor")
        try:
            return TableProposalProvider.from_file(p.table), None
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"predictor table {p.table}: {exc}")
    if p.mode == "subprocess":
        if not p.command:
            raise ConfigError("predictor.command is required in subprocess mode")
        client = WireClient.spawn(p.command)
        return WirePredictor(client, templates_db), client
    if not p.address:
        raise ConfigError("predictor.address is required in tcp mode")
    host, port = _split_address(p.address)
    client = WireClient.connect(host, port)
    return WirePredictor(client, templates_db), client


def _planner_inputs(config: EngineConfig):
    """Stock, templates db, predictor, client for plan/design retro wiring."""
    pl = config.planner
    if not pl.stock:
        raise ConfigError("planner.stock is required (flag --stock or config)")
    stock = Stock.from_file(pl.stock)
    templates_db = load_templates_db(pl.templates) if pl.templates else None
    predictor, client = _open_predictor(config, templates_db)
    return stock, templates_db, predictor, client


def _diffusion_parts(config: EngineConfig):
    d = config.diffusion
    layout = GraphTokenization(F_V=d.F_V, F_E=d.F_E, N_G=d.N_G)
    schedule = cosine_schedule(d.T) if d.schedule == "cosine" else linear_schedule(d.T)
    node_model = build_transition(schedule, d.family, d.F_V)
    edge_model = build_transition(schedule, d.family, d.F_E)
    return layout, node_model, edge_model


def _denoiser(config: EngineConfig, layout: GraphTokenization):
    """Returns (denoiser, n_nodes); the oracle pins n_nodes to its target."""
    design = config.design
    if design.denoiser == "oracle":
        if not design.oracle_smiles:
            raise ConfigError("design.oracle_smiles is required with the oracle denoiser")
        graph = parse_smiles(design.oracle_smiles)
        return OracleDenoiser(tokenize_graph(graph, layout)), len(graph)
    return UniformDenoiser(layout), design.n_nodes


def _make_sampler(config: EngineConfig):
    layout, node_model, edge_model = _diffusion_parts(config)
    denoiser, n_nodes = _denoiser(config, layout)

    def sampler(conditions):
        return sample_graph(
            conditions,
            node_model,
            edge_model,
            denoiser,
            n_nodes,
            layout,
            guidance_w=config.diffusion.guidance_w,
            rng_seed=config.seed,
        )

    return sampler


# -- plan -----------------------------------------------------------------


def cmd_plan(args: argparse.Namespace) -> int:
    config = resolve_config(
        args.config,
        overrides={
            "seed": args.seed,
            "planner.k": args.k,
            "planner.max_iterations": args.max_iterations,
            "planner.max_seconds": args.max_seconds,
            "planner.stop_policy": args.stop_policy,
            "planner.heuristic": args.heuristic,
            "planner.stock": args.stock,
            "planner.templates": args.templates,
            "predictor.mode": args.predictor_mode,
            "predictor.table": args.predictor_table,
            "predictor.command": args.predictor_command,
            "predictor.address": args.predictor_address,
        },
    )
    _log_config(config)
    target = parse_smiles(args.target)
    stock, templates_db, predictor, client = _planner_inputs(config)
    pl = config.planner
    try:
        result = plan(
            target,
            stock,
            predictor,
            _heuristic(config),
            templates_db=templates_db,
            k=pl.k,
            max_iterations=pl.max_iterations,
            max_seconds=pl.max_seconds,
            stop_policy=pl.stop_policy,
            context=args.context,
        )
    except PredictorUnavailable as exc:
        # the provider died mid-search: a planner failure, not a usage error
        result = Failure("predictor_unavailable", {"message": str(exc)})
    finally:
        if client is not None:
            client.close()
    if isinstance(result, Route):
        _emit(args.out, _dump(route_to_json(result)))
        return 0
    _emit(args.out, _dump({"failure": result.reason, "stats": result.stats}))
    return 2


# -- design ---------------------------------------------------------------


def cmd_design(args: argparse.Namespace) -> int:
    config = resolve_config(
        args.config,
        overrides={
            "seed": args.seed,
            "design.lm_script": args.lm_script,
            "design.denoiser": args.denoiser,
            "design.oracle_smiles": args.oracle_smiles,
            "design.n_nodes": args.n_nodes,
            "design.retries": args.retries,
            "planner.stock": args.stock,
            "planner.templates": args.templates,
            "predictor.mode": args.predictor_mode,
            "predictor.table": args.predictor_table,
            "predictor.command": args.predictor_command,
            "predictor.address": args.predictor_address,
        },
    )
    _log_config(config)
    try:
        record = record_from_json(_load_json_file(args.question, "question file"))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"question file {args.question}: bad benchmark record: {exc}")
    if not config.design.lm_script:
        raise ConfigError("design.lm_script is required (flag --lm-script or config)")
    try:
        lm = ScriptedLM.from_json(_load_json_file(config.design.lm_script, "LM script"))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"LM script {config.design.lm_script}: {exc}")
    sampler = _make_sampler(config)
    encoder = FingerprintEncoder(dim=config.diffusion.condition_dim)

    retro_kit = None
    client = None
    if config.planner.stock:
        stock, templates_db, predictor, client = _planner_inputs(config)
        pl = config.planner
        retro_kit = {
            "stock": stock,
            "predictor": predictor,
            "heuristic": _heuristic(config),
            "templates_db": templates_db,
            "k": pl.k,
            "max_iterations": pl.max_iterations,
            "max_seconds": pl.max_seconds,
        }

    session = GenerationSession(question=record.question)
    try:
        run_session(
            session,
            lm,
            sampler=sampler,
            encoder=encoder,
            retro_kit=retro_kit,
            retries=config.design.retries,
        )
    finally:
        if client is not None:
            client.close()

    transcript = session.transcript()
    for element in transcript:
        if element["kind"] == "failure" and element["payload"].get("reason") == "predictor_error":
            print(
                "warning: predictor unavailable mid-session; failure recorded in transcript",
                file=sys.stderr,
            )
    doc = {
        "question": record.question,
        "transcript": transcript,
        "violations": session.violations,
        "designed_molecule": (
            write_smiles(session.designed_molecule)
            if session.designed_molecule is not None
            else None
        ),
        "route": route_to_json(session.route) if session.route is not None else None,
    }
    _emit(args.out, _dump(doc))
    return 0


# -- eval -----------------------------------------------------------------


class TranscriptDirectory:
    """System adapter for `eval`: record i reads <dir>/<i>.json, which holds
    either a bare transcript list or a design output with a "transcript" key.
    Calls must arrive in record order (run_benchmark guarantees that)."""

    def __init__(self, directory: str):
        self.directory = directory
        self.index = -1

    def __call__(self, record) -> list[dict]:
        self.index += 1
        path = f"{self.directory}/{self.index}.json"
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if isinstance(doc, dict) and "transcript" in doc:
            doc = doc["transcript"]
        if not isinstance(doc, list):
            raise ValueError(f"{path}: expected a transcript list")
        return doc


def cmd_eval(args: argparse.Namespace) -> int:
    config = resolve_config(
        args.config,
        overrides={"seed": args.seed, "planner.stock": args.stock},
    )
    _log_config(config)
    records = load_benchmark(args.benchmark)
    oracle = TableOracle.from_file(args.oracle) if args.oracle else None
    stock = Stock.from_file(config.planner.stock) if config.planner.stock else Stock()
    report = run_benchmark(records, TranscriptDirectory(args.transcripts), oracle=oracle, stock=stock)
    out = args.out or "report.json"
    csv_path = (out[: -len(".json")] if out.endswith(".json") else out) + ".csv"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(report.to_csv())
    print(f"wrote {out} and {csv_path}", file=sys.stderr)
    return 0


# -- sample ---------------------------------------------------------------


def cmd_sample(args: argparse.Namespace) -> int:
    config = resolve_config(
        args.config,
        overrides={
            "seed": args.seed,
            "diffusion.T": args.T,
            "diffusion.family": args.family,
            "diffusion.schedule": args.schedule,
            "diffusion.guidance_w": args.guidance_w,
            "design.denoiser": args.denoiser,
            "design.oracle_smiles": args.oracle_smiles,
            "design.n_nodes": args.n_nodes,
        },
    )
    _log_config(config)
    layout, node_model, edge_model = _diffusion_parts(config)
    denoiser, n_nodes = _denoiser(config, layout)
    result = sample_graph(
        UNCONDITIONAL,
        node_model,
        edge_model,
        denoiser,
        n_nodes,
        layout,
        guidance_w=config.diffusion.guidance_w,
        rng_seed=config.seed,
    )
    doc = {
        "valid": result.valid,
        "violations": [list(v) for v in result.violations],
        "smiles": write_smiles(result.graph) if result.graph is not None else None,
        "graph": to_graph_json(result.graph) if result.graph is not None else None,
        "seed": config.seed,
    }
    _emit(args.out, _dump(doc))
    return 0


# -- predictor-check ------------------------------------------------------


def _check_expand(client: WireClient, probe: str, k: int, failures: list[str]) -> dict:
    proposals = client.expand(probe, "", k)
    if len(proposals) > k:
        failures.append(f"expand: {len(proposals)} proposals exceed k={k}")
    last = None
    for i, entry in enumerate(proposals):
        if not isinstance(entry, dict) or "template_id" not in entry or "prob" not in entry:
            failures.append(f"expand: proposal {i} missing template_id/prob")
            continue
        prob = float(entry["prob"])
        if not 0.0 < prob <= 1.0:
            failures.append(f"expand: proposal {i} prob {prob} outside (0, 1]")
        if last is not None and prob > last + 1e-12:
            failures.append(f"expand: proposals not sorted by descending prob at {i}")
        last = prob
        template = entry.get("template")
        if template is not None and (
            not isinstance(template, dict)
            or "product" not in template
            or "reactants" not in template
        ):
            failures.append(f"expand: proposal {i} inline template malformed")
    return {"proposals": len(proposals)}


def _check_heuristic(client: WireClient, probe: str, failures: list[str]) -> dict:
    probs = client.heuristic(probe, 0)
    if any(p < 0 for p in probs):
        failures.append("heuristic: negative probability")
    if abs(sum(probs) - 1.0) > 1e-6:
        failures.append(f"heuristic: probs sum to {sum(probs)}, not 1")
    return {"probs": probs}


def _check_denoise(
    client: WireClient, probe: str, layout: GraphTokenization, failures: list[str]
) -> dict:
    tokens = tokenize_graph(parse_smiles(probe), layout)
    matrix = tokens.as_matrix().tolist()
    x0 = client.denoise(matrix, 1, {"categorical": {}, "continuous": {}})
    rows, cols = len(matrix), len(matrix[0])
    if len(x0) != rows or any(not isinstance(r, list) or len(r) != cols for r in x0):
        failures.append(f"denoise: x0_probs shape does not match tokens {rows}x{cols}")
    return {"rows": rows, "cols": cols}


def cmd_predictor_check(args: argparse.Namespace) -> int:
    config = resolve_config(
        args.config,
        overrides={
            "seed": args.seed,
            "predictor.mode": args.predictor_mode,
            "predictor.command": args.predictor_command,
            "predictor.address": args.predictor_address,
        },
    )
    _log_config(config)
    p = config.predictor
    if p.mode == "builtin-table":
        raise ConfigError("predictor-check needs a wire provider (subprocess or tcp mode)")
    if p.mode == "subprocess":
        if not p.command:
            raise ConfigError("predictor.command is required in subprocess mode")
        client = WireClient.spawn(p.command)
    else:
        if not p.address:
            raise ConfigError("predictor.address is required in tcp mode")
        host, port = _split_address(p.address)
        client = WireClient.connect(host, port)

    failures: list[str] = []
    checks: dict = {}
    layout = GraphTokenization(
        F_V=config.diffusion.F_V, F_E=config.diffusion.F_E, N_G=config.diffusion.N_G
    )
    try:
        checks["expand"] = _check_expand(client, args.probe, args.k, failures)
        checks["heuristic"] = _check_heuristic(client, args.probe, failures)
        if not args.skip_denoise:
            checks["denoise"] = _check_denoise(client, args.probe, layout, failures)
    finally:
        client.close()
    status = "ok" if not failures else "fail"
    _emit(args.out, _dump({"status": status, "checks": checks, "failures": failures}))
    return 0 if not failures else 1


# -- parser ---------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; this tool reserves 2 for
    # planner failures, so usage problems must exit 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file (defaults used when omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output file (default: stdout)")


def _add_predictor_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--predictor-mode", choices=["builtin-table", "subprocess", "tcp"],
        help="how to reach the one-step predictor",
    )
    p.add_argument("--predictor-table", help="proposals JSONL for builtin-table mode")
    p.add_argument("--predictor-command", help="provider command line for subprocess mode")
    p.add_argument("--predictor-address", help="host:port for tcp mode")


def _add_planner_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--stock", help="purchasable stock file (one SMILES per line)")
    p.add_argument("--templates", help="retro template JSONL")
    p.add_argument("--k", type=int, help="proposals kept per expansion")
    p.add_argument("--max-iterations", type=int, help="search iteration budget")
    p.add_argument("--max-seconds", type=float, help="search wall-clock budget")
    p.add_argument("--heuristic", choices=["uniform", "zero"], help="remaining-cost heuristic")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="molforge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="search a retrosynthetic route for a target SMILES")
    p.add_argument("target", help="target molecule SMILES")
    p.add_argument("--context", default="", help="free-text context passed to the predictor")
    p.add_argument("--stop-policy", choices=["first", "optimal"], help="stop at first route or prove optimality")
    _add_planner_flags(p)
    _add_predictor_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("design", help="run one generation session over a question record")
    p.add_argument("--question", required=True, help="benchmark record JSON file")
    p.add_argument("--lm-script", help="scripted-LM fixture JSON")
    p.add_argument("--denoiser", choices=["uniform", "oracle"], help="denoiser stub for the sampler")
    p.add_argument("--oracle-smiles", help="planted target for the oracle denoiser")
    p.add_argument("--n-nodes", type=int, help="sampled graph size")
    p.add_argument("--retries", type=int, help="sampler attempts before callback")
    _add_planner_flags(p)
    _add_predictor_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("eval", help="score a directory of transcripts against a benchmark")
    p.add_argument("--benchmark", required=True, help="benchmark JSONL file")
    p.add_argument("--transcripts", required=True, help="directory of <record-index>.json transcripts")
    p.add_argument("--oracle", help="property oracle JSONL")
    p.add_argument("--stock", help="stock file for route-success checks")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="draw one molecule from the graph diffusion sampler")
    p.add_argument("--T", type=int, help="diffusion steps")
    p.add_argument("--family", choices=["uniform", "marginal"], help="transition family")
    p.add_argument("--schedule", choices=["cosine", "linear"], help="noise schedule")
    p.add_argument("--guidance-w", type=float, help="classifier-free guidance weight")
    p.add_argument("--denoiser", choices=["uniform", "oracle"], help="denoiser stub")
    p.add_argument("--oracle-smiles", help="planted target for the oracle denoiser")
    p.add_argument("--n-nodes", type=int, help="sampled graph size")
    _add_common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("predictor-check", help="handshake and schema-check a wire provider")
    p.add_argument("--probe", default="CCO", help="probe product SMILES")
    p.add_argument("--k", type=int, default=5, help="proposals to request")
    p.add_argument("--skip-denoise", action="store_true", help="skip the denoise round-trip")
    _add_predictor_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_predictor_check)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except MolforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
