"""Command-line interface.

    python main.py [--config FILE] [--store DIR] [--verbose] <command>

Exit codes: 0 success or clean, 1 findings at or above the severity gate (or
an evaluation with skipped samples, or a corrupt ledger), 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import getpass
import hashlib
import json
import logging
import subprocess
import sys
from collections import Counter
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import __version__
from . import credentials
from . import database as db
from .chunking import OversizeInputError
from .components.column_config import INGEST_COLUMNS, LEDGER_COLUMNS
from .components.text_table import render_table
from .config import AppConfig, ConfigError, load_config
from .credits import CreditError, replay
from .diffs import PullRequestRef
from .evaluation import EvaluationError, eval_result_to_dict, load_dataset, render_eval_table, run_eval
from .findings import Severity
from .pipeline import PipelineError, PipelineServices, run_pipeline
from .reporting import render_markdown, report_to_dict
from .retrieval import DocKind, build_index, collect_documents

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_USAGE = 2

LOCAL_OWNER = "local"
ZERO_SHA = "0" * 40


def setup_logging(store_dir: Path, verbose: bool = False) -> None:
    """Log to stderr and to ``app.log`` in the store directory."""
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    try:
        store_dir.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(store_dir / "app.log", encoding="utf-8"))
    except OSError:
        # Logging should never prevent the command from running.
        pass
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        handlers=handlers,
        force=True,
    )


def local_pr_ref(name: str, diff_text: str) -> PullRequestRef:
    """Pseudo pull request for a local diff, keyed by the diff content."""
    head_sha = hashlib.sha1(diff_text.encode("utf-8")).hexdigest()
    return PullRequestRef(LOCAL_OWNER, name or "diff", 1, head_sha, ZERO_SHA)


def _read_git_diff(revision_range: str) -> str:
    completed = subprocess.run(
        ["git", "diff", revision_range], capture_output=True, text=True, check=False
    )
    if completed.returncode != 0:
        raise OSError(completed.stderr.strip() or f"git diff {revision_range} failed")
    return completed.stdout


def _context_index(config: AppConfig, enabled: bool):
    if not enabled:
        return None
    return build_index(db.load_context_docs(), config.embedding_dimension)


def cmd_serve(config: AppConfig, args: argparse.Namespace) -> int:
    import uvicorn

    from .server import create_app
    from .service import AnalysisService, build_services, make_runner

    config.require_service_credentials()
    services = build_services(config)
    service = AnalysisService(make_runner(config, services), worker_limit=config.worker_limit)
    app = create_app(config.github.webhook_secret, service, config.github.trigger_actions)
    logger.info("Serving webhooks on %s:%d", config.server_host, config.server_port)
    try:
        uvicorn.run(app, host=config.server_host, port=config.server_port, log_config=None)
    except (OSError, SystemExit) as e:
        # uvicorn reports a failed bind by exiting rather than raising OSError.
        logger.error("Cannot serve on %s:%d: %s", config.server_host, config.server_port, e)
        return EXIT_FINDINGS
    return EXIT_OK


def cmd_analyze(config: AppConfig, args: argparse.Namespace, out: Callable[[str], None]) -> int:
    try:
        if args.git:
            diff_text = _read_git_diff(args.git)
            name = args.git.replace("/", "_")
        else:
            diff_text = Path(args.diff).read_text(encoding="utf-8")
            name = Path(args.diff).stem
    except (OSError, UnicodeDecodeError) as e:
        out(f"Error: cannot read diff: {e}")
        return EXIT_USAGE

    gate = Severity(args.gate) if args.gate else config.severity_gate
    rag = config.rag_enabled and not args.no_rag
    services = PipelineServices(
        gateway=config.build_gateway(),
        fetch_diff=lambda pr: diff_text,
        persist=db.save_report,
        ledger=db.open_ledger(config.opening_balance),
        context_index=_context_index(config, rag),
    )
    try:
        report = run_pipeline(local_pr_ref(name, diff_text), config.analysis_settings(rag_enabled=rag), services)
    except (PipelineError, OversizeInputError, CreditError) as e:
        out(f"Error: {e}")
        return EXIT_USAGE

    if args.json:
        out(json.dumps(report_to_dict(report), indent=2))
    else:
        out(render_markdown(report).rstrip("\n"))
    return EXIT_FINDINGS if report.has_findings_at(gate) else EXIT_OK


def cmd_ingest(config: AppConfig, args: argparse.Namespace, out: Callable[[str], None]) -> int:
    directory = Path(args.directory)
    if not directory.is_dir():
        out(f"Error: {directory} is not a directory")
        return EXIT_USAGE
    kind = DocKind(args.kind) if args.kind else None
    docs, skipped = collect_documents(directory, kind)
    for path, reason in skipped:
        out(f"Skipped {path}: {reason}")
    if not docs:
        logger.warning("No documents found in %s", directory)
        out("0 documents ingested")
        return EXIT_OK
    db.save_context_docs(docs)
    counts = Counter(doc.kind.value for doc in docs)
    out(", ".join(f"{counts[k]} {k}" for k in sorted(counts)))
    out(render_table(INGEST_COLUMNS, [{"kind": k, "count": counts[k]} for k in sorted(counts)]))
    return EXIT_OK


def cmd_eval(config: AppConfig, args: argparse.Namespace, out: Callable[[str], None]) -> int:
    rag_modes = {"on": (True,), "off": (False,), "both": (False, True)}[args.rag]
    try:
        samples, skipped = load_dataset(Path(args.dataset))
        index = _context_index(config, any(rag_modes))
        result = run_eval(
            samples,
            config.analysis_settings(),
            config.build_gateway(),
            context_index=index,
            rag_modes=rag_modes,
            description_threshold=config.description_threshold,
        )
    except EvaluationError as e:
        out(f"Error: {e}")
        return EXIT_USAGE
    result.skipped[:0] = skipped

    out(render_eval_table(result))
    for sample_id, reason in result.skipped:
        out(f"Skipped {sample_id}: {reason}")
    if args.output:
        Path(args.output).write_text(json.dumps(eval_result_to_dict(result), indent=2), encoding="utf-8")
        out(f"Results written to {args.output}")
    return EXIT_FINDINGS if result.skipped else EXIT_OK


def cmd_report(config: AppConfig, args: argparse.Namespace, out: Callable[[str], None]) -> int:
    try:
        report = db.load_report(args.report_id)
    except db.StoreError as e:
        out(f"Error: {e}")
        return EXIT_USAGE
    if args.json:
        out(json.dumps(report_to_dict(report), indent=2))
    else:
        out(render_markdown(report).rstrip("\n"))
    return EXIT_OK


def cmd_credits(config: AppConfig, args: argparse.Namespace, out: Callable[[str], None]) -> int:
    opening = db.get_opening_balance(config.opening_balance)
    entries = db.load_ledger_entries()
    check = replay(opening, entries)
    balance = entries[-1].balance if entries else opening
    out(f"Balance: {balance:,} micro-credits (opening {opening:,}, {len(entries)} entries)")
    if check.ok:
        out("Ledger: OK")
    else:
        out(f"Ledger: CORRUPT (first inconsistent entry #{check.first_bad_index + 1})")
    recent = entries[-args.limit:] if args.limit > 0 else []
    if recent:
        rows = [
            {
                "timestamp": e.timestamp.isoformat(timespec="seconds"),
                "model_id": e.model_id,
                "prompt_tokens": e.usage.prompt_tokens,
                "completion_tokens": e.usage.completion_tokens,
                "cost": e.cost,
                "balance": e.balance,
            }
            for e in recent
        ]
        out(render_table(LEDGER_COLUMNS, rows))
    return EXIT_OK if check.ok else EXIT_FINDINGS


def cmd_secret(config: AppConfig, args: argparse.Namespace, out: Callable[[str], None]) -> int:
    if args.action == "delete":
        ok = credentials.delete_secret(args.name)
    else:
        value = getpass.getpass(f"{args.name}: ")
        if not value:
            out("Error: empty value")
            return EXIT_USAGE
        ok = credentials.store_secret(args.name, value)
    out(f"{args.name}: {'done' if ok else 'failed'}")
    return EXIT_OK if ok else EXIT_FINDINGS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffsentinel", description="Security review of pull request diffs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, help="YAML configuration file")
    parser.add_argument("--store", type=Path, help="store directory (database and log)")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("serve", help="run the webhook service")

    analyze = commands.add_parser("analyze", help="analyze a local diff")
    source = analyze.add_mutually_exclusive_group(required=True)
    source.add_argument("diff", nargs="?", help="unified diff file")
    source.add_argument("--git", metavar="RANGE", help="analyze `git diff RANGE`")
    analyze.add_argument("--gate", choices=[s.value for s in Severity], help="minimum failing severity")
    analyze.add_argument("--no-rag", action="store_true", help="skip project context retrieval")
    analyze.add_argument("--json", action="store_true", help="print the report as JSON")

    ingest = commands.add_parser("ingest", help="ingest project documentation")
    ingest.add_argument("directory")
    ingest.add_argument("--kind", choices=[k.value for k in DocKind])

    evaluate = commands.add_parser("eval", help="evaluate against a labeled dataset")
    evaluate.add_argument("dataset")
    evaluate.add_argument("--rag", choices=["on", "off", "both"], default="on")
    evaluate.add_argument("--output", help="write JSON results to this file")

    report = commands.add_parser("report", help="show a stored report")
    report.add_argument("report_id")
    report.add_argument("--json", action="store_true")

    credit = commands.add_parser("credits", help="show the credit balance and ledger")
    credit.add_argument("--limit", type=int, default=10)

    secret = commands.add_parser("secret", help="store or delete a secret in the OS credential store")
    secret.add_argument("action", choices=["set", "delete"])
    secret.add_argument("name", choices=list(credentials.SECRET_NAMES))
    return parser


def main(argv: Optional[Sequence[str]] = None, out: Callable[[str], None] = print) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval" and not Path(args.dataset).is_dir():
        parser.error(f"dataset directory {args.dataset} not found")

    try:
        config = load_config(args.config, args.store)
    except ConfigError as e:
        out(f"Configuration error: {e}")
        return EXIT_USAGE
    setup_logging(config.store_dir, args.verbose)

    try:
        db.set_db_path(config.db_path)
        db.init_database()
        if args.command == "serve":
            return cmd_serve(config, args)
        handler = {
            "analyze": cmd_analyze,
            "ingest": cmd_ingest,
            "eval": cmd_eval,
            "report": cmd_report,
            "credits": cmd_credits,
            "secret": cmd_secret,
        }[args.command]
        return handler(config, args, out)
    except ConfigError as e:
        out(f"Configuration error: {e}")
        return EXIT_USAGE
    except db.StoreError as e:
        out(f"Store error: {e}")
        return EXIT_USAGE
