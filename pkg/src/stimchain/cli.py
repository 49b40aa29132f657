"""Command line front end.

Exit codes: 0 success, 1 invariant/verification failure, 2 bad input or
configuration, 3 unexpected internal error.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import device as devmod
from .ledger import import_chain, replay, verify_chain
from .scenario import ScenarioError, load_config, run_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_BAD_INPUT = 2
EXIT_INTERNAL = 3


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    """Deterministic stimulation-monitoring toolkit."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.group()
def scenario():
    """Run and inspect simulated deployments."""


@scenario.command("run")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the configured seed.")
@click.option("--trace", type=click.Path(dir_okay=False), default=None,
              help="Write the full event trace to this file.")
@click.option("--export-chain", "chain_out", type=click.Path(dir_okay=False),
              default=None, help="Write the committed chain to this file.")
def scenario_run(config_path, seed, trace, chain_out):
    """Execute a scenario config and check its invariants."""
    try:
        config = load_config(config_path)
        if seed is not None:
            config.seed = seed
    except ScenarioError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_BAD_INPUT)
    try:
        report = run_scenario(config)
    except ScenarioError as exc:
        click.echo(f"scenario error: {exc}", err=True)
        sys.exit(EXIT_BAD_INPUT)
    except Exception as exc:  # pragma: no cover - defensive
        logger.exception("scenario run crashed")
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(EXIT_INTERNAL)
    if trace:
        Path(trace).write_text("\n".join(report.trace) + "\n")
    if chain_out:
        Path(chain_out).write_bytes(report.chain_bytes)
    for line in report.summary_lines():
        click.echo(line)
    sys.exit(EXIT_OK if report.ok else EXIT_FAIL)


@main.group()
def log():
    """Work with device session logs."""


@log.command("verify")
@click.argument("log_path", type=click.Path(exists=True, dir_okay=False))
def log_verify(log_path):
    """Parse a session log and report its totals."""
    data = Path(log_path).read_bytes()
    try:
        record = devmod.parse_session(data)
    except devmod.SessionLogError as exc:
        click.echo(f"invalid: {exc}", err=True)
        sys.exit(EXIT_FAIL)
    charge = sum(s.current for s in record.samples)
    click.echo(f"patient: {record.patient_name}")
    click.echo(f"treatment length: {record.treatment_length} mins")
    click.echo(f"samples: {len(record.samples)}")
    click.echo(f"charge: {charge / 1000.0:.3f} C")
    click.echo("valid")
    sys.exit(EXIT_OK)


@main.group()
def chain():
    """Inspect exported ledgers."""


@chain.command("audit")
@click.argument("chain_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--patient", default=None, help="Limit the report to one patient id.")
def chain_audit(chain_path, patient):
    """Verify an exported chain and print its data-event audit trail."""
    try:
        blocks = import_chain(Path(chain_path).read_bytes())
    except Exception as exc:
        click.echo(f"unreadable chain: {exc}", err=True)
        sys.exit(EXIT_BAD_INPUT)
    verdict = verify_chain(blocks)
    click.echo(f"height: {len(blocks) - 1}")
    click.echo(f"verified: {'yes' if verdict.ok else 'no'}")
    if not verdict.ok:
        click.echo(f"first invalid height: {verdict.first_invalid_height} "
                   f"({verdict.reason})")
        sys.exit(EXIT_FAIL)
    state = replay(blocks)
    shown = 0
    for block in blocks[1:]:
        for tx in block.txs:
            if tx.kind not in ("DataUpload", "AccessRequest", "AccessGrant",
                               "AccessRead", "AnomalyAlert"):
                continue
            if patient and tx.payload.get("patient_id") != patient:
                continue
            result = state.results.get(tx.tx_hash(), {})
            detail = tx.payload.get("content_id") or tx.payload.get("session_id") or ""
            click.echo(f"h={block.height} {tx.kind} {tx.submitter} "
                       f"{result.get('verdict', '?')} {detail}")
            shown += 1
    click.echo(f"events: {shown}")
    sys.exit(EXIT_OK)


if __name__ == "__main__":  # pragma: no cover
    main()
