"""Command line entry points.

Exit codes: 0 on success, 1 on runtime failures (pipeline errors, bad
data files, rejected review transitions), 2 on usage errors.
"""

from __future__ import annotations

import json
import sys

import click

from .config import load_config
from .errors import TicketStateError
from .metrics import evaluate_pairs
from .orchestrator import Orchestrator, ResultStatus, new_query

CONFIG_OPTION = click.option(
    "--config", "config_path",
    type=click.Path(exists=True, dir_okay=False), default=None,
    help="JSON config file (default: MEDORC_CONFIG or built-in defaults).")


@click.group()
def main():
    """Evidence-grounded medical question answering pipeline."""


@main.command()
@click.argument("question")
@click.option("--expertise", type=click.Choice(["patient", "clinician"]),
              default="patient", show_default=True)
@click.option("--json", "as_json", is_flag=True,
              help="Print the full result record as JSON.")
@CONFIG_OPTION
def ask(question, expertise, as_json, config_path):
    """Run QUESTION through the pipeline and print the outcome."""
    orch = Orchestrator(load_config(config_path))
    result = orch.process_query(new_query(question, expertise))
    if as_json:
        click.echo(json.dumps(result.to_dict(), indent=2, ensure_ascii=False))
    else:
        click.echo(f"status: {result.status.value}")
        final = result.final_text()
        if final:
            click.echo(final)
        if result.error:
            click.echo(f"error: {result.error}", err=True)
    if result.status is ResultStatus.FAILED:
        sys.exit(1)


@main.group()
def review():
    """Inspect and answer the expert review queue."""


@review.command("list")
@CONFIG_OPTION
def review_list(config_path):
    """List open review tickets."""
    orch = Orchestrator(load_config(config_path))
    tickets = orch.queue.pending()
    if not tickets:
        click.echo("no pending reviews")
        return
    for ticket in tickets:
        result = orch.get_result(ticket.result_id)
        status = result.status.value if result else "unknown"
        click.echo("\t".join([
            ticket.ticket_id, ticket.reason.value,
            ticket.state.value, status]))


@review.command("feedback")
@click.argument("ticket_id")
@click.option("--message", required=True,
              help='Expert guidance; exactly "APPROVED" closes as-is.')
@CONFIG_OPTION
def review_feedback(ticket_id, message, config_path):
    """Apply expert feedback to TICKET_ID."""
    orch = Orchestrator(load_config(config_path))
    try:
        result = orch.apply_expert_feedback(ticket_id, message)
    except KeyError:
        raise click.ClickException(f"no ticket with id {ticket_id}")
    except (TicketStateError, ValueError) as exc:
        raise click.ClickException(str(exc))
    ticket = orch.queue.get(ticket_id)
    click.echo(f"ticket {ticket_id}: {ticket.state.value}")
    click.echo(f"result {result.result_id}: {result.status.value}")


@main.command("eval")
@click.option("--pairs", "pairs_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="TSV file of candidate<TAB>reference lines.")
@click.option("--iterations", default=1000, show_default=True)
@click.option("--level", default=0.95, show_default=True)
@click.option("--seed", default=0, show_default=True)
def eval_command(pairs_path, iterations, level, seed):
    """Score pairs with overlap metrics and bootstrap intervals."""
    pairs = []
    with open(pairs_path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            candidate, sep, reference = line.partition("\t")
            if not sep or not candidate.strip() or not reference.strip():
                raise click.ClickException(
                    f"line {lineno}: expected candidate<TAB>reference")
            pairs.append((candidate, reference))
    if not pairs:
        raise click.ClickException("no scoreable pairs in file")
    report = evaluate_pairs(pairs, iterations=iterations, level=level,
                            seed=seed)
    doc = {
        name: {
            "point_estimate": res.point_estimate,
            "ci_low": res.ci_low,
            "ci_high": res.ci_high,
            "iterations": res.iterations,
            "level": res.level,
        }
        for name, res in report.items()
    }
    click.echo(json.dumps(doc, indent=2))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@CONFIG_OPTION
def serve(host, port, config_path):
    """Start the HTTP gateway."""
    import uvicorn

    from .gateway import create_app

    uvicorn.run(create_app(load_config(config_path)), host=host, port=port)


if __name__ == "__main__":
    main()
