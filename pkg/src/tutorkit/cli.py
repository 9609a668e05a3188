"""Command line entry points: content validation, event export, the HTTP
server, and the offline improvement harness."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from .content import load_content_pack, parse_manifest, validate_content_pack
from .errors import MissingAsset, ParseError, TutorkitError
from .events import EventStore, ExportFilter, parse_envelope, parse_ts
from .gateway import ScriptedGateway, gateway_from_env
from .harness import METHODS, evaluate, kfold_split, load_corpus
from .storage import Database


@click.group()
def main():
    """Self-hosted tutoring service toolkit."""


# --- content ------------------------------------------------------------------

@main.group()
def content():
    """Content pack commands."""


@content.command("validate")
@click.argument("path", type=click.Path(exists=True, file_okay=False))
def content_validate(path):
    """Validate a content pack directory; one violation per line on stderr."""
    manifest = Path(path) / "manifest.json"
    if not manifest.is_file():
        click.echo(f"no manifest.json in {path}", err=True)
        sys.exit(1)
    try:
        doc = json.loads(manifest.read_text(encoding="utf-8"))
        pack = parse_manifest(doc)
    except (json.JSONDecodeError, ParseError) as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    violations = [str(v) for v in validate_content_pack(pack)]
    asset_dir = Path(path) / "assets"
    for module in pack.modules:
        for activity in module.activities:
            for ref in activity.image_refs:
                if not (asset_dir / ref).is_file():
                    violations.append(f"missing_asset({activity.id}): image_ref {ref!r} not found")
    if violations:
        for line in violations:
            click.echo(line, err=True)
        sys.exit(1)
    click.echo(f"pack at {path} is valid")


# --- events -------------------------------------------------------------------

@main.group()
def events():
    """Event log commands."""


@events.command("export")
@click.option("--db", "db_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--kinds", default=None, help="Comma-separated event kinds to include.")
@click.option("--since", default=None, help="Inclusive ISO-8601 UTC lower bound, e.g. 2026-01-01T00:00:00.000Z")
@click.option("--until", default=None, help="Exclusive ISO-8601 UTC upper bound.")
@click.option("--user", "user_id", default=None)
@click.option("--out", "out_path", default="-", help="Output file; '-' for stdout.")
@click.option("--pseudonymize", is_flag=True, default=False)
def events_export(db_path, kinds, since, until, user_id, out_path, pseudonymize):
    """Export matching events as newline-delimited JSON."""
    store = EventStore(Database(db_path))
    flt = ExportFilter(
        user_id=user_id,
        kinds=set(kinds.split(",")) if kinds else None,
        since_ts=parse_ts(since) if since else None,
        until_ts=parse_ts(until) if until else None,
    )
    lines = store.export_lines(flt, pseudonymize=pseudonymize)
    if out_path == "-":
        for line in lines:
            click.echo(line)
    else:
        with open(out_path, "w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line + "\n")


@events.command("import")
@click.option("--db", "db_path", required=True, type=click.Path(dir_okay=False))
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
def events_import(db_path, in_path):
    """Load an exported log into a (usually fresh) database."""
    store = EventStore(Database(db_path))
    records = (
        parse_envelope(line)
        for line in Path(in_path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    )
    click.echo(f"imported {store.import_records(records)} events")


# --- serve --------------------------------------------------------------------

@main.command("serve")
@click.option("--pack", "pack_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--db", "db_path", required=True, type=click.Path(dir_okay=False))
@click.option("--port", default=8080, type=int)
@click.option("--host", default="127.0.0.1")
@click.option("--gateway", "gateway_mode", type=click.Choice(["live", "scripted"]), default="scripted")
@click.option("--script", "script_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--admin-token", envvar="ADMIN_TOKEN", default=None)
def serve(pack_dir, db_path, port, host, gateway_mode, script_path, admin_token):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    if gateway_mode == "scripted":
        if not script_path:
            raise click.UsageError("--gateway scripted requires --script")
        gateway = ScriptedGateway.from_file(script_path)
    else:
        gateway = gateway_from_env({**os.environ, "GATEWAY_MODE": "live"})
    app = create_app(pack_dir=pack_dir, db=Database(db_path), gateway=gateway, admin_token=admin_token)
    uvicorn.run(app, host=host, port=port, log_level="info")


# --- harness ------------------------------------------------------------------

@main.group()
def harness():
    """Offline prompt improvement harness."""


_METHOD_ALIASES = {"baseline": "Baseline", "rubric": "RubricOpt", "fewshot": "FewShot", "both": "Both"}


@harness.command("run")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", default=5, type=int)
@click.option("--seed", default=17, type=int)
@click.option("--method", type=click.Choice(sorted(_METHOD_ALIASES)), required=True)
@click.option("--gateway", "gateway_mode", type=click.Choice(["live", "scripted"]), default="scripted")
@click.option("--script", "script_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def harness_run(corpus_path, k, seed, method, gateway_mode, script_path, out_path):
    """Cross-validate one improvement method over a failure corpus."""
    corpus = load_corpus(corpus_path)
    plan = kfold_split([c.case_id for c in corpus], k, seed)
    if gateway_mode == "scripted":
        if not script_path:
            raise click.UsageError("--gateway scripted requires --script")
        gateway = ScriptedGateway.from_file(script_path)
    else:
        gateway = gateway_from_env({**os.environ, "GATEWAY_MODE": "live"})
    try:
        report = evaluate(plan, corpus, _METHOD_ALIASES[method], gateway)
    except TutorkitError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    Path(out_path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    click.echo(
        f"method={report.method} mean_accuracy={report.mean_accuracy:.2f} "
        f"folds={[round(a, 2) for a in report.per_fold_accuracy]}"
    )


if __name__ == "__main__":
    main()
