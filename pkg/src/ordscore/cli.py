"""Command-line client.

Every verb builds the same request body the HTTP service accepts.  Without
``--url`` the request is handled in-process; with it, it is posted to a running
service.  Exit codes: 0 ok, 2 config error, 3 numeric or training error,
4 resume conflict.
"""
from __future__ import annotations

import json
import logging
import sys

import click

from .errors import OrdscoreError
from .runner import OUT_ENV

URL_ENV = "ORDSCORE_URL"


class RemoteError(Exception):
    def __init__(self, detail):
        super().__init__(detail.get("message", str(detail)))
        self.detail = detail
        self.exit_code = int(detail.get("exit_code", 1))


def _post(url, path, body):
    import httpx

    try:
        resp = httpx.post(url.rstrip("/") + path, json=body, timeout=None)
    except httpx.HTTPError as exc:
        raise RemoteError({"message": f"cannot reach {url}: {exc}", "exit_code": 1}) from exc
    data = resp.json()
    if resp.status_code >= 400:
        detail = data.get("detail")
        if not isinstance(detail, dict):  # request validation failure
            detail = {"message": json.dumps(detail), "exit_code": 2}
        raise RemoteError(detail)
    return data


def _local(path, body):
    from pydantic import ValidationError

    from .service import api as svc
    from .service import schemas

    try:
        if path == "/compare":
            return svc.run_compare(schemas.CompareRequest(**body)).model_dump()
        return svc.run_verb(path.strip("/"), schemas.JobRequest(**body)).model_dump()
    except ValidationError as exc:
        raise click.UsageError(str(exc)) from exc


def dispatch(ctx, path, body):
    url = ctx.obj.get("url")
    try:
        result = _post(url, path, body) if url else _local(path, body)
    except (OrdscoreError, RemoteError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(getattr(exc, "exit_code", 1))
    click.echo(json.dumps(result, indent=1, sort_keys=True))


def common_options(f):
    f = click.option("--out", type=click.Path(file_okay=False), envvar=OUT_ENV, help=f"output root (default ${OUT_ENV})")(f)
    f = click.option("--seed", type=int, default=None, help="master seed; overrides the config")(f)
    f = click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON experiment config")(f)
    return f


@click.group()
@click.option("--url", envvar=URL_ENV, default=None, help=f"service base URL (default ${URL_ENV}; unset runs in-process)")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx, url, verbose):
    """Continuous severity scores from ordinal labels: benchmark, train, evaluate."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["url"] = url


def _verb(name, help_text):
    @main.command(name=name, help=help_text)
    @common_options
    @click.pass_context
    def command(ctx, config_path, seed, out):
        if not config_path:
            raise click.UsageError("--config is required")
        dispatch(ctx, f"/{name}", {"config_path": config_path, "seed": seed, "out": out})

    return command


_verb("generate", "Generate the synthetic benchmark and the shifted test set.")
_verb("train", "Train every plain and MC model variant (generating first if needed).")
_verb("predict", "Score the evaluation samples with every model.")
_verb("evaluate", "Bootstrap every metric for every model.")
_verb("run", "Run all stages and write the report (table, grids, plot data).")


@main.command()
@common_options
@click.argument("reports", nargs=-1, type=click.Path(exists=True))
@click.pass_context
def compare(ctx, config_path, seed, out, reports):
    """Pairwise significance grids over the models of one or more runs.

    REPORTS are run directories (or their report.json).  With --config the run
    for that config and seed is built or reused under --out and compared first.
    Grids are written to <out>/compare when --out is given.
    """
    reports = list(reports)
    grids_out = None
    if config_path:
        if not out:
            raise click.UsageError(f"--out (or ${OUT_ENV}) is required with --config")
        body = {"config_path": config_path, "seed": seed, "out": out}
        url = ctx.obj.get("url")
        try:
            res = _post(url, "/run", body) if url else _local("/run", body)
        except (OrdscoreError, RemoteError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(getattr(exc, "exit_code", 1))
        reports.insert(0, res["out"])
    if not reports:
        raise click.UsageError("give run directories to compare, or --config")
    if out:
        grids_out = str(click.format_filename(out)) + "/compare"
    dispatch(ctx, "/compare", {"reports": [str(r) for r in reports], "out": grids_out})


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    uvicorn.run("ordscore.service.api:app", host=host, port=port)


if __name__ == "__main__":
    main()
