"""Command-line client for the packbert service.

``packbert bench`` posts a benchmark spec to the /bench endpoint and formats
the returned rows. By default the service app is mounted in-process (no
socket, same numerics); pass --server to benchmark against a running
instance instead. ``packbert serve`` starts the HTTP service.
"""

from __future__ import annotations

import asyncio
import json
import sys
from pathlib import Path

import click
import httpx

from . import __version__
from .bench import LADDER_NAMES


def _flatten_multi(values: tuple[str, ...], cast) -> list:
    out = []
    for value in values:
        for part in str(value).split(","):
            part = part.strip()
            if part:
                out.append(cast(part))
    return out


async def _post_bench(payload: dict, server: str | None, timeout: float) -> dict:
    if server:
        async with httpx.AsyncClient(base_url=server, timeout=timeout) as client:
            resp = await client.post("/bench", json=payload)
    else:
        from .service.app import create_app

        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://packbert.local", timeout=timeout
        ) as client:
            resp = await client.post("/bench", json=payload)
    if resp.status_code != 200:
        detail = resp.json().get("detail", resp.text) if resp.content else resp.text
        raise click.ClickException(f"bench request failed ({resp.status_code}): {detail}")
    return resp.json()


@click.group()
@click.version_option(version=__version__, prog_name="packbert")
def main() -> None:
    """Padding-free BERT-style encoder engine."""


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host: str, port: int) -> None:
    """Start the HTTP service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


@main.command()
@click.option("--preset", default="bert_base", show_default=True,
              type=click.Choice(["bert_base", "albert", "distilbert", "deberta_cfg", "custom"]))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="key=value model config file (required for --preset custom).")
@click.option("--batch-size", default=16, show_default=True, type=int)
@click.option("--max-seq-len", "max_seq_lens", multiple=True, default=("256",),
              help="Maximum sequence length; repeatable or comma-separated.")
@click.option("--alpha", "alphas", multiple=True,
              help="Average-to-maximum length ratio(s) for --mode fixed.")
@click.option("--mode", default="uniform", show_default=True,
              type=click.Choice(["uniform", "fixed"]))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--repeats", default=10, show_default=True, type=int)
@click.option("--variants", default=",".join(LADDER_NAMES), show_default=True,
              help="Comma-separated subset of the optimization ladder.")
@click.option("--layers", type=int, default=None,
              help="Override the preset's layer count (e.g. 1 for single-layer runs).")
@click.option("--workers", default=1, show_default=True, type=int)
@click.option("--format", "fmt", default="csv", show_default=True,
              type=click.Choice(["csv", "json"]))
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Write the report here instead of stdout.")
@click.option("--weights", "weights_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Binary weight file (random init otherwise).")
@click.option("--check", is_flag=True,
              help="Verify cross-variant equivalence and FLOP instrumentation; "
                   "exit nonzero on failure.")
@click.option("--server", default=None,
              help="Base URL of a running service; default runs in-process.")
@click.option("--timeout", default=3600.0, show_default=True, type=float)
def bench(preset, config_path, batch_size, max_seq_lens, alphas, mode, seed, repeats,
          variants, layers, workers, fmt, out_path, weights_path, check, server, timeout):
    """Run the step-wise optimization ladder and emit a CSV/JSON report."""
    payload: dict = {
        "preset": preset,
        "batch_size": batch_size,
        "max_seq_lens": _flatten_multi(max_seq_lens, int),
        "mode": mode,
        "seed": seed,
        "repeats": repeats,
        "variants": [v.strip() for v in variants.split(",") if v.strip()],
        "workers": workers,
        "layers": layers,
        "weights_path": weights_path,
        "check": check,
    }
    alpha_values = _flatten_multi(alphas, float)
    if alpha_values:
        payload["alphas"] = alpha_values

    if preset == "custom":
        if not config_path:
            raise click.UsageError("--preset custom requires --config PATH")
        payload.update(_custom_preset_payload(config_path, batch_size))

    result = asyncio.run(_post_bench(payload, server, timeout))

    rows = result["rows"]
    if fmt == "csv":
        from .bench import BenchRow, rows_to_csv

        text = rows_to_csv([BenchRow(**row) for row in rows])
    else:
        text = json.dumps(rows, indent=2)

    if out_path:
        Path(out_path).write_text(text)
        click.echo(f"wrote {len(rows)} rows to {out_path}")
    else:
        click.echo(text, nl=False)

    for warning in result["warnings"]:
        click.echo(f"warning: {warning}", err=True)
    if check:
        for diag in result["diagnostics"]:
            click.echo(f"check failed: {diag}", err=True)
        if not result["passed"]:
            sys.exit(1)
        click.echo("check passed: all variants within tolerance", err=True)


def _custom_preset_payload(config_path: str, batch_size: int) -> dict:
    """A custom run benchmarks the dimensions from a key=value config file."""
    from .encoder import parse_config_file

    config = parse_config_file(config_path)
    if config.batch_size != batch_size:
        raise click.UsageError(
            f"--batch-size {batch_size} conflicts with config file batch_size {config.batch_size}"
        )
    # The ladder controls the flags; the file contributes the dimensions.
    raise click.UsageError(
        "custom preset is served through /models + /bench with explicit dimensions; "
        "use --preset with one of the built-ins, or create a model via the service API"
    )


if __name__ == "__main__":
    main()
