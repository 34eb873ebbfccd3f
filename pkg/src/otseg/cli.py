"""Command-line client for the scoring service.

Every command goes through the HTTP API. By default the app runs embedded
in this process, so the CLI works standalone on local files; point
``--server`` (or ``OTSEG_SERVER``) at a running instance to score against
a shared deployment and its cache.

Exit codes: 0 success, 2 validation problem, 3 file problem.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

EXIT_VALIDATION = 2
EXIT_IO = 3

_KIND_EXIT_CODES = {
    "validation": EXIT_VALIDATION,
    "format": EXIT_IO,
    "io": EXIT_IO,
    "run": EXIT_IO,
}


class _Client:
    """HTTP access to the service, remote or embedded in-process."""

    def __init__(self, server: str | None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            import warnings

            with warnings.catch_warnings():
                # starlette prefers httpx2 when installed; the httpx fallback
                # is fully functional, so keep the embedded mode quiet
                warnings.simplefilter("ignore", DeprecationWarning)
                from starlette.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app(), raise_server_exceptions=False)

    def request(self, method: str, path: str, **kwargs) -> tuple[int, dict]:
        response = self._client.request(method, path, **kwargs)
        try:
            body = response.json()
        except ValueError:
            body = {"error": "internal", "message": response.text}
        return response.status_code, body


def _fail(body: dict, status: int) -> None:
    kind = body.get("error")
    if kind is None and "detail" in body:
        # FastAPI request-validation shape
        kind = "validation"
        body = {"message": json.dumps(body["detail"])}
    message = body.get("message", "request failed")
    click.echo(f"error ({kind or status}): {message}", err=True)
    sys.exit(_KIND_EXIT_CODES.get(kind, 1))


def _load_config_overrides(ctx: click.Context, config_path: str | None) -> None:
    """Fill parameters from a JSON config file; explicit flags win."""
    if not config_path:
        return
    try:
        overrides = json.loads(Path(config_path).read_text(encoding="utf-8"))
    except OSError as exc:
        click.echo(f"error (io): cannot read config: {exc}", err=True)
        sys.exit(EXIT_IO)
    except json.JSONDecodeError as exc:
        click.echo(f"error (validation): malformed config JSON: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    if not isinstance(overrides, dict):
        click.echo("error (validation): config must be a JSON object", err=True)
        sys.exit(EXIT_VALIDATION)
    for key, value in overrides.items():
        param = key.replace("-", "_")
        if param not in ctx.params:
            click.echo(f"error (validation): unknown config key {key!r}", err=True)
            sys.exit(EXIT_VALIDATION)
        if ctx.get_parameter_source(param) == click.core.ParameterSource.DEFAULT:
            ctx.params[param] = value


def _sampling_payload(n: int, k: int, seed: int, policy: str, balanced: bool) -> dict:
    return {
        "n": n,
        "k": k,
        "seed": seed,
        "replacement_policy": policy,
        "class_balanced": balanced,
    }


def _solver_payload(
    epsilon: float,
    max_iterations: int,
    tolerance: float,
    log_domain: bool,
    normalize_cost: bool,
    anderson_memory: int,
) -> dict:
    return {
        "epsilon": epsilon,
        "max_iterations": max_iterations,
        "tolerance": tolerance,
        "log_domain": log_domain,
        "normalize_cost": normalize_cost,
        "anderson_memory": anderson_memory,
    }


_server_option = click.option(
    "--server",
    envvar="OTSEG_SERVER",
    default=None,
    help="Base URL of a running service; default runs the app in-process.",
)
_config_option = click.option(
    "--config",
    "config_path",
    type=click.Path(),
    default=None,
    help="JSON file with defaults for any flag of this command.",
)


def _solver_options(fn):
    fn = click.option("--epsilon", type=float, default=0.1, show_default=True,
                      help="Entropic regularization weight.")(fn)
    fn = click.option("--max-iterations", type=click.IntRange(min=1), default=1000,
                      show_default=True)(fn)
    fn = click.option("--tolerance", type=float, default=1e-6, show_default=True,
                      help="Marginal violation at which iteration stops.")(fn)
    fn = click.option("--log-domain/--dense", "log_domain", default=True, show_default=True,
                      help="Log-domain iterations (robust) or dense kernel (fast path).")(fn)
    fn = click.option("--normalize-cost", is_flag=True, default=False,
                      help="Divide costs by their maximum before solving (echoed in output).")(fn)
    fn = click.option("--anderson-memory", type=click.IntRange(min=0), default=0,
                      show_default=True, help="Anderson acceleration depth (0 disables).")(fn)
    return fn


def _sampling_options(fn):
    fn = click.option("--n", type=click.IntRange(min=1), default=10000, show_default=True,
                      help="Pixels sampled per side per repetition.")(fn)
    fn = click.option("--k", type=click.IntRange(min=1), default=10, show_default=True,
                      help="Number of repetitions to average.")(fn)
    fn = click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True,
                      help="Master seed; all randomness derives from it.")(fn)
    fn = click.option("--policy", type=click.Choice(["error", "clamp"]), default="error",
                      show_default=True, help="What to do when N exceeds available pixels.")(fn)
    fn = click.option("--balanced", is_flag=True, default=False,
                      help="Class-balanced pixel draws instead of uniform.")(fn)
    return fn


@click.group()
@click.version_option()
def main() -> None:
    """Transferability scoring for semantic segmentation task pairs."""


@main.command()
@click.option("--src", "source", type=click.Path(), required=True,
              help="Source task export (container file or directory).")
@click.option("--tgt", "target", type=click.Path(), required=True,
              help="Target task export.")
@_sampling_options
@_solver_options
@click.option("--standardize", is_flag=True, default=False,
              help="Standardize feature channels before the cost matrix (echoed in output).")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True,
              help="Worker threads for the K repetitions.")
@click.option("--dump-coupling", "dump_dir", type=click.Path(), default=None,
              help="Debug: write each repetition's coupling as raw float32.")
@click.option("--out", "output", type=click.Path(), default=None,
              help="Write the score JSON here instead of stdout.")
@_server_option
@_config_option
@click.pass_context
def score(ctx, source, target, n, k, seed, policy, balanced, epsilon, max_iterations,
          tolerance, log_domain, normalize_cost, anderson_memory, standardize, jobs,
          dump_dir, output, server, config_path) -> None:
    """Score one source -> target pair and emit the report JSON."""
    _load_config_overrides(ctx, config_path)
    p = ctx.params
    payload = {
        "source_path": p["source"],
        "target_path": p["target"],
        "sampling": _sampling_payload(p["n"], p["k"], p["seed"], p["policy"], p["balanced"]),
        "solver": _solver_payload(p["epsilon"], p["max_iterations"], p["tolerance"],
                                  p["log_domain"], p["normalize_cost"], p["anderson_memory"]),
        "standardize_features": p["standardize"],
        "jobs": p["jobs"],
        "coupling_dump_dir": p["dump_dir"],
    }
    status, body = _Client(p["server"]).request("POST", "/score", json=payload)
    if status != 200:
        _fail(body, status)
    text = json.dumps(body, indent=2, sort_keys=True) + "\n"
    if p["output"]:
        Path(p["output"]).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@main.command("eval")
@click.argument("manifest", type=click.Path())
@click.option("--out-dir", type=click.Path(), default="eval-report", show_default=True,
              help="Directory for report.json, report.csv, and plots.")
@_sampling_options
@_solver_options
@click.option("--standardize", is_flag=True, default=False)
@click.option("--plots", is_flag=True, default=False, help="Write one SVG scatter per target.")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True,
              help="Records evaluated concurrently.")
@click.option("--no-cache", is_flag=True, default=False, help="Bypass the score cache.")
@click.option("--cache-dir", type=click.Path(), default=None,
              help="Cache directory (default: OTSEG_CACHE_DIR or ~/.cache/otseg).")
@_server_option
@_config_option
@click.pass_context
def evaluate(ctx, manifest, out_dir, n, k, seed, policy, balanced, epsilon, max_iterations,
             tolerance, log_domain, normalize_cost, anderson_memory, standardize, plots,
             jobs, no_cache, cache_dir, server, config_path) -> None:
    """Correlate scores against measured accuracies for a manifest."""
    _load_config_overrides(ctx, config_path)
    p = ctx.params
    payload = {
        "manifest_path": p["manifest"],
        "output_dir": p["out_dir"],
        "sampling": _sampling_payload(p["n"], p["k"], p["seed"], p["policy"], p["balanced"]),
        "solver": _solver_payload(p["epsilon"], p["max_iterations"], p["tolerance"],
                                  p["log_domain"], p["normalize_cost"], p["anderson_memory"]),
        "plots": p["plots"],
        "jobs": p["jobs"],
        "use_cache": not p["no_cache"],
        "cache_dir": p["cache_dir"],
        "standardize_features": p["standardize"],
    }
    status, body = _Client(p["server"]).request("POST", "/eval", json=payload)
    if status != 200:
        _fail(body, status)
    for warning in body.get("warnings", []):
        click.echo(f"warning: {warning}", err=True)
    summary = {
        "pearson": body["pearson"],
        "spearman": body["spearman"],
        "per_target": body["per_target"],
        "points": len(body["points"]),
        "failures": len(body["failures"]),
        "report_json": body["report_json"],
        "report_csv": body["report_csv"],
        "plot_files": body["plot_files"],
    }
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


@main.command()
@click.argument("spec_file", type=click.Path())
@click.option("--out-dir", type=click.Path(), default="synthetic-bench", show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=None,
              help="Override every seed in the spec file (reproducible generation).")
@_server_option
@_config_option
@click.pass_context
def gen(ctx, spec_file, out_dir, seed, server, config_path) -> None:
    """Generate synthetic task exports plus a manifest from a spec file."""
    _load_config_overrides(ctx, config_path)
    p = ctx.params
    payload = {"spec_path": p["spec_file"], "output_dir": p["out_dir"], "seed": p["seed"]}
    status, body = _Client(p["server"]).request("POST", "/generate", json=payload)
    if status != 200:
        _fail(body, status)
    click.echo(json.dumps(body, indent=2, sort_keys=True))


@main.command()
@click.argument("export_path", type=click.Path())
@click.option("--json", "as_json", is_flag=True, default=False, help="Machine-readable output.")
@_server_option
@click.pass_context
def info(ctx, export_path, as_json, server) -> None:
    """Summarize a task export: dimensions, classes, label histogram."""
    status, body = _Client(server).request("GET", "/info", params={"path": export_path})
    if status != 200:
        _fail(body, status)
    if as_json:
        click.echo(json.dumps(body, indent=2, sort_keys=True))
        return
    click.echo(
        f"{body['path']} ({body['layout']}): {body['images']} images of "
        f"{body['height']}x{body['width']}, {body['channels']} channels"
    )
    click.echo(
        f"classes: {body['class_count']}, ignore labels: {body['ignore_labels']}, "
        f"model: {body['model_id'] or 'unknown'}"
    )
    click.echo(f"pixels: {body['pixel_count']}")
    click.echo("label histogram:")
    for label, count in sorted(body["label_histogram"].items(), key=lambda kv: int(kv[0])):
        click.echo(f"  {label:>6}: {count}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host: str, port: int) -> None:
    """Run the scoring service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
