"""Command-line entry point: `audit`."""
from __future__ import annotations

import logging
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import click

from .errors import AuditError, EmptyInput, FetchError, InfeasibleSpec, SchemaError
from .fingerprint import bundled_fingerprints, load_fingerprints
from .ingest.export import ExportStats, load_export
from .ingest.live import API_KEY_ENV, DEFAULT_BASE_URL, ApiCredentials, fetch_search
from .ingest.synth import generate_corpus, load_corpus_spec
from .model import DeviceFamily
from .pipeline import build_report
from .report import FORMATS, emit_report
from .rules.ruleset import load_bundled_rulesets, load_ruleset

log = logging.getLogger("icsaudit")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_RULES = 2


class InputError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    export: Optional[Path] = None
    query: Optional[str] = None
    live: bool = False
    corpus: Optional[Path] = None
    rules_dir: Optional[Path] = None
    fingerprints: Optional[Path] = None
    fmt: str = "md"
    out: Optional[Path] = None
    top_k: int = 10
    family: Optional[str] = None
    api_key: Optional[str] = None
    base_url: str = DEFAULT_BASE_URL
    page_limit: int = 1
    rate_limit: float = 1.0

    def validate(self) -> None:
        sources = [self.export is not None, self.query is not None, self.corpus is not None]
        if sum(sources) != 1:
            raise InputError("choose exactly one input: --export, --query with --live, or --corpus")
        if self.query is not None and not self.live:
            raise InputError("--query needs --live; offline runs read an --export file")
        if self.live and self.query is None:
            raise InputError("--live needs --query")
        if self.fmt not in FORMATS:
            raise InputError(f"--format must be one of {', '.join(FORMATS)}")
        if self.top_k < 1:
            raise InputError("--top-k must be at least 1")
        if self.out is not None:
            for src in (self.export, self.corpus):
                if src is not None and Path(src).resolve() == Path(self.out).resolve():
                    raise InputError("--out would overwrite the input file")


def _load_rulesets(rules_dir: Optional[Path]):
    rulesets = load_bundled_rulesets()
    if rules_dir is None:
        return rulesets
    files = sorted(Path(rules_dir).glob("*.rules.json"))
    if not files:
        raise InputError(f"no *.rules.json files in {rules_dir}")
    # a custom directory replaces the bundled rules family by family
    for path in files:
        ruleset = load_ruleset(path.read_bytes())
        rulesets[ruleset.family] = ruleset
    return rulesets


def _read_hosts(config: RunConfig):
    if config.export is not None:
        stats = ExportStats()
        with open(config.export, "rb") as fh:
            hosts = load_export(fh, stats)
        if stats.malformed:
            log.warning("%s: skipped %d malformed line(s)", config.export, stats.malformed)
        return hosts, "export"
    if config.corpus is not None:
        spec = load_corpus_spec(Path(config.corpus).read_bytes())
        return generate_corpus(spec), "corpus"
    key = config.api_key or os.environ.get(API_KEY_ENV)
    if not key:
        raise InputError(f"live search needs an API key (--api-key or {API_KEY_ENV})")
    creds = ApiCredentials(key, config.base_url, config.rate_limit)
    return fetch_search(config.query, creds, config.page_limit), "live"


def _write(data: bytes, out: Optional[Path], stdout) -> None:
    if out is None:
        stdout.write(data)
        stdout.flush()
        return
    out = Path(out)
    fd, tmp = tempfile.mkstemp(prefix=".audit-", dir=out.parent if str(out.parent) else ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(config: RunConfig, stdout=None, stderr=None) -> int:
    """Execute one audit; the report is written only after every stage succeeded."""
    stdout = stdout if stdout is not None else sys.stdout.buffer
    stderr = stderr if stderr is not None else sys.stderr

    def fail(code: int, message: str) -> int:
        print(f"audit: {message}", file=stderr)
        return code

    try:
        config.validate()
        family = DeviceFamily.lookup(config.family) if config.family else None
    except (InputError, ValueError) as exc:
        return fail(EXIT_INPUT, str(exc))

    try:
        rulesets = _load_rulesets(config.rules_dir)
        fingerprints = (
            load_fingerprints(Path(config.fingerprints).read_bytes())
            if config.fingerprints is not None
            else bundled_fingerprints()
        )
    except SchemaError as exc:
        return fail(EXIT_RULES, f"invalid rule or fingerprint data: {exc}")
    except (OSError, InputError) as exc:
        return fail(EXIT_INPUT, str(exc))

    try:
        hosts, source = _read_hosts(config)
    except (OSError, InputError, EmptyInput, FetchError, InfeasibleSpec, ValueError, KeyError) as exc:
        return fail(EXIT_INPUT, f"cannot read input: {exc}")
    except AuditError as exc:
        return fail(EXIT_INPUT, str(exc))

    report = build_report(
        hosts, rulesets, fingerprints, source=source, top_k=config.top_k, family=family
    )
    try:
        _write(emit_report(report, config.fmt), config.out, stdout)
    except OSError as exc:
        return fail(EXIT_INPUT, f"cannot write report: {exc}")
    return EXIT_OK


@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--export", "export", type=click.Path(dir_okay=False, path_type=Path), help="NDJSON host export (optionally gzipped).")
@click.option("--query", help="Search query for the live API.")
@click.option("--live", is_flag=True, help="Query the live search API (needs --query).")
@click.option("--corpus", type=click.Path(dir_okay=False, path_type=Path), help="Synthetic corpus spec (JSON).")
@click.option("--rules", "rules_dir", type=click.Path(file_okay=False, path_type=Path), help="Directory of *.rules.json files.")
@click.option("--fingerprints", type=click.Path(dir_okay=False, path_type=Path), help="Fingerprint definitions (JSON).")
@click.option("--format", "fmt", default="md", show_default=True, help="csv, json or md.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), help="Write the report here instead of stdout.")
@click.option("--top-k", default=10, show_default=True, type=int, help="Rows summed in the top-k line of country tables.")
@click.option("--family", help="Only report this device family.")
@click.option("--api-key", help=f"Search API key (default: ${API_KEY_ENV}).")
@click.option("--base-url", default=DEFAULT_BASE_URL, show_default=True)
@click.option("--page-limit", default=1, show_default=True, type=int)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def audit(verbose: bool, **options) -> None:
    """Identify exposed controllers and report their matched CVEs."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    sys.exit(run(RunConfig(**options)))


def main(argv=None) -> None:
    try:
        audit.main(args=argv, prog_name="audit", standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        # usage problems are input errors, not validation failures
        sys.exit(EXIT_INPUT)
    except click.exceptions.Abort:
        sys.exit(EXIT_INPUT)


if __name__ == "__main__":
    main()
