"""
Citation Impact CLI

Subcommands: validate, compute, evaluate, category-stats, synth.
Exit code: 0 thành công, 1 lỗi dữ liệu, 2 lỗi cách dùng (click).
"""
import functools
import logging
import sys
from pathlib import Path
from typing import List, Optional

import click
import pandas as pd
from pythonjsonlogger.json import JsonFormatter

from app import __version__
from app.services.corpus_service import CorpusService, corpus_config_from
from app.services.indicator_service import IndicatorService, parse_indicator_selection
from app.services.reference_set_service import ReferenceSetService
from app.services.report_service import ReportService
from app.services.stats_service import StatsService, load_recommendations
from app.services.synth_service import SynthService, load_generator_spec, preset_spec, PRESETS
from core.config import settings
from core.schemas import INDICATOR_COLUMNS, CorpusConfig, MultiCategoryRule, RunConfig

logger = logging.getLogger(__name__)

EXIT_DATA_ERROR = 1
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def configure_logging(level: str, fmt: str, log_file: Optional[str]) -> None:
    """Log ra stderr (stdout dành cho JSON summary), thêm file nếu có"""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    formatter = JsonFormatter(LOG_FORMAT.replace(" - ", " ")) if fmt == "json" else logging.Formatter(LOG_FORMAT)
    for handler in handlers:
        handler.setFormatter(formatter)
    logging.basicConfig(level=level.upper(), handlers=handlers, force=True)


def run_safely(func):
    """ValueError / FileNotFoundError -> DATA_ERROR (exit 1); lỗi khác -> SYSTEM_ERROR (exit 1)"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (click.ClickException, click.exceptions.Exit, click.Abort):
            raise
        except (ValueError, FileNotFoundError) as e:
            logger.error(f"DATA_ERROR: {e}")
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_DATA_ERROR)
        except Exception as e:
            logger.error(f"SYSTEM_ERROR: {e}", exc_info=True)
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_DATA_ERROR)
    return wrapper


def corpus_options(func):
    options = [
        click.option("--publications", required=True, type=click.Path(dir_okay=False),
                     help="Publications file (.tsv or .jsonl)"),
        click.option("--references", required=True, type=click.Path(dir_okay=False),
                     help="References file (.tsv or .jsonl)"),
        click.option("--horizon-year", type=int, default=settings.HORIZON_YEAR, show_default=True,
                     help="Last year of citation observation"),
        click.option("--year-min", type=int, default=settings.YEAR_MIN, help="Earliest accepted publication year"),
        click.option("--citable-types", default=settings.CITABLE_TYPES, show_default=True,
                     help="Comma-separated citable doc types"),
        click.option("--category-column", default=settings.CATEGORY_COLUMN, show_default=True,
                     help="Column holding the category labels"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _corpus_config(horizon_year, year_min, citable_types, category_column) -> CorpusConfig:
    types = [t.strip() for t in citable_types.split(",") if t.strip()]
    if not types:
        raise click.BadParameter("at least one doc type is required", param_hint="--citable-types")
    return corpus_config_from(horizon_year, types, year_min, category_column)


def _load(config: CorpusConfig, publications: str, references: str):
    service = CorpusService(config)
    corpus = service.load_corpus(publications, references)
    return service, corpus


@click.group()
@click.option("--log-level", default=settings.LOG_LEVEL, show_default=True)
@click.option("--log-format", type=click.Choice(["text", "json"]), default=settings.LOG_FORMAT, show_default=True)
@click.option("--log-file", default=settings.LOG_FILE, help="Also write logs to this file")
@click.version_option(__version__)
def cli(log_level, log_format, log_file):
    """Citation-impact normalization and evaluation toolkit"""
    configure_logging(log_level, log_format, log_file)


@cli.command()
@corpus_options
@click.option("--summary", is_flag=True, help="Print only the load summary JSON")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Also write validation.json here")
@run_safely
def validate(publications, references, horizon_year, year_min, citable_types, category_column, summary, out):
    """Load a corpus and report counts and soft warnings"""
    config = _corpus_config(horizon_year, year_min, citable_types, category_column)
    service, corpus = _load(config, publications, references)
    report = service.validate_corpus(corpus)

    if out:
        reports = ReportService(out)
        reports.write_validation(report)
        reports.write_run_meta(RunConfig(
            subcommand="validate",
            version=__version__,
            inputs={"publications": publications, "references": references},
            out_dir=out,
            horizon_year=horizon_year,
            year_min=year_min,
            citable_types=config.citable_types,
            category_column=category_column
        ))

    click.echo(report.summary.model_dump_json(indent=2) if summary else report.model_dump_json(indent=2))
    logger.info(f"Validation finished: {report.warning_count} warnings")


@cli.command()
@corpus_options
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory")
@click.option("--indicators", default=None, help=f"Comma-separated subset of: {','.join(INDICATOR_COLUMNS)}")
@click.option("--threads", type=click.IntRange(min=1), default=settings.THREADS, show_default=True)
@click.option("--fixed-window", type=click.IntRange(min=1), default=None,
              help="Use this reference window length w for every paper")
@click.option("--dump-reference-sets", is_flag=True, help="Write reference_sets.csv")
@click.option("--summary", is_flag=True, help="Print the load summary JSON to stdout")
@run_safely
def compute(publications, references, horizon_year, year_min, citable_types, category_column,
            out, indicators, threads, fixed_window, dump_reference_sets, summary):
    """Compute the indicator table"""
    try:
        selected = parse_indicator_selection(indicators)
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint="--indicators")

    config = _corpus_config(horizon_year, year_min, citable_types, category_column)
    service, corpus = _load(config, publications, references)
    index = service.build_citation_index(corpus)

    indicator_service = IndicatorService(
        corpus,
        index,
        MultiCategoryRule(settings.MULTI_CATEGORY_RULE),
        threads=threads,
        fixed_window=fixed_window
    )
    table = indicator_service.compute(selected)

    reports = ReportService(out)
    reports.write_indicator_table(table)
    if dump_reference_sets:
        reports.write_reference_sets(ReferenceSetService.dump_reference_sets(indicator_service.sets))

    run_config = RunConfig(
        subcommand="compute",
        version=__version__,
        inputs={"publications": publications, "references": references},
        out_dir=out,
        horizon_year=horizon_year,
        year_min=year_min,
        citable_types=config.citable_types,
        category_column=category_column,
        multi_category_rule=indicator_service.reference_set_service.rule,
        indicators=table.indicators,
        fixed_window=fixed_window,
        threads=threads
    )
    reports.write_run_meta(run_config, {"load_summary": corpus.summary(), "table": table.metadata})

    if summary:
        click.echo(corpus.summary().model_dump_json(indent=2))


def _read_table(path: str) -> pd.DataFrame:
    table_path = Path(path)
    if not table_path.exists():
        raise FileNotFoundError(f"Indicator table not found: {table_path}")
    if table_path.suffix.lower() == ".jsonl":
        return pd.read_json(table_path, lines=True, dtype={"pub_id": str})
    return pd.read_csv(table_path, dtype={"pub_id": str})


@cli.command()
@click.option("--table", "table_path", required=True, type=click.Path(dir_okay=False),
              help="indicators.csv or indicators.jsonl")
@click.option("--recommendations", required=True, type=click.Path(dir_okay=False),
              help="Recommendations file (.tsv or .jsonl)")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory")
@click.option("--seed", required=True, type=int, help="Bootstrap seed")
@click.option("--reps", type=click.IntRange(min=2), default=settings.BOOTSTRAP_REPS, show_default=True)
@click.option("--first-only", is_flag=True, help="Fit regressions on first recommendations only")
@click.option("--threads", type=click.IntRange(min=1), default=settings.THREADS, show_default=True)
@click.option("--percentile-ci", is_flag=True, help="Percentile bootstrap intervals for margins")
@click.option("--indicators", default=None, help="Comma-separated subset of indicator columns")
@run_safely
def evaluate(table_path, recommendations, out, seed, reps, first_only, threads, percentile_ci, indicators):
    """Correlation, regression and margins tables against recommendations"""
    table = _read_table(table_path)
    available = [c for c in INDICATOR_COLUMNS if c in table.columns]
    if indicators:
        try:
            requested = parse_indicator_selection(indicators)
        except ValueError as e:
            raise click.BadParameter(str(e), param_hint="--indicators")
        missing = [c for c in requested if c not in available]
        if missing:
            raise ValueError(f"Indicator table lacks columns: {', '.join(missing)}")
        available = requested
    if not available:
        raise ValueError(f"No indicator columns found in {table_path}")

    records = load_recommendations(recommendations)
    stats = StatsService(threads=threads)
    report = stats.evaluate(table, records, available, reps, seed, first_only, percentile_ci)

    reports = ReportService(out)
    reports.write_evaluation(report)
    reports.write_run_meta(RunConfig(
        subcommand="evaluate",
        version=__version__,
        inputs={"table": table_path, "recommendations": recommendations},
        out_dir=out,
        indicators=available,
        reps=reps,
        seed=seed,
        first_only=first_only,
        percentile_ci=percentile_ci,
        threads=threads
    ), {"evaluation": report.metadata})


@cli.command("category-stats")
@corpus_options
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory")
@click.option("--by", "group_by", type=click.Choice(["category", "year"]), default="category",
              show_default=True,
              help="Group 3-year citations by category, or full-window citations by publication year")
@click.option("--top-k", type=click.IntRange(min=1), default=settings.CATEGORY_TOP_K, show_default=True)
@click.option("--combinations", is_flag=True, help="One row per category combination instead of per category")
@click.option("--table", "table_path", type=click.Path(dir_okay=False), default=None,
              help="indicators.csv or indicators.jsonl; adds per-category indicator means")
@run_safely
def category_stats(publications, references, horizon_year, year_min, citable_types, category_column,
                   out, group_by, top_k, combinations, table_path):
    """Citation summaries per category or per publication year"""
    config = _corpus_config(horizon_year, year_min, citable_types, category_column)
    service, corpus = _load(config, publications, references)
    index = service.build_citation_index(corpus)

    reports = ReportService(out)
    if group_by == "year":
        reports.write_year_stats(StatsService.year_stats(corpus, index))
    else:
        reports.write_category_stats(
            StatsService.category_stats(corpus, index, top_k=top_k, combinations=combinations)
        )

    indicators: List[str] = []
    if table_path:
        table = _read_table(table_path)
        indicators = [c for c in INDICATOR_COLUMNS if c in table.columns]
        if not indicators:
            raise ValueError(f"No indicator columns found in {table_path}")
        reports.write_category_indicators(StatsService.category_indicator_means(table, corpus, indicators))

    reports.write_run_meta(RunConfig(
        subcommand="category-stats",
        version=__version__,
        inputs={"publications": publications, "references": references, "table": table_path},
        out_dir=out,
        horizon_year=horizon_year,
        year_min=year_min,
        citable_types=config.citable_types,
        category_column=category_column,
        indicators=indicators,
        top_k=top_k,
        combinations=combinations,
        group_by=group_by
    ))


@cli.command()
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None, help="Named generator preset")
@click.option("--spec", "spec_path", type=click.Path(dir_okay=False), default=None,
              help="Generator spec file (.yaml or .json)")
@click.option("--seed", required=True, type=int, help="Generator seed")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory")
@click.option("--papers-per-field-year", type=click.IntRange(min=1), default=None)
@click.option("--coupling", type=click.FloatRange(0.0, 1.0), default=None)
@run_safely
def synth(preset, spec_path, seed, out, papers_per_field_year, coupling):
    """Generate a synthetic corpus and recommendations"""
    if (preset is None) == (spec_path is None):
        raise click.UsageError("Give exactly one of --preset or --spec")

    spec = preset_spec(preset) if preset else load_generator_spec(spec_path)
    overrides = {"seed": seed}
    if papers_per_field_year is not None:
        overrides["papers_per_field_year"] = papers_per_field_year
    if coupling is not None:
        overrides["coupling"] = coupling
    spec = spec.model_validate({**spec.model_dump(), **overrides})

    service = SynthService(spec)
    synthetic = service.generate_corpus(seed)
    recommendations = service.generate_recommendations(synthetic)
    paths = SynthService.write(synthetic, recommendations, out)

    ReportService(out).write_run_meta(RunConfig(
        subcommand="synth",
        version=__version__,
        inputs={"spec": spec_path},
        out_dir=out,
        horizon_year=spec.horizon_year,
        year_min=spec.year_first,
        citable_types=sorted(synthetic.corpus.citable_types),
        seed=seed,
        preset=preset
    ), {"generator_spec": spec, "files": {k: p.name for k, p in paths.items()}})


if __name__ == "__main__":
    cli()
