"""Saves run artifacts to disk, loads them back with an integrity check, and renders the comparison table.

Run directory layout:
    run.json                         run id and configuration snapshot
    items/<story_id>.<variant>.json  one PipelineResult (or failed item) with its trace
    report.json                      aggregated cells, one per variant
    report.md                        the same cells as a Markdown table
    results.csv                      one row per item, flat metric columns

A model comparison holds one such directory per model under models/<name>/, with comparison.json and
comparison.md next to its run.json.
"""


import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import pandas as pd

from riro_harness import run_settings
from riro_harness.exceptions import CorruptionError
from riro_harness.metrics import evaluate_pair
from riro_harness.pipeline import (
    AblationReport, CellSummary, ItemFailure, ModelComparison, PipelineResult, PipelineVariant, summarise_cells,
)


logger = logging.getLogger(__name__)

RUN_FILE = 'run.json'
ITEMS_DIR = 'items'
REPORT_JSON = 'report.json'
REPORT_MD = 'report.md'
RESULTS_CSV = 'results.csv'
MODELS_DIR = 'models'
COMPARISON_JSON = 'comparison.json'
COMPARISON_MD = 'comparison.md'

METRIC_ROWS = (
    ('BLEU Score', lambda report: report.bleu),
    ('ROUGE1 (F1)', lambda report: report.rouge1.f1),
    ('ROUGE2 (F1)', lambda report: report.rouge2.f1),
    ('ROUGE L (F1)', lambda report: report.rougeL.f1),
    ('Levenshtein Distance', lambda report: report.levenshtein),
    ('Cosine Similarity', lambda report: report.cosine),
)
INCOMPLETE_MARK = '*'


def dump_json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + '\n'


def item_path(run_dir: Path, story_id: str, variant_name) -> Path:
    return Path(run_dir) / ITEMS_DIR / f'{story_id}.{variant_name.value}.json'


class ItemWriter:
    """Writes each finished item to its own file. Safe to call from concurrent workers."""

    def __init__(self, run_dir: Path):
        self.run_dir = Path(run_dir)
        (self.run_dir / ITEMS_DIR).mkdir(parents=True, exist_ok=True)

    def __call__(self, outcome) -> Path:
        path = item_path(self.run_dir, outcome.story_id, outcome.variant_name)
        path.write_text(dump_json(outcome.to_dict()), encoding='utf-8')
        return path


@dataclass
class RunArtifact:
    run_id: str
    config: dict
    results: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    report: dict = field(default_factory=dict)  # content of report.json

    def __post_init__(self):
        order = {name: i for i, name in enumerate(self.report.get('variants', []))}

        def key(item):
            return item.story_id, order.get(item.variant_name.value, len(order))

        self.results = sorted(self.results, key=key)
        self.failures = sorted(self.failures, key=key)

    @property
    def variants(self) -> list:
        return [PipelineVariant.from_name(name) for name in self.report.get('variants', [])]

    @property
    def cells(self) -> list:
        return [CellSummary.from_dict(name, self.report['cells'][name]) for name in self.report.get('variants', [])]


def format_cell(value: float | None, complete: bool = True) -> str:
    if value is None:
        return 'n/a'
    text = f'{value:.{run_settings.display_decimals}f}'
    return text if complete else text + INCOMPLETE_MARK


def render_table(cells: list) -> str:
    """Markdown table with one row per metric and one column per variant, in the given cell order."""

    header = '| Metric | ' + ' | '.join(cell.label for cell in cells) + ' |'
    rule = '|---|' + '---:|' * len(cells)
    rows = [header, rule]
    for metric_label, getter in METRIC_ROWS:
        values = [format_cell(getter(cell.metrics) if cell.metrics else None, cell.complete) for cell in cells]
        rows.append(f'| {metric_label} | ' + ' | '.join(values) + ' |')

    return '\n'.join(rows) + '\n'


def render_markdown(cells: list, title: str = 'Ablation report') -> str:
    text = f'# {title}\n\n' + render_table(cells)
    if any(not cell.complete for cell in cells):
        text += (f'\n{INCOMPLETE_MARK} cell aggregates fewer items than were run; see the failed items '
                 f'in {ITEMS_DIR}/.\n')
    return text


def render_json(cells: list) -> str:
    return dump_json({'variants': [cell.variant_name.value for cell in cells],
                      'cells': {cell.variant_name.value: cell.to_dict() for cell in cells}})


def results_frame(results: list, failures: list) -> pd.DataFrame:
    """One row per item with the metric fields flattened."""

    rows = []
    for result in results:
        row = {'story_id': result.story_id, 'variant': result.variant_name.value, 'status': 'ok',
               'stages': len(result.trace.entries)}
        if result.metrics is not None:
            row.update({'bleu': result.metrics.bleu, 'rouge1_f1': result.metrics.rouge1.f1,
                        'rouge2_f1': result.metrics.rouge2.f1, 'rougeL_f1': result.metrics.rougeL.f1,
                        'levenshtein': result.metrics.levenshtein, 'cosine': result.metrics.cosine})
        rows.append(row)
    for failure in failures:
        rows.append({'story_id': failure.story_id, 'variant': failure.variant_name.value, 'status': 'failed',
                     'stages': len(failure.trace.entries), 'failed_stage': failure.stage.value})

    return pd.DataFrame(rows)


def persist_run(run_dir: Path, run_id: str, config: dict, report: AblationReport,
                write_items: bool = True) -> RunArtifact:
    """Writes the run directory. Items may already have been written by an ItemWriter during the run."""

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if write_items:
        writer = ItemWriter(run_dir)
        for outcome in report.results + report.failures:
            writer(outcome)

    (run_dir / RUN_FILE).write_text(dump_json({'run_id': run_id, 'config': config}), encoding='utf-8')
    report_data = report.to_dict()
    (run_dir / REPORT_JSON).write_text(dump_json(report_data), encoding='utf-8')
    (run_dir / REPORT_MD).write_text(render_markdown(report.cells), encoding='utf-8')
    results_frame(report.results, report.failures).to_csv(run_dir / RESULTS_CSV, index=False)
    logger.info(f'Run {run_id} saved to {run_dir}')

    return RunArtifact(run_id=run_id, config=config, results=list(report.results), failures=list(report.failures),
                       report=report_data)


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as err:
        raise CorruptionError(f'cannot read {path}: {err}') from None


def _matches(stored, recomputed) -> bool:
    """Structural equality with float tolerance."""

    if isinstance(stored, dict) and isinstance(recomputed, dict):
        return stored.keys() == recomputed.keys() and all(_matches(stored[k], recomputed[k]) for k in stored)
    if isinstance(stored, (int, float)) and isinstance(recomputed, (int, float)) \
            and not isinstance(stored, bool) and not isinstance(recomputed, bool):
        return math.isclose(stored, recomputed, rel_tol=1e-12, abs_tol=1e-12)
    return stored == recomputed


def _load_item(path: Path):
    data = _read_json(path)
    try:
        if data.get('status') == 'failed':
            return ItemFailure.from_dict(data)
        result = PipelineResult.from_dict(data)
    except (KeyError, ValueError, TypeError, AttributeError) as err:
        raise CorruptionError(f'{path} is not an item file: {err}') from None

    if result.reference is not None:
        recomputed = evaluate_pair(result.final_output, result.reference)
        if result.metrics is None or not _matches(result.metrics.to_dict(), recomputed.to_dict()):
            raise CorruptionError(f'{path}: stored metrics do not match its output and reference')
    if result.trace.entries and result.trace.entries[-1].response_received != result.final_output:
        raise CorruptionError(f'{path}: final output differs from the last trace response')

    return result


def load_run(run_dir: Path) -> RunArtifact:
    """Loads a run directory, recomputes every aggregate from the item files and checks it against
    report.json."""

    run_dir = Path(run_dir)
    for required in (RUN_FILE, REPORT_JSON):
        if not (run_dir / required).is_file():
            raise CorruptionError(f'{run_dir} is missing {required}')
    item_files = sorted((run_dir / ITEMS_DIR).glob('*.json')) if (run_dir / ITEMS_DIR).is_dir() else []
    if not item_files:
        raise CorruptionError(f'{run_dir / ITEMS_DIR} holds no item files')

    run_data = _read_json(run_dir / RUN_FILE)
    report_data = _read_json(run_dir / REPORT_JSON)
    try:
        variants = [PipelineVariant.from_name(name) for name in report_data['variants']]
    except (KeyError, ValueError, TypeError) as err:
        raise CorruptionError(f'{run_dir / REPORT_JSON} lists no valid variants: {err}') from None

    outcomes = [_load_item(path) for path in item_files]
    results = [outcome for outcome in outcomes if isinstance(outcome, PipelineResult)]
    failures = [outcome for outcome in outcomes if isinstance(outcome, ItemFailure)]

    recomputed = {cell.variant_name.value: cell.to_dict() for cell in summarise_cells(variants, results, failures)}
    stored = report_data.get('cells', {})
    mismatched = [name for name in recomputed if not _matches(stored.get(name), recomputed[name])]
    if mismatched or set(stored) != set(recomputed):
        raise CorruptionError(f'{run_dir}: aggregate mismatch for variant(s) '
                              f'{", ".join(mismatched) or "(cell set differs)"}; report.json does not match the '
                              f'item files')

    return RunArtifact(run_id=run_data.get('run_id', ''), config=run_data.get('config', {}), results=results,
                       failures=failures, report=report_data)


def model_dir(run_dir: Path, model: str) -> Path:
    return Path(run_dir) / MODELS_DIR / model


def comparison_cells(comparison: ModelComparison) -> list:
    """Every (model, variant) cell, model-major, labelled with its model name."""

    return [replace(cell, label=f'{name}: {cell.label}')
            for name in comparison.models for cell in comparison.reports[name].cells]


def render_comparison_markdown(comparison: ModelComparison) -> str:
    return render_markdown(comparison_cells(comparison), title='Model comparison')


def render_comparison_json(comparison: ModelComparison) -> str:
    data = comparison.to_dict()
    return dump_json({key: data[key] for key in ('models', 'variants', 'cells')})


@dataclass
class ComparisonArtifact:
    run_id: str
    config: dict
    runs: dict  # model name -> RunArtifact
    report: dict = field(default_factory=dict)  # content of comparison.json

    @property
    def failures(self) -> list:
        return [failure for run in self.runs.values() for failure in run.failures]

    def comparison(self) -> ModelComparison:
        """Rebuilds the comparison from the item files of every model run."""

        reports = {}
        for name, run in self.runs.items():
            variants = run.variants
            reports[name] = AblationReport(variants=variants, results=run.results, failures=run.failures,
                                           cells=summarise_cells(variants, run.results, run.failures))
        return ModelComparison(models=list(self.runs), reports=reports)


def persist_comparison(run_dir: Path, run_id: str, config: dict, comparison: ModelComparison,
                       write_items: bool = True) -> ComparisonArtifact:
    """Writes one run directory per model under models/, then the comparison files next to run.json."""

    run_dir = Path(run_dir)
    runs = {name: persist_run(model_dir(run_dir, name), f'{run_id}/{name}', config, comparison.reports[name],
                              write_items=write_items)
            for name in comparison.models}

    (run_dir / RUN_FILE).write_text(dump_json({'run_id': run_id, 'config': config}), encoding='utf-8')
    report_data = comparison.to_dict()
    (run_dir / COMPARISON_JSON).write_text(dump_json(report_data), encoding='utf-8')
    (run_dir / COMPARISON_MD).write_text(render_comparison_markdown(comparison), encoding='utf-8')
    logger.info(f'Model comparison {run_id} saved to {run_dir}')

    return ComparisonArtifact(run_id=run_id, config=config, runs=runs, report=report_data)


def is_comparison(run_dir: Path) -> bool:
    return (Path(run_dir) / COMPARISON_JSON).is_file()


def load_comparison(run_dir: Path) -> ComparisonArtifact:
    """Loads every model run with load_run, then checks comparison.json against their aggregates."""

    run_dir = Path(run_dir)
    for required in (RUN_FILE, COMPARISON_JSON):
        if not (run_dir / required).is_file():
            raise CorruptionError(f'{run_dir} is missing {required}')

    run_data = _read_json(run_dir / RUN_FILE)
    report_data = _read_json(run_dir / COMPARISON_JSON)
    models = report_data.get('models') if isinstance(report_data, dict) else None
    if not isinstance(models, list) or not models or not all(isinstance(name, str) for name in models):
        raise CorruptionError(f'{run_dir / COMPARISON_JSON} lists no models')

    runs = {name: load_run(model_dir(run_dir, name)) for name in models}
    stored = report_data.get('cells')
    if not isinstance(stored, dict):
        stored = {}
    mismatched = [name for name, run in runs.items()
                  if run.report.get('variants') != report_data.get('variants')
                  or not _matches(stored.get(name), run.report.get('cells'))]
    if mismatched or set(stored) != set(runs):
        raise CorruptionError(f'{run_dir}: aggregate mismatch for model(s) '
                              f'{", ".join(mismatched) or "(model set differs)"}; {COMPARISON_JSON} does not '
                              f'match the model runs')

    return ComparisonArtifact(run_id=run_data.get('run_id', ''), config=run_data.get('config', {}), runs=runs,
                              report=report_data)
