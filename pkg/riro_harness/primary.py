"""Command-line entry point: evaluate candidate files, run pipeline variants, run ablations, re-render reports
and print parameter accounting.

    riro-harness evaluate candidates.txt references.txt --format json
    riro-harness --config run.json run [--story-id ID]
    riro-harness --config run.json ablate --parallelism 8
    riro-harness report runs/20260101-120000-ab12cd --format md
    riro-harness params 100 100 4 4
    riro-harness fixtures 20 --seed 7 --output stories.jsonl
"""


import argparse
import logging
import sys
import time
import uuid
from datetime import datetime
from pathlib import Path
from types import SimpleNamespace

from riro_harness import log_gen, run_settings
from riro_harness.exceptions import ConfigError, CorruptionError, DatasetError, HarnessError
from riro_harness.metrics import MetricReport, aggregate, evaluate_pair
from riro_harness.model_math import storage_estimate, trainable_param_count
from riro_harness.outputs_gen import (
    ItemWriter, RunArtifact, dump_json, is_comparison, load_comparison, load_run, model_dir, persist_comparison,
    persist_run, render_comparison_json, render_comparison_markdown, render_json, render_markdown, render_table,
)
from riro_harness.pipeline import run_ablation, run_model_comparison, summarise_cells
from riro_harness.run_config import RunConfig, load_run_config
from riro_harness.story_import import load_jsonl, split, synthesize_fixtures, write_jsonl
from riro_harness.type_definitions import ExitCode, OutputFormat


logger = logging.getLogger(__name__)


def read_lines(path: Path) -> list:
    try:
        return Path(path).read_text(encoding='utf-8').splitlines()
    except OSError as err:
        raise DatasetError(f'cannot read {path}: {err.strerror}') from None


def cmd_evaluate(candidates_file: Path, references_file: Path) -> MetricReport:
    """Scores line i of the candidates file against line i of the references file and averages."""

    candidates = read_lines(candidates_file)
    references = read_lines(references_file)
    if len(candidates) != len(references):
        raise DatasetError(f'line count mismatch: {len(candidates)} ≠ {len(references)}')
    if not candidates:
        raise DatasetError(f'{candidates_file} has no lines to evaluate')

    return aggregate([evaluate_pair(candidate, reference) for candidate, reference in zip(candidates, references)])


def render_evaluation(report: MetricReport, output_format: OutputFormat) -> str:
    if output_format is OutputFormat.JSON:
        return dump_json(report.to_dict())
    return render_table([SimpleNamespace(label='Candidates', metrics=report, complete=True)])


def new_run_id() -> str:
    return f'{datetime.now():%Y%m%d-%H%M%S}-{uuid.uuid4().hex[:6]}'


def select_stories(config: RunConfig, story_id: str | None = None) -> list:
    dataset = load_jsonl(config.dataset)
    if config.split is not None:
        train, evaluation = split(dataset, config.seed, tuple(config.split['fractions']))
        dataset = train if config.split['use'] == 'train' else evaluation
        if not dataset.records:
            raise DatasetError(f'the {config.split["use"]} partition is empty')
    if story_id is not None:
        return [dataset.get(story_id)]
    return dataset.records


def execute_run(config: RunConfig, stories: list, require_references: bool) -> tuple:
    """Runs the configured variants over the stories, once per model when models are configured, and persists
    the run directory."""

    run_id = new_run_id()
    run_dir = config.output_dir / run_id
    snapshot = config.snapshot()
    log_path = log_gen.gen_setup_file(run_dir, snapshot)
    start = time.perf_counter()

    try:
        if config.models:
            comparison = run_model_comparison(stories, config.variants, config.backend_set(),
                                              config.model_backends(), config.template_set,
                                              parallelism=config.parallelism,
                                              on_item_for=lambda name: ItemWriter(model_dir(run_dir, name)),
                                              require_references=require_references)
            artifact = persist_comparison(run_dir, run_id, snapshot, comparison, write_items=False)
        else:
            report = run_ablation(stories, config.variants, config.backend_set(), config.template_set,
                                  parallelism=config.parallelism, on_item=ItemWriter(run_dir),
                                  require_references=require_references)
            artifact = persist_run(run_dir, run_id, snapshot, report, write_items=False)
        hrs, mins, secs = log_gen.convert_timestamp(time_start=start, time_end=time.perf_counter())
        logger.info(f'Elapsed time: {hrs} hours, {mins} minutes, {secs:0.2f} seconds')
    finally:
        log_gen.detach_run_log(log_path)

    return run_dir, artifact


def cmd_run(config: RunConfig, story_id: str | None = None) -> tuple:
    """Runs the configured variant(s) over the dataset, or over one story. References are optional."""

    return execute_run(config, select_stories(config, story_id), require_references=False)


def cmd_ablate(config: RunConfig) -> tuple:
    """Runs every configured variant over the dataset and writes the comparison report."""

    if len(config.variants) < 2 and len(config.models) < 2:
        raise ConfigError('an ablation needs at least two variants or two models to compare')

    return execute_run(config, select_stories(config), require_references=True)


def cmd_report(run_dir: Path, output_format: OutputFormat) -> str:
    """Re-renders a run's report from its item files. Loading raises if they disagree with the stored
    aggregates."""

    if is_comparison(run_dir):
        comparison = load_comparison(run_dir).comparison()
        if output_format is OutputFormat.JSON:
            return render_comparison_json(comparison)
        return render_comparison_markdown(comparison)

    artifact: RunArtifact = load_run(run_dir)
    cells = summarise_cells(artifact.variants, artifact.results, artifact.failures)
    if output_format is OutputFormat.JSON:
        return render_json(cells)
    return render_markdown(cells)


def cmd_params(m: int, n: int, r: int, bits: int, block_size: int = run_settings.quant_block_size) -> str:
    """Parameter and storage accounting for one adapted m x n weight."""

    count = trainable_param_count(m, n, r)
    storage = storage_estimate(m, n, bits, block_size)
    decimals = run_settings.display_decimals

    return (f'weight = {m} x {n}, rank = {r}, bits = {bits}, block = {block_size}\n'
            f'full = {count.full}\n'
            f'trainable = {count.trainable}\n'
            f'ratio = {count.ratio:.{decimals}f}\n'
            f'quantized storage = {storage.quantized_bytes:.{decimals}f} bytes\n'
            f'{run_settings.baseline_weight_bits}-bit storage = {storage.baseline_bytes:.{decimals}f} bytes\n'
            f'storage saving = {storage.saving:.{decimals}f}\n')


def cmd_fixtures(n: int, seed: int, output: Path) -> Path:
    return write_jsonl(synthesize_fixtures(n, seed), output)


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, default=argparse.SUPPRESS, help='JSON run configuration')
    common.add_argument('--output', type=Path, default=argparse.SUPPRESS,
                        help='output file, or run directory root for run/ablate')
    common.add_argument('--format', choices=[fmt.value for fmt in OutputFormat], default=argparse.SUPPRESS)
    common.add_argument('--parallelism', type=int, default=argparse.SUPPRESS)
    common.add_argument('--seed', type=int, default=argparse.SUPPRESS)
    common.add_argument('--verbose', action='store_true', default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog='riro-harness', parents=[common],
                                     description='Reformulate/generate/reshape pipeline harness.')
    commands = parser.add_subparsers(dest='command', required=True)

    evaluate = commands.add_parser('evaluate', parents=[common], help='score candidates against references')
    evaluate.add_argument('candidates', type=Path)
    evaluate.add_argument('references', type=Path)

    run = commands.add_parser('run', parents=[common], help='run the configured variant(s)')
    run.add_argument('--story-id', default=None)

    commands.add_parser('ablate', parents=[common], help='run all configured variants and compare them')

    report = commands.add_parser('report', parents=[common], help='re-render a run report from its items')
    report.add_argument('run_dir', type=Path)

    params = commands.add_parser('params', parents=[common], help='parameter accounting for a LoRA adapter')
    params.add_argument('m', type=int)
    params.add_argument('n', type=int)
    params.add_argument('r', type=int)
    params.add_argument('bits', type=int)
    params.add_argument('--block-size', type=int, default=run_settings.quant_block_size)

    fixtures = commands.add_parser('fixtures', parents=[common], help='write a synthetic story dataset')
    fixtures.add_argument('n', type=int)

    return parser


def emit(text: str, output: Path | None = None) -> None:
    """The single writer for user-visible output."""

    if output is None:
        sys.stdout.write(text if text.endswith('\n') else text + '\n')
        sys.stdout.flush()
    else:
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(text, encoding='utf-8')

    return None


def dispatch(args: argparse.Namespace) -> int:
    output = getattr(args, 'output', None)
    output_format = OutputFormat(getattr(args, 'format', OutputFormat.MD.value))

    if args.command == 'evaluate':
        emit(render_evaluation(cmd_evaluate(args.candidates, args.references), output_format), output)
        return ExitCode.OK

    if args.command == 'report':
        emit(cmd_report(args.run_dir, output_format), output)
        return ExitCode.OK

    if args.command == 'params':
        emit(cmd_params(args.m, args.n, args.r, args.bits, args.block_size), output)
        return ExitCode.OK

    if args.command == 'fixtures':
        if output is None:
            raise ConfigError('fixtures needs --output for the dataset file')
        emit(str(cmd_fixtures(args.n, getattr(args, 'seed', run_settings.fixture_seed), output)))
        return ExitCode.OK

    config_path = getattr(args, 'config', None)
    if config_path is None:
        raise ConfigError(f'{args.command} needs --config')
    config = load_run_config(config_path, parallelism=getattr(args, 'parallelism', None),
                             seed=getattr(args, 'seed', None), output_dir=output)
    if args.command == 'run':
        run_dir, artifact = cmd_run(config, args.story_id)
    else:
        run_dir, artifact = cmd_ablate(config)

    emit(str(run_dir))
    if artifact.failures:
        logger.error(f'{len(artifact.failures)} item(s) failed; see the item files under {run_dir}')
        return ExitCode.RUNTIME
    return ExitCode.OK


def main(argv: list | None = None) -> int:
    """Main container for executing a command. Returns the process exit code."""

    args = build_parser().parse_args(argv)
    log_gen.configure_logging(getattr(args, 'verbose', False))

    try:
        return int(dispatch(args))
    except (ConfigError, DatasetError, ValueError) as err:
        logger.error(str(err))
        return int(ExitCode.CONFIG)
    except CorruptionError as err:
        logger.error(str(err))
        return int(ExitCode.CORRUPTION)
    except HarnessError as err:
        logger.error(str(err))
        return int(ExitCode.RUNTIME)
