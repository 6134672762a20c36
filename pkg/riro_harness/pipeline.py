"""Composes the reformulate -> generate -> reshape stages into the ablation variants and runs them over a
dataset, recording a trace of every backend call."""


import logging
import string
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from riro_harness import run_settings
from riro_harness.backends import CompletionBackend, complete
from riro_harness.exceptions import BackendError, ConfigError, DatasetError, StageError
from riro_harness.metrics import MetricReport, aggregate, evaluate_pair
from riro_harness.type_definitions import STAGE_ORDER, StageLabel, VariantName


logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).parent / 'templates'
TEMPLATE_SEPARATOR = '---'
REQUIRED_PLACEHOLDERS = {
    StageLabel.REFORMULATE: ('title', 'description'),
    StageLabel.GENERATE: ('input',),
    StageLabel.RESHAPE: ('input',),
}


@dataclass
class UserStory:
    """One record of a user-story dataset. Unknown JSONL fields are kept in `extra`."""
    id: str
    title: str
    description: str
    story_points: float | None = None
    reference_test_cases: str | None = None
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class NormalizedStory:
    origin_id: str
    text: str


@dataclass(frozen=True)
class PipelineVariant:
    name: VariantName
    reformulate_enabled: bool
    reshape_enabled: bool

    @classmethod
    def from_name(cls, name) -> 'PipelineVariant':
        return VARIANTS[VariantName(name)]

    @property
    def label(self) -> str:
        return run_settings.variant_labels[self.name]

    @property
    def stages(self) -> tuple:
        enabled = {StageLabel.REFORMULATE: self.reformulate_enabled, StageLabel.GENERATE: True,
                   StageLabel.RESHAPE: self.reshape_enabled}
        return tuple(stage for stage in STAGE_ORDER if enabled[stage])


VARIANTS = {
    VariantName.BASELINE: PipelineVariant(VariantName.BASELINE, reformulate_enabled=False, reshape_enabled=False),
    VariantName.RF: PipelineVariant(VariantName.RF, reformulate_enabled=True, reshape_enabled=False),
    VariantName.FR: PipelineVariant(VariantName.FR, reformulate_enabled=False, reshape_enabled=True),
    VariantName.RFR: PipelineVariant(VariantName.RFR, reformulate_enabled=True, reshape_enabled=True),
}


@dataclass(frozen=True)
class TraceEntry:
    stage: StageLabel
    prompt_sent: str
    response_received: str
    wall_time: float
    backend_id: str

    def to_dict(self) -> dict:
        return {'stage': self.stage.value, 'prompt_sent': self.prompt_sent,
                'response_received': self.response_received, 'wall_time': self.wall_time,
                'backend_id': self.backend_id}

    @classmethod
    def from_dict(cls, data: dict) -> 'TraceEntry':
        return cls(stage=StageLabel(data['stage']), prompt_sent=data['prompt_sent'],
                   response_received=data['response_received'], wall_time=data['wall_time'],
                   backend_id=data['backend_id'])


@dataclass
class StageTrace:
    """Ordered record of the backend calls made for one story."""
    story_id: str
    entries: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {'story_id': self.story_id, 'entries': [entry.to_dict() for entry in self.entries]}

    @classmethod
    def from_dict(cls, data: dict) -> 'StageTrace':
        return cls(story_id=data['story_id'], entries=[TraceEntry.from_dict(entry) for entry in data['entries']])


@dataclass
class PipelineResult:
    story_id: str
    variant_name: VariantName
    final_output: str
    trace: StageTrace
    metrics: MetricReport | None = None
    reference: str | None = None

    def to_dict(self) -> dict:
        return {'story_id': self.story_id, 'variant_name': self.variant_name.value, 'status': 'ok',
                'final_output': self.final_output, 'reference': self.reference,
                'metrics': self.metrics.to_dict() if self.metrics else None, 'trace': self.trace.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> 'PipelineResult':
        return cls(story_id=data['story_id'], variant_name=VariantName(data['variant_name']),
                   final_output=data['final_output'], trace=StageTrace.from_dict(data['trace']),
                   metrics=MetricReport.from_dict(data['metrics']) if data.get('metrics') else None,
                   reference=data.get('reference'))


@dataclass
class ItemFailure:
    """A (story, variant) item that stopped at a failing stage."""
    story_id: str
    variant_name: VariantName
    stage: StageLabel
    error: str
    trace: StageTrace

    def to_dict(self) -> dict:
        return {'story_id': self.story_id, 'variant_name': self.variant_name.value, 'status': 'failed',
                'stage': self.stage.value, 'error': self.error, 'trace': self.trace.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> 'ItemFailure':
        return cls(story_id=data['story_id'], variant_name=VariantName(data['variant_name']),
                   stage=StageLabel(data['stage']), error=data['error'], trace=StageTrace.from_dict(data['trace']))


class PromptTemplate:
    """A prompt template file: system prompt, a line holding only '---', then the user prompt with
    {placeholder} fields."""

    def __init__(self, name: str, system_prompt: str, user_template: str, path: Path | None = None):
        self.name = name
        self.system_prompt = system_prompt
        self.user_template = user_template
        self.path = path

    @classmethod
    def load(cls, path: Path) -> 'PromptTemplate':
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f'template file not found: {path}')
        lines = path.read_text(encoding='utf-8').splitlines()
        if TEMPLATE_SEPARATOR in lines:
            cut = lines.index(TEMPLATE_SEPARATOR)
            system_lines, user_lines = lines[:cut], lines[cut + 1:]
        else:
            system_lines, user_lines = [], lines
        return cls(name=path.stem, system_prompt='\n'.join(system_lines).strip('\n'),
                   user_template='\n'.join(user_lines).strip('\n'), path=path)

    @property
    def placeholders(self) -> set:
        return {name for _, name, _, _ in string.Formatter().parse(self.user_template) if name}

    def missing(self, required) -> list:
        return [name for name in required if name not in self.placeholders]

    def require(self, required) -> None:
        missing = self.missing(required)
        if missing:
            raise ConfigError(f'template {self.name!r} lacks placeholder(s) '
                              + ', '.join('{' + name + '}' for name in missing))
        return None

    def render(self, **values) -> str:
        try:
            return self.user_template.format_map(values)
        except (KeyError, IndexError, ValueError) as err:
            raise ConfigError(f'template {self.name!r} cannot be filled: {err}') from None


@dataclass
class TemplateSet:
    reformulate: PromptTemplate
    generate: PromptTemplate
    reshape: PromptTemplate

    @classmethod
    def from_paths(cls, reformulate: Path, generate: Path, reshape: Path) -> 'TemplateSet':
        return cls(reformulate=PromptTemplate.load(reformulate), generate=PromptTemplate.load(generate),
                   reshape=PromptTemplate.load(reshape))

    @classmethod
    def default(cls) -> 'TemplateSet':
        return cls.from_paths(*(default_template_path(stage) for stage in STAGE_ORDER))

    def for_stage(self, stage: StageLabel) -> PromptTemplate:
        return getattr(self, stage.value)

    def problems(self) -> list:
        return [f'template {self.for_stage(stage).name!r} lacks placeholder {{{name}}}'
                for stage in STAGE_ORDER for name in self.for_stage(stage).missing(REQUIRED_PLACEHOLDERS[stage])]


def default_template_path(stage: StageLabel) -> Path:
    return TEMPLATE_DIR / f'{stage.value}.v1.txt'


@dataclass
class BackendSet:
    """The backend assigned to each stage. Stages may share one backend."""
    reformulate: CompletionBackend | None = None
    generate: CompletionBackend | None = None
    reshape: CompletionBackend | None = None

    @classmethod
    def shared(cls, backend: CompletionBackend) -> 'BackendSet':
        return cls(reformulate=backend, generate=backend, reshape=backend)

    def for_stage(self, stage: StageLabel) -> CompletionBackend | None:
        return getattr(self, stage.value)


def _call_stage(stage: StageLabel, user_prompt: str, backend: CompletionBackend, template: PromptTemplate,
                story_id: str, trace: StageTrace | None) -> str:
    """Sends one stage prompt and records the exchange. Backend failures become a StageError."""

    start = time.perf_counter()
    try:
        response = complete(backend, backend.request(template.system_prompt, user_prompt))
    except BackendError as err:
        logger.warning(f'Stage {stage.value} failed for story {story_id}: {err}')
        raise StageError(story_id, stage, err, trace) from err
    wall_time = time.perf_counter() - start

    if trace is not None:
        trace.entries.append(TraceEntry(stage=stage, prompt_sent=user_prompt, response_received=response.text,
                                        wall_time=wall_time, backend_id=backend.backend_id))
    logger.debug(f'Stage {stage.value} for story {story_id} took {wall_time:0.3f} s')

    return response.text


def reformulate(story: UserStory, backend: CompletionBackend, template: PromptTemplate,
                trace: StageTrace | None = None) -> NormalizedStory:
    """Rewrites a raw story into the "Action, Condition, Result" layout."""

    template.require(REQUIRED_PLACEHOLDERS[StageLabel.REFORMULATE])
    prompt = template.render(title=story.title, description=story.description)
    text = _call_stage(StageLabel.REFORMULATE, prompt, backend, template, story.id, trace)

    return NormalizedStory(origin_id=story.id, text=text)


def generate(input_text: str, backend: CompletionBackend, template: PromptTemplate,
             trace: StageTrace | None = None) -> str:
    """Produces raw test-case text from a (possibly normalised) story."""

    if not input_text.strip():
        raise ValueError('generate needs non-empty input text')
    template.require(REQUIRED_PLACEHOLDERS[StageLabel.GENERATE])
    story_id = trace.story_id if trace is not None else ''

    return _call_stage(StageLabel.GENERATE, template.render(input=input_text), backend, template, story_id, trace)


def reshape(raw_output: str, backend: CompletionBackend, template: PromptTemplate,
            trace: StageTrace | None = None) -> str:
    """Rewrites generated test-case text into the numbered-step layout."""

    if not raw_output.strip():
        raise ValueError('reshape needs non-empty raw output')
    template.require(REQUIRED_PLACEHOLDERS[StageLabel.RESHAPE])
    story_id = trace.story_id if trace is not None else ''

    return _call_stage(StageLabel.RESHAPE, template.render(input=raw_output), backend, template, story_id, trace)


def _require_backends(variant: PipelineVariant, backends: BackendSet) -> None:
    missing = [stage.value for stage in variant.stages if backends.for_stage(stage) is None]
    if missing:
        raise ConfigError(f'variant {variant.name.value} has no backend for stage(s): {", ".join(missing)}')
    return None


def run_variant(story: UserStory, variant: PipelineVariant, backends: BackendSet,
                templates: TemplateSet) -> PipelineResult:
    """Runs the enabled stages in pipeline order. A failing stage raises StageError with the partial trace."""

    _require_backends(variant, backends)
    trace = StageTrace(story_id=story.id)

    text = story.description
    if variant.reformulate_enabled:
        text = reformulate(story, backends.reformulate, templates.reformulate, trace).text
    text = generate(text, backends.generate, templates.generate, trace)
    if variant.reshape_enabled:
        text = reshape(text, backends.reshape, templates.reshape, trace)

    metrics = None
    if story.reference_test_cases is not None:
        metrics = evaluate_pair(text, story.reference_test_cases)

    return PipelineResult(story_id=story.id, variant_name=variant.name, final_output=text, trace=trace,
                          metrics=metrics, reference=story.reference_test_cases)


@dataclass
class CellSummary:
    """One column of the comparison table: a variant's aggregated metrics and how many items fed it."""
    variant_name: VariantName
    label: str
    items: int
    failed: int
    metrics: MetricReport | None

    @property
    def complete(self) -> bool:
        return self.failed == 0 and self.metrics is not None

    def to_dict(self) -> dict:
        return {'label': self.label, 'items': self.items, 'failed': self.failed, 'complete': self.complete,
                'metrics': self.metrics.to_dict() if self.metrics else None}

    @classmethod
    def from_dict(cls, name: str, data: dict) -> 'CellSummary':
        return cls(variant_name=VariantName(name), label=data['label'], items=data['items'],
                   failed=data['failed'],
                   metrics=MetricReport.from_dict(data['metrics']) if data.get('metrics') else None)


def summarise_cells(variants: list, results: list, failures: list) -> list:
    """Aggregates per-item metrics into one CellSummary per variant, in variant order."""

    cells = []
    for variant in variants:
        reports = [result.metrics for result in results
                   if result.variant_name is variant.name and result.metrics is not None]
        failed = sum(1 for failure in failures if failure.variant_name is variant.name)
        cells.append(CellSummary(variant_name=variant.name, label=variant.label, items=len(reports),
                                 failed=failed, metrics=aggregate(reports) if reports else None))
    return cells


@dataclass
class AblationReport:
    variants: list
    results: list
    failures: list
    cells: list

    @property
    def complete(self) -> bool:
        return not self.failures and all(cell.complete for cell in self.cells)

    def cell(self, name) -> CellSummary:
        name = VariantName(name)
        return next(cell for cell in self.cells if cell.variant_name is name)

    def to_dict(self) -> dict:
        """The content of report.json. Holds aggregates only, so it does not vary with timing."""
        return {
            'format_version': run_settings.dataset_format_version,
            'variants': [variant.name.value for variant in self.variants],
            'complete': self.complete,
            'cells': {cell.variant_name.value: cell.to_dict() for cell in self.cells},
        }


def _run_item(story: UserStory, variant: PipelineVariant, backends: BackendSet, templates: TemplateSet,
              on_item: Callable | None):
    try:
        outcome = run_variant(story, variant, backends, templates)
    except StageError as err:
        outcome = ItemFailure(story_id=story.id, variant_name=variant.name, stage=err.stage, error=str(err.cause),
                              trace=err.trace if err.trace is not None else StageTrace(story_id=story.id))
    if on_item is not None:
        on_item(outcome)
    return outcome


def run_ablation(dataset: list, variants: list, backends: BackendSet, templates: TemplateSet,
                 parallelism: int = run_settings.parallelism, on_item: Callable | None = None,
                 require_references: bool = True) -> AblationReport:
    """Runs every (story, variant) pair. Failed items are recorded, not raised. `on_item` receives each
    PipelineResult or ItemFailure as soon as it exists, from the worker that produced it."""

    if not dataset:
        raise DatasetError('ablation needs a non-empty dataset')
    if parallelism < 1:
        raise ConfigError(f'parallelism must be >= 1, got {parallelism}')
    if require_references:
        unreferenced = [story.id for story in dataset if story.reference_test_cases is None]
        if unreferenced:
            raise DatasetError(f'stories without reference test cases: {", ".join(unreferenced)}')
    for variant in variants:
        _require_backends(variant, backends)

    jobs = [(story, variant) for story in dataset for variant in variants]
    logger.info(f'Running {len(jobs)} items ({len(dataset)} stories x {len(variants)} variants) '
                f'with parallelism {parallelism}')

    # map() yields in submission order, so the report never depends on completion order
    with ThreadPoolExecutor(max_workers=parallelism) as executor:
        outcomes = list(executor.map(lambda job: _run_item(*job, backends, templates, on_item), jobs))

    results = [outcome for outcome in outcomes if isinstance(outcome, PipelineResult)]
    failures = [outcome for outcome in outcomes if isinstance(outcome, ItemFailure)]
    if failures:
        logger.warning(f'{len(failures)} of {len(jobs)} items failed')

    return AblationReport(variants=list(variants), results=results, failures=failures,
                          cells=summarise_cells(variants, results, failures))


@dataclass
class ModelComparison:
    """One ablation per generate model, all over the same stories and variants."""
    models: list  # model names, in configured order
    reports: dict  # model name -> AblationReport

    @property
    def variants(self) -> list:
        return self.reports[self.models[0]].variants if self.models else []

    @property
    def results(self) -> list:
        return [result for name in self.models for result in self.reports[name].results]

    @property
    def failures(self) -> list:
        return [failure for name in self.models for failure in self.reports[name].failures]

    @property
    def complete(self) -> bool:
        return all(report.complete for report in self.reports.values())

    def cell(self, model: str, name) -> CellSummary:
        return self.reports[model].cell(name)

    def to_dict(self) -> dict:
        """The content of comparison.json: cells keyed by model, then by variant."""
        return {
            'format_version': run_settings.dataset_format_version,
            'models': list(self.models),
            'variants': [variant.name.value for variant in self.variants],
            'complete': self.complete,
            'cells': {name: self.reports[name].to_dict()['cells'] for name in self.models},
        }


def run_model_comparison(dataset: list, variants: list, backends: BackendSet, models: dict, templates: TemplateSet,
                         parallelism: int = run_settings.parallelism, on_item_for: Callable | None = None,
                         require_references: bool = True) -> ModelComparison:
    """Runs the same ablation once per entry of `models`, which maps a model name to the backend taking the
    generate stage. The other stages keep the backends in `backends`. `on_item_for(name)` gives the on_item
    callback for that model's ablation."""

    if not models:
        raise ConfigError('a model comparison needs at least one model')

    reports = {}
    for name, generator in models.items():
        logger.info(f'Ablation for model {name}')
        reports[name] = run_ablation(dataset, variants, replace(backends, generate=generator), templates,
                                     parallelism=parallelism,
                                     on_item=on_item_for(name) if on_item_for is not None else None,
                                     require_references=require_references)

    return ModelComparison(models=list(models), reports=reports)
