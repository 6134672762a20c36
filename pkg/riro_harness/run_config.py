"""Reads and validates the JSON run configuration. Every problem found is reported in one ConfigError so a
broken config can be fixed in a single pass.

Example:
    {
      "dataset": "stories.jsonl",
      "variants": ["BASELINE", "RF", "FR", "RFR"],
      "backends": {"default": {"kind": "stub"},
                   "generate": {"kind": "http", "base_url": "http://localhost:8000",
                                "model_name": "phi-2-qlora", "api_key_env_var": "RIRO_API_KEY"}},
      "templates": {"reformulate": "prompts/reformulate.txt"},
      "parallelism": 4,
      "output_dir": "runs",
      "seed": 0,
      "split": {"fractions": [0.8, 0.2], "use": "eval"}
    }

An optional "models" list runs the whole ablation once per generate model and compares them:
    "models": [{"name": "phi-2", "backend": {"kind": "http", "base_url": "http://localhost:8000"}},
               {"name": "falcon-7b", "backend": {"kind": "http", "base_url": "http://localhost:8001",
                                                  "model_name": "falcon-7b"}}]

Relative paths resolve against the directory holding the config file."""


import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from riro_harness import run_settings
from riro_harness.backends import BackendConfig, build_backend
from riro_harness.exceptions import ConfigError
from riro_harness.pipeline import BackendSet, PipelineVariant, PromptTemplate, TemplateSet, default_template_path
from riro_harness.type_definitions import STAGE_ORDER, StageLabel


TOP_LEVEL_KEYS = {'dataset', 'variants', 'backends', 'models', 'templates', 'parallelism', 'output_dir', 'seed',
                  'split'}
MODEL_NAME = re.compile(r'[A-Za-z0-9][A-Za-z0-9._-]*')
SPLIT_USES = ('train', 'eval')


@dataclass
class RunConfig:
    dataset: Path
    variants: list
    backends: dict  # stage value -> BackendConfig, after falling back to "default"
    templates: dict  # stage value -> Path
    parallelism: int = run_settings.parallelism
    output_dir: Path = Path(run_settings.run_output_dir)
    seed: int = 0
    split: dict | None = None
    models: dict = field(default_factory=dict)  # model name -> BackendConfig of its generate stage, in order
    source: Path | None = None
    template_set: TemplateSet | None = field(default=None, repr=False, compare=False)

    def backend_set(self) -> BackendSet:
        """Builds one backend per distinct configuration, so stages with equal settings share a handle."""

        built = {}
        per_stage = {}
        for stage in STAGE_ORDER:
            config = self.backends.get(stage.value)
            if config is None:
                per_stage[stage.value] = None
                continue
            key = json.dumps(config.to_dict(), sort_keys=True)
            if key not in built:
                built[key] = build_backend(config)
            per_stage[stage.value] = built[key]

        return BackendSet(**per_stage)

    def model_backends(self) -> dict:
        """One generate backend per configured model, in configured order."""

        return {name: build_backend(config) for name, config in self.models.items()}

    def snapshot(self) -> dict:
        """Configuration as written to run.json. Holds env-var names, never key values."""

        return {
            'dataset': str(self.dataset),
            'variants': [variant.name.value for variant in self.variants],
            'backends': {stage: config.to_dict() for stage, config in self.backends.items()},
            'templates': {stage: str(path) for stage, path in self.templates.items()},
            'parallelism': self.parallelism,
            'output_dir': str(self.output_dir),
            'seed': self.seed,
            'split': self.split,
            'models': [{'name': name, 'backend': config.to_dict()} for name, config in self.models.items()],
        }


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _check_split(split, problems: list) -> dict | None:
    if split is None:
        return None
    if not isinstance(split, dict):
        problems.append('split must be an object with "fractions" and "use"')
        return None
    fractions = split.get('fractions', list(run_settings.split_fractions))
    use = split.get('use', 'eval')
    if not (isinstance(fractions, list) and len(fractions) == 2
            and all(isinstance(x, (int, float)) and not isinstance(x, bool) and x > 0 for x in fractions)
            and math.isclose(sum(fractions), 1.0)):
        problems.append(f'split.fractions must be two positive numbers summing to 1, got {fractions!r}')
    if use not in SPLIT_USES:
        problems.append(f'split.use must be one of {", ".join(SPLIT_USES)}, got {use!r}')
    return {'fractions': fractions, 'use': use}


def _check_models(raw, problems: list) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, list) or not raw:
        problems.append('models must be a non-empty list of {"name": ..., "backend": {...}} objects')
        return {}

    models = {}
    seen = set()
    for index, entry in enumerate(raw):
        if not isinstance(entry, dict) or set(entry) - {'name', 'backend'}:
            problems.append(f'models[{index}] must be an object with "name" and "backend" only')
            continue
        name = entry.get('name')
        if not isinstance(name, str) or not MODEL_NAME.fullmatch(name):
            problems.append(f'models[{index}].name must start with a letter or digit and hold only letters, digits, ".", "_" or "-", got {name!r}')
            continue
        if name in seen:
            problems.append(f'model {name} listed twice')
            continue
        seen.add(name)
        backend = entry.get('backend', {})
        if not isinstance(backend, dict):
            problems.append(f'models.{name}.backend must be an object')
            continue
        try:
            models[name] = BackendConfig.from_dict(backend)
        except ConfigError as err:
            problems.extend(f'models.{name}: {problem}' for problem in err.problems)
        except TypeError as err:
            problems.append(f'models.{name}: {err}')

    return models


def _check_backends(raw, variants: list, problems: list, covered: frozenset = frozenset()) -> dict:
    if not isinstance(raw, dict):
        problems.append('backends must be an object keyed by "default" or a stage name')
        return {}
    allowed = {'default'} | {stage.value for stage in STAGE_ORDER}
    for name in sorted(set(raw) - allowed):
        problems.append(f'unknown backend slot {name!r}')

    parsed = {}
    for name in sorted(set(raw) & allowed):
        if not isinstance(raw[name], dict):
            problems.append(f'backends.{name} must be an object')
            continue
        try:
            parsed[name] = BackendConfig.from_dict(raw[name])
        except ConfigError as err:
            problems.extend(f'backends.{name}: {problem}' for problem in err.problems)
        except TypeError as err:
            problems.append(f'backends.{name}: {err}')

    resolved = {}
    for stage in STAGE_ORDER:
        config = parsed.get(stage.value, parsed.get('default'))
        if config is not None:
            resolved[stage.value] = config
    for variant in variants:
        for stage in variant.stages:
            if stage.value not in resolved and stage.value not in raw and 'default' not in raw \
                    and stage.value not in covered:
                problems.append(f'variant {variant.name.value} needs a backend for stage {stage.value}')

    return resolved


def load_run_config(path: Path, parallelism: int | None = None, seed: int | None = None,
                    output_dir: Path | None = None) -> RunConfig:
    """Parses and validates a run configuration file. Keyword arguments override the file's values."""

    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError:
        raise ConfigError(f'config file not found: {path}') from None
    except json.JSONDecodeError as err:
        raise ConfigError(f'config file {path} is not valid JSON: {err.msg} (line {err.lineno})') from None
    if not isinstance(raw, dict):
        raise ConfigError(f'config file {path} must hold a JSON object')

    base = path.parent
    problems = [f'unknown config key {key!r}' for key in sorted(set(raw) - TOP_LEVEL_KEYS)]

    dataset = raw.get('dataset')
    if not isinstance(dataset, str) or not dataset:
        problems.append('dataset path is required')
        dataset_path = Path()
    else:
        dataset_path = base / dataset
        if not dataset_path.is_file():
            problems.append(f'dataset not found: {dataset_path}')

    variants = []
    names = raw.get('variants', [name.value for name in run_settings.default_variants])
    if not isinstance(names, list) or not names:
        problems.append('variants must be a non-empty list')
        names = []
    for name in names:
        try:
            variant = PipelineVariant.from_name(name)
        except (ValueError, KeyError):
            problems.append(f'unknown variant {name!r}')
            continue
        if variant in variants:
            problems.append(f'variant {name} listed twice')
        else:
            variants.append(variant)

    models = _check_models(raw.get('models'), problems)
    covered = frozenset({StageLabel.GENERATE.value}) if 'models' in raw else frozenset()
    backends = _check_backends(raw.get('backends', {'default': {}}), variants, problems, covered)

    raw_templates = raw.get('templates', {})
    templates = {}
    if not isinstance(raw_templates, dict):
        problems.append('templates must be an object keyed by stage name')
        raw_templates = {}
    for name in sorted(set(raw_templates) - {stage.value for stage in STAGE_ORDER}):
        problems.append(f'unknown template slot {name!r}')
    for stage in STAGE_ORDER:
        given = raw_templates.get(stage.value)
        templates[stage.value] = base / given if given else default_template_path(stage)
        if not templates[stage.value].is_file():
            problems.append(f'template not found: {templates[stage.value]}')

    template_set = None
    if all(templates[stage.value].is_file() for stage in STAGE_ORDER):
        template_set = TemplateSet(**{stage.value: PromptTemplate.load(templates[stage.value])
                                      for stage in STAGE_ORDER})
        problems.extend(template_set.problems())

    parallelism = raw.get('parallelism', run_settings.parallelism) if parallelism is None else parallelism
    if not _is_int(parallelism) or parallelism < 1:
        problems.append(f'parallelism must be a positive integer, got {parallelism!r}')
    seed = raw.get('seed', 0) if seed is None else seed
    if not _is_int(seed):
        problems.append(f'seed must be an integer, got {seed!r}')

    split = _check_split(raw.get('split'), problems)
    output = Path(output_dir) if output_dir is not None else base / raw.get('output_dir', run_settings.run_output_dir)

    if problems:
        raise ConfigError(problems)

    return RunConfig(dataset=dataset_path, variants=variants, backends=backends, templates=templates,
                     parallelism=parallelism, output_dir=output, seed=seed, split=split, models=models,
                     source=path, template_set=template_set)