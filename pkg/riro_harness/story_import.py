"""This module is responsible for importing user-story datasets from JSON Lines files, validating their records,
splitting them into train/eval partitions and synthesizing fixture datasets when no real corpus is at hand.

Dataset line schema: {"id", "title", "description", "story_points"?, "reference"?}. Unknown fields are kept
on the record but play no part in the pipeline."""


import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from riro_harness import run_settings, stub_rules
from riro_harness.exceptions import DatasetError
from riro_harness.pipeline import UserStory


logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ('id', 'title', 'description')
KNOWN_FIELDS = REQUIRED_FIELDS + ('story_points', 'reference')


@dataclass
class DatasetFile:
    path: Path | None
    records: list = field(default_factory=list)
    format_version: str = run_settings.dataset_format_version

    def __len__(self):
        return len(self.records)

    def ids(self) -> list:
        return [record.id for record in self.records]

    def get(self, story_id: str) -> UserStory:
        for record in self.records:
            if record.id == story_id:
                return record
        raise DatasetError(f'no story with id {story_id!r}')


def validate_record(record: UserStory) -> list:
    """Returns the record's violations. An empty list means the record is fine."""

    violations = []
    if not isinstance(record.id, str) or not record.id.strip():
        violations.append('id must be a non-empty string')
    elif '/' in record.id or '\\' in record.id:
        violations.append('id must not contain path separators')
    if not isinstance(record.title, str):
        violations.append('title must be a string')
    if not isinstance(record.description, str) or not record.description.strip():
        violations.append('description must be a non-empty string')
    if record.story_points is not None:
        if isinstance(record.story_points, bool) or not isinstance(record.story_points, (int, float)) \
                or not math.isfinite(record.story_points):
            violations.append('story_points must be a number')
        elif record.story_points < 0:
            violations.append('story_points must be non-negative')
    if record.reference_test_cases is not None:
        if not isinstance(record.reference_test_cases, str) or not record.reference_test_cases.strip():
            violations.append('reference must be a non-empty string when present')

    return violations


def record_from_dict(data: dict) -> UserStory:
    missing = [name for name in REQUIRED_FIELDS if name not in data]
    if missing:
        raise ValueError(f'missing required field(s): {", ".join(missing)}')

    return UserStory(id=data['id'], title=data['title'], description=data['description'],
                     story_points=data.get('story_points'), reference_test_cases=data.get('reference'),
                     extra={key: value for key, value in data.items() if key not in KNOWN_FIELDS})


def record_to_dict(record: UserStory) -> dict:
    data = {'id': record.id, 'title': record.title, 'description': record.description}
    if record.story_points is not None:
        data['story_points'] = record.story_points
    if record.reference_test_cases is not None:
        data['reference'] = record.reference_test_cases
    data.update(record.extra)
    return data


def load_jsonl(path: Path) -> DatasetFile:
    """Reads one story per non-blank line. Errors name the offending line."""

    path = Path(path)
    if not path.is_file():
        raise DatasetError(f'dataset file not found: {path}')

    records = []
    seen = {}
    with open(path, encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as err:
                raise DatasetError(f'invalid JSON: {err.msg}', line_number) from None
            if not isinstance(data, dict):
                raise DatasetError('expected a JSON object', line_number)
            try:
                record = record_from_dict(data)
            except ValueError as err:
                raise DatasetError(str(err), line_number) from None

            violations = validate_record(record)
            if violations:
                raise DatasetError('; '.join(violations), line_number)
            if record.id in seen:
                raise DatasetError(f'duplicate id {record.id!r} (first seen on line {seen[record.id]})', line_number)
            seen[record.id] = line_number
            records.append(record)

    logger.info(f'Loaded {len(records)} stories from {path}')

    return DatasetFile(path=path, records=records)


def write_jsonl(dataset: DatasetFile, path: Path) -> Path:
    """Writes the dataset as UTF-8 JSON Lines with LF endings."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, mode='w', encoding='utf-8', newline='\n') as f:
        for record in dataset.records:
            f.write(json.dumps(record_to_dict(record), ensure_ascii=False) + '\n')

    return path


def split(dataset: DatasetFile, seed: int, fractions: tuple = run_settings.split_fractions) -> tuple:
    """Seeded shuffle, then the first floor(n * train) records form the train partition and the rest eval."""

    if not dataset.records:
        raise DatasetError('cannot split an empty dataset')
    if len(fractions) != 2 or any(fraction <= 0 for fraction in fractions) \
            or not math.isclose(sum(fractions), 1.0):
        raise ValueError(f'fractions must be two positive numbers summing to 1, got {fractions}')

    order = np.random.default_rng(seed).permutation(len(dataset.records))
    shuffled = [dataset.records[i] for i in order]
    n_train = math.floor(len(shuffled) * fractions[0] + 1e-9)

    return (DatasetFile(path=None, records=shuffled[:n_train], format_version=dataset.format_version),
            DatasetFile(path=None, records=shuffled[n_train:], format_version=dataset.format_version))


# grammar for synthetic stories: "<actor> <action> <condition keyword> <condition> <result keyword> <result>"
ACTORS = ('user', 'admin', 'guest', 'customer', 'editor')
ACTIONS = (
    'opens the settings page', 'submits the login form', 'uploads a profile picture', 'exports the monthly report',
    'adds an item to the cart', 'resets the password', 'deletes a saved draft', 'searches for a product',
    'changes the display language', 'shares a document link',
)
CONDITIONS = (
    'the session is active', 'the password is wrong', 'the file is larger than the limit',
    'the network is offline', 'the cart is empty', 'the account is locked', 'the form has missing fields',
    'two factor login is enabled', 'the link has expired', 'the browser blocks cookies',
)
RESULTS = (
    'sees the saved preferences', 'gets an error message', 'receives a confirmation email',
    'is redirected to the dashboard', 'sees a warning banner', 'is asked to retry later',
    'sees the updated total', 'is logged out', 'receives a download link', 'sees an empty state page',
)
CONDITION_WORDS = ('when', 'if', 'while')
RESULT_WORDS = ('and', 'then')
STORY_POINTS = (1, 2, 3, 5, 8)


def synthesize_fixtures(n: int, seed: int = run_settings.fixture_seed) -> DatasetFile:
    """n synthetic stories drawn from a small grammar. References are the stub pipeline's canonical expansion,
    so a full stub run reproduces them exactly."""

    if n < 1:
        raise ValueError(f'fixture count must be >= 1, got {n}')

    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        actor = ACTORS[rng.integers(len(ACTORS))]
        action = ACTIONS[rng.integers(len(ACTIONS))]
        condition = CONDITIONS[rng.integers(len(CONDITIONS))]
        result = RESULTS[rng.integers(len(RESULTS))]
        condition_word = CONDITION_WORDS[rng.integers(len(CONDITION_WORDS))]
        result_word = RESULT_WORDS[rng.integers(len(RESULT_WORDS))]

        description = f'{actor} {action} {condition_word} {condition} {result_word} {result}'
        records.append(UserStory(
            id=f'story-{i + 1:03d}',
            title=f'{actor.capitalize()} {action}',
            description=description,
            story_points=STORY_POINTS[rng.integers(len(STORY_POINTS))],
            reference_test_cases=stub_rules.canonical_test_case(description),
        ))

    return DatasetFile(path=None, records=records)
