import json

import pytest

from riro_harness.exceptions import DatasetError
from riro_harness.pipeline import UserStory
from riro_harness.story_import import (
    DatasetFile, load_jsonl, record_from_dict, record_to_dict, split, synthesize_fixtures, validate_record,
    write_jsonl,
)
from riro_harness.stub_rules import canonical_test_case, parse_triple, reformulate_text


def write_lines(path, lines):
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def story_line(story_id='s1', **fields):
    data = {'id': story_id, 'title': 'Login', 'description': 'user logs in'}
    data.update(fields)
    return json.dumps(data)


class TestLoad:

    def test_loads_records_and_skips_blank_lines(self, tmp_path):
        path = write_lines(tmp_path / 'd.jsonl', [story_line('a', story_points=3, reference='1. x'), '',
                                                  story_line('b', sprint=4)])
        dataset = load_jsonl(path)

        assert dataset.ids() == ['a', 'b']
        assert dataset.get('a').story_points == 3
        assert dataset.get('a').reference_test_cases == '1. x'
        assert dataset.get('b').reference_test_cases is None
        assert dataset.get('b').extra == {'sprint': 4}

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError, match='not found'):
            load_jsonl(tmp_path / 'absent.jsonl')

    def test_invalid_json_names_line(self, tmp_path):
        path = write_lines(tmp_path / 'd.jsonl', [story_line('a'), '{"id": "b",'])
        with pytest.raises(DatasetError) as info:
            load_jsonl(path)
        assert info.value.line_number == 2
        assert str(info.value).startswith('line 2:')

    def test_missing_field(self, tmp_path):
        path = write_lines(tmp_path / 'd.jsonl', [json.dumps({'id': 'a', 'title': 't'})])
        with pytest.raises(DatasetError, match='description'):
            load_jsonl(path)

    def test_duplicate_id(self, tmp_path):
        path = write_lines(tmp_path / 'd.jsonl', [story_line('a'), story_line('b'), story_line('a')])
        with pytest.raises(DatasetError, match='first seen on line 1') as info:
            load_jsonl(path)
        assert info.value.line_number == 3

    def test_not_an_object(self, tmp_path):
        path = write_lines(tmp_path / 'd.jsonl', ['[1, 2]'])
        with pytest.raises(DatasetError, match='JSON object'):
            load_jsonl(path)

    def test_unknown_id_lookup(self):
        with pytest.raises(DatasetError, match='nope'):
            synthesize_fixtures(2).get('nope')


class TestValidate:

    def test_valid(self):
        assert validate_record(UserStory(id='a', title='', description='d', story_points=2.5)) == []

    @pytest.mark.parametrize('story, problem', [
        (UserStory(id=' ', title='t', description='d'), 'id'),
        (UserStory(id='a/b', title='t', description='d'), 'path separators'),
        (UserStory(id='a', title='t', description='  '), 'description'),
        (UserStory(id='a', title='t', description='d', story_points=-1), 'non-negative'),
        (UserStory(id='a', title='t', description='d', story_points=True), 'number'),
        (UserStory(id='a', title='t', description='d', story_points=float('inf')), 'number'),
        (UserStory(id='a', title='t', description='d', reference_test_cases=''), 'reference'),
    ])
    def test_violations(self, story, problem):
        violations = validate_record(story)
        assert len(violations) == 1
        assert problem in violations[0]


class TestWrite:

    def test_written_file_loads_back(self, tmp_path):
        dataset = synthesize_fixtures(4)
        path = write_jsonl(dataset, tmp_path / 'sub' / 'out.jsonl')
        loaded = load_jsonl(path)
        assert loaded.records == dataset.records

    def test_lf_endings_and_utf8(self, tmp_path):
        dataset = DatasetFile(path=None, records=[UserStory(id='ü', title='Café', description='user pays')])
        path = write_jsonl(dataset, tmp_path / 'out.jsonl')
        raw = path.read_bytes()
        assert b'\r\n' not in raw
        assert 'Café' in raw.decode('utf-8')

    def test_record_dict_keeps_extra_fields(self):
        data = {'id': 'a', 'title': 't', 'description': 'd', 'reference': 'r', 'epic': 'billing'}
        assert record_to_dict(record_from_dict(data)) == data


class TestSplit:

    def test_partition_sizes(self):
        train, evaluation = split(synthesize_fixtures(10), seed=1, fractions=(0.8, 0.2))
        assert (len(train), len(evaluation)) == (8, 2)

    def test_train_size_is_floored(self):
        train, evaluation = split(synthesize_fixtures(7), seed=1, fractions=(0.5, 0.5))
        assert (len(train), len(evaluation)) == (3, 4)

    def test_disjoint_and_covering(self):
        dataset = synthesize_fixtures(20)
        train, evaluation = split(dataset, seed=3)
        assert set(train.ids()).isdisjoint(evaluation.ids())
        assert sorted(train.ids() + evaluation.ids()) == sorted(dataset.ids())

    def test_seeded(self):
        dataset = synthesize_fixtures(20)
        assert split(dataset, seed=5)[0].ids() == split(dataset, seed=5)[0].ids()
        assert split(dataset, seed=5)[0].ids() != split(dataset, seed=6)[0].ids()

    def test_rejects_bad_fractions(self):
        with pytest.raises(ValueError):
            split(synthesize_fixtures(4), seed=0, fractions=(0.7, 0.2))

    def test_rejects_empty(self):
        with pytest.raises(DatasetError):
            split(DatasetFile(path=None), seed=0)


class TestFixtures:

    def test_deterministic(self):
        assert synthesize_fixtures(5, seed=11).records == synthesize_fixtures(5, seed=11).records

    def test_ids_and_references(self):
        dataset = synthesize_fixtures(12)
        assert dataset.ids()[:2] == ['story-001', 'story-002']
        for record in dataset.records:
            assert validate_record(record) == []
            assert record.reference_test_cases == canonical_test_case(record.description)

    def test_reformulation_finds_condition_and_result(self):
        for record in synthesize_fixtures(30, seed=2).records:
            _, condition, result = parse_triple(reformulate_text(record.description))
            assert condition != 'always'
            assert result != 'the action succeeds'

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            synthesize_fixtures(0)
