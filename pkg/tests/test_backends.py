import socket

import pytest

from riro_harness import backends
from riro_harness.backends import (
    BackendConfig, CompletionRequest, HttpBackend, StubBackend, build_backend, chat_payload, complete,
)
from riro_harness.exceptions import (
    BackendProtocolError, BackendStatusError, BackendTimeoutError, BackendTransportError, ConfigError,
    EmptyCompletionError,
)
from riro_harness.type_definitions import BackendKind


KEY_VAR = 'RIRO_TEST_KEY'
SECRET = 'sk-test-not-a-real-key'


def completion_body(text: str, prompt_tokens: int = 5, completion_tokens: int = 3) -> dict:
    return {'choices': [{'message': {'role': 'assistant', 'content': text}}],
            'usage': {'prompt_tokens': prompt_tokens, 'completion_tokens': completion_tokens}}


def http_backend(server_url: str, **settings) -> HttpBackend:
    values = {'kind': BackendKind.HTTP, 'base_url': server_url, 'api_key_env_var': KEY_VAR,
              'retry_backoff_base': 0.0, 'timeout': 5.0}
    values.update(settings)
    return HttpBackend(BackendConfig(**values))


def unused_port() -> int:
    with socket.socket() as sock:
        sock.bind(('127.0.0.1', 0))
        return sock.getsockname()[1]


@pytest.fixture
def request_():
    return CompletionRequest(model_name='phi-2', system_prompt='#stage:generate', user_prompt='Write tests.\n\nx')


class TestConfig:

    def test_http_needs_base_url(self):
        with pytest.raises(ConfigError, match='base_url'):
            BackendConfig(kind=BackendKind.HTTP)

    def test_lists_every_problem(self):
        with pytest.raises(ConfigError) as info:
            BackendConfig(timeout=0, max_retries=-1)
        assert len(info.value.problems) == 2

    @pytest.mark.parametrize('setting, value', [
        ('max_retries', 1.5), ('max_retries', True), ('max_tokens', '512'), ('max_tokens', 0.5),
        ('timeout', 'soon'), ('timeout', float('inf')), ('retry_backoff_base', None), ('temperature', '0'),
    ])
    def test_rejects_wrong_types(self, setting, value):
        with pytest.raises(ConfigError, match=setting) as info:
            BackendConfig(**{setting: value})
        assert len(info.value.problems) == 1

    def test_type_problems_are_listed_together(self):
        with pytest.raises(ConfigError) as info:
            BackendConfig.from_dict({'kind': 'http', 'base_url': 'http://x', 'max_retries': 1.5, 'max_tokens': 'a'})
        assert len(info.value.problems) == 2

    def test_from_dict_rejects_unknown_setting(self):
        with pytest.raises(ConfigError, match='api_key'):
            BackendConfig.from_dict({'kind': 'http', 'base_url': 'http://x', 'api_key': SECRET})

    def test_from_dict_rejects_unknown_kind(self):
        with pytest.raises(ConfigError, match='grpc'):
            BackendConfig.from_dict({'kind': 'grpc'})

    def test_dict_round_trip(self):
        config = BackendConfig.from_dict({'kind': 'http', 'base_url': 'http://x', 'max_retries': 5})
        assert BackendConfig.from_dict(config.to_dict()) == config

    def test_build_backend_picks_class(self):
        assert isinstance(build_backend(BackendConfig()), StubBackend)
        assert isinstance(build_backend(BackendConfig(kind=BackendKind.HTTP, base_url='http://x')), HttpBackend)


class TestRequest:

    def test_rejects_empty_user_prompt(self):
        with pytest.raises(ValueError):
            CompletionRequest(model_name='m', system_prompt='s', user_prompt='')

    def test_rejects_bad_sampling_settings(self):
        with pytest.raises(ValueError):
            CompletionRequest(model_name='m', system_prompt='s', user_prompt='u', max_tokens=0)
        with pytest.raises(ValueError):
            CompletionRequest(model_name='m', system_prompt='s', user_prompt='u', temperature=-0.1)

    def test_chat_payload(self, request_):
        assert chat_payload(request_) == {
            'model': 'phi-2',
            'messages': [{'role': 'system', 'content': '#stage:generate'},
                         {'role': 'user', 'content': 'Write tests.\n\nx'}],
            'max_tokens': 512,
            'temperature': 0.0,
        }


class TestStub:

    def test_applies_stage_rules(self, stub_backend):
        request = stub_backend.request('#stage:reformulate', 'Rewrite.\n\nuser pays if cart is full')
        response = complete(stub_backend, request)
        assert response.text == 'Action: user pays; Condition: cart is full; Result: the action succeeds'
        assert response.completion_tokens == len(response.text.split())

    def test_backend_id(self, stub_backend):
        assert stub_backend.backend_id == 'stub:phi-2'

    def test_empty_completion_rejected(self, stub_backend):
        with pytest.raises(EmptyCompletionError):
            complete(stub_backend, stub_backend.request('#stage:reshape', '   '))


class TestHttp:

    def test_sends_chat_completion(self, chat_server, request_):
        server = chat_server([(200, completion_body('1. step'), 0)])
        response = complete(http_backend(server.url), request_)

        assert response.text == '1. step'
        assert (response.prompt_tokens, response.completion_tokens) == (5, 3)
        assert response.latency >= 0
        [sent] = server.requests
        assert sent['path'] == '/v1/chat/completions'
        assert sent['body'] == chat_payload(request_)

    def test_bearer_header_from_env(self, chat_server, request_, monkeypatch):
        monkeypatch.setenv(KEY_VAR, SECRET)
        server = chat_server([(200, completion_body('ok'), 0)])
        complete(http_backend(server.url), request_)
        assert server.requests[0]['authorization'] == f'Bearer {SECRET}'

    def test_no_header_without_key(self, chat_server, request_, monkeypatch):
        monkeypatch.delenv(KEY_VAR, raising=False)
        server = chat_server([(200, completion_body('ok'), 0)])
        complete(http_backend(server.url), request_)
        assert server.requests[0]['authorization'] is None

    def test_retries_server_errors(self, chat_server, request_):
        server = chat_server([(500, 'oops', 0), (500, 'oops', 0), (200, completion_body('ok'), 0)])
        assert complete(http_backend(server.url, max_retries=2), request_).text == 'ok'
        assert len(server.requests) == 3

    def test_backoff_doubles(self, chat_server, request_, monkeypatch):
        delays = []
        monkeypatch.setattr(backends.time, 'sleep', delays.append)
        server = chat_server([(500, 'oops', 0), (500, 'oops', 0), (200, completion_body('ok'), 0)])
        complete(http_backend(server.url, max_retries=2, retry_backoff_base=0.5), request_)
        assert delays == [0.5, 1.0]

    def test_backoff_keeps_doubling(self, chat_server, request_, monkeypatch):
        delays = []
        monkeypatch.setattr(backends.time, 'sleep', delays.append)
        server = chat_server([(502, 'bad gateway', 0)])
        with pytest.raises(BackendStatusError) as info:
            complete(http_backend(server.url, max_retries=3, retry_backoff_base=0.25), request_)
        assert delays == [0.25, 0.5, 1.0]
        assert info.value.attempts == 4

    def test_logs_when_giving_up(self, chat_server, request_, caplog):
        server = chat_server([(500, 'oops', 0)])
        with caplog.at_level('WARNING', logger='riro_harness.backends'):
            with pytest.raises(BackendStatusError):
                complete(http_backend(server.url, max_retries=1), request_)
        assert 'Giving up' in caplog.text

    @pytest.mark.parametrize('usage', [{'prompt_tokens': 'n/a'}, 'lots', ['x'], {'completion_tokens': [1]}])
    def test_malformed_usage(self, chat_server, request_, usage):
        server = chat_server([(200, {'choices': [{'message': {'content': 'ok'}}], 'usage': usage}, 0)])
        with pytest.raises(BackendProtocolError):
            complete(http_backend(server.url, max_retries=2), request_)
        assert len(server.requests) == 1

    def test_missing_usage_counts_as_zero(self, chat_server, request_):
        server = chat_server([(200, {'choices': [{'message': {'content': 'ok'}}]}, 0)])
        response = complete(http_backend(server.url), request_)
        assert (response.prompt_tokens, response.completion_tokens) == (0, 0)

    def test_gives_up_after_retries(self, chat_server, request_):
        server = chat_server([(503, 'busy', 0)])
        with pytest.raises(BackendStatusError) as info:
            complete(http_backend(server.url, max_retries=2), request_)
        assert info.value.status == 503
        assert info.value.attempts == 3
        assert len(server.requests) == 3

    def test_client_error_not_retried(self, chat_server, request_):
        server = chat_server([(404, 'no such model', 0)])
        with pytest.raises(BackendStatusError) as info:
            complete(http_backend(server.url, max_retries=2), request_)
        assert info.value.status == 404
        assert len(server.requests) == 1

    def test_invalid_json(self, chat_server, request_):
        server = chat_server([(200, 'not json at all', 0)])
        with pytest.raises(BackendProtocolError) as info:
            complete(http_backend(server.url, max_retries=2), request_)
        assert info.value.body_excerpt == 'not json at all'
        assert len(server.requests) == 1

    def test_missing_choices(self, chat_server, request_):
        server = chat_server([(200, {'id': 'x'}, 0)])
        with pytest.raises(BackendProtocolError):
            complete(http_backend(server.url), request_)

    def test_empty_content(self, chat_server, request_):
        server = chat_server([(200, completion_body('  \n'), 0)])
        with pytest.raises(EmptyCompletionError):
            complete(http_backend(server.url), request_)

    def test_timeout(self, chat_server, request_):
        server = chat_server([(200, completion_body('late'), 1.0)])
        with pytest.raises(BackendTimeoutError) as info:
            complete(http_backend(server.url, timeout=0.2, max_retries=1), request_)
        assert info.value.attempts == 2

    def test_unreachable(self, request_, monkeypatch):
        monkeypatch.setenv('NO_PROXY', '127.0.0.1,localhost')
        backend = http_backend(f'http://127.0.0.1:{unused_port()}', max_retries=1)
        with pytest.raises(BackendTransportError) as info:
            complete(backend, request_)
        assert info.value.attempts == 2

    def test_key_never_leaks(self, chat_server, request_, monkeypatch):
        monkeypatch.setenv(KEY_VAR, SECRET)
        server = chat_server([(500, 'oops', 0)])
        backend = http_backend(server.url, max_retries=0)
        with pytest.raises(BackendStatusError) as info:
            complete(backend, request_)

        assert SECRET not in str(info.value)
        assert SECRET not in backend.backend_id
        assert SECRET not in str(backend.config.to_dict())
