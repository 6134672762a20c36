"""Completion backends every pipeline stage runs on: an OpenAI-compatible chat-completions HTTP client and a
deterministic rule-based stub.

Backend objects hold configuration only, so one handle can be shared by any number of workers; retry state
lives inside each call."""


import logging
import math
import os
import time
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass

import requests
from tenacity import RetryCallState, Retrying, retry_if_exception, stop_after_attempt, wait_exponential

from riro_harness import run_settings, stub_rules
from riro_harness.exceptions import (
    BackendError, BackendProtocolError, BackendStatusError, BackendTimeoutError, BackendTransportError, ConfigError,
    EmptyCompletionError,
)
from riro_harness.type_definitions import BackendKind


logger = logging.getLogger(__name__)

CHAT_COMPLETIONS_PATH = '/v1/chat/completions'
BODY_EXCERPT_CHARS = 200


def _is_integer(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


@dataclass(frozen=True)
class CompletionRequest:
    model_name: str
    system_prompt: str
    user_prompt: str
    max_tokens: int = run_settings.max_tokens
    temperature: float = run_settings.temperature

    def __post_init__(self):
        if not self.user_prompt:
            raise ValueError('completion request needs a non-empty user prompt')
        if self.max_tokens < 1:
            raise ValueError(f'max_tokens must be >= 1, got {self.max_tokens}')
        if self.temperature < 0:
            raise ValueError(f'temperature must be >= 0, got {self.temperature}')


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency: float = 0.0  # seconds


@dataclass(frozen=True)
class BackendConfig:
    """Connection settings for one backend. Holds the *name* of the key's environment variable, never the key."""
    kind: BackendKind = BackendKind.STUB
    model_name: str = run_settings.model_name
    base_url: str | None = None
    api_key_env_var: str = run_settings.api_key_env_var
    timeout: float = run_settings.backend_timeout
    max_retries: int = run_settings.max_retries
    retry_backoff_base: float = run_settings.retry_backoff_base
    max_tokens: int = run_settings.max_tokens
    temperature: float = run_settings.temperature

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self) -> list:
        problems = []
        if self.kind is BackendKind.HTTP and not (isinstance(self.base_url, str) and self.base_url):
            problems.append('http backend requires base_url')
        if not _is_number(self.timeout) or self.timeout <= 0:
            problems.append(f'timeout must be a number > 0, got {self.timeout!r}')
        if not _is_integer(self.max_retries) or self.max_retries < 0:
            problems.append(f'max_retries must be an integer >= 0, got {self.max_retries!r}')
        if not _is_number(self.retry_backoff_base) or self.retry_backoff_base < 0:
            problems.append(f'retry_backoff_base must be a number >= 0, got {self.retry_backoff_base!r}')
        if not _is_integer(self.max_tokens) or self.max_tokens < 1:
            problems.append(f'max_tokens must be an integer >= 1, got {self.max_tokens!r}')
        if not _is_number(self.temperature) or self.temperature < 0:
            problems.append(f'temperature must be a number >= 0, got {self.temperature!r}')
        return problems

    @classmethod
    def from_dict(cls, data: dict) -> 'BackendConfig':
        known = {name for name in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f'unknown backend setting {name!r}' for name in unknown])
        values = dict(data)
        try:
            values['kind'] = BackendKind(values.get('kind', BackendKind.STUB.value))
        except ValueError:
            raise ConfigError(f'unknown backend kind {data.get("kind")!r}') from None
        return cls(**values)

    def to_dict(self) -> dict:
        data = asdict(self)
        data['kind'] = self.kind.value
        return data


class CompletionBackend(ABC):
    """Uniform interface over which the pipeline stages run."""

    def __init__(self, config: BackendConfig):
        self.config = config

    @property
    def backend_id(self) -> str:
        """Identifies the backend in traces. Contains no secret."""
        if self.config.base_url:
            return f'{self.config.kind.value}:{self.config.model_name}@{self.config.base_url}'
        return f'{self.config.kind.value}:{self.config.model_name}'

    def request(self, system_prompt: str, user_prompt: str) -> CompletionRequest:
        return CompletionRequest(model_name=self.config.model_name, system_prompt=system_prompt,
                                 user_prompt=user_prompt, max_tokens=self.config.max_tokens,
                                 temperature=self.config.temperature)

    @abstractmethod
    def send(self, request: CompletionRequest) -> CompletionResponse:
        """Performs the call. Use complete() rather than calling this directly."""


class StubBackend(CompletionBackend):

    def send(self, request: CompletionRequest) -> CompletionResponse:
        return stub_complete(request)


class HttpBackend(CompletionBackend):

    def send(self, request: CompletionRequest) -> CompletionResponse:
        return http_complete(self.config, request)


def build_backend(config: BackendConfig) -> CompletionBackend:
    if config.kind is BackendKind.HTTP:
        return HttpBackend(config)
    return StubBackend(config)


def complete(backend: CompletionBackend, request: CompletionRequest) -> CompletionResponse:
    """Runs one completion and refuses to hand back empty text."""

    response = backend.send(request)
    if not response.text.strip():
        raise EmptyCompletionError(f'{backend.backend_id} returned an empty completion')

    return response


def stub_complete(request: CompletionRequest) -> CompletionResponse:
    """Applies the stub rules for the stage named in the system prompt's '#stage:' marker."""

    text = stub_rules.apply_rules(request.system_prompt, request.user_prompt)

    return CompletionResponse(text=text,
                              prompt_tokens=len(request.system_prompt.split()) + len(request.user_prompt.split()),
                              completion_tokens=len(text.split()),
                              latency=0.0)


def chat_payload(request: CompletionRequest) -> dict:
    """The JSON body of an OpenAI-compatible chat-completions request."""
    return {
        'model': request.model_name,
        'messages': [
            {'role': 'system', 'content': request.system_prompt},
            {'role': 'user', 'content': request.user_prompt},
        ],
        'max_tokens': request.max_tokens,
        'temperature': request.temperature,
    }


def _headers(config: BackendConfig) -> dict:
    """Request headers. Authorization is sent only when the configured environment variable holds a key."""
    headers = {'Content-Type': 'application/json'}
    api_key = os.environ.get(config.api_key_env_var, '') if config.api_key_env_var else ''
    if api_key:
        headers['Authorization'] = f'Bearer {api_key}'
    return headers


def _parse_completion(response: requests.Response, attempts: int) -> tuple:
    excerpt = response.text[:BODY_EXCERPT_CHARS]
    try:
        data = response.json()
        text = data['choices'][0]['message']['content']
        usage = data.get('usage') or {}
        prompt_tokens = int(usage.get('prompt_tokens', 0) or 0)
        completion_tokens = int(usage.get('completion_tokens', 0) or 0)
    except (ValueError, KeyError, IndexError, TypeError, AttributeError):
        raise BackendProtocolError('malformed chat-completion response', excerpt, attempts) from None
    if not isinstance(text, str):
        raise BackendProtocolError('completion content is not a string', excerpt, attempts)

    return text, prompt_tokens, completion_tokens


def _is_retryable(err: BaseException) -> bool:
    """Timeouts, transport errors and 5xx answers are worth another attempt; anything else is final."""
    if isinstance(err, BackendStatusError):
        return err.status >= 500
    return isinstance(err, (BackendTimeoutError, BackendTransportError))


def _log_retry(retry_state: RetryCallState) -> None:
    logger.debug(f'Attempt {retry_state.attempt_number} failed ({retry_state.outcome.exception()}), '
                 f'retrying in {retry_state.next_action.sleep:0.2f} s')


def _post_once(config: BackendConfig, url: str, payload: dict, headers: dict, attempt: int) -> CompletionResponse:
    start = time.perf_counter()
    try:
        response = requests.post(url, json=payload, headers=headers, timeout=config.timeout)
    except requests.Timeout:
        raise BackendTimeoutError(f'{url} timed out after {config.timeout} s', attempt) from None
    except requests.RequestException as err:
        raise BackendTransportError(f'{url} unreachable: {err.__class__.__name__}', attempt) from None
    latency = time.perf_counter() - start

    if response.status_code >= 400:
        raise BackendStatusError(f'{url} answered {response.status_code}', response.status_code, attempt)

    text, prompt_tokens, completion_tokens = _parse_completion(response, attempt)
    return CompletionResponse(text=text, prompt_tokens=prompt_tokens, completion_tokens=completion_tokens,
                              latency=latency)


def http_complete(config: BackendConfig, request: CompletionRequest) -> CompletionResponse:
    """POSTs the request to {base_url}/v1/chat/completions. Timeouts, transport errors and 5xx answers are
    retried with exponential backoff (base, 2*base, 4*base, ...), up to max_retries retries. The raised error
    carries the number of requests actually sent."""

    url = config.base_url.rstrip('/') + CHAT_COMPLETIONS_PATH
    payload = chat_payload(request)
    headers = _headers(config)
    retrying = Retrying(stop=stop_after_attempt(config.max_retries + 1),
                        wait=wait_exponential(multiplier=config.retry_backoff_base),
                        retry=retry_if_exception(_is_retryable),
                        before_sleep=_log_retry,
                        sleep=time.sleep,
                        reraise=True)

    try:
        for attempt in retrying:
            with attempt:
                response = _post_once(config, url, payload, headers, attempt.retry_state.attempt_number)
    except BackendError as err:
        if _is_retryable(err):
            logger.warning(f'Giving up on {url}: {err}')
        raise

    return response
