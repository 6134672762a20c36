import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from riro_harness.backends import BackendConfig, StubBackend
from riro_harness.exceptions import BackendTransportError
from riro_harness.pipeline import BackendSet, TemplateSet
from riro_harness.story_import import synthesize_fixtures, write_jsonl
from riro_harness.stub_rules import stage_of
from riro_harness.type_definitions import StageLabel


GOLDEN_DIR = Path(__file__).parent / 'golden'


class FailingBackend(StubBackend):
    """Stub backend whose calls for one stage always fail."""

    def __init__(self, failing_stage: StageLabel):
        super().__init__(BackendConfig())
        self.failing_stage = failing_stage

    def send(self, request):
        if stage_of(request.system_prompt) == self.failing_stage.value:
            raise BackendTransportError('connection refused', attempts=3)
        return super().send(request)


class ScriptedServer(ThreadingHTTPServer):
    """Answers the n-th request with the n-th scripted (status, body, delay) step; the last step repeats."""

    daemon_threads = True

    def __init__(self, script):
        super().__init__(('127.0.0.1', 0), ScriptedHandler)
        self.script = list(script)
        self.requests = []
        self.lock = threading.Lock()

    @property
    def url(self) -> str:
        return f'http://127.0.0.1:{self.server_address[1]}'

    def handle_error(self, request, client_address):
        # clients that time out close the socket before the delayed answer is written
        pass


class ScriptedHandler(BaseHTTPRequestHandler):

    def do_POST(self):
        length = int(self.headers.get('Content-Length', 0))
        raw = self.rfile.read(length)
        with self.server.lock:
            self.server.requests.append({'path': self.path, 'authorization': self.headers.get('Authorization'),
                                         'body': json.loads(raw)})
            index = min(len(self.server.requests), len(self.server.script)) - 1
            status, body, delay = self.server.script[index]
        if delay:
            time.sleep(delay)
        data = body.encode('utf-8') if isinstance(body, str) else json.dumps(body).encode('utf-8')
        self.send_response(status)
        self.send_header('Content-Type', 'application/json')
        self.send_header('Content-Length', str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, format, *args):
        pass


@pytest.fixture
def chat_server(monkeypatch):
    """Factory starting a scripted chat-completions server; all servers stop at teardown."""

    monkeypatch.setenv('NO_PROXY', '127.0.0.1,localhost')
    servers = []

    def start(script) -> ScriptedServer:
        server = ScriptedServer(script)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()


@pytest.fixture
def stub_backend():
    return StubBackend(BackendConfig())


@pytest.fixture
def stub_backends(stub_backend):
    return BackendSet.shared(stub_backend)


@pytest.fixture
def failing_backends():
    """Factory for a shared stub backend set whose calls for one stage always fail."""

    def build(stage: StageLabel) -> BackendSet:
        return BackendSet.shared(FailingBackend(stage))

    return build


@pytest.fixture
def templates():
    return TemplateSet.default()


@pytest.fixture
def fixture_file(tmp_path):
    """Writes n synthetic stories to a JSONL file and returns its path."""

    def write(n: int = 3, seed: int = 7, name: str = 'stories.jsonl') -> Path:
        return write_jsonl(synthesize_fixtures(n, seed), tmp_path / name)

    return write


@pytest.fixture
def config_file(tmp_path, fixture_file):
    """Writes a stub run configuration next to a fixture dataset and returns its path."""

    def write(n: int = 3, name: str = 'run.json', **overrides) -> Path:
        dataset = fixture_file(n)
        config = {'dataset': dataset.name, 'variants': ['RFR'], 'backends': {'default': {'kind': 'stub'}},
                  'parallelism': 1, 'output_dir': 'runs', 'seed': 0}
        config.update(overrides)
        path = tmp_path / name
        path.write_text(json.dumps(config), encoding='utf-8')
        return path

    return write


@pytest.fixture
def golden():
    """Reads a golden file without its trailing newline."""

    def read(name: str) -> str:
        return (GOLDEN_DIR / name).read_text(encoding='utf-8').rstrip('\n')

    return read
