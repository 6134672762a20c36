"""Responsible for configuring logging and for generating the run log file in a run directory."""


import logging
import os
import sys
from pathlib import Path


LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
RUN_LOG_NAME = 'run.log'


def configure_logging(verbose: bool = False) -> None:
    """Installs a stderr handler on the package logger. Repeated calls replace the previous handler."""

    package_logger = logging.getLogger('riro_harness')
    for handler in list(package_logger.handlers):
        if getattr(handler, '_riro_console', False):
            package_logger.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._riro_console = True
    package_logger.addHandler(handler)
    package_logger.setLevel(logging.DEBUG if verbose else logging.INFO)

    return None


def gen_setup_file(run_dir: Path, snapshot: dict) -> Path:
    """Produces a run.log recording the settings of the run, then attaches a handler so that the run's
    log records are appended below them. Returns the log path."""

    run_dir.mkdir(parents=True, exist_ok=True)
    log_path = run_dir / RUN_LOG_NAME

    backends = snapshot.get('backends', {})
    backend_lines = ''.join(
        f'{stage}: {cfg.get("kind")} {cfg.get("model_name", "")} {cfg.get("base_url") or ""}'.rstrip() + '\n'
        for stage, cfg in backends.items()
    )
    model_lines = ''.join(
        f'{model["name"]}: {model["backend"].get("kind")} {model["backend"].get("model_name", "")} '
        f'{model["backend"].get("base_url") or ""}'.rstrip() + '\n'
        for model in snapshot.get('models') or []
    )
    model_section = f'\n*****\nMODELS\n*****\n{model_lines}' if model_lines else ''
    templates = snapshot.get('templates', {})
    template_lines = ''.join(f'{stage}: {path}\n' for stage, path in templates.items())

    with open(log_path, mode='w', encoding='utf-8') as f:
        f.write(f'*****\nDATASET\n*****\n'
                f'Dataset: {snapshot.get("dataset")}\n'
                f'Split: {snapshot.get("split")}\n'
                f'Seed: {snapshot.get("seed")}\n'
                f'\n*****\nVARIANTS\n*****\n'
                f'Variants: {", ".join(snapshot.get("variants", []))}\n'
                f'Parallelism: {snapshot.get("parallelism")}\n'
                f'\n*****\nBACKENDS\n*****\n'
                f'{backend_lines}'
                f'{model_section}'
                f'\n*****\nTEMPLATES\n*****\n'
                f'{template_lines}'
                f'\n*****\nRUN LOG\n*****\n')

    handler = logging.FileHandler(log_path, mode='a', encoding='utf-8')
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    package_logger = logging.getLogger('riro_harness')
    package_logger.addHandler(handler)
    if package_logger.level == logging.NOTSET:
        package_logger.setLevel(logging.INFO)

    return log_path


def detach_run_log(log_path: Path) -> None:
    """Closes and removes the file handler attached by gen_setup_file."""

    package_logger = logging.getLogger('riro_harness')
    for handler in list(package_logger.handlers):
        if isinstance(handler, logging.FileHandler) and handler.baseFilename == os.path.abspath(log_path):
            package_logger.removeHandler(handler)
            handler.close()

    return None


def convert_timestamp(time_start: float, time_end: float) -> tuple:
    """Converts two timestamp floats generated by time.perf_counter() into hours, minutes, seconds for logging."""
    elapsed = time_end - time_start
    hours = int(elapsed // 3600)
    minutes = int((elapsed % 3600) // 60)
    seconds = elapsed % 60

    return hours, minutes, seconds
