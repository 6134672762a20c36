"""Definition of the enum classes used for specifying pipeline stages, ablation variants, backends and CLI
behaviour."""


from enum import Enum, IntEnum


class StageLabel(str, Enum):
    """The three stages a story may pass through, in pipeline order."""
    REFORMULATE = 'reformulate'  # raw story -> "Action, Condition, Result" layout
    GENERATE = 'generate'  # (normalised) story -> raw test-case text
    RESHAPE = 'reshape'  # raw test-case text -> numbered-step layout


STAGE_ORDER = (StageLabel.REFORMULATE, StageLabel.GENERATE, StageLabel.RESHAPE)


class VariantName(str, Enum):
    """Ablation variants, named by the set of stages they run."""
    BASELINE = 'BASELINE'  # generate only
    RF = 'RF'  # reformulate + generate
    FR = 'FR'  # generate + reshape
    RFR = 'RFR'  # all three stages


class BackendKind(str, Enum):
    """Which completion backend serves a stage."""
    HTTP = 'http'  # OpenAI-compatible chat-completions endpoint
    STUB = 'stub'  # deterministic rule-based backend, no network


class OutputFormat(str, Enum):
    """Rendering format for reports written by the CLI."""
    JSON = 'json'
    MD = 'md'


class ExitCode(IntEnum):
    """Process exit codes. Distinct values let scripts tell failure classes apart."""
    OK = 0
    CONFIG = 2  # configuration or dataset problems found before running
    RUNTIME = 3  # stage/backend failures during a run
    CORRUPTION = 4  # run directory does not agree with itself
