"""Fixed rewrite rules behind the stub backend. The fixture generator uses the same rules to produce reference
test cases, so a full reformulate -> generate -> reshape run on the stub reproduces its fixtures exactly.

Rules per stage:
  reformulate  story text -> "Action: ...; Condition: ...; Result: ..." using keyword splits
  generate     canonical triple -> loosely numbered steps; any other text -> a single catch-all step
  reshape      any step list -> "N. step" lines, each followed by an "   Expected: ..." line (idempotent)
"""


import re

from riro_harness.type_definitions import StageLabel


CONDITION_KEYWORDS = ('when', 'if', 'while', 'after', 'once')
RESULT_KEYWORDS = ('and', 'then', 'so')
NO_CONDITION = 'always'
NO_RESULT = 'the action succeeds'
DEFAULT_EXPECTATION = 'step completes without error'
FALLBACK_EXPECTATION = 'the story behaves as described'

STAGE_MARKER = re.compile(r'^#stage:(\w+)\s*$', re.MULTILINE)
CANONICAL_TRIPLE = re.compile(r'^Action: (?P<action>.+?); Condition: (?P<condition>.+?); Result: (?P<result>.+)$')
NUMBERED_STEP = re.compile(r'^(?:step\s*)?\d+\s*[.):]\s*(?P<body>.*)$', re.IGNORECASE)
EXPECTED_LINE = re.compile(r'^expected\s*:\s*(?P<text>.*)$', re.IGNORECASE)
EXPECTATION_SPLIT = re.compile(r'\s*(?:->|\bexpected\s*:)\s*', re.IGNORECASE)
SENTENCE_SPLIT = re.compile(r'(?<=[.!?])\s+')


def _keyword_pattern(keywords: tuple) -> re.Pattern:
    return re.compile(r'\s+\b(?:' + '|'.join(keywords) + r')\b\s+', re.IGNORECASE)


CONDITION_SPLIT = _keyword_pattern(CONDITION_KEYWORDS)
RESULT_SPLIT = _keyword_pattern(RESULT_KEYWORDS)


def collapse_whitespace(text: str) -> str:
    return ' '.join(text.split())


def stage_of(system_prompt: str) -> str | None:
    """Reads the '#stage:<name>' marker line from a system prompt."""

    match = STAGE_MARKER.search(system_prompt)
    return match.group(1).lower() if match else None


def payload_of(user_prompt: str) -> str:
    """The part of a user prompt the rules act on: everything after the first blank line."""

    parts = re.split(r'\n[ \t]*\n', user_prompt, maxsplit=1)
    return parts[1].strip() if len(parts) == 2 and parts[1].strip() else user_prompt.strip()


def parse_triple(text: str) -> tuple | None:
    """Returns (action, condition, result) if the text is already in canonical form."""

    match = CANONICAL_TRIPLE.match(text.strip())
    if match is None:
        return None
    return match.group('action'), match.group('condition'), match.group('result')


def format_triple(action: str, condition: str, result: str) -> str:
    return f'Action: {action}; Condition: {condition}; Result: {result}'


def reformulate_text(story_text: str) -> str:
    """Splits a story at its first condition keyword and then at the first result keyword."""

    text = collapse_whitespace(story_text)
    if parse_triple(text) is not None:
        return text
    text = text.rstrip('.!?').strip()

    parts = CONDITION_SPLIT.split(text, maxsplit=1)
    if len(parts) == 2:
        action, tail = parts
        tail_parts = RESULT_SPLIT.split(tail, maxsplit=1)
        condition = tail_parts[0]
        result = tail_parts[1] if len(tail_parts) == 2 else NO_RESULT
    else:
        action_parts = RESULT_SPLIT.split(text, maxsplit=1)
        action = action_parts[0]
        condition = NO_CONDITION
        result = action_parts[1] if len(action_parts) == 2 else NO_RESULT

    return format_triple(action.strip() or text, condition.strip(), result.strip())


def generate_text(input_text: str) -> str:
    """Expands a canonical triple into numbered steps. Text that is not a triple gets one catch-all step."""

    triple = parse_triple(collapse_whitespace(input_text))
    if triple is None:
        return f'Steps:\n1)  Do: {collapse_whitespace(input_text)}  -> Expected: {FALLBACK_EXPECTATION}'

    action, condition, result = triple
    return (f'Steps:\n'
            f'1)  Set up: {condition}  -> Expected: {condition} holds\n'
            f'2)  Do: {action}  -> Expected: {result}')


def _split_step(body: str) -> tuple:
    """Splits an inline expectation ('-> ...' or 'expected: ...') off a step line."""

    parts = EXPECTATION_SPLIT.split(body, maxsplit=1)
    if len(parts) == 2:
        expectation = EXPECTED_LINE.match(parts[1])
        return parts[0].strip(), (expectation.group('text') if expectation else parts[1]).strip()
    return body.strip(), ''


def _add_expectation(step: list, text: str) -> None:
    if not text:
        return None
    step[1] = f'{step[1]}; {text}' if step[1] else text
    return None


def _sentence_steps(line: str) -> list:
    return [list(_split_step(sentence)) for sentence in SENTENCE_SPLIT.split(line)]


def parse_steps(text: str) -> list:
    """Reads a loosely formatted test case into [step, expectation] pairs."""

    steps = []
    headers = []
    for raw_line in text.splitlines():
        line = collapse_whitespace(raw_line)
        if not line:
            continue

        numbered = NUMBERED_STEP.match(line)
        expected = EXPECTED_LINE.match(line)
        if numbered:
            steps.append(list(_split_step(numbered.group('body'))))
        elif expected:
            if not steps:
                steps.append(['', ''])
            _add_expectation(steps[-1], expected.group('text').strip())
        elif not steps and line.endswith(':'):
            headers.append(line)
        else:
            steps.extend(_sentence_steps(line))

    if not steps:
        steps = [step for header in headers for step in _sentence_steps(header)]

    return steps


def reshape_text(raw_output: str) -> str:
    """Renumbers steps from 1 and gives every step exactly one expected-result line."""

    lines = []
    for number, (step, expectation) in enumerate(parse_steps(raw_output), start=1):
        lines.append(f'{number}. {step}'.rstrip())
        lines.append(f'   Expected: {expectation or DEFAULT_EXPECTATION}')

    return '\n'.join(lines)


def canonical_test_case(story_text: str) -> str:
    """The output of a full stub run for a story: reshape(generate(reformulate(story)))."""

    return reshape_text(generate_text(reformulate_text(story_text)))


STAGE_RULES = {
    StageLabel.REFORMULATE.value: reformulate_text,
    StageLabel.GENERATE.value: generate_text,
    StageLabel.RESHAPE.value: reshape_text,
}


def apply_rules(system_prompt: str, user_prompt: str) -> str:
    """Dispatches on the stage marker. Unknown or missing markers echo the user prompt."""

    rule = STAGE_RULES.get(stage_of(system_prompt))
    if rule is None:
        return user_prompt
    return rule(payload_of(user_prompt))
