"""Scores generated test cases against reference test cases with BLEU, ROUGE-1/2/L, Levenshtein distance and
cosine similarity, and averages per-item scores into one report per variant.

Every function here is pure, so the ablation workers call them concurrently without coordination."""


import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, fields

from riro_harness.run_settings import bleu_max_order


@dataclass(frozen=True)
class TokenSequence:
    """Tokenized view of a text. `source_length_chars` is the length of the untokenized text."""
    tokens: tuple = ()
    source_length_chars: int = 0

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


@dataclass(frozen=True)
class NGramCounts:
    """Occurrence counts of every n-gram of one order in a token sequence."""
    n: int
    counts: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class PRF:
    """Precision, recall and their harmonic mean."""
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0

    @classmethod
    def from_ratios(cls, precision: float, recall: float) -> 'PRF':
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
        return cls(precision=precision, recall=recall, f1=f1)

    def to_dict(self) -> dict:
        return {'precision': self.precision, 'recall': self.recall, 'f1': self.f1}

    @classmethod
    def from_dict(cls, data: dict) -> 'PRF':
        return cls(precision=data['precision'], recall=data['recall'], f1=data['f1'])


@dataclass(frozen=True)
class MetricReport:
    """The six scores for one candidate/reference pair, or their means over many pairs."""
    bleu: float
    rouge1: PRF
    rouge2: PRF
    rougeL: PRF
    levenshtein: float  # an int for a single pair, a mean once aggregated
    cosine: float

    def to_dict(self) -> dict:
        return {
            'bleu': self.bleu,
            'rouge1': self.rouge1.to_dict(),
            'rouge2': self.rouge2.to_dict(),
            'rougeL': self.rougeL.to_dict(),
            'levenshtein': self.levenshtein,
            'cosine': self.cosine,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'MetricReport':
        return cls(
            bleu=data['bleu'],
            rouge1=PRF.from_dict(data['rouge1']),
            rouge2=PRF.from_dict(data['rouge2']),
            rougeL=PRF.from_dict(data['rougeL']),
            levenshtein=data['levenshtein'],
            cosine=data['cosine'],
        )


def _is_punctuation(char: str) -> bool:
    return unicodedata.category(char).startswith('P')


def _strip_punctuation(token: str) -> str:
    """Strips leading and trailing punctuation. Punctuation inside the token is kept."""

    start, end = 0, len(token)
    while start < end and _is_punctuation(token[start]):
        start += 1
    while end > start and _is_punctuation(token[end - 1]):
        end -= 1

    return token[start:end]


def tokenize(text: str) -> TokenSequence:
    """Lowercases, splits on unicode whitespace and strips edge punctuation (Unicode P* characters) from each
    token. Symbol characters such as ">" or "$" are not punctuation and stay, so "->" tokenizes to ">". Tokens left
    empty are dropped."""

    tokens = (_strip_punctuation(raw) for raw in text.lower().split())

    return TokenSequence(tokens=tuple(token for token in tokens if token), source_length_chars=len(text))


def ngram_counts(seq: TokenSequence, n: int) -> NGramCounts:
    """Sliding-window counts of the n-grams in a sequence."""

    if n < 1:
        raise ValueError(f'n-gram order must be >= 1, got {n}')
    tokens = tuple(seq)
    counts = Counter(tokens[i:i + n] for i in range(len(tokens) - n + 1))

    return NGramCounts(n=n, counts=counts)


def _overlap(candidate: NGramCounts, reference: NGramCounts) -> int:
    return sum(min(count, reference.counts[gram]) for gram, count in candidate.counts.items())


def bleu(candidate: TokenSequence, reference: TokenSequence, max_order: int = bleu_max_order) -> float:
    """Sentence-level BLEU with brevity penalty. A zero precision for orders >= 2 is smoothed to 1/(2c)."""

    c, r = len(candidate), len(reference)
    if c == 0:
        return 0.0

    log_precisions = []
    for n in range(1, max_order + 1):
        cand_counts = ngram_counts(candidate, n)
        total = cand_counts.total
        clipped = _overlap(cand_counts, ngram_counts(reference, n)) if total else 0
        if clipped == 0:
            if n == 1:
                return 0.0
            precision = 1 / (2 * c)
        else:
            precision = clipped / total
        log_precisions.append(math.log(precision))

    brevity_penalty = 1.0 if c >= r else math.exp(1 - r / c)

    return brevity_penalty * math.exp(math.fsum(log_precisions) / max_order)


def rouge_n(candidate: TokenSequence, reference: TokenSequence, n: int) -> PRF:
    """Clipped n-gram overlap as precision/recall/F1."""

    cand_counts = ngram_counts(candidate, n)
    ref_counts = ngram_counts(reference, n)
    overlap = _overlap(cand_counts, ref_counts)

    precision = overlap / cand_counts.total if cand_counts.total else 0.0
    recall = overlap / ref_counts.total if ref_counts.total else 0.0

    return PRF.from_ratios(precision, recall)


def lcs_length(a: TokenSequence, b: TokenSequence) -> int:
    """Length of the longest common subsequence of two token lists."""

    a, b = tuple(a), tuple(b)
    if len(a) < len(b):
        a, b = b, a
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0]
        for j, token_b in enumerate(b):
            if token_a == token_b:
                current.append(previous[j] + 1)
            else:
                current.append(max(previous[j + 1], current[j]))
        previous = current

    return previous[-1]


def rouge_l(candidate: TokenSequence, reference: TokenSequence) -> PRF:
    """ROUGE-L from the longest common token subsequence."""
    lcs = lcs_length(candidate, reference)
    precision = lcs / len(candidate) if len(candidate) else 0.0
    recall = lcs / len(reference) if len(reference) else 0.0

    return PRF.from_ratios(precision, recall)


def levenshtein(a: str, b: str) -> int:
    """Character-level edit distance with unit-cost insertion, deletion and substitution."""

    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, char_a in enumerate(a, start=1):
        current = [i]
        for j, char_b in enumerate(b, start=1):
            current.append(min(
                previous[j] + 1,  # deletion
                current[j - 1] + 1,  # insertion
                previous[j - 1] + (char_a != char_b),  # substitution
            ))
        previous = current

    return previous[-1]


def cosine_similarity(a: TokenSequence, b: TokenSequence) -> float:
    """Cosine of the term-frequency vectors of two token sequences. Zero when either is empty."""

    counts_a, counts_b = Counter(a), Counter(b)
    if not counts_a or not counts_b:
        return 0.0
    dot = sum(count * counts_b[token] for token, count in counts_a.items())
    norm_a = math.sqrt(sum(count * count for count in counts_a.values()))
    norm_b = math.sqrt(sum(count * count for count in counts_b.values()))

    return min(1.0, max(0.0, dot / (norm_a * norm_b)))


def evaluate_pair(candidate: str, reference: str) -> MetricReport:
    """All six metrics for one pair. Levenshtein runs on the raw strings, the rest on tokens."""

    cand_tokens = tokenize(candidate)
    ref_tokens = tokenize(reference)

    return MetricReport(
        bleu=bleu(cand_tokens, ref_tokens),
        rouge1=rouge_n(cand_tokens, ref_tokens, 1),
        rouge2=rouge_n(cand_tokens, ref_tokens, 2),
        rougeL=rouge_l(cand_tokens, ref_tokens),
        levenshtein=levenshtein(candidate, reference),
        cosine=cosine_similarity(cand_tokens, ref_tokens),
    )


def _mean(values: list) -> float:
    if all(value == values[0] for value in values):
        return values[0]
    # fsum is correctly rounded, so the mean does not depend on input order
    return math.fsum(values) / len(values)


def aggregate(reports: list) -> MetricReport:
    """Arithmetic mean of every field over a non-empty list of reports. A field that is equal in every report
    keeps that exact value."""

    if not reports:
        raise ValueError('cannot aggregate an empty list of metric reports')
    if len(reports) == 1:
        return reports[0]

    def mean_prf(name: str) -> PRF:
        return PRF(**{f.name: _mean([getattr(getattr(report, name), f.name) for report in reports])
                      for f in fields(PRF)})

    return MetricReport(
        bleu=_mean([report.bleu for report in reports]),
        rouge1=mean_prf('rouge1'),
        rouge2=mean_prf('rouge2'),
        rougeL=mean_prf('rougeL'),
        levenshtein=_mean([report.levenshtein for report in reports]),
        cosine=_mean([report.cosine for report in reports]),
    )
