"""
Instruction-format datasets: JSONL in/out, the prompt template, seeded
stratified splits and the synthetic desk-scale tasks.
"""
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from constants import (
    PROMPT_TEMPLATE, SYNTH_TASKS, synth_keywords, synth_labels, synth_filler,
    synth_instruction, count_marker,
)
from .errors import InvalidArgument, DatasetParseError
from .probe import LabeledExample

logger = logging.getLogger(__name__)

RECORD_KEYS = ('instruction', 'text', 'answer')


@dataclass
class DatasetRecord:
    instruction: str
    text: str
    answer: str

    def to_dict(self):
        return {'instruction': self.instruction, 'text': self.text, 'answer': self.answer}


def _as_number(answer):
    try:
        value = float(answer)
    except (TypeError, ValueError):
        return None
    return value if math.isfinite(value) else None


@dataclass
class LabelCodec:
    """Ordered class names C = {c_1..c_k}, or regression mode"""
    classes: list
    mode: str = 'classification'

    def __post_init__(self):
        if self.mode == 'classification':
            if len(set(self.classes)) != len(self.classes):
                raise InvalidArgument("class names must be unique")
            if len(self.classes) < 2:
                raise InvalidArgument("classification needs at least two classes")
        elif self.mode != 'regression':
            raise InvalidArgument(f"unknown label mode '{self.mode}'")

    @property
    def regression(self):
        return self.mode == 'regression'

    @property
    def num_classes(self):
        return 1 if self.regression else len(self.classes)

    @classmethod
    def infer(cls, records):
        answers = [r.answer for r in records]
        if answers and all(_as_number(a) is not None for a in answers):
            return cls([], 'regression')
        return cls(sorted({str(a) for a in answers}))

    def encode(self, answer):
        if self.regression:
            value = _as_number(answer)
            if value is None:
                raise InvalidArgument(f"answer {answer!r} is not a number")
            return value
        try:
            return self.classes.index(str(answer))
        except ValueError:
            raise InvalidArgument(f"answer {answer!r} outside label set {self.classes}") from None

    def decode(self, index):
        return float(index) if self.regression else self.classes[int(index)]

    def to_dict(self):
        return {'classes': list(self.classes), 'mode': self.mode}


def load_jsonl(path):
    """Records in file order plus the inferred label codec"""
    path = Path(path)
    if not path.exists():
        raise InvalidArgument(f"dataset file not found: {path}")
    records = []
    with open(path, 'r', encoding='utf-8') as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"invalid JSON ({exc.msg})", line_number) from exc
            if not isinstance(entry, dict) or any(key not in entry for key in RECORD_KEYS):
                raise DatasetParseError("expected an object with instruction, text and answer", line_number)
            answer = entry['answer']
            if answer is None or str(answer) == '':
                raise DatasetParseError("empty answer", line_number)
            records.append(DatasetRecord(str(entry['instruction']), str(entry['text']), answer))
    if not records:
        raise InvalidArgument(f"dataset file is empty: {path}")
    codec = LabelCodec.infer(records)
    logger.info(f"Loaded {len(records)} records from {path} ({codec.mode}, {codec.num_classes} outputs)")
    return records, codec


def write_jsonl(records, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        for record in records:
            handle.write(json.dumps(record.to_dict(), ensure_ascii=False) + '\n')
    return path


def format_prompt(record, template=PROMPT_TEMPLATE):
    return template.format(instruction=record.instruction, text=record.text)


def to_examples(records, codec, template=PROMPT_TEMPLATE):
    return [LabeledExample(format_prompt(r, template), codec.encode(r.answer)) for r in records]


def _stratified_order(records, codec, rng):
    """Seeded shuffle, then interleave classes so every contiguous slice keeps the class ratios"""
    order = rng.permutation(len(records))
    if codec is None or codec.regression:
        return order
    ranks = {}
    keys = []
    sizes = {}
    for index in order:
        label = codec.encode(records[index].answer)
        sizes[label] = sizes.get(label, 0) + 1
    for index in order:
        label = codec.encode(records[index].answer)
        rank = ranks.get(label, 0)
        ranks[label] = rank + 1
        keys.append(((rank + 0.5) / sizes[label], label))
    return order[sorted(range(len(order)), key=lambda i: keys[i])]


def split(records, fractions, seed, codec=None):
    """(train, validation, test): seeded shuffle, contiguous slices, stratified by label"""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise InvalidArgument("three positive split fractions are required")
    if sum(fractions) > 1.0 + 1e-9:
        raise InvalidArgument("split fractions sum to more than 1")
    rng = np.random.default_rng(seed)
    order = _stratified_order(records, codec, rng)
    n = len(records)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    if abs(sum(fractions) - 1.0) < 1e-9:
        n_test = n - n_train - n_val
    else:
        n_test = min(int(round(fractions[2] * n)), n - n_train - n_val)
    pick = lambda idx: [records[i] for i in idx]
    return (
        pick(order[:n_train]),
        pick(order[n_train:n_train + n_val]),
        pick(order[n_train + n_val:n_train + n_val + n_test]),
    )


def _filler(rng, low, high):
    return [synth_filler[i] for i in rng.integers(0, len(synth_filler), size=rng.integers(low, high + 1))]


def synth_generate(kind, size, num_classes, noise=0.0, seed=0):
    """Seeded token-pattern tasks.

    keyword: the class keyword appears once anywhere in the text.
    suffix:  the class keyword is the final word; two earlier distractor
             keywords of random classes make bag-of-token features unreliable.
    count:   regression; the answer is how many marker words the text holds.
    """
    if kind not in SYNTH_TASKS:
        raise InvalidArgument(f"unknown synthetic task '{kind}'")
    if not 2 <= num_classes <= len(synth_keywords):
        raise InvalidArgument(f"synthetic tasks support 2..{len(synth_keywords)} classes")
    if size < num_classes * 10:
        raise InvalidArgument("synthetic size must be at least 10 per class")
    if not 0.0 <= noise < 1.0:
        raise InvalidArgument("label noise must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(size) % num_classes)
    flipped = set(rng.choice(size, size=int(round(noise * size)), replace=False).tolist())

    records = []
    for index, label in enumerate(labels):
        label = int(label)
        if kind == 'keyword':
            words = _filler(rng, 3, 6)
            words.insert(int(rng.integers(0, len(words) + 1)), synth_keywords[label])
        elif kind == 'suffix':
            words = _filler(rng, 3, 5)
            for _ in range(2):
                distractor = synth_keywords[int(rng.integers(0, num_classes))]
                words.insert(int(rng.integers(0, len(words) + 1)), distractor)
            words.append(synth_keywords[label])
        else:
            words = _filler(rng, 3, 6)
            for _ in range(label):
                words.insert(int(rng.integers(0, len(words) + 1)), count_marker)
        if index in flipped:
            label = (label + int(rng.integers(1, num_classes))) % num_classes
        answer = str(label) if kind == 'count' else synth_labels[label]
        records.append(DatasetRecord(synth_instruction, ' '.join(words), answer))
    logger.info(f"Generated {size} '{kind}' records ({num_classes} classes, noise {noise})")
    return records


def keyword_oracle(record, num_classes):
    """Class whose keyword occurs in the text (first match), or None"""
    for label in range(num_classes):
        if synth_keywords[label] in record.text.split():
            return synth_labels[label]
    return None


def suffix_oracle(record):
    last = record.text.split()[-1]
    return synth_labels[synth_keywords.index(last)]
