"""Synthetic classification tasks, JSONL ingestion, and verbalization.

Tokenization is whitespace splitting over a closed 64-symbol vocabulary.
Two built-in binary tasks:

    majority: sequences mix two marker symbols with fillers; the label
              is the more frequent marker (ties excluded by construction)
    keyword:  the label is presence of one designated symbol

Generated train/val splits are disjoint as multisets of token-id lists
(every emitted sequence is globally unique) and class-balanced within
one example.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DatasetFormatError, UnknownTokenError

VOCAB_SIZE = 64

PAD, EOS = "<pad>", "<eos>"
LABEL_TOKENS = ("lbl0", "lbl1")
MARKER_TOKENS = ("mka", "mkb")
KEYWORD_TOKEN = "key"


@dataclass
class Vocab:
    tokens: list

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigError("vocabulary symbols must be distinct")
        self._ids = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    @property
    def pad_id(self):
        return self._ids[PAD]

    @property
    def eos_id(self):
        return self._ids[EOS]

    def id(self, token):
        try:
            return self._ids[token]
        except KeyError:
            raise UnknownTokenError(f"unknown token {token!r}") from None

    def encode(self, text):
        return [self.id(t) for t in text.split()]

    def decode(self, ids):
        return " ".join(self.tokens[i] for i in ids)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.tokens, f)
            f.write("\n")

    @classmethod
    def load(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as f:
                tokens = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise DatasetFormatError(f"cannot read vocabulary {path}: {e}") from e
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise DatasetFormatError(f"{path}: vocabulary must be a JSON array of strings")
        return cls(tokens)


def default_vocab():
    """64 symbols: pad/eos, two label tokens, two markers, one keyword, fillers."""
    base = [PAD, EOS, *LABEL_TOKENS, *MARKER_TOKENS, KEYWORD_TOKEN]
    fillers = [f"w{i:02d}" for i in range(VOCAB_SIZE - len(base))]
    return Vocab(base + fillers)


@dataclass
class Example:
    token_ids: list
    label: int
    raw_text: str


@dataclass
class Verbalizer:
    """One vocabulary token id per class; classification compares their logits."""

    class_tokens: list

    def __post_init__(self):
        if len(set(self.class_tokens)) != len(self.class_tokens):
            raise ConfigError("verbalizer tokens must be distinct")


def default_verbalizer(vocab, num_classes=2):
    if num_classes > len(LABEL_TOKENS):
        raise ConfigError(f"built-in verbalizer covers {len(LABEL_TOKENS)} classes")
    return Verbalizer([vocab.id(t) for t in LABEL_TOKENS[:num_classes]])


@dataclass
class Dataset:
    vocab: Vocab
    examples: list
    num_classes: int
    verbalizer: Verbalizer

    def __len__(self):
        return len(self.examples)

    def max_length(self):
        return max((len(e.token_ids) for e in self.examples), default=0)


def classify(logits, verbalizer):
    """Argmax over the verbalizer tokens' logits; ties break low."""
    arr = np.asarray(getattr(logits, "data", logits))
    return int(np.argmax(arr[verbalizer.class_tokens]))


# ---------------------------------------------------------------------------
# generation


def _filler_ids(vocab, pool=None):
    """Filler symbols tasks may draw on. pool limits to the first `pool`
    fillers: a small pool keeps the pooled filler noise inside a
    low-dimensional, learnable-to-ignore subspace of the embedding space."""
    reserved = {PAD, EOS, *LABEL_TOKENS, *MARKER_TOKENS, KEYWORD_TOKEN}
    ids = [i for i, t in enumerate(vocab.tokens) if t not in reserved]
    return ids if pool is None else ids[:pool]


FILLER_POOL = 4


def _majority_sequence(rng, vocab, label, seq_len):
    # marker-heavy mixes with a comfortable majority margin: strict
    # majority (never a tie), and separable at desk scale
    marker = [vocab.id(m) for m in MARKER_TOKENS]
    fillers = _filler_ids(vocab, FILLER_POOL)
    m = int(rng.integers(max(2, seq_len - 4), seq_len + 1))
    min_hi = min(m, (m + 7) // 2)  # margin >= 6 whenever the mix allows it
    hi = int(rng.integers(min_hi, m + 1))
    lo = m - hi
    ca, cb = (hi, lo) if label == 0 else (lo, hi)
    ids = [marker[0]] * ca + [marker[1]] * cb + list(
        rng.choice(fillers, size=seq_len - m)
    )
    rng.shuffle(ids)
    return [int(i) for i in ids]


def _keyword_sequence(rng, vocab, label, seq_len):
    pool = _filler_ids(vocab) + [vocab.id(m) for m in MARKER_TOKENS]
    ids = [int(i) for i in rng.choice(pool, size=seq_len)]
    if label == 1:
        ids[int(rng.integers(0, seq_len))] = vocab.id(KEYWORD_TOKEN)
    return ids


_GENERATORS = {"majority": _majority_sequence, "keyword": _keyword_sequence}


def generate_task(kind, num_train, num_val, seq_len, num_classes=2, seed=0):
    """Deterministic (train, val) datasets; splits share no sequence."""
    if kind not in _GENERATORS:
        raise ConfigError(f"unknown task kind {kind!r}")
    if seq_len < 3:
        raise ConfigError(f"seq_len must be >= 3, got {seq_len}")
    if num_classes != 2:
        raise ConfigError("built-in tasks are binary")
    if num_train < 0 or num_val < 0:
        raise ConfigError("dataset sizes must be non-negative")

    vocab = default_vocab()
    gen = _GENERATORS[kind]
    rng = np.random.default_rng([int(seed), 0xDA7A])
    seen = set()

    def build(count):
        examples = []
        # class-balanced within one: alternate labels, even counts split evenly
        for i in range(count):
            label = i % 2
            for _ in range(10_000):
                ids = gen(rng, vocab, label, seq_len)
                key = tuple(ids)
                if key not in seen:
                    seen.add(key)
                    break
            else:
                raise ConfigError(
                    "could not generate enough distinct sequences; "
                    "increase seq_len or reduce dataset size"
                )
            examples.append(Example(ids, label, vocab.decode(ids)))
        rng.shuffle(examples)
        return examples

    verbalizer = default_verbalizer(vocab, num_classes)
    train = Dataset(vocab, build(num_train), num_classes, verbalizer)
    val = Dataset(vocab, build(num_val), num_classes, verbalizer)
    return train, val


def build_pretrain_corpus(
    kind,
    size,
    seq_len,
    seed=0,
    correct_fraction=1.0,
    max_prefix=12,
    min_seq_len=4,
    vocab=None,
):
    """Token-id sequences from the task distribution with a verbalizer
    token appended, shifted by a random-length filler prefix.

    Three knobs shape what the frozen LM can be steered to do later:
    correct_fraction is how often the appended label token matches the
    sequence (1.0 teaches the task itself); the random prefix (0 to
    max_prefix fillers) teaches the label slot at every offset a prompt
    prefix might push it to; sequence lengths mix from min_seq_len up to
    seq_len so the label slot is a meaningful share of the next-token
    loss. <eos> marks the slot: the token after it is always a label
    token, which is what makes label emission steerable.
    """
    if kind not in _GENERATORS:
        raise ConfigError(f"unknown task kind {kind!r}")
    vocab = vocab or default_vocab()
    verb = default_verbalizer(vocab)
    gen = _GENERATORS[kind]
    fillers = _filler_ids(vocab, FILLER_POOL)
    rng = np.random.default_rng([int(seed), 0xC0A9])
    lo = min(min_seq_len, seq_len)
    corpus = []
    for i in range(size):
        label = i % 2
        ids = gen(rng, vocab, label, int(rng.integers(lo, seq_len + 1)))
        shown = label if rng.random() < correct_fraction else 1 - label
        prefix = [int(t) for t in rng.choice(fillers, size=rng.integers(0, max_prefix + 1))]
        corpus.append(prefix + ids + [vocab.eos_id, verb.class_tokens[shown]])
    return corpus


# ---------------------------------------------------------------------------
# JSONL files


def write_jsonl(dataset, path):
    with open(path, "w", encoding="utf-8") as f:
        for ex in dataset.examples:
            f.write(json.dumps({"text": ex.raw_text, "label": ex.label}))
            f.write("\n")


def load_jsonl(path, vocab, num_classes=2, verbalizer=None):
    examples = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as e:
        raise DatasetFormatError(f"cannot read {path}: {e}") from e
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"{path}:{lineno}: invalid JSON: {e}") from e
        if not isinstance(obj, dict) or "text" not in obj or "label" not in obj:
            raise DatasetFormatError(
                f'{path}:{lineno}: each line needs "text" and "label"'
            )
        text, label = obj["text"], obj["label"]
        if not isinstance(text, str) or not isinstance(label, int):
            raise DatasetFormatError(
                f"{path}:{lineno}: text must be a string and label an integer"
            )
        if not 0 <= label < num_classes:
            raise DatasetFormatError(
                f"{path}:{lineno}: label {label} outside [0, {num_classes})"
            )
        try:
            ids = vocab.encode(text)
        except UnknownTokenError as e:
            raise DatasetFormatError(f"{path}:{lineno}: {e}") from e
        examples.append(Example(ids, label, text))
    verbalizer = verbalizer or default_verbalizer(vocab, num_classes)
    return Dataset(vocab, examples, num_classes, verbalizer)
