"""Character vocabularies and token index sequences."""

from __future__ import annotations

from dataclasses import dataclass, field

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ["<pad>", "<bos>", "<eos>", "<unk>"]


@dataclass(frozen=True)
class Vocabulary:
    """Bidirectional token<->index map with PAD/BOS/EOS/UNK specials."""

    tokens: tuple[str, ...]
    index_of: dict[str, int] = field(compare=False)
    specials: tuple[int, int, int, int] = (PAD, BOS, EOS, UNK)

    def __len__(self):
        return len(self.tokens)

    @property
    def pad(self):
        return self.specials[0]

    @property
    def bos(self):
        return self.specials[1]

    @property
    def eos(self):
        return self.specials[2]

    @property
    def unk(self):
        return self.specials[3]


def _make_vocab(tokens):
    return Vocabulary(tokens=tuple(tokens), index_of={t: i for i, t in enumerate(tokens)})


def vocab_from_tokens(tokens):
    """Rebuild a specials-first vocabulary from its stored token list."""
    tokens = list(tokens)
    if tokens[:4] != SPECIAL_TOKENS:
        raise ValueError("token list must start with the special tokens")
    if len(set(tokens)) != len(tokens):
        raise ValueError("duplicate tokens")
    return _make_vocab(tokens)


def build_vocab(corpus_lines, specials_first=True):
    """Build a character vocabulary from text lines.

    Characters are ordered by first occurrence so the same corpus always
    yields the same vocabulary. Raises ValueError("empty corpus") when no
    characters are found.
    """
    chars = []
    seen = set(SPECIAL_TOKENS)
    for line in corpus_lines:
        for ch in line:
            if ch not in seen:
                seen.add(ch)
                chars.append(ch)
    if not chars:
        raise ValueError("empty corpus")
    if specials_first:
        tokens = SPECIAL_TOKENS + chars
        vocab = Vocabulary(tokens=tuple(tokens),
                           index_of={t: i for i, t in enumerate(tokens)})
    else:
        tokens = chars + SPECIAL_TOKENS
        n = len(chars)
        vocab = Vocabulary(tokens=tuple(tokens),
                           index_of={t: i for i, t in enumerate(tokens)},
                           specials=(n, n + 1, n + 2, n + 3))
    return vocab


def encode(text, vocab, max_len):
    """Map a string to character indices ending in EOS, truncated to max_len."""
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    ids = [vocab.index_of.get(ch, vocab.unk) for ch in text]
    ids = ids[: max_len - 1]
    ids.append(vocab.eos)
    return ids


def decode(ids, vocab):
    """Concatenate tokens up to the first EOS, skipping PAD and BOS."""
    out = []
    for i in ids:
        i = int(i)
        if i < 0 or i >= len(vocab):
            raise ValueError("index out of vocabulary")
        if i == vocab.eos:
            break
        if i in (vocab.pad, vocab.bos):
            continue
        out.append(vocab.tokens[i])
    return "".join(out)


def save_vocab(vocab, path):
    """Write one token per line, UTF-8, specials in index order."""
    with open(path, "w", encoding="utf-8") as f:
        for tok in vocab.tokens:
            f.write(tok + "\n")


def load_vocab(path):
    with open(path, encoding="utf-8") as f:
        tokens = [line.rstrip("\n") for line in f]
    while tokens and tokens[-1] == "":
        tokens.pop()
    if tokens[:4] != SPECIAL_TOKENS:
        raise ValueError(f"vocabulary file {path} does not start with the special tokens")
    return _make_vocab(tokens)
