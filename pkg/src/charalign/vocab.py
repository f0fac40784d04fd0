"""Token-id vocabularies for the radical and stroke encoders."""

from __future__ import annotations

from .lexicon import EOS_TOKEN, STRUCTURE_LIST, Lexicon, TokenSequence

PAD_ID = 0
EOS_ID = 1


class OutOfVocab(KeyError):
    pass


class Vocab:
    """Dense token-id map: pad=0, eos=1, then content tokens in order."""

    def __init__(self, tokens):
        self.tokens = [None, EOS_TOKEN] + list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens) if t is not None}
        if len(self.index) != len(self.tokens) - 1:
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def encode(self, seq: TokenSequence):
        try:
            return [self.index[t] for t in seq.tokens]
        except KeyError as exc:
            raise OutOfVocab(f"token {exc.args[0]!r} not in vocabulary") from exc


def radical_vocab(lexicon: Lexicon) -> Vocab:
    return Vocab(list(lexicon.radicals) + STRUCTURE_LIST)


def stroke_vocab() -> Vocab:
    return Vocab([str(s) for s in range(1, 6)] + STRUCTURE_LIST)
