"""Token/id vocabulary with reserved special symbols.

Every vocabulary in this package reserves the same four ids at the bottom
of the table so that model code can hard-wire them:

    0 <pad>   1 <s>   2 </s>   3 <unk>

<s> starts every decoder input; </s> terminates every target sequence and
doubles as the source-finished marker fed to the encoder once a source is
complete.
"""
from __future__ import annotations

from dataclasses import dataclass, field

PAD = 0
BOS = 1
EOS = 2
UNK = 3

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
UNK_TOKEN = "<unk>"

SPECIAL_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)


@dataclass(frozen=True)
class Vocabulary:
    """Bijective token <-> id table. Ids are dense, specials occupy 0..3."""

    token_of: tuple[str, ...]
    id_of: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.token_of[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise ValueError(f"vocabulary must start with {SPECIAL_TOKENS}")
        ids: dict[str, int] = {}
        for i, tok in enumerate(self.token_of):
            if not tok:
                raise ValueError("empty token string")
            if tok in ids:
                raise ValueError(f"duplicate token {tok!r}")
            ids[tok] = i
        object.__setattr__(self, "id_of", ids)

    @classmethod
    def build(cls, tokens) -> "Vocabulary":
        """Build from an iterable of regular tokens; specials are prepended.

        Duplicates and tokens that collide with a special are rejected.
        """
        toks = tuple(tokens)
        for t in toks:
            if t in SPECIAL_TOKENS:
                raise ValueError(f"token {t!r} collides with a special symbol")
        return cls(SPECIAL_TOKENS + toks)

    def __len__(self) -> int:
        return len(self.token_of)

    def id(self, token: str) -> int:
        """Id of ``token``, falling back to UNK for unknown tokens."""
        return self.id_of.get(token, UNK)

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self.token_of):
            raise ValueError(f"id {idx} out of range [0, {len(self.token_of)})")
        return self.token_of[idx]

    def encode_tokens(self, tokens) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode_ids(self, ids) -> list[str]:
        return [self.token(i) for i in ids]
