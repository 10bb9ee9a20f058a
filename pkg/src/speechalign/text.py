"""Character tokenizer and byte-exact chat-template assembly.

The template mirrors the chat structure the frozen LM expects: an empty
system block, the user prompt between prefix and suffix. Multi-turn
serialization (not pinned down by the upstream convention) uses the
simplest consistent scheme: the first user turn carries the system block,
assistant turns are closed with the end-of-sequence literal, and follow-up
user turns reopen with "<s>[INST] ".
"""

from dataclasses import dataclass, field

from .errors import DataError, UsageError

BOS = "<bos>"
EOS = "<eos>"
PAD = "<pad>"
UNK = "<unk>"
SPECIALS = (PAD, UNK, BOS, EOS)

# Literals that tokenize to single special ids inside template text.
BOS_LITERAL = "<s>"
EOS_LITERAL = "</s>"


@dataclass(frozen=True)
class Vocabulary:
    """Ordered symbol list (specials + characters) with dense 0..|V|-1 ids."""

    symbols: tuple[str, ...]
    index: dict[str, int] = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "index", {s: i for i, s in enumerate(self.symbols)})
        if len(self.index) != len(self.symbols):
            raise DataError("vocabulary contains duplicate symbols")

    @classmethod
    def from_alphabet(cls, alphabet: str) -> "Vocabulary":
        chars = sorted(set(alphabet))
        for s in SPECIALS:
            if s in chars:
                raise DataError(f"special token {s!r} collides with a character symbol")
        return cls(SPECIALS + tuple(chars))

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def bos_id(self) -> int:
        return self.index[BOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    def is_special(self, token_id: int) -> bool:
        return self.symbols[token_id] in SPECIALS

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for s in self.symbols:
                f.write(_escape(s) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            symbols = tuple(_unescape(line.rstrip("\n")) for line in f)
        return cls(symbols)


def _escape(symbol: str) -> str:
    return symbol.replace("\\", "\\\\").replace("\n", "\\n")


def _unescape(text: str) -> str:
    return text.replace("\\n", "\n").replace("\\\\", "\\")


@dataclass(frozen=True)
class TokenSequence:
    """Token ids under a specific vocabulary."""

    ids: tuple[int, ...]
    vocab: Vocabulary

    def __len__(self) -> int:
        return len(self.ids)

    def __post_init__(self):
        for i in self.ids:
            if not 0 <= i < len(self.vocab):
                raise DataError(f"token id {i} out of range for vocabulary of {len(self.vocab)}")


def encode(text: str, vocab: Vocabulary) -> TokenSequence:
    """One token per character; unknown characters become UNK (count kept).

    The number of UNK substitutions is available as ``seq.ids.count(unk)``
    and is also reported by ``count_unknown``.
    """
    unk = vocab.unk_id
    ids = tuple(vocab.index.get(ch, unk) for ch in text)
    return TokenSequence(ids, vocab)


def count_unknown(text: str, vocab: Vocabulary) -> int:
    return sum(1 for ch in text if ch not in vocab.index)


def decode(tokens: TokenSequence) -> str:
    """Inverse of encode on in-alphabet text; special tokens render empty."""
    vocab = tokens.vocab
    out = []
    for i in tokens.ids:
        if not 0 <= i < len(vocab):
            raise DataError(f"token id {i} out of range for vocabulary of {len(vocab)}")
        if vocab.is_special(i):
            continue
        out.append(vocab.symbols[i])
    return "".join(out)


_PREFIX_SHAPE = "<s>[INST] <<SYS>>\n{system}\n<</SYS>>\n\n"
_SUFFIX = " [/INST]"
_FOLLOWUP_PREFIX = "<s>[INST] "


@dataclass(frozen=True)
class ChatTemplate:
    """Prefix/suffix strings around the user prompt; system prompt default empty."""

    system_prompt: str = ""

    @property
    def prefix(self) -> str:
        return _PREFIX_SHAPE.format(system=self.system_prompt)

    @property
    def suffix(self) -> str:
        return _SUFFIX


def build_prompt(user_text: str, template: ChatTemplate | None = None) -> str:
    """prefix + user_text + suffix, byte-exact."""
    template = template or ChatTemplate()
    return template.prefix + user_text + template.suffix


def template_alphabet(template: ChatTemplate | None = None) -> str:
    """Every character the rendered template machinery can produce."""
    template = template or ChatTemplate()
    return "".join(sorted(set(template.prefix + template.suffix + _FOLLOWUP_PREFIX + EOS_LITERAL + " ")))


def encode_template(text: str, vocab: Vocabulary) -> TokenSequence:
    """Tokenize template text: the literals "<s>"/"</s>" map to BOS/EOS ids.

    Everything else is per-character like ``encode``. This is the single
    rule that reconciles byte-exact template strings with special-token
    ids on the LM side.
    """
    ids: list[int] = []
    i = 0
    unk = vocab.unk_id
    while i < len(text):
        if text.startswith(EOS_LITERAL, i):
            ids.append(vocab.eos_id)
            i += len(EOS_LITERAL)
        elif text.startswith(BOS_LITERAL, i):
            ids.append(vocab.bos_id)
            i += len(BOS_LITERAL)
        else:
            ids.append(vocab.index.get(text[i], unk))
            i += 1
    return TokenSequence(tuple(ids), vocab)


# --- multi-turn conversation assembly ---------------------------------------

USER = "user"
ASSISTANT = "assistant"


@dataclass(frozen=True)
class Turn:
    """One conversation turn; audio turns carry an opaque feature reference."""

    speaker: str
    text: str | None = None
    audio: object = None

    @property
    def is_audio(self) -> bool:
        return self.audio is not None


@dataclass(frozen=True)
class Segment:
    """A piece of the assembled conversation: TEXT bytes or an AUDIO reference."""

    kind: str  # "TEXT" | "AUDIO"
    text: str | None = None
    audio: object = None


def text_turn(speaker: str, text: str) -> Turn:
    return Turn(speaker, text=text)


def audio_turn(audio_ref: object) -> Turn:
    return Turn(USER, audio=audio_ref)


def build_conversation(history: list[Turn], template: ChatTemplate | None = None) -> list[Segment]:
    """Assemble a mixed-modality history into ordered TEXT/AUDIO segments.

    Replacing every AUDIO segment with its transcript reproduces the
    all-text multi-turn template byte-exactly; adjacent TEXT pieces are
    merged so a single text turn yields exactly one segment.
    """
    template = template or ChatTemplate()
    if not history:
        raise UsageError("conversation history is empty")
    segments: list[Segment] = []

    def emit_text(piece: str) -> None:
        if segments and segments[-1].kind == "TEXT":
            merged = segments[-1].text + piece
            segments[-1] = Segment("TEXT", text=merged)
        else:
            segments.append(Segment("TEXT", text=piece))

    for i, turn in enumerate(history):
        expected = USER if i % 2 == 0 else ASSISTANT
        if turn.speaker != expected:
            raise UsageError(
                f"history must alternate user/assistant starting with user; "
                f"turn {i} is {turn.speaker!r}"
            )
        if turn.speaker == ASSISTANT:
            if turn.is_audio:
                raise UsageError("assistant turns are text only")
            emit_text(" " + turn.text + EOS_LITERAL)
            continue
        opener = template.prefix if i == 0 else _FOLLOWUP_PREFIX
        emit_text(opener)
        if turn.is_audio:
            segments.append(Segment("AUDIO", audio=turn.audio))
        else:
            emit_text(turn.text)
        emit_text(template.suffix)
    return segments


def render_segments(segments: list[Segment], transcripts: dict[int, str] | None = None) -> str:
    """Flatten segments to bytes, substituting transcripts for AUDIO segments.

    ``transcripts`` maps the index of each AUDIO segment within ``segments``
    to its transcript; required whenever an AUDIO segment is present.
    """
    parts = []
    for i, seg in enumerate(segments):
        if seg.kind == "TEXT":
            parts.append(seg.text)
        else:
            if transcripts is None or i not in transcripts:
                raise UsageError(f"no transcript supplied for AUDIO segment at index {i}")
            parts.append(transcripts[i])
    return "".join(parts)
