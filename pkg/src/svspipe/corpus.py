"""Kaldi-style corpus manifests, utterance records and token lists."""

import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DuplicateKey, EmptyCorpus, KeyMismatch, MalformedLine, MissingFile
from .score import LabelSequence, format_label, parse_label

BLANK = "<blank>"
UNK = "<unk>"
SOS_EOS = "<sos/eos>"
SPECIAL_TOKENS = (BLANK, UNK, SOS_EOS)
DEFAULT_LANG = "und"
REQUIRED_FILES = ("wav.scp", "midi.scp", "label", "utt2spk")

_UTT_ID = re.compile(r"[A-Za-z0-9_\-]+")


@dataclass(frozen=True)
class Utterance:
    utt_id: str
    audio_ref: str
    midi_ref: str
    labels: LabelSequence
    singer_id: str
    lang_id: str = DEFAULT_LANG

    def __post_init__(self):
        if not _UTT_ID.fullmatch(self.utt_id):
            raise ValueError(f"invalid utterance id {self.utt_id!r}")


@dataclass(frozen=True)
class Corpus:
    split_name: str
    utterances: tuple
    singer_table: dict = field(default_factory=dict)
    lang_table: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))
        ids = [u.utt_id for u in self.utterances]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("utterances must be sorted by strictly increasing utt_id")
        for u in self.utterances:
            if u.singer_id not in self.singer_table:
                raise KeyError(f"singer {u.singer_id!r} missing from the singer table")
            if u.lang_id not in self.lang_table:
                raise KeyError(f"language {u.lang_id!r} missing from the language table")

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def get(self, utt_id):
        for u in self.utterances:
            if u.utt_id == utt_id:
                return u
        raise KeyError(utt_id)

    @property
    def utt_ids(self):
        return [u.utt_id for u in self.utterances]


@dataclass(frozen=True)
class TokenList:
    tokens: tuple

    def __post_init__(self):
        toks = tuple(self.tokens)
        object.__setattr__(self, "tokens", toks)
        if len(toks) < 3 or toks[0] != BLANK or toks[1] != UNK or toks[-1] != SOS_EOS:
            raise ValueError("token list must be <blank>, <unk>, ..., <sos/eos>")
        inner = toks[2:-1]
        if list(inner) != sorted(set(inner)) or any(t in SPECIAL_TOKENS for t in inner):
            raise ValueError("interior tokens must be unique, sorted and non-special")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(toks)})

    def __len__(self):
        return len(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    def __iter__(self):
        return iter(self.tokens)


def parse_scp(text):
    """Map ``utt_id`` to the verbatim remainder of each ``<utt_id> <value>`` line."""
    out = {}
    for line_no, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        key, sep, value = line.partition(" ")
        if not sep or not key:
            raise MalformedLine(line_no)
        if key in out:
            raise DuplicateKey(key)
        out[key] = value
    return out


def serialize_scp(mapping):
    return "".join(f"{k} {mapping[k]}\n" for k in sorted(mapping))


def build_token_list(corpora):
    phonemes = {e.phoneme for c in corpora for u in c for e in u.labels}
    phonemes -= set(SPECIAL_TOKENS)
    if not phonemes:
        raise EmptyCorpus("no phonemes found in the training labels")
    return TokenList((BLANK, UNK, *sorted(phonemes), SOS_EOS))


def token_to_id(tl, token):
    return tl._index.get(token, 1)


def write_token_list(path, tl):
    Path(path).write_text("".join(t + "\n" for t in tl), encoding="utf-8")


def read_token_list(path):
    return TokenList(Path(path).read_text(encoding="utf-8").splitlines())


def _first_appearance(values):
    table = {}
    for v in values:
        table.setdefault(v, len(table))
    return table


def load_corpus(data_dir, split_name=None, singer_table=None, lang_table=None):
    """Join ``wav.scp``, ``midi.scp``, ``label``, ``utt2spk`` (and ``utt2lang``).

    The join is strict: every manifest must list exactly the utterances of
    ``wav.scp``. Singer/language tables are built in order of first appearance
    over sorted ids unless explicit tables are passed (e.g. the training
    split's tables when loading dev/test).
    """
    data_dir = Path(data_dir)
    for name in REQUIRED_FILES:
        if not (data_dir / name).is_file():
            raise MissingFile(name)

    def read(name):
        return (data_dir / name).read_text(encoding="utf-8")

    wavs = parse_scp(read("wav.scp"))
    manifests = {
        "midi.scp": parse_scp(read("midi.scp")),
        "label": parse_label(read("label")),
        "utt2spk": {k: v.strip() for k, v in parse_scp(read("utt2spk")).items()},
    }
    if (data_dir / "utt2lang").is_file():
        manifests["utt2lang"] = {k: v.strip() for k, v in parse_scp(read("utt2lang")).items()}
    else:
        manifests["utt2lang"] = {k: DEFAULT_LANG for k in wavs}

    ids = sorted(wavs)
    for name, table in manifests.items():
        for utt_id in ids:
            if utt_id not in table:
                raise KeyMismatch(utt_id, name)
        for utt_id in sorted(table):
            if utt_id not in wavs:
                raise KeyMismatch(utt_id, "wav.scp")

    utts = [
        Utterance(
            utt_id=u,
            audio_ref=wavs[u],
            midi_ref=manifests["midi.scp"][u],
            labels=manifests["label"][u],
            singer_id=manifests["utt2spk"][u],
            lang_id=manifests["utt2lang"][u],
        )
        for u in ids
    ]
    if singer_table is None:
        singer_table = _first_appearance(u.singer_id for u in utts)
    if lang_table is None:
        lang_table = _first_appearance(u.lang_id for u in utts)
    return Corpus(split_name or data_dir.name, utts, dict(singer_table), dict(lang_table))


def save_corpus(corpus, data_dir):
    """Write the Kaldi-style manifests of ``corpus`` (sorted, LF, UTF-8)."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    utts = corpus.utterances
    files = {
        "wav.scp": serialize_scp({u.utt_id: u.audio_ref for u in utts}),
        "midi.scp": serialize_scp({u.utt_id: u.midi_ref for u in utts}),
        "label": format_label({u.utt_id: u.labels for u in utts}),
        "utt2spk": serialize_scp({u.utt_id: u.singer_id for u in utts}),
        "utt2lang": serialize_scp({u.utt_id: u.lang_id for u in utts}),
    }
    for name, text in files.items():
        (data_dir / name).write_text(text, encoding="utf-8", newline="\n")
