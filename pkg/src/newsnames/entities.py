"""Person-name recognition and validation over cleaned OCR text.

The in-repo recogniser is a capitalisation heuristic backed by small
lexicons. An external NER process can be plugged in; its PERSON entities are
unioned with the heuristic ones and everything goes through the same
validation filters.
"""

from __future__ import annotations

import enum
import json
import logging
import shlex
import subprocess
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

from .audit import Collector, digest_bytes, digest_obj
from .errors import AdapterError
from .ocrtext import TextSpan

log = logging.getLogger(__name__)

MAX_TOKENS = 5
LEXICON_FILES = ("honorifics", "particles", "stoplist", "given_names", "surnames")
NAME_JOINERS = frozenset("-'’.")
# Letters that carry no decomposable diacritic but still fold to a base letter.
_EXTRA_FOLDS = str.maketrans({"ħ": "h", "ł": "l", "ø": "o", "đ": "d", "ð": "d",
                              "ı": "i", "þ": "th", "æ": "ae", "œ": "oe"})


def fold_key(surface: str) -> str:
    """Comparison key: case-folded, diacritics removed, whitespace collapsed."""
    s = unicodedata.normalize("NFKD", surface.casefold())
    s = "".join(ch for ch in s if not unicodedata.combining(ch))
    s = s.translate(_EXTRA_FOLDS)
    return " ".join(s.split())


class Reason(str, enum.Enum):
    OK = "OK"
    HONORIFIC_ONLY = "Honorific-Only"
    AMBIGUOUS_SINGLE_SURNAME = "Ambiguous-Single-Surname"
    STOPLIST = "Stoplist"
    ALL_CAPS_GRAPHIC = "All-Caps-Graphic"
    TOO_MANY_TOKENS = "Too-Many-Tokens"
    NON_LETTER = "Non-Letter"


@dataclass(frozen=True)
class ValidationVerdict:
    accepted: bool
    reason: Reason

    def __post_init__(self) -> None:
        if self.accepted != (self.reason is Reason.OK):
            raise ValueError("verdict must be accepted exactly when the reason is OK")


@dataclass(frozen=True)
class Lexicons:
    honorifics: frozenset[str]
    particles: frozenset[str]
    stoplist: frozenset[str]
    given_names: frozenset[str]
    surnames: frozenset[str]
    digests: dict[str, str] = field(default_factory=dict, compare=False)

    @property
    def known_names(self) -> frozenset[str]:
        return self.given_names | self.surnames


def _parse_lexicon(text: str) -> frozenset[str]:
    entries = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            entries.add(fold_key(line))
    return frozenset(entries)


def load_lexicons(directory: Optional[str | Path] = None) -> Lexicons:
    """Load the five word lists from ``directory`` (default: packaged seed lists)."""
    sets, digests = {}, {}
    for name in LEXICON_FILES:
        if directory is None:
            data = resources.files("newsnames.data").joinpath(f"{name}.txt").read_bytes()
        else:
            data = (Path(directory) / f"{name}.txt").read_bytes()
        sets[name] = _parse_lexicon(data.decode("utf-8"))
        digests[name] = digest_bytes(data)
    return Lexicons(digests=digests, **sets)


_DEFAULT_LEXICONS: Optional[Lexicons] = None


def default_lexicons() -> Lexicons:
    global _DEFAULT_LEXICONS
    if _DEFAULT_LEXICONS is None:
        _DEFAULT_LEXICONS = load_lexicons()
    return _DEFAULT_LEXICONS


def is_honorific(token: str, honorifics: Iterable[str]) -> bool:
    return fold_key(token.rstrip(".")) in honorifics


def strip_honorifics(tokens: Sequence[str], honorifics: Optional[frozenset[str]] = None) -> list[str]:
    """Drop leading title tokens (``["Dr", "Dr", "Who"]`` -> ``["Who"]``)."""
    if honorifics is None:
        honorifics = default_lexicons().honorifics
    i = 0
    while i < len(tokens) and is_honorific(tokens[i], honorifics):
        i += 1
    return list(tokens[i:])


@dataclass(frozen=True)
class ProvenanceStep:
    stage: str
    input_digest: str
    params_digest: str


@dataclass(frozen=True)
class NameCandidate:
    """A proposed person name seen at one point in time.

    ``surface`` keeps the displayed form (casing, diacritics, a title kept
    when it is the only context for a lone surname). ``core`` is the token
    list after title stripping and is what clustering compares.
    """

    surface: str
    timestamp_s: float
    source_confidence: float = 100.0
    provenance: tuple[ProvenanceStep, ...] = ()
    frame_index: Optional[int] = None
    covered_until_s: Optional[float] = None
    sources: tuple[str, ...] = ("heuristic",)
    core: Optional[tuple[str, ...]] = None
    normalized: str = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "normalized", fold_key(self.surface))
        if self.core is None:
            object.__setattr__(self, "core", tuple(strip_honorifics(self.tokens)))
        else:
            object.__setattr__(self, "core", tuple(self.core))

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self.surface.split())

    @property
    def core_surface(self) -> str:
        return " ".join(self.core)

    @property
    def core_key(self) -> str:
        return fold_key(self.core_surface)

    def to_json(self) -> dict:
        return {
            "surface": self.surface,
            "normalized": self.normalized,
            "core": list(self.core),
            "timestamp_s": self.timestamp_s,
            "covered_until_s": self.covered_until_s,
            "frame_index": self.frame_index,
            "source_confidence": self.source_confidence,
            "sources": list(self.sources),
            "provenance": [[p.stage, p.input_digest, p.params_digest] for p in self.provenance],
        }

    def digest(self) -> str:
        return digest_obj(self.to_json())


def _is_all_caps(tokens: Sequence[str]) -> bool:
    letters = [ch for t in tokens for ch in t if ch.isalpha()]
    return len(letters) >= 2 and all(not ch.islower() for ch in letters) \
        and any(ch.isupper() for ch in letters)


def _is_capitalised(token: str, lex: Lexicons) -> bool:
    if not token or not token[0].isupper():
        return False
    if _is_all_caps([token]):
        key = fold_key(token.rstrip("."))
        return key in lex.known_names or key in lex.honorifics
    return True


def _word_chars_ok(token: str) -> bool:
    return all(ch.isalpha() or ch in NAME_JOINERS or unicodedata.combining(ch) for ch in token)


def validate_name(
    candidate: NameCandidate,
    lexicons: Optional[Lexicons] = None,
    allow_single_surname: bool = False,
) -> ValidationVerdict:
    """Heuristic filters applied in a fixed order; the first failing one gives the reason."""
    lex = lexicons or default_lexicons()
    core = strip_honorifics(candidate.tokens, lex.honorifics)
    if not core:
        return ValidationVerdict(False, Reason.HONORIFIC_ONLY)
    if len(core) > MAX_TOKENS:
        return ValidationVerdict(False, Reason.TOO_MANY_TOKENS)
    for t in core:
        if not _word_chars_ok(t) or not (t[0].isupper() or fold_key(t) in lex.particles):
            return ValidationVerdict(False, Reason.NON_LETTER)
    folded = [fold_key(t) for t in core]
    if _is_all_caps(core) and not all(f in lex.known_names or f in lex.particles for f in folded):
        return ValidationVerdict(False, Reason.ALL_CAPS_GRAPHIC)
    if len(folded) == 1 and folded[0] in lex.stoplist:
        if folded[0] in lex.surnames:
            if allow_single_surname:
                return ValidationVerdict(True, Reason.OK)
            return ValidationVerdict(False, Reason.AMBIGUOUS_SINGLE_SURNAME)
        return ValidationVerdict(False, Reason.STOPLIST)
    if all(f in lex.stoplist for f in folded):
        return ValidationVerdict(False, Reason.STOPLIST)
    return ValidationVerdict(True, Reason.OK)


def _split_edges(raw: str) -> tuple[str, str, str]:
    i, j = 0, len(raw)
    while i < j and unicodedata.category(raw[i])[0] in "PS":
        i += 1
    while j > i and unicodedata.category(raw[j - 1])[0] in "PS":
        j -= 1
    return raw[:i], raw[i:j], raw[j:]


def heuristic_names(text: str, lexicons: Optional[Lexicons] = None) -> list[str]:
    """Surfaces of person-name runs in ``text``, in order of appearance.

    A run is a maximal sequence of capitalised tokens (particles allowed in
    between); punctuation after a token ends the run. Leading titles are
    stripped unless that would leave a lone surname, in which case the title
    stays as context ("President Trump"). A lone capitalised word is proposed
    only when it is a known given name. All-caps words count as capitalised
    only when they are known names or titles.
    """
    lex = lexicons or default_lexicons()
    runs: list[list[str]] = []
    current: list[str] = []

    def close() -> None:
        while current and fold_key(current[-1]) in lex.particles and not current[-1][:1].isupper():
            current.pop()
        if current:
            runs.append(list(current))
        current.clear()

    for raw in text.split():
        lead, core, trail = _split_edges(raw)
        if lead:
            close()
        if not core:
            close()
            continue
        if _is_capitalised(core, lex):
            current.append(core)
        elif current and core in lex.particles:
            current.append(core)
        else:
            close()
            continue
        keeps_run = trail == "." and (is_honorific(core, lex.honorifics)
                                      or (len(core) == 1 and core.isupper()))
        if trail and not keeps_run:
            close()
    close()

    out, seen = [], set()
    for run in runs:
        core = strip_honorifics(run, lex.honorifics)
        if len(core) >= 2:
            surface = " ".join(core)
        elif len(run) >= 2:
            surface = " ".join(run)
        elif core and fold_key(core[0]) in lex.given_names:
            surface = core[0]
        else:
            continue
        key = fold_key(surface)
        if key not in seen:
            seen.add(key)
            out.append(surface)
    return out


class NerAdapter(Protocol):
    def persons(self, text: str) -> list[str]:
        ...


class CommandNer:
    """External NER: text on stdin, ``[{"text": ..., "label": ...}]`` on stdout."""

    def __init__(self, command: str, timeout_s: float = 60.0) -> None:
        self.argv = shlex.split(command)
        self.timeout_s = timeout_s

    def persons(self, text: str) -> list[str]:
        try:
            proc = subprocess.run(self.argv, input=text + "\n", capture_output=True,
                                  text=True, encoding="utf-8", timeout=self.timeout_s)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise AdapterError(f"NER command failed: {exc}") from exc
        if proc.returncode != 0:
            raise AdapterError(f"NER exited with {proc.returncode}: {proc.stderr.strip()[:300]}")
        try:
            ents = json.loads(proc.stdout)
        except json.JSONDecodeError as exc:
            raise AdapterError(f"NER output is not JSON: {exc}") from exc
        if not isinstance(ents, list):
            raise AdapterError("NER output must be a JSON list")
        names = []
        for e in ents:
            if isinstance(e, dict) and e.get("label") == "PERSON" and isinstance(e.get("text"), str):
                if e["text"].strip():
                    names.append(" ".join(e["text"].split()))
        return names


def recognize_entities(
    span: TextSpan,
    lexicons: Optional[Lexicons] = None,
    ner: Optional[NerAdapter] = None,
    audit: Optional[Collector] = None,
    params_digest: str = "",
    covered_until_s: Optional[float] = None,
) -> list[NameCandidate]:
    """Candidates from the heuristic recogniser unioned with the NER adapter's.

    Output keys (``normalized``) are unique per span. A failing adapter
    degrades to heuristic-only output with a warning.
    """
    lex = lexicons or default_lexicons()
    found: dict[str, tuple[str, set[str]]] = {}
    for surface in heuristic_names(span.text, lex):
        found.setdefault(fold_key(surface), (surface, set()))[1].add("heuristic")
    if ner is not None:
        try:
            for surface in ner.persons(span.text):
                found.setdefault(fold_key(surface), (surface, set()))[1].add("ner")
        except AdapterError as exc:
            log.warning("NER adapter failed: %s", exc)
            if audit is not None:
                audit.warn("entities", f"NER adapter failed, heuristic only: {exc}",
                           frame_index=span.frame_index)
    step = ProvenanceStep("entities", span.digest(), params_digest)
    return [
        NameCandidate(surface, span.frame_timestamp_s, span.confidence, (step,),
                      span.frame_index, covered_until_s, tuple(sorted(sources)),
                      tuple(strip_honorifics(surface.split(), lex.honorifics)))
        for surface, sources in found.values()
    ]
