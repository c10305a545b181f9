"""Client for the generative multimodal baseline.

Deduplicated frames are PNG-encoded, base64'd and posted in batches to a
configurable JSON endpoint together with a structured prompt; the JSON
answers are parsed into the same predictions schema the pipeline emits.
Every response body is persisted verbatim before it is parsed.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import os
import re
import socket
import string
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Optional, Protocol, Sequence

from PIL import Image

from .audit import Collector, digest_bytes, digest_obj
from .entities import fold_key
from .errors import BaselineUnavailable, ConfigError
from .ingest import DEFAULT_DEDUP_THRESHOLD, Frame, deduplicate

log = logging.getLogger(__name__)

RESPONSE_SCHEMA = (
    '{"names": [{"name": "<full name exactly as shown>", '
    '"first_s": <seconds or null>, "last_s": <seconds or null>}]}'
)
PLACEHOLDERS = frozenset({"schema", "frame_count", "frame_times"})


@dataclass(frozen=True)
class BaselineParams:
    endpoint: str = "http://localhost:8080/v1/extract"
    model_id: str = "multimodal-model"
    timeout_s: float = 60.0
    max_frames_per_request: int = 16
    prompt_template: Optional[str] = None
    api_key_env: str = "NEWSNAMES_API_KEY"
    retries: int = 3
    backoff_s: float = 1.0
    dedup_threshold: int = DEFAULT_DEDUP_THRESHOLD

    def __post_init__(self) -> None:
        if self.max_frames_per_request < 1:
            raise ValueError("max_frames_per_request must be >= 1")
        if self.retries < 1:
            raise ValueError("retries must be >= 1")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")


def read_template(path: Optional[str | Path] = None) -> str:
    if path is None:
        return resources.files("newsnames.data").joinpath("baseline_prompt.txt").read_text("utf-8")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"prompt template not found: {p}")
    return p.read_text(encoding="utf-8")


def build_prompt(template: str, frame_times: Sequence[float] = ()) -> tuple[str, str]:
    """Fill ``$schema``, ``$frame_count`` and ``$frame_times``; return ``(prompt, template_digest)``.

    Raises:
        ConfigError: the template uses a placeholder other than those three.
    """
    tpl = string.Template(template)
    for m in tpl.pattern.finditer(template):
        name = m.group("named") or m.group("braced")
        if m.group("invalid") is not None:
            raise ConfigError(f"malformed placeholder at offset {m.start('invalid')} in prompt template")
        if name is not None and name not in PLACEHOLDERS:
            raise ConfigError(f"unknown placeholder '{name}' in prompt template")
    body = "\n".join(ln for ln in template.splitlines() if not ln.startswith("##")).strip()
    prompt = string.Template(body).substitute(
        schema=RESPONSE_SCHEMA,
        frame_count=len(frame_times),
        frame_times=", ".join(f"{t:g}" for t in frame_times) or "unknown",
    )
    return prompt, digest_bytes(template.encode("utf-8"))


def encode_frames(frames: Sequence[Frame], audit: Optional[Collector] = None) -> list[str]:
    """PNG-encode then base64 each frame, preserving order. Frames that fail to encode are skipped."""
    out = []
    for f in frames:
        try:
            buf = io.BytesIO()
            Image.fromarray(f.pixels).save(buf, format="PNG")
        except (OSError, ValueError) as exc:
            log.warning("could not encode frame %d: %s", f.index, exc)
            if audit is not None:
                audit.warn("baseline", f"frame encode failed: {exc}", frame_index=f.index)
            continue
        out.append(base64.b64encode(buf.getvalue()).decode("ascii"))
    return out


@dataclass(frozen=True)
class BaselineRequest:
    images: tuple[str, ...]
    timestamps: tuple[float, ...]
    prompt: str
    endpoint: str
    model_id: str
    timeout_s: float = 60.0

    def __post_init__(self) -> None:
        if not self.prompt.strip():
            raise ValueError("prompt must not be empty")
        if len(self.images) != len(self.timestamps):
            raise ValueError("one timestamp per image required")

    def body(self) -> bytes:
        return json.dumps({"model": self.model_id, "prompt": self.prompt,
                           "images": list(self.images)}).encode("utf-8")


@dataclass(frozen=True)
class BaselineName:
    name: str
    first_s: Optional[float] = None
    last_s: Optional[float] = None


@dataclass(frozen=True)
class ParsedNames:
    names: tuple[BaselineName, ...]
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class BaselineResponse:
    names: tuple[BaselineName, ...]
    raw: str
    status: int
    attempts: int
    flags: tuple[str, ...] = ()


class TransportError(Exception):
    pass


class TransportTimeout(TransportError):
    pass


class Transport(Protocol):
    def post(self, url: str, body: bytes, headers: dict[str, str], timeout_s: float) -> tuple[int, str]:
        """Return ``(status, body_text)``; raise :class:`TransportError` on network failure."""
        ...


class HttpTransport:
    def post(self, url: str, body: bytes, headers: dict[str, str], timeout_s: float) -> tuple[int, str]:
        req = urllib.request.Request(url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=timeout_s) as resp:
                return resp.status, resp.read().decode("utf-8", errors="replace")
        except urllib.error.HTTPError as exc:
            return exc.code, exc.read().decode("utf-8", errors="replace")
        except (socket.timeout, TimeoutError) as exc:
            raise TransportTimeout(str(exc)) from exc
        except (urllib.error.URLError, OSError) as exc:
            reason = getattr(exc, "reason", exc)
            if isinstance(reason, (socket.timeout, TimeoutError)):
                raise TransportTimeout(str(reason)) from exc
            raise TransportError(str(reason)) from exc


class MockTransport:
    """Replays scripted responses from a fixtures directory, one file per call, in name order.

    ``*.timeout`` raises a timeout, ``*.neterr`` a network error, and a name
    containing ``.http<code>.`` returns that status; anything else returns 200
    with the file content as body.
    """

    _STATUS = re.compile(r"\.http(\d{3})\.")

    def __init__(self, fixtures: str | Path) -> None:
        self.dir = Path(fixtures)
        if not self.dir.is_dir():
            raise ConfigError(f"mock fixtures directory not found: {self.dir}")
        self.files = sorted(p for p in self.dir.iterdir() if p.is_file())
        self.calls = 0
        self.requests: list[dict[str, Any]] = []

    def post(self, url: str, body: bytes, headers: dict[str, str], timeout_s: float) -> tuple[int, str]:
        self.requests.append({"url": url, "body": json.loads(body), "timeout_s": timeout_s})
        if self.calls >= len(self.files):
            raise TransportError("no scripted responses left")
        path = self.files[self.calls]
        self.calls += 1
        if path.suffix == ".timeout":
            raise TransportTimeout(f"scripted timeout ({path.name})")
        if path.suffix == ".neterr":
            raise TransportError(f"scripted network error ({path.name})")
        m = self._STATUS.search(path.name)
        return (int(m.group(1)) if m else 200), path.read_bytes().decode("utf-8")


_FENCE = re.compile(r"^\s*```[a-zA-Z]*\s*\n(.*?)\n\s*```\s*$", re.S)


def _opt_seconds(v: Any) -> Optional[float]:
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"bad timestamp {v!r}")
    return float(v)


def merge_name(merged: dict[str, BaselineName], entry: BaselineName) -> None:
    """Insert ``entry`` keyed by folded name; a repeat keeps the first surface and widens the times."""
    key = fold_key(entry.name)
    prev = merged.get(key)
    if prev is None:
        merged[key] = entry
        return
    firsts = [t for t in (prev.first_s, entry.first_s) if t is not None]
    lasts = [t for t in (prev.last_s, entry.last_s) if t is not None]
    merged[key] = BaselineName(prev.name, min(firsts, default=None), max(lasts, default=None))


def parse_response(raw: str) -> ParsedNames:
    """Parse a model answer. Never raises; problems are reported as flags.

    Accepts ``{"names": [...]}`` whose items are strings or
    ``{"name", "first_s", "last_s"}`` objects, or a bare JSON array of the
    same. Names are trimmed and deduplicated by folded key, widening the
    time span of the first occurrence.
    """
    m = _FENCE.match(raw)
    text = m.group(1) if m else raw
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, TypeError):
        return ParsedNames((), ("parse-error",))
    flags: list[str] = []
    if isinstance(doc, dict):
        if "names" not in doc:
            return ParsedNames((), ("missing-field",))
        items = doc["names"]
    else:
        items = doc
    if not isinstance(items, list):
        return ParsedNames((), ("bad-shape",))

    merged: dict[str, BaselineName] = {}
    for item in items:
        try:
            if isinstance(item, str):
                entry = BaselineName(" ".join(item.split()))
            elif isinstance(item, dict) and isinstance(item.get("name"), str):
                entry = BaselineName(" ".join(item["name"].split()),
                                     _opt_seconds(item.get("first_s")), _opt_seconds(item.get("last_s")))
            else:
                raise ValueError("item is neither a string nor a name object")
        except ValueError:
            if "bad-item" not in flags:
                flags.append("bad-item")
            continue
        if not entry.name:
            continue
        merge_name(merged, entry)
    return ParsedNames(tuple(merged.values()), tuple(flags))


def query_endpoint(
    request: BaselineRequest,
    transport: Transport,
    retries: int = 3,
    backoff_s: float = 1.0,
    api_key: Optional[str] = None,
    sleep: Callable[[float], None] = time.sleep,
    audit: Optional[Collector] = None,
) -> BaselineResponse:
    """POST the request, retrying network failures with exponential backoff.

    Raises:
        BaselineUnavailable: every attempt timed out or failed at the network level.
    """
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    body = request.body()
    body_digest = digest_bytes(body)
    for attempt in range(1, retries + 1):
        try:
            status, raw = transport.post(request.endpoint, body, headers, request.timeout_s)
        except TransportError as exc:
            kind = "timeout" if isinstance(exc, TransportTimeout) else "network error"
            if audit is not None:
                audit.record("baseline", input_digest=body_digest,
                             message=f"attempt {attempt}/{retries}: {kind}: {exc}")
            if attempt == retries:
                raise BaselineUnavailable(f"endpoint unavailable after {retries} attempts: {exc}") from exc
            sleep(backoff_s * 2 ** (attempt - 1))
            continue
        if audit is not None:
            audit.record("baseline", input_digest=body_digest, output_digest=digest_bytes(raw.encode("utf-8")),
                         message=f"attempt {attempt}/{retries}: HTTP {status}")
        if not 200 <= status < 300:
            return BaselineResponse((), raw, status, attempt, (f"http-{status}",))
        parsed = parse_response(raw)
        return BaselineResponse(parsed.names, raw, status, attempt, parsed.flags)
    raise AssertionError("unreachable")


@dataclass
class BaselineRun:
    predictions: list[dict] = field(default_factory=list)
    responses: list[BaselineResponse] = field(default_factory=list)
    prompt_digest: str = ""


def run_baseline(
    frames: Sequence[Frame],
    params: BaselineParams,
    transport: Transport,
    out_dir: Optional[Path] = None,
    audit: Optional[Collector] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> BaselineRun:
    """Dedup, encode, batch, query and union the names from all batches."""
    template = read_template(params.prompt_template)
    kept = deduplicate(frames, params.dedup_threshold)
    api_key = os.environ.get(params.api_key_env) if params.api_key_env else None
    run = BaselineRun()
    merged: dict[str, BaselineName] = {}
    raw_dir = None
    if out_dir is not None:
        raw_dir = Path(out_dir) / "baseline_raw"
        raw_dir.mkdir(parents=True, exist_ok=True)
    step = params.max_frames_per_request
    for b, start in enumerate(range(0, len(kept), step)):
        batch = kept[start:start + step]
        images = encode_frames(batch, audit)
        times = [f.timestamp_s for f in batch][:len(images)]
        prompt, tdigest = build_prompt(template, times)
        run.prompt_digest = tdigest
        req = BaselineRequest(tuple(images), tuple(times), prompt, params.endpoint,
                              params.model_id, params.timeout_s)
        resp = query_endpoint(req, transport, params.retries, params.backoff_s, api_key, sleep, audit)
        run.responses.append(resp)
        if raw_dir is not None:
            (raw_dir / f"response_{b:03d}.txt").write_bytes(resp.raw.encode("utf-8"))
        if audit is not None:
            audit.record("baseline", input_digest=digest_bytes(req.body()),
                         output_digest=digest_obj([n.name for n in resp.names]),
                         params_digest=tdigest,
                         message=f"batch {b}: {len(resp.names)} names; flags={list(resp.flags)}")
        for n in resp.names:
            merge_name(merged, n)
    for n in merged.values():
        timed = n.first_s is not None and n.last_s is not None
        run.predictions.append({
            "canonical": n.name,
            "first_s": n.first_s if timed else None,
            "last_s": n.last_s if timed else None,
            "intervals": [[n.first_s, n.last_s]] if timed else [],
        })
    return run
