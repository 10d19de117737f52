"""Decompose a full-body motion caption into six body-part narratives.

The primary route asks a chat-completion service for a JSON object with one
description per body part.  Results are cached on disk keyed by prompt
version + caption.  A deterministic keyword fallback keeps everything usable
offline, and strict mode turns fallback off for production runs.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import requests
from filelock import FileLock

from .motion import PART_NAMES

IDLE_PHRASE = "does nothing"
# Accepted spellings that normalize to the idle phrase.
_IDLE_ALIASES = {"does nothing", "dose nothing", "nothing", "idle", "n/a", "none"}

SOURCE_TAGS = ("llm", "cache", "fallback", "manual")

ENV_URL = "LGTM_LLM_URL"
ENV_MODEL = "LGTM_LLM_MODEL"
ENV_KEY = "LGTM_LLM_KEY"


class DecompositionError(Exception):
    """Decomposition could not be produced (strict mode, service down)."""


class DecompositionParseError(DecompositionError):
    """Service reply could not be turned into six part descriptions."""


class NoJsonObjectError(DecompositionParseError):
    pass


class PartKeyError(DecompositionParseError):
    pass


class PartValueError(DecompositionParseError):
    pass


class ServiceError(DecompositionError):
    """Network/HTTP failure talking to the completion service."""


def _normalize_key(key: str) -> str:
    return re.sub(r"[\s\-]+", "_", key.strip().lower())


def _normalize_value(value: str) -> str:
    value = value.strip()
    if not value or value.lower() in _IDLE_ALIASES:
        return IDLE_PHRASE
    return value


@dataclass
class PartTexts:
    """Six part-level descriptions plus where they came from."""

    parts: dict[str, str]
    source: str = "manual"

    def __post_init__(self) -> None:
        if set(self.parts) != set(PART_NAMES):
            raise ValueError(f"parts must have exactly the keys {PART_NAMES}")
        if self.source not in SOURCE_TAGS:
            raise ValueError(f"source must be one of {SOURCE_TAGS}, got {self.source!r}")
        self.parts = {name: _normalize_value(str(self.parts[name])) for name in PART_NAMES}

    def __getitem__(self, name: str) -> str:
        return self.parts[name]

    def as_dict(self) -> dict[str, str]:
        return {name: self.parts[name] for name in PART_NAMES}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), ensure_ascii=False)

    def retagged(self, source: str) -> "PartTexts":
        return PartTexts(dict(self.parts), source=source)

    @classmethod
    def idle(cls, source: str = "fallback") -> "PartTexts":
        return cls({name: IDLE_PHRASE for name in PART_NAMES}, source=source)


@dataclass
class PromptSpec:
    """Three-section prompt: task definition, output requirements, examples."""

    task_definition: str
    output_requirements: str
    examples: list[tuple[str, PartTexts]]
    version: str = "prompt-v1"

    def __post_init__(self) -> None:
        if not self.examples:
            raise ValueError("prompt spec needs at least one few-shot example")


def load_default_prompt_spec() -> PromptSpec:
    payload = json.loads(
        resources.files("lgtm").joinpath("data/prompt_spec_v1.json").read_text("utf-8")
    )
    examples = [
        (caption, PartTexts(dict(parts))) for caption, parts in payload["examples"]
    ]
    return PromptSpec(
        task_definition=payload["task_definition"],
        output_requirements=payload["output_requirements"],
        examples=examples,
        version=payload["version"],
    )


def build_prompt(spec: PromptSpec, caption: str) -> str:
    """Deterministic prompt string; byte-identical for identical inputs."""
    if not caption.strip():
        raise ValueError("caption must be nonempty")
    lines = [spec.task_definition.strip(), "", spec.output_requirements.strip(), ""]
    for example_caption, example_parts in spec.examples:
        lines.append(f"Input: {json.dumps(example_caption, ensure_ascii=False)}")
        lines.append(f"Output: {json.dumps(example_parts.as_dict(), ensure_ascii=False)}")
        lines.append("")
    lines.append(f"Input: {json.dumps(caption.strip(), ensure_ascii=False)}")
    lines.append("Output:")
    return "\n".join(lines)


def _first_json_object(raw: str) -> dict:
    decoder = json.JSONDecoder()
    for idx, char in enumerate(raw):
        if char != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(raw[idx:])
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    raise NoJsonObjectError("no JSON object found in reply")


def parse_decomposition(raw: str) -> PartTexts:
    """Extract the six part descriptions from a service reply.

    Tolerates surrounding prose and code fences; part keys are matched
    case- and separator-insensitively; null/empty values become the idle
    phrase.  Raises a distinct error kind per failure mode so callers can
    decide whether a retry is worthwhile.
    """
    obj = _first_json_object(raw)
    normalized: dict[str, str] = {}
    for key, value in obj.items():
        name = _normalize_key(str(key))
        if name not in PART_NAMES:
            raise PartKeyError(f"unexpected part key {key!r}")
        if name in normalized:
            raise PartKeyError(f"duplicate part key {key!r}")
        if value is None:
            normalized[name] = IDLE_PHRASE
        elif isinstance(value, str):
            normalized[name] = _normalize_value(value)
        else:
            raise PartValueError(f"part {key!r} has non-string value {value!r}")
    missing = [name for name in PART_NAMES if name not in normalized]
    if missing:
        raise PartKeyError(f"missing part keys: {missing}")
    return PartTexts(normalized, source="llm")


# ---------------------------------------------------------------------------
# Offline fallback: clause splitting + keyword routing.
# ---------------------------------------------------------------------------

_CLAUSE_SPLIT = re.compile(
    r"\s*(?:,\s*)?\b(?:and then|then|and|while)\b\s+|\s*[,;.]\s+"
)
_SUBJECT = re.compile(
    r"^(?:(?:a|an|the)\s+)?"
    r"(?:person|man|woman|guy|girl|human|figure|character|someone|somebody|he|she|they|it)"
    r"\b\s*",
)
_INSTRUMENT = re.compile(
    r"\s*(?:with|using)\s+(?:his|her|their|its|the|a|both)?\s*(?:left|right)?\s*"
    r"(?:legs?|foot|feet|hands?|arms?|knees?|elbows?)\s*$"
)

_ARM_WORDS = r"hand|arm|wave|wav|clap|punch|wrist|elbow|shoulder|fist|reach|grab|throw|point|swing|box"
_LEG_WORDS = r"leg|foot|feet|step|walk|kick|jump|run|knee|stomp|march|squat|hop|crouch"
_TORSO_WORDS = r"bend|lean|turn|torso|spine|twist|bow|rotate|spin"
_HEAD_WORDS = r"head|look|nod|glance|gaze"


def _matches(words: str, clause: str) -> bool:
    return re.search(rf"\b(?:{words})\w*", clause) is not None


def _clean_clause(clause: str) -> str:
    clause = _SUBJECT.sub("", clause.strip())
    clause = _INSTRUMENT.sub("", clause)
    return clause.strip(" .")


def rule_fallback(caption: str) -> PartTexts:
    """Deterministic keyword/laterality routing of caption clauses to parts.

    Lateralized arm/leg mentions route to the matching side only; symmetric
    mentions go to both sides; clauses with no recognized keyword go to all
    six parts.  Parts with nothing routed get the idle phrase.
    """
    routed: dict[str, list[str]] = {name: [] for name in PART_NAMES}
    text = caption.strip().lower()
    for raw_clause in _CLAUSE_SPLIT.split(text):
        cleaned = _clean_clause(raw_clause)
        if not cleaned:
            continue
        has_left = re.search(r"\bleft\b", raw_clause) is not None
        has_right = re.search(r"\bright\b", raw_clause) is not None
        both_sides = has_left == has_right  # neither or both -> mirror

        targets: list[str] = []
        if _matches(_ARM_WORDS, raw_clause):
            if both_sides or has_left:
                targets.append("left_arm")
            if both_sides or has_right:
                targets.append("right_arm")
        if _matches(_LEG_WORDS, raw_clause):
            if both_sides or has_left:
                targets.append("left_leg")
            if both_sides or has_right:
                targets.append("right_leg")
        if _matches(_TORSO_WORDS, raw_clause):
            targets.append("torso")
        if _matches(_HEAD_WORDS, raw_clause):
            targets.append("head")
        if not targets:
            targets = list(PART_NAMES)
        for target in targets:
            routed[target].append(cleaned)

    parts = {
        name: ", ".join(clauses) if clauses else IDLE_PHRASE
        for name, clauses in routed.items()
    }
    return PartTexts(parts, source="fallback")


# ---------------------------------------------------------------------------
# On-disk cache and the completion client.
# ---------------------------------------------------------------------------


def cache_key(prompt_version: str, caption: str) -> str:
    digest = hashlib.sha256(f"{prompt_version}\n{caption.strip()}".encode("utf-8"))
    return digest.hexdigest()


class DecompositionCache:
    """Content-addressed JSON store; safe for concurrent readers plus one
    writer (advisory lock around writes, atomic replace)."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = FileLock(str(self.directory / ".lock"))

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, prompt_version: str, caption: str) -> PartTexts | None:
        path = self._path(cache_key(prompt_version, caption))
        if not path.exists():
            return None
        payload = json.loads(path.read_text(encoding="utf-8"))
        return PartTexts(payload["parts"], source="cache")

    def put(self, prompt_version: str, caption: str, parts: PartTexts) -> None:
        payload = {
            "caption": caption.strip(),
            "prompt_version": prompt_version,
            "source": parts.source,
            "parts": parts.as_dict(),
        }
        path = self._path(cache_key(prompt_version, caption))
        with self._lock:
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as handle:
                    json.dump(payload, handle, ensure_ascii=False)
                os.replace(tmp, path)
            finally:
                if os.path.exists(tmp):
                    os.unlink(tmp)

    def __len__(self) -> int:
        return sum(1 for _ in self.directory.glob("*.json"))


@dataclass
class ChatCompletionClient:
    """Minimal client for an OpenAI-style chat completion endpoint."""

    base_url: str
    model: str
    api_key: str = ""
    timeout: float = 60.0

    @classmethod
    def from_env(cls) -> "ChatCompletionClient":
        url = os.environ.get(ENV_URL, "")
        if not url:
            raise DecompositionError(f"{ENV_URL} is not set; use offline mode instead")
        return cls(
            base_url=url,
            model=os.environ.get(ENV_MODEL, "gpt-3.5-turbo"),
            api_key=os.environ.get(ENV_KEY, ""),
        )

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        try:
            resp = requests.post(
                self.base_url.rstrip("/") + "/chat/completions",
                json=body,
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise ServiceError(f"completion request failed: {exc}") from exc


def decompose(
    caption: str,
    client=None,
    cache: DecompositionCache | None = None,
    retries: int = 3,
    prompt_spec: PromptSpec | None = None,
    strict: bool = False,
) -> PartTexts:
    """Resolve a caption to six part descriptions.

    Order of resolution: cache hit (tagged ``cache``), then up to ``retries``
    service round-trips (tagged ``llm``), then the rule fallback (tagged
    ``fallback``) unless ``strict`` is set, in which case the last service
    error propagates.  Successful results are written back to the cache.
    """
    spec = prompt_spec or load_default_prompt_spec()
    if cache is not None:
        hit = cache.get(spec.version, caption)
        if hit is not None:
            return hit

    last_error: Exception | None = None
    if client is not None:
        prompt = build_prompt(spec, caption)
        for _ in range(max(retries, 0)):
            try:
                raw = client.complete(prompt)
                parts = parse_decomposition(raw)
            except DecompositionError as exc:
                last_error = exc
                continue
            if cache is not None:
                cache.put(spec.version, caption, parts)
            return parts

    if strict:
        raise DecompositionError(
            f"could not decompose {caption!r} after {retries} attempts"
        ) from last_error

    parts = rule_fallback(caption)
    if cache is not None:
        cache.put(spec.version, caption, parts)
    return parts
