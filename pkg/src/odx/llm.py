"""Chat-completion client, deterministic mock endpoint and response parsing."""
from __future__ import annotations

import json
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import httpx

from .catalog import DRUG_NDC, EXPOSURE_DX, EXPOSURE_RX, MARKER_DX_STRINGS
from .claims import ValidationError
from .cohort import NO_OVERDOSE, OVERDOSE, PredictionInstance
from .prediction import Prediction
from .serialize import ALL_FIELDS, DEFAULT_MAX_VISITS, PromptDocument, render_prompt

API_KEY_ENV = "ODX_API_KEY"
MOCK_ENDPOINT = "http://mock.odx.invalid/v1/chat/completions"
_RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}


class ParseError(ValueError):
    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


class TransportError(RuntimeError):
    def __init__(self, message: str, instance_id: str | None = None):
        super().__init__(f"{instance_id}: {message}" if instance_id else message)
        self.instance_id = instance_id


@dataclass
class LLMConfig:
    endpoint: str = MOCK_ENDPOINT
    model: str = "mock-chat"
    temperature: float = 0.5
    max_tokens: int = 16
    timeout: float = 60.0
    max_retries: int = 3
    max_concurrent: int = 4
    backoff_base: float = 0.5
    backoff_max: float = 8.0
    api_key_env: str = API_KEY_ENV
    api_key: str | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")
        if self.max_concurrent < 1:
            raise ValidationError("max_concurrent must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("api_key")  # never persisted
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LLMConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ValidationError(f"unknown llm settings: {sorted(unknown)}")
        return cls(**d)


# --- parsing ------------------------------------------------------------

_ANSWER_WORD = re.compile(r"\b(yes|no)\b", re.IGNORECASE)
_SCHEMA = re.compile(r"""["']?overdose_risk["']?\s*:\s*["']?(yes|no)\b""", re.IGNORECASE)
_LEADING = re.compile(r"""^[\s"'`*({\[]*(yes|no)\b""", re.IGNORECASE)


def parse_llm_response(text: str | None) -> str:
    """Map a model answer to a label; anything off-schema raises ParseError."""
    if text is None:
        raise ParseError("empty response", text)
    words = {w.lower() for w in _ANSWER_WORD.findall(text)}
    if words == {"yes", "no"}:
        raise ParseError("response contains both yes and no", text)
    m = _SCHEMA.search(text) or _LEADING.match(text)
    if not m:
        raise ParseError("response does not follow the answer schema", text)
    return OVERDOSE if m.group(1).lower() == "yes" else NO_OVERDOSE


def gold_answer(label: str) -> str:
    if label not in (OVERDOSE, NO_OVERDOSE):
        raise ValidationError(f"unknown label {label!r}")
    return json.dumps({"overdose_risk": "yes" if label == OVERDOSE else "no"})


def chat_messages(document: PromptDocument) -> list[dict]:
    return [
        {"role": "system", "content": document.instruction},
        {"role": "user", "content": document.body},
    ]


# --- mock endpoint -------------------------------------------------------

Responder = Callable[[str, str], str]


def constant_responder(answer: str = "no") -> Responder:
    return lambda system, user: answer


def _exposure_strings() -> tuple[str, ...]:
    out = []
    for e in EXPOSURE_DX:
        out += [e.code, e.description]
    for d in EXPOSURE_RX:
        out += [d.drug_name, DRUG_NDC[d.drug_name]]
    return tuple(sorted(set(out)))


EXPOSURE_STRINGS = _exposure_strings()


def keyword_responder(keywords: Iterable[str], min_hits: int = 1) -> Responder:
    """Answer yes when the patient text mentions the keywords at least ``min_hits`` times."""
    keywords = tuple(sorted(set(keywords)))

    def respond(system: str, user: str) -> str:
        hits = sum(user.count(k) for k in keywords)
        return '{"overdose_risk": "yes"}' if hits >= min_hits else '{"overdose_risk": "no"}'

    return respond


def exposure_biased_responder() -> Responder:
    """Flags anyone with opioid/stimulant history, mimicking a zero-shot model's bias."""
    return keyword_responder(EXPOSURE_STRINGS, 1)


def marker_responder(min_hits: int = 5) -> Responder:
    """Keyed on the planted diagnosis markers only; blind to procedures and drugs."""
    return keyword_responder(MARKER_DX_STRINGS, min_hits)


@dataclass
class MockChatServer:
    """In-process chat-completion endpoint for httpx.MockTransport.

    ``fail_first`` makes the first N requests answer 503; ``delay`` holds
    each request so concurrency limits become observable.
    """

    responder: Responder = field(default_factory=constant_responder)
    fail_first: int = 0
    fail_status: int = 503
    delay: float = 0.0
    requests: int = 0
    in_flight: int = 0
    max_in_flight: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def handle(self, request: httpx.Request) -> httpx.Response:
        with self._lock:
            self.requests += 1
            n = self.requests
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
        try:
            if self.delay:
                time.sleep(self.delay)
            if n <= self.fail_first:
                return httpx.Response(self.fail_status, json={"error": {"message": "temporarily unavailable"}})
            payload = json.loads(request.content)
            msgs = {m["role"]: m["content"] for m in payload["messages"]}
            text = self.responder(msgs.get("system", ""), msgs.get("user", ""))
            return httpx.Response(200, json={
                "id": f"mock-{n}",
                "object": "chat.completion",
                "model": payload.get("model"),
                "choices": [{"index": 0, "message": {"role": "assistant", "content": text},
                             "finish_reason": "stop"}],
            })
        finally:
            with self._lock:
                self.in_flight -= 1

    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self.handle)


# --- client --------------------------------------------------------------

class LLMClient:
    def __init__(self, config: LLMConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        key = (config.api_key or os.environ.get(config.api_key_env)) if transport is None else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(transport=transport, timeout=config.timeout, headers=headers)

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _backoff(self, attempt: int) -> float:
        return min(self.config.backoff_max, self.config.backoff_base * 2 ** attempt)

    def complete(self, messages: list[dict], instance_id: str | None = None) -> str:
        cfg = self.config
        body = {"model": cfg.model, "messages": messages, "temperature": cfg.temperature,
                "max_tokens": cfg.max_tokens}
        last = "no attempt made"
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                self._sleep(self._backoff(attempt - 1))
            try:
                resp = self._http.post(cfg.endpoint, json=body)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code in _RETRY_STATUS:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}", instance_id)
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed completion payload ({exc})", instance_id) from exc
        raise TransportError(f"gave up after {cfg.max_retries + 1} attempts ({last})", instance_id)


def llm_predict(config: LLMConfig, document: PromptDocument, client: LLMClient | None = None) -> Prediction:
    own = client is None
    client = client or LLMClient(config)
    try:
        raw = client.complete(chat_messages(document), document.instance_id)
    finally:
        if own:
            client.close()
    label = parse_llm_response(raw)
    return Prediction(document.instance_id, label, None, raw)


def llm_predict_batch(config: LLMConfig, documents: Sequence[PromptDocument],
                      client: LLMClient | None = None) -> list[Prediction]:
    """Predict every document with at most ``max_concurrent`` requests in flight.

    Failures do not abort the batch: they come back as predictions without a
    label, carrying the error text (and the raw answer for parse errors).
    """
    own = client is None
    client = client or LLMClient(config)

    def one(doc: PromptDocument) -> Prediction:
        try:
            return llm_predict(config, doc, client)
        except ParseError as exc:
            return Prediction(doc.instance_id, None, None, exc.raw, f"parse error: {exc}")
        except TransportError as exc:
            return Prediction(doc.instance_id, None, None, None, f"transport error: {exc}")

    try:
        with ThreadPoolExecutor(max_workers=config.max_concurrent) as pool:
            return list(pool.map(one, documents))
    finally:
        if own:
            client.close()


# --- fine-tuning export ------------------------------------------------------

def finetune_record(document: PromptDocument, label: str) -> dict:
    return {"messages": chat_messages(document) + [{"role": "assistant", "content": gold_answer(label)}]}


def export_finetune_dataset(
    instances: Iterable[PredictionInstance],
    fmt,
    max_visits: int = DEFAULT_MAX_VISITS,
    mask=ALL_FIELDS,
    dictionary=None,
    out_path: str | Path = "finetune.jsonl",
    templates_dir=None,
) -> int:
    n = 0
    try:
        with open(out_path, "w", encoding="utf-8") as fh:
            for inst in instances:
                doc = render_prompt(inst, fmt, max_visits, mask, dictionary, templates_dir)
                fh.write(json.dumps(finetune_record(doc, inst.label), ensure_ascii=False) + "\n")
                n += 1
    except OSError as exc:
        raise OSError(f"cannot write fine-tuning data to {out_path}: {exc}") from exc
    return n
