"""Prompt-based classification against a chat-completion endpoint.

Each subscale gets a prompt built from three structural pieces: a
domain-expert role, the subscale definition, and an output constraint that
restricts the answer to exactly "met" or "not met". Few-shot variants
insert positive-only examples drawn (seeded) from the gold training split.

Parsing is deliberately strict: anything that is not exactly a label after
normalization is a failure, because failure rate is a first-class metric
and lenient parsing would launder it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import httpx

from .subscales import GUIDELINES, Subscale

logger = logging.getLogger(__name__)

VERDICTS = ("met", "not_met", "failure")
FAILURE_REASONS = ("empty_response", "unparseable", "ambiguous", "transport_exhausted")
ALLOWED_SHOTS = (0, 1, 3, 5)


class InferenceError(Exception):
    pass


class EndpointError(InferenceError):
    """Transport or HTTP failure after retries were exhausted."""


DEFAULT_ROLE_PREAMBLE = (
    "You are an HIV clinical domain expert reviewing sentences from "
    "clinical notes for stigma-related content."
)
DEFAULT_OUTPUT_CONSTRAINT = (
    'Decide whether the outcome is met in the sentence below. Respond with '
    'exactly "met" or "not met" and nothing else.'
)


@dataclass(frozen=True)
class PromptTemplate:
    subscale: Subscale
    role_preamble: str = DEFAULT_ROLE_PREAMBLE
    definition: str = ""
    output_constraint: str = DEFAULT_OUTPUT_CONSTRAINT

    @classmethod
    def for_subscale(cls, subscale: Subscale) -> "PromptTemplate":
        return cls(subscale=subscale, definition=GUIDELINES[subscale].definition)

    def hash(self) -> str:
        payload = "\x1f".join(
            [self.subscale.value, self.role_preamble, self.definition, self.output_constraint]
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ShotConfig:
    shots: int
    example_pool: tuple[tuple[str, str], ...] = ()  # (sentence_id, text) positives, train split
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.shots not in ALLOWED_SHOTS:
            raise InferenceError(f"shots must be one of {ALLOWED_SHOTS}, got {self.shots}")
        if self.shots > len(self.example_pool):
            raise InferenceError(
                f"{self.shots}-shot prompt needs {self.shots} pool examples, "
                f"have {len(self.example_pool)}"
            )


@dataclass(frozen=True)
class RenderedPrompt:
    system: str
    user: str
    example_ids: tuple[str, ...]

    @property
    def text(self) -> str:
        return self.system + "\n\n" + self.user


def render_prompt(
    template: PromptTemplate,
    shot_config: ShotConfig,
    sentence_id: str,
    sentence_text: str,
) -> RenderedPrompt:
    """Deterministic render: same (template, shots, seed) picks the same
    examples for every target sentence. The target itself is excluded from
    the candidate pool, never silently included."""
    eligible = [(sid, text) for sid, text in shot_config.example_pool if sid != sentence_id]
    if shot_config.shots > len(eligible):
        raise InferenceError(
            f"example pool too small after excluding the target sentence: "
            f"need {shot_config.shots}, have {len(eligible)}"
        )
    rng = random.Random(shot_config.rng_seed)
    picked = rng.sample(eligible, shot_config.shots) if shot_config.shots else []
    assert all(sid != sentence_id for sid, _ in picked)

    display = GUIDELINES[template.subscale].display_name
    parts = [
        f"Stigma outcome under review: {display}.",
        f"Definition: {template.definition}",
    ]
    if picked:
        lines = ["Example sentences where the outcome is met:"]
        for i, (_sid, text) in enumerate(picked, start=1):
            lines.append(f"{i}. {text}")
        parts.append("\n".join(lines))
    parts.append(template.output_constraint)
    parts.append(f"Sentence: {sentence_text}")
    parts.append("Answer:")
    return RenderedPrompt(
        system=template.role_preamble,
        user="\n\n".join(parts),
        example_ids=tuple(sid for sid, _ in picked),
    )


# -- endpoint client ------------------------------------------------------------


@dataclass
class EndpointConfig:
    base_url: str
    model_name: str
    auth_env: str | None = None  # env var holding the bearer token; never persisted
    temperature: float = 0.0
    max_output_tokens: int = 16
    timeout: float = 30.0
    max_transport_retries: int = 3
    backoff_base: float = 0.5
    min_request_interval: float = 0.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise InferenceError(f"temperature must be >= 0, got {self.temperature}")
        if self.timeout <= 0:
            raise InferenceError(f"timeout must be > 0, got {self.timeout}")


class _Throttle:
    def __init__(self, min_interval: float) -> None:
        self.min_interval = min_interval
        self._lock = threading.Lock()
        self._last = 0.0

    def wait(self) -> None:
        if self.min_interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._last + self.min_interval - now
            if delay > 0:
                time.sleep(delay)
            self._last = time.monotonic()


def classify(
    endpoint: EndpointConfig,
    prompt: RenderedPrompt,
    client: httpx.Client | None = None,
    run_id: str = "",
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Single chat-completion round trip; returns the raw response text.

    Transport errors, timeouts, 429 and 5xx responses are retried with
    exponential backoff up to max_transport_retries; anything still failing
    raises EndpointError, which batch execution records as a
    transport_exhausted failure.
    """
    payload = {
        "model": endpoint.model_name,
        "messages": [
            {"role": "system", "content": prompt.system},
            {"role": "user", "content": prompt.user},
        ],
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_output_tokens,
    }
    headers = {}
    if endpoint.auth_env:
        token = os.environ.get(endpoint.auth_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
    url = endpoint.base_url.rstrip("/") + "/chat/completions"
    own_client = client is None
    if own_client:
        client = httpx.Client(timeout=endpoint.timeout)
    last_error: Exception | None = None
    try:
        for attempt in range(endpoint.max_transport_retries + 1):
            if attempt:
                sleep(endpoint.backoff_base * 2 ** (attempt - 1))
            try:
                response = client.post(url, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                logger.debug("run %s: transport error on attempt %d: %s", run_id, attempt, exc)
                last_error = exc
                continue
            if response.status_code == 429 or response.status_code >= 500:
                logger.debug(
                    "run %s: HTTP %d on attempt %d", run_id, response.status_code, attempt
                )
                last_error = EndpointError(f"HTTP {response.status_code}")
                continue
            if response.status_code != 200:
                raise EndpointError(f"HTTP {response.status_code}: {response.text[:200]}")
            try:
                body = response.json()
                content = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
                raise EndpointError(f"malformed completion response: {exc}") from exc
            logger.debug("run %s: response %r", run_id, content[:80] if content else content)
            return content if isinstance(content, str) else ""
    finally:
        if own_client:
            client.close()
    raise EndpointError(
        f"transport retries exhausted after {endpoint.max_transport_retries + 1} attempts: "
        f"{last_error}"
    )


# -- response parsing ------------------------------------------------------------

_STRIP_CHARS = " \t\"'`“”‘’.,:;!?()[]{}<>*-_"


@dataclass(frozen=True)
class Prediction:
    sentence_id: str
    subscale: Subscale
    verdict: str
    failure_reason: str | None = None
    raw_response: str = ""
    latency: float = 0.0

    def __post_init__(self) -> None:
        if self.verdict not in VERDICTS:
            raise InferenceError(f"invalid verdict {self.verdict!r}")
        if (self.verdict == "failure") != (self.failure_reason is not None):
            raise InferenceError("failure_reason must be set exactly when verdict is failure")
        if self.failure_reason is not None and self.failure_reason not in FAILURE_REASONS:
            raise InferenceError(f"invalid failure_reason {self.failure_reason!r}")


def parse_response(raw: str | bytes | None) -> tuple[str, str | None]:
    """Total, deterministic mapping from raw model output to
    (verdict, failure_reason). Never raises.

    Normalization: casefold, take the final non-empty line, strip
    surrounding quotes/punctuation. Accepted labels: met / not met /
    not_met, plus yes/no aliases. A line carrying both label strings is an
    ambiguous failure, not a guess.
    """
    if raw is None:
        return "failure", "empty_response"
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8", errors="replace")
    lines = [line.strip() for line in raw.casefold().splitlines()]
    lines = [line for line in lines if line]
    if not lines:
        return "failure", "empty_response"
    line = lines[-1].strip(_STRIP_CHARS)
    if not line:
        return "failure", "empty_response"
    if line in ("met", "yes"):
        return "met", None
    if line in ("not met", "not_met", "no"):
        return "not_met", None
    without_negative = line.replace("not met", " ").replace("not_met", " ")
    has_met = any(tok.strip(_STRIP_CHARS) == "met" for tok in without_negative.split())
    has_not_met = "not met" in line or "not_met" in line
    if has_met and has_not_met:
        return "failure", "ambiguous"
    return "failure", "unparseable"


# -- batch execution -------------------------------------------------------------


@dataclass
class RunManifest:
    run_id: str
    subscale: str
    model_name: str
    shots: int
    rng_seed: int
    template_hash: str
    n_items: int
    n_failures: int
    started_at: float
    finished_at: float


def run_batch(
    items: Sequence[tuple[str, str]],
    template: PromptTemplate,
    shot_config: ShotConfig,
    endpoint: EndpointConfig,
    client: httpx.Client | None = None,
    run_id: str | None = None,
    concurrency: int = 4,
) -> tuple[list[Prediction], RunManifest]:
    """One prediction per (sentence, subscale); failures are recorded, never
    raised, so a flaky endpoint cannot abort the batch."""
    if not items:
        raise InferenceError("empty evaluation batch")
    run_id = run_id or uuid.uuid4().hex[:12]
    started = time.time()
    throttle = _Throttle(endpoint.min_request_interval)
    own_client = client is None
    if own_client:
        client = httpx.Client(timeout=endpoint.timeout)

    def one(item: tuple[str, str]) -> Prediction:
        sentence_id, text = item
        prompt = render_prompt(template, shot_config, sentence_id, text)
        t0 = time.monotonic()
        try:
            throttle.wait()
            raw = classify(endpoint, prompt, client=client, run_id=run_id)
        except EndpointError as exc:
            return Prediction(
                sentence_id=sentence_id,
                subscale=template.subscale,
                verdict="failure",
                failure_reason="transport_exhausted",
                raw_response=str(exc),
                latency=time.monotonic() - t0,
            )
        verdict, reason = parse_response(raw)
        return Prediction(
            sentence_id=sentence_id,
            subscale=template.subscale,
            verdict=verdict,
            failure_reason=reason,
            raw_response=raw,
            latency=time.monotonic() - t0,
        )

    try:
        with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
            predictions = list(pool.map(one, items))
    finally:
        if own_client:
            client.close()

    predictions.sort(key=lambda p: p.sentence_id)
    n_failures = sum(1 for p in predictions if p.verdict == "failure")
    n_met = sum(1 for p in predictions if p.verdict == "met")
    n_not_met = sum(1 for p in predictions if p.verdict == "not_met")
    assert n_met + n_not_met + n_failures == len(items)
    manifest = RunManifest(
        run_id=run_id,
        subscale=template.subscale.value,
        model_name=endpoint.model_name,
        shots=shot_config.shots,
        rng_seed=shot_config.rng_seed,
        template_hash=template.hash(),
        n_items=len(items),
        n_failures=n_failures,
        started_at=started,
        finished_at=time.time(),
    )
    return predictions, manifest


# -- prediction files -------------------------------------------------------------


@dataclass
class ImportIssue:
    line_no: int
    reason: str


def prediction_to_json(prediction: Prediction, run_id: str = "") -> str:
    return json.dumps(
        {
            "run_id": run_id,
            "sentence_id": prediction.sentence_id,
            "subscale": prediction.subscale.value,
            "verdict": prediction.verdict,
            "failure_reason": prediction.failure_reason,
            "raw_response": prediction.raw_response,
        },
        ensure_ascii=False,
    )


def write_predictions(path: str | Path, predictions: Iterable[Prediction], run_id: str = "") -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for prediction in predictions:
            fh.write(prediction_to_json(prediction, run_id) + "\n")
            n += 1
    return n


def import_predictions(
    path: str | Path,
    gold_ids: set[str] | None = None,
    issues: list[ImportIssue] | None = None,
) -> list[Prediction]:
    """Load externally produced predictions (e.g. a fine-tuned encoder's
    output) so the same metrics pipeline can evaluate them. Malformed rows
    and unknown sentence ids are skipped and reported, never guessed at."""
    predictions: list[Prediction] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                _issue(issues, line_no, f"invalid JSON: {exc.msg}")
                continue
            sentence_id = row.get("sentence_id")
            if not sentence_id:
                _issue(issues, line_no, "missing sentence_id")
                continue
            if gold_ids is not None and sentence_id not in gold_ids:
                _issue(issues, line_no, f"unknown sentence_id {sentence_id!r}")
                continue
            try:
                subscale = Subscale.from_value(row.get("subscale", ""))
            except ValueError as exc:
                _issue(issues, line_no, str(exc))
                continue
            verdict = row.get("verdict")
            if verdict not in VERDICTS:
                _issue(issues, line_no, f"invalid verdict {verdict!r}")
                continue
            reason = row.get("failure_reason")
            if verdict == "failure" and reason not in FAILURE_REASONS:
                _issue(issues, line_no, f"failure row with invalid reason {reason!r}")
                continue
            if verdict != "failure" and reason:
                _issue(issues, line_no, "failure_reason set on a non-failure verdict")
                continue
            predictions.append(
                Prediction(
                    sentence_id=sentence_id,
                    subscale=subscale,
                    verdict=verdict,
                    failure_reason=reason if verdict == "failure" else None,
                    raw_response=row.get("raw_response", ""),
                )
            )
    return predictions


def _issue(issues: list[ImportIssue] | None, line_no: int, reason: str) -> None:
    if issues is not None:
        issues.append(ImportIssue(line_no, reason))
