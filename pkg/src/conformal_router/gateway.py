"""Live routing service over two OpenAI-compatible chat backends.

The cheap backend scores each prompt by requesting top-k token
log-probabilities for the first answer token; the option letters found
there are softmaxed into an :class:`OptionDistribution`. Letters missing
from the top-k get a floor of (minimum returned log-prob - 2); when no
letter appears at all the distribution degrades to uniform with a warning.

Requests whose prediction set is small stay on the cheap backend and never
touch the expensive one. Every exchange is appended to a JSONL harvest log
in the offline record format, so a live session can be replayed through
the offline pipeline.

Coverage statements only hold for held-out exchangeable evaluation data;
live traffic offers no such promise, which is why recalibration is an
explicit operator action rather than automatic.
"""

from __future__ import annotations

import itertools
import json
import os
import re
import threading
import time
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import httpx
from pydantic import BaseModel

from .conformal import (
    CalibrationModel,
    OptionDistribution,
    calibrate,
    prediction_set,
    quantile_threshold,
    softmax_over_options,
)
from .dataset import MCQRecord, gold_scores, record_to_json
from .errors import (
    BackendUnavailableError,
    ProtocolError,
    ValidationError,
)
from .fbe import DEFAULT_ALPHA_GRID, DEFAULT_BETA, FBEReport, select_alpha

#: Log-prob penalty for option letters absent from the returned top-k.
MISSING_LETTER_PENALTY = 2.0

DEFAULT_SCORING_INSTRUCTION = "Answer with a single letter."

_ANSWER_TAG_RE = re.compile(r"<ans>\s*([A-Za-z])\s*</ans>")


class BackendMode(str, Enum):
    LOGPROB_SCORING = "logprob_scoring"
    GENERATION = "generation"


@dataclass(frozen=True)
class BackendConfig:
    """Connection settings for one chat-completions backend.

    ``api_key_env`` names an environment variable; the key itself never
    appears in configuration files. Scoring mode requires the backend to
    return per-token log-probabilities for the first generated token.
    """

    name: str
    base_url: str
    model_id: str
    mode: BackendMode
    api_key_env: str | None = None
    timeout_ms: int = 30_000
    max_retries: int = 2
    max_concurrency: int = 8
    backoff_base_s: float = 0.25


class ChatBackend:
    """Synchronous chat-completions client with retries and a concurrency cap.

    Transient transport errors and 5xx responses are retried up to
    ``max_retries`` times with exponential backoff; anything else fails
    fast. A ``transport`` can be injected for tests.
    """

    def __init__(self, config: BackendConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        headers = {}
        if config.api_key_env:
            key = os.environ.get(config.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(
            base_url=config.base_url,
            timeout=config.timeout_ms / 1000.0,
            headers=headers,
            transport=transport,
        )
        self._slots = threading.BoundedSemaphore(config.max_concurrency)

    def close(self) -> None:
        self._client.close()

    def _post_chat(self, payload: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.config.backoff_base_s * (2 ** (attempt - 1)))
            try:
                with self._slots:
                    response = self._client.post("/chat/completions", json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if response.status_code >= 500:
                last_error = BackendUnavailableError(
                    f"{self.config.name}: HTTP {response.status_code}"
                )
                continue
            if response.status_code != 200:
                raise ProtocolError(
                    f"{self.config.name}: HTTP {response.status_code}: {response.text[:200]}"
                )
            try:
                return response.json()
            except ValueError as exc:
                raise ProtocolError(f"{self.config.name}: non-JSON response") from exc
        raise BackendUnavailableError(
            f"{self.config.name}: unreachable after {self.config.max_retries + 1} attempts"
        ) from last_error

    @staticmethod
    def _completion_tokens(body: dict) -> int:
        usage = body.get("usage") or {}
        return int(usage.get("completion_tokens", 0))

    def score_options(
        self, question: str, options: Sequence[tuple[str, str]]
    ) -> tuple[OptionDistribution, int]:
        """Score the options by first-token log-probabilities.

        Returns the renormalized distribution over option letters and the
        completion token count charged by the backend.
        """
        if self.config.mode is not BackendMode.LOGPROB_SCORING:
            raise ValidationError(f"backend {self.config.name!r} is not in scoring mode")
        labels = [label for label, _ in options]
        prompt = _render_mcq_prompt(question, options)
        body = self._post_chat(
            {
                "model": self.config.model_id,
                "messages": [
                    {"role": "system", "content": DEFAULT_SCORING_INSTRUCTION},
                    {"role": "user", "content": prompt},
                ],
                "max_tokens": 1,
                "logprobs": True,
                "top_logprobs": 20,
            }
        )
        try:
            entries = body["choices"][0]["logprobs"]["content"][0]["top_logprobs"]
            by_token = {}
            for entry in entries:
                token = str(entry["token"]).strip()
                logprob = float(entry["logprob"])
                if token not in by_token or logprob > by_token[token]:
                    by_token[token] = logprob
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(
                f"{self.config.name}: malformed logprobs payload"
            ) from exc

        found = {label: by_token[label] for label in labels if label in by_token}
        if not found:
            warnings.warn(
                f"{self.config.name}: no option letters in top log-probs; using uniform",
                stacklevel=2,
            )
            probs = [1.0 / len(labels)] * len(labels)
            dist = OptionDistribution(labels=tuple(labels), probs=tuple(probs))
            return dist, self._completion_tokens(body)

        floor = min(found.values()) - MISSING_LETTER_PENALTY
        logits = [found.get(label, floor) for label in labels]
        probs = softmax_over_options(logits)
        dist = OptionDistribution(
            labels=tuple(labels), probs=tuple(float(p) for p in probs)
        )
        return dist, self._completion_tokens(body)

    def generate(self, question: str, options: Sequence[tuple[str, str]] | None = None) -> tuple[str, int]:
        """Free-running generation; returns (text, completion tokens)."""
        if self.config.mode is not BackendMode.GENERATION:
            raise ValidationError(f"backend {self.config.name!r} is not in generation mode")
        content = _render_mcq_prompt(question, options) if options else question
        body = self._post_chat(
            {
                "model": self.config.model_id,
                "messages": [{"role": "user", "content": content}],
            }
        )
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"{self.config.name}: malformed completion payload") from exc
        return str(text), self._completion_tokens(body)


def _render_mcq_prompt(question: str, options: Sequence[tuple[str, str]]) -> str:
    lines = [question, ""]
    lines.extend(f"{label}. {text}" for label, text in options)
    return "\n".join(lines)


def extract_answer(text: str, labels: Sequence[str]) -> str | None:
    """Pull the final answer letter out of a generation.

    Prefers the last ``<ans>X</ans>`` tag; falls back to the last
    standalone option letter in the text. Returns ``None`` when neither is
    present.
    """
    tags = [m.group(1).upper() for m in _ANSWER_TAG_RE.finditer(text)]
    for candidate in reversed(tags):
        if candidate in labels:
            return candidate
    standalone = re.findall(r"(?<![A-Za-z])([A-Za-z])(?![A-Za-z])", text)
    for candidate in reversed(standalone):
        if candidate.upper() in labels:
            return candidate.upper()
    return None


@dataclass(frozen=True)
class RouterState:
    """Frozen routing state: calibration scores plus the chosen threshold.

    The whole object is replaced atomically on recalibration; ``q_hat``
    always equals the conformal threshold of ``calibration`` at
    ``alpha_star``.
    """

    calibration: CalibrationModel
    alpha_star: float
    q_hat: float
    tau: int
    fbe_report: FBEReport | None = None

    def __post_init__(self):
        expected = quantile_threshold(self.calibration, self.alpha_star)
        if self.q_hat != expected:
            raise ValidationError(
                f"q_hat {self.q_hat!r} inconsistent with calibration (expected {expected!r})"
            )
        if self.tau < 1:
            raise ValidationError(f"tau must be a positive integer, got {self.tau!r}")

    @classmethod
    def from_calibration(
        cls,
        calibration: CalibrationModel,
        alpha: float,
        tau: int = 1,
        fbe_report: FBEReport | None = None,
    ) -> "RouterState":
        return cls(
            calibration=calibration,
            alpha_star=alpha,
            q_hat=quantile_threshold(calibration, alpha),
            tau=tau,
            fbe_report=fbe_report,
        )

    @property
    def beta(self) -> float:
        return self.fbe_report.beta if self.fbe_report is not None else DEFAULT_BETA


class RoutingGateway:
    """Routes live MCQ prompts between a cheap and an expensive backend.

    Reads of the router state are snapshots: a request runs to completion
    under the state it saw at entry, even if an operator swaps in a new
    calibration mid-flight. The harvest log has a single writer guarded by
    a lock.
    """

    def __init__(
        self,
        cheap: ChatBackend,
        expensive: ChatBackend,
        state: RouterState,
        harvest_path: str | Path | None = None,
        min_recalibration_records: int = 10,
    ):
        self._cheap = cheap
        self._expensive = expensive
        self._state = state
        self._state_lock = threading.Lock()
        self._harvest_path = Path(harvest_path) if harvest_path else None
        self._harvest_lock = threading.Lock()
        self._ids = itertools.count(1)
        self.min_recalibration_records = min_recalibration_records

    @property
    def state(self) -> RouterState:
        with self._state_lock:
            return self._state

    def _swap_state(self, new_state: RouterState) -> None:
        with self._state_lock:
            self._state = new_state

    def handle_route(
        self,
        question: str,
        options: Sequence[tuple[str, str]],
        gold: str | None = None,
    ) -> dict:
        """Score, decide, and (only when needed) escalate one prompt.

        Raises :class:`BackendUnavailableError` when the cheap backend is
        down. An expensive-side failure after the escalation decision
        degrades to the cheap argmax answer with ``escalation_failed`` set.
        """
        state = self.state
        dist, cheap_tokens = self._cheap.score_options(question, options)
        pset = prediction_set(dist, state.q_hat, state.alpha_star)
        cheap_answer = dist.argmax_label()

        escalation_failed = False
        expensive_answer: str | None = None
        expensive_tokens = 0
        if pset.size <= state.tau:
            target = "cheap"
            answer = cheap_answer
        else:
            target = "expensive"
            try:
                text, expensive_tokens = self._expensive.generate(question, options)
                parsed = extract_answer(text, [label for label, _ in options])
                if parsed is None:
                    raise ProtocolError(
                        f"{self._expensive.config.name}: no answer letter in generation"
                    )
                expensive_answer = parsed
                answer = parsed
            except (BackendUnavailableError, ProtocolError):
                escalation_failed = True
                expensive_tokens = 0
                answer = cheap_answer

        record_id = f"live-{next(self._ids):06d}"
        self._harvest(
            record_id=record_id,
            question=question,
            options=options,
            gold=gold,
            dist=dist,
            cheap_answer=cheap_answer,
            cheap_tokens=cheap_tokens,
            expensive_answer=expensive_answer,
            expensive_tokens=expensive_tokens if expensive_answer is not None else None,
        )

        response = {
            "record_id": record_id,
            "answer": answer,
            "target": target,
            "set_size": pset.size,
            "alpha": state.alpha_star,
            "q_hat": state.q_hat,
            "tokens": {"cheap": cheap_tokens, "expensive": expensive_tokens},
        }
        if escalation_failed:
            response["escalation_failed"] = True
        return response

    def _harvest(
        self,
        record_id: str,
        question: str,
        options: Sequence[tuple[str, str]],
        gold: str | None,
        dist: OptionDistribution,
        cheap_answer: str,
        cheap_tokens: int,
        expensive_answer: str | None,
        expensive_tokens: int | None,
    ) -> None:
        if self._harvest_path is None:
            return
        record = MCQRecord(
            id=record_id,
            question=question,
            options=tuple((label, text) for label, text in options),
            gold=gold,
            cheap_probs=dist.probs,
            cheap_answer=cheap_answer,
            cheap_tokens=cheap_tokens,
            expensive_answer=expensive_answer,
            expensive_tokens=expensive_tokens,
        )
        line = json.dumps(record_to_json(record), ensure_ascii=False)
        with self._harvest_lock:
            with self._harvest_path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def recalibrate(
        self,
        records: Sequence[MCQRecord],
        alpha_grid: Sequence[float] | None = None,
        beta: float | None = None,
    ) -> RouterState:
        """Rebuild calibration and error rate from labeled records; swap atomically.

        Refused (current state retained) when fewer than
        ``min_recalibration_records`` records are supplied.
        """
        if len(records) < self.min_recalibration_records:
            raise ValidationError(
                f"recalibration needs >= {self.min_recalibration_records} records, "
                f"got {len(records)}"
            )
        grid = tuple(alpha_grid) if alpha_grid else DEFAULT_ALPHA_GRID
        weight = beta if beta is not None else DEFAULT_BETA
        model = calibrate(gold_scores(records))
        report = select_alpha(
            model, [r.distribution() for r in records], alpha_grid=grid, beta=weight
        )
        new_state = RouterState.from_calibration(
            model, report.selected_alpha, tau=self.state.tau, fbe_report=report
        )
        self._swap_state(new_state)
        return new_state


def elicit_open_candidates(backend: ChatBackend, question: str, k: int = 4) -> list[str]:
    """Ask the backend for its k most likely short answers to an open question.

    The response is split on commas/newlines and deduplicated. When nothing
    parseable comes back, falls back to a single plain-prompt answer (so the
    caller still gets a 2-option MCQ after appending "Others"), with a
    warning.
    """
    if not (1 <= k <= 4):
        raise ValidationError(f"k must be between 1 and 4, got {k!r}")
    prompt = (
        f"{question}\n\n"
        f"Give your {k} most likely short answers, comma-separated, most likely "
        f"first. Reply with only the list."
    )
    text, _ = backend.generate(prompt)
    candidates: list[str] = []
    seen: set[str] = set()
    for part in re.split(r"[,\n;]+", text):
        cleaned = re.sub(r"^\s*(?:\d+[.)]|[-*])\s*", "", part).strip()
        if not cleaned:
            continue
        key = cleaned.lower()
        if key not in seen:
            seen.add(key)
            candidates.append(cleaned)
        if len(candidates) == k:
            break
    if candidates:
        return candidates
    warnings.warn("candidate elicitation unparseable; falling back to greedy answer", stacklevel=2)
    fallback, _ = backend.generate(question)
    fallback = fallback.strip()
    if not fallback:
        raise ProtocolError(f"{backend.config.name}: empty fallback answer")
    return [fallback]


class OptionItem(BaseModel):
    label: str
    text: str


class RouteRequest(BaseModel):
    question: str
    options: list[OptionItem]
    gold: str | None = None


class RecalibrateRequest(BaseModel):
    records: list[dict] | None = None
    path: str | None = None
    alpha_grid: list[float] | None = None
    beta: float | None = None


def build_app(gateway: RoutingGateway, admin_token: str | None = None):
    """FastAPI application exposing the routing service over HTTP."""
    from fastapi import FastAPI, Header, HTTPException

    app = FastAPI(title="conformal-router gateway")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/v1/state")
    def state():
        s = gateway.state
        return {
            "alpha": s.alpha_star,
            "q_hat": s.q_hat,
            "tau": s.tau,
            "beta": s.beta,
            "calibration_size": s.calibration.n,
        }

    @app.post("/v1/route")
    def route(request: RouteRequest):
        options = [(o.label, o.text) for o in request.options]
        try:
            return gateway.handle_route(request.question, options, gold=request.gold)
        except BackendUnavailableError as exc:
            raise HTTPException(
                status_code=503, detail=str(exc), headers={"Retry-After": "1"}
            )
        except ProtocolError as exc:
            raise HTTPException(status_code=502, detail=str(exc))
        except ValidationError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/v1/recalibrate")
    def recalibrate(
        request: RecalibrateRequest,
        x_admin_token: str | None = Header(default=None),
    ):
        if admin_token is None or x_admin_token != admin_token:
            raise HTTPException(status_code=403, detail="admin token required")
        from .dataset import load_records, record_from_json

        try:
            if request.records is not None:
                records = [record_from_json(obj) for obj in request.records]
            elif request.path is not None:
                records = load_records(request.path)
            else:
                raise ValidationError("recalibrate needs 'records' or 'path'")
            new_state = gateway.recalibrate(
                records, alpha_grid=request.alpha_grid, beta=request.beta
            )
        except ValidationError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {
            "alpha": new_state.alpha_star,
            "q_hat": new_state.q_hat,
            "calibration_size": new_state.calibration.n,
        }

    return app
