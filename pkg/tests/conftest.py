import json
import string

import httpx
import numpy as np
import pytest

from conformal_router.dataset import MCQRecord


def make_record(
    record_id,
    probs,
    gold="A",
    cheap_tokens=10,
    expensive_answer=None,
    expensive_tokens=None,
    **kwargs,
):
    """Build a valid MCQRecord from a bare probability vector."""
    labels = tuple(string.ascii_uppercase[: len(probs)])
    options = tuple((lab, f"option {lab}") for lab in labels)
    top = labels[int(np.argmax(probs))]
    return MCQRecord(
        id=record_id,
        options=options,
        gold=gold,
        cheap_probs=tuple(float(p) for p in probs),
        cheap_answer=top,
        cheap_tokens=cheap_tokens,
        expensive_answer=expensive_answer,
        expensive_tokens=expensive_tokens,
        **kwargs,
    )


def synthetic_pool(n, n_options=4, seed=0, sharpness=1.0):
    """Exchangeable (distribution, gold) pairs: Dirichlet probs, gold ~ probs."""
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet([sharpness] * n_options, size=n)
    golds = [int(rng.choice(n_options, p=p)) for p in probs]
    labels = string.ascii_uppercase[:n_options]
    return [
        (tuple(float(x) for x in p), labels[g]) for p, g in zip(probs, golds)
    ]


def pool_records(pool, cheap_tokens=10, expensive_tokens=100, expensive_gold_rate=None, seed=1):
    """Turn a synthetic pool into MCQRecords with stored expensive answers."""
    rng = np.random.default_rng(seed)
    records = []
    for i, (probs, gold) in enumerate(pool):
        labels = string.ascii_uppercase[: len(probs)]
        if expensive_gold_rate is None:
            expensive_answer = gold
        else:
            hit = rng.random() < expensive_gold_rate
            expensive_answer = gold if hit else labels[(labels.index(gold) + 1) % len(labels)]
        records.append(
            make_record(
                f"r{i:05d}",
                probs,
                gold=gold,
                cheap_tokens=cheap_tokens,
                expensive_answer=expensive_answer,
                expensive_tokens=expensive_tokens,
            )
        )
    return records


def scoring_response(letter_logprobs, completion_tokens=7):
    """OpenAI-style chat completion body with first-token top log-probs."""
    top = [{"token": tok, "logprob": lp} for tok, lp in letter_logprobs.items()]
    first = top[0] if top else {"token": "?", "logprob": -1.0}
    return {
        "choices": [
            {
                "message": {"role": "assistant", "content": first["token"]},
                "logprobs": {
                    "content": [
                        {
                            "token": first["token"],
                            "logprob": first["logprob"],
                            "top_logprobs": top,
                        }
                    ]
                },
            }
        ],
        "usage": {"completion_tokens": completion_tokens},
    }


def generation_response(text, completion_tokens=400):
    return {
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"completion_tokens": completion_tokens},
    }


class ScoringStub:
    """Mock scoring backend: picks canned letter log-probs by question substring."""

    def __init__(self, by_question, default=None, completion_tokens=7):
        self.by_question = dict(by_question)
        self.default = default
        self.completion_tokens = completion_tokens
        self.calls = 0

    def handler(self, request: httpx.Request) -> httpx.Response:
        self.calls += 1
        body = json.loads(request.content)
        content = body["messages"][-1]["content"]
        for question, logprobs in self.by_question.items():
            if question in content:
                return httpx.Response(
                    200, json=scoring_response(logprobs, self.completion_tokens)
                )
        if self.default is None:
            return httpx.Response(500, json={"error": "no canned answer"})
        return httpx.Response(200, json=scoring_response(self.default, self.completion_tokens))

    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self.handler)


class GenerationStub:
    """Mock generation backend with canned text per question substring."""

    def __init__(self, by_question, default_text="<ans>A</ans>", completion_tokens=400, fail=False):
        self.by_question = dict(by_question)
        self.default_text = default_text
        self.completion_tokens = completion_tokens
        self.fail = fail
        self.calls = 0

    def handler(self, request: httpx.Request) -> httpx.Response:
        self.calls += 1
        if self.fail:
            raise httpx.ConnectError("backend down", request=request)
        body = json.loads(request.content)
        content = body["messages"][-1]["content"]
        for question, text in self.by_question.items():
            if question in content:
                return httpx.Response(
                    200, json=generation_response(text, self.completion_tokens)
                )
        return httpx.Response(
            200, json=generation_response(self.default_text, self.completion_tokens)
        )

    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self.handler)


@pytest.fixture
def tmp_corpus(tmp_path):
    """Write records to a JSONL file and return its path."""

    def _write(records, name="corpus.jsonl"):
        from conformal_router.dataset import save_records

        path = tmp_path / name
        save_records(records, path)
        return path

    return _write
