#!/usr/bin/env python3
"""The live gateway, driven in-process against mocked model backends.

Shows the full service loop without any real model: score a prompt via
first-token log-probabilities, route by prediction-set size, harvest every
exchange, and replay the harvest offline to the same decisions.
"""

import json
from pathlib import Path

import httpx

from conformal_router import StrategyConfig, StrategyKind, calibrate, load_records, run_strategy
from conformal_router.gateway import (
    BackendConfig,
    BackendMode,
    ChatBackend,
    RouterState,
    RoutingGateway,
)

OUT = Path("demo_out")
OUT.mkdir(exist_ok=True)
HARVEST = OUT / "harvest.jsonl"
if HARVEST.exists():
    HARVEST.unlink()

OPTIONS = [("A", "one"), ("B", "two"), ("C", "three"), ("D", "four")]

# Canned backends: an "easy" question gets a peaked first-token log-prob
# profile, a "hard" one a flat profile; the expensive model always explains
# itself and tags its final answer.
LOGPROBS = {
    "easy": {"A": -0.05, "B": -4.0, "C": -4.0, "D": -4.0},
    "hard": {"A": -1.0, "B": -1.1, "C": -1.2, "D": -1.3},
}


def cheap_handler(request: httpx.Request) -> httpx.Response:
    content = json.loads(request.content)["messages"][-1]["content"]
    profile = LOGPROBS["easy" if "easy" in content else "hard"]
    top = [{"token": tok, "logprob": lp} for tok, lp in profile.items()]
    body = {
        "choices": [{
            "message": {"role": "assistant", "content": top[0]["token"]},
            "logprobs": {"content": [{**top[0], "top_logprobs": top}]},
        }],
        "usage": {"completion_tokens": 6},
    }
    return httpx.Response(200, json=body)


def expensive_handler(request: httpx.Request) -> httpx.Response:
    text = "Working through the options step by step... <ans>B</ans>"
    body = {
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"completion_tokens": 512},
    }
    return httpx.Response(200, json=body)


def backend(name, mode, handler):
    return ChatBackend(
        BackendConfig(name=name, base_url=f"http://{name}.mock/v1",
                      model_id=f"{name}-model", mode=mode),
        transport=httpx.MockTransport(handler),
    )


state = RouterState.from_calibration(
    calibrate([0.1, 0.3, 0.5, 0.7, 0.8]), alpha=0.2, tau=1
)
gateway = RoutingGateway(
    cheap=backend("cheap", BackendMode.LOGPROB_SCORING, cheap_handler),
    expensive=backend("expensive", BackendMode.GENERATION, expensive_handler),
    state=state,
    harvest_path=HARVEST,
)
print(f"router state: alpha={state.alpha_star}, q_hat={state.q_hat}, tau={state.tau}\n")

questions = ["easy question 1", "hard question 2", "easy question 3", "hard question 4"]
live = []
for question in questions:
    response = gateway.handle_route(question, OPTIONS)
    live.append(response)
    print(
        f"{question!r}: set size {response['set_size']} -> {response['target']:9s} "
        f"answer={response['answer']} tokens={response['tokens']}"
    )

# Replay the harvest through the offline pipeline under the same state.
harvested = load_records(HARVEST)
replayed = run_strategy(
    harvested,
    StrategyConfig(kind=StrategyKind.CP_ROUTER, tau=state.tau),
    q_hat=state.q_hat,
    alpha=state.alpha_star,
)
print("\noffline replay of the harvest log:")
agreements = [
    d.target.value == r["target"] and d.answer == r["answer"]
    for d, r in zip(replayed, live)
]
for record, decision, same in zip(harvested, replayed, agreements):
    print(f"  {record.id}: {decision.target.value:9s} answer={decision.answer} "
          f"(matches live: {same})")
assert all(agreements)
print("\nlive and replayed decisions agree on every request")
