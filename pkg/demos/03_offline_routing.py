#!/usr/bin/env python3
"""End-to-end offline replay: corpus file -> calibration -> routing -> report.

Generates a synthetic JSONL corpus in ./demo_out, then drives the same
pipeline the CLI exposes: conformal calibration, automatic error-rate
selection, every routing strategy, and the comparison table.
"""

import string
from pathlib import Path

import numpy as np

from conformal_router import MCQRecord, save_records
from conformal_router.cli import main

OUT = Path("demo_out")
OUT.mkdir(exist_ok=True)
LABELS = tuple(string.ascii_uppercase[:4])


def record(i, probs, gold, expensive_correct, rng):
    options = tuple((lab, f"choice {lab}") for lab in LABELS)
    cheap_answer = LABELS[int(np.argmax(probs))]
    expensive_answer = gold if expensive_correct else LABELS[(LABELS.index(gold) + 1) % 4]
    return MCQRecord(
        id=f"demo-{i:04d}",
        question=f"synthetic question {i}",
        options=options,
        gold=gold,
        cheap_probs=tuple(float(p) for p in probs),
        cheap_answer=cheap_answer,
        cheap_tokens=int(rng.integers(8, 30)),
        expensive_answer=expensive_answer,
        expensive_tokens=int(rng.integers(250, 700)),
        samples=tuple(rng.choice(LABELS, size=5)),
        explicit_flag="keep" if rng.random() < 0.7 else "escalate",
    )


rng = np.random.default_rng(11)
records = []
for i in range(400):
    if i % 2 == 0:  # easy prompt: cheap model is confident and mostly right
        probs = rng.dirichlet([12.0, 0.5, 0.5, 0.5])
        gold = "A" if rng.random() < 0.92 else "B"
    else:  # hard prompt: flat distribution, cheap model mostly wrong
        probs = rng.dirichlet([2.0, 1.9, 1.2, 0.9])
        gold = LABELS[int(rng.integers(0, 4))]
    records.append(record(i, probs, gold, expensive_correct=rng.random() < 0.85, rng=rng))

corpus = OUT / "corpus.jsonl"
save_records(records, corpus)
print(f"wrote {len(records)} records -> {corpus}\n")

exit_code = main([
    "evaluate",
    "--calibration", str(corpus),
    "--split-fraction", "0.5",
    "--seed", "0",
    "--strategies",
    "cp,random:0.3,top1:0.7,entropy:1.0,dynathink,explicit,always_cheap,always_expensive",
    "--out", str(OUT),
])
print(f"\nevaluate exit code: {exit_code}")
print(f"artifacts: {OUT / 'report.json'}, {OUT / 'report.csv'}")
