#!/usr/bin/env python3
"""Open-ended QA via the multiple-choice machinery.

Free-form questions become five-way MCQs: the cheap model's top candidate
answers get letters, plus a catch-all "Others" option. Routing then works
exactly as for native MCQ; grading matches option text against the gold
value under numeric normalization.
"""

from conformal_router import mcqify_open_qa, grade_open_qa

# Candidates as a cheap model might emit them for "What is 6 * 3?"
candidates = ["18", "18.0", "21", "15"]
options = mcqify_open_qa(candidates)
print("candidates:", candidates)
print("options   :", options)  # "18.0" deduplicates against "18"

print()
for picked, gold in [("A", "18"), ("B", "18"), ("A", "1,8"), ("D", "Others")]:
    verdict = grade_open_qa(picked, options, gold)
    print(f"picked {picked!r} against gold {gold!r} -> {'correct' if verdict else 'wrong'}")

# Selecting "Others" only counts when an escalated expensive answer matches.
print()
label_others = options[-1][0]
print(
    f"picked {label_others!r} (Others), gold '99', no expensive answer ->",
    grade_open_qa(label_others, options, "99"),
)
print(
    f"picked {label_others!r} (Others), gold '99', expensive said '99'  ->",
    grade_open_qa(label_others, options, "99", expensive_answer="99"),
)

# Numeric normalization rules used for matching:
from conformal_router.dataset import normalize_answer

for raw in ("1,234", "3.50", " Paris ", "7.00"):
    print(f"normalize({raw!r}) = {normalize_answer(raw)!r}")
