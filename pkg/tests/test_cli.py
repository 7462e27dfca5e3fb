import json

import numpy as np
import pytest

from conformal_router.cli import main, parse_alpha_grid, parse_strategies
from conformal_router.dataset import save_records

from conftest import make_record


def build_corpus(tmp_path, name, n=40, seed=0):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        confident = i % 2 == 0
        if confident:
            probs = (0.85, 0.07, 0.05, 0.03)
        else:
            base = rng.dirichlet([2.0, 2.0, 1.0, 1.0])
            probs = tuple(float(x) for x in base)
        gold = "A" if rng.random() < (0.9 if confident else 0.4) else "B"
        records.append(
            make_record(
                f"{name}-{i}",
                probs,
                gold=gold,
                cheap_tokens=12,
                expensive_answer=gold if rng.random() < 0.8 else "C",
                expensive_tokens=420,
                samples=tuple(rng.choice(["A", "B", "C"], size=5)),
                explicit_flag="keep" if rng.random() < 0.7 else "escalate",
            )
        )
    path = tmp_path / f"{name}.jsonl"
    save_records(records, path)
    return path


def read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


class TestParsing:
    def test_alpha_grid_range(self):
        grid = parse_alpha_grid("0.05:0.20:0.05")
        assert grid == (0.05, 0.1, 0.15, 0.2)

    def test_alpha_grid_list(self):
        assert parse_alpha_grid("0.1,0.3") == (0.1, 0.3)

    def test_alpha_grid_rejects_garbage(self):
        from conformal_router.cli import ConfigError

        for bad in ("", "1:0:0.1", "0.1:0.9:-0.1", "0,2"):
            with pytest.raises(ConfigError):
                parse_alpha_grid(bad)

    def test_strategy_tokens(self):
        parsed = parse_strategies("cp,random:0.3,top1:0.7", tau=2, seed=9)
        names = [name for name, _ in parsed]
        assert names == ["cp_router", "random:0.3", "top1:0.7"]
        assert parsed[0][1].tau == 2
        assert parsed[1][1].seed == 9

    def test_unknown_strategy_rejected(self):
        from conformal_router.cli import ConfigError

        with pytest.raises(ConfigError):
            parse_strategies("cp,quantum", tau=1, seed=0)


class TestCommands:
    def test_calibrate_writes_sorted_scores(self, tmp_path):
        corpus = build_corpus(tmp_path, "cal")
        out = tmp_path / "out"
        code = main(["calibrate", "--calibration", str(corpus), "--out", str(out)])
        assert code == 0
        payload = read_json(out / "calibration.json")
        assert payload["n"] == 40
        assert payload["scores"] == sorted(payload["scores"])

    def test_calibrate_with_split_uses_calibration_half(self, tmp_path):
        corpus = build_corpus(tmp_path, "cal")
        out = tmp_path / "out2"
        code = main([
            "calibrate", "--calibration", str(corpus), "--split-fraction", "0.5",
            "--out", str(out),
        ])
        assert code == 0
        assert read_json(out / "calibration.json")["n"] == 20

    def test_select_alpha_writes_report(self, tmp_path):
        cal = build_corpus(tmp_path, "cal")
        test = build_corpus(tmp_path, "test", seed=1)
        out = tmp_path / "out"
        code = main([
            "select-alpha", "--calibration", str(cal), "--test", str(test),
            "--alpha-grid", "0.05:0.45:0.05", "--out", str(out),
        ])
        assert code == 0
        payload = read_json(out / "fbe.json")
        assert len(payload["candidates"]) == 9
        alphas = [c["alpha"] for c in payload["candidates"]]
        assert payload["selected_alpha"] in alphas

    def test_evaluate_all_strategies(self, tmp_path):
        cal = build_corpus(tmp_path, "cal")
        test = build_corpus(tmp_path, "test", seed=1)
        out = tmp_path / "out"
        code = main([
            "evaluate", "--calibration", str(cal), "--test", str(test),
            "--strategies",
            "cp,random:0.3,top1:0.7,entropy:1.0,dynathink,explicit,always_cheap,always_expensive",
            "--out", str(out), "--seed", "7",
        ])
        assert code == 0
        payload = read_json(out / "report.json")
        names = [s["strategy"] for s in payload["strategies"]]
        assert names[0] == "cp_router" and "always_expensive" in names
        csv_lines = (out / "report.csv").read_text().splitlines()
        assert len(csv_lines) == 1 + len(names)

    def test_evaluate_deterministic_given_seed(self, tmp_path):
        cal = build_corpus(tmp_path, "cal")
        test = build_corpus(tmp_path, "test", seed=1)
        outs = []
        for run in ("a", "b"):
            out = tmp_path / run
            assert main([
                "evaluate", "--calibration", str(cal), "--test", str(test),
                "--strategies", "cp,random:0.4,always_cheap,always_expensive",
                "--seed", "11", "--out", str(out),
            ]) == 0
            lines = (out / "report.json").read_text().splitlines()
            outs.append("\n".join(l for l in lines if "generated_at" not in l))
        assert outs[0] == outs[1]

    def test_split_fraction_instead_of_test_corpus(self, tmp_path):
        corpus = build_corpus(tmp_path, "all", n=60)
        out = tmp_path / "out"
        code = main([
            "evaluate", "--calibration", str(corpus), "--split-fraction", "0.5",
            "--out", str(out), "--seed", "3",
        ])
        assert code == 0
        payload = read_json(out / "report.json")
        assert payload["n_calibration"] == 30
        assert payload["n_test"] == 30

    def test_token_usage_bracketed_by_pure_strategies(self, tmp_path):
        cal = build_corpus(tmp_path, "cal")
        test = build_corpus(tmp_path, "test", seed=1)
        out = tmp_path / "out"
        main([
            "evaluate", "--calibration", str(cal), "--test", str(test),
            "--strategies", "always_cheap,always_expensive,cp,random:0.5,top1:0.6",
            "--out", str(out),
        ])
        payload = read_json(out / "report.json")
        totals = {
            s["strategy"]: sum(p["tokens_charged"] for p in s["per_record"])
            for s in payload["strategies"]
        }
        low, high = totals["always_cheap"], totals["always_expensive"]
        for name, total in totals.items():
            assert low <= total <= high, name

    def test_sweep_matches_evaluate_on_single_alpha(self, tmp_path):
        cal = build_corpus(tmp_path, "cal")
        test = build_corpus(tmp_path, "test", seed=1)
        out_eval = tmp_path / "eval"
        out_sweep = tmp_path / "sweep"
        main([
            "evaluate", "--calibration", str(cal), "--test", str(test),
            "--alpha", "0.2", "--strategies", "cp", "--out", str(out_eval),
        ])
        main([
            "sweep", "--calibration", str(cal), "--test", str(test),
            "--alpha-grid", "0.2", "--out", str(out_sweep),
        ])
        eval_row = read_json(out_eval / "report.json")["strategies"][0]
        sweep_row = read_json(out_sweep / "sweep.json")["rows"][0]
        assert sweep_row["alpha"] == 0.2
        for key in ("acc", "trr", "u_token", "apss", "escalation_rate"):
            assert sweep_row[key] == eval_row[key]

    def test_sweep_apss_monotone_in_alpha(self, tmp_path):
        cal = build_corpus(tmp_path, "cal")
        test = build_corpus(tmp_path, "test", seed=1)
        out = tmp_path / "out"
        main([
            "sweep", "--calibration", str(cal), "--test", str(test),
            "--alpha-grid", "0.05:0.45:0.05", "--out", str(out),
        ])
        rows = read_json(out / "sweep.json")["rows"]
        apss_values = [row["apss"] for row in rows]
        assert all(a >= b for a, b in zip(apss_values, apss_values[1:]))
        # Smallest alpha has the largest sets and the most escalations.
        assert rows[0]["apss"] == max(apss_values)
        escalations = [row["escalation_rate"] for row in rows]
        assert escalations[0] == max(escalations)

    def test_config_file_with_flag_override(self, tmp_path):
        cal = build_corpus(tmp_path, "cal")
        test = build_corpus(tmp_path, "test", seed=1)
        config = tmp_path / "run.toml"
        config.write_text(
            f'calibration = "{cal}"\ntest = "{test}"\nbeta = 1.0\ntau = 1\n'
            f'strategies = "cp"\nout = "{tmp_path / "from_file"}"\n',
            encoding="utf-8",
        )
        code = main(["evaluate", "--config", str(config), "--beta", "2.5"])
        assert code == 0
        payload = read_json(tmp_path / "from_file" / "report.json")
        assert payload["beta"] == 2.5  # flag beats file


class TestExitCodes:
    def test_missing_corpus_is_config_error(self, tmp_path):
        code = main([
            "evaluate", "--calibration", str(tmp_path / "nope.jsonl"),
            "--test", str(tmp_path / "nope.jsonl"),
        ])
        assert code == 2

    def test_unknown_strategy_is_config_error(self, tmp_path):
        corpus = build_corpus(tmp_path, "cal")
        code = main([
            "evaluate", "--calibration", str(corpus), "--test", str(corpus),
            "--strategies", "wat",
        ])
        assert code == 2

    def test_invalid_record_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text(
            json.dumps({
                "id": "x",
                "options": [{"label": "A", "text": "1"}, {"label": "B", "text": "2"}],
                "gold": "A",
                "cheap_probs": [0.6, 0.1],
                "cheap_answer": "A",
                "cheap_tokens": 3,
            }) + "\n",
            encoding="utf-8",
        )
        code = main([
            "evaluate", "--calibration", str(bad), "--test", str(bad),
        ])
        assert code == 3

    def test_missing_test_and_split_is_config_error(self, tmp_path):
        corpus = build_corpus(tmp_path, "cal")
        assert main(["evaluate", "--calibration", str(corpus)]) == 2
