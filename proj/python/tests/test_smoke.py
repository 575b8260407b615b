import math

import pytest

import mcki


def test_rouge_and_tokenizer():
    assert mcki.tokenize("Hello, world") == ["hello", "world"]
    assert mcki.tokenize("谢谢") == ["谢", "谢"]
    assert mcki.rouge_l("a b c d", "a x c y") == pytest.approx(50.0)
    assert mcki.rouge_l("same text", "same text") == 100.0
    assert mcki.rouge_l("", "x") == 0.0
    assert mcki.lcs_length(["a", "b", "c"], ["a", "c"]) == 2


def test_aggregates():
    assert mcki.overall_single(79.83, 22.20, 100.00, 89.66) == pytest.approx(72.9225)
    assert mcki.overall_sequential(85.57, 28.61, 83.44) == pytest.approx(65.8733, abs=1e-4)


def test_loss_and_calibration():
    assert mcki.contrastive_loss([0.3, 0.9]) == 0.0
    expected = -1 + math.log(math.e + 1)
    assert mcki.contrastive_loss([1.0], [(0.0, 1.0)], gamma=1.0) == pytest.approx(expected, abs=1e-9)
    cal = mcki.calibrate_threshold([0.9, 0.8], [0.1, 0.2])
    assert cal["tau"] == pytest.approx(0.5)
    assert cal["correct"] == 4
    with pytest.raises(ValueError):
        mcki.calibrate_threshold([], [0.1])


def test_fixtures_round_trip(tmp_path):
    path = tmp_path / "cases.jsonl"
    mcki.write_fixtures(path, scenarios=3, cases=2, split="demo")
    ids = mcki.load_case_ids(path)
    assert len(ids) == 6
    assert len(set(ids)) == 6
    path.write_text('{"case_id": 1}\n')
    with pytest.raises(mcki.CaseFileError):
        mcki.load_case_ids(path)


def test_synthetic_run():
    report = mcki.synthetic_run(scenarios=4, cases=3, d_route=64, epochs=2)
    assert report["report.type"] == "single"
    assert float(report["rouge_l.cross_scenario_locality"]) >= 95.0
    assert float(report["routing.accuracy"]) >= 0.9
    assert "Reliability" in mcki.render_report(list(report.items()))
