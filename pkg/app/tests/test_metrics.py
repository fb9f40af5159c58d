import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from errors import InvalidParameter, MixedScales, NoTasks, UnknownTask
from services.metrics import (
    RunReport,
    aggregate,
    build_report,
    macro_average,
    overhead,
    overhead_multi_model,
    qualified,
    single_task_report,
)
from services.reporting import format_overhead, render_table

# 列順: cwsc, tnews, csl, afqmc, iflytek, ocnli
TASKS = ["cwsc", "tnews", "csl", "afqmc", "iflytek", "ocnli"]
SINGLE_A = [0.7169, 0.6016, 0.8354, 0.7412, 0.5831, 0.8652]
SINGLE_B = [0.7022, 0.5871, 0.8706, 0.7398, 0.5839, 0.7923]
MULTI_ROWS = {
    "instance_balanced": ([0.6875, 0.5951, 0.8281, 0.7444, 0.5956, 0.8276], 3),
    "class_balanced": ([0.7169, 0.5820, 0.8556, 0.7412, 0.5854, 0.8001], 4),
    "unimax": ([0.7059, 0.5963, 0.8274, 0.7414, 0.5968, 0.8337], 4),
    "two_stage": ([0.7132, 0.5959, 0.8603, 0.7456, 0.5886, 0.8367], 5),
    "capped_temperature_scaled": ([0.7132, 0.5832, 0.8660, 0.7418, 0.5936, 0.8299], 4),
}


def baselines():
    return dict(zip(TASKS, SINGLE_A))


def test_qualified_examples():
    """99%ルール（等号を含む）"""
    assert qualified(0.7239, 0.7169)
    assert not qualified(0.6016, 0.5820)
    assert qualified(0.0, 0.0)
    assert qualified(0.7169, 0.7169)


def test_qualified_rejects_mixed_scales():
    with pytest.raises(MixedScales):
        qualified(72.39, 0.7169)
    with pytest.raises(MixedScales):
        qualified(float("nan"), 0.5)
    assert qualified(72.39, 71.69, scale=100)


@settings(max_examples=300, deadline=None)
@given(
    baseline=st.floats(min_value=0, max_value=1),
    score=st.floats(min_value=0, max_value=1),
    bump=st.floats(min_value=0, max_value=1),
)
def test_qualified_monotone(baseline, score, bump):
    higher = min(1.0, score + bump)
    if qualified(baseline, score):
        assert qualified(baseline, higher)
        assert qualified(max(0.0, baseline - bump), score)


def test_overhead_examples():
    assert overhead(5) == pytest.approx(0.2)
    assert format_overhead(overhead(5)) == "20.0%"
    assert format_overhead(overhead(11)) == "9.1%"
    assert overhead(0) is None
    assert format_overhead(overhead(0)) == "-"
    assert overhead(6, 6) == 1.0


def test_overhead_decreases_with_more_qualified():
    values = [overhead(n) for n in range(1, 20)]
    assert all(b < a for a, b in zip(values, values[1:]))


def test_overhead_errors():
    with pytest.raises(InvalidParameter):
        overhead(1, 0)
    with pytest.raises(InvalidParameter):
        overhead(-1)


def test_overhead_multi_model():
    assert format_overhead(overhead_multi_model([3, 2])) == "33.3%"
    assert overhead_multi_model([5, 2]) == pytest.approx(0.2)
    assert overhead_multi_model([0, 0]) is None
    with pytest.raises(InvalidParameter):
        overhead_multi_model([])


def test_macro_average_reproduces_table_cells():
    """表のAvg.列を±0.005で再現"""
    single_a = macro_average(dict(zip(TASKS, SINGLE_A)))
    single_b = macro_average(dict(zip(TASKS, SINGLE_B)))
    assert abs(single_a * 100 - 72.39) <= 0.005 + 1e-9
    assert abs(single_b * 100 - 71.26) <= 0.005 + 1e-9
    assert macro_average({"x": 0.42}) == 0.42
    with pytest.raises(NoTasks):
        macro_average({})


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(min_value=0, max_value=1), min_size=1, max_size=12))
def test_macro_average_bounds_and_permutation(values):
    scores = {f"t{i}": v for i, v in enumerate(values)}
    mean = macro_average(scores)
    assert min(values) - 1e-12 <= mean <= max(values) + 1e-12
    assert mean == macro_average(dict(reversed(list(scores.items()))))


@pytest.mark.parametrize("method", list(MULTI_ROWS))
def test_qualified_counts_match_table(method):
    """手法ごとの合格セル数を99%ルールで再現"""
    row, expected = MULTI_ROWS[method]
    report = build_report(method, baselines(), dict(zip(TASKS, row)))
    assert report.num_qualified == expected
    assert report.num_models == 1
    assert report.overhead == pytest.approx(1 / expected)


def test_two_stage_row_cells():
    row, _ = MULTI_ROWS["two_stage"]
    report = build_report("two_stage", baselines(), dict(zip(TASKS, row)))
    flags = [report.task(t).qualified for t in TASKS]
    assert flags == [True, True, True, True, True, False]
    assert format_overhead(report.overhead) == "20.0%"


def test_multi_group_report_uses_best_model():
    """SS分割（合格 3 と 2）→ 33.3%"""
    base = {t: 0.8 for t in TASKS}
    scores = {"cwsc": 0.8, "tnews": 0.8, "iflytek": 0.8, "csl": 0.8, "afqmc": 0.8, "ocnli": 0.5}
    groups = {"single": ["cwsc", "iflytek", "tnews"], "pair": ["afqmc", "csl", "ocnli"]}
    report = build_report("two_stage", base, scores, groups=groups)
    assert report.qualified_per_model == [3, 2]
    assert report.num_models == 2
    assert format_overhead(report.overhead) == "33.3%"
    assert report.task("ocnli").group == "pair"


def test_build_report_rejects_unknown_tasks():
    with pytest.raises(UnknownTask):
        build_report("x", {"a": 0.5}, {"b": 0.5})


def test_single_task_report():
    report = single_task_report(baselines())
    assert report.num_qualified == 6
    assert report.num_models == 6
    assert report.overhead == 1.0


def test_report_rejects_inconsistent_flags():
    report = build_report("x", {"a": 0.5}, {"a": 0.1})
    data = report.model_dump()
    data["tasks"][0]["qualified"] = True
    with pytest.raises(ValidationError):
        RunReport(**data)


def test_report_json_round_trip():
    row, _ = MULTI_ROWS["class_balanced"]
    report = build_report("class_balanced", baselines(), dict(zip(TASKS, row)), seed=3, metadata={"rng": "numpy.PCG64"})
    assert RunReport.model_validate_json(report.model_dump_json()) == report


def test_aggregate_over_seeds():
    a = build_report("m", {"a": 0.5, "b": 0.5}, {"a": 0.6, "b": 0.2}, seed=0)
    b = build_report("m", {"a": 0.5, "b": 0.5}, {"a": 0.5, "b": 0.6}, seed=1)
    result = aggregate([a, b])
    assert result.seeds == [0, 1]
    assert result.macro_avg_mean == pytest.approx(0.475)
    assert result.num_qualified_mean == 1.5
    assert result.num_qualified_std == 0.5
    assert result.task_score_mean["a"] == pytest.approx(0.55)
    assert result.task_score_std["a"] == pytest.approx(0.05)


def test_render_table_layout():
    """Methods | タスク | Avg. | Num. | Overhead、合格セルは太字"""
    row, _ = MULTI_ROWS["two_stage"]
    report = build_report("two_stage", baselines(), dict(zip(TASKS, row)))
    zero = build_report("instance_balanced", {t: 0.9 for t in TASKS}, {t: 0.1 for t in TASKS})
    table = render_table([report], single_task_report(baselines())).splitlines()

    assert table[0] == "| Methods | cwsc | tnews | csl | afqmc | iflytek | ocnli | Avg. | Num. | Overhead |"
    assert table[2].startswith("| Single-task | 71.69 | 60.16 |")
    assert table[2].endswith("| 72.39 | 6 | 100.0% |")
    assert "**71.32**" in table[3]
    assert "| 83.67 |" in table[3]
    assert table[3].endswith("| 5 | 20.0% |")
    assert render_table([zero]).splitlines()[2].endswith("| 0 | - |")
