from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from batdeg.features import (AGGREGATORS, ACTIVATORS, DIRECTIONS, SIGNALS, Diff, FeatureExpr,
                             FeatureSyntaxError, FeatureValidationError, Single, SpaceConfig,
                             compile_plan, enumerate_space, parse, read_feature_list, render,
                             write_feature_list)

LISTED = Path(__file__).parent / "data" / "listed_feature_names.txt"


def test_parse_single_selector():
    e = parse("identity(nanmax(Cycle(6/7))[nanvar(VQ_d(1/4))])")
    assert e == FeatureExpr("identity", "nanmax", Single(6, 7), "nanvar", "VQ", "d", 1, 4)


def test_parse_charge_signal():
    e = parse("abs(nankurtosis(Cycle(2/5))[nanmax(E_c(2/4))])")
    assert e == FeatureExpr("abs", "nankurtosis", Single(2, 5), "nanmax", "E", "c", 2, 4)


def test_parse_diff_selector_and_render():
    s = "abs(nanmean(Cycle(3/7) - Cycle(6/7))[nanmean(VQ_d(3/4))])"
    e = parse(s)
    assert e.selector == Diff(3, 7, 6, 7)
    assert render(e) == s


def test_whitespace_around_minus_is_canonicalised():
    e = parse("identity(nanmean(Cycle(4/7)-Cycle(6/7))[nanmean(VQ_d(3/4))])")
    assert render(e) == "identity(nanmean(Cycle(4/7) - Cycle(6/7))[nanmean(VQ_d(3/4))])"


def test_listed_names_roundtrip():
    names = [line.strip() for line in LISTED.read_text().splitlines() if line.strip()]
    assert len(names) == 60
    for s in names:
        assert render(parse(s)) == s


@pytest.mark.parametrize("text,offset", [
    ("identity(nanmax(Cycle(6/7))[nanvar(VQ_d(1/4))]", 46),
    ("identity(nanmax(Cycle(6/7))[nanvar(XX_d(1/4))])", 35),
    ("foo(nanmax(Cycle(6/7))[nanvar(VQ_d(1/4))])", 0),
    ("identity(nanmax(Cycle(6/7))[nanvar(VQ_d(1/4))]) x", 48),
    ("identity(nanmax(Cycle(6:7))[nanvar(VQ_d(1/4))])", 23),
])
def test_syntax_errors_report_byte_offset(text, offset):
    with pytest.raises(FeatureSyntaxError) as ei:
        parse(text)
    assert ei.value.offset == offset


def test_unexpected_character_offset_skips_whitespace():
    with pytest.raises(FeatureSyntaxError) as ei:
        parse("identity(nanmax(Cycle(6/7))[nanvar(VQ_d(1/4))])é")
    assert ei.value.offset == 47
    with pytest.raises(FeatureSyntaxError) as ei:
        parse("identity(nanmax(Cycle(6/7))[nanvar(VQ_d(1/4))])   é!")
    assert ei.value.offset == 50


@pytest.mark.parametrize("text", [
    "identity(nanmax(Cycle(8/7))[nanvar(VQ_d(1/4))])",
    "identity(nanmax(Cycle(0/7))[nanvar(VQ_d(1/4))])",
    "identity(nanmax(Cycle(6/7))[nanvar(VQ_d(5/4))])",
    "identity(nanmax(Cycle(6/7) - Cycle(3/7))[nanvar(VQ_d(1/4))])",
    "identity(nanmax(Cycle(3/7) - Cycle(3/7))[nanvar(VQ_d(1/4))])",
    "identity(nanmax(Cycle(3/7) - Cycle(4/6))[nanvar(VQ_d(1/4))])",
])
def test_validation_errors(text):
    with pytest.raises(FeatureValidationError):
        parse(text)


@st.composite
def exprs(draw):
    b = draw(st.integers(1, 12))
    if b >= 2 and draw(st.booleans()):
        a = draw(st.integers(1, b - 1))
        sel = Diff(a, b, draw(st.integers(a + 1, b)), b)
    else:
        sel = Single(draw(st.integers(1, b)), b)
    total = draw(st.integers(1, 12))
    return FeatureExpr(draw(st.sampled_from(ACTIVATORS)), draw(st.sampled_from(AGGREGATORS)), sel,
                       draw(st.sampled_from(AGGREGATORS)), draw(st.sampled_from(SIGNALS)),
                       draw(st.sampled_from(DIRECTIONS)), draw(st.integers(1, total)), total)


@settings(max_examples=1000)
@given(exprs())
def test_random_ast_roundtrip(e):
    assert parse(render(e)) == e


def test_full_space_count_and_order():
    cfg = SpaceConfig()
    space = enumerate_space(cfg)
    assert cfg.count() == len(space) == 112_896
    assert sum(e.direction == "d" for e in space) == 56_448
    # discharge block first, then signal, segment, inner, selector, outer, activator
    assert render(space[0]) == "identity(nanmean(Cycle(1/7))[nanmean(VQ_d(1/4))])"
    assert render(space[1]) == "abs(nanmean(Cycle(1/7))[nanmean(VQ_d(1/4))])"
    assert render(space[2]) == "identity(nanmin(Cycle(1/7))[nanmean(VQ_d(1/4))])"
    assert render(space[12]) == "identity(nanmean(Cycle(2/7))[nanmean(VQ_d(1/4))])"
    assert render(space[7 * 12]) == "identity(nanmean(Cycle(1/7) - Cycle(2/7))[nanmean(VQ_d(1/4))])"
    assert space[-1].direction == "c" and space[-1].signal == "W"
    assert len(set(space)) == len(space)


def test_single_feature_space():
    cfg = SpaceConfig(K=1, D=1, N=1, signals=("V",), inner=("nanmax",), outer=("nanmin",),
                      activators=("identity",), directions=("d",))
    space = enumerate_space(cfg)
    assert len(space) == cfg.count() == 1
    assert render(space[0]) == "identity(nanmin(Cycle(1/1))[nanmax(V_d(1/1))])"


@pytest.mark.parametrize("K", range(1, 11))
def test_count_formula(K):
    for D in range(1, 9):
        cfg = SpaceConfig(K=K, D=D, N=max(K, 50), signals=("VQ", "I"), inner=("nanmean", "nanvar"),
                          outer=("nanmax",), directions=("d",))
        n = len(enumerate_space(cfg))
        assert n == cfg.count() == 2 * D * 2 * (K + K * (K - 1) // 2) * 1 * 2


def test_space_config_validation():
    with pytest.raises(FeatureValidationError):
        SpaceConfig(K=0)
    with pytest.raises(FeatureValidationError):
        SpaceConfig(K=7, N=5)
    with pytest.raises(FeatureValidationError):
        SpaceConfig(signals=("VQ", "Z"))


def test_plan_shares_nodes_over_full_space():
    space = enumerate_space(SpaceConfig())
    plan = compile_plan(space)
    assert len(plan.stage1) == 2 * 7 * 4 * 6
    assert len(plan.stage2) == len(plan.stage1) * 7 * 6
    assert plan.names == [render(e) for e in space]


def test_plan_single_and_duplicates():
    e = parse("identity(nanmax(Cycle(6/7))[nanvar(VQ_d(1/4))])")
    plan = compile_plan([e])
    assert len(plan.stage1) == len(plan.stage2) == len(plan) == 1
    plan = compile_plan([e, e, e])
    assert len(plan) == 3 and len(plan.stage1) == len(plan.stage2) == 1


def test_plan_rejects_mixed_configs():
    with pytest.raises(FeatureValidationError):
        compile_plan([parse("identity(nanmax(Cycle(6/7))[nanvar(VQ_d(1/4))])"),
                      parse("identity(nanmax(Cycle(2/5))[nanvar(VQ_d(1/4))])")])


def test_feature_list_file_roundtrip(tmp_path):
    space = enumerate_space(SpaceConfig(K=3, D=2))
    write_feature_list(tmp_path / "f.txt", space)
    assert read_feature_list(tmp_path / "f.txt") == space
