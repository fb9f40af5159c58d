import random

import pytest
from pydantic import ValidationError

from errors import TaxonomyNotApplicable, UnknownTask
from services.registry import InputArity, LabelScheme, Modality
from services.synth import SuitePreset, preset_suite
from services.taxonomy import TaskPartition, TaxonomyRule, compose, partition
from .conftest import make_spec

_S, _P = InputArity.SINGLE_SENTENCE, InputArity.SENTENCE_PAIR
_B, _M = LabelScheme.BINARY, LabelScheme.MULTICLASS


def clue_specs():
    return [
        make_spec("cwsc", arity=_S, scheme=_B),
        make_spec("tnews", arity=_S, scheme=_M),
        make_spec("iflytek", arity=_S, scheme=_M),
        make_spec("csl", arity=_P, scheme=_B),
        make_spec("afqmc", arity=_P, scheme=_B),
        make_spec("ocnli", arity=_P, scheme=_M),
    ]


def cmrc():
    return make_spec("cmrc", modality=Modality.GENERATION, scheme=LabelScheme.FREEFORM)


def test_modality_split():
    groups = partition(clue_specs() + [cmrc()], TaxonomyRule.MODALITY_SPLIT)
    assert groups.names == ["classification", "generation"]
    assert len(groups.members("classification")) == 6
    assert groups.members("generation") == ("cmrc",)


def test_single_vs_pair():
    groups = partition(clue_specs(), "SS")
    assert groups.as_dict() == {
        "single": ["cwsc", "iflytek", "tnews"],
        "pair": ["afqmc", "csl", "ocnli"],
    }


def test_binary_vs_multi():
    groups = partition(clue_specs(), TaxonomyRule.BM)
    assert set(groups.members("binary")) == {"cwsc", "csl", "afqmc"}
    assert set(groups.members("multi")) == {"tnews", "ocnli", "iflytek"}


def test_none_is_one_group():
    groups = partition(clue_specs(), TaxonomyRule.NONE)
    assert groups.names == ["all"]
    assert len(groups.task_ids()) == 6


@pytest.mark.parametrize("rule", [TaxonomyRule.SS, TaxonomyRule.BM, TaxonomyRule.BOM])
def test_class_rules_reject_generation(rule):
    with pytest.raises(TaxonomyNotApplicable):
        partition(clue_specs() + [cmrc()], rule)


def test_partition_ignores_input_order():
    """入力順を変えてもグループは同じ"""
    specs = clue_specs()
    shuffled = specs[:]
    random.Random(3).shuffle(shuffled)
    for rule in (TaxonomyRule.SS, TaxonomyRule.BM, TaxonomyRule.BOM):
        assert partition(specs, rule) == partition(shuffled, rule)


def test_empty_groups_are_dropped():
    groups = partition(clue_specs(), TaxonomyRule.MODALITY_SPLIT)
    assert groups.names == ["classification"]


def test_partition_rejects_overlap():
    with pytest.raises(ValidationError):
        TaskPartition(groups=(("a", ("x",)), ("b", ("x",))))
    with pytest.raises(ValidationError):
        TaskPartition(groups=(("a", ()),))


def test_compose_modality_then_bom_on_application_suite():
    """分類グループをさらにBOMで分ける"""
    suite = preset_suite(SuitePreset.APPLICATION_LIKE, include_generation=True, scale=0.01)
    specs = [task.spec() for task in suite.tasks]
    base = partition(specs, TaxonomyRule.MODALITY_SPLIT)
    groups = compose(base, specs, TaxonomyRule.BOM, "classification")

    assert groups.names == ["binary", "ordinal", "multiclass", "generation"]
    assert [len(groups.members(name)) for name in groups.names] == [12, 2, 3, 1]


def test_compose_unknown_member():
    base = partition(clue_specs(), TaxonomyRule.NONE)
    with pytest.raises(UnknownTask):
        compose(base, clue_specs()[:3], TaxonomyRule.BOM, "all")
