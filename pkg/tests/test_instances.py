from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srank.catalog import EMBEDDING_WEEK, Catalog, ClickSession, DataError, Item
from srank.features import MISSING, PERSONALIZATION_FEATURES
from srank.instances import (
    FEATURE_SELECTIONS,
    FULL,
    HIGH_COVERAGE,
    TEST,
    TRAIN,
    VALIDATION,
    build_instances,
    filter_high_coverage,
    read_dataset,
    split_dataset,
    write_dataset,
)

from conftest import make_impression, make_table, ranking_session

ITEMS = [f"i{k:02d}" for k in range(30)]
CATALOG = Catalog(Item(i, f"t{k % 4} w{k % 3}", 1.0 + k) for k, i in enumerate(ITEMS))


def one_group(context, candidates, sold, table, role=TRAIN):
    s = ranking_session("s", context, [make_impression("q", context, candidates, sold)])
    ds = build_instances([s], CATALOG, table)
    return ds.take([0], role=role)


def full_table(except_=()):
    return make_table({i: (1.0, float(k)) for k, i in enumerate(ITEMS) if i not in except_})


def test_baseline_selection_has_no_personalization():
    s = ranking_session("s", ["i00"], [make_impression("q", ["i00"], ["i01", "i02", "i03"], {"i01"})])
    ds = build_instances([s], CATALOG, full_table(), "baseline")
    assert len(ds) == 3 and ds.feature_names == ("relevance",)


def test_all_selection_appends_in_order():
    s = ranking_session("s", ["i00"], [make_impression("q", ["i00"], ["i01", "i02", "i03"], {"i01"})])
    ds = build_instances([s], CATALOG, full_table(), "all")
    assert ds.feature_names == ("relevance", *PERSONALIZATION_FEATURES)
    for sel, cols in FEATURE_SELECTIONS.items():
        assert ds.for_model(sel).feature_names == ("relevance", *cols)


def test_empty_context_all_missing():
    s = ranking_session("s", [], [make_impression("q", [], ["i01", "i02"], {"i01"})])
    ds = build_instances([s], CATALOG, full_table())
    assert np.all(ds.features[:, 1:] == MISSING)
    assert ds.coverage()["cos_distance_avg"] == 0.0


def test_build_errors():
    bad = ranking_session("s", [], [make_impression("q", [], ["nope"], set())])
    with pytest.raises(DataError, match="not in the catalog"):
        build_instances([bad], CATALOG, full_table())
    with pytest.raises(DataError, match="ranking_week"):
        build_instances([ClickSession("e", EMBEDDING_WEEK, ("i00",))], CATALOG, full_table())
    with pytest.raises(ValueError):
        build_instances([], CATALOG, full_table(), "bogus")


def test_test_group_of_19_dropped():
    cands = ITEMS[1:21]
    ds = one_group(["i00"], cands, {"i01"}, full_table(except_={"i05"}), TEST)
    assert filter_high_coverage(ds, full_table(except_={"i05"})).n_groups == 0
    assert filter_high_coverage(ds, full_table()).n_groups == 1


def test_train_group_of_three_kept():
    ds = one_group(["i00"], ["i01", "i02", "i03"], {"i02"}, full_table())
    out = filter_high_coverage(ds, full_table())
    assert out.n_groups == 1 and len(out) == 3 and out.variant == HIGH_COVERAGE


def test_only_positive_is_repeated_click():
    ds = one_group(["i00", "i01"], ["i01", "i02", "i03", "i04"], {"i01"}, full_table())
    assert filter_high_coverage(ds, full_table()).n_groups == 0


def test_filter_requires_role_and_contexts():
    ds = one_group(["i00"], ["i01", "i02", "i03"], {"i02"}, full_table())
    with pytest.raises(ValueError):
        filter_high_coverage(ds.take([0], role=None), full_table())
    with pytest.raises(ValueError):
        filter_high_coverage(replace(ds, contexts=None), full_table())


@st.composite
def fixtures(draw):
    embedded = set(draw(st.sets(st.sampled_from(ITEMS), min_size=1)))
    groups = []
    for _ in range(draw(st.integers(1, 6))):
        context = draw(st.lists(st.sampled_from(ITEMS), max_size=7))
        candidates = draw(st.lists(st.sampled_from(ITEMS), min_size=1, max_size=25, unique=True))
        sold = set(draw(st.sets(st.sampled_from(candidates), max_size=2)))
        groups.append((context, candidates, sold))
    role = draw(st.sampled_from([TRAIN, VALIDATION, TEST]))
    return embedded, groups, role


def reference_filter(embedded, groups, role):
    """The four rules written out directly over plain lists."""
    minimum = 20 if role == TEST else 3
    kept = []
    for q, (context, candidates, sold) in enumerate(groups):
        recent = context[-5:]
        items = [c for c in candidates if c in embedded]
        embedded_ctx = [c for c in recent if c in embedded]
        if not embedded_ctx:
            continue
        items = [c for c in items if c != embedded_ctx[-1]]
        if len(items) >= minimum and any(c in sold for c in items):
            kept.append((f"q{q}", items))
    return kept


@settings(max_examples=150, deadline=None)
@given(fixtures())
def test_filter_matches_reference(fixture):
    embedded, groups, role = fixture
    table = make_table({i: (1.0, float(k + 1)) for k, i in enumerate(ITEMS) if i in embedded})
    sessions = [ranking_session(f"s{q}", ctx, [make_impression(f"q{q}", ctx, c, s)])
                for q, (ctx, c, s) in enumerate(groups)]
    ds = build_instances(sessions, CATALOG, table).take(range(len(groups)), role=role)
    out = filter_high_coverage(ds, table)
    got = [(g.query_id, [i.item_id for i in g.instances]) for g in out.groups]
    assert got == reference_filter(embedded, groups, role)
    # rule-level postconditions
    assert all(i in table for i in out.item_ids)
    if len(out):
        assert all(out.coverage()[n] == 1.0 for n in ("cos_distance_avg", "cos_distance_last"))
    for g in out.groups:
        last = next(c for c in reversed(g.context) if c in table)
        assert all(i.item_id != last for i in g.instances)
        assert len(g.instances) >= (20 if role == TEST else 3)
        assert sum(i.label for i in g.instances) >= 1
    again = filter_high_coverage(out, table)
    assert again.query_ids == out.query_ids and np.array_equal(again.item_ids, out.item_ids)


def many_groups(n):
    sessions = [ranking_session(f"s{k}", ["i00"], [make_impression(f"q{k}", ["i00"], ["i01", "i02"], {"i01"})])
                for k in range(n)]
    return build_instances(sessions, CATALOG, full_table())


def test_split_sizes_and_determinism():
    ds = many_groups(10)
    parts = split_dataset(ds, (0.6, 0.2, 0.2), seed=4)
    assert [p.n_groups for p in parts] == [6, 2, 2]
    assert [p.role for p in parts] == [TRAIN, VALIDATION, TEST]
    again = split_dataset(ds, (0.6, 0.2, 0.2), seed=4)
    assert [p.query_ids for p in parts] == [p.query_ids for p in again]
    assert sorted(sum((p.query_ids for p in parts), [])) == sorted(ds.query_ids)


def test_split_errors():
    with pytest.raises(ValueError, match="empty test fraction"):
        split_dataset(many_groups(10), (0.5, 0.5, 0.0))
    with pytest.raises(ValueError):
        split_dataset(many_groups(2))


def test_dataset_round_trip(tmp_path):
    table = full_table(except_={"i03"})
    s = ranking_session("s", ["i00"], [make_impression("q1", ["i00"], ["i01", "i03"], {"i01"}),
                                      make_impression("q2", [], ["i02", "i04"], {"i04"})])
    ds = build_instances([s], CATALOG, table)
    write_dataset(ds, tmp_path / "d.tsv")
    header = (tmp_path / "d.tsv").read_text().splitlines()[0].split("\t")
    assert header[-4:] == [f"has_{n}" for n in PERSONALIZATION_FEATURES]
    back = read_dataset(tmp_path / "d.tsv", FULL, TEST)
    assert back.query_ids == ds.query_ids and back.feature_names == ds.feature_names
    assert np.array_equal(back.features, ds.features) and np.array_equal(back.labels, ds.labels)
