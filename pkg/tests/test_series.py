import pytest
from hypothesis import given, settings, strategies as st

from bidsforge.errors import ConfigurationError, EntityError
from bidsforge.model import SidecarMetadata
from bidsforge.pipeline import analyze_tree, apply_object_edit
from bidsforge.series import (
    Classification,
    classify_series,
    group_records,
    infer_entities,
    load_keyphrase_rules,
    normalize_description,
    propagate_series_edit,
)
from bidsforge.validation import load_schema

from conftest import write_pair


@pytest.fixture(scope="module")
def rules():
    return load_keyphrase_rules()


@pytest.fixture(scope="module")
def schema():
    return load_schema()


def meta(sd="x", it=("ORIGINAL", "PRIMARY"), tr=2.0, te=0.03, **kw) -> SidecarMetadata:
    return SidecarMetadata(
        series_description=sd,
        image_type=tuple(it) if it is not None else None,
        repetition_time=tr,
        echo_time=te,
        **kw,
    )


def key(i):
    return ("2024-01-01T10:00:00", i, f"f{i}")


class TestGrouping:
    def test_tolerance_groups(self):
        items = [(meta(te=0.03), key(0)), (meta(te=0.030001), key(1))]
        assert group_records(items) == [0, 0]

    def test_rr_suffix_groups(self):
        items = [(meta(sd="func_bold"), key(0)), (meta(sd="func_bold_RR"), key(1))]
        assert group_records(items) == [0, 0]

    def test_beyond_tolerance_splits(self):
        items = [(meta(te=0.030), key(0)), (meta(te=0.032), key(1))]
        assert group_records(items) == [0, 1]

    def test_closed_ball_boundary(self):
        inside = [(meta(te=0.03), key(0)), (meta(te=0.03 + 0.0005), key(1))]
        outside = [(meta(te=0.03), key(0)), (meta(te=0.03 + 0.00051), key(1))]
        assert group_records(inside) == [0, 0]
        assert group_records(outside) == [0, 1]

    def test_image_type_is_exact(self):
        items = [
            (meta(it=("ORIGINAL", "PRIMARY")), key(0)),
            (meta(it=("PRIMARY", "ORIGINAL")), key(1)),
        ]
        assert group_records(items) == [0, 1]

    def test_absent_te_is_a_distinct_value(self):
        items = [(meta(te=None), key(0)), (meta(te=0.0), key(1)), (meta(te=None), key(2))]
        assert group_records(items) == [0, 1, 0]

    def test_ids_dense_and_ordered_by_first_occurrence(self):
        items = [
            (meta(sd="later"), key(5)),
            (meta(sd="early"), key(0)),
            (meta(sd="later"), key(6)),
        ]
        assert group_records(items) == [1, 0, 1]

    @settings(max_examples=25, deadline=None)
    @given(st.randoms(use_true_random=False))
    def test_partition_is_input_order_independent(self, rnd):
        base = [
            (meta(sd="a", te=0.03), key(0)),
            (meta(sd="a", te=0.0302), key(1)),
            (meta(sd="b", te=0.03), key(2)),
            (meta(sd="a", te=0.03+0.0004), key(3)),
        ]
        shuffled = base[:]
        rnd.shuffle(shuffled)
        expected = group_records(base)
        got = group_records(shuffled)
        # same partition by identity of the underlying record
        index = {id(item): sid for item, sid in zip(shuffled, got)}
        assert [index[id(item)] for item in base] == expected


class TestClassification:
    def test_explicit_token(self, rules, schema):
        c = classify_series(meta(sd="study_anat_T1w_32ch"), rules, schema)
        assert (c.datatype, c.suffix, c.heuristic) == ("anat", "T1w", "explicit")

    def test_keyphrase_tfl3d(self, rules, schema):
        c = classify_series(meta(sd="tfl3d1_16ns"), rules, schema)
        assert (c.datatype, c.suffix, c.heuristic) == ("anat", "T1w", "keyphrase")

    def test_metadata_diffusion(self, rules, schema):
        c = classify_series(
            meta(sd="zzz_нет", it=("ORIGINAL", "PRIMARY", "DIFFUSION")), rules, schema
        )
        assert (c.datatype, c.suffix, c.heuristic) == ("dwi", "dwi", "metadata")

    def test_long_echo_anatomical_becomes_t2w(self, rules, schema):
        c = classify_series(meta(sd="mprage_iso", te=0.102), rules, schema)
        assert (c.datatype, c.suffix) == ("anat", "T2w")
        assert c.heuristic == "metadata"

    def test_flair_not_overridden_by_echo_time(self, rules, schema):
        c = classify_series(meta(sd="t2_flair_sag", te=0.12), rules, schema)
        assert (c.datatype, c.suffix) == ("anat", "FLAIR")

    def test_unknown_falls_back_to_exclude(self, rules, schema):
        c = classify_series(meta(sd="zzz_unknown_seq"), rules, schema)
        assert (c.datatype, c.suffix, c.heuristic) == ("exclude", "", "none")
        assert "user" in c.message or "decide" in c.message

    def test_sbref_beats_task_keyphrase(self, rules, schema):
        c = classify_series(meta(sd="task-bart_sbref"), rules, schema)
        assert (c.datatype, c.suffix) == ("func", "sbref")

    def test_rest_implies_task_entity(self, rules, schema):
        c = classify_series(meta(sd="ep2d_rest_run2"), rules, schema)
        assert (c.datatype, c.suffix) == ("func", "bold")
        assert c.entities == {"task": "rest"}

    def test_localizer_excluded(self, rules, schema):
        c = classify_series(meta(sd="AAHead_Scout_32ch"), rules, schema)
        assert c.datatype == "exclude"

    def test_classification_pure_in_grouping_key(self, rules, schema):
        a = classify_series(meta(sd="tfl3d", te=0.03), rules, schema)
        b = classify_series(meta(sd="tfl3d", te=0.03 + 0.0004), rules, schema)
        assert (a.datatype, a.suffix) == (b.datatype, b.suffix)


class TestEntityExtraction:
    def anat(self):
        return Classification("anat", "T1w", "keyphrase", "")

    def test_task_token(self, rules, schema):
        c = classify_series(meta(sd="task-bart_bold"), rules, schema)
        entities = infer_entities(meta(sd="task-bart_bold"), c)
        assert entities["task"] == "bart"

    def test_underscore_second_pass(self):
        entities = infer_entities(meta(sd="bold_task_nback_x"), Classification("func", "bold", "keyphrase", ""))
        assert entities["task"] == "nback"

    def test_acq_ce_rec_dir_run(self):
        entities = infer_entities(
            meta(sd="acq-highres_ce-gad_rec-moco_dir-AP_run-02_x"), self.anat()
        )
        assert entities == {
            "acq": "highres", "ce": "gad", "rec": "moco", "dir": "AP", "run": "02",
        }

    def test_echo_number_transfer(self):
        entities = infer_entities(meta(sd="plain", echo_number=2), self.anat())
        assert entities["echo"] == "2"

    def test_phase_encoding_lookup_for_fmap_epi(self):
        c = Classification("fmap", "epi", "keyphrase", "")
        for pe, direction in (("j-", "AP"), ("j", "PA"), ("i", "LR"), ("i-", "RL")):
            entities = infer_entities(
                meta(sd="sefmap", phase_encoding_direction=pe), c
            )
            assert entities["dir"] == direction

    def test_dir_token_beats_phase_encoding(self):
        c = Classification("fmap", "epi", "keyphrase", "")
        entities = infer_entities(
            meta(sd="sefmap_dir-PA", phase_encoding_direction="j-"), c
        )
        assert entities["dir"] == "PA"

    def test_phase_encoding_ignored_outside_fmap_epi(self):
        entities = infer_entities(
            meta(sd="bold", phase_encoding_direction="j-"),
            Classification("func", "bold", "keyphrase", ""),
        )
        assert "dir" not in entities


def _study_with_runs(tmp_path, n_bold=2):
    root = tmp_path / "runs"
    for i in range(n_bold):
        write_pair(
            root / "sub-01", f"bold{i}",
            {
                "SeriesDescription": "task-bart_bold",
                "ImageType": ["ORIGINAL", "PRIMARY"],
                "RepetitionTime": 2.0,
                "EchoTime": 0.03,
                "SeriesNumber": 10 + i,
                "AcquisitionDateTime": f"2024-01-01T10:{10 + i}:00",
            },
        )
    write_pair(
        root / "sub-01", "rest",
        {
            "SeriesDescription": "task-rest_bold",
            "ImageType": ["ORIGINAL", "PRIMARY"],
            "RepetitionTime": 2.0,
            "EchoTime": 0.03,
            "SeriesNumber": 30,
            "AcquisitionDateTime": "2024-01-01T10:40:00",
        },
    )
    doc, _ = analyze_tree(root)
    return doc


class TestRuns:
    def _runs(self, doc, task):
        out = []
        for obj in doc.objects:
            entities = doc.effective_entities(obj)
            if entities.get("task") == task:
                out.append((obj.acquisition_order, obj.run))
        return [run for _, run in sorted(out)]

    def test_two_repeats_get_run_labels(self, tmp_path):
        doc = _study_with_runs(tmp_path, n_bold=2)
        assert self._runs(doc, "bart") == ["1", "2"]

    def test_singleton_gets_no_run(self, tmp_path):
        doc = _study_with_runs(tmp_path, n_bold=2)
        assert self._runs(doc, "rest") == [None]

    def test_three_anatomicals_get_runs(self, tmp_path):
        root = tmp_path / "anat3"
        for i in range(3):
            write_pair(
                root / "sub-01", f"t1_{i}",
                {
                    "SeriesDescription": "t1_mprage",
                    "RepetitionTime": 2.3,
                    "EchoTime": 0.003,
                    "SeriesNumber": i + 1,
                    "AcquisitionDateTime": f"2024-01-01T0{9 + i}:00:00",
                },
            )
        doc, _ = analyze_tree(root)
        runs = [o.run for o in sorted(doc.objects, key=lambda o: o.sort_key())]
        assert runs == ["1", "2", "3"]

    def test_runs_dense_after_exclusion(self, tmp_path):
        doc = _study_with_runs(tmp_path, n_bold=3)
        first = next(
            o for o in doc.objects
            if doc.effective_entities(o).get("task") == "bart" and o.run == "1"
        )
        edited = apply_object_edit(doc, first.object_id, exclude=True)
        assert self._runs(edited, "bart") == [None, "1", "2"]


class TestSeriesEditPropagation:
    def test_edit_reaches_every_member(self, clean_study):
        doc, _ = analyze_tree(clean_study)
        t1 = next(s for s in doc.series if s.suffix == "T1w")
        out = propagate_series_edit(doc, t1.series_id, entities={"acq": "mprage"})
        members = [o for o in out.objects if o.series_id == t1.series_id]
        assert len(members) == 6  # 3 subjects x 2 sessions
        assert all(out.effective_entities(o)["acq"] == "mprage" for o in members)
        assert out.version == doc.version + 1

    def test_override_survives_series_edit(self, clean_study):
        doc, _ = analyze_tree(clean_study)
        t1 = next(s for s in doc.series if s.suffix == "T1w")
        member = next(o for o in doc.objects if o.series_id == t1.series_id)
        doc2 = apply_object_edit(doc, member.object_id, overrides={"acq": "special"})
        doc3 = propagate_series_edit(doc2, t1.series_id, entities={"acq": "mprage"})
        assert doc3.effective_entities(doc3.object_by_id(member.object_id))["acq"] == "special"
        others = [o for o in doc3.objects
                  if o.series_id == t1.series_id and o.object_id != member.object_id]
        assert all(doc3.effective_entities(o)["acq"] == "mprage" for o in others)

    def test_non_alphanumeric_value_rejected(self, clean_study):
        doc, _ = analyze_tree(clean_study)
        t1 = next(s for s in doc.series if s.suffix == "T1w")
        with pytest.raises(EntityError) as err:
            propagate_series_edit(doc, t1.series_id, entities={"acq": "0.8mm"})
        assert "contains non-alphanumeric character" in err.value.item.message
        # document unchanged
        assert doc.series_by_id(t1.series_id).entities.get("acq") is None

    def test_other_series_untouched(self, clean_study):
        doc, _ = analyze_tree(clean_study)
        t1 = next(s for s in doc.series if s.suffix == "T1w")
        before = {
            o.object_id: (dict(o.entity_overrides), o.run)
            for o in doc.objects if o.series_id != t1.series_id
        }
        out = propagate_series_edit(doc, t1.series_id, entities={"acq": "mprage"})
        after = {
            o.object_id: (dict(o.entity_overrides), o.run)
            for o in out.objects if o.series_id != t1.series_id
        }
        assert before == after

    def test_unknown_pair_rejected(self, clean_study):
        doc, _ = analyze_tree(clean_study)
        with pytest.raises(EntityError):
            propagate_series_edit(doc, 0, datatype="anat", suffix="bold")


class TestKeyphraseFile:
    def test_bad_syntax_names_line(self, tmp_path):
        bad = tmp_path / "rules.tsv"
        bad.write_text("just-one-field\n")
        with pytest.raises(ConfigurationError) as err:
            load_keyphrase_rules(bad)
        assert "rules.tsv:1" in str(err.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_keyphrase_rules(tmp_path / "nope.tsv")

    def test_custom_rule_wins(self, tmp_path, schema):
        custom = tmp_path / "rules.tsv"
        custom.write_text("myproto\tSeriesDescription\tperf\tasl\t-\n")
        rules = load_keyphrase_rules(custom)
        c = classify_series(meta(sd="MyProto_scan"), rules, schema)
        assert (c.datatype, c.suffix) == ("perf", "asl")
