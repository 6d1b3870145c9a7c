import hashlib
import json
import zipfile

import pytest

from bidsforge.emitter import (
    archive_tree,
    emit,
    execute_emission,
    plan_emission,
    write_dataset_description,
    write_participants,
)
from bidsforge.errors import EmissionRefusedError
from bidsforge.pipeline import (
    analyze_tree,
    apply_events_mapping,
    apply_object_edit,
    apply_participants_edit,
)
from bidsforge.validation import validate_tree

from conftest import write_pair


def _single_t1(tmp_path) -> tuple:
    root = tmp_path / "one"
    write_pair(root / "sub-01", "t1", {
        "SeriesDescription": "t1_mprage",
        "ImageType": ["ORIGINAL"],
        "RepetitionTime": 2.3,
        "EchoTime": 0.003,
        "SeriesNumber": 2,
        "AcquisitionDateTime": "2024-01-01T10:00:00",
        "FlipAngle": 9,
    })
    doc, _ = analyze_tree(root)
    return doc, root


class TestDatasetDescription:
    def test_defaults(self):
        data = json.loads(write_dataset_description({}))
        assert data == {"Name": "Untitled", "BIDSVersion": "1.8.0"}

    def test_passthrough(self):
        data = json.loads(
            write_dataset_description({"Name": "Study X", "Authors": ["A", "B"]})
        )
        assert data["Name"] == "Study X"
        assert data["Authors"] == ["A", "B"]

    def test_license_field(self):
        data = json.loads(write_dataset_description({"License": "CC0"}))
        assert data["License"] == "CC0"


class TestParticipants:
    def test_missing_cells_are_na(self):
        tsv, _ = write_participants([("01", {}), ("02", {})], ["age", "sex"])
        lines = tsv.decode().splitlines()
        assert lines[0] == "participant_id\tage\tsex"
        assert lines[1] == "sub-01\tn/a\tn/a"
        assert lines[2] == "sub-02\tn/a\tn/a"

    def test_phenotype_transferred(self):
        tsv, _ = write_participants([("01", {"sex": "F"})], ["age", "sex"])
        assert tsv.decode().splitlines()[1] == "sub-01\tn/a\tF"

    def test_removed_column_is_omitted(self):
        tsv, js = write_participants([("01", {"age": "30"})], ["sex"])
        assert "age" not in tsv.decode()
        assert "age" not in json.loads(js)


class TestPlan:
    def test_one_object_two_actions(self, tmp_path):
        doc, root = _single_t1(tmp_path)
        plan = plan_emission(doc, root)
        assert ("sub-01/t1.nii.gz", "sub-01/anat/sub-01_T1w.nii.gz") in plan.copies
        sub_writes = [d for d, _ in plan.writes if d.startswith("sub-01/")]
        assert sub_writes == ["sub-01/anat/sub-01_T1w.json"]

    def test_excluded_object_yields_nothing(self, tmp_path):
        doc, root = _single_t1(tmp_path)
        doc = apply_object_edit(doc, 0, exclude=True)
        plan = plan_emission(doc, root)
        assert plan.copies == []
        assert all(not d.startswith("sub-01/") for d, _ in plan.writes)

    def test_validation_errors_refuse(self, tmp_path):
        doc, root = _single_t1(tmp_path)
        doc.series[0].entities["acq"] = "0.8mm"
        with pytest.raises(EmissionRefusedError) as err:
            plan_emission(doc, root)
        assert any("non-alphanumeric" in i.message for i in err.value.items)

    def test_collision_refused(self, tmp_path):
        doc, root = _single_t1(tmp_path)
        # no run labels and a duplicated object -> same destination
        import copy

        clone = copy.deepcopy(doc.objects[0])
        clone.object_id = 1
        doc.objects.append(clone)
        with pytest.raises(EmissionRefusedError):
            plan_emission(doc, root)

    def test_planning_is_idempotent(self, tmp_path):
        doc, root = _single_t1(tmp_path)
        a = plan_emission(doc, root)
        b = plan_emission(doc, root)
        assert a.copies == b.copies
        assert a.writes == b.writes

    def test_sidecar_merge_adds_taskname(self, clean_study):
        doc, _ = analyze_tree(clean_study)
        plan = plan_emission(doc, clean_study)
        bold_sidecars = [
            content for dest, content in plan.writes
            if dest.endswith("_bold.json")
        ]
        assert bold_sidecars
        for content in bold_sidecars:
            data = json.loads(content)
            assert data["TaskName"] == "nback"
            assert data["Manufacturer"] == "TestScanner"  # source fields kept


class TestExecute:
    def test_full_tree_and_byte_identity(self, clean_study, tmp_path):
        doc, _ = analyze_tree(clean_study)
        out = tmp_path / "bids"
        report = emit(doc, clean_study, out)
        assert report.failed is None
        assert (out / "dataset_description.json").is_file()
        assert (out / "participants.tsv").is_file()
        t1 = out / "sub-01/ses-01/anat/sub-01_ses-01_T1w.nii.gz"
        assert t1.is_file()
        source = clean_study / "sub-01/ses-01/anat/sub-01_ses-01_T1.nii.gz"
        assert hashlib.sha256(t1.read_bytes()).hexdigest() == hashlib.sha256(
            source.read_bytes()
        ).hexdigest()
        assert [i for i in report.post_validation if i.severity == "error"] == []

    def test_every_data_file_has_one_sidecar(self, clean_study, tmp_path):
        doc, _ = analyze_tree(clean_study)
        out = tmp_path / "bids"
        emit(doc, clean_study, out)
        for data_file in out.rglob("*.nii.gz"):
            stem = data_file.name[: -len(".nii.gz")]
            assert (data_file.parent / f"{stem}.json").is_file()

    def test_non_empty_output_refused(self, clean_study, tmp_path):
        doc, _ = analyze_tree(clean_study)
        out = tmp_path / "bids"
        out.mkdir()
        (out / "stray.txt").write_text("x")
        with pytest.raises(EmissionRefusedError):
            emit(doc, clean_study, out)

    def test_emitted_tree_revalidates_clean(self, clean_study, tmp_path):
        doc, _ = analyze_tree(clean_study)
        out = tmp_path / "bids"
        emit(doc, clean_study, out)
        assert [i for i in validate_tree(out) if i.severity == "error"] == []

    def test_events_tsv_written(self, tmp_path):
        root = tmp_path / "ev"
        write_pair(root / "sub-01", "bold", {
            "SeriesDescription": "task-bart_bold",
            "ImageType": ["ORIGINAL"],
            "RepetitionTime": 2.0,
            "EchoTime": 0.03,
            "SeriesNumber": 5,
            "AcquisitionDateTime": "2024-01-01T10:00:00",
        }, dims=(4, 4, 2, 3))
        (root / "sub-01").mkdir(parents=True, exist_ok=True)
        (root / "sub-01" / "task-bart_run-01_timing.tsv").write_text(
            "StimOnset\tDur\tCond\n1500\t200\tgo\n"
        )
        doc, _ = analyze_tree(root)
        doc = apply_events_mapping(doc, {
            "onsetColumn": "StimOnset", "onsetUnit": "milliseconds",
            "durationColumn": "Dur", "durationUnit": "milliseconds",
            "trialTypeColumn": "Cond",
        }, root)
        out = tmp_path / "bids"
        report = emit(doc, root, out)
        assert report.failed is None
        events = out / "sub-01/func/sub-01_task-bart_events.tsv"
        assert events.read_text() == "onset\tduration\ttrial_type\n1.5\t0.2\tgo\n"

    def test_participants_reflect_user_columns(self, clean_study, tmp_path):
        doc, _ = analyze_tree(clean_study)
        doc = apply_participants_edit(
            doc, columns=["age", "sex", "handedness"],
            values={"01": {"handedness": "R"}},
        )
        out = tmp_path / "bids"
        emit(doc, clean_study, out)
        lines = (out / "participants.tsv").read_text().splitlines()
        assert lines[0] == "participant_id\tage\tsex\thandedness"
        row01 = next(l for l in lines if l.startswith("sub-01\t"))
        assert row01.endswith("\tR")


class TestExternalValidator:
    def test_output_is_informational_only(self, clean_study, tmp_path):
        import stat

        from bidsforge.config import Config

        stub = tmp_path / "stub-validator"
        stub.write_text("#!/bin/sh\necho checked $1\nexit 1\n")
        stub.chmod(stub.stat().st_mode | stat.S_IEXEC)

        doc, _ = analyze_tree(clean_study)
        out = tmp_path / "bids"
        report = emit(doc, clean_study, out, Config(external_validator=str(stub)))
        # nonzero exit surfaces in the report without retracting anything
        assert report.failed is None
        assert "exit 1" in report.external_validator_output
        assert "checked" in report.external_validator_output
        assert (out / "dataset_description.json").is_file()

    def test_missing_binary_reported_not_fatal(self, clean_study, tmp_path):
        from bidsforge.config import Config

        doc, _ = analyze_tree(clean_study)
        out = tmp_path / "bids"
        report = emit(doc, clean_study, out, Config(external_validator="/no/such/validator"))
        assert report.failed is None
        assert "could not run" in report.external_validator_output


class TestArchive:
    def test_zip_round_trip(self, clean_study, tmp_path):
        doc, _ = analyze_tree(clean_study)
        out = tmp_path / "bids"
        emit(doc, clean_study, out)
        zip_path = archive_tree(out, tmp_path / "bids.zip")
        with zipfile.ZipFile(zip_path) as zf:
            names = set(zf.namelist())
            assert "dataset_description.json" in names
            assert "sub-01/ses-01/anat/sub-01_ses-01_T1w.nii.gz" in names
