import json

import cv2
import numpy as np
import pytest

from fakebench.datasets import (
    VideoRecord,
    ingest_manifest,
    load_split,
    make_fixed_split,
    make_identity_disjoint_split,
    make_same_identity_split,
    sample_frames,
    save_split,
    validate_split,
)
from fakebench.errors import (
    DuplicateVideoId,
    EmptyManifest,
    MissingField,
    OverlappingLists,
    TooFewIdentities,
    UnassignedVideo,
    UndecodableSource,
)


def record(video_id, identity_id, label, database="db", path="/tmp/x",
           generation="first"):
    return {"video_id": video_id, "identity_id": identity_id, "label": label,
            "database": database, "path": path, "generation": generation}


def write_manifest(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return path


def make_records(n_identities, videos_per_identity=2, fake_per_identity=1):
    recs = []
    for i in range(n_identities):
        ident = f"id{i:03d}"
        for v in range(videos_per_identity):
            label = "fake" if v < fake_per_identity else "real"
            recs.append(VideoRecord(f"{ident}_v{v}", ident, label, "db",
                                    "/tmp/x", "first"))
    return recs


class TestIngest:
    def test_uadfv_profile(self, tmp_path):
        rows = [record(f"real{i}", f"p{i}", "real", "UADFV") for i in range(49)]
        rows += [record(f"fake{i}", f"p{i}", "fake", "UADFV") for i in range(49)]
        records, profiles = ingest_manifest(write_manifest(tmp_path / "m.jsonl", rows))
        assert len(records) == 98
        assert (profiles["UADFV"].real_count, profiles["UADFV"].fake_count) == (49, 49)

    def test_dfdc_preview_profile(self, tmp_path):
        rows = [record(f"r{i}", f"a{i % 66}", "real", "DFDC-preview", generation="second")
                for i in range(1131)]
        rows += [record(f"f{i}", f"a{i % 66}", "fake", "DFDC-preview", generation="second")
                 for i in range(4119)]
        _, profiles = ingest_manifest(write_manifest(tmp_path / "m.jsonl", rows))
        p = profiles["DFDC-preview"]
        assert (p.real_count, p.fake_count) == (1131, 4119)

    def test_duplicate_video_id(self, tmp_path):
        rows = [record("v1", "a", "real"), record("v1", "b", "fake")]
        with pytest.raises(DuplicateVideoId):
            ingest_manifest(write_manifest(tmp_path / "m.jsonl", rows))

    def test_missing_field(self, tmp_path):
        row = record("v1", "a", "real")
        del row["path"]
        with pytest.raises(MissingField):
            ingest_manifest(write_manifest(tmp_path / "m.jsonl", [row]))

    def test_empty_manifest(self, tmp_path):
        f = tmp_path / "m.jsonl"
        f.write_text("\n")
        with pytest.raises(EmptyManifest):
            ingest_manifest(f)


class TestIdentityDisjointSplit:
    def test_celebdf_fixture_40_19(self):
        recs = make_records(59, videos_per_identity=3, fake_per_identity=2)
        plan = make_identity_disjoint_split(recs, dev_fraction=40 / 59, seed=0)
        assert len(plan.dev_identities) == 40
        assert len(plan.eval_identities) == 19

    def test_80_20_rounding_and_determinism(self):
        recs = make_records(10)
        a = make_identity_disjoint_split(recs, 0.8, seed=42)
        b = make_identity_disjoint_split(recs, 0.8, seed=42)
        assert len(a.dev_identities) == 8 and len(a.eval_identities) == 2
        assert a == b

    def test_different_seed_changes_plan(self):
        recs = make_records(10)
        a = make_identity_disjoint_split(recs, 0.8, seed=0)
        b = make_identity_disjoint_split(recs, 0.8, seed=1)
        assert a.dev_identities != b.dev_identities

    def test_too_few_identities(self):
        recs = make_records(1)
        with pytest.raises(TooFewIdentities):
            make_identity_disjoint_split(recs)

    def test_no_leakage_over_100_seeds(self):
        recs = make_records(23, videos_per_identity=3)
        for seed in range(100):
            plan = make_identity_disjoint_split(recs, 0.8, seed=seed)
            assert not set(plan.dev_identities) & set(plan.eval_identities)
            assert validate_split(plan, recs).clean
            assert abs(len(plan.dev_identities) - 0.8 * 23) <= 1

    def test_all_videos_of_identity_on_one_side(self):
        recs = make_records(12, videos_per_identity=4)
        plan = make_identity_disjoint_split(recs, 0.8, seed=3)
        for r in recs:
            side = "dev" if r.identity_id in plan.dev_identities else "eval"
            assert plan.assignment[r.video_id] == side

    def test_no_record_dropped_or_duplicated(self):
        recs = make_records(9, videos_per_identity=3)
        plan = make_identity_disjoint_split(recs, 0.8, seed=0)
        assert sorted(plan.assignment) == sorted(r.video_id for r in recs)


class TestFixedSplit:
    def test_faceforensics_style_counts(self):
        recs = make_records(1000, videos_per_identity=2, fake_per_identity=1)
        ids = sorted({r.identity_id for r in recs})
        plan = make_fixed_split(recs, ids[:860], ids[860:])
        report = validate_split(plan, recs)
        assert report.dev_counts == {"real": 860, "fake": 860}
        assert report.eval_counts == {"real": 140, "fake": 140}
        assert report.clean

    def test_overlapping_lists(self):
        recs = make_records(4)
        with pytest.raises(OverlappingLists):
            make_fixed_split(recs, ["id000", "id001"], ["id001", "id002", "id003"])

    def test_unassigned_video(self):
        recs = make_records(4)
        with pytest.raises(UnassignedVideo):
            make_fixed_split(recs, ["id000", "id001"], ["id002"])


class TestValidateSplit:
    def test_disjoint_plan_clean(self):
        recs = make_records(6)
        plan = make_identity_disjoint_split(recs, 0.8, seed=0)
        assert validate_split(plan, recs).leaked_identities == ()

    def test_leaky_plan_reported(self):
        recs = make_records(4, videos_per_identity=2)
        plan = make_same_identity_split(recs, 0.5, seed=0)
        report = validate_split(plan, recs)
        assert "id001" in report.leaked_identities or report.leaked_identities

    def test_same_identity_split_leaks_everywhere(self):
        recs = make_records(5, videos_per_identity=4)
        plan = make_same_identity_split(recs, 0.75, seed=1)
        report = validate_split(plan, recs)
        assert len(report.leaked_identities) == 5


def test_split_json_round_trip(tmp_path):
    recs = make_records(8)
    plan = make_identity_disjoint_split(recs, 0.8, seed=5)
    path = tmp_path / "split.json"
    save_split(plan, path)
    assert load_split(path) == plan


class TestSampleFrames:
    def _frame_dir(self, tmp_path, n):
        d = tmp_path / "frames"
        d.mkdir()
        for i in range(n):
            cv2.imwrite(str(d / f"f{i:03d}.png"),
                        np.full((8, 8, 3), i, dtype=np.uint8))
        return d

    def test_directory_sampling_and_provenance(self, tmp_path):
        d = self._frame_dir(tmp_path, 10)
        rec = VideoRecord("v1", "a", "real", "db", str(d), "first")
        frames = sample_frames(rec, rate=1.0, limit=100)
        assert len(frames) == 10
        assert all(f.video_id == "v1" for f in frames)
        assert frames[3].image[0, 0, 0] == 3

    def test_limit_truncates(self, tmp_path):
        d = self._frame_dir(tmp_path, 10)
        rec = VideoRecord("v1", "a", "real", "db", str(d), "first")
        frames = sample_frames(rec, rate=1.0, limit=3)
        assert [f.image[0, 0, 0] for f in frames] == [0, 1, 2]

    def test_corrupt_source(self, tmp_path):
        bad = tmp_path / "clip.avi"
        bad.write_bytes(b"not a video")
        rec = VideoRecord("v1", "a", "real", "db", str(bad), "first")
        with pytest.raises(UndecodableSource):
            sample_frames(rec)

    def test_video_file_rate_arithmetic(self, tmp_path):
        path = tmp_path / "clip.avi"
        writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"),
                                 5.0, (32, 32))
        if not writer.isOpened():
            pytest.skip("no MJPG encoder available")
        rng = np.random.default_rng(0)
        for _ in range(50):  # 10 seconds at 5 fps
            writer.write(rng.integers(0, 256, (32, 32, 3), dtype=np.uint8))
        writer.release()
        rec = VideoRecord("v1", "a", "real", "db", str(path), "first")
        frames = sample_frames(rec, rate=1.0, limit=100)
        assert len(frames) == 10
        assert len(sample_frames(rec, rate=1.0, limit=3)) == 3
