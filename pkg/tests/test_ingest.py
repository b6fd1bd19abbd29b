import json

import numpy as np
import pytest

from canon9d import ingest
from canon9d.core import FeaturedSurface
from conftest import make_surface


def write_manifest(path, entries):
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e) + "\n")


class TestFpc:
    def test_minimal_layout_size(self, tmp_path):
        s = FeaturedSurface(vertices=np.zeros((1, 3), dtype=np.float32),
                            features=[np.zeros((0, 7), dtype=np.float32)],
                            feature_dim=7)
        path = tmp_path / "one.fpc"
        ingest.write_fpc(s, path)
        assert path.stat().st_size == 26  # 4 magic + 8 header + 12 verts + 2 counts

    def test_round_trip_identity(self, tmp_path, rng):
        for i in range(5):
            s = make_surface(rng, n=int(rng.integers(1, 40)), dim=6,
                             feats_per_vertex=(0, 3))
            path = tmp_path / f"s{i}.fpc"
            ingest.write_fpc(s, path)
            r = ingest.read_fpc(path)
            assert np.array_equal(r.vertices, s.vertices)
            assert r.feature_dim == s.feature_dim
            assert len(r.features) == len(s.features)
            for a, b in zip(r.features, s.features):
                assert np.array_equal(a, b)

    def test_double_round_trip_bytes(self, tmp_path, rng):
        s = make_surface(rng, n=20, dim=4)
        p1, p2 = tmp_path / "a.fpc", tmp_path / "b.fpc"
        ingest.write_fpc(s, p1)
        ingest.write_fpc(ingest.read_fpc(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.fpc"
        path.write_bytes(b"NOPE" + b"\x00" * 30)
        with pytest.raises(ingest.BadMagic):
            ingest.read_fpc(path)

    def test_truncated_feature_block(self, tmp_path, rng):
        s = make_surface(rng, n=8, dim=5, feats_per_vertex=(1, 2))
        path = tmp_path / "t.fpc"
        ingest.write_fpc(s, path)
        data = path.read_bytes()
        path.write_bytes(data[:-6])  # cut mid-feature-block
        with pytest.raises(ingest.TruncatedFile):
            ingest.read_fpc(path)

    def test_trailing_garbage_is_dimension_mismatch(self, tmp_path, rng):
        s = make_surface(rng, n=4, dim=3)
        path = tmp_path / "g.fpc"
        ingest.write_fpc(s, path)
        path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
        with pytest.raises(ingest.DimensionMismatch):
            ingest.read_fpc(path)

    def test_renormalizes_drifted_features(self, tmp_path, rng):
        s = make_surface(rng, n=3, dim=4, feats_per_vertex=(1, 1))
        path = tmp_path / "d.fpc"
        ingest.write_fpc(s, path)
        # corrupt one feature vector's scale by 0.5% in place
        data = bytearray(path.read_bytes())
        off = 12 + 3 * 12 + 3 * 2
        vec = np.frombuffer(bytes(data[off:off + 16]), dtype="<f4") * 1.005
        data[off:off + 16] = vec.astype("<f4").tobytes()
        path.write_bytes(bytes(data))
        r = ingest.read_fpc(path)
        norm = np.linalg.norm(r.features[0].astype(np.float64), axis=1)
        assert np.abs(norm - 1.0).max() < 1e-4


class TestManifest:
    def test_empty(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("")
        assert ingest.load_manifest(path) == []

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [
            {"object_id": "a", "surface": "a.fpc"},
            {"object_id": "a", "surface": "b.fpc"},
        ])
        with pytest.raises(ingest.DuplicateId):
            ingest.load_manifest(path, check_files=False)

    def test_three_valid_records(self, tmp_path, rng):
        for name in ("a", "b", "c"):
            ingest.write_fpc(make_surface(rng, n=5), tmp_path / f"{name}.fpc")
        path = tmp_path / "m.jsonl"
        write_manifest(path, [
            {"object_id": n, "surface": f"{n}.fpc"} for n in ("a", "b", "c")
        ])
        records = ingest.load_manifest(path)
        assert [r.object_id for r in records] == ["a", "b", "c"]
        assert all(r.status == ingest.Status.PENDING for r in records)

    def test_unknown_status(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [
            {"object_id": "a", "surface": "a.fpc", "status": "Lost"}])
        with pytest.raises(ingest.UnknownStatus):
            ingest.load_manifest(path, check_files=False)

    def test_missing_file(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [{"object_id": "a", "surface": "nope.fpc"}])
        with pytest.raises(ingest.MissingFile):
            ingest.load_manifest(path)


class TestLedger:
    def test_last_verdict_wins(self, tmp_path):
        path = tmp_path / "ledger.txt"
        ingest.append_verdict(path, "a", "Accept", "r1", "t0")
        ingest.append_verdict(path, "a", "Skip", "r1", "t1")
        assert ingest.replay_ledger(path)["a"] == ingest.Status.SKIPPED

    def test_filter_is_terminal(self, tmp_path):
        path = tmp_path / "ledger.txt"
        ingest.append_verdict(path, "a", "Filter", "r1", "t0")
        with pytest.raises(ingest.IllegalTransition):
            ingest.append_verdict(path, "a", "Accept", "r1", "t1")

    def test_unknown_object(self, tmp_path):
        path = tmp_path / "ledger.txt"
        with pytest.raises(ingest.UnknownObject):
            ingest.append_verdict(path, "zzz", "Accept", "r1", "t0",
                                  known_ids={"a"})

    def test_replay_is_pure(self, tmp_path, rng):
        path = tmp_path / "ledger.txt"
        ids = [f"o{i}" for i in range(30)]
        for _ in range(100):
            oid = ids[rng.integers(len(ids))]
            verdict = ("Accept", "Skip", "Filter")[rng.integers(3)]
            try:
                ingest.append_verdict(path, oid, verdict, "r", "t")
            except ingest.IllegalTransition:
                pass
        assert ingest.replay_ledger(path) == ingest.replay_ledger(path)

    def test_append_only(self, tmp_path):
        path = tmp_path / "ledger.txt"
        ingest.append_verdict(path, "a", "Accept", "r1", "t0")
        before = path.read_text()
        ingest.append_verdict(path, "b", "Skip", "r1", "t1")
        assert path.read_text().startswith(before)

    def test_accept_fraction_749(self, tmp_path):
        path = tmp_path / "ledger.txt"
        with open(path, "w") as fh:
            for i in range(749):
                fh.write(f"t\tr\tobj{i:04d}\tAccept\n")
            for i in range(749, 819):
                fh.write(f"t\tr\tobj{i:04d}\tSkip\n")
            for i in range(819, 1000):
                fh.write(f"t\tr\tobj{i:04d}\tFilter\n")
        summary = ingest.ledger_summary(path)
        assert summary["accept_fraction"] == pytest.approx(0.749, abs=1e-12)
        assert (summary["accepted"] + summary["skipped"] + summary["filtered"]
                == summary["total"])
