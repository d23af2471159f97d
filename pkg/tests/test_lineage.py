import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrpath.errors import (
    CorpusExhausted,
    DanglingReference,
    DuplicateId,
    MissingCheckpoint,
    SchemaMismatch,
)
from lrpath.lineage import (
    CheckpointRecord,
    Manifest,
    allocate_segments,
    derive_seed,
    load_manifest,
    load_payload,
    manifest_from_dict,
    manifest_to_dict,
    record_checkpoint,
    resolve_init,
    save_manifest,
    save_payload,
)
from lrpath.paradigm import Paradigm, build_plan, uniform_spec
from lrpath.schedule import ScheduleConfig, ScheduleKind

BASE = ScheduleConfig(ScheduleKind.COSINE, 3e-4, 3e-5, 100, 1000)


class TestDeriveSeed:
    def test_deterministic(self):
        assert derive_seed(7, "batches:v1") == derive_seed(7, "batches:v1")

    def test_distinct_names(self):
        names = [f"phase-{i}" for i in range(100)]
        seeds = {derive_seed(42, n) for n in names}
        assert len(seeds) == 100

    def test_distinct_base(self):
        assert derive_seed(1, "x") != derive_seed(2, "x")

    def test_range(self):
        s = derive_seed(123456789, "anything")
        assert 0 <= s < 2**64


class TestAllocateSegments:
    def test_uniform_disjoint(self):
        spec = uniform_spec(3, 1000, BASE)
        segs = allocate_segments(spec, corpus_size=300_000, tokens_per_step=64)
        assert len(segs) == 3
        assert segs[0].start_offset == 0
        assert segs[0].length == 64_000
        assert segs[1].start_offset == 64_000
        assert [s.segment_id for s in segs] == ["inc1/full", "inc2/full", "inc3/full"]

    def test_alpha_split(self):
        spec = uniform_spec(2, 1000, BASE)
        segs = allocate_segments(spec, 200_000, 64, alpha=0.6)
        ids = [s.segment_id for s in segs]
        assert ids == ["inc1/prefix", "inc1/remainder", "inc2/prefix", "inc2/remainder"]
        # prefix covers ceil(0.4*1000)=400 steps, remainder the other 600
        assert segs[0].length == 400 * 64
        assert segs[1].length == 600 * 64
        assert segs[1].start_offset == segs[0].start_offset + segs[0].length

    def test_start_offset(self):
        spec = uniform_spec(1, 10, BASE.replace(warmup_steps=2))
        (seg,) = allocate_segments(spec, 10_000, 64, start_offset=5000)
        assert seg.start_offset == 5000

    def test_exhaustion(self):
        spec = uniform_spec(2, 1000, BASE)
        with pytest.raises(CorpusExhausted):
            allocate_segments(spec, corpus_size=100_000, tokens_per_step=64)

    @given(
        st.integers(1, 6),
        st.integers(10, 500),
        st.integers(1, 64),
        st.one_of(st.none(), st.sampled_from([0.25, 0.5, 0.75, 1.0])),
    )
    @settings(max_examples=50, deadline=None)
    def test_disjoint_and_complete(self, n, t, tps, alpha):
        spec = uniform_spec(n, t, BASE.replace(warmup_steps=min(5, t - 1)))
        segs = allocate_segments(spec, n * t * tps, tps, alpha=alpha)
        covered = []
        for s in segs:
            covered.append((s.start_offset, s.start_offset + s.length))
        covered.sort()
        # contiguous, disjoint, covering exactly n*t*tps tokens
        assert covered[0][0] == 0
        for (a0, a1), (b0, _) in zip(covered, covered[1:]):
            assert a1 == b0
        assert covered[-1][1] == n * t * tps


class TestRecords:
    def manifest(self):
        spec = uniform_spec(2, 100, BASE.replace(warmup_steps=10))
        return Manifest(spec=spec, records=[], segments=[])

    def rec(self, ckpt_id, parent=None):
        return CheckpointRecord(
            ckpt_id=ckpt_id,
            phase_id=ckpt_id.split("#")[0],
            version=1,
            path="main",
            parent=parent,
            global_step=100,
            metrics={"ppl": 42.0},
            payload_file=f"ckpt/{ckpt_id.replace('#', '_')}.bin",
        )

    def test_record_and_resolve(self):
        m = self.manifest()
        record_checkpoint(m, self.rec("v1-main#final"))
        record_checkpoint(m, self.rec("v1-branch#final", parent="v1-main#final"))
        plan = build_plan(Paradigm.path_switch(0.5), m.spec)
        branch = plan.phase("v1-branch")
        found = resolve_init(m, branch)
        assert found is not None and found.ckpt_id == "v1-main#final"

    def test_duplicate(self):
        m = self.manifest()
        record_checkpoint(m, self.rec("a#final"))
        with pytest.raises(DuplicateId):
            record_checkpoint(m, self.rec("a#final"))

    def test_dangling_parent(self):
        m = self.manifest()
        with pytest.raises(DanglingReference):
            record_checkpoint(m, self.rec("b#final", parent="missing#final"))

    def test_missing_checkpoint(self):
        m = self.manifest()
        plan = build_plan(Paradigm.path_switch(0.5), m.spec)
        with pytest.raises(MissingCheckpoint):
            resolve_init(m, plan.phase("v1-branch"))

    def test_fresh_init_resolves_none(self):
        m = self.manifest()
        plan = build_plan(Paradigm.ptfs(), m.spec)
        assert resolve_init(m, plan.phase("v1-scratch")) is None


def random_manifest(rng):
    n = int(rng.integers(1, 5))
    t = int(rng.integers(20, 2000))
    warm = int(rng.integers(1, min(t, 50)))
    kinds = list(ScheduleKind)
    kind = kinds[int(rng.integers(len(kinds)))]
    schedule = ScheduleConfig(
        kind,
        float(rng.uniform(1e-5, 1e-2)),
        float(rng.uniform(1e-7, 1e-5)),
        warm,
        t,
    )
    spec = uniform_spec(n, t, schedule, seed=int(rng.integers(0, 2**32)))
    segs = allocate_segments(spec, n * t * 64, 64)
    m = Manifest(spec=spec, records=[], segments=list(segs))
    prev = None
    for i in range(int(rng.integers(0, 6))):
        rec = CheckpointRecord(
            ckpt_id=f"p{i}#final",
            phase_id=f"p{i}",
            version=i + 1,
            path=str(rng.choice(["main", "branch", "scratch"])),
            parent=prev,
            global_step=int(rng.integers(0, 10**6)),
            metrics={"ppl": float(rng.uniform(1, 500)), "nll": float(rng.uniform(0, 7))},
            payload_file=f"ckpt/p{i}.bin",
        )
        record_checkpoint(m, rec)
        prev = rec.ckpt_id
    return m


class TestManifestSerialization:
    def test_round_trip_byte_stable(self, tmp_path):
        rng = np.random.default_rng(2024)
        for i in range(100):
            m = random_manifest(rng)
            path = tmp_path / f"m{i}.json"
            save_manifest(m, path)
            first = path.read_bytes()
            again = load_manifest(path)
            save_manifest(again, path)
            assert path.read_bytes() == first

    def test_dict_round_trip_equality(self):
        rng = np.random.default_rng(7)
        m = random_manifest(rng)
        assert manifest_from_dict(manifest_to_dict(m)) == m

    def test_schema_version_mismatch(self):
        rng = np.random.default_rng(8)
        doc = manifest_to_dict(random_manifest(rng))
        doc["format_version"] = 99
        with pytest.raises(SchemaMismatch):
            manifest_from_dict(doc)

    def test_missing_field(self):
        rng = np.random.default_rng(9)
        doc = manifest_to_dict(random_manifest(rng))
        del doc["segments"]
        with pytest.raises(SchemaMismatch):
            manifest_from_dict(doc)

    def test_json_is_sorted(self, tmp_path):
        rng = np.random.default_rng(10)
        m = random_manifest(rng)
        path = tmp_path / "m.json"
        save_manifest(m, path)
        doc = json.loads(path.read_text())
        assert list(doc) == sorted(doc)


class TestPayload:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        params = rng.normal(size=1234)
        path = tmp_path / "c.bin"
        save_payload(path, params, seed=99, step=500)
        loaded, seed, step = load_payload(path)
        assert seed == 99 and step == 500
        np.testing.assert_array_equal(loaded, params)

    def test_truncated(self, tmp_path):
        rng = np.random.default_rng(1)
        path = tmp_path / "c.bin"
        save_payload(path, rng.normal(size=100), seed=1, step=2)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 8])
        with pytest.raises(SchemaMismatch):
            load_payload(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "c.bin"
        save_payload(path, np.zeros(10), seed=0, step=0)
        raw = bytearray(path.read_bytes())
        raw[0] = ord("X")
        path.write_bytes(bytes(raw))
        with pytest.raises(SchemaMismatch):
            load_payload(path)
