import math

import pytest

from skysim.catalog import (
    FB,
    Catalog,
    CatalogError,
    Consistency,
    Mode,
    NoSuchObject,
    ObjectLost,
    ReplicaStatus,
)


class Recorder:
    def __init__(self):
        self.log = []

    def replica_started(self, rep, t):
        self.log.append(("start", rep.region, t))

    def replica_touched(self, rep, t):
        self.log.append(("touch", rep.region, t))

    def replica_ended(self, rep, t, reason):
        self.log.append(("end", rep.region, t, reason))


def test_mode_parse():
    assert Mode.parse("fb") == FB
    assert Mode.parse("fp:3") == Mode(False, 3)
    assert Mode.parse("fp").min_copies == 1
    assert str(Mode(False, 2)) == "fp:2"
    with pytest.raises(ValueError):
        Mode.parse("xx")
    with pytest.raises(ValueError):
        Mode(False, 0)


def test_first_put_is_base_in_fb():
    cat = Catalog(FB)
    ver = cat.put("b", "k", 10, "A", 0.0)
    (rep,) = ver.replicas
    assert ver.id == 1 and rep.is_base and rep.region == "A" and rep.live
    assert rep.deadline == math.inf


def test_versioned_second_put_keeps_old_replicas():
    cat = Catalog(FB)
    v1 = cat.put("b", "k", 10, "A", 0.0)
    v2 = cat.put("b", "k", 20, "B", 1.0)
    assert v2.id == 2 and v2.replicas[0].region == "B" and not v2.replicas[0].is_base
    assert v1.replicas[0].live


def test_last_writer_wins_retires_old_replicas():
    rec = Recorder()
    cat = Catalog(FB, versioning=False, listener=rec)
    v1 = cat.put("b", "k", 10, "A", 0.0)
    cat.admit_replica(v1, "C", 1.0, 100.0, "A")
    v2 = cat.put("b", "k", 20, "B", 2.0)
    assert all(r.status == ReplicaStatus.EVICTED for r in v1.replicas)
    # a pinned copy of the new version follows the object to its base
    assert sorted(r.region for r in v2.live_replicas()) == ["A", "B"]
    assert v2.replica_at("A").is_base and v2.replica_at("A").source == "B"
    assert ("end", "C", 2.0, "overwritten") in rec.log


def test_locate_local_remote_and_tie(pricing3):
    cat = Catalog(Mode(False, 1), pricing3)
    v = cat.put("b", "k", 10, "A", 0.0)
    cat.admit_replica(v, "B", 0.0, math.inf, "A")
    plan = cat.locate("b", "k", "A")
    assert plan.hit and plan.source is None
    plan = cat.locate("b", "k", "C", pricing=pricing3)
    assert not plan.hit and plan.source == "B"  # 0.02 from B beats 0.05 from A
    with pytest.raises(NoSuchObject):
        cat.locate("b", "nope", "A")


def test_locate_tie_broken_by_region_id():
    cat = Catalog(Mode(False, 1))
    v = cat.put("b", "k", 10, "Z", 0.0)
    cat.admit_replica(v, "M", 0.0, math.inf, "Z")
    assert cat.locate("b", "k", "Q").source == "M"


def test_eventual_consistency_serves_stale_local_copy():
    cat = Catalog(FB)
    v1 = cat.put("b", "k", 10, "A", 0.0)
    cat.admit_replica(v1, "B", 1.0, math.inf, "A")
    cat.put("b", "k", 10, "A", 2.0)
    raw = cat.locate("b", "k", "B", Consistency.READ_AFTER_WRITE)
    assert not raw.hit and raw.version.id == 2
    ev = cat.locate("b", "k", "B", Consistency.EVENTUAL)
    assert ev.hit and ev.version.id == 1


def test_admit_is_idempotent_and_keeps_ttl():
    cat = Catalog(FB)
    v = cat.put("b", "k", 10, "A", 0.0)
    r1 = cat.admit_replica(v, "B", 1.0, 123.0, "A")
    r2 = cat.admit_replica(v, "B", 2.0, 456.0, "A")
    assert r1 is r2 and r1.ttl == 123.0
    assert cat.admit_replica(v, "A", 3.0, 5.0) is v.replicas[0]


def test_touch_resets_clock_and_status_never_regresses():
    cat = Catalog(FB)
    v = cat.put("b", "k", 10, "A", 0.0)
    rep = cat.admit_replica(v, "B", 1.0, 10.0, "A")
    cat.touch(rep, 5.0)
    assert rep.last_access == 5.0 and rep.deadline == 15.0
    cat.evict_scan(100.0)
    assert rep.status == ReplicaStatus.EVICTED
    with pytest.raises(CatalogError):
        rep._advance(ReplicaStatus.COMMITTED)
    with pytest.raises(CatalogError):
        cat.touch(rep, 200.0)


def test_fb_base_is_never_evicted():
    cat = Catalog(FB)
    v = cat.put("b", "k", 10, "A", 0.0)
    assert cat.evict_scan(1e12) == []
    assert v.replicas[0].live


def test_fp_sole_replica_is_protected(pricing2):
    cat = Catalog(Mode(False, 1), pricing2)
    v = cat.put("b", "k", 10, "A", 0.0, ttl=5.0)
    assert cat.evict_scan(100.0) == []
    assert v.replicas[0].live and v.replicas[0].protected


def test_fp_two_expired_keep_cheaper_storage(pricing3):
    cat = Catalog(Mode(False, 1), pricing3)
    v = cat.put("b", "k", 10, "A", 0.0, ttl=5.0)
    cat.admit_replica(v, "C", 0.0, 5.0, "A")
    ev = cat.evict_scan(100.0)
    assert [e.replica.region for e in ev] == ["A"]
    assert v.replica_at("C").protected  # C stores at 0.023 < 0.026


def test_exact_scan_backdates_eviction():
    cat = Catalog(FB)
    v = cat.put("b", "k", 10, "A", 0.0)
    cat.admit_replica(v, "B", 1.0, 10.0, "A")
    (e,) = cat.evict_scan(50.0)
    assert e.at == 11.0
    v2 = cat.put("b", "k2", 10, "A", 0.0)
    cat.admit_replica(v2, "B", 1.0, 10.0, "A")
    (e,) = cat.evict_scan(50.0, exact=False)
    assert e.at == 50.0


def test_expiry_is_strict():
    cat = Catalog(FB)
    v = cat.put("b", "k", 10, "A", 0.0)
    cat.admit_replica(v, "B", 0.0, 10.0, "A")
    assert cat.evict_scan(10.0) == []
    assert len(cat.evict_scan(10.5)) == 1


def test_delete_ends_everything():
    rec = Recorder()
    cat = Catalog(FB, listener=rec)
    v = cat.put("b", "k", 10, "A", 0.0)
    cat.admit_replica(v, "B", 1.0, 10.0, "A")
    ended = cat.delete("b", "k", 3.0)
    assert len(ended) == 2 and cat.get("b", "k") is None
    assert cat.delete("b", "k", 4.0) == []


def test_object_lost():
    cat = Catalog(Mode(False, 1))
    v = cat.put("b", "k", 10, "A", 0.0)
    cat._end(v.replicas[0], 1.0, "test")
    with pytest.raises(ObjectLost):
        cat.locate("b", "k", "B")


def test_unknown_region_and_bucket(pricing2):
    cat = Catalog(FB, pricing2, auto_create_buckets=False)
    with pytest.raises(CatalogError):
        cat.put("b", "k", 1, "A", 0.0)
    cat.create_bucket("b")
    with pytest.raises(CatalogError):
        cat.put("b", "k", 1, "Z", 0.0)


def test_snapshot_lines_are_json():
    import json

    cat = Catalog(FB)
    cat.put("b", "k", 10, "A", 0.0)
    (line,) = list(cat.snapshot_lines())
    doc = json.loads(line)
    assert doc["versions"][0]["replicas"][0]["is_base"] is True
