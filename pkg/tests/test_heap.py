"""Heap semantics: bounds, pointer tracking, snapshots, digests."""

import pytest

from mirsim.heap import (
    NULL,
    GuestFault,
    HeapState,
    PtrVal,
    canonical_digest,
)


def test_alloc_gives_zeroed_object():
    h = HeapState()
    p = h.alloc(8)
    assert p.offset == 0
    assert h.load(p, 8) == 0
    assert h.load(PtrVal(p.obj, 4), 4) == 0


def test_alloc_zero_size_faults_on_access():
    h = HeapState()
    p = h.alloc(0)
    with pytest.raises(GuestFault) as err:
        h.load(p, 1)
    assert err.value.reason == "out-of-bounds"
    with pytest.raises(GuestFault):
        h.store(p, 1, 1)


def test_allocs_are_distinct():
    h = HeapState()
    assert h.alloc(8).obj != h.alloc(8).obj


def test_free_then_use_faults():
    h = HeapState()
    p = h.alloc(8)
    h.free(p)
    with pytest.raises(GuestFault) as err:
        h.load(p, 4)
    assert err.value.reason == "use-after-free"


def test_double_free_and_null_free():
    h = HeapState()
    p = h.alloc(8)
    h.free(p)
    with pytest.raises(GuestFault) as err:
        h.free(p)
    assert err.value.reason == "invalid-free"
    with pytest.raises(GuestFault) as err:
        h.free(NULL)
    assert err.value.reason == "invalid-free"
    q = h.alloc(8)
    with pytest.raises(GuestFault) as err:
        h.free(PtrVal(q.obj, 4))  # interior pointer
    assert err.value.reason == "invalid-free"


def test_scalar_store_load_round_trip():
    h = HeapState()
    p = h.alloc(8)
    h.store(p, 4, 7)
    assert h.load(p, 4) == 7


def test_out_of_bounds_load():
    h = HeapState()
    p = h.alloc(8)
    with pytest.raises(GuestFault) as err:
        h.load(PtrVal(p.obj, 6), 4)
    assert err.value.reason == "out-of-bounds"


def test_out_of_bounds_store_leaves_bytes_unchanged():
    h = HeapState()
    p = h.alloc(8)
    h.store(p, 8, 0x1122334455667788)
    with pytest.raises(GuestFault):
        h.store(PtrVal(p.obj, 8), 1, 1)
    with pytest.raises(GuestFault):
        h.store(PtrVal(p.obj, 5), 4, 1)
    assert h.load(p, 8) == 0x1122334455667788


def test_pointer_store_preserves_pointerness():
    h = HeapState()
    p = h.alloc(16)
    q = h.alloc(4)
    h.store(p, 8, q)
    got = h.load(p, 8)
    assert isinstance(got, PtrVal)
    assert got == q


def test_null_deref():
    h = HeapState()
    with pytest.raises(GuestFault) as err:
        h.load(NULL, 4)
    assert err.value.reason == "null-deref"


def test_scalar_store_clears_pointer_map():
    h = HeapState()
    p = h.alloc(16)
    q = h.alloc(4)
    h.store(p, 8, q)
    h.store(p, 8, 42)
    got = h.load(p, 8)
    assert got == 42 and not isinstance(got, PtrVal)


def test_partial_overwrite_clears_pointer_word():
    h = HeapState()
    p = h.alloc(16)
    q = h.alloc(4)
    h.store(p, 8, q)
    h.store(PtrVal(p.obj, 3), 1, 0xFF)
    got = h.load(p, 8)
    # the word is a scalar now; remaining pointer bytes read as zeros
    assert got == 0xFF << 24


def test_partial_read_of_pointer_word_faults():
    h = HeapState()
    p = h.alloc(16)
    q = h.alloc(4)
    h.store(p, 8, q)
    with pytest.raises(GuestFault) as err:
        h.load(PtrVal(p.obj, 4), 4)
    assert err.value.reason == "misaligned-pointer-read"
    with pytest.raises(GuestFault):
        h.load(PtrVal(p.obj, 4), 8)  # width-8 partial overlap


def test_misaligned_pointer_store_faults():
    h = HeapState()
    p = h.alloc(16)
    q = h.alloc(4)
    with pytest.raises(GuestFault) as err:
        h.store(PtrVal(p.obj, 4), 8, q)
    assert err.value.reason == "misaligned-pointer-write"


# -- snapshots --------------------------------------------------------------


def test_snapshot_immutable_under_mutation():
    h = HeapState()
    root = h.alloc(8)
    h.store(root, 4, 1)
    s = h.snapshot(root)
    d = canonical_digest(s)
    h.store(root, 4, 999)
    assert canonical_digest(s) == d
    assert s.load(root, 4) == 1


def test_snapshot_without_mutation_shares_everything():
    h = HeapState()
    root = h.alloc(8)
    s1 = h.snapshot(root)
    s2 = h.snapshot(root)
    assert all(s1.objects[k] is s2.objects[k] for k in s1.objects)


def test_version_sharing_bound():
    # 100 snapshots of a 50-object heap mutating one object per step must
    # store at most 50 + 100 versions, not 50 x 100.
    h = HeapState()
    root = h.alloc(50 * 8)
    objs = []
    for i in range(50):
        p = h.alloc(8)
        objs.append(p)
        h.store(PtrVal(root.obj, 8 * i), 8, p)
    snaps = [h.snapshot(root)]
    for step in range(100):
        h.store(objs[step % 50], 4, step + 1)
        snaps.append(h.snapshot(root))
    versions = {id(v) for s in snaps for v in s.objects.values()}
    assert len(versions) <= 50 + 100 + 2  # +2: the root object's own churn
    naive = 51 * len(snaps)
    assert len(versions) < naive


def test_cow_exact_version_count():
    # after a snapshot, mutating k distinct objects creates exactly k new versions
    h = HeapState()
    root = h.alloc(8)
    objs = [h.alloc(8) for _ in range(10)]
    s1 = h.snapshot(root)
    for p in objs[:3]:
        h.store(p, 4, 7)
        h.store(p, 4, 8)  # second store to the same object: still one version
    s2 = h.snapshot(root)
    changed = [oid for oid in s1.objects if s1.objects[oid] is not s2.objects[oid]]
    assert len(changed) == 3


def test_restore_round_trip():
    h = HeapState()
    root = h.alloc(16)
    child = h.alloc(8)
    h.store(root, 8, child)
    h.store(PtrVal(root.obj, 8), 4, 5)
    s = h.snapshot(root)
    r = HeapState.restore(s)
    assert canonical_digest(r.snapshot(root)) == canonical_digest(s)


def test_restore_mutate_restore():
    h = HeapState()
    root = h.alloc(8)
    h.store(root, 4, 1)
    s = h.snapshot(root)
    r = HeapState.restore(s)
    r.store(root, 4, 2)
    r2 = HeapState.restore(s)
    assert r2.load(root, 4) == 1


def test_restore_alloc_counter_never_collides():
    h = HeapState()
    root = h.alloc(8)
    a = h.alloc(8)
    s = h.snapshot(root)
    r = HeapState.restore(s)
    fresh = r.alloc(8)
    assert fresh.obj not in s.objects


# -- canonical digests ----------------------------------------------------------


def _two_object_shape(order_swapped: bool):
    """root -> (a, b); a holds 17, b holds 23; allocation order varies."""
    h = HeapState()
    root = h.alloc(16)
    if order_swapped:
        b = h.alloc(8)
        a = h.alloc(8)
    else:
        a = h.alloc(8)
        b = h.alloc(8)
    h.store(a, 4, 17)
    h.store(b, 4, 23)
    h.store(root, 8, a)
    h.store(PtrVal(root.obj, 8), 8, b)
    return h.snapshot(root)


def test_digest_invariant_under_allocation_order():
    assert canonical_digest(_two_object_shape(False)) == canonical_digest(
        _two_object_shape(True)
    )


def test_digest_changes_on_byte_flip():
    h = HeapState()
    root = h.alloc(8)
    h.store(root, 4, 1)
    d1 = canonical_digest(h.snapshot(root))
    h.store(root, 4, 2)
    d2 = canonical_digest(h.snapshot(root))
    assert d1 != d2


def test_digest_ignores_unreachable_objects():
    h = HeapState()
    root = h.alloc(8)
    d1 = canonical_digest(h.snapshot(root))
    h.alloc(64)  # never referenced from root
    d2 = canonical_digest(h.snapshot(root))
    assert d1 == d2


def test_digest_distinguishes_dangling_structure():
    # two pointers to the same freed object vs two different freed objects
    def build(same: bool):
        h = HeapState()
        root = h.alloc(16)
        a = h.alloc(8)
        b = a if same else h.alloc(8)
        h.store(root, 8, a)
        h.store(PtrVal(root.obj, 8), 8, b)
        h.free(a)
        if not same and b.obj != a.obj:
            h.free(b)
        return canonical_digest(h.snapshot(root))

    assert build(True) != build(False)


def test_dangling_pointer_digest_is_canonical():
    # digests must not depend on the raw ids of freed objects
    def build(extra_allocs: int):
        h = HeapState()
        for _ in range(extra_allocs):
            h.alloc(1)  # shift raw id numbering
        root = h.alloc(16)
        a = h.alloc(8)
        h.store(root, 8, a)
        h.free(a)
        return canonical_digest(h.snapshot(root))

    assert build(0) == build(5)
