import numpy as np
import pytest
from hypothesis import given, strategies as st

from iochain.btree import compile_lookup
from iochain.sfunc import Instruction, Op, Program, VerifierRejected
from iochain.xcache import (Extent, ExtentCache, ExtentMap, Invalid, NvmeExtentLayer, Single,
                            Split, schedule_invalidations, translate)

B = 512


def test_extent_validation():
    with pytest.raises(ValueError):
        ExtentMap([Extent(0, 0, 100)])
    with pytest.raises(ValueError):
        ExtentMap([Extent(0, 0, 1024), Extent(512, 10, 512)])
    with pytest.raises(ValueError):
        ExtentMap([Extent(0, 0, 1024), Extent(1024, 1, 512)])


def test_adjacent_extents_translate_to_one_run():
    m = ExtentMap([Extent(0, 10, 1024), Extent(1024, 12, 1024)])
    assert m.pieces(512, 1024) == [(11, 1024)]
    assert translate(ExtentCache(3, m), 512, 1024) == Single(11)


def test_split_and_invalid():
    m = ExtentMap([Extent(0, 0, 1024), Extent(1024, 50, 1024)])
    cache = ExtentCache(3, m)
    assert translate(cache, 512, 1024) == Split(((1, 512), (50, 512)))
    assert translate(cache, 2048, 512) == Invalid("offset out of file bounds")
    holey = ExtentCache(4, ExtentMap([Extent(0, 0, 512), Extent(1024, 9, 512)]))
    assert translate(holey, 512, 512) == Invalid("unmapped")
    cache.valid = False
    assert isinstance(translate(cache, 0, 512), Invalid)


def test_scattered_boundaries_avoid_page_alignment():
    m = ExtentMap.scattered(64 * 4096, 5, avoid_align=4096)
    assert len(m.extents) == 5 and not m.holes
    assert all(e.file_off % 4096 for e in m.extents[1:])
    disk = sorted((e.pba, e.pba + e.nblocks) for e in m.extents)
    assert all(a[1] < b[0] for a, b in zip(disk, disk[1:]))


@st.composite
def extent_maps(draw):
    lens = draw(st.lists(st.integers(1, 6), min_size=1, max_size=8))
    gaps = draw(st.lists(st.integers(0, 4), min_size=len(lens), max_size=len(lens)))
    holes = draw(st.lists(st.integers(0, 2), min_size=len(lens), max_size=len(lens)))
    order = draw(st.permutations(range(len(lens))))
    exts, foff = [], 0
    pbas = {}
    pba = 0
    for i in order:
        pbas[i] = pba + gaps[i]
        pba = pbas[i] + lens[i]
    for i, n in enumerate(lens):
        foff += holes[i] * B
        exts.append(Extent(foff, pbas[i], n * B))
        foff += n * B
    return ExtentMap(exts, foff + draw(st.integers(0, 2)) * B)


@given(extent_maps(), st.data())
def test_pieces_match_block_table(m, data):
    table = m.block_table()
    nblocks = m.file_len // B
    first = data.draw(st.integers(0, nblocks))
    count = data.draw(st.integers(1, 6))
    if first + count > nblocks:
        with pytest.raises(IndexError):
            m.pieces(first * B, count * B)
        return
    want = table[first:first + count]
    if (want < 0).any():
        with pytest.raises(LookupError):
            m.pieces(first * B, count * B)
        assert isinstance(translate(ExtentCache(3, m), first * B, count * B), Invalid)
        return
    runs = m.pieces(first * B, count * B)
    flat = np.concatenate([np.arange(p, p + n // B) for p, n in runs])
    assert (flat == want).all()
    # Runs are maximal: consecutive runs are never physically adjacent.
    assert all(a[0] + a[1] // B != b[0] for a, b in zip(runs, runs[1:]))
    tr = translate(ExtentCache(3, m), first * B, count * B)
    assert tr == (Single(runs[0][0]) if len(runs) == 1 else Split(tuple(runs)))


def test_install_and_generations():
    layer = NvmeExtentLayer()
    m = ExtentMap.single(0, 4096)
    prog = compile_lookup(1)
    h1 = layer.install(3, m, prog)
    assert h1.generation == 1 and layer.is_current(3, 1)
    chain = object()
    layer.track(3, chain)
    assert layer.invalidate(3, now_ns=77) == 1
    assert not layer.is_current(3, 1)
    assert layer.invalidate(3) == 0  # already invalid
    h2 = layer.install(3, m, prog)
    assert h2.generation == 2 and layer.is_current(3, 2) and not layer.is_current(3, 1)
    assert set(layer.cache(3).history) == {1, 2}
    assert layer.invalidations == [(77, 3, 1)]


def test_install_rejections():
    layer = NvmeExtentLayer()
    with pytest.raises(VerifierRejected):
        layer.install(3, ExtentMap.single(0, 512), Program((Instruction(Op.MOVI, 0),)))
    holey = ExtentMap([Extent(0, 0, 512), Extent(1024, 5, 512)])
    with pytest.raises(ValueError):
        layer.install(3, holey, compile_lookup(1))
    with pytest.raises(ValueError):
        layer.install(3, ExtentMap.single(0, 512), compile_lookup(1), files_of_program={3, 4})


def test_invalidation_schedule():
    a = schedule_invalidations(1e-3, 1.0, seed=5)
    assert a == schedule_invalidations(1e-3, 1.0, seed=5)
    assert a != schedule_invalidations(1e-3, 1.0, seed=6)
    assert all(x < y for x, y in zip(a, a[1:])) and a[-1] < 1e9
    assert 850 < len(a) < 1150
    assert schedule_invalidations(float("inf"), 1.0) == []
    with pytest.raises(ValueError):
        schedule_invalidations(0, 1.0)
