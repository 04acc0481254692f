import pytest
from hypothesis import given, strategies as st

from iochain.btree import (BTreePage, CorruptPage, KIND_INTERNAL, KIND_LEAF, TreeImage, build,
                           compile_lookup, demo_keys, full_tree, lookup_user, max_internal_keys,
                           max_leaf_pairs, trace_user)
from iochain.sfunc import Drop, Resubmit, Return, execute, verify


def walk(image, key):
    """Drive the compiled lookup by hand, one page per call."""
    prog = compile_lookup(key, image.page_size, image.fanout)
    off, pages = image.root_offset, []
    while True:
        pages.append(off)
        action, _ = execute(prog, image.data[off:off + image.page_size])
        if isinstance(action, Resubmit):
            off = action.file_offset
            continue
        return action, pages


def test_page_capacity():
    assert max_internal_keys(512) == 30
    assert max_leaf_pairs(512) == 31


def test_page_roundtrip_and_corruption():
    leaf = BTreePage(KIND_LEAF, 0, (1, 5), values=(10, 50))
    node = BTreePage(KIND_INTERNAL, 1, (7,), children=(512, 1024))
    for p in (leaf, node):
        raw = p.pack()
        assert len(raw) == 512 and BTreePage.unpack(raw) == p
    raw = bytearray(leaf.pack())
    raw[0] ^= 1
    with pytest.raises(CorruptPage):
        BTreePage.unpack(bytes(raw))
    with pytest.raises(ValueError):
        BTreePage(KIND_LEAF, 0, tuple(range(40)), values=tuple(range(40))).pack()


@pytest.mark.parametrize("depth,pages", [(1, 1), (2, 32), (3, 993)])
def test_full_tree_shapes(depth, pages):
    img = full_tree(depth)
    assert img.depth == depth and img.pages == pages and img.key_count == 31 ** depth


def test_shallowest_depth_chosen():
    keys, vals = demo_keys(31)
    assert build(keys, vals).depth == 1
    keys, vals = demo_keys(32)
    assert build(keys, vals).depth == 2


def test_infeasible_shapes():
    keys, vals = demo_keys(40)
    with pytest.raises(ValueError):
        build(keys, vals, depth=1)
    with pytest.raises(ValueError):
        build(keys[:3], vals[:3], depth=4)  # needs at least 8 leaves
    with pytest.raises(ValueError):
        build([2, 1], [0, 0])
    with pytest.raises(ValueError):
        build(keys, vals, fanout=40)


def test_save_load(tmp_path):
    img = full_tree(2)
    img.save(tmp_path / "t.btx")
    back = TreeImage.load(tmp_path / "t.btx")
    assert back == img
    (tmp_path / "bad.btx").write_bytes(b"x" * 100)
    with pytest.raises(CorruptPage):
        TreeImage.load(tmp_path / "bad.btx")


def test_compiled_lookup_is_verified_and_forward_only():
    for ps in (512, 4096):
        prog = compile_lookup(12345, ps, 31)
        assert verify(prog) is None


@given(st.integers(2, 400), st.integers(2, 31), st.integers(0, 5), st.data())
def test_lookup_matches_dict(n, fanout, extra_depth, data):
    keys, vals = demo_keys(n)
    try:
        img = build(keys, vals, fanout=fanout)
        if extra_depth:
            img = build(keys, vals, depth=img.depth + extra_depth, fanout=fanout)
    except ValueError:
        return  # too few keys for the requested depth
    table = dict(zip(keys, vals))
    for _ in range(20):
        k = data.draw(st.integers(0, 2 * n + 2))
        v, pages = lookup_user(img, k)
        assert v == table.get(k)
        assert pages == img.depth
        action, path = walk(img, k)
        assert path == trace_user(img, k)
        assert action == Return(b"" if v is None else v.to_bytes(8, "little"))


def test_bad_pages_drop():
    prog = compile_lookup(1)
    assert execute(prog, bytes(512))[0] == Drop()
    bad_kind = bytearray(BTreePage(KIND_LEAF, 0, (1,), values=(2,)).pack())
    bad_kind[2] = 7
    assert execute(prog, bytes(bad_kind))[0] == Drop()
