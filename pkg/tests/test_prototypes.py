import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from seqmatch.errors import DimensionError, UsageError
from seqmatch.numerics import ParamStore
from seqmatch.prototypes import ClassCorpus, class_text_embedding, enhance, init_merge, merge_prototype, merge_shots

from oracles import np_block

finite = st.floats(-10, 10, allow_nan=False)


def store(D=4, seed=0, std=0.3):
    s = ParamStore()
    init_merge(s, D, np.random.default_rng(seed), std=std)
    return s


def test_enhance_examples():
    f = np.random.default_rng(0).normal(size=(3, 2))
    assert np.array_equal(enhance(f, np.zeros(2)).data, f)
    assert np.array_equal(enhance(np.zeros((3, 2)), [3.0, 4.0]).data, np.tile([3.0, 4.0], (3, 1)))
    assert np.array_equal(enhance([[1.0, 2.0]], [3.0, 4.0]).data, [[4.0, 6.0]])
    with pytest.raises(DimensionError):
        enhance(f, np.zeros(3))


@given(hnp.arrays(np.float64, (3, 2), elements=finite), hnp.arrays(np.float64, (3, 2), elements=finite),
       hnp.arrays(np.float64, 2, elements=finite), hnp.arrays(np.float64, 2, elements=finite))
def test_enhance_is_linear(a, b, s, t):
    assert np.allclose(enhance(a + b, s + t).data, enhance(a, s).data + enhance(b, t).data)


def test_merge_residual_identity_and_idempotence():
    s = store()
    for name in ("merge.attn.o", "merge.mlp.w2", "merge.mlp.b2"):
        s.set_array(name, np.zeros_like(s[name].data))
    shot = np.random.default_rng(1).normal(size=(5, 4))
    p = merge_prototype([shot], s)
    assert np.array_equal(p.frame_sequence, shot)
    s2 = store()
    assert np.array_equal(merge_prototype([shot], s2).frame_sequence, merge_prototype([shot, shot], s2).frame_sequence)


def test_merge_matches_oracle_and_is_shot_order_invariant():
    s = store(seed=3)
    shots = np.random.default_rng(2).normal(size=(3, 5, 4))
    p = merge_prototype(list(shots), s, class_id=2)
    assert p.class_id == 2
    assert np.allclose(p.frame_sequence, np_block(shots.mean(axis=0), s.arrays(), "merge"), atol=1e-13)
    assert np.allclose(merge_prototype(list(shots[::-1]), s).frame_sequence, p.frame_sequence, atol=1e-14)
    assert np.allclose(p.pooled, p.frame_sequence.mean(axis=0), atol=1e-15)


def test_batched_merge():
    s = store(seed=4)
    shots = np.random.default_rng(3).normal(size=(2, 3, 5, 4))
    out = merge_shots(shots, s).data
    for c in range(2):
        assert np.allclose(out[c], merge_prototype(list(shots[c]), s).frame_sequence)


def test_merge_errors():
    with pytest.raises(UsageError):
        merge_prototype([], store())
    with pytest.raises(DimensionError):
        merge_shots(np.zeros((4, 4)), store())


def test_corpus_and_text_embedding():
    with pytest.raises(UsageError):
        ClassCorpus("x", [])
    with pytest.raises(UsageError):
        ClassCorpus("x", [], [np.nan, 1.0])
    c = ClassCorpus("jump", ["a person", "jumps high"])
    assert c.sentence == "a person jumps high"
    assert np.array_equal(class_text_embedding([[1.0, 2.0], [3.0, 6.0]]), [2.0, 4.0])
    assert np.array_equal(class_text_embedding([1.0, 2.0]), [1.0, 2.0])
