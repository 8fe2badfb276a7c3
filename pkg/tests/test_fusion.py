import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import associate_oracle, iou, voxel_keys
from ranger_nav.fusion import (AssociationParams, ObjectStore, SemanticObject, associate,
                               association_score, filter_confident_points, fuse,
                               query_goal_objects)
from ranger_nav.geometry import PointCloud, Pose
from ranger_nav.perception import Detection, Observation

P = AssociationParams()


def pc(pts, conf=None):
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    return PointCloud(pts, np.full(len(pts), 5.0) if conf is None else conf)


def cells_cloud(keys, voxel=0.1):
    """One point at the centre of each voxel key."""
    return pc([[(i + 0.5) * voxel, (j + 0.5) * voxel, (k + 0.5) * voxel] for i, j, k in keys])


def e(i, dim=4):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def test_filter_confident_points():
    pts = np.arange(9.0).reshape(3, 3)
    det = Detection("chair", [0, 1, 2], 0.9, e(0))
    obs = Observation(pc(pts, np.array([1.5, 2.5, 3.0])), Pose(0, 0, 0), (det,))
    out = filter_confident_points(obs, det, 1.9, scale=2.0)
    assert len(out) == 2 and np.array_equal(out.points, pts[1:] * 2.0)
    assert len(filter_confident_points(Observation(pc(pts, np.full(3, 11.0)), Pose(0, 0, 0), ()),
                                       det)) == 3
    assert len(filter_confident_points(Observation(pc(pts, np.ones(3)), Pose(0, 0, 0), ()), det)) == 0


def test_association_score_examples():
    a = SemanticObject.create(0, cells_cloud([(0, 0, 0), (1, 0, 0)]), e(0), "bed", 0.1)
    assert association_score(a, cells_cloud([(0, 0, 0), (1, 0, 0)]), e(0), P) == pytest.approx(1.0)
    assert association_score(a, cells_cloud([(5, 5, 5)]), e(1), P) == pytest.approx(0.25)
    # two of four voxels shared -> IoU 1/3... here {0,1} vs {1,2}: 1/3
    assert association_score(a, cells_cloud([(1, 0, 0), (2, 0, 0)]), e(0), P) == pytest.approx(2 / 3)


def test_associate_examples():
    assert associate([], cells_cloud([(0, 0, 0)]), e(0), "bed", P) is None
    a = SemanticObject.create(3, cells_cloud([(0, 0, 0)]), e(0), "bed", 0.1)
    assert associate([a], cells_cloud([(0, 0, 0)]), e(0), "bed", P) == 3
    # 0.7 versus 0.6: S_vis 1 with IoU 2/5 versus IoU 1/5
    b = SemanticObject.create(1, cells_cloud([(i, 0, 0) for i in range(5)]), e(0), "bed", 0.1)
    c = SemanticObject.create(2, cells_cloud([(i, 0, 0) for i in (1, 5, 6, 7)]), e(0), "bed", 0.1)
    new = cells_cloud([(0, 0, 0), (1, 0, 0)])
    assert association_score(b, new, e(0), P) == pytest.approx(0.7)
    assert association_score(c, new, e(0), P) == pytest.approx(0.6)
    assert associate([c, b], new, e(0), "bed", P) == 1


def test_tau_boundary_associates():
    a = SemanticObject.create(0, cells_cloud([(0, 0, 0)]), e(0), "bed", 0.1)
    new = cells_cloud([(9, 9, 9)])
    s = association_score(a, new, e(1), P)          # 0.5 * 0.5 + 0.5 * 0 = 0.25 exactly
    assert s == 0.25
    assert associate([a], new, e(1), "bed", AssociationParams(tau=0.25)) == 0
    assert associate([a], new, e(1), "bed", AssociationParams(tau=math.nextafter(0.25, 1))) is None


def test_ties_go_to_lowest_id():
    objs = [SemanticObject.create(i, cells_cloud([(0, 0, 0)]), e(0), "bed", 0.1) for i in (4, 2, 7)]
    assert associate(objs, cells_cloud([(0, 0, 0)]), e(0), "bed", P) == 2


def test_fuse_examples():
    f, g = e(0), e(1)
    a = SemanticObject.create(0, cells_cloud([(0, 0, 0)]), f, "bed", 0.1)
    same = fuse(a, cells_cloud([(0, 0, 0)]), f, "bed")
    assert np.array_equal(same.mean_feature, f)
    fg = fuse(a, cells_cloud([(1, 0, 0)]), g, "bed")
    ga = fuse(SemanticObject.create(0, cells_cloud([(1, 0, 0)]), g, "bed", 0.1),
              cells_cloud([(0, 0, 0)]), f, "bed")
    assert np.allclose(fg.mean_feature, (f + g) / 2, atol=1e-12)
    assert np.allclose(fg.mean_feature, ga.mean_feature, atol=1e-12)
    assert fg.voxels.occupied == ga.voxels.occupied
    o = a
    for cat in ("bed", "bed", "couch"):
        o = fuse(o, cells_cloud([(0, 0, 0)]), f, cat)
    assert o.category == "bed" and o.confidence == 0.75
    assert o.detection_count == sum(o.category_votes.values()) == 4


def test_fuse_deduplicates_voxels():
    a = SemanticObject.create(0, pc([[0.01, 0.01, 0.01], [0.02, 0.02, 0.02]]), e(0), "bed", 0.1)
    assert len(a.cloud) == 1
    b = fuse(a, pc([[0.05, 0.05, 0.05], [0.15, 0.05, 0.05]]), e(0), "bed")
    assert len(b.cloud) == 2


def test_query_goal_objects():
    assert query_goal_objects([], "bed") == []
    a = SemanticObject.create(5, cells_cloud([(0, 0, 0)]), e(0), "bed", 0.1)
    b = SemanticObject.create(2, cells_cloud([(3, 0, 0)]), e(0), "bed", 0.1)
    c = SemanticObject.create(1, cells_cloud([(6, 0, 0)]), e(0), "sofa", 0.1)
    assert [o.id for o in query_goal_objects([a, b, c], "bed")] == [2, 5]
    strong = fuse(a, cells_cloud([(0, 0, 0)]), e(0), "bed")
    assert [o.id for o in query_goal_objects([strong, b], "bed")] == [5, 2]
    weak = fuse(b, cells_cloud([(3, 0, 0)]), e(0), "sofa")     # confidence 0.5
    assert query_goal_objects([weak], "bed", 0.6) == []


def random_object(rng, oid, feats):
    keys = {tuple(rng.integers(0, 4, 3)) for _ in range(rng.integers(1, 6))}
    return SemanticObject.create(oid, cells_cloud(sorted(keys)), feats[rng.integers(len(feats))],
                                 "bed", 0.1), keys


FEATS = [e(0), e(1), e(2), -e(0), (e(0) + e(1)) / math.sqrt(2)]


def test_associate_matches_exhaustive_enumeration():
    rng = np.random.default_rng(0)
    for case in range(300):
        n = int(rng.integers(0, 6))
        ids = rng.permutation(20)[:n]
        made = [random_object(rng, int(i), FEATS) for i in ids]
        objs = [o for o, _ in made]
        keys = {tuple(rng.integers(0, 4, 3)) for _ in range(rng.integers(1, 6))}
        feat = FEATS[rng.integers(len(FEATS))]
        tau = float(rng.uniform(0.2, 0.9))
        if n and case % 3 == 0:
            # put tau exactly on an achievable score
            tau = association_score(objs[rng.integers(n)], cells_cloud(sorted(keys)), feat, P)
        p = AssociationParams(tau=tau)
        want, _ = associate_oracle([(o.id, k, o.mean_feature) for o, k in made],
                                   cells_cloud(sorted(keys)).points, feat, 0.5, 0.5, tau, 0.1)
        assert associate(objs, cells_cloud(sorted(keys)), feat, "bed", p) == want, case


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4)),
                min_size=1, max_size=8, unique=True),
       st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4)),
                min_size=1, max_size=8, unique=True),
       st.sampled_from(range(len(FEATS))), st.sampled_from(range(len(FEATS))),
       st.floats(0, 2), st.floats(0.01, 2))
def test_score_matches_component_oracle(ka, kb, fa, fb, w1, w2):
    """Weighted sum of the two components, hence bounded by w1 + w2 and
    monotone in each."""
    p = AssociationParams(w1=w1, w2=w2)
    a = SemanticObject.create(0, cells_cloud(ka), FEATS[fa], "bed", 0.1)
    s = association_score(a, cells_cloud(kb), FEATS[fb], p)
    cos = float(FEATS[fa] @ FEATS[fb])
    want = w1 * (cos + 1) / 2 + w2 * iou(set(ka), set(kb))
    assert s == pytest.approx(want, abs=1e-12)
    assert 0.0 <= s <= w1 + w2 + 1e-12


def test_store_fuse_order_independent():
    rng = np.random.default_rng(4)
    dets = [(pc(rng.uniform(0, 0.4, (6, 3))), rng.normal(size=8)) for _ in range(7)]
    results = []
    for perm in itertools.islice(itertools.permutations(range(7)), 0, 5040, 503):
        obj = SemanticObject.create(0, dets[perm[0]][0], dets[perm[0]][1], "bed", 0.1)
        for k in perm[1:]:
            obj = fuse(obj, dets[k][0], dets[k][1], "bed")
        results.append(obj)
    for o in results[1:]:
        assert np.allclose(o.mean_feature, results[0].mean_feature, atol=1e-12)
        assert o.voxels.occupied == results[0].voxels.occupied
        assert o.cloud == results[0].cloud
        assert o.detection_count == 7


def test_store_creates_and_merges():
    s = ObjectStore()
    assert s.add(cells_cloud([(0, 0, 0)]), e(0), "bed") == 0
    assert s.add(cells_cloud([(0, 0, 0)]), e(0), "bed") == 0
    assert s.add(cells_cloud([(9, 9, 9)]), e(1), "sofa") == 1
    assert len(s) == 2 and s.get(0).detection_count == 2
    with pytest.raises(ValueError):
        s.add(PointCloud.empty(), e(0), "bed")


def test_params_validation():
    with pytest.raises(ValueError):
        AssociationParams(w1=0, w2=0)
    with pytest.raises(ValueError):
        AssociationParams(w1=-1)
