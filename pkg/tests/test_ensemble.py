import json

import numpy as np
import pytest

import trajflow.ensemble as te
import trajflow.predictions as pj


def _member(rng, k=3, t_f=5, endpoints=None):
    trajs = rng.normal(size=(k, t_f, 2))
    if endpoints is not None:
        trajs[:, -1, :] = endpoints
    s = rng.random(k)
    return trajs, s / s.sum()


def _cands(members):
    return te.CandidateSet(members, [f"m{i}" for i in range(len(members))]).validate()


# -- interchange files ----------------------------------------------------------


def test_predictions_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(0)
    entries = {f"s{i}": _member(rng, k=4, t_f=6) for i in range(5)}
    path = tmp_path / "p.jsonl"
    pj.save_predictions(path, entries)
    back = pj.load_predictions(path)
    assert sorted(back) == sorted(entries)
    for sid in entries:
        assert np.array_equal(back[sid][0], entries[sid][0])
        assert np.array_equal(back[sid][1], entries[sid][1])


def test_predictions_validation(tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "p.jsonl"

    pj.save_predictions(path, {"a": _member(rng)})
    good = path.read_text().strip()

    bad = tmp_path / "bad.jsonl"
    bad.write_text(good + "\nnot json\n")
    with pytest.raises(ValueError, match="bad.jsonl:2: not valid JSON"):
        pj.load_predictions(bad)

    record = json.loads(good)
    record["version"] = 9
    bad.write_text(json.dumps(record) + "\n")
    with pytest.raises(ValueError, match="unsupported version"):
        pj.load_predictions(bad)

    record = json.loads(good)
    record["scores"] = [0.9, 0.9, 0.9]
    bad.write_text(json.dumps(record) + "\n")
    with pytest.raises(ValueError, match="probability"):
        pj.load_predictions(bad)

    bad.write_text(good + "\n" + good + "\n")
    with pytest.raises(ValueError, match="duplicate"):
        pj.load_predictions(bad)

    other = json.loads(good)
    other["scenario_id"] = "b"
    other["trajectories"] = np.zeros((2, 6, 2)).tolist()
    other["scores"] = [0.5, 0.5]
    bad.write_text(good + "\n" + json.dumps(other) + "\n")
    with pytest.raises(ValueError, match="differs from earlier"):
        pj.load_predictions(bad)


# -- clustering ------------------------------------------------------------------


def test_two_well_separated_pairs():
    rng = np.random.default_rng(2)
    endpoints = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]])
    cands = _cands([_member(rng, k=4, endpoints=endpoints)])
    got = te.kmeans_endpoints(cands, 2, seed=0)
    # the near pairs share a cluster regardless of label order
    assert got.labels[0] == got.labels[1] != got.labels[2] == got.labels[3]
    cents = got.centroids[np.argsort(got.centroids[:, 0])]
    np.testing.assert_allclose(cents, [[0.05, 0.0], [10.05, 0.0]], atol=1e-15)
    assert got.converged and not got.degenerate


def test_shared_endpoint_degenerate():
    rng = np.random.default_rng(3)
    endpoints = np.zeros((3, 2)) + 2.5
    cands = _cands([_member(rng, k=3, endpoints=endpoints)])
    got = te.kmeans_endpoints(cands, 2, seed=1)
    assert got.degenerate
    np.testing.assert_allclose(got.centroids, 2.5, atol=1e-15)
    assert np.bincount(got.labels, minlength=2).min() >= 1


def test_one_cluster_per_candidate():
    rng = np.random.default_rng(4)
    endpoints = np.array([[0.0, 0], [3.0, 0], [0, 3.0], [5, 5.0]])
    cands = _cands([_member(rng, k=4, endpoints=endpoints)])
    got = te.kmeans_endpoints(cands, 4, seed=2)
    assert sorted(got.labels.tolist()) == [0, 1, 2, 3]
    assert got.objective_history[-1] == 0.0


def test_kmeans_requires_enough_candidates():
    rng = np.random.default_rng(5)
    cands = _cands([_member(rng, k=2)])
    with pytest.raises(ValueError, match="cannot form"):
        te.kmeans_endpoints(cands, 5, seed=0)


def test_kmeans_deterministic_and_monotone():
    rng = np.random.default_rng(6)
    for trial in range(50):
        n_members = int(rng.integers(1, 4))
        members = [_member(rng, k=6, t_f=4) for _ in range(n_members)]
        cands = _cands(members)
        a = te.kmeans_endpoints(cands, 3, seed=trial)
        b = te.kmeans_endpoints(cands, 3, seed=trial)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.centroids, b.centroids)
        hist = a.objective_history
        assert all(x >= y - 1e-12 for x, y in zip(hist, hist[1:]))
        assert np.bincount(a.labels, minlength=3).min() >= 1


# -- fusion ----------------------------------------------------------------------


def test_fuse_identical_members_is_identity():
    rng = np.random.default_rng(7)
    base = _member(rng, k=3, endpoints=np.array([[0, 0], [4.0, 0], [0, 4.0]]))
    cands = _cands([base, base, base])
    assignment = te.kmeans_endpoints(cands, 3, seed=0)
    fused_t, fused_s = te.fuse(cands, assignment)
    order = np.argsort(fused_t[:, -1, 0] + 10 * fused_t[:, -1, 1])
    base_order = np.argsort(base[0][:, -1, 0] + 10 * base[0][:, -1, 1])
    np.testing.assert_allclose(fused_t[order], base[0][base_order], atol=1e-14)
    np.testing.assert_allclose(fused_s[order], base[1][base_order], atol=1e-12)


def test_fuse_score_normalization():
    # two clusters with summed scores 2.0 and 1.0 -> (2/3, 1/3)
    t = np.zeros((1, 3, 2))
    members = [
        (t + [[0.0, 0.0]], np.array([1.0])),
        (t + [[0.1, 0.0]], np.array([1.0])),
        (t + [[9.0, 0.0]], np.array([1.0])),
    ]
    cands = _cands(members)
    assignment = te.kmeans_endpoints(cands, 2, seed=0)
    fused_t, fused_s = te.fuse(cands, assignment)
    big = int(np.argmax(fused_s))
    np.testing.assert_allclose(sorted(fused_s), [1.0 / 3.0, 2.0 / 3.0], atol=1e-15)
    assert abs(fused_t[big, -1, 0] - 0.05) <= 1e-15


def test_fuse_per_frame_mean():
    # straight lines y=0 and y=2 fuse to y=1 at every frame
    t_f = 6
    a = np.stack([np.linspace(0, 5, t_f), np.zeros(t_f)], axis=-1)[None]
    b = np.stack([np.linspace(0, 5, t_f), np.full(t_f, 2.0)], axis=-1)[None]
    cands = _cands([(a, np.array([1.0])), (b, np.array([1.0]))])
    assignment = te.ClusterAssignment(
        labels=np.array([0, 0]),
        centroids=np.array([[5.0, 1.0]]),
        iterations=0,
        converged=True,
        degenerate=False,
        objective_history=[],
    )
    fused_t, fused_s = te.fuse(cands, assignment)
    np.testing.assert_allclose(fused_t[0, :, 1], 1.0, atol=1e-15)
    assert fused_s[0] == 1.0


def test_fuse_permutation_invariant_within_cluster():
    import dataclasses

    rng = np.random.default_rng(8)
    members = [_member(rng, k=4, t_f=5) for _ in range(3)]
    cands = _cands(members)
    assignment = te.kmeans_endpoints(cands, 2, seed=3)
    f1, s1 = te.fuse(cands, assignment)

    # shuffle the flattened candidates and carry the labels along
    perm = rng.permutation(12)
    flat_t = cands.flat_trajectories()[perm]
    flat_s = cands.flat_scores()[perm]
    members2 = [(flat_t[i * 4 : (i + 1) * 4], flat_s[i * 4 : (i + 1) * 4]) for i in range(3)]
    cands2 = te.CandidateSet(members2, ["a", "b", "c"])
    assignment2 = dataclasses.replace(assignment, labels=assignment.labels[perm])
    f2, s2 = te.fuse(cands2, assignment2)
    np.testing.assert_allclose(f2, f1, atol=1e-12)
    np.testing.assert_allclose(s2, s1, atol=1e-12)


def test_summed_scores_favor_bigger_clusters():
    # equal member scores: the 3-member cluster outranks the 1-member cluster
    t = np.zeros((1, 2, 2))
    members = [
        (t + [[0.0, 0.0]], np.array([1.0])),
        (t + [[0.1, 0.0]], np.array([1.0])),
        (t + [[0.2, 0.0]], np.array([1.0])),
        (t + [[9.0, 0.0]], np.array([1.0])),
    ]
    cands = _cands(members)
    assignment = te.kmeans_endpoints(cands, 2, seed=0)
    _, fused_s = te.fuse(cands, assignment)
    counts = np.bincount(assignment.labels, minlength=2)
    assert fused_s[np.argmax(counts)] > fused_s[np.argmin(counts)]
    np.testing.assert_allclose(sorted(fused_s), [0.25, 0.75], atol=1e-15)


# -- file-level ensembling --------------------------------------------------------


def test_mte_single_member_identity(tmp_path):
    rng = np.random.default_rng(9)
    endpoints = np.array([[0, 0], [5.0, 0], [0, 5.0], [5, 5.0], [-5, 0.0], [0, -5.0]])
    entries = {f"s{i}": _member(rng, k=6, endpoints=endpoints + i) for i in range(3)}
    src = tmp_path / "one.jsonl"
    pj.save_predictions(src, entries)
    out = tmp_path / "mte.jsonl"
    te.mte([src], k=6, seed=0, out_path=out)
    fused = pj.load_predictions(out)
    for sid, (trajs, scores) in entries.items():
        got_t, got_s = fused[sid]
        order = np.argsort(got_t[:, -1, 0] * 100 + got_t[:, -1, 1])
        want = np.argsort(trajs[:, -1, 0] * 100 + trajs[:, -1, 1])
        np.testing.assert_allclose(got_t[order], trajs[want], atol=1e-12)
        np.testing.assert_allclose(got_s[order], scores[want], atol=1e-9)


def test_mte_known_cluster_structure(tmp_path):
    t_f = 4
    line = np.stack([np.arange(t_f, dtype=float), np.zeros(t_f)], axis=-1)
    files = []
    # three models, two agree on the far mode, all share the near mode
    offsets = [(0.0, 0.0), (0.0, 0.2), (0.0, -0.2)]
    for i, (dx, dy) in enumerate(offsets):
        trajs = np.stack([line + [dx, dy], line + [20.0 + dx, dy]])
        entries = {"s0": (trajs, np.array([0.6, 0.4]))}
        path = tmp_path / f"m{i}.jsonl"
        pj.save_predictions(path, entries)
        files.append(path)
    out = tmp_path / "fused.jsonl"
    te.mte(files, k=2, seed=0, out_path=out)
    (got_t, got_s) = pj.load_predictions(out)["s0"]
    near = int(np.argmin(got_t[:, -1, 0]))
    np.testing.assert_allclose(got_t[near], line, atol=1e-12)  # offsets average out
    np.testing.assert_allclose(got_t[1 - near], line + [20.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(got_s, [0.6, 0.4] if near == 0 else [0.4, 0.6], atol=1e-12)


def test_mte_rejects_mismatched_ids(tmp_path):
    rng = np.random.default_rng(10)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    pj.save_predictions(a, {"x": _member(rng)})
    pj.save_predictions(b, {"y": _member(rng)})
    with pytest.raises(ValueError, match="ids differ"):
        te.mte([a, b], k=2, seed=0, out_path=tmp_path / "o.jsonl")


def test_candidate_set_validation():
    rng = np.random.default_rng(11)
    with pytest.raises(ValueError, match="empty"):
        te.CandidateSet([], []).validate()
    m1, m2 = _member(rng, k=3), _member(rng, k=4)
    with pytest.raises(ValueError, match="disagree"):
        te.CandidateSet([m1, m2], ["a", "b"]).validate()
    bad = (m1[0], m1[1] * 2.0)
    with pytest.raises(ValueError, match="sum to 1"):
        te.CandidateSet([bad], ["a"]).validate()
