"""Multi-model trajectory ensembling: pool M models' K modes per scenario,
cluster the pooled candidates by endpoint with K-means, then average each
cluster's trajectories and sum-normalize its scores.
"""

import dataclasses

import numpy as np

from . import predictions as pj

SCORE_SUM_TOL = 1e-6


@dataclasses.dataclass
class CandidateSet:
    """M member predictions for one scenario, each (trajectories [K x T_f x 2],
    scores [K]), with a provenance tag per member."""

    members: list
    provenance: list

    def validate(self):
        if not self.members:
            raise ValueError("candidate set is empty")
        if len(self.provenance) != len(self.members):
            raise ValueError("one provenance tag per member required")
        shape = None
        for trajs, scores in self.members:
            trajs = np.asarray(trajs)
            scores = np.asarray(scores)
            if shape is None:
                shape = trajs.shape
            if trajs.shape != shape or scores.shape != (shape[0],):
                raise ValueError("members disagree on K or horizon")
            if abs(scores.sum() - 1.0) > SCORE_SUM_TOL:
                raise ValueError("member scores must sum to 1")
        return self

    def flat_trajectories(self):
        return np.concatenate([np.asarray(t, dtype=np.float64) for t, _ in self.members])

    def flat_scores(self):
        return np.concatenate([np.asarray(s, dtype=np.float64) for _, s in self.members])


@dataclasses.dataclass
class ClusterAssignment:
    labels: np.ndarray  # [N] ints in [0, K)
    centroids: np.ndarray  # [K, 2] endpoint means
    iterations: int
    converged: bool
    degenerate: bool  # fewer distinct endpoints than clusters
    objective_history: list  # sum of squared endpoint-to-centroid distances


def _kmeanspp_init(points, k, rng):
    n = points.shape[0]
    centroids = np.empty((k, 2))
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))  # all remaining points coincide
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _repair_empty(labels, points, centroids, k):
    counts = np.bincount(labels, minlength=k)
    for empty in np.nonzero(counts == 0)[0]:
        dist = ((points - centroids[labels]) ** 2).sum(axis=1)
        dist[counts[labels] <= 1] = -1.0  # never empty another cluster
        far = int(np.argmax(dist))
        counts[labels[far]] -= 1
        labels[far] = empty
        counts[empty] = 1
    return labels


def kmeans_endpoints(candidates, k, seed, max_iter=100):
    """Lloyd's algorithm on the candidates' final positions, k-means++
    seeded, deterministic per seed.  Empty clusters are repaired by donating
    the candidate farthest from its centroid."""
    candidates.validate()
    points = candidates.flat_trajectories()[:, -1, :]  # [N, 2]
    n = points.shape[0]
    if n < k:
        raise ValueError(f"{n} candidates cannot form {k} clusters")
    degenerate = np.unique(points, axis=0).shape[0] < k

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(points, k, rng)
    labels = np.full(n, -1)
    history = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        d2 = ((points[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        new_labels = _repair_empty(new_labels, points, centroids, k)
        if np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels
        for j in range(k):
            member = points[labels == j]
            if member.size:
                centroids[j] = member.mean(axis=0)
        history.append(float(((points - centroids[labels]) ** 2).sum()))
    return ClusterAssignment(labels, centroids, iterations, converged, degenerate, history)


def fuse(candidates, assignment):
    """Per cluster: unweighted mean over the full member trajectories and the
    sum of member scores, with the K sums normalized to a probability
    vector."""
    trajs = candidates.flat_trajectories()
    scores = candidates.flat_scores()
    k = assignment.centroids.shape[0]
    t_f = trajs.shape[1]
    fused_t = np.zeros((k, t_f, 2))
    fused_s = np.zeros(k)
    for j in range(k):
        member = assignment.labels == j
        if not member.any():
            raise ValueError(f"cluster {j} is empty; assignment was not repaired")
        fused_t[j] = trajs[member].mean(axis=0)
        fused_s[j] = scores[member].sum()
    return fused_t, fused_s / fused_s.sum()


def mte(input_paths, k, seed, out_path):
    """Ensemble M prediction files scenario-by-scenario into one output file.

    All files must cover exactly the same scenarios with the same K and
    horizon.  Each scenario gets its own deterministic child seed.
    """
    if not input_paths:
        raise ValueError("need at least one prediction file")
    files = [pj.load_predictions(p) for p in input_paths]
    ids = set(files[0])
    for path, loaded in zip(input_paths[1:], files[1:]):
        if set(loaded) != ids:
            diff = sorted(ids ^ set(loaded))
            raise ValueError(f"{path}: scenario ids differ from {input_paths[0]} ({diff[:3]})")
    out = {}
    for index, sid in enumerate(sorted(ids)):
        members = [loaded[sid] for loaded in files]
        cands = CandidateSet(members, [str(p) for p in input_paths]).validate()
        assignment = kmeans_endpoints(cands, k, seed=[seed, index])
        out[sid] = fuse(cands, assignment)
    pj.save_predictions(out_path, out)
    return out_path
