"""Two-level pose clustering: K-Means over translations, then kernel K-Means
over rotations with an RBF kernel on the symmetry-aware rotation distance.

Representatives are medoids: actual member poses, never averaged, so no
invalid interpolated rotation can leave this module.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.cluster import KMeans

from .geometry import RigidTransform, SymmetryGroup, pairwise_symmetric_rotation_distance
from .registration import ScoredPose

DEFAULT_SIGMA = math.radians(15.0)
KMEANS_MAX_ITER = 50


def _kernel_kmeans(kernel, k, rng, max_iter=KMEANS_MAX_ITER):
    """Cluster labels from kernel K-Means with kmeans++-style seeding.

    `kernel` is the (n, n) Gram matrix; returns an (n,) label array whose
    values index the surviving clusters (empty clusters are dropped).
    """
    n = len(kernel)
    k = min(k, n)
    if k <= 1:
        return np.zeros(n, dtype=int)

    diag = np.diag(kernel)
    # feature-space squared distance to a single point c: K_ii - 2 K_ic + K_cc
    centers = [int(rng.integers(n))]
    d2 = diag - 2.0 * kernel[:, centers[0]] + diag[centers[0]]
    for _ in range(k - 1):
        d2 = np.maximum(d2, 0.0)
        total = d2.sum()
        if total <= 0:
            break
        centers.append(int(rng.choice(n, p=d2 / total)))
        d2 = np.minimum(d2, diag - 2.0 * kernel[:, centers[-1]] + diag[centers[-1]])

    labels = np.argmin(
        np.stack([diag - 2.0 * kernel[:, c] + diag[c] for c in centers]), axis=0
    )
    for _ in range(max_iter):
        dists = []
        for c in range(len(centers)):
            members = labels == c
            m = int(members.sum())
            if m == 0:
                dists.append(np.full(n, np.inf))
                continue
            km = kernel[:, members]
            within = kernel[np.ix_(members, members)].sum() / (m * m)
            dists.append(diag - 2.0 * km.sum(axis=1) / m + within)
        new_labels = np.argmin(np.stack(dists), axis=0)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels


def _rotation_medoid(kernel, members):
    """Member index maximizing the within-cluster kernel sum (the medoid)."""
    sub = kernel[np.ix_(members, members)]
    return members[int(np.argmax(sub.sum(axis=1)))]


def cluster_pose_indices(
    poses: list[RigidTransform],
    k_t: int,
    k_r: int,
    group: SymmetryGroup | None = None,
    sigma: float = DEFAULT_SIGMA,
    seed: int = 0,
) -> list[int]:
    """Indices of medoid representatives for a pose list (at most k_t * k_r)."""
    if not poses:
        raise ValueError("no poses to cluster")
    if k_t < 1 or k_r < 1:
        raise ValueError("cluster counts must be >= 1")

    def dedup(indices):
        seen = set()
        out = []
        for i in indices:
            key = (poses[i].q.tobytes(), poses[i].t.tobytes())
            if key not in seen:
                seen.add(key)
                out.append(i)
        return out

    if len(poses) <= k_t * k_r:
        return dedup(range(len(poses)))

    translations = np.stack([p.t for p in poses])
    quats = np.stack([p.q for p in poses])

    kt = min(k_t, len(poses))
    km = KMeans(n_clusters=kt, init="k-means++", n_init=1, max_iter=KMEANS_MAX_ITER, random_state=seed)
    tr_labels = km.fit_predict(translations)

    reps: list[int] = []
    for c in range(kt):
        members = np.flatnonzero(tr_labels == c)
        if not len(members):
            continue  # empty level-2 input: dropped, not re-seeded
        d = pairwise_symmetric_rotation_distance(quats[members], quats[members], group)
        kernel = np.exp(-(d**2) / sigma**2)
        rng = np.random.default_rng(seed + 7919 * (c + 1))
        labels = _kernel_kmeans(kernel, k_r, rng)
        for rc in np.unique(labels):
            sub = np.flatnonzero(labels == rc)  # local indices within the cluster
            reps.append(int(members[_rotation_medoid(kernel, sub)]))
    return dedup(sorted(reps))


def cluster_poses(
    hyps,
    k_t: int = 5,
    k_r: int = 5,
    group: SymmetryGroup | None = None,
    sigma: float = DEFAULT_SIGMA,
    seed: int = 0,
) -> list[RigidTransform]:
    """Compress scored hypotheses to at most k_t * k_r medoid poses."""
    poses = [h.pose if isinstance(h, ScoredPose) else h for h in hyps]
    idx = cluster_pose_indices(poses, k_t, k_r, group, sigma, seed)
    return [poses[i] for i in idx]


def cluster_scored(
    hyps: list[ScoredPose],
    k_t: int = 5,
    k_r: int = 5,
    group: SymmetryGroup | None = None,
    sigma: float = DEFAULT_SIGMA,
    seed: int = 0,
) -> list[ScoredPose]:
    """As cluster_poses, keeping each medoid's own LCP score attached."""
    poses = [h.pose for h in hyps]
    idx = cluster_pose_indices(poses, k_t, k_r, group, sigma, seed)
    return [hyps[i] for i in idx]
