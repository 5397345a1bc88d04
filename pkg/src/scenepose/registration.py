"""Global registration: 4-point congruent-set matching with LCP scoring,
plus trimmed-ICP local refinement.

Matching repeatedly samples a wide coplanar 4-point base from the segment,
looks up model point pairs whose lengths match the base diagonals via
distance hashing (buckets of width delta, giving linear-time pair
extraction), assembles congruent 4-point sets from the diagonal
intersection invariants, and fits a rigid transform per congruent pair.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateSegment, EmptySegment, NoCongruentSets
from .geometry import PointCloud, RigidTransform, quat_from_matrix
from .meshes import TriangleMesh


@dataclass
class ScoredPose:
    pose: RigidTransform
    lcp: float

    def __post_init__(self):
        if not 0.0 <= self.lcp <= 1.0:
            raise ValueError("lcp must lie in [0, 1]")

    def to_dict(self):
        return {"q": self.pose.q.tolist(), "t": self.pose.t.tolist(), "lcp": self.lcp}

    @classmethod
    def from_dict(cls, d):
        return cls(RigidTransform(d["q"], d["t"]), d["lcp"])


@dataclass
class MatchConfig:
    delta: float = 0.005  # LCP inlier radius, meters
    overlap_estimate: float = 1.0  # scales the minimum base width
    time_budget: float = 2.0  # seconds, soft cap checked between bases
    max_bases: int = 100
    model_sample_count: int = 500
    seed: int = 0
    coplanarity_tol: float = 1e-3
    base_width_factor: float = 0.3  # min diagonal as fraction of segment diameter
    max_hypotheses: int = 1000  # deduped candidates kept for scoring

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not 0.0 < self.overlap_estimate <= 1.0:
            raise ValueError("overlap_estimate must lie in (0, 1]")


def kabsch(src, dst):
    """Least-squares rigid transform mapping src points onto dst points."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    h = (src - mu_s).T @ (dst - mu_d)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = mu_d - r @ mu_s
    return r, t


def lcp_score(model_sample: PointCloud, segment: PointCloud, pose: RigidTransform, delta: float) -> float:
    """Fraction of transformed model points with a segment point within delta."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if not len(model_sample):
        raise ValueError("model sample is empty")
    if not len(segment):
        return 0.0
    tree = cKDTree(segment.points)
    d, _ = tree.query(pose.apply(model_sample.points), distance_upper_bound=delta)
    return float(np.count_nonzero(np.isfinite(d))) / len(model_sample)


def trimmed_icp(
    model_sample: PointCloud,
    segment: PointCloud,
    init: RigidTransform,
    trim: float = 0.8,
    iters: int = 30,
    history=None,
) -> RigidTransform:
    """Trimmed ICP: keep the best `trim` fraction of nearest-neighbor
    correspondences per iteration; reject any step that would increase the
    trimmed mean squared residual.

    `history`, when given a list, collects the accepted residuals.
    """
    if not len(segment):
        raise EmptySegment("cannot refine against an empty segment")
    if not 0.0 < trim <= 1.0:
        raise ValueError("trim must lie in (0, 1]")
    pts = model_sample.points
    tree = cKDTree(segment.points)
    keep = max(3, int(round(trim * len(pts))))
    keep = min(keep, len(pts))

    pose = init
    prev_pose = init
    last_err = math.inf
    for _ in range(iters):
        moved = pose.apply(pts)
        d, j = tree.query(moved)
        kept = np.argpartition(d, keep - 1)[:keep] if keep < len(pts) else np.arange(len(pts))
        err = float(np.mean(d[kept] ** 2))
        if err > last_err:
            pose = prev_pose
            break
        prev_pose, last_err = pose, err
        if history is not None:
            history.append(err)
        r, t = kabsch(moved[kept], segment.points[j[kept]])
        step = RigidTransform.from_rotation_translation(r, t)
        pose = step.compose(pose)
        if step.rotation_angle_to(RigidTransform.identity()) < 1e-4 and np.linalg.norm(step.t) < 1e-5:
            break
    return pose


class _PairIndex:
    """Model point pairs hashed by distance into buckets of width delta."""

    def __init__(self, points, delta):
        self.points = points
        self.delta = delta
        n = len(points)
        iu, ju = np.triu_indices(n, k=1)
        d = np.linalg.norm(points[iu] - points[ju], axis=1)
        bins = np.floor(d / delta).astype(np.int64)
        order = np.argsort(bins, kind="stable")
        self._iu, self._ju, self._d = iu[order], ju[order], d[order]
        self._bins = bins[order]
        self._starts = {}
        uniq, starts = np.unique(self._bins, return_index=True)
        ends = np.append(starts[1:], len(self._bins))
        for b, s, e in zip(uniq, starts, ends):
            self._starts[int(b)] = (int(s), int(e))

    def pairs_near(self, length):
        """Indices (i, j) of unordered pairs with |d - length| <= delta."""
        center = int(math.floor(length / self.delta))
        segs = []
        for b in (center - 1, center, center + 1):
            if b in self._starts:
                s, e = self._starts[b]
                segs.append(slice(s, e))
        if not segs:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        iu = np.concatenate([self._iu[s] for s in segs])
        ju = np.concatenate([self._ju[s] for s in segs])
        d = np.concatenate([self._d[s] for s in segs])
        ok = np.abs(d - length) <= self.delta
        return iu[ok], ju[ok]


def _segment_rank(points):
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    return int(np.sum(s > 1e-9 * max(1.0, s[0] if len(s) else 1.0)))


def _line_intersection_params(a, b, c, d):
    """Closest-point parameters (r1, r2, gap) for segments ab and cd."""
    u = b - a
    v = d - c
    w = a - c
    uu, vv, uv = u @ u, v @ v, u @ v
    den = uu * vv - uv * uv
    if den < 1e-18:
        return None
    uw, vw = u @ w, v @ w
    r1 = (uv * vw - vv * uw) / den
    r2 = (uu * vw - uv * uw) / den
    gap = np.linalg.norm((a + r1 * u) - (c + r2 * v))
    return r1, r2, gap


def _sample_base(points, rng, diameter, cfg: MatchConfig):
    """One wide, coplanar 4-point base with intersecting diagonals, or None.

    Each point is drawn from the candidates still satisfying the base-width
    constraint, so attempts rarely go to waste on narrow triples.
    """
    n = len(points)
    min_width = cfg.base_width_factor * cfg.overlap_estimate * diameter
    i1 = int(rng.integers(n))
    d1 = np.linalg.norm(points - points[i1], axis=1)
    cand = np.flatnonzero(d1 >= min_width)
    if not len(cand):
        return None
    i2 = int(rng.choice(cand))
    d2 = np.linalg.norm(points - points[i2], axis=1)
    cand = np.flatnonzero((d1 >= min_width) & (d2 >= min_width))
    if not len(cand):
        return None
    i3 = int(rng.choice(cand))
    p = points[[i1, i2, i3]]
    normal = np.cross(p[1] - p[0], p[2] - p[0])
    nn = np.linalg.norm(normal)
    if nn < 1e-6 * min_width**2:
        return None
    normal = normal / nn
    dist = np.abs((points - p[0]) @ normal)
    d3 = np.linalg.norm(points - points[i3], axis=1)
    spread = np.minimum(np.minimum(d1, d2), d3)
    cand = np.flatnonzero((dist < cfg.coplanarity_tol) & (spread >= 0.25 * min_width))
    if not len(cand):
        return None
    fourth = points[int(rng.choice(cand))]
    quad = np.vstack([p, fourth])

    # diagonal pairing: the split whose segments actually cross
    for (i0, i1), (i2, i3) in (((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2))):
        hit = _line_intersection_params(quad[i0], quad[i1], quad[i2], quad[i3])
        if hit is None:
            continue
        r1, r2, gap = hit
        if 0.0 <= r1 <= 1.0 and 0.0 <= r2 <= 1.0 and gap < 2 * cfg.coplanarity_tol:
            base = quad[[i0, i1, i2, i3]]
            d1 = np.linalg.norm(base[1] - base[0])
            d2 = np.linalg.norm(base[3] - base[2])
            if min(d1, d2) < min_width:
                return None
            return base, r1, r2, d1, d2
    return None


def _batch_kabsch(src, dst):
    """Batched least-squares rigid fits: src, dst are (N, K, 3) arrays."""
    mu_s = src.mean(axis=1, keepdims=True)
    mu_d = dst.mean(axis=1, keepdims=True)
    h = np.einsum("nki,nkj->nij", src - mu_s, dst - mu_d)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(np.einsum("nij,nkj->nik", vt.transpose(0, 2, 1), u)))
    flip = np.broadcast_to(np.array([1.0, 1.0, 0.0]), (len(src), 3)).copy()
    flip[:, 2] = d
    r = np.einsum("nji,nj,nkj->nik", vt, flip, u)
    t = mu_d[:, 0, :] - np.einsum("nij,nj->ni", r, mu_s[:, 0, :])
    return r, t


def _congruent_transforms(base, r1, r2, d1, d2, pair_index: _PairIndex, delta, max_sets=50):
    """Rigid fits (model -> segment) from congruent 4-point sets, best RMS first.

    Returns (rotations (N,3,3), translations (N,3), rms (N,)).
    """
    empty = (np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros(0))
    pts = pair_index.points
    i1, j1 = pair_index.pairs_near(d1)
    i2, j2 = pair_index.pairs_near(d2)
    if not len(i1) or not len(i2):
        return empty

    # both orientations of every pair
    a1 = np.concatenate([i1, j1])
    b1 = np.concatenate([j1, i1])
    a2 = np.concatenate([i2, j2])
    b2 = np.concatenate([j2, i2])
    e1 = pts[a1] + r1 * (pts[b1] - pts[a1])
    e2 = pts[a2] + r2 * (pts[b2] - pts[a2])

    tree = cKDTree(e1)
    groups = tree.query_ball_point(e2, r=delta)
    counts = np.fromiter((len(g) for g in groups), dtype=np.int64, count=len(groups))
    if counts.sum() == 0:
        return empty
    k2s = np.repeat(np.arange(len(groups)), counts)
    k1s = np.fromiter(
        (k for g in groups for k in g), dtype=np.int64, count=int(counts.sum())
    )
    if len(k1s) > 30000:  # combinatorial blowup guard, deterministic slice
        k1s, k2s = k1s[:30000], k2s[:30000]

    # angle invariant between the two diagonals
    u = pts[b1[k1s]] - pts[a1[k1s]]
    v = pts[b2[k2s]] - pts[a2[k2s]]
    cos_base = float((base[1] - base[0]) @ (base[3] - base[2]) / (d1 * d2))
    cos_tol = 2.0 * delta * (1.0 / d1 + 1.0 / d2) + 0.05
    cos_cand = np.einsum("nk,nk->n", u, v) / (
        np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
    )
    ok = np.abs(cos_cand - cos_base) <= cos_tol
    if not ok.any():
        return empty
    k1s, k2s = k1s[ok], k2s[ok]

    src = np.stack([pts[a1[k1s]], pts[b1[k1s]], pts[a2[k2s]], pts[b2[k2s]]], axis=1)
    dst = np.broadcast_to(base, src.shape)
    r, t = _batch_kabsch(src, dst)
    moved = np.einsum("nij,nkj->nki", r, src) + t[:, None, :]
    rms = np.sqrt(np.mean(np.sum((moved - dst) ** 2, axis=2), axis=1))
    ok = rms <= 1.5 * delta
    if not ok.any():
        return empty
    r, t, rms = r[ok], t[ok], rms[ok]
    order = np.argsort(rms, kind="stable")[:max_sets]
    return r[order], t[order], rms[order]


def _point_to_plane_step(moved, normals, targets):
    """Small-angle rigid update minimizing normal-projected residuals."""
    resid = np.einsum("ij,ij->i", targets - moved, normals)
    jac = np.hstack([np.cross(moved, normals), normals])
    a = jac.T @ jac
    b = jac.T @ resid
    try:
        x = np.linalg.solve(a + 1e-12 * np.eye(6), b)
    except np.linalg.LinAlgError:
        return None
    omega, t = x[:3], x[3:]
    angle = float(np.linalg.norm(omega))
    if angle < 1e-15:
        return RigidTransform(t=t)
    return RigidTransform.from_axis_angle(omega / angle, angle, t=t)


def _polish(pose, model_pts, model_normals, tree, segment_pts, delta):
    """Coarse-to-fine inlier refits pulling a raw congruent-set fit onto the
    segment: point-to-point first, then point-to-plane (model-side normals)
    which does not stall on tangential slip along flat faces."""
    for radius in (3.0 * delta, 1.5 * delta):
        moved = pose.apply(model_pts)
        d, j = tree.query(moved, distance_upper_bound=radius)
        ok = np.isfinite(d)
        if np.count_nonzero(ok) < 4:
            return pose
        r, t = kabsch(moved[ok], segment_pts[j[ok]])
        pose = RigidTransform.from_rotation_translation(r, t).compose(pose)
    for _ in range(3):
        rot = pose.rotation_matrix()
        moved = model_pts @ rot.T + pose.t
        d, j = tree.query(moved, distance_upper_bound=delta)
        ok = np.isfinite(d)
        if np.count_nonzero(ok) < 6:
            return pose
        step = _point_to_plane_step(moved[ok], model_normals[ok] @ rot.T, segment_pts[j[ok]])
        if step is None:
            return pose
        pose = step.compose(pose)
    return pose


_DUP_ANGLE = math.radians(1.0)
_DUP_TRANS = 2e-3
_COS_HALF_DUP = math.cos(_DUP_ANGLE / 2.0)


def _greedy_dedup(qs, ts, order):
    """Indices (in `order` sequence) whose pose is not within (1 deg, 2 mm)
    of an earlier kept pose."""
    kept = []
    kept_q = np.empty((0, 4))
    kept_t = np.empty((0, 3))
    for i in order:
        if len(kept):
            close_rot = np.abs(kept_q @ qs[i]) > _COS_HALF_DUP
            close_trans = np.linalg.norm(kept_t - ts[i], axis=1) < _DUP_TRANS
            if np.any(close_rot & close_trans):
                continue
        kept.append(i)
        kept_q = np.vstack([kept_q, qs[i]])
        kept_t = np.vstack([kept_t, ts[i]])
    return kept


def congruent_set_matching(
    model: TriangleMesh, segment: PointCloud, cfg: MatchConfig | None = None
) -> list[ScoredPose]:
    """Pose hypotheses for `model` against `segment`, sorted by LCP descending."""
    cfg = cfg or MatchConfig()
    pts = segment.points
    if len(pts) < 4 or _segment_rank(pts) < 2:
        raise DegenerateSegment("segment needs at least 4 non-collinear points")
    if not len(model.vertices):
        raise ValueError("model mesh is empty")

    model_pts, model_normals = model.sample_surface(
        cfg.model_sample_count, seed=cfg.seed, return_normals=True
    )
    pair_index = _PairIndex(model_pts, cfg.delta)
    seg_tree = cKDTree(pts)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    diameter = float(np.linalg.norm(hi - lo))

    rng = np.random.default_rng(cfg.seed)
    rs, ts_, rmss = [], [], []
    deadline = time.monotonic() + cfg.time_budget
    bases_used = 0
    attempts = 0
    while bases_used < cfg.max_bases and attempts < 50 * cfg.max_bases:
        attempts += 1
        sampled = _sample_base(pts, rng, diameter, cfg)
        if sampled is None:
            continue
        base, r1, r2, d1, d2 = sampled
        bases_used += 1
        r, t, rms = _congruent_transforms(base, r1, r2, d1, d2, pair_index, cfg.delta)
        if len(r):
            rs.append(r)
            ts_.append(t)
            rmss.append(rms)
        if time.monotonic() > deadline:
            break

    if not rs:
        raise NoCongruentSets("no congruent sets found within the budget")

    rot = np.concatenate(rs)
    trans = np.concatenate(ts_)
    rms = np.concatenate(rmss)
    qs = np.stack([quat_from_matrix(m) for m in rot])

    order = np.argsort(rms, kind="stable")
    kept_idx = _greedy_dedup(qs, trans, order)[: cfg.max_hypotheses]

    model_cloud = PointCloud(model_pts, segment.frame)
    scored = []
    for i in kept_idx:
        pose = RigidTransform(qs[i], trans[i])
        polished = _polish(pose, model_pts, model_normals, seg_tree, pts, cfg.delta)
        scored.append(ScoredPose(polished, lcp_score(model_cloud, segment, polished, cfg.delta)))

    # polishing can pull nearby candidates onto the same optimum: dedup again
    scored.sort(key=lambda s: (-s.lcp, s.pose.q.tobytes(), s.pose.t.tobytes()))
    qs2 = np.stack([s.pose.q for s in scored])
    ts2 = np.stack([s.pose.t for s in scored])
    final = _greedy_dedup(qs2, ts2, range(len(scored)))
    return [scored[i] for i in final]
