"""Cross-instance alignment: blended geometric/appearance distance minimized
by RANSAC initialization and gradient-based refinement over Sim(3)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from canon9d.core import (
    FeaturedSurface,
    SimilarityTransform,
    apply_transform,
    axis_angle_to_matrix,
    orthonormalize,
)

SCALE_MIN = 0.1
SCALE_MAX = 10.0


class AlignError(Exception):
    pass


class NoFeatures(AlignError):
    pass


class DegenerateWeights(AlignError):
    pass


class TooFewCorrespondences(AlignError):
    pass


class NonFiniteObjective(AlignError):
    pass


@dataclass(frozen=True)
class AlignConfig:
    alpha: float = 0.2
    ransac_iters: int = 2048
    inlier_threshold: float = 0.05   # fraction of source bounding-sphere radius
    refine_max_iters: int = 500
    refine_tol: float = 1e-6
    cycle_tau: float = 0.1           # fraction of source bounding-sphere radius
    max_vertices: int = 4096

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")


@dataclass(frozen=True)
class Correspondence:
    source_index: int
    target_index: int
    weight: float = 1.0


def bounding_sphere_radius(points) -> float:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    c = pts.mean(axis=0)
    return float(np.linalg.norm(pts - c, axis=1).max())


def voxel_downsample(surface: FeaturedSurface, max_vertices: int) -> FeaturedSurface:
    """Voxel-grid subsampling keeping the vertex nearest each voxel centroid.

    No-op when the surface is already within budget (keeps the operation
    invariant under rigid motion for small inputs)."""
    n = len(surface.vertices)
    if n <= max_vertices:
        return surface
    pts = surface.vertices.astype(np.float64)
    rho = bounding_sphere_radius(pts)
    edge = max(rho / 32.0, 1e-12)
    keys = np.floor((pts - pts.min(axis=0)) / edge).astype(np.int64)
    _, voxel_of = np.unique(keys, axis=0, return_inverse=True)
    nvox = voxel_of.max() + 1
    # voxel centroids
    sums = np.zeros((nvox, 3))
    np.add.at(sums, voxel_of, pts)
    counts = np.bincount(voxel_of, minlength=nvox).astype(float)
    centroids = sums / counts[:, None]
    d2 = np.einsum("ij,ij->i", pts - centroids[voxel_of], pts - centroids[voxel_of])
    # nearest vertex per voxel, deterministic: order by (voxel, distance, index)
    order = np.lexsort((np.arange(n), d2, voxel_of))
    first = np.ones(n, dtype=bool)
    first[1:] = voxel_of[order][1:] != voxel_of[order][:-1]
    keep = np.sort(order[first])
    if len(keep) > max_vertices:
        keep = keep[np.linspace(0, len(keep) - 1, max_vertices).astype(int)]
    return FeaturedSurface(
        vertices=surface.vertices[keep],
        features=[surface.features[i] for i in keep],
        feature_dim=surface.feature_dim,
    )


def _feature_matrix(surface: FeaturedSurface):
    """Concatenate per-vertex feature sets; returns (feats, starts, vertex_ids)
    over vertices that carry at least one feature."""
    ids = [i for i, f in enumerate(surface.features) if len(f)]
    if not ids:
        raise NoFeatures("surface has no featured vertices")
    feats = np.concatenate([surface.features[i] for i in ids]).astype(np.float64)
    counts = np.array([len(surface.features[i]) for i in ids])
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return feats, starts, np.array(ids)


def feature_nn(source: FeaturedSurface, target: FeaturedSurface,
               chunk: int = 512) -> list[Correspondence]:
    """For each featured source vertex, the target vertex minimizing the
    aggregated nearest-neighbor feature distance
    sum_l min_k ||f_target^k - f_source^l||."""
    s_feats, s_starts, s_ids = _feature_matrix(source)
    t_feats, t_starts, t_ids = _feature_matrix(target)

    corr: list[Correspondence] = []
    ns = len(s_ids)
    row = 0
    for lo in range(0, ns, chunk):
        hi = min(lo + chunk, ns)
        row_hi = int(s_starts[hi]) if hi < ns else len(s_feats)
        d = cdist(s_feats[row:row_hi], t_feats)            # (rows, Mt)
        per_target = np.minimum.reduceat(d, t_starts, axis=1)   # min over k
        chunk_starts = (s_starts[lo:hi] - row).astype(int)
        agg = np.add.reduceat(per_target, chunk_starts, axis=0)  # sum over l
        best = np.argmin(agg, axis=1)
        for i, b in zip(range(lo, hi), best):
            corr.append(Correspondence(int(s_ids[i]), int(t_ids[b]), 1.0))
        row = row_hi
    return corr


def cycle_weights(corr_fwd: list[Correspondence], corr_bwd: list[Correspondence],
                  source: FeaturedSurface, tau: float) -> np.ndarray:
    """Round-trip consistency weight exp(-||v_i - v_r(i)|| / (tau * rho))
    per forward correspondence, where r chains forward then backward."""
    rho = bounding_sphere_radius(source.vertices)
    bwd = {c.source_index: c.target_index for c in corr_bwd}
    v = source.vertices.astype(np.float64)
    weights = np.empty(len(corr_fwd))
    for n, c in enumerate(corr_fwd):
        r = bwd[c.target_index]
        disp = np.linalg.norm(v[c.source_index] - v[r])
        weights[n] = np.exp(-disp / (tau * rho))
    return weights


def dist_geo(a, b) -> float:
    """Symmetric Chamfer distance: mean NN distance a->b plus b->a."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float(d_ab.mean() + d_ba.mean())


def dist_app(source_pts, target_pts, corr_fwd, corr_bwd,
             weights_fwd, weights_bwd) -> float:
    """Bi-directional appearance distance over feature-space correspondences,
    evaluated between 3D vertex locations with normalized weights."""
    source_pts = np.asarray(source_pts, dtype=float).reshape(-1, 3)
    target_pts = np.asarray(target_pts, dtype=float).reshape(-1, 3)
    total = 0.0
    for pts_a, pts_b, corr, w in (
        (source_pts, target_pts, corr_fwd, weights_fwd),
        (target_pts, source_pts, corr_bwd, weights_bwd),
    ):
        w = np.asarray(w, dtype=float)
        wsum = w.sum()
        if wsum < 1e-12:
            raise DegenerateWeights("correspondence weights sum to ~0")
        si = np.array([c.source_index for c in corr])
        ti = np.array([c.target_index for c in corr])
        d = np.linalg.norm(pts_a[si] - pts_b[ti], axis=1)
        total += float((w / wsum) @ d)
    return total


class AlignmentProblem:
    """Caches feature correspondences and cycle weights for one surface pair;
    feature matches are transform-invariant, only 3D locations move."""

    def __init__(self, source: FeaturedSurface, target: FeaturedSurface,
                 config: AlignConfig):
        self.config = config
        self.source = voxel_downsample(source, config.max_vertices)
        self.target = voxel_downsample(target, config.max_vertices)
        self.src_pts = self.source.vertices.astype(np.float64)
        self.tgt_pts = self.target.vertices.astype(np.float64)
        self.rho = bounding_sphere_radius(self.src_pts)
        self.tgt_tree = cKDTree(self.tgt_pts)

        self.corr_fwd = feature_nn(self.source, self.target)
        self.corr_bwd = feature_nn(self.target, self.source)
        self.w_fwd = cycle_weights(self.corr_fwd, self.corr_bwd, self.source,
                                   config.cycle_tau)
        self.w_bwd = cycle_weights(self.corr_bwd, self.corr_fwd, self.target,
                                   config.cycle_tau)

        self._fwd_si = np.array([c.source_index for c in self.corr_fwd])
        self._fwd_ti = np.array([c.target_index for c in self.corr_fwd])
        self._bwd_si = np.array([c.source_index for c in self.corr_bwd])
        self._bwd_ti = np.array([c.target_index for c in self.corr_bwd])
        self._wn_fwd = self.w_fwd / self.w_fwd.sum() if self.w_fwd.sum() > 1e-12 else None
        self._wn_bwd = self.w_bwd / self.w_bwd.sum() if self.w_bwd.sum() > 1e-12 else None
        if self._wn_fwd is None or self._wn_bwd is None:
            raise DegenerateWeights("cycle-consistency weights sum to ~0")

    def total_distance(self, transform: SimilarityTransform) -> float:
        moved = apply_transform(transform, self.src_pts)
        alpha = self.config.alpha
        geo = dist_geo(moved, self.tgt_pts) if alpha < 1.0 else 0.0
        app = self._dist_app(moved) if alpha > 0.0 else 0.0
        value = (1.0 - alpha) * geo + alpha * app
        if not np.isfinite(value):
            raise NonFiniteObjective("objective is not finite")
        return value

    def _dist_app(self, moved: np.ndarray) -> float:
        d_fwd = np.linalg.norm(moved[self._fwd_si] - self.tgt_pts[self._fwd_ti], axis=1)
        d_bwd = np.linalg.norm(self.tgt_pts[self._bwd_si] - moved[self._bwd_ti], axis=1)
        return float(self._wn_fwd @ d_fwd + self._wn_bwd @ d_bwd)

    def gradient(self, transform: SimilarityTransform) -> np.ndarray:
        """Gradient of total_distance at `transform` in the local tangent
        parametrization (omega, dt, dlog_s), nearest-neighbor assignments
        held fixed at their current values."""
        moved = apply_transform(transform, self.src_pts)
        alpha = self.config.alpha
        u = np.zeros_like(moved)   # dE/dp' per transformed source point

        if alpha < 1.0:
            d_st, nn_st = self.tgt_tree.query(moved)
            diff = moved - self.tgt_pts[nn_st]
            safe = d_st > 1e-12
            u[safe] += (1.0 - alpha) / len(moved) * diff[safe] / d_st[safe, None]

            d_ts, nn_ts = cKDTree(moved).query(self.tgt_pts)
            diff = moved[nn_ts] - self.tgt_pts
            safe = d_ts > 1e-12
            contrib = np.zeros_like(moved)
            np.add.at(contrib, nn_ts[safe],
                      (1.0 - alpha) / len(self.tgt_pts)
                      * diff[safe] / d_ts[safe, None])
            u += contrib

        if alpha > 0.0:
            diff = moved[self._fwd_si] - self.tgt_pts[self._fwd_ti]
            d = np.linalg.norm(diff, axis=1)
            safe = d > 1e-12
            contrib = np.zeros_like(moved)
            np.add.at(contrib, self._fwd_si[safe],
                      alpha * self._wn_fwd[safe, None] * diff[safe] / d[safe, None])
            u += contrib

            diff = moved[self._bwd_ti] - self.tgt_pts[self._bwd_si]
            d = np.linalg.norm(diff, axis=1)
            safe = d > 1e-12
            contrib = np.zeros_like(moved)
            np.add.at(contrib, self._bwd_ti[safe],
                      alpha * self._wn_bwd[safe, None] * diff[safe] / d[safe, None])
            u += contrib

        lever = moved - transform.translation
        g_omega = np.cross(lever, u).sum(axis=0)
        g_t = u.sum(axis=0)
        g_logs = float(np.einsum("ij,ij->", u, lever))
        return np.concatenate([g_omega, g_t, [g_logs]])


def total_distance(source: FeaturedSurface, target: FeaturedSurface,
                   transform: SimilarityTransform, config: AlignConfig) -> float:
    return AlignmentProblem(source, target, config).total_distance(transform)


def umeyama_similarity(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform:
    """Closed-form least-squares similarity aligning src points onto dst."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    ds = src - mu_s
    dd = dst - mu_d
    cov = dd.T @ ds / len(src)
    u, d, vt = np.linalg.svd(cov)
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1.0
    rotation = u @ s @ vt
    var_s = np.einsum("ij,ij->", ds, ds) / len(src)
    if var_s < 1e-18:
        raise DegenerateSample("zero-variance source sample")
    scale = float((d * np.diag(s)).sum() / var_s)
    translation = mu_d - scale * rotation @ mu_s
    return SimilarityTransform(orthonormalize(rotation), translation,
                               max(scale, 1e-12))


class DegenerateSample(AlignError):
    pass


def ransac_init(source: FeaturedSurface, target: FeaturedSurface,
                corr: list[Correspondence], weights: np.ndarray,
                config: AlignConfig, seed: int = 0) -> SimilarityTransform:
    """Weighted 3-point RANSAC over the given correspondences, returning the
    hypothesis with most inliers refit on its inlier set."""
    weights = np.asarray(weights, dtype=float)
    active = weights > 0
    if active.sum() < 3:
        raise TooFewCorrespondences("need >= 3 correspondences with weight > 0")
    src_all = source.vertices.astype(np.float64)
    tgt_all = target.vertices.astype(np.float64)
    si = np.array([c.source_index for c in corr])
    ti = np.array([c.target_index for c in corr])
    p = src_all[si]
    q = tgt_all[ti]
    rho = bounding_sphere_radius(src_all)
    thr = config.inlier_threshold * rho

    rng = np.random.default_rng(seed)
    prob = np.where(active, weights, 0.0)
    prob = prob / prob.sum()
    n = len(corr)

    # Batched hypothesis generation: sample all triplets, solve 3-point
    # similarity via batched SVD, count inliers in blocks.
    iters = config.ransac_iters
    triplets = np.stack([rng.choice(n, size=3, replace=False, p=prob)
                         for _ in range(iters)])
    ps = p[triplets]                       # (K, 3, 3)
    qs = q[triplets]
    mu_p = ps.mean(axis=1, keepdims=True)
    mu_q = qs.mean(axis=1, keepdims=True)
    dp = ps - mu_p
    dq = qs - mu_q
    cov = np.einsum("kij,kil->kjl", dq, dp) / 3.0   # (K, 3, 3) dst^T src
    u, d, vt = np.linalg.svd(cov)
    det = np.linalg.det(u) * np.linalg.det(vt)
    sfix = np.ones((iters, 3))
    sfix[det < 0, 2] = -1.0
    rot = np.einsum("kij,kj,kjl->kil", u, sfix, vt)
    var_p = np.einsum("kij,kij->k", dp, dp) / 3.0
    # 3 centered points span at most a plane, so rank 2 is the regular case;
    # collinear samples drop to rank <= 1.
    degenerate = d[:, 1] <= 1e-9 * np.maximum(d[:, 0], 1e-300)
    degenerate |= var_p < 1e-18
    scale = np.where(var_p > 1e-18, (d * sfix).sum(axis=1) / np.maximum(var_p, 1e-300), 1.0)
    trans = mu_q[:, 0, :] - scale[:, None] * np.einsum("kij,kj->ki", rot, mu_p[:, 0, :])

    best_count = -1
    best_idx = -1
    block = 256
    for lo in range(0, iters, block):
        hi = min(lo + block, iters)
        moved = (scale[lo:hi, None, None]
                 * np.einsum("kij,nj->kni", rot[lo:hi], p)
                 + trans[lo:hi, None, :])
        resid = np.linalg.norm(moved - q[None], axis=2)
        counts = (resid < thr).sum(axis=1)
        counts[degenerate[lo:hi]] = -1
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count = int(counts[k])
            best_idx = lo + k
    if best_count < 0:
        raise DegenerateSample("all RANSAC samples were degenerate")

    best = SimilarityTransform(orthonormalize(rot[best_idx]), trans[best_idx],
                               max(float(scale[best_idx]), 1e-12))
    resid = np.linalg.norm(apply_transform(best, p) - q, axis=1)
    inliers = resid < thr
    if inliers.sum() >= 3:
        try:
            best = umeyama_similarity(p[inliers], q[inliers])
        except DegenerateSample:
            pass
    return best


def _step(t: SimilarityTransform, direction: np.ndarray,
          gamma: float) -> SimilarityTransform:
    omega = gamma * direction[:3]
    dt = gamma * direction[3:6]
    dlogs = gamma * direction[6]
    rotation = orthonormalize(axis_angle_to_matrix(omega) @ t.rotation)
    scale = float(np.clip(t.scale * np.exp(dlogs), SCALE_MIN, SCALE_MAX))
    return SimilarityTransform(rotation, t.translation + dt, scale)


def refine(t0: SimilarityTransform, source: FeaturedSurface,
           target: FeaturedSurface, config: AlignConfig,
           problem: AlignmentProblem | None = None
           ) -> tuple[SimilarityTransform, float]:
    """First-order descent on total_distance with backtracking line search.

    Rotation increments act multiplicatively on the manifold; scale moves in
    log space and is clamped to [0.1, 10]. Never returns an objective above
    the one at t0."""
    if problem is None:
        problem = AlignmentProblem(source, target, config)
    t = t0
    f = problem.total_distance(t)
    best_t, best_f = t, f
    stall = 0
    for _ in range(config.refine_max_iters):
        g = problem.gradient(t)
        gnorm = np.linalg.norm(g)
        if gnorm < 1e-15:
            break
        direction = -g / gnorm
        gamma = 1e-2
        accepted = False
        for _ in range(20):
            cand = _step(t, direction, gamma)
            fc = problem.total_distance(cand)
            if fc < f:
                accepted = True
                break
            gamma *= 0.5
        if not accepted:
            break
        rel = (f - fc) / max(f, 1e-300)
        t, f = cand, fc
        if f < best_f:
            best_t, best_f = t, f
        stall = stall + 1 if rel < config.refine_tol else 0
        if stall >= 10:
            break
    return best_t, best_f


def align(instance: FeaturedSurface, reference: FeaturedSurface,
          config: AlignConfig | None = None, seed: int = 0
          ) -> tuple[SimilarityTransform, float]:
    """Full alignment of an instance surface onto its reference:
    feature NN both ways -> cycle weights -> RANSAC -> gradient refinement."""
    if config is None:
        config = AlignConfig()
    problem = AlignmentProblem(instance, reference, config)
    t0 = ransac_init(problem.source, problem.target, problem.corr_fwd,
                     problem.w_fwd, config, seed=seed)
    t, score = refine(t0, problem.source, problem.target, config, problem=problem)
    return t, score
