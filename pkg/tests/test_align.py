import numpy as np
import pytest

from canon9d.align import (
    AlignConfig,
    AlignmentProblem,
    Correspondence,
    DegenerateWeights,
    TooFewCorrespondences,
    align,
    bounding_sphere_radius,
    cycle_weights,
    dist_app,
    dist_geo,
    feature_nn,
    ransac_init,
    refine,
    total_distance,
    umeyama_similarity,
)
from canon9d.core import (
    FeaturedSurface,
    SimilarityTransform,
    apply_transform,
    axis_angle_to_matrix,
    compose,
    geodesic_distance,
    orthonormalize,
    rotation_about_axis,
)
from conftest import featured_blob, make_surface, random_rotation

FAST = AlignConfig(ransac_iters=256, refine_max_iters=200)


def random_sim3(rng, scale_range=(0.5, 2.0)):
    return SimilarityTransform(random_rotation(rng), rng.normal(size=3),
                               rng.uniform(*scale_range))


def transformed_copy(surface, t, noise=0.0, rng=None):
    verts = apply_transform(t, surface.vertices)
    if noise > 0:
        verts = verts + rng.normal(scale=noise, size=verts.shape)
    return FeaturedSurface(vertices=verts.astype(np.float32),
                           features=surface.features,
                           feature_dim=surface.feature_dim)


class TestFeatureNN:
    def test_self_match_is_identity(self, rng):
        s = featured_blob(rng, n=40)
        corr = feature_nn(s, s)
        assert all(c.source_index == c.target_index for c in corr)

    def test_matches_brute_force(self, rng):
        for _ in range(20):
            a = make_surface(rng, n=int(rng.integers(3, 10)), dim=4,
                             feats_per_vertex=(1, 3))
            b = make_surface(rng, n=int(rng.integers(3, 10)), dim=4,
                             feats_per_vertex=(1, 3))
            corr = feature_nn(a, b)
            for c in corr:
                fi = a.features[c.source_index].astype(np.float64)
                best_j, best_val = None, np.inf
                for j in range(len(b.vertices)):
                    fj = b.features[j].astype(np.float64)
                    if not len(fj):
                        continue
                    val = sum(
                        min(np.linalg.norm(fj[k] - fi[l]) for k in range(len(fj)))
                        for l in range(len(fi))
                    )
                    if val < best_val:
                        best_j, best_val = j, val
                assert c.target_index == best_j

    def test_totality_for_orthogonal_features(self, rng):
        dim = 6
        a = FeaturedSurface(
            vertices=rng.normal(size=(3, 3)).astype(np.float32),
            features=[np.eye(dim, dtype=np.float32)[i:i + 1] for i in range(3)],
            feature_dim=dim)
        b = FeaturedSurface(
            vertices=rng.normal(size=(2, 3)).astype(np.float32),
            features=[np.eye(dim, dtype=np.float32)[3 + i:4 + i] for i in range(2)],
            feature_dim=dim)
        corr = feature_nn(a, b)
        assert len(corr) == 3  # no rejection, every source vertex mapped

    def test_excludes_featureless_vertices(self, rng):
        a = make_surface(rng, n=6, dim=4, feats_per_vertex=(1, 2))
        b = FeaturedSurface(
            vertices=a.vertices,
            features=[f if i != 2 else np.zeros((0, 4), dtype=np.float32)
                      for i, f in enumerate(a.features)],
            feature_dim=4)
        corr = feature_nn(b, a)
        assert {c.source_index for c in corr} == {0, 1, 3, 4, 5}


class TestCycleWeights:
    def test_perfect_cycle_gives_ones(self, rng):
        s = featured_blob(rng, n=30)
        corr = feature_nn(s, s)
        w = cycle_weights(corr, corr, s, tau=0.1)
        assert np.allclose(w, 1.0)

    def test_analytic_tau_displacement(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 2, 0], [0, 0, 1]],
                         dtype=np.float32)
        s = FeaturedSurface(vertices=verts, features=[np.zeros((0, 1))] * 4,
                            feature_dim=1)
        rho = bounding_sphere_radius(verts)
        tau = 0.25
        # round trip 0 -> 0 -> j where ||v0 - vj|| == tau * rho
        d01 = np.linalg.norm(verts[0].astype(float) - verts[1])
        tau = d01 / rho
        fwd = [Correspondence(0, 0)]
        bwd = [Correspondence(0, 1)]
        w = cycle_weights(fwd, bwd, s, tau)
        assert np.isclose(w[0], np.exp(-1.0), atol=1e-12)

    def test_matches_direct_recomputation(self, rng):
        a = make_surface(rng, n=15, dim=4)
        b = make_surface(rng, n=12, dim=4)
        fwd = feature_nn(a, b)
        bwd = feature_nn(b, a)
        tau = 0.1
        w = cycle_weights(fwd, bwd, a, tau)
        rho = bounding_sphere_radius(a.vertices)
        bmap = {c.source_index: c.target_index for c in bwd}
        for c, wi in zip(fwd, w):
            r = bmap[c.target_index]
            d = np.linalg.norm(a.vertices[c.source_index].astype(float)
                               - a.vertices[r])
            assert np.isclose(wi, np.exp(-d / (tau * rho)), atol=1e-12)


class TestDistGeo:
    def test_identical_clouds(self, rng):
        pts = rng.normal(size=(20, 3))
        assert dist_geo(pts, pts) == 0.0

    def test_two_single_points(self):
        assert np.isclose(dist_geo([[0, 0, 0]], [[0, 3, 4]]), 10.0)

    def test_matches_brute_force(self, rng):
        for _ in range(30):
            a = rng.normal(size=(int(rng.integers(1, 50)), 3))
            b = rng.normal(size=(int(rng.integers(1, 50)), 3))
            expected = (
                np.mean([min(np.linalg.norm(p - q) for q in b) for p in a])
                + np.mean([min(np.linalg.norm(q - p) for p in a) for q in b])
            )
            assert np.isclose(dist_geo(a, b), expected, atol=1e-12)


class TestDistApp:
    def test_identity(self, rng):
        pts = rng.normal(size=(8, 3))
        corr = [Correspondence(i, i) for i in range(8)]
        w = np.ones(8)
        assert dist_app(pts, pts, corr, corr, w, w) == 0.0

    def test_rigid_translation(self, rng):
        pts = rng.normal(size=(10, 3))
        t = np.array([0.3, -0.2, 0.9])
        corr = [Correspondence(i, i) for i in range(10)]
        w = np.ones(10)
        val = dist_app(pts, pts + t, corr, corr, w, w)
        assert np.isclose(val, 2 * np.linalg.norm(t), atol=1e-12)

    def test_matches_weighted_sum_oracle(self, rng):
        a = rng.normal(size=(7, 3))
        b = rng.normal(size=(9, 3))
        fwd = [Correspondence(i, int(rng.integers(9))) for i in range(7)]
        bwd = [Correspondence(j, int(rng.integers(7))) for j in range(9)]
        wf = rng.uniform(0.1, 1.0, size=7)
        wb = rng.uniform(0.1, 1.0, size=9)
        expected = (
            sum(w * np.linalg.norm(a[c.source_index] - b[c.target_index])
                for w, c in zip(wf / wf.sum(), fwd))
            + sum(w * np.linalg.norm(b[c.source_index] - a[c.target_index])
                  for w, c in zip(wb / wb.sum(), bwd))
        )
        assert np.isclose(dist_app(a, b, fwd, bwd, wf, wb), expected, atol=1e-12)

    def test_degenerate_weights(self, rng):
        pts = rng.normal(size=(4, 3))
        corr = [Correspondence(i, i) for i in range(4)]
        with pytest.raises(DegenerateWeights):
            dist_app(pts, pts, corr, corr, np.zeros(4), np.ones(4))


class TestTotalDistance:
    def test_alpha_endpoints(self, rng):
        a = featured_blob(rng, n=40)
        b = featured_blob(rng, n=35)
        identity = SimilarityTransform.identity()
        geo_only = total_distance(a, b, identity, AlignConfig(alpha=0.0))
        assert np.isclose(geo_only, dist_geo(a.vertices, b.vertices), atol=1e-12)

        prob = AlignmentProblem(a, b, AlignConfig(alpha=1.0))
        app_only = prob.total_distance(identity)
        expected = dist_app(a.vertices.astype(float), b.vertices.astype(float),
                            prob.corr_fwd, prob.corr_bwd, prob.w_fwd, prob.w_bwd)
        assert np.isclose(app_only, expected, atol=1e-12)

    def test_zero_for_identical(self, rng):
        a = featured_blob(rng, n=30)
        for alpha in (0.0, 0.2, 1.0):
            val = total_distance(a, a, SimilarityTransform.identity(),
                                 AlignConfig(alpha=alpha))
            assert val == 0.0

    def test_nonnegative(self, rng):
        a = featured_blob(rng, n=25)
        b = featured_blob(rng, n=25)
        t = random_sim3(rng)
        assert total_distance(a, b, t, AlignConfig()) >= 0.0


class TestUmeyama:
    def test_exact_recovery(self, rng):
        for _ in range(10):
            t = random_sim3(rng)
            src = rng.normal(size=(10, 3))
            dst = apply_transform(t, src)
            got = umeyama_similarity(src, dst)
            # arccos cannot resolve angles below ~1e-8; compare entries instead
            assert np.allclose(got.rotation, t.rotation, atol=1e-9)
            assert np.isclose(got.scale, t.scale, rtol=1e-9)
            assert np.allclose(got.translation, t.translation, atol=1e-9)


class TestRansac:
    def test_exact_recovery(self, rng):
        s = featured_blob(rng, n=60)
        t = random_sim3(rng)
        target = transformed_copy(s, t)
        corr = [Correspondence(i, i) for i in range(60)]
        w = np.ones(60)
        got = ransac_init(s, target, corr, w, FAST, seed=5)
        assert geodesic_distance(got.rotation, t.rotation) < 1e-6
        assert np.isclose(got.scale, t.scale, rtol=1e-9)

    def test_outlier_robustness(self, rng):
        errors = []
        for seed in range(20):
            gen = np.random.default_rng(seed)
            s = featured_blob(gen, n=80)
            t = random_sim3(gen)
            target = transformed_copy(s, t)
            corr = []
            for i in range(80):
                if gen.uniform() < 0.7:
                    corr.append(Correspondence(i, i))
                else:
                    corr.append(Correspondence(i, int(gen.integers(80))))
            got = ransac_init(s, target, corr, np.ones(80),
                              AlignConfig(ransac_iters=512), seed=seed)
            errors.append(geodesic_distance(got.rotation, t.rotation))
        assert np.degrees(np.max(errors)) < 2.0

    def test_too_few_correspondences(self, rng):
        s = featured_blob(rng, n=10)
        corr = [Correspondence(0, 0), Correspondence(1, 1)]
        with pytest.raises(TooFewCorrespondences):
            ransac_init(s, s, corr, np.ones(2), FAST)

    def test_collinear_cloud_all_degenerate(self, rng):
        from canon9d.align import DegenerateSample
        verts = np.stack([np.linspace(0, 1, 12)] * 3, axis=1).astype(np.float32)
        s = FeaturedSurface(vertices=verts,
                            features=[np.zeros((0, 1))] * 12, feature_dim=1)
        corr = [Correspondence(i, i) for i in range(12)]
        with pytest.raises(DegenerateSample):
            ransac_init(s, s, corr, np.ones(12), AlignConfig(ransac_iters=16),
                        seed=0)


def perturb(t, delta):
    """Apply the tangent parametrization used by the refinement gradient."""
    rotation = orthonormalize(axis_angle_to_matrix(delta[:3]) @ t.rotation)
    return SimilarityTransform(rotation, t.translation + delta[3:6],
                               t.scale * np.exp(delta[6]))


class TestRefine:
    def test_already_optimal(self, rng):
        s = featured_blob(rng, n=60)
        t = random_sim3(rng)
        target = transformed_copy(s, t)
        got, obj = refine(t, s, target, FAST)
        assert obj < 1e-5  # floor set by float32 vertex storage
        assert geodesic_distance(got.rotation, t.rotation) < 1e-5

    def test_basin_recovery(self, rng):
        s = featured_blob(rng, n=120)
        t_true = random_sim3(rng, scale_range=(0.8, 1.2))
        target = transformed_copy(s, t_true)
        bump = np.zeros(7)
        axis = rng.normal(size=3)
        bump[:3] = np.deg2rad(5.0) * axis / np.linalg.norm(axis)
        bump[6] = np.log(1.05)
        t0 = perturb(t_true, bump)
        config = AlignConfig(refine_max_iters=500)
        got, obj = refine(t0, s, target, config)
        assert obj <= AlignmentProblem(s, target, config).total_distance(t0)
        assert np.degrees(geodesic_distance(got.rotation, t_true.rotation)) < 0.5
        assert abs(got.scale / t_true.scale - 1.0) < 0.005

    def test_never_increases_objective(self, rng):
        s = featured_blob(rng, n=40)
        target = featured_blob(rng, n=40)
        t0 = random_sim3(rng)
        problem = AlignmentProblem(s, target, FAST)
        _, obj = refine(t0, s, target, FAST, problem=problem)
        assert obj <= problem.total_distance(t0) + 1e-15

    def test_gradient_matches_finite_differences(self, rng):
        h = 1e-6
        for trial in range(10):
            s = featured_blob(rng, n=30)
            target = featured_blob(rng, n=28)
            problem = AlignmentProblem(s, target, AlignConfig(alpha=0.2))
            t = random_sim3(rng)
            analytic = problem.gradient(t)
            fd = np.zeros(7)
            for i in range(7):
                d = np.zeros(7)
                d[i] = h
                fd[i] = (problem.total_distance(perturb(t, d))
                         - problem.total_distance(perturb(t, -d))) / (2 * h)
            scale = np.maximum(np.abs(fd), 1e-6)
            assert np.max(np.abs(analytic - fd) / scale) < 1e-4


class TestAlign:
    def test_identity_pair(self, rng):
        s = featured_blob(rng, n=100)
        t, score = align(s, s, FAST, seed=1)
        assert score < 1e-9
        assert geodesic_distance(t.rotation, np.eye(3)) < 1e-6

    def test_noisy_transformed_copy(self, rng):
        s = featured_blob(rng, n=300)
        extent = s.vertices.max(axis=0) - s.vertices.min(axis=0)
        sigma = 0.01 * extent.mean()
        t_true = random_sim3(rng)
        inst = transformed_copy(s, t_true.inverse(), noise=sigma, rng=rng)
        got, _ = align(inst, s, FAST, seed=2)
        err = geodesic_distance(got.rotation, t_true.rotation)
        assert np.degrees(err) < 5.0

    def test_partial_overlap(self, rng):
        s = featured_blob(rng, n=300)
        t_true = random_sim3(rng)
        keep = rng.permutation(300)[:210]  # 30% dropout
        inst_full = transformed_copy(s, t_true.inverse())
        inst = FeaturedSurface(
            vertices=inst_full.vertices[keep],
            features=[inst_full.features[i] for i in keep],
            feature_dim=inst_full.feature_dim)
        got, _ = align(inst, s, FAST, seed=3)
        assert np.degrees(geodesic_distance(got.rotation, t_true.rotation)) < 10.0

    def test_equivariance_under_common_rigid_motion(self, rng):
        s = featured_blob(rng, n=150)
        t_true = random_sim3(rng)
        inst = transformed_copy(s, t_true.inverse())
        got1, _ = align(inst, s, FAST, seed=4)
        err1 = geodesic_distance(got1.rotation, t_true.rotation)

        q = SimilarityTransform(random_rotation(rng), rng.normal(size=3), 1.0)
        inst_q = transformed_copy(inst, q)
        ref_q = transformed_copy(s, q)
        got2, _ = align(inst_q, ref_q, FAST, seed=4)
        t_true_q = compose(q, compose(t_true, q.inverse()))
        err2 = geodesic_distance(got2.rotation, t_true_q.rotation)
        assert abs(err1 - err2) < 1e-3

    def test_alpha_breaks_geometric_symmetry(self, rng):
        # cube: geometrically 4-fold symmetric about z, but each face carries
        # distinct features
        n_per_face = 40
        pts, feats = [], []
        for face in range(6):
            axis, sign = divmod(face, 2)
            uv = rng.uniform(-0.5, 0.5, size=(n_per_face, 2))
            xyz = np.zeros((n_per_face, 3))
            other = [a for a in range(3) if a != axis]
            xyz[:, other] = uv
            xyz[:, axis] = 0.5 if sign else -0.5
            pts.append(xyz)
            onehot = np.zeros((n_per_face, 12))
            onehot[:, face] = 2.0
            onehot[:, 6:8] = uv
            feats.append(onehot / np.linalg.norm(onehot, axis=1, keepdims=True))
        cube = FeaturedSurface(
            vertices=np.concatenate(pts).astype(np.float32),
            features=[f.reshape(1, -1).astype(np.float32)
                      for f in np.concatenate(feats)],
            feature_dim=12)
        t_true = SimilarityTransform(
            rotation_about_axis([0, 0, 1], np.pi / 2), np.zeros(3), 1.0)
        inst = transformed_copy(cube, t_true.inverse())
        config = AlignConfig(alpha=0.2, ransac_iters=512)
        got, _ = align(inst, cube, config, seed=6)
        assert np.degrees(geodesic_distance(got.rotation, t_true.rotation)) < 5.0
