"""End-to-end acceptance checks for the sphere-code pipeline.

Each class pins one observable property of the system: gradient
correctness against finite differences, known optima on the circle,
the single-token reduction to a cosine-softmax classifier, tokenizer
invariants at scale, the minority-collapse contrast between the
trained baseline and count-independent code vectors, classifier-size
scaling, full-pipeline learning on separable data, and the two
ablation directions (balance term on, code length above minimal).

Thresholds and seeds were calibrated once with pilot runs and are
frozen here; loosening them is a regression, not a fix.
"""

import time

import numpy as np

from spherecode import (
    BaselineConfig,
    UniformityConfig,
    gen_identities,
    init_centroids,
    optimize_code_vectors,
    separation_metrics,
    suggest_length,
    uniformity_loss,
    uniformity_grad,
)
from spherecode.baseline import ce_forward, ce_grad_decompose, train_baseline
from spherecode.data import (
    EmbeddingProvider,
    IdentitySampler,
    per_class_mean_init,
    sample_longtail,
)
from spherecode.model import (
    TokenHeads,
    TrainConfig,
    _forward_backward,
    code_matrix,
    embed,
    grad_ar,
    loss_ar,
    loss_total,
    mean_alignment,
    predict_identities,
    train_code_model,
)
from spherecode.nets import Mlp
from spherecode.sphere import normalize, pairwise_sq_dists
from spherecode.tokenizer import (
    TokenizerConfig,
    _min_alphabet,
    assign_codes,
    build_code_tree,
    cosine_objective,
    decode,
    spherical_kmeans,
)
from spherecode.costs import fc_profile, gif_profile, scaling_table


def central_diff(fn, arr, idx, eps=1e-6):
    """Two-sided difference of fn() along one coordinate of arr."""
    old = arr[idx]
    arr[idx] = old + eps
    hi = fn()
    arr[idx] = old - eps
    lo = fn()
    arr[idx] = old
    return (hi - lo) / (2.0 * eps)


def random_codes(m, l, v, rng):
    """Injective identity -> code table drawn uniformly from the code space."""
    flat = rng.choice(v**l, size=m, replace=False)
    table = {}
    for ident, f in enumerate(flat):
        code = []
        for _ in range(l):
            code.append(int(f % v))
            f //= v
        table[ident] = tuple(code)
    return table


class TestGradientSuite:
    """Analytic gradients match central finite differences at 1e-4."""

    def test_uniformity_gradient(self):
        t0 = time.time()
        for inst in range(60):
            rng = np.random.default_rng(inst)
            m = int(rng.integers(4, 33))
            d = int(rng.integers(3, 9))
            t = float(rng.choice([1.0, 2.0, 3.5]))
            h = normalize(rng.normal(size=(m, d)))
            if inst % 2 == 0:
                rows = None
            else:
                rows = rng.choice(m, size=int(rng.integers(1, m)), replace=False)
            grad = uniformity_grad(h, rows, t=t, tangent=False)
            fd = np.empty_like(grad)
            for i in range(m):
                for j in range(d):
                    fd[i, j] = central_diff(
                        lambda: uniformity_loss(h, rows, t=t), h, (i, j)
                    )
            assert np.allclose(grad, fd, rtol=1e-4, atol=1e-6), f"instance {inst}"
        assert time.time() - t0 < 15.0

    def test_alignment_gradient(self):
        t0 = time.time()
        for inst in range(50):
            rng = np.random.default_rng(100 + inst)
            d = int(rng.integers(3, 9))
            z = rng.normal(size=d)
            h_y = normalize(rng.normal(size=(1, d)))[0]
            grad = grad_ar(z, h_y)
            fd = np.empty_like(grad)
            for j in range(d):
                fd[j] = central_diff(lambda: loss_ar(z, h_y), z, (j,))
            assert np.allclose(grad, fd, rtol=1e-4, atol=1e-6), f"instance {inst}"
        assert time.time() - t0 < 15.0

    def test_token_ce_through_heads_and_backbone(self):
        # Full-chain parameter gradients of the token cross-entropy, probed
        # at a few coordinates of every weight tensor per instance.
        t0 = time.time()
        for inst in range(50):
            rng = np.random.default_rng(200 + inst)
            l = 1 + inst % 3
            v = int(rng.integers(2, 6))
            m = int(rng.integers(2, min(32, v**l) + 1))
            d = int(rng.integers(3, 9))
            feat = int(rng.integers(3, 9))
            hidden_layers = 2 if inst % 2 == 0 else 0
            dims = [feat, d] if inst % 4 < 2 else [feat, 6, d]

            backbone = Mlp(dims, normalize_output=True, rng=rng)
            heads = TokenHeads(l, v, d, scale=16.0,
                               hidden_layers=hidden_layers, seed=int(rng.integers(1 << 30)))
            codes = code_matrix(random_codes(m, l, v, rng), m, l)
            h_vec = normalize(rng.normal(size=(m, d)))
            lambdas = np.full(l, 1.0 / l)
            labels = rng.integers(0, m, size=3)
            # Finite differences need a differentiable point: redraw inputs
            # that shut off an entire ReLU layer (zero row entering a
            # normalization) anywhere along the chain.
            for _ in range(50):
                x = rng.normal(size=(3, feat))
                z = backbone.forward(x)[0]
                if np.linalg.norm(z, axis=1).min() <= 0.5:
                    continue
                _, caches = heads.forward(z)
                if min(np.linalg.norm(q, axis=1).min() for q, _ in caches) > 0.5:
                    break
            else:
                raise AssertionError(f"instance {inst}: no differentiable draw")

            def loss():
                stats, _ = _forward_backward(
                    backbone, heads, x, labels, codes, h_vec,
                    lambdas, 0.0, compute_grads=False,
                )
                return stats["loss"]

            _, grads = _forward_backward(
                backbone, heads, x, labels, codes, h_vec,
                lambdas, 0.0, compute_grads=True,
            )
            params = backbone.params() + heads.params()
            assert len(params) == len(grads)
            for p, g in zip(params, grads):
                flat = p.reshape(-1)
                for k in rng.choice(flat.size, size=min(3, flat.size), replace=False):
                    fd = central_diff(loss, flat, int(k))
                    an = g.reshape(-1)[int(k)]
                    assert abs(an - fd) <= 1e-4 * max(abs(fd), 1e-2), (
                        f"instance {inst}: analytic {an} vs fd {fd}"
                    )
        assert time.time() - t0 < 15.0

    def test_baseline_gradient(self):
        t0 = time.time()
        for inst in range(50):
            rng = np.random.default_rng(300 + inst)
            m = int(rng.integers(3, 33))
            d = int(rng.integers(3, 9))
            b = int(rng.integers(2, 17))
            scale = float(rng.choice([1.0, 4.0, 16.0]))
            z = normalize(rng.normal(size=(b, d)))
            w = normalize(rng.normal(size=(m, d)))
            labels = rng.integers(0, m, size=b)
            grad, _ = ce_grad_decompose(z, labels, w, scale)

            def total():
                losses, _ = ce_forward(z, w, scale, labels)
                return float(np.sum(losses))

            fd = np.empty_like(w)
            for i in range(m):
                for j in range(d):
                    fd[i, j] = central_diff(total, w, (i, j))
            assert np.allclose(grad, fd, rtol=1e-4, atol=1e-6), f"instance {inst}"
        assert time.time() - t0 < 15.0


class TestCircleOptimum:
    """On the circle the optimizer reaches the equal-angle configuration."""

    def test_matches_equal_angle_reference(self):
        t0 = time.time()
        for m in [3, 4, 5, 6, 8]:
            ang = 2 * np.pi * np.arange(m) / m
            ref = np.stack([np.cos(ang), np.sin(ang)], axis=1)
            ref_loss = uniformity_loss(ref, t=2.0)
            sq = pairwise_sq_dists(ref, ref)
            np.fill_diagonal(sq, np.inf)
            ref_min = float(np.min(sq) / 2.0)  # 1 - cos of nearest pair

            rng = np.random.default_rng(0)
            h0 = normalize(rng.normal(size=(m, 2)))
            h = optimize_code_vectors(
                h0, UniformityConfig(t=2.0, row_batch=m, lr=0.05, epochs=2000, seed=0)
            )
            loss = uniformity_loss(h, t=2.0)
            sq = pairwise_sq_dists(h, h)
            np.fill_diagonal(sq, np.inf)
            min_dist = float(np.min(sq) / 2.0)

            assert abs(loss - ref_loss) <= 0.01 * abs(ref_loss), f"m={m}"
            assert abs(min_dist - ref_min) <= 0.02 * ref_min, f"m={m}"
        assert time.time() - t0 < 60.0


class TestSingleTokenReduction:
    """l=1, v=m, no balance term: the code loss is the cosine softmax CE."""

    def test_equals_baseline_cross_entropy(self):
        for inst in range(100):
            rng = np.random.default_rng(inst)
            m = int(rng.integers(3, 21))
            d = int(rng.integers(3, 9))
            feat = int(rng.integers(3, 9))
            b = int(rng.integers(2, 17))
            scale = float(rng.choice([4.0, 16.0]))

            backbone = Mlp([feat, d], normalize_output=True, rng=rng)
            heads = TokenHeads(1, m, d, scale=scale, hidden_layers=0,
                               seed=int(rng.integers(1 << 30)))
            w = init_centroids(m, d, seed=inst)
            heads.u[0] = w.T.copy()
            codes = {i: (i,) for i in range(m)}

            x = rng.normal(size=(b, feat))
            labels = rng.integers(0, m, size=b)
            cfg = TrainConfig(gamma_balance=0.0)
            got = loss_total(backbone, heads, x, labels, w, codes, cfg)

            z = embed(backbone, x)
            losses, _ = ce_forward(z, w, scale, labels)
            assert abs(got - float(np.mean(losses))) <= 1e-8, f"instance {inst}"


class TestTokenizerProperties:
    """Codes are injective, decodable, and respect per-level capacity."""

    def test_random_instances(self):
        for inst in range(200):
            rng = np.random.default_rng(inst)
            if inst == 0:
                m, l = 512, 3
            else:
                m = int(2 ** rng.uniform(1.0, 9.0))
                l = int(rng.integers(1, 4))
            d = int(rng.integers(3, 17))
            v = _min_alphabet(m, l) + int(rng.integers(0, 2))
            h = init_centroids(m, d, seed=inst)

            tree = build_code_tree(h, TokenizerConfig(l=l, v=v, seed=inst))
            codes = assign_codes(tree)
            assert len(codes) == m
            assert len(set(codes.values())) == m, f"instance {inst}: codes collide"
            for ident, code in codes.items():
                assert len(code) == l
                assert all(0 <= c < v for c in code)
                assert decode(tree, code) == ident
            for path, node in tree.nodes():
                assert len(node.members) <= v ** (l - len(path)), (
                    f"instance {inst}: node {path} over capacity"
                )

    def test_small_clustering_matches_brute_force(self):
        # Exhaustive bipartition oracle: centroids at the normalized side
        # means, objective = total cosine similarity to the own centroid.
        def brute_best(points):
            n = points.shape[0]
            best = -np.inf
            for mask in range(1, 2**n - 1):
                sides = np.array([(mask >> i) & 1 for i in range(n)])
                obj = 0.0
                for s in (0, 1):
                    pts = points[sides == s]
                    c = pts.sum(axis=0)
                    norm = np.linalg.norm(c)
                    if norm > 1e-12:
                        obj += float(np.sum(pts @ (c / norm)))
                best = max(best, obj)
            return best

        for inst in range(20):
            rng = np.random.default_rng(1000 + inst)
            n = int(rng.integers(4, 9))
            d = int(rng.integers(2, 6))
            points = normalize(rng.normal(size=(n, d)))
            assign, centroids = spherical_kmeans(points, 2, seed=inst)
            got = cosine_objective(points, assign, centroids)
            want = brute_best(points)
            assert abs(got - want) <= 1e-9, f"instance {inst}: {got} vs {want}"


class TestMinorityCollapseContrast:
    """Long-tail training collapses baseline centroids; code vectors cannot
    collapse because they never see the sample counts."""

    def test_collapse_and_count_independence(self):
        t0 = time.time()
        m, d = 64, 32
        sampler = gen_identities(m, d, 8.0, seed=0)
        balanced = sample_longtail(sampler, 1.0, 100, 100, seed=0)
        longtail = sample_longtail(sampler, 0.25, 100, 2, seed=0)
        assert longtail.n_head == 16

        w0 = init_centroids(m, d, seed=0)
        cfg = BaselineConfig(scale=4.0, lr=0.05, batch_size=64, seed=0)
        res_bal = train_baseline(balanced, w0, 40, cfg)
        res_tail = train_baseline(longtail, w0, 40, cfg)

        # trajectory reports carry min pairwise cosine distance (1 - cos)
        cos_bal = res_bal.trajectory[-1].min_dist
        cos_tail = res_tail.trajectory[-1].min_dist
        assert cos_tail < 0.5 * cos_bal, (
            f"no collapse: balanced {cos_bal:.4f}, long-tail {cos_tail:.4f}"
        )  # pilot: 0.569 vs 0.104

        # The code-vector route consumes (m, d, seed) only, so the balanced
        # and imbalanced runs produce bit-identical vectors.
        h_bal = optimize_code_vectors(
            init_centroids(m, d, seed=0), UniformityConfig(epochs=60, seed=0)
        )
        h_tail = optimize_code_vectors(
            init_centroids(m, d, seed=0), UniformityConfig(epochs=60, seed=0)
        )
        assert np.array_equal(h_bal, h_tail)
        assert time.time() - t0 < 600.0


class TestScalingTable:
    """Classifier size grows x10 per decade for fc but stays near-flat for
    the multi-token head."""

    def test_growth_rates(self):
        ms = [10**3, 10**4, 10**5, 10**6, 10**7]
        rows = scaling_table(ms, d=512)
        fc = [r for r in rows if r.method == "fc"]
        gif = [r for r in rows if r.method.startswith("gif")]
        assert len(fc) == len(gif) == 5
        for prev, cur in zip(fc, fc[1:]):
            assert cur.params == 10 * prev.params
        for prev, cur in zip(gif, gif[1:]):
            assert cur.params / prev.params <= 2.0, (
                f"{prev.method}@{prev.m} -> {cur.method}@{cur.m}"
            )

    def test_million_identity_code_size(self):
        profile = gif_profile(10**6, 512, l=6, v=10)
        assert profile.params == 30_720
        assert fc_profile(10**6, 512).params == 512_000_000


def _pipeline_accuracy(protos, seed, shuffled, optimize, init):
    """Train on separable data and report closed-set accuracy on fresh draws.

    ``shuffled=True`` with ``optimize=False`` and random init is the
    atomic-code ablation: codes carry no geometric relation to identities.
    """
    m, d = protos.shape
    shape = suggest_length(m)
    sampler = IdentitySampler(prototypes=protos, dispersion=8.0)
    ds = sample_longtail(sampler, 1.0, 50, 50, seed=seed)
    ev = sample_longtail(sampler, 1.0, 20, 20, seed=seed + 1000)
    if init == "mean":
        h0 = per_class_mean_init(EmbeddingProvider.from_features(ds), ds)
    else:
        h0 = init_centroids(m, d, seed=seed + 7)
    h = optimize_code_vectors(h0, UniformityConfig(epochs=60, seed=seed)) if optimize else h0
    tree = build_code_tree(h, TokenizerConfig(l=shape.l, v=shape.v, seed=seed))
    codes = assign_codes(tree)
    if shuffled:
        perm = np.random.default_rng(seed).permutation(m)
        codes = {i: codes[int(perm[i])] for i in range(m)}
    cfg = TrainConfig(epochs=40, batch_size=64, lr=0.05, backbone_hidden=(64, 64), seed=seed)
    tm = train_code_model(ds.features, ds.labels, h, codes, cfg, l=shape.l, v=shape.v)
    z = embed(tm.backbone, ev.features)
    idents, _ = predict_identities(tm.heads, z, tree, codes)
    return float(np.mean(idents == ev.labels))


class TestEndToEndLearning:
    """Full pipeline on separable identities: near-perfect closed-set
    accuracy, while the atomic-code ablation stays near chance."""

    def test_pipeline_vs_atomic_codes(self):
        t0 = time.time()
        sampler = gen_identities(64, 32, 8.0, seed=8)
        protos = sampler.prototypes
        assert separation_metrics(protos).min_dist >= 0.5

        acc = _pipeline_accuracy(protos, 0, shuffled=False, optimize=True, init="mean")
        assert acc >= 0.95, f"pipeline accuracy {acc:.3f}"  # pilot: 0.959-0.970

        acc_atomic = _pipeline_accuracy(protos, 0, shuffled=True, optimize=False, init="random")
        assert acc_atomic < 0.40, f"atomic ablation {acc_atomic:.3f}"  # pilot: <= 0.016
        assert time.time() - t0 < 300.0


def _train_arm(m, d, proto_seed, n_train, l, v, epochs, gamma, seed=0):
    protos = gen_identities(m, d, 8.0, seed=proto_seed).prototypes
    sampler = IdentitySampler(prototypes=protos, dispersion=8.0)
    ds = sample_longtail(sampler, 1.0, n_train, n_train, seed=seed)
    h0 = per_class_mean_init(EmbeddingProvider.from_features(ds), ds)
    h = optimize_code_vectors(h0, UniformityConfig(epochs=60, seed=seed))
    tree = build_code_tree(h, TokenizerConfig(l=l, v=v, seed=seed))
    codes = assign_codes(tree)
    cfg = TrainConfig(epochs=epochs, batch_size=64, lr=0.05, gamma_balance=gamma,
                      backbone_hidden=(64, 64), seed=seed)
    return train_code_model(ds.features, ds.labels, h, codes, cfg, l=l, v=v), ds, h


def _verification_accuracy(backbone, d, n_id=256, n_per=6, proto_seed=99, seed=5):
    """Best-threshold pair-verification accuracy on identities never trained on."""
    protos = gen_identities(n_id, d, 8.0, seed=proto_seed).prototypes
    sampler = IdentitySampler(prototypes=protos, dispersion=8.0)
    ds = sample_longtail(sampler, 1.0, n_per, n_per, seed=seed)
    z = embed(backbone, ds.features)
    rng = np.random.default_rng(seed)
    by_label = {}
    for i, lab in enumerate(ds.labels):
        by_label.setdefault(int(lab), []).append(i)
    pos, neg = [], []
    for lab, idx in by_label.items():
        for _ in range(3):
            a, b = rng.choice(idx, size=2, replace=False)
            pos.append(z[a] @ z[b])
    labs = list(by_label)
    for _ in range(len(pos)):
        la, lb = rng.choice(len(labs), size=2, replace=False)
        a = rng.choice(by_label[labs[la]])
        b = rng.choice(by_label[labs[lb]])
        neg.append(z[a] @ z[b])
    scores = np.array(pos + neg)
    truth = np.array([1] * len(pos) + [0] * len(neg))
    best = 0.0
    for thr in scores:
        best = max(best, float(np.mean((scores >= thr) == truth)))
    return best


class TestAblationDirections:
    """The balance term tightens embedding/code-vector alignment, and the
    suggested code length beats the shortest usable one on unseen identities."""

    def test_balance_term_improves_alignment(self):
        sampler = gen_identities(64, 32, 8.0, seed=8)
        ds = sample_longtail(sampler, 1.0, 50, 50, seed=0)
        h0 = per_class_mean_init(EmbeddingProvider.from_features(ds), ds)
        h = optimize_code_vectors(h0, UniformityConfig(epochs=60, seed=0))
        tree = build_code_tree(h, TokenizerConfig(l=2, v=8, seed=0))
        codes = assign_codes(tree)
        align = {}
        for gamma in (0.0, 1.0):
            cfg = TrainConfig(epochs=20, batch_size=64, lr=0.05, gamma_balance=gamma,
                              backbone_hidden=(64, 64), seed=0)
            tm = train_code_model(ds.features, ds.labels, h, codes, cfg, l=2, v=8)
            align[gamma] = mean_alignment(tm.backbone, ds.features, ds.labels, h)
        assert align[1.0] > align[0.0], f"alignment {align}"  # pilot: 0.733 vs 0.006

    def test_suggested_length_beats_minimal_l2(self):
        m, d = 512, 32
        shape = suggest_length(m)
        assert shape.l > 2
        v2 = _min_alphabet(m, 2)
        tm_s, _, _ = _train_arm(m, d, 3, 12, shape.l, shape.v, 30, gamma=1.0)
        tm_2, _, _ = _train_arm(m, d, 3, 12, 2, v2, 30, gamma=1.0)
        acc_s = _verification_accuracy(tm_s.backbone, d)
        acc_2 = _verification_accuracy(tm_2.backbone, d)
        assert acc_s > acc_2, (
            f"suggested (l={shape.l},v={shape.v}) {acc_s:.4f} "
            f"vs l=2 (v={v2}) {acc_2:.4f}"
        )  # pilot: 0.9238 vs 0.9095
