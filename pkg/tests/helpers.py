"""Shared builders for test corpora and finite-difference checks."""

import numpy as np

from fineehr.embed import Word2VecParams, cosine, train_word2vec
from fineehr.textprep import TokenizedNote, build_vocabulary


def adjacency_corpus(repeats=10, n_notes=20):
    """Notes of running text "a b a b ..." plus notes holding a lone "c".

    ``a`` and ``b`` always co-occur; ``c`` never shares a window with either.
    """
    ab = [TokenizedNote(str(i), "X", (("a", "b") * repeats,)) for i in range(n_notes)]
    c = [TokenizedNote(str(n_notes + i), "X", (("c",),)) for i in range(n_notes)]
    return ab + c


def adjacency_cosines(seed, dim=8, epochs=50):
    notes = adjacency_corpus()
    vocab = build_vocabulary(notes, min_count=1)
    emb = train_word2vec(notes, vocab, Word2VecParams(dim=dim, epochs=epochs, seed=seed))
    v = {t: emb.input_vectors[vocab.index[t]] for t in "abc"}
    return cosine(v["a"], v["b"]), cosine(v["a"], v["c"])


def central_difference(f, x, step=1e-5):
    """Numerical gradient of scalar ``f`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + step
        hi = f()
        x[i] = orig - step
        lo = f()
        x[i] = orig
        grad[i] = (hi - lo) / (2 * step)
    return grad


def relative_error(analytic, numeric, floor=1e-6):
    """Componentwise |a - n| / max(|a|, |n|, floor).

    The floor keeps components that are zero up to rounding from dividing
    by ~0; at step 1e-5 the difference quotient itself is only good to
    about 1e-10 absolute.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def siamese_gradient_instance(rng):
    """Random (net, pair, y, margin) with analytic and numeric gradients.

    Returns the worst componentwise relative error over all parameters.
    """
    from fineehr.siamese import SiameseNetwork, contrastive_loss, forward, pair_loss_grad

    d = int(rng.integers(2, 6))
    hidden = [int(h) for h in rng.integers(2, 9, size=int(rng.integers(1, 3)))]
    net = SiameseNetwork.initialize([d, *hidden, d], rng)
    for b in net.biases:
        b[:] = rng.normal(0, 0.3, size=b.shape)
    x_a, x_c = rng.normal(size=d), rng.normal(size=d)
    y = int(rng.integers(2))
    dist = float(np.linalg.norm(forward(net, x_a) - forward(net, x_c)))
    # keep the margin away from the kink at dist == margin
    margin = dist * (rng.uniform(1.2, 3.0) if rng.random() < 0.8 else rng.uniform(0.2, 0.8))

    def loss():
        diff = forward(net, x_a) - forward(net, x_c)
        return contrastive_loss(y, float(np.sqrt(diff @ diff)), margin)

    _, (gw, gb) = pair_loss_grad(net, x_a, x_c, y, margin)
    worst = 0.0
    for param, grad in zip(net.weights + net.biases, gw + gb):
        worst = max(worst, float(relative_error(grad, central_difference(loss, param)).max()))
    return worst


def weighting_gradient_instance(rng):
    """Random joint (weights + head) objective; worst relative gradient error."""
    from fineehr.weighting import AdmissionClassifierHead, joint_loss_grad

    n_cat, dim, hidden = int(rng.integers(1, 5)), int(rng.integers(1, 6)), int(rng.integers(1, 6))
    m = rng.normal(size=(n_cat, dim))
    m[rng.random(n_cat) < 0.25] = 0.0  # absent categories
    w = rng.normal(size=n_cat)
    head = AdmissionClassifierHead(rng.normal(size=(hidden, dim)), rng.normal(size=hidden),
                                   rng.normal(size=hidden), float(rng.normal()))
    y = float(rng.integers(2))
    out_bias = np.array([head.output_bias])

    def loss():
        head.output_bias = float(out_bias[0])
        return joint_loss_grad(w, head, m, y)[0]

    _, g_w, (g_hw, g_hb, g_ow, g_ob) = joint_loss_grad(w, head, m, y)
    pairs = [(w, g_w), (head.hidden_weights, g_hw), (head.hidden_bias, g_hb),
             (head.output_weights, g_ow), (out_bias, np.array([g_ob]))]
    worst = 0.0
    for param, grad in pairs:
        worst = max(worst, float(relative_error(grad, central_difference(loss, param)).max()))
    return worst


def two_cluster_geometry(seeds=range(5), n=60, dim=8, noise_norm=0.1, margin=1.0):
    """Train a refiner per seed on two tight clusters at +u / -u; score held-out pairs.

    Per-coordinate noise is ``noise_norm / sqrt(dim)`` so the expected
    noise norm is ``noise_norm`` times the cluster offset.  Returns the
    per-seed (raw intra, refined intra) mean distances and the fraction of
    differing-label held-out pairs at distance >= margin, pooled over seeds.
    """
    from itertools import combinations

    from fineehr.siamese import SiameseTrainParams, forward, train_category

    def draw(rng):
        u = np.zeros(dim)
        u[0] = 1.0
        labels = rng.permutation(np.arange(n) % 2)
        sigma = noise_norm / np.sqrt(dim)
        return [((2 * y - 1) * u + sigma * rng.normal(size=dim), int(y)) for y in labels]

    intra, apart = [], []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        train, held = draw(rng), draw(rng)
        net = train_category(train, SiameseTrainParams(margin=margin, seed=seed), seed=seed)
        raw = np.array([x for x, _ in held])
        ys = np.array([y for _, y in held])
        refined = np.array([forward(net, x) for x in raw])
        pairs = list(combinations(range(n), 2))
        same = [(i, j) for i, j in pairs if ys[i] == ys[j]]
        intra.append(tuple(float(np.mean([np.linalg.norm(m[i] - m[j]) for i, j in same]))
                           for m in (raw, refined)))
        apart += [np.linalg.norm(refined[i] - refined[j]) >= margin for i, j in pairs if ys[i] != ys[j]]
    return intra, float(np.mean(apart))
