"""Self-contained verification suite behind the `verify` CLI command.

Each check re-derives its expected values through an independent route
(finite differences, brute-force oracles, closed-form identities) and
reports the measured worst case next to its tolerance. `perturb_gradient`
deliberately corrupts one analytic gradient so the negative control can
demonstrate that a real defect is caught.
"""

import numpy as np

from . import inference, metrics, objectives
from .numcore import Rng, finite_diff_grad, l2_normalize, sigmoid
from .synthpipe.aweight import SR
from .synthpipe.render import rms_relabel

CLIP_SAMPLES = 10 * SR


def _check(name: str, measured: float, tolerance: float, detail: str = "",
           exact: bool = False) -> dict:
    passed = measured == 0.0 if exact else measured <= tolerance
    return {"name": name, "passed": bool(passed),
            "tolerance": "exact" if exact else tolerance,
            "measured": float(measured), "detail": detail}


def _rel_err(got: np.ndarray, want: np.ndarray) -> float:
    scale = np.abs(want).max() + 1e-12
    return float(np.abs(got - want).max() / scale)


def check_gradients(perturb: bool = False) -> dict:
    """Analytic vs central finite-difference gradients for all four losses."""
    worst = 0.0
    n_instances = 0
    for seed in range(3):
        rng = Rng(seed).stream("verify/grad", 0)
        b, k, length, dim = 3, 4, 5, 6
        ea = l2_normalize(rng.normal(size=(b, dim)))
        et = l2_normalize(rng.normal(size=(b, dim)))

        loss, d_ea, d_et, d_alpha = objectives.clip_loss(ea, et, 7.0)
        if perturb:
            d_ea = d_ea.copy()
            d_ea[0, 0] += 1e-3
        fd = finite_diff_grad(lambda v: objectives.clip_loss(
            v.reshape(b, dim), et, 7.0)[0], ea)
        worst = max(worst, _rel_err(d_ea, fd.reshape(b, dim)))
        fd = finite_diff_grad(lambda v: objectives.clip_loss(
            ea, et, float(v[0]))[0], np.array([7.0]))
        worst = max(worst, _rel_err(np.array([d_alpha]), fd))

        loss, d_ea, d_et, d_alpha, d_beta = objectives.siglip_loss(ea, et, 3.0, -1.0)
        fd = finite_diff_grad(lambda v: objectives.siglip_loss(
            ea, v.reshape(b, dim), 3.0, -1.0)[0], et)
        worst = max(worst, _rel_err(d_et, fd.reshape(b, dim)))

        frames = rng.normal(size=(b, length, dim))
        text = l2_normalize(rng.normal(size=(k, dim)))
        alpha_t = np.exp(rng.normal(0.5, 0.3, size=k))
        beta_t = rng.normal(-1.0, 1.0, size=k)
        z = np.where(rng.random((b, k, length)) < 0.3, 1, -1).astype(np.int8)
        _, d_frames, d_text, d_alpha_t, d_beta_t = objectives.sed_loss(
            frames, text, alpha_t, beta_t, z)
        fd = finite_diff_grad(lambda v: objectives.sed_loss(
            v.reshape(b, length, dim), text, alpha_t, beta_t, z)[0], frames)
        worst = max(worst, _rel_err(d_frames, fd.reshape(b, length, dim)))
        fd = finite_diff_grad(lambda v: objectives.sed_loss(
            frames, text, v, beta_t, z)[0], alpha_t)
        worst = max(worst, _rel_err(d_alpha_t, fd))

        zb = objectives.zbar(z)
        _, d_beta = objectives.prior_loss(beta_t, zb)
        fd = finite_diff_grad(lambda v: objectives.prior_loss(v, zb)[0], beta_t)
        worst = max(worst, _rel_err(d_beta, fd))
        n_instances += 6
    return _check("gradient_check", worst, 1e-4,
                  f"{n_instances} loss/parameter instances, central differences")


def check_ring_equivalence() -> dict:
    from . import ringsim
    worst = 0.0
    bitwise_gap = 0.0
    for seed in range(3):
        rng = Rng(seed).stream("verify/ring", 0)
        b, k, length, dim = 6, 14, 8, 8
        frames = rng.normal(size=(b, length, dim))
        text = l2_normalize(rng.normal(size=(k, dim)))
        alpha_t = np.exp(rng.normal(0.5, 0.3, size=k))
        beta_t = rng.normal(-2.0, 1.0, size=k)
        z = np.where(rng.random((b, k, length)) < 0.3, 1, -1).astype(np.int8)
        owner = rng.integers(0, b, size=k)
        mono = objectives.sed_loss(frames, text, alpha_t, beta_t, z)
        for n_dev in (1, 2, 4):
            ring = ringsim.ring_sed_loss(frames, text, alpha_t, beta_t, z,
                                         owner, n_dev)
            diffs = [abs(ring[0] - mono[0]) / (abs(mono[0]) + 1e-12)]
            diffs += [_rel_err(r, m) for r, m in zip(ring[1:], mono[1:])]
            if n_dev == 1:
                bitwise_gap = max(bitwise_gap, float(ring[0] != mono[0]),
                                  *[float(not np.array_equal(r, m))
                                    for r, m in zip(ring[1:], mono[1:])])
            else:
                worst = max(worst, max(diffs))
    if bitwise_gap > 0:
        return _check("ring_equivalence", np.inf, 1e-6,
                      "single-device run is not bitwise equal")
    return _check("ring_equivalence", worst, 1e-6,
                  "3 batches x devices {1,2,4}; single-device bitwise equal")


def check_tabular_optimum() -> dict:
    worst = 0.0
    for seed in range(2):
        world = objectives.uniform_mass_world(seed)
        out = objectives.tabular_sed_optimum(world)
        if not out["converged"]:
            return _check("tabular_optimum", np.inf, 1e-4, "descent did not converge")
        worst = max(worst, float(np.abs(out["table"] - world.optimal_table()).max()))
    return _check("tabular_optimum", worst, 1e-4,
                  "descent optimum vs logit(activity), 2 random worlds")


def check_tabular_decomposition() -> dict:
    worst = 0.0
    for seed in range(2):
        world = objectives.uniform_mass_world(seed)
        out = objectives.tabular_sed_optimum(world)
        a = world.activity
        post = world.p_prompt * a / (a @ world.p_prompt)[..., None]
        marg = np.einsum("xl,xly->y", world.p_frame, post)
        rhs = np.log(post / marg) + world.beta_star()
        worst = max(worst, float(np.abs(out["table"] - rhs).max()))
    return _check("tabular_decomposition", worst, 1e-2,
                  "optimal logit vs posterior-ratio + prompt bias split")


def check_classifier_identities() -> dict:
    grid = np.arange(1, 100) / 100.0
    pp, pq = np.meshgrid(grid, grid, indexing="ij")
    s = inference.exact_classifier(pp, pq)
    violations = int(np.sum(np.sign(s - 0.5) != np.sign(pp - pq)))
    return _check("classifier_identities", float(violations), 0.0,
                  "sign(s - 1/2) vs sign(p_post - p_prior), 99x99 grid",
                  exact=True)


def check_approximation_sweep() -> dict:
    r = np.arange(-1000, 1001) / 100.0
    err = float(np.max(inference.approx_classifier_error(-8.0, r)))
    return _check("approximation_sweep", err, 1e-3,
                  "rare-event shortcut vs exact classifier, r in [-10, 10]")


def check_relabel_vectors() -> dict:
    violations = 0
    # a tone with a silent second inside the labeled span: the gap must drop,
    # the sounding spans must stay
    t = np.arange(CLIP_SAMPLES) / SR
    sig = 0.5 * np.sin(2 * np.pi * 800 * t)
    sig[int(4.0 * SR):int(5.0 * SR)] = 0.0
    raw = np.zeros(500, dtype=bool)
    raw[100:350] = True
    out = rms_relabel(sig, raw)
    violations += int(out[210:240].any())
    violations += int(not out[110:190].all())
    violations += int(not out[260:340].all())
    # relabeling never invents activity
    rng = Rng(9).stream("verify/relabel", 0)
    noise = 0.1 * rng.normal(size=CLIP_SAMPLES)
    raw2 = rng.random(500) < 0.5
    out2 = rms_relabel(noise, raw2)
    violations += int(np.any(out2 & ~raw2))
    return _check("relabel_vectors", float(violations), 0.0,
                  "silent-gap gating and never-invents rules", exact=True)


def check_metric_oracles() -> dict:
    worst_exact = 0.0
    worst_close = 0.0
    rng = np.random.default_rng(123)
    for _ in range(20):
        scores = rng.integers(0, 8, size=40) / 7.0
        labels = rng.integers(0, 2, size=40)
        labels[0], labels[1] = 0, 1

        pos, neg = scores[labels == 1], scores[labels == 0]
        wins = sum(1.0 if p > q else 0.5 if p == q else 0.0
                   for p in pos for q in neg)
        want = wins / (pos.size * neg.size)
        worst_exact = max(worst_exact,
                          abs(metrics.frame_auroc(scores, labels) - want))

        pts = [(0.0, 0.0)]
        for th in sorted(set(scores.tolist()), reverse=True):
            pts.append((float(np.mean(neg >= th)), float(np.mean(pos >= th))))
        cap, area = 0.1, 0.0
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            if x1 <= cap:
                area += (x1 - x0) * (y0 + y1) / 2.0
            elif x0 < cap:
                yc = y0 + (y1 - y0) * (cap - x0) / (x1 - x0)
                area += (cap - x0) * (y0 + yc) / 2.0
        want = 0.5 * (1.0 + (area - cap * cap / 2.0) / (cap - cap * cap / 2.0))
        worst_close = max(worst_close,
                          abs(metrics.mpauc(scores, labels) - want))

        rs = metrics.average_ranks(scores) - (scores.size + 1) / 2.0
        rl = metrics.average_ranks(labels) - (scores.size + 1) / 2.0
        want = float((rs @ rl) / np.sqrt((rs @ rs) * (rl @ rl)))
        worst_close = max(worst_close,
                          abs(metrics.spearman_rho(scores, labels) - want))

        sim = rng.integers(0, 6, size=(8, 8)) / 5.0
        for k in (1, 3):
            hits = [0, 0]
            for axis, mat in enumerate((sim, sim.T)):
                for i in range(8):
                    rank = sum(1 for j in range(8)
                               if mat[i, j] > mat[i, i]
                               or (mat[i, j] == mat[i, i] and j < i))
                    hits[axis] += int(rank < k)
            want_pair = (hits[0] / 8.0, hits[1] / 8.0)
            got_pair = metrics.recall_at_k(sim, k)
            worst_exact = max(worst_exact,
                              abs(got_pair[0] - want_pair[0]),
                              abs(got_pair[1] - want_pair[1]))
    if worst_exact > 0:
        return _check("metric_oracles", np.inf, 1e-9,
                      "AUROC/recall diverged from their exact oracles")
    return _check("metric_oracles", worst_close, 1e-9,
                  "20 instances; AUROC and recall exact, MPAUC and rho close")


def check_siglip_bias() -> dict:
    b, n_batches, flip = 64, 200, 0.05
    rng = Rng(2).stream("verify/bias", 0)
    dots, labels = [], []
    for _ in range(n_batches):
        z = -np.ones((b, b))
        np.fill_diagonal(z, 1.0)
        d = z * np.where(rng.random((b, b)) < flip, -1.0, 1.0)
        dots.append(d.ravel())
        labels.append(z.ravel())
    _, beta = objectives.fit_logistic_bias(np.concatenate(dots),
                                           np.concatenate(labels))
    err = abs(beta + np.log(b - 1))
    return _check("siglip_bias", err, 0.1,
                  f"fitted bias {beta:.4f} vs -log({b - 1}) = {-np.log(b - 1):.4f}")


def run_checks(perturb_gradient: bool = False) -> list[dict]:
    return [
        check_gradients(perturb=perturb_gradient),
        check_ring_equivalence(),
        check_tabular_optimum(),
        check_tabular_decomposition(),
        check_classifier_identities(),
        check_approximation_sweep(),
        check_relabel_vectors(),
        check_metric_oracles(),
        check_siglip_bias(),
    ]


def format_report(checks: list[dict]) -> str:
    lines = []
    for c in checks:
        status = "PASS" if c["passed"] else "FAIL"
        tol = c["tolerance"]
        tol_s = tol if isinstance(tol, str) else f"{tol:.1e}"
        lines.append(f"{status}  {c['name']:<24} tolerance {tol_s:<8} "
                     f"measured {c['measured']:.3e}  {c['detail']}")
    n_fail = sum(not c["passed"] for c in checks)
    lines.append(f"{len(checks) - n_fail}/{len(checks)} checks passed")
    return "\n".join(lines)
