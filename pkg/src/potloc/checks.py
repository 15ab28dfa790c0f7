"""Randomised invariant suites behind ``potloc selfcheck``.

Each suite draws its instances from a seeded generator, compares the
production code against an oracle or a property, and returns a
:class:`CheckResult`. The acceptance tests call the same suites with the
instance counts and tolerances they require.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .backbone import (BackboneConfig, TemporalPyramidNet, dense_attention, window_softmax_weights,
                       windowed_attention)
from .core import Detection, GroundTruth, PointAnnotation, Proposal, PseudoLabel
from .losses import (EPS, LossWeights, PointSupervision, PseudoLabelSupervision, act_focal_loss,
                     background_seeds, bg_loss, default_top_k, enhanced_act_loss, enhanced_bg_loss,
                     mil_loss, pyramid_lengths, sample_pseudo_labels, total_loss)
from .metrics import EvalConfig, evaluate, tiou
from .postprocess import segment_candidates, temporal_nms
from .pseudolabel import RefinementConfig, generate_pseudo_labels
from .synth import (SynthConfig, gen_dataset, oracle_evaluate, oracle_pseudolabels,
                    perturb_to_noisy_proposals)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    instances: int
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"[{status}] {self.name} ({self.instances} instances, {self.seconds:.2f}s){extra}"


def _timed(name: str, fn: Callable[[], tuple[bool, int, str]]) -> CheckResult:
    t0 = time.perf_counter()
    passed, n, detail = fn()
    return CheckResult(name, passed, n, time.perf_counter() - t0, detail)


# pseudo-label refinement

def random_refinement_instance(rng: np.random.Generator, max_points: int = 8, max_proposals: int = 30):
    """Random proposals and points for one to three videos.

    Boundaries are often integers and confidences come from a small set, so
    boundary containment and confidence ties are exercised.
    """
    num_classes = int(rng.integers(1, 4))
    proposals, points, lengths = {}, {}, {}
    for v in range(int(rng.integers(1, 4))):
        vid = f"v{v}"
        T = int(rng.integers(10, 80))
        lengths[vid] = T
        pts = []
        for _ in range(int(rng.integers(0, max_points + 1))):
            pts.append(PointAnnotation.of(int(rng.integers(0, T)), int(rng.integers(num_classes)), num_classes))
        props = []
        for _ in range(int(rng.integers(0, max_proposals + 1))):
            if rng.random() < 0.5:
                s = float(rng.integers(0, T))
                e = float(min(T, s + rng.integers(1, 25)))
            else:
                s = float(rng.uniform(0, T - 1))
                e = float(min(T, s + rng.uniform(0.5, 25)))
            conf = float(rng.choice([0.25, 0.5, 0.75, 1.0])) if rng.random() < 0.5 else float(rng.random())
            props.append(Proposal(s, e, int(rng.integers(num_classes)), conf))
        proposals[vid], points[vid] = props, pts
    default = float(rng.choice([4.0, 8.0, 11.0]))
    return proposals, points, lengths, default


def check_refinement_oracle(n: int = 1000, seed: int = 0, time_limit: Optional[float] = 5.0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        instances = [random_refinement_instance(rng) for _ in range(n)]
        elapsed = 0.0
        for k, (props, pts, lengths, default) in enumerate(instances):
            t0 = time.perf_counter()
            got = generate_pseudo_labels(props, pts, RefinementConfig(default), lengths)
            elapsed += time.perf_counter() - t0
            want = oracle_pseudolabels(
                {v: [(p.start, p.end, p.label, p.confidence) for p in ps] for v, ps in props.items()},
                {v: [(p.epsilon, p.class_id) for p in ps] for v, ps in pts.items()},
                default, lengths)
            for vid, labels in got.items():
                if [(p.point, p.start, p.end, p.label) for p in labels] != want[vid]:
                    return False, k + 1, f"instance {k}, video {vid}: {labels} != {want[vid]}"
                if len(labels) != len(pts[vid]):
                    return False, k + 1, f"instance {k}: {len(labels)} labels for {len(pts[vid])} points"
                for pl, pt in zip(labels, pts[vid]):
                    if not (pl.start <= pt.epsilon <= pl.end and pl.label == pt.class_id and pl.start < pl.end):
                        return False, k + 1, f"instance {k}: {pl} violates postconditions for {pt}"
        ok = time_limit is None or elapsed < time_limit
        return ok, n, f"refinement time {elapsed:.2f}s" + ("" if ok else f" exceeds {time_limit}s")
    return _timed("pseudo-label refinement vs oracle", run)


def check_zero_noise_fixpoint(seeds: tuple[int, ...] = (0, 1, 2), num_videos: int = 20) -> CheckResult:
    def run():
        total = 0
        for seed in seeds:
            config = SynthConfig(seed=seed, num_videos=num_videos).zero_noise()
            videos = gen_dataset(config)
            proposals = {v.id: perturb_to_noisy_proposals(v, config) for v in videos}
            labels = generate_pseudo_labels(proposals, {v.id: list(v.points) for v in videos},
                                            lengths={v.id: v.T for v in videos})
            for v in videos:
                for pl, gt in zip(labels[v.id], v.ground_truth):
                    total += 1
                    if (pl.start, pl.end, pl.label) != (gt.start, gt.end, gt.label):
                        return False, total, f"{v.id}: {pl} != {gt}"
        return True, total, "all pseudo-labels equal ground truth"
    return _timed("zero-noise fixpoint", run)


# gradients

def _central_difference(f: Callable[[list[np.ndarray]], float], xs: list[np.ndarray],
                        coords: list[tuple[int, int, int]], h: float) -> list[float]:
    out = []
    for l, i, j in coords:
        orig = xs[l][i, j]
        xs[l][i, j] = orig + h
        up = f(xs)
        xs[l][i, j] = orig - h
        down = f(xs)
        xs[l][i, j] = orig
        out.append((up - down) / (2 * h))
    return out


def _gradient_error(analytic: list[np.ndarray], numeric: list[float], coords, abs_floor: float) -> float:
    """Largest relative error over entries whose absolute error exceeds ``abs_floor``."""
    worst = 0.0
    for (l, i, j), n in zip(coords, numeric):
        a = analytic[l][i, j]
        err = abs(a - n)
        if err <= abs_floor:
            continue
        worst = max(worst, err / max(abs(a), abs(n)))
    return worst


def _all_coords(shapes) -> list[tuple[int, int, int]]:
    return [(l, i, j) for l, (r, c) in enumerate(shapes) for i in range(r) for j in range(c)]


def _is_smooth(P_levels: list[np.ndarray], K: Optional[int], threshold: float, margin: float) -> bool:
    """No top-K boundary tie, no background score near the seed threshold, no clamping."""
    for P in P_levels:
        if np.any(P < 10 * EPS) or np.any(P > 1 - 10 * EPS):
            return False
        if np.any(np.abs(P[:, -1] - threshold) < margin):
            return False
        k = K if K is not None else default_top_k(len(P))
        if k < len(P):
            cols = -np.sort(-P[:, :-1], axis=0)
            if np.any(cols[k - 1] - cols[k] < margin):
                return False
    return True


def random_gradient_instance(rng: np.random.Generator, max_T: int = 32, max_C: int = 4, max_L: int = 3,
                             margin: float = 2e-3):
    """Logits plus point and pseudo-label supervision where every loss is locally smooth.

    Also returns standalone score pyramids in ``[0.05, 0.95]`` for the
    losses checked directly on fused scores; very small scores would make
    the finite-difference reference itself inaccurate.
    """
    while True:
        T = int(rng.integers(4, max_T + 1))
        C = int(rng.integers(1, max_C + 1))
        L = int(rng.integers(0, max_L + 1))
        sigma = 2
        lengths = pyramid_lengths(T, sigma, L)
        logits = [rng.normal(0.0, 1.5, size=(n, C + 1)) for n in lengths]
        n_pts = int(rng.integers(1, 5))
        eps = rng.choice(T, size=min(n_pts, T), replace=False)
        points = tuple(PointAnnotation.of(int(e), int(rng.integers(C)), C) for e in eps)
        pls = []
        for p in points:
            s = float(max(0, p.epsilon - rng.integers(0, 8)))
            e = float(min(T, p.epsilon + rng.integers(1, 8)))
            pls.append(PseudoLabel(p.epsilon, s, e, p.class_id))
        weights = LossWeights(gamma=float(rng.choice([0.0, 1.0, 2.0])), bg_threshold=float(rng.uniform(0.3, 0.7)),
                              radius=int(rng.integers(0, 3)))
        P = [1.0 / (1.0 + np.exp(-z)) for z in logits]
        scores = [rng.uniform(0.05, 0.95, size=(n, C + 1)) for n in lengths]
        if (_is_smooth(P, weights.top_k, weights.bg_threshold, margin)
                and _is_smooth(scores, weights.top_k, weights.bg_threshold, margin)):
            return logits, scores, points, tuple(pls), weights, sigma


def _loss_cases(logits, scores, points, pls, weights, sigma):
    """``(name, f, x0, analytic)``: scalar functions of a list of matrices and their gradients."""
    C = logits[0].shape[1] - 1
    point_sup = PointSupervision(points, C)
    pl_sup = PseudoLabelSupervision(pls, C, sigma)
    T = len(logits[0])
    sampled = sample_pseudo_labels(pls, sigma, len(logits) - 1, weights.radius, T, weights.radius_mode)
    label = point_sup.video_label()
    g, thr = weights.gamma, weights.bg_threshold
    seeds0 = background_seeds(scores[0], thr)
    q = scores[0][:1, :-1].copy()
    cases = [
        ("L_MIL (video scores)", lambda x: mil_loss(x[0][0], label)[0], [q],
         [mil_loss(q[0], label)[1][None, :]]),
        ("L_Act (fused scores)", lambda x: act_focal_loss(x[0], points, g)[0], [scores[0].copy()],
         [act_focal_loss(scores[0], points, g)[1]]),
        ("L_BG (fused scores)", lambda x: bg_loss(x[0], seeds0, g)[0], [scores[0].copy()],
         [bg_loss(scores[0], seeds0, g)[1]]),
        ("L*_Act (fused pyramid)", lambda x: enhanced_act_loss(x, sampled, g)[0],
         [f.copy() for f in scores], enhanced_act_loss(scores, sampled, g)[1]),
        ("L*_BG (fused pyramid)", lambda x: enhanced_bg_loss(x, sampled, thr, g)[0],
         [f.copy() for f in scores], enhanced_bg_loss(scores, sampled, thr, g)[1]),
    ]
    for name, lam in (("MIL", (1, 0, 0)), ("Act", (0, 1, 0)), ("BG", (0, 0, 1)), ("all", (1, 1, 1))):
        w = LossWeights(*lam, gamma=g, bg_threshold=thr, radius=weights.radius)
        cases.append((f"total_loss[{name}] base (logits)", lambda x, w=w: total_loss(x, point_sup, w)[0],
                      [logits[0].copy()], total_loss([logits[0]], point_sup, w)[1]))
        cases.append((f"total_loss[{name}] pyramid (logits)", lambda x, w=w: total_loss(x, pl_sup, w)[0],
                      [z.copy() for z in logits], total_loss(logits, pl_sup, w)[1]))
    return cases


def check_gradients(n: int = 100, seed: int = 0, h: float = 1e-4, rel_tol: float = 1e-3,
                    abs_floor: float = 1e-6, max_coords: Optional[int] = None) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        worst, worst_name = 0.0, ""
        for k in range(n):
            inst = random_gradient_instance(rng)
            for name, f, x0, analytic in _loss_cases(*inst):
                coords = _all_coords([x.shape for x in x0])
                if max_coords is not None and len(coords) > max_coords:
                    pick = rng.choice(len(coords), size=max_coords, replace=False)
                    coords = [coords[i] for i in sorted(pick)]
                numeric = _central_difference(f, x0, coords, h)
                err = _gradient_error(analytic, numeric, coords, abs_floor)
                if err > worst:
                    worst, worst_name = err, name
                if err > rel_tol:
                    return False, k + 1, f"{name}: relative error {err:.3g} > {rel_tol}"
        return True, n, f"max relative error {worst:.2e} ({worst_name or 'all within absolute floor'})"
    return _timed("finite-difference gradients", run)


# closed forms

def closed_form_values() -> dict[str, tuple[float, float]]:
    """``name -> (computed, expected)`` for the hand-derivable loss values."""
    ln2 = math.log(2.0)
    one_point = (PointAnnotation.of(0, 0, 1),)
    return {
        "L_MIL([1], [0.5]) = ln 2": (mil_loss(np.array([0.5]), np.array([1.0]))[0], ln2),
        "L_MIL([1,0], [0.5,0.5]) = 2 ln 2": (mil_loss(np.array([0.5, 0.5]), np.array([1.0, 0.0]))[0], 2 * ln2),
        "L_MIL([1,0], [1,0]) = 0": (mil_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]))[0], 0.0),
        "L_Act(p=0.5, gamma=2) = 0.25 ln 2": (act_focal_loss(np.array([[0.5, 0.0]]), one_point, 2.0)[0],
                                              0.25 * ln2),
        "L_BG(p=0, b=0.5, gamma=2) = 0.25 ln 2": (bg_loss(np.array([[0.0, 0.5]]), [0], 2.0)[0], 0.25 * ln2),
    }


def check_closed_forms(tol: float = 1e-6) -> CheckResult:
    def run():
        values = closed_form_values()
        bad = [f"{k}: {got!r}" for k, (got, want) in values.items() if not abs(got - want) <= tol]
        return not bad, len(values), "; ".join(bad)
    return _timed("loss closed forms", run)


# attention and pyramid

def _attention_weights(rng: np.random.Generator, D: int, heads: int) -> dict:
    config = BackboneConfig(d_in=D, d_model=D, d_qk=D, d_v=D, heads=heads, levels=1)
    net = TemporalPyramidNet.initialize(config, int(rng.integers(1 << 31)))
    return {k[len("block0."):]: v for k, v in net.weights.items() if k.startswith("block0.")}


def check_attention(n: int = 50, seed: int = 0, tol: float = 1e-6) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        for k in range(n):
            heads = int(rng.choice([1, 2, 4]))
            D = heads * int(rng.integers(1, 5))
            T = int(rng.integers(1, 40))
            window = 2 * int(rng.integers(0, 6)) + 1
            w = _attention_weights(rng, D, heads)
            Z = rng.normal(size=(T, D))
            full = 2 * T - 1 + 2 * int(rng.integers(0, 3))
            diff = np.max(np.abs(windowed_attention(Z, w, full, heads) - dense_attention(Z, w, heads)))
            if not diff <= tol:
                return False, k + 1, f"saturated window differs from dense attention by {diff:.3g}"
            weights, valid = window_softmax_weights(Z, Z, window)
            if np.max(np.abs(weights.sum(axis=1) - 1.0)) > tol or np.any(weights[~valid] != 0):
                return False, k + 1, "softmax rows do not sum to 1"
            half = window // 2
            base = windowed_attention(Z, w, window, heads)
            pos = int(rng.integers(T))
            Zp = Z.copy()
            Zp[pos] += rng.normal(size=D)
            moved = windowed_attention(Zp, w, window, heads)
            far = np.abs(np.arange(T) - pos) > half
            if not np.array_equal(base[far], moved[far]):
                return False, k + 1, f"perturbing position {pos} changed outputs outside window {window}"
        return True, n, "saturation, locality and row sums hold"
    return _timed("windowed attention properties", run)


def check_pyramid_shapes(T: int = 2304, sigma: int = 2, levels: int = 4,
                         expected: tuple[int, ...] = (2304, 1152, 576, 288, 144)) -> CheckResult:
    def run():
        lengths = pyramid_lengths(T, sigma, levels)
        config = BackboneConfig(d_in=8, d_model=8, d_qk=8, d_v=8, heads=2, window=7, sigma=sigma,
                                levels=levels, num_classes=2)
        net = TemporalPyramidNet.initialize(config, 0)
        feats, probs = net.forward_pyramid(np.random.default_rng(0).normal(size=(T, 8)))
        got = [len(z) for z in feats]
        ok = (tuple(lengths) == expected and tuple(got) == expected
              and all(p.shape == (n, 3) and np.all((p >= 0) & (p <= 1)) for p, n in zip(probs, got)))
        return ok, 1, f"levels {got}"
    return _timed("pyramid shapes", run)


# NMS and segments

def random_proposal_set(rng: np.random.Generator, max_size: int = 25) -> list[Proposal]:
    out = []
    for _ in range(int(rng.integers(0, max_size + 1))):
        s = float(rng.integers(0, 50)) if rng.random() < 0.5 else float(rng.uniform(0, 50))
        e = s + (float(rng.integers(1, 20)) if rng.random() < 0.5 else float(rng.uniform(0.1, 20)))
        conf = float(rng.choice([0.2, 0.5, 0.9])) if rng.random() < 0.3 else float(rng.random())
        out.append(Proposal(s, e, int(rng.integers(0, 3)), conf))
    return out


def segments_are_maximal(scores: np.ndarray, threshold: float, segments: list[tuple[int, int]]) -> bool:
    """Exhaustive check: disjoint sorted runs, every member above, every neighbour below, full coverage."""
    T = len(scores)
    covered = np.zeros(T, dtype=bool)
    prev_end = -2
    for s, e in segments:
        if not (0 <= s <= e < T) or s <= prev_end + 1:
            return False
        if not np.all(scores[s:e + 1] >= threshold):
            return False
        if s > 0 and scores[s - 1] >= threshold:
            return False
        if e < T - 1 and scores[e + 1] >= threshold:
            return False
        covered[s:e + 1] = True
        prev_end = e
    return bool(np.array_equal(covered, scores >= threshold))


def check_nms_and_segments(n: int = 1000, seed: int = 0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        for k in range(n):
            props = random_proposal_set(rng)
            thr = float(rng.choice([0.3, 0.5, 0.6, 0.7, 1.0]))
            kept = temporal_nms(props, thr)
            if temporal_nms(kept, thr) != kept:
                return False, k + 1, "temporal_nms is not idempotent"
            for a, b in itertools.combinations(kept, 2):
                if a.label == b.label and tiou((a.start, a.end), (b.start, b.end)) >= thr:
                    return False, k + 1, f"kept {a} and {b} overlap at tIoU >= {thr}"
            if [p.confidence for p in kept] != sorted((p.confidence for p in kept), reverse=True):
                return False, k + 1, "output is not in descending confidence order"
            T = int(rng.integers(1, 60))
            scores = np.round(rng.random(T), 1) if rng.random() < 0.5 else rng.random(T)
            seg_thr = float(rng.choice([0.1, 0.5, 0.9])) if rng.random() < 0.5 else float(rng.random())
            if not segments_are_maximal(scores, seg_thr, segment_candidates(scores, seg_thr)):
                return False, k + 1, f"segment_candidates not maximal at threshold {seg_thr}"
        return True, n, "idempotent, tIoU-bounded, maximal runs"
    return _timed("NMS and segment merging", run)


# evaluation

def random_eval_instance(rng: np.random.Generator, max_dets: int = 10, max_gt: int = 5):
    num_classes = int(rng.integers(1, 4))
    videos = [f"v{i}" for i in range(int(rng.integers(1, 4)))]
    gts: dict[str, list[GroundTruth]] = {v: [] for v in videos}
    dets: list[Detection] = []
    for c in range(num_classes):
        for _ in range(int(rng.integers(0, max_gt + 1))):
            s = float(rng.integers(0, 40))
            gts[str(rng.choice(videos))].append(GroundTruth(s, s + float(rng.integers(1, 15)), c))
        for _ in range(int(rng.integers(0, max_dets + 1))):
            s = float(rng.integers(0, 40)) if rng.random() < 0.5 else float(rng.uniform(0, 40))
            e = s + float(rng.uniform(0.5, 15))
            score = float(rng.choice([0.3, 0.6, 0.9])) if rng.random() < 0.3 else float(rng.random())
            dets.append(Detection(str(rng.choice(videos)), s, e, c, score))
    return dets, gts


def check_evaluation_oracle(n: int = 1000, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        config = EvalConfig()
        worst = 0.0
        for k in range(n):
            dets, gts = random_eval_instance(rng)
            if not any(gts.values()):
                continue
            report = evaluate(dets, gts, config)
            maps, avg = oracle_evaluate(
                [(d.video_id, d.start, d.end, d.label, d.score) for d in dets],
                [(v, g.start, g.end, g.label) for v, items in gts.items() for g in items],
                config.tiou_thresholds)
            diffs = [abs(report.mean_ap[t] - m) for t, m in zip(config.tiou_thresholds, maps)]
            diffs.append(abs(report.average_map - avg))
            worst = max(worst, max(diffs))
            if worst > tol:
                return False, k + 1, f"instance {k}: deviation {worst:.3g}"
        return True, n, f"max deviation {worst:.1e}"
    return _timed("evaluation vs naive AP oracle", run)


# pyramid sampling

def check_sampling(n: int = 1000, seed: int = 0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        done = 0
        while done < n:
            T = int(rng.integers(8, 200))
            sigma = int(rng.choice([2, 3]))
            levels = int(rng.integers(0, 5))
            radius = int(rng.integers(0, 4))
            C = int(rng.integers(1, 4))
            pls = []
            for _ in range(int(rng.integers(1, 6))):
                eps = int(rng.integers(0, T))
                s = float(rng.uniform(max(0, eps - 30), eps)) if rng.random() < 0.5 else float(max(0, eps - rng.integers(0, 30)))
                e = float(rng.uniform(eps, min(T, eps + 30))) if rng.random() < 0.5 else float(min(T, eps + rng.integers(0, 30)))
                if s == e:
                    e = min(float(T), e + 1.0)
                pls.append(PseudoLabel(eps, s, e, int(rng.integers(C))))
            done += len(pls)
            sampled = sample_pseudo_labels(pls, sigma, levels, radius, T)
            for level, length in enumerate(pyramid_lengths(T, sigma, levels)):
                scale = sigma ** level
                expected = set()
                for pl in pls:
                    center = math.floor(pl.point / scale + 0.5)
                    for t in range(length):
                        if (abs(t - center) <= radius and pl.start / scale <= t <= pl.end / scale):
                            expected.add((t, pl.label))
                got = set(sampled.levels[level])
                if got != expected or len(got) != len(sampled.levels[level]):
                    return False, done, f"level {level}: sampled {sorted(got ^ expected)} disagree"
        return True, done, "every sample inside its projected interval and radius"
    return _timed("pseudo-label sampling invariant", run)


def run_all(quick: bool = False, seed: int = 0) -> list[CheckResult]:
    scale = 10 if quick else 1
    return [
        check_refinement_oracle(1000 // scale, seed),
        check_zero_noise_fixpoint(),
        check_gradients(100 // scale, seed),
        check_closed_forms(),
        check_attention(50 // scale, seed),
        check_pyramid_shapes(),
        check_nms_and_segments(1000 // scale, seed),
        check_evaluation_oracle(1000 // scale, seed),
        check_sampling(1000 // scale, seed),
    ]
