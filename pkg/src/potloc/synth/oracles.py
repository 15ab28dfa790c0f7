"""Slow reference implementations used only for cross-checking.

Nothing here imports the production code paths it is compared against.
Inputs are plain tuples so the oracles stay independent of the domain
types:

* proposal: ``(start, end, class_id, confidence)``
* point: ``(epsilon, class_id)``
* pseudo-label: ``(epsilon, start, end, class_id)``
* detection: ``(video_id, start, end, class_id, score)``
* ground truth: ``(video_id, start, end, class_id)``
"""
from __future__ import annotations

from fractions import Fraction


def _F(prop, point):
    s, e, lab, _ = prop
    eps, plab = point
    return lab == plab and s <= eps <= e


def _argmax_cs(items):
    # highest confidence; ties -> smaller start, then smaller end
    best = None
    for it in items:
        s, e, cs = it[1], it[2], it[4]
        if best is None:
            best = it
            continue
        bs, be, bcs = best[1], best[2], best[4]
        if cs > bcs or (cs == bcs and (s < bs or (s == bs and e < be))):
            best = it
    return best


def oracle_pseudolabels(proposals, points, default_duration, lengths=None):
    """Line-by-line transcription of the refinement pseudocode.

    ``proposals`` and ``points`` map video id to lists of tuples. Entries of
    the working set carry the index of the point they were created for, and
    membership tests on the working set are restricted to that point.
    Returns ``{video_id: [(eps, start, end, class_id), ...]}`` in point order.
    """
    lengths = lengths or {}
    # S* entries: (video, s, e, label, cs, point_index, eps)
    S_star = []
    for v in points:
        for prop in proposals.get(v, []):
            hits = [i for i, p in enumerate(points[v]) if _F(prop, p)]
            if len(hits) == 1:
                i = hits[0]
                S_star.append((v, prop[0], prop[1], prop[2], prop[3], i, points[v][i][0]))

    # exact rational sums, rounded once
    dbar = {}
    for c in {x[3] for x in S_star}:
        durs = [x[2] - x[1] for x in S_star if x[3] == c]
        dbar[c] = float(sum(Fraction(d) for d in durs)) / len(durs)
    all_durs = [x[2] - x[1] for x in S_star]
    global_mean = float(sum(Fraction(d) for d in all_durs)) / len(all_durs) if all_durs else None

    for v in points:
        for i, (eps, c) in enumerate(points[v]):
            d = dbar.get(c, global_mean if global_mean is not None else default_duration)
            delta = d / 2
            mine = [x for x in S_star if x[0] == v and x[5] == i and _F(x[1:5], (eps, c))]
            if not mine:
                tau = [(v, p[0], p[1], p[2], p[3]) for p in proposals.get(v, []) if _F(p, (eps, c))]
                if tau:
                    k = _argmax_cs(tau)
                    s_k = max(k[1], eps - delta)
                    e_k = min(k[2], eps + delta)
                else:
                    s_k = max(0.0, eps - delta)
                    e_k = eps + delta
                    if v in lengths:
                        e_k = min(float(lengths[v]), e_k)
                S_star.append((v, s_k, e_k, c, None, i, eps))
            else:
                k = _argmax_cs(mine)
                S_star = [x for x in S_star if x not in mine]
                S_star.append((v, k[1], k[2], k[3], k[4], i, eps))

    out = {}
    for v in points:
        rows = sorted((x for x in S_star if x[0] == v), key=lambda x: x[5])
        out[v] = [(x[6], float(x[1]), float(x[2]), x[3]) for x in rows]
    return out


def oracle_tiou(a, b):
    lo, hi = max(a[0], b[0]), min(a[1], b[1])
    inter = hi - lo if hi > lo else 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return 0.0 if union <= 0 else inter / union


def oracle_ap(detections, ground_truth, threshold):
    """Naive all-points AP for one class.

    Precision at every true-positive rank is recomputed by counting the
    hits in the prefix. Returns ``None`` if both inputs are empty.
    """
    if not ground_truth:
        return None if not detections else 0.0
    ranked = sorted(detections, key=lambda d: (-d[4], d[1], d[2], d[0]))
    used = [False] * len(ground_truth)
    hit = []
    for det in ranked:
        choice, best = None, None
        for j, g in enumerate(ground_truth):
            if used[j] or g[0] != det[0]:
                continue
            iou = oracle_tiou((det[1], det[2]), (g[1], g[2]))
            if best is None or iou > best:
                choice, best = j, iou
        if choice is not None and best >= threshold:
            used[choice] = True
            hit.append(1)
        else:
            hit.append(0)
    total = 0.0
    for k in range(len(hit)):
        if hit[k]:
            total += sum(hit[:k + 1]) / (k + 1)
    return total / len(ground_truth)


def oracle_evaluate(detections, ground_truth, thresholds):
    """``(per-threshold mAP, average mAP)`` over classes present in the ground truth."""
    classes = sorted({g[3] for g in ground_truth})
    maps = []
    for thr in thresholds:
        aps = []
        for c in classes:
            dets = [d for d in detections if d[3] == c]
            gts = [g for g in ground_truth if g[3] == c]
            aps.append(oracle_ap(dets, gts, thr))
        maps.append(sum(aps) / len(aps) if aps else 0.0)
    return maps, sum(maps) / len(maps)
