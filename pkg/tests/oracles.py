"""Independent reference implementations used only by the tests."""

from collections import deque
from fractions import Fraction
import math

import numpy as np


def slab_chord(lo, hi, origin, direction):
    """Entry/exit parameters of a line through a box (no clipping to t >= 0)."""
    t_in, t_out = -math.inf, math.inf
    for a in range(3):
        if direction[a] == 0:
            if not lo[a] <= origin[a] <= hi[a]:
                return None
            continue
        t1 = (lo[a] - origin[a]) / direction[a]
        t2 = (hi[a] - origin[a]) / direction[a]
        t_in, t_out = max(t_in, min(t1, t2)), min(t_out, max(t1, t2))
    if t_out <= t_in:
        return None
    return t_in, t_out


def dense_sample_lengths(labels, nlabels, spacing, lo, origin, direction, samples=100_000):
    """Path length per label from equidistant midpoint samples along the chord (mm)."""
    lo = np.asarray(lo, dtype=float)
    spacing = np.asarray(spacing, dtype=float)
    hi = lo + spacing * np.array(labels.shape[::-1])
    hit = slab_chord(lo, hi, origin, direction)
    out = np.zeros(nlabels)
    if hit is None:
        return out
    t_in, t_out = hit
    h = (t_out - t_in) / samples
    t = t_in + h * (np.arange(samples) + 0.5)
    pts = np.asarray(origin) + t[:, None] * np.asarray(direction)
    idx = np.floor((pts - lo) / spacing).astype(int)
    idx = np.clip(idx, 0, np.array(labels.shape[::-1]) - 1)
    lab = labels[idx[:, 2], idx[:, 1], idx[:, 0]]
    for k in range(nlabels):
        out[k] = np.count_nonzero(lab == k) * h
    return out


def pixel_iou(a, b):
    pa = {(x, y) for x in range(a.x, a.x + a.w) for y in range(a.y, a.y + a.h)}
    pb = {(x, y) for x in range(b.x, b.x + b.w) for y in range(b.y, b.y + b.h)}
    return len(pa & pb) / len(pa | pb)


def brute_image_ap(pred, gt):
    thresholds = [round(0.40 + 0.05 * k, 2) for k in range(8)]
    table = [[pixel_iou(p, g) for g in gt] for p in pred]
    total = 0.0
    for t in thresholds:
        free_p, free_g = set(range(len(pred))), set(range(len(gt)))
        tp = 0
        while True:
            best = None
            for i in sorted(free_p):
                for j in sorted(free_g):
                    if table[i][j] >= t and (best is None or table[i][j] > best[0]):
                        best = (table[i][j], i, j)
            if best is None:
                break
            free_p.discard(best[1])
            free_g.discard(best[2])
            tp += 1
        fp, fn = len(pred) - tp, len(gt) - tp
        total += 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)
    return total / len(thresholds)


def brute_map(dataset):
    return sum(brute_image_ap(p, g) for p, g in dataset) / len(dataset)


def mann_whitney_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    u = 0.0
    for p in pos:
        for n in neg:
            u += 1.0 if p > n else 0.5 if p == n else 0.0
    return u / (len(pos) * len(neg))


def global_histogram_equalization(img):
    hist = np.bincount(img.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    lut = np.round(255.0 * cdf / img.size)
    return lut[img].astype(np.uint8)


def flood_components(mask):
    """8-connected components by breadth-first search: list of pixel sets."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for y0 in range(h):
        for x0 in range(w):
            if not mask[y0, x0] or seen[y0, x0]:
                continue
            comp = set()
            queue = deque([(y0, x0)])
            seen[y0, x0] = True
            while queue:
                y, x = queue.popleft()
                comp.add((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and not seen[yy, xx]:
                            seen[yy, xx] = True
                            queue.append((yy, xx))
            comps.append(comp)
    return comps


def exhaustive_operating_point(scores, labels):
    """Scan every threshold with exact rational sensitivity/specificity; ties keep the lowest threshold."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    best = None
    n_pos, n_neg = int(np.sum(labels == 1)), int(np.sum(labels == 0))
    for t in sorted(set(scores.tolist()) | {math.inf}):
        pred = scores >= t
        sens = Fraction(int(np.sum(pred & (labels == 1))), n_pos)
        spec = Fraction(int(np.sum(~pred & (labels == 0))), n_neg)
        d = (1 - sens) ** 2 + (1 - spec) ** 2
        if best is None or d < best[0]:
            best = (d, t, sens, spec)
    return best[1:]
