"""Independent reference implementations used to check the package.

Everything here is written as literal scalar loops — no vectorization, no
code shared with the package — so agreement between the two code paths is
meaningful evidence. Keep these slow and obvious; do not "optimize" them.
"""

import math


# ---------------------------------------------------------------------------
# imaging: per-pixel transfer loops


def pixel_degrade(clean, depth, betas, back):
    """Forward model, one pixel at a time, no clamping."""
    h, w = len(clean), len(clean[0])
    out = [[[0.0] * 3 for _ in range(w)] for _ in range(h)]
    for i in range(h):
        for j in range(w):
            for c in range(3):
                att = math.exp(-float(betas[c]) * float(depth[i][j]))
                out[i][j][c] = float(clean[i][j][c]) * att + float(back[c])
    return out


def pixel_restore(captured, depth, betas, back, eps=1e-6):
    """Inverse model with the same attenuation floor, no clamping."""
    h, w = len(captured), len(captured[0])
    out = [[[0.0] * 3 for _ in range(w)] for _ in range(h)]
    for i in range(h):
        for j in range(w):
            for c in range(3):
                att = math.exp(-float(betas[c]) * float(depth[i][j]))
                if att < eps:
                    att = eps
                out[i][j][c] = (float(captured[i][j][c]) - float(back[c])) / att
    return out


def scan_dark_patch(image, patch_size):
    """Exhaustive scan over all full patches; returns (index, channel_means).

    Row-major patch order; ties keep the earliest index (strict less-than).
    """
    h, w = len(image), len(image[0])
    rows, cols = h // patch_size, w // patch_size
    best_idx, best_mean, best_channels = -1, None, None
    idx = 0
    for r in range(rows):
        for c in range(cols):
            total = 0.0
            chans = [0.0, 0.0, 0.0]
            for i in range(r * patch_size, (r + 1) * patch_size):
                for j in range(c * patch_size, (c + 1) * patch_size):
                    for ch in range(3):
                        val = float(image[i][j][ch])
                        total += val
                        chans[ch] += val
            mean = total / (patch_size * patch_size * 3)
            if best_mean is None or mean < best_mean:
                best_idx, best_mean = idx, mean
                best_channels = [x / (patch_size * patch_size) for x in chans]
            idx += 1
    return best_idx, best_channels


# ---------------------------------------------------------------------------
# small scalar linear algebra helpers (loops only)


def vec_mat(x, m):
    """(1 x a) @ (a x b) -> list of length b."""
    a, b = len(m), len(m[0])
    return [sum(float(x[i]) * float(m[i][j]) for i in range(a)) for j in range(b)]


def mat_mat(x, m):
    return [vec_mat(row, m) for row in x]


# ---------------------------------------------------------------------------
# feature enhancement, staged


def scalar_attention(v, params):
    """Global-query cross attention; returns the summary vector q (length d)."""
    n, d = len(v), len(v[0])
    g = [sum(float(v[i][j]) for i in range(n)) / n for j in range(d)]
    q_in = [float(params.query_init[j]) + g[j] for j in range(d)]
    qp = vec_mat(q_in, params.w_q)
    kp = mat_mat(v, params.w_k)
    vp = mat_mat(v, params.w_v)
    scores = [sum(kp[i][j] * qp[j] for j in range(d)) / math.sqrt(d) for i in range(n)]
    top = max(scores)
    exps = [math.exp(s - top) for s in scores]
    z = sum(exps)
    attn = [e / z for e in exps]
    ctx = [sum(attn[i] * vp[i][j] for i in range(n)) for j in range(d)]
    return vec_mat(ctx, params.w_o)


def scalar_subtract(v, k, q):
    """s = v[k] - q; u = v - s, row by row."""
    n, d = len(v), len(v[0])
    s = [float(v[k][j]) - q[j] for j in range(d)]
    u = [[float(v[i][j]) - s[j] for j in range(d)] for i in range(n)]
    return s, u


def scalar_resample(feat, src_grid, dst_grid):
    """Align-corners bilinear resample of (src_r*src_c, e) tokens."""
    sr, sc = src_grid
    dr, dc = dst_grid
    e = len(feat[0])
    out = []
    for ti in range(dr):
        si = ti * (sr - 1) / (dr - 1) if dr > 1 else 0.0
        i0 = min(int(math.floor(si)), sr - 1)
        i1 = min(i0 + 1, sr - 1)
        fi = si - i0
        for tj in range(dc):
            sj = tj * (sc - 1) / (dc - 1) if dc > 1 else 0.0
            j0 = min(int(math.floor(sj)), sc - 1)
            j1 = min(j0 + 1, sc - 1)
            fj = sj - j0
            row = []
            for ch in range(e):
                val = ((1 - fi) * (1 - fj) * float(feat[i0 * sc + j0][ch])
                       + (1 - fi) * fj * float(feat[i0 * sc + j1][ch])
                       + fi * (1 - fj) * float(feat[i1 * sc + j0][ch])
                       + fi * fj * float(feat[i1 * sc + j1][ch]))
                row.append(val)
            out.append(row)
    return out


def scalar_weights(feat, src_grid, dst_grid, params):
    """Resample + 2-layer MLP + clamp; returns the weight table W."""
    x = scalar_resample(feat, src_grid, dst_grid)
    n = len(x)
    h = len(params.b1)
    d = len(params.b2)
    out = []
    for i in range(n):
        h1 = [sum(x[i][a] * float(params.w1[a][b]) for a in range(len(x[i])))
              + float(params.b1[b]) for b in range(h)]
        r = [max(val, 0.0) for val in h1]
        w_raw = [sum(r[a] * float(params.w2[a][b]) for a in range(h))
                 + float(params.b2[b]) for b in range(d)]
        wmax = float(params.w_max)
        out.append([min(max(val, -wmax), wmax) for val in w_raw])
    return out


def scalar_enhance(v, k, feat, src_grid, dst_grid, params):
    """Full enhancement: (v - s) * exp(W), element by element."""
    q = scalar_attention(v, params)
    _, u = scalar_subtract(v, k, q)
    w = scalar_weights(feat, src_grid, dst_grid, params)
    n, d = len(u), len(u[0])
    return [[u[i][j] * math.exp(w[i][j]) for j in range(d)] for i in range(n)]


# ---------------------------------------------------------------------------
# toy pipeline pieces


def scalar_positions(n, d):
    table = []
    for pos in range(n):
        row = []
        for i in range(d):
            angle = pos / (10000.0 ** (2.0 * (i // 2) / d))
            row.append(math.sin(angle) if i % 2 == 0 else math.cos(angle))
        table.append(row)
    return table


def scalar_patch_tokens(plane, patch, weight, bias, positions=False):
    """Center-crop, flatten each patch row-major channels-last, affine map."""
    h, w = len(plane), len(plane[0])
    ch_axis = (len(plane[0][0]) if not isinstance(plane[0][0], float)
               and hasattr(plane[0][0], "__len__") else 0)
    rows, cols = h // patch, w // patch
    top = (h - rows * patch) // 2
    left = (w - cols * patch) // 2
    d = len(bias)
    tokens = []
    pos_table = scalar_positions(rows * cols, d) if positions else None
    t = 0
    for r in range(rows):
        for c in range(cols):
            flat = []
            for i in range(patch):
                for j in range(patch):
                    pixel = plane[top + r * patch + i][left + c * patch + j]
                    if ch_axis:
                        flat.extend(float(pixel[cc]) for cc in range(ch_axis))
                    else:
                        flat.append(float(pixel))
            row = [sum(flat[a] * float(weight[a][b]) for a in range(len(flat)))
                   + float(bias[b]) for b in range(d)]
            if positions:
                row = [row[b] + pos_table[t][b] for b in range(d)]
            tokens.append(row)
            t += 1
    return tokens


# ---------------------------------------------------------------------------
# box metrics: brute-force loops


def scalar_iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)
    return inter / union if union > 0 else 0.0


def ap_101(tp_flags, n_gold):
    """101-point interpolated AP from ranked hit flags."""
    if n_gold == 0:
        return 0.0
    precisions, recalls = [], []
    tp = 0
    for rank, flag in enumerate(tp_flags, 1):
        if flag:
            tp += 1
        precisions.append(tp / rank)
        recalls.append(tp / n_gold)
    total = 0.0
    for i in range(101):
        t = i / 100.0
        best = 0.0
        for p, r in zip(precisions, recalls):
            if r >= t - 1e-12 and p > best:
                best = p
        total += best
    return total / 101.0


def brute_force_detection(preds_by_image, golds_by_image, max_dets=100):
    """COCO-style mAP/AR, all loops: greedy per-class matching by confidence.

    preds_by_image: list over images of [(class, box, confidence)];
    golds_by_image: list over images of [(class, box)]. Predicted classes
    outside the gold vocabulary are dropped; each image keeps at most
    ``max_dets`` detections (highest confidence first, emission order kept
    on ties). Returns the same four keys as the package implementation.
    """
    def norm(name):
        return name.strip().lower()

    classes = sorted({norm(c) for golds in golds_by_image for c, _ in golds})
    class_set = set(classes)
    taus = [round(0.50 + 0.05 * i, 2) for i in range(10)]

    capped = []
    for entries in preds_by_image:
        kept = [(norm(c), box, float(conf)) for c, box, conf in entries
                if norm(c) in class_set]
        if len(kept) > max_dets:
            # choose the max_dets highest-confidence detections, first-come
            # on ties, then restore emission order among the survivors
            chosen = sorted(range(len(kept)), key=lambda i: -kept[i][2])[:max_dets]
            kept = [kept[i] for i in sorted(chosen)]
        capped.append(kept)

    ap_sum = {t: 0.0 for t in taus}
    recall_sum = {t: 0.0 for t in taus}
    for cls in classes:
        golds = []  # (image index, box)
        for img, entries in enumerate(golds_by_image):
            for c, box in entries:
                if norm(c) == cls:
                    golds.append((img, box))
        n_gold = len(golds)

        ranked = []
        for img, entries in enumerate(capped):
            for c, box, conf in entries:
                if c == cls:
                    ranked.append((conf, img, box))
        # stable sort by descending confidence: ties keep image/emission order
        ranked.sort(key=lambda item: -item[0])

        for t in taus:
            matched = [False] * n_gold
            flags = []
            for _, img, box in ranked:
                best_iou, best_g = 0.0, -1
                for gi, (gimg, gbox) in enumerate(golds):
                    if gimg != img or matched[gi]:
                        continue
                    iou = scalar_iou(box, gbox)
                    if iou > best_iou:
                        best_iou, best_g = iou, gi
                if best_g >= 0 and best_iou >= t:
                    matched[best_g] = True
                    flags.append(True)
                else:
                    flags.append(False)
            ap_sum[t] += ap_101(flags, n_gold)
            recall_sum[t] += (sum(flags) / n_gold) if n_gold else 0.0

    n_cls = len(classes)
    if n_cls == 0:
        return {"map": 0.0, "map@0.5": 0.0, "map@0.75": 0.0, "ar@100": 0.0}
    ap_by_tau = {t: ap_sum[t] / n_cls for t in taus}
    return {
        "map": sum(ap_by_tau.values()) / len(taus),
        "map@0.5": ap_by_tau[0.50],
        "map@0.75": ap_by_tau[0.75],
        "ar@100": sum(recall_sum[t] / n_cls for t in taus) / len(taus),
    }
