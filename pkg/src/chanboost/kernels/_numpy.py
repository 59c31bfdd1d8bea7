"""Pure-numpy implementations of the hot training and scanning loops.

Each function has a signature-identical twin in ``_numba``. The two
backends must return bit-identical results: float64 everywhere, and the
accumulation order (samples ascending, then bins ascending, then trees
ascending) is the same in both. The parity tests rely on this.
"""

import numpy as np

# Candidate features per histogram block; bounds the temporary
# (samples x features) buffers during the exhaustive search rounds.
_CHUNK = 256


def stump_scan(bins, labels, weights, sample_idx, cand):
    """Best decision stump per candidate feature.

    For every candidate feature, sweeps all 256 threshold bins and both
    polarities over the selected samples and returns the minimum weighted
    0/1 error with its argmin. Ties resolve to the smallest bin, then
    polarity +1; the cross-feature reduction happens in the caller.

    Returns ``(err[F], thr[F], pol[F])``.
    """
    n_cand = cand.shape[0]
    w = weights[sample_idx]
    pos = labels[sample_idx] > 0
    wp = np.where(pos, w, 0.0)
    wn = np.where(pos, 0.0, w)

    err = np.empty(n_cand, dtype=np.float64)
    thr = np.empty(n_cand, dtype=np.int32)
    pol = np.empty(n_cand, dtype=np.int8)

    for lo in range(0, n_cand, _CHUNK):
        chunk = cand[lo:lo + _CHUNK]
        fc = chunk.shape[0]
        sub = bins[np.ix_(sample_idx, chunk)].astype(np.int64)
        sub += np.arange(fc, dtype=np.int64) * 256
        flat = sub.ravel()
        hp = np.bincount(flat, weights=np.broadcast_to(wp[:, None], sub.shape).ravel(),
                         minlength=fc * 256).reshape(fc, 256)
        hn = np.bincount(flat, weights=np.broadcast_to(wn[:, None], sub.shape).ravel(),
                         minlength=fc * 256).reshape(fc, 256)
        cp = np.cumsum(hp, axis=1)
        cn = np.cumsum(hn, axis=1)
        tot_p = cp[:, -1]
        tot_n = cn[:, -1]
        tot = tot_p + tot_n
        # polarity +1 predicts +1 for bin > thr: wrong on positives at or
        # below thr and negatives above it; polarity -1 is the complement
        err_plus = cp + (tot_n[:, None] - cn)
        err_minus = tot[:, None] - err_plus
        both = np.stack([err_plus, err_minus], axis=2).reshape(fc, 512)
        idx = np.argmin(both, axis=1)
        err[lo:lo + fc] = both[np.arange(fc), idx]
        thr[lo:lo + fc] = (idx >> 1).astype(np.int32)
        pol[lo:lo + fc] = np.where(idx & 1, -1, 1).astype(np.int8)
    return err, thr, pol


def tree_apply(bins, sample_idx, feature, thresh, pol, left, right, leaf, root):
    """Route samples through one packed tree; returns int8 leaf values."""
    cur = np.full(sample_idx.shape[0], root, dtype=np.int64)
    while True:
        f = feature[cur]
        active = np.nonzero(f >= 0)[0]
        if active.size == 0:
            break
        nodes = cur[active]
        b = bins[sample_idx[active], f[active]].astype(np.int32)
        go_right = (b > thresh[nodes]) == (pol[nodes] > 0)
        cur[active] = np.where(go_right, right[nodes], left[nodes])
    return leaf[cur]


def scan_stack(stack_flat, feat_off, vmin, invw, feature, thresh, pol, left,
               right, leaf, tree_off, alphas, rejects, base):
    """Soft-cascade evaluation of every window over one channel stack.

    ``base`` holds the flat cell-grid offset of each window's top-left
    cell; feature values are quantized on the fly with the model's frozen
    bin edges. Evaluation stops for a window as soon as its running score
    drops below the per-tree rejection threshold.

    Returns ``(scores[nwin], n_eval[nwin])``.
    """
    nwin = base.shape[0]
    n_trees = alphas.shape[0]
    scores = np.zeros(nwin, dtype=np.float64)
    neval = np.zeros(nwin, dtype=np.int32)
    alive = np.arange(nwin, dtype=np.int64)
    abase = base.astype(np.int64)
    s = np.zeros(nwin, dtype=np.float64)
    for t in range(n_trees):
        cur = np.full(alive.shape[0], tree_off[t], dtype=np.int64)
        while True:
            f = feature[cur]
            active = np.nonzero(f >= 0)[0]
            if active.size == 0:
                break
            nodes = cur[active]
            fa = f[active]
            v = stack_flat[abase[active] + feat_off[fa]]
            q = np.floor((v - vmin[fa]) * invw[fa])
            q = np.clip(q, 0.0, 255.0).astype(np.int32)
            go_right = (q > thresh[nodes]) == (pol[nodes] > 0)
            cur[active] = np.where(go_right, right[nodes], left[nodes])
        s = s + alphas[t] * leaf[cur].astype(np.float64)
        neval[alive] = t + 1
        keep = s >= rejects[t]
        if not keep.all():
            dead = ~keep
            scores[alive[dead]] = s[dead]
            alive = alive[keep]
            abase = abase[keep]
            s = s[keep]
            if alive.size == 0:
                return scores, neval
    scores[alive] = s
    return scores, neval
