"""Numba-jitted implementations of the hot training and scanning loops.

Mirrors ``_numpy`` function by function; accumulation order and float64
arithmetic match exactly, so both backends return bit-identical results.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def stump_scan(bins, labels, weights, sample_idx, cand):
    n_samples = sample_idx.shape[0]
    n_cand = cand.shape[0]
    err = np.empty(n_cand, dtype=np.float64)
    thr = np.empty(n_cand, dtype=np.int32)
    pol = np.empty(n_cand, dtype=np.int8)
    hp = np.empty(256, dtype=np.float64)
    hn = np.empty(256, dtype=np.float64)
    cp = np.empty(256, dtype=np.float64)
    cn = np.empty(256, dtype=np.float64)
    for fi in range(n_cand):
        k = cand[fi]
        for b in range(256):
            hp[b] = 0.0
            hn[b] = 0.0
        for si in range(n_samples):
            si2 = sample_idx[si]
            b = bins[si2, k]
            if labels[si2] > 0:
                hp[b] += weights[si2]
            else:
                hn[b] += weights[si2]
        acc_p = 0.0
        acc_n = 0.0
        for b in range(256):
            acc_p += hp[b]
            acc_n += hn[b]
            cp[b] = acc_p
            cn[b] = acc_n
        tot_n = cn[255]
        tot = cp[255] + tot_n
        best_e = np.inf
        best_b = 0
        best_p = np.int8(1)
        for b in range(256):
            e_plus = cp[b] + (tot_n - cn[b])
            if e_plus < best_e:
                best_e = e_plus
                best_b = b
                best_p = np.int8(1)
            e_minus = tot - e_plus
            if e_minus < best_e:
                best_e = e_minus
                best_b = b
                best_p = np.int8(-1)
        err[fi] = best_e
        thr[fi] = best_b
        pol[fi] = best_p
    return err, thr, pol


@njit(cache=True)
def tree_apply(bins, sample_idx, feature, thresh, pol, left, right, leaf, root):
    out = np.empty(sample_idx.shape[0], dtype=np.int8)
    for si in range(sample_idx.shape[0]):
        s = sample_idx[si]
        node = root
        while feature[node] >= 0:
            b = np.int32(bins[s, feature[node]])
            go_right = (b > thresh[node]) == (pol[node] > 0)
            if go_right:
                node = right[node]
            else:
                node = left[node]
        out[si] = leaf[node]
    return out


@njit(cache=True)
def scan_stack(stack_flat, feat_off, vmin, invw, feature, thresh, pol, left,
               right, leaf, tree_off, alphas, rejects, base):
    nwin = base.shape[0]
    n_trees = alphas.shape[0]
    scores = np.zeros(nwin, dtype=np.float64)
    neval = np.zeros(nwin, dtype=np.int32)
    for wi in range(nwin):
        b0 = base[wi]
        s = 0.0
        ne = 0
        for t in range(n_trees):
            node = tree_off[t]
            while feature[node] >= 0:
                f = feature[node]
                v = stack_flat[b0 + feat_off[f]]
                qf = np.floor((v - vmin[f]) * invw[f])
                if qf < 0.0:
                    qf = 0.0
                elif qf > 255.0:
                    qf = 255.0
                q = np.int32(qf)
                go_right = (q > thresh[node]) == (pol[node] > 0)
                if go_right:
                    node = right[node]
                else:
                    node = left[node]
            s = s + alphas[t] * np.float64(leaf[node])
            ne = t + 1
            if s < rejects[t]:
                break
        scores[wi] = s
        neval[wi] = ne
    return scores, neval
