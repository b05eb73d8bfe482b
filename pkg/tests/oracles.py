"""Slow reference implementations the fast paths are tested against."""

import numpy as np

FLAT_EPS = 1e-9


def naive_masked_ncc(img, tpl, mask):
    """Direct per-window evaluation of the masked NCC definition."""
    h, w = img.shape
    s = tpl.shape[0]
    out = np.full((h, w), -1.0)
    msk = np.asarray(mask, dtype=bool)
    tvals = tpl[msk]
    tc = tvals - tvals.mean()
    tss = float((tc * tc).sum())
    lo = s // 2
    for y in range(h - s + 1):
        for x in range(w - s + 1):
            win = img[y:y + s, x:x + s][msk]
            ic = win - win.mean()
            iss = float((ic * ic).sum())
            if iss < FLAT_EPS or tss < FLAT_EPS:
                v = 0.0
            else:
                v = float((tc * ic).sum() / np.sqrt(tss * iss))
            out[y + lo, x + lo] = v
    return out


def naive_plain_ncc(img, tpl):
    """Unmasked NCC: every template pixel participates."""
    return naive_masked_ncc(img, tpl, np.ones_like(tpl, dtype=bool))


def central_diff(f, arr, flat_idx, h=1e-4):
    """Central finite difference of scalar f wrt arr.flat[flat_idx]."""
    orig = arr.flat[flat_idx]
    arr.flat[flat_idx] = orig + h
    hi = f()
    arr.flat[flat_idx] = orig - h
    lo = f()
    arr.flat[flat_idx] = orig
    return (hi - lo) / (2.0 * h)


def grad_rel_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-6)
