"""Pure-Python/numpy reference implementations of the hot kernels.

These define the semantics; the Cython module must agree with them.
"""

import numpy as np

TRANSMITTANCE_EPS = 1e-4
ALPHA_MAX = 0.99
_TWO32 = 1 << 32


def fisher_yates(words, T):
    """Shuffle range(T) consuming uint32 words; returns (perm, words_used) or (perm, -1)."""
    words = [int(w) for w in words]
    perm = list(range(T))
    pos = 0
    nw = len(words)
    for i in range(T - 1, 0, -1):
        bound = i + 1
        limit = _TWO32 - (_TWO32 % bound)
        while True:
            if pos >= nw:
                return np.arange(T, dtype=np.int64), -1
            w = words[pos]
            pos += 1
            if w < limit:
                break
        j = w % bound
        perm[i], perm[j] = perm[j], perm[i]
    return np.asarray(perm, dtype=np.int64), pos


def composite(means2d, conics, opacities, colors, bboxes, width, height, background):
    """Front-to-back alpha compositing of pre-sorted splats.

    Returns (rgb[H, W, 3], final transmittance[H, W], sum of alpha*T weights[H, W]).
    """
    rgb = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    wsum = np.zeros((height, width))
    for k in range(means2d.shape[0]):
        x0, x1, y0, y1 = (int(v) for v in bboxes[k])
        if x0 >= x1 or y0 >= y1:
            continue
        t = trans[y0:y1, x0:x1]
        live = t >= TRANSMITTANCE_EPS
        if not live.any():
            continue
        dx = np.arange(x0, x1, dtype=np.float64)[None, :] - means2d[k, 0]
        dy = np.arange(y0, y1, dtype=np.float64)[:, None] - means2d[k, 1]
        a, b, c = conics[k]
        power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
        alpha = np.minimum(ALPHA_MAX, opacities[k] * np.exp(power))
        alpha = np.where(live & (power <= 0.0), alpha, 0.0)
        w = alpha * t
        rgb[y0:y1, x0:x1] += w[..., None] * colors[k]
        wsum[y0:y1, x0:x1] += w
        trans[y0:y1, x0:x1] = t * (1.0 - alpha)
    rgb += trans[..., None] * np.asarray(background, dtype=np.float64)
    return rgb, trans, wsum


def greedy_assign(orig_idx, susp_idx, n_orig, n_susp):
    """Walk candidate pairs in the given (distance-sorted) order, taking each
    pair whose endpoints are both still free. Returns match[n_orig] with -1 for none."""
    match = np.full(n_orig, -1, dtype=np.int64)
    taken = np.zeros(n_susp, dtype=bool)
    for o, s in zip(orig_idx.tolist(), susp_idx.tolist()):
        if match[o] < 0 and not taken[s]:
            match[o] = s
            taken[s] = True
    return match
