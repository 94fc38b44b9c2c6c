"""Independent brute-force oracles used to cross-check the implementation.

Everything here is written as plainly as possible (explicit loops, no shared
code with the package) so that agreement is meaningful evidence.
"""

import numpy as np


def finite_difference_grad(loss_fn, tensor, h=1e-5):
    """Central-difference gradient of loss_fn() w.r.t. every entry of tensor."""
    import torch

    def evaluate():
        val = loss_fn()
        return float(val.detach()) if hasattr(val, "detach") else float(val)

    fd = torch.zeros_like(tensor)
    flat = tensor.data.view(-1)
    out = fd.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        lp = evaluate()
        flat[i] = orig - h
        lm = evaluate()
        flat[i] = orig
        out[i] = (lp - lm) / (2.0 * h)
    return fd


def greedy_herding_oracle(features):
    """Reference herding order: step m picks the candidate minimizing the
    distance between the class mean and the mean of the selected set plus
    the candidate, lowest index on ties."""
    feats = [np.asarray(f, dtype=np.float64) for f in np.asarray(features, dtype=np.float64)]
    n = len(feats)
    mu = sum(feats) / n
    chosen = []
    remaining = list(range(n))
    while remaining:
        dists = []
        for cand in remaining:
            total = sum((feats[k] for k in chosen), np.zeros_like(mu)) + feats[cand]
            mean = total / (len(chosen) + 1)
            dists.append(float(np.sqrt(((mu - mean) ** 2).sum())))
        best = min(dists)
        # same tie band as the implementation under test: ties (including
        # float-noise ties of mathematically equal distances) take the
        # lowest index
        for cand, dist in zip(remaining, dists):
            if dist <= best + 1e-9 * (1.0 + best):
                pick = cand
                break
        chosen.append(pick)
        remaining.remove(pick)
    return chosen


def metric_oracle(values):
    """Direct summation of the three continual-learning metrics.

    `values` is an n x n array with entry [i-1, j-1] holding task i's
    accuracy after episode j (1-based in the formulas below).
    """
    A = np.asarray(values, dtype=np.float64)
    n = A.shape[0]
    aa = 0.0
    for i in range(1, n + 1):
        inner = 0.0
        for j in range(1, i + 1):
            inner += A[j - 1, i - 1]
        aa += inner / i
    aa /= n
    aaf = 0.0
    for i in range(1, n + 1):
        aaf += A[i - 1, n - 1]
    aaf /= n
    bwt = None
    if n >= 2:
        bwt = 0.0
        for i in range(1, n):
            bwt += A[i - 1, n - 1] - A[i - 1, i - 1]
        bwt /= n - 1
    return aa, aaf, bwt


def high_band_energy(image, cutoff=0.35):
    """Spectral energy above `cutoff` cycles/pixel radial frequency."""
    img = np.asarray(image, dtype=np.float64)
    img = img - img.mean()
    spectrum = np.abs(np.fft.fft2(img)) ** 2
    fy = np.fft.fftfreq(img.shape[0])[:, None]
    fx = np.fft.fftfreq(img.shape[1])[None, :]
    radius = np.hypot(fx, fy)
    return float(spectrum[radius >= cutoff].sum())
