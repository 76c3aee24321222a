"""Slow, loop-based reference implementations of the verification metrics."""

import math

import numpy as np


def ocean_cells(grid):
    return [(i, j) for i in range(grid.n_lat) for j in range(grid.n_lon) if not grid.land_mask[i, j]]


def soe_loop(ens, obs, grid):
    T, N = ens.shape[:2]
    num = den = wsum = 0.0
    for i, j in ocean_cells(grid):
        var_t = mse_t = 0.0
        for t in range(T):
            m = sum(float(ens[t, n, i, j]) for n in range(N)) / N
            var_t += sum((float(ens[t, n, i, j]) - m) ** 2 for n in range(N)) / (N - 1)
            mse_t += (m - float(obs[t, i, j])) ** 2
        w = float(grid.cell_area[i, j])
        num += w * var_t / T
        den += w * mse_t / T
        wsum += w
    return math.sqrt((N + 1) / N * (num / wsum) / (den / wsum))


def rmse_spread_loop(ens, obs, grid):
    T, N = ens.shape[:2]
    r = s = wsum = 0.0
    for i, j in ocean_cells(grid):
        se = sd = 0.0
        for t in range(T):
            vals = [float(ens[t, n, i, j]) for n in range(N)]
            m = sum(vals) / N
            se += (m - float(obs[t, i, j])) ** 2
            sd += math.sqrt(sum((v - m) ** 2 for v in vals) / (N - 1))
        w = float(grid.cell_area[i, j])
        r += w * math.sqrt(se / T)
        s += w * sd / T
        wsum += w
    return r / wsum, s / wsum


def sia_loop(field, grid):
    return sum(float(field[i, j]) * float(grid.cell_area[i, j]) for i, j in ocean_cells(grid))


def sie_loop(field, grid):
    return sum(float(grid.cell_area[i, j]) for i, j in ocean_cells(grid) if field[i, j] > 0.15)


def iiee_loop(a, b, grid):
    return sum(float(grid.cell_area[i, j]) for i, j in ocean_cells(grid) if (a[i, j] > 0.15) != (b[i, j] > 0.15))


def rank_counts_loop(ens, obs, mask):
    """Rank histogram without ties (continuous data): count of members below obs."""
    T, N = ens.shape[:2]
    counts = [0] * (N + 1)
    for t in range(T):
        for i in range(obs.shape[1]):
            for j in range(obs.shape[2]):
                if mask[t, i, j]:
                    counts[sum(1 for n in range(N) if ens[t, n, i, j] < obs[t, i, j])] += 1
    return np.array(counts)


def masked_conv_loop(x, mask, w, b):
    """Brute-force partial convolution with zero padding, single in/out channel."""
    H, W = x.shape
    kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((H, W))
    new = np.zeros((H, W), bool)
    for i in range(H):
        for j in range(W):
            acc, count = 0.0, 0
            for a in range(kh):
                for c in range(kw):
                    ii, jj = i + a - ph, j + c - pw
                    if 0 <= ii < H and 0 <= jj < W and mask[ii, jj]:
                        acc += w[a, c] * x[ii, jj]
                        count += 1
            if count:
                out[i, j] = acc * (kh * kw) / count + b
                new[i, j] = True
    return out, new
