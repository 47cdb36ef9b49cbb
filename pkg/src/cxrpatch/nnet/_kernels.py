"""JIT-compiled gather/scatter kernels for the convolution layers.

numpy handles these access patterns (im2col gather, col2im scatter-add,
weight-transformed scatter) an order of magnitude slower than the GEMMs they
feed, so they are compiled with numba. All kernels parallelize over the batch
dimension only and keep a fixed accumulation order within each sample, so
results are bitwise deterministic regardless of thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def im2col(xp: np.ndarray, k: int, stride: int, cols: np.ndarray) -> None:
    """Gather k*k*C patch rows from padded NHWC input into (N*OH*OW, k*k*C)."""
    n_, hp, wp, c_ = xp.shape
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    for n in prange(n_):
        for oy in range(oh):
            for ox in range(ow):
                row = (n * oh + oy) * ow + ox
                idx = 0
                for i in range(k):
                    iy = oy * stride + i
                    for j in range(k):
                        ix = ox * stride + j
                        for c in range(c_):
                            cols[row, idx] = xp[n, iy, ix, c]
                            idx += 1


@njit(parallel=True, cache=True)
def conv_bwd_dx(dout: np.ndarray, wt: np.ndarray, stride: int, dxp: np.ndarray) -> None:
    """Scatter-add input gradients: dxp[n,y+i,x+j,c] += sum_o dout[n,y,x,o]*wt[i,j,c,o].

    `wt` is the conv weight transposed to (K, K, C, O); dxp must be zeroed by
    the caller and includes padding, which the caller crops afterwards.
    """
    n_, oh, ow, o_ = dout.shape
    k = wt.shape[0]
    c_ = wt.shape[2]
    for n in prange(n_):
        for oy in range(oh):
            for ox in range(ow):
                iy0 = oy * stride
                ix0 = ox * stride
                for i in range(k):
                    for j in range(k):
                        for c in range(c_):
                            acc = 0.0
                            for o in range(o_):
                                acc += dout[n, oy, ox, o] * wt[i, j, c, o]
                            dxp[n, iy0 + i, ix0 + j, c] += acc
