"""Numpy implementations of the hot kernels.

These are the reference semantics: the compiled extension in _convcore.pyx
must reproduce them bit-for-bit (same float32 accumulation order), so a run
gives identical results whichever backend is active.

All spatial inputs are float32 NCHW and already padded by the caller.
"""

import numpy as np


def im2col(x, kh, kw, sh, sw):
    """Gather conv patches: (N,C,Hp,Wp) -> (N, C*kh*kw, Ho*Wo).

    Pure data movement, no arithmetic. Column layout is (c, kh, kw) fastest
    last, matching weight.reshape(Cout, -1) for the matmul that follows.
    """
    n, c, hp, wp = x.shape
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    sn, sc, sh_b, sw_b = x.strides
    patches = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, sh_b, sw_b, sh * sh_b, sw * sw_b),
        writeable=False,
    )
    return patches.reshape(n, c * kh * kw, ho * wo)


def col2im(cols, c, hp, wp, kh, kw, sh, sw):
    """Scatter-add columns back to an image: inverse layout of im2col.

    Accumulation order is (kh, kw) slabs ascending; the compiled kernel
    replicates this order exactly.
    """
    n = cols.shape[0]
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    x = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            x[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += cols[:, :, i, j]
    return x


def maxpool_forward(x, k, stride):
    """Window max over (N,C,Hp,Wp) -> (out (N,C,Ho,Wo), argmax int64).

    argmax holds the flat h*Wp+w position of the first (row-major) maximum
    of each window, the tie rule the backward pass relies on.
    """
    n, c, hp, wp = x.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    sn, sc, sh_b, sw_b = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, ho, wo, k, k),
        strides=(sn, sc, stride * sh_b, stride * sw_b, sh_b, sw_b),
        writeable=False,
    ).reshape(n, c, ho, wo, k * k)
    out = windows.max(axis=-1)
    local = windows.argmax(axis=-1)  # first occurrence = row-major tie break
    oh = np.arange(ho)[:, None] * stride
    ow = np.arange(wo)[None, :] * stride
    h = oh[None, None] + local // k
    w = ow[None, None] + local % k
    return out, (h * wp + w).astype(np.int64)


def maxpool_backward(grad, argmax, hp, wp):
    """Route each output gradient to its argmax position, accumulating
    where windows overlap. Processing order is row-major over windows."""
    n, c, ho, wo = grad.shape
    out = np.zeros((n, c, hp * wp), dtype=grad.dtype)
    nc_idx = np.repeat(np.arange(n * c), ho * wo)
    np.add.at(out.reshape(n * c, hp * wp), (nc_idx, argmax.ravel()), grad.ravel())
    return out.reshape(n, c, hp, wp)
