"""Pure-numpy reference implementations of the hot kernels.

Same signatures and results as the compiled ``_kernels`` extension; selected
automatically when the extension is not built.

Column layout for convolution is ``(N, Ho, Wo, kh, kw, C)``: one row per
output position (the convolution becomes a tall-skinny matrix product) with
channels innermost so each patch row is gathered as contiguous runs.
"""
import numpy as np


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho, wo = conv_out_size(h, kh, stride, pad), conv_out_size(w, kw, stride, pad)
    xh = np.pad(x.transpose(0, 2, 3, 1), ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j] = xh[:, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols


def col2im(cols, n, c, h, w, kh, kw, stride, pad):
    ho, wo = cols.shape[1], cols.shape[2]
    xh = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xh[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, :, i, j]
    return np.ascontiguousarray(xh[:, pad:pad + h, pad:pad + w].transpose(0, 3, 1, 2))


def maxpool_forward(x, k, stride):
    """Returns (out, argmax) where argmax is the flat index within each window."""
    n, c, h, w = x.shape
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    win = np.empty((n, c, ho, wo, k * k), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            win[..., i * k + j] = x[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg.astype(np.int64)


def maxpool_backward(grad, arg, h, w, k, stride):
    n, c, ho, wo = grad.shape
    dx = np.zeros((n, c, h, w), dtype=grad.dtype)
    for i in range(k):
        for j in range(k):
            sel = arg == i * k + j
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.where(sel, grad, 0)
    return dx


def masked_mean(x, threshold):
    """Per (n, c) mean over positions with ``x >= threshold``; 0 when none pass.

    ``x`` has shape (N, C, H, W).  Returns (mean, count) with shape (N, C).
    """
    mask = x >= threshold
    count = mask.sum(axis=(2, 3))
    total = np.where(mask, x, 0).sum(axis=(2, 3))
    mean = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    return mean, count.astype(np.int64)


def nearest_center(points, centers):
    """Label and squared distance of the nearest center; lowest index wins ties."""
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    labels = d2.argmin(axis=1)
    return labels.astype(np.int64), d2[np.arange(points.shape[0]), labels]
