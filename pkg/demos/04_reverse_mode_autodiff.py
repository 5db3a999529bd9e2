"""
Reverse-mode differentiation on numpy arrays
============================================

A ``Tensor`` wraps a float64 array. Operations record their inputs and a
pullback; ``backward`` walks the record in reverse.
"""

import numpy as np

from topo_ensemble import autodiff as ad
from topo_ensemble.autodiff import Tensor, backward, finite_difference_check

rng = np.random.default_rng(0)
W = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
x = Tensor(rng.normal(size=(4, 3)))

loss = ad.mean(ad.square(ad.tanh(x @ W)))
backward(loss)
print(loss.data, W.grad)

# the gradient of ||W||^2 is 2W
W.grad = None
backward(ad.sum(ad.square(W)))
print(np.array_equal(W.grad, 2 * W.data))

# central differences agree with the recorded pullbacks
f = lambda: ad.sum(ad.softmax(x @ W, axis=1) * ad.sigmoid(x @ W))
print(finite_difference_check(f, W))

# a 1-D convolution over (batch, time, channels)
series = Tensor(rng.normal(size=(2, 20, 3)))
kernel = Tensor(rng.normal(size=(5, 3, 4)), requires_grad=True)
out = ad.conv1d(series, kernel)
print(out.shape)                                     # (2, 16, 4)
print(finite_difference_check(lambda: ad.sum(ad.square(ad.conv1d(series, kernel))), kernel))

# evaluation without recording
with ad.no_grad():
    print((x @ W).requires_grad)
