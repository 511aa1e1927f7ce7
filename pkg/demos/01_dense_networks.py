"""
Dense networks, backprop and RMSprop
====================================

A tiny tour of the numpy MLP substrate every model in the package is
built from: forward passes recorded on a tape, analytic gradients,
a finite-difference sanity check, RMSprop and weight clipping.
"""
import numpy as np

from wadcmsn.nn import Mlp, RmsPropState, backward, clip_weights, forward, rmsprop_update

rng = np.random.default_rng(0)

# A 6 -> 16 -> 3 network with a leaky-ReLU hidden layer
net = Mlp.build([6, 16, 3], ["leaky_relu", "identity"], rng=0)
print(net)

x = rng.normal(size=(8, 6))
target = rng.normal(size=(8, 3))

# forward() returns the output and a tape that backward() replays
out, tape = forward(net, x)
loss = 0.5 * np.sum((out - target) ** 2)
grads, grad_x = backward(net, tape, out - target)
print("loss", round(loss, 4), "| grad shapes", [g.shape for g in grads])

# Compare one weight gradient with a central difference
h = 1e-6
w = net.layers[0].weight
w[2, 3] += h
up = 0.5 * np.sum((forward(net, x)[0] - target) ** 2)
w[2, 3] -= 2 * h
down = 0.5 * np.sum((forward(net, x)[0] - target) ** 2)
w[2, 3] += h
print("analytic", grads[0][2, 3], "numeric", (up - down) / (2 * h))

# A few RMSprop steps drive the regression loss down
state = RmsPropState.zeros_like(net.params(), learning_rate=1e-2)
for step in range(201):
    out, tape = forward(net, x)
    if step % 50 == 0:
        print(f"step {step:3d}  loss {0.5 * np.sum((out - target) ** 2):.4f}")
    grads, _ = backward(net, tape, out - target, need_input=False)
    rmsprop_update(net, grads, state)

# Weight clipping keeps every parameter inside [-c, c]
clip_weights(net, 0.01)
print("largest |param| after clipping:", max(np.abs(p).max() for p in net.params()))
