"""
A small sigmoid MLP trained with ADAM
=====================================

Both the examination model f(q) and the relevance model g(q, d) are
one-hidden-layer sigmoid networks. Here we check gradients by finite
differences and fit a toy regression.
"""
import numpy as np

from ctxpbm.nn import AdamState, LossKind, Mlp, adam_step, mlp_loss, mlp_loss_grad

rng = np.random.default_rng(0)
model = Mlp.init(4, 6, 3, rng)
X = rng.normal(size=(8, 4))
T = rng.random((8, 3))

for loss in LossKind:
    g = mlp_loss_grad(model, X, T, loss)
    num = np.empty_like(g)
    for i in range(g.size):
        old = model.theta[i]
        model.theta[i] = old + 1e-5
        up = mlp_loss(model, X, T, loss)
        model.theta[i] = old - 1e-5
        num[i] = (up - mlp_loss(model, X, T, loss)) / 2e-5
        model.theta[i] = old
    print(f"{loss.value}: relative gradient error {np.linalg.norm(g - num) / np.linalg.norm(g):.1e}")

# Fit y = sigmoid-shaped bump in 2-d with mini-batch ADAM and BCE on soft targets.
X = rng.uniform(-2, 2, size=(2000, 2))
Y = (1 / (1 + np.exp(-(X[:, :1] ** 2 + X[:, 1:] - 1))))
net = Mlp.init(2, 8, 1, rng)
opt = AdamState.for_model(net, alpha=0.01)
for epoch in range(30):
    for idx in np.array_split(rng.permutation(len(X)), 100):
        adam_step(net, mlp_loss_grad(net, X[idx], Y[idx], LossKind.BCE), opt)
    if epoch % 10 == 9:
        print(f"epoch {epoch + 1}: mean |error| {np.abs(net(X) - Y).mean():.4f}")
