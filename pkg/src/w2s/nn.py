"""Small dense MLPs with hand-written reverse-mode gradients.

All parameters of a network live in one flat float64 vector; per-layer weight
matrices and bias vectors are views into it. Optimizer updates mutate the flat
vector in place and every view sees them, so training never copies parameters.
"""

from __future__ import annotations

import numpy as np

from .heads import Head, value_and_slope
from .rng import Rng

_ACTIVATIONS = ("relu", "identity")


class Mlp:
    """Feed-forward network applying z -> act(z @ W + b) per layer.

    The final activation is always identity so outputs are unconstrained.
    ``dims`` lists the input dimension followed by each layer's output
    dimension; a "depth d" network has d weight matrices.
    """

    __slots__ = ("dims", "activations", "theta", "_layers")

    def __init__(self, dims, activations, theta: np.ndarray | None = None) -> None:
        dims = [int(d) for d in dims]
        activations = [str(a) for a in activations]
        if len(dims) < 2:
            raise ValueError("need at least an input and an output dimension")
        if any(d < 1 for d in dims):
            raise ValueError("all layer dimensions must be >= 1")
        if len(activations) != len(dims) - 1:
            raise ValueError("need exactly one activation per layer")
        for act in activations:
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if activations[-1] != "identity":
            raise ValueError("the final layer must be identity")

        size = sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))
        if theta is None:
            theta = np.zeros(size)
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if theta.shape != (size,):
            raise ValueError(f"expected {size} parameters, got shape {theta.shape}")
        if not np.isfinite(theta).all():
            raise ValueError("parameters must be finite")

        self.dims = dims
        self.activations = activations
        self.theta = theta
        self._layers = []
        off = 0
        for i in range(len(dims) - 1):
            din, dout = dims[i], dims[i + 1]
            w = theta[off:off + din * dout].reshape(din, dout)
            off += din * dout
            b = theta[off:off + dout]
            off += dout
            self._layers.append((w, b, activations[i]))

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def output_dim(self) -> int:
        return self.dims[-1]

    @property
    def n_params(self) -> int:
        return self.theta.size

    @property
    def layers(self):
        """Per-layer (weights, biases, activation) views into the flat vector."""
        return list(self._layers)

    def copy(self) -> "Mlp":
        return Mlp(self.dims, self.activations, self.theta.copy())

    def forward(self, x):
        """Evaluate the network on one input (d,) or a batch (n, d)."""
        X = np.asarray(x, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.dims[0]:
            raise ValueError(f"expected inputs of dimension {self.dims[0]}, got shape {np.shape(x)}")
        Z = X
        for w, b, act in self._layers:
            Z = Z @ w
            Z += b
            if act == "relu":
                np.maximum(Z, 0.0, out=Z)
        return Z[0] if single else Z

    def forward_with_cache(self, X: np.ndarray):
        """Batch forward pass keeping what backprop needs.

        Returns (output, inputs, masks): inputs[i] is the batch fed to layer i
        (inputs[0] is X itself), masks[i] is the relu activity mask of layer i
        or None for identity layers.
        """
        inputs = [X]
        masks = []
        Z = X
        for w, b, act in self._layers:
            Z = Z @ w
            Z += b
            if act == "relu":
                mask = Z > 0.0  # subgradient at exactly 0 is 0
                Z *= mask
                masks.append(mask)
            else:
                masks.append(None)
            inputs.append(Z)
        return Z, inputs, masks

    def backprop(self, inputs, masks, d_out: np.ndarray) -> np.ndarray:
        """Flat parameter gradient given d(loss)/d(output) for a cached batch."""
        grad = np.empty_like(self.theta)
        dz = d_out
        off = self.theta.size
        for i in range(len(self._layers) - 1, -1, -1):
            w, _, _ = self._layers[i]
            if masks[i] is not None:
                dz = dz * masks[i]
            din, dout = w.shape
            b_off = off - dout
            w_off = b_off - din * dout
            np.sum(dz, axis=0, out=grad[b_off:off])
            np.matmul(inputs[i].T, dz, out=grad[w_off:b_off].reshape(din, dout))
            if i > 0:
                dz = dz @ w.T
            off = w_off
        return grad


def mlp_forward(net: Mlp, x):
    """Evaluate a network on one input vector or a batch."""
    return net.forward(x)


def init_mlp(dims, rng: Rng, *, activations=None) -> Mlp:
    """Random network: weights Normal(0, 2/fan_in), biases zero, relu hidden layers."""
    n_layers = len(dims) - 1
    if activations is None:
        activations = ["relu"] * (n_layers - 1) + ["identity"]
    net = Mlp(dims, activations)
    for w, _, _ in net._layers:
        fan_in = w.shape[0]
        w[:] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=w.shape)
    return net


def perturb_mlp(net: Mlp, noise_std: float, rng: Rng) -> Mlp:
    """Copy of net with Normal(0, noise_std^2) added to every parameter,
    biases included. noise_std 0 returns a bit-identical copy."""
    if not np.isfinite(noise_std) or noise_std < 0:
        raise ValueError("noise_std must be finite and nonnegative")
    out = net.copy()
    if noise_std > 0.0:
        out.theta += rng.normal(0.0, noise_std, size=out.theta.shape)
    return out


def mlp_gradients(net: Mlp, batch_x, batch_y, head: Head, trainable: str = "both"):
    """Gradients of the batch mean squared error of head(net(x)) against y.

    Returns (rep_grad, head_grad): a flat gradient matching net.theta and a
    head gradient laid out as [d/d weights..., d/d bias] (the bias entry only
    when the head carries one). A frozen block comes back as an empty array.
    """
    if trainable not in ("both", "rep", "head"):
        raise ValueError(f"unknown trainable mode {trainable!r}")
    X = np.atleast_2d(np.asarray(batch_x, dtype=np.float64))
    y = np.asarray(batch_y, dtype=np.float64).ravel()
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if X.shape[0] != y.size:
        raise ValueError("batch inputs and targets disagree on sample count")

    out, inputs, masks = net.forward_with_cache(X)
    pre = out @ head.weights
    if head.bias_enabled:
        pre += head.bias
    value, slope = value_and_slope(head.kind, pre)
    r = (2.0 / y.size) * (value - y)
    if slope is not None:
        r = r * slope

    if trainable in ("both", "head"):
        if head.bias_enabled:
            head_grad = np.concatenate([out.T @ r, [r.sum()]])
        else:
            head_grad = out.T @ r
    else:
        head_grad = np.empty(0)

    if trainable in ("both", "rep"):
        d_out = r[:, None] * head.weights[None, :]
        rep_grad = net.backprop(inputs, masks, d_out)
    else:
        rep_grad = np.empty(0)
    return rep_grad, head_grad


def mlp_to_doc(net: Mlp) -> dict:
    """JSON-safe document; floats are hex-encoded so round trips are bit exact."""
    layers = []
    for w, b, act in net._layers:
        layers.append({
            "rows": w.shape[0],
            "cols": w.shape[1],
            "activation": act,
            "weights": [float(v).hex() for v in w.ravel()],
            "biases": [float(v).hex() for v in b],
        })
    return {"dims": list(net.dims), "layers": layers}


def mlp_from_doc(doc: dict) -> Mlp:
    dims = [int(d) for d in doc["dims"]]
    layer_docs = doc["layers"]
    if len(layer_docs) != len(dims) - 1:
        raise ValueError("layer count does not match dims")
    net = Mlp(dims, [ld["activation"] for ld in layer_docs])
    for (w, b, _), ld in zip(net._layers, layer_docs):
        if (int(ld["rows"]), int(ld["cols"])) != w.shape:
            raise ValueError("layer shape does not match dims")
        if len(ld["weights"]) != w.size or len(ld["biases"]) != b.size:
            raise ValueError("parameter count does not match layer shape")
        w[:] = np.array([float.fromhex(s) for s in ld["weights"]],
                        dtype=np.float64).reshape(w.shape)
        b[:] = np.array([float.fromhex(s) for s in ld["biases"]], dtype=np.float64)
    if not np.isfinite(net.theta).all():
        raise ValueError("parameters must be finite")
    return net
