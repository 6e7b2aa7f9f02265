"""From-scratch trainable components: dense layer, LSTM cell, two-layer
autoencoder, Adam, and training losses, all with exact analytic gradients.

Everything runs in float64. Forward passes never mutate component state, so
inference on frozen parameters is safe to run concurrently; training owns the
parameters exclusively. Inputs use batch-first shapes: (B, dim) for layers,
(B, T, dim) for sequences, with 1-D / 2-D single-sample forms accepted.

Backward passes are verified against central finite differences by
`gradcheck`; `run_all_gradchecks` sweeps every component over seeded random
instances.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .types import NumericError, ValidationError

ACTIVATIONS = ("identity", "relu")
LATENT_DIM = 510


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Deterministic generator; distinct streams stay independent."""
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def glorot_uniform(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what}: non-finite values")
    return arr


def _as_batch(x, dim: int, what: str) -> tuple[np.ndarray, bool]:
    """Coerce (dim,) or (B, dim) input to (B, dim); returns (array, squeezed)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
        squeezed = True
    elif arr.ndim == 2:
        squeezed = False
    else:
        raise ValidationError(f"{what}: expected 1-D or 2-D input, got {arr.ndim}-D")
    if arr.shape[1] != dim:
        raise ValidationError(f"{what}: input dim {arr.shape[1]} != {dim}")
    _check_finite(arr, what)
    return arr, squeezed


class DenseLayer:
    """Affine map y = act(W x + b) with W of shape (out_dim, in_dim)."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        activation: str = "identity",
        rng: np.random.Generator | None = None,
        name: str = "dense",
    ):
        if activation not in ACTIVATIONS:
            raise ValidationError(f"dense layer: unknown activation {activation!r}")
        if in_dim < 1 or out_dim < 1:
            raise ValidationError("dense layer: dims must be positive")
        rng = rng if rng is not None else make_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.name = name
        self.W = glorot_uniform(rng, out_dim, in_dim)
        self.b = np.zeros(out_dim)

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.W": self.W, f"{self.name}.b": self.b}

    def forward(self, x) -> np.ndarray:
        xb, squeezed = _as_batch(x, self.in_dim, f"{self.name}.forward")
        z = xb @ self.W.T + self.b
        y = np.maximum(z, 0.0) if self.activation == "relu" else z
        return y[0] if squeezed else y

    def backward(self, x, dy) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Gradients for upstream dy at input x: returns (dx, parameter grads)."""
        xb, squeezed = _as_batch(x, self.in_dim, f"{self.name}.backward")
        dyb, _ = _as_batch(dy, self.out_dim, f"{self.name}.backward dy")
        if dyb.shape[0] != xb.shape[0]:
            raise ValidationError(f"{self.name}.backward: batch mismatch")
        if self.activation == "relu":
            z = xb @ self.W.T + self.b
            dz = dyb * (z > 0.0)
        else:
            dz = dyb
        dW = dz.T @ xb
        db = np.sum(dz, axis=0)
        dx = dz @ self.W
        grads = {f"{self.name}.W": dW, f"{self.name}.b": db}
        return (dx[0] if squeezed else dx), grads


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LstmCell:
    """Single-layer LSTM; forward over a sequence returns the final hidden
    state. Gate weights are stacked as one (4H, D+H) matrix in i, f, g, o
    order; the forget-gate bias starts at 1."""

    def __init__(
        self,
        input_dim: int,
        hidden_dim: int,
        rng: np.random.Generator | None = None,
        name: str = "lstm",
    ):
        if input_dim < 1 or hidden_dim < 1:
            raise ValidationError("lstm: dims must be positive")
        rng = rng if rng is not None else make_rng(0)
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.name = name
        self.W = glorot_uniform(rng, 4 * hidden_dim, input_dim + hidden_dim)
        self.b = np.zeros(4 * hidden_dim)
        self.b[hidden_dim : 2 * hidden_dim] = 1.0

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.W": self.W, f"{self.name}.b": self.b}

    def _as_sequence(self, seq) -> tuple[np.ndarray, bool]:
        arr = np.asarray(seq, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None, :, :]
            squeezed = True
        elif arr.ndim == 3:
            squeezed = False
        else:
            raise ValidationError(f"{self.name}: expected (T, D) or (B, T, D) input")
        if arr.shape[1] < 1:
            raise ValidationError(f"{self.name}: empty sequence")
        if arr.shape[2] != self.input_dim:
            raise ValidationError(
                f"{self.name}: input dim {arr.shape[2]} != {self.input_dim}"
            )
        _check_finite(arr, self.name)
        return arr, squeezed

    def forward_with_cache(self, seq) -> tuple[np.ndarray, dict]:
        xs, squeezed = self._as_sequence(seq)
        batch, steps, _ = xs.shape
        hdim = self.hidden_dim
        h = np.zeros((batch, hdim))
        c = np.zeros((batch, hdim))
        cache_steps = []
        for t in range(steps):
            xh = np.concatenate([xs[:, t, :], h], axis=1)
            z = xh @ self.W.T + self.b
            i = _sigmoid(z[:, :hdim])
            f = _sigmoid(z[:, hdim : 2 * hdim])
            g = np.tanh(z[:, 2 * hdim : 3 * hdim])
            o = _sigmoid(z[:, 3 * hdim :])
            c_prev = c
            c = f * c_prev + i * g
            h = o * np.tanh(c)
            cache_steps.append((xh, i, f, g, o, c_prev, c))
        cache = {"steps": cache_steps, "squeezed": squeezed, "shape": xs.shape}
        return (h[0] if squeezed else h), cache

    def forward(self, seq) -> np.ndarray:
        h, _ = self.forward_with_cache(seq)
        return h

    def backward(self, cache: dict, dh_last) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Backpropagation through time from the final-hidden-state gradient.
        Returns (dseq, parameter grads)."""
        batch, steps, _ = cache["shape"]
        hdim = self.hidden_dim
        dh = np.asarray(dh_last, dtype=np.float64)
        if cache["squeezed"]:
            dh = dh[None, :]
        if dh.shape != (batch, hdim):
            raise ValidationError(f"{self.name}.backward: dh shape {dh.shape}")
        dW = np.zeros_like(self.W)
        db = np.zeros_like(self.b)
        dxs = np.zeros(cache["shape"])
        dc = np.zeros((batch, hdim))
        for t in range(steps - 1, -1, -1):
            xh, i, f, g, o, c_prev, c = cache["steps"][t]
            tc = np.tanh(c)
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            dW += dz.T @ xh
            db += np.sum(dz, axis=0)
            dxh = dz @ self.W
            dxs[:, t, :] = dxh[:, : self.input_dim]
            dh = dxh[:, self.input_dim :]
            dc = dc * f
        grads = {f"{self.name}.W": dW, f"{self.name}.b": db}
        return (dxs[0] if cache["squeezed"] else dxs), grads


class AutoEncoder:
    """Two linear layers squeezing a hidden vector through a fixed-width
    latent bottleneck (510 by default) and back."""

    def __init__(
        self,
        hidden_dim: int,
        latent_dim: int = LATENT_DIM,
        rng: np.random.Generator | None = None,
        name: str = "ae",
    ):
        if latent_dim < 1:
            raise ValidationError("autoencoder: latent dim must be positive")
        rng = rng if rng is not None else make_rng(0)
        self.hidden_dim = hidden_dim
        self.latent_dim = latent_dim
        self.name = name
        self.encoder = DenseLayer(hidden_dim, latent_dim, "identity", rng, f"{name}.enc")
        self.decoder = DenseLayer(latent_dim, hidden_dim, "identity", rng, f"{name}.dec")

    def params(self) -> dict[str, np.ndarray]:
        return {**self.encoder.params(), **self.decoder.params()}

    def encode(self, h) -> np.ndarray:
        return self.encoder.forward(h)

    def decode(self, latent) -> np.ndarray:
        return self.decoder.forward(latent)

    def reconstruction_loss(self, h) -> float:
        recon = self.decode(self.encode(h))
        return mse_loss(recon, np.asarray(h, dtype=np.float64))[0]


class Adam:
    """Adam with bias-corrected moments; updates parameters in place."""

    def __init__(
        self,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if not (lr > 0.0 and 0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0 and eps > 0.0):
            raise ValidationError("adam: invalid hyperparameters")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                raise ValidationError(f"adam: missing gradient for {name!r}")
            if g.shape != p.shape:
                raise ValidationError(f"adam: gradient shape mismatch for {name!r}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"adam: non-finite gradient for {name!r}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in params.items():
            g = grads[name]
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p)
            v = self._v.get(name)
            if v is None:
                v = self._v[name] = np.zeros_like(p)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean squared difference over all elements; returns (loss, dpred)."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValidationError(f"mse: shape mismatch {p.shape} vs {t.shape}")
    diff = p - t
    loss = float(np.mean(diff * diff))
    return loss, (2.0 / diff.size) * diff


def cosine_embedding_loss(pred, target) -> tuple[float, np.ndarray]:
    """1 - cosine(pred, target), averaged over the batch; returns
    (loss, dpred). Targets are treated as constants."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValidationError(f"cosine loss: shape mismatch {p.shape} vs {t.shape}")
    squeezed = p.ndim == 1
    if squeezed:
        p = p[None, :]
        t = t[None, :]
    if p.ndim != 2:
        raise ValidationError("cosine loss: expected 1-D or 2-D input")
    np_norm = np.linalg.norm(p, axis=1)
    nt_norm = np.linalg.norm(t, axis=1)
    if np.any(np_norm == 0.0) or np.any(nt_norm == 0.0):
        raise ValidationError("cosine loss: zero-norm input")
    dots = np.einsum("bd,bd->b", p, t)
    cos = dots / (np_norm * nt_norm)
    batch = p.shape[0]
    loss = float(np.mean(1.0 - cos))
    dpred = (
        cos[:, None] * p / (np_norm**2)[:, None] - t / (np_norm * nt_norm)[:, None]
    ) / batch
    return loss, (dpred[0] if squeezed else dpred)


LOSSES: dict[str, Callable] = {"cosine": cosine_embedding_loss, "mse": mse_loss}


def gradcheck(
    loss_fn: Callable[[], tuple[float, Sequence[np.ndarray]]],
    arrays: Sequence[np.ndarray],
    eps: float = 1e-5,
    max_coords: int = 10_000,
    seed: int = 0,
) -> float:
    """Compare analytic gradients against central finite differences.

    `loss_fn` evaluates the scalar loss at the current array values and
    returns (loss, grads) with grads aligned to `arrays`; the arrays are
    perturbed in place coordinate by coordinate. When the total coordinate
    count exceeds `max_coords`, a seeded random subset is checked. Returns
    the maximum relative error.
    """
    _, grads = loss_fn()
    if len(grads) != len(arrays):
        raise ValidationError("gradcheck: grads/arrays length mismatch")
    coords = [(ai, idx) for ai, arr in enumerate(arrays) for idx in range(arr.size)]
    if len(coords) > max_coords:
        rng = make_rng(seed, stream=90)
        chosen = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[int(i)] for i in np.sort(chosen)]
    max_rel = 0.0
    for ai, idx in coords:
        arr = arrays[ai]
        flat = arr.reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + eps
        plus, _ = loss_fn()
        flat[idx] = orig - eps
        minus, _ = loss_fn()
        flat[idx] = orig
        numeric = (plus - minus) / (2.0 * eps)
        analytic = float(grads[ai].reshape(-1)[idx])
        denom = max(abs(analytic), abs(numeric), 1e-6)
        max_rel = max(max_rel, abs(analytic - numeric) / denom)
    return max_rel


def _gradcheck_dense(seed: int) -> float:
    rng = make_rng(seed, stream=1)
    layer = DenseLayer(7, 5, "relu" if seed % 2 else "identity", rng)
    x = rng.normal(size=(3, 7))
    target = rng.normal(size=(3, 5))

    def loss_fn():
        y = layer.forward(x)
        loss, dy = mse_loss(y, target)
        dx, grads = layer.backward(x, dy)
        return loss, [grads[f"{layer.name}.W"], grads[f"{layer.name}.b"], dx]

    return gradcheck(loss_fn, [layer.W, layer.b, x], seed=seed)


def _gradcheck_lstm(seed: int, steps: int = 3) -> float:
    rng = make_rng(seed, stream=2)
    cell = LstmCell(5, 6, rng)
    seq = rng.normal(size=(2, steps, 5))
    target = rng.normal(size=(2, 6))

    def loss_fn():
        h, cache = cell.forward_with_cache(seq)
        loss, dh = mse_loss(h, target)
        dseq, grads = cell.backward(cache, dh)
        return loss, [grads[f"{cell.name}.W"], grads[f"{cell.name}.b"], dseq]

    return gradcheck(loss_fn, [cell.W, cell.b, seq], seed=seed)


def _gradcheck_autoencoder(seed: int) -> float:
    rng = make_rng(seed, stream=3)
    ae = AutoEncoder(4, rng=rng)
    h = rng.normal(size=(2, 4))

    def loss_fn():
        latent = ae.encode(h)
        recon = ae.decode(latent)
        loss, drecon = mse_loss(recon, h)
        dlatent, dec_grads = ae.decoder.backward(latent, drecon)
        dh_enc, enc_grads = ae.encoder.backward(h, dlatent)
        # h appears as both input and target: mse grad wrt target is -dpred.
        dh = dh_enc - drecon
        return loss, [
            enc_grads[f"{ae.encoder.name}.W"],
            enc_grads[f"{ae.encoder.name}.b"],
            dec_grads[f"{ae.decoder.name}.W"],
            dec_grads[f"{ae.decoder.name}.b"],
            dh,
        ]

    return gradcheck(
        loss_fn, [ae.encoder.W, ae.encoder.b, ae.decoder.W, ae.decoder.b, h], seed=seed
    )


def _gradcheck_losses(seed: int) -> float:
    rng = make_rng(seed, stream=4)
    pred = rng.normal(size=(3, 6)) + 0.1
    target = rng.normal(size=(3, 6)) + 0.1
    worst = 0.0
    for loss in (cosine_embedding_loss, mse_loss):

        def loss_fn(loss=loss):
            value, dpred = loss(pred, target)
            return value, [dpred]

        worst = max(worst, gradcheck(loss_fn, [pred], seed=seed))
    return worst


def _gradcheck_projection(seed: int) -> float:
    """Two stacked dense layers (relu then identity) under the cosine loss."""
    rng = make_rng(seed, stream=5)
    layer1 = DenseLayer(8, 9, "relu", rng, "proj.fc1")
    layer2 = DenseLayer(9, 6, "identity", rng, "proj.fc2")
    x = rng.normal(size=(3, 8))
    target = rng.normal(size=(3, 6)) + 0.1

    def loss_fn():
        hidden = layer1.forward(x)
        z = layer2.forward(hidden)
        loss, dz = cosine_embedding_loss(z, target)
        dhidden, g2 = layer2.backward(hidden, dz)
        dx, g1 = layer1.backward(x, dhidden)
        return loss, [
            g1["proj.fc1.W"],
            g1["proj.fc1.b"],
            g2["proj.fc2.W"],
            g2["proj.fc2.b"],
            dx,
        ]

    return gradcheck(loss_fn, [layer1.W, layer1.b, layer2.W, layer2.b, x], seed=seed)


GRADCHECK_SUITE: dict[str, Callable[[int], float]] = {
    "dense": _gradcheck_dense,
    "lstm": _gradcheck_lstm,
    "autoencoder": _gradcheck_autoencoder,
    "losses": _gradcheck_losses,
    "projection": _gradcheck_projection,
}


def run_all_gradchecks(instances: int = 20, tolerance: float = 1e-4) -> dict[str, float]:
    """Run every component's gradcheck over seeded random instances; returns
    the worst relative error per component. Raises NumericError if any
    component exceeds `tolerance`."""
    results = {}
    for name, check in GRADCHECK_SUITE.items():
        worst = max(check(seed) for seed in range(instances))
        results[name] = worst
        if worst >= tolerance:
            raise NumericError(f"gradcheck {name}: max relative error {worst:.3e}")
    return results
