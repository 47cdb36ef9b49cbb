"""Small residual CNN with explicit forward/backward passes in float64 numpy.

Architecture: 3x3 stem conv (1 -> F) + ReLU, one stride-1 residual block at F
channels, one stride-2 residual block doubling to 2F with a 1x1 projection
shortcut, global average pooling, and a linear head with two logits.

Internally activations are laid out NHWC. Each convolution runs as an im2col
gather (JIT kernel) plus one BLAS GEMM; its backward is a GEMM for the weight
gradient and a fused scatter kernel for the input gradient. The public
interface speaks the channel-major (N, C, H, W) convention. Forward passes
keep no state on the model, so inference on a trained net is safe from
concurrent callers.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from ._kernels import conv_bwd_dx, im2col


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; rows sum to 1."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


class Workspace:
    """Reusable scratch buffers keyed by name.

    Large per-batch arrays (im2col columns) otherwise hit mmap page-fault
    churn on every allocation. A workspace must not be shared between
    concurrent callers; passing None allocates fresh buffers instead.
    """

    def __init__(self):
        self._bufs: dict[str, np.ndarray] = {}

    def buf(self, key: str, shape: tuple[int, ...]) -> np.ndarray:
        b = self._bufs.get(key)
        if b is None or b.shape != shape:
            b = np.empty(shape)
            self._bufs[key] = b
        return b


def _scratch(ws: Workspace | None, key: str, shape: tuple[int, ...]) -> np.ndarray:
    return ws.buf(key, shape) if ws is not None else np.empty(shape)


class Conv2d:
    """2-D convolution over NHWC float64 batches; weights are (OC, KH, KW, IC)."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, pad: int,
                 rng: np.random.Generator):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        fan_in = in_ch * kernel * kernel
        self.w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_ch, kernel, kernel, in_ch))
        self.b = np.zeros(out_ch)

    def _pad_input(self, x: np.ndarray, ws: Workspace | None, key: str) -> np.ndarray:
        p = self.pad
        if not p:
            return x
        n, h, w, c = x.shape
        xp = _scratch(ws, key + ":pad", (n, h + 2 * p, w + 2 * p, c))
        xp[:, :p, :, :] = 0.0
        xp[:, h + p :, :, :] = 0.0
        xp[:, p : p + h, :p, :] = 0.0
        xp[:, p : p + h, w + p :, :] = 0.0
        xp[:, p : p + h, p : p + w, :] = x
        return xp

    def forward(
        self, x: np.ndarray, ws: Workspace | None = None, key: str = ""
    ) -> tuple[np.ndarray, dict]:
        n, h, w, c = x.shape
        if c != self.in_ch:
            raise ShapeError(f"conv expects {self.in_ch} input channels, got {c}")
        k, s, p = self.kernel, self.stride, self.pad
        oh = (h + 2 * p - k) // s + 1
        ow = (w + 2 * p - k) // s + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"input {h}x{w} too small for {k}x{k} stride-{s} conv")
        xp = self._pad_input(x, ws, key)
        if k == 1:
            cols = np.ascontiguousarray(xp[:, ::s, ::s, :]).reshape(n * oh * ow, c)
        else:
            cols = _scratch(ws, key + ":cols", (n * oh * ow, k * k * c))
            im2col(xp, k, s, cols)
        out = (cols @ self.w.reshape(self.out_ch, -1).T).reshape(n, oh, ow, self.out_ch)
        out += self.b
        return out, {"cols": cols, "x_shape": x.shape, "out_hw": (oh, ow)}

    def backward(
        self,
        dout: np.ndarray,
        cache: dict,
        need_dx: bool = True,
        ws: Workspace | None = None,
        key: str = "",
    ) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
        """Returns (dx, dw, db) for upstream gradient `dout` of shape (N, OH, OW, OC)."""
        n, h, w, c = cache["x_shape"]
        oh, ow = cache["out_hw"]
        k, s, p = self.kernel, self.stride, self.pad
        dout = np.ascontiguousarray(dout)
        dflat = dout.reshape(n * oh * ow, self.out_ch)
        dw = (dflat.T @ cache["cols"]).reshape(self.w.shape)
        db = np.einsum("mo->o", dflat)
        if not need_dx:
            return None, dw, db
        if k == 1:
            dcols = dflat @ self.w.reshape(self.out_ch, -1)
            dxp = np.zeros((n, h + 2 * p, w + 2 * p, c))
            dxp[:, ::s, ::s, :] = dcols.reshape(n, oh, ow, c)
            return (dxp[:, p : p + h, p : p + w, :] if p else dxp), dw, db
        if s == 1 and k == 2 * p + 1:
            # stride-1 input gradient is itself a correlation with the
            # spatially flipped kernel, so reuse the im2col + GEMM path
            doutp = np.zeros((n, oh + 2 * p, ow + 2 * p, self.out_ch))
            doutp[:, p : p + oh, p : p + ow, :] = dout
            bcols = _scratch(ws, key + ":bcols", (n * oh * ow, k * k * self.out_ch))
            im2col(doutp, k, 1, bcols)
            wflip = self.w[:, ::-1, ::-1, :].transpose(1, 2, 0, 3).reshape(-1, c)
            dx = (bcols @ wflip).reshape(n, h, w, c)
            return dx, dw, db
        dxp = np.zeros((n, h + 2 * p, w + 2 * p, c))
        conv_bwd_dx(dout, np.ascontiguousarray(self.w.transpose(1, 2, 3, 0)), s, dxp)
        return (dxp[:, p : p + h, p : p + w, :] if p else dxp), dw, db


class Linear:
    """Affine map over (N, in_features) batches."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.w = rng.normal(0.0, np.sqrt(2.0 / in_features), size=(out_features, in_features))
        self.b = np.zeros(out_features)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        return x @ self.w.T + self.b, {"x": x}

    def backward(self, dout: np.ndarray, cache: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return dout @ self.w, dout.T @ cache["x"], dout.sum(axis=0)


class TinyResNet:
    """Two-block residual classifier producing 2 logits per input."""

    def __init__(self, in_channels: int = 1, base_channels: int = 8, num_classes: int = 2,
                 seed: int = 0):
        self.in_channels = in_channels
        self.base_channels = base_channels
        self.num_classes = num_classes
        rng = np.random.default_rng(seed)
        f = base_channels
        self.stem = Conv2d(in_channels, f, kernel=3, stride=1, pad=1, rng=rng)
        self.b1_conv1 = Conv2d(f, f, kernel=3, stride=1, pad=1, rng=rng)
        self.b1_conv2 = Conv2d(f, f, kernel=3, stride=1, pad=1, rng=rng)
        self.b2_conv1 = Conv2d(f, 2 * f, kernel=3, stride=2, pad=1, rng=rng)
        self.b2_conv2 = Conv2d(2 * f, 2 * f, kernel=3, stride=1, pad=1, rng=rng)
        self.b2_proj = Conv2d(f, 2 * f, kernel=1, stride=2, pad=0, rng=rng)
        self.head = Linear(2 * f, num_classes, rng=rng)

    # Declared parameter order; checkpoints and SGD updates follow it.
    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("stem.w", self.stem.w), ("stem.b", self.stem.b),
            ("block1.conv1.w", self.b1_conv1.w), ("block1.conv1.b", self.b1_conv1.b),
            ("block1.conv2.w", self.b1_conv2.w), ("block1.conv2.b", self.b1_conv2.b),
            ("block2.conv1.w", self.b2_conv1.w), ("block2.conv1.b", self.b2_conv1.b),
            ("block2.conv2.w", self.b2_conv2.w), ("block2.conv2.b", self.b2_conv2.b),
            ("block2.proj.w", self.b2_proj.w), ("block2.proj.b", self.b2_proj.b),
            ("head.w", self.head.w), ("head.b", self.head.b),
        ]

    def set_param(self, name: str, value: np.ndarray) -> None:
        target = dict(self.param_items())[name]
        if target.shape != value.shape:
            raise ShapeError(f"{name}: shape {value.shape} != {target.shape}")
        target[...] = value

    def forward_with_cache(
        self, x: np.ndarray, ws: Workspace | None = None
    ) -> tuple[np.ndarray, np.ndarray, dict]:
        """(logits, last-block NHWC feature maps, cache for backward)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"expected (N, {self.in_channels}, H, W) input, got {x.shape}"
            )
        x = np.ascontiguousarray(x.transpose(0, 2, 3, 1))  # -> NHWC
        c: dict = {}
        s, c["stem"] = self.stem.forward(x, ws, "stem")
        c["stem_mask"] = s > 0
        np.maximum(s, 0.0, out=s)

        a1, c["b1c1"] = self.b1_conv1.forward(s, ws, "b1c1")
        c["b1c1_mask"] = a1 > 0
        np.maximum(a1, 0.0, out=a1)
        r1, c["b1c2"] = self.b1_conv2.forward(a1, ws, "b1c2")
        r1 += s
        c["r1_mask"] = r1 > 0
        np.maximum(r1, 0.0, out=r1)

        d1, c["b2c1"] = self.b2_conv1.forward(r1, ws, "b2c1")
        c["b2c1_mask"] = d1 > 0
        np.maximum(d1, 0.0, out=d1)
        features, c["b2c2"] = self.b2_conv2.forward(d1, ws, "b2c2")
        proj, c["b2proj"] = self.b2_proj.forward(r1, ws, "b2proj")
        features += proj
        c["r2_mask"] = features > 0
        np.maximum(features, 0.0, out=features)
        c["feat_hw"] = features.shape[1:3]

        pooled = features.mean(axis=(1, 2))
        logits, c["head"] = self.head.forward(pooled)
        return logits, features, c

    def forward(self, x: np.ndarray, ws: Workspace | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(logits, last-block feature maps as (N, 2F, H', W')); no retained state."""
        logits, features, _ = self.forward_with_cache(x, ws)
        return logits, np.ascontiguousarray(features.transpose(0, 3, 1, 2))

    def backward_from_cache(
        self, dlogits: np.ndarray, cache: dict, ws: Workspace | None = None
    ) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every parameter, keyed by name."""
        grads: dict[str, np.ndarray] = {}
        dpooled, grads["head.w"], grads["head.b"] = self.head.backward(dlogits, cache["head"])
        fh, fw = cache["feat_hw"]
        dr2_pre = cache["r2_mask"] * (dpooled[:, None, None, :] / (fh * fw))

        dproj, grads["block2.proj.w"], grads["block2.proj.b"] = self.b2_proj.backward(
            dr2_pre, cache["b2proj"], ws=ws, key="b2proj"
        )
        dd1, grads["block2.conv2.w"], grads["block2.conv2.b"] = self.b2_conv2.backward(
            dr2_pre, cache["b2c2"], ws=ws, key="b2c2"
        )
        np.multiply(dd1, cache["b2c1_mask"], out=dd1)
        dr1, grads["block2.conv1.w"], grads["block2.conv1.b"] = self.b2_conv1.backward(
            dd1, cache["b2c1"], ws=ws, key="b2c1"
        )
        # gradient at the first block's pre-ReLU sum (skip + main paths)
        dr1 += dproj
        np.multiply(dr1, cache["r1_mask"], out=dr1)

        da1, grads["block1.conv2.w"], grads["block1.conv2.b"] = self.b1_conv2.backward(
            dr1, cache["b1c2"], ws=ws, key="b1c2"
        )
        np.multiply(da1, cache["b1c1_mask"], out=da1)
        ds, grads["block1.conv1.w"], grads["block1.conv1.b"] = self.b1_conv1.backward(
            da1, cache["b1c1"], ws=ws, key="b1c1"
        )
        ds += dr1
        np.multiply(ds, cache["stem_mask"], out=ds)
        _, grads["stem.w"], grads["stem.b"] = self.stem.backward(
            ds, cache["stem"], need_dx=False
        )
        return grads
