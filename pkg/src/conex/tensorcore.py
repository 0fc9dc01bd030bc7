"""Complex-plane arithmetic and the convolutional gate of ConEx.

Everything here works on float64 numpy arrays. Complex vectors are kept as
separate real/imaginary planes; a leading batch axis is allowed everywhere.

The gate maps a (head, relation) pair to a complex vector ``gamma`` of the
same dimension::

    stack [Re h; Im h; Re r; Im r] -> BN -> dropout -> conv3x3 -> BN -> ReLU
        -> dropout -> flatten -> affine -> BN -> ReLU -> [Re gamma | Im gamma]
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass
class ComplexVector:
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=np.float64)
        self.im = np.asarray(self.im, dtype=np.float64)
        if self.re.shape != self.im.shape:
            raise ValueError(f"re/im shape mismatch: {self.re.shape} vs {self.im.shape}")
        if self.re.ndim == 0 or self.re.shape[-1] == 0:
            raise ValueError("complex vector needs at least one component")
        if not (np.isfinite(self.re).all() and np.isfinite(self.im).all()):
            raise ValueError("complex vector has non-finite entries")

    @property
    def dim(self) -> int:
        return self.re.shape[-1]

    @classmethod
    def from_complex(cls, z) -> "ComplexVector":
        z = np.asarray(z, dtype=np.complex128)
        return cls(z.real.copy(), z.imag.copy())

    @classmethod
    def ones(cls, d: int) -> "ComplexVector":
        """The 1+1i gate under which ConEx reduces to ComplEx."""
        return cls(np.ones(d), np.ones(d))

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    def conj(self) -> "ComplexVector":
        return ComplexVector(self.re, -self.im)


def _check_dims(*vectors: ComplexVector) -> None:
    dims = {v.dim for v in vectors}
    if len(dims) != 1:
        raise ValueError(f"dimension mismatch: {sorted(dims)}")


def gated_product(g_re, g_im, h_re, h_im, r_re, r_im):
    """Return ``(q_re, q_im)`` such that the score against ``t`` is ``q_re.t_re + q_im.t_im``.

    The real part of the gate scales the terms carrying ``Re h`` and the
    imaginary part scales the terms carrying ``Im h``. With ``g = 1+1i`` this is
    exactly the complex product ``h * r``.
    """
    a = g_re * h_re
    b = g_im * h_im
    return a * r_re - b * r_im, a * r_im + b * r_re


def hermitian_quad_score(g: ComplexVector, h: ComplexVector, r: ComplexVector, t: ComplexVector) -> float:
    _check_dims(g, h, r, t)
    q_re, q_im = gated_product(g.re, g.im, h.re, h.im, r.re, r.im)
    return float(np.sum(q_re * t.re + q_im * t.im))


def hermitian_triple_score(h: ComplexVector, r: ComplexVector, t: ComplexVector) -> float:
    """ComplEx score ``Re(<h, r, conj(t)>)``."""
    _check_dims(h, r, t)
    return hermitian_quad_score(ComplexVector.ones(h.dim), h, r, t)


def stack_input(h: ComplexVector, r: ComplexVector) -> np.ndarray:
    """Stack into a single-channel ``4 x d`` image (batched: ``N x 4 x d``)."""
    _check_dims(h, r)
    return np.stack([h.re, h.im, r.re, r.im], axis=-2)


# --------------------------------------------------------------------------
# parameters


@dataclass
class BatchNorm:
    weight: np.ndarray
    bias: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def identity(cls, n: int) -> "BatchNorm":
        return cls(np.ones(n), np.zeros(n), np.zeros(n), np.ones(n))

    @property
    def size(self) -> int:
        return self.weight.shape[0]


@dataclass
class ConvParams:
    kernels: np.ndarray  # (c, 3, 3), single input channel, no bias
    W: np.ndarray  # (c * 4 * d, 2 * d)
    b: np.ndarray  # (2 * d,)
    bn0: BatchNorm  # input image, 1 channel
    bn1: BatchNorm  # feature map, c channels
    bn2: BatchNorm  # projected vector, 2d features

    def __post_init__(self):
        c = self.kernels.shape[0]
        if self.kernels.shape != (c, 3, 3):
            raise ValueError(f"kernels must be (c, 3, 3), got {self.kernels.shape}")
        two_d = self.b.shape[0]
        if two_d % 2:
            raise ValueError("affine output must have even length 2d")
        d = two_d // 2
        if self.W.shape != (c * 4 * d, two_d):
            raise ValueError(f"W must be {(c * 4 * d, two_d)}, got {self.W.shape}")
        for bn, n in ((self.bn0, 1), (self.bn1, c), (self.bn2, two_d)):
            if bn.size != n:
                raise ValueError(f"batchnorm size {bn.size}, expected {n}")

    @property
    def channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def dim(self) -> int:
        return self.b.shape[0] // 2

    @classmethod
    def zeros(cls, d: int, c: int) -> "ConvParams":
        """All-zero weights with identity batch norms."""
        return cls(
            np.zeros((c, 3, 3)), np.zeros((c * 4 * d, 2 * d)), np.zeros(2 * d),
            BatchNorm.identity(1), BatchNorm.identity(c), BatchNorm.identity(2 * d),
        )

    def trainable(self) -> dict[str, np.ndarray]:
        out = {"kernels": self.kernels, "W": self.W, "b": self.b}
        for name in ("bn0", "bn1", "bn2"):
            bn = getattr(self, name)
            out[f"{name}.weight"] = bn.weight
            out[f"{name}.bias"] = bn.bias
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("bn0", "bn1", "bn2"):
            bn = getattr(self, name)
            out[f"{name}.running_mean"] = bn.running_mean
            out[f"{name}.running_var"] = bn.running_var
        return out


# --------------------------------------------------------------------------
# building blocks


def _bn_forward(x, bn: BatchNorm, axes: tuple[int, ...], train: bool, update_running: bool):
    shape = [1] * x.ndim
    shape[1] = -1
    w = bn.weight.reshape(shape)
    b = bn.bias.reshape(shape)
    if not train:
        mean = bn.running_mean.reshape(shape)
        inv_std = 1.0 / np.sqrt(bn.running_var.reshape(shape) + BN_EPS)
        return (x - mean) * inv_std * w + b, None
    count = int(np.prod([x.shape[a] for a in axes]))
    if count < 2:
        raise ValueError("batch norm in training mode needs more than one value per channel")
    mean = x.mean(axis=axes, keepdims=True)
    var = x.var(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    x_hat = (x - mean) * inv_std
    if update_running:
        bn.running_mean *= 1 - BN_MOMENTUM
        bn.running_mean += BN_MOMENTUM * mean.reshape(-1)
        bn.running_var *= 1 - BN_MOMENTUM
        bn.running_var += BN_MOMENTUM * var.reshape(-1) * count / (count - 1)
    return x_hat * w + b, (x_hat, inv_std, w, axes, count)


def _bn_backward(dy, cache):
    x_hat, inv_std, w, axes, count = cache
    dweight = (dy * x_hat).sum(axis=axes)
    dbias = dy.sum(axis=axes)
    dx_hat = dy * w
    dx = inv_std / count * (
        count * dx_hat
        - dx_hat.sum(axis=axes, keepdims=True)
        - x_hat * (dx_hat * x_hat).sum(axis=axes, keepdims=True)
    )
    return dx, dweight, dbias


def _dropout_mask(rng: np.random.Generator | None, p: float, shape) -> np.ndarray | None:
    if p <= 0.0:
        return None
    if rng is None:
        raise ValueError("dropout in training mode requires a random generator")
    return (rng.random(shape) >= p) / (1.0 - p)


def _im2col(x: np.ndarray) -> np.ndarray:
    """(N, H, W) -> (N, 9, H, W) shifted copies for a 3x3, pad-1 convolution."""
    n, h, w = x.shape
    xp = np.zeros((n, h + 2, w + 2))
    xp[:, 1:-1, 1:-1] = x
    return np.stack([xp[:, i : i + h, j : j + w] for i in range(3) for j in range(3)], axis=1)


def _col2im(dcols: np.ndarray) -> np.ndarray:
    n, _, h, w = dcols.shape
    dxp = np.zeros((n, h + 2, w + 2))
    for k in range(9):
        i, j = divmod(k, 3)
        dxp[:, i : i + h, j : j + w] += dcols[:, k]
    return dxp[:, 1:-1, 1:-1]


def conv2d(image: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Single-input-channel 3x3 convolution, stride 1, zero padding 1.

    ``image`` is (N, H, W); returns (N, c, H, W). Cross-correlation, as in every
    deep-learning framework.
    """
    return np.einsum("ck,nkyx->ncyx", kernels.reshape(kernels.shape[0], 9), _im2col(image))


# --------------------------------------------------------------------------
# the gate


@dataclass
class FeatureTape:
    """Activations cached by a training-mode forward pass."""

    image: np.ndarray
    bn0: tuple
    mask0: np.ndarray | None
    cols: np.ndarray
    bn1: tuple
    pre_relu1: np.ndarray
    mask1: np.ndarray | None
    flat: np.ndarray
    bn2: tuple
    pre_relu2: np.ndarray


def conv_forward(
    h: ComplexVector,
    r: ComplexVector,
    params: ConvParams,
    mode: str = "eval",
    *,
    rng: np.random.Generator | None = None,
    input_dropout: float = 0.0,
    feature_dropout: float = 0.0,
    update_running: bool = True,
) -> tuple[ComplexVector, FeatureTape | None]:
    """Compute ``gamma = conv(h, r)``.

    Accepts single vectors or batches (leading axis). In ``"train"`` mode batch
    norms use batch statistics, dropout is applied and a tape is returned;
    in ``"eval"`` mode running statistics are used and the tape is ``None``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    _check_dims(h, r)
    d, c = params.dim, params.channels
    if h.dim != d:
        raise ValueError(f"embedding dim {h.dim} does not match conv params dim {d}")
    single = h.re.ndim == 1
    image = stack_input(h, r)
    if single:
        image = image[None]
    n = image.shape[0]
    train = mode == "train"

    x, bn0 = _bn_forward(image[:, None], params.bn0, (0, 2, 3), train, update_running)
    x = x[:, 0]
    mask0 = _dropout_mask(rng, input_dropout, x.shape) if train else None
    if mask0 is not None:
        x = x * mask0
    cols = _im2col(x)
    fmap = np.einsum("ck,nkyx->ncyx", params.kernels.reshape(c, 9), cols)
    pre1, bn1 = _bn_forward(fmap, params.bn1, (0, 2, 3), train, update_running)
    a1 = np.maximum(pre1, 0.0)
    mask1 = _dropout_mask(rng, feature_dropout, a1.shape) if train else None
    if mask1 is not None:
        a1 = a1 * mask1
    flat = a1.reshape(n, c * 4 * d)
    z = flat @ params.W + params.b
    pre2, bn2 = _bn_forward(z, params.bn2, (0,), train, update_running)
    out = np.maximum(pre2, 0.0)
    if not np.isfinite(out).all():
        raise FloatingPointError("non-finite activation in conv gate")
    if single:
        out = out[0]
    gamma = ComplexVector(out[..., :d], out[..., d:])
    tape = None
    if train:
        tape = FeatureTape(image, bn0, mask0, cols, bn1, pre1, mask1, flat, bn2, pre2)
    return gamma, tape


def conv_backward(
    tape: FeatureTape | None, grad_gamma: ComplexVector, params: ConvParams
) -> tuple[dict[str, np.ndarray], ComplexVector, ComplexVector]:
    """Reverse pass through the gate.

    Returns ``(param_grads, grad_h, grad_r)`` where ``param_grads`` uses the
    keys of :meth:`ConvParams.trainable`.
    """
    if tape is None:
        raise ValueError("conv_backward needs the tape of a training-mode forward pass")
    d, c = params.dim, params.channels
    single = grad_gamma.re.ndim == 1
    g = np.concatenate([grad_gamma.re, grad_gamma.im], axis=-1)
    if single:
        g = g[None]
    n = g.shape[0]

    g = g * (tape.pre_relu2 > 0)
    g, dw2, db2 = _bn_backward(g, tape.bn2)
    db = g.sum(axis=0)
    dW = tape.flat.T @ g
    g = (g @ params.W.T).reshape(n, c, 4, d)
    if tape.mask1 is not None:
        g = g * tape.mask1
    g = g * (tape.pre_relu1 > 0)
    g, dw1, db1 = _bn_backward(g, tape.bn1)
    dk = np.einsum("ncyx,nkyx->ck", g, tape.cols).reshape(c, 3, 3)
    g = _col2im(np.einsum("ck,ncyx->nkyx", params.kernels.reshape(c, 9), g))
    if tape.mask0 is not None:
        g = g * tape.mask0
    g, dw0, db0 = _bn_backward(g[:, None], tape.bn0)
    g = g[:, 0]
    if single:
        g = g[0]
    grads = {
        "kernels": dk, "W": dW, "b": db,
        "bn0.weight": dw0, "bn0.bias": db0,
        "bn1.weight": dw1, "bn1.bias": db1,
        "bn2.weight": dw2, "bn2.bias": db2,
    }
    grad_h = ComplexVector(g[..., 0, :], g[..., 1, :])
    grad_r = ComplexVector(g[..., 2, :], g[..., 3, :])
    return grads, grad_h, grad_r
