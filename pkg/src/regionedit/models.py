"""Noise predictors with an explicit, injectable bottleneck vector ``h``.

Both backends expose

* ``eval(x_t, t, delta_h=None, h=None)``: predicted noise.  ``delta_h`` is
  added to the bottleneck; ``h`` replaces it outright.
* ``extract_h(x_t, t)``: the bottleneck vector the model would use.

:class:`AnalyticGaussianModel` is the optimal predictor for data drawn from
``N(mu0 + W h, s2 I)`` and so has a closed-form Jacobian.
:class:`TinyUNet` is a small conv encoder/decoder without skips, so that
everything reaching the output passes through ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import FormatError, Reader, Writer, atomic_write
from .rng import Rng
from .schedule import Schedule


def _check_delta(delta_h, d_h):
    if delta_h is None:
        return None
    delta_h = np.asarray(delta_h, dtype=np.float64)
    if delta_h.shape != (d_h,):
        raise ValueError(f"delta_h must have length {d_h}, got shape {delta_h.shape}")
    return delta_h


def _check_image(x, shape):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != tuple(shape):
        raise ValueError(f"image shape {x.shape} != model image shape {tuple(shape)}")
    return x


# ---------------------------------------------------------------- analytic


@dataclass(frozen=True, eq=False)
class AnalyticGaussianModel:
    mu0: np.ndarray  # [C, H, W]
    W: np.ndarray  # [C*H*W, d_h]
    s2: float
    schedule: Schedule
    h0: np.ndarray | None = None

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=np.float64)
        W = np.asarray(self.W, dtype=np.float64)
        if mu0.ndim != 3:
            raise ValueError("mu0 must be [C, H, W]")
        if W.ndim != 2 or W.shape[0] != mu0.size:
            raise ValueError(f"W must be [{mu0.size}, d_h], got {W.shape}")
        if not np.all(np.isfinite(W)) or np.any(np.linalg.norm(W, axis=0) == 0):
            raise ValueError("W must be finite with non-zero columns")
        if not self.s2 > 0:
            raise ValueError("s2 must be positive")
        h0 = np.zeros(W.shape[1]) if self.h0 is None else np.asarray(self.h0, dtype=np.float64)
        if h0.shape != (W.shape[1],):
            raise ValueError("h0 must have length d_h")
        for a in (mu0, W, h0):
            a.setflags(write=False)
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "h0", h0)

    @property
    def d_h(self) -> int:
        return self.W.shape[1]

    @property
    def image_shape(self) -> tuple:
        return self.mu0.shape

    def gain(self, t: int) -> float:
        """Coefficient ``c_t`` in ``E[eps | x_t] = c_t (x_t - sqrt(ab) m)``."""
        a = self.schedule.alpha_bar[t]
        return float(np.sqrt(1.0 - a) / (a * self.s2 + 1.0 - a))

    def mean(self, h) -> np.ndarray:
        return self.mu0 + (self.W @ h).reshape(self.mu0.shape)

    def extract_h(self, x_t, t: int) -> np.ndarray:
        return self.h0.copy()

    def eval(self, x_t, t: int, delta_h=None, h=None) -> np.ndarray:
        x_t = _check_image(x_t, self.image_shape)
        self.schedule.check_t(t, lo=0)
        delta_h = _check_delta(delta_h, self.d_h)
        hv = self.h0 if h is None else _check_delta(h, self.d_h)
        if delta_h is not None:
            hv = hv + delta_h
        a = self.schedule.alpha_bar[t]
        return self.gain(t) * (x_t - np.sqrt(a) * self.mean(hv))

    def jacobian(self, t: int) -> np.ndarray:
        a = self.schedule.alpha_bar[t]
        return -np.sqrt(1.0 - a) * np.sqrt(a) / (a * self.s2 + 1.0 - a) * self.W

    def sample_x0(self, rng: Rng, h=None) -> np.ndarray:
        hv = self.h0 if h is None else np.asarray(h, dtype=np.float64)
        return self.mean(hv) + np.sqrt(self.s2) * rng.fill_gaussian(self.image_shape)


def analytic_jacobian(model: AnalyticGaussianModel, t: int) -> np.ndarray:
    return model.jacobian(t)


def blob_analytic_model(schedule: Schedule, image_shape=(1, 16, 16), d_h: int = 16, s2: float = 0.05,
                        seed: int = 0, width_range=(1.5, 4.0)) -> AnalyticGaussianModel:
    """Analytic model whose ``W`` columns are random Gaussian bumps.

    Bumps overlap, so most h directions move pixels both inside and outside
    any given rectangle; this is the regime where projection matters.
    """
    C, H, Wd = image_shape
    rng = Rng(seed, stream=11)
    yy, xx = np.mgrid[0:H, 0:Wd].astype(np.float64)
    cols = []
    for _ in range(d_h):
        cy, cx = rng.uniforms(2) * [H - 1, Wd - 1]
        width = width_range[0] + (width_range[1] - width_range[0]) * rng.next_uniform()
        amp = 0.3 + 0.4 * rng.next_uniform()
        bump = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        chan = 0.5 + rng.uniforms(C)
        cols.append((chan[:, None, None] * bump[None]).ravel())
    W = np.stack(cols, axis=1)
    return AnalyticGaussianModel(_base_image(image_shape), W, s2, schedule)


def _base_image(image_shape):
    C, H, W = image_shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    return 0.4 * np.cos(np.pi * yy / H)[None] * np.sin(np.pi * (xx + 1) / (W + 1))[None] * np.ones((C, 1, 1))


def split_blob_model(schedule: Schedule, mask_bits, channels: int = 1, d_h: int = 16, n_confined: int = 6,
                     s2: float = 0.05, seed: int = 0) -> AnalyticGaussianModel:
    """Bumps confined to the mask's bounding box plus bumps centred on its boundary.

    Confined columns are cut to zero outside the mask, so the complement
    Jacobian has rank ``d_h - n_confined`` and there are directions that move
    only the masked region; the straddling columns are what leaks.
    """
    bits = np.asarray(mask_bits, dtype=np.float64)
    if not 0 <= n_confined <= d_h:
        raise ValueError("n_confined must lie in [0, d_h]")
    ys, xs = np.nonzero(bits)
    if len(ys) == 0:
        raise ValueError("mask selects no pixels")
    top, bot, left, right = ys.min(), ys.max(), xs.min(), xs.max()
    H, W = bits.shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    rng = Rng(seed, stream=12)
    cols = []
    for i in range(d_h):
        if i < n_confined:
            cy, cx = top + rng.next_uniform() * (bot - top), left + rng.next_uniform() * (right - left)
        else:
            side, u = int(rng.next_uniform() * 4), rng.next_uniform()
            cy, cx = [(top, left + u * (right - left)), (bot, left + u * (right - left)),
                      (top + u * (bot - top), left), (top + u * (bot - top), right)][side]
        width = 1.5 + 2.0 * rng.next_uniform()
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2)) * (0.3 + 0.4 * rng.next_uniform())
        if i < n_confined:
            bump = bump * bits
        chan = 0.5 + rng.uniforms(channels)
        cols.append((chan[:, None, None] * bump[None]).ravel())
    return AnalyticGaussianModel(_base_image((channels, H, W)), np.stack(cols, axis=1), s2, schedule)


# ---------------------------------------------------------------- tiny u-net


def silu(x):
    return x / (1.0 + np.exp(-x))


def conv_s2(x, w, b):
    """3x3 convolution, stride 2, zero padding 1.  ``x`` [C,H,W], ``w`` [O,C,3,3]."""
    _, H, W = x.shape
    Ho, Wo = (H - 1) // 2 + 1, (W - 1) // 2 + 1
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.broadcast_to(b[:, None, None], (w.shape[0], Ho, Wo)).copy()
    for ky in range(3):
        for kx in range(3):
            patch = xp[:, ky:ky + 2 * Ho - 1:2, kx:kx + 2 * Wo - 1:2]
            out += np.einsum("oc,chw->ohw", w[:, :, ky, kx], patch)
    return out


def deconv_s2(x, w, b):
    """3x3 transposed convolution, stride 2, padding 1, output padding 1.  ``w`` [C,O,3,3]."""
    _, h, wd = x.shape
    O = w.shape[1]
    full = np.zeros((O, 2 * h + 1, 2 * wd + 1), dtype=np.result_type(x, w))
    for ky in range(3):
        for kx in range(3):
            full[:, ky:ky + 2 * h:2, kx:kx + 2 * wd:2] += np.einsum("co,chw->ohw", w[:, :, ky, kx], x)
    return full[:, 1:1 + 2 * h, 1:1 + 2 * wd] + b[:, None, None]


N_FREQ = 8


def time_features(t: int, T: int) -> np.ndarray:
    """``sin``/``cos`` of ``2**k * t / T`` for ``k < 8``."""
    s = t / T
    ang = (2.0 ** np.arange(N_FREQ)) * s
    return np.concatenate([np.sin(ang), np.cos(ang)])


LAYER_NAMES = (
    "meta",
    "enc1.weight", "enc1.bias",
    "enc2.weight", "enc2.bias",
    "to_h.weight", "to_h.bias",
    "temb.weight",
    "from_h.weight", "from_h.bias",
    "dec1.weight", "dec1.bias",
    "dec2.weight", "dec2.bias",
)

WEIGHTS_MAGIC = b"RBEW"
WEIGHTS_VERSION = 1


class TinyUNet:
    """Two stride-2 convs down, affine bottleneck ``h``, two transposed convs up."""

    def __init__(self, params: dict, image_shape, T: int):
        self.image_shape = tuple(int(s) for s in image_shape)
        self.T = int(T)
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        for v in self.params.values():
            v.setflags(write=False)
        _validate_shapes(self.params, self.image_shape)

    @property
    def d_h(self) -> int:
        return self.params["to_h.bias"].shape[0]

    @property
    def channel_widths(self) -> tuple:
        return self.params["enc1.bias"].shape[0], self.params["enc2.bias"].shape[0]

    def _encode(self, x_t, t):
        p = self.params
        e1 = silu(conv_s2(x_t, p["enc1.weight"], p["enc1.bias"]))
        e2 = silu(conv_s2(e1, p["enc2.weight"], p["enc2.bias"]))
        return p["to_h.weight"] @ e2.ravel() + p["to_h.bias"] + p["temb.weight"] @ time_features(t, self.T)

    def decode(self, h):
        """Bottleneck to noise estimate; accepts complex ``h`` for complex-step checks."""
        p = self.params
        C, H, W = self.image_shape
        g = silu(p["from_h.weight"] @ h + p["from_h.bias"]).reshape(-1, H // 4, W // 4)
        d1 = silu(deconv_s2(g, p["dec1.weight"], p["dec1.bias"]))
        return deconv_s2(d1, p["dec2.weight"], p["dec2.bias"])

    def _check_t(self, t):
        if not 0 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T}]")

    def extract_h(self, x_t, t: int) -> np.ndarray:
        self._check_t(t)
        return self._encode(_check_image(x_t, self.image_shape), t)

    def eval(self, x_t, t: int, delta_h=None, h=None) -> np.ndarray:
        self._check_t(t)
        x_t = _check_image(x_t, self.image_shape)
        delta_h = _check_delta(delta_h, self.d_h)
        hv = self._encode(x_t, t) if h is None else _check_delta(h, self.d_h)
        if delta_h is not None:
            hv = hv + delta_h
        return self.decode(hv)


def expected_shapes(image_shape, d_h: int, channel_widths) -> dict:
    C, H, W = image_shape
    c1, c2 = channel_widths
    n_bottle = c2 * (H // 4) * (W // 4)
    return {
        "meta": (4,),
        "enc1.weight": (c1, C, 3, 3), "enc1.bias": (c1,),
        "enc2.weight": (c2, c1, 3, 3), "enc2.bias": (c2,),
        "to_h.weight": (d_h, n_bottle), "to_h.bias": (d_h,),
        "temb.weight": (d_h, 2 * N_FREQ),
        "from_h.weight": (n_bottle, d_h), "from_h.bias": (n_bottle,),
        "dec1.weight": (c2, c1, 3, 3), "dec1.bias": (c1,),
        "dec2.weight": (c1, C, 3, 3), "dec2.bias": (C,),
    }


def _validate_shapes(params, image_shape):
    C, H, W = image_shape
    if H % 4 or W % 4:
        raise ValueError(f"image height and width must be multiples of 4, got {H}x{W}")
    missing = [n for n in LAYER_NAMES if n not in params]
    if missing:
        raise ValueError(f"missing layers: {missing}")
    d_h = params["to_h.bias"].shape[0]
    widths = (params["enc1.bias"].shape[0], params["enc2.bias"].shape[0])
    for name, shape in expected_shapes(image_shape, d_h, widths).items():
        if params[name].shape != shape:
            raise FormatError(f"layer {name}: expected dims {list(shape)}, got {list(params[name].shape)}")


def init_random(seed: int, d_h: int, image_shape=(1, 16, 16), channel_widths=(8, 16), T: int = 50) -> TinyUNet:
    """He-style init (variance 2/fan_in) from the package generator; biases zero."""
    if d_h < 1:
        raise ValueError("d_h must be >= 1")
    rng = Rng(seed, stream=7)
    shapes = expected_shapes(tuple(image_shape), d_h, tuple(channel_widths))
    params = {}
    for name in LAYER_NAMES:
        shape = shapes[name]
        if name == "meta":
            params[name] = np.array([*image_shape, T], dtype=np.float64)
        elif name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            if len(shape) == 4:
                # transposed-conv weights are stored [in, out, kh, kw]
                fan_in = shape[1] * 9 if name.startswith("enc") else shape[0] * 9
            else:
                fan_in = shape[1]
            params[name] = rng.fill_gaussian(shape) * np.sqrt(2.0 / fan_in)
    return TinyUNet(params, image_shape, T)


def save_weights(model: TinyUNet, path):
    w = Writer()
    w.u32(WEIGHTS_VERSION, len(LAYER_NAMES))
    for name in LAYER_NAMES:
        w.tensor(model.params[name])
    atomic_write(path, w.framed(WEIGHTS_MAGIC))


def load_weights(path) -> TinyUNet:
    data = Path(path).read_bytes()
    r = Reader(data, WEIGHTS_MAGIC, what=f"weights file {path}")
    version = r.u32("version")
    if version != WEIGHTS_VERSION:
        raise FormatError(f"weights file {path}: unsupported version {version}, expected {WEIGHTS_VERSION}")
    count = r.u32("layer count")
    if count != len(LAYER_NAMES):
        raise FormatError(f"weights file {path}: layer count {count}, expected {len(LAYER_NAMES)}")
    params = {name: r.tensor(f"layer {name}") for name in LAYER_NAMES}
    r.finish()
    meta = params["meta"]
    if meta.shape != (4,):
        raise FormatError(f"weights file {path}: layer meta: expected dims [4], got {list(meta.shape)}")
    C, H, W, T = (int(v) for v in meta)
    try:
        return TinyUNet(params, (C, H, W), T)
    except FormatError as exc:
        raise FormatError(f"weights file {path}: {exc}") from None
