"""Grayscale image substrate: PGM I/O, affine warps, smoothing, and noise.

Every other module samples pixels through :class:`GrayImage`; all warping
follows the inverse-mapping convention (output pixels pull from the source)
so warped images never contain holes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, ParseError, UnsupportedFormat

# Fill value for samples that fall outside the source image. Mid-gray, so
# background neither always wins nor always loses a binary comparison.
BACKGROUND = 127

# Scale range the deformation sampler draws from.
SCALE_LOW = 0.6
SCALE_HIGH = 1.5

TWO_PI = 2.0 * math.pi

_WHITESPACE = b" \t\r\n\v\f"


@dataclass(frozen=True, eq=False)
class GrayImage:
    """An immutable height x width grid of 8-bit intensities."""

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if not isinstance(px, np.ndarray) or px.ndim != 2:
            raise InvalidArgument("pixels must be a 2-D numpy array")
        if px.dtype != np.uint8:
            raise InvalidArgument(f"pixels must be uint8, got {px.dtype}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidArgument("image must be at least 1x1")
        if not px.flags.c_contiguous:
            px = np.ascontiguousarray(px)
        if px.flags.writeable:
            px = px.copy()
            px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, values) -> "GrayImage":
        """Build from any integer array with values in [0, 255]."""
        arr = np.asarray(values)
        if arr.dtype.kind not in "iu" and arr.dtype != np.uint8:
            raise InvalidArgument(f"expected integer values, got {arr.dtype}")
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise InvalidArgument("intensities must lie in [0, 255]")
        return cls(arr.astype(np.uint8))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def center(self) -> tuple[float, float]:
        """Geometric center (cx, cy) with pixel centers on integer coords."""
        return (self.width - 1) / 2.0, (self.height - 1) / 2.0

    def at(self, x: int, y: int) -> int:
        return int(self.pixels[y, x])

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class AffineDeform:
    """Affine warp parameters.

    The induced 2x2 matrix is R(theta) . R(-phi) . diag(lambda1, lambda2)
    . R(phi): anisotropic scaling along an axis pair rotated by phi,
    followed by a rotation of theta. (tx, ty) is the source point that
    lands on the output center when the warp is rendered.
    """

    theta: float
    phi: float
    lambda1: float
    lambda2: float
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        for name in ("theta", "phi", "lambda1", "lambda2", "tx", "ty"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidArgument(f"{name} must be finite")
        if self.lambda1 <= 0.0 or self.lambda2 <= 0.0:
            raise InvalidArgument("scales must be positive")
        object.__setattr__(self, "theta", self.theta % TWO_PI)
        object.__setattr__(self, "phi", self.phi % TWO_PI)


def _rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def deform_matrix(d: AffineDeform) -> np.ndarray:
    """2x2 matrix R(theta) . R(-phi) . diag(lambda1, lambda2) . R(phi)."""
    scale = np.diag([d.lambda1, d.lambda2])
    return _rotation(d.theta) @ _rotation(-d.phi) @ scale @ _rotation(d.phi)


def inverse_deform(d: AffineDeform, width: int, height: int) -> AffineDeform:
    """Deform that undoes ``d`` when both warps are rendered at width x height."""
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    t = deform_matrix(d) @ np.array([cx - d.tx, cy - d.ty]) + np.array([cx, cy])
    return AffineDeform(
        theta=-d.theta,
        phi=d.phi - d.theta,
        lambda1=1.0 / d.lambda1,
        lambda2=1.0 / d.lambda2,
        tx=float(t[0]),
        ty=float(t[1]),
    )


def read_pgm(data: bytes) -> GrayImage:
    """Decode a binary "P5" PGM with maxval <= 255.

    Header comments (``#`` to end of line) and arbitrary whitespace between
    tokens are accepted; the raster must hold one byte per pixel.
    """
    if len(data) < 2:
        raise ParseError("file too short for a PGM magic")
    magic = data[:2]
    if magic != b"P5":
        if magic[:1] == b"P" and magic[1:2] in b"1234567":
            raise UnsupportedFormat(f"unsupported PNM magic {magic!r}")
        raise ParseError(f"not a PGM file (magic {magic!r})")

    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _next_header_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise ParseError(f"expected integer header field, got {token!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ParseError(f"bad dimensions {width}x{height}")
    if maxval > 255:
        raise UnsupportedFormat(f"maxval {maxval} needs two bytes per pixel")
    if maxval < 1:
        raise ParseError(f"bad maxval {maxval}")
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise ParseError("missing whitespace between header and raster")
    pos += 1

    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise ParseError(
            f"truncated raster: expected {width * height} bytes, got {len(raster)}"
        )
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return GrayImage(pixels.copy())


def _next_header_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos]
        if c in _WHITESPACE:
            pos += 1
        elif c == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
        else:
            break
    if pos >= n:
        raise ParseError("unexpected end of header")
    start = pos
    while pos < n and data[pos] not in _WHITESPACE:
        pos += 1
    return data[start:pos], pos


def write_pgm(img: GrayImage) -> bytes:
    """Encode as binary P5 with maxval 255; read_pgm round-trips bit-exactly."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def _to_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def _bilinear(pixels: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample at real coordinates; anything outside the grid reads BACKGROUND."""
    h, w = pixels.shape
    inside = (sx >= 0.0) & (sx <= w - 1.0) & (sy >= 0.0) & (sy <= h - 1.0)
    x0 = np.clip(np.floor(sx), 0, w - 1).astype(np.intp)
    y0 = np.clip(np.floor(sy), 0, h - 1).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(sx - x0, 0.0, 1.0)
    fy = np.clip(sy - y0, 0.0, 1.0)
    v00 = pixels[y0, x0].astype(np.float64)
    v01 = pixels[y0, x1].astype(np.float64)
    v10 = pixels[y1, x0].astype(np.float64)
    v11 = pixels[y1, x1].astype(np.float64)
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return np.where(inside, top * (1.0 - fy) + bot * fy, float(BACKGROUND))


def warp_image(src: GrayImage, d: AffineDeform, out_w: int, out_h: int) -> GrayImage:
    """Render the deformed view of ``src`` at ``out_w`` x ``out_h``.

    Each output pixel is mapped through the inverse of ``deform_matrix(d)``
    about the output center, then translated by (tx, ty) into source
    coordinates and sampled bilinearly. Samples outside the source read the
    mid-gray background.
    """
    if out_w < 1 or out_h < 1:
        raise InvalidArgument("output size must be at least 1x1")
    inv = np.linalg.inv(deform_matrix(d))
    cx, cy = (out_w - 1) / 2.0, (out_h - 1) / 2.0
    ys, xs = np.meshgrid(
        np.arange(out_h, dtype=np.float64),
        np.arange(out_w, dtype=np.float64),
        indexing="ij",
    )
    u = xs - cx
    v = ys - cy
    sx = inv[0, 0] * u + inv[0, 1] * v + d.tx
    sy = inv[1, 0] * u + inv[1, 1] * v + d.ty
    return GrayImage(_to_u8(_bilinear(src.pixels, sx, sy)))


def warp_points(d: AffineDeform, out_w: int, out_h: int, points) -> np.ndarray:
    """Map source-frame points to the output frame of ``warp_image``."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a = deform_matrix(d)
    center = np.array([(out_w - 1) / 2.0, (out_h - 1) / 2.0])
    return (pts - np.array([d.tx, d.ty])) @ a.T + center


def unwarp_points(d: AffineDeform, out_w: int, out_h: int, points) -> np.ndarray:
    """Map output-frame points back to the source frame of ``warp_image``."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    inv = np.linalg.inv(deform_matrix(d))
    center = np.array([(out_w - 1) / 2.0, (out_h - 1) / 2.0])
    return (pts - center) @ inv.T + np.array([d.tx, d.ty])


def sample_deformation(rng: np.random.Generator) -> AffineDeform:
    """Draw theta, phi uniform on [0, 2pi) and both scales uniform on [0.6, 1.5].

    Translation is left at zero; callers anchor it where the crop should land.
    """
    theta = rng.uniform(0.0, TWO_PI)
    phi = rng.uniform(0.0, TWO_PI)
    lambda1 = rng.uniform(SCALE_LOW, SCALE_HIGH)
    lambda2 = rng.uniform(SCALE_LOW, SCALE_HIGH)
    return AffineDeform(theta, phi, lambda1, lambda2)


def add_noise(img: GrayImage, sigma: float, rng: np.random.Generator) -> GrayImage:
    """Add i.i.d. Gaussian noise of the given std, rounded and clamped."""
    if sigma < 0:
        raise InvalidArgument(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img
    noisy = img.pixels.astype(np.float64) + rng.normal(0.0, sigma, img.pixels.shape)
    return GrayImage(_to_u8(noisy))


def box_mean(values: np.ndarray, radius: int) -> np.ndarray:
    """Mean over the (2r+1)^2 window around each cell, clipped at borders.

    Returns float64; exact for integer inputs (integer summed-area table).
    """
    if radius < 0:
        raise InvalidArgument(f"radius must be >= 0, got {radius}")
    arr = np.asarray(values)
    if radius == 0:
        return arr.astype(np.float64)
    h, w = arr.shape
    acc_dtype = np.int64 if arr.dtype.kind in "iu" else np.float64
    table = np.zeros((h + 1, w + 1), dtype=acc_dtype)
    table[1:, 1:] = arr.astype(acc_dtype).cumsum(axis=0).cumsum(axis=1)
    ys = np.arange(h)
    xs = np.arange(w)
    y1 = np.maximum(ys - radius, 0)
    y2 = np.minimum(ys + radius + 1, h)
    x1 = np.maximum(xs - radius, 0)
    x2 = np.minimum(xs + radius + 1, w)
    sums = (
        table[y2[:, None], x2[None, :]]
        - table[y1[:, None], x2[None, :]]
        - table[y2[:, None], x1[None, :]]
        + table[y1[:, None], x1[None, :]]
    )
    area = (y2 - y1)[:, None] * (x2 - x1)[None, :]
    return sums / area


def box_smooth(img: GrayImage, radius: int) -> GrayImage:
    """Box-filter the image; radius 0 is the identity."""
    if radius == 0:
        return img
    return GrayImage(_to_u8(box_mean(img.pixels, radius)))
