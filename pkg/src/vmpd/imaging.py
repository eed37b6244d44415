"""Experiment building blocks: degradation operators, noise synthesis,
SNR, image containers and I/O.

Pixel values stay unconstrained floats throughout the pipeline; clamping to
[0, 255] happens only on PGM export (the range constraint is enforced by the
solver's box term, not by the container).
"""

import math
import struct

import numpy as np

from . import funcs, linop, pdsolve
from .rng import STREAM_NOISE_1, STREAM_NOISE_2, gaussians


class ImageFormatError(ValueError):
    """Malformed or unsupported image file."""


class Image:
    """Row-major float image of shape height x width."""

    def __init__(self, width, height, pixels):
        pixels = np.asarray(pixels, dtype=np.float64).reshape(-1)
        if width < 1 or height < 1:
            raise ValueError("image dimensions must be positive")
        if pixels.size != width * height:
            raise ValueError("pixel count does not match dimensions")
        self.width = int(width)
        self.height = int(height)
        self.pixels = pixels.copy()

    @classmethod
    def from_grid(cls, grid):
        grid = np.asarray(grid, dtype=np.float64)
        return cls(grid.shape[1], grid.shape[0], grid.reshape(-1))

    def grid(self):
        return self.pixels.reshape(self.height, self.width)

    def same_shape(self, other):
        return self.width == other.width and self.height == other.height


def uniform_kernel(size):
    """size x size uniform kernel, normalized to sum 1; size must be odd."""
    if size < 1 or size % 2 == 0:
        raise ValueError("kernel size must be odd and positive")
    return np.full((size, size), 1.0 / (size * size))


def make_blur(kernel, width, height):
    """Periodic 2-d convolution operator for a normalized odd kernel."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
        raise ValueError("kernel must be odd-sized and square")
    if np.any(kernel < 0) or abs(kernel.sum() - 1.0) > 1e-12:
        raise ValueError("kernel must be nonnegative and sum to 1")
    return linop.Convolution2D(kernel, width, height)


def make_gradients(width, height):
    """Horizontal and vertical forward-difference operators (Neumann boundary)."""
    g1 = linop.ForwardDifference2D(width, height, "horizontal")
    g2 = linop.ForwardDifference2D(width, height, "vertical")
    return g1, g2


def add_gaussian_noise(image, variance, seed, stream=STREAM_NOISE_1):
    """Add i.i.d. zero-mean Gaussian noise from the fixed deterministic generator."""
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    if variance == 0:
        return Image(image.width, image.height, image.pixels)
    noise = math.sqrt(variance) * gaussians(seed, stream, 0, image.pixels.size)
    return Image(image.width, image.height, image.pixels + noise)


def degrade_pair(original, kernel, theta1_sq, theta2_sq, seed):
    """The two-observation degradation: w1 = x + n1, w2 = H x + n2."""
    w1 = add_gaussian_noise(original, theta1_sq, seed, stream=STREAM_NOISE_1)
    blur = make_blur(kernel, original.width, original.height)
    blurred = Image(original.width, original.height, blur.apply(original.pixels))
    w2 = add_gaussian_noise(blurred, theta2_sq, seed, stream=STREAM_NOISE_2)
    return w1, w2, blur


def snr_db(reference, x):
    """20 log10(||reference|| / ||x - reference||); +inf when x == reference."""
    if not reference.same_shape(x):
        raise linop.DimensionError("snr_db: image shapes differ")
    err = float(np.linalg.norm(x.pixels - reference.pixels))
    if err == 0.0:
        return math.inf
    return 20.0 * math.log10(float(np.linalg.norm(reference.pixels)) / err)


def build_restoration_problem(w1, w2, blur, theta1_sq, theta2_sq, kappa):
    """CompositeProblem for the two-observation restoration experiment:

    minimize  i_[0,255](x) + kappa ||[G1 x; G2 x]||_{1,2}
              + (1/theta1^2)||x - w1||^2 + (1/theta2^2)||H x - w2||^2

    phrased with f = 0, z = 0, L1 = Id, L2 = [G1; G2], r_i = 0 and exact
    (indicator-zero) infimal terms.
    """
    if not w1.same_shape(w2):
        raise linop.DimensionError("observations must share dimensions")
    n = w1.pixels.size
    g1_op, g2_op = make_gradients(w1.width, w1.height)
    L2 = linop.stack([g1_op, g2_op])
    blocks_l12 = funcs.BlockStructure.pixel_pairs(n)
    h = funcs.two_observation_data_term(w1.pixels, w2.pixels, blur, theta1_sq, theta2_sq)
    return pdsolve.CompositeProblem(
        n, funcs.zero_prox(n), h, np.zeros(n),
        [(funcs.box_indicator(0.0, 255.0, n), funcs.InfConvTerm.exact(),
          linop.Identity(n), np.zeros(n)),
         (funcs.scaled_l12(kappa, blocks_l12), funcs.InfConvTerm.exact(),
          L2, np.zeros(2 * n))])


def scalar_metrics(tau, sigma1, sigma2, n_pixels):
    """Scalar-mode metrics (tau Id, sigma1 Id, sigma2 Id) for the experiment."""
    pairs = funcs.BlockStructure.pixel_pairs(n_pixels)
    U = funcs.DiagonalMetric.scalar(tau, n_pixels)
    U1 = funcs.DiagonalMetric.scalar(sigma1, n_pixels)
    U2 = funcs.DiagonalMetric.scalar(sigma2, 2 * n_pixels, block_constant_over=pairs)
    return U, [U1, U2]


def diagonal_metrics(tau_img, sigma1_img, sigma2_img):
    """Diagonal-mode metrics from per-pixel weight images.

    ``sigma2_img`` holds one weight per pixel; it is duplicated onto the two
    stacked gradient components so the l12 prox keeps its radial closed form.
    """
    n = tau_img.pixels.size
    if sigma1_img.pixels.size != n or sigma2_img.pixels.size != n:
        raise linop.DimensionError("weight images must share the image size")
    pairs = funcs.BlockStructure.pixel_pairs(n)
    U = funcs.DiagonalMetric(tau_img.pixels)
    U1 = funcs.DiagonalMetric(sigma1_img.pixels)
    U2 = funcs.DiagonalMetric(np.concatenate([sigma2_img.pixels, sigma2_img.pixels]),
                              block_constant_over=pairs)
    return U, [U1, U2]


def test_scene(width, height):
    """Deterministic piecewise-constant scene in [0, 255] for experiments:
    flat background with a bright rectangle, a dark square, a disk and a
    two-step intensity staircase (TV-friendly cartoon content)."""
    g = np.full((height, width), 96.0)
    h4, w4 = height // 4, width // 4
    g[h4:h4 + max(1, height // 3), w4:w4 + max(1, width // 3)] = 208.0
    g[int(0.55 * height):int(0.85 * height), int(0.1 * width):int(0.3 * width)] = 24.0
    yy, xx = np.mgrid[0:height, 0:width]
    r = min(width, height) / 6.0
    disk = (yy - 0.35 * height) ** 2 + (xx - 0.72 * width) ** 2 <= r * r
    g[disk] = 160.0
    band = slice(int(0.7 * height), int(0.95 * height))
    g[band, int(0.55 * width):int(0.75 * width)] = 128.0
    g[band, int(0.75 * width):] = 232.0
    return Image.from_grid(g)


# ---------------------------------------------------------------------------
# File formats: PGM (P2/P5, maxval <= 255) and the raw float dump "PDF64".

_RAW_MAGIC = b"PDF64"


def write_pgm(image, path):
    """Write binary P5, clamping to [0, 255] and rounding half away from zero."""
    vals = np.clip(image.pixels, 0.0, 255.0)
    vals = np.floor(vals + 0.5).astype(np.uint8)  # clamped values are >= 0
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.width} {image.height}\n255\n".encode("ascii"))
        fh.write(vals.tobytes())


def _read_header_tokens(data):
    """PGM header tokens, skipping whitespace and # comments; returns
    (tokens, offset-after-header)."""
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(data):
            raise ImageFormatError("truncated header")
        c = data[i:i + 1]
        if c == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    # exactly one whitespace byte separates the header from binary payload
    if i < len(data) and data[i:i + 1].isspace():
        i += 1
    return tokens, i


def read_pgm(path):
    """Read P2 (ASCII) or P5 (binary) with maxval <= 255."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] not in (b"P2", b"P5"):
        raise ImageFormatError("not a P2/P5 PGM file")
    magic = data[:2]
    tokens, offset = _read_header_tokens(data)
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as e:
        raise ImageFormatError(f"malformed header: {e}") from None
    if width < 1 or height < 1:
        raise ImageFormatError("nonpositive dimensions")
    if not 0 < maxval <= 255:
        raise ImageFormatError(f"unsupported maxval {maxval}")
    n = width * height
    if magic == b"P5":
        payload = data[offset:offset + n]
        if len(payload) < n:
            raise ImageFormatError("truncated pixel payload")
        pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    else:
        fields = data[offset:].split()
        if len(fields) < n:
            raise ImageFormatError("truncated pixel payload")
        try:
            pixels = np.array([int(f) for f in fields[:n]], dtype=np.float64)
        except ValueError as e:
            raise ImageFormatError(f"bad ASCII sample: {e}") from None
    if np.any(pixels > maxval):
        raise ImageFormatError("sample exceeds maxval")
    return Image(width, height, pixels)


def write_raw(image, path):
    """Raw float dump: magic PDF64, little-endian uint32 width and height,
    then row-major float64 little-endian pixels."""
    with open(path, "wb") as fh:
        fh.write(_RAW_MAGIC)
        fh.write(struct.pack("<II", image.width, image.height))
        fh.write(image.pixels.astype("<f8").tobytes())


def read_raw(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != _RAW_MAGIC:
        raise ImageFormatError("bad magic for raw float dump")
    if len(data) < 13:
        raise ImageFormatError("truncated raw header")
    width, height = struct.unpack("<II", data[5:13])
    n = width * height
    payload = data[13:13 + 8 * n]
    if len(payload) < 8 * n:
        raise ImageFormatError("truncated raw payload")
    pixels = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return Image(width, height, pixels)
