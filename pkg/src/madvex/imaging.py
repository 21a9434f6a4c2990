"""Binary <-> grey-scale image transforms.

A binary of ``|b|`` bytes is laid out row-major in a ``D x D`` square with
``D = floor(sqrt(|b|))``; the remaining bytes form the *tail*. The square is
reduced to 100x100 by averaging rectangular blocks whose boundaries are
``floor(i * D / 100)``. Squares smaller than 100 are zero-padded instead.

For crafting, :func:`downsample` also records which output pixels contain
payload bytes (mask ``M1``) so that :func:`upsample_apply` can write an
adversarial image back into the payload bytes alone.
"""

from dataclasses import dataclass, field
from math import isqrt

import numpy as np

from .errors import EmptyBinary, MaskViolation

SIZE = 100


@dataclass
class DownsampleRecord:
    square_dim: int
    tail: bytes
    row_bounds: np.ndarray
    col_bounds: np.ndarray
    mask_m1: np.ndarray
    forward_image: np.ndarray
    # (i, j) -> sorted array of absolute payload byte offsets in that group
    payload_positions: dict = field(default_factory=dict)

    def group(self, i, j):
        """Square-image coordinate ranges ``(r0, r1, c0, c1)`` of output pixel (i, j)."""
        return (int(self.row_bounds[i]), int(self.row_bounds[i + 1]),
                int(self.col_bounds[j]), int(self.col_bounds[j + 1]))

    def group_size(self, i, j):
        r0, r1, c0, c1 = self.group(i, j)
        return (r1 - r0) * (c1 - c0)

    def pixel_bounds(self, data):
        """Per-pixel interval the group mean can reach by editing payload bytes only.

        Non-editable pixels get a degenerate interval at their current value.
        """
        lo = self.forward_image.copy()
        hi = self.forward_image.copy()
        arr = np.frombuffer(bytes(data), dtype=np.uint8)
        for (i, j), offsets in self.payload_positions.items():
            size = self.group_size(i, j)
            fixed = self._group_sum(arr, i, j) - arr[offsets].sum()
            lo[i, j] = fixed / 255.0 / size
            hi[i, j] = (fixed + 255.0 * len(offsets)) / 255.0 / size
        return lo, hi

    def _group_sum(self, arr, i, j):
        r0, r1, c0, c1 = self.group(i, j)
        d = self.square_dim
        return float(arr[: d * d].reshape(d, d)[r0:r1, c0:c1].sum(dtype=np.int64))


def bytes_to_square(data):
    """Return ``(D x D float image in [0, 1], tail bytes)``."""
    data = bytes(data)
    if not data:
        raise EmptyBinary("cannot image an empty binary")
    d = isqrt(len(data))
    arr = np.frombuffer(data, dtype=np.uint8, count=d * d).reshape(d, d)
    return arr.astype(np.float64) / 255.0, data[d * d:]


def partition_bounds(dim, size=SIZE):
    """Block boundaries along one axis; ``size + 1`` entries."""
    if dim >= size:
        return np.array([i * dim // size for i in range(size + 1)], dtype=np.int64)
    return np.arange(size + 1, dtype=np.int64)


def _block_means(square, rows, cols):
    d = square.shape[0]
    if d < SIZE:
        out = np.zeros((SIZE, SIZE))
        out[:d, :d] = square
        return out
    sums = np.add.reduceat(np.add.reduceat(square, rows[:-1], axis=0), cols[:-1], axis=1)
    sizes = np.outer(np.diff(rows), np.diff(cols))
    return sums / sizes


def downsample(square, payload_offsets=()):
    """Reduce a square image to 100x100 and record the payload bookkeeping."""
    square = np.asarray(square, dtype=np.float64)
    d = square.shape[0]
    rows = partition_bounds(d)
    cols = partition_bounds(d)
    image = _block_means(square, rows, cols)
    mask = np.zeros((SIZE, SIZE), dtype=np.uint8)
    positions = {}
    offsets = np.asarray(sorted(payload_offsets), dtype=np.int64)
    offsets = offsets[offsets < d * d]  # payload bytes in the cropped tail are not editable
    if offsets.size:
        gi = np.searchsorted(rows, offsets // d, side="right") - 1
        gj = np.searchsorted(cols, offsets % d, side="right") - 1
        keys = gi * SIZE + gj
        order = np.argsort(keys, kind="stable")
        keys, offsets = keys[order], offsets[order]
        uniq, starts = np.unique(keys, return_index=True)
        for key, chunk in zip(uniq, np.split(offsets, starts[1:])):
            i, j = divmod(int(key), SIZE)
            mask[i, j] = 1
            positions[(i, j)] = chunk
    record = DownsampleRecord(d, b"", rows, cols, mask, image, positions)
    return image, record


def classify_transform(data):
    square, _ = bytes_to_square(data)
    return _block_means(square, partition_bounds(square.shape[0]), partition_bounds(square.shape[0]))


def image_for_crafting(data, payload_offsets):
    """Forward transform of an instrumented binary plus its record."""
    square, tail = bytes_to_square(data)
    image, record = downsample(square, payload_offsets)
    record.tail = tail
    return image, record


def quantize(value):
    """Map a [0, 1] pixel value to a byte: round half away from zero, then clamp."""
    scaled = 255.0 * value
    b = np.floor(np.abs(scaled) + 0.5) * np.sign(scaled)
    return int(np.clip(b, 0, 255))


@dataclass
class Reconstruction:
    data: bytes
    clamped: int  # groups whose target could not be met exactly because of clamping


def upsample_apply(record, adversarial, data):
    """Write the adversarial image back into the payload bytes of ``data``.

    For every editable group the payload bytes receive one shared value chosen
    so the group mean equals the adversarial pixel. Groups whose pixel is
    unchanged, and all non-payload bytes, are copied verbatim.
    """
    adversarial = np.asarray(adversarial, dtype=np.float64)
    if adversarial.shape != (SIZE, SIZE):
        raise ValueError(f"adversarial image must be {SIZE}x{SIZE}")
    changed = adversarial != record.forward_image
    if np.any(changed & (record.mask_m1 == 0)):
        raise MaskViolation("adversarial image differs outside the editable mask")
    out = bytearray(data)
    arr = np.frombuffer(bytes(data), dtype=np.uint8)
    clamped = 0
    for (i, j), offsets in record.payload_positions.items():
        if not changed[i, j]:
            continue
        size = record.group_size(i, j)
        fixed = (record._group_sum(arr, i, j) - arr[offsets].sum()) / 255.0
        f_adv = adversarial[i, j] * size - fixed
        shared = f_adv / len(offsets)
        byte = quantize(shared)
        if not -0.5 <= shared * 255.0 < 255.5:
            clamped += 1
        for off in offsets:
            out[off] = byte
    return Reconstruction(bytes(out), clamped)


def write_pgm(path, image):
    """Dump an image as binary PGM (P5, maxval 255)."""
    pixels = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(pixels.tobytes())
