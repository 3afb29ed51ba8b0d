"""Readers and writers for flow fields, images and tensor bundles.

Formats:

* ``.flo``: float32 magic 202021.25, int32 width, int32 height, then
  height*width (u, v) float32 pairs, all little-endian.
* PPM (P6, maxval 255) and 8-bit PNG images, mapped to [0, 1].
* Tensor bundles: ``b"MEMC"``, u32 version (1), u32 tensor count, then per
  tensor a u16 name length, the UTF-8 name, four u32 dims and the float64
  little-endian data. Used for model files and kernel-field dumps.

Every writer goes through a temporary file and ``os.replace`` so a failed
write never leaves a partial output behind. Every reader raises a
:class:`FormatError` subclass on malformed bytes.
"""

import io as _io
import os
import struct
import tempfile
import zlib

import numpy as np
from PIL import Image

FLO_MAGIC = 202021.25
FLO_MAGIC_TOLERANCE = 1e-3
BUNDLE_MAGIC = b"MEMC"
BUNDLE_VERSION = 1
MAX_PIXELS = 1 << 28


class FormatError(ValueError):
    pass


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class DimensionError(FormatError):
    pass


class MalformedHeaderError(FormatError):
    pass


class UnsupportedDepthError(FormatError):
    pass


def atomic_write(path, data):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


# .flo

def encode_flo(flow):
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 4 or flow.shape[0] != 1 or flow.shape[1] != 2:
        raise DimensionError(f"flo files hold a single 2-channel flow, got shape {flow.shape}")
    _, _, h, w = flow.shape
    body = np.ascontiguousarray(flow[0].transpose(1, 2, 0)).astype("<f4").tobytes()
    return struct.pack("<fii", FLO_MAGIC, w, h) + body


def decode_flo(data):
    if len(data) < 12:
        raise TruncatedError(f"flo header needs 12 bytes, got {len(data)}")
    magic, w, h = struct.unpack_from("<fii", data, 0)
    if not np.isfinite(magic) or abs(magic - FLO_MAGIC) > FLO_MAGIC_TOLERANCE:
        raise BadMagicError(f"bad flo magic {magic!r}")
    if w <= 0 or h <= 0 or w * h > MAX_PIXELS:
        raise DimensionError(f"invalid flo dimensions {w}x{h}")
    need = 8 * w * h
    body = data[12:]
    if len(body) < need:
        raise TruncatedError(f"flo body has {len(body)} bytes, expected {need}")
    if len(body) > need:
        raise FormatError(f"flo file has {len(body) - need} trailing bytes")
    vals = np.frombuffer(body, dtype="<f4").astype(np.float64)
    return np.ascontiguousarray(vals.reshape(h, w, 2).transpose(2, 0, 1)[None])


def read_flo(path):
    return decode_flo(_read_bytes(path))


def write_flo(path, flow):
    atomic_write(path, encode_flo(flow))


# images

def quantize(image):
    """Map [0, 1] floats to uint8 with round-half-up, clipping out-of-range values."""
    q = np.floor(np.asarray(image, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(q, 0, 255).astype(np.uint8)


def _hwc_to_tensor(arr):
    return np.ascontiguousarray(arr.astype(np.float64).transpose(2, 0, 1)[None] / 255.0)


def _tensor_to_hwc(image):
    image = np.asarray(image)
    if image.ndim == 4:
        if image.shape[0] != 1:
            raise DimensionError("image files hold a single frame")
        image = image[0]
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise DimensionError(f"expected a 1- or 3-channel image, got shape {image.shape}")
    if image.shape[0] == 1:
        image = np.repeat(image, 3, axis=0)
    return quantize(image).transpose(1, 2, 0)


def encode_ppm(image):
    hwc = _tensor_to_hwc(image)
    h, w, _ = hwc.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(hwc).tobytes()


def decode_ppm(data):
    if data[:2] != b"P6":
        raise BadMagicError("not a binary PPM (P6) file")
    fields = []
    pos = 2
    n = len(data)
    while len(fields) < 3:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise MalformedHeaderError("malformed PPM header")
        fields.append(int(data[start:pos]))
    if pos >= n or not data[pos:pos + 1].isspace():
        raise MalformedHeaderError("PPM header must end with a single whitespace byte")
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise UnsupportedDepthError(f"only maxval 255 is supported, got {maxval}")
    if w <= 0 or h <= 0 or w * h > MAX_PIXELS:
        raise DimensionError(f"invalid PPM dimensions {w}x{h}")
    need = 3 * w * h
    if n - pos < need:
        raise TruncatedError(f"PPM body has {n - pos} bytes, expected {need}")
    arr = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3)
    return _hwc_to_tensor(arr)


_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def decode_png(data):
    if data[:8] != _PNG_SIG:
        raise BadMagicError("not a PNG file")
    if len(data) < 33 or data[12:16] != b"IHDR":
        raise MalformedHeaderError("PNG is missing its IHDR chunk")
    w, h, depth, color = struct.unpack(">IIBB", data[16:26])
    if w == 0 or h == 0 or w * h > MAX_PIXELS:
        raise DimensionError(f"invalid PNG dimensions {w}x{h}")
    if depth != 8:
        raise UnsupportedDepthError(f"only 8-bit PNGs are supported, got {depth}-bit")
    try:
        with Image.open(_io.BytesIO(data)) as im:
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError, ValueError, zlib.error, struct.error,
            Image.DecompressionBombError) as exc:
        raise FormatError(f"cannot decode PNG: {exc}") from exc
    return _hwc_to_tensor(arr)


def encode_png(image):
    buf = _io.BytesIO()
    Image.fromarray(np.ascontiguousarray(_tensor_to_hwc(image)), mode="RGB").save(buf, "PNG")
    return buf.getvalue()


def encode_mask_png(mask):
    """Boolean (h, w) map as an 8-bit RGB PNG, white where true."""
    m = np.asarray(mask, dtype=bool).astype(np.float64)
    return encode_png(m[None, None])


def decode_image(data):
    if data[:8] == _PNG_SIG:
        return decode_png(data)
    if data[:2] == b"P6":
        return decode_ppm(data)
    raise BadMagicError("unrecognised image format (expected PNG or P6 PPM)")


def read_image(path):
    return decode_image(_read_bytes(path))


def write_image(path, image):
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext in (".ppm", ".pnm"):
        atomic_write(path, encode_ppm(image))
    elif ext == ".png":
        atomic_write(path, encode_png(image))
    else:
        raise FormatError(f"unsupported image extension {ext!r} (use .png or .ppm)")


# tensor bundles

def encode_tensors(tensors):
    parts = [BUNDLE_MAGIC, struct.pack("<II", BUNDLE_VERSION, len(tensors))]
    for name, value in tensors.items():
        value = np.asarray(value, dtype=np.float64)
        if value.ndim > 4:
            raise DimensionError(f"tensor {name!r} has rank {value.ndim} > 4")
        dims = (1,) * (4 - value.ndim) + value.shape
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]!r}...")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<IIII", *dims))
        parts.append(np.ascontiguousarray(value).astype("<f8").tobytes())
    return b"".join(parts)


def decode_tensors(data):
    """Parse a tensor bundle into an ordered ``{name: (n, c, h, w) array}``."""
    if data[:4] != BUNDLE_MAGIC:
        raise BadMagicError("not a MEMC tensor bundle")
    if len(data) < 12:
        raise TruncatedError("bundle header truncated")
    version, count = struct.unpack_from("<II", data, 4)
    if version != BUNDLE_VERSION:
        raise FormatError(f"unsupported bundle version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        if pos + 2 > len(data):
            raise TruncatedError("bundle truncated in a tensor name length")
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if pos + nlen + 16 > len(data):
            raise TruncatedError("bundle truncated in a tensor header")
        try:
            name = data[pos:pos + nlen].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedHeaderError(f"tensor name is not UTF-8: {exc}") from exc
        pos += nlen
        dims = struct.unpack_from("<IIII", data, pos)
        pos += 16
        size = 1
        for d in dims:
            size *= d
        if size * 8 > len(data) - pos:
            raise TruncatedError(f"tensor {name!r} needs {size * 8} bytes, "
                                 f"{len(data) - pos} remain")
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}")
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).astype(np.float64)
        out[name] = arr.reshape(dims)
        pos += size * 8
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after the last tensor")
    return out


def save_tensors(path, tensors):
    atomic_write(path, encode_tensors(tensors))


def load_tensors(path):
    return decode_tensors(_read_bytes(path))
