"""Minimal single-band floating-point GeoTIFF reader and writer.

Covers exactly what this package needs: classic (non-Big) TIFF, one band,
uncompressed strips, IEEE float32/float64 samples, georeferencing via
ModelPixelScale + ModelTiepoint (or an axis-aligned ModelTransformation),
GDAL's ASCII nodata tag, and the ProjectedCSType geo-key for an EPSG tag.
Anything else is rejected with a clear error rather than guessed at.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .raster import RasterFormatError, RasterGrid

# TIFF tag ids
_IMAGE_WIDTH = 256
_IMAGE_LENGTH = 257
_BITS_PER_SAMPLE = 258
_COMPRESSION = 259
_PHOTOMETRIC = 262
_STRIP_OFFSETS = 273
_SAMPLES_PER_PIXEL = 277
_ROWS_PER_STRIP = 278
_STRIP_BYTE_COUNTS = 279
_PLANAR_CONFIG = 284
_TILE_WIDTH = 322
_SAMPLE_FORMAT = 339
_MODEL_PIXEL_SCALE = 33550
_MODEL_TIEPOINT = 33922
_MODEL_TRANSFORMATION = 34264
_GEOKEY_DIRECTORY = 34735
_GDAL_NODATA = 42113

# TIFF field types: id -> (struct char, byte size)
_FIELD_TYPES = {
    1: ("B", 1),   # BYTE
    2: ("s", 1),   # ASCII
    3: ("H", 2),   # SHORT
    4: ("I", 4),   # LONG
    5: ("II", 8),  # RATIONAL (pair of LONGs)
    6: ("b", 1),
    8: ("h", 2),
    9: ("i", 4),
    11: ("f", 4),
    12: ("d", 8),
}

_PROJECTED_CS_TYPE_GEOKEY = 3072
_GEOGRAPHIC_TYPE_GEOKEY = 2048


def read_geotiff(path: str | Path) -> RasterGrid:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 8:
        raise RasterFormatError(f"{path}: too short to be a TIFF")
    if data[:2] == b"II":
        bo = "<"
    elif data[:2] == b"MM":
        bo = ">"
    else:
        raise RasterFormatError(f"{path}: not a TIFF (bad byte-order mark)")
    magic = struct.unpack(bo + "H", data[2:4])[0]
    if magic == 43:
        raise RasterFormatError(f"{path}: BigTIFF is not supported")
    if magic != 42:
        raise RasterFormatError(f"{path}: not a TIFF (magic={magic})")

    ifd_offset = struct.unpack(bo + "I", data[4:8])[0]
    tags = _read_ifd(data, bo, ifd_offset, path)

    if _TILE_WIDTH in tags:
        raise RasterFormatError(f"{path}: tiled TIFFs are not supported")
    compression = _scalar(tags.get(_COMPRESSION, (1,)))
    if compression != 1:
        raise RasterFormatError(f"{path}: compressed TIFFs are not supported (compression={compression})")
    spp = _scalar(tags.get(_SAMPLES_PER_PIXEL, (1,)))
    if spp != 1:
        raise RasterFormatError(f"{path}: multi-band rasters are not supported ({spp} samples/pixel)")
    if _scalar(tags.get(_PLANAR_CONFIG, (1,))) != 1:
        raise RasterFormatError(f"{path}: planar configuration 2 is not supported")

    width = _scalar(tags.get(_IMAGE_WIDTH))
    height = _scalar(tags.get(_IMAGE_LENGTH))
    if not width or not height:
        raise RasterFormatError(f"{path}: missing image dimensions")
    bits = _scalar(tags.get(_BITS_PER_SAMPLE, (1,)))
    fmt = _scalar(tags.get(_SAMPLE_FORMAT, (1,)))
    if fmt != 3 or bits not in (32, 64):
        raise RasterFormatError(
            f"{path}: only float32/float64 samples are supported "
            f"(sample format {fmt}, {bits} bits)"
        )
    dtype = np.dtype(bo + ("f4" if bits == 32 else "f8"))

    offsets = tags.get(_STRIP_OFFSETS)
    counts = tags.get(_STRIP_BYTE_COUNTS)
    if offsets is None or counts is None:
        raise RasterFormatError(f"{path}: missing strip layout tags")
    raw = b"".join(data[o : o + c] for o, c in zip(offsets, counts))
    expected = width * height * (bits // 8)
    if len(raw) < expected:
        raise RasterFormatError(f"{path}: truncated pixel data")
    values = np.frombuffer(raw[:expected], dtype=dtype).reshape(height, width).astype(np.float64)

    origin_x, origin_y, csx, csy = _georeference(tags, path)

    nodata = None
    if _GDAL_NODATA in tags:
        txt = tags[_GDAL_NODATA]
        try:
            nodata = float(txt.split(b"\x00")[0].decode("ascii").strip())
        except (UnicodeDecodeError, ValueError):
            nodata = None
    if nodata is not None and not np.isnan(nodata):
        values = np.where(values == nodata, np.nan, values)

    return RasterGrid(
        origin_x=origin_x,
        origin_y=origin_y,
        cell_size_x=csx,
        cell_size_y=csy,
        values=values,
        nodata=nodata,
        crs_tag=_crs_tag(tags),
    )


def _read_ifd(data: bytes, bo: str, offset: int, path: Path) -> dict:
    try:
        n_entries = struct.unpack_from(bo + "H", data, offset)[0]
    except struct.error as exc:
        raise RasterFormatError(f"{path}: bad IFD offset") from exc
    tags: dict[int, tuple] = {}
    for i in range(n_entries):
        base = offset + 2 + i * 12
        tag, ftype, count = struct.unpack_from(bo + "HHI", data, base)
        if ftype not in _FIELD_TYPES:
            continue
        ch, size = _FIELD_TYPES[ftype]
        nbytes = size * count * (2 if ftype == 5 else 1)
        if nbytes <= 4:
            raw = data[base + 8 : base + 8 + nbytes]
        else:
            value_offset = struct.unpack_from(bo + "I", data, base + 8)[0]
            raw = data[value_offset : value_offset + nbytes]
        if ftype == 2:
            tags[tag] = raw
        else:
            n_items = count * (2 if ftype == 5 else 1)
            tags[tag] = struct.unpack(bo + ch[0] * n_items, raw)
    return tags


def _scalar(value):
    if value is None:
        return None
    return value[0]


def _georeference(tags: dict, path: Path) -> tuple[float, float, float, float]:
    if _MODEL_PIXEL_SCALE in tags and _MODEL_TIEPOINT in tags:
        sx, sy = tags[_MODEL_PIXEL_SCALE][0], tags[_MODEL_PIXEL_SCALE][1]
        tp = tags[_MODEL_TIEPOINT]
        # tiepoint maps raster (i, j, k) -> model (x, y, z); anchor at upper-left
        i, j, x, y = tp[0], tp[1], tp[3], tp[4]
        origin_x = x - i * sx
        origin_y = y + j * sy
        return origin_x, origin_y, sx, -sy
    if _MODEL_TRANSFORMATION in tags:
        m = tags[_MODEL_TRANSFORMATION]
        if m[1] != 0.0 or m[4] != 0.0:
            raise RasterFormatError(f"{path}: rotated rasters are not supported")
        return m[3], m[7], m[0], m[5]
    raise RasterFormatError(f"{path}: no georeferencing tags (ModelPixelScale/Tiepoint)")


def _crs_tag(tags: dict) -> str:
    keys = tags.get(_GEOKEY_DIRECTORY)
    if not keys or len(keys) < 4:
        return ""
    n_keys = keys[3]
    for k in range(n_keys):
        key_id, location, count, value = keys[4 + 4 * k : 8 + 4 * k]
        if key_id in (_PROJECTED_CS_TYPE_GEOKEY, _GEOGRAPHIC_TYPE_GEOKEY) and location == 0:
            if 1024 <= value <= 32766:
                return f"EPSG:{value}"
    return ""


def write_geotiff(grid: RasterGrid, path: str | Path) -> None:
    """Write a grid as an uncompressed little-endian float GeoTIFF.

    float64 values are written as-is so a read round trip is bit-exact;
    NaN cells are replaced by the grid's nodata sentinel when one is set,
    otherwise NaN itself is stored (readers treat non-finite as nodata).
    """
    values = grid.values
    if grid.nodata is not None:
        values = np.where(np.isnan(values), grid.nodata, values)
    payload = np.ascontiguousarray(values, dtype="<f8").tobytes()

    epsg = 0
    if grid.crs_tag.upper().startswith("EPSG:"):
        try:
            epsg = int(grid.crs_tag.split(":", 1)[1])
        except ValueError:
            epsg = 0

    entries: list[tuple[int, int, int, bytes]] = []  # (tag, type, count, packed payload)

    def add(tag: int, ftype: int, items) -> None:
        ch, _ = _FIELD_TYPES[ftype]
        if ftype == 2:
            packed = items  # already bytes, NUL-terminated
            count = len(packed)
        else:
            packed = struct.pack("<" + ch[0] * len(items), *items)
            count = len(items)
        entries.append((tag, ftype, count, packed))

    n_rows, n_cols = grid.n_rows, grid.n_cols
    add(_IMAGE_WIDTH, 4, (n_cols,))
    add(_IMAGE_LENGTH, 4, (n_rows,))
    add(_BITS_PER_SAMPLE, 3, (64,))
    add(_COMPRESSION, 3, (1,))
    add(_PHOTOMETRIC, 3, (1,))
    add(_STRIP_OFFSETS, 4, (0,))  # patched below
    add(_SAMPLES_PER_PIXEL, 3, (1,))
    add(_ROWS_PER_STRIP, 4, (n_rows,))
    add(_STRIP_BYTE_COUNTS, 4, (len(payload),))
    add(_PLANAR_CONFIG, 3, (1,))
    add(_SAMPLE_FORMAT, 3, (3,))
    add(_MODEL_PIXEL_SCALE, 12, (grid.cell_size_x, abs(grid.cell_size_y), 0.0))
    add(_MODEL_TIEPOINT, 12, (0.0, 0.0, 0.0, grid.origin_x, grid.origin_y, 0.0))
    if epsg:
        # header (version, rev, minor, count) + one key per row
        add(
            _GEOKEY_DIRECTORY,
            3,
            (1, 1, 0, 3,
             1024, 0, 1, 1,        # GTModelType = projected
             1025, 0, 1, 1,        # GTRasterType = PixelIsArea
             _PROJECTED_CS_TYPE_GEOKEY, 0, 1, epsg),
        )
    if grid.nodata is not None:
        add(_GDAL_NODATA, 2, f"{grid.nodata!r}".encode("ascii") + b"\x00")

    entries.sort(key=lambda e: e[0])

    # layout: header(8) | IFD | out-of-line tag values | pixel data
    ifd_offset = 8
    ifd_size = 2 + 12 * len(entries) + 4
    extra_offset = ifd_offset + ifd_size
    extra = bytearray()
    fields = bytearray()
    data_offset = None
    for tag, ftype, count, packed in entries:
        if len(packed) <= 4:
            inline = packed + b"\x00" * (4 - len(packed))
            fields += struct.pack("<HHI", tag, ftype, count) + inline
        else:
            fields += struct.pack("<HHII", tag, ftype, count, extra_offset + len(extra))
            extra += packed
            if len(extra) % 2:
                extra += b"\x00"
    data_offset = extra_offset + len(extra)

    # patch StripOffsets now that the data offset is known
    out = bytearray()
    out += struct.pack("<2sHI", b"II", 42, ifd_offset)
    out += struct.pack("<H", len(entries))
    pos = 0
    for tag, ftype, count, packed in entries:
        entry = bytes(fields[pos : pos + 12])
        if tag == _STRIP_OFFSETS:
            entry = struct.pack("<HHII", _STRIP_OFFSETS, 4, 1, data_offset)
        out += entry
        pos += 12
    out += struct.pack("<I", 0)  # no further IFDs
    out += extra
    out += payload
    Path(path).write_bytes(bytes(out))
