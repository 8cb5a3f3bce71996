"""File formats: PLY point clouds and Gaussian checkpoints, raster images,
and triangle meshes (OBJ, STL, PLY) for ground-truth sampling."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import PlyError
from .gsplat.cloud import GaussianCloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_FORMATS = {"ascii": None, "binary_little_endian": "<", "binary_big_endian": ">"}

CHECKPOINT_PROPS = (
    "x", "y", "z", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3", "opacity", "red", "green", "blue",
)


@dataclass
class PlyProperty:
    name: str
    dtype: str
    list_count: str | None = None  # dtype of the length prefix for list properties


@dataclass
class PlyElement:
    name: str
    count: int
    properties: list = field(default_factory=list)
    line: int = 0


def _parse_header(f):
    """Returns (format, elements, number of header lines)."""
    first = f.readline()
    if first.strip() != b"ply":
        raise PlyError("line 1: missing 'ply' magic")
    fmt = None
    elements = []
    lineno = 1
    while True:
        raw = f.readline()
        lineno += 1
        if not raw:
            raise PlyError(f"line {lineno}: header ended without 'end_header'")
        try:
            text = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise PlyError(f"line {lineno}: non-ASCII header line") from None
        words = text.split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        key = words[0]
        if key == "end_header":
            break
        if key == "format":
            if len(words) != 3 or words[1] not in _FORMATS:
                raise PlyError(f"line {lineno}: unsupported format {text!r}")
            fmt = words[1]
        elif key == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise PlyError(f"line {lineno}: malformed element declaration {text!r}")
            elements.append(PlyElement(words[1], int(words[2]), [], lineno))
        elif key == "property":
            if not elements:
                raise PlyError(f"line {lineno}: property before any element")
            if len(words) == 5 and words[1] == "list":
                if words[2] not in _PLY_TYPES or words[3] not in _PLY_TYPES:
                    raise PlyError(f"line {lineno}: unknown list types in {text!r}")
                elements[-1].properties.append(PlyProperty(words[4], _PLY_TYPES[words[3]], _PLY_TYPES[words[2]]))
            elif len(words) == 3 and words[1] in _PLY_TYPES:
                elements[-1].properties.append(PlyProperty(words[2], _PLY_TYPES[words[1]]))
            else:
                raise PlyError(f"line {lineno}: malformed property {text!r}")
        else:
            raise PlyError(f"line {lineno}: unknown header keyword {key!r}")
    if fmt is None:
        raise PlyError("header has no format line")
    return fmt, elements, lineno


def _read_ascii(f, elements, lineno):
    data = {}
    lines = f.read().decode("ascii", errors="replace").splitlines()
    pos = 0
    for el in elements:
        cols = {p.name: [] for p in el.properties}
        for _ in range(el.count):
            while pos < len(lines) and not lines[pos].strip():
                pos += 1
            here = lineno + pos + 1
            if pos >= len(lines):
                raise PlyError(f"line {here}: expected {el.count} '{el.name}' rows, file ended early")
            words = lines[pos].split()
            pos += 1
            k = 0
            try:
                for p in el.properties:
                    if p.list_count:
                        n = int(words[k])
                        cols[p.name].append(np.array(words[k + 1:k + 1 + n], dtype=p.dtype))
                        if len(cols[p.name][-1]) != n:
                            raise IndexError
                        k += 1 + n
                    else:
                        cols[p.name].append(float(words[k]) if p.dtype[0] == "f" else int(words[k]))
                        k += 1
            except (ValueError, IndexError):
                raise PlyError(f"line {here}: cannot parse '{el.name}' row {lines[pos - 1]!r}") from None
            if k != len(words):
                raise PlyError(f"line {here}: expected {k} values in '{el.name}' row, found {len(words)}")
        data[el.name] = {
            p.name: (cols[p.name] if p.list_count else np.asarray(cols[p.name], dtype=p.dtype))
            for p in el.properties
        }
    return data


def _read_binary(f, elements, order):
    buf = f.read()
    off = 0
    data = {}
    for el in elements:
        if not any(p.list_count for p in el.properties):
            dt = np.dtype([(p.name, order + p.dtype) for p in el.properties])
            need = dt.itemsize * el.count
            if off + need > len(buf):
                raise PlyError(f"element '{el.name}' (declared on header line {el.line}): binary data truncated")
            arr = np.frombuffer(buf, dtype=dt, count=el.count, offset=off)
            off += need
            data[el.name] = {p.name: arr[p.name].astype(p.dtype) for p in el.properties}
            continue
        cols = {p.name: [] for p in el.properties}
        try:
            for _ in range(el.count):
                for p in el.properties:
                    if p.list_count:
                        cdt = np.dtype(order + p.list_count)
                        n = int(np.frombuffer(buf, cdt, 1, off)[0])
                        off += cdt.itemsize
                        vdt = np.dtype(order + p.dtype)
                        cols[p.name].append(np.frombuffer(buf, vdt, n, off).astype(p.dtype))
                        off += n * vdt.itemsize
                    else:
                        vdt = np.dtype(order + p.dtype)
                        cols[p.name].append(np.frombuffer(buf, vdt, 1, off)[0])
                        off += vdt.itemsize
        except ValueError:
            raise PlyError(f"element '{el.name}' (declared on header line {el.line}): binary data truncated") from None
        data[el.name] = {
            p.name: (cols[p.name] if p.list_count else np.asarray(cols[p.name], dtype=p.dtype))
            for p in el.properties
        }
    return data


def read_ply(path):
    """Parse a PLY file into ``{element: {property: array or list}}``."""
    with open(path, "rb") as f:
        fmt, elements, lineno = _parse_header(f)
        if fmt == "ascii":
            return _read_ascii(f, elements, lineno)
        return _read_binary(f, elements, _FORMATS[fmt])


def read_points(path):
    """(N, 3) float64 vertex positions of a PLY file."""
    data = read_ply(path)
    vert = data.get("vertex")
    if vert is None or not all(k in vert for k in "xyz"):
        raise PlyError(f"{path}: no vertex element with x, y, z properties")
    return np.stack([vert["x"], vert["y"], vert["z"]], axis=1).astype(np.float64)


def _write_ply(path, columns, binary=True, faces=None):
    """Write equal-length float64 columns as one vertex element."""
    names = list(columns)
    n = len(columns[names[0]]) if names else 0
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {n}"]
    header += [f"property double {name}" for name in names]
    if faces is not None:
        header += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    tmp = str(path) + ".part"
    with open(tmp, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        table = np.stack([np.asarray(columns[k], dtype=np.float64) for k in names], axis=1) if names else np.zeros((0, 0))
        if binary:
            f.write(np.ascontiguousarray(table, dtype="<f8").tobytes())
            if faces is not None:
                for tri in faces:
                    f.write(struct.pack("<B", len(tri)) + np.asarray(tri, dtype="<i4").tobytes())
        else:
            for row in table:
                f.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))
            if faces is not None:
                for tri in faces:
                    f.write((" ".join(str(int(v)) for v in [len(tri), *tri]) + "\n").encode("ascii"))
    os.replace(tmp, path)


def write_points(path, points, binary=True):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    _write_ply(path, {"x": pts[:, 0], "y": pts[:, 1], "z": pts[:, 2]}, binary)


def write_checkpoint(path, cloud: GaussianCloud, binary=True):
    """Every Gaussian parameter as a double vertex property: log-scales,
    (w, x, y, z) quaternion, opacity logit and RGB."""
    table = np.concatenate(
        [cloud.positions, cloud.log_scales, cloud.quats, cloud.opacity_logits[:, None], cloud.colors], axis=1
    )
    _write_ply(path, {name: table[:, i] for i, name in enumerate(CHECKPOINT_PROPS)}, binary)


def read_checkpoint(path) -> GaussianCloud:
    vert = read_ply(path).get("vertex", {})
    missing = [k for k in CHECKPOINT_PROPS if k not in vert]
    if missing:
        raise PlyError(f"{path}: checkpoint lacks properties {missing}")
    t = np.stack([np.asarray(vert[k], dtype=np.float64) for k in CHECKPOINT_PROPS], axis=1)
    return GaussianCloud(t[:, 0:3], t[:, 3:6], t[:, 6:10], t[:, 10], t[:, 11:14])


def load_gray(path):
    """8-bit PNG/JPEG, grayscale or colour, as a (H, W) uint8 luminance image."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise OSError(f"cannot read image {path}")
    if img.dtype != np.uint8:
        raise OSError(f"{path}: expected an 8-bit image, got {img.dtype}")
    if img.ndim == 2:
        return img
    if img.shape[2] == 4:
        return cv2.cvtColor(img, cv2.COLOR_BGRA2GRAY)
    return cv2.cvtColor(img, cv2.COLOR_BGR2GRAY)


def save_gray(path, img):
    if not cv2.imwrite(str(path), np.asarray(img, dtype=np.uint8)):
        raise OSError(f"cannot write image {path}")


def save_mask(path, mask):
    save_gray(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def save_color(path, rgb):
    """Float RGB in [0, 1] to an 8-bit file."""
    u8 = np.clip(np.rint(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), cv2.cvtColor(u8, cv2.COLOR_RGB2BGR)):
        raise OSError(f"cannot write image {path}")


def _load_obj(path):
    verts, faces = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            words = line.split()
            if not words:
                continue
            try:
                if words[0] == "v":
                    verts.append([float(w) for w in words[1:4]])
                elif words[0] == "f":
                    idx = [int(w.split("/")[0]) for w in words[1:]]
                    idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                    faces += [(idx[0], idx[k], idx[k + 1]) for k in range(1, len(idx) - 1)]
            except ValueError:
                raise OSError(f"{path}:{lineno}: cannot parse {line.strip()!r}") from None
    return np.asarray(verts, dtype=np.float64).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def _load_stl(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) >= 84:
        n = struct.unpack("<I", raw[80:84])[0]
        if 84 + 50 * n == len(raw):
            rec = np.frombuffer(raw, dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("a", "<u2")]), count=n, offset=84)
            verts = rec["v"].reshape(-1, 3).astype(np.float64)
            return verts, np.arange(len(verts)).reshape(-1, 3)
    verts = []
    for line in raw.decode("ascii", errors="replace").splitlines():
        words = line.split()
        if words and words[0] == "vertex":
            verts.append([float(w) for w in words[1:4]])
    if len(verts) % 3:
        raise OSError(f"{path}: ASCII STL vertex count is not a multiple of 3")
    verts = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    return verts, np.arange(len(verts)).reshape(-1, 3)


def load_mesh(path):
    """(vertices, triangles) from OBJ, STL (ASCII or binary) or PLY."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".obj":
        return _load_obj(path)
    if ext == ".stl":
        return _load_stl(path)
    if ext == ".ply":
        data = read_ply(path)
        verts = read_points(path)
        face = data.get("face", {})
        lists = face.get("vertex_indices", face.get("vertex_index", []))
        tris = [(p[0], p[k], p[k + 1]) for p in lists for k in range(1, len(p) - 1)]
        return verts, np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    raise OSError(f"unsupported mesh format {ext!r}")
