"""Minimal binary little-endian PLY header parsing shared by splat and point readers."""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedHeader, TruncatedBody

PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
}


@dataclass
class PlyElement:
    name: str
    count: int
    properties: list = field(default_factory=list)  # (name, numpy dtype str)
    has_list: bool = False

    @property
    def dtype(self):
        return np.dtype([(n, t) for n, t in self.properties])


def parse_header(data):
    """Return (elements, body_offset) for a binary little-endian PLY byte string."""
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MalformedHeader("not a PLY file (missing 'ply' magic or 'end_header')")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise MalformedHeader("header not terminated by newline")
    try:
        text = data[:end].decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedHeader("header is not ASCII") from exc

    elements = []
    fmt = None
    for line in text.splitlines()[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1] if len(tok) > 1 else None
        elif tok[0] == "element":
            if len(tok) != 3:
                raise MalformedHeader(f"bad element line: {line!r}")
            try:
                elements.append(PlyElement(tok[1], int(tok[2])))
            except ValueError as exc:
                raise MalformedHeader(f"bad element count: {line!r}") from exc
        elif tok[0] == "property":
            if not elements:
                raise MalformedHeader("property declared before any element")
            if len(tok) >= 2 and tok[1] == "list":
                elements[-1].has_list = True
                continue
            if len(tok) != 3 or tok[1] not in PLY_TYPES:
                raise MalformedHeader(f"bad property line: {line!r}")
            elements[-1].properties.append((tok[2], PLY_TYPES[tok[1]]))
        else:
            raise MalformedHeader(f"unrecognized header line: {line!r}")
    if fmt is None:
        raise MalformedHeader("missing format line")
    if fmt != "binary_little_endian":
        raise MalformedHeader(f"unsupported PLY format {fmt!r}; only binary_little_endian is accepted")
    return elements, nl + 1


def read_vertices(data):
    """Structured array of the 'vertex' element. Elements after it are ignored."""
    elements, offset = parse_header(data)
    for el in elements:
        if el.name == "vertex":
            if el.has_list:
                raise MalformedHeader("list properties on vertex element are not supported")
            size = el.dtype.itemsize * el.count
            if len(data) - offset < size:
                raise TruncatedBody(
                    f"vertex body needs {size} bytes, file has {len(data) - offset}")
            return np.frombuffer(data, dtype=el.dtype, count=el.count, offset=offset)
        if el.has_list and el.count:
            raise MalformedHeader(f"cannot skip list element {el.name!r} preceding vertex data")
        offset += el.dtype.itemsize * el.count
    raise MalformedHeader("no vertex element")


def warn_extra(names, known):
    extra = [n for n in names if n not in known]
    if extra:
        warnings.warn(f"skipping unknown vertex properties: {', '.join(extra)}", stacklevel=3)


def write_vertices(fields, count):
    """Serialize float32 columns (ordered list of (name, (count,) array)) as a vertex-only PLY."""
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {count}"]
    header += [f"property float {name}" for name, _ in fields]
    header.append("end_header")
    body = np.empty(count, dtype=[(name, "<f4") for name, _ in fields])
    for name, col in fields:
        body[name] = col
    return ("\n".join(header) + "\n").encode("ascii") + body.tobytes()


def read_points(data):
    """(N, 3) float64 positions from any binary PLY with x, y, z vertex properties."""
    v = read_vertices(data)
    names = v.dtype.names or ()
    if not all(c in names for c in "xyz"):
        raise MalformedHeader("vertex element lacks x, y, z")
    return np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)


def write_points(points):
    points = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    return write_vertices([(c, points[:, i]) for i, c in enumerate("xyz")], len(points))
