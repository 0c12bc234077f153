"""Plain-text file formats: tet meshes, OBJ surfaces, PGM images, CSV traces and configs."""

import os

import numpy as np


def _data_lines(path):
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def _read_indexed(path, width, dtype, what):
    rows = {}
    for lineno, tok in _data_lines(path):
        if len(tok) != width + 1:
            raise ValueError(f"{path}:{lineno}: expected index and {width} values")
        idx = int(tok[0])
        if idx in rows:
            raise ValueError(f"{path}:{lineno}: duplicate {what} index {idx}")
        rows[idx] = [dtype(t) for t in tok[1:]]
    n = len(rows)
    if sorted(rows) != list(range(n)):
        raise ValueError(f"{path}: {what} indices must be 0..{n - 1}")
    return np.array([rows[i] for i in range(n)], dtype=dtype).reshape(n, width)


def read_node(path):
    """Read ``index x y z`` lines (0-based indices) into an ``(n, 3)`` array."""
    return _read_indexed(path, 3, float, "node")


def read_ele(path):
    """Read ``index i j k l`` lines (0-based node indices) into an ``(m, 4)`` array."""
    return _read_indexed(path, 4, int, "element")


def write_node(path, nodes):
    nodes = np.asarray(nodes, dtype=float)
    with open(path, "w", encoding="ascii") as fh:
        for i, p in enumerate(nodes):
            fh.write(f"{i} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")


def write_ele(path, tets):
    tets = np.asarray(tets, dtype=int)
    with open(path, "w", encoding="ascii") as fh:
        for i, t in enumerate(tets):
            fh.write(f"{i} {t[0]} {t[1]} {t[2]} {t[3]}\n")


def read_tet_mesh(stem):
    """Read ``stem.node`` and ``stem.ele``."""
    return read_node(f"{stem}.node"), read_ele(f"{stem}.ele")


# -- OBJ ------------------------------------------------------------------------
def read_obj(path):
    """Read ``v`` and ``f`` records; other records are ignored.

    Returns
    -------
    vertices : (n, 3) array
    faces : list of lists of 0-based vertex indices
    """
    verts, faces = [], []
    for lineno, tok in _data_lines(path):
        if tok[0] == "v":
            if len(tok) < 4:
                raise ValueError(f"{path}:{lineno}: vertex needs three coordinates")
            verts.append([float(t) for t in tok[1:4]])
        elif tok[0] == "f":
            face = []
            for t in tok[1:]:
                i = int(t.split("/", 1)[0])
                face.append(i - 1 if i > 0 else len(verts) + i)
            if len(face) < 3:
                raise ValueError(f"{path}:{lineno}: face needs at least three vertices")
            faces.append(face)
    V = np.array(verts, dtype=float).reshape(-1, 3)
    for face in faces:
        if min(face) < 0 or max(face) >= len(V):
            raise ValueError(f"{path}: face index out of range")
    return V, faces


def write_obj(path, vertices, faces):
    V = np.asarray(vertices, dtype=float)
    with open(path, "w", encoding="ascii") as fh:
        for p in V:
            fh.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for face in faces:
            fh.write("f " + " ".join(str(int(i) + 1) for i in face) + "\n")


# -- PGM ------------------------------------------------------------------------
def _pgm_tokens(data, count, start):
    tokens, i = [], start
    while len(tokens) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated PGM header")
        tokens.append(data[i:j])
        i = j
    return tokens, i


def read_pgm(path):
    """Read a P2 or P5 PGM into a float array with values in ``[0, 1]``.

    Returns
    -------
    image : (h, w) float array, ``pixel / maxval``
    maxval : int
    """
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ValueError(f"{path}: not a P2/P5 PGM file")
    (w, h, maxval), pos = _pgm_tokens(data, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: invalid maxval {maxval}")
    if magic == b"P5":
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos)
    else:
        vals, _ = _pgm_tokens(data, w * h, pos)
        raw = np.array([int(v) for v in vals])
    if raw.size != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels")
    return raw.reshape(h, w).astype(float) / maxval, maxval


def quantize(image, maxval=255):
    """``round(clip(v, 0, 1) * maxval)``, the quantization used on write."""
    return np.rint(np.clip(np.asarray(image, dtype=float), 0.0, 1.0) * maxval).astype(np.int64)


def write_pgm(path, image, binary=True, maxval=255):
    """Write a float image in ``[0, 1]`` as PGM after :func:`quantize`.

    Reading an 8-bit P5 file and writing it back reproduces it byte for byte
    when the header carries no comments.
    """
    q = quantize(image, maxval)
    h, w = q.shape
    header = f"{'P5' if binary else 'P2'}\n{w} {h}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
            fh.write(q.astype(dtype).tobytes())
        else:
            for row in q:
                fh.write((" ".join(str(int(v)) for v in row) + "\n").encode("ascii"))


# -- CSV and config ---------------------------------------------------------------
def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header, rows):
    """Comma-separated file with a header row; floats use 17 significant digits."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")


def read_csv(path):
    """Return ``(header, rows)`` with every field converted to float."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        rows = [[float(t) for t in line.strip().split(",")] for line in fh if line.strip()]
    return header, rows


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    out = {}
    for lineno, raw in enumerate(open(path, "r", encoding="utf-8"), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (t.strip() for t in line.split("=", 1))
        if not key:
            raise ValueError(f"{path}:{lineno}: empty key")
        out[key] = val
    return out


def write_config(path, values):
    with open(path, "w", encoding="utf-8") as fh:
        for key, val in values.items():
            fh.write(f"{key} = {format_value(val)}\n")
