"""Space files (JSON), grayscale PGM images and node-function CSV."""

import json
from pathlib import Path

import numpy as np

from .space import FinslerGridSpace, WeightedGraphSpace


def _float_out(x):
    x = float(x)
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _float_in(x):
    return float(x) if not isinstance(x, str) else float(x.strip())


def space_to_dict(space):
    if isinstance(space, WeightedGraphSpace):
        ids = space.node_ids
        return {
            "type": "graph",
            "nodes": [{"id": ids[k], "nu": float(space.nu[k])} for k in range(space.n_nodes)],
            "edges": [
                {"u": ids[i], "v": ids[j], "w": float(w)}
                for (i, j), w in zip(space.edges.tolist(), space.weights)
            ],
        }
    if isinstance(space, FinslerGridSpace):
        return {
            "type": "grid",
            "dim": space.dim,
            "shape": list(space.shape),
            "h": space.h,
            "omega": space.omega.tolist(),
            "norm": {"alpha": _float_out(space.alpha), "scales": space.scales.tolist()},
        }
    raise TypeError(f"cannot serialise {type(space).__name__}")


def space_from_dict(data):
    kind = data.get("type")
    if kind == "graph":
        nodes = data["nodes"]
        if not nodes:
            raise ValueError("graph space needs at least one node")
        ids = [nd["id"] for nd in nodes]
        if len(set(map(repr, ids))) != len(ids):
            raise ValueError("duplicate node id")
        try:
            order = sorted(range(len(ids)), key=lambda k: ids[k])
        except TypeError:
            order = sorted(range(len(ids)), key=lambda k: str(ids[k]))
        ids = [ids[k] for k in order]
        nu = [_float_in(nodes[k]["nu"]) for k in order]
        index = {repr(i): k for k, i in enumerate(ids)}
        edges, weights = [], []
        for e in data.get("edges", []):
            try:
                edges.append((index[repr(e["u"])], index[repr(e["v"])]))
            except KeyError as exc:
                raise ValueError(f"edge refers to unknown node {exc}") from None
            weights.append(_float_in(e["w"]))
        return WeightedGraphSpace(nu, np.array(edges, dtype=int).reshape(-1, 2), weights, ids)
    if kind == "grid":
        shape = data["shape"]
        if "dim" in data and int(data["dim"]) != len(shape):
            raise ValueError("grid dim does not match shape")
        norm = data.get("norm", {})
        scales = norm.get("scales")
        return FinslerGridSpace(
            shape,
            h=_float_in(data.get("h", 1.0)),
            omega=np.asarray(data.get("omega", 1.0), dtype=float),
            alpha=_float_in(norm.get("alpha", 2.0)),
            scales=None if scales is None else np.asarray(scales, dtype=float),
        )
    raise ValueError(f"unknown space type {kind!r}")


def save_space(space, path):
    Path(path).write_text(json.dumps(space_to_dict(space), indent=1) + "\n")


def load_space(path):
    return space_from_dict(json.loads(Path(path).read_text()))


# -- PGM -----------------------------------------------------------------------

def _pgm_tokens(data, count, pos):
    tokens = []
    while len(tokens) < count:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b"\r", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def read_pgm(path):
    """Read a P2 (ASCII) or P5 (binary) PGM. Returns ``(image, maxval)``."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ValueError("not a P2/P5 PGM file")
    (w, h, maxval), pos = _pgm_tokens(data, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise ValueError("PGM maxval out of range")
    if magic == b"P2":
        vals, _ = _pgm_tokens(data, w * h, pos)
        img = np.array([int(v) for v in vals], dtype=float)
    else:
        pos += 1  # single whitespace after maxval
        dtype = ">u1" if maxval < 256 else ">u2"
        img = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).astype(float)
    return img.reshape(h, w), maxval


def write_pgm(path, image, maxval=255, binary=True):
    """Write an image with values in ``[0, maxval]`` (clipped and rounded)."""
    img = np.clip(np.rint(np.asarray(image, dtype=float)), 0, maxval).astype(int)
    h, w = img.shape
    header = f"{'P5' if binary else 'P2'}\n{w} {h}\n{maxval}\n".encode()
    if binary:
        body = img.astype(">u1" if maxval < 256 else ">u2").tobytes()
    else:
        body = ("\n".join(" ".join(map(str, row)) for row in img) + "\n").encode()
    Path(path).write_bytes(header + body)


def grid_from_pgm(path, h=None, alpha=2.0):
    """Grid space matching a PGM image plus the image as a node function in [0, 1]."""
    img, maxval = read_pgm(path)
    ny, nx = img.shape
    h = 1.0 / max(ny, nx) if h is None else h
    space = FinslerGridSpace((ny, nx), h=h, omega=1.0, alpha=alpha)
    return space, img.ravel() / maxval


def read_node_function(path):
    """One value per line (or comma separated); ``#`` starts a comment."""
    vals = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            vals.extend(float(v) for v in line.replace(",", " ").split())
    return np.array(vals)


def write_node_function(path, u):
    """One value per line, 17 significant digits."""
    Path(path).write_text("".join(format(x, ".17g") + "\n" for x in np.asarray(u, dtype=float).tolist()))
