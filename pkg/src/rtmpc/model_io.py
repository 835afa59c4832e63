"""Plain-text container for a discrete LTI model plus its operating point.

Format (whitespace-separated, ``#`` comments ignored)::

    dims n=12 n_u=3 n_w=1 n_y=4
    sample_period 5.0
    matrix A 12 12
    <12 rows of 12 numbers>
    matrix B 12 3
    ...
    vector x0 12
    <12 numbers>
    ...

Matrices A, B, C, D, F, G and vectors x0, u0, y0, w0 are all required.
Numbers are written with full round-trip precision.
"""

import numpy as np

from .mpc import LtiModel, OperatingPoint

_MATRIX_NAMES = ("A", "B", "C", "D", "F", "G")
_VECTOR_NAMES = ("x0", "u0", "y0", "w0")


def save_model(path, model, op):
    op.check_model(model)
    mats = {"A": model.a, "B": model.b, "C": model.c,
            "D": model.d, "F": model.f, "G": model.g}
    vecs = {"x0": op.x0, "u0": op.u0, "y0": op.y0, "w0": op.w0}
    lines = [
        "# discrete LTI model with disturbance channel, deviation variables",
        f"dims n={model.n} n_u={model.n_u} n_w={model.n_w} n_y={model.n_y}",
        f"sample_period {model.sample_period!r}",
    ]
    for name in _MATRIX_NAMES:
        m = mats[name]
        lines.append(f"matrix {name} {m.shape[0]} {m.shape[1]}")
        for row in m:
            lines.append(" ".join(repr(float(x)) for x in row))
    for name in _VECTOR_NAMES:
        v = vecs[name]
        lines.append(f"vector {name} {v.size}")
        lines.append(" ".join(repr(float(x)) for x in v))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path):
    """Read a model file; returns (LtiModel, OperatingPoint)."""
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(tokens):
            raise ValueError("unexpected end of model file")
        tok = tokens[pos]
        pos += 1
        return tok

    if take() != "dims":
        raise ValueError("model file must start with a dims header")
    dims = {}
    for _ in range(4):
        key, val = take().split("=")
        dims[key] = int(val)
    if take() != "sample_period":
        raise ValueError("expected sample_period after dims")
    period = float(take())

    mats, vecs = {}, {}
    while pos < len(tokens):
        kind = take()
        if kind == "matrix":
            name = take()
            rows, cols = int(take()), int(take())
            data = np.array([float(take()) for _ in range(rows * cols)])
            mats[name] = data.reshape(rows, cols)
        elif kind == "vector":
            name = take()
            size = int(take())
            vecs[name] = np.array([float(take()) for _ in range(size)])
        else:
            raise ValueError(f"unknown entry kind {kind!r} in model file")

    missing = [n for n in _MATRIX_NAMES if n not in mats] + \
              [n for n in _VECTOR_NAMES if n not in vecs]
    if missing:
        raise ValueError(f"model file missing entries: {missing}")
    model = LtiModel(mats["A"], mats["B"], mats["F"], mats["C"],
                     mats["D"], mats["G"], period)
    if (model.n, model.n_u, model.n_w, model.n_y) != \
            (dims["n"], dims["n_u"], dims["n_w"], dims["n_y"]):
        raise ValueError("dims header inconsistent with matrix shapes")
    op = OperatingPoint(vecs["x0"], vecs["u0"], vecs["y0"], vecs["w0"])
    op.check_model(model)
    return model, op
