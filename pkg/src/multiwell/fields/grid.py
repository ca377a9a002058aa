"""Regular node grids on [-1, 1]^n with a unit-ball mask, finite differences,
multilinear interpolation and the on-disk field format."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import BadParams, InputError

MIN_NODES = 17


@dataclass(frozen=True, eq=False)
class GridField:
    """Map u sampled on an N^n node grid; ``values`` has shape (N,)*n + (n,)."""

    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        n = v.ndim - 1
        if n not in (2, 3) or v.shape[-1] != n or len(set(v.shape[:-1])) != 1:
            raise BadParams(f"values must have shape (N,)*n + (n,), n in 2..3; got {v.shape}")
        if v.shape[0] < MIN_NODES:
            raise BadParams(f"need at least {MIN_NODES} nodes per axis")
        if not np.all(np.isfinite(v[self.mask])):
            raise BadParams("non-finite values on masked nodes")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.ndim - 1

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return spacing(self.N)

    @property
    def mask(self) -> np.ndarray:
        return ball_mask(self.n, self.N)

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    def coords(self) -> np.ndarray:
        return node_coords(self.n, self.N)


def spacing(N: int) -> float:
    return 2.0 / (N - 1)


def node_coords(n: int, N: int) -> np.ndarray:
    ax = np.linspace(-1.0, 1.0, N)
    return np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1)


def ball_mask(n: int, N: int, radius: float = 1.0) -> np.ndarray:
    X = node_coords(n, N)
    return np.sum(X**2, axis=-1) <= radius * radius * (1.0 + 1e-12)


def from_function(fn, n: int, N: int, meta: dict | None = None) -> GridField:
    X = node_coords(n, N)
    vals = fn(X.reshape(-1, n)).reshape(X.shape)
    return GridField(vals, dict(meta or {}))


def _shift(a: np.ndarray, s: int, axis: int, fill) -> np.ndarray:
    """b[i] = a[i + s] along axis, ``fill`` outside."""
    out = np.full_like(a, fill)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    N = a.shape[axis]
    if s >= 0:
        src[axis] = slice(s, N)
        dst[axis] = slice(0, N - s)
    else:
        src[axis] = slice(0, N + s)
        dst[axis] = slice(-s, N)
    out[tuple(dst)] = a[tuple(src)]
    return out


def _first(f, mask, axis, h, _fallback=True):
    """d/dx_axis of f (leading dims = grid, trailing dims = payload).

    Nodes with no masked neighbour along ``axis`` fall back to box neighbours.
    """
    extra = (None,) * (f.ndim - mask.ndim)
    if _fallback:
        inner = _first(f, mask, axis, h, _fallback=False)
        box = np.ones_like(mask)
        lone = mask & ~_shift(mask, 1, axis, False) & ~_shift(mask, -1, axis, False)
        if lone.any():
            outer = _first(f, box, axis, h, _fallback=False)
            inner = np.where(lone[(...,) + extra], outer, inner)
        return inner
    m = {s: _shift(mask, s, axis, False) for s in (-2, -1, 1, 2)}
    F = {s: _shift(f, s, axis, 0.0) for s in (-2, -1, 1, 2)}
    out = np.zeros_like(f)
    central = mask & m[1] & m[-1]
    fwd2 = mask & ~central & m[1] & m[2]
    bwd2 = mask & ~central & ~fwd2 & m[-1] & m[-2]
    fwd1 = mask & ~central & ~fwd2 & ~bwd2 & m[1]
    bwd1 = mask & ~central & ~fwd2 & ~bwd2 & ~fwd1 & m[-1]
    for sel, val in (
        (central, (F[1] - F[-1]) / (2 * h)),
        (fwd2, (-3 * f + 4 * F[1] - F[2]) / (2 * h)),
        (bwd2, (3 * f - 4 * F[-1] + F[-2]) / (2 * h)),
        (fwd1, (F[1] - f) / h),
        (bwd1, (f - F[-1]) / h),
    ):
        out = np.where(sel[(...,) + extra], val, out)
    return out


def _second(f, mask, axis, h, _fallback=True):
    extra = (None,) * (f.ndim - mask.ndim)
    if _fallback:
        inner = _second(f, mask, axis, h, _fallback=False)
        m1, m2 = _shift(mask, 1, axis, False), _shift(mask, -1, axis, False)
        m3, m4 = _shift(mask, 2, axis, False), _shift(mask, -2, axis, False)
        short = mask & ~(m1 & m2) & ~(m1 & m3) & ~(m2 & m4)
        if short.any():
            outer = _second(f, np.ones_like(mask), axis, h, _fallback=False)
            inner = np.where(short[(...,) + extra], outer, inner)
        return inner
    m = {s: _shift(mask, s, axis, False) for s in (-3, -2, -1, 1, 2, 3)}
    F = {s: _shift(f, s, axis, 0.0) for s in (-3, -2, -1, 1, 2, 3)}
    h2 = h * h
    out = np.zeros_like(f)
    central = mask & m[1] & m[-1]
    fwd3 = mask & ~central & m[1] & m[2] & m[3]
    bwd3 = mask & ~central & ~fwd3 & m[-1] & m[-2] & m[-3]
    fwd2 = mask & ~central & ~fwd3 & ~bwd3 & m[1] & m[2]
    bwd2 = mask & ~central & ~fwd3 & ~bwd3 & ~fwd2 & m[-1] & m[-2]
    for sel, val in (
        (central, (F[1] - 2 * f + F[-1]) / h2),
        (fwd3, (2 * f - 5 * F[1] + 4 * F[2] - F[3]) / h2),
        (bwd3, (2 * f - 5 * F[-1] + 4 * F[-2] - F[-3]) / h2),
        (fwd2, (f - 2 * F[1] + F[2]) / h2),
        (bwd2, (f - 2 * F[-1] + F[-2]) / h2),
    ):
        out = np.where(sel[(...,) + extra], val, out)
    return out


def gradient(f: GridField, mask: np.ndarray | None = None) -> np.ndarray:
    """Du with shape (N,)*n + (n, n); Du[..., a, k] = d u_a / d x_k."""
    mask = f.mask if mask is None else mask
    n = f.n
    cols = [_first(f.values, mask, k, f.h) for k in range(n)]
    return np.stack(cols, axis=-1)


def differentiate(f: GridField, mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(Du, |D^2 u|) on masked nodes; zero elsewhere.

    Second-order one-sided stencils at the mask boundary keep both exact on
    quadratic fields.
    """
    mask = f.mask if mask is None else mask
    n, h = f.n, f.h
    Du = gradient(f, mask)
    # off-mask gradients feed only the lone-node fallback of the mixed terms
    Du_ext = np.where(mask[..., None, None], Du, gradient(f, np.ones_like(mask)))
    hess_sq = np.zeros(mask.shape)
    for k in range(n):
        d2 = _second(f.values, mask, k, h)
        hess_sq += np.sum(d2**2, axis=-1)
        for l in range(n):
            if l != k:
                mixed = _first(Du_ext[..., :, k], mask, l, h)
                hess_sq += np.sum(mixed**2, axis=-1)
    return Du, np.sqrt(hess_sq) * mask


def face_perimeter(U: np.ndarray, mask: np.ndarray, h: float) -> float:
    """h^(n-1) times the number of grid faces between masked nodes in and out of U."""
    U = U & mask
    count = 0
    for axis in range(mask.ndim):
        lo = [slice(None)] * mask.ndim
        hi = [slice(None)] * mask.ndim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        both = mask[tuple(lo)] & mask[tuple(hi)]
        count += int(np.sum(both & (U[tuple(lo)] != U[tuple(hi)])))
    return count * h ** (mask.ndim - 1)


def dilate(U: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """One-cell dilation over the full 3^n neighbourhood, clipped to mask."""
    out = U.copy()
    n = U.ndim
    for off in np.ndindex(*([3] * n)):
        s = np.asarray(off) - 1
        if not s.any():
            continue
        sh = U
        for axis, k in enumerate(s):
            if k:
                sh = _shift(sh, int(k), axis, False)
        out |= sh
    return out & mask


def interpolate(arr: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of nodal data arr (shape (N,)*n + payload) at points (k, n)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n = pts.shape[1]
    N = arr.shape[0]
    h = spacing(N)
    t = (pts + 1.0) / h
    i0 = np.clip(np.floor(t).astype(int), 0, N - 2)
    fr = t - i0
    out = 0.0
    for corner in np.ndindex(*([2] * n)):
        c = np.asarray(corner)
        w = np.prod(np.where(c == 1, fr, 1.0 - fr), axis=1)
        idx = tuple((i0 + c).T)
        val = arr[idx]
        out = out + w.reshape((-1,) + (1,) * (val.ndim - 1)) * val
    return out


def interpolate_gradient(arr: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Exact gradient of the multilinear interpolant of nodal vectors; shape (k, n, n)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n = pts.shape[1]
    N = arr.shape[0]
    h = spacing(N)
    t = (pts + 1.0) / h
    i0 = np.clip(np.floor(t).astype(int), 0, N - 2)
    fr = t - i0
    out = np.zeros((pts.shape[0], arr.shape[-1], n))
    for corner in np.ndindex(*([2] * n)):
        c = np.asarray(corner)
        base = np.where(c == 1, fr, 1.0 - fr)
        val = arr[tuple((i0 + c).T)]
        for k in range(n):
            others = np.prod(np.delete(base, k, axis=1), axis=1)
            dk = (1.0 if c[k] == 1 else -1.0) / h
            out[:, :, k] += (others * dk)[:, None] * val
    return out


# ---------------------------------------------------------------- file format

def _rle(mask: np.ndarray) -> list[int]:
    """Run lengths of the flattened mask, starting with a run of False."""
    flat = mask.reshape(-1)
    runs = []
    cur = False
    count = 0
    for v in flat:
        if bool(v) == cur:
            count += 1
        else:
            runs.append(count)
            cur = not cur
            count = 1
    runs.append(count)
    return runs


def _unrle(runs: list[int], size: int) -> np.ndarray:
    out = np.zeros(size, dtype=bool)
    pos = 0
    cur = False
    for r in runs:
        out[pos : pos + r] = cur
        pos += r
        cur = not cur
    if pos != size:
        raise InputError("mask run lengths do not cover the grid")
    return out


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default, allow_nan=True)


def atomic_write_json(path: Path, obj: Any) -> None:
    atomic_write_bytes(Path(path), (dumps(obj) + "\n").encode())


def write_field(f: GridField, path) -> Path:
    """Write ``<name>.field.json`` + ``<name>.field.bin``; ``path`` is the json path or stem."""
    path = Path(path)
    name = path.name
    for suf in (".field.json", ".json"):
        if name.endswith(suf):
            name = name[: -len(suf)]
            break
    head = path.with_name(name + ".field.json")
    data = path.with_name(name + ".field.bin")
    from .. import FORMAT_VERSION

    header = {
        "format_version": FORMAT_VERSION,
        "n": f.n,
        "dims": [f.N] * f.n,
        "origin": [-1.0] * f.n,
        "spacing": [f.h] * f.n,
        "data_file": data.name,
        "order": "row-major, node-major then component",
        "dtype": "little-endian IEEE-754 binary64",
        "mask": _rle(f.mask),
        "meta": f.meta,
    }
    atomic_write_bytes(data, f.values.astype("<f8").tobytes(order="C"))
    atomic_write_json(head, header)
    return head


def read_field(path) -> GridField:
    path = Path(path)
    if not path.name.endswith(".json"):
        path = path.with_name(path.name + ".field.json")
    try:
        header = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read field header {path}: {e}") from e
    try:
        if int(header.get("format_version", -1)) != 1:
            raise InputError("unsupported field format_version")
        n = int(header["n"])
        dims = [int(d) for d in header["dims"]]
        if len(dims) != n or len(set(dims)) != 1:
            raise InputError("dims must be uniform and of length n")
        N = dims[0]
        if header.get("dtype") != "little-endian IEEE-754 binary64":
            raise InputError("unsupported dtype")
        if not np.allclose(header["origin"], -1.0) or not np.allclose(header["spacing"], spacing(N)):
            raise InputError("grid must cover [-1, 1]^n uniformly")
        raw = (path.parent / header["data_file"]).read_bytes()
    except (KeyError, TypeError, ValueError, OSError) as e:
        if isinstance(e, InputError):
            raise
        raise InputError(f"malformed field header {path}: {e}") from e
    expected = N**n * n * 8
    if len(raw) != expected:
        raise InputError(f"data file has {len(raw)} bytes, expected {expected}")
    vals = np.frombuffer(raw, dtype="<f8").reshape((N,) * n + (n,)).astype(np.float64)
    mask = _unrle(list(header["mask"]), N**n).reshape((N,) * n)
    if not np.array_equal(mask, ball_mask(n, N)):
        raise InputError("mask does not match the unit-ball mask of this grid")
    return GridField(vals, dict(header.get("meta", {})))
