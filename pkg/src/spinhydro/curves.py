"""Sampled curves and the CSV format shared by simulation, fitting and CLI."""
from dataclasses import dataclass, field
import io
import json

import numpy as np


@dataclass
class Curve:
    """A sampled series ``value(x)`` with optional one-sigma errors.

    Parameters
    ----------
    x : ndarray
        Abscissa (time in us, frequency in rad/us or radius in nm).
    value : ndarray
        Sampled values.
    sigma : ndarray, optional
        One-sigma uncertainty of ``value``; zeros when omitted.
    meta : dict
        Free-form metadata carried into CSV headers.
    """

    x: np.ndarray
    value: np.ndarray
    sigma: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.value = np.asarray(self.value, dtype=float)
        if self.sigma is None:
            self.sigma = np.zeros_like(self.value)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if not (self.x.shape == self.value.shape == self.sigma.shape):
            raise ValueError("x, value and sigma must share one shape")

    @property
    def t(self):
        return self.x

    def __len__(self):
        return self.x.size

    def select(self, mask):
        return Curve(self.x[mask], self.value[mask], self.sigma[mask], dict(self.meta))


def write_csv(path, columns, meta=None):
    """Write named columns to CSV preceded by a ``#`` metadata block.

    Parameters
    ----------
    path : str or path-like or file object
    columns : dict
        Ordered mapping of column name to 1-D array (equal lengths).
    meta : dict, optional
        Written as ``# key: value`` lines (values JSON-encoded).
    """
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n]) for n in names])
    buf = io.StringIO()
    for key, val in (meta or {}).items():
        buf.write(f"# {key}: {json.dumps(val, sort_keys=True, default=str)}\n")
    buf.write(",".join(names) + "\n")
    for row in data:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    text = buf.getvalue()
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _fmt(v):
    if isinstance(v, (str, np.str_)):
        return str(v)
    return repr(float(v))


def read_csv(path):
    """Read a CSV written by :func:`write_csv`.

    Returns
    -------
    columns : dict of ndarray
    meta : dict
    """
    meta = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            try:
                meta[key.strip()] = json.loads(val)
            except json.JSONDecodeError:
                meta[key.strip()] = val.strip()
        elif line.strip():
            body.append(line)
    names = body[0].split(",")
    rows = [r.split(",") for r in body[1:]]
    columns = {}
    for k, name in enumerate(names):
        col = [r[k] for r in rows]
        try:
            columns[name] = np.array(col, dtype=float)
        except ValueError:
            columns[name] = np.array(col)
    return columns, meta


def curve_to_csv(curve, path, xname="t_us", yname="value", meta=None):
    m = dict(curve.meta)
    m.update(meta or {})
    write_csv(path, {xname: curve.x, yname: curve.value, "stderr": curve.sigma}, m)


def curve_from_csv(path):
    cols, meta = read_csv(path)
    names = list(cols)
    sigma = cols.get("stderr")
    return Curve(cols[names[0]], cols[names[1]], sigma, meta)


def loglog_slope(x, y, sigma=None):
    """Least-squares slope of ``log y`` against ``log x``.

    Returns
    -------
    slope, stderr : float
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    lx, ly = np.log(x), np.log(y)
    w = None
    if sigma is not None:
        s = np.asarray(sigma, float) / y
        if np.all(s > 0):
            w = 1.0 / s
    coef, cov = np.polyfit(lx, ly, 1, w=w, cov="unscaled" if w is not None else True)
    return coef[0], float(np.sqrt(cov[0, 0]))
