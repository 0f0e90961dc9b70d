"""CSV ingestion and model specification files.

A model specification is an INI file::

    [model]
    group = subject
    criterion = ML          ; ML or REML
    init = advised          ; naive, advised or explicit

    [dimension1]
    response = weight
    fixed = intercept, sex, Nscore, age
    random = intercept, Nscore

    [dimension2]
    response = height
    fixed = intercept, sex, Nscore, age
    random = intercept, Nscore

    [init]                  ; only read when init = explicit
    theta1 = 1, 0, 1        ; packed lower triangle, column-major
    theta2 = 1, 0, 1
    rho = 0, 0, 0, 0        ; row-major t1 x t2
    sigma1 = 5
    sigma2 = 7

The keyword ``intercept`` in ``fixed`` or ``random`` stands for a column of
ones; every other name must be a CSV column.
"""

import configparser
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import LoadError
from .model import GroupedBivariateData, VarianceParams

INTERCEPT = "intercept"
INIT_MODES = ("naive", "advised", "explicit")


@dataclass(frozen=True)
class DimensionSpec:
    response: str
    fixed: tuple
    random: tuple

    def columns(self):
        names = [self.response, *self.fixed, *self.random]
        return [c for c in names if c != INTERCEPT]


@dataclass(frozen=True)
class ModelSpec:
    group_column: str
    dim1: DimensionSpec
    dim2: DimensionSpec
    criterion: str = "ML"
    init: str = "advised"
    init_values: VarianceParams = field(default=None, compare=False)

    def __post_init__(self):
        crit = self.criterion.upper()
        if crit not in ("ML", "REML"):
            raise LoadError(f"criterion must be ML or REML, got {self.criterion!r}")
        object.__setattr__(self, "criterion", crit)
        if self.init not in INIT_MODES:
            raise LoadError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if self.init == "explicit" and self.init_values is None:
            raise LoadError("init = explicit needs an [init] section")
        for k, d in ((1, self.dim1), (2, self.dim2)):
            for role in ("fixed", "random"):
                names = getattr(d, role)
                if not names:
                    raise LoadError(f"dimension{k} has no {role} terms")
                if len(set(names)) != len(names):
                    raise LoadError(f"duplicate column in dimension{k} {role} terms")

    def required_columns(self):
        cols = [self.group_column, *self.dim1.columns(), *self.dim2.columns()]
        return list(dict.fromkeys(cols))


def default_spec(criterion="ML", init="advised"):
    """Specification matching the columns written by :func:`write_csv`."""
    fixed = (INTERCEPT, "sex", "Nscore", "age")
    random = (INTERCEPT, "Nscore")
    return ModelSpec("subject", DimensionSpec("weight", fixed, random),
                     DimensionSpec("height", fixed, random), criterion, init)


def _names(text):
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _floats(text, key):
    try:
        return np.array([float(s) for s in _names(text)])
    except ValueError as err:
        raise LoadError(f"[init] {key}: {err}") from None


def parse_spec(text):
    """Parse model-specification text (see the module docstring)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise LoadError(f"malformed model spec: {err}") from None
    try:
        model = cp["model"]
        dims = [DimensionSpec(cp[s]["response"], _names(cp[s]["fixed"]), _names(cp[s]["random"]))
                for s in ("dimension1", "dimension2")]
        group = model["group"]
    except KeyError as err:
        raise LoadError(f"model spec is missing {err}") from None
    init = model.get("init", "advised").strip().lower()
    values = None
    if init == "explicit":
        if "init" not in cp:
            raise LoadError("init = explicit needs an [init] section")
        sec = cp["init"]
        t1, t2 = len(dims[0].random), len(dims[1].random)
        try:
            values = VarianceParams(
                _floats(sec["theta1"], "theta1"), _floats(sec["theta2"], "theta2"),
                _floats(sec["rho"], "rho").reshape(t1, t2),
                float(sec["sigma1"]), float(sec["sigma2"]))
        except KeyError as err:
            raise LoadError(f"[init] is missing {err}") from None
        except ValueError as err:
            raise LoadError(f"[init] values: {err}") from None
    return ModelSpec(group, dims[0], dims[1], model.get("criterion", "ML"), init, values)


def load_spec(path):
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())


def _design(cols, names, n):
    return np.column_stack([np.ones(n) if c == INTERCEPT else cols[c] for c in names])


def load_csv(path, spec):
    """Read a long-format CSV into :class:`GroupedBivariateData`.

    Rows are reordered so each group is contiguous, in order of first
    appearance; the order of rows within a group is kept. Error rows are
    1-based with the header as row 0.

    Raises
    ------
    LoadError
        Missing column, empty or non-numeric cell, or an empty file.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise LoadError("empty file") from None
        rows = list(reader)
    for c in spec.required_columns():
        if c not in header:
            raise LoadError("missing column", column=c)
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise LoadError("no data rows")
    pos = {c: header.index(c) for c in spec.required_columns()}
    numeric = [c for c in spec.required_columns() if c != spec.group_column]
    cols = {c: np.empty(len(rows)) for c in numeric}
    groups = []
    for i, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise LoadError(f"expected {len(header)} fields, found {len(r)}", row=i)
        g = r[pos[spec.group_column]].strip()
        if not g:
            raise LoadError("missing group label", row=i, column=spec.group_column)
        groups.append(g)
        for c in numeric:
            cell = r[pos[c]].strip()
            try:
                v = float(cell)
            except ValueError:
                v = math.nan
            if not math.isfinite(v):
                raise LoadError(f"non-numeric or missing value {cell!r}", row=i, column=c)
            cols[c][i - 1] = v
    groups = np.asarray(groups)
    _, first = np.unique(groups, return_index=True)
    rank = {groups[j]: k for k, j in enumerate(np.sort(first))}
    order = np.argsort([rank[g] for g in groups], kind="stable")
    cols = {c: v[order] for c, v in cols.items()}
    n = len(rows)
    d1, d2 = spec.dim1, spec.dim2
    return GroupedBivariateData.from_groups(
        cols[d1.response], cols[d2.response],
        _design(cols, d1.fixed, n), _design(cols, d2.fixed, n),
        _design(cols, d1.random, n), _design(cols, d2.random, n),
        groups[order])


def write_csv(path, data, names=("weight", "height"), covariates=("sex", "Nscore", "age")):
    """Write simulated data in the layout read by ``load_csv(path, default_spec())``.

    Covariate columns are taken from ``X1`` after its intercept column.
    """
    labels = np.asarray(data.group_labels, dtype=object)[data.group_index]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", *names, *covariates])
        for i in range(data.N):
            w.writerow([labels[i], repr(float(data.y1[i])), repr(float(data.y2[i])),
                        *(repr(float(x)) for x in data.X1[i, 1:1 + len(covariates)])])


def parse_sim_config(text, **overrides):
    """Simulation settings from an INI ``[simulation]`` section.

    Recognized keys: ``n_total``, ``n_groups``, ``seed``, ``sigma1``,
    ``sigma2``, ``beta1``, ``beta2`` (comma lists) and ``gamma_bar`` (16
    row-major values). Omitted keys keep the default design; keyword
    ``overrides`` win over the file.
    """
    from .simulator import default_config

    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise LoadError(f"malformed simulation config: {err}") from None
    sec = cp["simulation"] if "simulation" in cp else {}
    kw = {}
    try:
        for k in ("n_total", "n_groups", "seed"):
            if k in sec:
                kw[k] = int(sec[k])
        for k in ("sigma1", "sigma2"):
            if k in sec:
                kw[k] = float(sec[k])
        for k in ("beta1", "beta2"):
            if k in sec:
                kw[k] = tuple(_floats(sec[k], k).tolist())
        if "gamma_bar" in sec:
            G = _floats(sec["gamma_bar"], "gamma_bar").reshape(4, 4)
            kw["gamma_bar_true"] = tuple(map(tuple, G.tolist()))
    except ValueError as err:
        raise LoadError(f"simulation config: {err}") from None
    kw.update(overrides)
    return default_config(**kw)
