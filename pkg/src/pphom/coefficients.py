"""Coefficient families of the pseudo-parabolic system and their checks.

A CoefficientSet holds one parsed expression per tensor entry:

    M (N,N)   E (d,d)   D (d,N,N)   H (N,)   K (N,N)   J (d,N,N)
    L (N,N)   G (N,N)   U (N,)  -- the initial value U*

Entry keys use 1-based indices, e.g. "E.11", "K.12", "D.112", "U.1".
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .expr import Expr, Num, is_y_periodic, parse_expr

D_SPACE = 2
FAMILIES = ("M", "E", "D", "H", "K", "J", "L", "G", "U")
_KEY = re.compile(r"^([A-Z])\.(\d+)$")


class CoefficientError(ValueError):
    pass


def family_shape(name: str, N: int, d: int = D_SPACE) -> tuple:
    return {
        "M": (N, N),
        "E": (d, d),
        "D": (d, N, N),
        "H": (N,),
        "K": (N, N),
        "J": (d, N, N),
        "L": (N, N),
        "G": (N, N),
        "U": (N,),
    }[name]


def _key(name, idx):
    return f"{name}." + "".join(str(i + 1) for i in idx)


@dataclass(eq=False)
class CoefficientSet:
    N: int
    tensors: dict  # family -> object ndarray of Expr
    d: int = D_SPACE

    @classmethod
    def from_entries(cls, entries: dict, N: int) -> "CoefficientSet":
        """Build from a key -> expression mapping; absent entries are zero.

        Diagonal entries of M and E must be given explicitly.
        """
        if int(N) != N or N < 1 or N > 9:
            raise CoefficientError(f"N must be an integer in 1..9, got {N}")
        tensors = {}
        for name in FAMILIES:
            arr = np.empty(family_shape(name, N), dtype=object)
            arr[...] = Num(0.0)
            tensors[name] = arr
        for key, text in entries.items():
            m = _KEY.match(str(key).strip())
            if not m or m.group(1) not in FAMILIES:
                raise CoefficientError(f"unknown coefficient key {key!r}")
            name, digits = m.groups()
            shape = family_shape(name, N)
            idx = tuple(int(c) - 1 for c in digits)
            if len(idx) != len(shape) or any(not 0 <= i < s for i, s in zip(idx, shape)):
                raise CoefficientError(f"index of {key!r} out of range for shape {shape}")
            tensors[name][idx] = parse_expr(text)
        for name, size in (("M", N), ("E", D_SPACE)):
            for a in range(size):
                if _key(name, (a, a)) not in {str(k).strip() for k in entries}:
                    raise CoefficientError(f"diagonal entry {_key(name, (a, a))} must be given explicitly")
        c = cls(N, tensors)
        for name in ("L", "G", "U"):
            for idx, e in np.ndenumerate(tensors[name]):
                if e.depends_on("y1", "y2"):
                    raise CoefficientError(f"{_key(name, idx)} must not depend on y")
        return c

    @classmethod
    def from_arrays(cls, N: int, **arrays) -> "CoefficientSet":
        """Build from numeric arrays (or expression strings) per family."""
        entries = {}
        for name, arr in arrays.items():
            a = np.asarray(arr, dtype=object).reshape(family_shape(name, N))
            for idx, v in np.ndenumerate(a):
                entries[_key(name, idx)] = v if isinstance(v, (str, Expr)) else float(v)
        for name, size in (("M", N), ("E", D_SPACE)):
            for a in range(size):
                entries.setdefault(_key(name, (a, a)), 0.0)
        return cls.from_entries(entries, N)

    def to_entries(self, skip_zero: bool = True) -> dict:
        out = {}
        for name in FAMILIES:
            for idx, e in np.ndenumerate(self.tensors[name]):
                diag = name in "ME" and idx[0] == idx[1]
                if skip_zero and not diag and isinstance(e, Num) and e.value == 0:
                    continue
                out[_key(name, idx)] = e.to_text()
        return out

    def __getitem__(self, name):
        return self.tensors[name]

    def depends_on(self, families, *variables) -> bool:
        return any(e.depends_on(*variables) for f in families for e in self.tensors[f].flat)

    def evaluate(self, name, t=0.0, x1=0.0, x2=0.0, y1=0.0, y2=0.0) -> np.ndarray:
        """Evaluate a whole family; result shape is tensor shape + broadcast shape."""
        arr = self.tensors[name]
        vals = [e.evaluate(t, x1, x2, y1, y2) for e in arr.flat]
        shape = np.broadcast_shapes(*(np.shape(v) for v in vals), np.shape(t), np.shape(x1), np.shape(y1))
        out = np.empty(arr.shape + shape)
        for k, v in zip(np.ndindex(arr.shape), vals):
            out[k] = v
        return out

    def evaluate_at(self, name, t, x, y=None, eps=None) -> np.ndarray:
        """Evaluate at points x (..., 2); y defaults to x/eps (or 0 without eps)."""
        x = np.asarray(x, float)
        if y is None:
            y = x / eps if eps is not None else np.zeros_like(x)
        y = np.asarray(y, float)
        return self.evaluate(name, t, x[..., 0], x[..., 1], y[..., 0], y[..., 1])

    def gradient_x(self, name, t, x, y=None, eps=None, h: float = 1e-6) -> np.ndarray:
        """Central-difference x-gradient at fixed y; trailing axis is the direction."""
        x = np.asarray(x, float)
        if y is None:
            y = x / eps if eps is not None else np.zeros_like(x)
        out = []
        for k in range(2):
            dx = np.zeros(2)
            dx[k] = h
            out.append((self.evaluate_at(name, t, x + dx, y) - self.evaluate_at(name, t, x - dx, y)) / (2 * h))
        return np.stack(out, axis=-1)


def read_coefficient_file(path_or_text, is_text: bool = False) -> CoefficientSet:
    """Key-value coefficient file: ``N = 2`` plus lines ``E.11 = <expression>``."""
    text = path_or_text if is_text else open(path_or_text).read()
    entries = {}
    N = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CoefficientError(f"line {lineno}: expected 'key = expression'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "N":
            N = int(value)
        elif key in entries:
            raise CoefficientError(f"line {lineno}: duplicate key {key}")
        else:
            entries[key] = value
    if N is None:
        raise CoefficientError("coefficient file must define N")
    return CoefficientSet.from_entries(entries, N)


def write_coefficient_file(c: CoefficientSet, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"N = {c.N}\n")
        for k, v in c.to_entries().items():
            fh.write(f"{k} = {v}\n")


# --------------------------------------------------------------------------
# assumption checks


@dataclass(frozen=True)
class SampleGrid:
    n: int = 17  # points per axis in t, x1, x2, y1, y2
    T: float = 1.0

    def axes(self):
        t = np.linspace(0.0, self.T, self.n)
        x = np.linspace(0.0, 1.0, self.n)
        y = np.linspace(0.0, 1.0, self.n, endpoint=False)
        return (
            t[:, None, None, None, None],
            x[None, :, None, None, None],
            x[None, None, :, None, None],
            y[None, None, None, :, None],
            y[None, None, None, None, :],
        )


def sampled(c: CoefficientSet, name: str, grid: SampleGrid) -> np.ndarray:
    """Family values on the sample grid, flattened to (tensor..., n_points)."""
    vals = c.evaluate(name, *grid.axes())
    tshape = family_shape(name, c.N)
    return vals.reshape(tshape + (-1,))


@dataclass
class ValidationReport:
    D_sup: np.ndarray  # (d, N, N) indexed [i, beta, alpha]
    m: np.ndarray  # (N,)
    e: np.ndarray  # (d,)
    a3_threshold: np.ndarray  # (d, N, N): 4 m_alpha e_i / (d N^2)
    a3_ok: np.ndarray  # (d, N, N)
    positivity_ok: bool
    y_independent_ok: bool
    periodic_ok: bool
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def violated_triples(self):
        return [tuple(int(v) + 1 for v in idx) for idx in zip(*np.nonzero(~self.a3_ok))]


def validate_assumptions(c: CoefficientSet, grid: SampleGrid | None = None) -> ValidationReport:
    grid = grid or SampleGrid()
    N, d = c.N, c.d
    failures = []

    Mdiag = sampled(c, "M", grid)[np.arange(N), np.arange(N)]
    Ediag = sampled(c, "E", grid)[np.arange(d), np.arange(d)]
    m = Mdiag.min(axis=1)
    e = Ediag.min(axis=1)
    positivity_ok = bool(np.all(m > 0) and np.all(e > 0))
    if not positivity_ok:
        failures.append("diagonal of M or E not strictly positive on the sample grid")
    # reciprocal-norm definitions: 1/m = sup |1/M_aa|
    m = np.where(m > 0, m, 0.0)
    e = np.where(e > 0, e, 0.0)

    D_sup = np.abs(sampled(c, "D", grid)).max(axis=-1)  # [i, beta, alpha]
    thr = 4.0 * m[None, None, :] * e[:, None, None] / (d * N**2)
    a3_ok = D_sup**2 < thr
    if not a3_ok.all():
        bad = [tuple(int(v) + 1 for v in idx) for idx in zip(*np.nonzero(~a3_ok))]
        failures.append(f"drift bound violated for (i, beta, alpha) in {bad}")

    y_ok = True
    for name in ("L", "G", "U"):
        for idx, ex in np.ndenumerate(c[name]):
            if ex.depends_on("y1", "y2"):
                y_ok = False
                failures.append(f"{_key(name, idx)} depends on y")

    per_ok = True
    for name in FAMILIES:
        for idx, ex in np.ndenumerate(c[name]):
            if not is_y_periodic(ex):
                per_ok = False
                failures.append(f"{_key(name, idx)} is not 1-periodic in y")

    return ValidationReport(D_sup, m, e, thr, a3_ok, positivity_ok, y_ok, per_ok, failures)


# --------------------------------------------------------------------------
# concrete corrosion preset


@dataclass(frozen=True)
class CorrosionParams:
    phi: tuple = (0.25, 0.25, 0.5)
    chi: tuple = (1.0, 1.0)
    mu: tuple = (1.0, 1.0)
    lambda_lame: tuple = (1.0, 1.0)
    gamma1: float = -2.0
    gamma2: float = -1.0
    kappa_rates: tuple = (1.0, 1.0, 1.0)
    F_value: float = 1.0
    ustar: tuple = (0.0, 0.0)

    def __post_init__(self):
        phi = np.asarray(self.phi, float)
        if phi.shape != (3,) or np.any(phi <= 0) or abs(phi.sum() - 1.0) > 1e-12:
            raise CoefficientError("phi must be three positive fractions summing to 1")
        if not (self.gamma1 < 0 and self.gamma2 < 0):
            raise CoefficientError("gamma1 and gamma2 must be negative")
        if self.gamma1 == self.gamma2:
            raise CoefficientError("gamma1 == gamma2 makes the velocity coupling singular")
        if self.gamma1**2 <= self.gamma2**2:
            raise CoefficientError(
                "the velocity coupling has determinant (gamma1^2 - gamma2^2)*phi3 <= 0; "
                "positive definiteness needs |gamma1| > |gamma2|"
            )


def corrosion_matrices(p: CorrosionParams) -> dict:
    """Dense building blocks M~, F, G~ and the source H of the corrosion model."""
    f1, f2, f3 = p.phi
    c1, c2 = p.chi
    m1, m2 = p.mu
    Mt = np.array([[c1 * (f1 + f3) / f3, c1 * f2 / f3], [c2 * f1 / f3, c2 * (f2 + f3) / f3]])
    F = np.array([[m1 * (f2 + f3), -m2 * f1], [-m1 * f2, m2 * (f1 + f3)]])
    gamma = np.zeros((3, 3))  # the third (liquid) component carries no coupling
    gamma[0, 0] = gamma[1, 1] = p.gamma1
    gamma[0, 1] = gamma[1, 0] = p.gamma2
    phi = np.asarray(p.phi)
    Gt = np.array([[-gamma[a, b] + phi[a] * gamma[:, b].sum() for b in range(2)] for a in range(2)])
    H = np.array([c1, c2]) / f3 * p.F_value * float(np.sum(p.kappa_rates))
    return {"Mtilde": Mt, "F": F, "Gtilde": Gt, "H": H}


def corrosion_preset(p: CorrosionParams) -> CoefficientSet:
    blocks = corrosion_matrices(p)
    Mt, F, Gt = blocks["Mtilde"], blocks["F"], blocks["Gtilde"]
    if abs(np.linalg.det(Gt)) < 1e-14:
        raise CoefficientError("velocity coupling matrix is singular")
    Gi = np.linalg.inv(Gt)
    M = Mt @ Gi
    coeffs = CoefficientSet.from_arrays(
        2,
        M=M,
        E=np.eye(2),
        H=blocks["H"],
        K=-Mt @ Gi @ F,
        L=Gi @ F,
        G=Gi,
        U=np.asarray(p.ustar, float),
    )
    sym = 0.5 * (M + M.T)
    if np.linalg.eigvalsh(sym).min() <= 0:
        raise CoefficientError("preset mass matrix M is not positive definite")
    return coeffs
