"""Explicit constants of the corrector bound and the rescaled-time rate table.

Sampled coefficient norms feed Young-inequality splittings parametrised by
positive weights (EtaChoices).  From them follow the growth exponents
l, lambda, mu and the coupling constants kappa, kappa_tilde.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .coefficients import CoefficientSet, family_shape

FD_STEP = 1e-6
VARS = ("t", "x1", "x2", "y1", "y2")


class InfeasibleError(ValueError):
    pass


# --------------------------------------------------------------------------
# sampled norms


@dataclass(frozen=True)
class NormGrid:
    n: int = 33  # points per axis
    T: float = 1.0

    def axis(self, var):
        if var == "t":
            return np.linspace(0.0, self.T, self.n)
        if var in ("x1", "x2"):
            return np.linspace(0.0, 1.0, self.n)
        return np.linspace(0.0, 1.0, self.n, endpoint=False)


def _sample(exprs, grid: NormGrid, variables=None, shift=None):
    """Evaluate expressions on the tensor grid of the variables they use.

    Returns an array of shape (len(exprs), points).  `shift` = (var, h) moves
    one variable by h, for finite differences.
    """
    used = set(variables or ())
    for e in exprs:
        used |= e.variables()
    used = [v for v in VARS if v in used]
    axes = {v: grid.axis(v) for v in used}
    if shift is not None and shift[0] in axes:
        axes[shift[0]] = axes[shift[0]] + shift[1]
    mesh = np.meshgrid(*[axes[v] for v in used], indexing="ij") if used else []
    env = {v: m.ravel() for v, m in zip(used, mesh)}
    npts = mesh[0].size if used else 1
    args = [env.get(v, 0.0) for v in VARS]
    return np.array([np.broadcast_to(e.evaluate(*args), (npts,)) for e in exprs])


def _sup(expr, grid):
    return float(np.max(np.abs(_sample([expr], grid))))


def _sup_grad(exprs, grid, variables=("x1", "x2"), h=FD_STEP):
    """Largest |d/dv| over the given variables and all listed expressions."""
    best = 0.0
    for v in variables:
        if not any(e.depends_on(v) for e in exprs):
            continue
        plus = _sample(exprs, grid, variables=[v], shift=(v, h))
        minus = _sample(exprs, grid, variables=[v], shift=(v, -h))
        best = max(best, float(np.max(np.abs(plus - minus)) / (2 * h)))
    return best


@dataclass
class NormBundle:
    N: int
    L_min: float  # sup of -lambda_min(sym L)
    L_grad: float  # sup |grad_x L| entrywise
    G_max: float  # sup of the spectral norm of G
    G_max_sym: float  # sup of the largest eigenvalue of sym G (recorded)
    G_grad: float  # sup |grad_x G| entrywise
    D_sup: np.ndarray  # (d, N, N), entry [i, b, a] = sup |D_iba|
    m: np.ndarray  # (N,)
    e: np.ndarray  # (d,)
    H_sup: np.ndarray  # (N,)
    K_sup: np.ndarray  # (N, N)
    J_sup: np.ndarray  # (d, N, N)
    kappa: float
    L_min_eig: float = float("nan")  # same quantity from eigenvalues of L itself (real parts)
    d: int = 2

    def present(self):
        return {"H": self.H_sup > 0, "K": self.K_sup > 0, "J": self.J_sup > 0, "D": self.D_sup > 0}


def _family_points(c: CoefficientSet, name, grid):
    arr = c[name]
    vals = _sample(list(arr.flat), grid)
    return vals.reshape(arr.shape + (-1,))


def sample_norms(c: CoefficientSet, grid: NormGrid | None = None) -> NormBundle:
    grid = grid or NormGrid()
    N, d = c.N, c.d
    L = np.moveaxis(_family_points(c, "L", grid), -1, 0)  # (p, N, N)
    G = np.moveaxis(_family_points(c, "G", grid), -1, 0)
    symL = 0.5 * (L + np.swapaxes(L, 1, 2))
    symG = 0.5 * (G + np.swapaxes(G, 1, 2))
    L_min = float(np.max(-np.linalg.eigvalsh(symL)[:, 0]))
    L_min_eig = float(np.max(-np.linalg.eigvals(L).real.min(axis=1)))
    G_max = float(np.max(np.linalg.norm(G, ord=2, axis=(1, 2))))
    G_max_sym = float(np.max(np.linalg.eigvalsh(symG)[:, -1]))
    L_grad = _sup_grad(list(c["L"].flat), grid)
    G_grad = _sup_grad(list(c["G"].flat), grid)

    def sups(name):
        return np.array([_sup(e, grid) for e in c[name].flat]).reshape(family_shape(name, N))

    def infdiag(name, size):
        out = []
        for a in range(size):
            v = _sample([c[name][a, a]], grid)[0]
            out.append(float(np.min(v)) if np.all(v > 0) else 0.0)
        return np.array(out)

    K = c["K"]
    kappa = 0.0
    for e in K.flat:
        kappa = max(kappa, _sup(e, grid), _sup_grad([e], grid), _sup_grad([e], grid, ("y1", "y2")))
    return NormBundle(
        N=N, L_min=L_min, L_grad=L_grad, G_max=G_max, G_max_sym=G_max_sym, G_grad=G_grad,
        D_sup=sups("D"), m=infdiag("M", N), e=infdiag("E", d), H_sup=sups("H"), K_sup=sups("K"),
        J_sup=sups("J"), kappa=kappa, L_min_eig=L_min_eig, d=d,
    )


# --------------------------------------------------------------------------
# weights


@dataclass
class EtaChoices:
    eta_ibalpha: np.ndarray  # (d, N, N), entry [i, b, a]
    eta_alpha: float = 1.0
    eta_alphabeta: float = 1.0
    eta_tilde_ialphabeta: float = 1.0
    eta: float = 1.0
    eta1: float = 1.0
    eta2: float = 1.0
    eta3: float = 1.0
    epsilon0: float = 1.0

    def __post_init__(self):
        self.eta_ibalpha = np.asarray(self.eta_ibalpha, float)
        scalars = [self.eta_alpha, self.eta_alphabeta, self.eta_tilde_ialphabeta, self.eta, self.eta1, self.eta2, self.eta3]
        if not all(s > 0 for s in scalars) or np.any(self.eta_ibalpha <= 0) or not self.epsilon0 > 0:
            raise InfeasibleError("all weights must be strictly positive")


def eta_interval(norms: NormBundle):
    """Open interval (lo, hi) for eta_iba, shapes (d, N, N); NaN where D is zero."""
    d, N = norms.d, norms.N
    D = norms.D_sup
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        lo = d * N * D / (2.0 * norms.m[None, None, :])
        hi = 2.0 * norms.e[:, None, None] / (N * D)
    lo = np.where(D > 0, lo, np.nan)
    hi = np.where(D > 0, hi, np.nan)
    return lo, hi


def default_eta(norms: NormBundle, **kw) -> EtaChoices:
    lo, hi = eta_interval(norms)
    with np.errstate(invalid="ignore"):
        g = np.sqrt(lo * hi)
    g = np.where(np.isfinite(g) & (g > 0), g, 1.0)
    return EtaChoices(g, **kw)


def check_eta(norms: NormBundle, eta: EtaChoices):
    lo, hi = eta_interval(norms)
    bad = (norms.D_sup > 0) & ~((eta.eta_ibalpha > lo) & (eta.eta_ibalpha < hi))
    if np.any(bad):
        i, b, a = (int(v) for v in np.argwhere(bad)[0])
        if not lo[i, b, a] < hi[i, b, a]:
            raise InfeasibleError(
                f"empty weight interval for (i, beta, alpha) = ({i + 1}, {b + 1}, {a + 1}): the drift bound fails"
            )
        raise InfeasibleError(
            f"eta_ibalpha{(i + 1, b + 1, a + 1)} = {eta.eta_ibalpha[i, b, a]:.6g} outside ({lo[i, b, a]:.6g}, {hi[i, b, a]:.6g})"
        )


# --------------------------------------------------------------------------
# constants


@dataclass
class BoundConstants:
    kappa: float
    kappa_tilde: float
    l: float
    lam: float
    mu: float
    m_tilde: np.ndarray
    e_tilde: np.ndarray
    H_tilde: float
    K_tilde: np.ndarray
    J_tilde: np.ndarray  # (d, N)
    L_N: float
    L_G: float
    G_N: float
    G_G: float
    G_M: float
    m: float
    I: float
    lam_from_I: float
    norms: NormBundle = field(repr=False, default=None)
    eta: EtaChoices = field(repr=False, default=None)

    def report(self) -> list:
        """Rows (name, value, formula, inputs) for the text report."""
        n = self.norms
        rows = [
            ("kappa", self.kappa, "max over K entries of max(sup|K|, sup|grad_x K|, sup|grad_y K|)", "K"),
            ("kappa_tilde", self.kappa_tilde, "max(K_tilde_a, J_tilde_ia)", "K_tilde, J_tilde"),
            ("l", self.l, "max(0, L_N)", "L_N"),
            ("lambda", self.lam, "max(0, L_N + max(L_G + G_M max K_tilde, G_M max J_tilde)) / 2", "L_N, L_G, G_M"),
            ("I/2", self.lam_from_I, "Gronwall exponent of the H1 energy, halved", "I"),
            ("mu", self.mu, "9 kappa^2 G_N / (8 m^2)", "kappa, G_N, m"),
            ("m", self.m, "min(m_tilde, e_tilde)", "m_tilde, e_tilde"),
            ("L_N", self.L_N, "2 L_min + eta G_max + eta1 d N L_grad", f"L_min={n.L_min:.6g}, G_max={n.G_max:.6g}, L_grad={n.L_grad:.6g}"),
            ("L_G", self.L_G, "2 L_min + d N L_grad / eta1 + eta2 G_max + eta3 d N G_grad", f"G_grad={n.G_grad:.6g}"),
            ("G_N", self.G_N, "G_max / eta + d N G_grad / eta3", ""),
            ("G_G", self.G_G, "G_max / eta2", ""),
            ("G_M", self.G_M, "max((G_N + G_G) / m_tilde_a, G_N / e_tilde_i)", ""),
            ("H_tilde", self.H_tilde, "sum_a sup|H_a|^2 / (4 eta_a)", ""),
            ("I", self.I, "max(0, L_N + max(L_G + G_M max K_tilde, G_M max J_tilde))", ""),
        ]
        for a, v in enumerate(self.m_tilde):
            rows.append((f"m_tilde_{a + 1}", v, "m_a - drift, source and coupling splittings", f"m_{a + 1}={n.m[a]:.6g}"))
        for i, v in enumerate(self.e_tilde):
            rows.append((f"e_tilde_{i + 1}", v, "e_i - max_b sum_a eta_iba D_iba / 2", f"e_{i + 1}={n.e[i]:.6g}"))
        for a, v in enumerate(self.K_tilde):
            rows.append((f"K_tilde_{a + 1}", v, "sum_b sup|K_ba|^2 / (4 eta_ba)", ""))
        for (i, a), v in np.ndenumerate(self.J_tilde):
            rows.append((f"J_tilde_{i + 1}{a + 1}", v, "sum_b eps0^2 sup|J_iba|^2 / (4 eta~_iba)", ""))
        return rows

    def write_report(self, path) -> None:
        with open(path, "w") as fh:
            for name, value, formula, inputs in self.report():
                fh.write(f"{name:14s} = {value:.12g}    # {formula}" + (f"  [{inputs}]" if inputs else "") + "\n")


def _core(norms: NormBundle, eta, eta1, eta2, eta3, ea, eab, etl, eiba, eps0=1.0):
    """Vectorised constant formulas; scalar weights may be numpy arrays of any common shape."""
    d, N = norms.d, norms.N
    pres = norms.present()
    D = norms.D_sup
    shp = np.broadcast(eta, eta1, eta2, eta3, ea, eab, etl).shape
    eiba = np.asarray(eiba, float)
    if eiba.ndim == 3:
        eiba = eiba.reshape((1,) * len(shp) + eiba.shape)
    ext = lambda a: np.asarray(a, float).reshape(np.shape(a) + (1,))  # noqa: E731

    drift_m = np.sum(np.where(D > 0, D / (2 * eiba), 0.0), axis=(-3, -2))  # (..., N) over i, b
    nH = pres["H"].astype(float)  # (N,)
    nK = pres["K"].sum(axis=1).astype(float)  # per alpha: number of K_ab != 0
    nJ = pres["J"].sum(axis=(0, 2)).astype(float)  # per alpha: J_iab != 0 over i, b
    m_tilde = norms.m - drift_m - ext(ea) * nH - ext(eab) * nK - ext(etl) * nJ
    e_sum = np.sum(np.where(D > 0, eiba * D / 2, 0.0), axis=-1)  # (..., d, N) over a
    e_tilde = norms.e - np.max(e_sum, axis=-1)
    H_tilde = np.sum(norms.H_sup**2) / (4 * np.asarray(ea, float))
    K_tilde = ext(1 / (4 * np.asarray(eab, float))) * np.sum(norms.K_sup**2, axis=0)  # (..., N)
    J_tilde = (eps0**2 / (4 * np.asarray(etl, float)))[..., None, None] * np.sum(norms.J_sup**2, axis=1)  # (..., d, N)

    L_N = 2 * norms.L_min + eta * norms.G_max + eta1 * d * N * norms.L_grad
    L_G = 2 * norms.L_min + d * N * norms.L_grad / eta1 + eta2 * norms.G_max + eta3 * d * N * norms.G_grad
    G_N = norms.G_max / eta + d * N * norms.G_grad / eta3
    G_G = norms.G_max / eta2
    with np.errstate(divide="ignore", invalid="ignore"):
        G_M = np.maximum(np.max(ext(G_N + G_G) / m_tilde, axis=-1), np.max(ext(G_N) / e_tilde, axis=-1))
    m = np.minimum(np.min(m_tilde, axis=-1), np.min(e_tilde, axis=-1))
    Kmax = np.max(K_tilde, axis=-1)
    Jmax = np.max(J_tilde, axis=(-2, -1))
    coercive = (np.min(m_tilde, axis=-1) > 0) & (np.min(e_tilde, axis=-1) > 0)
    G_M = np.where(coercive & np.isfinite(G_M), G_M, np.inf)  # infeasible points only
    with np.errstate(invalid="ignore"):
        inner = np.maximum(L_G + np.where(Kmax > 0, G_M * Kmax, 0.0), np.where(Jmax > 0, G_M * Jmax, 0.0))
    lam = 0.5 * np.maximum(0.0, L_N + inner)
    I = np.maximum(0.0, L_N + inner)
    l = np.maximum(0.0, L_N)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(norms.kappa > 0, 9 * norms.kappa**2 * G_N / (8 * m**2), 0.0)
    kappa_tilde = np.maximum(Kmax, Jmax)
    feasible = coercive
    return dict(
        m_tilde=m_tilde, e_tilde=e_tilde, H_tilde=H_tilde, K_tilde=K_tilde, J_tilde=J_tilde, L_N=L_N, L_G=L_G,
        G_N=G_N, G_G=G_G, G_M=G_M, m=m, lam=lam, I=I, l=l, mu=mu, kappa_tilde=kappa_tilde, feasible=feasible,
    )


def compute_constants(norms: NormBundle, eta: EtaChoices | None = None) -> BoundConstants:
    eta = eta or default_eta(norms)
    check_eta(norms, eta)
    r = _core(norms, eta.eta, eta.eta1, eta.eta2, eta.eta3, eta.eta_alpha, eta.eta_alphabeta,
              eta.eta_tilde_ialphabeta, eta.eta_ibalpha, eta.epsilon0)
    if not bool(r["feasible"]):
        bad = [f"m_tilde_{a + 1}={v:.4g}" for a, v in enumerate(np.ravel(r["m_tilde"])) if v <= 0]
        bad += [f"e_tilde_{i + 1}={v:.4g}" for i, v in enumerate(np.ravel(r["e_tilde"])) if v <= 0]
        raise InfeasibleError("weights destroy coercivity: " + ", ".join(bad))
    f = lambda k: float(np.asarray(r[k]))  # noqa: E731
    bc = BoundConstants(
        kappa=norms.kappa, kappa_tilde=f("kappa_tilde"), l=f("l"), lam=f("lam"), mu=f("mu"),
        m_tilde=np.asarray(r["m_tilde"]).ravel(), e_tilde=np.asarray(r["e_tilde"]).ravel(), H_tilde=f("H_tilde"),
        K_tilde=np.asarray(r["K_tilde"]).ravel(), J_tilde=np.asarray(r["J_tilde"]).reshape(norms.d, norms.N),
        L_N=f("L_N"), L_G=f("L_G"), G_N=f("G_N"), G_G=f("G_G"), G_M=f("G_M"), m=f("m"), I=f("I"),
        lam_from_I=0.5 * f("I"), norms=norms, eta=eta,
    )
    if abs(bc.lam - bc.lam_from_I) > 1e-12 * max(1.0, bc.lam):
        raise ArithmeticError(f"the two exponent formulas disagree: {bc.lam} vs {bc.lam_from_I}")
    return bc


# --------------------------------------------------------------------------
# weight optimisation


def eta_grids(norms: NormBundle, points: int = 7, span=(1e-2, 1e2)):
    """Candidate values per weight group; groups without effect get a single value."""
    pres = norms.present()
    lg = np.geomspace(span[0], span[1], points)
    m_min = float(np.min(norms.m)) if norms.m.size else 1.0
    reducer = m_min * np.geomspace(1e-3, 1.0, points)
    grids = {
        "eta": lg if norms.G_max > 0 else np.array([1.0]),
        "eta1": lg if norms.L_grad > 0 else np.array([1.0]),
        "eta2": lg if norms.G_max > 0 else np.array([1.0]),
        "eta3": lg if norms.G_grad > 0 else np.array([1.0]),
        "eta_alpha": reducer if pres["H"].any() else np.array([1.0]),
        "eta_alphabeta": reducer if pres["K"].any() else np.array([1.0]),
        "eta_tilde_ialphabeta": reducer if pres["J"].any() else np.array([1.0]),
        # position of eta_iba inside its log interval
        "s": np.arange(1, points + 1) / (points + 1) if pres["D"].any() else np.array([0.5]),
    }
    return grids


def _eiba_from_s(norms, s):
    lo, hi = eta_interval(norms)
    s = np.asarray(s, float)[..., None, None, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.exp(np.log(lo) + s * (np.log(hi) - np.log(lo)))
    return np.where(norms.D_sup > 0, v, 1.0)


def optimize_eta(norms: NormBundle, objective: str = "min_mu", points: int = 7, grids: dict | None = None,
                 chunk: int = 200000):
    """Exhaustive search over the tensor grid of weight groups.

    Returns (EtaChoices, BoundConstants).  Objectives: 'min_mu' (ties broken
    by lambda) and 'min_lambda_plus_mu'.
    """
    if objective not in ("min_mu", "min_lambda_plus_mu"):
        raise ValueError(f"unknown objective {objective!r}")
    lo, hi = eta_interval(norms)
    if np.any((norms.D_sup > 0) & ~(lo < hi)):
        i, b, a = (int(v) for v in np.argwhere((norms.D_sup > 0) & ~(lo < hi))[0])
        raise InfeasibleError(f"empty weight interval for (i, beta, alpha) = ({i + 1}, {b + 1}, {a + 1})")
    if objective == "min_mu" and norms.kappa == 0:
        # mu vanishes for every admissible choice
        try:
            eta = default_eta(norms)
            return eta, compute_constants(norms, eta)
        except InfeasibleError:
            pass
    grids = grids or eta_grids(norms, points)
    names = list(grids)
    axes = [np.asarray(grids[k], float) for k in names]
    total = int(np.prod([len(a) for a in axes]))
    best = (np.inf, np.inf, None)
    flat_iter = itertools.product(*[range(len(a)) for a in axes])
    while True:
        block = list(itertools.islice(flat_iter, chunk))
        if not block:
            break
        idx = np.array(block)
        vals = {k: axes[j][idx[:, j]] for j, k in enumerate(names)}
        r = _core(norms, vals["eta"], vals["eta1"], vals["eta2"], vals["eta3"], vals["eta_alpha"],
                  vals["eta_alphabeta"], vals["eta_tilde_ialphabeta"], _eiba_from_s(norms, vals["s"]))
        obj = r["mu"] if objective == "min_mu" else r["mu"] + r["lam"]
        tie = r["lam"] if objective == "min_mu" else r["mu"]
        obj = np.where(r["feasible"], obj, np.inf)
        tie = np.where(r["feasible"], tie, np.inf)
        k = int(np.lexsort((tie, obj))[0])
        if (obj[k], tie[k]) < best[:2]:
            best = (float(obj[k]), float(tie[k]), {n: float(vals[n][k]) for n in names})
    if best[2] is None:
        raise InfeasibleError(f"no feasible weights among {total} grid points")
    v = best[2]
    eta = EtaChoices(_eiba_from_s(norms, v["s"]), v["eta_alpha"], v["eta_alphabeta"], v["eta_tilde_ialphabeta"],
                     v["eta"], v["eta1"], v["eta2"], v["eta3"])
    return eta, compute_constants(norms, eta)


# --------------------------------------------------------------------------
# bound and rates


def t_l(l: float, t: float) -> float:
    return t if l <= 0 else min(1.0 / l, t)


def bound_shape(bc: BoundConstants, eps, t, C: float = 1.0):
    """C (eps^1/2 + eps^3/2) [1 + eps^1/2 (1 + (kappa + kappa_tilde) e^{lambda t}) (1 + kappa (1 + t_l e^{l t}))] exp(mu t_l e^{l t})."""
    eps = np.asarray(eps, float)
    tl = t_l(bc.l, t) * math.exp(bc.l * t)
    bracket = 1 + np.sqrt(eps) * (1 + (bc.kappa + bc.kappa_tilde) * math.exp(bc.lam * t)) * (1 + bc.kappa * (1 + tl))
    return C * (np.sqrt(eps) + eps**1.5) * bracket * math.exp(bc.mu * tl)


def energy_envelope(bc: BoundConstants, U0_sq: float, t, area: float = 1.0):
    """Gronwall envelope for |U|^2_H1(t): |U0|^2 e^{It} + G_M H_tilde |Omega| (e^{It} - 1) / I."""
    t = np.asarray(t, float)
    J = bc.G_M * bc.H_tilde * area
    if bc.I == 0:
        return U0_sq + J * t
    return U0_sq * np.exp(bc.I * t) + J * np.expm1(bc.I * t) / bc.I


@dataclass
class RateRow:
    tau: float
    branch: str
    phi_exponent: float
    psi_exponent: float


def rate_branch(bc: BoundConstants) -> str:
    if bc.l > 0:
        return "l>0"
    return "l=0,kappa=0" if bc.kappa == 0 else "l=0"


def phi_exponent(bc: BoundConstants, tau, p: float | None = None):
    tau = np.asarray(tau, float)
    br = rate_branch(bc)
    if br == "l>0":
        return 0.5 - bc.mu * tau / bc.l
    if br == "l=0,kappa=0":
        return np.minimum(0.5, 1 - bc.lam * tau)
    return np.minimum(0.5 - bc.mu * tau, 1 - (bc.lam + bc.mu) * tau - p)


def admissible_tau(bc: BoundConstants, q: float, p: float | None = None):
    """Open interval (0, tau_max) of admissible rescaled times; tau_max may be inf."""
    br = rate_branch(bc)
    if br == "l>0":
        return (0.0, math.inf if bc.mu == 0 else bc.l * (0.5 - q) / bc.mu)
    if br == "l=0,kappa=0":
        return (0.0, math.inf if bc.lam == 0 else (1 - q) / bc.lam)
    # 0 < max(mu tau, (lambda + mu) tau + p - 1/2) < 1/2 - q
    hi = min((0.5 - q) / bc.mu if bc.mu > 0 else math.inf,
             (1 - q - p) / (bc.lam + bc.mu) if bc.lam + bc.mu > 0 else math.inf)
    lo = 0.0 if bc.mu > 0 else ((0.5 - p) / bc.lam if bc.lam > 0 else math.inf)
    return (lo, hi)


def theorem4_rates(bc: BoundConstants, q: float, p: float | None = None, n_tau: int = 100, tau_cap: float = 10.0):
    """Rate table over n_tau interior points of the admissible tau-interval.

    Returns (rows, info) with info holding the interval and, for l > 0, the
    epsilon threshold exp(-2 mu / ((1 - 2q) l)).
    """
    if not 0 < q < 0.5:
        raise ValueError("q must lie in (0, 1/2)")
    br = rate_branch(bc)
    if br == "l=0" and (p is None or not 0 < p < 0.5):
        raise ValueError("p in (0, 1/2) is required when l = 0 and kappa > 0")
    lo, hi = admissible_tau(bc, q, p)
    info = {"branch": br, "tau_min": lo, "tau_max": hi}
    if br == "l>0":
        info["eps_threshold"] = math.exp(-2 * bc.mu / ((1 - 2 * q) * bc.l))
    if not lo < hi:
        info["empty"] = True
        return [], info
    top = hi if math.isfinite(hi) else lo + tau_cap
    taus = lo + (top - lo) * np.arange(1, n_tau + 1) / (n_tau + 1)
    phi = phi_exponent(bc, taus, p)
    rows = [RateRow(float(t), br, float(f), float(f - q)) for t, f in zip(taus, phi)]
    return rows, info


def write_rate_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write("tau,branch,phi_exponent,psi_exponent\n")
        for r in rows:
            fh.write(f"{r.tau:.12g},{r.branch},{r.phi_exponent:.12g},{r.psi_exponent:.12g}\n")
