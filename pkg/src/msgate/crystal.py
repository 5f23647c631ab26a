"""Ion crystal equilibria and transverse normal modes in a linear Paul trap.

The axial confinement is either harmonic or a quartic double-well profile
whose competition with the Coulomb repulsion yields nearly uniform ion
spacings. All equilibrium work happens in dimensionless units (length unit
``l0``, energy unit ``e^2 / 4 pi eps0 l0``); SI values only appear at the
boundary of the public API. Frequencies are angular (rad/s) throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import constants

from .errors import (
    EmptyWindow,
    InvalidCount,
    NonConvergence,
    UnstableConfiguration,
    ZigzagInstability,
)

COULOMB = constants.e**2 / (4.0 * math.pi * constants.epsilon_0)

GRAD_TOL = 1e-12
GRAD_TOL_ACCEPT = 1e-10
MAX_NEWTON_ITER = 200


@dataclass(frozen=True)
class QuarticAxial:
    """Axial potential -alpha2 z^2/2 + alpha4 z^4/4, parameterized by the
    length unit l0 = (e^2 / 4 pi eps0 alpha2)^(1/3) and the dimensionless
    quartic strength gamma4 = alpha4 l0^2 / alpha2."""

    l0: float
    gamma4: float

    def __post_init__(self):
        if self.l0 <= 0 or self.gamma4 <= 0:
            raise ValueError("quartic axial potential needs l0 > 0 and gamma4 > 0")


@dataclass(frozen=True)
class HarmonicAxial:
    omega_z: float

    def __post_init__(self):
        if self.omega_z <= 0:
            raise ValueError("harmonic axial potential needs omega_z > 0")


AxialPotential = QuarticAxial | HarmonicAxial


@dataclass(frozen=True)
class TrapSpec:
    """Static trap description.

    omega_x, omega_y are the transverse (pseudo-potential) angular
    frequencies; omega_rf is optional and only used by the error budget.
    """

    n_ions: int
    mass: float
    charge: float
    omega_x: float
    omega_y: float
    axial: AxialPotential
    omega_rf: float | None = None
    q_param: float | None = None

    def __post_init__(self):
        if self.n_ions < 1:
            raise ValueError("n_ions must be >= 1")
        if self.mass <= 0 or self.charge <= 0:
            raise ValueError("mass and charge must be positive")
        if self.omega_x <= 0 or self.omega_y <= 0:
            raise ValueError("transverse frequencies must be positive")

    @property
    def mathieu_q(self) -> float:
        """Trap q parameter; defaults to 2*sqrt(2)*omega_x/omega_rf."""
        if self.q_param is not None:
            return self.q_param
        if self.omega_rf is None:
            raise ValueError("need omega_rf (or explicit q_param)")
        return 2.0 * math.sqrt(2.0) * self.omega_x / self.omega_rf

    def length_unit(self) -> float:
        """Length scale used to de-dimensionalize the axial problem."""
        if isinstance(self.axial, QuarticAxial):
            return self.axial.l0
        coulomb = COULOMB * (self.charge / constants.e) ** 2
        return (coulomb / (self.mass * self.axial.omega_z**2)) ** (1.0 / 3.0)

    def axial_terms(self) -> tuple[float, float]:
        """Dimensionless axial potential coefficients (c2, c4) in
        V_ax(u) = c2 u^2/2 + c4 u^4/4."""
        if isinstance(self.axial, QuarticAxial):
            return -1.0, self.axial.gamma4
        return 1.0, 0.0


@dataclass(frozen=True)
class Crystal:
    """Equilibrium configuration: SI positions plus dimensionless u."""

    positions: np.ndarray
    u: np.ndarray
    spacing_mean: float
    spacing_rsd: float
    window: tuple[int, int]

    @property
    def n_ions(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class ModeData:
    """Transverse normal modes sorted by descending frequency.

    ``b[j, k]`` is the component of mode k on ion j; columns are
    orthonormal. ``eta`` are the Lamb-Dicke parameters for the stored
    effective wave vector ``delta_k``.
    """

    omega: np.ndarray
    b: np.ndarray
    eta: np.ndarray
    delta_k: float

    @property
    def n_modes(self) -> int:
        return len(self.omega)


def _inverse_cubes(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise differences and 1/|d|^3 with zeroed diagonal."""
    d = u[:, None] - u[None, :]
    np.fill_diagonal(d, 1.0)
    inv3 = 1.0 / np.abs(d) ** 3
    np.fill_diagonal(inv3, 0.0)
    return d, inv3


def potential_energy(u: np.ndarray, c2: float, c4: float) -> float:
    d = u[:, None] - u[None, :]
    iu = np.triu_indices(len(u), k=1)
    coulomb = np.sum(1.0 / np.abs(d[iu])) if len(u) > 1 else 0.0
    return float(np.sum(0.5 * c2 * u**2 + 0.25 * c4 * u**4) + coulomb)


def potential_gradient(u: np.ndarray, c2: float, c4: float) -> np.ndarray:
    d, inv3 = _inverse_cubes(u)
    rep = np.sum(d * inv3, axis=1)
    return c2 * u + c4 * u**3 - rep


def potential_hessian(u: np.ndarray, c2: float, c4: float) -> np.ndarray:
    _, inv3 = _inverse_cubes(u)
    h = -2.0 * inv3
    np.fill_diagonal(h, c2 + 3.0 * c4 * u**2 + 2.0 * np.sum(inv3, axis=1))
    return h


def default_window(n_ions: int) -> tuple[int, int]:
    """Central window for spacing statistics: drop one ion per end."""
    if n_ions >= 3:
        return (1, n_ions - 1)
    return (0, n_ions)


def _initial_guess(n: int, c2: float, c4: float) -> np.ndarray:
    if c4 > 0:
        # turning point of the single-ion double well (-u^2/2 + c4 u^4/4 = 0)
        u_star = math.sqrt(2.0 / c4)
    else:
        # rough harmonic chain extent; Newton + line search tolerates slack
        u_star = max(1.0, 0.75 * n ** (2.0 / 3.0))
    if n == 1:
        return np.array([1e-6])
    seeds = np.linspace(-u_star, u_star, n)
    jitter = 1e-6 * np.linspace(-1.0, 1.0, n)
    return seeds + jitter


def solve_dimensionless(
    c2: float,
    c4: float,
    n: int,
    guess: np.ndarray | None = None,
) -> np.ndarray:
    """Minimize the dimensionless potential by damped Newton iteration.

    Backtracking on the potential value globalizes the plain Newton step;
    if the Hessian is not positive definite the step falls back to steepest
    descent for that iteration.
    """
    u = np.array(_initial_guess(n, c2, c4) if guess is None else guess, dtype=float)
    if len(u) != n:
        raise ValueError("initial guess has wrong length")
    v = potential_energy(u, c2, c4)
    for _ in range(MAX_NEWTON_ITER):
        g = potential_gradient(u, c2, c4)
        if np.max(np.abs(g)) < GRAD_TOL:
            break
        h = potential_hessian(u, c2, c4)
        try:
            cho = scipy.linalg.cho_factor(h, check_finite=False)
            step = -scipy.linalg.cho_solve(cho, g, check_finite=False)
        except scipy.linalg.LinAlgError:
            step = -g
        if np.dot(step, g) >= 0.0:
            step = -g
        damping = 1.0
        for _ in range(60):
            trial = u + damping * step
            if np.all(np.isfinite(trial)):
                vt = potential_energy(np.sort(trial), c2, c4)
                if vt < v:
                    u = np.sort(trial)
                    v = vt
                    break
            damping *= 0.5
        else:
            # no decrease found along this direction: try a plain gradient nudge
            u = np.sort(u - 1e-3 * g / max(1.0, np.max(np.abs(g))))
            v = potential_energy(u, c2, c4)
    else:
        raise NonConvergence(
            f"equilibrium Newton iteration did not reach |grad| < {GRAD_TOL_ACCEPT}"
            f" in {MAX_NEWTON_ITER} steps"
        )
    if np.max(np.abs(potential_gradient(u, c2, c4))) >= GRAD_TOL_ACCEPT:
        raise NonConvergence("gradient tolerance not met")
    try:
        scipy.linalg.cho_factor(potential_hessian(u, c2, c4))
    except scipy.linalg.LinAlgError as exc:
        raise UnstableConfiguration("axial Hessian not positive definite") from exc
    return u


def solve_equilibrium(
    spec: TrapSpec,
    initial_guess: np.ndarray | None = None,
    window: tuple[int, int] | None = None,
) -> Crystal:
    """Find the 1D equilibrium configuration for the given trap."""
    c2, c4 = spec.axial_terms()
    guess_u = None
    if initial_guess is not None:
        guess_u = np.asarray(initial_guess, dtype=float) / spec.length_unit()
    u = solve_dimensionless(c2, c4, spec.n_ions, guess_u)
    win = default_window(spec.n_ions) if window is None else window
    positions = u * spec.length_unit()
    if spec.n_ions >= 2:
        stats = spacing_stats_from_positions(positions, win)
        mean, rsd = stats
    else:
        mean, rsd = 0.0, 0.0
    return Crystal(positions=positions, u=u, spacing_mean=mean, spacing_rsd=rsd, window=win)


def spacing_stats_from_positions(
    positions: np.ndarray, window: tuple[int, int]
) -> tuple[float, float]:
    lo, hi = window
    if lo < 0 or hi > len(positions):
        raise EmptyWindow(f"window {window} outside [0, {len(positions)})")
    sel = np.sort(np.asarray(positions, dtype=float))[lo:hi]
    if len(sel) < 2:
        raise EmptyWindow("need at least two ions in the window")
    gaps = np.diff(sel)
    mean = float(np.mean(gaps))
    rsd = float(np.std(gaps) / mean)
    return mean, rsd


def spacing_stats(crystal: Crystal, window: tuple[int, int] | None = None) -> dict:
    """Mean and relative standard deviation of nearest-neighbor spacings."""
    win = crystal.window if window is None else window
    mean, rsd = spacing_stats_from_positions(crystal.positions, win)
    return {"mean": mean, "rsd": rsd}


@dataclass(frozen=True)
class Gamma4Result:
    gamma4: float
    rsd: float
    degenerate: bool = False


def optimize_gamma4(
    spec: TrapSpec,
    interval: tuple[float, float] = (1.0, 10.0),
    window: tuple[int, int] | None = None,
    tol: float = 1e-3,
) -> Gamma4Result:
    """Golden-section minimization of the spacing RSD over gamma4.

    The trap spec supplies the ion count and window; its axial parameters
    are replaced by the scanned quartic strength (RSD is independent of l0).
    """
    lo, hi = interval
    if not (0.0 < lo < hi):
        raise ValueError("interval must be positive and increasing")
    win = default_window(spec.n_ions) if window is None else window
    if win[1] - win[0] < 3:
        # a single spacing has zero RSD for every gamma4
        return Gamma4Result(gamma4=0.5 * (lo + hi), rsd=0.0, degenerate=True)

    def rsd_of(g4: float) -> float:
        u = solve_dimensionless(-1.0, g4, spec.n_ions)
        return spacing_stats_from_positions(u, win)[1]

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = rsd_of(c), rsd_of(d)
    for _ in range(200):
        if b - a < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = rsd_of(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = rsd_of(d)
    else:
        raise NonConvergence("golden-section search did not shrink the interval")
    best = 0.5 * (a + b)
    return Gamma4Result(gamma4=best, rsd=rsd_of(best))


def transverse_modes(spec: TrapSpec, crystal: Crystal, delta_k: float) -> ModeData:
    """Normal modes of the transverse (x) motion about the equilibrium.

    Diagonalizes the transverse Hessian scaled by m*omega_x^2, so the
    center-of-mass mode sits at exactly omega_x by the row-sum identity.
    """
    n = crystal.n_ions
    coulomb = COULOMB * (spec.charge / constants.e) ** 2
    length = spec.length_unit()
    kappa = coulomb / (spec.mass * spec.omega_x**2 * length**3)
    if n > 1:
        _, inv3 = _inverse_cubes(crystal.u)
        k_mat = kappa * inv3
        k_mat[np.diag_indices(n)] = 1.0 - kappa * np.sum(inv3, axis=1)
    else:
        k_mat = np.array([[1.0]])
    vals, vecs = scipy.linalg.eigh(k_mat)
    if vals[0] <= 1e-12 * vals[-1]:
        raise ZigzagInstability(
            "transverse stiffness has a non-positive eigenvalue; "
            "increase omega_x or weaken the axial confinement"
        )
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    # deterministic sign convention: largest-|component| entry positive
    for k in range(n):
        idx = int(np.argmax(np.abs(vecs[:, k])))
        if vecs[idx, k] < 0:
            vecs[:, k] = -vecs[:, k]
    omega = spec.omega_x * np.sqrt(vals)
    eta = delta_k * np.sqrt(constants.hbar / (2.0 * spec.mass * omega))
    return ModeData(omega=omega, b=vecs, eta=eta, delta_k=delta_k)


def linear_stability_ratio(n_ions: int) -> float:
    """Harmonic-trap threshold omega_x/omega_z = 0.77 N / sqrt(ln N) above
    which the 1D chain is stable against zigzag buckling."""
    if n_ions < 2:
        raise InvalidCount("stability criterion needs at least 2 ions")
    return 0.77 * n_ions / math.sqrt(math.log(n_ions))


def harmonic_omega_z_for_spacing(
    n_ions: int,
    mass: float,
    charge: float,
    mean_spacing: float,
    window: tuple[int, int] | None = None,
) -> float:
    """Axial frequency of the harmonic trap whose chain reproduces the given
    mean central spacing. The dimensionless harmonic chain is solved once;
    the physical answer follows from rescaling the length unit."""
    win = default_window(n_ions) if window is None else window
    u = solve_dimensionless(1.0, 0.0, n_ions)
    s_mean, _ = spacing_stats_from_positions(u, win)
    length = mean_spacing / s_mean
    coulomb = COULOMB * (charge / constants.e) ** 2
    return math.sqrt(coulomb / (mass * length**3))
