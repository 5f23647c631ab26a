"""Spin-phonon coupling coefficients for piecewise-constant drive pulses.

For a pulse with beat-note detuning mu, the first-order spin-dependent
displacement of mode k driven through ion j is

    alpha_j^k = -i eta_k b_j^k  integral  Omega(t) sin(mu t + phi_m) e^{i w_k t} dt,

the phonon-number-conditioned rotation is

    lambda_j^k = (eta_k b_j^k)^2  integral  Omega(t) cos(mu t + phi_m) dt,

and the accumulated two-spin XX angle Theta_ij is a double time-ordered
integral with kernel sin[w_k (t1 - t2)]. All segment integrals are done in
closed form; the only numerical care needed is near the resonance
w_k ~ mu, where the naive antiderivatives have vanishing denominators and
the code switches to short Taylor series. Multi-gate schedules reuse the
same machinery with absolute segment start times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .crystal import ModeData
from .errors import OverlappingGates

# switch thresholds for the series branches (relative to segment length)
_BETA_SWITCH = 1e-3
_NU_SWITCH = 0.5


@dataclass(frozen=True)
class PulseSequence:
    """Equal-length amplitude segments with a fixed detuning.

    Amplitudes are effective two-photon Rabi frequencies (rad/s) and may be
    negative (a pi phase flip of the segment). phi_m_* and phi_s_* are the
    motional and spin phases on the two driven ions.
    """

    n_seg: int
    tau: float
    mu: float
    omegas: np.ndarray
    phi_m_i: float = 0.0
    phi_m_j: float = 0.0
    phi_s_i: float = 0.0
    phi_s_j: float = 0.0

    def __post_init__(self):
        if self.n_seg < 1:
            raise ValueError("need at least one segment")
        if self.tau <= 0:
            raise ValueError("gate time must be positive")
        om = np.asarray(self.omegas, dtype=float)
        if om.shape != (self.n_seg,):
            raise ValueError("omegas must have length n_seg")
        object.__setattr__(self, "omegas", om)

    def scaled(self, factor: float) -> "PulseSequence":
        return replace(self, omegas=self.omegas * factor)


@dataclass(frozen=True)
class GateSchedule:
    """Non-overlapping repetitions of one pulse at absolute start times."""

    starts: np.ndarray
    pulse: PulseSequence

    def __post_init__(self):
        st = np.asarray(self.starts, dtype=float)
        if st.ndim != 1 or len(st) < 1:
            raise ValueError("starts must be a non-empty 1D sequence")
        if np.any(np.diff(st) < self.pulse.tau - 1e-15 * self.pulse.tau):
            raise OverlappingGates("gate start times closer than the gate time")
        object.__setattr__(self, "starts", st)


@dataclass(frozen=True)
class MagnusCoefficients:
    """First- and second-order pulse coefficients for one ion pair."""

    alpha_i: np.ndarray
    alpha_j: np.ndarray
    lambda_i: np.ndarray
    lambda_j: np.ndarray
    theta: float
    carrier_i: float
    carrier_j: float


def _cexpm1i(phi: np.ndarray) -> np.ndarray:
    """exp(i phi) - 1 evaluated without cancellation for small phi."""
    return -2.0 * np.sin(0.5 * phi) ** 2 + 1j * np.sin(phi)


def exp_integral(x, h: float):
    """E(x) = integral_0^h exp(i x s) ds, stable for every real x."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape, dtype=complex)
    nz = x != 0.0
    out[~nz] = h
    xs = x[nz]
    out[nz] = _cexpm1i(xs * h) / (1j * xs)
    return out


def _moment_series(q: int, nu: np.ndarray, h: float) -> np.ndarray:
    """integral_0^h s^q exp(i nu s) ds by Taylor expansion (|nu| h small)."""
    acc = np.zeros(nu.shape, dtype=complex)
    term = np.full(nu.shape, h ** (q + 1), dtype=complex)
    m = 0
    while True:
        acc += term / (q + m + 1)
        m += 1
        term = term * (1j * nu * h) / m
        if m > 40 or np.all(np.abs(term) <= 1e-18 * (np.abs(acc) + h ** (q + 1))):
            break
    return acc


def _moments(nu: np.ndarray, h: float, qmax: int) -> list[np.ndarray]:
    """R_q = integral_0^h s^q exp(i nu s) ds for q = 0..qmax."""
    nu = np.asarray(nu, dtype=float)
    small = np.abs(nu) * h < _NU_SWITCH
    res = [np.empty(nu.shape, dtype=complex) for _ in range(qmax + 1)]
    if np.any(small):
        for q in range(qmax + 1):
            res[q][small] = _moment_series(q, nu[small], h)
    if np.any(~small):
        big = ~small
        nub = nu[big]
        e_h = np.exp(1j * nub * h)
        r = _cexpm1i(nub * h) / (1j * nub)
        res[0][big] = r
        for q in range(1, qmax + 1):
            r = (h**q * e_h - q * r) / (1j * nub)
            res[q][big] = r
    return res


def triangle_integral(nu, beta, h: float):
    """T = integral_0^h dt exp(i nu t) integral_0^t ds exp(i beta s).

    The generic antiderivative divides by beta; near beta = 0 the inner
    integral is expanded to fourth order instead.
    """
    nu = np.asarray(nu, dtype=float)
    beta = np.asarray(beta, dtype=float)
    nu, beta = np.broadcast_arrays(nu, beta)
    out = np.empty(nu.shape, dtype=complex)
    small = np.abs(beta) * h < _BETA_SWITCH
    if np.any(~small):
        b = beta[~small]
        n = nu[~small]
        out[~small] = (exp_integral(n + b, h) - exp_integral(n, h)) / (1j * b)
    if np.any(small):
        n = nu[small]
        b = beta[small]
        mom = _moments(n, h, 5)
        acc = np.zeros(n.shape, dtype=complex)
        coef = np.ones(n.shape, dtype=complex)
        for m in range(5):
            acc += coef * mom[m + 1] / math.factorial(m + 1)
            coef = coef * (1j * b)
        out[small] = acc
    return out


def segment_starts(tau: float, n_seg: int, offsets=None) -> np.ndarray:
    """Absolute start times of all segments over one or more gates."""
    base = np.arange(n_seg) * (tau / n_seg)
    if offsets is None:
        return base
    offsets = np.asarray(offsets, dtype=float)
    return (offsets[:, None] + base[None, :]).ravel()


def sin_exp_integrals(
    omega_k, mu: float, tau: float, n_seg: int, phi_m: float = 0.0, offsets=None
) -> np.ndarray:
    """I[k, n] = integral over segment n of sin(mu t + phi_m) e^{i w_k t} dt.

    Shape (n_modes, n_segments_total); absolute time, so multi-gate
    schedules just pass their gate start offsets.
    """
    p_part, m_part = _sin_exp_parts(omega_k, mu, tau, n_seg, offsets)
    return np.exp(1j * phi_m) * p_part + np.exp(-1j * phi_m) * m_part


def _sin_exp_parts(omega_k, mu, tau, n_seg, offsets=None):
    """Decomposition I(phi) = e^{i phi} P + e^{-i phi} Q of the segment
    integrals; P and Q have shape (n_modes, n_segments_total)."""
    omega_k = np.atleast_1d(np.asarray(omega_k, dtype=float))
    h = tau / n_seg
    starts = segment_starts(tau, n_seg, offsets)
    e_plus = exp_integral(omega_k + mu, h)
    e_minus = exp_integral(omega_k - mu, h)
    ph_plus = np.exp(1j * np.outer(omega_k + mu, starts))
    ph_minus = np.exp(1j * np.outer(omega_k - mu, starts))
    p_part = ph_plus * e_plus[:, None] / 2j
    m_part = -ph_minus * e_minus[:, None] / 2j
    return p_part, m_part


def alpha_row(
    omega_k: float, eta_k: float, b_jk: float, mu: float, tau: float, n_seg: int
) -> np.ndarray:
    """Row vector mapping segment amplitudes to the residual displacement
    of one mode: alpha_j^k = row . Omega."""
    i_seg = sin_exp_integrals(np.array([omega_k]), mu, tau, n_seg)
    return -1j * eta_k * b_jk * i_seg[0]


def alpha_coeffs(
    seq: PulseSequence, modes: ModeData, ion: int, which: str = "i", offsets=None
) -> np.ndarray:
    """Residual displacement alpha_j^k of every mode for the given ion."""
    phi = seq.phi_m_i if which == "i" else seq.phi_m_j
    i_seg = sin_exp_integrals(modes.omega, seq.mu, seq.tau, seq.n_seg, phi, offsets)
    omegas = _tile_omegas(seq, offsets)
    return -1j * modes.eta * modes.b[ion, :] * (i_seg @ omegas)


def _tile_omegas(seq: PulseSequence, offsets) -> np.ndarray:
    if offsets is None:
        return seq.omegas
    return np.tile(seq.omegas, len(np.asarray(offsets)))


def _cos_segment_integrals(
    mu: float, tau: float, n_seg: int, phi_m: float, offsets=None
) -> np.ndarray:
    h = tau / n_seg
    starts = segment_starts(tau, n_seg, offsets)
    width = h * np.sinc(mu * h / (2.0 * math.pi))
    return width * np.cos(mu * (starts + 0.5 * h) + phi_m)


def carrier_angle(seq: PulseSequence, which: str = "i", offsets=None) -> float:
    """Neglected zeroth-order rotation angle: integral Omega cos(mu t + phi)."""
    phi = seq.phi_m_i if which == "i" else seq.phi_m_j
    cosint = _cos_segment_integrals(seq.mu, seq.tau, seq.n_seg, phi, offsets)
    return float(cosint @ _tile_omegas(seq, offsets))


def lambda_coeffs(
    seq: PulseSequence, modes: ModeData, ion: int, which: str = "i", offsets=None
) -> np.ndarray:
    """Phonon-number-conditioned rotation coefficients lambda_j^k."""
    angle = carrier_angle(seq, which, offsets)
    return (modes.eta * modes.b[ion, :]) ** 2 * angle


def _triangle_combos(omega_k, mu: float, h: float):
    """T(w + s1 mu, -(w + s2 mu), h) for the four sign combinations.

    Returns dict keyed by (s1, s2) of arrays over modes.
    """
    omega_k = np.atleast_1d(np.asarray(omega_k, dtype=float))
    combos = {}
    for s1 in (+1, -1):
        for s2 in (+1, -1):
            combos[(s1, s2)] = triangle_integral(
                omega_k + s1 * mu, -(omega_k + s2 * mu), h
            )
    return combos


def _theta_terms(
    modes: ModeData,
    ions: tuple[int, int],
    mu: float,
    tau: float,
    n_seg: int,
    offsets=None,
):
    """Shared precomputation for Theta: per-mode weights, segment integrals,
    triangle combos, and segment phase factors."""
    ion_i, ion_j = ions
    weights = modes.eta**2 * modes.b[ion_i, :] * modes.b[ion_j, :]
    p_part, m_part = _sin_exp_parts(modes.omega, mu, tau, n_seg, offsets)
    h = tau / n_seg
    combos = _triangle_combos(modes.omega, mu, h)
    starts = segment_starts(tau, n_seg, offsets)
    return weights, p_part, m_part, combos, starts, h


def gamma_matrix(
    modes: ModeData,
    ions: tuple[int, int],
    mu: float,
    tau: float,
    n_seg: int,
    phi_i: float = 0.0,
    phi_j: float = 0.0,
    offsets=None,
) -> np.ndarray:
    """Symmetric segment-coupling matrix with Theta_ij = Omega^T gamma Omega.

    Built from the strictly-lower-triangular closed forms plus the exact
    triangular diagonal, then symmetrized. With motional phases the two
    orderings of the ions' drive factors are averaged, which reduces to the
    usual factor of two at equal phases.
    """
    weights, p_part, m_part, combos, starts, _ = _theta_terms(
        modes, ions, mu, tau, n_seg, offsets
    )
    n_tot = p_part.shape[1]
    gamma_prime = np.zeros((n_tot, n_tot))
    ei, ej = np.exp(1j * phi_i), np.exp(1j * phi_j)
    i_of_i = ei * p_part + np.conj(ei) * m_part
    i_of_j = ej * p_part + np.conj(ej) * m_part
    # rectangles: t1 in segment p, t2 in segment q < p, both ion orderings
    rect = np.einsum(
        "k,kp,kq->pq", weights, i_of_i, np.conj(i_of_j)
    ) + np.einsum("k,kp,kq->pq", weights, i_of_j, np.conj(i_of_i))
    gamma_prime += np.tril(rect.imag, k=-1)
    # diagonal: triangular region within each segment
    phase2 = np.exp(2j * mu * starts)
    diag = np.zeros(n_tot, dtype=complex)
    for (s1, s2), t_val in combos.items():
        cross = ei**s1 * np.conj(ej) ** s2 + ej**s1 * np.conj(ei) ** s2
        seg_phase = phase2 ** ((s1 - s2) // 2)
        diag += (s1 * s2 / 4.0) * (weights * cross) @ np.atleast_1d(t_val) * seg_phase
    gamma_prime[np.diag_indices(n_tot)] = diag.imag
    return 0.5 * (gamma_prime + gamma_prime.T)


def theta_value(
    seq: PulseSequence, modes: ModeData, ions: tuple[int, int], offsets=None
) -> float:
    """Accumulated XX rotation angle for the pulse (or gate schedule)."""
    gamma = gamma_matrix(
        modes, ions, seq.mu, seq.tau, seq.n_seg, seq.phi_m_i, seq.phi_m_j, offsets
    )
    om = _tile_omegas(seq, offsets)
    return float(om @ gamma @ om)


def magnus_coefficients(
    seq: PulseSequence, modes: ModeData, ions: tuple[int, int], offsets=None
) -> MagnusCoefficients:
    """All pulse coefficients for an ion pair (single gate or schedule)."""
    ion_i, ion_j = ions
    return MagnusCoefficients(
        alpha_i=alpha_coeffs(seq, modes, ion_i, "i", offsets),
        alpha_j=alpha_coeffs(seq, modes, ion_j, "j", offsets),
        lambda_i=lambda_coeffs(seq, modes, ion_i, "i", offsets),
        lambda_j=lambda_coeffs(seq, modes, ion_j, "j", offsets),
        theta=theta_value(seq, modes, ions, offsets),
        carrier_i=carrier_angle(seq, "i", offsets),
        carrier_j=carrier_angle(seq, "j", offsets),
    )


def accumulate_gates(
    schedule: GateSchedule, modes: ModeData, ions: tuple[int, int]
) -> MagnusCoefficients:
    """Coefficients of m repetitions of a gate, including every cross-gate
    double integral in Theta."""
    return magnus_coefficients(schedule.pulse, modes, ions, offsets=schedule.starts)


@dataclass(frozen=True)
class PhaseCoefficients:
    """Dependence of the coefficients on a common motional phase phi.

    alpha per mode is e^{i phi} a_plus + e^{-i phi} a_minus (per ion), and
    Theta(phi) = theta_0 + Im(theta_2 e^{2 i phi}); theta_0 is also the
    uniform average of Theta over phi.
    """

    a_plus_i: np.ndarray
    a_minus_i: np.ndarray
    a_plus_j: np.ndarray
    a_minus_j: np.ndarray
    theta_0: float
    theta_2: complex

    def alpha(self, phi: float, ion: str = "i"):
        ap = self.a_plus_i if ion == "i" else self.a_plus_j
        am = self.a_minus_i if ion == "i" else self.a_minus_j
        return np.exp(1j * phi) * ap + np.exp(-1j * phi) * am

    def theta(self, phi) -> np.ndarray:
        return self.theta_0 + np.imag(self.theta_2 * np.exp(2j * np.asarray(phi)))


def phase_coefficients(
    seq: PulseSequence, modes: ModeData, ions: tuple[int, int], offsets=None
) -> PhaseCoefficients:
    """Closed-form dependence on a common motional phase, for fast scans.

    Writing the per-segment integral as I(phi) = e^{i phi} P + e^{-i phi} M,
    every term of Theta carries e^{0} or e^{+-2 i phi}; the e^{-2 i phi}
    pieces fold into the conjugate of the e^{+2 i phi} accumulator.
    """
    ion_i, ion_j = ions
    p_part, m_part = _sin_exp_parts(modes.omega, seq.mu, seq.tau, seq.n_seg, offsets)
    om = _tile_omegas(seq, offsets)
    pref_i = -1j * modes.eta * modes.b[ion_i, :]
    pref_j = -1j * modes.eta * modes.b[ion_j, :]
    weights = modes.eta**2 * modes.b[ion_i, :] * modes.b[ion_j, :]

    pw = p_part * om[None, :]
    mw = m_part * om[None, :]
    pc = np.cumsum(pw, axis=1) - pw
    mc = np.cumsum(mw, axis=1) - mw
    # sum_{p>q} x_p conj(y_q) = sum_p x_p conj(partial sums of y before p)
    s_pp = np.sum(pw * np.conj(pc), axis=1)
    s_mm = np.sum(mw * np.conj(mc), axis=1)
    s_pm = np.sum(pw * np.conj(mc), axis=1)
    s_mp = np.sum(mw * np.conj(pc), axis=1)
    s0 = 2.0 * weights @ (s_pp + s_mm)
    s2 = 2.0 * weights @ (s_pm - np.conj(s_mp))

    h = seq.tau / seq.n_seg
    combos = _triangle_combos(modes.omega, seq.mu, h)
    starts = segment_starts(seq.tau, seq.n_seg, offsets)
    sum_om2 = float(np.sum(om**2))
    a_mod = complex(np.sum(om**2 * np.exp(2j * seq.mu * starts)))
    s0 += 0.5 * (weights @ (combos[(1, 1)] + combos[(-1, -1)])) * sum_om2
    s2 -= 0.5 * (weights @ combos[(1, -1)]) * a_mod
    s2 += 0.5 * np.conj(weights @ combos[(-1, 1)]) * a_mod
    return PhaseCoefficients(
        a_plus_i=pref_i * (p_part @ om),
        a_minus_i=pref_i * (m_part @ om),
        a_plus_j=pref_j * (p_part @ om),
        a_minus_j=pref_j * (m_part @ om),
        theta_0=float(np.imag(s0)),
        theta_2=complex(s2),
    )
