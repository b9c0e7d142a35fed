"""Sine-basis and energy-basis matrix machinery for the tilted box.

The computational basis is the flat-box set |alpha(L)> = sqrt(2/L)
sin(alpha pi q / L), alpha = 1..N.  All operators have closed-form
matrix elements there.  Diagonalizing the tilted Hamiltonian with a
real orthogonal transform Z gives the instantaneous energy basis; a
positive-overlap gauge keeps the eigenvectors varying smoothly along a
parameter ramp so that derivative couplings are meaningful.

The semiclassical counterdiabatic operator is assembled from three
symmetrized pieces,

    xi1 = (p f(H0) + f(H0) p) / 2
    xi2 = (q p + p q) / 2
    xi3 = (eta g(H0) + g(H0) eta) / 2

with f and g the scalar above-critical profiles evaluated on the
eigenvalues (and set to zero at or below E_c = s L, where both closed
forms vanish); eta is the bounded sign(p) surrogate with sine-basis
elements 2i/((beta - alpha) pi) for odd index difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import eigh

from tilted_piston.geometry import Drive, PistonParams

# Relative gap below which two eigenvalues are treated as degenerate.
# The one-dimensional tilted-box spectrum is nondegenerate, so hitting
# this is an error, not something to patch around.
DEGENERACY_RTOL = 1e-10


class DegenerateSpectrumError(RuntimeError):
    """Raised when an energy denominator falls below the gap tolerance."""


class Basis(Enum):
    SINE = "sine"
    ENERGY = "energy"


@dataclass(frozen=True)
class BasisSpec:
    """Number of sine modes and the box length they live on."""

    size: int
    length: float

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError("basis size must be at least 1")
        if not (self.length > 0.0):
            raise ValueError("basis length must be positive")


@dataclass(frozen=True)
class OperatorMatrix:
    """A matrix with its basis tag and a hermiticity promise."""

    entries: np.ndarray
    basis: Basis
    hermitian: bool

    def to_csv(self, path) -> None:
        """Diagnostic dump: one `row,col,re,im` line per entry."""
        from tilted_piston.serialize import fmt_float

        entries = np.asarray(self.entries, dtype=complex)
        lines = ["row,col,re,im"]
        n_rows, n_cols = entries.shape
        for i in range(n_rows):
            for j in range(n_cols):
                v = entries[i, j]
                lines.append(f"{i},{j},{fmt_float(v.real)},{fmt_float(v.imag)}")
        from pathlib import Path

        Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class SpectralData:
    """Eigen-decomposition of the tilted Hamiltonian at one snapshot.

    transform holds Z with Z[beta-1, n] = <beta|n>, real orthogonal,
    columns gauge-fixed; eigenvalues ascend.
    """

    eigenvalues: np.ndarray
    transform: np.ndarray
    lambda_snapshot: tuple[float, float] | None = None

    @property
    def size(self) -> int:
        return int(self.eigenvalues.size)


def default_basis_size(n_label: int) -> int:
    """Default truncation: at least 200 modes and 4x the tracked state."""
    return max(200, 4 * n_label)


def _check_spec(params: PistonParams, spec: BasisSpec) -> None:
    if not math.isclose(spec.length, params.length, rel_tol=1e-12):
        raise ValueError(
            f"basis length {spec.length!r} does not match params.length "
            f"{params.length!r}"
        )


def _index_grids(n: int):
    idx = np.arange(1, n + 1)
    a = idx[:, None].astype(float)
    b = idx[None, :].astype(float)
    odd = (np.abs(idx[:, None] - idx[None, :]) % 2) == 1
    return idx, a, b, odd


def build_h0_sine(params: PistonParams, spec: BasisSpec) -> OperatorMatrix:
    """Tilted Hamiltonian in the sine basis: real symmetric.

    Diagonal (alpha pi hbar)^2/(2 m L^2) + sL/2; odd index difference
    -8 alpha beta s L / ((alpha^2 - beta^2)^2 pi^2); zero otherwise.
    """
    _check_spec(params, spec)
    n = spec.size
    s, L, m, hbar = params.slope, params.length, params.mass, params.hbar
    idx, a, b, odd = _index_grids(n)
    entries = np.zeros((n, n))
    with np.errstate(divide="ignore", invalid="ignore"):
        off = -8.0 * a * b * s * L / ((a ** 2 - b ** 2) ** 2 * math.pi ** 2)
    entries[odd] = off[odd]
    diag = (idx * math.pi * hbar) ** 2 / (2.0 * m * L ** 2) + s * L / 2.0
    np.fill_diagonal(entries, diag)
    return OperatorMatrix(entries, Basis.SINE, hermitian=True)


def build_q_sine(params: PistonParams, spec: BasisSpec) -> OperatorMatrix:
    """Position operator: diagonal L/2, odd-difference off-diagonal."""
    _check_spec(params, spec)
    n = spec.size
    L = params.length
    _, a, b, odd = _index_grids(n)
    entries = np.zeros((n, n))
    with np.errstate(divide="ignore", invalid="ignore"):
        off = -8.0 * a * b * L / ((a ** 2 - b ** 2) ** 2 * math.pi ** 2)
    entries[odd] = off[odd]
    np.fill_diagonal(entries, L / 2.0)
    return OperatorMatrix(entries, Basis.SINE, hermitian=True)


def build_p_sine(params: PistonParams, spec: BasisSpec) -> OperatorMatrix:
    """Momentum operator: pure imaginary, 4 i hbar a b / (L (b^2 - a^2))."""
    _check_spec(params, spec)
    n = spec.size
    L, hbar = params.length, params.hbar
    _, a, b, odd = _index_grids(n)
    imag = np.zeros((n, n))
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = 4.0 * hbar * a * b / (L * (b ** 2 - a ** 2))
    imag[odd] = vals[odd]
    return OperatorMatrix(1j * imag, Basis.SINE, hermitian=True)


def build_xi2_sine(spec: BasisSpec, hbar: float) -> OperatorMatrix:
    """Symmetrized dilation (qp + pq)/2: zero diagonal, pure imaginary.

    Off-diagonal magnitude 2 hbar a b / (b^2 - a^2), entering with a
    plus sign for odd index difference and minus for even.
    """
    n = spec.size
    _, a, b, odd = _index_grids(n)
    imag = np.zeros((n, n))
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = 2.0 * hbar * a * b / (b ** 2 - a ** 2)
    off_mask = ~np.eye(n, dtype=bool)
    imag[off_mask & odd] = vals[off_mask & odd]
    imag[off_mask & ~odd] = -vals[off_mask & ~odd]
    return OperatorMatrix(1j * imag, Basis.SINE, hermitian=True)


def build_eta_sine(spec: BasisSpec) -> OperatorMatrix:
    """Bounded momentum-sign surrogate: 2i/((beta - alpha) pi), odd only."""
    n = spec.size
    idx = np.arange(1, n + 1)
    diff = idx[None, :].astype(float) - idx[:, None].astype(float)
    odd = (np.abs(idx[:, None] - idx[None, :]) % 2) == 1
    imag = np.zeros((n, n))
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = 2.0 / (diff * math.pi)
    imag[odd] = vals[odd]
    return OperatorMatrix(1j * imag, Basis.SINE, hermitian=True)


def diagonalize(
    h0_sine: OperatorMatrix,
    previous: SpectralData | None = None,
    params: PistonParams | None = None,
) -> SpectralData:
    """Eigen-decompose the sine-basis Hamiltonian with gauge fixing.

    Eigenvalues ascend.  Gauge: with a predecessor, each eigenvector is
    flipped to have positive overlap with the same-index predecessor
    column; otherwise its largest-magnitude component is made positive.
    """
    if h0_sine.basis is not Basis.SINE:
        raise ValueError("diagonalize expects a sine-basis Hamiltonian")
    entries = h0_sine.entries
    if np.iscomplexobj(entries):
        raise ValueError("diagonalize expects a real symmetric matrix")
    energies, vectors = eigh(entries)
    if previous is not None:
        if previous.transform.shape != vectors.shape:
            raise ValueError("predecessor basis size mismatch")
        overlaps = np.einsum("bi,bi->i", previous.transform, vectors)
        vectors[:, overlaps < 0.0] *= -1.0
    else:
        lead = np.argmax(np.abs(vectors), axis=0)
        signs = np.sign(vectors[lead, np.arange(vectors.shape[1])])
        signs[signs == 0.0] = 1.0
        vectors *= signs[None, :]
    snapshot = (params.slope, params.length) if params is not None else None
    return SpectralData(
        eigenvalues=energies, transform=vectors, lambda_snapshot=snapshot
    )


def to_energy_basis(op: OperatorMatrix, spectral: SpectralData) -> OperatorMatrix:
    """Similarity transform Z^T O Z into the instantaneous energy basis."""
    if op.basis is not Basis.SINE:
        raise ValueError("operator is already in the energy basis")
    z = spectral.transform
    entries = op.entries
    if entries.shape != z.shape:
        raise ValueError(
            f"dimension mismatch: operator {entries.shape}, transform {z.shape}"
        )
    if np.iscomplexobj(entries):
        if not entries.real.any():
            # Pure-imaginary input: transform the real carrier cheaply.
            carrier = z.T @ np.ascontiguousarray(entries.imag) @ z
            if op.hermitian:
                # Restore the exact antisymmetry the gemms blur.
                carrier = 0.5 * (carrier - carrier.T)
            out = 1j * carrier
        else:
            out = z.T @ entries @ z
            if op.hermitian:
                out = 0.5 * (out + out.conj().T)
    else:
        out = z.T @ entries @ z
        if op.hermitian:
            out = 0.5 * (out + out.T)
    return OperatorMatrix(out, Basis.ENERGY, op.hermitian)


def build_fg_diagonal(
    spectral: SpectralData, params: PistonParams
) -> tuple[np.ndarray, np.ndarray]:
    """Diagonals f(E_m) and g(E_m), zero at or below the critical energy.

    Above E_c = sL:

        f = E - sL + sqrt(E (E - sL))
        g = sqrt(2m) [E sqrt(E - sL) + sqrt(E) (E - sL)]

    Both vanish continuously at E = E_c, so the single zeroing
    convention below E_c removes complex roots and reproduces the
    below-critical operators automatically.
    """
    energies = spectral.eigenvalues
    ec = params.slope * params.length
    excess = np.maximum(energies - ec, 0.0)
    root = np.sqrt(energies * excess)
    f_diag = np.where(excess > 0.0, excess + root, 0.0)
    g_diag = np.where(
        excess > 0.0,
        math.sqrt(2.0 * params.mass)
        * (energies * np.sqrt(excess) + np.sqrt(energies) * excess),
        0.0,
    )
    return f_diag, g_diag


def _xi_sc_imag(
    spectral: SpectralData, params: PistonParams, which: Drive
) -> np.ndarray:
    """Real carrier X of the semiclassical generator xi_SC = i X."""
    n = spectral.size
    spec = BasisSpec(n, params.length)
    z = spectral.transform
    p_bar = z.T @ build_p_sine(params, spec).entries.imag @ z
    xi2_bar = z.T @ build_xi2_sine(spec, params.hbar).entries.imag @ z
    eta_bar = z.T @ build_eta_sine(spec).entries.imag @ z
    f_diag, g_diag = build_fg_diagonal(spectral, params)
    x1 = 0.5 * p_bar * (f_diag[:, None] + f_diag[None, :])
    x3 = 0.5 * eta_bar * (g_diag[:, None] + g_diag[None, :])
    s = params.slope
    if which is Drive.SLOPE:
        combo = -x1 / (3.0 * s * s) - xi2_bar / (3.0 * s) + x3 / (3.0 * s * s)
    else:
        sl = s * params.length
        combo = -x1 / sl + x3 / sl
    # The carrier is antisymmetric in exact arithmetic; the transform
    # gemms blur that at the 1e-12 level, so project it back.
    return 0.5 * (combo - combo.T)


def assemble_xi_sc(
    spectral: SpectralData, params: PistonParams, which: Drive
) -> OperatorMatrix:
    """Semiclassical counterdiabatic generator in the energy basis.

    Slope drive:   -xi1/(3 s^2) - xi2/(3 s) + xi3/(3 s^2)
    Length drive:  -xi1/(s L) + xi3/(s L)

    With the below-critical zeroing of f and g, rows and columns of
    states under E_c collapse to the below-critical forms (-xi2/(3s)
    and zero respectively) without special casing.
    """
    return OperatorMatrix(
        1j * _xi_sc_imag(spectral, params, which), Basis.ENERGY, hermitian=True
    )


def _denominators(spectral: SpectralData) -> np.ndarray:
    energies = spectral.eigenvalues
    delta = energies[None, :] - energies[:, None]
    scale = float(np.max(np.abs(energies)))
    off = ~np.eye(energies.size, dtype=bool)
    if np.min(np.abs(delta[off])) < DEGENERACY_RTOL * scale:
        raise DegenerateSpectrumError(
            "near-degenerate eigenvalues: derivative couplings ill-defined"
        )
    np.fill_diagonal(delta, 1.0)  # diagonal never used
    return delta


def grad_s_matrix(spectral: SpectralData, params: PistonParams) -> OperatorMatrix:
    """Real antisymmetric matrix with entries -<m|d_s n> = -Q_mn/(E_n - E_m).

    The diagonal vanishes in the smooth gauge.
    """
    n = spectral.size
    spec = BasisSpec(n, params.length)
    q_bar = to_energy_basis(build_q_sine(params, spec), spectral).entries
    delta = _denominators(spectral)
    entries = -q_bar / delta
    np.fill_diagonal(entries, 0.0)
    return OperatorMatrix(entries, Basis.ENERGY, hermitian=False)


def grad_L_matrix(spectral: SpectralData, params: PistonParams) -> OperatorMatrix:
    """Real matrix of <n|d_L m> via the scale-invariance identity.

    <n|d_L m> = (3s/L) <n|d_s m> + (1/(i hbar L)) (xi2)_nm; the second
    term's 1/i cancels the pure-imaginary xi2, so the result is real.
    """
    n = spectral.size
    spec = BasisSpec(n, params.length)
    grad_s = grad_s_matrix(spectral, params).entries
    z = spectral.transform
    xi2_imag = z.T @ build_xi2_sine(spec, params.hbar).entries.imag @ z
    # Keep the exact antisymmetry (and hence the zero diagonal) that the
    # transform gemms blur at roundoff level.
    xi2_imag = 0.5 * (xi2_imag - xi2_imag.T)
    s, L, hbar = params.slope, params.length, params.hbar
    entries = -(3.0 * s / L) * grad_s + xi2_imag / (hbar * L)
    return OperatorMatrix(entries, Basis.ENERGY, hermitian=False)


def exact_cd_matrix(
    spectral: SpectralData, params: PistonParams, which: Drive
) -> OperatorMatrix:
    """Exact quantum generator: i hbar <m|d_lambda n> off-diagonal, 0 diagonal.

    This is the spectral-sum oracle the semiclassical operator is
    benchmarked against.
    """
    if which is Drive.SLOPE:
        carrier = -grad_s_matrix(spectral, params).entries
    else:
        carrier = grad_L_matrix(spectral, params).entries
    entries = 1j * params.hbar * carrier
    return OperatorMatrix(entries, Basis.ENERGY, hermitian=True)


def eta_autocorrelation(
    spec: BasisSpec,
    params: PistonParams,
    alpha: int,
    omega_grid: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Spectral weights of the eta autocorrelation on a flat base.

    For the flat box (the slope in params is ignored here) the energy
    basis is the sine basis itself, so the autocorrelation of eta in
    state alpha is a line spectrum at omega_(alpha,beta) =
    (E_alpha - E_beta)/hbar with weights |eta_(alpha,beta)|^2.
    Returns (omega, weight) over beta != alpha, or the weights summed
    onto omega_grid bins when a grid is supplied.
    """
    if not (1 <= alpha <= spec.size):
        raise ValueError(f"alpha must be in 1..{spec.size}")
    idx = np.arange(1, spec.size + 1)
    flat = (idx * math.pi * params.hbar) ** 2 / (2.0 * params.mass * spec.length ** 2)
    eta = build_eta_sine(spec).entries
    row = np.abs(eta[alpha - 1, :]) ** 2
    omega = (flat[alpha - 1] - flat) / params.hbar
    keep = idx != alpha
    omega, row = omega[keep], row[keep]
    if omega_grid is None:
        order = np.argsort(omega)
        return omega[order], row[order]
    grid = np.asarray(omega_grid, dtype=float)
    binned = np.zeros_like(grid)
    nearest = np.argmin(np.abs(grid[None, :] - omega[:, None]), axis=1)
    np.add.at(binned, nearest, row)
    return grid, binned


def boosted_sign_expectation(spec: BasisSpec, k: int) -> float:
    """<psi|eta|psi> for the boosted ground mode sin(pi q/L) e^(i pi k q/L).

    The expansion coefficients follow from exact integrals of
    cos(n x) e^(i k x) over [0, pi]; truncation should satisfy
    N >= |k| + 50 for the +-1 plateaus.
    """

    def half_exp(mu: int) -> complex:
        # integral of e^(i mu x) over [0, pi]
        if mu == 0:
            return complex(math.pi)
        if mu % 2 == 0:
            return 0.0 + 0.0j
        return 2.0j / mu

    def cos_integral(n: int) -> complex:
        return 0.5 * (half_exp(k + n) + half_exp(k - n))

    n_modes = spec.size
    coeff = np.empty(n_modes, dtype=complex)
    for beta in range(1, n_modes + 1):
        coeff[beta - 1] = (cos_integral(beta - 1) - cos_integral(beta + 1)) / math.pi
    eta = build_eta_sine(spec).entries
    value = np.vdot(coeff, eta @ coeff)
    if abs(value.imag) > 1e-12 * max(1.0, abs(value.real)):
        raise ArithmeticError(f"expectation not real: {value!r}")
    return float(value.real)


def sine_basis_overlap(size: int, length_a: float, length_b: float) -> np.ndarray:
    """Overlaps <alpha(L_a)|beta(L_b)> of sine modes of two box lengths.

    Modes vanish outside their own box, so the integral runs over
    [0, min(L_a, L_b)].  Used to differentiate eigenvectors across a
    wall displacement.
    """
    m_len = min(length_a, length_b)
    a = (np.arange(1, size + 1) * math.pi / length_a)[:, None]
    b = (np.arange(1, size + 1) * math.pi / length_b)[None, :]
    # sin(x M)/x = M sinc(x M / pi), stable through x -> 0
    diff = np.sinc((a - b) * m_len / math.pi)
    summ = np.sinc((a + b) * m_len / math.pi)
    return (m_len / math.sqrt(length_a * length_b)) * (diff - summ)
