"""Subspace basis, cross-integral matrices, Fisher information and the CRB objective.

Parameter ordering is ``xi = [r_1, ..., r_N, Re a_1, Im a_1, ..., Re a_N, Im a_N]``;
position index ``m = 3 n + i`` and reflection index ``m = 3N + 2 n + j``
(zero-based ``n``, ``i`` in 0..2, ``j`` in 0..1).

With the current restricted to ``J(p) = b(p)^T w``, every derivative of the
received field is ``dE/dxi_m (q) = G_m(q) w`` for a row vector ``G_m(q)``.
The cross-integral blocks ``[B]_{m,n} = int conj(G_m)^T G_n dq`` then give the
FIM as ``F_mn = (2/sigma^2) Re Tr{W [B]_{m,n}}`` with ``W = w w^H``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from .channel import a_t, grad_a_t, receive_factors, transmit_integrals
from .geometry import Scenario
from .quadrature import QuadratureGrid, SampleGrid

# relative eigenvalue floor below which the Schur complement counts as singular
SINGULAR_RTOL = 1e-10
RIDGE = 1e-12


class UnidentifiableError(np.linalg.LinAlgError):
    """Target positions cannot be estimated (singular Schur complement)."""


def scenario_grids(s: Scenario, n: int | None = None):
    nx = n or s.quad_points_x
    ny = n or s.quad_points_y
    return QuadratureGrid(s.tx, nx, ny), QuadratureGrid(s.rx, nx, ny)


# ---------------------------------------------------------------------------
# basis


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """b(p) = [exp(j k0 |r_1 - p|), ..., exp(j k0 |r_N - p|)]."""

    positions: np.ndarray
    k0: float

    @classmethod
    def for_scenario(cls, s: Scenario) -> "SubspaceBasis":
        return cls(s.positions, s.constants.wavenumber_k0)

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        d = np.linalg.norm(self.positions[None, :, :] - pts[:, None, :], axis=-1)
        return np.exp(1j * self.k0 * d)

    def current(self, w):
        from .channel import CurrentFunction

        w = np.asarray(w, dtype=complex)
        return CurrentFunction(lambda pts: self(pts) @ w, "subspace(w)")


@dataclass(frozen=True, eq=False)
class BasisIntegrals:
    """``b1[n, k] = int a_t(r_n, p) b_k(p) dp`` and ``b2[n, i, k] = int d_i a_t(r_n, p) b_k(p) dp``."""

    b1: np.ndarray
    b2: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        """(4N, N) map from ``w`` to the transmit integrals ``[I1; I2.ravel()]``."""
        n = self.b1.shape[0]
        return np.concatenate([self.b1, self.b2.reshape(3 * n, n)], axis=0)


def compute_basis_integrals(s: Scenario, tx_grid: SampleGrid) -> BasisIntegrals:
    k0, eta0 = s.constants.wavenumber_k0, s.constants.impedance_eta0
    b = SubspaceBasis.for_scenario(s)(tx_grid.points) * tx_grid.weights[:, None]
    r = s.positions[:, None, :]
    at = a_t(r, tx_grid.points[None], k0, eta0)
    gat = grad_a_t(r, tx_grid.points[None], k0, eta0)
    return BasisIntegrals(at @ b, np.einsum("nqi,qk->nik", gat, b))


def compute_B0(s: Scenario, tx_grid: SampleGrid) -> np.ndarray:
    """Gram matrix ``int conj(b) b^T dp`` so that the radiated power is ``w^H B0 w``."""
    b = SubspaceBasis.for_scenario(s)(tx_grid.points)
    B0 = (b.conj().T * tx_grid.weights) @ b
    return 0.5 * (B0 + B0.conj().T)


# ---------------------------------------------------------------------------
# cross matrices


def derivative_rows(s: Scenario, q, bi: BasisIntegrals) -> np.ndarray:
    """Row vectors ``G_m(q)`` for all 5N parameters, shape ``(Q, 5N, N)``."""
    n = s.num_targets
    alpha = s.reflections
    u, gu = receive_factors(s, q)  # (N, Q), (N, Q, 3)
    # position rows: alpha_n (d_i u_n) b1_n + alpha_n u_n b2_{n,i}
    g = (alpha[:, None, None, None] * gu[..., None]) * bi.b1[:, None, None, :]
    g = g + (alpha[:, None] * u)[:, :, None, None] * bi.b2[:, None, :, :]
    g = np.moveaxis(g, 1, 0).reshape(-1, 3 * n, n)
    # reflection rows: u_n b1_n and j u_n b1_n
    gbar = u.T[:, :, None] * bi.b1[None]
    gbar = np.stack([gbar, 1j * gbar], axis=2).reshape(-1, 2 * n, n)
    return np.concatenate([g, gbar], axis=1)


@dataclass(frozen=True, eq=False)
class CrossMatrices:
    """All cross-integral blocks, ``blocks[m, n] = int conj(G_m)^T G_n dq`` (each N x N).

    Also carries ``b1`` and the projected receive Gram used by the
    cancellation-free objective (:func:`crb_trace`).
    """

    B0: np.ndarray
    blocks: np.ndarray
    b1: np.ndarray
    gram: "ProjectedReceiveGram"

    @property
    def num_targets(self) -> int:
        return self.B0.shape[0]

    @property
    def B1(self):
        n3 = 3 * self.num_targets
        return self.blocks[:n3, :n3]

    @property
    def B2(self):
        n3 = 3 * self.num_targets
        return self.blocks[n3:, n3:]

    @property
    def B3(self):
        n3 = 3 * self.num_targets
        return self.blocks[:n3, n3:]


def compute_cross_matrices(s: Scenario, tx_grid: SampleGrid, rx_grid: SampleGrid,
                           basis_integrals: BasisIntegrals | None = None, chunk: int = 20000) -> CrossMatrices:
    bi = basis_integrals or compute_basis_integrals(s, tx_grid)
    n = s.num_targets
    dim = 5 * n * n
    acc = np.zeros((dim, dim), dtype=complex)
    pts, wts = rx_grid.points, rx_grid.weights
    for i in range(0, len(pts), chunk):
        v = derivative_rows(s, pts[i : i + chunk], bi).reshape(-1, dim)
        acc += (v.conj().T * wts[i : i + chunk]) @ v
    acc = 0.5 * (acc + acc.conj().T)
    blocks = acc.reshape(5 * n, n, 5 * n, n).transpose(0, 2, 1, 3)
    return CrossMatrices(compute_B0(s, tx_grid), np.ascontiguousarray(blocks), bi.b1,
                         compute_projected_gram(s, rx_grid, chunk))


# ---------------------------------------------------------------------------
# FIM and CRB


@dataclass(frozen=True, eq=False)
class FimBlocks:
    F_rr: np.ndarray
    F_ra: np.ndarray
    F_aa: np.ndarray

    @classmethod
    def from_full(cls, F, n: int) -> "FimBlocks":
        n3 = 3 * n
        return cls(F[:n3, :n3], F[:n3, n3:], F[n3:, n3:])

    @property
    def full(self) -> np.ndarray:
        return np.block([[self.F_rr, self.F_ra], [self.F_ra.T, self.F_aa]])


def blockwise_trace(W, blocks) -> np.ndarray:
    """``[Tr{W B_mn}]_{m,n}`` for a block array of shape ``(M, M', N, N)``."""
    return np.einsum("ab,mnba->mn", W, blocks)


def fim_full(W, cross: CrossMatrices, noise_power: float) -> np.ndarray:
    W = np.asarray(W)
    n = cross.num_targets
    if W.shape != (n, n):
        raise ValueError(f"W must be {n}x{n}, got {W.shape}")
    F = (2.0 / noise_power) * blockwise_trace(W, cross.blocks).real
    return 0.5 * (F + F.T)


def fim_blocks(W, cross: CrossMatrices, noise_power: float) -> FimBlocks:
    return FimBlocks.from_full(fim_full(W, cross, noise_power), cross.num_targets)


def fim_from_derivatives(D, weights, noise_power: float) -> np.ndarray:
    """FIM from sampled field derivatives ``D`` of shape ``(Q, P)``."""
    F = (2.0 / noise_power) * ((D.conj().T * weights) @ D).real
    return 0.5 * (F + F.T)


def field_derivatives(s: Scenario, q, i1, i2) -> np.ndarray:
    """dE/dxi at points ``q`` for given transmit integrals; shape ``(Q, 5N)``."""
    n = s.num_targets
    alpha = s.reflections
    u, gu = receive_factors(s, q)
    dr = alpha[:, None, None] * (gu * i1[:, None, None] + u[..., None] * i2[:, None, :])
    dr = np.moveaxis(dr, 1, 0).reshape(-1, 3 * n)
    da = (u * i1[:, None]).T
    da = np.stack([da, 1j * da], axis=2).reshape(-1, 2 * n)
    return np.concatenate([dr, da], axis=1)


def fim_for_current(s: Scenario, tx_grid: SampleGrid, rx_grid: SampleGrid, current_values) -> np.ndarray:
    """Full FIM for an arbitrary current sampled on the transmit grid."""
    i1, i2 = transmit_integrals(s, tx_grid, current_values)
    D = field_derivatives(s, rx_grid.points, i1, i2)
    return fim_from_derivatives(D, rx_grid.weights, s.noise_power)


def transmit_response_span(s: Scenario, tx_grid: SampleGrid, include_basis: bool = True) -> np.ndarray:
    """Columns whose inner products with a current give every transmit integral.

    ``I1_n = <conj(a_t(r_n, .)), J>`` and ``I2_n = <conj(grad a_t(r_n, .)), J>``
    under ``<f, g> = int conj(f) g dp``; with ``include_basis`` the phase-only
    basis functions are appended.  Shape ``(Q, 4N [+ N])``.
    """
    k0, eta0 = s.constants.wavenumber_k0, s.constants.impedance_eta0
    pts = tx_grid.points
    r = s.positions[:, None, :]
    at = a_t(r, pts[None], k0, eta0).T
    gat = np.moveaxis(grad_a_t(r, pts[None], k0, eta0), 1, 0).reshape(len(pts), -1)
    cols = [at.conj(), gat.conj()]
    if include_basis:
        cols.append(SubspaceBasis.for_scenario(s)(pts))
    return np.concatenate(cols, axis=1)


def orthogonal_component(span, weights, values) -> np.ndarray:
    """Remove from ``values`` its weighted least-squares projection onto ``span``.

    Two passes of projection (classical Gram-Schmidt with reorthogonalization)
    on the ``sqrt(weights)``-scaled samples.
    """
    sw = np.sqrt(np.asarray(weights, dtype=float))
    q, _ = np.linalg.qr(span * sw[:, None])
    x = np.asarray(values, dtype=complex) * sw
    for _ in range(2):
        x = x - q @ (q.conj().T @ x)
    return x / sw


@dataclass(frozen=True, eq=False)
class CrbResult:
    value: float
    crb: np.ndarray
    schur: np.ndarray
    regularized: bool
    fisher_inverse_cols: np.ndarray  # F^{-1} restricted to the position columns, (5N, 3N)


def crb_from_fim(F, n: int) -> CrbResult:
    """Tr of [F_rr - F_ra F_aa^{-1} F_ra^T]^{-1}, using symmetric solves."""
    fb = FimBlocks.from_full(np.asarray(F, dtype=float), n)
    F_aa = fb.F_aa
    regularized = False
    ev = np.linalg.eigvalsh(F_aa)
    if ev[-1] <= 0 or ev[0] <= SINGULAR_RTOL * ev[-1]:
        F_aa = F_aa + RIDGE * max(np.trace(F_aa), np.finfo(float).tiny) * np.eye(len(F_aa))
        regularized = True
    X = linalg.solve(F_aa, fb.F_ra.T, assume_a="sym")
    K = fb.F_rr - fb.F_ra @ X
    K = 0.5 * (K + K.T)
    if not np.all(np.isfinite(K)):
        raise UnidentifiableError("Fisher information is not finite")
    ek = np.linalg.eigvalsh(K)
    if ek[-1] <= 0 or ek[0] <= SINGULAR_RTOL * ek[-1]:
        raise UnidentifiableError(
            f"singular Schur complement (eigenvalues {ek[0]:.3e} .. {ek[-1]:.3e})"
        )
    crb = linalg.solve(K, np.eye(len(K)), assume_a="sym")
    crb = 0.5 * (crb + crb.T)
    Z = np.concatenate([crb, -X @ crb], axis=0)
    return CrbResult(float(np.trace(crb)), crb, K, regularized, Z)


def crb_trace_blockwise(w, cross: CrossMatrices, noise_power: float) -> float:
    """Tr{CRB} through the explicit blockwise-trace FIM and its Schur complement.

    Mathematically equal to :func:`crb_trace`, but the Schur complement
    subtracts matrices some seven orders of magnitude larger than the result,
    which leaves about 1e-9 relative noise.
    """
    return crb_details(w, cross, noise_power).value


def crb_details(w, cross: CrossMatrices, noise_power: float) -> CrbResult:
    w = np.asarray(w, dtype=complex)
    return crb_from_fim(fim_full(np.outer(w, w.conj()), cross, noise_power), cross.num_targets)


def objective_and_gradient_blockwise(w, cross: CrossMatrices, noise_power: float) -> tuple[float, np.ndarray]:
    """F(w) and g with F(w + d) ~ F(w) + 2 Re{g^H d}.

    dTr{[F^{-1}]_rr} = -Tr{Z Z^T dF} with Z the position columns of F^{-1};
    each dF_mn is linear in W = w w^H through the blocks, which gives
    g = -(2/sigma^2) (sum_mn Lambda_mn B_mn) w with Lambda = Z Z^T.
    """
    w = np.asarray(w, dtype=complex)
    res = crb_details(w, cross, noise_power)
    Z = res.fisher_inverse_cols
    lam = Z @ Z.T
    M = np.einsum("mn,mnab->ab", lam, cross.blocks)
    return res.value, -(2.0 / noise_power) * (M @ w)


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProjectedReceiveGram:
    """Gram matrix of receive-side position derivatives with the reflection span removed.

    The reflection derivatives of the field are complex multiples of
    ``u_n(q)``, and the transmit-side part of each position derivative,
    ``alpha_n u_n(q) dI1_n``, lies in the same span.  The Schur complement
    therefore only sees ``v_{n,i} = d_i u_n - P_u d_i u_n`` and

        K = (2/sigma^2) Re{ conj(c_n) c_m M[(n,i),(m,j)] },   c = alpha * I1,

    with ``M = int conj(v)^T v dq``.  Forming ``v`` pointwise before the inner
    product avoids the large cancellation of the explicit Schur complement.
    """

    M: np.ndarray  # (3N, 3N) Hermitian
    reflections: np.ndarray

    @property
    def num_targets(self) -> int:
        return len(self.reflections)


def compute_projected_gram(s: Scenario, rx_grid: SampleGrid, chunk: int = 20000) -> ProjectedReceiveGram:
    n = s.num_targets
    pts, wts = rx_grid.points, rx_grid.weights
    G = np.zeros((n, n), dtype=complex)
    C = np.zeros((n, 3 * n), dtype=complex)
    for i in range(0, len(pts), chunk):
        u, gu = receive_factors(s, pts[i : i + chunk])
        du = np.moveaxis(gu, 1, 0).reshape(-1, 3 * n)
        uw = u.conj() * wts[i : i + chunk]
        G += uw @ u.T
        C += uw @ du
    try:
        coef = linalg.solve(0.5 * (G + G.conj().T), C, assume_a="her")
    except linalg.LinAlgError as exc:
        raise UnidentifiableError("receive responses of the targets are linearly dependent") from exc
    M = np.zeros((3 * n, 3 * n), dtype=complex)
    for i in range(0, len(pts), chunk):
        u, gu = receive_factors(s, pts[i : i + chunk])
        v = np.moveaxis(gu, 1, 0).reshape(-1, 3 * n) - u.T @ coef
        M += (v.conj().T * wts[i : i + chunk]) @ v
    return ProjectedReceiveGram(0.5 * (M + M.conj().T), s.reflections.copy())


def schur_from_i1(i1, gram: ProjectedReceiveGram, noise_power: float) -> np.ndarray:
    """Position-block Schur complement of the FIM for transmit integrals ``I1``."""
    c = np.repeat(gram.reflections * np.asarray(i1, dtype=complex), 3)
    K = (2.0 / noise_power) * (np.outer(c.conj(), c) * gram.M).real
    return 0.5 * (K + K.T)


def _crb_from_schur(K) -> np.ndarray:
    if not np.all(np.isfinite(K)):
        raise UnidentifiableError("Schur complement is not finite")
    ek = np.linalg.eigvalsh(K)
    if ek[-1] <= 0 or ek[0] <= SINGULAR_RTOL * ek[-1]:
        raise UnidentifiableError(
            f"singular Schur complement (eigenvalues {ek[0]:.3e} .. {ek[-1]:.3e})"
        )
    crb = linalg.solve(K, np.eye(len(K)), assume_a="sym")
    return 0.5 * (crb + crb.T)


def reduced_objective_and_gradient(w, b1, gram: ProjectedReceiveGram, noise_power: float):
    """F(w) and g (same convention as :func:`objective_and_gradient_blockwise`) via the projected Gram.

    With ``Lambda = K^{-2}`` and ``R_n = sum Lambda[(n,i),(m,j)] M[(n,i),(m,j)] c_m``,
    ``g = -(2/sigma^2) b1^H (conj(alpha) * R)``.
    """
    w = np.asarray(w, dtype=complex)
    i1 = b1 @ w
    K = schur_from_i1(i1, gram, noise_power)
    crb = _crb_from_schur(K)
    n = gram.num_targets
    c = np.repeat(gram.reflections * i1, 3)
    lam = crb @ crb
    R = ((lam * gram.M) @ c).reshape(n, 3).sum(axis=1)
    g = -(2.0 / noise_power) * (b1.conj().T @ (gram.reflections.conj() * R))
    return float(np.trace(crb)), g


def crb_matrix(w, cross: CrossMatrices, noise_power: float) -> np.ndarray:
    """Position CRB matrix (3N x 3N) for the subspace current with weights ``w``."""
    i1 = cross.b1 @ np.asarray(w, dtype=complex)
    return _crb_from_schur(schur_from_i1(i1, cross.gram, noise_power))


def crb_trace(w, cross: CrossMatrices, noise_power: float) -> float:
    """Objective F(w) = Tr{CRB} for the subspace current with weights ``w``."""
    return float(np.trace(crb_matrix(w, cross, noise_power)))


def objective_and_gradient(w, cross: CrossMatrices, noise_power: float) -> tuple[float, np.ndarray]:
    return reduced_objective_and_gradient(w, cross.b1, cross.gram, noise_power)


def euclidean_grad_F(w, cross: CrossMatrices, noise_power: float) -> np.ndarray:
    """Wirtinger gradient ``dF/dw*`` so that ``F(w + d) ~ F(w) + 2 Re{g^H d}``."""
    return objective_and_gradient(w, cross, noise_power)[1]


# ---------------------------------------------------------------------------


class CrbProblem:
    """Precomputed matrices for one scenario; evaluates F(w), its gradient and power."""

    def __init__(self, s: Scenario, tx_grid: SampleGrid | None = None, rx_grid: SampleGrid | None = None):
        if tx_grid is None or rx_grid is None:
            gt, gr = scenario_grids(s)
            tx_grid = tx_grid or gt
            rx_grid = rx_grid or gr
        self.scenario = s
        self.tx_grid = tx_grid
        self.rx_grid = rx_grid
        self.basis = SubspaceBasis.for_scenario(s)
        self.basis_integrals = compute_basis_integrals(s, tx_grid)
        self.cross = compute_cross_matrices(s, tx_grid, rx_grid, self.basis_integrals)

    @property
    def B0(self):
        return self.cross.B0

    @property
    def gram(self):
        return self.cross.gram

    @property
    def num_targets(self) -> int:
        return self.scenario.num_targets

    @property
    def noise_power(self):
        return self.scenario.noise_power

    @property
    def power_budget(self):
        return self.scenario.power_budget_A2

    def objective(self, w) -> float:
        return crb_trace(w, self.cross, self.noise_power)

    def objective_and_gradient(self, w):
        return objective_and_gradient(w, self.cross, self.noise_power)

    def gradient(self, w) -> np.ndarray:
        return euclidean_grad_F(w, self.cross, self.noise_power)

    def crb_matrix(self, w) -> np.ndarray:
        return crb_matrix(w, self.cross, self.noise_power)

    def power(self, w) -> float:
        w = np.asarray(w, dtype=complex)
        return float(np.real(w.conj() @ self.B0 @ w))

    def normalize(self, w, power: float | None = None) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        return w * np.sqrt((self.power_budget if power is None else power) / self.power(w))

    def current(self, w):
        return self.basis.current(w)

    def crb_for_current(self, current_values) -> float:
        """Tr{CRB} for an arbitrary current sampled on the transmit grid."""
        i1, _ = transmit_integrals(self.scenario, self.tx_grid, current_values)
        return float(np.trace(_crb_from_schur(schur_from_i1(i1, self.gram, self.noise_power))))


# ---------------------------------------------------------------------------
# binary dump for cross-implementation comparison
#
# File layout: ASCII magic line "CAPACRB-MATRICES 1\n", then one record per
# matrix: a header line "<name> <rows> <cols>\n" followed by rows*cols
# complex entries, row-major, each stored as two little-endian float64
# (real, imag).  Block matrices are flattened to (M*N) x (M'*N) with block
# (m, n) occupying rows m*N.. and columns n*N...

_MAGIC = b"CAPACRB-MATRICES 1\n"


def _flatten_blocks(blocks):
    m, mp, n, _ = blocks.shape
    return blocks.transpose(0, 2, 1, 3).reshape(m * n, mp * n)


def dump_cross_matrices(path, cross: CrossMatrices) -> None:
    mats = {"B0": cross.B0, "B1": _flatten_blocks(cross.B1), "B2": _flatten_blocks(cross.B2),
            "B3": _flatten_blocks(cross.B3)}
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        for name, M in mats.items():
            M = np.ascontiguousarray(M, dtype=np.complex128)
            fh.write(f"{name} {M.shape[0]} {M.shape[1]}\n".encode())
            fh.write(M.view("<f8").tobytes())


def load_cross_matrices(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError("not a cross-matrix dump")
    pos = len(_MAGIC)
    out = {}
    while pos < len(data):
        end = data.index(b"\n", pos)
        name, rows, cols = data[pos:end].decode().split()
        rows, cols = int(rows), int(cols)
        pos = end + 1
        nbytes = rows * cols * 16
        arr = np.frombuffer(data[pos : pos + nbytes], dtype="<f8").copy().view(np.complex128)
        out[name] = arr.reshape(rows, cols)
        pos += nbytes
    return out


def unflatten_blocks(M, n: int) -> np.ndarray:
    rows, cols = M.shape
    return M.reshape(rows // n, n, cols // n, n).transpose(0, 2, 1, 3)

