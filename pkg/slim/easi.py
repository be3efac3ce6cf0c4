#!/usr/bin/env python3
"""
SLIM EASI Demand System
Reduced-dimension Exact Affine Stone Index budget-share model: synthetic
data-generating process, moment model with analytic Jacobian and parameter
packing under Slutsky symmetry.

Record layout (m = J - 1 retained share equations, L demographics):
    [w_1 .. w_m, x, p_1 .. p_m, z_1 .. z_L]

Share equation j:
    w_j = sum_r b_rj y^r + C_j z + D_j z y + sum_l z_l (A_l p)_j + (B p)_j y + e_j
with z_0 = 1 and implicit utility
    y = (x - p'w + 1/2 sum_l z_l p'A_l p) / (1 - 1/2 p'B p)
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from slim.model import ConfigurationError, Dataset, GenerationError, MomentModel

logger = logging.getLogger(__name__)

POLY_ORDER = 5
DENOMINATOR_TOL = 1e-8
SYMMETRY_TOL = 1e-12


def easi_dimensions(J: int, L: int) -> Tuple[int, int]:
    """
    Parameter and moment counts of the symmetric EASI system.

    Returns:
        Tuple of (d, d_g)
    """
    if J < 2 or L < 0:
        raise ConfigurationError(f"EASI needs J >= 2 and L >= 0, got J={J}, L={L}")
    m = J - 1
    tri = m * (m + 1) // 2
    d = (POLY_ORDER + 1) * m + 2 * m * L + (L + 1) * tri + tri
    return d, m * instrument_count(J, L)


def instrument_count(J: int, L: int) -> int:
    """Length of q = [1, x..x^5, p, z, z x, p x, p z_1 .. p z_L]."""
    m = J - 1
    return 1 + POLY_ORDER + 2 * L + m * (2 + L)


def engel_curve(b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """
    Evaluate sum_r b_r x^r on a grid.

    Args:
        b: (POLY_ORDER + 1, m) polynomial coefficients
        x: (K,) grid

    Returns:
        (K, m) curve values
    """
    powers = np.asarray(x, dtype=float)[:, None] ** np.arange(POLY_ORDER + 1)
    return powers @ np.asarray(b, dtype=float)


def _tri(m: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(m)


@dataclass
class EasiParameters:
    """Unpacked coefficient blocks."""

    b: np.ndarray  # (6, m)
    C: np.ndarray  # (m, L)
    D: np.ndarray  # (m, L)
    A: np.ndarray  # (L + 1, m, m), symmetric slices
    B: np.ndarray  # (m, m), symmetric


class EasiLayout:
    """
    Index bookkeeping for theta = [b (r-major), C, D, A_0..A_L upper, B upper].
    """

    def __init__(self, J: int, L: int):
        self.J = J
        self.L = L
        self.m = J - 1
        self.d, self.d_g = easi_dimensions(J, L)
        self.dq = instrument_count(J, L)
        m = self.m

        self.tri_a, self.tri_b = _tri(m)
        self.n_tri = len(self.tri_a)
        self.tri_mult = np.where(self.tri_a == self.tri_b, 1.0, 2.0)

        self.off_b = 0
        self.off_C = (POLY_ORDER + 1) * m
        self.off_D = self.off_C + m * L
        self.off_A = self.off_D + m * L
        self.off_B = self.off_A + (L + 1) * self.n_tri

        # b: column r*m + j feeds equation j with y^r
        self.b_eq = np.tile(np.arange(m), POLY_ORDER + 1)
        self.b_pow = np.repeat(np.arange(POLY_ORDER + 1), m)
        self.b_cols = self.off_b + np.arange((POLY_ORDER + 1) * m)

        # C and D: column j*L + l feeds equation j with z_l (times y for D)
        self.cd_eq = np.repeat(np.arange(m), L)
        self.cd_z = np.tile(np.arange(L), m)
        self.C_cols = self.off_C + np.arange(m * L)
        self.D_cols = self.off_D + np.arange(m * L)

        # symmetric unit matrix E_ab contributes p_b to row a and p_a to row b
        sym_eq, sym_p, sym_k = [], [], []
        for k, (a, b) in enumerate(zip(self.tri_a, self.tri_b)):
            sym_eq.append(a)
            sym_p.append(b)
            sym_k.append(k)
            if a != b:
                sym_eq.append(b)
                sym_p.append(a)
                sym_k.append(k)
        self.sym_eq = np.asarray(sym_eq)
        self.sym_p = np.asarray(sym_p)
        self.sym_k = np.asarray(sym_k)

    def A_cols(self, l: int) -> np.ndarray:
        """Theta columns of the upper triangle of A_l."""
        return self.off_A + l * self.n_tri + np.arange(self.n_tri)

    @property
    def B_cols(self) -> np.ndarray:
        """Theta columns of the upper triangle of B."""
        return self.off_B + np.arange(self.n_tri)

    def param_names(self) -> List[str]:
        """Readable names such as b2[0], C[0,0], A0[0,1], B[1,1]."""
        names = [f"b{r}[{j}]" for r in range(POLY_ORDER + 1) for j in range(self.m)]
        names += [f"C[{j},{l}]" for j in range(self.m) for l in range(self.L)]
        names += [f"D[{j},{l}]" for j in range(self.m) for l in range(self.L)]
        for l in range(self.L + 1):
            names += [f"A{l}[{a},{b}]" for a, b in zip(self.tri_a, self.tri_b)]
        names += [f"B[{a},{b}]" for a, b in zip(self.tri_a, self.tri_b)]
        return names

    def unpack(self, theta: np.ndarray) -> EasiParameters:
        """Split theta into coefficient blocks (A_l and B symmetrized)."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.d,):
            raise ConfigurationError(f"theta has shape {theta.shape}, expected ({self.d},)")
        m, L = self.m, self.L

        b = theta[self.b_cols].reshape(POLY_ORDER + 1, m)
        C = theta[self.C_cols].reshape(m, L)
        D = theta[self.D_cols].reshape(m, L)

        A = np.zeros((L + 1, m, m))
        for l in range(L + 1):
            A[l, self.tri_a, self.tri_b] = theta[self.A_cols(l)]
            A[l, self.tri_b, self.tri_a] = theta[self.A_cols(l)]

        Bm = np.zeros((m, m))
        Bm[self.tri_a, self.tri_b] = theta[self.B_cols]
        Bm[self.tri_b, self.tri_a] = theta[self.B_cols]
        return EasiParameters(b=b, C=C, D=D, A=A, B=Bm)

    def pack(self, params: EasiParameters) -> np.ndarray:
        """Inverse of `unpack`; reads the upper triangles."""
        theta = np.empty(self.d)
        theta[self.b_cols] = np.asarray(params.b, dtype=float).reshape(-1)
        theta[self.C_cols] = np.asarray(params.C, dtype=float).reshape(-1)
        theta[self.D_cols] = np.asarray(params.D, dtype=float).reshape(-1)
        A = np.asarray(params.A, dtype=float)
        for l in range(self.L + 1):
            theta[self.A_cols(l)] = A[l][self.tri_a, self.tri_b]
        theta[self.B_cols] = np.asarray(params.B, dtype=float)[self.tri_a, self.tri_b]
        return theta


def implicit_utility(
    x: np.ndarray,
    p: np.ndarray,
    z_full: np.ndarray,
    w: np.ndarray,
    A: np.ndarray,
    B: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Implicit utility y and its denominator 1 - 1/2 p'B p.

    Args:
        x: (n,) log expenditure
        p: (n, m) normalized log prices
        z_full: (n, L + 1) demographics with leading column of ones
        w: (n, m) shares entering the Stone index
        A: (L + 1, m, m)
        B: (m, m)

    Raises:
        GenerationError: When the denominator is not positive
    """
    quad_A = np.einsum("bl,bi,lij,bj->b", z_full, p, A, p)
    den = 1.0 - 0.5 * np.einsum("bi,ij,bj->b", p, B, p)
    if np.any(den <= DENOMINATOR_TOL):
        worst = float(den.min())
        raise GenerationError(f"Implicit utility denominator {worst:.3e} is not positive")
    y = (x - np.sum(p * w, axis=1) + 0.5 * quad_A) / den
    return y, den


def fitted_shares(
    params: EasiParameters, y: np.ndarray, p: np.ndarray, z_full: np.ndarray
) -> np.ndarray:
    """Deterministic part of the m share equations, (n, m)."""
    z = z_full[:, 1:]
    ypow = y[:, None] ** np.arange(POLY_ORDER + 1)
    fitted = ypow @ params.b + z @ params.C.T + (z * y[:, None]) @ params.D.T
    fitted += np.einsum("bl,lij,bj->bi", z_full, params.A, p)
    fitted += (p @ params.B) * y[:, None]
    return fitted


def _default_blocks(J: int, L: int) -> Dict[str, Any]:
    """Small, alternating-sign coefficients with symmetric A_l and B."""
    m = J - 1
    sign = np.array([(-1.0) ** j for j in range(m)])
    off = np.ones((m, m)) - np.eye(m)

    b = np.zeros((POLY_ORDER + 1, m))
    b[0] = 1.0 / J
    for r in range(1, POLY_ORDER + 1):
        b[r] = sign * 0.05 * 0.5 ** (r - 1)

    C = np.array([[0.02 * sign[j] / (l + 1) for l in range(L)] for j in range(m)]).reshape(m, L)
    D = np.array([[0.01 * sign[j] / (l + 1) for l in range(L)] for j in range(m)]).reshape(m, L)
    A = np.stack([(0.1 * np.eye(m) - 0.02 * off) * (1.0 if l == 0 else 0.2 / l) for l in range(L + 1)])
    B = 0.03 * np.eye(m) - 0.01 * off

    return {
        "b": b.tolist(),
        "C": C.tolist(),
        "D": D.tolist(),
        "A": A.tolist(),
        "B": B.tolist(),
        "sigma": [0.05] * m,
    }


@dataclass
class EasiDgpConfig:
    """
    Coefficients and base-sample settings of the EASI design.

    The base sample of (x, p, z) rows is synthetic: x ~ N(x_mean, x_sd^2),
    p drawn from a grid of `n_price_points` Gaussian price vectors and z
    scaled into [-1, 1]. It is regenerated from `base_seed`, so every
    replication resamples the same base rows.
    """

    J: int = 3
    L: int = 1
    b: Optional[List[List[float]]] = None
    C: Optional[List[List[float]]] = None
    D: Optional[List[List[float]]] = None
    A: Optional[List[List[List[float]]]] = None
    B: Optional[List[List[float]]] = None
    sigma: Optional[List[float]] = None
    w_bar: Optional[List[float]] = None
    base_size: int = 2000
    n_price_points: int = 48
    x_mean: float = 0.1
    x_sd: float = 0.35
    p_sd: float = 0.1
    base_seed: int = 20240501
    base_sample: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.J < 2 or self.L < 0:
            raise ConfigurationError(f"EASI needs J >= 2 and L >= 0, got J={self.J}, L={self.L}")
        defaults = _default_blocks(self.J, self.L)
        for key, value in defaults.items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        self.validate()

    @property
    def m(self) -> int:
        return self.J - 1

    @property
    def layout(self) -> EasiLayout:
        return EasiLayout(self.J, self.L)

    def params(self) -> EasiParameters:
        """Coefficient blocks as arrays."""
        return EasiParameters(
            b=np.asarray(self.b, dtype=float),
            C=np.asarray(self.C, dtype=float).reshape(self.m, self.L),
            D=np.asarray(self.D, dtype=float).reshape(self.m, self.L),
            A=np.asarray(self.A, dtype=float),
            B=np.asarray(self.B, dtype=float),
        )

    @property
    def theta_true(self) -> np.ndarray:
        """Packed true parameter vector."""
        return self.layout.pack(self.params())

    def shares_mean(self) -> np.ndarray:
        """w_bar used in the DGP utility (intercepts b_0 unless supplied)."""
        if self.w_bar is not None:
            return np.asarray(self.w_bar, dtype=float)
        return np.asarray(self.b, dtype=float)[0]

    def validate(self) -> None:
        """Check block shapes and Slutsky symmetry."""
        m, L = self.m, self.L
        expected = {
            "b": (POLY_ORDER + 1, m),
            "A": (L + 1, m, m),
            "B": (m, m),
        }
        for key, shape in expected.items():
            got = np.asarray(getattr(self, key), dtype=float).shape
            if got != shape:
                raise ConfigurationError(f"EASI block {key} has shape {got}, expected {shape}")
        for key in ("C", "D"):
            size = np.asarray(getattr(self, key), dtype=float).size
            if size != m * L:
                raise ConfigurationError(f"EASI block {key} has {size} entries, expected {m * L}")
        if np.asarray(self.sigma, dtype=float).shape != (m,):
            raise ConfigurationError(f"sigma must have length {m}")
        if np.any(np.asarray(self.sigma, dtype=float) < 0):
            raise ConfigurationError("sigma must be nonnegative")
        if self.w_bar is not None and np.asarray(self.w_bar).shape != (m,):
            raise ConfigurationError(f"w_bar must have length {m}")

        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if np.max(np.abs(A - np.swapaxes(A, 1, 2)), initial=0.0) > SYMMETRY_TOL:
            raise ConfigurationError("A_l blocks must be symmetric")
        if np.max(np.abs(B - B.T), initial=0.0) > SYMMETRY_TOL:
            raise ConfigurationError("B must be symmetric")
        if self.base_size < 1 or self.n_price_points < 1:
            raise ConfigurationError("Base sample must be non-empty")

    def columns(self) -> Tuple[str, ...]:
        """Record schema."""
        return (
            tuple(f"w{j}" for j in range(self.m))
            + ("x",)
            + tuple(f"p{j}" for j in range(self.m))
            + tuple(f"z{l}" for l in range(self.L))
        )

    def resolve_base_sample(self) -> np.ndarray:
        """Supplied (x, p, z) rows, or the synthetic base sample."""
        if self.base_sample is not None:
            base = np.asarray(self.base_sample, dtype=float)
            if base.ndim != 2 or base.shape[0] < 1 or base.shape[1] != 1 + self.m + self.L:
                raise ConfigurationError("base_sample must be a non-empty (rows, 1 + m + L) matrix")
            return base
        return synthetic_base_sample(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EasiDgpConfig":
        """Build from a config mapping (unknown keys rejected)."""
        allowed = set(cls.__dataclass_fields__) - {"base_sample"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigurationError(f"Unknown EASI keys: {sorted(unknown)}")
        return cls(**data)


def default_easi_config(J: int = 3, L: int = 1) -> EasiDgpConfig:
    """Reduced-dimension default design."""
    return EasiDgpConfig(J=J, L=L)


def synthetic_base_sample(config: EasiDgpConfig) -> np.ndarray:
    """
    Stand-in for a household survey: (base_size, 1 + m + L) rows of (x, p, z).
    """
    rng = np.random.default_rng(config.base_seed)
    m, L = config.m, config.L

    x = config.x_mean + config.x_sd * rng.standard_normal(config.base_size)
    grid = config.p_sd * rng.standard_normal((config.n_price_points, m))
    p = grid[rng.integers(config.n_price_points, size=config.base_size)]

    z = rng.standard_normal((config.base_size, L))
    if L:
        scale = np.max(np.abs(z), axis=0)
        z = z / np.where(scale > 0, scale, 1.0)

    return np.column_stack([x, p, z])


def generate_easi(
    config: EasiDgpConfig,
    n: int,
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> Dataset:
    """
    Resample (x, p, z) and draw shares from the EASI system.

    Utility uses the DGP mean shares w_bar; shares add independent
    N(0, sigma_j^2) errors per equation.

    Raises:
        ConfigurationError: n < 1
        GenerationError: Non-positive utility denominator
    """
    if n < 1:
        raise ConfigurationError(f"Sample size must be positive, got {n}")
    if rng is None:
        rng = np.random.default_rng(seed)

    m, L = config.m, config.L
    base = config.resolve_base_sample()
    rows = base[rng.integers(base.shape[0], size=n)]
    x = rows[:, 0]
    p = rows[:, 1 : 1 + m]
    z = rows[:, 1 + m :]
    z_full = np.column_stack([np.ones(n), z])

    params = config.params()
    w_bar = np.broadcast_to(config.shares_mean(), (n, m))
    y, _ = implicit_utility(x, p, z_full, w_bar, params.A, params.B)

    eps = rng.standard_normal((n, m)) * np.asarray(config.sigma, dtype=float)
    w = fitted_shares(params, y, p, z_full) + eps

    return Dataset(np.column_stack([w, x, p, z]), config.columns())


class EasiModel(MomentModel):
    """
    GMM moments g = residuals (x) instruments, equation-major:
    g[j * dq + k] = e_j q_k, with utility computed from observed shares.
    """

    def __init__(self, J: int, L: int, config: Optional[EasiDgpConfig] = None):
        self.layout = EasiLayout(J, L)
        super().__init__(self.layout.d, self.layout.d_g, n_equations=self.layout.m)
        self.J = J
        self.L = L
        self.m = self.layout.m
        self.dq = self.layout.dq
        self.config = config

    @property
    def param_names(self) -> List[str]:
        return self.layout.param_names()

    @property
    def affine(self) -> bool:
        return False

    def split(self, records: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return (w, x, p, z_full) of a record block."""
        m = self.m
        w = records[:, :m]
        x = records[:, m]
        p = records[:, m + 1 : 2 * m + 1]
        z = records[:, 2 * m + 1 :]
        z_full = np.column_stack([np.ones(records.shape[0]), z])
        return w, x, p, z_full

    def instruments(self, records: np.ndarray) -> np.ndarray:
        """q = [1, x..x^5, p, z, z x, p x, p z_1 .. p z_L], (B, dq)."""
        _, x, p, z_full = self.split(records)
        z = z_full[:, 1:]
        blocks = [
            x[:, None] ** np.arange(POLY_ORDER + 1),
            p,
            z,
            z * x[:, None],
            p * x[:, None],
        ]
        blocks += [p * z[:, [l]] for l in range(self.L)]
        return np.column_stack(blocks)

    def residuals(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Share-equation residuals e, (B, m)."""
        params = self.layout.unpack(theta)
        w, x, p, z_full = self.split(records)
        y, _ = implicit_utility(x, p, z_full, w, params.A, params.B)
        return w - fitted_shares(params, y, p, z_full)

    def moments(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        e = self.residuals(records, theta)
        q = self.instruments(records)
        return (e[:, :, None] * q[:, None, :]).reshape(records.shape[0], self.d_g)

    def residual_jacobian(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """
        d e / d theta, (B, m, d).

        e = w - f(theta, y(theta)), so de = -(df_direct + df/dy * dy).
        """
        lay = self.layout
        params = lay.unpack(theta)
        w, x, p, z_full = self.split(records)
        z = z_full[:, 1:]
        size = records.shape[0]

        y, den = implicit_utility(x, p, z_full, w, params.A, params.B)
        ypow = y[:, None] ** np.arange(POLY_ORDER + 1)

        direct = np.zeros((size, self.m, self.d))
        direct[:, lay.b_eq, lay.b_cols] = ypow[:, lay.b_pow]
        if self.L:
            direct[:, lay.cd_eq, lay.C_cols] = z[:, lay.cd_z]
            direct[:, lay.cd_eq, lay.D_cols] = z[:, lay.cd_z] * y[:, None]

        sym_vals = p[:, lay.sym_p]
        for l in range(self.L + 1):
            cols = lay.A_cols(l)[lay.sym_k]
            direct[:, lay.sym_eq, cols] = z_full[:, [l]] * sym_vals
        direct[:, lay.sym_eq, lay.B_cols[lay.sym_k]] = sym_vals * y[:, None]

        # dy: only A_l and B enter the utility
        half_pp = 0.5 * p[:, lay.tri_a] * p[:, lay.tri_b] * lay.tri_mult
        dy = np.zeros((size, self.d))
        for l in range(self.L + 1):
            dy[:, lay.A_cols(l)] = z_full[:, [l]] * half_pp / den[:, None]
        dy[:, lay.B_cols] = (y / den)[:, None] * half_pp

        powers = np.arange(1, POLY_ORDER + 1)
        fy = (ypow[:, :POLY_ORDER] * powers) @ params.b[1:]
        fy += z @ params.D.T + p @ params.B

        return -(direct + fy[:, :, None] * dy[:, None, :])

    def jacobian(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        de = self.residual_jacobian(records, theta)
        q = self.instruments(records)
        G = np.einsum("bk,bjd->bjkd", q, de)
        return G.reshape(records.shape[0], self.d_g, self.d)

    def mean_jacobian(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        de = self.residual_jacobian(records, theta)
        q = self.instruments(records)
        G = np.einsum("bk,bjd->jkd", q, de) / records.shape[0]
        return G.reshape(self.d_g, self.d)

    def instrument_weight(self, data: Dataset) -> np.ndarray:
        """W_2SLS = I_m (x) (n^-1 sum q q')^-1."""
        q = self.instruments(data.observations)
        qq_inv = np.linalg.pinv(q.T @ q / data.n)
        return np.kron(np.eye(self.m), qq_inv)


def model_from_easi(config: EasiDgpConfig) -> EasiModel:
    """
    Build the EASI moment model for a design.

    Raises:
        ConfigurationError: Invalid configuration
    """
    config.validate()
    model = EasiModel(config.J, config.L, config)
    logger.debug(f"EASI model J={config.J}, L={config.L}: d={model.d}, d_g={model.d_g}")
    return model
