"""Seeded synthetic data: piecewise-constant subspaces with one-direction
rotations, bounded i.i.d. coefficients, moving-object or Bernoulli outlier
supports, and optional bounded dense noise.

Everything is a pure function of (config, seed). Draw order is fixed and
documented in gen_dataset so regenerating with the same seed is bitwise
reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import BadGeometry, ConfigError, DegenerateComplement
from .linalg import Basis, orthonormalize, project_complement, subspace_error


@dataclass(frozen=True)
class SubspaceChangeSpec:
    """One rotation event: at frame t_j, column ch_index of the previous
    basis (optionally pre-rotated by u_rotation) tilts by theta_j toward a
    fresh direction drawn from the orthogonal complement."""

    t_j: int
    theta_j: float
    ch_index: int = -1
    u_rotation: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0.0 <= self.theta_j <= math.pi / 2:
            raise ConfigError(f"theta_j must be in [0, pi/2], got {self.theta_j}")


@dataclass(frozen=True)
class CoeffModel:
    """Bounded zero-mean coefficients: entry i ~ unif(-sqrt(3 l_i), sqrt(3 l_i)),
    so the covariance is diag(lambdas) and the boundedness constant is 3."""

    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=np.float64)
        if lam.ndim != 1 or lam.size == 0 or np.any(lam <= 0):
            raise ConfigError("lambdas must be a 1-D positive vector")
        object.__setattr__(self, "lambdas", lam)

    @property
    def r(self) -> int:
        return self.lambdas.size

    @property
    def lambda_plus(self) -> float:
        return float(self.lambdas.max())

    @property
    def lambda_minus(self) -> float:
        return float(self.lambdas.min())

    @property
    def f(self) -> float:
        return self.lambda_plus / self.lambda_minus


def coeff_model_for_condition_number(r: int, f: float) -> CoeffModel:
    """Covariance diag(f, ..., f, 1, 1)/3: condition number f with the last
    two entries (including the default changing direction) at variance 1/3."""
    if r < 2:
        raise ConfigError("need r >= 2 for the two-level coefficient model")
    lam = np.full(r, f, dtype=np.float64)
    lam[-2:] = 1.0
    return CoeffModel(lam / 3.0)


@dataclass(frozen=True)
class MovingObjectSupport:
    """1-D object of length s pacing down then up, pausing ceil(c0*tau)
    frames per stop; over any tau-aligned window each row is an outlier for
    exactly a c0 fraction of frames."""

    s: int
    c0: float
    tau: int
    clamp: bool = False


@dataclass(frozen=True)
class BernoulliSupport:
    rho: float

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho must be in [0, 1]")


SupportModel = Union[MovingObjectSupport, BernoulliSupport]


@dataclass(frozen=True)
class NoiseModel:
    """Dense noise, i.i.d. Gaussian clamped at 3 sigma per entry."""

    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")


def theorem_noise_sigma(zeta: float, r: int, lambda_plus: float, n: int) -> float:
    """Per-entry sigma making E||v_t||^2 = 0.1 zeta^2 r lambda_plus."""
    return zeta * math.sqrt(0.1 * r * lambda_plus / n)


@dataclass(frozen=True)
class DatasetConfig:
    n: int
    t_max: int
    t_train: int
    r: int
    coeff: CoeffModel
    changes: tuple[SubspaceChangeSpec, ...]
    support: SupportModel
    train_support: Optional[SupportModel] = None
    x_min: float = 10.0
    x_max: float = 25.0
    signed_outliers: bool = False
    noise: Optional[NoiseModel] = None
    basis_mode: str = "preallocated_q"  # or "fresh"

    def __post_init__(self):
        if self.n < 2 or self.r < 1 or self.r >= self.n:
            raise ConfigError("need 2 <= n and 1 <= r < n")
        if not 0 < self.t_train < self.t_max:
            raise ConfigError("need 0 < t_train < t_max")
        if self.coeff.r != self.r:
            raise ConfigError("coefficient model rank != r")
        if not 0 < self.x_min <= self.x_max:
            raise ConfigError("need 0 < x_min <= x_max")
        if self.basis_mode not in ("preallocated_q", "fresh"):
            raise ConfigError(f"unknown basis_mode {self.basis_mode!r}")
        times = [c.t_j for c in self.changes]
        if any(t <= self.t_train or t >= self.t_max for t in times):
            raise ConfigError("change times must lie in (t_train, t_max)")
        if sorted(times) != times or len(set(times)) != len(times):
            raise ConfigError("change times must be strictly increasing")
        object.__setattr__(self, "changes", tuple(self.changes))


@dataclass
class GroundTruth:
    """Everything the generator knows: per-segment bases, change times and
    angles, the support schedule, and the exact L + X + V split."""

    bases: list[Basis]
    change_times: list[int]
    thetas: list[float]
    new_directions: list[np.ndarray]
    supports: list[np.ndarray]
    L: np.ndarray
    X: np.ndarray
    V: np.ndarray
    seed: int
    descriptors: dict = field(default_factory=dict)

    def segment_of(self, t: int) -> int:
        seg = 0
        for j, tj in enumerate(self.change_times, start=1):
            if t >= tj:
                seg = j
            else:
                break
        return seg

    def basis_at(self, t: int) -> Basis:
        return self.bases[self.segment_of(t)]

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def t_max(self) -> int:
        return self.L.shape[1]


def perturb_basis(basis: Basis, se: float, rng: np.random.Generator) -> Basis:
    """Rotate the last column out of plane so SE(result, basis) == se."""
    if not 0.0 <= se < 1.0:
        raise ConfigError("se must be in [0, 1)")
    if se == 0.0:
        return basis
    g = rng.standard_normal(basis.n)
    w = project_complement(basis, g)
    nw = np.linalg.norm(w)
    if nw < 1e-12:
        raise DegenerateComplement("no room to perturb")
    w /= nw
    th = math.asin(se)
    cols = basis.cols.copy()
    cols[:, -1] = cols[:, -1] * math.cos(th) + w * math.sin(th)
    return Basis(cols)


def rotate_subspace(
    p_prev: Basis,
    spec: SubspaceChangeSpec,
    rng: np.random.Generator,
    p_new: Optional[np.ndarray] = None,
) -> tuple[Basis, np.ndarray, np.ndarray]:
    """Rotate one direction of p_prev by theta_j toward a complement direction.

    Returns (new basis, the added complement direction, the rotated column).
    The rotated column replaces the changing column in place, so coefficient
    covariances stay aligned with column positions across segments.
    """
    n, r = p_prev.n, p_prev.d
    if p_new is None:
        if n == r:
            raise DegenerateComplement("no orthogonal complement when n == r")
        g = rng.standard_normal(n)
        w = project_complement(p_prev, g)
        nw = np.linalg.norm(w)
        if nw < 1e-10:
            raise DegenerateComplement("drawn direction lies in the subspace")
        p_new = w / nw
    else:
        w = project_complement(p_prev, np.asarray(p_new, dtype=np.float64))
        nw = np.linalg.norm(w)
        if nw < 1e-10:
            raise DegenerateComplement("provided direction lies in the subspace")
        p_new = w / nw
    cols = p_prev.cols
    if spec.u_rotation is not None:
        u = np.asarray(spec.u_rotation, dtype=np.float64)
        if u.shape != (r, r):
            raise ConfigError("u_rotation must be r x r")
        cols = cols @ u
    ch = spec.ch_index if spec.ch_index >= 0 else r + spec.ch_index
    if not 0 <= ch < r:
        raise ConfigError(f"ch_index {spec.ch_index} out of range for r={r}")
    rot = cols[:, ch] * math.cos(spec.theta_j) + p_new * math.sin(spec.theta_j)
    new_cols = cols.copy()
    new_cols[:, ch] = rot
    return Basis(new_cols), p_new, rot


def gen_moving_object_support(
    n: int,
    T: int,
    s: int,
    c0: float,
    tau: int,
    t_start: int = 0,
    clamp: bool = False,
) -> list[np.ndarray]:
    """Deterministic pacing-object schedule; empty before t_start.

    The object occupies s consecutive rows, pauses beta = ceil(c0*tau)
    frames per stop, walks down round(1/c0) stops, then back up; the full
    pattern repeats every 2*round(1/c0)*beta frames. Requires
    s*round(1/c0) <= n unless clamp is set, in which case the walk is
    shortened to floor(n/s) stops.
    """
    if s < 1 or s > n:
        raise BadGeometry(f"object length s={s} must be in [1, n]")
    if not 0 < c0 <= 1:
        raise BadGeometry("need 0 < c0 <= 1")
    if c0 * tau < 1:
        raise BadGeometry("need c0 * tau >= 1")
    beta = math.ceil(c0 * tau)
    positions = max(1, round(1.0 / c0))
    if s * positions > n:
        if not clamp:
            raise BadGeometry(
                f"pacing range s/c0 = {s * positions} exceeds n = {n}; "
                "set clamp=True to shorten the walk"
            )
        positions = max(1, n // s)
    half = positions * beta
    cycle = 2 * half
    supports: list[np.ndarray] = []
    empty = np.array([], dtype=np.intp)
    for t in range(T):
        if t < t_start:
            supports.append(empty)
            continue
        phase = (t - t_start) % cycle
        leg, within = divmod(phase, half)
        idx = within // beta
        pos = idx if leg == 0 else positions - 1 - idx
        supports.append(np.arange(pos * s, (pos + 1) * s, dtype=np.intp))
    return supports


def gen_bernoulli_support(
    n: int, T: int, rho: float, rng: np.random.Generator
) -> list[np.ndarray]:
    """Each (row, frame) is an outlier independently with probability rho."""
    if not 0.0 <= rho <= 1.0:
        raise ConfigError("rho must be in [0, 1]")
    mask = rng.random((n, T)) < rho
    return [np.flatnonzero(mask[:, t]).astype(np.intp) for t in range(T)]


def gamma_row_fraction(
    supports: list[np.ndarray], window: tuple[int, int], n: Optional[int] = None
) -> float:
    """Max over rows of the fraction of frames in [start, stop) where the row
    is in the outlier support."""
    start, stop = window
    if not 0 <= start < stop <= len(supports):
        raise ConfigError(f"window {window} outside schedule of length {len(supports)}")
    chunk = supports[start:stop]
    if n is None:
        n = max((int(s.max()) + 1 for s in chunk if s.size), default=1)
    counts = np.zeros(n, dtype=np.int64)
    for s in chunk:
        counts[s] += 1
    return float(counts.max(initial=0) / (stop - start))


def _support_schedule(cfg: DatasetConfig, rng: np.random.Generator) -> list[np.ndarray]:
    train_model = cfg.train_support if cfg.train_support is not None else cfg.support
    out: list[np.ndarray] = []
    # train block first, then the main block, so the stream order is fixed
    if isinstance(train_model, MovingObjectSupport):
        out.extend(
            gen_moving_object_support(
                cfg.n, cfg.t_train, train_model.s, train_model.c0, train_model.tau,
                t_start=0, clamp=train_model.clamp,
            )
        )
    else:
        out.extend(gen_bernoulli_support(cfg.n, cfg.t_train, train_model.rho, rng))
    rest = cfg.t_max - cfg.t_train
    if isinstance(cfg.support, MovingObjectSupport):
        out.extend(
            gen_moving_object_support(
                cfg.n, rest, cfg.support.s, cfg.support.c0, cfg.support.tau,
                t_start=0, clamp=cfg.support.clamp,
            )
        )
    else:
        out.extend(gen_bernoulli_support(cfg.n, rest, cfg.support.rho, rng))
    return out


def gen_dataset(cfg: DatasetConfig, seed: int) -> tuple[np.ndarray, GroundTruth]:
    """Build one synthetic stream. Fixed draw order: bases, new directions,
    coefficients, support schedule (Bernoulli only), outlier magnitudes
    frame by frame, then noise."""
    rng = np.random.default_rng(seed)
    n, T, r = cfg.n, cfg.t_max, cfg.r
    J = len(cfg.changes)

    if cfg.basis_mode == "preallocated_q":
        q = orthonormalize(rng.standard_normal((n, r + J)))
        p0 = Basis(q.cols[:, :r])
        pre_new = [q.cols[:, r + j] for j in range(J)]
    else:
        p0 = orthonormalize(rng.standard_normal((n, r)))
        pre_new = [None] * J

    bases = [p0]
    thetas = []
    new_dirs = []
    for j, spec in enumerate(cfg.changes):
        pj, p_new, _ = rotate_subspace(bases[-1], spec, rng, p_new=pre_new[j])
        bases.append(pj)
        thetas.append(spec.theta_j)
        new_dirs.append(p_new)

    half_width = np.sqrt(3.0 * cfg.coeff.lambdas)
    A = rng.uniform(-1.0, 1.0, size=(r, T)) * half_width[:, None]

    supports = _support_schedule(cfg, rng)

    X = np.zeros((n, T))
    for t in range(T):
        supp = supports[t]
        if supp.size == 0:
            continue
        vals = rng.uniform(cfg.x_min, cfg.x_max, size=supp.size)
        if cfg.signed_outliers:
            vals *= rng.choice(np.array([-1.0, 1.0]), size=supp.size)
        X[supp, t] = vals

    if cfg.noise is not None and cfg.noise.sigma > 0:
        sig = cfg.noise.sigma
        V = np.clip(rng.standard_normal((n, T)) * sig, -3 * sig, 3 * sig)
    else:
        V = np.zeros((n, T))

    L = np.empty((n, T))
    change_times = [c.t_j for c in cfg.changes]
    bounds = [0] + change_times + [T]
    for seg in range(len(bases)):
        lo, hi = bounds[seg], bounds[seg + 1]
        L[:, lo:hi] = bases[seg].cols @ A[:, lo:hi]

    Y = L + X + V
    truth = GroundTruth(
        bases=bases,
        change_times=change_times,
        thetas=thetas,
        new_directions=new_dirs,
        supports=supports,
        L=L,
        X=X,
        V=V,
        seed=seed,
        descriptors={
            "n": n, "t_max": T, "t_train": cfg.t_train, "r": r,
            "x_min": cfg.x_min, "x_max": cfg.x_max,
            "basis_mode": cfg.basis_mode,
        },
    )
    return Y, truth
