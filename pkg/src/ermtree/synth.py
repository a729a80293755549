"""Synthetic worlds: PSHAB-style regression targets, margin-controlled
hypercube classification distributions, marginals and noise models.

All generators are pure functions of their parameters and an integer seed;
randomness comes from :func:`ermtree.rng.stream`.
"""

from __future__ import annotations

import functools
import itertools
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn

from .core import Dataset, Leaf, Split, TreeModel
from .errors import ConfigError, GuardRailError, InfeasibleSpecError
from .rng import stream

# ---------------------------------------------------------------------------
# bump profile


def bump_profile(t) -> np.ndarray:
    """Non-increasing C^2 profile: 1 on ``[0, 1/4]``, 0 on ``[1/2, inf)``.

    The transition is a quintic smoothstep, whose first and second
    derivatives vanish at both ends.
    """
    t = np.asarray(t, dtype=float)
    z = np.clip((t - 0.25) * 4.0, 0.0, 1.0)
    return 1.0 - z * z * z * (z * (6.0 * z - 15.0) + 10.0)


@functools.lru_cache(maxsize=None)
def profile_lipschitz(grid: int = 1 << 20) -> float:
    """Lipschitz constant of :func:`bump_profile`, measured on a dense grid."""
    t = np.linspace(0.0, 0.75, grid + 1)
    return float(np.max(np.abs(np.diff(bump_profile(t))) / np.diff(t)))


@dataclass(frozen=True)
class BumpProfile:
    lip_u: float

    @classmethod
    def measured(cls) -> "BumpProfile":
        return cls(profile_lipschitz())

    def __call__(self, t):
        return bump_profile(t)

    @property
    def calibration(self) -> float:
        """Divisor that keeps a bump's anisotropic Hölder ratio within its amplitude budget.

        For exponents in ``(0, 1]`` the ratio of ``u(|z|)`` is at most
        ``min(1, lip |dz|) / min(1, |dz|) <= lip``, and the bound is attained
        for ``alpha = 1`` along a coordinate axis.
        """
        return max(1.0, self.lip_u)


def harmonic_mean(alpha: Sequence[float], support: Sequence[int]) -> float:
    a = np.asarray(alpha, dtype=float)[list(support)]
    if a.size == 0 or np.any(a <= 0):
        raise ConfigError("harmonic mean needs a non-empty support with positive exponents")
    return float(a.size / np.sum(1.0 / a))


# ---------------------------------------------------------------------------
# marginals


@dataclass(frozen=True)
class BoxMarginal:
    """Piecewise-uniform density over disjoint boxes with given masses."""

    lower: tuple
    upper: tuple
    masses: tuple

    @classmethod
    def uniform(cls, d: int) -> "BoxMarginal":
        return cls(((0.0,) * d,), ((1.0,) * d,), (1.0,))

    @property
    def d(self) -> int:
        return len(self.lower[0])

    def volumes(self) -> np.ndarray:
        return np.array([np.prod(np.subtract(h, l)) for l, h in zip(self.lower, self.upper)])

    def densities(self) -> np.ndarray:
        return np.asarray(self.masses) / self.volumes()

    def density_max(self) -> float:
        return float(self.densities().max())

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        if len(self.masses) == 1:
            u = rng.random((n, self.d))
            return lo[0] + u * (hi[0] - lo[0])
        comp = rng.choice(len(self.masses), size=n, p=np.asarray(self.masses) / np.sum(self.masses))
        u = rng.random((n, self.d))
        return lo[comp] + u * (hi[comp] - lo[comp])

    def stratified(self, n: int) -> np.ndarray:
        """Deterministic midpoint grid, ``~n`` points allocated by mass."""
        out = []
        for l, h, m in zip(self.lower, self.upper, self.masses):
            k = max(1, int(round((n * m) ** (1.0 / self.d))))
            axes = [lj + (np.arange(k) + 0.5) / k * (hj - lj) for lj, hj in zip(l, h)]
            mesh = np.meshgrid(*axes, indexing="ij")
            out.append(np.stack([g.ravel() for g in mesh], axis=1))
        return np.concatenate(out, axis=0)

    def to_dict(self) -> dict:
        return {"kind": "boxes", "lower": [list(l) for l in self.lower],
                "upper": [list(h) for h in self.upper], "masses": list(self.masses)}

    @classmethod
    def from_dict(cls, doc: dict) -> "BoxMarginal":
        return cls(tuple(tuple(map(float, l)) for l in doc["lower"]),
                   tuple(tuple(map(float, h)) for h in doc["upper"]),
                   tuple(map(float, doc["masses"])))


# ---------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseModel:
    """Additive, homoskedastic, mean-zero noise.

    ``gaussian``: ``scale * Z``.  ``student_t``: ``scale * T_m`` rescaled to
    unit variance before scaling; it is built as ``Z * sqrt((m-2)/chi2_m)``
    from the same normal draw a Gaussian model would use, so the two are
    coupled when drawn from the same stream.  ``orlicz``: symmetric with
    ``P(|xi| > t) = exp(-(t/scale)^beta)``, a psi_beta tail.
    """

    kind: str = "none"
    scale: float = 1.0
    m: Optional[float] = None
    beta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "student_t", "orlicz"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.scale < 0:
            raise ConfigError("noise scale must be non-negative")
        if self.kind == "student_t" and not (self.m is not None and self.m > 2):
            raise ConfigError("student_t noise needs m > 2 (finite variance)")
        if self.kind == "orlicz" and not (self.beta is not None and self.beta >= 1):
            raise ConfigError("orlicz noise needs beta >= 1")

    @classmethod
    def gaussian(cls, K: float) -> "NoiseModel":
        return cls("gaussian", K)

    @classmethod
    def student_t(cls, m: float, scale: float = 1.0) -> "NoiseModel":
        return cls("student_t", scale, m=m)

    @classmethod
    def orlicz(cls, beta: float, scale: float = 1.0) -> "NoiseModel":
        return cls("orlicz", scale, beta=beta)

    @property
    def variance(self) -> float:
        if self.kind == "none":
            return 0.0
        if self.kind == "orlicz":
            return self.scale**2 * math.gamma(1.0 + 2.0 / self.beta)
        return self.scale**2

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "none":
            return np.zeros(n)
        if self.kind == "orlicz":
            mag = rng.exponential(size=n) ** (1.0 / self.beta)
            sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
            return self.scale * sign * mag
        z = rng.standard_normal(n)
        if self.kind == "gaussian":
            return self.scale * z
        chi = rng.chisquare(self.m, size=n)
        return self.scale * z * np.sqrt((self.m - 2.0) / chi)

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "scale": self.scale}
        if self.m is not None:
            doc["m"] = self.m
        if self.beta is not None:
            doc["beta"] = self.beta
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseModel":
        return cls(doc.get("kind", "none"), float(doc.get("scale", 1.0)), doc.get("m"), doc.get("beta"))


# ---------------------------------------------------------------------------
# tree-based macro partitions


def random_macro_partition(rng: np.random.Generator, d: int, B: int) -> TreeModel:
    """``B - 1`` random midpoint splits of randomly chosen cells."""
    cells = [(np.zeros(d), np.ones(d), [])]  # (lo, hi, path of (dim, tau, side))
    splits = []
    for _ in range(B - 1):
        k = int(rng.integers(len(cells)))
        lo, hi, path = cells.pop(k)
        j = int(rng.integers(d))
        tau = float(0.5 * (lo[j] + hi[j]))
        lhi, rlo = hi.copy(), lo.copy()
        lhi[j] = tau
        rlo[j] = tau
        splits.append((tuple(path), j, tau))
        cells[k:k] = [(lo, lhi, path + [(j, tau, 0)]), (rlo, hi, path + [(j, tau, 1)])]
    return _tree_from_splits(splits, d)


def balanced_macro_partition(d: int, B: int) -> TreeModel:
    """Equal-volume partition: halve the longest side, smallest index first."""
    splits = []

    def rec(lo, hi, b, path):
        if b == 1:
            return
        j = int(np.argmax(hi - lo))
        bl = b // 2
        tau = float(lo[j] + (hi[j] - lo[j]) * bl / b)
        splits.append((tuple(path), j, tau))
        lhi, rlo = hi.copy(), lo.copy()
        lhi[j] = tau
        rlo[j] = tau
        rec(lo, lhi, bl, path + [(j, tau, 0)])
        rec(rlo, hi, b - bl, path + [(j, tau, 1)])

    rec(np.zeros(d), np.ones(d), B, [])
    return _tree_from_splits(splits, d)


def _tree_from_splits(splits, d):
    table = {path: (j, tau) for path, j, tau in splits}
    counter = itertools.count()

    def build(path):
        if path not in table:
            return Leaf(float(next(counter)))
        j, tau = table[path]
        return Split(j, tau, build(path + ((j, tau, 0),)), build(path + ((j, tau, 1),)))

    return TreeModel(build(()), d)


def piece_boxes(partition: TreeModel) -> list[tuple[np.ndarray, np.ndarray]]:
    """Boxes of a macro partition, indexed by the piece number stored in each leaf."""
    boxes = sorted(partition.boxes(), key=lambda b: b[2])
    return [(lo, hi) for lo, hi, _ in boxes]


# ---------------------------------------------------------------------------
# PSHAB targets


@dataclass(frozen=True)
class PshabPiece:
    """One piece ``G_b`` with its sparse anisotropic bump layout."""

    lower: tuple
    upper: tuple
    support: tuple
    alpha: tuple
    Lambda: float
    resolution: int
    base_scale: float
    amplitude: float
    signs: tuple

    @property
    def abar(self) -> float:
        return harmonic_mean(self.alpha, self.support)

    @property
    def radii(self) -> np.ndarray:
        """Per-support-coordinate bump scale ``rho^(abar / alpha_j)``."""
        a = np.asarray(self.alpha)[list(self.support)]
        return self.base_scale ** (self.abar / a)

    def centers_axes(self) -> list[np.ndarray]:
        r = self.resolution
        return [self.lower[j] + (2 * np.arange(r) + 1) / (2 * r) * (self.upper[j] - self.lower[j])
                for j in self.support]

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "support": list(self.support),
                "alpha": list(self.alpha), "Lambda": self.Lambda, "resolution": self.resolution,
                "base_scale": self.base_scale, "amplitude": self.amplitude, "signs": list(self.signs)}

    @classmethod
    def from_dict(cls, doc: dict) -> "PshabPiece":
        return cls(tuple(map(float, doc["lower"])), tuple(map(float, doc["upper"])),
                   tuple(map(int, doc["support"])), tuple(map(float, doc["alpha"])),
                   float(doc["Lambda"]), int(doc["resolution"]), float(doc["base_scale"]),
                   float(doc["amplitude"]), tuple(map(int, doc["signs"])))


@dataclass(frozen=True)
class PshabSpec:
    d: int
    partition: TreeModel
    pieces: tuple
    calibration: float
    seed: Optional[int] = None

    @property
    def B(self) -> int:
        return len(self.pieces)

    @property
    def sup_norm(self) -> float:
        return max((p.amplitude for p in self.pieces if p.signs), default=0.0)

    def piece_of(self, X) -> np.ndarray:
        return self.partition.predict_many(X).astype(np.int64)

    def __call__(self, X) -> np.ndarray:
        return eval_pshab(self, X)

    def to_dict(self) -> dict:
        return {"kind": "pshab", "d": self.d, "seed": self.seed, "calibration": self.calibration,
                "partition": self.partition.to_dict(), "pieces": [p.to_dict() for p in self.pieces]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "PshabSpec":
        return cls(int(doc["d"]), TreeModel.from_dict(doc["partition"]),
                   tuple(PshabPiece.from_dict(p) for p in doc["pieces"]),
                   float(doc["calibration"]), doc.get("seed"))


def _alpha_for_target(raw: np.ndarray, target: float, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    # harmonic mean pinned to the target: keep the draws' spread in reciprocal
    # space, shrunk just enough to stay inside [lo, hi]
    inv = 1.0 / raw
    dev = inv - inv.mean()
    base = 1.0 / target
    kappa = 1.0
    for dj in dev:
        if dj > 0 and lo > 0:
            kappa = min(kappa, (1.0 / lo - base) / dj)
        elif dj < 0:
            kappa = min(kappa, (1.0 / hi - base) / dj)
    if kappa < 0:
        raise InfeasibleSpecError(f"harmonic-mean smoothness {target} outside [{lo}, {hi}]")
    return 1.0 / (base + kappa * dev)


def make_pshab(seed: int, d: int, B: int = 1, s: int = 1, alpha_range=(1.0, 1.0), lambda_range=(1.0, 1.0),
               bumps_per_piece: int = 1, abar: Optional[float] = None, base_scale: Optional[float] = None,
               partition: Optional[TreeModel] = None) -> PshabSpec:
    """Random piecewise sparse anisotropic target.

    Each piece gets ``bumps_per_piece`` grid points per active coordinate
    (``bumps_per_piece ** s`` bumps), random signs, radii
    ``base_scale ** (abar / alpha_j)`` and amplitude
    ``Lambda * base_scale ** abar / calibration``.  The default
    ``base_scale`` is the largest one keeping bump supports disjoint.
    """
    if not 1 <= s <= d:
        raise ConfigError(f"need 1 <= s <= d, got s={s}, d={d}")
    if B < 1 or bumps_per_piece < 0:
        raise ConfigError("need B >= 1 and bumps_per_piece >= 0")
    lo_a, hi_a = map(float, alpha_range)
    if not 0 < lo_a <= hi_a <= 1:
        raise ConfigError(f"alpha_range must satisfy 0 < lo <= hi <= 1, got {alpha_range}")
    if abar is not None and not lo_a <= abar <= hi_a:
        raise InfeasibleSpecError(f"requested abar={abar} outside alpha_range {alpha_range}")
    lo_l, hi_l = map(float, lambda_range)
    if not 0 < lo_l <= hi_l:
        raise ConfigError(f"lambda_range must be positive, got {lambda_range}")
    rng = stream(seed, "pshab")
    if partition is None:
        partition = random_macro_partition(rng, d, B)
    elif partition.n_leaves != B:
        raise ConfigError("partition leaf count differs from B")
    calibration = BumpProfile.measured().calibration
    pieces = []
    for lo, hi in piece_boxes(partition):
        support = tuple(sorted(rng.choice(d, size=s, replace=False).tolist()))
        raw = rng.uniform(lo_a, hi_a, size=s)
        act = raw if abar is None else _alpha_for_target(raw, abar, lo_a, hi_a)
        alpha = np.ones(d)
        alpha[list(support)] = act
        Lam = float(rng.uniform(lo_l, hi_l))
        hbar = harmonic_mean(alpha, support)
        r = int(bumps_per_piece)
        widths = (hi - lo)[list(support)]
        if r == 0:
            rho = 0.0 if base_scale is None else float(base_scale)
        else:
            rho_max = float(np.min((widths / r) ** (act / hbar)))
            rho = rho_max if base_scale is None else float(base_scale)
            if not 0 < rho <= rho_max * (1 + 1e-12):
                raise InfeasibleSpecError(f"base_scale {rho} exceeds the disjoint-support maximum {rho_max}")
        amp = Lam * rho**hbar / calibration if r else 0.0
        signs = tuple(int(v) for v in np.where(rng.random(r**s) < 0.5, -1, 1)) if r else ()
        pieces.append(PshabPiece(tuple(lo.tolist()), tuple(hi.tolist()), support, tuple(alpha.tolist()),
                                 Lam, r, rho, float(amp), signs))
    return PshabSpec(d, partition, tuple(pieces), calibration, seed)


def eval_pshab(spec: PshabSpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if spec.d == 1 else X[None, :]
    out = np.zeros(X.shape[0])
    piece_idx = spec.piece_of(X)
    for b, piece in enumerate(spec.pieces):
        rows = np.flatnonzero(piece_idx == b)
        if rows.size == 0 or piece.resolution == 0:
            continue
        r = piece.resolution
        sup = list(piece.support)
        lo = np.asarray(piece.lower)[sup]
        width = np.asarray(piece.upper)[sup] - lo
        xs = X[np.ix_(rows, sup)]
        cell = np.clip(np.floor((xs - lo) / width * r), 0, r - 1).astype(np.int64)
        centre = lo + (2 * cell + 1) / (2 * r) * width
        z = (xs - centre) / piece.radii
        flat = np.ravel_multi_index(tuple(cell.T), (r,) * len(sup))
        sign = np.asarray(piece.signs, dtype=float)[flat]
        out[rows] = piece.amplitude * sign * bump_profile(np.sqrt(np.sum(z * z, axis=1)))
    return out


def holder_seminorm_estimate(f, lower, upper, support, alpha, n_pairs: int, seed: int) -> float:
    """Largest ``|f(x1) - f(x2)| / sum_{j in S} |x1_j - x2_j|^alpha_j`` over sampled pairs.

    Pairs are drawn in the box ``[lower, upper]``: ``x1`` uniform, ``x2`` a
    perturbation of ``x1`` at a log-uniform scale between ``1e-4`` and 1
    times the box width, clipped back into the box (excluding interior lower
    faces, which belong to the neighbouring cell).  Prefixes of the sample
    are nested, so the estimate is non-decreasing in ``n_pairs``.
    """
    if n_pairs < 1:
        raise ConfigError("n_pairs must be >= 1")
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0) or np.any(alpha > 1):
        raise ConfigError("Hölder exponents must lie in (0, 1]")
    lo, hi = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    d = lo.size
    rng = stream(seed, "holder")
    x1 = lo + rng.random((n_pairs, d)) * (hi - lo)
    scale = np.exp(rng.uniform(np.log(1e-4), 0.0, size=(n_pairs, 1))) * (hi - lo)
    step = scale * rng.uniform(-1.0, 1.0, size=(n_pairs, d))
    # cells are open on their interior lower faces (left children take x <= tau)
    x2 = np.clip(x1 + step, np.where(lo > 0, np.nextafter(lo, np.inf), lo), hi)
    sup = list(support)
    denom = np.sum(np.abs(x1[:, sup] - x2[:, sup]) ** alpha[sup], axis=1)
    num = np.abs(np.asarray(f(x1)) - np.asarray(f(x2)))
    keep = denom > 0
    if not np.any(keep):
        return 0.0
    return float(np.max(num[keep] / denom[keep]))


@dataclass(frozen=True)
class LinearRamp:
    """``f(x) = slope * x_dim``, the simplest Lipschitz truth."""

    d: int = 1
    dim: int = 0
    slope: float = 1.0

    @property
    def sup_norm(self) -> float:
        return abs(self.slope)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None] if self.d == 1 else X[None, :]
        return self.slope * X[:, self.dim]

    def to_dict(self) -> dict:
        return {"kind": "ramp", "d": self.d, "dim": self.dim, "slope": self.slope}


# ---------------------------------------------------------------------------
# hypercube classification worlds


def _ball_volume(s: int, radius: float) -> float:
    return math.pi ** (s / 2) / gamma_fn(s / 2 + 1) * radius**s


@dataclass(frozen=True)
class HypercubeSpec:
    """Signed-bump classification family on a tree-based block partition.

    Marginal: mass ``w`` uniformly on each of the ``B*m`` mapped balls of
    rescaled radius 1/4, mass ``1 - B*m*w`` uniformly on the residual box
    ``A0``.  ``eta = (1 + delta) / 2`` with ``delta = sigma * psi`` on the
    selected grid regions and 0 elsewhere.
    """

    d: int
    B: int
    s: int
    r: int
    m: int
    w: float
    abar: float
    Lambda_inf: float
    C_phi: float
    rho: float
    supports: tuple
    selected: tuple  # flat grid indices of the m selected regions (same in every block)
    sigma: tuple  # +-1, length B*m, block-major
    partition: TreeModel
    residual_lower: Optional[tuple]
    residual_upper: Optional[tuple]
    seed: Optional[int] = None

    # derived quantities -------------------------------------------------
    @property
    def blocks(self):
        return piece_boxes(self.partition)

    @property
    def ell(self) -> float:
        return float(min(np.min(hi - lo) for lo, hi in self.blocks))

    @property
    def b_prime(self) -> float:
        """Bump height on the support: ``C_phi * Lambda_inf * (r / ell) ** -abar``."""
        return self.C_phi * self.Lambda_inf * (self.r / self.ell) ** (-self.abar)

    @property
    def b(self) -> float:
        # (1 - E[sqrt(1 - psi^2)]^2)^(1/2) on a region; psi is constant on the ball
        psi = self.b_prime
        return math.sqrt(1.0 - math.sqrt(1.0 - psi * psi) ** 2)

    @property
    def ball_mass_total(self) -> float:
        return self.B * self.m * self.w

    @property
    def residual_volume(self) -> float:
        if self.residual_lower is None:
            return 0.0
        return float(np.prod(np.subtract(self.residual_upper, self.residual_lower)))

    def ball_volume(self, b: int) -> float:
        lo, hi = self.blocks[b]
        return float(np.prod(hi - lo)) * self.r ** (-self.s) * _ball_volume(self.s, 0.25)

    def density_values(self) -> dict:
        """Constant density levels of the marginal, keyed by region type."""
        vals = {f"ball_block_{b}": self.w / self.ball_volume(b) for b in range(self.B)}
        if self.residual_lower is not None:
            vals["residual"] = (1.0 - self.ball_mass_total) / self.residual_volume
        return vals

    def density_max(self) -> float:
        return max(self.density_values().values())

    def margin_closed_form(self, t) -> np.ndarray:
        """``P(0 < |eta - 1/2| <= t)``: ``B m w`` once ``t`` reaches the half-height ``b'/2``."""
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0.5 * self.b_prime, self.ball_mass_total, 0.0)

    # evaluation ---------------------------------------------------------
    def _locate(self, X):
        """Block index, grid cell multi-index, rescaled offset from the cell centre."""
        X = np.asarray(X, dtype=float)
        blk = self.partition.predict_many(X).astype(np.int64)
        cells = np.zeros((X.shape[0], self.s), dtype=np.int64)
        z = np.zeros((X.shape[0], self.s))
        for b, (lo, hi) in enumerate(self.blocks):
            rows = np.flatnonzero(blk == b)
            if rows.size == 0:
                continue
            sup = list(self.supports[b])
            u = (X[np.ix_(rows, sup)] - lo[sup]) / (hi - lo)[sup] * self.r
            c = np.clip(np.floor(u), 0, self.r - 1).astype(np.int64)
            cells[rows] = c
            z[rows] = u - (c + 0.5)
        return blk, cells, z

    def delta(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None] if self.d == 1 else X[None, :]
        blk, cells, z = self._locate(X)
        flat = np.ravel_multi_index(tuple(cells.T), (self.r,) * self.s)
        lookup = {g: k for k, g in enumerate(self.selected)}
        slot = np.array([lookup.get(int(g), -1) for g in flat], dtype=np.int64)
        psi = self.b_prime * bump_profile(np.sqrt(np.sum(z * z, axis=1)))
        sig = np.asarray(self.sigma, dtype=float)
        out = np.zeros(X.shape[0])
        on = slot >= 0
        out[on] = sig[blk[on] * self.m + slot[on]] * psi[on]
        return out

    def eta(self, X) -> np.ndarray:
        return 0.5 * (1.0 + self.delta(X))

    def margin(self, X) -> np.ndarray:
        """``|eta - 1/2|`` computed as ``|delta| / 2`` without cancellation."""
        return 0.5 * np.abs(self.delta(X))

    def __call__(self, X) -> np.ndarray:
        return self.eta(X)

    def sample_x(self, n: int, rng: np.random.Generator, max_rounds: int = 200) -> np.ndarray:
        masses = np.full(self.B * self.m, self.w)
        resid = 1.0 - self.ball_mass_total
        probs = np.r_[masses, max(resid, 0.0)]
        comp = rng.choice(probs.size, size=n, p=probs / probs.sum())
        X = np.empty((n, self.d))
        blocks = self.blocks
        nb = self.B * self.m
        in_ball = np.flatnonzero(comp < nb)
        # rejection sampling of the rescaled radius-1/4 ball
        z = np.empty((in_ball.size, self.s))
        todo = np.arange(in_ball.size)
        for _ in range(max_rounds):
            if todo.size == 0:
                break
            cand = rng.uniform(-0.25, 0.25, size=(todo.size, self.s))
            ok = np.sum(cand * cand, axis=1) <= 0.0625
            z[todo[ok]] = cand[ok]
            todo = todo[~ok]
        if todo.size:
            raise GuardRailError("ball rejection sampler exceeded its iteration cap")
        free = rng.random((in_ball.size, self.d))
        for k, i in enumerate(in_ball):
            b, slot = divmod(int(comp[i]), self.m)
            lo, hi = blocks[b]
            sup = list(self.supports[b])
            x = lo + free[k] * (hi - lo)
            cell = np.array(np.unravel_index(self.selected[slot], (self.r,) * self.s))
            x[sup] = lo[sup] + (cell + 0.5 + z[k]) / self.r * (hi - lo)[sup]
            X[i] = x
        rest = np.flatnonzero(comp == nb)
        if rest.size:
            lo, hi = np.asarray(self.residual_lower), np.asarray(self.residual_upper)
            X[rest] = lo + rng.random((rest.size, self.d)) * (hi - lo)
        return np.clip(X, 0.0, 1.0)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_x(n, rng)

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "kind": "hypercube", "d": self.d, "B": self.B, "s": self.s, "r": self.r, "m": self.m,
            "w": self.w, "abar": self.abar, "Lambda_inf": self.Lambda_inf, "C_phi": self.C_phi,
            "rho": self.rho, "supports": [list(s) for s in self.supports], "selected": list(self.selected),
            "sigma": list(self.sigma), "partition": self.partition.to_dict(),
            "residual_lower": None if self.residual_lower is None else list(self.residual_lower),
            "residual_upper": None if self.residual_upper is None else list(self.residual_upper),
            "seed": self.seed, "b": self.b, "b_prime": self.b_prime,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "HypercubeSpec":
        rl, ru = doc.get("residual_lower"), doc.get("residual_upper")
        return cls(int(doc["d"]), int(doc["B"]), int(doc["s"]), int(doc["r"]), int(doc["m"]), float(doc["w"]),
                   float(doc["abar"]), float(doc["Lambda_inf"]), float(doc["C_phi"]), float(doc["rho"]),
                   tuple(tuple(map(int, s)) for s in doc["supports"]), tuple(map(int, doc["selected"])),
                   tuple(map(int, doc["sigma"])), TreeModel.from_dict(doc["partition"]),
                   None if rl is None else tuple(map(float, rl)), None if ru is None else tuple(map(float, ru)),
                   doc.get("seed"))


def _largest_free_box(r: int, s: int, selected: set):
    """Largest box of unselected grid cells, as (lower index, upper index exclusive)."""
    best, best_vol = None, 0
    ranges = [(a, b) for a in range(r) for b in range(a + 1, r + 1)]
    for combo in itertools.product(ranges, repeat=s):
        vol = int(np.prod([b - a for a, b in combo]))
        if vol <= best_vol:
            continue
        cells = itertools.product(*[range(a, b) for a, b in combo])
        if all(int(np.ravel_multi_index(c, (r,) * s)) not in selected for c in cells):
            best, best_vol = combo, vol
    return best


def make_hypercube(seed: int, d: int, B: int = 1, s: int = 1, rho: float = 0.0, r: int = 2,
                   Lambda_inf: float = 1.0, abar: float = 1.0, C_phi: float = 1.0, C1: float = 1.0,
                   m: Optional[int] = None, w: Optional[float] = None,
                   c_max: Optional[float] = None) -> HypercubeSpec:
    """Hypercube family member with a uniformly drawn sign vector.

    ``m`` defaults to ``ceil(r^s / 2)`` regions per block (the first ``m`` in
    row-major grid order).  The ball mass ``w`` defaults to the largest value
    allowed by both ``w <= 1/(B m)`` and the margin constraint
    ``B m w <= C1 * Lambda_inf^rho * (r B^(1/d))^(-rho abar)``.  With
    ``c_max`` set, a marginal density exceeding it is rejected.
    """
    if not 1 <= s <= d:
        raise ConfigError(f"need 1 <= s <= d, got s={s}, d={d}")
    if r < 1 or B < 1:
        raise ConfigError("need r >= 1 and B >= 1")
    if rho < 0:
        raise ConfigError("rho must be >= 0")
    if not 0 < abar <= 1:
        raise ConfigError("abar must lie in (0, 1]")
    grid = r**s
    m = int(math.ceil(grid / 2)) if m is None else int(m)
    if not 1 <= m <= grid:
        raise ConfigError(f"need 1 <= m <= r^s = {grid}, got m={m}")
    rng = stream(seed, "hypercube")
    partition = balanced_macro_partition(d, B)
    supports = tuple(tuple(sorted(rng.choice(d, size=s, replace=False).tolist())) for _ in range(B))
    selected = tuple(range(m))
    sigma = tuple(int(v) for v in np.where(rng.random(B * m) < 0.5, -1, 1))
    w_cap = 1.0 / (B * m)
    w_margin = C1 * Lambda_inf**rho * (r * B ** (1.0 / d)) ** (-rho * abar) / (B * m)
    w = min(w_cap, w_margin) if w is None else float(w)
    if not 0 < w <= w_cap * (1 + 1e-12):
        raise InfeasibleSpecError(f"ball mass w={w} must lie in (0, 1/(B m)]")
    free = _largest_free_box(r, s, set(selected))
    blocks = piece_boxes(partition)
    if free is None:
        if B * m * w < 1 - 1e-12:
            raise InfeasibleSpecError("no residual region is left for the mass 1 - B m w")
        res_lo = res_hi = None
    else:
        # place the residual box in the largest block
        b = int(np.argmax([np.prod(hi - lo) for lo, hi in blocks]))
        lo, hi = blocks[b]
        res_lo, res_hi = lo.copy(), hi.copy()
        sup = list(supports[b])
        width = (hi - lo)[sup]
        res_lo[sup] = lo[sup] + np.array([a for a, _ in free]) / r * width
        res_hi[sup] = lo[sup] + np.array([c for _, c in free]) / r * width
        res_lo, res_hi = tuple(res_lo.tolist()), tuple(res_hi.tolist())
    spec = HypercubeSpec(d, B, s, r, m, float(w), float(abar), float(Lambda_inf), float(C_phi), float(rho),
                         supports, selected, sigma, partition, res_lo, res_hi, seed)
    if spec.b_prime > 1.0:
        raise InfeasibleSpecError(
            f"bump height b'={spec.b_prime:.4g} > 1 puts eta outside [0, 1]; lower C_phi * Lambda_inf or raise r")
    if c_max is not None and spec.density_max() > c_max:
        raise InfeasibleSpecError(f"marginal density {spec.density_max():.4g} exceeds c_max={c_max}")
    return spec


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class EtaOracle:
    """Regression function ``eta(x) = 1/2 + f(x)/2`` built from a bounded target ``f``."""

    target: object

    def __call__(self, X) -> np.ndarray:
        return 0.5 * (1.0 + np.asarray(self.target(X)))

    def margin(self, X) -> np.ndarray:
        return 0.5 * np.abs(np.asarray(self.target(X)))


def sample_regression(spec, noise: NoiseModel, n: int, seed: int, marginal: Optional[BoxMarginal] = None):
    """Draw ``Y = f(X) + xi``; returns the dataset and the truth oracle ``f``."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    marginal = BoxMarginal.uniform(spec.d) if marginal is None else marginal
    X = marginal.sample(n, stream(seed, "x"))
    f = np.asarray(spec(X))
    y = f + noise.sample(n, stream(seed, "noise"))
    return Dataset(X, y), spec


def sample_hypercube(spec: HypercubeSpec, n: int, seed: int):
    """Draw ``X`` from the hypercube marginal and ``Y ~ Bernoulli(eta(X))``."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    X = spec.sample_x(n, stream(seed, "x"))
    y = (stream(seed, "labels").random(n) < spec.eta(X)).astype(float)
    return Dataset(X, y), spec


def sample_classification(eta, marginal, n: int, seed: int):
    """Labels ``Y ~ Bernoulli(eta(X))`` for any eta oracle and marginal."""
    X = marginal.sample(n, stream(seed, "x"))
    y = (stream(seed, "labels").random(n) < np.asarray(eta(X))).astype(float)
    return Dataset(X, y), eta


def spec_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "pshab":
        return PshabSpec.from_dict(doc)
    if kind == "hypercube":
        return HypercubeSpec.from_dict(doc)
    if kind == "ramp":
        return LinearRamp(int(doc.get("d", 1)), int(doc.get("dim", 0)), float(doc.get("slope", 1.0)))
    raise ConfigError(f"unknown spec kind {kind!r}")
