"""Importance-weighted low-rank factorization of dense layers, plus baselines.

A dense layer ``y = W x + b`` (``W`` is ``d x n``) is replaced by
``y_hat = W2 (W1 x) + b'`` with ``W1`` of shape ``r x n`` and ``W2`` of shape
``d x r``. The IMPACT factorization picks the subspace from the top
eigenvectors of ``Cov(y) * (a a^T)``, where the per-dimension coefficient ``a``
blends mean squared loss gradients with a uniform weight through ``eta``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DataError,
    DegenerateCovarianceError,
    DegenerateImportanceError,
    DimensionError,
    NoBenefitError,
    RankError,
)
from .linalg import as_matrix, as_vector, hadamard, hdivide, outer, sym_eig, truncated_svd
from .profiler import ProfiledLayer

METHODS = ("impact", "svd", "fwsvd", "afm")
FWSVD_EPS = 1e-12


@dataclass(frozen=True)
class ImpactConfig:
    eta: float = 0.5
    keep_ratio: float = 90.0
    explicit_rank: int | None = None
    a_floor: float = 1e-6
    replace_only_if_smaller: bool = True

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigurationError(f"eta must lie in [0, 1], got {self.eta}")
        if not 0.0 < self.keep_ratio <= 100.0:
            raise ConfigurationError(f"keep_ratio must lie in (0, 100], got {self.keep_ratio}")
        if self.explicit_rank is not None and self.explicit_rank < 1:
            raise ConfigurationError(f"explicit_rank must be >= 1, got {self.explicit_rank}")
        if not self.a_floor > 0.0:
            raise ConfigurationError("a_floor must be positive")

    def snapshot(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class FactoredLayer:
    """Two stacked linear maps ``W2 (W1 x) + b_prime``.

    ``activation`` is the nonlinearity applied after the layer when it sits in
    a :class:`~impact.toynet.ToyModel`; the compressor always emits
    ``"identity"`` and :func:`~impact.toynet.swap_layer` fills it in.
    """

    W1: np.ndarray
    W2: np.ndarray
    b_prime: np.ndarray
    provenance: dict = field(default_factory=dict)
    activation: str = "identity"
    # audit data from the IMPACT path; not part of the layer's identity
    selection: "BasisSelection | None" = field(default=None, repr=False, compare=False)
    coeff: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.W1 = as_matrix(self.W1, "W1")
        self.W2 = as_matrix(self.W2, "W2")
        self.b_prime = as_vector(self.b_prime, "b_prime")
        if self.W2.shape[1] != self.W1.shape[0] or self.b_prime.shape[0] != self.W2.shape[0]:
            raise DimensionError(
                f"inconsistent factors: W1 {self.W1.shape}, W2 {self.W2.shape}, "
                f"b' {self.b_prime.shape}"
            )

    @property
    def r(self) -> int:
        return self.W1.shape[0]

    @property
    def d_in(self) -> int:
        return self.W1.shape[1]

    @property
    def d_out(self) -> int:
        return self.W2.shape[0]

    @property
    def param_count(self) -> int:
        return self.W1.size + self.W2.size + self.b_prime.size

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Apply to a vector or to a batch stored row-wise."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return self.W2 @ (self.W1 @ x) + self.b_prime
        return (x @ self.W1.T) @ self.W2.T + self.b_prime

    def dense_weight(self) -> np.ndarray:
        return self.W2 @ self.W1


@dataclass
class BasisSelection:
    U: np.ndarray
    eigenvalues: np.ndarray
    r: int
    energy_fraction: float


def dense_param_count(d: int, n: int) -> int:
    return d * n + d


def factored_weight_count(r: int, d: int, n: int) -> int:
    return r * (n + d)


def max_beneficial_rank(d: int, n: int) -> int:
    """Largest ``r`` with ``r (n + d) < d n``; 0 when no rank helps."""
    return (d * n - 1) // (n + d)


# ---------------------------------------------------------------- IMPACT core

def transform_coeff(grad_sq_mean, eta: float, a_floor: float = 1e-6) -> np.ndarray:
    """Per-dimension coefficient ``sqrt((1-eta) G_i / mean(G) + eta)``, floored."""
    g = as_vector(grad_sq_mean, "grad_sq_mean")
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise DataError("mean squared gradients must be finite and non-negative")
    if not 0.0 <= eta <= 1.0:
        raise ConfigurationError(f"eta must lie in [0, 1], got {eta}")
    d = g.shape[0]
    total = float(np.sum(g))
    if total > 0.0:
        rel = g / (total / d)
    elif eta > 0.0:
        rel = np.zeros(d)
    else:
        raise DegenerateImportanceError("eta=0 with all-zero gradients: no dimension carries importance")
    a = np.sqrt((1.0 - eta) * rel + eta)
    return np.maximum(a, a_floor)


def weighted_cov(prof: ProfiledLayer, a) -> np.ndarray:
    """``Cov(y) * (a a^T)``, elementwise."""
    a = as_vector(a, "a")
    if a.shape[0] != prof.d:
        raise DimensionError(f"coefficient length {a.shape[0]} does not match d={prof.d}")
    return hadamard(prof.cov, outer(a, a))


def select_rank(eigenvalues, keep_ratio: float) -> tuple[int, float]:
    """Smallest ``r`` whose cumulative sqrt-eigenvalue share reaches ``keep_ratio``%."""
    roots = np.sqrt(np.maximum(as_vector(eigenvalues), 0.0))
    cum = np.cumsum(roots)
    total = cum[-1]
    if total <= 0.0:
        raise DegenerateCovarianceError("all eigenvalues are zero")
    frac = cum / total
    r = int(np.argmax(frac >= keep_ratio / 100.0)) + 1
    return r, float(frac[r - 1])


def reconstruction_basis(C, cfg: ImpactConfig) -> BasisSelection:
    eig = sym_eig(C)
    lam = np.maximum(eig.eigenvalues, 0.0)
    d = lam.shape[0]
    if not np.any(lam > 0.0):
        raise DegenerateCovarianceError("importance-weighted covariance is zero")
    roots = np.sqrt(lam)
    if cfg.explicit_rank is not None:
        if cfg.explicit_rank > d:
            raise RankError(f"explicit rank {cfg.explicit_rank} exceeds dimension {d}")
        r = cfg.explicit_rank
        energy = float(np.sum(roots[:r]) / np.sum(roots))
    else:
        r, energy = select_rank(lam, cfg.keep_ratio)
    return BasisSelection(U=eig.eigenvectors[:, :r].copy(), eigenvalues=lam, r=r, energy_fraction=energy)


def _check_layer(W, b, prof: ProfiledLayer | None):
    W = as_matrix(W, "W")
    d = W.shape[0]
    b = np.zeros(d) if b is None else as_vector(b, "b")
    if b.shape[0] != d:
        raise DimensionError(f"bias length {b.shape[0]} does not match {d} output rows")
    if prof is not None and prof.d != d:
        raise DimensionError(f"statistics are for d={prof.d} but W has {d} rows")
    return W, b


def _check_benefit(r: int, d: int, n: int) -> None:
    factored, dense = factored_weight_count(r, d, n), d * n
    if factored >= dense:
        raise NoBenefitError(r, factored, dense)


def impact_factors(W, b, mean, a, U) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Factors for a given coefficient ``a`` and orthonormal basis ``U``."""
    a = as_vector(a, "a")
    U = as_matrix(U, "U")
    mean = as_vector(mean, "mean")
    a_cols = np.repeat(a[:, None], U.shape[1], axis=1)  # a 1_r^T
    W1 = hadamard(U, a_cols).T @ W
    W2 = hdivide(U, a_cols)
    mix = hadamard(U @ U.T, outer(1.0 / a, a))
    b_prime = mean + mix @ (b - mean)
    return W1, W2, b_prime


def factorize_impact(W, b, prof: ProfiledLayer, cfg: ImpactConfig,
                     *, method: str = "impact") -> FactoredLayer:
    """Factor a dense layer using importance-weighted activation statistics.

    Raises :class:`NoBenefitError` when ``cfg.replace_only_if_smaller`` is set
    and the selected rank would not shrink the weight count.
    """
    W, b = _check_layer(W, b, prof)
    d, n = W.shape
    a = transform_coeff(prof.grad_sq_mean, cfg.eta, cfg.a_floor)
    C = weighted_cov(prof, a)
    sel = reconstruction_basis(C, cfg)
    if cfg.replace_only_if_smaller:
        _check_benefit(sel.r, d, n)
    W1, W2, b_prime = impact_factors(W, b, prof.mean, a, sel.U)
    provenance = {
        "method": method,
        "config": cfg.snapshot(),
        "rank": sel.r,
        "energy_fraction": sel.energy_fraction,
    }
    if method == "afm":
        provenance["note"] = "activation-aware baseline realized as mean-centred activation PCA (eta=1)"
    return FactoredLayer(W1, W2, b_prime, provenance, selection=sel, coeff=a)


def afm_factorize(W, b, prof: ProfiledLayer, cfg: ImpactConfig) -> FactoredLayer:
    return factorize_impact(W, b, prof, dataclasses.replace(cfg, eta=1.0), method="afm")


# ---------------------------------------------------------------- baselines

def svd_factorize(W, b, r: int) -> FactoredLayer:
    W, b = _check_layer(W, b, None)
    U_r, S_r, V_r = truncated_svd(W, r)
    return FactoredLayer(S_r[:, None] * V_r.T, U_r, b.copy(), {"method": "svd", "rank": r})


def fwsvd_factorize(W, b, prof: ProfiledLayer, r: int) -> FactoredLayer:
    """Row-Fisher weighted SVD: minimizes ``|D (W - W2 W1)|_F`` with ``D = diag(sqrt(F + eps))``."""
    W, b = _check_layer(W, b, prof)
    if prof.fisher_row is None:
        raise DataError("FWSVD needs fisher_row statistics")
    f = prof.fisher_row
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise DataError("fisher_row must be finite and non-negative")
    D = np.sqrt(f + FWSVD_EPS)
    U_r, S_r, V_r = truncated_svd(D[:, None] * W, r)
    return FactoredLayer(
        S_r[:, None] * V_r.T,
        U_r / D[:, None],
        b.copy(),
        {"method": "fwsvd", "rank": r,
         "note": "row-Fisher diagonal weighting; interpretation of Fisher-weighted SVD"},
    )


def factorize(method: str, W, b, prof: ProfiledLayer | None, cfg: ImpactConfig,
              rank: int | None = None) -> FactoredLayer:
    """Dispatch by method name; the SVD-style baselines need an explicit ``rank``."""
    if method == "impact":
        return factorize_impact(W, b, prof, cfg)
    if method == "afm":
        return afm_factorize(W, b, prof, cfg)
    if rank is None:
        raise ConfigurationError(f"method {method!r} needs an explicit rank")
    if method == "svd":
        return svd_factorize(W, b, rank)
    if method == "fwsvd":
        return fwsvd_factorize(W, b, prof, rank)
    raise ConfigurationError(f"unknown method {method!r}; expected one of {METHODS}")


# ---------------------------------------------------------------- objectives

def project_activations(ys, mean, a, U) -> np.ndarray:
    """Reconstruction obeying ``a * (y_hat - mean) = U U^T (a * (y - mean))``."""
    ys = np.asarray(ys, dtype=np.float64)
    yt = (ys - mean) * a
    return mean + ((yt @ U) @ U.T) / a


def objective_h(samples, prof: ProfiledLayer, a, U) -> float:
    """Mean over samples of ``y~^T (I - U U^T) y~`` with ``y~ = a * (y - E[y])``."""
    ys = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    a = as_vector(a, "a")
    U = np.asarray(U, dtype=np.float64).reshape(prof.d, -1)
    if ys.shape[1] != prof.d or a.shape[0] != prof.d:
        raise DimensionError("samples, coefficient and statistics disagree on d")
    yt = a * (ys - prof.mean)
    resid = yt - (yt @ U) @ U.T  # (I - U U^T) is idempotent, so y~^T (I - UU^T) y~ = |resid|^2
    return float(np.mean(np.sum(resid * resid, axis=1)))


def objective_f(ys, yhats, loss_fn, alpha: float, beta: float) -> float:
    """``alpha * mean |y - y_hat|^2 + beta * mean (loss(y) - loss(y_hat))^2``."""
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    yhats = np.atleast_2d(np.asarray(yhats, dtype=np.float64))
    if ys.shape != yhats.shape:
        raise DimensionError(f"originals {ys.shape} and reconstructions {yhats.shape} differ")
    diff = ys - yhats
    recon = float(np.mean(np.sum(diff * diff, axis=1)))
    if beta == 0.0:
        return alpha * recon
    l_y = np.array([loss_fn(v) for v in ys], dtype=np.float64)
    l_hat = np.array([loss_fn(v) for v in yhats], dtype=np.float64)
    return alpha * recon + beta * float(np.mean((l_y - l_hat) ** 2))
