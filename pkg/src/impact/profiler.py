"""Streaming activation/gradient statistics for one linear layer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InsufficientSamplesError, SampleQualityError
from .kernels import accumulate_moments
from .linalg import max_abs, sym_eig

PSD_RTOL = 1e-8


def _mirror_upper(upper: np.ndarray) -> np.ndarray:
    tri = np.triu(upper)
    return tri + np.triu(upper, 1).T


@dataclass
class LayerStatsAccumulator:
    """Running sums for ``E[y]``, ``E[y y^T]``, ``E[g^2]`` and ``E[g^2 |x|^2]``.

    Only the upper triangle of the second-moment sum is stored; the
    :attr:`sum_yyT` property returns the mirrored, exactly symmetric matrix.
    """

    d: int
    n: int = 0
    sum_y: np.ndarray = field(default=None)
    sum_grad_sq: np.ndarray = field(default=None)
    sum_grad_sq_xnorm: np.ndarray = field(default=None)
    _upper: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.d < 1:
            raise DimensionError(f"accumulator dimension must be positive, got {self.d}")
        if self.sum_y is None:
            self.sum_y = np.zeros(self.d)
        if self.sum_grad_sq is None:
            self.sum_grad_sq = np.zeros(self.d)
        if self.sum_grad_sq_xnorm is None:
            self.sum_grad_sq_xnorm = np.zeros(self.d)
        if self._upper is None:
            self._upper = np.zeros((self.d, self.d))

    @property
    def sum_yyT(self) -> np.ndarray:
        return _mirror_upper(self._upper)

    def accumulate(self, y, grad, x_norm_sq: float = 0.0) -> "LayerStatsAccumulator":
        """Add one sample in place and return ``self``."""
        y = np.asarray(y, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if y.ndim != 1:
            raise DimensionError(f"expected a single activation vector, got shape {y.shape}")
        return self.accumulate_batch(y[None, :], grad[None, :] if grad.ndim == 1 else grad,
                                     np.atleast_1d(np.asarray(x_norm_sq, dtype=np.float64)))

    def accumulate_batch(self, ys, grads, x_norm_sq=None) -> "LayerStatsAccumulator":
        """Add the rows of ``ys``/``grads`` in order, exactly as repeated :meth:`accumulate`."""
        ys = np.ascontiguousarray(ys, dtype=np.float64)
        grads = np.ascontiguousarray(grads, dtype=np.float64)
        if ys.ndim != 2 or ys.shape[1] != self.d or grads.shape != ys.shape:
            raise DimensionError(
                f"samples of shape {ys.shape} / grads {grads.shape} do not match d={self.d}"
            )
        if x_norm_sq is None:
            x_norm_sq = np.zeros(ys.shape[0])
        x_norm_sq = np.ascontiguousarray(x_norm_sq, dtype=np.float64).reshape(-1)
        if x_norm_sq.shape[0] != ys.shape[0]:
            raise DimensionError("one input norm per sample is required")
        if not (np.all(np.isfinite(ys)) and np.all(np.isfinite(grads)) and np.all(np.isfinite(x_norm_sq))):
            raise SampleQualityError("non-finite activation, gradient or input norm")
        if np.any(x_norm_sq < 0):
            raise SampleQualityError("input squared norm must be non-negative")
        accumulate_moments(self._upper, self.sum_y, self.sum_grad_sq, self.sum_grad_sq_xnorm,
                           ys, grads, x_norm_sq)
        self.n += ys.shape[0]
        return self

    def merge(self, other: "LayerStatsAccumulator") -> "LayerStatsAccumulator":
        """Field-wise sum of two accumulators as a new accumulator."""
        if other.d != self.d:
            raise DimensionError(f"cannot merge d={self.d} with d={other.d}")
        return LayerStatsAccumulator(
            d=self.d,
            n=self.n + other.n,
            sum_y=self.sum_y + other.sum_y,
            sum_grad_sq=self.sum_grad_sq + other.sum_grad_sq,
            sum_grad_sq_xnorm=self.sum_grad_sq_xnorm + other.sum_grad_sq_xnorm,
            _upper=self._upper + other._upper,
        )

    def finalize(self) -> "ProfiledLayer":
        if self.n < 2:
            raise InsufficientSamplesError(f"need at least 2 samples, have {self.n}")
        n = float(self.n)
        mean = self.sum_y / n
        second = self.sum_yyT / n
        cov = second - np.outer(mean, mean)
        cov = 0.5 * (cov + cov.T)
        # a variance below the rounding bound of n-term summation is
        # indistinguishable from zero: treat that dimension as constant
        noise = self.n * np.finfo(np.float64).eps * np.diag(second)
        flat = np.diag(cov) <= noise
        if np.any(flat):
            cov[flat, :] = 0.0
            cov[:, flat] = 0.0
        scale = max_abs(cov)
        if scale > 0.0:
            eig = sym_eig(cov)
            if eig.eigenvalues[-1] < -PSD_RTOL * (1.0 + scale):
                # cancellation in E[yy^T] - mu mu^T: project back onto the PSD cone
                lam = np.maximum(eig.eigenvalues, 0.0)
                v = eig.eigenvectors
                cov = (v * lam) @ v.T
                cov = 0.5 * (cov + cov.T)
        return ProfiledLayer(
            d=self.d,
            n=self.n,
            mean=mean,
            cov=cov,
            grad_sq_mean=self.sum_grad_sq / n,
            fisher_row=self.sum_grad_sq_xnorm / n,
        )


def merge_all(accs) -> LayerStatsAccumulator:
    """Left-to-right merge; the fixed order keeps results bit-stable."""
    accs = list(accs)
    if not accs:
        raise ValueError("nothing to merge")
    out = accs[0]
    for acc in accs[1:]:
        out = out.merge(acc)
    return out


@dataclass
class ProfiledLayer:
    d: int
    n: int
    mean: np.ndarray
    cov: np.ndarray
    grad_sq_mean: np.ndarray
    fisher_row: np.ndarray | None = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        self.grad_sq_mean = np.asarray(self.grad_sq_mean, dtype=np.float64)
        if self.fisher_row is not None:
            self.fisher_row = np.asarray(self.fisher_row, dtype=np.float64)
        d = self.d
        if self.mean.shape != (d,) or self.cov.shape != (d, d) or self.grad_sq_mean.shape != (d,):
            raise DimensionError(f"profiled statistics do not match d={d}")
        if self.fisher_row is not None and self.fisher_row.shape != (d,):
            raise DimensionError(f"fisher_row does not match d={d}")


def profile_samples(ys, grads, x_norm_sq=None) -> ProfiledLayer:
    """One-shot convenience: accumulate a sample matrix and finalize."""
    ys = np.asarray(ys, dtype=np.float64)
    acc = LayerStatsAccumulator(ys.shape[1])
    acc.accumulate_batch(ys, grads, x_norm_sq)
    return acc.finalize()
