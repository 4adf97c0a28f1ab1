"""Model-level profiling, compression and matched-budget sweeps."""
from __future__ import annotations

import dataclasses
import fnmatch
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .compressor import (
    METHODS,
    FactoredLayer,
    ImpactConfig,
    factored_weight_count,
    factorize,
    reconstruction_basis,
    transform_coeff,
    weighted_cov,
)
from .errors import ConfigurationError
from .profiler import LayerStatsAccumulator, ProfiledLayer
from .toynet import Dataset, DenseLayer, ToyModel, activate, backward, evaluate, forward, swap_layer


def select_layers(model: ToyModel, pattern: str = "*") -> list[str]:
    """Layer names matching any of the comma-separated globs in ``pattern``."""
    globs = [p.strip() for p in pattern.split(",") if p.strip()] or ["*"]
    return [name for name in model.names if any(fnmatch.fnmatchcase(name, g) for g in globs)]


def profile_model(model: ToyModel, data: Dataset, layers: str = "*", batch_size: int = 256,
                  shards: int = 1) -> dict[str, ProfiledLayer]:
    """Feed ``data`` through ``model`` one sample per row and collect layer statistics.

    With ``shards > 1`` each contiguous chunk of batches gets its own
    accumulator and the results are merged left to right.
    """
    names = select_layers(model, layers)
    dims = {name: model[name].d_out for name in names}
    n = len(data)
    bounds = np.linspace(0, n, max(1, shards) + 1).astype(int)
    merged = None
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        accs = {name: LayerStatsAccumulator(dims[name]) for name in names}
        for start in range(lo, hi, batch_size):
            stop = min(start + batch_size, hi)
            _, taps, _ = backward(model, data.X[start:stop], data.T[start:stop])
            for tap in taps:
                if tap.layer_name in accs:
                    accs[tap.layer_name].accumulate_batch(tap.y, tap.grad_wrt_y, tap.input_norm_sq)
        if merged is None:
            merged = accs
        else:
            merged = {name: merged[name].merge(accs[name]) for name in names}
    return {name: merged[name].finalize() for name in names}


@dataclass
class LayerReport:
    layer: str
    method: str
    d: int
    n: int
    rank: int
    replaced: bool
    params_dense: int
    params_after: int
    energy_fraction: float | None = None
    eigenvalues: list | None = None
    h: float | None = None
    note: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def plan_ranks(model: ToyModel, stats: dict[str, ProfiledLayer], cfg: ImpactConfig,
               layers: str = "*") -> dict[str, dict]:
    """Per-layer rank chosen by the importance-weighted energy rule.

    Each entry holds ``rank`` (``None`` when the layer stays dense), the
    eigenvalue spectrum and the energy fraction reached.
    """
    plan = {}
    for name in select_layers(model, layers):
        layer = model[name]
        if not isinstance(layer, DenseLayer):
            continue
        if name not in stats:
            raise ConfigurationError(f"no statistics for layer {name}")
        prof = stats[name]
        a = transform_coeff(prof.grad_sq_mean, cfg.eta, cfg.a_floor)
        sel = reconstruction_basis(weighted_cov(prof, a), cfg)
        d, n = layer.W.shape
        rank = sel.r
        if cfg.replace_only_if_smaller and factored_weight_count(rank, d, n) >= d * n:
            rank = None
        plan[name] = {"rank": rank, "selected": sel.r, "eigenvalues": sel.eigenvalues,
                      "energy_fraction": sel.energy_fraction}
    return plan


def projection_h(prof: ProfiledLayer, a_ref: np.ndarray, layer: FactoredLayer) -> float | None:
    """Closed-form ``E|a_ref * (y - y_hat)|^2`` for projection-type factorizations."""
    if layer.selection is None or layer.coeff is None:
        return None
    U, a_m = layer.selection.U, layer.coeff
    d = prof.d
    # y - y_hat = diag(1/a_m) (I - U U^T) diag(a_m) (y - mean)
    Q = (np.eye(d) - U @ U.T) * a_m[None, :] / a_m[:, None]
    R = Q * a_ref[:, None]
    return float(np.trace(R @ prof.cov @ R.T))


def compress_model(model: ToyModel, stats: dict[str, ProfiledLayer], method: str,
                   cfg: ImpactConfig, layers: str = "*", plan: dict | None = None,
                   parallel: bool = False) -> tuple[ToyModel, list[LayerReport]]:
    """Replace selected dense layers using ``method`` at the planned ranks.

    Every method, IMPACT included, uses the rank from :func:`plan_ranks`, so
    the compressed models have identical sizes. Layers whose planned rank is
    ``None`` stay dense.
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; expected one of {METHODS}")
    if plan is None:
        plan = plan_ranks(model, stats, cfg, layers)

    def work(name):
        layer = model[name]
        entry = plan[name]
        d, n = layer.W.shape
        report = LayerReport(name, method, d, n, 0, False, layer.param_count, layer.param_count,
                             entry["energy_fraction"], [float(v) for v in entry["eigenvalues"]])
        if entry["rank"] is None:
            report.note = f"kept dense: rank {entry['selected']} does not shrink the layer"
            return name, None, report
        r = entry["rank"]
        layer_cfg = dataclasses.replace(cfg, explicit_rank=r, replace_only_if_smaller=False)
        fact = factorize(method, layer.W, layer.b, stats[name], layer_cfg, rank=r)
        a_ref = transform_coeff(stats[name].grad_sq_mean, cfg.eta, cfg.a_floor)
        report.rank = r
        report.replaced = True
        report.params_after = fact.param_count
        report.h = projection_h(stats[name], a_ref, fact)
        report.note = fact.provenance.get("note", "")
        return name, fact, report

    names = list(plan)
    if parallel and len(names) > 1:
        with ThreadPoolExecutor() as pool:
            results = list(pool.map(work, names))
    else:
        results = [work(name) for name in names]

    out = model
    reports = []
    for name, fact, report in results:  # model order regardless of scheduling
        if fact is not None:
            out = swap_layer(out, name, fact)
        reports.append(report)
    return out, reports


def layer_inputs(model: ToyModel, X: np.ndarray) -> dict[str, np.ndarray]:
    """Input to every layer of ``model`` for the batch ``X``."""
    _, taps = forward(model, X)
    inputs = {model.names[0]: np.asarray(X, dtype=np.float64)}
    for (name, layer), tap, nxt in zip(model.named_layers(), taps, model.names[1:]):
        inputs[nxt] = activate(layer.activation, tap.y)
    return inputs


def empirical_h(original: ToyModel, compressed: ToyModel, stats: dict[str, ProfiledLayer],
                cfg: ImpactConfig, X: np.ndarray) -> dict[str, float]:
    """``mean |a * (y - y_hat)|^2`` per replaced layer, on the original model's layer inputs."""
    inputs = layer_inputs(original, X)
    out = {}
    for name, layer in compressed.named_layers():
        if not isinstance(layer, FactoredLayer):
            continue
        dense = original[name]
        x = inputs[name]
        diff = dense.forward(x) - layer.forward(x)
        a = transform_coeff(stats[name].grad_sq_mean, cfg.eta, cfg.a_floor)
        out[name] = float(np.mean(np.sum((a * diff) ** 2, axis=1)))
    return out


@dataclass
class SweepRow:
    method: str
    layer_scope: str
    eta: float
    keep_ratio: float
    rank_per_layer: dict
    params_total: int
    params_ratio: float
    eval_loss: float
    eval_metric: float
    h_per_layer: dict
    notes: str = ""


def sweep(model: ToyModel, stats: dict[str, ProfiledLayer], eval_data: Dataset,
          keep_ratios, methods=METHODS, cfg: ImpactConfig | None = None,
          layers: str = "*", parallel: bool = False) -> list[SweepRow]:
    """Compress with every method at every keep ratio, ranks matched to IMPACT's plan."""
    cfg = cfg or ImpactConfig()
    base_params = model.param_count
    rows = []
    for k in keep_ratios:
        kcfg = dataclasses.replace(cfg, keep_ratio=float(k))
        plan = plan_ranks(model, stats, kcfg, layers)
        for method in methods:
            compressed, reports = compress_model(model, stats, method, kcfg, layers, plan, parallel)
            loss, metric = evaluate(compressed, eval_data)
            h = empirical_h(model, compressed, stats, kcfg, eval_data.X)
            notes = sorted({r.note for r in reports if r.note})
            rows.append(SweepRow(
                method=method,
                layer_scope=layers,
                eta=kcfg.eta,
                keep_ratio=kcfg.keep_ratio,
                rank_per_layer={r.layer: r.rank for r in reports},
                params_total=compressed.param_count,
                params_ratio=compressed.param_count / base_params,
                eval_loss=loss,
                eval_metric=metric,
                h_per_layer=h,
                notes=" | ".join(notes),
            ))
    return rows


def gradient_diagnostic(prof: ProfiledLayer) -> np.ndarray:
    """Mean squared gradients sorted descending and divided by their mean."""
    g = np.sort(prof.grad_sq_mean)[::-1]
    mean = g.mean()
    if mean <= 0:
        return np.zeros_like(g)
    return g / mean
