"""Case-study pipeline: abundance table -> statistics -> support comparison.

Raw abundance values are shifted to be positive and log-transformed; each
feature is reduced to the absolute pooled two-sample t statistic comparing a
cancer condition against the healthy condition.  Per feature the pipeline
reports the NMWL support, the maximum-likelihood-ratio upper bound, and the
simultaneous support from the two-groups mixture fitted across all features.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .family import folded_t_family
from .quadrature import QuadratureSpec
from .support import SupportRecord, posterior_log_odds, support, upper_bound_support
from .twogroups import TwoGroupsFit, fit_mixture, simultaneous_support
from .universal import nmwl_density

CONDITIONS = ("cancer-A", "cancer-B", "healthy")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class AbundanceTable:
    """Feature-by-sample abundance matrix with per-column condition labels.

    ``values`` is (n_features, n_samples); missing entries are NaN and
    mirrored in ``mask`` (True where observed).
    """

    feature_ids: tuple
    sample_ids: tuple
    condition_labels: tuple
    values: np.ndarray
    mask: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "feature_ids", tuple(str(f) for f in self.feature_ids))
        object.__setattr__(self, "sample_ids", tuple(str(s) for s in self.sample_ids))
        object.__setattr__(
            self, "condition_labels", tuple(str(c) for c in self.condition_labels)
        )
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        mask = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "mask", mask)
        n, s = values.shape
        if len(self.feature_ids) != n or len(self.sample_ids) != s:
            raise ValueError("values shape does not match feature/sample ids")
        if len(self.condition_labels) != s:
            raise ValueError("need one condition label per sample column")
        bad = set(self.condition_labels) - set(CONDITIONS)
        if bad:
            raise ValueError(f"unknown condition labels {sorted(bad)}; expected {CONDITIONS}")
        if mask.shape != values.shape:
            raise ValueError("mask shape must match values")

    @staticmethod
    def from_values(feature_ids, sample_ids, condition_labels, values, meta=None):
        values = np.asarray(values, dtype=float)
        return AbundanceTable(
            feature_ids=tuple(feature_ids),
            sample_ids=tuple(sample_ids),
            condition_labels=tuple(condition_labels),
            values=values,
            mask=~np.isnan(values),
            meta=meta or {},
        )

    def columns_for(self, condition: str) -> np.ndarray:
        return np.array([c == condition for c in self.condition_labels])


@dataclass(frozen=True)
class TwoSampleModelSpec:
    """Which two conditions are compared; the variance is pooled (equal)."""

    cancer_group: str
    healthy_group: str = "healthy"
    equal_variance: bool = True

    def __post_init__(self):
        if self.cancer_group not in CONDITIONS or self.healthy_group not in CONDITIONS:
            raise ValueError(f"groups must be among {CONDITIONS}")
        if self.cancer_group == self.healthy_group:
            raise ValueError("compared groups must be distinct")
        if not self.equal_variance:
            raise ValueError("only the pooled equal-variance model is supported")


@dataclass(frozen=True)
class StatisticRecord:
    feature_id: str
    t_abs: float
    nu: float
    n_cancer: int
    n_healthy: int
    flags: tuple = field(default=())


def shift_log_transform(table: AbundanceTable) -> AbundanceTable:
    """log(value + c) with the global shift c = 1 + max(0, -min value).

    The same shift applies to every entry, preserving cross-feature
    comparability; c is recorded in the output metadata.  Features with no
    observed values are dropped with a warning.
    """
    observed = table.mask.any(axis=1)
    if not observed.all():
        dropped = [f for f, keep in zip(table.feature_ids, observed) if not keep]
        warnings.warn(f"dropping all-missing features: {dropped}", stacklevel=2)
    values = table.values[observed]
    mask = table.mask[observed]
    if not mask.any():
        raise ValueError("table has no observed values")
    vmin = float(np.nanmin(values))
    c = 1.0 + max(0.0, -vmin)
    out = np.where(mask, np.log(values + c), np.nan)
    meta = dict(table.meta)
    meta.update(shift_constant=c, transformed=True)
    return AbundanceTable(
        feature_ids=tuple(f for f, keep in zip(table.feature_ids, observed) if keep),
        sample_ids=table.sample_ids,
        condition_labels=table.condition_labels,
        values=out,
        mask=mask,
        meta=meta,
    )


def compute_statistic(
    table: AbundanceTable, model: TwoSampleModelSpec, feature_id: str
) -> StatisticRecord:
    """Absolute pooled two-sample t statistic for one feature (complete case)."""
    try:
        row = table.feature_ids.index(feature_id)
    except ValueError:
        raise KeyError(f"unknown feature {feature_id!r}") from None
    vals = table.values[row]
    mask = table.mask[row]
    x = vals[mask & table.columns_for(model.cancer_group)]
    y = vals[mask & table.columns_for(model.healthy_group)]
    n1, n2 = x.size, y.size
    if n1 < 2 or n2 < 2:
        raise ValueError(
            f"feature {feature_id!r} needs >= 2 observed samples per group, "
            f"got {n1} and {n2}"
        )
    nu = n1 + n2 - 2
    pooled = ((n1 - 1) * np.var(x, ddof=1) + (n2 - 1) * np.var(y, ddof=1)) / nu
    flags = ()
    if pooled <= 0.0:
        flags = ("degenerate_zero_variance",)
        t_abs = math.inf
    else:
        se = math.sqrt(pooled * (1.0 / n1 + 1.0 / n2))
        t_abs = abs(float(np.mean(x) - np.mean(y))) / se
    return StatisticRecord(
        feature_id=feature_id,
        t_abs=t_abs,
        nu=float(nu),
        n_cancer=n1,
        n_healthy=n2,
        flags=flags,
    )


@dataclass(frozen=True)
class SyntheticConfig:
    """Two-groups generator on the transformed (log) scale.

    A fraction 1 - pi0 of features (Bernoulli per feature) gets a cancer
    mean shifted by theta_alt standard errors; everything else matches the
    null.  Values are already on the modeling scale, so the pipeline skips
    the shift-log transform for generated tables.
    """

    n_features: int = 20
    n_cancer: int = 55
    n_healthy: int = 64
    pi0: float = 0.5
    theta_alt: float = 3.0
    sigma: float = 1.0
    seed: int = 0
    cancer_group: str = "cancer-A"

    def __post_init__(self):
        if not 0.0 <= self.pi0 <= 1.0:
            raise ValueError("pi0 must be in [0, 1]")
        if self.theta_alt < 0.0:
            raise ValueError("theta_alt must be nonnegative")
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        if self.n_features < 1 or self.n_cancer < 2 or self.n_healthy < 2:
            raise ValueError("need >= 1 feature and >= 2 samples per group")
        if self.cancer_group not in ("cancer-A", "cancer-B"):
            raise ValueError("cancer_group must be cancer-A or cancer-B")


def generate_synthetic(config: SyntheticConfig) -> AbundanceTable:
    """Reproducible synthetic table drawn from the two-groups normal model."""
    rng = np.random.default_rng(config.seed)
    n, n1, n2 = config.n_features, config.n_cancer, config.n_healthy
    alt = rng.random(n) < (1.0 - config.pi0)
    baseline = rng.normal(0.0, 1.0, n)
    shift = (
        config.theta_alt
        * config.sigma
        * math.sqrt(1.0 / n1 + 1.0 / n2)
        * alt.astype(float)
    )
    cancer = rng.normal(
        (baseline + shift)[:, None], config.sigma, (n, n1)
    )
    healthy = rng.normal(baseline[:, None], config.sigma, (n, n2))
    values = np.concatenate([cancer, healthy], axis=1)
    feature_ids = [f"feat{i:04d}" for i in range(n)]
    sample_ids = [f"c{i:03d}" for i in range(n1)] + [f"h{i:03d}" for i in range(n2)]
    labels = [config.cancer_group] * n1 + ["healthy"] * n2
    meta = {
        "transformed": True,
        "generator": {
            "n_features": n,
            "n_cancer": n1,
            "n_healthy": n2,
            "pi0": config.pi0,
            "theta_alt": config.theta_alt,
            "sigma": config.sigma,
            "seed": config.seed,
            "cancer_group": config.cancer_group,
        },
        "n_alternative": int(alt.sum()),
    }
    return AbundanceTable.from_values(feature_ids, sample_ids, labels, values, meta)


@dataclass(frozen=True)
class CaseStudyOptions:
    n_eff: Optional[float] = None  # default: n_cancer + n_healthy per feature df
    t0: float = 0.0
    theta_cap: float = 50.0
    t_max: Optional[float] = None  # default: max(20, max |t| + 10)
    pi0_list: tuple = field(default=())
    apply_transform: Optional[bool] = None  # None: skip iff table is pre-transformed


@dataclass(frozen=True)
class CaseStudyResult:
    records: tuple
    statistics: tuple
    fit: TwoGroupsFit
    metadata: dict


def run_case_study(
    table: AbundanceTable,
    model: TwoSampleModelSpec,
    options: CaseStudyOptions = CaseStudyOptions(),
) -> CaseStudyResult:
    """Full comparison: per-feature NMWL support, upper bound, and the
    simultaneous support from a mixture fitted across all features."""
    transform = options.apply_transform
    if transform is None:
        transform = not table.meta.get("transformed", False)
    if transform:
        table = shift_log_transform(table)

    stat_records = []
    for fid in table.feature_ids:
        try:
            stat_records.append(compute_statistic(table, model, fid))
        except ValueError as exc:
            stat_records.append(
                StatisticRecord(
                    feature_id=fid,
                    t_abs=math.nan,
                    nu=math.nan,
                    n_cancer=0,
                    n_healthy=0,
                    flags=("insufficient_samples",),
                )
            )
            warnings.warn(str(exc), stacklevel=2)

    usable = [r for r in stat_records if not r.flags and math.isfinite(r.t_abs)]
    if not usable:
        raise ValueError("no usable features after statistic reduction")

    t_values = np.array([r.t_abs for r in usable])
    t_max = options.t_max
    if t_max is None:
        t_max = max(20.0, float(t_values.max()) + 10.0)
    spec = QuadratureSpec(t_max=t_max)

    # One family and NMWL density per distinct df (missing values can make
    # degrees of freedom vary across features).
    dfs = sorted({r.nu for r in usable})
    families = {nu: folded_t_family(nu, theta_cap=options.theta_cap) for nu in dfs}
    densities = {}
    n_effs = {}
    for r in usable:
        if r.nu in densities:
            continue
        n_eff = options.n_eff if options.n_eff is not None else r.n_cancer + r.n_healthy
        n_effs[r.nu] = n_eff
        densities[r.nu] = nmwl_density(families[r.nu], options.t0, n_eff, spec)

    # The mixture is fitted on all usable statistics with the modal-df family.
    df_counts = {nu: sum(1 for r in usable if r.nu == nu) for nu in dfs}
    modal_nu = max(dfs, key=lambda nu: (df_counts[nu], nu))
    fit = fit_mixture(families[modal_nu], t_values)

    records = []
    for r in stat_records:
        if r.flags or not math.isfinite(r.t_abs):
            records.append(
                SupportRecord(
                    feature_id=r.feature_id,
                    statistic=r.t_abs,
                    support_nats=math.nan,
                    upper_bound_nats=math.nan,
                    simultaneous_nats=None,
                    posterior_log_odds=None,
                    flags=r.flags,
                )
            )
            continue
        fam = families[r.nu]
        gstar = densities[r.nu]
        s = support(gstar, fam.null_logpdf, r.t_abs)
        flags = ("infinite_support",) if math.isinf(s) else ()
        odds = None
        if options.pi0_list:
            odds = {pi0: posterior_log_odds(s, pi0) for pi0 in options.pi0_list}
        records.append(
            SupportRecord(
                feature_id=r.feature_id,
                statistic=r.t_abs,
                support_nats=s,
                upper_bound_nats=upper_bound_support(fam, r.t_abs),
                simultaneous_nats=simultaneous_support(fit, fam, r.t_abs),
                posterior_log_odds=odds,
                flags=flags,
            )
        )

    metadata = {
        "schema_version": SCHEMA_VERSION,
        "n_features": len(table.feature_ids),
        "n_usable": len(usable),
        "cancer_group": model.cancer_group,
        "healthy_group": model.healthy_group,
        "shift_constant": table.meta.get("shift_constant"),
        "transform_applied": transform,
        "t0": options.t0,
        "n_eff": {f"{nu:g}": n_effs[nu] for nu in n_effs},
        "theta_cap": options.theta_cap,
        "t_max": t_max,
        "units": "nats",
        "dfs": {f"{nu:g}": df_counts[nu] for nu in dfs},
        "modal_df": modal_nu,
        "log_Z": {f"{nu:g}": densities[nu].log_Z for nu in densities},
        "fit": {
            "pi0_hat": fit.pi0_hat,
            "theta_alt_hat": fit.theta_alt_hat,
            "log_likelihood": fit.log_likelihood,
            "converged": fit.converged,
            "flags": list(fit.flags),
        },
        "pi0_list": list(options.pi0_list),
    }
    if "generator" in table.meta:
        metadata["generator"] = table.meta["generator"]
    return CaseStudyResult(
        records=tuple(records),
        statistics=tuple(stat_records),
        fit=fit,
        metadata=metadata,
    )


# ---------------------------------------------------------------------------
# CSV input/output
# ---------------------------------------------------------------------------

_MISSING = {"", "na", "nan", "null", "none"}


def read_abundance_csv(path, labels_path=None) -> AbundanceTable:
    """Read a feature-by-sample abundance CSV.

    The first column holds feature ids; the header row holds sample ids.
    Condition labels come from a sidecar CSV (sample_id,condition) or can be
    embedded in the header as ``sample:condition``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or len(rows[0]) < 2:
        raise ValueError(f"{path}: expected a header row and at least one feature row")
    header = rows[0][1:]
    label_map = {}
    if labels_path is not None:
        with open(labels_path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().lower() in ("sample_id", "sample"):
                    continue
                if len(row) < 2:
                    raise ValueError(f"{labels_path}: malformed row {row!r}")
                label_map[row[0].strip()] = row[1].strip()
        sample_ids = [h.strip() for h in header]
        try:
            labels = [label_map[s] for s in sample_ids]
        except KeyError as exc:
            raise ValueError(f"{labels_path}: no condition for sample {exc}") from None
    else:
        sample_ids, labels = [], []
        for h in header:
            if ":" not in h:
                raise ValueError(
                    f"{path}: header cell {h!r} has no embedded ':' label and no "
                    "label file was given"
                )
            sid, lab = h.rsplit(":", 1)
            sample_ids.append(sid.strip())
            labels.append(lab.strip())

    feature_ids, data = [], []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header) + 1:
            raise ValueError(f"{path}: row {i} has {len(row)} cells, expected {len(header) + 1}")
        feature_ids.append(row[0].strip())
        vals = []
        for j, cell in enumerate(row[1:], start=2):
            cell = cell.strip()
            if cell.lower() in _MISSING:
                vals.append(math.nan)
            else:
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: row {i} column {j}: not a number: {cell!r}"
                    ) from None
        data.append(vals)
    return AbundanceTable.from_values(feature_ids, sample_ids, labels, np.array(data))


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.12g}"


def write_abundance_csv(table: AbundanceTable, path, labels_path=None) -> None:
    """Write a table; labels go to a sidecar CSV or embed in the header."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if labels_path is None:
            header = [f"{s}:{c}" for s, c in zip(table.sample_ids, table.condition_labels)]
        else:
            header = list(table.sample_ids)
        writer.writerow(["feature_id", *header])
        for fid, row, mrow in zip(table.feature_ids, table.values, table.mask):
            writer.writerow([fid, *[_fmt(v) if m else "" for v, m in zip(row, mrow)]])
    if labels_path is not None:
        with open(labels_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "condition"])
            for s, c in zip(table.sample_ids, table.condition_labels):
                writer.writerow([s, c])


def write_results_csv(result: CaseStudyResult, path) -> None:
    """One row per feature: id, statistic, df, and the three support series."""
    stat_by_id = {r.feature_id: r for r in result.statistics}
    pi0_list = result.metadata.get("pi0_list") or []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = [
            "feature_id",
            "t_abs",
            "df",
            "support_nats",
            "simultaneous_nats",
            "upper_bound_nats",
            "flags",
        ]
        header += [f"posterior_log_odds_pi0_{_fmt(p)}" for p in pi0_list]
        writer.writerow(header)
        for rec in result.records:
            stat = stat_by_id[rec.feature_id]
            row = [
                rec.feature_id,
                _fmt(rec.statistic),
                _fmt(stat.nu),
                _fmt(rec.support_nats),
                _fmt(rec.simultaneous_nats),
                _fmt(rec.upper_bound_nats),
                ";".join(rec.flags),
            ]
            row += [
                _fmt(rec.posterior_log_odds.get(p)) if rec.posterior_log_odds else ""
                for p in pi0_list
            ]
            writer.writerow(row)
