"""Simulation harness: estimator comparisons and DE-detection studies.

Every random quantity is drawn from a generator seeded by
``SeedSequence([seed, index])`` so rows, replicates and genes can be run in
any order with identical results.
"""
import csv
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ValidationError
from .estimators import marginal_mle_batch, mle_batch, quasi_likelihood_batch
from .libnorm import CountMatrix, estimate_abundances
from .nbcore import DEFAULT_A_MU, NBModel, PriorConfig
from .degtest.model import McmcConfig
from .degtest.pipeline import run_de_test
from .degtest.selection import expected_fdp_curve, posterior_null_probs, ranking

log = logging.getLogger(__name__)

BACTEROIDES_COUNTS = (118, 131, 136, 176, 274, 1022, 1675, 14137, 15714, 60886)


def _rng(seed, *index):
    return np.random.default_rng(np.random.SeedSequence([seed % 2**64, *index]))


def sample_negbin_array(mu, alpha, rng, size=None):
    """Gamma-Poisson draws; ``mu`` and ``alpha`` broadcast, ``alpha == 0`` is Poisson."""
    mu = np.asarray(mu, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if size is None:
        size = np.broadcast_shapes(mu.shape, alpha.shape)
    mu = np.broadcast_to(mu, size)
    alpha = np.broadcast_to(alpha, size)
    pos = alpha > 0
    shape = np.where(pos, 1.0 / np.where(pos, alpha, 1.0), 1.0)
    lam = np.where(pos, rng.gamma(shape, np.where(pos, alpha, 1.0) * mu), mu)
    return rng.poisson(lam)


def sample_negbin(model, n, rng):
    """``n`` iid draws from the negative binomial ``model``."""
    if not isinstance(model, NBModel):
        model = NBModel(*model)
    return sample_negbin_array(model.mu, model.alpha, rng, size=(int(n),))


# --- estimator comparison --------------------------------------------------

@dataclass(frozen=True)
class EstimatorTrial:
    true_mu: float
    true_alpha: float
    n: int
    alpha_mle: float
    alpha_marginal: float
    alpha_ql: float
    mle_truncated: bool


@dataclass(frozen=True)
class PaperTable2Row:
    """Published summary for one setting: (mean, median, MSE) per estimator."""

    mu: float
    alpha: float
    n: int
    marginal: tuple
    mle: tuple
    ql: tuple
    pct_truncated: float


# (mean, median, MSE) for the marginal MLE, MLE and quasi-likelihood, then % truncated
TABLE2_PAPER = [
    PaperTable2Row(1, 0.21, 3, (0.101, 0, 0.15), (6.408, 0, 608.101), (1.841, 0.605, 11.525), 70.5),
    PaperTable2Row(1, 0.21, 10, (0.187, 0, 0.161), (0.315, 0, 0.416), (0.467, 0.317, 0.311), 55.1),
    PaperTable2Row(1, 0.21, 50, (0.195, 0.126, 0.046), (0.217, 0.149, 0.053), (0.379, 0.359, 0.083), 27.5),
    PaperTable2Row(10, 1.11, 3, (0.918, 0.607, 1.305), (1.33, 0.6, 31.503), (1.893, 1.197, 4.748), 13.1),
    PaperTable2Row(10, 1.11, 10, (1.032, 0.928, 0.381), (1.049, 0.934, 0.447), (1.41, 1.291, 0.722), 0),
    PaperTable2Row(10, 1.11, 50, (1.089, 1.071, 0.058), (1.092, 1.073, 0.059), (1.339, 1.324, 0.146), 0),
    PaperTable2Row(100, 1.2, 3, (0.9, 0.701, 0.775), (0.895, 0.645, 0.988), (1.578, 1.074, 2.934), 1.3),
    PaperTable2Row(100, 1.2, 10, (1.112, 1.05, 0.24), (1.114, 1.045, 0.261), (1.473, 1.352, 0.612), 0),
    PaperTable2Row(100, 1.2, 50, (1.186, 1.176, 0.048), (1.187, 1.177, 0.049), (1.439, 1.423, 0.146), 0),
    PaperTable2Row(1000, 1.209, 3, (0.888, 0.707, 0.645), (0.856, 0.639, 0.784), (1.529, 1.057, 2.496), 0.1),
    PaperTable2Row(1000, 1.209, 10, (1.097, 1.039, 0.205), (1.092, 1.031, 0.221), (1.437, 1.326, 0.503), 0),
    PaperTable2Row(1000, 1.209, 50, (1.193, 1.19, 0.045), (1.192, 1.19, 0.045), (1.441, 1.433, 0.138), 0),
    PaperTable2Row(1, 1.25, 3, (0.286, 0, 1.478), (14.838, 0, 1386.5), (2.76, 1.341, 13.938), 49.2),
    PaperTable2Row(1, 1.25, 10, (0.816, 0.436, 1.579), (1.568, 0.674, 33.71), (1.09, 0.991, 0.948), 24.5),
    PaperTable2Row(1, 1.25, 50, (1.162, 1.087, 0.364), (1.238, 1.151, 0.394), (1.106, 1.102, 0.158), 0.6),
    PaperTable2Row(10, 2.15, 3, (1.444, 0.932, 3.329), (3.252, 1.051, 148.871), (2.946, 2.21, 7.804), 10.9),
    PaperTable2Row(10, 2.15, 10, (1.986, 1.76, 1.153), (2.09, 1.834, 1.429), (2.616, 2.448, 1.508), 0),
    PaperTable2Row(10, 2.15, 50, (2.106, 2.053, 0.198), (2.125, 2.072, 0.204), (2.534, 2.509, 0.367), 0),
    PaperTable2Row(100, 2.24, 3, (1.78, 1.266, 2.99), (1.97, 1.281, 4.882), (3.278, 2.316, 9.028), 0.9),
    PaperTable2Row(100, 2.24, 10, (2.095, 1.952, 0.813), (2.15, 1.995, 0.911), (2.95, 2.792, 2.112), 0),
    PaperTable2Row(100, 2.24, 50, (2.212, 2.186, 0.151), (2.224, 2.198, 0.154), (2.844, 2.82, 0.631), 0),
    PaperTable2Row(1000, 2.249, 3, (1.709, 1.309, 2.491), (1.818, 1.304, 3.949), (3.173, 2.333, 8.563), 0.3),
    PaperTable2Row(1000, 2.249, 10, (2.123, 2.001, 0.707), (2.166, 2.038, 0.774), (3.061, 2.88, 2.393), 0),
    PaperTable2Row(1000, 2.249, 50, (2.22, 2.195, 0.147), (2.23, 2.205, 0.15), (2.913, 2.879, 0.749), 0),
]

TABLE2_GRID = [(r.mu, r.alpha, r.n) for r in TABLE2_PAPER]


@dataclass
class Table2Row:
    mu: float
    alpha: float
    n: int
    n_reps: int
    marginal_mean: float
    marginal_median: float
    marginal_mse: float
    mle_mean: float
    mle_median: float
    mle_mse: float
    ql_mean: float
    ql_median: float
    ql_mse: float
    pct_truncated: float
    marginal_min: float
    n_all_zero: int
    trials: dict = field(default=None, repr=False)

    def estimator_trials(self):
        t = self.trials
        for i in range(self.n_reps):
            yield EstimatorTrial(
                self.mu, self.alpha, self.n,
                float(t["alpha_mle"][i]), float(t["alpha_marginal"][i]), float(t["alpha_ql"][i]),
                bool(t["mle_truncated"][i]),
            )


def _summary(est, truth):
    return float(est.mean()), float(np.median(est)), float(np.mean((est - truth) ** 2))


def run_table2_row(mu, alpha, n, n_reps=1000, seed=0, row_index=0, a_mu=DEFAULT_A_MU):
    """Draw ``n_reps`` samples of size ``n`` and apply the three estimators.

    A sample of all zeros has no MLE of the mean; it gets ``alpha = 0`` for
    the MLE and quasi-likelihood estimators without counting as truncated,
    and the marginal MLE keeps its (boundary) maximizer.
    """
    rng = _rng(seed, row_index)
    k = sample_negbin_array(mu, alpha, rng, size=(n_reps, n)).astype(np.float64)
    marg = marginal_mle_batch(k, a_mu)
    ml = mle_batch(k)
    ql = quasi_likelihood_batch(k)
    trials = {
        "alpha_mle": ml.alpha,
        "alpha_marginal": marg.alpha,
        "alpha_ql": ql.alpha,
        "mle_truncated": ml.truncated,
    }
    return Table2Row(
        mu, alpha, n, n_reps,
        *_summary(marg.alpha, alpha),
        *_summary(ml.alpha, alpha),
        *_summary(ql.alpha, alpha),
        pct_truncated=100.0 * float(ml.truncated.mean()),
        marginal_min=float(marg.alpha.min()),
        n_all_zero=int((k.sum(axis=1) == 0).sum()),
        trials=trials,
    )


def run_table2(grid=TABLE2_GRID, n_reps=1000, seed=0, a_mu=DEFAULT_A_MU):
    """Estimator comparison over ``grid`` of ``(mu, alpha, n)`` settings."""
    return [run_table2_row(mu, a, n, n_reps, seed, i, a_mu) for i, (mu, a, n) in enumerate(grid)]


def write_table2_csv(rows, path):
    names = [f.name for f in fields(Table2Row) if f.name != "trials"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for r in rows:
            w.writerow([getattr(r, n) for n in names])


# --- DE detection studies --------------------------------------------------

ALPHA_LAWS = ("fixed_list", "uniform", "scaled_beta", "mean_linked")
MEAN_LAWS = ("fold_schedule", "quantile_schedule")
QUANTILE_LEVELS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95)
QUANTILE_FOLDS = (2.0, 0.5, 3.0, 1.0 / 3.0)


@dataclass
class ScenarioSpec:
    """A simulated two-group experiment.

    ``alpha_params`` depends on ``alpha_law``: a list of values
    (``fixed_list``), ``(lo, hi)`` (``uniform``), ``(a, b, scale)``
    (``scaled_beta``) or ``(c0, c1)`` for ``alpha = c0 + c1 / mu``
    (``mean_linked``).  ``fold_schedule`` multiplies the group-2 mean of DE
    gene ``i`` by ``fold_start - i * fold_step``; ``quantile_schedule`` puts
    DE genes at quantiles of the base-mean population with folds 2, 1/2, 3
    and 1/3, three genes each.
    """

    name: str = "custom"
    n_genes: int = 100
    n_deg: int = 20
    group_sizes: tuple = (3, 3)
    alpha_law: str = "uniform"
    alpha_params: tuple = (0.0, 0.7)
    mean_law: str = "fold_schedule"
    fold_start: float = 6.0
    fold_step: float = 0.25
    base_mean_range: tuple = (10.0, 1e4)
    abundances: tuple = None
    estimate_abundances: bool = False
    n_replicates: int = 1
    seed: int = 0
    a_mu: float = DEFAULT_A_MU
    mcmc_iter: int = 50_000
    mcmc_burn_in: int = 5_000
    threads: int = 1

    def __post_init__(self):
        self.group_sizes = tuple(int(x) for x in self.group_sizes)
        self.alpha_params = tuple(float(x) for x in self.alpha_params)
        self.base_mean_range = tuple(float(x) for x in self.base_mean_range)
        if self.abundances is not None:
            self.abundances = tuple(float(x) for x in self.abundances)
        self.validate()

    def validate(self):
        if not 0 <= self.n_deg <= self.n_genes:
            raise ValidationError("need 0 <= n_deg <= n_genes")
        if len(self.group_sizes) != 2 or min(self.group_sizes) < 1:
            raise ValidationError("group_sizes must be two positive integers")
        if self.alpha_law not in ALPHA_LAWS:
            raise ValidationError(f"alpha_law must be one of {ALPHA_LAWS}")
        if self.mean_law not in MEAN_LAWS:
            raise ValidationError(f"mean_law must be one of {MEAN_LAWS}")
        if self.mean_law == "fold_schedule" and self.n_deg and self.fold_start - (self.n_deg - 1) * self.fold_step <= 0:
            raise ValidationError("fold multipliers must stay positive")
        if self.abundances is not None and len(self.abundances) != sum(self.group_sizes):
            raise ValidationError("one abundance per sample required")
        if self.n_replicates < 1:
            raise ValidationError("n_replicates must be >= 1")

    @property
    def n_samples(self):
        return sum(self.group_sizes)


def study1(variant="b", **overrides):
    """100 genes, 20 DE with folds 6, 5.75, ..., 1.25, unit abundances."""
    law = {"a": ("mean_linked", (0.2, 2.0)), "b": ("uniform", (0.0, 0.7))}[variant]
    spec = dict(name=f"study1{variant}", alpha_law=law[0], alpha_params=law[1])
    spec.update(overrides)
    return ScenarioSpec(**spec)


def study2(variant=2, **overrides):
    """10^4 genes, 240 DE on a quantile schedule, abundances 0.8/1/1.2."""
    law = {2: ("scaled_beta", (0.3, 0.3, 0.5)), 3: ("mean_linked", (0.01, 0.5))}[variant]
    spec = dict(
        name=f"study{variant}",
        n_genes=10_000,
        n_deg=240,
        alpha_law=law[0],
        alpha_params=law[1],
        mean_law="quantile_schedule",
        base_mean_range=(10.0, 1e4),
        abundances=(0.8, 1.0, 1.2, 0.8, 1.0, 1.2),
    )
    spec.update(overrides)
    return ScenarioSpec(**spec)


PRESETS = {
    "study1a": lambda **kw: study1("a", **kw),
    "study1b": lambda **kw: study1("b", **kw),
    "study2": lambda **kw: study2(2, **kw),
    "study3": lambda **kw: study2(3, **kw),
}


@dataclass
class SimulatedData:
    matrix: CountMatrix
    is_deg: np.ndarray
    alpha: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    abundances: np.ndarray


def simulate_counts(spec, replicate=0):
    """Draw one count matrix with its ground truth."""
    rng = _rng(spec.seed, replicate)
    lo, hi = spec.base_mean_range
    base = np.exp(rng.uniform(np.log(lo), np.log(hi), size=spec.n_genes))
    mu1 = base.copy()
    mu2 = base.copy()
    is_deg = np.zeros(spec.n_genes, dtype=bool)
    is_deg[: spec.n_deg] = True
    if spec.mean_law == "fold_schedule":
        folds = spec.fold_start - spec.fold_step * np.arange(spec.n_deg)
        mu2[: spec.n_deg] = base[: spec.n_deg] * folds
    else:
        nulls = base[spec.n_deg:] if spec.n_deg < spec.n_genes else base
        q = np.quantile(nulls, QUANTILE_LEVELS)
        # 3 genes per (quantile, fold) pair; the 120-gene pattern repeats
        pattern_mu = np.repeat(np.repeat(q, len(QUANTILE_FOLDS)), 3)
        pattern_fold = np.tile(np.repeat(QUANTILE_FOLDS, 3), len(q))
        reps = int(np.ceil(spec.n_deg / pattern_mu.size)) if spec.n_deg else 0
        mu1[: spec.n_deg] = np.tile(pattern_mu, reps)[: spec.n_deg]
        mu2[: spec.n_deg] = mu1[: spec.n_deg] * np.tile(pattern_fold, reps)[: spec.n_deg]

    p = spec.alpha_params
    if spec.alpha_law == "fixed_list":
        alpha = np.resize(np.asarray(p), spec.n_genes)
    elif spec.alpha_law == "uniform":
        alpha = rng.uniform(p[0], p[1], size=spec.n_genes)
    elif spec.alpha_law == "scaled_beta":
        alpha = rng.beta(p[0], p[1], size=spec.n_genes) * p[2]
    else:
        alpha = p[0] + p[1] / mu1

    j1, j2 = spec.group_sizes
    s = np.ones(spec.n_samples) if spec.abundances is None else np.asarray(spec.abundances)
    means = np.concatenate([np.repeat(mu1[:, None], j1, axis=1), np.repeat(mu2[:, None], j2, axis=1)], axis=1)
    counts = sample_negbin_array(means * s[None, :], alpha[:, None], rng)
    ids = [f"g{i + 1:05d}" for i in range(spec.n_genes)]
    matrix = CountMatrix(ids, counts, spec.group_sizes, abundances=s)
    return SimulatedData(matrix, is_deg, alpha, mu1, mu2, s)


def roc_curve(is_deg, order):
    """(false positive proportion, true positive proportion) along ``order``."""
    truth = np.asarray(is_deg, dtype=bool)[order]
    n_deg = max(int(truth.sum()), 1)
    n_null = max(int((~truth).sum()), 1)
    tp = np.concatenate([[0], np.cumsum(truth)])
    fp = np.concatenate([[0], np.cumsum(~truth)])
    return fp / n_null, tp / n_deg


def true_fdp_curve(is_deg, order):
    truth = np.asarray(is_deg, dtype=bool)[order]
    return np.cumsum(~truth) / np.arange(1, truth.size + 1)


@dataclass
class StudyResult:
    spec: ScenarioSpec
    replicate: int
    data: SimulatedData
    run: object
    order: np.ndarray
    roc_fpr: np.ndarray
    roc_tpr: np.ndarray
    true_fdp: np.ndarray
    expected_fdp: np.ndarray

    @property
    def pi1_hat(self):
        return self.run.pi1_hat


def run_study(spec, replicate=0, *, threads=None):
    """Simulate one replicate of ``spec`` and run the full test on it.

    Genes are ranked by posterior probability (equivalently log BF10, ties by
    gene index); untestable all-zero genes go last.
    """
    data = simulate_counts(spec, replicate)
    s = estimate_abundances(data.matrix) if spec.estimate_abundances else data.abundances
    mcmc = McmcConfig(n_iter=spec.mcmc_iter, burn_in=spec.mcmc_burn_in, seed=int(_rng(spec.seed, replicate, 1).integers(2**63)))
    run = run_de_test(
        data.matrix, s, PriorConfig(spec.a_mu), mcmc, threads=spec.threads if threads is None else threads
    )
    lb = run.log_bfs
    lb_rank = np.where(np.isnan(lb), -np.inf, lb)
    order = ranking(lb_rank)
    fpr, tpr = roc_curve(data.is_deg, order)
    null = posterior_null_probs(lb_rank[order], run.pi1)
    null = np.where(np.isnan(lb[order]), 1.0, null)
    return StudyResult(spec, replicate, data, run, order, fpr, tpr, true_fdp_curve(data.is_deg, order), expected_fdp_curve(null))


def run_study_replicates(spec, **kw):
    return [run_study(spec, r, **kw) for r in range(spec.n_replicates)]


def read_scenario(path):
    """Parse a flat ``key = value`` scenario file.

    ``preset = study1b`` starts from a named preset; other keys override.
    Tuples are comma-separated.  ``#`` starts a comment.
    """
    raw = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key = value")
            key, value = (x.strip() for x in line.split("=", 1))
            raw[key] = value
    return scenario_from_dict(raw)


_TUPLE_KEYS = {"group_sizes", "alpha_params", "base_mean_range", "abundances"}


def scenario_from_dict(raw):
    raw = dict(raw)
    preset = raw.pop("preset", None)
    types = {f.name: f.type for f in fields(ScenarioSpec)}
    kw = {}
    for key, value in raw.items():
        if key not in types:
            raise ValidationError(f"unknown scenario key {key!r}")
        if key in _TUPLE_KEYS:
            kw[key] = tuple(float(x) for x in str(value).split(",") if x.strip()) if not isinstance(value, tuple) else value
        elif types[key] in ("int", int):
            kw[key] = int(float(value))
        elif types[key] in ("float", float):
            kw[key] = float(value)
        elif types[key] in ("bool", bool):
            kw[key] = str(value).lower() in ("1", "true", "yes")
        else:
            kw[key] = value
    if preset is not None:
        if preset not in PRESETS:
            raise ValidationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        return PRESETS[preset](**kw)
    return ScenarioSpec(**kw)


def scenario_to_dict(spec):
    return asdict(spec)


# --- bootstrap demo --------------------------------------------------------

@dataclass
class BootstrapResult:
    alpha_hat: np.ndarray
    sd: np.ndarray
    n_skipped: int


def bootstrap_alpha_mu(counts, n_boot=5000, seed=0):
    """Profile MLE ``(alpha_hat, sqrt(mu_hat + alpha_hat mu_hat^2))`` per resample.

    All-zero resamples are skipped and counted.
    """
    k = np.asarray(counts, dtype=np.float64).ravel()
    if k.size < 2:
        raise ValidationError("bootstrap needs at least 2 counts")
    rng = _rng(seed, 0)
    boot = k[rng.integers(0, k.size, size=(int(n_boot), k.size))]
    ok = boot.sum(axis=1) > 0
    est = mle_batch(boot[ok])
    sd = np.sqrt(est.mu + est.alpha * est.mu**2)
    return BootstrapResult(est.alpha, sd, int((~ok).sum()))
