"""Command-line front end.

Exit status: 0 on success, 1 on usage or validation errors, 2 when a
numerical routine fails.  Outputs are staged and only published when the
whole command succeeds.
"""
import argparse
import logging
import os
import sys

import numpy as np

from . import io, simlab
from .degtest import McmcConfig, run_de_test
from .errors import NumericalError, ValidationError
from .estimators import marginal_mle_batch, mle_batch, quasi_likelihood_batch
from .libnorm import estimate_abundances
from .nbcore import DEFAULT_A_MU, PriorConfig

log = logging.getLogger("nbdisp")

SEED_ENV = "NBDISP_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ValidationError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _positive(type_):
    def conv(text):
        v = type_(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return conv


def build_parser():
    p = _Parser(prog="nbdisp", description="Negative binomial overdispersion estimation and Bayesian DE tests.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND", parser_class=_Parser)

    q = sub.add_parser("normalize", help="median-of-ratios abundances per sample")
    q.add_argument("input", help="tab-separated count table")
    q.add_argument("-o", "--output", required=True)

    q = sub.add_parser("estimate", help="per-gene overdispersion estimates")
    q.add_argument("input")
    q.add_argument("-o", "--output", required=True)
    q.add_argument("--a-mu", type=_positive(float), default=DEFAULT_A_MU)

    q = sub.add_parser("test", help="Bayesian two-group differential expression test")
    q.add_argument("input")
    g = q.add_mutually_exclusive_group(required=True)
    g.add_argument("--groups", help="comma-separated group label per sample column")
    g.add_argument("--groups-file", help="two-column file: sample name, group label")
    q.add_argument("--abundances", default="estimate", help="'estimate', 'unit' or 'known:<csv>'")
    q.add_argument("-o", "--output", required=True)
    q.add_argument("--summary", help="JSON run summary (default: <output>.json)")
    q.add_argument("--curve", help="expected-FDP curve CSV")
    q.add_argument("--a-mu", type=_positive(float), default=DEFAULT_A_MU)
    q.add_argument("--pi1", type=float, help="override the estimated proportion of DE genes")
    t = q.add_mutually_exclusive_group()
    t.add_argument("--fdp-target", type=float, default=None, help="expected FDP target (default 0.05)")
    t.add_argument("--n-sel", type=int, help="select this many top genes instead")
    q.add_argument("--control-group", type=int, choices=(1, 2), default=1)
    q.add_argument("--method", choices=("auto", "quadrature", "mcmc"), default="auto")
    q.add_argument("--n-iter", type=_positive(int), default=50_000)
    q.add_argument("--burn-in", type=int, default=5_000)
    q.add_argument("--thin", type=_positive(int), default=1)
    q.add_argument("--mu-kernel", choices=("f_proposal", "random_walk"), default="f_proposal")
    q.add_argument("--seed", type=int)
    q.add_argument("--threads", type=_positive(int), default=1)

    q = sub.add_parser("simulate", help="run a simulation scenario or the estimator comparison")
    q.add_argument("scenario", nargs="?", help="key = value scenario file")
    q.add_argument("--table2", action="store_true", help="run the estimator comparison grid instead")
    q.add_argument("--reps", type=_positive(int), default=1000, help="samples per grid row (--table2)")
    q.add_argument("-o", "--output", required=True, help="output directory")
    q.add_argument("--seed", type=int)
    q.add_argument("--threads", type=_positive(int), default=None)

    q = sub.add_parser("bootstrap", help="bootstrap the profile MLE of (alpha, sd)")
    q.add_argument("input", help="counts: a comma-separated list or a file with one count per line")
    q.add_argument("-o", "--output", required=True)
    q.add_argument("--n-boot", type=_positive(int), default=5000)
    q.add_argument("--seed", type=int)
    return p


def cmd_normalize(args, out):
    m = io.ingest_tsv(args.input)
    s = estimate_abundances(m)
    io.write_csv(out.path(args.output), "normalize", zip(m.sample_names, s))
    return 0


def cmd_estimate(args, out):
    m = io.ingest_tsv(args.input)
    k = m.counts.astype(np.float64)
    if k.shape[1] < 2:
        raise ValidationError("estimation needs at least 2 samples per gene")
    ml = mle_batch(k)
    marg = marginal_mle_batch(k, args.a_mu)
    ql = quasi_likelihood_batch(k)
    sd = np.sqrt(ml.mu + ml.alpha * ml.mu**2)
    rows = zip(m.gene_ids, ml.alpha, marg.alpha, ql.alpha, ml.mu, sd, ml.truncated)
    io.write_csv(out.path(args.output), "estimate", rows)
    return 0


def _test_abundances(spec, matrix):
    if spec == "estimate":
        return estimate_abundances(matrix)
    if spec == "unit":
        return np.ones(matrix.n_samples)
    if spec.startswith("known:"):
        return io.read_abundances(spec[len("known:"):], matrix.sample_names)
    raise ValidationError(f"--abundances must be 'estimate', 'unit' or 'known:<csv>', got {spec!r}")


def cmd_test(args, out):
    raw = io.ingest_tsv(args.input)
    if args.groups is not None:
        labels = [x.strip() for x in args.groups.split(",")]
    else:
        labels = io.read_group_file(args.groups_file, raw.sample_names)
    m = io.ingest_tsv(args.input, labels)
    s = _test_abundances(args.abundances, m)
    if args.burn_in < 0 or args.burn_in >= args.n_iter:
        raise ValidationError("--burn-in must satisfy 0 <= burn-in < n-iter")
    mcmc = McmcConfig(args.n_iter, args.burn_in, args.thin, _seed(args), args.mu_kernel)
    run = run_de_test(
        m, s, PriorConfig(args.a_mu), mcmc,
        pi1=args.pi1, control_group=args.control_group, method=args.method, threads=args.threads,
    )
    if args.n_sel is not None:
        sel = run.select(n_sel=args.n_sel)
    else:
        sel = run.select(max_expected_fdp=0.05 if args.fdp_target is None else args.fdp_target)

    rows = []
    chosen = set(sel.selected.tolist())
    for rank, i in enumerate(sel.order, 1):
        r = run.results[i]
        rows.append([
            r.gene_id, r.log_bf10, r.post_prob_h1, r.mu1_hat, r.mu2_hat, r.log2_fold_change,
            rank, r.method, i in chosen, sel.curve[rank - 1],
        ])
    for r in run.results:
        if not r.testable:
            rows.append([r.gene_id, "", "", r.mu1_hat, r.mu2_hat, r.log2_fold_change, "", r.method, False, ""])
    io.write_csv(out.path(args.output), "test", rows)

    summary = {
        "pi1_hat": run.pi1_hat,
        "pi1_used": run.pi1,
        "u0": run.hyper_h0.u,
        "v0": run.hyper_h0.v,
        "u1": run.hyper_h1.u,
        "v1": run.hyper_h1.v,
        "n_selected": sel.n_selected,
        "expected_fdp": sel.expected_fdp,
        "n_genes": m.n_genes,
        "n_untestable": sum(not r.testable for r in run.results),
        "method": run.results[sel.order[0]].method if sel.order.size else None,
        "abundances": dict(zip(m.sample_names, map(float, s))),
        "groups": {"group1": m.sample_names[: m.group_sizes[0]], "group2": m.sample_names[m.group_sizes[0]:]},
    }
    summary_path = args.summary or os.path.splitext(args.output)[0] + ".json"
    io.write_json(out.path(summary_path), summary)
    if args.curve:
        io.write_csv(out.path(args.curve), "curve", zip(range(1, sel.curve.size + 1), sel.curve), header=["n_selected", "expected_fdp"])
    return 0


def _write_study(res, outdir, out):
    r = res.replicate
    d = res.data
    lb = res.run.log_bfs
    pp = np.array([x.post_prob_h1 for x in res.run.results])
    genes = zip(d.matrix.gene_ids, d.is_deg, d.alpha, d.mu1, d.mu2, lb, pp)
    io.write_csv(
        out.path(os.path.join(outdir, f"genes_{r}.csv")), "curve", genes,
        header=["gene_id", "is_deg", "alpha", "mu1", "mu2", "log_bf10", "post_prob_h1"],
    )
    io.write_csv(out.path(os.path.join(outdir, f"roc_{r}.csv")), "curve", zip(res.roc_fpr, res.roc_tpr), header=["fpr", "tpr"])
    n = np.arange(1, res.true_fdp.size + 1)
    io.write_csv(
        out.path(os.path.join(outdir, f"fdp_{r}.csv")), "curve", zip(n, res.true_fdp, res.expected_fdp),
        header=["n_selected", "true_fdp", "expected_fdp"],
    )


def cmd_simulate(args, out):
    seed = _seed(args)
    if args.table2:
        rows = simlab.run_table2(simlab.TABLE2_GRID, n_reps=args.reps, seed=seed)
        simlab.write_table2_csv(rows, out.path(os.path.join(args.output, "table2.csv")))
        return 0
    if not args.scenario:
        raise ValidationError("give a scenario file or --table2")
    spec = simlab.read_scenario(args.scenario)
    if args.seed is not None or os.environ.get(SEED_ENV) is not None:
        spec.seed = seed
    summary = {"scenario": simlab.scenario_to_dict(spec), "replicates": []}
    for res in simlab.run_study_replicates(spec, threads=args.threads):
        _write_study(res, args.output, out)
        summary["replicates"].append({
            "replicate": res.replicate,
            "pi1_hat": res.pi1_hat,
            "u0": res.run.hyper_h0.u, "v0": res.run.hyper_h0.v,
            "u1": res.run.hyper_h1.u, "v1": res.run.hyper_h1.v,
        })
    io.write_json(out.path(os.path.join(args.output, "summary.json")), summary)
    return 0


def _read_counts_arg(text):
    if os.path.exists(text):
        toks = []
        for line in io._read_lines(text):
            toks.extend(t for t in line.replace(",", " ").split() if t)
    else:
        toks = [t for t in text.split(",") if t.strip()]
    try:
        return np.array([io._parse_count(t.strip(), None, None) for t in toks], dtype=np.float64)
    except ValidationError as e:
        raise ValidationError(f"bootstrap input: {e}") from None


def cmd_bootstrap(args, out):
    k = _read_counts_arg(args.input)
    res = simlab.bootstrap_alpha_mu(k, args.n_boot, _seed(args))
    if res.n_skipped:
        print(f"nbdisp: skipped {res.n_skipped} all-zero resamples", file=sys.stderr)
    io.write_csv(out.path(args.output), "bootstrap", zip(res.alpha_hat, res.sd))
    return 0


COMMANDS = {
    "normalize": cmd_normalize,
    "estimate": cmd_estimate,
    "test": cmd_test,
    "simulate": cmd_simulate,
    "bootstrap": cmd_bootstrap,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        with io.staged_outputs() as out:
            return COMMANDS[args.command](args, out)
    except ValidationError as e:
        print(f"nbdisp: error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"nbdisp: error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"nbdisp: numerical failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
