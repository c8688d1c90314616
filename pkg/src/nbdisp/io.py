"""Reading count tables and writing result files.

Result CSVs start with a ``# schema: <name>/<version>`` comment line, then a
header row; quoting follows RFC 4180 via the :mod:`csv` module.
"""
import csv
import json
import os
import tempfile
from contextlib import contextmanager

import numpy as np

from .errors import ParseError, ValidationError
from .libnorm import CountMatrix

SCHEMAS = {
    "normalize": ("nbdisp-normalize", 1, ["sample", "abundance"]),
    "estimate": ("nbdisp-estimate", 1, ["gene_id", "alpha_mle", "alpha_marginal", "alpha_ql", "mu_hat", "sd_hat", "mle_truncated"]),
    "test": (
        "nbdisp-test",
        1,
        [
            "gene_id", "log_bf10", "post_prob_h1", "mu1_hat", "mu2_hat",
            "log2_fold_change", "rank", "method", "selected", "expected_fdp",
        ],
    ),
    "bootstrap": ("nbdisp-bootstrap", 1, ["alpha_hat", "sd"]),
    "curve": ("nbdisp-curve", 1, ["x", "y"]),
}


def _read_lines(path):
    # universal newlines: CRLF and LF read identically
    with open(path, newline=None, encoding="utf-8") as fh:
        return fh.read().splitlines()


def _parse_count(tok, lineno, path):
    try:
        value = int(tok)
    except ValueError:
        try:
            f = float(tok)
        except ValueError:
            raise ParseError(f"not a number: {tok!r}", lineno, path) from None
        if not np.isfinite(f) or f != int(f):
            raise ParseError(f"count is not an integer: {tok!r}", lineno, path) from None
        value = int(f)
    if value < 0:
        raise ParseError(f"negative count: {tok!r}", lineno, path)
    return value


def group_order(labels):
    """Stable column order putting the first label seen (group 1) first."""
    labels = [str(x) for x in labels]
    uniq = list(dict.fromkeys(labels))
    if len(uniq) != 2:
        raise ValidationError(f"need exactly 2 group labels, got {len(uniq)}: {uniq}")
    order = [j for j, g in enumerate(labels) if g == uniq[0]] + [j for j, g in enumerate(labels) if g == uniq[1]]
    sizes = (labels.count(uniq[0]), labels.count(uniq[1]))
    return np.array(order), sizes, uniq


def ingest_tsv(path, labels=None):
    """Parse a tab-separated count table.

    The first row holds ``gene_id`` (any name) followed by sample names; each
    later row is a gene id and one non-negative integer per sample.  Blank
    lines are skipped.  With ``labels`` (one per column) the columns are
    reordered so group 1 comes first; ``sample_names`` follows the new order.
    """
    lines = _read_lines(path)
    header_at = next((i for i, ln in enumerate(lines) if ln.strip()), None)
    if header_at is None:
        raise ParseError("empty file", None, path)
    header = lines[header_at].split("\t")
    samples = [h.strip() for h in header[1:]]
    if not samples:
        raise ParseError("header has no sample columns", header_at + 1, path)
    ids, rows = [], []
    seen = {}
    for i in range(header_at + 1, len(lines)):
        line = lines[i]
        if not line.strip():
            continue
        lineno = i + 1
        toks = line.split("\t")
        if len(toks) != len(samples) + 1:
            raise ParseError(f"expected {len(samples) + 1} fields, found {len(toks)}", lineno, path)
        gid = toks[0].strip()
        if not gid:
            raise ParseError("empty gene id", lineno, path)
        if gid in seen:
            raise ValidationError(f"{path}: duplicate gene id {gid!r} on lines {seen[gid]} and {lineno}")
        seen[gid] = lineno
        ids.append(gid)
        rows.append([_parse_count(t.strip(), lineno, path) for t in toks[1:]])
    if not rows:
        raise ParseError("no data rows", None, path)
    counts = np.array(rows, dtype=np.int64)
    if labels is None:
        return CountMatrix(ids, counts, None, sample_names=samples)
    if len(labels) != len(samples):
        raise ValidationError(f"{len(labels)} group labels for {len(samples)} sample columns")
    order, sizes, _ = group_order(labels)
    return CountMatrix(ids, counts[:, order], sizes, sample_names=[samples[j] for j in order])


def read_two_column(path):
    """``(name, value, line)`` triples from a comma- or tab-separated file.

    Blank lines and ``#`` comments are skipped; a header row, if present, is
    returned like any other row.
    """
    out = []
    for i, line in enumerate(_read_lines(path), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        delim = "\t" if "\t" in s else ","
        toks = next(csv.reader([s], delimiter=delim))
        if len(toks) != 2:
            raise ParseError(f"expected 2 fields, found {len(toks)}", i, path)
        out.append((toks[0].strip(), toks[1].strip(), i))
    return out


def read_group_file(path, sample_names):
    """Sidecar ``sample, label`` file -> one label per sample column."""
    mapping = {name: label for name, label, _ in read_two_column(path)}
    missing = [s for s in sample_names if s not in mapping]
    if missing:
        raise ValidationError(f"{path}: no group label for samples {missing}")
    return [mapping[s] for s in sample_names]


def read_abundances(path, sample_names):
    """Known abundances keyed by sample name (``sample,abundance`` rows)."""
    values = {}
    for name, value, lineno in read_two_column(path):
        try:
            values[name] = float(value)
        except ValueError:
            if lineno == 1 or not values:
                continue  # header row
            raise ParseError(f"abundance is not a number: {value!r}", lineno, path) from None
    missing = [s for s in sample_names if s not in values]
    if missing:
        raise ValidationError(f"{path}: no abundance for samples {missing}")
    s = np.array([values[n] for n in sample_names])
    if not np.all(np.isfinite(s) & (s > 0)):
        raise ValidationError(f"{path}: abundances must be positive and finite")
    return s


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path, kind, rows, header=None):
    """Write ``rows`` under the schema named ``kind`` (or an explicit ``header``)."""
    name, version, cols = SCHEMAS[kind]
    cols = header or cols
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema: {name}/{version}\r\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path):
    """Read a file written by :func:`write_csv`: ``(schema, header, rows)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# schema:"):
            raise ParseError("missing schema comment line", 1, path)
        schema = first.split(":", 1)[1].strip()
        reader = csv.reader(fh)
        header = next(reader)
        rows = [dict(zip(header, r)) for r in reader]
    return schema, header, rows


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


class OutputSet:
    """Stage output files in temporaries; publish all on success, none on failure."""

    def __init__(self):
        self._staged = []
        self.published = []

    def path(self, final):
        d = os.path.dirname(os.path.abspath(final))
        os.makedirs(d, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".nbdisp-", dir=d)
        os.close(fd)
        self._staged.append((tmp, final))
        return tmp

    def commit(self):
        for tmp, final in self._staged:
            os.replace(tmp, final)
            self.published.append(final)
        self._staged = []

    def discard(self):
        for tmp, _ in self._staged:
            if os.path.exists(tmp):
                os.remove(tmp)
        self._staged = []


@contextmanager
def staged_outputs():
    out = OutputSet()
    try:
        yield out
    except BaseException:
        out.discard()
        raise
    out.commit()
