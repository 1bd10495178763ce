"""Command-line interface.

    sics scatter   --input X.csv --pair robust --out DIR
    sics ics       --input X.csv --pair fobi --k 3 --out DIR
    sics sics      --input X.csv --pair robust --k 3 --r 7 --seed 1 --out DIR
    sics stability --input X.csv --n-subsamples 1500 --seed 1 --out DIR
    sics causal    --input X.csv --n-boot 200 --edge-threshold 0.4 --out DIR
    sics simulate  --study s1 --set N=20 --set "n=[500,1000]" --plot-data --out DIR
    sics bench     --set "p=[10,20]" --out DIR

Every run writes its fully resolved configuration into its JSON output;
``--config`` reads such a file back.  Exit status is 0 on success, 1 when
a computation fails and 2 for invalid input or configuration.
"""

import argparse
import csv
from dataclasses import asdict, dataclass, field, fields
import json
import logging
import os
import sys
import tempfile
import warnings

import numpy as np

from . import causal, simlab, stability
from .errors import ConfigError, ParseError, RaggedRows, SicsError
from .ics import ics_solve
from .scatter import ESTIMATORS, PAIRS, compute_pair, estimate, resolve_pair
from .sparse_ics import SicsConfig, sics_fit

log = logging.getLogger("sics")

SCHEMA_VERSION = 1
COMMANDS = ("scatter", "ics", "sics", "stability", "causal", "simulate", "bench")
THREADS_ENV = "SICS_THREADS"


# ------------------------------------------------------------------ input


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def ingest_csv(path, has_header=None):
    """Read a rectangular numeric CSV file.

    Parameters
    ----------
    path : str
    has_header : bool, optional
        If None the first line is a header exactly when it has a
        non-numeric cell.

    Returns
    -------
    X : (n, p) ndarray
    names : list of str
        Header cells, or ``x1..xp``.

    Raises
    ------
    ParseError
        For a non-numeric cell; ``row`` and ``column`` are 1-based file
        positions.
    RaggedRows
        If a line has a different number of cells than the first.
    """
    try:
        with open(path, newline="") as fh:
            lines = [(i + 1, row) for i, row in enumerate(csv.reader(fh))
                     if row and any(c.strip() for c in row)]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    if not lines:
        raise ParseError(f"{path} is empty")
    first = [c.strip() for c in lines[0][1]]
    if has_header is None:
        has_header = not all(_is_number(c) for c in first)
    names = first if has_header else [f"x{j + 1}" for j in range(len(first))]
    body = lines[1:] if has_header else lines
    width = len(first)
    data = np.empty((len(body), width))
    for k, (lineno, row) in enumerate(body):
        if len(row) != width:
            raise RaggedRows(f"line {lineno} has {len(row)} fields, expected {width}",
                             row=lineno, column=min(len(row), width) + 1)
        for j, cell in enumerate(row):
            try:
                data[k, j] = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell.strip()!r} at row {lineno}, "
                                 f"column {j + 1}", row=lineno, column=j + 1) from None
    if not np.all(np.isfinite(data)):
        r, c = np.argwhere(~np.isfinite(data))[0]
        raise ParseError(f"non-finite value at row {body[r][0]}, column {c + 1}",
                         row=body[r][0], column=int(c) + 1)
    return data, names


# ----------------------------------------------------------------- output


def write_atomic(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(obj):
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def _csv_text(header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- config


@dataclass
class RunConfig:
    """Fully resolved settings of one run; echoed into every JSON output.

    ``threads`` and ``out`` are not echoed: outputs must not depend on them.
    """

    command: str
    input: str | None = None
    has_header: bool | None = None
    pair: object = "fobi"
    estimator: str | None = None
    k: int | None = None
    r: list | None = None
    lam: list | None = None
    tol: float = 1e-6
    max_iter: int = 200
    seed: int = 0
    threads: int = 1
    n_subsamples: int = 1500
    n_boot: int = 1000
    edge_threshold: float = causal.DEFAULT_EDGE_THRESHOLD
    prune_tol: float = causal.DEFAULT_PRUNE_TOL
    study: str = "s1"
    overrides: dict = field(default_factory=dict)
    plot_data: bool = False
    out: str = "sics_out"

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.command not in ("simulate", "bench") and not self.input:
            raise ConfigError(f"{self.command} needs --input")
        try:
            resolve_pair(self.pair)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        if self.estimator is not None and self.estimator not in ESTIMATORS:
            raise ConfigError(f"--estimator must be one of {ESTIMATORS}")
        if self.r is not None and self.lam is not None:
            raise ConfigError("give --r or --lam, not both")
        if self.k is not None and self.k < 1:
            raise ConfigError("--k must be positive")
        if self.r is not None and min(self.r) < 1:
            raise ConfigError("--r values must be positive")
        if self.lam is not None and min(self.lam) < 0:
            raise ConfigError("--lam values must be non-negative")
        if not self.tol > 0 or self.max_iter < 1:
            raise ConfigError("--tol must be positive and --max-iter at least 1")
        if self.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if self.n_subsamples < 1 or self.n_boot < 1:
            raise ConfigError("--n-subsamples and --n-boot must be positive")
        if not 0 <= self.edge_threshold <= 1:
            raise ConfigError("--edge-threshold must lie in [0, 1]")
        if self.prune_tol < 0:
            raise ConfigError("--prune-tol must be non-negative")
        if self.command in ("simulate", "bench"):
            study = "timing" if self.command == "bench" else self.study
            try:
                simlab.study_params(study, self.overrides)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return self

    def echo(self):
        d = asdict(self)
        d.pop("threads")
        d.pop("out")
        if not isinstance(d["pair"], str):
            d["pair"] = [list(s) for s in resolve_pair(d["pair"])]
        return d


def _parse_list(text, kind):
    try:
        return [kind(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as a list of {kind.__name__}") from None


def _parse_set(items):
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            out[key.strip()] = json.loads(val)
        except json.JSONDecodeError:
            out[key.strip()] = val
    return out


def _threads(flag):
    if flag is not None:
        val = flag
    else:
        val = os.environ.get(THREADS_ENV, "1")
    if str(val) == "auto":
        return os.cpu_count() or 1
    try:
        return int(val)
    except ValueError:
        raise ConfigError(f"threads must be an integer or 'auto', got {val!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sics", description="Sparse invariant coordinate selection toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        if data:
            p.add_argument("--input", help="numeric CSV file")
            hdr = p.add_mutually_exclusive_group()
            hdr.add_argument("--header", dest="has_header", action="store_const", const=True,
                             default=None, help="first line holds column names")
            hdr.add_argument("--no-header", dest="has_header", action="store_const",
                             const=False, help="first line is data")
        p.add_argument("--config", help="JSON config (as echoed by a previous run)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", help=f"worker count or 'auto' (env {THREADS_ENV})")
        p.add_argument("--out", help="output directory (default sics_out)")

    def model(p):
        p.add_argument("--pair", help=f"scatter pair: {', '.join(PAIRS)} "
                                      "or a JSON [[id, params], [id, params]]")
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", type=int, dest="max_iter")

    p = sub.add_parser("scatter", help="scatter matrices of a data set")
    common(p)
    model(p)
    p.add_argument("--estimator", help=f"single estimator: {', '.join(ESTIMATORS)}")

    p = sub.add_parser("ics", help="invariant coordinate selection")
    common(p)
    model(p)
    p.add_argument("--k", type=int)

    for name, text in (("sics", "sparse ICS"), ("causal", "bootstrap causal graph")):
        p = sub.add_parser(name, help=text)
        common(p)
        model(p)
        p.add_argument("--k", type=int)
        p.add_argument("--r", help="nonzeros per component (one value or a list)")
        p.add_argument("--lam", help="LASSO penalty per component (one value or a list)")
        if name == "causal":
            p.add_argument("--n-boot", type=int, dest="n_boot")
            p.add_argument("--edge-threshold", type=float, dest="edge_threshold")
            p.add_argument("--prune-tol", type=float, dest="prune_tol")

    p = sub.add_parser("stability", help="stability paths for the first component")
    common(p)
    model(p)
    p.add_argument("--n-subsamples", type=int, dest="n_subsamples")

    p = sub.add_parser("simulate", help="run a simulation study")
    common(p, data=False)
    p.add_argument("--study", choices=simlab.STUDIES)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a study parameter (JSON value)")
    p.add_argument("--plot-data", action="store_true", default=None, dest="plot_data",
                   help="also write median/MAD aggregates per figure cell")

    p = sub.add_parser("bench", help="timing study of the SICS phases")
    common(p, data=False)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    return parser


def resolve_config(args):
    """Merge ``--config`` with explicit flags (flags win) into a RunConfig."""
    base = {}
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        base = doc.get("config", doc)
        known = {f.name for f in fields(RunConfig)}
        base = {k: v for k, v in base.items() if k in known}
    base["command"] = args.command
    flags = vars(args)
    for key in ("input", "has_header", "estimator", "k", "tol", "max_iter", "seed",
                "n_subsamples", "n_boot", "edge_threshold", "prune_tol", "study",
                "plot_data", "out"):
        if flags.get(key) is not None:
            base[key] = flags[key]
    if flags.get("pair") is not None:
        pair = flags["pair"]
        base["pair"] = json.loads(pair) if pair.strip().startswith("[") else pair
    if flags.get("r") is not None:
        base["r"] = _parse_list(flags["r"], int)
        base.pop("lam", None)
    if flags.get("lam") is not None:
        base["lam"] = _parse_list(flags["lam"], float)
        base.pop("r", None)
    if flags.get("set"):
        base["overrides"] = {**base.get("overrides", {}), **_parse_set(flags["set"])}
    if args.command == "stability" and "pair" not in base:
        base["pair"] = "fobi"
    if args.command == "causal" and "pair" not in base:
        base["pair"] = "robust"
    base["threads"] = _threads(flags.get("threads"))
    return RunConfig(**base).validate()


# ---------------------------------------------------------------- commands


def _envelope(cfg, **payload):
    return {"schema_version": SCHEMA_VERSION, "command": cfg.command,
            "config": cfg.echo(), **payload}


def _sics_config(cfg, p, default_k):
    k = cfg.k if cfg.k is not None else default_k
    if cfg.lam is not None:
        return SicsConfig(k=k, penalties=_per_component(cfg.lam, k),
                          tol=cfg.tol, max_outer_iter=cfg.max_iter)
    r = cfg.r if cfg.r is not None else [p]
    return SicsConfig(k=k, counts=_per_component(r, k), tol=cfg.tol,
                      max_outer_iter=cfg.max_iter)


def _per_component(vals, k):
    if len(vals) == 1:
        return tuple(vals) * k
    if len(vals) != k:
        raise ConfigError(f"expected 1 or {k} per-component values, got {len(vals)}")
    return tuple(vals)


def _load(cfg):
    X, names = ingest_csv(cfg.input, cfg.has_header)
    if X.shape[0] < X.shape[1] + 2:
        raise ConfigError(f"need at least p + 2 = {X.shape[1] + 2} data rows, "
                          f"got {X.shape[0]}")
    return X, names


def cmd_scatter(cfg):
    X, names = _load(cfg)
    if cfg.estimator:
        # a single estimator on the raw (unrescaled) scale
        pairs_out = [estimate(X, cfg.estimator, dict(resolve_pair_params(cfg)),
                              tol=cfg.tol, threads=cfg.threads)]
    else:
        pairs_out = list(compute_pair(X, cfg.pair, tol=cfg.tol, threads=cfg.threads))
    doc = _envelope(cfg, variables=names, scatters=[S.to_dict() for S in pairs_out])
    return {"scatter.json": _json_text(doc)}


def resolve_pair_params(cfg):
    """Parameters for ``--estimator`` taken from the pair when it names the same id."""
    for est_id, params in resolve_pair(cfg.pair):
        if est_id == cfg.estimator:
            return params
    return {}


def cmd_ics(cfg):
    X, names = _load(cfg)
    S1, S2 = compute_pair(X, cfg.pair, tol=cfg.tol, threads=cfg.threads)
    sol = ics_solve(S1, S2, cfg.k)
    doc = _envelope(cfg, variables=names, **sol.to_dict())
    return {"ics.json": _json_text(doc)}


def cmd_sics(cfg):
    X, names = _load(cfg)
    p = X.shape[1]
    S1, S2 = compute_pair(X, cfg.pair, tol=cfg.tol, threads=cfg.threads)
    scfg = _sics_config(cfg, p, default_k=1)
    try:
        scfg.check(p)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sol = sics_fit(S1, S2, scfg)
    notes = sorted({f"{w.category.__name__}: {w.message}" for w in caught})
    doc = _envelope(cfg, variables=names, warnings=notes, **sol.to_dict())
    return {"sics.json": _json_text(doc)}


def cmd_stability(cfg):
    X, names = _load(cfg)
    paths = stability.stability_paths(X, cfg.pair, cfg.n_subsamples, cfg.seed,
                                      threads=cfg.threads, names=names,
                                      max_outer_iter=cfg.max_iter)
    doc = _envelope(cfg, **paths.summary())
    return {"stability.csv": _csv_text(["variable", "r", "probability"], paths.rows()),
            "stability.json": _json_text(doc)}


def cmd_causal(cfg):
    X, names = _load(cfg)
    p = X.shape[1]
    if cfg.k is not None and cfg.k != p:
        raise ConfigError(f"causal discovery estimates all p = {p} components (--k {p})")
    scfg = _sics_config(cfg, p, default_k=p)
    try:
        scfg.check(p)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    graph = causal.bootstrap_causal(X, cfg.pair, scfg, cfg.n_boot, cfg.edge_threshold,
                                    cfg.seed, cfg.prune_tol, threads=cfg.threads,
                                    names=names)
    doc = _envelope(cfg, **graph.to_dict())
    return {"causal.json": _json_text(doc), "causal.dot": graph.to_dot()}


def _table_text(df):
    return df.to_csv(index=False, lineterminator="\n", float_format="%.17g")


def cmd_simulate(cfg):
    df = simlab.run_study(cfg.study, cfg.overrides, cfg.seed, cfg.threads)
    doc = _envelope(cfg, params=df.attrs["params"], failures=df.attrs["failures"],
                    rows=len(df))
    out = {"simulate.csv": _table_text(df), "simulate.json": _json_text(doc)}
    if cfg.plot_data:
        out["simulate_plot.csv"] = _table_text(simlab.plot_data(df))
        if cfg.study == "s2" and len(df):
            out["simulate_ropt.csv"] = _table_text(simlab.optimal_r(df))
    return out


def cmd_bench(cfg):
    df = simlab.run_study("timing", cfg.overrides, cfg.seed, cfg.threads)
    cells = (df[["pair", "n", "p", "q", "r"]].drop_duplicates()
             .sort_values(["pair", "n", "p"]).to_dict("records"))
    doc = _envelope(cfg, params=df.attrs["params"], failures=df.attrs["failures"],
                    cells=[{k: (int(v) if isinstance(v, (int, np.integer)) else v)
                            for k, v in c.items()} for c in cells],
                    timings_file="bench_timings.csv")
    # wall-clock seconds vary run to run; they live in their own file
    return {"bench.json": _json_text(doc),
            "bench_timings.csv": _table_text(simlab.plot_data(df))}


HANDLERS = {"scatter": cmd_scatter, "ics": cmd_ics, "sics": cmd_sics,
            "stability": cmd_stability, "causal": cmd_causal,
            "simulate": cmd_simulate, "bench": cmd_bench}


def run(cfg):
    """Execute ``cfg`` and write its artifacts; returns the written paths."""
    outputs = HANDLERS[cfg.command](cfg)
    paths = []
    for name, text in outputs.items():
        path = os.path.join(cfg.out, name)
        write_atomic(path, text)
        paths.append(path)
    return paths


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        paths = run(cfg)
    except ConfigError as exc:
        print(f"sics: configuration error: {exc}", file=sys.stderr)
        return 2
    except (SicsError, np.linalg.LinAlgError) as exc:
        print(f"sics: computation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"sics: invalid input: {exc}", file=sys.stderr)
        return 2
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
