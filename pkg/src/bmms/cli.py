"""
Batch front end: ``bmms simulate | fit | predict | summarize``.

Settings come from a flat ``key = value`` file (``--config``) and are
overridden by command-line flags and ``--set key=value``. Relative paths in
a config file are taken relative to that file. Exit codes: 0 success, 1 usage,
config or parse error, 2 missing input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
from collections import Counter
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .conjugate import GaussianPrior, NoisePrior
from .errors import (
    BMMSError,
    InvalidConfigError,
    InvalidInputError,
    NumericalSingularityError,
)
from .multiscale import MultiscaleDesign
from .partitions import ChangepointPartition, VoronoiPartition, partition_to_operator
from .sampler import (
    ModuleSpec,
    conjugate_means,
    effective_sample_size,
    merge_chains,
    posterior_summaries,
    run_chains,
    split_rhat,
)
from .simulate import (
    SimulationDesign,
    auc_score,
    compute_metrics,
    gen_design,
    gen_out_of_sample,
    rss_ladder,
)

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_NUMERIC = 0, 1, 2, 3
SECTION = "bmms"


class MissingInputError(BMMSError, FileNotFoundError):
    pass


class ParseError(BMMSError, ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


# ---------------------------------------------------------------- config

class RunConfig:
    """Flat string settings with typed getters.

    ``base`` is the directory that relative paths are resolved against.
    """

    def __init__(self, values: dict, base: Path):
        self.values = {k.lower(): v for k, v in values.items()}
        self.base = base

    @classmethod
    def load(cls, path=None, overrides=None):
        values, base = {}, Path.cwd()
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise MissingInputError(f"config file not found: {path}")
            cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                           interpolation=None)
            try:
                cp.read_string(f"[{SECTION}]\n" + path.read_text())
            except configparser.Error as err:
                raise InvalidConfigError(f"cannot parse {path}: {err}") from err
            values = dict(cp[SECTION])
            base = path.resolve().parent
        cfg = cls(values, base)
        for k, v in (overrides or {}).items():
            if v is not None:
                cfg.values[k.lower()] = str(v)
        return cfg

    def has(self, key):
        return key in self.values and self.values[key] != ""

    def text(self, key, default=None):
        if self.has(key):
            return self.values[key]
        if default is None:
            raise InvalidConfigError(f"missing required setting '{key}'")
        return default

    def _typed(self, key, default, cast, what):
        if not self.has(key):
            if default is None:
                raise InvalidConfigError(f"missing required setting '{key}'")
            return default
        try:
            return cast(self.values[key])
        except ValueError as err:
            raise InvalidConfigError(f"setting '{key}' must be {what}") from err

    def integer(self, key, default=None):
        return self._typed(key, default, int, "an integer")

    def number(self, key, default=None):
        return self._typed(key, default, float, "a number")

    def flag(self, key, default=False):
        if not self.has(key):
            return default
        v = self.values[key].strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise InvalidConfigError(f"setting '{key}' must be true or false")

    def items(self, key, cast=str, default=None):
        if not self.has(key):
            if default is None:
                raise InvalidConfigError(f"missing required setting '{key}'")
            return default
        try:
            return [cast(s.strip()) for s in self.values[key].split(",") if s.strip()]
        except ValueError as err:
            raise InvalidConfigError(f"setting '{key}' has a malformed entry") from err

    def path(self, key, default=None):
        p = Path(self.text(key, default))
        return p if p.is_absolute() else self.base / p


# ---------------------------------------------------------------- csv io

def write_csv(path, header, rows) -> None:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(f"{v:.17g}" for v in r) + "\n")


def read_csv(path):
    """Return ``(header, array)``. Every row must be numeric with the header's width."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, expected a header row") from None
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ParseError(f"{path}:{line}: non-numeric value") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return header, np.array(rows)


def read_vector(path):
    _, a = read_csv(path)
    if a.shape[1] != 1:
        raise ParseError(f"{path}: expected a single column, got {a.shape[1]}")
    return a[:, 0]


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"artifact not found: {path}")
    return json.loads(path.read_text())


def _out_dir(cfg):
    out = cfg.path("out", ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise InvalidConfigError(f"cannot create output directory {out}: {err}") from err
    return out


# ---------------------------------------------------------------- simulate

def _simulation_design(cfg):
    link = "probit" if cfg.flag("probit") else cfg.text("link", "identity")
    return SimulationDesign(
        n=cfg.integer("n", 60), p=cfg.integer("p", 128), rho=cfg.number("rho", 0.98),
        sigma=cfg.number("sigma", 1.0), function=cfg.text("function", "blocks"),
        seed=cfg.integer("seed"), link=link)


def cmd_simulate(cfg) -> dict:
    """Write ``X.csv``, ``y.csv``, ``beta_true.csv`` and, when ``n_out > 0``,
    held-out ``X_out.csv`` and ``y_out.csv``."""
    design = _simulation_design(cfg)
    out = _out_dir(cfg)
    X, y, beta = gen_design(design)
    xh = [f"x{j + 1}" for j in range(design.p)]
    write_csv(out / "X.csv", xh, X)
    write_csv(out / "y.csv", ["y"], y[:, None])
    write_csv(out / "beta_true.csv", ["beta"], beta[:, None])
    n_out = cfg.integer("n_out", 100)
    if n_out > 0:
        rng = np.random.default_rng([design.seed, 1])
        Xo, yo = gen_out_of_sample(design, beta, n_out, rng)
        write_csv(out / "X_out.csv", xh, Xo)
        write_csv(out / "y_out.csv", ["y"], yo[:, None])
    return {"out": str(out)}


# ---------------------------------------------------------------- fit

def _prior(cfg):
    kind = cfg.text("prior", "unit_info")
    mean = cfg.number("prior_mean", 0.0)
    if kind == "unit_info":
        return GaussianPrior.unit_info(mean)
    if kind == "flat":
        return GaussianPrior.flat(mean)
    if kind == "ridge":
        return GaussianPrior(mean=mean, precision=cfg.number("prior_precision", 1.0))
    raise InvalidConfigError(f"unknown prior '{kind}' (unit_info, flat or ridge)")


def _noise(cfg):
    if cfg.has("noise_shape") or cfg.has("noise_rate"):
        try:
            return NoisePrior(cfg.number("noise_shape"), cfg.number("noise_rate"))
        except InvalidInputError as err:
            raise InvalidConfigError(str(err)) from err
    return NoisePrior()


def _grid(cfg, p):
    if not cfg.has("grid"):
        side = int(round(np.sqrt(p)))
        if side * side != p:
            raise InvalidConfigError("voronoi modules need 'grid = HxW'")
        return (side, side)
    try:
        h, w = (int(s) for s in cfg.text("grid").lower().split("x"))
    except ValueError as err:
        raise InvalidConfigError("grid must look like 16x16") from err
    return (h, w)


def build_model(cfg, X):
    """Design and module specs from the settings.

    ``modules`` lists a kind per level (a single kind is repeated). Conjugate
    modules read their resolution from ``sizes``; partition modules use the
    finest design with ``pieces`` cells each.
    """
    p = X.shape[1]
    sizes = cfg.items("sizes", int, default=[])
    pieces = cfg.items("pieces", int, default=[])
    kinds = cfg.items("modules", default=["conjugate"])
    K = max(len(kinds), len(sizes), len(pieces), 1)
    if len(kinds) == 1:
        kinds = kinds * K
    if len(kinds) != K:
        raise InvalidConfigError("'modules', 'sizes' and 'pieces' disagree on the number of levels")
    for name, vals in (("sizes", sizes), ("pieces", pieces)):
        if vals and len(vals) != K:
            raise InvalidConfigError(f"'{name}' must list one entry per level")
    if "conjugate" in kinds:
        if not sizes:
            if K != 1:
                raise InvalidConfigError("conjugate modules on several levels need 'sizes'")
            sizes = [p]
        try:
            design = MultiscaleDesign.from_sizes(X, sizes, cfg.text("coarsen", "sum"))
        except BMMSError as err:
            raise InvalidConfigError(str(err)) from err
    else:
        design = MultiscaleDesign(X)
    prior, noise = _prior(cfg), _noise(cfg)
    sigma2 = cfg.number("sigma2") if cfg.has("sigma2") else None
    specs = []
    for j, kind in enumerate(kinds):
        kw = dict(kind=kind, level=j + 1, prior=prior, noise=noise, sigma2=sigma2,
                  n_inner=cfg.integer("n_inner", 10), min_segment=cfg.integer("min_segment", 1))
        if kind != "conjugate":
            if not pieces:
                raise InvalidConfigError("partition modules need 'pieces'")
            kw["n_pieces"] = pieces[j]
            if cfg.has("width"):
                kw["width"] = cfg.integer("width")
        if kind == "voronoi":
            kw["grid_shape"] = _grid(cfg, p)
        specs.append(ModuleSpec(**kw))
    return design, specs


def _modal_operator(spec, parts, design):
    if spec.kind == "conjugate":
        return design.composite(spec.level)
    p = design.X_fine.shape[1]
    if spec.kind == "changepoint":
        key = Counter(map(tuple, parts)).most_common(1)[0][0]
        return partition_to_operator(ChangepointPartition(p, key))
    key = Counter(tuple(map(tuple, c)) for c in parts).most_common(1)[0][0]
    return partition_to_operator(VoronoiPartition(spec.grid_shape, key))


def _fmt_row(cells, widths):
    return "  ".join(str(c).rjust(w) for c, w in zip(cells, widths))


def _table(header, rows):
    cells = [[h for h in header]] + [[_num(c) for c in r] for r in rows]
    widths = [max(len(str(r[i])) for r in cells) for i in range(len(header))]
    return "\n".join(_fmt_row(r, widths) for r in cells) + "\n"


def _num(v):
    return f"{v:.6g}" if isinstance(v, (float, np.floating)) else v


def cmd_fit(cfg) -> dict:
    X = read_csv(cfg.path("x"))[1]
    y = read_vector(cfg.path("y"))
    if y.size != X.shape[0]:
        raise InvalidInputError(f"X has {X.shape[0]} rows but y has {y.size} entries")
    probit = cfg.flag("probit")
    beta_true = read_vector(cfg.path("beta_true")) if cfg.has("beta_true") else None
    if beta_true is not None and beta_true.size != X.shape[1]:
        raise InvalidInputError("beta_true length does not match the columns of X")
    design, specs = build_model(cfg, X)
    seed = cfg.integer("seed")
    n_chains = cfg.integer("chains", 1)
    T, burn_in, thin = cfg.integer("t", 5000), cfg.integer("burn_in", 1000), cfg.integer("thin", 1)
    alpha = cfg.number("alpha", 0.05)
    out = _out_dir(cfg)

    chains = run_chains(design, y, specs, n_chains, T, burn_in, thin, seed, probit=probit)
    chain = merge_chains(chains)
    summ = posterior_summaries(chain, design, alpha)
    K, p = summ.scale_mean.shape
    # closed-form means where they exist, Rao-Blackwellised otherwise;
    # intervals always come from the draws
    if not probit and all(s.kind == "conjugate" for s in specs):
        scale_mean = np.array([design.composite(s.level).lift(m)
                               for s, m in zip(specs, conjugate_means(design, y, specs))])
    else:
        scale_mean = summ.scale_rb_mean
    total_mean = np.cumsum(scale_mean, axis=0)

    chain_idx = np.repeat(np.arange(n_chains), [c.n_draws for c in chains])[:, None]
    bh = [f"beta{i + 1}" for i in range(p)]
    for j in range(K):
        write_csv(out / f"draws_scale_{j + 1}.csv", ["chain"] + bh,
                  np.hstack([chain_idx, chain.lifted[j]]))
        if chain.partitions[j] is not None:
            parts = chain.partitions[j].reshape(chain.n_draws, -1)
            ph = [f"part{i + 1}" for i in range(parts.shape[1])]
            write_csv(out / f"partitions_scale_{j + 1}.csv", ["chain"] + ph,
                      np.hstack([chain_idx, parts]))
    write_csv(out / "sigma2.csv", ["chain"] + [f"sigma2_scale_{j + 1}" for j in range(K)],
              np.hstack([chain_idx, chain.sigma2]))
    write_csv(out / "coefficients.csv", ["beta"], total_mean[-1][:, None])
    write_csv(out / "scale_means.csv", [f"scale_{j + 1}" for j in range(K)], scale_mean.T)

    ops = [_modal_operator(s, chain.partitions[j], design) for j, s in enumerate(specs)]
    ladder = rss_ladder(design.X_fine, y, ops)

    rows = []
    for j in range(K):
        for i in range(p):
            rows.append([j + 1, i + 1, scale_mean[j, i], summ.scale_lower[j, i],
                         summ.scale_upper[j, i], total_mean[j, i], summ.total_lower[j, i],
                         summ.total_upper[j, i]])
    write_csv(out / "summary_table.csv",
              ["level", "index", "scale_mean", "scale_lower", "scale_upper",
               "total_mean", "total_lower", "total_upper"], rows)

    report = {
        "n": int(X.shape[0]), "p": int(p), "levels": K, "chains": n_chains,
        "draws": int(chain.n_draws), "T": T, "burn_in": burn_in, "thin": thin,
        "seed": seed, "alpha": alpha, "probit": probit,
        "modules": [{"level": s.level, "kind": s.kind, "pieces": s.n_pieces} for s in specs],
        "scales": [{"level": j + 1, "mean": scale_mean[j].tolist(),
                    "lower": summ.scale_lower[j].tolist(),
                    "upper": summ.scale_upper[j].tolist()} for j in range(K)],
        "totals": [{"level": j + 1, "mean": total_mean[j].tolist(),
                    "lower": summ.total_lower[j].tolist(),
                    "upper": summ.total_upper[j].tolist()} for j in range(K)],
        "rss_ladder": ladder.tolist(),
        "diagnostics": {
            "ess_sigma2": [effective_sample_size(chains[0].sigma2[:, j]) for j in range(K)],
        },
        "inputs": {"X": str(cfg.path("x")), "y": str(cfg.path("y")),
                   "beta_true": str(cfg.path("beta_true")) if beta_true is not None else None},
    }
    if n_chains > 1 and chain.n_draws // n_chains >= 4:
        report["diagnostics"]["rhat_sigma2"] = [
            split_rhat(np.array([c.sigma2[:, j] for c in chains])) for j in range(K)]
    if beta_true is not None:
        report["beta_mse"] = float(np.mean((total_mean[-1] - beta_true) ** 2))
    if probit:
        eta = X @ total_mean[-1]
        report["classification"] = {
            "accuracy": float(np.mean((eta > 0) == (y == 1))),
            "auc": auc_score(y, eta),
        }
    _write_json(out / "summary.json", report)

    lines = [f"levels {K}  draws {chain.n_draws}  chains {n_chains}  seed {seed}\n"]
    lines.append("per-scale contributions (mean over index, "
                 f"{int(round(100 * (1 - alpha)))}% bands)\n")
    lines.append(_table(
        ["level", "kind", "pieces", "mean_abs", "max_abs", "band_width", "norm"],
        [[s.level, s.kind, s.n_pieces, float(np.mean(np.abs(scale_mean[j]))),
          float(np.max(np.abs(scale_mean[j]))),
          float(np.mean(summ.scale_upper[j] - summ.scale_lower[j])),
          float(np.linalg.norm(scale_mean[j]))] for j, s in enumerate(specs)]))
    lines.append("rss ladder\n")
    lines.append(_table(["level", "rss"], [[j, v] for j, v in enumerate(ladder)]))
    if "beta_mse" in report:
        lines.append(f"beta_mse {report['beta_mse']:.6g}\n")
    if probit:
        c = report["classification"]
        lines.append(f"accuracy {c['accuracy']:.6g}\nauc {c['auc']:.6g}\n")
    (out / "summary.txt").write_text("".join(lines))

    if not cfg.flag("no_figures"):
        from .figures import decomposition_figure
        decomposition_figure(scale_mean, summ.scale_lower, summ.scale_upper, total_mean[-1],
                             summ.total_lower[-1], summ.total_upper[-1],
                             out / "decomposition.svg", beta_true, alpha)
    return report


# ---------------------------------------------------------------- predict

def cmd_predict(cfg) -> dict:
    fit_dir = cfg.path("fit_dir", str(cfg.path("out", ".")))
    report = _read_json(fit_dir / "summary.json")
    beta = read_vector(fit_dir / "coefficients.csv")
    X = read_csv(cfg.path("x"))[1]
    if X.shape[1] != beta.size:
        raise InvalidInputError(
            f"new design has {X.shape[1]} columns, the fitted model {beta.size}")
    probit = cfg.flag("probit") or bool(report.get("probit"))
    out = _out_dir(cfg)
    eta = X @ beta
    if probit:
        prob = norm.cdf(eta)
        label = (prob > 0.5).astype(float)
        write_csv(out / "predictions.csv", ["eta", "prob", "label"],
                  np.column_stack([eta, prob, label]))
    else:
        write_csv(out / "predictions.csv", ["eta"], eta[:, None])
    result = {"rows": int(X.shape[0])}
    if cfg.has("y"):
        y = read_vector(cfg.path("y"))
        if y.size != X.shape[0]:
            raise InvalidInputError("labels and new design differ in length")
        if probit:
            result["accuracy"] = float(np.mean(label == y))
            result["auc"] = auc_score(y, eta)
        else:
            result["mape"] = float(np.mean(np.abs(y - eta)))
        _write_json(out / "prediction_metrics.json", result)
    return result


# ---------------------------------------------------------------- summarize

def cmd_summarize(cfg) -> dict:
    fit_dir = cfg.path("fit_dir", str(cfg.path("out", ".")))
    report = _read_json(fit_dir / "summary.json")
    beta = read_vector(fit_dir / "coefficients.csv")
    contrib = read_csv(fit_dir / "scale_means.csv")[1].T
    bt_path = cfg.path("beta_true") if cfg.has("beta_true") else report["inputs"].get("beta_true")
    beta_true = read_vector(bt_path) if bt_path else None
    X_out = read_csv(cfg.path("x_out"))[1] if cfg.has("x_out") else None
    y_out = read_vector(cfg.path("y_out")) if cfg.has("y_out") else None
    if (X_out is None) != (y_out is None):
        raise InvalidConfigError("give both x_out and y_out, or neither")
    try:
        m = compute_metrics(beta, beta_true, X_out, y_out, contributions=contrib)
    except BMMSError as err:
        raise InvalidInputError(str(err)) from err
    m.rss = np.asarray(report["rss_ladder"])
    rows = m.rows()
    out = _out_dir(cfg)
    (out / "metrics.txt").write_text(_table(["metric", "value"], rows))
    with open(out / "metrics.csv", "w", newline="") as fh:
        fh.write("metric,value\n")
        for k, v in rows:
            fh.write(f"{k},{v:.17g}\n")
    return dict(rows)


# ---------------------------------------------------------------- main

COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
            "summarize": cmd_summarize}


def _parser():
    ap = _Parser(prog="bmms", description="Bayesian modular and multiscale regression.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", metavar="PATH", help="key = value settings file")
    ap.add_argument("--seed", type=int, help="random seed (required here or in the config)")
    ap.add_argument("--chains", type=int, help="number of independent chains")
    ap.add_argument("--out", metavar="DIR", help="output directory")
    ap.add_argument("--no-figures", action="store_true", help="skip the SVG figure")
    ap.add_argument("--probit", action="store_true", help="binary response, probit link")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override any setting; repeatable")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    overrides = {"seed": args.seed, "chains": args.chains}
    if args.out is not None:
        overrides["out"] = str(Path(args.out).resolve())
    if args.no_figures:
        overrides["no_figures"] = "true"
    if args.probit:
        overrides["probit"] = "true"
    for item in args.set:
        if "=" not in item:
            print(f"bmms: error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_USAGE
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    try:
        cfg = RunConfig.load(args.config, overrides)
        COMMANDS[args.command](cfg)
    except MissingInputError as err:
        print(f"bmms: {err}", file=sys.stderr)
        return EXIT_MISSING
    except (NumericalSingularityError, linalg.LinAlgError, FloatingPointError) as err:
        print(f"bmms: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (BMMSError, ValueError) as err:
        print(f"bmms: {err}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
