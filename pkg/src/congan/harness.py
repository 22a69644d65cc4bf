"""Monte-Carlo replication driver and table emitter.

Each replicate simulates a dataset, optionally trains the generators, and
evaluates the table columns at quantiles of the realized X:

    c  conditional mean on the real observed sample
    d  conditional mean on the synthetic observed sample     (needs training)
    e  conditional mean on the real counterfactual sample
    f  conditional mean on the synthetic counterfactual      (needs training)
    g  control-variable benchmark
    h  partial means over the true latent omega

Aggregation reports the across-replicate mean and standard deviation, plus
similarity marks: a dagger when (d) is similar to (c), an asterisk when
(f), (g) or (h) is similar to (e).
"""
from __future__ import annotations

import configparser
import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dgp
from .estimators import (control_variable_curve, make_cf_dataset, make_synthetic_observed,
                         nw_curve, partial_means_curve)
from .evaluation import MIN_SEQUENCE, similarity_test
from .generators import DEFAULT_HIDDEN
from .kde import Bandwidths, silverman_bandwidth
from .training import TrainingAborted, fit

COLUMNS = ("c", "d", "e", "f", "g", "h")
TRAINED = ("d", "f")
COMPARISONS = (("d", "c", "dagger"), ("f", "e", "asterisk"), ("g", "e", "asterisk"),
               ("h", "e", "asterisk"))
MARK_GLYPH = {"dagger": "†", "asterisk": "*"}
DEFAULT_QUANTILES = tuple(range(5, 100, 5))


@dataclass
class RunConfig:
    preset: str = "ces"
    n_obs: int = 2000
    n_replicates: int = 10
    quantiles: tuple = DEFAULT_QUANTILES
    train: bool = True
    init_iters: int = 300
    gan_iters: int = 500
    step: float = 0.01
    inner_samples: int = 32
    hidden: tuple = DEFAULT_HIDDEN
    alpha: float = 0.05
    Lambda: float = 0.05
    n_perm: int = 999
    master_seed: int = 0
    out_dir: str = "runs"
    gamma: tuple | None = None
    workers: int = 1

    def __post_init__(self):
        self.quantiles = tuple(int(q) for q in self.quantiles)
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.gamma is not None:
            self.gamma = tuple(float(g) for g in self.gamma)
        if self.n_obs < 2 or self.n_replicates < 1:
            raise ValueError("need n_obs >= 2 and n_replicates >= 1")
        if not all(0 < q < 100 for q in self.quantiles):
            raise ValueError("quantiles are percentages in (0, 100)")

    def spec(self) -> dgp.DGPSpec:
        s = dgp.preset(self.preset)
        return s.with_gamma(self.gamma) if self.gamma is not None else s

    def replicate_seed(self, r: int) -> int:
        return int(self.master_seed) ^ int(r)

    def to_dict(self):
        return asdict(self)


_INT = {"n_obs", "n_replicates", "init_iters", "gan_iters", "inner_samples", "n_perm",
        "master_seed", "workers"}
_FLOAT = {"step", "alpha", "Lambda"}
_TUPLE = {"quantiles", "hidden", "gamma"}


def load_config(path=None, **overrides) -> RunConfig:
    """Read a ``[run]`` section from an INI file, then env vars, then keyword overrides.

    CONGAN_SEED and CONGAN_OUT override the master seed and the output directory.
    """
    kw = {}
    if path is not None:
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise FileNotFoundError(path)
        for k, v in cp["run"].items():
            if k in _INT:
                kw[k] = int(v)
            elif k in _FLOAT:
                kw[k] = float(v)
            elif k in _TUPLE:
                kw[k] = tuple(float(t) if k == "gamma" else int(t) for t in v.split(","))
            elif k == "train":
                kw[k] = cp["run"].getboolean(k)
            else:
                kw[k] = v
    if "CONGAN_SEED" in os.environ:
        kw["master_seed"] = int(os.environ["CONGAN_SEED"])
    if "CONGAN_OUT" in os.environ:
        kw["out_dir"] = os.environ["CONGAN_OUT"]
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**kw)


# --------------------------------------------------------------------------
# one replicate

@dataclass
class ReplicateResult:
    r: int
    seed: int
    levels: list
    x: list
    columns: dict
    skipped: dict = field(default_factory=dict)
    failed: bool = False
    reason: str = ""
    gan_loss: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _nan_list(a):
    return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=float)]


def _from_list(a):
    return np.array([np.nan if v is None else v for v in a], dtype=float)


def estimate_columns(data, spec, levels, model=None, seeds=None):
    """All table columns for one dataset; trained columns are NaN without a model."""
    seeds = seeds or np.random.SeedSequence(0).spawn(3)
    qs = np.percentile(data.x, levels)
    sx = silverman_bandwidth(data.x, robust=True)
    cols = {"c": nw_curve(data.y, data.x, qs, sx)}
    cf = make_cf_dataset(spec, data=data, seed=seeds[0])
    cols["e"] = nw_curve(cf.y_cf, cf.x_cf, qs, sx)
    bw = Bandwidths(sx, silverman_bandwidth(data.y), silverman_bandwidth(data.z))
    gres = control_variable_curve(data.y, data.x, data.z, qs, bw)
    hres = partial_means_curve(data.y, data.x, data.omega, qs, sx)
    cols["g"], cols["h"] = gres.values, hres.values
    skipped = {"g": gres.skipped.tolist(), "h": hres.skipped.tolist()}
    if model is not None:
        syn = make_synthetic_observed(model, data.z, seed=seeds[1])
        cols["d"] = nw_curve(syn.y, syn.x, qs, sx)
        scf = make_cf_dataset(model, zs=data.z, seed=seeds[2])
        cols["f"] = nw_curve(scf.y_cf, scf.x_cf, qs, sx)
    else:
        cols["d"] = np.full(len(qs), np.nan)
        cols["f"] = np.full(len(qs), np.nan)
    return qs, cols, skipped


def run_replicate(cfg: RunConfig, r: int) -> ReplicateResult:
    seed = cfg.replicate_seed(r)
    ss = np.random.SeedSequence(seed).spawn(5)
    spec = cfg.spec()
    data = dgp.simulate(spec, cfg.n_obs, seed=ss[0])
    model, failed, reason, gan_loss = None, False, "", []
    if cfg.train:
        try:
            model = fit(data, init_iters=cfg.init_iters, gan_iters=cfg.gan_iters, hidden=cfg.hidden,
                        seed=int(ss[1].generate_state(1)[0]), step=cfg.step,
                        inner_samples=cfg.inner_samples)
            gan_loss = list(model.gan_trace.loss)
        except TrainingAborted as exc:
            failed, reason = True, str(exc)
    qs, cols, skipped = estimate_columns(data, spec, cfg.quantiles, model, ss[2:5])
    return ReplicateResult(r, seed, list(cfg.quantiles), _nan_list(qs),
                           {k: _nan_list(cols[k]) for k in COLUMNS}, skipped, failed, reason,
                           [float(v) for v in gan_loss])


def run_replicates(cfg: RunConfig) -> list[ReplicateResult]:
    rs = range(cfg.n_replicates)
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            out = list(ex.map(run_replicate, [cfg] * cfg.n_replicates, rs))
    else:
        out = [run_replicate(cfg, r) for r in rs]
    return sorted(out, key=lambda res: res.r)


# --------------------------------------------------------------------------
# aggregation

@dataclass
class EstimateTable:
    preset: str
    levels: list
    x_mean: list
    x_se: list
    mean: dict            # column -> per-quantile means
    se: dict              # column -> per-quantile across-replicate sd
    marks: dict           # column -> per-quantile True/False/None (None = not tested)
    n_ok: int
    n_failed: int
    unsupported: dict     # column -> per-quantile count of replicates with no estimate
    sequence_tests: dict  # "d_vs_c" etc. -> number of replicates whose whole sequences pass

    def row(self, level):
        k = self.levels.index(level)
        return {c: (self.mean[c][k], self.se[c][k]) for c in COLUMNS}

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _stats(M):
    """Column-wise mean and sd (ddof=1) over the finite entries of a replicate x quantile matrix."""
    mean, sd, missing = [], [], []
    for col in M.T:
        v = col[np.isfinite(col)]
        missing.append(int(len(col) - len(v)))
        if len(v) and np.all(v == v[0]):
            mean.append(float(v[0]))      # exact for constant columns
            sd.append(0.0 if len(v) > 1 else None)
            continue
        mean.append(float(v.mean()) if len(v) else None)
        sd.append(float(v.std(ddof=1)) if len(v) > 1 else None)
    return mean, sd, missing


def aggregate(results, cfg: RunConfig | None = None, alpha=None, Lambda=None, n_perm=None,
              seed=None) -> EstimateTable:
    cfg = cfg or RunConfig()
    alpha = cfg.alpha if alpha is None else alpha
    Lambda = cfg.Lambda if Lambda is None else Lambda
    n_perm = cfg.n_perm if n_perm is None else n_perm
    seed = cfg.master_seed if seed is None else seed
    ok = [r for r in results if not r.failed]
    if len(ok) < 2:
        raise ValueError(f"need at least 2 successful replicates, have {len(ok)}")
    levels = list(ok[0].levels)
    X = np.array([_from_list(r.x) for r in ok])
    x_mean, x_se, _ = _stats(X)
    mats = {c: np.array([_from_list(r.columns[c]) for r in ok]) for c in COLUMNS}
    mean, se, unsupported = {}, {}, {}
    for c in COLUMNS:
        mean[c], se[c], unsupported[c] = _stats(mats[c])

    marks = {c: [None] * len(levels) for c in COLUMNS}
    for a, b, _ in COMPARISONS:
        for k in range(len(levels)):
            va, vb = mats[a][:, k], mats[b][:, k]
            va, vb = va[np.isfinite(va)], vb[np.isfinite(vb)]
            if len(va) >= MIN_SEQUENCE and len(vb) >= MIN_SEQUENCE:
                rep = similarity_test(va, vb, alpha, Lambda, n_perm, seed=seed + k)
                marks[a][k] = rep.passed

    seq = {}
    for a, b, _ in COMPARISONS:
        passed = 0
        tested = 0
        for r in ok:
            va, vb = _from_list(r.columns[a]), _from_list(r.columns[b])
            keep = np.isfinite(va) & np.isfinite(vb)
            if keep.sum() >= MIN_SEQUENCE:
                tested += 1
                passed += similarity_test(va[keep], vb[keep], alpha, Lambda, n_perm,
                                          seed=seed + r.r).passed
        seq[f"{a}_vs_{b}"] = [passed, tested]
    return EstimateTable(cfg.preset, levels, x_mean, x_se, mean, se, marks, len(ok),
                         len(results) - len(ok), unsupported, seq)


# --------------------------------------------------------------------------
# emitters

def _fmt(v, digits=2):
    return "NA" if v is None else f"{v:.{digits}f}"


def _cell(table, c, k):
    m, s = table.mean[c][k], table.se[c][k]
    if m is None:
        return "NA"
    out = f"{_fmt(m)} ({_fmt(s, 3)})"
    if table.marks[c][k]:
        glyph = MARK_GLYPH["dagger" if c == "d" else "asterisk"]
        out += glyph
    return out


def render_text(table: EstimateTable) -> str:
    header = ["quantile", "x", "(c)", "(d)", "(e)", "(f)", "(g)", "(h)"]
    rows = [header]
    for k, lv in enumerate(table.levels):
        rows.append([str(lv), f"{_fmt(table.x_mean[k])} ({_fmt(table.x_se[k], 3)})",
                     *(_cell(table, c, k) for c in COLUMNS)])
    widths = [max(len(r[j]) for r in rows) for j in range(len(header))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows]
    foot = (f"replicates: {table.n_ok} ok, {table.n_failed} failed; "
            + "; ".join(f"{k}: {v[0]}/{v[1]} whole-sequence passes" for k, v in table.sequence_tests.items()))
    return "\n".join(lines + ["", foot]) + "\n"


CSV_FIELDS = ["quantile", "x_mean", "x_se"] + [f"{c}_{s}" for c in COLUMNS for s in ("mean", "se", "mark", "unsupported")]


def write_table_csv(table: EstimateTable, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["#", "preset", table.preset, "n_ok", table.n_ok, "n_failed", table.n_failed,
                    "sequence_tests", json.dumps(table.sequence_tests, sort_keys=True)])
        w.writerow(CSV_FIELDS)
        for k, lv in enumerate(table.levels):
            row = [lv, repr(table.x_mean[k]), repr(table.x_se[k])]
            for c in COLUMNS:
                row += [repr(table.mean[c][k]), repr(table.se[c][k]),
                        {None: "", True: "1", False: "0"}[table.marks[c][k]], table.unsupported[c][k]]
            w.writerow(row)


def _num(s):
    return None if s == "None" else float(s)


def read_table_csv(path) -> EstimateTable:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    meta, header, body = rows[0], rows[1], rows[2:]
    if header != CSV_FIELDS:
        raise ValueError(f"{path}: unexpected header")
    idx = {h: j for j, h in enumerate(header)}
    levels = [int(r[0]) for r in body]
    mean = {c: [_num(r[idx[f"{c}_mean"]]) for r in body] for c in COLUMNS}
    se = {c: [_num(r[idx[f"{c}_se"]]) for r in body] for c in COLUMNS}
    marks = {c: [{"": None, "1": True, "0": False}[r[idx[f"{c}_mark"]]] for r in body] for c in COLUMNS}
    unsup = {c: [int(r[idx[f"{c}_unsupported"]]) for r in body] for c in COLUMNS}
    return EstimateTable(meta[2], levels, [_num(r[1]) for r in body], [_num(r[2]) for r in body],
                         mean, se, marks, int(meta[4]), int(meta[6]), unsup, json.loads(meta[8]))


def emit(table: EstimateTable, out_dir, formats=("csv", "txt", "json", "png"), stem="table") -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write to {out}: {exc}") from exc
    written = []
    if "csv" in formats:
        p = out / f"{stem}.csv"
        write_table_csv(table, p)
        written.append(p)
    if "txt" in formats:
        p = out / f"{stem}.txt"
        p.write_text(render_text(table))
        written.append(p)
    if "json" in formats:
        p = out / f"{stem}.json"
        p.write_text(json.dumps(table.to_dict(), sort_keys=True, indent=1) + "\n")
        written.append(p)
    if "png" in formats:
        from .plotting import plot_table
        p = out / f"{stem}.png"
        plot_table(table, p)
        written.append(p)
    return written


def run_table(cfg: RunConfig) -> tuple[EstimateTable, list[Path]]:
    """Full pipeline: replicates, per-replicate bundles, aggregate, emit."""
    results = run_replicates(cfg)
    out = Path(cfg.out_dir)
    (out / "replicates").mkdir(parents=True, exist_ok=True)
    for res in results:
        (out / "replicates" / f"replicate_{res.r:03d}.json").write_text(
            json.dumps(res.to_dict(), sort_keys=True) + "\n")
    stored = {k: v for k, v in cfg.to_dict().items() if k != "out_dir"}
    (out / "config.json").write_text(json.dumps(stored, sort_keys=True, indent=1) + "\n")
    table = aggregate(results, cfg)
    files = emit(table, out)
    if cfg.train:
        from .plotting import plot_traces
        p = out / "traces.png"
        plot_traces([r.gan_loss for r in results if not r.failed], p)
        files.append(p)
    return table, files
