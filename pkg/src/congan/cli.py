"""Command-line entry point: ``congan <verb> [flags]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dgp, gaussian_oracle as go, harness
from .data import read_csv, write_csv
from .generators import DEFAULT_HIDDEN
from .training import FittedModel, TrainingAborted, fit


def _arch(s):
    try:
        hidden = tuple(int(t) for t in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--arch expects comma-separated ints, got {s!r}")
    if not hidden or min(hidden) < 1:
        raise argparse.ArgumentTypeError("--arch sizes must be positive")
    return hidden


def _floats(s):
    return tuple(float(t) for t in s.split(","))


def _out(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_simulate(a):
    spec = dgp.preset(a.preset)
    if a.gamma:
        spec = spec.with_gamma(a.gamma)
    data = dgp.simulate(spec, a.n, seed=a.seed)
    path = _out(a.out) / f"{spec.name}_n{a.n}_s{a.seed}.csv"
    write_csv(data, path)
    print(path)


def cmd_train(a):
    data = read_csv(a.data)
    out = _out(a.out)
    try:
        model = fit(data, init_iters=a.init_iters, gan_iters=a.iters, hidden=a.arch, seed=a.seed,
                    checkpoint_dir=str(out) if a.checkpoint_every else None,
                    checkpoint_every=a.checkpoint_every)
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 2
    model.save(out / "model.json")
    model.init_trace.write_csv(out / "trace_init.csv")
    model.gan_trace.write_csv(out / "trace_congan.csv")
    from .plotting import plot_traces
    plot_traces([model.gan_trace.loss], out / "trace_congan.png")
    print(out / "model.json")


def cmd_estimate(a):
    data = read_csv(a.data)
    if not data.has_latents:
        print("estimate needs a simulated CSV carrying eta/omega columns", file=sys.stderr)
        return 2
    spec = dgp.preset(a.preset)
    if a.gamma:
        spec = spec.with_gamma(a.gamma)
    model = FittedModel.load(a.model) if a.model else None
    levels = harness.DEFAULT_QUANTILES
    qs, cols, skipped = harness.estimate_columns(data, spec, levels, model,
                                                 np.random.SeedSequence(a.seed).spawn(3))
    res = harness.ReplicateResult(0, a.seed, list(levels), harness._nan_list(qs),
                                  {k: harness._nan_list(cols[k]) for k in harness.COLUMNS}, skipped)
    path = _out(a.out) / "row_bundle.json"
    path.write_text(json.dumps(res.to_dict(), sort_keys=True, indent=1) + "\n")
    print(path)


def cmd_table(a):
    cfg = harness.load_config(a.config, preset=a.preset, n_obs=a.n, n_replicates=a.replicates,
                              master_seed=a.seed, gan_iters=a.iters, init_iters=a.init_iters,
                              out_dir=a.out, Lambda=a.lambda_quantile, alpha=a.alpha, hidden=a.arch,
                              n_perm=a.n_perm, workers=a.workers, gamma=a.gamma,
                              train=False if a.no_train else None)
    table, files = harness.run_table(cfg)
    print(harness.render_text(table), end="")
    for f in files:
        print(f)


def cmd_oracle(a):
    spec = go.preset(a.preset)
    data = go.sample_gaussian(spec, a.n, seed=a.seed)
    r12 = go.identify_rho12(data, spec.mu1, spec.sigma1)
    x_med = float(np.median(data.x))
    r13 = go.identify_rho13(data, r12, spec.mu1, spec.sigma1, spec.mu2, spec.sigma2)
    w1, tol = go.cf_agreement(spec, x_med, a.n, seed=a.seed)
    ht = []
    for x in (-1.0, 0.0, 1.0):
        for y in (0.0, 1.0, 2.0):
            r = go.lemma_HT_check(spec, x, y, a.n, seed=a.seed)
            ht.append({"x": x, "y": y, "H": r.H, "T": r.T, "combined_se": r.combined_se,
                       "naive": r.naive, "se_naive": r.se_naive})
    report = {"spec": spec.name, "n": a.n, "seed": a.seed,
              "rho12": {"true": spec.rho12, "estimate": r12},
              "rho13_at_median_x": {"x": x_med, "true": float(spec.check_rho13(x_med)),
                                    "estimate": float(r13(x_med))},
              "cf_w1_closed_vs_brute": {"distance": w1, "mc_tolerance": tol}, "H_vs_T": ht}
    path = _out(a.out) / f"oracle_{spec.name}.json"
    path.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    print(json.dumps(report, sort_keys=True, indent=1))


def cmd_fredholm(a):
    spec = go.preset(a.preset)
    grid = (-1.0, 0.0, 1.0)
    out = _out(a.out)
    rep = go.fredholm_report(spec, grid, (0.0, 1.0, 2.0), grid, n_omega=a.n)
    rep.write_csv(out / f"fredholm_{spec.name}.csv")
    from .plotting import plot_fredholm
    plot_fredholm(rep, out / f"fredholm_{spec.name}.png")
    conv = go.fredholm_convergence(spec, grid, (0.0, 1.0, 2.0), grid,
                                   sizes=tuple(a.n // 2 ** k for k in (3, 2, 1, 0)) + (2 * a.n,))
    print(f"max residual at {a.n} nodes: {rep.max_residual:.3e}")
    for n, r in conv:
        print(f"  {n:6d} {r:.3e}")


def build_parser():
    p = argparse.ArgumentParser(prog="congan", description="Contaminated-GAN counterfactual estimation")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, preset_default="ces", n_default=2000):
        sp.add_argument("--preset", default=preset_default)
        sp.add_argument("--n", type=int, default=n_default)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="runs")

    sp = sub.add_parser("simulate", help="DGP preset to CSV")
    common(sp)
    sp.add_argument("--gamma", type=_floats)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", help="CSV to fitted generator parameters")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--iters", type=int, default=500, help="CONGAN iterations")
    sp.add_argument("--init-iters", type=int, default=300)
    sp.add_argument("--arch", type=_arch, default=DEFAULT_HIDDEN)
    sp.add_argument("--checkpoint-every", type=int, default=0)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("estimate", help="parameters + CSV to one row bundle")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--model")
    sp.add_argument("--gamma", type=_floats)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("table", help="full Monte-Carlo pipeline")
    sp.add_argument("--config")
    sp.add_argument("--preset")
    sp.add_argument("--n", type=int)
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--init-iters", type=int)
    sp.add_argument("--out")
    sp.add_argument("--lambda-quantile", type=float)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--arch", type=_arch)
    sp.add_argument("--n-perm", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--gamma", type=_floats)
    sp.add_argument("--no-train", action="store_true", help="skip the trained columns (d), (f)")
    sp.set_defaults(func=cmd_table)

    sp = sub.add_parser("oracle", help="Gaussian identification and H = T checks")
    common(sp, preset_default="confounded", n_default=100000)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("fredholm", help="latent integral-equation residual report")
    common(sp, preset_default="confounded", n_default=512)
    sp.set_defaults(func=cmd_fredholm)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except (KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
