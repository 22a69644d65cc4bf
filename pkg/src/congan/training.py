"""Two-stage generator training.

Stage one fits the generators by maximizing the simulated conditional
likelihood of each observed (x, y) given z (J noise draws per record).  Stage
two minimizes the kernel-smoothed Jensen-Shannon objective

    K_n = mean log p/(p+q) at real records + mean log q/(p+q) at synthetic records

where p and q are product-Gaussian densities of the real and synthetic
(x, y, z) triplets.  The optimal discriminator is used in closed form, so only
the generators and the bandwidths are trained.

Losses and gradients are computed with vectorized numpy and hand-written
backpropagation.  The ``tape_*`` builders express the same losses on the
scalar autodiff tape; they are slow and exist to cross-check the fast path.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import autodiff as ad
from .data import Dataset
from .generators import (GeneratorParams, g_forward, generate, h_forward, init_weights, mlp_backward,
                         mlp_scalar, tape_weights, DEFAULT_HIDDEN)
from .kde import CLAMP, SQRT_2PI, Bandwidths, silverman_bandwidth

LOG_HALF_X2 = 2.0 * math.log(0.5)


class TrainingAborted(RuntimeError):
    """A loss or parameter went non-finite; the partial trace is attached."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


@dataclass
class TrainConfig:
    tol: float = 1e-16
    max_iterations: int = 10000
    step: float = 0.01
    inner_samples: int = 32
    seed: int = 0
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.step < 0:
            raise ValueError("step must be >= 0")
        if self.inner_samples < 1:
            raise ValueError("inner_samples must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass
class TrainTrace:
    loss: list = field(default_factory=list)
    sigma_loss: list = field(default_factory=list)
    sigmas: list = field(default_factory=list)
    stop_reason: str = ""

    def __len__(self):
        return len(self.loss)

    def smoothed(self, window: int = 50) -> np.ndarray:
        v = np.asarray(self.loss, dtype=float)
        if len(v) < window:
            return v.copy()
        return np.convolve(v, np.ones(window) / window, mode="valid")

    def block_means(self, window: int = 50) -> np.ndarray:
        """Means over consecutive non-overlapping windows (a trailing partial window is dropped)."""
        v = np.asarray(self.loss, dtype=float)
        k = len(v) // window
        return v[:k * window].reshape(k, window).mean(axis=1)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "loss", "sigma_loss", "sigma_x", "sigma_y", "sigma_z"])
            for i, (l, ls, s) in enumerate(zip(self.loss, self.sigma_loss, self.sigmas)):
                s = list(s) + [float("nan")] * (3 - len(s))
                w.writerow([i, repr(l), repr(ls), *(repr(float(v)) for v in s)])


# --------------------------------------------------------------------------
# kernel-block helpers.  A block is K[i, j] = prod_d phi((C_jd - E_id)/s_d)/s_d
# for evaluation rows E and center rows C.  Given W = upstream * K these
# return the gradient of sum(W) w.r.t. E, C and log(sigma).  The bandwidth
# gradient uses sum_ij W_ij (C_j - E_i)^2 = r.E^2 + c.C^2 - 2 E.(W C), where r
# and c are the row and column sums, so no per-dimension N x N temporaries
# are needed.

def fast_kernel(E, C, sig):
    """Same values as :func:`kde.kernel_matrix`, via one matmul and one exp."""
    Es, Cs = E / sig, C / sig
    d2 = Es @ Cs.T
    d2 *= -2.0
    d2 += np.einsum("ij,ij->i", Es, Es)[:, None]
    d2 += np.einsum("ij,ij->i", Cs, Cs)[None, :]
    np.maximum(d2, 0.0, out=d2)
    d2 *= -0.5
    d2 -= np.sum(np.log(sig * SQRT_2PI))
    return np.exp(d2, out=d2)


def _block_grads(K, E, C, sig, a, b):
    """Gradients of sum_ij a_i K_ij b_j w.r.t. E, C and log(sigma)."""
    KbC = K @ (b[:, None] * C)
    KtaE = K.T @ (a[:, None] * E)
    r = a * (K @ b)
    c = b * (K.T @ a)
    WC = a[:, None] * KbC
    s2 = sig ** 2
    gE = (WC - r[:, None] * E) / s2
    gC = (b[:, None] * KtaE - c[:, None] * C) / s2
    quad = r @ (E * E) + c @ (C * C) - 2.0 * np.einsum("id,id->d", E, WC)
    return gE, gC, quad / s2 - r.sum()


def _sigma_grad(K, E, C, sig, a):
    """d/dlog(sigma) of sum_ij a_i K_ij (column weights one)."""
    Kc = K @ C
    r = a * K.sum(axis=1)
    c = K.T @ a
    quad = r @ (E * E) + c @ (C * C) - 2.0 * np.einsum("id,id->d", E, a[:, None] * Kc)
    return quad / sig ** 2 - r.sum()


# --------------------------------------------------------------------------
# smoothed Jensen-Shannon objective

def jsd_loss(real: Dataset, synthetic: Dataset, sigma: Bandwidths) -> float:
    if len(real) != len(synthetic):
        raise ValueError(f"size mismatch: {len(real)} real vs {len(synthetic)} synthetic")
    if len(real) == 0:
        raise ValueError("empty sample")
    return gan_objectives(real.points(), synthetic.points(), sigma.vector())[0]


def gan_objectives(R, S, sig, grads=False):
    """K_n and the paired leave-one-out entropy for real R and synthetic S (N x 3).

    Returns (K_n, L_sigma, dK_n/dS, dK_n/dlog(sigma), dL_sigma/dlog(sigma));
    the gradient slots are None unless ``grads``.
    """
    N = len(R)
    A = fast_kernel(R, R, sig)
    B = fast_kernel(S, R, sig)      # synthetic rows under the real density
    D = fast_kernel(S, S, sig)
    pR, pS = A.mean(axis=1), B.mean(axis=1)
    qR, qS = B.mean(axis=0), D.mean(axis=1)   # K(R, S) is B transposed
    cpR, cpS, cqR, cqS = (np.maximum(v, CLAMP) for v in (pR, pS, qR, qS))
    val = float(np.mean(np.log(cpR / (cpR + cqR))) + np.mean(np.log(cqS / (cpS + cqS))))

    # leave-one-out densities reuse the diagonals of A and D
    lR = (A.sum(axis=1) - np.diagonal(A)) / (N - 1)
    lS = (D.sum(axis=1) - np.diagonal(D)) / (N - 1)
    clR, clS = np.maximum(lR, CLAMP), np.maximum(lS, CLAMP)
    sval = float(-np.mean(np.log(clR)) - np.mean(np.log(clS)))
    if not grads:
        return val, sval, None, None, None

    e_pR = (1.0 / cpR - 1.0 / (cpR + cqR)) / N * (pR >= CLAMP)
    e_qR = -1.0 / (cpR + cqR) / N * (qR >= CLAMP)
    e_qS = (1.0 / cqS - 1.0 / (cpS + cqS)) / N * (qS >= CLAMP)
    e_pS = -1.0 / (cpS + cqS) / N * (pS >= CLAMP)
    f_R = -1.0 / (N * clR) * (lR >= CLAMP) / (N - 1)
    f_S = -1.0 / (N * clS) * (lS >= CLAMP) / (N - 1)

    ones = np.ones(N)
    # B is K(S, R): its rows give pS, its columns give qR
    gS1, _, gs1 = _block_grads(B, S, R, sig, e_pS / N, ones)
    gS2, _, gs2 = _block_grads(B, S, R, sig, ones, e_qR / N)
    gS3, gS4, gs3 = _block_grads(D, S, S, sig, e_qS / N, ones)
    gs4 = _sigma_grad(A, R, R, sig, e_pR / N)
    dS = gS1 + gS2 + gS3 + gS4
    dls = gs1 + gs2 + gs3 + gs4
    # leave-one-out: drop the diagonal, whose log-sigma derivative is -K_ii per dimension
    dls_sig = (_sigma_grad(A, R, R, sig, f_R) + np.sum(f_R * np.diagonal(A))
               + _sigma_grad(D, S, S, sig, f_S) + np.sum(f_S * np.diagonal(D)))
    return val, sval, dS, dls, dls_sig


# --------------------------------------------------------------------------
# stage-one likelihood

def init_terms(x, y, z, omega, nu, params: GeneratorParams, log_sigma, grads=False):
    """Simulated negative log-likelihood and its bandwidth companion.

    ``omega`` and ``nu`` are (N, J).  Returns (loss, sigma_loss, dparams_flat,
    dlog_sigma_of_loss, dlog_sigma_of_sigma_loss).
    """
    N, J = omega.shape
    sx, sy = np.exp(log_sigma[:2])
    zr = np.repeat(z, J)
    w, v = omega.ravel(), nu.ravel()
    xh, h_acts = h_forward(params, zr, w)
    yh, g_acts = g_forward(params, xh, w, v)
    ux = (xh - np.repeat(x, J)) / sx
    uy = (yh - np.repeat(y, J)) / sy
    K = (np.exp(-0.5 * (ux * ux + uy * uy)) / (2.0 * np.pi * sx * sy)).reshape(N, J)
    dens = K.mean(axis=1)
    dc = np.maximum(dens, CLAMP)
    loss = float(-np.mean(np.log(dc)))

    d = ((ux != 0.0) | (uy != 0.0)).reshape(N, J).astype(float)
    nd = d.sum(axis=1)
    p = np.where(nd > 0, (d * K).sum(axis=1) / np.maximum(nd, 1.0), 0.0)
    pc = np.maximum(p, CLAMP)
    sigma_loss = float(-np.mean(np.log(pc)))
    if not grads:
        return loss, sigma_loss, None, None, None

    uxm, uym = ux.reshape(N, J), uy.reshape(N, J)
    e = -1.0 / (N * dc) * (dens >= CLAMP)
    WK = e[:, None] * K / J
    d_xh = (WK * (-uxm / sx)).ravel()
    d_yh = (WK * (-uym / sy)).ravel()
    dls_loss = np.array([np.sum(WK * (uxm ** 2 - 1)), np.sum(WK * (uym ** 2 - 1))])

    theta_g, d_gin = mlp_backward(params.theta, g_acts, d_yh)
    beta_g, _ = mlp_backward(params.beta, h_acts, d_xh + d_gin[:, 0])
    flat = np.concatenate([g.ravel() for g in (*beta_g, *theta_g)])

    e2 = -1.0 / (N * pc) * (p >= CLAMP)
    W2 = e2[:, None] * d * K / np.maximum(nd, 1.0)[:, None]
    dls_sig = np.array([np.sum(W2 * (uxm ** 2 - 1)), np.sum(W2 * (uym ** 2 - 1))])
    return loss, sigma_loss, flat, dls_loss, dls_sig


def gan_terms(x, y, z, omega, nu, params: GeneratorParams, log_sigma, grads=False):
    """K_n, the paired leave-one-out entropy and their gradients.

    Returns (loss, sigma_loss, dparams_flat, dlog_sigma_of_loss,
    dlog_sigma_of_sigma_loss, synthetic_rows).
    """
    sig = np.exp(log_sigma)
    xh, h_acts = h_forward(params, z, omega)
    yh, g_acts = g_forward(params, xh, omega, nu)
    R = np.column_stack([x, y, z])
    S = np.column_stack([xh, yh, z])
    loss, sigma_loss, dS, dls, dls_sig = gan_objectives(R, S, sig, grads)
    if not grads:
        return loss, sigma_loss, None, None, None, S
    theta_g, d_gin = mlp_backward(params.theta, g_acts, dS[:, 1])
    beta_g, _ = mlp_backward(params.beta, h_acts, dS[:, 0] + d_gin[:, 0])
    flat = np.concatenate([g.ravel() for g in (*beta_g, *theta_g)])
    return loss, sigma_loss, flat, dls, dls_sig, S


# --------------------------------------------------------------------------
# descent loops

def _checkpoint(cfg: TrainConfig, stage, it, params, log_sigma):
    if not cfg.checkpoint_every or cfg.checkpoint_dir is None:
        return
    if (it + 1) % cfg.checkpoint_every:
        return
    out = Path(cfg.checkpoint_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec = {"stage": stage, "iteration": it + 1, "params": params.to_dict(),
           "sigma": np.exp(log_sigma).tolist()}
    (out / f"checkpoint_{stage}.json").write_text(json.dumps(rec))


def load_checkpoint(path):
    rec = json.loads(Path(path).read_text())
    return GeneratorParams.from_dict(rec["params"]), rec["sigma"], rec["iteration"]


def _descend(stage, terms, params, log_sigma, cfg, rng, draw):
    trace = TrainTrace()
    prev = None
    it = 0
    while it < cfg.max_iterations:
        omega, nu = draw(rng)
        with np.errstate(all="ignore"):   # non-finite values are checked just below
            loss, sloss, g_w, _, g_s = terms(omega, nu, params, log_sigma)[:5]
        if not (np.isfinite(loss) and np.isfinite(sloss)):
            trace.stop_reason = "non-finite loss"
            raise TrainingAborted(f"{stage}: non-finite loss at iteration {it}", trace)
        trace.loss.append(loss)
        trace.sigma_loss.append(sloss)
        trace.sigmas.append(tuple(np.exp(log_sigma).tolist()))
        with np.errstate(all="ignore"):
            flat = params.flat() - cfg.step * g_w
            new_ls = log_sigma.copy()
            new_ls[:len(g_s)] -= cfg.step * g_s
        if not (np.all(np.isfinite(flat)) and np.all(np.isfinite(new_ls))):
            trace.stop_reason = "non-finite parameters"
            raise TrainingAborted(f"{stage}: non-finite update at iteration {it}", trace)
        params = params.with_flat(flat)
        log_sigma = new_ls
        _checkpoint(cfg, stage, it, params, log_sigma)
        if prev is not None and abs(loss - prev) < cfg.tol:
            trace.stop_reason = "converged"
            break
        prev = loss
        it += 1
    else:
        trace.stop_reason = "max_iterations"
    return params, log_sigma, trace


def init_stage(data: Dataset, params: GeneratorParams, cfg: TrainConfig, sigma: Bandwidths | None = None):
    """Likelihood-based initialization; sigma_z is carried through untouched."""
    if len(data) < 2:
        raise ValueError("need at least 2 records")
    if sigma is None:
        sigma = Bandwidths(silverman_bandwidth(data.x), silverman_bandwidth(data.y),
                           silverman_bandwidth(data.z))
    log_sigma = np.log(sigma.vector())
    x, y, z = data.x, data.y, data.z
    N, J = len(data), cfg.inner_samples
    rng = np.random.default_rng(cfg.seed)

    def draw(r):
        return r.random((N, J)), r.random((N, J))

    def terms(omega, nu, p, ls):
        return init_terms(x, y, z, omega, nu, p, ls, grads=True)

    params, log_sigma, trace = _descend("init", terms, params.copy(), log_sigma, cfg, rng, draw)
    return params, Bandwidths.from_vector(np.exp(log_sigma), sigma.sigma_omega), trace


def congan_stage(data: Dataset, params: GeneratorParams, sigma: Bandwidths, cfg: TrainConfig):
    if len(data) < 2:
        raise ValueError("need at least 2 records")
    x, y, z = data.x, data.y, data.z
    N = len(data)
    rng = np.random.default_rng(cfg.seed)

    def draw(r):
        return r.random(N), r.random(N)

    def terms(omega, nu, p, ls):
        return gan_terms(x, y, z, omega, nu, p, ls, grads=True)

    params, log_sigma, trace = _descend("congan", terms, params.copy(),
                                        np.log(sigma.vector()), cfg, rng, draw)
    return params, Bandwidths.from_vector(np.exp(log_sigma), sigma.sigma_omega), trace


def stationary_bandwidths(data: Dataset, params: GeneratorParams, seed=0, start=None) -> Bandwidths:
    """Bandwidths minimizing the paired leave-one-out entropy at one synthetic draw.

    Used to start the adversarial stage where its own bandwidth update is
    stationary, so early iterations move the generators rather than sigma.
    """
    rng = np.random.default_rng(seed)
    N = len(data)
    xh, yh = generate(params, data.z, rng.random(N), rng.random(N))
    R = data.points()
    S = np.column_stack([xh, yh, data.z])
    if start is None:
        start = [silverman_bandwidth(c) for c in (data.x, data.y, data.z)]

    def f(ls):
        r = gan_objectives(R, S, np.exp(ls), grads=True)
        return r[1], r[4]

    res = minimize(f, np.log(start), jac=True, method="L-BFGS-B",
                   bounds=[(-12.0, 5.0)] * 3)
    return Bandwidths.from_vector(np.exp(res.x))


# --------------------------------------------------------------------------
# standardization and the fitted model

@dataclass
class Scaler:
    """Per-column location/scale for (x, y, z)."""
    mean: np.ndarray
    sd: np.ndarray

    @classmethod
    def fit(cls, data: Dataset) -> Scaler:
        P = data.points()
        sd = P.std(axis=0, ddof=1)
        if np.any(~(sd > 0)):
            raise ValueError("cannot standardize a constant column")
        return cls(P.mean(axis=0), sd)

    def transform(self, data: Dataset) -> Dataset:
        m, s = self.mean, self.sd
        return Dataset((data.x - m[0]) / s[0], (data.y - m[1]) / s[1], (data.z - m[2]) / s[2])

    def to_dict(self):
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["sd"], dtype=float))


@dataclass
class FittedModel:
    params: GeneratorParams
    sigma: Bandwidths
    scaler: Scaler
    init_trace: TrainTrace | None = None
    gan_trace: TrainTrace | None = None

    def action(self, z, omega):
        m, s = self.scaler.mean, self.scaler.sd
        xs, _ = h_forward(self.params, (np.asarray(z, dtype=float) - m[2]) / s[2], omega)
        return xs * s[0] + m[0]

    def outcome(self, x, omega, nu):
        m, s = self.scaler.mean, self.scaler.sd
        ys, _ = g_forward(self.params, (np.asarray(x, dtype=float) - m[0]) / s[0], omega, nu)
        return ys * s[1] + m[1]

    def generate(self, z, omega, nu):
        x = self.action(z, omega)
        return x, self.outcome(x, omega, nu)

    def to_dict(self):
        return {"params": self.params.to_dict(), "sigma": self.sigma.vector().tolist(),
                "scaler": self.scaler.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(GeneratorParams.from_dict(d["params"]), Bandwidths.from_vector(d["sigma"]),
                   Scaler.from_dict(d["scaler"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit(data: Dataset, init_iters=300, gan_iters=500, hidden=DEFAULT_HIDDEN, seed=0,
        step=0.01, inner_samples=32, checkpoint_dir=None, checkpoint_every=0) -> FittedModel:
    """Standardize, run both stages and wrap the result."""
    scaler = Scaler.fit(data)
    sd = scaler.transform(data)
    ss = np.random.SeedSequence(seed).spawn(4)
    params = init_weights(hidden, seed=int(ss[0].generate_state(1)[0]))
    c1 = TrainConfig(max_iterations=init_iters, step=step, inner_samples=inner_samples,
                     seed=int(ss[1].generate_state(1)[0]), checkpoint_dir=checkpoint_dir,
                     checkpoint_every=checkpoint_every)
    params, sigma, t1 = init_stage(sd, params, c1)
    sigma = stationary_bandwidths(sd, params, seed=int(ss[3].generate_state(1)[0]))
    c2 = TrainConfig(max_iterations=gan_iters, step=step, seed=int(ss[2].generate_state(1)[0]),
                     checkpoint_dir=checkpoint_dir, checkpoint_every=checkpoint_every)
    params, sigma, t2 = congan_stage(sd, params, sigma, c2)
    return FittedModel(params, sigma, scaler, t1, t2)


# --------------------------------------------------------------------------
# scalar-tape versions of both losses (inputs: weights plus log_sigma_*)

def _tape_kernel(u, s):
    return ad.exp(-0.5 * (u / s) * (u / s)) / (s * SQRT_2PI)


def tape_init_loss(data: Dataset, omega, nu, params: GeneratorParams) -> ad.Tape:
    tape = ad.Tape()
    W = tape_weights(tape, params)
    sx = ad.exp(tape.input("log_sigma_x"))
    sy = ad.exp(tape.input("log_sigma_y"))
    N, J = np.shape(omega)
    total = tape.const(0.0)
    for i in range(N):
        dens = tape.const(0.0)
        for j in range(J):
            w, v = float(omega[i, j]), float(nu[i, j])
            xh = mlp_scalar(W["beta"], [float(data.z[i]), w])
            yh = mlp_scalar(W["theta"], [xh, w, v])
            dens = dens + _tape_kernel(xh - float(data.x[i]), sx) * _tape_kernel(yh - float(data.y[i]), sy)
        total = total + ad.log(ad.clamp_min(dens / J, CLAMP))
    tape.set_output(-total / N)
    return tape


def tape_jsd_loss(data: Dataset, omega, nu, params: GeneratorParams) -> ad.Tape:
    tape = ad.Tape()
    W = tape_weights(tape, params)
    sig = [ad.exp(tape.input(f"log_sigma_{c}")) for c in "xyz"]
    N = len(data)
    R = [(float(data.x[i]), float(data.y[i]), float(data.z[i])) for i in range(N)]
    S = []
    for i in range(N):
        xh = mlp_scalar(W["beta"], [float(data.z[i]), float(omega[i])])
        yh = mlp_scalar(W["theta"], [xh, float(omega[i]), float(nu[i])])
        S.append((xh, yh, float(data.z[i])))

    def k(a, b):
        out = 1.0
        for d in range(3):
            out = _tape_kernel(b[d] - a[d], sig[d]) * out
        return out

    def dens(pt, centers):
        acc = tape.const(0.0)
        for c in centers:
            acc = acc + k(pt, c)
        return ad.clamp_min(acc / N, CLAMP)

    total = tape.const(0.0)
    for i in range(N):
        p, q = dens(R[i], R), dens(R[i], S)
        total = total + ad.log(p / (p + q))
        p, q = dens(S[i], R), dens(S[i], S)
        total = total + ad.log(q / (p + q))
    tape.set_output(total / N)
    return tape
