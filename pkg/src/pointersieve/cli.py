"""Command-line entry point: figure reproductions, sieve scans, validation.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 numeric failure (NaN, loss of positivity, failed quadrature).
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import tempfile

import numpy as np

from . import oracle, sieve, validate
from .config import ExperimentConfig
from .errors import ConfigError, ModelError, NumericError, PointerSieveError
from .models import AtomParams, QbmParams, atom_model, b_ensemble, cat_ket, most_mixed_subspace_state, qbm_model
from .qmatrix import DensityMatrix, FockBasis, coherent_state
from .rng import derive_seed
from .unravel import MeasurementScheme, run_trajectory

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

COLUMNS = {
    "fig1": "phi,t,deltaP_analytic,deltaP_mc,stderr",
    "fig2": "tau,A_bin_center,density_analytic,density_mc",
    "fig3": "tau,A_traj_1..A_traj_k; plus <out>_flips.csv: window_lo,window_hi,flip_frequency,law_mean,fit_slope",
    "sieve": "rank,descriptor,x,y,z,purity_loss_rate,fidelity_loss_rate,purity_stderr,fidelity_stderr (atom); "
    "rank,descriptor,purity_loss_rate,fidelity_loss_rate,purity_stderr,fidelity_stderr (qbm)",
    "validate": "criterion,name,passed,measured,target,tolerance,seconds",
    "trajectory": "t,purity,fidelity,x,y,z (atom) or t,purity,fidelity,re_a,im_a,n_mean (qbm)",
}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return str(v)


def write_csv(path: str, header, rows, comments=()) -> None:
    """Write a CSV atomically (temp file in the target directory, then rename)."""
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".csv", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _out(cfg, suffix=""):
    path = cfg.out or f"{cfg.experiment}.csv"
    if suffix:
        stem, ext = os.path.splitext(path)
        path = f"{stem}{suffix}{ext or '.csv'}"
    return path


def _log(msg):
    print(msg, file=sys.stderr)


def run_fig1(cfg: ExperimentConfig) -> int:
    phis = np.asarray(cfg.phis if cfg.phis is not None else np.linspace(0, math.pi, cfg.n_phi), float)
    mc = oracle.purity_gain_mc(cfg.omega, cfg.R, phis, cfg.eta, cfg.dt, cfg.sample_times, cfg.n_traj, cfg.master_seed)
    mean, se = mc.mean, mc.stderr
    rows, worst = [], 0.0
    for i, phi in enumerate(phis):
        for j, t in enumerate(mc.times):
            ana = oracle.purity_curve(t, cfg.eta, cfg.R, phi) - 0.5
            worst = max(worst, abs(mean[i, j] - ana) / se[i, j] if se[i, j] > 0 else 0.0)
            rows.append((phi, t, ana, mean[i, j], se[i, j]))
    write_csv(_out(cfg), COLUMNS["fig1"].split(","), rows)
    _log(f"fig1: max |MC - analytic| / SE = {worst:.3g}")
    zero = np.flatnonzero(np.isclose(phis, 0.0))
    if zero.size:
        is_max = bool(np.all(mean[zero[0]] >= mean.max(axis=0)))
        _log(f"fig1: phi=0 maximal at every t: {is_max}")
    return EXIT_OK


def run_fig2(cfg: ExperimentConfig) -> int:
    taus = sorted(cfg.taus)
    ens = b_ensemble(cfg.n_traj, max(taus), cfg.dt, cfg.master_seed, taus)
    edges = np.linspace(-1, 1, cfg.bins + 1)
    width = np.diff(edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    rows = []
    for j, tau in enumerate(ens.taus):
        prob = oracle.a_bin_probabilities(tau, edges)
        counts, _ = np.histogram(np.clip(ens.a_samples[j], -1, 1), bins=edges)
        dens_mc = counts / (cfg.n_traj * width)
        for c, da, dm in zip(centers, prob / width, dens_mc):
            rows.append((tau, c, da, dm))
        mass = float(np.mean(np.abs(ens.a_samples[j]) > 0.9))
        l1 = float(np.abs(counts / cfg.n_traj - prob).sum())
        _log(f"fig2: tau={tau:g}: L1={l1:.4f}, analytic integral={float(np.sum(prob)):.6f}, MC mass |A|>0.9 = {mass:.4f}")
    write_csv(_out(cfg), COLUMNS["fig2"].split(","), rows)
    return EXIT_OK


def run_fig3(cfg: ExperimentConfig) -> int:
    n_steps = int(round(cfg.t_final / cfg.dt))
    grid = np.arange(0, n_steps + 1, cfg.sample_every) * cfg.dt
    disp = b_ensemble(cfg.n_display, cfg.t_final, cfg.dt, cfg.master_seed, grid)
    header = ["tau"] + [f"A_traj_{i + 1}" for i in range(cfg.n_display)]
    write_csv(_out(cfg), header, [(t, *disp.a_samples[j]) for j, t in enumerate(grid)])
    flip_seed = derive_seed(cfg.master_seed, 2**32)
    ens = b_ensemble(cfg.n_traj, cfg.t_final, cfg.dt, flip_seed, [cfg.t_final], count_flips=True)
    hi = min(6.0, cfg.t_final)
    fit = oracle.flip_slope_fit(ens.flips, cfg.dt, cfg.n_traj, 1.0, hi, 20)
    edges = np.linspace(1.0, hi, 21)
    rows = [(lo, up, f, law, fit.slope) for lo, up, f, law in zip(edges[:-1], edges[1:], fit.frequency, fit.law)]
    write_csv(_out(cfg, "_flips"), ["window_lo", "window_hi", "flip_frequency", "law_mean", "fit_slope"], rows)
    _log(f"fig3: flip-law slope {fit.slope:.4f} (expected 1)")
    return EXIT_OK


def _qbm_candidates(cfg):
    basis = FockBasis(cfg.fock_dim)
    z = cfg.r * complex(math.cos(cfg.theta), math.sin(cfg.theta))
    cands = [sieve.coherent_candidate(z, basis), sieve.coherent_candidate(-z, basis), sieve.coherent_candidate(0, basis)]
    cands += [sieve.number_candidate(n, basis) for n in (1, 2, 3)]
    if cfg.r >= 1:
        cands.append((f"cat(z={z.real:+.6f}{z.imag:+.6f}j)", DensityMatrix.from_ket(cat_ket(QbmParams(cfg.fock_dim, z)))))
    return QbmParams(cfg.fock_dim, z), cands


def run_sieve(cfg: ExperimentConfig) -> int:
    if cfg.model == "qbm":
        p, cands = _qbm_candidates(cfg)
        rep = sieve.sieve_scan_coherent(p, cands, eta=cfg.eta)
        rows = [(k + 1, c.descriptor, c.purity_loss_rate, c.fidelity_loss_rate, c.purity_stderr, c.fidelity_stderr) for k, c in enumerate(rep.top(len(rep.ranking)))]
        header = ["rank", "descriptor", "purity_loss_rate", "fidelity_loss_rate", "purity_stderr", "fidelity_stderr"]
        write_csv(_out(cfg), header, rows, comments=["expected: coherent states rank above number states"])
        _log(f"sieve: top candidate {rep.top(1)[0].descriptor}")
        return EXIT_OK
    rep = sieve.sieve_scan_bloch(cfg.omega, cfg.eta, cfg.grid)
    pts = rep.meta["points"]
    rows = []
    for k, i in enumerate(rep.ranking):
        c = rep.candidates[i]
        rows.append((k + 1, c.descriptor, *pts[i], c.purity_loss_rate, c.fidelity_loss_rate, c.purity_stderr, c.fidelity_stderr))
    note = "expected top states: x=+1 and x=-1 (sigma_x eigenstates)" if cfg.omega > 2 * math.pi else "expected top state near the ground state z=-1 for omega << 1"
    header = ["rank", "descriptor", "x", "y", "z", "purity_loss_rate", "fidelity_loss_rate", "purity_stderr", "fidelity_stderr"]
    write_csv(_out(cfg), header, rows, comments=[f"omega={cfg.omega:g}, eta={cfg.eta:g}, averaging window={rep.meta['window']:.6g}; {note}"])
    _log(f"sieve: top-2 {[rep.candidates[i].descriptor for i in rep.ranking[:2]]}")
    return EXIT_OK


def run_validate(cfg: ExperimentConfig, *, deterministic_only=False, only=None) -> int:
    seed = cfg.master_seed if cfg.master_seed is not None else validate.DEFAULT_SEED
    results = validate.run_criteria(seed, only, deterministic_only=deterministic_only, report=lambda r: print(r.line(), flush=True))
    if cfg.out:
        rows = [(r.number, r.name, r.passed, r.measured, r.target, r.tolerance, r.seconds) for r in results]
        write_csv(cfg.out, COLUMNS["validate"].split(","), rows)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed" + (f"; failed: {failed}" if failed else ""))
    return EXIT_VALIDATION if failed else EXIT_OK


def _initial_state(cfg, p=None):
    init = cfg.initial
    if cfg.model == "qbm":
        init = init or "coherent"
        if init == "coherent":
            return coherent_state(p.z, p.basis)
        if init == "cat":
            return DensityMatrix.from_ket(cat_ket(p))
        if init == "subspace_mixed":
            return most_mixed_subspace_state(p)
        raise ConfigError(f"initial: {init!r} is not available for the qbm model")
    kets = {"excited": [1, 0], "ground": [0, 1], "plus_x": [1, 1], "plus_y": [1, 1j]}
    init = init or "excited"
    if init == "mixed":
        return DensityMatrix(np.eye(2) / 2)
    if init not in kets:
        raise ConfigError(f"initial: {init!r} is not available for the atom model")
    return DensityMatrix.from_ket(kets[init])


def run_trajectory_cmd(cfg: ExperimentConfig) -> int:
    scheme = MeasurementScheme(cfg.kind, cfg.R, cfg.phi, cfg.eta)
    if cfg.model == "qbm":
        p = QbmParams(cfg.fock_dim, cfg.r * complex(math.cos(cfg.theta), math.sin(cfg.theta)))
        m = qbm_model(p)
        rho0 = _initial_state(cfg, p)
    else:
        m = atom_model(AtomParams(cfg.omega))
        rho0 = _initial_state(cfg)
    if cfg.kind == "jump" and cfg.eta > 0 and cfg.R > 0:
        dt_max = 0.1 / (cfg.eta * cfg.R**2)
        if dt_max < 1e-6:
            _log(f"warning: the jump scheme needs dt <= {dt_max:.3g} here; the diffusive scheme (--kind diffusive) is recommended")
    n_steps = int(round(cfg.t_final / cfg.dt))
    if cfg.sample_times is not None:
        times = cfg.sample_times
    else:
        every = max(1, n_steps // 300)
        times = list(np.arange(0, n_steps + 1, every) * cfg.dt)
    traj = run_trajectory(m, scheme, rho0, cfg.t_final, cfg.dt, times, cfg.master_seed)
    pur = traj.purity()
    fid = traj.fidelity(rho0, m)
    if cfg.model == "qbm":
        a = m.collapse
        ev = [np.trace(s.mat @ a) for s in traj.states]
        nm = [np.trace(s.mat @ a.conj().T @ a).real for s in traj.states]
        rows = [(t, pu, f, e.real, e.imag, n) for t, pu, f, e, n in zip(traj.times, pur, fid, ev, nm)]
        header = ["t", "purity", "fidelity", "re_a", "im_a", "n_mean"]
    else:
        b = traj.bloch()
        rows = [(t, pu, f, *bb) for t, pu, f, bb in zip(traj.times, pur, fid, b)]
        header = ["t", "purity", "fidelity", "x", "y", "z"]
    write_csv(_out(cfg), header, rows)
    _log(f"trajectory: {traj.record.n_clicks} clicks" if cfg.kind == "jump" else f"trajectory: {len(traj.times)} samples")
    return EXIT_OK


RUNNERS = {"fig1": run_fig1, "fig2": run_fig2, "fig3": run_fig3, "sieve": run_sieve, "trajectory": run_trajectory_cmd}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file; flags override its fields")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed (required for stochastic experiments)")
    common.add_argument("--n-traj", type=int, metavar="N", help="number of trajectories")
    common.add_argument("--out", metavar="PATH", help="output CSV path")
    common.add_argument("--dt", type=float, metavar="X", help="time step (dtau for fig2/fig3)")
    common.add_argument("--eta", type=float, metavar="X", help="detector efficiency in [0, 1]")
    common.add_argument("--r", type=float, metavar="X", help="coherent amplitude |z| of the oscillator model")
    common.add_argument("--R", type=float, metavar="X", dest="R", help="local-oscillator amplitude")
    common.add_argument("--phi", type=float, metavar="X", help="homodyne phase (radians)")
    common.add_argument("--omega", type=float, metavar="X", help="Rabi frequency of the atom")
    common.add_argument("--t-final", type=float, metavar="X", help="final time (tau for fig3)")
    common.add_argument("--model", choices=("atom", "qbm"))
    common.add_argument("--kind", choices=("unconditional", "jump", "diffusive"))
    common.add_argument("--fock-dim", type=int, metavar="D")

    parser = argparse.ArgumentParser(prog="pointersieve", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "fig1": "purity gain vs homodyne phase (linear-response Monte Carlo vs closed form)",
        "fig2": "distribution of A = tanh(B) at several tau",
        "fig3": "sample A(tau) trajectories and the flip-frequency law",
        "sieve": "rank candidate states by purity / fidelity loss",
        "validate": "run the acceptance criteria",
        "trajectory": "integrate one conditioned trajectory",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, parents=[common], help=text, description=f"{text}. CSV columns: {COLUMNS[name]}")
        if name == "validate":
            sp.add_argument("--deterministic-only", action="store_true", help="run only the criteria without Monte Carlo")
            sp.add_argument("--only", type=lambda s: [int(x) for x in s.split(",")], metavar="LIST", help="comma-separated criterion numbers")
    return parser


def load_config(args) -> ExperimentConfig:
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = ExperimentConfig.from_json(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if cfg.experiment != args.command:
            raise ConfigError(f"experiment: config says {cfg.experiment!r} but the subcommand is {args.command!r}")
    else:
        cfg = ExperimentConfig(experiment=args.command)
    cfg = cfg.with_overrides(
        master_seed=args.seed, n_traj=args.n_traj, out=args.out, dt=args.dt, eta=args.eta, r=args.r, R=args.R,
        phi=args.phi, omega=args.omega, t_final=args.t_final, model=args.model, kind=args.kind, fock_dim=args.fock_dim,
    )
    return cfg.resolved()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "validate":
            return run_validate(cfg, deterministic_only=args.deterministic_only, only=args.only)
        return RUNNERS[args.command](cfg)
    except (NumericError, ModelError) as exc:
        _log(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except (ConfigError, ValueError, PointerSieveError) as exc:
        _log(f"configuration error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
