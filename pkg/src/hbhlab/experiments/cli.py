"""Command line: ``python -m hbhlab <subcommand> ...``.

Subcommands
-----------
init-config   write a fully resolved default configuration
ed            exact ground state(s), energies and optional COO export
train         one training run
sweep-alpha   flux sweep
ratio-study   parameter-ratio scatter
required-params  required-parameter curves
ablations     ablation table
analyze       element statistics, loss surface and Hessian of a checkpoint
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import analysis
from ..ansatz import full_state_vector, load_checkpoint
from ..exact import Bipartition, lowest_eigenpairs, save_state, von_neumann_entropy
from ..hamiltonian import hbh_hamiltonian
from ..hilbert import LatticeShape
from ..optimize import OverlapObjective, newton_refine
from .config import ExperimentConfig, dump_config, load_config
from .runners import (
    RunSpec,
    execute,
    run_ablation_table,
    run_alpha_sweep,
    run_ratio_study,
    run_required_params,
)


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    kw = {"seeds": (args.seed,)}
    if args.out:
        kw["output_dir"] = args.out
    if getattr(args, "max_steps", None):
        kw["train"] = cfg.train.replace(max_steps=args.max_steps)
    return cfg.replace(**kw)


def cmd_init_config(args):
    dump_config(ExperimentConfig(), args.path)
    print(f"wrote {args.path}")


def cmd_ed(args):
    shape = LatticeShape(args.lx, args.ly)
    h = hbh_hamiltonian(shape, args.n, args.alpha, args.j)
    res = lowest_eigenpairs(h, k=args.k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_state(out / "ground_state.npz", res.ground_state, h.basis, args.alpha)
    if args.export_hamiltonian:
        h.export_coo(out / "hamiltonian.coo")
    summary = {
        "l_x": args.lx,
        "l_y": args.ly,
        "n": args.n,
        "alpha": args.alpha,
        "dim": h.dim,
        "energies": res.energies,
        "residuals": res.residuals,
        "degenerate": res.degenerate,
        "method": res.method,
        "entropy_half": von_neumann_entropy(res.ground_state, h.basis, Bipartition.half(shape)),
    }
    analysis.write_summary_json(out / "ed.json", summary)
    print(json.dumps(analysis._jsonable(summary), indent=2))


def cmd_train(args):
    cfg = _load(args)
    method = args.method or cfg.methods[0]
    net = cfg.net.configs()[0]
    spec = RunSpec(tuple(cfg.shapes[0]), cfg.particles[0], args.alpha, net, cfg.train.replace(method=method), args.seed, cfg.j_hop)
    out = Path(cfg.output_dir) / "train"
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.json")
    rec = execute(spec, str(out))
    (out / "record.json").write_text(rec.to_json() + "\n")
    print(rec.to_json())


def _study(fn):
    def run(args):
        result = fn(_load(args))
        for r in result:
            print(r.to_json() if hasattr(r, "to_json") else json.dumps(analysis._jsonable(r)))

    return run


def cmd_analyze(args):
    net, header = load_checkpoint(args.checkpoint)
    alpha = header.get("alpha", args.alpha) if args.alpha is None else args.alpha
    n = header.get("n", args.n) if args.n is None else args.n
    if alpha is None or n is None:
        raise SystemExit("alpha and n must be given (or stored in the checkpoint)")
    h = hbh_hamiltonian(net.shape, n, alpha)
    ed = lowest_eigenpairs(h, k=1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    psi = full_state_vector(net, h.basis)
    summary = {
        "alpha": alpha,
        "n": n,
        "overlap_deviation": analysis.overlap_deviation(psi, ed.ground_state),
        "energy_error": analysis.energy_error(psi, h, ed.ground_energy),
    }
    what = set(args.what.split(","))
    if "elements" in what:
        stats = analysis.element_statistics(psi, ed.ground_state)
        analysis.write_elements_csv(out / "elements.csv", stats)
        analysis.write_histogram_csv(out / "histogram.csv", stats)
    net64 = net.astype("f64")
    obj = OverlapObjective(net64, h.basis, ed.ground_state)
    theta = net64.real_params
    if "surface" in what:
        surf = analysis.loss_surface(obj.value, theta, seed=args.seed, n_points=args.grid)
        analysis.write_surface_csv(out / "surface.csv", surf)
        summary["surface_center"] = surf.center
        summary["surface_convex_fraction"] = analysis.surface_convexity(surf)
    if "hessian" in what:
        spec = analysis.hessian_spectrum(obj.grad, theta)
        analysis.write_spectrum_csv(out / "hessian.csv", spec)
        summary["hessian"] = analysis.spectrum_summary(spec)
    if "newton" in what:
        res = newton_refine(obj.value, obj.grad, theta, max_iters=args.newton_iters)
        refined = obj.vector(res.theta)
        summary["newton"] = {
            "deviation_before": summary["overlap_deviation"],
            "deviation_after": analysis.overlap_deviation(refined, ed.ground_state),
            "losses": res.losses,
            "flags": res.flags,
        }
    analysis.write_summary_json(out / "summary.json", summary)
    print(json.dumps(analysis._jsonable(summary), indent=2))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hbhlab", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init-config", help="write the default configuration")
    s.add_argument("path")
    s.set_defaults(func=cmd_init_config)

    s = sub.add_parser("ed", help="exact diagonalization")
    s.add_argument("--lx", type=int, default=4)
    s.add_argument("--ly", type=int, default=5)
    s.add_argument("-n", type=int, default=4)
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("-j", type=float, default=1.0)
    s.add_argument("-k", type=int, default=2)
    s.add_argument("--export-hamiltonian", action="store_true")
    s.add_argument("--out", default="results/ed")
    s.set_defaults(func=cmd_ed)

    def train_like(name, func, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON configuration (defaults if omitted)")
        s.add_argument("--seed", type=int, required=True)
        s.add_argument("--out", help="output directory (overrides the config)")
        s.add_argument("--max-steps", type=int, help="override train.max_steps")
        s.set_defaults(func=func)
        return s

    s = train_like("train", cmd_train, "one training run")
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--method", choices=["sr", "site", "supervised"])
    train_like("sweep-alpha", _study(run_alpha_sweep), "flux sweep")
    train_like("ratio-study", _study(run_ratio_study), "parameter-ratio study")
    train_like("required-params", _study(run_required_params), "required-parameter curves")
    train_like("ablations", _study(run_ablation_table), "ablation table")

    s = sub.add_parser("analyze", help="diagnostics of a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--alpha", type=float)
    s.add_argument("-n", type=int)
    s.add_argument("--what", default="elements,surface,hessian", help="comma list of elements,surface,hessian,newton")
    s.add_argument("--grid", type=int, default=41)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--newton-iters", type=int, default=3)
    s.add_argument("--out", default="results/analysis")
    s.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    np.set_printoptions(precision=6)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
