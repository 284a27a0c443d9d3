"""Sweep drivers: flux sweeps, the parameter-ratio study, required-parameter curves, ablations.

Each grid point becomes a :class:`RunSpec`; specs run in a process pool whose
size comes from the ``HBH_WORKERS`` environment variable (default 1).  Records
are written by the parent process only, one JSON line per run.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from ..analysis import energy_error, overlap_deviation
from ..ansatz import Network, NetworkConfig, full_state_vector, save_checkpoint
from ..exact import lowest_eigenpairs
from ..hamiltonian import hbh_hamiltonian
from ..hilbert import LatticeShape
from ..optimize import TrainConfig, curriculum_train, train_site, train_sr, train_supervised
from .config import ExperimentConfig, dump_config

log = logging.getLogger(__name__)

WORKERS_ENV = "HBH_WORKERS"
DEGENERACY_GAP = 1e-10


def code_hash() -> str:
    """Content hash of the package sources (stands in for a commit id)."""
    root = Path(__file__).resolve().parents[1]
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class RunSpec:
    shape: tuple
    n: int
    alpha: float
    net: NetworkConfig
    train: TrainConfig
    seed: int
    j_hop: float = 1.0
    curriculum: Optional[tuple] = None
    tag: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def run_id(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]


@dataclass
class RunRecord:
    config: dict
    seed: int
    code_version: str
    metrics: dict
    history_path: Optional[str] = None
    checkpoint_path: Optional[str] = None
    status: str = "ok"
    flags: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=_json_default)


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not serializable: {type(x)}")


@lru_cache(maxsize=32)
def reference(shape: tuple, n: int, alpha: float, j_hop: float = 1.0):
    """Hamiltonian and its two lowest eigenpairs (cached per process)."""
    h = hbh_hamiltonian(LatticeShape(*shape), n, alpha, j_hop)
    k = 2 if h.dim > 1 else 1
    return h, lowest_eigenpairs(h, k=k)


def _finite(x) -> bool:
    return x is None or bool(np.isfinite(x))


def execute(spec: RunSpec, out_dir: Optional[str] = None) -> RunRecord:
    """Run one training job and measure it against ED."""
    t0 = time.perf_counter()
    shape = LatticeShape(*spec.shape)
    h, ed = reference(tuple(spec.shape), spec.n, spec.alpha, spec.j_hop)
    e_gs = float(ed.energies[0])
    gap = float(ed.gap) if len(ed.energies) > 1 else float("nan")
    net = Network(spec.net.replace(seed=spec.seed), shape)
    cfg = spec.train.replace(seed=spec.seed)
    flags = []
    try:
        if spec.curriculum is not None:
            def ground(a):
                return reference(tuple(spec.shape), spec.n, float(a), spec.j_hop)[1].ground_state

            net, hist = curriculum_train(net, h.basis, spec.curriculum, cfg, ground)
        elif cfg.method == "supervised":
            net, hist = train_supervised(net, h.basis, ed.ground_state, cfg, h)
        elif cfg.method == "sr":
            net, hist = train_sr(net, h, cfg)
        else:
            net, hist = train_site(net, h, cfg)
        psi = full_state_vector(net, h.basis)
        metrics = {
            "overlap_deviation": overlap_deviation(psi, ed.ground_state),
            "energy_error": energy_error(psi, h, e_gs),
            "e_gs": e_gs,
            "gap": gap,
            "n_params": net.n_params,
            "dim": h.dim,
            "best_step": hist.best_step,
        }
        flags += hist.flags
        status = "ok"
    except Exception as exc:  # a failed run is recorded, the sweep goes on
        log.exception("run %s failed", spec.run_id)
        metrics = {"e_gs": e_gs, "gap": gap, "dim": h.dim}
        flags.append(f"{type(exc).__name__}: {exc}")
        status = "failed"
        hist = None
    metrics["wall_time"] = time.perf_counter() - t0
    if not all(_finite(v) for v in metrics.values() if isinstance(v, float)):
        flags.append("non-finite metric")
    rec = RunRecord(spec.to_dict(), spec.seed, code_hash(), metrics, status=status, flags=flags)
    if out_dir is not None and hist is not None:
        runs = Path(out_dir) / "runs"
        runs.mkdir(parents=True, exist_ok=True)
        hp = runs / f"{spec.run_id}.jsonl"
        cp = runs / f"{spec.run_id}.npz"
        hist.save_jsonl(hp)
        save_checkpoint(cp, net, alpha=spec.alpha, n=spec.n, seed=spec.seed)
        rec.history_path, rec.checkpoint_path = str(hp), str(cp)
    return rec


def _skipped(spec: RunSpec, reason: str) -> RunRecord:
    return RunRecord(spec.to_dict(), spec.seed, code_hash(), {}, status="skipped", flags=[reason])


def degenerate(shape, n, alpha, j_hop=1.0) -> bool:
    ed = reference(tuple(shape), n, float(alpha), j_hop)[1]
    return len(ed.energies) > 1 and ed.gap < DEGENERACY_GAP


def run_specs(specs: list[RunSpec], out_dir: Optional[str] = None, workers: Optional[int] = None) -> list[RunRecord]:
    """Execute specs (in parallel when ``workers > 1``); records keep the input order."""
    workers = worker_count() if workers is None else workers
    pending, records = [], [None] * len(specs)
    for i, s in enumerate(specs):
        if degenerate(s.shape, s.n, s.alpha, s.j_hop):
            records[i] = _skipped(s, "degenerate ground state")
        else:
            pending.append(i)
    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {i: pool.submit(execute, specs[i], out_dir) for i in pending}
            for i, f in futs.items():
                records[i] = f.result()
    else:
        for i in pending:
            records[i] = execute(specs[i], out_dir)
    if out_dir is not None:
        append_records(Path(out_dir) / "records.jsonl", records)
    return records


def append_records(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def load_records(path) -> list[RunRecord]:
    with open(Path(path)) as fh:
        return [RunRecord(**json.loads(line)) for line in fh if line.strip()]


def write_csv(path, header: list, rows: list) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _prepare(cfg: ExperimentConfig, name: str) -> Optional[Path]:
    if not cfg.output_dir:
        return None
    out = Path(cfg.output_dir) / name
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.json")
    return out


def _base_net(cfg: ExperimentConfig) -> NetworkConfig:
    return cfg.net.configs()[0]


# ---------------------------------------------------------------------------
# studies


SWEEP_COLUMNS = ["alpha", "l_x", "l_y", "n", "method", "seed", "status", "energy_error", "overlap_deviation", "n_params", "dim"]


def _row(rec: RunRecord, columns) -> list:
    c, m = rec.config, rec.metrics
    lookup = {
        "alpha": c["alpha"],
        "l_x": c["shape"][0],
        "l_y": c["shape"][1],
        "n": c["n"],
        "method": c["train"]["method"],
        "seed": rec.seed,
        "status": rec.status,
        "architecture": c["net"]["architecture"],
        "depth": c["net"]["depth"],
        "width": c["net"]["width"],
    }
    return [lookup[k] if k in lookup else m.get(k, "") for k in columns]


def run_alpha_sweep(cfg: ExperimentConfig) -> list[RunRecord]:
    """Train at every flux value for every shape, particle number, method and seed."""
    out = _prepare(cfg, "sweep_alpha")
    net = _base_net(cfg)
    specs = [
        RunSpec(tuple(shape), n, float(a), net, cfg.train.replace(method=m), seed, cfg.j_hop, tag="sweep")
        for shape in cfg.shapes
        for n in cfg.particles
        for a in cfg.alphas
        for m in cfg.methods
        for seed in cfg.seeds
    ]
    recs = run_specs(specs, str(out) if out else None)
    if out:
        write_csv(out / "sweep_alpha.csv", SWEEP_COLUMNS, [_row(r, SWEEP_COLUMNS) for r in recs])
    return recs


RATIO_COLUMNS = ["ratio", "overlap_deviation", "alpha", "architecture", "depth", "width", "n_params", "dim", "l_x", "l_y", "n", "seed", "status"]


def run_ratio_study(cfg: ExperimentConfig) -> list[dict]:
    """Supervised runs over the full network grid; returns the scatter table rows as dicts."""
    out = _prepare(cfg, "ratio_study")
    train = cfg.train.replace(method="supervised")
    specs = [
        RunSpec(tuple(shape), n, float(a), net, train, seed, cfg.j_hop, tag="ratio")
        for shape in cfg.shapes
        for n in cfg.particles
        for net in cfg.net.configs()
        for a in cfg.alphas
        for seed in cfg.seeds
    ]
    recs = run_specs(specs, str(out) if out else None)
    rows = []
    for r in recs:
        row = dict(zip(RATIO_COLUMNS, _row(r, RATIO_COLUMNS)))
        m = r.metrics
        row["ratio"] = m["n_params"] / m["dim"] if "n_params" in m else ""
        rows.append(row)
    if out:
        write_csv(out / "ratio_study.csv", RATIO_COLUMNS, [[row[k] for k in RATIO_COLUMNS] for row in rows])
    return rows


def required_parameter_count(counts, errors, target: float):
    """Smallest parameter count reaching ``error <= target``.

    Interpolates linearly in (log n_params, log error) between the first
    bracketing pair.  Returns ``(n_req, status)`` with status ``"exact"``
    (smallest net already good enough), ``"interpolated"`` or ``"unbounded"``.
    """
    counts = np.asarray(counts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if target <= 0:
        raise ValueError("target error must be positive")
    if errors[0] <= target:
        return float(counts[0]), "exact"
    for i in range(1, len(counts)):
        if errors[i] <= target:
            e0, e1 = np.log(max(errors[i - 1], 1e-300)), np.log(max(errors[i], 1e-300))
            c0, c1 = np.log(counts[i - 1]), np.log(counts[i])
            t = (np.log(target) - e0) / (e1 - e0) if e1 != e0 else 1.0
            return float(np.exp(c0 + t * (c1 - c0))), "interpolated"
    return None, "unbounded"


REQ_COLUMNS = ["alpha", "depth", "gap", "delta_e_req", "n_req", "status", "dim"]


def run_required_params(cfg: ExperimentConfig) -> list[dict]:
    """For each flux and depth, the parameter count needed to reach ``gap_fraction`` of the gap."""
    out = _prepare(cfg, "required_params")
    base = _base_net(cfg)
    shape, n = tuple(cfg.shapes[0]), cfg.particles[0]
    train = cfg.train.replace(method=cfg.methods[0])
    specs, keys = [], []
    for a in cfg.alphas:
        for depth in cfg.net.depths:
            for w in cfg.width_ladder:
                for seed in cfg.seeds:
                    specs.append(RunSpec(shape, n, float(a), base.replace(depth=depth, width=w), train, seed, cfg.j_hop, tag="nreq"))
                    keys.append((float(a), depth, w))
    recs = run_specs(specs, str(out) if out else None)
    rows = []
    for a in cfg.alphas:
        h, ed = reference(shape, n, float(a), cfg.j_hop)
        gap = float(ed.gap)
        target = cfg.gap_fraction * gap
        for depth in cfg.net.depths:
            counts, errs = [], []
            for w in cfg.width_ladder:
                sel = [r for r, k in zip(recs, keys) if k == (float(a), depth, w) and r.status == "ok"]
                if sel:
                    counts.append(sel[0].metrics["n_params"])
                    errs.append(min(r.metrics["energy_error"] for r in sel))
            if counts and target > 0:
                n_req, status = required_parameter_count(counts, np.maximum(errs, 0.0), target)
            else:
                n_req, status = None, "unbounded" if counts else "failed"
            rows.append(dict(alpha=float(a), depth=depth, gap=gap, delta_e_req=target, n_req=n_req, status=status, dim=h.dim))
    if out:
        write_csv(out / "required_params.csv", REQ_COLUMNS, [[r[k] if r[k] is not None else "" for k in REQ_COLUMNS] for r in rows])
    return rows


def ablation_spec(mod: str, cfg: ExperimentConfig, alpha: float, seed: int) -> Optional[RunSpec]:
    """The supervised run for one ablation cell, or ``None`` for an absent cell."""
    net = _base_net(cfg)
    train = cfg.train.replace(method="supervised")
    curriculum = None
    if mod == "complex":
        net = net.replace(parameter_field="complex")
    elif mod == "mse":
        train = train.replace(loss_kind="mse", mse_weighting="psi2")
    elif mod in ("fourier", "patches", "embeddings"):
        net = net.replace(encoding=mod)
    elif mod == "float64":
        net = net.replace(precision="f64")
    elif mod == "curriculum":
        sched = tuple(a for a in cfg.curriculum_alphas if a <= alpha)
        if alpha == 0 or len(sched) < 2:
            return None
        curriculum = sched if sched[-1] == alpha else sched + (alpha,)
    return RunSpec(tuple(cfg.shapes[0]), cfg.particles[0], float(alpha), net, train, seed, cfg.j_hop, curriculum, tag=mod)


def run_ablation_table(cfg: ExperimentConfig) -> list[dict]:
    """One supervised run per (modification, flux) cell; absent cells are ``None``."""
    out = _prepare(cfg, "ablations")
    cells, specs = [], []
    for mod in cfg.ablations:
        for a in cfg.alphas:
            for seed in cfg.seeds:
                s = ablation_spec(mod, cfg, float(a), seed)
                cells.append((mod, float(a), seed, len(specs) if s else None))
                if s:
                    specs.append(s)
    recs = run_specs(specs, str(out) if out else None)
    table = []
    for mod in cfg.ablations:
        row = {"modification": mod}
        for a in cfg.alphas:
            devs = [
                recs[i].metrics.get("overlap_deviation")
                for m, aa, _, i in cells
                if m == mod and aa == float(a) and i is not None and recs[i].status == "ok"
            ]
            row[f"alpha={a:g}"] = float(np.mean(devs)) if devs else None
        table.append(row)
    if out:
        cols = ["modification"] + [f"alpha={a:g}" for a in cfg.alphas]
        write_csv(out / "ablations.csv", cols, [["" if r[c] is None else r[c] for c in cols] for r in table])
    return table
