"""``polycert`` command line: certify, train, simulate, refine.

Exit codes: 0 success, 1 not certified, 2 configuration or input error,
3 empty refinement.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import torch

from .autodiff import as_tensor
from .config import ConfigError, RunConfig, load
from .dynamics import piecewise_constant, simulate
from .interval import EmptyIntersection
from .lifted import boundary_points, certify_polytope, lifted_vector_field, polytope_vertices, refine, refined_faces
from .trainer import NotCertified, train

EXIT_OK, EXIT_NOT_CERTIFIED, EXIT_CONFIG, EXIT_EMPTY = 0, 1, 2, 3


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return repr(float(v))


def cmd_certify(run: RunConfig) -> int:
    cli = run.problem().inclusion(run.net)
    cert = certify_polytope(run.lifting, cli, run.polytope.box)
    _write_json(run.output_dir / "certificate.json", cert.to_json())
    print(cert.dumps())
    return EXIT_OK if cert.certified else EXIT_NOT_CERTIFIED


def cmd_train(run: RunConfig) -> int:
    out = run.output_dir
    out.mkdir(parents=True, exist_ok=True)
    problem = run.problem()
    status = EXIT_OK

    def log(it, loss, ls, margin):
        if it % 100 == 0:
            print(f"iter {it:6d}  loss {loss:.6g}  inv {ls:.6g}  margin {margin:.6g}", file=sys.stderr)

    try:
        report = train(problem, run.training, log=log)
    except NotCertified as exc:
        report, status = exc.report, EXIT_NOT_CERTIFIED
        print(str(exc), file=sys.stderr)
    report.net.save(out / "network.json")
    (out / "loss_trace.csv").write_text(report.trace_csv(), encoding="utf-8")
    _write_json(out / "report.json", report.to_json())
    _write_json(out / "timing.json", {"wall_time_s": report.wall_time})
    trained = json.loads(json.dumps(run.raw))
    trained["network"] = {"path": "network.json"}
    trained["polytope"]["eta"] = report.eta.tolist() if report.eta.numel() else "zero"
    trained.pop("output_dir", None)
    _write_json(out / "trained_config.json", trained)
    print(json.dumps(report.to_json()["certificate"], indent=2))
    return status


def cmd_simulate(run: RunConfig) -> int:
    sim = run.simulation
    gen = torch.Generator().manual_seed(sim.seed)
    if sim.x0 == "boundary":
        x0 = boundary_points(run.polytope, sim.n_samples, gen)
    else:
        x0 = as_tensor(sim.x0)
        if x0.shape[-1] != run.sys.n:
            raise ConfigError(f"x0 rows must have {run.sys.n} entries")
    steps = int(round(sim.T / sim.dt))
    cli = run.problem().inclusion(run.net)
    w = piecewise_constant(run.disturbance.box, max(steps, 1), (x0.shape[0],), sim.hold, gen)
    with torch.no_grad():
        xs = simulate(cli.vector_field, x0, w, sim.dt, sim.T)
        if sim.lifted:
            ys = simulate(lifted_vector_field(run.lifting, cli), x0 @ run.polytope.H.T, w, sim.dt, sim.T)
        else:
            ys = xs @ run.polytope.H.T
    hx = xs @ run.polytope.H.T
    inside = ((hx >= run.polytope.y_lo) & (hx <= run.polytope.y_hi)).all(-1)
    n, m = run.sys.n, run.polytope.m
    header = ["traj", "t"] + [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(m)] + ["contained"]
    rows = []
    for j in range(x0.shape[0]):
        for k in range(xs.shape[0]):
            rows.append(
                [j, _fmt(k * sim.dt)] + [_fmt(v) for v in xs[k, j]] + [_fmt(v) for v in ys[k, j]]
                + [str(bool(inside[k, j])).lower()]
            )
    _write_csv(run.output_dir / "trajectories.csv", header, rows)
    print(f"{x0.shape[0]} trajectories, {int((~inside).sum())} samples outside the polytope")
    return EXIT_OK


def cmd_refine(run: RunConfig) -> int:
    faces = refined_faces(run.lifting, run.polytope.box)
    box = run.polytope.box
    if run.lifting.m > run.lifting.n:
        box = refine(run.lifting.N, box)
    data = {
        "box": {"lo": box.lo.tolist(), "hi": box.hi.tolist()},
        "faces": [{"lo": faces.lo[i].tolist(), "hi": faces.hi[i].tolist()} for i in range(faces.shape[0])],
    }
    _write_json(run.output_dir / "refine.json", data)
    if run.polytope.n <= 3:
        verts = polytope_vertices(run.polytope)
        _write_csv(
            run.output_dir / "vertices.csv",
            [f"x{i + 1}" for i in range(run.polytope.n)],
            [[_fmt(v) for v in row] for row in verts],
        )
    print(json.dumps(data, indent=2))
    return EXIT_OK


COMMANDS = {"certify": cmd_certify, "train": cmd_train, "simulate": cmd_simulate, "refine": cmd_refine}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polycert", description="Polytope invariance certificates for NN-controlled systems.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, default=None, help="overrides training and simulation seeds")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    threads = os.environ.get("POLYCERT_THREADS")
    if threads:
        try:
            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"error: POLYCERT_THREADS must be an integer, got {threads!r}", file=sys.stderr)
            return EXIT_CONFIG
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must fit in an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run = load(args.config, args.out, None if args.seed is None else args.seed % 2**63)
        return COMMANDS[args.command](run)
    except EmptyIntersection as exc:
        print(f"error: empty refinement: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (ConfigError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
