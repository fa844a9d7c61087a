"""Command-line entry point: ``verify``, ``gradcheck``, ``train``, ``diagnose``.

Exit codes: 0 success, 1 a check failed (or a run diverged), 2 usage or
config error. Outputs go under ``$CONTRASTIVE_DUALITY_OUT`` (default
``./runs``) unless an explicit path is given.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics, verify
from .config import RunEntry, parse_config
from .criteria import LOSS_IDS
from .errors import ConfigError, DivergedLoss, DualityError
from .gradients import GRADCHECK_FIELDS, SUITE_TAUS, gradient_suite
from .matrix import read_csv

OUT_ENV = "CONTRASTIVE_DUALITY_OUT"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def output_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_rows(path: Path, fields, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


# -- verify ---------------------------------------------------------------------


def cmd_verify(args) -> int:
    reports = list(verify.iter_sweep(
        seed=args.seed,
        n_identity=args.n_identity,
        n_doubly=args.n_doubly,
        n_bounds=args.n_bounds,
        n_pairs=args.n_pairs,
        inject_unnormalized=args.inject_unnormalized,
    ))
    out = Path(args.out) if args.out else output_root() / "verify" / f"verify-seed{args.seed}.csv"
    _write_rows(out, verify.REPORT_FIELDS, [r.row() for r in reports])
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed; report: {out}")
    for r in failed[:20]:
        print(f"FAIL {r.check} generator={r.generator} M={r.M} N={r.N} residual={r.residual:.3g} {r.detail}")
    return EXIT_FAIL if failed else EXIT_OK


# -- gradcheck --------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    losses = args.loss or list(LOSS_IDS)
    unknown = [lid for lid in losses if lid not in LOSS_IDS]
    if unknown:
        print(f"error: unknown loss id(s) {', '.join(unknown)}; known: {', '.join(LOSS_IDS)}", file=sys.stderr)
        return EXIT_USAGE
    reports = list(gradient_suite(losses, range(args.seeds), tuple(args.tau), tol=args.tol, h=args.h))
    out = Path(args.out) if args.out else output_root() / "gradcheck" / "gradcheck.csv"
    _write_rows(out, GRADCHECK_FIELDS, [r.row() for r in reports])
    failed = [r for r in reports if not r.passed]
    worst = max(reports, key=lambda r: r.max_rel_err)
    print(f"{len(reports) - len(failed)}/{len(reports)} gradient checks passed (tol {args.tol:g}); "
          f"worst {worst.loss_id} {worst.max_rel_err:.3g}; report: {out}")
    for r in failed[:20]:
        print(f"FAIL {r.loss_id} seed={r.seed} tau={r.tau} negatives={r.negatives} rel={r.max_rel_err:.3g}")
    return EXIT_FAIL if failed else EXIT_OK


# -- train ------------------------------------------------------------------------


def run_entry(entry: RunEntry, run_dir: str) -> dict:
    """Train, probe and write one sweep entry; returns a summary row."""
    from .trainer import generate_dataset, offline_probe, train, write_run
    from .trainer.runio import MANIFEST_FILE, config_dict

    dataset = generate_dataset(entry.dataset)
    try:
        run = train(entry.train, dataset, entry.model)
    except DivergedLoss as exc:
        out = Path(run_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {"status": "diverged", "error": str(exc), "epoch": exc.epoch, "train": config_dict(entry.train)}
        (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return {"name": entry.name, "status": "diverged", "online_acc": "", "offline_acc": ""}
    run.offline_accuracy = offline_probe(run.model, dataset)
    write_run(run_dir, run, dataset, entry.n_export, extra={"status": "ok", "name": entry.name})
    return {"name": entry.name, "status": "ok", "online_acc": repr(run.final_online_accuracy),
            "offline_acc": repr(run.offline_accuracy)}


def cmd_train(args) -> int:
    path = Path(args.config)
    try:
        text = path.read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        entries = parse_config(text)
    except ConfigError as exc:
        print(f"config error in {path}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    root = Path(args.out) if args.out else output_root() / path.stem
    dirs = [str(root / e.name) for e in entries]
    if args.workers > 1 and len(entries) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(run_entry, entries, dirs))
    else:
        rows = []
        for e, d in zip(entries, dirs):
            rows.append(run_entry(e, d))
            print(f"{e.name}: {rows[-1]['status']} online={rows[-1]['online_acc']} offline={rows[-1]['offline_acc']}")
    _write_rows(root / "summary.csv", ["name", "status", "online_acc", "offline_acc"], rows)
    print(f"{len(rows)} run(s) written under {root}")
    return EXIT_FAIL if any(r["status"] != "ok" for r in rows) else EXIT_OK


# -- diagnose ---------------------------------------------------------------------


def _detect_mode(K) -> str:
    cols, rows = np.linalg.norm(K, axis=0), np.linalg.norm(K, axis=1)
    if np.ptp(cols) <= 1e-9 * max(cols.max(), 1.0):
        return "columns-normalized"
    if np.ptp(rows) <= 1e-9 * max(rows.max(), 1.0):
        return "rows-normalized"
    return "columns-normalized"


def cmd_diagnose(args) -> int:
    try:
        K = read_csv(args.embeddings, has_header=args.header)
    except OSError as exc:
        print(f"error: cannot read {args.embeddings}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DualityError as exc:
        print(f"parse error in {args.embeddings}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out_dir) if args.out_dir else output_root() / "diagnose" / Path(args.embeddings).stem
    out.mkdir(parents=True, exist_ok=True)
    M, N = K.shape
    print(f"K: M={M} N={N}")
    if not (args.norms or args.spectrum or args.histogram or args.panel or args.effective_rank):
        args.spectrum = True
    try:
        if args.norms:
            modes = ["columns-normalized", "rows-normalized"] if args.norms == "both" else (
                [_detect_mode(K)] if args.norms == "auto" else [f"{args.norms}-normalized"])
            rows = []
            for mode in modes:
                r = verify.norm_interplay_report(K, mode)
                rows.append({"mode": mode, "M": M, "N": N, "lower": repr(r.lower), "measured": repr(r.measured),
                             "upper": repr(r.upper), "ratio_to_lower": repr(r.ratio_to_lower)})
                print(f"norms[{mode}]: lower={r.lower:.6g} measured={r.measured:.6g} upper={r.upper:.6g} "
                      f"ratio_to_lower={r.ratio_to_lower:.4g}")
            _write_rows(out / "norms.csv", ["mode", "M", "N", "lower", "measured", "upper", "ratio_to_lower"], rows)
        if args.spectrum:
            s = diagnostics.singular_spectrum(K)
            (out / "spectrum.csv").write_text(diagnostics.spectrum_csv(s))
            print(f"spectrum: {s.size} values, largest {s[0]:.6g}, smallest {s[-1]:.6g}")
        if args.effective_rank:
            print(f"effective_rank(threshold={args.effective_rank:g}) = {diagnostics.effective_rank(K, args.effective_rank)}")
        if args.histogram:
            h = diagnostics.cosine_similarity_histogram(K, bins=args.histogram)
            (out / "histogram.csv").write_text(diagnostics.histogram_csv(h))
            print(f"cosine similarities: {h.n_pairs} pairs, mean {h.mean:.4g}, std {h.std:.4g}")
        if args.panel:
            p = diagnostics.matrix_panel(K, args.panel)
            (out / "gram_panel.csv").write_text(diagnostics.panel_csv(p.gram_head))
            (out / "covariance_panel.csv").write_text(diagnostics.panel_csv(p.covariance_head))
            print(f"panel k={args.panel}: gram ratio {p.gram_ratio:.4g}, covariance ratio {p.covariance_ratio:.4g}")
    except (DualityError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"outputs in {out}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="contrastive-duality", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("verify", help="seeded sweep of the algebraic and distributional checks")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--n-identity", type=int, default=1000)
    v.add_argument("--n-doubly", type=int, default=100)
    v.add_argument("--n-bounds", type=int, default=1000)
    v.add_argument("--n-pairs", type=int, default=100_000)
    v.add_argument("--inject-unnormalized", action="store_true",
                   help="feed a non-normalized matrix to the bounds check (must fail)")
    v.add_argument("--out", help="report CSV path")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("gradcheck", help="analytic vs central-difference gradients")
    g.add_argument("--loss", action="append", help="loss id (repeatable; default all)")
    g.add_argument("--seeds", type=int, default=10)
    g.add_argument("--tau", type=float, nargs="+", default=list(SUITE_TAUS))
    g.add_argument("--tol", type=float, default=1e-5)
    g.add_argument("--h", type=float, default=1e-6)
    g.add_argument("--out", help="report CSV path")
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train", help="train one run or a sweep from a YAML config")
    t.add_argument("config")
    t.add_argument("--workers", type=int, default=1, help="parallel worker processes for sweeps")
    t.add_argument("--out", help="sweep root directory")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("diagnose", help="spectra, histograms, panels and norm tables for an embeddings CSV")
    d.add_argument("embeddings")
    d.add_argument("--header", action="store_true", help="first CSV row is a header")
    d.add_argument("--norms", nargs="?", const="auto", choices=["auto", "columns", "rows", "both"])
    d.add_argument("--spectrum", action="store_true")
    d.add_argument("--histogram", type=int, metavar="BINS")
    d.add_argument("--panel", type=int, metavar="K")
    d.add_argument("--effective-rank", type=float, nargs="?", const=0.01, metavar="THRESHOLD")
    d.add_argument("--out-dir")
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
