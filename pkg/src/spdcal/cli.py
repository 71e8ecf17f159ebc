"""``spdcal`` command line: correct, fit, simulate, tables, plotdata.

Exit codes: 0 success (fit adequacy good or marginal), 1 error, 2 the fitted
model is unusable.
"""
import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import reference
from .correction import ApOrder, DetectorParams
from .exceptions import CalibrationError, EmptyInput
from .fitting import Adequacy, MeasurementSeries, OpticsConfig, correct_point, evaluate, fit, series_objective
from .io import (
    dump_json,
    fmt,
    fmt6,
    load_config,
    load_json,
    read_dark,
    read_points,
    read_rows,
    write_csv,
    write_series,
)
from .models import Dependent, Empirical, Independent, detection_probability, model_from_dict, recommended_order
from .simulator import SimConfig, generate_series, simulate

EXIT_OK, EXIT_ERROR, EXIT_UNUSABLE = 0, 1, 2
PLOT_SAMPLES = 200


def parse_range(text):
    """``mu1``, ``mu2`` or ``custom:<lo>:<hi>`` into ``(lo, hi)``."""
    if text in reference.RANGES:
        return reference.RANGES[text]
    parts = text.split(":")
    if len(parts) == 3 and parts[0] == "custom":
        lo, hi = float(parts[1]), float(parts[2])
        if not (0 <= lo <= hi):
            raise argparse.ArgumentTypeError(f"empty mu range {text!r}")
        return lo, hi
    raise argparse.ArgumentTypeError(f"range must be mu1, mu2 or custom:<lo>:<hi>, got {text!r}")


def _add_detector_args(p, required=True):
    p.add_argument("--tau", type=float, required=required, help="dead time [s]")
    p.add_argument("--pap", type=float, required=required, help="afterpulse probability")
    p.add_argument("--nul", type=float, default=100e3, help="laser repetition rate [Hz]")
    p.add_argument("--order", type=int, choices=(1, 2), default=2, help="afterpulse approximation order")


def _add_optics_args(p):
    p.add_argument("--atten-db", type=float, default=64.5)
    p.add_argument("--wavelength-nm", type=float, default=1550.0)
    p.add_argument("--delta-w", type=float, default=200e-12, help="power-meter deviation [W]")
    p.add_argument("--delta-alpha", type=float, default=0.1, help="attenuation deviation [dB]")
    p.add_argument("--mu-rel-sigma", type=float, default=0.02,
                   help="relative deviation of mu for points given as mu")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1; exit code 2 is reserved for unusable fits."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="spdcal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("correct", help="correct raw rates into pulse detection probabilities")
    p.add_argument("input")
    p.add_argument("--dark", required=True)
    p.add_argument("--out")
    p.add_argument("--verbose", action="store_true")
    _add_detector_args(p)
    _add_optics_args(p)

    p = sub.add_parser("fit", help="fit a detection model to a (raw or corrected) series")
    p.add_argument("input", nargs="?")
    p.add_argument("--dark")
    p.add_argument("--model", choices=("independent", "dependent", "empirical"), required=True)
    p.add_argument("--range", type=parse_range, default="mu2", dest="mu_range")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--no-fit", action="store_true", help="evaluate the given parameters instead of fitting")
    p.add_argument("--eta", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--rhos", help="comma-separated rho_2,rho_3,...")
    _add_detector_args(p, required=False)
    _add_optics_args(p)

    p = sub.add_parser("simulate", help="simulate a measurement series from a JSON/TOML config")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--dark-out")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("tables", help="eta_k tables from fit reports or the published fits")
    p.add_argument("reports", nargs="*")
    p.add_argument("--range", choices=("mu1", "mu2"), dest="table_range")
    p.add_argument("--out")

    p = sub.add_parser("plotdata", help="per-model curve CSVs from fit reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mu-max", type=float)
    return parser


def _detector(args):
    if args.tau is None or args.pap is None:
        raise CalibrationError("--tau and --pap are required")
    return DetectorParams(args.tau, args.pap, args.nul)


def _optics(args):
    return OpticsConfig(
        attenuation_db=args.atten_db,
        wavelength_m=args.wavelength_nm * 1e-9,
        delta_w=args.delta_w,
        delta_alpha=args.delta_alpha,
        mu_rel_sigma=args.mu_rel_sigma,
    )


def cmd_correct(args, out=sys.stdout, err=sys.stderr):
    header, rows = read_rows(args.input)
    kind, points = read_points(args.input)
    dark = read_dark(args.dark)
    det, optics, order = _detector(args), _optics(args), ApOrder(args.order)
    extra = ["mu"] if kind == "power_w" else []
    new_cols = extra + ["r_mean_hz", "r_sigma_hz", "r0_sig_hz", "r0_sig_sigma_hz", "p_det", "p_det_sigma", "status"]
    out_rows = []
    for (line_no, row), point in zip(rows, points):
        mu = point.mu_value(optics, det.nu_l)
        base = row + ([fmt(mu)] if extra else []) + [fmt(point.mean), fmt(point.sigma)]
        try:
            value, sigma, breakdown = correct_point(point, dark, det, order)
        except CalibrationError as exc:
            print(f"{args.input}:{line_no}: {type(exc).__name__}: {exc}", file=err)
            out_rows.append(base + ["", "", "", "", type(exc).__name__])
            continue
        if args.verbose:
            parts = " ".join(f"{k}={fmt6(v)}" for k, v in breakdown.as_dict().items())
            print(f"{args.input}:{line_no}: mu={fmt6(mu)} {parts}", file=err)
        out_rows.append(base + [fmt(value), fmt(sigma), fmt(value / det.nu_l), fmt(sigma / det.nu_l), "ok"])
    target = args.out
    if target is None:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(header + new_cols)
        w.writerows(out_rows)
    else:
        write_csv(target, header + new_cols, out_rows)
    return EXIT_OK


def _model_from_args(args):
    if args.eta is None:
        raise CalibrationError("--no-fit needs --eta")
    if args.model == "independent":
        return Independent(args.eta)
    if args.model == "empirical":
        if args.rho is None:
            raise CalibrationError("--no-fit with the empirical model needs --rho")
        return Empirical(args.eta, args.rho)
    rhos = tuple(float(r) for r in args.rhos.split(",")) if args.rhos else ()
    return Dependent(args.eta, rhos)


def eta_table_text(rows, n):
    """Fixed-width eta_k table; ``rows`` are ``(label, model_kind, etas, chi2_r)``."""
    head = ["detector", "model"] + [f"eta_{k}" for k in range(1, n + 1)] + ["chi2_r"]
    lines = ["\t".join(head)]
    for label, kind, etas, chi2_r in rows:
        cells = [label, kind] + [fmt6(e) for e in etas[:n]]
        cells.append("-" if chi2_r is None else fmt6(chi2_r))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def _table_width(mu_max):
    return 3 if mu_max <= 1.0 + 1e-9 else 6


def cmd_fit(args, out=sys.stdout, err=sys.stderr):
    lo, hi = args.mu_range
    width = _table_width(hi)
    if args.no_fit and args.input is None:
        model = _model_from_args(args)
        report = {"model": model.to_dict(), "kind": model.kind, "mu_max": hi,
                  "eta_k": model.eta_table(max(width, recommended_order(hi)))}
        if args.out:
            dump_json(report, args.out)
        out.write(eta_table_text([("-", model.kind, report["eta_k"], None)], width))
        return EXIT_OK
    if args.input is None or args.dark is None:
        raise CalibrationError("fit needs an input CSV and --dark")
    kind, points = read_points(args.input)
    series = MeasurementSeries(tuple(points), read_dark(args.dark), _detector(args), _optics(args))
    series = series.select(lo, hi)
    order = ApOrder(args.order)
    if not series.points:
        raise EmptyInput(f"no points with mu in [{lo}, {hi}]")
    if args.no_fit:
        model = _model_from_args(args)
        result = evaluate(series_objective(series, order), model, hi)
    else:
        result = fit(series, args.model, hi, order, seed=args.seed)
    report = result.to_report()
    report["order"] = int(order)
    report["range"] = [lo, hi]
    report["detector"] = {"tau": series.detector.tau, "p_ap": series.detector.p_ap, "nu_l": series.detector.nu_l}
    if args.out:
        dump_json(report, args.out)
    elif args.verbose:
        out.write(dump_json(report))
    if result.rho_straddles_one:
        print("note: fitted rho_i lie on both sides of 1", file=err)
    flagged = [k for k, v in result.boundary.items() if v]
    if flagged:
        print(f"note: parameters at a box bound: {', '.join(flagged)}", file=err)
    out.write(eta_table_text([("-", result.model.kind, result.eta_table(width), result.chi2_reduced)], width))
    return EXIT_UNUSABLE if result.adequacy is Adequacy.UNUSABLE else EXIT_OK


def _mu_grid(spec):
    if isinstance(spec, dict):
        start, stop, step = float(spec["start"]), float(spec["stop"]), float(spec["step"])
        n = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 12) for i in range(n)]
    return [float(m) for m in spec]


def cmd_simulate(args, out=sys.stdout, err=sys.stderr):
    cfg = load_config(args.config)
    try:
        model = model_from_dict(cfg["model"])
        d = cfg["detector"]
        det = DetectorParams(d["tau"], d.get("p_ap", 0.0), d.get("nu_l", 100e3))
    except KeyError as exc:
        raise CalibrationError(f"{args.config}: missing key {exc}") from None
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    dcr = float(cfg.get("dcr_hz", 0.0))
    dark_out = args.dark_out or str(Path(args.out).with_suffix("")) + ".dark.csv"
    o = cfg.get("optics", {})
    optics = OpticsConfig(
        attenuation_db=o.get("attenuation_db", 64.5),
        wavelength_m=o.get("wavelength_nm", 1550.0) * 1e-9,
        delta_w=o.get("delta_w", 200e-12),
        delta_alpha=o.get("delta_alpha", 0.1),
        mu_rel_sigma=o.get("mu_rel_sigma", 0.02),
    )
    if "mu_grid" in cfg:
        series = generate_series(
            model, _mu_grid(cfg["mu_grid"]), det, optics,
            dcr_hz=dcr, n_samples=int(cfg.get("n_samples", 300)), window_s=float(cfg.get("window_s", 1.0)),
            seed=seed, use_power=bool(cfg.get("use_power", True)), expected=bool(cfg.get("expected", False)),
            order=ApOrder(int(cfg.get("order", 2))),
        )
        write_series(args.out, series, dark_out)
        return EXIT_OK
    if "mu" not in cfg:
        raise CalibrationError(f"{args.config}: needs 'mu_grid' (series) or 'mu' (single run)")
    res = simulate(SimConfig(model, float(cfg["mu"]), det, dcr, int(cfg.get("n_pulses", 100_000)), seed))
    write_csv(args.out, ["mu", "sample_rates_hz"], [[fmt(cfg["mu"]), fmt(res.r_hz)]])
    write_csv(dark_out, ["mu", "sample_rates_hz"], [["0.0", fmt(res.r_dark_hz)]])
    out.write(dump_json({
        "clicks_total": res.clicks_total, "r_hz": res.r_hz, "r_dark_hz": res.r_dark_hz,
        "true_pulse_detections": res.true_pulse_detections, "n_pulses": res.n_pulses,
        "duration_s": res.duration_s, "true_probability": res.true_probability,
    }))
    return EXIT_OK


def cmd_tables(args, out=sys.stdout, err=sys.stderr):
    chunks = []
    if args.reports:
        rows, width = [], 3
        for path in args.reports:
            rep = load_json(path)
            model = model_from_dict(rep["model"])
            w = _table_width(rep.get("mu_max") or 1.0)
            width = max(width, w)
            rows.append((Path(path).stem, model.kind, model.eta_table(6), rep.get("chi2_reduced")))
        chunks.append(eta_table_text(rows, width))
    else:
        for rng in ([args.table_range] if args.table_range else ["mu1", "mu2"]):
            rows = []
            for det, fits in reference.FITTED[rng].items():
                for kind, model in fits.items():
                    rows.append((det, kind, model.eta_table(6), reference.CHI2_REDUCED[rng][det][kind]))
            chunks.append(f"# range {rng}: mu in {list(reference.RANGES[rng])}\n"
                          + eta_table_text(rows, 3 if rng == "mu1" else 6))
    text = "\n".join(chunks)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
    out.write(text)
    return EXIT_OK


def plot_rows(report, mu_max=None):
    """Curve rows on a uniform grid from 0, then the data rows of the report."""
    model = model_from_dict(report["model"])
    nu_l = report.get("nu_l") or 1.0
    residuals = report.get("residuals", [])
    if mu_max is None:
        mu_max = report.get("mu_max") or max([r["mu"] for r in residuals], default=2.0)
    grid = np.linspace(0.0, mu_max, PLOT_SAMPLES)
    curve = np.asarray(detection_probability(model, grid))
    rows = [["curve", fmt(m), fmt(p), "", ""] for m, p in zip(grid, curve)]
    for r in residuals:
        rows.append(["data", fmt(r["mu"]), fmt(detection_probability(model, r["mu"])),
                     fmt(r["observed"] / nu_l), fmt(r["sigma_total"] / nu_l)])
    return rows


def cmd_plotdata(args, out=sys.stdout, err=sys.stderr):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    seen = {}
    for path in args.reports:
        rep = load_json(path)
        kind = rep["model"]["kind"]
        seen[kind] = seen.get(kind, 0) + 1
        name = kind if seen[kind] == 1 else f"{kind}_{seen[kind]}"
        target = outdir / f"{name}.csv"
        write_csv(target, ["kind", "mu", "p_det_model", "p_det_data", "sigma_total"], plot_rows(rep, args.mu_max))
        print(target, file=out)
    return EXIT_OK


COMMANDS = {
    "correct": cmd_correct,
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "tables": cmd_tables,
    "plotdata": cmd_plotdata,
}


def main(argv=None, out=None, err=None):
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, out=out, err=err)
    except (CalibrationError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=err)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
