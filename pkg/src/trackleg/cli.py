"""Command line for the prestudy and for negotiation runs.

    trackleg prestudy --model M --heights 1h 2h 3h --out table.csv
    trackleg run --model M --table table.csv --height 2h --out DIR [--baseline]
    trackleg sweep --model M --table table.csv --heights 1h 2h 3h --out DIR

Heights are written as multiples of the track height (``2h`` or a bare
``2``) or in metres (``0.16m``).  ``--model`` defaults to the bundled
reference model.

Errors go to stderr as ``error[<category>]: <message>``; the exit status
identifies the category (see ``EXIT_CODES``).
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
import warnings
from pathlib import Path

from . import ctrl, gait, model
from .model import ConfigError, Robot

EXIT_CODES = {
    "ok": 0,
    "internal": 1,
    "usage": 2,
    "config": 3,
    "table-format": 4,
    "table-range": 5,
    "negotiation-failed": 6,
    "prestudy": 7,
    "io": 8,
}

TIMESERIES_COLUMNS = ("tick", "t_s", "mode", "E_RW_J", "E_Rr_J", "E_total_J", "T_wb_J", "T_rb_J",
                      "body_x_m", "body_z_m", "body_pitch_rad", "rear_x_m", "power_W")
SUMMARY_COLUMNS = ("height_m", "height_h", "outcome", "reason", "transitions", "gait_kind",
                   "transition_t_s", "total_energy_J", "total_time_s", "baseline_outcome",
                   "baseline_energy_J", "T_wb_J", "T_rb_J")


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


# --- parsing helpers ------------------------------------------------------------

def parse_height(token: str, h: float) -> float:
    """'2h' or '2' -> 2 * h; '0.16m' -> 0.16."""
    tok = token.strip().lower()
    try:
        if tok.endswith("m"):
            val = float(tok[:-1])
        else:
            val = float(tok[:-1] if tok.endswith("h") else tok) * h
    except ValueError:
        raise CliError("usage", f"cannot parse step height {token!r}") from None
    if not (math.isfinite(val) and val > 0):
        raise CliError("usage", f"step height must be > 0, got {token!r}")
    return val


def parse_heights(tokens, h: float) -> list:
    out = []
    for tok in tokens or ():
        out += [parse_height(t, h) for t in tok.split(",") if t.strip()]
    if not out:
        raise CliError("usage", "heights list is empty")
    return out


def load_config(path) -> model.ModelConfig:
    try:
        if path in (None, "reference"):
            return model.reference_model()
        return model.load_model(path)
    except ConfigError as e:
        raise CliError("config", str(e)) from None
    except OSError as e:
        raise CliError("io", f"cannot read model {path}: {e}") from None


def load_table(path) -> ctrl.ThresholdTable:
    try:
        return ctrl.ThresholdTable.load(path)
    except ctrl.TableFormatError as e:
        raise CliError("table-format", f"{path}: {e}") from None
    except OSError as e:
        raise CliError("io", f"cannot read table {path}: {e}") from None


def _num(v: float) -> str:
    return repr(float(v)) if math.isfinite(v) else ("inf" if v > 0 else "-inf")


# --- outputs --------------------------------------------------------------------

def timeseries_csv(res: ctrl.NegotiationResult, normalized_time: bool = False) -> str:
    cols = TIMESERIES_COLUMNS + (("t_norm",) if normalized_time else ())
    lines = [",".join(cols)]
    T = res.total_time
    T_wb, T_rb = _num(res.thresholds.T_wb), _num(res.thresholds.T_rb)
    for k in range(len(res.t)):
        x, z, p = res.pose[k]
        row = [str(k + 1), f"{(k + 1) * res.dt:.6f}", res.mode[k], _num(res.E_RW[k]), _num(res.E_Rr[k]),
               _num(res.E_total[k]), T_wb, T_rb, _num(x), _num(z), _num(p), _num(res.rear_x[k]),
               _num(res.power[k])]
        if normalized_time:
            row.append(_num(res.t[k] / T))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def energy_svg(res: ctrl.NegotiationResult, title: str = "", width: int = 640, height: int = 360) -> str:
    """Ledger curves against the thresholds with mode boundaries, as a bare SVG."""
    pad = 48
    t = res.t
    T = max(res.total_time, res.dt)
    finite = [v for v in (res.thresholds.T_wb, res.thresholds.T_rb) if math.isfinite(v)]
    ymax = max([float(res.E_RW.max()) if len(t) else 1.0] + finite) * 1.05 or 1.0

    def px(tt):
        return pad + (width - 2 * pad) * tt / T

    def py(e):
        return height - pad - (height - 2 * pad) * e / ymax

    def poly(y, colour, dash=""):
        step = max(1, len(t) // 800)
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(t[::step], y[::step]))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return f'<polyline fill="none" stroke="{colour}" stroke-width="1.5"{extra} points="{pts}"/>'

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle">time (s), total {T:.2f}</text>',
           f'<text x="12" y="{pad - 12}">energy (J), max {ymax:.4g}</text>',
           f'<text x="{width / 2}" y="20" text-anchor="middle">{title}</text>']
    for lab, a, _ in res.timeline[1:]:
        x = px(a * res.dt)
        out.append(f'<line x1="{x:.1f}" y1="{pad}" x2="{x:.1f}" y2="{height - pad}" stroke="#bbb"/>')
        out.append(f'<text x="{x + 3:.1f}" y="{pad + 10}" fill="#777">{lab}</text>')
    if len(t):
        out.append(poly(res.E_RW, "#1f77b4"))
        out.append(poly(res.E_Rr, "#d62728"))
    for v, colour in ((res.thresholds.T_wb, "#1f77b4"), (res.thresholds.T_rb, "#d62728")):
        if math.isfinite(v):
            out.append(f'<line x1="{pad}" y1="{py(v):.1f}" x2="{width - pad}" y2="{py(v):.1f}" '
                       f'stroke="{colour}" stroke-dasharray="6 4"/>')
    out.append(f'<text x="{width - pad - 150}" y="{pad + 24}" fill="#1f77b4">E_RW / T_wb</text>')
    out.append(f'<text x="{width - pad - 150}" y="{pad + 38}" fill="#d62728">E_Rr / T_rb</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    except OSError as e:
        raise CliError("io", f"cannot write {path}: {e}") from None


# --- commands -------------------------------------------------------------------

def cmd_prestudy(model_path, heights, out_path, rolling_speed: float = 0.1, stream=sys.stdout):
    cfg = load_config(model_path)
    robot = Robot(cfg)
    hs = parse_heights(heights, cfg.track.track_height_h_m)
    details = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            table = ctrl.prestudy(robot, hs, rolling_speed, details)
        except ValueError as e:
            raise CliError("prestudy", str(e)) from None
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    _write(Path(out_path), table.to_text())
    h = cfg.track.track_height_h_m
    for row in details:
        print(f"height {row.step_height:.4f} m ({row.step_height / h:.3g}h): E_Cw {row.E_Cw:.6g} J "
              f"({row.T_whole:.3f} s), E_Cr {row.E_Cr:.6g} J ({row.T_rear:.3f} s)", file=stream)
    return table


def _scenario(cfg, height, approach, speed):
    try:
        return gait.StepScenario(height, cfg.track.track_height_h_m, approach, speed)
    except ValueError as e:
        raise CliError("usage", str(e)) from None


def cmd_run(model_path, table_path, height, out_dir, baseline=False, approach=0.1, speed=0.1,
            plot=False, normalized_time=False, stream=sys.stdout):
    cfg = load_config(model_path)
    robot = Robot(cfg)
    s = parse_height(str(height), cfg.track.track_height_h_m)
    table = None
    if not baseline:
        if table_path is None:
            raise CliError("usage", "--table is required unless --baseline is given")
        table = load_table(table_path)
    sc = _scenario(cfg, s, approach, speed)
    try:
        res = ctrl.run_negotiation(sc, robot, table, baseline=baseline)
    except ctrl.TableRangeError as e:
        raise CliError("table-range", str(e)) from None
    out = Path(out_dir)
    _write(out / "timeseries.csv", timeseries_csv(res, normalized_time))
    if plot:
        _write(out / "energy.svg", energy_svg(res, f"step {s:.3f} m{' (rolling only)' if baseline else ''}"))
    print(res.summary(), file=stream)
    if not res.completed:
        raise CliError("negotiation-failed", res.summary())
    return res


def _summary_row(cfg, s, res, base, thr, reason=None):
    h = cfg.track.track_height_h_m
    tt = f"{res.transition_tick * res.dt:.6f}" if res is not None and res.transition_tick else ""
    return [repr(s), f"{s / h:.6g}", res.outcome if res is not None else "failed",
            reason if reason is not None else (res.reason if res is not None else ""),
            str(res.transitions) if res is not None else "0",
            (res.gait_kind or "") if res is not None else "", tt,
            _num(res.total_energy) if res is not None else "",
            f"{res.total_time:.6f}" if res is not None else "",
            base.outcome if base is not None else "", _num(base.total_energy) if base is not None else "",
            _num(thr.T_wb) if thr is not None else "", _num(thr.T_rb) if thr is not None else ""]


def cmd_sweep(model_path, table_path, heights, out_dir, approach=0.1, speed=0.1, plot=False,
              normalized_time=False, stream=sys.stdout):
    """Hybrid and rolling-only runs per height; a failing height does not stop the others."""
    cfg = load_config(model_path)
    robot = Robot(cfg)
    hs = parse_heights(heights, cfg.track.track_height_h_m)
    table = load_table(table_path)
    out = Path(out_dir)
    rows, results, failed = [], {}, False
    for s in hs:
        sc = _scenario(cfg, s, approach, speed)
        tag = f"height_{s:.4f}m"
        base = ctrl.run_negotiation(sc, robot, None, baseline=True)
        _write(out / tag / "baseline.csv", timeseries_csv(base, normalized_time))
        try:
            thr = ctrl.lookup_thresholds(table, s)
        except ctrl.TableRangeError as e:
            why = f"no threshold row ({e})"
            if not base.completed:
                why += f"; rolling only: {base.reason}"
            rows.append(_summary_row(cfg, s, None, base, None, why))
            print(f"{s:.4f} m: failed({why})", file=stream)
            results[s] = (None, base)
            failed = True
            continue
        res = ctrl.run_negotiation(sc, robot, table)
        _write(out / tag / "timeseries.csv", timeseries_csv(res, normalized_time))
        if plot:
            _write(out / tag / "energy.svg", energy_svg(res, f"step {s:.3f} m"))
        rows.append(_summary_row(cfg, s, res, base, thr))
        print(f"{s:.4f} m: {res.summary()}; rolling only: {base.summary()}", file=stream)
        results[s] = (res, base)
        failed |= not res.completed
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    w.writerows(rows)
    _write(out / "summary.csv", buf.getvalue())
    if failed:
        raise CliError("negotiation-failed", "at least one height failed (see summary.csv)")
    return results


# --- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trackleg", description="Track-legged step negotiation simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, heights_many: bool):
        sp.add_argument("--model", default="reference", help="model JSON file (default: bundled reference)")
        if heights_many:
            sp.add_argument("--heights", nargs="*", default=None, help="e.g. 1h 2h 3h or 0.16m")
        sp.add_argument("--speed", type=float, default=0.1, help="rolling speed, m/s")

    sp = sub.add_parser("prestudy", help="energy of both climbing gaits per height -> threshold table")
    common(sp, True)
    sp.add_argument("--out", required=True)

    for name in ("run", "sweep"):
        sp = sub.add_parser(name, help="negotiate one step" if name == "run" else "negotiate several steps")
        common(sp, name == "sweep")
        if name == "run":
            sp.add_argument("--height", required=True)
            sp.add_argument("--baseline", action="store_true", help="rolling only (thresholds = inf)")
            sp.add_argument("--table", default=None)
        else:
            sp.add_argument("--table", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--approach", type=float, default=0.1, help="rolling before first contact, m")
        sp.add_argument("--plot", action="store_true", help="also write energy.svg")
        sp.add_argument("--normalized-time", action="store_true", help="add a t_norm column")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "prestudy":
            cmd_prestudy(args.model, args.heights, args.out, args.speed)
        elif args.command == "run":
            cmd_run(args.model, args.table, args.height, args.out, args.baseline, args.approach, args.speed,
                    args.plot, args.normalized_time)
        else:
            cmd_sweep(args.model, args.table, args.heights, args.out, args.approach, args.speed, args.plot,
                      args.normalized_time)
    except CliError as e:
        print(f"error[{e.category}]: {e}", file=sys.stderr)
        return EXIT_CODES[e.category]
    return 0


if __name__ == "__main__":
    sys.exit(main())
