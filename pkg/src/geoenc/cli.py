"""Batch experiment runner.

Sweeps the grid pause x flows x tolerance x seed, one simulation per
cell, and writes a per-cell CSV plus a summary CSV averaged over seeds.
Settings come from a flat ``key = value`` file and/or command-line
flags; flags win.

    python -m geoenc --synthetic --pause-times 0,900 --flows 10 \\
        --tolerances 10 --seeds 0,1,2 --out results.csv
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .estimation import GaussMarkovConfig
from .mobility import ArenaSpec, apply_pause, load_traces, preprocess, synth_gauss_markov
from .netsim import SimConfig, run

log = logging.getLogger(__name__)

COLUMNS = (
    "pause", "flows", "tolerance", "seed", "data_sent", "data_received", "decrypted",
    "failed", "updates_sent", "updates_received", "preemptive_updates",
    "decryption_ratio", "overhead_ratio", "mean_delay",
)
# remaining report fields, appended after the fixed columns
EXTRA_COLUMNS = (
    "bootstrap_updates", "movement_updates", "data_dropped", "updates_dropped", "data_in_flight",
    "total_delay",
)
ERROR_MARKER = "ERROR"

DEFAULT_PAUSES = (0, 10, 25, 50, 75, 100, 200, 400, 650, 900)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    pause_times: list = field(default_factory=lambda: list(DEFAULT_PAUSES))
    flows: list = field(default_factory=lambda: [10])
    tolerances: list = field(default_factory=lambda: [10.0])
    seeds: list = field(default_factory=lambda: list(range(10)))
    traces: Optional[str] = None
    synthetic: bool = False
    mode: str = "static"
    duration: float = 900.0
    out: Optional[str] = None
    jobs: int = 1
    trace_dir: Optional[str] = None
    # legs starting after this are dropped; defaults to the duration
    purge_limit: Optional[float] = None
    # simulation
    cbr_rate: float = 4.0
    packet_size: int = 256
    update_size: int = 64
    radio_range: float = 250.0
    per_hop_latency: float = 0.03
    node_service_rate: float = 16000.0
    reading_interval: float = 1.0
    period_len: int = 10
    gamma: float = 0.5
    # synthetic traces
    nodes: int = 50
    speed_min: float = 10.0
    speed_max: float = 20.0
    noise_sigma: float = 1.0
    heading_sigma: float = 0.2
    width: float = 1500.0
    height: float = 1500.0
    margin: float = 150.0

    def validate(self):
        for name in ("pause_times", "flows", "tolerances", "seeds"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must not be empty")
        if any(p < 0 for p in self.pause_times):
            raise ConfigError("pause_times must be >= 0")
        if any(f < 1 for f in self.flows):
            raise ConfigError("flows must be >= 1")
        if any(not t > 0 for t in self.tolerances):
            raise ConfigError("tolerances must be > 0")
        if (self.traces is None) == (not self.synthetic):
            raise ConfigError("traces: give exactly one of a trace file or synthetic")
        if self.out is None:
            raise ConfigError("out: missing required field")
        if self.mode not in ("static", "predictive"):
            raise ConfigError(f"mode must be static or predictive, got {self.mode!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        for name in ("duration", "cbr_rate", "radio_range", "node_service_rate",
                     "reading_interval", "packet_size", "update_size", "nodes"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.purge_limit is not None and not self.purge_limit > 0:
            raise ConfigError("purge_limit must be > 0")
        if not 0 <= self.gamma <= 1:
            raise ConfigError("gamma must lie in [0, 1]")
        if not 0 <= self.speed_min <= self.speed_max:
            raise ConfigError("need 0 <= speed_min <= speed_max")
        out_dir = Path(self.out).resolve().parent
        if not out_dir.is_dir() or not os.access(out_dir, os.W_OK):
            raise ConfigError(f"out: directory {out_dir} is not writable")
        return self

    def cells(self) -> list[tuple]:
        return [
            (p, f, t, s)
            for p in self.pause_times
            for f in self.flows
            for t in self.tolerances
            for s in self.seeds
        ]


# --- config parsing ----------------------------------------------------------

def _csv_list(conv):
    def parse(text):
        if isinstance(text, list):
            return text
        items = [x.strip() for x in str(text).split(",") if x.strip()]
        return [conv(x) for x in items]
    return parse


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _num(text) -> float:
    return float(text)


def _int_like(text) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


_CONVERT = {
    "pause_times": _csv_list(_num),
    "flows": _csv_list(_int_like),
    "tolerances": _csv_list(_num),
    "seeds": _csv_list(_int_like),
    "synthetic": _bool,
    "jobs": _int_like,
    "packet_size": _int_like,
    "update_size": _int_like,
    "period_len": _int_like,
    "nodes": _int_like,
    "traces": str,
    "mode": str,
    "out": str,
    "trace_dir": str,
}
KEYS = tuple(f.name for f in fields(ExperimentSpec))


def _convert(key: str, value):
    conv = _CONVERT.get(key, _num)
    try:
        return conv(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines; ``#`` starts a comment. Dashes in keys are
    accepted for underscores."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def build_parser() -> argparse.ArgumentParser:
    d = ExperimentSpec()
    p = argparse.ArgumentParser(
        prog="geoenc",
        description="Run a geo-encryption position-update sweep and write CSV tables.",
        epilog="settings (config-file keys, or --set KEY=VALUE) and defaults: "
        + "; ".join(f"{f.name}={_show(getattr(d, f.name))}" for f in fields(d)),
    )
    p.add_argument("--config", help="key = value settings file; flags override it")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--traces", help="ns-2 movement script or node,time,x,y,speed CSV")
    src.add_argument("--synthetic", action="store_const", const=True,
                     help="generate Gauss-Markov traces per seed")
    p.add_argument("--pause-times", "--pauses", dest="pause_times",
                   help=f"comma list of seconds (default {','.join(map(str, d.pause_times))})")
    p.add_argument("--flows", help="comma list of flow counts (default 10)")
    p.add_argument("--tolerances", "--tolerance", dest="tolerances",
                   help="comma list of meters (default 10)")
    p.add_argument("--seeds", help="comma list of seeds (default 0..9)")
    p.add_argument("--mode", choices=("static", "predictive"), help="sender position model "
                   "(default static)")
    p.add_argument("--duration", help="simulated seconds (default 900)")
    p.add_argument("--out", help="per-cell CSV path; the summary goes next to it")
    p.add_argument("--jobs", help="cells run in parallel (default 1)")
    p.add_argument("--trace-dir", dest="trace_dir", help="write one event log per cell here")
    p.add_argument("--purge-limit", dest="purge_limit",
                   help="drop legs starting after this (default: duration)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="any other setting, e.g. --set node_service_rate=16000")
    return p


def _show(v) -> str:
    if isinstance(v, list):
        return ",".join(fmt(x) for x in v)
    return "unset" if v is None else fmt(v)


def load_config(argv=None) -> ExperimentSpec:
    """Defaults, then the ``--config`` file, then flags."""
    args = build_parser().parse_args(argv)
    values: dict = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from None
        values.update(parse_config_text(text, args.config))
    flags = {
        k: getattr(args, k)
        for k in ("traces", "synthetic", "pause_times", "flows", "tolerances", "seeds",
                  "mode", "duration", "out", "jobs", "trace_dir", "purge_limit")
        if getattr(args, k) is not None
    }
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        k = k.replace("-", "_")
        if k not in KEYS:
            raise ConfigError(f"unknown key {k!r}")
        flags[k] = v
    if "traces" in flags:
        values.pop("synthetic", None)
    if flags.get("synthetic"):
        values.pop("traces", None)
    for k, v in flags.items():
        values[k] = _convert(k, v)
    return ExperimentSpec(**values).validate()


# --- running -----------------------------------------------------------------

def fmt(value) -> str:
    """Stable text for a CSV cell: integral numbers without a fraction,
    other floats by repr."""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isfinite(value) and value == int(value) and abs(value) < 1e15:
            return str(int(value))
        return repr(value)
    return str(value)


def _base_traces(spec: ExperimentSpec):
    if spec.traces is None:
        return None
    traces = load_traces(spec.traces)
    arena = ArenaSpec(spec.width, spec.height, spec.margin, spec.duration, spec.nodes)
    return preprocess(traces, arena)


def _cell_traces(spec: ExperimentSpec, seed: int, base, pause: float):
    if base is None:
        gm = GaussMarkovConfig(spec.gamma, spec.period_len, spec.noise_sigma, spec.heading_sigma)
        arena = ArenaSpec(spec.width, spec.height, spec.margin, spec.duration, spec.nodes)
        base = synth_gauss_markov(gm, seed, spec.nodes, arena, spec.duration,
                                  speed_range=(spec.speed_min, spec.speed_max))
    limit = spec.duration if spec.purge_limit is None else spec.purge_limit
    return [apply_pause(tr, pause, limit) for tr in base]


def run_cell(spec: ExperimentSpec, cell: tuple, base=None) -> tuple[dict, Optional[str]]:
    """Run one grid cell. Returns the metrics row and the event log text
    (None unless ``spec.trace_dir`` is set)."""
    pause, flows, tol, seed = cell
    traces = _cell_traces(spec, seed, base, pause)
    cfg = SimConfig(
        traces, n_senders=flows, n_receivers=flows, cbr_rate=spec.cbr_rate,
        packet_size=spec.packet_size, update_size=spec.update_size, tolerance=tol,
        duration=spec.duration, radio_range=spec.radio_range,
        per_hop_latency=spec.per_hop_latency, node_service_rate=spec.node_service_rate,
        seed=seed, mode=spec.mode, reading_interval=spec.reading_interval,
        gm=GaussMarkovConfig(spec.gamma, spec.period_len, spec.noise_sigma, spec.heading_sigma),
        keep_log=spec.trace_dir is not None,
    )
    res = run(cfg)
    m = res.metrics
    row = dict(zip(COLUMNS[:4], cell))
    for k in COLUMNS[4:11] + EXTRA_COLUMNS:
        row[k] = getattr(m, k)
    row["decryption_ratio"] = m.decryption_ratio
    row["overhead_ratio"] = m.overhead_ratio
    row["mean_delay"] = m.mean_delivery_delay
    return row, (res.log.text() if spec.trace_dir is not None else None)


def _worker(spec, cell, base):
    try:
        row, text = run_cell(spec, cell, base)
        return row, text, None
    except Exception as exc:  # a failed cell must not stop the sweep
        return None, None, f"{type(exc).__name__}: {exc}"


def log_name(cell: tuple) -> str:
    return "cell_p{}_f{}_t{}_s{}.log".format(*(fmt(c) for c in cell))


@dataclass
class ExperimentResult:
    rows: list
    summary: list
    errors: dict

    @property
    def ok(self) -> bool:
        return not self.errors


def run_experiment(spec: ExperimentSpec, progress=None) -> ExperimentResult:
    """Run every cell; rows come back in grid order whatever the
    completion order. ``progress`` gets one line per finished cell."""
    base = _base_traces(spec)  # unreadable trace file fails here, before any run
    cells = spec.cells()
    results: list = [None] * len(cells)
    errors: dict = {}

    def done(i, row, text, err):
        if err is not None:
            errors[cells[i]] = err
            row = dict(zip(COLUMNS[:4], cells[i]))
            row.update({k: ERROR_MARKER for k in COLUMNS[4:] + EXTRA_COLUMNS})
        elif text is not None:
            Path(spec.trace_dir, log_name(cells[i])).write_text(text)
        results[i] = row
        if progress is not None:
            status = "error " + err if err else "ok"
            progress(f"[{sum(r is not None for r in results)}/{len(cells)}] "
                     f"pause={fmt(cells[i][0])} flows={cells[i][1]} "
                     f"tolerance={fmt(cells[i][2])} seed={cells[i][3]}: {status}")

    if spec.trace_dir is not None:
        Path(spec.trace_dir).mkdir(parents=True, exist_ok=True)
    if spec.jobs == 1:
        for i, cell in enumerate(cells):
            done(i, *_worker(spec, cell, base))
    else:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            futs = {pool.submit(_worker, spec, cell, base): i for i, cell in enumerate(cells)}
            for fut in as_completed(futs):
                done(futs[fut], *fut.result())
    return ExperimentResult(results, summarize(results, spec), errors)


def summarize(rows: list, spec: ExperimentSpec) -> list:
    """Mean of every metric over seeds, one row per (pause, flows, tolerance).
    The ``seed`` entry holds the number of seeds averaged (``n_seeds`` in
    the CSV header)."""
    groups: dict = {}
    for row in rows:
        groups.setdefault((row["pause"], row["flows"], row["tolerance"]), []).append(row)
    out = []
    for key, members in groups.items():
        good = [r for r in members if r["data_sent"] != ERROR_MARKER]
        srow = dict(zip(COLUMNS[:3], key))
        srow["seed"] = len(good)
        for k in COLUMNS[4:] + EXTRA_COLUMNS:
            srow[k] = math.fsum(r[k] for r in good) / len(good) if good else ERROR_MARKER
        out.append(srow)
    return out


def to_csv(rows: list, summary: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = COLUMNS + EXTRA_COLUMNS
    w.writerow(["n_seeds" if summary and c == "seed" else c for c in cols])
    for row in rows:
        w.writerow([fmt(row[c]) for c in cols])
    return buf.getvalue()


def summary_path(out) -> Path:
    p = Path(out)
    return p.with_name(p.stem + ".summary" + (p.suffix or ".csv"))


def main(argv=None) -> int:
    try:
        spec = load_config(argv)
    except ConfigError as exc:
        print(f"geoenc: config error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        result = run_experiment(spec, progress=lambda line: print(line, file=sys.stderr, flush=True))
    except (OSError, ValueError) as exc:
        print(f"geoenc: {exc}", file=sys.stderr)
        return 2
    Path(spec.out).write_text(to_csv(result.rows))
    summary_path(spec.out).write_text(to_csv(result.summary, summary=True))
    if not result.ok:
        print(f"geoenc: {len(result.errors)} cell(s) failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
