"""Command-line front end.

Every run is described by a scenario: an INI file with a ``[scenario]``
section naming the command and optional ``[grid]``, ``[numerics]``,
``[trajectory]``, ``[meanfield]``, ``[analyze]`` and ``[fit]`` sections.
Lists are comma separated; ``start:stop:num`` expands to an inclusive
linear range. Command-line flags override the file.

Artifacts are CSV (17 significant digits, times in seconds, rates in
units of gamma, both named in the headers) and JSON, listed with their
SHA-256 in ``manifest.json``. Exit status: 0 success, 2 configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import math
import os
import re
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from kerrdpt import __version__
from kerrdpt.correlations import CorrelationCurve, default_delays, g1_curve, g2_curve, g2_zero
from kerrdpt.errors import InsufficientDataError, KerrError, StreamFormatError
from kerrdpt.fitting import (critical_drive, fit_bunching, fit_gap_scaling, fit_lorentzian,
                             fit_quadratic, SingularFitError)
from kerrdpt.fock import FockSpace, SystemParams
from kerrdpt.liouvillian import build, converge_cutoff, spectrum, steady_state
from kerrdpt.meanfield import bistable_window, hysteresis_ramp, steady_amplitudes
from kerrdpt.photonstream import (bin_intensity, dwell_times, g2_direct, histogram, load_stream,
                                  save_stream)
from kerrdpt.photonstream import PhotonStream
from kerrdpt.trajectories import simulate
from kerrdpt.units import DEFAULT_TIME_UNIT_PS

logger = logging.getLogger("kerrdpt")

COMMANDS = ("spectrum", "steady", "g2", "g1", "sweep", "meanfield", "trajectory", "analyze", "fit")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
MAX_CUTOFF = 150


class ConfigError(Exception):
    pass


# ------------------------------------------------------------ value parsing

def _float(text: str) -> float:
    return float(text)


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _floats(text: str) -> list[float]:
    text = text.strip()
    m = re.fullmatch(r"([^:]+):([^:]+):([^:]+)", text)
    if m:
        start, stop, num = float(m[1]), float(m[2]), _int(m[3])
        if num < 1:
            raise ValueError("range needs at least one point")
        return [float(x) for x in np.linspace(start, stop, num)]
    items = [s for s in (p.strip() for p in text.split(",")) if s]
    if not items:
        raise ValueError("empty list")
    return [float(s) for s in items]


def _cutoff(text: str):
    return "auto" if text.strip().lower() == "auto" else _int(text)


def _delays(text: str):
    return "auto" if text.strip().lower() == "auto" else _floats(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


SCHEMA: dict[str, dict[str, tuple]] = {
    "scenario": {"command": (str, None), "out": (str, "results"), "seed": (_int, 0),
                 "threads": (_int, 1)},
    "grid": {"delta": (_floats, [1.0]), "u": (_floats, [0.2]), "f": (_floats, [1.0]),
             "gamma": (_float, 1.0)},
    "numerics": {"cutoff": (_cutoff, "auto"), "cutoff_tol": (_float, 1e-3), "k": (_int, 4),
                 "delays": (_delays, "auto"), "delay_num": (_int, 200), "delay_span": (_float, 50.0),
                 "connected": (_bool, False), "time_unit_ps": (_float, DEFAULT_TIME_UNIT_PS)},
    "trajectory": {"duration": (_float, 1e4), "n_traj": (_int, 1), "step": (_float, 0.05),
                   "levels": (_int, 12), "burn_in": (_float, 100.0), "bin_width": (_float, 0.2),
                   "max_delay": (_float, 20.0)},
    "meanfield": {"ramp_f_max": (_optional_float, None), "ramp_duration": (_float, 2e4),
                  "cycles": (_int, 1), "samples": (_int, 2000)},
    "analyze": {"input": (str, ""), "bin_width_s": (_optional_float, None),
                "max_delay_s": (_optional_float, None), "hist_bin_s": (_optional_float, None),
                "irf_fwhm_s": (_float, 0.0), "blocks": (_int, 0)},
    "fit": {"input": (str, ""), "model": (str, "bunching"), "irf_fwhm_s": (_float, 0.0),
            "window": (_floats, [-0.3, -0.05])},
}


def _format_value(v) -> str:
    if isinstance(v, list):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def _key_line(lines: list[str], section: str, key: str) -> int | None:
    current = None
    for i, line in enumerate(lines, 1):
        s = line.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            current = m[1].strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return i
    return None


@dataclass
class Scenario:
    """A fully resolved, serializable run description."""

    command: str
    values: dict = field(default_factory=dict)
    source: str = "<flags>"

    def __getitem__(self, item):
        section, key = item
        return self.values[section][key]

    @classmethod
    def defaults(cls, command: str) -> "Scenario":
        values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
        values["scenario"]["command"] = command
        return cls(command, values)

    @classmethod
    def parse(cls, text: str, source: str = "<string>", command: str | None = None) -> "Scenario":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str.lower
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        lines = text.splitlines()
        file_cmd = parser.get("scenario", "command", fallback=None)
        file_cmd = file_cmd.strip() if file_cmd else None
        if command and file_cmd and file_cmd != command:
            line = _key_line(lines, "scenario", "command")
            raise ConfigError(f"{source}:{line}: [scenario] command: file says {file_cmd!r} "
                              f"but the subcommand is {command!r}")
        cmd = command or file_cmd
        if cmd is None:
            raise ConfigError(f"{source}: no command given ([scenario] command = ...)")
        if cmd not in COMMANDS:
            line = _key_line(lines, "scenario", "command")
            raise ConfigError(f"{source}:{line}: [scenario] command: unknown command {cmd!r}; "
                              f"choose from {', '.join(COMMANDS)}")
        scen = cls.defaults(cmd)
        scen.source = source
        for section in parser.sections():
            if section not in SCHEMA:
                line = next((i for i, l in enumerate(lines, 1) if l.strip() == f"[{section}]"), None)
                raise ConfigError(f"{source}:{line}: unknown section [{section}]")
            for key, raw in parser.items(section):
                line = _key_line(lines, section, key)
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{source}:{line}: [{section}] unknown field {key!r}")
                conv = SCHEMA[section][key][0]
                try:
                    scen.values[section][key] = conv(raw)
                except ValueError as exc:
                    raise ConfigError(f"{source}:{line}: [{section}] {key} = {raw!r}: {exc}") from exc
        scen.values["scenario"]["command"] = cmd
        scen.validate()
        return scen

    @classmethod
    def from_file(cls, path, command: str | None = None) -> "Scenario":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.parse(text, os.fspath(path), command)

    def validate(self):
        v = self.values
        checks = [
            (v["grid"]["gamma"] > 0, "grid", "gamma", "must be positive"),
            (min(v["grid"]["f"]) >= 0, "grid", "f", "drive amplitudes must be >= 0"),
            (v["scenario"]["threads"] >= 1, "scenario", "threads", "must be >= 1"),
            (v["numerics"]["k"] >= 2, "numerics", "k", "must be >= 2"),
            (v["numerics"]["cutoff"] == "auto" or 1 <= v["numerics"]["cutoff"] <= MAX_CUTOFF,
             "numerics", "cutoff", f"must be 'auto' or in [1, {MAX_CUTOFF}]"),
            (v["trajectory"]["duration"] > 0, "trajectory", "duration", "must be positive"),
            (v["trajectory"]["n_traj"] >= 1, "trajectory", "n_traj", "must be >= 1"),
            (v["fit"]["model"] in ("bunching", "lorentzian", "gap"), "fit", "model",
             "must be bunching, lorentzian or gap"),
            (len(v["fit"]["window"]) == 2, "fit", "window", "needs exactly two values"),
        ]
        for ok, section, key, msg in checks:
            if not ok:
                raise ConfigError(f"{self.source}: [{section}] {key}: {msg}")

    def to_ini(self) -> str:
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                val = self.values[section][key]
                if section == "scenario" and key in ("out", "threads"):
                    continue  # do not affect results
                lines.append(f"{key} = {_format_value(val)}")
            lines.append("")
        return "\n".join(lines)

    @property
    def inputs_hash(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()

    def grid(self) -> list[SystemParams]:
        g = self.values["grid"]
        return [SystemParams(d, u, f, g["gamma"]) for d, u, f in product(g["delta"], g["u"], g["f"])]


# ------------------------------------------------------------- artifacts

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


class Writer:
    """Single writer for all artifacts of a run; tracks checksums."""

    def __init__(self, out: str):
        self.out = out
        os.makedirs(out, exist_ok=True)
        self.files: list[str] = []

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def _register(self, name: str):
        if name not in self.files:
            self.files.append(name)

    def text(self, name: str, content: str):
        tmp = self.path(name) + ".tmp"
        with open(tmp, "w", newline="") as fh:
            fh.write(content)
        os.replace(tmp, self.path(name))
        self._register(name)

    def csv(self, name: str, header: list[str], rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
        self.text(name, buf.getvalue())

    def json(self, name: str, obj):
        self.text(name, json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n")

    def external(self, names):
        for name in names:
            self._register(os.path.relpath(name, self.out))

    def manifest(self, scen: Scenario) -> dict:
        entries = []
        for name in sorted(self.files):
            with open(self.path(name), "rb") as fh:
                data = fh.read()
            entries.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        man = {"tool": "kerrdpt", "version": __version__, "command": scen.command,
               "inputs_sha256": scen.inputs_hash, "artifacts": entries}
        with open(self.path("manifest.json"), "w") as fh:
            json.dump(man, fh, indent=1, sort_keys=True)
            fh.write("\n")
        return man


def _curve_rows(curve: CorrelationCurve, unit_s: float):
    err = curve.errors if curve.errors is not None else np.zeros(len(curve))
    return zip(curve.delays * unit_s, curve.values, err)


# ------------------------------------------------------------ grid points

def _space_for(params: SystemParams, num: dict) -> FockSpace:
    if num["cutoff"] == "auto":
        return FockSpace(converge_cutoff(params, num["cutoff_tol"], max_cutoff=MAX_CUTOFF))
    return FockSpace(num["cutoff"])


def _delay_grid(num: dict, adr: float, gamma: float) -> np.ndarray:
    if num["delays"] == "auto":
        return default_delays(adr, gamma, num["delay_num"], num["delay_span"])
    delays = np.asarray(num["delays"], dtype=float)
    if np.any(delays < 0) or np.any(np.diff(delays) <= 0):
        raise ConfigError("[numerics] delays must be non-negative and strictly increasing")
    return delays


def _point(command: str, values: dict, params: SystemParams, delays) -> dict:
    """Work for one grid point; pure function of its arguments."""
    num = values["numerics"]
    space = _space_for(params, num)
    liouv = build(params, space)
    out = {"cutoff": space.cutoff}
    if command in ("steady", "sweep", "g2", "g1"):
        rho = steady_state(liouv)
        out["n_mean"] = rho.mean_photon()
        try:
            out["g2_zero"] = g2_zero(rho)
        except ZeroDivisionError:
            out["g2_zero"] = math.nan
    if command in ("spectrum", "sweep"):
        spec = spectrum(liouv, k=num["k"])
        out["re"] = [float(x) for x in spec.eigenvalues.real]
        out["im"] = [float(x) for x in spec.eigenvalues.imag]
        out["adr"] = spec.adr
    if command in ("g2", "g1"):
        if command == "g2":
            c = g2_curve(params, space, delays, state=rho, liouv=liouv)
        else:
            c = g1_curve(params, space, delays, state=rho, liouv=liouv, connected=num["connected"])
        out["values"] = [float(x) for x in c.values]
    return out


def _point_star(args):
    return _point(*args)


class Checkpoint:
    """Per-point results stored as JSON, each written atomically."""

    def __init__(self, out: str, key: str):
        self.dir = os.path.join(out, ".checkpoints", key[:16])
        os.makedirs(self.dir, exist_ok=True)

    def _file(self, i: int) -> str:
        return os.path.join(self.dir, f"{i:06d}.json")

    def load(self, i: int):
        try:
            with open(self._file(i)) as fh:
                return json.load(fh)
        except (OSError, json.JSONDecodeError):
            return None

    def save(self, i: int, result: dict):
        tmp = self._file(i) + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(result, fh)
        os.replace(tmp, self._file(i))

    def clear(self):
        shutil.rmtree(os.path.dirname(self.dir), ignore_errors=True)


def _run_grid(scen: Scenario, writer: Writer, delays=None) -> list[dict]:
    grid = scen.grid()
    ck = Checkpoint(writer.out, scen.inputs_hash)
    results: list[dict | None] = [ck.load(i) for i in range(len(grid))]
    todo = [i for i, r in enumerate(results) if r is None]
    if len(todo) < len(grid):
        logger.info("resuming: %d of %d grid points already done", len(grid) - len(todo), len(grid))
    jobs = [(scen.command, scen.values, grid[i], delays) for i in todo]
    threads = scen["scenario", "threads"]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for i, res in zip(todo, pool.map(_point_star, jobs)):
                ck.save(i, res)
                results[i] = res
    else:
        for i, job in zip(todo, jobs):
            res = _point_star(job)
            ck.save(i, res)
            results[i] = res
            logger.info("grid point %d/%d done: %s", i + 1, len(grid), grid[i])
    return results


# ----------------------------------------------------------------- commands

_PARAM_HEADER = ["delta_gamma", "u_gamma", "f_gamma"]


def _prow(p: SystemParams):
    return [p.delta / p.gamma, p.u / p.gamma, p.f / p.gamma]


def cmd_grid(scen: Scenario, writer: Writer):
    grid = scen.grid()
    results = _run_grid(scen, writer)
    unit_s = scen["numerics", "time_unit_ps"] * 1e-12
    k = scen["numerics", "k"]
    if scen.command == "steady":
        writer.csv("steady.csv", _PARAM_HEADER + ["cutoff", "n_mean", "g2_zero"],
                   [_prow(p) + [r["cutoff"], r["n_mean"], r["g2_zero"]] for p, r in zip(grid, results)])
        return
    spec_cols = []
    for j in range(1, k):
        spec_cols += [f"rate{j}_gamma", f"freq{j}_gamma"]
    rows = []
    for p, r in zip(grid, results):
        g = p.gamma
        row = _prow(p) + [r["cutoff"]]
        if scen.command == "sweep":
            row += [r["n_mean"], r["g2_zero"] - 1.0]
        row += [r["adr"] / g, unit_s / r["adr"]]
        for j in range(1, k):
            row += [-r["re"][j] / g, r["im"][j] / g]
        rows.append(row)
    head = _PARAM_HEADER + ["cutoff"]
    if scen.command == "sweep":
        head += ["n_mean", "bunching_amplitude"]
    head += ["adr_gamma", "lifetime_s"] + spec_cols
    writer.csv(f"{scen.command}.csv", head, rows)


def cmd_correlation(scen: Scenario, writer: Writer):
    grid = scen.grid()
    num = scen.values["numerics"]
    unit_s = num["time_unit_ps"] * 1e-12
    if num["delays"] == "auto":
        # one common grid so the (F, t) map is rectangular
        adrs = [spectrum(build(p, _space_for(p, num)), k=2).adr for p in grid]
        delays = _delay_grid(num, min(adrs), grid[0].gamma)
    else:
        delays = _delay_grid(num, 1.0, 1.0)
    results = _run_grid(scen, writer, delays)
    name = scen.command
    rows = []
    for i, (p, r) in enumerate(zip(grid, results)):
        writer.csv(f"{name}_{i:04d}.csv", ["delay_s", "value", "error"],
                   zip(delays * unit_s, r["values"], np.zeros(delays.size)))
        rows += [_prow(p) + [t * unit_s, v] for t, v in zip(delays, r["values"])]
    writer.csv(f"{name}_map.csv", _PARAM_HEADER + ["delay_s", name], rows)
    writer.csv(f"{name}_points.csv", ["index"] + _PARAM_HEADER + ["cutoff", "n_mean", "g2_zero"],
               [[i] + _prow(p) + [r["cutoff"], r["n_mean"], r["g2_zero"]]
                for i, (p, r) in enumerate(zip(grid, results))])


def cmd_meanfield(scen: Scenario, writer: Writer):
    g = scen.values["grid"]
    mf = scen.values["meanfield"]
    unit_s = scen["numerics", "time_unit_ps"] * 1e-12
    rows = []
    for p in scen.grid():
        for j, root in enumerate(steady_amplitudes(p).roots):
            rows.append(_prow(p) + [j, root.n, root.alpha.real, root.alpha.imag, root.stable, root.marginal])
    writer.csv("meanfield_roots.csv", _PARAM_HEADER + ["root", "n_photon", "re_alpha", "im_alpha",
                                                       "stable", "marginal"], rows)
    win = []
    for d, u in product(g["delta"], g["u"]):
        w = bistable_window(d, u, g["gamma"]) if u != 0 else None
        win.append([d / g["gamma"], u / g["gamma"]] + (list(np.array(w) / g["gamma"]) if w else [math.nan] * 2))
    writer.csv("bistable_window.csv", ["delta_gamma", "u_gamma", "f_low_gamma", "f_high_gamma"], win)
    if mf["ramp_f_max"] is not None:
        for i, (d, u) in enumerate(product(g["delta"], g["u"])):
            tr = hysteresis_ramp(SystemParams(d, u, 0.0, g["gamma"]), mf["ramp_f_max"], mf["ramp_duration"],
                                 cycles=mf["cycles"], samples_per_sweep=mf["samples"])
            writer.csv(f"ramp_{i:04d}.csv", ["time_s", "f_gamma", "n_photon", "rising"],
                       zip(tr.t * unit_s, tr.f / g["gamma"], tr.n, tr.rising))


def cmd_trajectory(scen: Scenario, writer: Writer):
    tj = scen.values["trajectory"]
    num = scen.values["numerics"]
    seed = scen["scenario", "seed"]
    rows = []
    for i, p in enumerate(scen.grid()):
        space = _space_for(p, num)
        curves = []
        for j in range(tj["n_traj"]):
            rec = simulate(p, space, tj["duration"], seed, index=j, step=tj["step"], levels=tj["levels"],
                           burn_in=tj["burn_in"], time_unit_ps=num["time_unit_ps"])
            writer.external(save_stream(rec.stream, writer.path(f"trajectory_{i:04d}_{j:03d}.ptag")))
            unit = rec.stream.time_unit_s
            try:
                curves.append(g2_direct(rec.stream, tj["bin_width"] * unit, tj["max_delay"] * unit))
            except InsufficientDataError as exc:
                logger.warning("point %d trajectory %d: %s", i, j, exc)
            rows.append([i, j] + _prow(p) + [space.cutoff, len(rec.stream), len(rec.stream) / (rec.stream.duration_s / unit)])
        if curves:
            vals = np.array([c.values for c in curves])
            err = vals.std(axis=0, ddof=1) / np.sqrt(len(curves)) if len(curves) > 1 else curves[0].errors
            writer.csv(f"trajectory_{i:04d}_g2.csv", ["delay_s", "value", "error"],
                       zip(curves[0].delays, vals.mean(axis=0), err))
    writer.csv("trajectories.csv", ["point", "index"] + _PARAM_HEADER + ["cutoff", "clicks", "rate_gamma"], rows)


def analyze(stream: PhotonStream, cfg: dict, writer: Writer) -> dict:
    """Correlation, histogram, dwell and bunching-fit artifacts for one stream."""
    report = {"clicks": len(stream), "duration_s": stream.duration_s, "status": "ok"}
    T = stream.duration_s
    bin_w = cfg["bin_width_s"] or T / 1e5
    max_d = cfg["max_delay_s"] or 100 * bin_w
    hist_bin = cfg["hist_bin_s"] or T / 1e3
    try:
        curve = g2_direct(stream, bin_w, max_d, blocks=cfg["blocks"] or None)
    except InsufficientDataError as exc:
        report["status"] = "insufficient data"
        report["reason"] = str(exc)
        writer.json("analysis.json", report)
        return report
    writer.csv("g2.csv", ["delay_s", "value", "error"], _curve_rows(curve, 1.0))
    trace = bin_intensity(stream, hist_bin)
    hist = histogram(trace)
    writer.csv("histogram.csv", ["counts_per_bin", "probability", "smoothed"],
               zip(hist.values, hist.probabilities, hist.smoothed))
    report["modality"] = hist.modality
    report["hist_bin_s"] = hist_bin
    if hist.modality >= 2:
        dw = dwell_times(trace)
        report["dwell"] = {"mean_low_s": dw.mean_low, "mean_high_s": dw.mean_high, "switches": dw.switches,
                           "sufficient": dw.sufficient, "thresholds": list(map(float, dw.thresholds))}
    try:
        fit = fit_bunching(curve, cfg["irf_fwhm_s"])
        writer.json("bunching_fit.json", fit.to_dict())
        report["fit"] = fit.to_dict()
    except (KerrError, ValueError) as exc:
        report["fit_error"] = str(exc)
    writer.json("analysis.json", report)
    return report


def cmd_analyze(scen: Scenario, writer: Writer):
    path = scen["analyze", "input"]
    if not path:
        raise ConfigError("[analyze] input: a photon-tag file is required")
    analyze(load_stream(path), scen.values["analyze"], writer)


def _read_table(path) -> dict[str, np.ndarray]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"[fit] input: cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise ConfigError(f"[fit] input: {path} holds no data rows")
    head = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"[fit] input: {path}: {exc}") from exc
    return {h: data[:, j] for j, h in enumerate(head)}


def cmd_fit(scen: Scenario, writer: Writer):
    fc = scen.values["fit"]
    if not fc["input"]:
        raise ConfigError("[fit] input: a CSV file is required")
    tab = _read_table(fc["input"])
    model = fc["model"]
    if model == "bunching":
        t = tab.get("delay_s")
        if t is None:
            raise ConfigError("[fit] input: bunching fits need a delay_s column")
        err = tab.get("error")
        if err is not None and np.all(err == 0):
            err = None
        res = fit_bunching(CorrelationCurve(t, tab["value"], "G2", err), fc["irf_fwhm_s"])
        writer.json("fit.json", res.to_dict())
    elif model == "lorentzian":
        cols = list(tab)
        res = fit_lorentzian(tab[cols[0]], tab[cols[1]], tab[cols[2]] if len(cols) > 2 else None)
        writer.json("fit.json", res.to_dict())
    else:
        for col in ("delta_gamma", "f_gamma", "adr_gamma"):
            if col not in tab:
                raise ConfigError(f"[fit] input: gap fits need a {col} column (a sweep or spectrum table)")
        window = tuple(fc["window"])
        report, rows = {}, []
        for d in np.unique(tab["delta_gamma"]):
            m = tab["delta_gamma"] == d
            f, tau = tab["f_gamma"][m], 1.0 / tab["adr_gamma"][m]
            crit = critical_drive(f, tau)
            entry = {"f_c_gamma": crit.f_c, "at_edge": crit.at_edge}
            for kind in ("power_law", "exponential"):
                try:
                    entry[kind] = fit_gap_scaling(f, tau, crit.f_c, window, kind).to_dict()
                except (KerrError, ValueError) as exc:
                    entry[kind] = {"error": str(exc)}
            report[repr(float(d))] = entry
            pl = entry["power_law"]
            if "params" in pl:
                rows.append([d, crit.f_c, pl["params"]["exponent"], pl["sigmas"]["exponent"]])
        writer.csv("exponents.csv", ["delta_gamma", "f_c_gamma", "exponent", "exponent_sigma"], rows)
        if len(rows) >= 3:
            arr = np.array(rows)
            sig = arr[:, 3] if np.all(arr[:, 3] > 0) and np.all(np.isfinite(arr[:, 3])) else None
            try:
                report["quadratic"] = fit_quadratic(arr[:, 0], arr[:, 2], sig).to_dict()
            except SingularFitError as exc:
                report["quadratic"] = {"error": str(exc)}
        writer.json("gap_fits.json", report)


HANDLERS = {"spectrum": cmd_grid, "steady": cmd_grid, "sweep": cmd_grid, "g2": cmd_correlation,
            "g1": cmd_correlation, "meanfield": cmd_meanfield, "trajectory": cmd_trajectory,
            "analyze": cmd_analyze, "fit": cmd_fit}


def run(scen: Scenario) -> dict:
    """Execute a scenario; returns the manifest."""
    writer = Writer(scen["scenario", "out"])
    writer.text("scenario.ini", scen.to_ini())
    HANDLERS[scen.command](scen, writer)
    Checkpoint(writer.out, scen.inputs_hash).clear()
    return writer.manifest(scen)


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kerrdpt", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="scenario INI file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, help="worker processes for grid points")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--cutoff", help="Fock cutoff or 'auto'")
        sp.add_argument("--delta", help="detuning list (units of gamma)")
        sp.add_argument("--u", help="interaction list (units of gamma)")
        sp.add_argument("--f", help="drive list (units of gamma)")
        sp.add_argument("--input", help="input file for analyze/fit")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def _apply_flags(scen: Scenario, args) -> None:
    v = scen.values
    try:
        if args.out is not None:
            v["scenario"]["out"] = args.out
        if args.threads is not None:
            v["scenario"]["threads"] = args.threads
        if args.seed is not None:
            v["scenario"]["seed"] = args.seed
        if args.cutoff is not None:
            v["numerics"]["cutoff"] = _cutoff(args.cutoff)
        for key in ("delta", "u", "f"):
            if getattr(args, key) is not None:
                v["grid"][key] = _floats(getattr(args, key))
        if args.input is not None:
            section = "analyze" if scen.command == "analyze" else "fit"
            v[section]["input"] = args.input
    except ValueError as exc:
        raise ConfigError(f"command line: {exc}") from exc
    scen.source = scen.source + " + flags"
    scen.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            scen = Scenario.from_file(args.config, args.command)
        else:
            scen = Scenario.defaults(args.command)
        _apply_flags(scen, args)
        manifest = run(scen)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StreamFormatError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KerrError, ArithmeticError, np.linalg.LinAlgError, OSError, MemoryError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"wrote {len(manifest['artifacts'])} artifacts to {scen['scenario', 'out']}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
