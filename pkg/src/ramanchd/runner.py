"""Scenario engine: truncation convergence, per-point evaluation, sweeps, manifest."""

from __future__ import annotations

import dataclasses
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .chd import CHDCorrelator, h_zero, inequality_check, noise_summary
from .config import ScenarioConfig
from .errors import ConvergenceError, RamanCHDError, VanishingDenominatorError
from .fock import VIBRATION, ModeSpace, dag, mode_ladder
from .model import SystemParams, build_liouvillian, mean_field_amplitude
from .sensors import FilteredCorrelator, FilteredSetup
from .solver import steady_state
from .spectra import (chd_spectra, emission_from_correlation, spectral_tau_grid,
                      spectral_weight)
from .tables import CONVENTIONS, Table, sha256_file, write_table

logger = logging.getLogger(__name__)

CONVERGENCE_ATOL = 1e-10


def phi_label(phi: float) -> str:
    """``0``, ``pi/2``, ``3pi/4`` ... for simple multiples of pi, else the number."""
    frac = Fraction(phi / np.pi).limit_denominator(12)
    if abs(float(frac) * np.pi - phi) > 1e-12:
        return repr(float(phi))
    if frac == 0:
        return "0"
    num = "" if abs(frac.numerator) == 1 else str(abs(frac.numerator))
    sign = "-" if frac < 0 else ""
    den = "" if frac.denominator == 1 else f"/{frac.denominator}"
    return f"{sign}{num}pi{den}"


# ------------------------------------------------------------------ truncation


@dataclass
class ConvergenceReport:
    n_cavity: int
    n_vib: int
    displaced: bool
    tolerance: float
    history: list = field(default_factory=list)

    @property
    def max_change(self) -> float | None:
        return self.history[-1].get("max_rel_change") if len(self.history) > 1 else None

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _space(params: SystemParams, n_cavity: int, n_vib: int, displaced: bool) -> ModeSpace:
    disp = mean_field_amplitude(params) if displaced else 0j
    return ModeSpace.for_system(n_cavity, n_vib, displacement=disp)


def scalar_observables(params: SystemParams, n_cavity: int, n_vib: int, phis=(0.0, np.pi / 2),
                       displaced: bool = True) -> dict:
    """<n>, <b^dag b>, h_phi(0) and V_phi at one truncation."""
    space = _space(params, n_cavity, n_vib, displaced)
    ss = steady_state(build_liouvillian(params, space))
    b = mode_ladder(space, VIBRATION)
    out = {"n_ss": ss.expect(dag(mode_ladder(space, 0)) @ mode_ladder(space, 0)).real,
           "nb_ss": ss.expect(dag(b) @ b).real}
    for phi in phis:
        lbl = phi_label(phi)
        try:
            out[f"h0_{lbl}"] = h_zero(ss, phi)
        except VanishingDenominatorError:
            pass
        out[f"V_{lbl}"] = noise_summary(ss, phi).variance_phi
    return {k: float(v) for k, v in out.items()}


def _max_rel_change(a: dict, b: dict, atol: float = CONVERGENCE_ATOL) -> float:
    worst = 0.0
    for key in a.keys() & b.keys():
        x, y = a[key], b[key]
        scale = max(abs(x), abs(y))
        change = abs(x - y) / scale if abs(x - y) > atol and scale > 0 else 0.0
        worst = max(worst, change)
    return worst


def converge_truncation(params: SystemParams, start=(6, 12), *, phis=(0.0, np.pi / 2),
                        tolerance: float = 1e-3, displaced: bool = True, max_cavity: int = 48,
                        max_vib: int = 24) -> ConvergenceReport:
    """Smallest truncation on the ``(+4, +2)`` schedule that agrees with the next one.

    Each observable must change by less than ``tolerance`` relative (changes
    below an absolute floor of 1e-10 are ignored).
    """
    na, nb = start
    if na > max_cavity or nb > max_vib:
        raise ConvergenceError(f"start ({na}, {nb}) already exceeds the schedule limit")
    current = {"n_cavity": na, "n_vib": nb,
               "observables": scalar_observables(params, na, nb, phis, displaced)}
    history = [current]
    while True:
        na, nb = na + 4, nb + 2
        if na > max_cavity or nb > max_vib:
            raise ConvergenceError(
                f"truncation schedule exhausted at ({na}, {nb}) "
                f"(limits {max_cavity}, {max_vib}) without agreement to {tolerance:g}",
                history=history[-2:])
        nxt = {"n_cavity": na, "n_vib": nb,
               "observables": scalar_observables(params, na, nb, phis, displaced)}
        change = _max_rel_change(current["observables"], nxt["observables"])
        nxt["max_rel_change"] = change
        history.append(nxt)
        logger.info("truncation (%d, %d) -> (%d, %d): max relative change %.3e",
                    current["n_cavity"], current["n_vib"], na, nb, change)
        if change < tolerance:
            return ConvergenceReport(current["n_cavity"], current["n_vib"], displaced,
                                     tolerance, history)
        current = nxt


# ------------------------------------------------------------ per-point work


@dataclass
class PointResult:
    tables: dict
    summary: dict


def _propagation(config: ScenarioConfig) -> dict:
    s = config.solver
    return {"method": s.propagator, "rtol": s.rtol, "atol": s.atol}


def _core(config: ScenarioConfig, params: SystemParams, trunc):
    space = _space(params, trunc[0], trunc[1], config.truncation.displaced)
    L = build_liouvillian(params, space)
    return L, steady_state(L)


def _emission(config, params, trunc) -> PointResult:
    L, ss = _core(config, params, trunc)
    t_max = 20.0 / params.gamma_m if config.grids.tau_max is None else config.grids.tau_max
    tau = spectral_tau_grid(params.gamma_m, config.grids.spectral_dtau, t_max * params.gamma_m)
    corr = CHDCorrelator(L, ss, tau, **_propagation(config))
    spec = emission_from_correlation(tau, corr.emission_correlation(),
                                     config.grids.omega_grid(params.omega_m))
    rows = [(w, s) for w, s in zip(spec.omega_grid.tolist(), spec.values.tolist())]
    summary = {k: spec.metadata[k] for k in ("peaks", "stokes_omega", "anti_stokes_omega")
               if k in spec.metadata}
    return PointResult({"emission": (["omega_eV", "S_arb"], rows)}, summary)


def _chd_time(config, params, trunc) -> PointResult:
    L, ss = _core(config, params, trunc)
    tau = config.grids.tau_grid(params.gamma_m)
    corr = CHDCorrelator(L, ss, tau, **_propagation(config))
    rows, ineq, summary = [], [], {}
    nan = float("nan")
    for phi in config.phis:
        comp = corr.components(phi)
        pos, neg = corr.h_positive(phi), corr.h_negative(phi)
        for t, h, h2, h3 in zip(tau.tolist(), pos.values.tolist(), comp["h2"].values.tolist(),
                                comp["h3"].values.tolist()):
            rows.append((phi, "positive", t, h, h2, h3, nan))
        for t, h, hn in zip(tau.tolist(), neg.values.tolist(), comp["hn"].values.tolist()):
            rows.append((phi, "negative", -t, h, nan, nan, hn))
        for trace in (pos, neg):
            rep = inequality_check(trace)
            first = (rep.lower_violations or [(nan, nan)])[0]
            ineq.append((phi, trace.branch, int(rep.is_classical), len(rep.lower_violations),
                         len(rep.upper_violations), int(rep.tau_zero_bound_violated),
                         rep.max_excursion, first[0], first[1]))
        summary[phi_label(phi)] = {
            "h0": pos.at_zero, "asymmetry": float(np.max(np.abs(pos.values - neg.values))),
            "imag_residue": pos.imag_residue}
    return PointResult({
        "chd_time": (["phi_rad", "branch", "tau", "h", "h2", "h3", "hn"], rows),
        "inequalities": (["phi_rad", "branch", "classical", "n_lower", "n_upper",
                          "tau_zero_bound_violated", "max_excursion", "first_lower_start",
                          "first_lower_end"], ineq)}, summary)


def _chd_spectrum(config, params, trunc) -> PointResult:
    L, ss = _core(config, params, trunc)
    g = config.grids
    t_max = 20.0 / params.gamma_m if g.tau_max is None else g.tau_max
    tau = spectral_tau_grid(params.gamma_m, g.spectral_dtau, t_max * params.gamma_m)
    corr = CHDCorrelator(L, ss, tau, **_propagation(config))
    omega = g.omega_grid(params.omega_m)
    flux_inputs = {"kappa": params.kappa, "n_ss": corr.moments.n}
    rows, ident = [], []
    for phi in config.phis:
        comp = corr.components(phi)
        pos, neg = corr.h_positive(phi), corr.h_negative(phi)
        spectra = chd_spectra(pos, neg, comp["h2"], comp["h3"], flux_inputs, omega)
        vals = [s.values.tolist() for s in spectra]
        for i, w in enumerate(omega.tolist()):
            rows.append((phi, w) + tuple(v[i] for v in vals))
        flux = spectra[0].flux
        for kind, trace, offset in (("chd_pos", pos, 1.0), ("chd_neg", neg, 1.0),
                                    ("chd_2", comp["h2"], 0.0), ("chd_3", comp["h3"], 0.0)):
            expected = 4.0 * np.pi * flux * (trace.values[0] - offset)
            total = spectral_weight(trace, flux, offset=offset, band=g.identity_band * params.omega_m)
            rel = abs(total - expected) / abs(expected) if expected != 0 else abs(total)
            ident.append((phi, kind, total, float(expected), float(rel)))
    return PointResult({
        "chd_spectrum": (["phi_rad", "omega_eV", "S_pos", "S_neg", "S2", "S3"], rows),
        "spectral_identities": (["phi_rad", "kind", "integral", "expected", "rel_error"], ident)},
        {"flux": 2.0 * params.kappa * corr.moments.n})


def _noise(config, params, trunc) -> PointResult:
    _, ss = _core(config, params, trunc)
    summaries = [noise_summary(ss, phi) for phi in config.phis]
    labels = [phi_label(phi) for phi in config.phis]
    cols, row = ["n_ss"], [summaries[0].moments.n]
    for name in ("V", "H2", "H3", "Hn"):
        attr = "variance_phi" if name == "V" else name
        for lbl, s in zip(labels, summaries):
            cols.append(f"{name}_{lbl}")
            row.append(float(getattr(s, attr)))
    return PointResult({"noise_sweep": (cols, [tuple(row)])}, {})


def _filtered(config, params, trunc) -> PointResult:
    s = config.sensors
    gamma = params.gamma_m if s.gamma is None else s.gamma
    base = FilteredSetup.stokes_pair(params, s.epsilon, gamma, n_cavity=trunc[0],
                                     n_vib=trunc[1], margin=s.margin,
                                     displacement=mean_field_amplitude(params) if s.displaced else 0j)
    s1 = dataclasses.replace(base.sensor1, omega=base.sensor1.omega if s.omega1 is None else s.omega1)
    s2 = dataclasses.replace(base.sensor2, omega=base.sensor2.omega if s.omega2 is None else s.omega2)
    setup = dataclasses.replace(base, sensor1=s1, sensor2=s2)
    corr = FilteredCorrelator(params, setup)
    cols, row = [], []
    multi = len(config.phis) > 1
    for phi in config.phis:
        z = corr.zero_delay(phi)
        suffix = f"_{phi_label(phi)}" if multi else ""
        cols += [f"h_SaS{suffix}", f"h_aSS{suffix}"]
        row += [z.h_SaS, z.h_aSS]
    cols += ["n_sensor1", "n_sensor2", "n_ss"]
    row += [corr.pops[0], corr.pops[1], z.cavity_population]
    return PointResult({"filtered_sweep": (cols, [tuple(row)])},
                       {"sensor_omegas": [s1.omega, s2.omega]})


def _convergence(config, params, trunc) -> PointResult:
    t = config.truncation
    report = converge_truncation(params, (t.n_cavity, t.n_vib), phis=config.phis,
                                 tolerance=t.tolerance, displaced=t.displaced,
                                 max_cavity=t.max_cavity, max_vib=t.max_vib)
    keys = list(report.history[0]["observables"])
    rows = []
    for entry in report.history:
        accepted = int(entry["n_cavity"] == report.n_cavity and entry["n_vib"] == report.n_vib)
        rows.append((entry["n_cavity"], entry["n_vib"])
                    + tuple(entry["observables"].get(k, float("nan")) for k in keys)
                    + (entry.get("max_rel_change", float("nan")), accepted))
    cols = ["n_cavity", "n_vib"] + keys + ["max_rel_change_vs_previous", "accepted"]
    return PointResult({"convergence": (cols, rows)}, {"accepted": [report.n_cavity, report.n_vib]})


EVALUATORS = {"emission-spectrum": _emission, "chd-time": _chd_time,
              "chd-spectrum": _chd_spectrum, "noise-sweep": _noise,
              "filtered-sweep": _filtered, "convergence-report": _convergence}


def _evaluate(task):
    config, params, trunc, axis = task
    try:
        return EVALUATORS[config.scenario](config, params, trunc)
    except RamanCHDError as exc:
        if axis is not None:
            name, value = axis[:2]
            exc.args = (f"[{name}={value!r}] {exc.args[0] if exc.args else ''}",) + exc.args[1:]
            exc.sweep_point = {name: value}
        raise


# ------------------------------------------------------------------ runs


def sweep_points(config: ScenarioConfig) -> list:
    """``(params, (name, value, value_in_sweep_units))`` per point, in axis order."""
    if config.sweep is None:
        return [(config.params, None)]
    sw = config.sweep
    raw = np.linspace(sw.start, sw.stop, sw.count).tolist()
    out = []
    for v, r in zip(sw.values(config.params.omega_m).tolist(), raw):
        out.append((config.params.replace(**{sw.parameter: v}), (sw.parameter, v, r)))
    return out


def _initial_truncation(config: ScenarioConfig):
    if config.scenario == "filtered-sweep":
        s = config.sensors
        return (s.n_cavity, s.n_vib), s.displaced
    t = config.truncation
    return (t.n_cavity, t.n_vib), t.displaced


def resolve_truncation(config: ScenarioConfig, points) -> tuple:
    """Truncation for the whole run plus convergence reports.

    For sweeps the schedule is run at the two end points and at the point
    with the largest mean-field photon number; the largest result is used.
    """
    start, displaced = _initial_truncation(config)
    t = config.truncation
    # for filtered sweeps the schedule runs on the sensor-free core model
    if not t.converge or config.scenario == "convergence-report":
        return start, []
    params = [p for p, _ in points]
    refs = {0, len(params) - 1,
            int(np.argmax([abs(mean_field_amplitude(p)) ** 2 for p in params]))}
    reports = []
    for i in sorted(refs):
        try:
            reports.append(converge_truncation(params[i], start, phis=config.phis,
                                               tolerance=t.tolerance, displaced=displaced,
                                               max_cavity=t.max_cavity, max_vib=t.max_vib))
        except ConvergenceError as exc:
            if points[i][1] is not None:
                name, value = points[i][1][:2]
                exc.args = (f"[{name}={value!r}] {exc.args[0]}",)
            raise
    na = max(r.n_cavity for r in reports)
    nb = max(r.n_vib for r in reports)
    return (na, nb), reports


def _header(config: ScenarioConfig, trunc, displaced) -> list:
    p = config.params
    params = ", ".join(f"{k}={v!r}" for k, v in p.as_dict().items())
    meta = [f"program: ramanchd {__version__}", f"scenario: {config.scenario}",
            f"params: {params}", f"n_th: {p.thermal_population!r}",
            f"truncation: n_cavity={trunc[0]}, n_vib={trunc[1]}, displaced={displaced}"]
    if config.sweep is not None:
        sw = config.sweep
        meta.append(f"sweep: {sw.parameter} from {sw.start!r} to {sw.stop!r} "
                    f"({sw.count} points, unit {sw.unit})")
    return meta + list(CONVENTIONS)


def run_scenario(config: ScenarioConfig, *, out_dir=None, threads: int = 1) -> dict:
    """Evaluate the scenario, write its tables and ``manifest.json``; return the manifest."""
    start_time = time.perf_counter()
    out_dir = Path(config.output_dir if out_dir is None else out_dir)
    points = sweep_points(config)
    trunc, reports = resolve_truncation(config, points)
    _, displaced = _initial_truncation(config)
    tasks = [(config, params, trunc, axis) for params, axis in points]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_evaluate, tasks))
    else:
        results = [_evaluate(task) for task in tasks]

    sw = config.sweep
    merged: dict = {}
    for (params, axis), result in sorted(zip(points, results), key=lambda pr: (
            pr[0][1][1] if pr[0][1] is not None else 0.0)):
        for name, (cols, rows) in result.tables.items():
            prefix_cols, prefix = [], ()
            if sw is not None and config.scenario != "convergence-report":
                prefix_cols = [f"{sw.parameter}_{'K' if sw.parameter == 'temperature' else 'eV'}"]
                prefix = (axis[1],)
                if sw.unit == "omega_m":
                    prefix_cols.append(f"{sw.parameter}_over_omega_m")
                    prefix += (axis[2],)
            elif config.scenario in ("noise-sweep", "filtered-sweep"):
                prefix_cols, prefix = ["delta_eV"], (params.delta,)
            table = merged.setdefault(name, Table(name, prefix_cols + list(cols),
                                                  meta=_header(config, trunc, displaced)))
            table.rows.extend(prefix + tuple(r) for r in rows)

    outputs = {}
    for name in sorted(merged):
        path = write_table(merged[name], out_dir, config.output_format)
        outputs[path.name] = sha256_file(path)
    manifest = {
        "program": "ramanchd",
        "version": __version__,
        "scenario": config.scenario,
        "config": config.as_dict(),
        "truncation": {"n_cavity": trunc[0], "n_vib": trunc[1], "displaced": displaced},
        "convergence": [r.as_dict() for r in reports],
        "results": [{"axis": None if axis is None else {axis[0]: axis[1]}, **res.summary}
                    for (_, axis), res in zip(points, results)],
        "outputs": outputs,
        "platform": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "machine": platform.machine()},
        "wall_time_s": time.perf_counter() - start_time,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, default=_jsonable) + "\n")
    return manifest


def _jsonable(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if hasattr(obj, "item"):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
