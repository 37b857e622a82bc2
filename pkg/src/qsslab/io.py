"""Case files, trajectory files and JSON reports.

Case files are JSON documents (see ``README.md`` for the schema).  Parsing
collects every violation before raising :class:`CaseError`.  Trajectories
are written as CSV (``time`` first, 17 significant digits, LF endings) with
a ``<name>.events.json`` sidecar holding partitions, units, events, the
termination record and the in-run residual norms.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from importlib import resources
from pathlib import Path

import numpy as np

from .devices.generator import AvrParams, GeneratorParams, OxlParams, SyncMachines
from .devices.governor import TurbineGovernorParams, TurbineGovernors
from .devices.loads import ExpRecoveryLoadParams, ExpRecoveryLoads
from .devices.ltc import LtcParams, TapChangers
from .errors import CaseError, QssLabError
from .model import TOY_FACTORIES, Scenario
from .network import Branch, Bus, ContingencyEvent, Network
from .simulators import IntegratorConfig, Termination, Trajectory
from .state import EventRecord

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEVICE_KINDS = ("generators", "governors", "exp_loads", "ltcs")
_BUS_FIELDS = {"id", "kind", "voltage", "angle", "shunt_g", "shunt_b", "load_p", "load_q", "gen_p", "gen_q"}
_BRANCH_FIELDS = {"id", "from", "to", "r", "x", "b", "tap", "in_service"}
_SCENARIO_FIELDS = {"events", "qss_start", "horizon", "long_term", "qss", "transient", "diagnostics"}
_DIAG_FIELDS = {"checkpoint_interval", "rollout_horizon", "rollout_step", "rollout_tolerance",
                "separation_tolerance", "match_tolerance", "membership_dwell", "perturbation"}


class _Collector:
    def __init__(self):
        self.violations = []

    def add(self, loc, msg):
        self.violations.append((loc, msg))

    def number(self, obj, key, loc, default=None, required=False):
        if key not in obj:
            if required:
                self.add(loc, f"missing required field {key!r}")
            return default
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.add(f"{loc}.{key}", f"expected a finite number, got {v!r}")
            return default
        return float(v)

    def unknown(self, obj, allowed, loc):
        for k in sorted(set(obj) - set(allowed)):
            self.add(f"{loc}.{k}", "unknown field")

    def build(self, loc, factory, **kw):
        try:
            return factory(**kw)
        except (ValueError, TypeError, QssLabError) as exc:
            self.add(loc, str(exc))
            return None


_PARAM_FIELDS = {
    "generator": ("H", "D", "xd", "xq", "xd1", "xq1", "Td01", "Tq01"),
    "avr": ("Ka", "Ta"),
    "oxl": ("T0", "if_lim"),
    "governor": (),
    "exp_load": (),
    "ltc": ("v0", "d", "r", "r_max", "r_min", "dT0", "dTk"),
}
_OPTIONAL = {
    "generator": {"ra": 0.0},
    "avr": {"vf_min": -5.0, "vf_max": 5.0, "v_ref": None},
    "oxl": {"v_max": 100.0, "activation": 1.0},
    "governor": {"omega_ref": 1.0, "R": 0.02, "p_max": 2.0, "p_min": 0.3, "Ts": 0.1, "Tc": 0.45,
                 "T3": 0.0, "T4": 12.0, "T5": 50.0},
    "exp_load": {"kp": 1.0, "kq": 1.0, "Tp": 1.0, "Tq": 1.0, "alpha_s": 1.0, "alpha_t": 2.0,
                 "beta_s": 1.0, "beta_t": 2.0},
    "ltc": {},
}


def _params(col, obj, kind, loc):
    out = {}
    for k in _PARAM_FIELDS[kind]:
        out[k] = col.number(obj, k, loc, required=True)
    for k, d in _OPTIONAL[kind].items():
        if k == "v_ref" and obj.get(k) is None:
            out[k] = None
            continue
        out[k] = col.number(obj, k, loc, default=d)
    return out


def _parse_network(col, doc):
    buses, branches = [], []
    for i, b in enumerate(doc.get("buses") or []):
        loc = f"buses[{i}]"
        if not isinstance(b, dict):
            col.add(loc, "expected an object")
            continue
        col.unknown(b, _BUS_FIELDS, loc)
        if "id" not in b:
            col.add(loc, "missing required field 'id'")
            continue
        kw = {k: col.number(b, k, loc, default=d) for k, d in
              (("voltage", 1.0), ("angle", 0.0), ("shunt_g", 0.0), ("shunt_b", 0.0), ("load_p", 0.0),
               ("load_q", 0.0), ("gen_p", 0.0), ("gen_q", 0.0))}
        bus = col.build(loc, Bus, id=b["id"], kind=b.get("kind", "PQ"), **kw)
        if bus is not None:
            buses.append(bus)
    if not buses:
        col.add("buses", "at least one bus is required")
    ids = [b.id for b in buses]
    for dup in sorted({str(x) for x in ids if ids.count(x) > 1}):
        col.add("buses", f"duplicate bus id {dup}")
    if buses and sum(b.kind == "slack" for b in buses) != 1:
        col.add("buses", f"exactly one slack bus required, found {sum(b.kind == 'slack' for b in buses)}")
    for i, br in enumerate(doc.get("branches") or []):
        loc = f"branches[{i}]"
        if not isinstance(br, dict):
            col.add(loc, "expected an object")
            continue
        col.unknown(br, _BRANCH_FIELDS, loc)
        missing = [k for k in ("from", "to") if k not in br]
        if missing:
            col.add(loc, f"missing required field(s) {missing}")
            continue
        for end in ("from", "to"):
            if br[end] not in ids:
                col.add(f"{loc}.{end}", f"unknown bus {br[end]!r}")
        kw = {k: col.number(br, k, loc, default=d) for k, d in (("r", 0.0), ("x", 0.1), ("b", 0.0), ("tap", 1.0))}
        bid = str(br.get("id", f"{br['from']}-{br['to']}"))
        branch = col.build(loc, Branch, id=bid, from_bus=br["from"], to_bus=br["to"],
                           in_service=bool(br.get("in_service", True)), **kw)
        if branch is not None:
            branches.append(branch)
    bids = [b.id for b in branches]
    for dup in sorted({x for x in bids if bids.count(x) > 1}):
        col.add("branches", f"duplicate branch id {dup}")
    if buses and not any(b.in_service for b in branches):
        col.add("branches", "at least one in-service branch is required")
    return buses, branches


def _parse_devices(col, devs, buses, branches):
    bus_ids = {b.id for b in buses}
    branch_ids = {b.id for b in branches}
    if not isinstance(devs, dict):
        col.add("devices", "expected an object")
        return {}
    for k in sorted(set(devs) - set(DEVICE_KINDS)):
        col.add(f"devices.{k}", f"unknown device kind {k!r}")
    out = {}
    gens = devs.get("generators") or []
    names, gbuses, gp, avrs, oxls = [], [], [], [], []
    for i, g in enumerate(gens):
        loc = f"devices.generators[{i}]"
        col.unknown(g, {"name", "bus", "avr", "oxl", "ra", *_PARAM_FIELDS["generator"]}, loc)
        if g.get("bus") not in bus_ids:
            col.add(f"{loc}.bus", f"unknown bus {g.get('bus')!r}")
        p = col.build(loc, GeneratorParams, **_params(col, g, "generator", loc))
        avr = oxl = None
        if g.get("avr") is not None:
            col.unknown(g["avr"], {"Ka", "Ta", "vf_min", "vf_max", "v_ref"}, f"{loc}.avr")
            avr = col.build(f"{loc}.avr", AvrParams, **_params(col, g["avr"], "avr", f"{loc}.avr"))
        if g.get("oxl") is not None:
            col.unknown(g["oxl"], {"T0", "if_lim", "v_max", "activation"}, f"{loc}.oxl")
            kw = _params(col, g["oxl"], "oxl", f"{loc}.oxl")
            # a zero field-current limit means the limiter is not fitted
            if kw.get("if_lim") not in (None, 0.0):
                oxl = col.build(f"{loc}.oxl", OxlParams, **kw)
        names.append(str(g.get("name", f"G{i + 1}")))
        gbuses.append(g.get("bus"))
        gp.append(p)
        avrs.append(avr)
        oxls.append(oxl)
    for b in sorted({str(b) for b in gbuses if gbuses.count(b) > 1}):
        col.add("devices.generators", f"more than one generator at bus {b}")
    if names and None not in gp:
        out["machines"] = SyncMachines(names, gbuses, gp, avrs, oxls)
    tgs = devs.get("governors") or []
    tn, tgen, tp = [], [], []
    for i, t in enumerate(tgs):
        loc = f"devices.governors[{i}]"
        col.unknown(t, {"name", "generator", *_OPTIONAL["governor"]}, loc)
        if t.get("generator") not in names:
            col.add(f"{loc}.generator", f"unknown generator {t.get('generator')!r}")
        tn.append(str(t.get("name", f"TG{i + 1}")))
        tgen.append(t.get("generator"))
        tp.append(col.build(loc, TurbineGovernorParams, **_params(col, t, "governor", loc)))
    if tn and None not in tp:
        out["governors"] = TurbineGovernors(tn, tgen, tp)
    lds = devs.get("exp_loads") or []
    ln, lb, lp = [], [], []
    for i, d in enumerate(lds):
        loc = f"devices.exp_loads[{i}]"
        col.unknown(d, {"name", "bus", "slow", *_OPTIONAL["exp_load"]}, loc)
        if d.get("bus") not in bus_ids:
            col.add(f"{loc}.bus", f"unknown bus {d.get('bus')!r}")
        ln.append(str(d.get("name", f"L{d.get('bus')}")))
        lb.append(d.get("bus"))
        kw = _params(col, d, "exp_load", loc)
        lp.append(col.build(loc, ExpRecoveryLoadParams, slow=bool(d.get("slow", True)), **kw))
    if ln and None not in lp:
        out["loads"] = ExpRecoveryLoads(ln, lb, lp)
    ltcs = devs.get("ltcs") or []
    cn, cbr, cbus, cp = [], [], [], []
    for i, c in enumerate(ltcs):
        loc = f"devices.ltcs[{i}]"
        col.unknown(c, {"name", "branch", "bus", *_PARAM_FIELDS["ltc"]}, loc)
        if str(c.get("branch")) not in branch_ids:
            col.add(f"{loc}.branch", f"unknown branch {c.get('branch')!r}")
        if c.get("bus") not in bus_ids:
            col.add(f"{loc}.bus", f"unknown bus {c.get('bus')!r}")
        cn.append(str(c.get("name", f"LTC{i + 1}")))
        cbr.append(str(c.get("branch")))
        cbus.append(c.get("bus"))
        cp.append(col.build(loc, LtcParams, **_params(col, c, "ltc", loc)))
    if cn and None not in cp:
        out["ltcs"] = TapChangers(cn, cbr, cbus, cp)
    return out


def _parse_scenario(col, sc, ids=None):
    if not isinstance(sc, dict):
        col.add("scenario", "expected an object")
        return Scenario()
    col.unknown(sc, _SCENARIO_FIELDS, "scenario")
    events = []
    for i, e in enumerate(sc.get("events") or []):
        loc = f"scenario.events[{i}]"
        col.unknown(e, {"kind", "target", "time", "impedance"}, loc)
        if "target" not in e:
            col.add(loc, "missing required field 'target'")
            continue
        kw = {"time": col.number(e, "time", loc, required=True) or 0.0}
        if "impedance" in e:
            imp = e["impedance"]
            try:
                kw["impedance"] = complex(*imp) if isinstance(imp, list) else complex(imp)
            except (TypeError, ValueError):
                col.add(f"{loc}.impedance", "expected [r, x] or a number")
        target = str(e["target"]) if e.get("kind") in ("branch-trip", "branch-close") else e["target"]
        ev = col.build(loc, ContingencyEvent, kind=e.get("kind"), target=target, **kw)
        if ev is not None:
            events.append(ev)
    configs = {}
    for key in ("long_term", "qss", "transient"):
        d = sc.get(key) or {}
        try:
            IntegratorConfig.from_dict(d)
            configs[key] = dict(d)
        except (ValueError, TypeError) as exc:
            col.add(f"scenario.{key}", str(exc))
            configs[key] = {}
    diag = sc.get("diagnostics") or {}
    col.unknown(diag, _DIAG_FIELDS, "scenario.diagnostics")
    horizon = col.number(sc, "horizon", "scenario", default=60.0)
    if horizon is not None and horizon < 0:
        col.add("scenario.horizon", "must be non-negative")
    return Scenario(events=events, qss_start=col.number(sc, "qss_start", "scenario", default=0.0),
                    horizon=horizon, diagnostics=dict(diag), **configs)


def parse_case_document(doc: dict, source: str = "<case>"):
    """Build the system described by an already-loaded case document."""
    from .power import PowerSystemModel

    col = _Collector()
    if not isinstance(doc, dict):
        raise CaseError([("", "case document must be a JSON object")])
    if doc.get("schema_version") != SCHEMA_VERSION:
        col.add("schema_version", f"expected {SCHEMA_VERSION}, got {doc.get('schema_version')!r}")
    col.unknown(doc, {"schema_version", "name", "description", "notes", "model", "base_mva", "frequency",
                      "buses", "branches", "devices", "scenario", "toy", "static_load"}, "")
    name = str(doc.get("name", Path(source).stem))
    scenario = _parse_scenario(col, doc.get("scenario") or {})
    model = doc.get("model", "power")
    if model == "toy":
        toy = doc.get("toy") or {}
        kind = toy.get("kind")
        if kind not in TOY_FACTORIES:
            col.add("toy.kind", f"unknown toy system {kind!r}")
            raise CaseError(col.violations)
        kw = {k: v for k, v in toy.items() if k != "kind"}
        if col.violations:
            raise CaseError(col.violations)
        try:
            system = TOY_FACTORIES[kind](scenario=scenario, **kw)
        except TypeError as exc:
            raise CaseError([("toy", str(exc))]) from None
        system.name = name
        return system
    if model != "power":
        col.add("model", f"unknown model {model!r}")
    buses, branches = _parse_network(col, doc)
    base = col.number(doc, "base_mva", "", default=100.0)
    freq = col.number(doc, "frequency", "", default=60.0)
    devs = doc.get("devices")
    if not devs or not any(devs.get(k) for k in DEVICE_KINDS if isinstance(devs, dict)):
        logger.warning("case %s has no dynamic devices; static network only", name)
        devs = devs or {}
    devices = _parse_devices(col, devs, buses, branches)
    if "machines" in devices:
        devices["machines"].omega_base = 2 * np.pi * (freq or 60.0)
    bus_ids = {b.id for b in buses}
    branch_ids = {b.id for b in branches}
    for i, ev in enumerate(scenario.events):
        pool = branch_ids if ev.kind in ("branch-trip", "branch-close") else bus_ids
        if ev.target not in pool:
            col.add(f"scenario.events[{i}].target", f"unknown target {ev.target!r}")
    if col.violations:
        raise CaseError(col.violations)
    network = Network(tuple(buses), tuple(branches), base_mva=base, frequency=freq)
    try:
        system = PowerSystemModel(network, scenario=scenario, name=name,
                                  static_load=doc.get("static_load", "impedance"), **devices)
    except ValueError as exc:
        raise CaseError([("static_load", str(exc))]) from None
    except QssLabError:
        raise
    system.case_document = doc
    return system


def bundled_case_path(name: str) -> Path:
    stem = Path(name).name
    if stem.endswith(".json"):
        stem = stem[:-5]
    return Path(str(resources.files("qsslab") / "cases" / f"{stem}.json"))


def resolve_case(path_or_name) -> Path:
    """A file path if it exists, else a bundled case (``cases/ieee9_stressed`` or ``ieee9_stressed``)."""
    p = Path(path_or_name)
    if p.is_file():
        return p
    if p.with_suffix(".json").is_file():
        return p.with_suffix(".json")
    b = bundled_case_path(str(path_or_name))
    if b.is_file():
        return b
    raise FileNotFoundError(f"case file not found: {path_or_name}")


def parse_case(path):
    """Parse and validate a case file (path or bundled case name); returns the system.

    The scenario is available as ``system.scenario``.
    """
    p = resolve_case(path)
    try:
        with open(p, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CaseError([(f"line {exc.lineno}", f"invalid JSON: {exc.msg}")]) from None
    return parse_case_document(doc, source=str(p))


def list_bundled_cases():
    root = resources.files("qsslab") / "cases"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".json"))


# ---------------------------------------------------------------------------
# trajectories


def _fmt(v: float) -> str:
    return "%.17g" % v


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".events.json")


def dump_json(obj, path) -> None:
    """Deterministic JSON (sorted keys, LF endings)."""
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=True)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")


def write_trajectory(trajectory: Trajectory, path) -> tuple:
    """Write ``path`` (CSV) and its events sidecar; returns both paths."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        w_names = trajectory.w_names
        zd_names = trajectory.zd_names
        with open(path, "w", encoding="utf-8", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["time", *w_names, *zd_names])
            for i, t in enumerate(trajectory.times):
                wr.writerow([_fmt(t), *map(_fmt, trajectory.W[i]), *map(_fmt, trajectory.ZD[i])])
        side = {
            "model": trajectory.model,
            "epsilon": trajectory.epsilon,
            "variables": [{"name": n, "partition": p, "unit": u}
                          for n, p, u in zip(trajectory.names, trajectory.partitions, trajectory.units)],
            "events": [e.to_dict() for e in trajectory.events],
            "termination": trajectory.termination.to_dict(),
            "norms": {"columns": ["h_c", "f", "g"], "values": trajectory.norms.tolist()},
            "phase": {"labels": ["long-term", "qss", "transient"], "values": trajectory.phase.tolist()},
            "metadata": trajectory.metadata,
        }
        dump_json(side, sidecar_path(path))
    except OSError as exc:
        raise OSError(f"cannot write trajectory to {path}: {exc}") from exc
    return path, sidecar_path(path)


def read_trajectory(path) -> Trajectory:
    path = Path(path)
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        with open(sidecar_path(path), encoding="utf-8") as fh:
            side = json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read trajectory {path}: {exc}") from exc
    header = rows[0]
    if header[0] != "time":
        raise ValueError(f"{path}: first column must be 'time'")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(len(rows) - 1, len(header))
    var = side["variables"]
    names = [v["name"] for v in var]
    parts = [v["partition"] for v in var]
    units = [v["unit"] for v in var]
    nw = sum(p != "zd" for p in parts)
    events = [EventRecord.from_dict(e) for e in side["events"]]
    return Trajectory(names, parts, units, data[:, 0], data[:, 1:1 + nw], data[:, 1 + nw:], events,
                      Termination.from_dict(side["termination"]), side["model"],
                      norms=np.array(side["norms"]["values"], dtype=float).reshape(-1, 3),
                      phase=side["phase"]["values"], epsilon=side["epsilon"], metadata=side.get("metadata"))


def output_dir(explicit=None) -> Path:
    return Path(explicit or os.environ.get("QSSLAB_OUTPUT_DIR") or "qsslab-output")
