"""Declarative scenario files (YAML, schema version 1).

A scenario is plain data: topology, flows, path events, random-epoch
generators, and named measurement windows. ``params`` entries can be
referenced anywhere as ``${name}`` and overridden from the command line,
which is how sweeps are produced. Quantities carry units ("100Mbps",
"20ms", "1.5MB") and may use + - * / arithmetic ("${rtt}/2 - 1ms").

All validation problems are collected and reported together, each with
the line of the offending entry.
"""

from __future__ import annotations

import copy
import fnmatch
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from ..leotcp import LeoTcpParams
from ..netmodel import MTU, TCPIP_HEADER_BYTES, INT_BASE_BYTES, INT_RECORD_BYTES
from .units import QuantityError, parse_quantity, parse_rate, parse_size, parse_time_ns

SCHEMA_VERSION = 1
PROTOCOLS = ("leotcp", "reno", "cubic")
EVENT_KINDS = ("reroute", "bw_change", "delay_change", "loss_change", "disconnect", "reconnect")
METRICS = ("goodput", "goodput_ratio", "relative_goodput", "jain", "mean_rtt",
           "normalised_delay", "goodput_vs_optimum", "event_recovery", "convergence_time")

_TOP_KEYS = {"schema_version", "name", "description", "params", "duration", "seeds",
             "sample_interval", "protocol_params", "nodes", "links", "paths", "flows",
             "events", "epochs", "measurements"}
_NODE_KEYS = {"id", "kind", "switch_id"}
_LINK_KEYS = {"id", "a", "b", "bw", "delay", "buffer", "loss", "reverse_loss"}
_FLOW_KEYS = {"id", "protocol", "path", "start", "stop", "count", "start_jitter", "params"}
_EVENT_KEYS = {"at", "kind", "target", "value", "duration", "every", "until"}
_EPOCH_KEYS = {"period", "link", "path", "bw", "rtt", "buffer_bdp"}
_MEASURE_KEYS = {"name", "metric", "flows", "versus", "start", "end", "length", "length_rtts",
                 "every", "count", "event_kind", "fraction", "smoothing_rtts", "tag"}
_PARAM_FIELDS = set(LeoTcpParams.__dataclass_fields__)

_BDP = re.compile(r"^\s*(?:([0-9.eE+-]+)\s*[xX*]\s*)?BDP\(\s*([\w.-]+)\s*\)\s*$")
_VAR = re.compile(r"\$\{([A-Za-z_][\w]*)\}")


class ScenarioError(ValueError):
    """Raised with every validation problem found in a scenario file."""

    def __init__(self, errors: list[str]) -> None:
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


# -- YAML with line numbers ---------------------------------------------------

class _LocDict(dict):
    line = 0
    key_lines: dict = {}

    def line_of(self, key) -> int:
        return self.key_lines.get(key, self.line)


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    loader.flatten_mapping(node)
    out = _LocDict()
    out.line = node.start_mark.line + 1
    out.key_lines = {}
    for knode, vnode in node.value:
        key = loader.construct_object(knode, deep=True)
        if key in out:
            loader.dup_keys.append((knode.start_mark.line + 1, key))
        out[key] = loader.construct_object(vnode, deep=True)
        out.key_lines[key] = knode.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


# -- resolved types -----------------------------------------------------------

@dataclass
class NodeSpec:
    id: str
    kind: str = "host"
    switch_id: int | None = None


@dataclass
class LinkSpec:
    id: str
    a: str
    b: str
    bw: float  # bits/s, 0 for a pure-delay link
    delay: int  # one-way, ns
    buffer: int  # bytes per direction
    loss: float = 0.0
    reverse_loss: float = 0.0


@dataclass
class FlowSpec:
    id: str
    protocol: str
    path: str
    start: int
    stop: int
    start_jitter: int = 0
    params: dict = field(default_factory=dict)


@dataclass
class EventSpec:
    at: int
    kind: str
    target: str
    value: object = None


@dataclass
class EpochSpec:
    period: int
    link: str
    path: str
    bw: tuple[float, float] | None = None
    rtt: tuple[int, int] | None = None
    buffer_bdp: float | None = None


@dataclass
class MeasureSpec:
    name: str
    metric: str
    flows: list[str]
    versus: list[str] = field(default_factory=list)
    start: int = 0
    end: int | None = None
    length: int | None = None
    length_rtts: float | None = None
    every: int | None = None
    count: int = 1
    event_kind: str = "disconnect"
    fraction: float = 0.8
    smoothing_rtts: float = 5.0
    tag: str = ""


@dataclass
class Scenario:
    name: str
    duration: int
    seeds: list[int]
    sample_interval: int
    nodes: dict[str, NodeSpec]
    links: dict[str, LinkSpec]
    paths: dict[str, list[str]]
    flows: list[FlowSpec]
    events: list[EventSpec]
    measurements: list[MeasureSpec]
    protocol_params: dict = field(default_factory=dict)
    epochs: EpochSpec | None = None
    params: dict = field(default_factory=dict)
    description: str = ""
    source: str = ""

    def flow(self, flow_id: str) -> FlowSpec:
        for f in self.flows:
            if f.id == flow_id:
                return f
        raise KeyError(flow_id)

    def match_flows(self, patterns) -> list[str]:
        out = []
        for pat in patterns:
            for f in self.flows:
                if fnmatch.fnmatchcase(f.id, pat) and f.id not in out:
                    out.append(f.id)
        return out

    def path_links(self, path: str) -> list[tuple[LinkSpec, bool]]:
        """Links along a path with a flag telling whether they are traversed a->b."""
        nodes = self.paths[path]
        out = []
        for u, v in zip(nodes, nodes[1:]):
            out.append(_find_link(self.links, u, v))
        return out

    def path_rtt_ns(self, path: str) -> int:
        return 2 * sum(ln.delay for ln, _ in self.path_links(path))

    def path_bottleneck(self, path: str) -> float:
        bws = [ln.bw for ln, _ in self.path_links(path) if ln.bw > 0]
        return min(bws) if bws else 0.0

    def int_hops(self, path: str) -> int:
        nodes = self.paths[path]
        hops = 0
        for (ln, _), u in zip(self.path_links(path), nodes):
            if ln.bw > 0 and self.nodes[u].kind == "switch":
                hops += 1
        return hops

    def mss_for(self, flow: FlowSpec) -> int:
        if flow.protocol == "leotcp":
            return MTU - TCPIP_HEADER_BYTES - INT_BASE_BYTES - INT_RECORD_BYTES * self.int_hops(flow.path)
        return MTU - TCPIP_HEADER_BYTES

    def leotcp_params(self, flow: FlowSpec) -> LeoTcpParams:
        merged = {**self.protocol_params, **flow.params}
        return LeoTcpParams(**{k: v for k, v in merged.items() if k in _PARAM_FIELDS})

    def to_dict(self) -> dict:
        """Resolved configuration in SI units, suitable for a YAML dump."""
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        d["nodes"] = list(d["nodes"].values())
        d["links"] = list(d["links"].values())
        return d


def _find_link(links: dict[str, LinkSpec], u: str, v: str) -> tuple[LinkSpec, bool] | None:
    for ln in links.values():
        if ln.a == u and ln.b == v:
            return ln, True
        if ln.a == v and ln.b == u:
            return ln, False
    return None


# -- loading ------------------------------------------------------------------

def canned_dir() -> Path:
    return Path(str(resources.files("leosim.harness") / "scenarios"))


def canned_experiments() -> dict[str, Path]:
    """Name -> file for every scenario shipped with the package."""
    return {p.stem: p for p in sorted(canned_dir().glob("*.yaml"))}


def canned_path(name_or_path: str | Path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    canned = canned_experiments()
    if str(name_or_path) in canned:
        return canned[str(name_or_path)]
    raise FileNotFoundError(f"no scenario file or canned scenario named {str(name_or_path)!r}")


def parse_override(text: str):
    """'key=value' -> (key, typed value); the value is read as a YAML scalar."""
    if "=" not in text:
        raise ValueError(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_scenario(path: str | Path, overrides: dict | None = None) -> Scenario:
    path = canned_path(path)
    text = Path(path).read_text()
    return loads_scenario(text, str(path), overrides)


def loads_scenario(text: str, source: str = "<string>", overrides: dict | None = None) -> Scenario:
    loader = _Loader(text)
    loader.dup_keys = []
    try:
        raw = loader.get_single_data()
    except yaml.YAMLError as exc:
        raise ScenarioError([f"{source}: invalid YAML: {exc}"]) from exc
    finally:
        loader.dispose()
    v = _Validator(source)
    for line, key in loader.dup_keys:
        v.err(line, f"duplicate key {key!r}")
    if not isinstance(raw, dict):
        raise ScenarioError([f"{source}: top level must be a mapping"])
    sc = v.build(raw, overrides or {})
    if v.errors:
        raise ScenarioError(v.errors)
    return sc


class _Validator:
    def __init__(self, source: str) -> None:
        self.source = source
        self.errors: list[str] = []

    def err(self, line: int, msg: str) -> None:
        self.errors.append(f"{self.source}:{line}: {msg}")

    def keys(self, d: dict, allowed: set, what: str) -> None:
        for k in d:
            if k not in allowed:
                line = d.line_of(k) if isinstance(d, _LocDict) else 0
                self.err(line, f"unknown key {k!r} in {what}")

    # typed field readers: report problems and return None on failure

    def _q(self, d, key, fn, what, default=None, required=False):
        line = getattr(d, "line", 0)
        if key not in d or d[key] is None:
            if required:
                self.err(line, f"{what} is missing {key!r}")
            return default
        try:
            return fn(d[key])
        except (QuantityError, TypeError, ValueError) as exc:
            self.err(line, f"{what}: {key}: {exc}")
            return default

    def time(self, d, key, what, default=None, required=False, allow_negative=False):
        t = self._q(d, key, parse_time_ns, what, default, required)
        if t is not None and t < 0 and not allow_negative:
            self.err(getattr(d, "line", 0), f"{what}: {key} must not be negative")
            return default
        return t

    def number(self, d, key, what, default=None, lo=None, hi=None):
        def fn(x):
            if isinstance(x, bool) or not isinstance(x, (int, float, str)):
                raise ValueError(f"expected a number, got {x!r}")
            return parse_quantity(x, "number") if isinstance(x, str) else float(x)
        val = self._q(d, key, fn, what, default)
        if val is not None and ((lo is not None and val < lo) or (hi is not None and val > hi)):
            self.err(getattr(d, "line", 0), f"{what}: {key}={val} outside [{lo}, {hi}]")
            return default
        return val

    # expansion of ${param}

    def substitute(self, obj, params: dict, line: int = 0):
        if isinstance(obj, dict):
            out = _LocDict()
            out.line = getattr(obj, "line", line)
            out.key_lines = getattr(obj, "key_lines", {})
            for k, val in obj.items():
                out[k] = self.substitute(val, params, out.line_of(k))
            return out
        if isinstance(obj, list):
            return [self.substitute(x, params, line) for x in obj]
        if isinstance(obj, str):
            whole = _VAR.fullmatch(obj.strip())
            if whole:
                name = whole.group(1)
                if name not in params:
                    self.err(line, f"undefined parameter ${{{name}}}")
                    return None
                return params[name]

            def repl(m):
                name = m.group(1)
                if name not in params:
                    self.err(line, f"undefined parameter ${{{name}}}")
                    return "0"
                return str(params[name])
            return _VAR.sub(repl, obj)
        return obj

    # the main pass

    def build(self, raw: dict, overrides: dict) -> Scenario | None:
        src = self.source
        if not isinstance(raw, _LocDict):
            raw = _LocDict(raw)
            raw.line = 1
        self.keys(raw, _TOP_KEYS, "scenario")
        version = raw.get("schema_version")
        if version != SCHEMA_VERSION:
            self.err(getattr(raw, "line", 1), f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
        params = dict(raw.get("params") or {})
        for k in overrides:
            if k not in params:
                self.err(0, f"override {k!r} is not a declared parameter")
        params.update(overrides)
        body = _LocDict({k: val for k, val in raw.items() if k != "params"})
        body.key_lines = getattr(raw, "key_lines", {})
        d = self.substitute(body, params, 1)
        d.line = 1

        name = str(d.get("name") or Path(src).stem)
        duration = self.time(d, "duration", "scenario", required=True) or 0
        if duration <= 0:
            self.err(1, "duration must be positive")
        seeds = _expand_seeds(d.get("seeds", [1]))
        if not (isinstance(seeds, list) and seeds and all(isinstance(s, int) and s >= 0 for s in seeds)):
            self.err(1, "seeds must be a non-empty list of non-negative integers")
            seeds = [1]
        sample = self.time(d, "sample_interval", "scenario", default=100_000_000)
        if sample is not None and sample <= 0:
            self.err(1, "sample_interval must be positive")
            sample = 100_000_000

        pp = d.get("protocol_params") or {}
        self.check_protocol_params(pp, "protocol_params")

        nodes = self.build_nodes(d.get("nodes") or [])
        links = self.build_links(d.get("links") or [], nodes)
        paths = self.build_paths(d.get("paths") or {}, nodes, links)
        epochs = self.build_epochs(d.get("epochs"), links, paths)
        self.resolve_bdp_buffers(d.get("links") or [], links, paths, epochs)
        flows = self.build_flows(d.get("flows") or [], paths, nodes, links, duration)
        events = self.build_events(d.get("events") or [], links, paths, flows, duration)
        sc = Scenario(name=name, duration=duration, seeds=list(seeds), sample_interval=sample,
                      nodes=nodes, links=links, paths=paths, flows=flows, events=events,
                      measurements=[], protocol_params=dict(pp), epochs=epochs,
                      params=params, description=str(d.get("description") or ""), source=src)
        sc.measurements = self.build_measurements(d.get("measurements") or [], sc)
        return sc

    def check_protocol_params(self, pp, what: str, line: int = 1) -> None:
        if not isinstance(pp, dict):
            self.err(line, f"{what} must be a mapping")
            return
        for k in pp:
            if k not in _PARAM_FIELDS:
                self.err(getattr(pp, "line", line), f"unknown key {k!r} in {what}")

    def build_nodes(self, items) -> dict[str, NodeSpec]:
        nodes: dict[str, NodeSpec] = {}
        seen_ids: dict[int, str] = {}
        for n in items:
            if not isinstance(n, dict):
                self.err(0, f"node entry must be a mapping, got {n!r}")
                continue
            self.keys(n, _NODE_KEYS, "node")
            nid = n.get("id")
            if not nid:
                self.err(n.line, "node is missing 'id'")
                continue
            nid = str(nid)
            if nid in nodes:
                self.err(n.line, f"duplicate node {nid!r}")
            kind = n.get("kind", "host")
            if kind not in ("host", "switch"):
                self.err(n.line, f"node {nid!r}: kind must be host or switch")
                kind = "host"
            sid = n.get("switch_id")
            if kind == "switch":
                if not isinstance(sid, int) or isinstance(sid, bool) or not 0 < sid < 2 ** 32:
                    self.err(n.line, f"switch {nid!r} needs a switch_id in 1..2^32-1")
                    sid = None
                elif sid in seen_ids:
                    self.err(n.line, f"switch {nid!r} reuses switch_id {sid} of {seen_ids[sid]!r}")
                else:
                    seen_ids[sid] = nid
            elif sid is not None:
                self.err(n.line, f"host {nid!r} cannot have a switch_id")
                sid = None
            nodes[nid] = NodeSpec(nid, kind, sid)
        return nodes

    def build_links(self, items, nodes) -> dict[str, LinkSpec]:
        links: dict[str, LinkSpec] = {}
        for ln in items:
            if not isinstance(ln, dict):
                self.err(0, f"link entry must be a mapping, got {ln!r}")
                continue
            self.keys(ln, _LINK_KEYS, "link")
            lid = str(ln.get("id") or f"{ln.get('a')}-{ln.get('b')}")
            what = f"link {lid!r}"
            if lid in links:
                self.err(ln.line, f"duplicate link {lid!r}")
            ends = []
            for end in ("a", "b"):
                nid = ln.get(end)
                if nid is None:
                    self.err(ln.line, f"{what} is missing {end!r}")
                elif str(nid) not in nodes:
                    self.err(ln.line, f"{what} references undefined node {nid!r}")
                ends.append(str(nid))
            bw = self._q(ln, "bw", parse_rate, what, default=0.0)
            if bw < 0:
                self.err(ln.line, f"{what}: bw must not be negative")
            delay = self.time(ln, "delay", what, default=0)
            buf = ln.get("buffer")
            buffer = 0
            if isinstance(buf, str) and _BDP.match(buf):
                buffer = 0  # resolved once paths are known
            elif buf is not None:
                buffer = self._q(ln, "buffer", parse_size, what, default=0)
                if buffer < 0:
                    self.err(ln.line, f"{what}: buffer must not be negative")
            elif bw > 0:
                self.err(ln.line, f"{what} has a bandwidth and needs a buffer")
            loss = self.number(ln, "loss", what, 0.0, 0.0, 1.0)
            rloss = self.number(ln, "reverse_loss", what, 0.0, 0.0, 1.0)
            links[lid] = LinkSpec(lid, ends[0], ends[1], float(bw), int(delay), int(buffer),
                                  float(loss), float(rloss))
        return links

    def build_paths(self, items, nodes, links) -> dict[str, list[str]]:
        paths: dict[str, list[str]] = {}
        line = getattr(items, "line", 0)
        if not isinstance(items, dict):
            self.err(line, "paths must be a mapping of name -> node list")
            return paths
        for name, seq in items.items():
            if not isinstance(seq, list) or len(seq) < 2:
                self.err(line, f"path {name!r} needs at least two nodes")
                continue
            seq = [str(x) for x in seq]
            ok = True
            for nid in seq:
                if nid not in nodes:
                    self.err(line, f"path {name!r} references undefined node {nid!r}")
                    ok = False
            if len(set(seq)) != len(seq):
                self.err(line, f"path {name!r} visits a node twice")
            if ok:
                for u, v in zip(seq, seq[1:]):
                    found = _find_link(links, u, v)
                    if found is None:
                        self.err(line, f"path {name!r}: no link between {u!r} and {v!r}")
                        ok = False
                    elif nodes[u].kind == "switch" and found[0].bw <= 0:
                        self.err(line, f"path {name!r}: link {found[0].id!r} leaves switch "
                                       f"{u!r} and needs a bandwidth")
            paths[str(name)] = seq
        return paths

    def build_epochs(self, e, links, paths) -> EpochSpec | None:
        if e is None:
            return None
        if not isinstance(e, dict):
            self.err(0, "epochs must be a mapping")
            return None
        self.keys(e, _EPOCH_KEYS, "epochs")
        period = self.time(e, "period", "epochs", required=True)
        if period is not None and period <= 0:
            self.err(e.line, "epochs: period must be positive")
            period = None
        link = str(e.get("link"))
        path = str(e.get("path"))
        if link not in links:
            self.err(e.line, f"epochs references undefined link {link!r}")
        if path not in paths:
            self.err(e.line, f"epochs references undefined path {path!r}")

        def rng(key, fn):
            r = e.get(key)
            if r is None:
                return None
            if not (isinstance(r, list) and len(r) == 2):
                self.err(e.line, f"epochs: {key} must be [lo, hi]")
                return None
            try:
                lo, hi = fn(r[0]), fn(r[1])
            except QuantityError as exc:
                self.err(e.line, f"epochs: {key}: {exc}")
                return None
            if not lo < hi:
                self.err(e.line, f"epochs: {key} needs lo < hi")
                return None
            return lo, hi

        bw = rng("bw", parse_rate)
        rtt = rng("rtt", parse_time_ns)
        spec = EpochSpec(period or 1, link, path, bw, rtt,
                         self.number(e, "buffer_bdp", "epochs", None, 0.0))
        if rtt is not None and link in links and path in paths:
            others = 0
            on_path = False
            seq = paths[path]
            for u, v in zip(seq, seq[1:]):
                found = _find_link(links, u, v)
                if found is None:
                    continue
                if found[0].id == link:
                    on_path = True
                else:
                    others += found[0].delay
            if not on_path:
                self.err(e.line, f"epochs: link {link!r} is not on path {path!r}")
            elif 2 * others >= rtt[0]:
                self.err(e.line, "epochs: the other links on the path already exceed the minimum RTT")
        if spec.buffer_bdp is not None and (bw is None or rtt is None):
            self.err(e.line, "epochs: buffer_bdp needs both bw and rtt ranges")
        return spec

    def resolve_bdp_buffers(self, items, links, paths, epochs) -> None:
        # two-step so that a BDP may refer to any path regardless of file order
        sc = Scenario("", 0, [1], 1, {}, links, paths, [], [], [])
        for ln in items:
            if not isinstance(ln, dict):
                continue
            buf = ln.get("buffer")
            if not isinstance(buf, str):
                continue
            m = _BDP.match(buf)
            if not m:
                continue
            lid = str(ln.get("id") or f"{ln.get('a')}-{ln.get('b')}")
            mult = float(m.group(1)) if m.group(1) else 1.0
            pname = m.group(2)
            if pname not in paths:
                self.err(ln.line, f"link {lid!r}: buffer references undefined path {pname!r}")
                continue
            try:
                bdp = sc.path_bottleneck(pname) / 8.0 * sc.path_rtt_ns(pname) / 1e9
            except TypeError:
                continue  # path already reported as broken
            if bdp <= 0:
                self.err(ln.line, f"link {lid!r}: path {pname!r} has no bandwidth-delay product")
            if lid in links:
                links[lid].buffer = int(round(mult * bdp))
        if epochs is not None and epochs.buffer_bdp is not None and epochs.bw and epochs.rtt \
                and epochs.link in links:
            mean_bw = sum(epochs.bw) / 2
            mean_rtt = sum(epochs.rtt) / 2 / 1e9
            links[epochs.link].buffer = int(round(epochs.buffer_bdp * mean_bw / 8.0 * mean_rtt))

    def build_flows(self, items, paths, nodes, links, duration) -> list[FlowSpec]:
        flows: list[FlowSpec] = []
        ids: set[str] = set()
        for f in items:
            if not isinstance(f, dict):
                self.err(0, f"flow entry must be a mapping, got {f!r}")
                continue
            self.keys(f, _FLOW_KEYS, "flow")
            fid = f.get("id")
            if not fid:
                self.err(f.line, "flow is missing 'id'")
                continue
            what = f"flow {fid!r}"
            proto = f.get("protocol", "leotcp")
            if proto not in PROTOCOLS:
                self.err(f.line, f"{what}: unknown protocol {proto!r} (expected one of {PROTOCOLS})")
            path = str(f.get("path"))
            if path not in paths:
                self.err(f.line, f"{what} references undefined path {path!r}")
            start = self.time(f, "start", what, default=0)
            stop = self.time(f, "stop", what, default=duration)
            jitter = self.time(f, "start_jitter", what, default=0)
            if start + jitter >= stop:
                self.err(f.line, f"{what}: start must come before stop")
            if stop > duration:
                self.err(f.line, f"{what}: stop is beyond the simulation horizon")
            fparams = f.get("params") or {}
            self.check_protocol_params(fparams, f"{what} params", f.line)
            count = f.get("count")
            if count is not None and (not isinstance(count, int) or count < 1):
                self.err(f.line, f"{what}: count must be a positive integer")
                count = 1
            names = [str(fid)] if count is None else [f"{fid}.{i}" for i in range(count)]
            for name in names:
                if name in ids:
                    self.err(f.line, f"duplicate flow id {name!r}")
                ids.add(name)
                flows.append(FlowSpec(name, proto, path, start, stop, jitter, dict(fparams)))
        return flows

    def build_events(self, items, links, paths, flows, duration) -> list[EventSpec]:
        out: list[EventSpec] = []
        flow_ids = [f.id for f in flows]
        flow_path = {f.id: f.path for f in flows}
        for e in items:
            if not isinstance(e, dict):
                self.err(0, f"event entry must be a mapping, got {e!r}")
                continue
            self.keys(e, _EVENT_KEYS, "event")
            kind = e.get("kind")
            what = f"event {kind!r}"
            if kind not in EVENT_KINDS:
                self.err(e.line, f"unknown event kind {kind!r} (expected one of {EVENT_KINDS})")
                continue
            at = self.time(e, "at", what, required=True)
            if at is None:
                continue
            if at > duration:
                self.err(e.line, f"{what}: at is beyond the simulation horizon")
            every = self.time(e, "every", what)
            until = self.time(e, "until", what, default=duration)
            if every is not None and every <= 0:
                self.err(e.line, f"{what}: every must be positive")
                every = None
            target = str(e.get("target"))
            value = None
            targets = [target]
            if kind == "reroute":
                targets = [fid for fid in flow_ids if fnmatch.fnmatchcase(fid, target)]
                if not targets:
                    self.err(e.line, f"{what} targets undefined flow {target!r}")
                value = str(e.get("value"))
                if value not in paths:
                    self.err(e.line, f"{what} references undefined path {value!r}")
                else:
                    for fid in targets:
                        old = paths.get(flow_path[fid])
                        new = paths[value]
                        if old and (old[0] != new[0] or old[-1] != new[-1]):
                            self.err(e.line, f"{what}: path {value!r} does not join the end "
                                             f"points of flow {fid!r}")
            else:
                if target not in links and "->" not in target:
                    self.err(e.line, f"{what} targets undefined link {target!r}")
                elif "->" in target:
                    u, _, v = target.partition("->")
                    if _find_link(links, u, v) is None:
                        self.err(e.line, f"{what} targets undefined channel {target!r}")
                if kind == "bw_change":
                    value = self._q(e, "value", parse_rate, what, required=True)
                elif kind == "delay_change":
                    value = self.time(e, "value", what, required=True)
                elif kind == "loss_change":
                    value = self.number(e, "value", what, 0.0, 0.0, 1.0)
                elif kind == "disconnect":
                    value = self.time(e, "duration", what, default=0)
            times = [at]
            if every is not None:
                t = at + every
                while t <= min(until, duration):
                    times.append(t)
                    t += every
            for t in times:
                for tg in targets:
                    out.append(EventSpec(t, kind, tg, value))
        out.sort(key=lambda ev: ev.at)
        return out

    def build_measurements(self, items, sc: Scenario) -> list[MeasureSpec]:
        out: list[MeasureSpec] = []
        names: set[str] = set()
        for m in items:
            if not isinstance(m, dict):
                self.err(0, f"measurement entry must be a mapping, got {m!r}")
                continue
            self.keys(m, _MEASURE_KEYS, "measurement")
            name = str(m.get("name") or "")
            what = f"measurement {name!r}"
            if not name:
                self.err(m.line, "measurement is missing 'name'")
            elif name in names:
                self.err(m.line, f"duplicate measurement {name!r}")
            names.add(name)
            metric = m.get("metric")
            if metric not in METRICS:
                self.err(m.line, f"{what}: unknown metric {metric!r} (expected one of {METRICS})")
            flows = m.get("flows") or ["*"]
            versus = m.get("versus") or []
            if isinstance(flows, str):
                flows = [flows]
            if isinstance(versus, str):
                versus = [versus]
            for pat in list(flows) + list(versus):
                if not sc.match_flows([str(pat)]):
                    self.err(m.line, f"{what}: no flow matches {pat!r}")
            spec = MeasureSpec(name, str(metric), [str(x) for x in flows], [str(x) for x in versus])
            spec.start = self.time(m, "start", what, default=0)
            spec.end = self.time(m, "end", what)
            spec.length = self.time(m, "length", what)
            spec.length_rtts = self.number(m, "length_rtts", what, None, 0.0)
            spec.every = self.time(m, "every", what)
            c = m.get("count", 1)
            spec.count = c if isinstance(c, int) and c >= 1 else 1
            spec.event_kind = str(m.get("event_kind", "disconnect"))
            spec.fraction = self.number(m, "fraction", what, 0.8, 0.0, 1.0)
            spec.smoothing_rtts = self.number(m, "smoothing_rtts", what, 5.0, 0.0)
            spec.tag = str(m.get("tag", ""))
            if metric not in ("event_recovery", "convergence_time"):
                horizons = [x for x in (spec.end, spec.length, spec.length_rtts) if x is not None]
                if len(horizons) != 1:
                    self.err(m.line, f"{what} needs exactly one of end, length, length_rtts")
                if spec.end is not None and spec.end <= spec.start:
                    self.err(m.line, f"{what}: end must come after start")
                last_start = spec.start + (spec.count - 1) * (spec.every or 0)
                if last_start >= sc.duration or (spec.end is not None and spec.end > sc.duration):
                    self.err(m.line, f"{what}: window lies beyond the simulation horizon")
            elif metric == "event_recovery" and spec.length_rtts is None:
                self.err(m.line, f"{what}: event_recovery needs length_rtts")
            if metric == "goodput_ratio" and len(sc.match_flows(spec.flows)) != 2:
                self.err(m.line, f"{what}: goodput_ratio needs exactly two flows")
            if metric == "relative_goodput" and not versus:
                self.err(m.line, f"{what}: relative_goodput needs a 'versus' flow set")
            out.append(spec)
        return out


def _expand_seeds(raw):
    """Accept an int, a list of ints, and "lo-hi" range strings inside the list."""
    if isinstance(raw, int) and not isinstance(raw, bool):
        return [raw]
    if not isinstance(raw, list):
        return None
    out = []
    for item in raw:
        if isinstance(item, str) and re.fullmatch(r"\s*\d+\s*-\s*\d+\s*", item):
            lo, hi = (int(x) for x in item.split("-"))
            out.extend(range(lo, hi + 1))
        else:
            out.append(item)
    return out


def dump_resolved(sc: Scenario) -> str:
    return yaml.safe_dump(copy.deepcopy(sc.to_dict()), sort_keys=False, default_flow_style=None)
