"""Build a network from a Scenario, run it, evaluate measurements, write outputs."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..baselines import CubicSender, RenoSender
from ..engine import NS_PER_S, RngStream, Simulator
from ..leotcp import LeoTcpSender
from ..metrics import (
    MetricsSeries, StepSchedule, first_deliveries, goodput_ratio, goodput_series, jain_index,
    write_series_csv,
)
from ..netmodel import MTU, Network, PathEvent
from ..transport import FlowLog, Receiver, Sender
from .scenario import EventSpec, MeasureSpec, Scenario, dump_resolved

OUT_ENV = "LEOSIM_OUT"
_SENDERS = {"leotcp": LeoTcpSender, "reno": RenoSender, "cubic": CubicSender}
SENDER_LOG_FIELDS = ("cwnd", "srtt", "u_ewma", "base_rtt_est", "path_id", "bytes_acked",
                     "retransmissions")


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


@dataclass
class FlowRun:
    id: str
    protocol: str
    path: str
    key: tuple
    mss: int
    start: int
    stop: int
    sender: Sender
    receiver: Receiver
    log: FlowLog
    base_times: list = field(default_factory=list)
    base_vals: list = field(default_factory=list)
    cap_times: list = field(default_factory=list)
    cap_vals: list = field(default_factory=list)
    _cum: tuple | None = None

    @property
    def efficiency(self) -> float:
        """Payload share of a full-size packet on the wire."""
        return self.mss / MTU

    def base_rtt(self) -> StepSchedule:
        return StepSchedule(self.base_times, self.base_vals)

    def capacity(self) -> StepSchedule:
        return StepSchedule(self.cap_times, self.cap_vals)

    def delivered_bytes(self, t: int) -> float:
        """Unique payload bytes first delivered strictly before ``t``."""
        if self._cum is None:
            ts, ln = first_deliveries(self.log.rx_time, self.log.rx_seq, self.log.rx_len)
            self._cum = (ts, np.concatenate(([0], np.cumsum(ln))))
        ts, cum = self._cum
        return float(cum[np.searchsorted(ts, t, side="left")])

    def goodput(self, t0: int, t1: int) -> float:
        if t1 <= t0:
            return 0.0
        return (self.delivered_bytes(t1) - self.delivered_bytes(t0)) * 8.0 * NS_PER_S / (t1 - t0)

    def rtt_samples(self, t0: int, t1: int) -> tuple[np.ndarray, np.ndarray]:
        t = np.frombuffer(self.log.rtt_time, dtype=np.int64) if len(self.log.rtt_time) else \
            np.zeros(0, dtype=np.int64)
        r = np.frombuffer(self.log.rtt_ns, dtype=np.int64) if len(self.log.rtt_ns) else \
            np.zeros(0, dtype=np.int64)
        lo, hi = np.searchsorted(t, [t0, t1], side="left")
        return t[lo:hi], r[lo:hi] / 1e9

    def optimum(self, t0: int, t1: int) -> float:
        """Time-averaged payload capacity (bits/s) of the flow's path over [t0, t1)."""
        times = list(self.cap_times) + [t1]
        acc = 0.0
        for i, c in enumerate(self.cap_vals):
            a, b = max(times[i], t0), min(times[i + 1], t1)
            if b > a:
                acc += c * (b - a)
        return acc / (t1 - t0) * self.efficiency


class RunResult:
    """Finished run: raw per-flow logs plus everything needed for measurements."""

    def __init__(self, scenario: Scenario, seed: int) -> None:
        self.scenario = scenario
        self.seed = seed
        self.sim = Simulator()
        self.net = Network(self.sim)
        self.flows: dict[str, FlowRun] = {}
        self.epochs: list[dict] = []
        self.qlen: dict[str, tuple[list, list]] = {}
        self.sender_rows: list[tuple] = []
        self.events_dispatched = 0
        self.in_flight = (0, 0)
        self._build()

    # -- construction ------------------------------------------------------

    def _build(self) -> None:
        sc, sim, net, seed = self.scenario, self.sim, self.net, self.seed
        for n in sc.nodes.values():
            net.add_node(n.id, n.kind, n.switch_id)
        for ln in sc.links.values():
            net.add_link(ln.id, ln.a, ln.b, ln.bw, ln.delay, ln.buffer, ln.loss, ln.reverse_loss, seed)
        for name, nodes in sc.paths.items():
            net.add_path(name, nodes)

        # path events first so that t=0 changes are in place before any flow starts
        for ev in self._epoch_events() + list(sc.events):
            pe = PathEvent(ev.at, ev.kind, ev.target, ev.value)
            sim.schedule(ev.at, self._apply, pe)

        for i, f in enumerate(sc.flows):
            src, dst = sc.paths[f.path][0], sc.paths[f.path][-1]
            key = (src, 10000 + i, dst, 80)
            mss = sc.mss_for(f)
            route = net.route_for(f.id, f.path)
            log = FlowLog()
            cls = _SENDERS[f.protocol]
            reorder = {**sc.protocol_params, **f.params}.get("reorder_fraction", 0.25)
            if f.protocol == "leotcp":
                snd = cls(sim, net, f.id, key, route, mss, log, params=sc.leotcp_params(f))
            else:
                snd = cls(sim, net, f.id, key, route, mss, log, reorder_fraction=reorder)
            rcv = Receiver(sim, net, key, mss, route, log)
            snd.receiver = rcv
            rcv.sender = snd
            start = f.start
            if f.start_jitter > 0:
                start += int(RngStream(seed, f"start:{f.id}").uniform(0, f.start_jitter))
            sim.schedule(start, snd.start)
            sim.schedule(f.stop, snd.stop)
            self.flows[f.id] = FlowRun(f.id, f.protocol, f.path, key, mss, start, f.stop, snd, rcv, log)
        self._record_truth()

        ports = []
        for nodes in sc.paths.values():
            for ch in net.channels_along(nodes):
                if ch.port is not None and ch.id not in self.qlen:
                    self.qlen[ch.id] = ([], [])
                    ports.append(ch)
        self._ports = ports
        sim.schedule(0, self._monitor)

    def _epoch_events(self) -> list[EventSpec]:
        e = self.scenario.epochs
        if e is None:
            return []
        sc = self.scenario
        rng = RngStream(self.seed, "epochs")
        others = sum(ln.delay for ln, _ in sc.path_links(e.path) if ln.id != e.link)
        out = []
        n = -(-sc.duration // e.period)
        for k in range(n):
            t = k * e.period
            draw = {"epoch": k, "time_s": t / NS_PER_S}
            if e.bw is not None:
                bw = rng.uniform(*e.bw)
                out.append(EventSpec(t, "bw_change", e.link, bw))
                draw["bw_bps"] = bw
            if e.rtt is not None:
                rtt = int(rng.uniform(*e.rtt))
                out.append(EventSpec(t, "delay_change", e.link, rtt // 2 - others))
                draw["rtt_s"] = rtt / NS_PER_S
            self.epochs.append(draw)
        return out

    def _apply(self, ev: PathEvent) -> None:
        self.net.apply_path_event(ev)
        if ev.kind != "disconnect":
            self._record_truth()

    def _record_truth(self) -> None:
        now = self.sim.now
        for fr in self.flows.values():
            route = fr.sender.route
            base = 0
            cap = math.inf
            for ch in route.forward:
                base += ch.delay
                if ch.port is not None:
                    base += MTU * 8 * NS_PER_S / ch.bw
                    cap = min(cap, ch.bw)
            for ch in route.reverse:
                base += ch.delay
            cap = 0.0 if cap == math.inf else cap
            for times, vals, v in ((fr.base_times, fr.base_vals, base / NS_PER_S),
                                   (fr.cap_times, fr.cap_vals, cap)):
                if times and times[-1] == now:
                    vals[-1] = v
                elif not vals or vals[-1] != v:
                    times.append(now)
                    vals.append(v)

    def _monitor(self, _payload) -> None:
        now = self.sim.now
        for ch in self._ports:
            ts, vs = self.qlen[ch.id]
            ts.append(now)
            vs.append(ch.port.qbytes)
        for fr in self.flows.values():
            snd = fr.sender
            if not snd.active:
                continue
            s = snd.snapshot()
            self.sender_rows.append((now, fr.id) + tuple(s.get(k, 0) for k in SENDER_LOG_FIELDS))
        nxt = now + self.scenario.sample_interval
        if nxt <= self.scenario.duration:
            self.sim.schedule(nxt, self._monitor)

    # -- execution ---------------------------------------------------------

    def run(self) -> "RunResult":
        summary = self.sim.run_until(self.scenario.duration)
        self.events_dispatched = summary.events_dispatched
        self.in_flight = self.net.in_flight()
        return self

    def conservation(self) -> dict:
        out = {}
        for label, c, inflight in (("data", self.net.data, self.in_flight[0]),
                                   ("ack", self.net.ack, self.in_flight[1])):
            out[label] = {"injected": c.injected, "delivered": c.delivered,
                          "dropped_overflow": c.dropped_overflow, "dropped_random": c.dropped_random,
                          "destroyed": c.destroyed, "in_flight": inflight,
                          "holds": c.injected == c.terminal() + inflight}
        return out

    # -- measurements ------------------------------------------------------

    def _windows(self, m: MeasureSpec, fid: str) -> list[tuple[int, int]]:
        fr = self.flows[fid]
        out = []
        for k in range(m.count):
            s = m.start + k * (m.every or 0)
            if m.end is not None:
                e = m.end + k * (m.every or 0)
            elif m.length is not None:
                e = s + m.length
            else:
                e = s + int(m.length_rtts * fr.base_rtt()(s) * NS_PER_S)
            out.append((s, min(e, self.scenario.duration)))
        return out

    def measure(self, m: MeasureSpec) -> dict:
        sc = self.scenario
        fids = sc.match_flows(m.flows)
        vs = sc.match_flows(m.versus)
        if m.metric == "event_recovery":
            return self._event_recovery(m, fids)
        if m.metric == "convergence_time":
            return self._convergence(m, fids)
        wins = {fid: self._windows(m, fid) for fid in fids + vs}
        values = []
        for k in range(m.count):
            def gp(fid):
                s, e = wins[fid][k]
                return self.flows[fid].goodput(s, e)
            if m.metric == "goodput":
                v = float(np.mean([gp(f) for f in fids]))
            elif m.metric == "goodput_ratio":
                v = goodput_ratio(gp(fids[0]), gp(fids[1]))
            elif m.metric == "relative_goodput":
                best = max(gp(f) for f in vs)
                v = min(gp(f) for f in fids) / best if best > 0 else None
            elif m.metric == "jain":
                g = [gp(f) for f in fids]
                v = jain_index(g) if any(g) else None
            elif m.metric in ("mean_rtt", "normalised_delay"):
                num, cnt = 0.0, 0
                for f in fids:
                    s, e = wins[f][k]
                    t, r = self.flows[f].rtt_samples(s, e)
                    if m.metric == "normalised_delay":
                        r = r / self.flows[f].base_rtt()(t)
                    num += float(r.sum())
                    cnt += r.size
                v = num / cnt if cnt else None
            elif m.metric == "goodput_vs_optimum":
                s, e = wins[fids[0]][k]
                opt = self.flows[fids[0]].optimum(s, e)
                v = sum(gp(f) for f in fids) / opt if opt > 0 else None
            else:
                raise ValueError(f"unknown metric {m.metric!r}")
            values.append(v)
        good = [v for v in values if v is not None]
        return {"metric": m.metric, "value": float(np.mean(good)) if good else None,
                "windows": values}

    def _event_recovery(self, m: MeasureSpec, fids: list[str]) -> dict:
        times = sorted({ev.at for ev in self.scenario.events if ev.kind == m.event_kind})
        ratios = []
        for fid in fids:
            fr = self.flows[fid]
            for t in times:
                span = int(m.length_rtts * fr.base_rtt()(max(t - 1, 0)) * NS_PER_S)
                if t - span < fr.start or t + span > min(fr.stop, self.scenario.duration):
                    continue
                before = fr.goodput(t - span, t)
                after = fr.goodput(t, t + span)
                ratios.append(after / before if before > 0 else None)
        good = [r for r in ratios if r is not None]
        return {"metric": m.metric, "value": float(np.mean(good)) if good else None,
                "min": min(good) if good else None, "windows": ratios}

    def _active(self, t: int) -> int:
        return sum(1 for fr in self.flows.values() if fr.start <= t < fr.stop)

    def _convergence(self, m: MeasureSpec, fids: list[str]) -> dict:
        step = self.scenario.sample_interval
        per_flow = {}
        for fid in fids:
            fr = self.flows[fid]
            rtt = fr.base_rtt()(fr.start)
            span = max(int(m.smoothing_rtts * rtt * NS_PER_S), step)
            # convergence is declared at the end of the first smoothing window
            # whose goodput reaches the requested share
            t = fr.start + span
            found = None
            end = min(fr.stop, self.scenario.duration)
            while t <= end:
                n = self._active(t - span)
                share = fr.optimum(t - span, t) / max(n, 1)
                if share > 0 and fr.goodput(t - span, t) >= m.fraction * share:
                    found = (t - fr.start) / NS_PER_S
                    break
                t += step
            per_flow[fid] = {"seconds": found, "rtts": None if found is None else found / rtt}
        rtts = [v["rtts"] for v in per_flow.values()]
        worst = None if any(r is None for r in rtts) or not rtts else max(rtts)
        return {"metric": m.metric, "value": worst, "flows": per_flow}

    def measurements(self) -> dict:
        return {m.name: self.measure(m) for m in self.scenario.measurements}

    # -- output ------------------------------------------------------------

    def series(self) -> dict[str, list[MetricsSeries]]:
        sc = self.scenario
        bin_ns = sc.sample_interval
        out: dict[str, list[MetricsSeries]] = {k: [] for k in ("goodput", "rtt", "qlen", "cwnd",
                                                                "utilisation")}
        for fid, fr in self.flows.items():
            log = fr.log
            out["goodput"].append(goodput_series(log.rx_time, log.rx_seq, log.rx_len,
                                                 sc.duration, bin_ns, fid))
            t, r = fr.rtt_samples(0, sc.duration + 1)
            if t.size:
                b = (t - 1) // bin_ns
                ends, idx = np.unique(b, return_index=True)
                sums = np.add.reduceat(r, idx)
                counts = np.diff(np.append(idx, r.size))
                out["rtt"].append(MetricsSeries("rtt", fid, (ends + 1) * bin_ns, sums / counts))
        for cid, (ts, vs) in self.qlen.items():
            out["qlen"].append(MetricsSeries("qlen", cid, ts, vs))
        rows: dict[str, tuple[list, list, list]] = {}
        for row in self.sender_rows:
            t, fid = row[0], row[1]
            ts, cw, ue = rows.setdefault(fid, ([], [], []))
            ts.append(t)
            cw.append(row[2])
            ue.append(row[4])
        for fid, (ts, cw, ue) in rows.items():
            out["cwnd"].append(MetricsSeries("cwnd", fid, ts, cw))
            if self.flows[fid].protocol == "leotcp":
                out["utilisation"].append(MetricsSeries("utilisation", fid, ts, ue))
        return out

    def summary(self) -> dict:
        flows = {}
        for fid, fr in self.flows.items():
            _, r = fr.rtt_samples(0, self.scenario.duration + 1)
            snd = fr.sender
            flows[fid] = {
                "protocol": fr.protocol, "path": fr.path, "mss": fr.mss,
                "start_s": fr.start / NS_PER_S, "stop_s": fr.stop / NS_PER_S,
                "unique_bytes": fr.receiver.unique_bytes, "duplicates": fr.receiver.duplicates,
                "goodput_bps": fr.goodput(fr.start, min(fr.stop, self.scenario.duration)),
                "mean_rtt_s": float(r.mean()) if r.size else None,
                "retransmissions": snd.retransmissions, "rto_count": snd.rto_count,
            }
        return {"scenario": self.scenario.name, "seed": self.seed,
                "duration_s": self.scenario.duration / NS_PER_S,
                "events_dispatched": self.events_dispatched,
                "conservation": self.conservation(), "flows": flows,
                "measurements": self.measurements(), "epochs": self.epochs}

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        resolved = dump_resolved(self.scenario)
        (out / "resolved.yaml").write_text(
            resolved + yaml.safe_dump({"seed": self.seed, "epoch_draws": self.epochs}, sort_keys=False))
        for kind, series in self.series().items():
            write_series_csv(out / f"{kind}.csv", series)
        with open(out / "senders.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("time_s", "flow") + SENDER_LOG_FIELDS)
            for row in self.sender_rows:
                w.writerow((f"{row[0] / NS_PER_S:.9f}", row[1]) + tuple(repr(x) for x in row[2:]))
        summ = self.summary()
        with open(out / "flows.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            cols = ("protocol", "path", "mss", "start_s", "stop_s", "unique_bytes", "goodput_bps",
                    "mean_rtt_s", "retransmissions", "rto_count")
            w.writerow(("flow",) + cols)
            for fid, d in summ["flows"].items():
                w.writerow((fid,) + tuple(d[c] for c in cols))
        (out / "summary.json").write_text(json.dumps(summ, indent=2, sort_keys=True) + "\n")
        return out


def run_scenario(scenario: Scenario, seed: int, out_dir: str | Path | None = None) -> RunResult:
    """Run one (scenario, seed); write the run directory when ``out_dir`` is given."""
    res = RunResult(scenario, seed).run()
    if out_dir is not None:
        res.write(out_dir)
    return res


def _run_one(args) -> tuple[int, str, dict]:
    scenario, seed, out = args
    res = run_scenario(scenario, seed, out)
    return seed, str(out), res.measurements()


def run_batch(scenario: Scenario, seeds=None, out_root: str | Path | None = None,
              jobs: int = 1) -> dict:
    """Run several seeds (optionally in parallel) and aggregate measurements.

    Each seed gets its own directory ``<out_root>/seed-<n>``; the aggregate
    (mean and sample standard deviation per measurement) goes to
    ``<out_root>/aggregate.json``.
    """
    seeds = list(seeds or scenario.seeds)
    root = Path(out_root) if out_root is not None else default_out_dir() / scenario.name
    tasks = [(scenario, s, root / f"seed-{s}") for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    agg = aggregate([r[2] for r in results])
    report = {"scenario": scenario.name, "seeds": seeds, "runs": [r[1] for r in results],
              "params": scenario.params, "measurements": agg}
    root.mkdir(parents=True, exist_ok=True)
    (root / "aggregate.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def aggregate(per_run: list[dict]) -> dict:
    names = []
    for d in per_run:
        names.extend(k for k in d if k not in names)
    out = {}
    for name in names:
        vals = [d[name]["value"] for d in per_run if name in d and d[name]["value"] is not None]
        out[name] = {
            "mean": float(np.mean(vals)) if vals else None,
            "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
            "n": len(vals), "values": vals,
        }
    return out
