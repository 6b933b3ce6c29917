"""Command line: ``leosim run|sweep|report|validate|list``."""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from pathlib import Path

import yaml

from ..metrics import cdf, jain_index
from .runner import default_out_dir, run_batch, run_scenario
from .scenario import ScenarioError, canned_experiments, dump_resolved, load_scenario, parse_override


def _overrides(items) -> dict:
    out = {}
    for item in items or ():
        k, v = parse_override(item)
        out[k] = v
    return out


def _seeds(text: str | None, default: list[int]) -> list[int]:
    if not text:
        return default
    seeds: list[int] = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario, _overrides(args.set))
    if args.dump:
        sys.stdout.write(dump_resolved(sc))
    else:
        print(f"{sc.name}: ok ({len(sc.nodes)} nodes, {len(sc.links)} links, {len(sc.flows)} flows, "
              f"{len(sc.events)} events, {len(sc.measurements)} measurements)")
    return 0


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario, _overrides(args.set))
    root = Path(args.out) if args.out else default_out_dir() / sc.name
    if args.seed is not None and not args.seeds:
        out = root / f"seed-{args.seed}"
        res = run_scenario(sc, args.seed, out)
        for name, m in res.measurements().items():
            print(f"{name}: {m['value']}")
        bad = [k for k, c in res.conservation().items() if not c["holds"]]
        print(f"wrote {out}")
        return 1 if bad else 0
    report = run_batch(sc, _seeds(args.seeds, sc.seeds), root, args.jobs)
    for name, m in report["measurements"].items():
        print(f"{name}: mean={m['mean']} std={m['std']} n={m['n']}")
    print(f"wrote {root}")
    return 0


def cmd_sweep(args) -> int:
    axes = []
    for item in args.param:
        key, _, vals = item.partition("=")
        if not vals:
            raise ValueError(f"--param needs key=v1,v2,..., got {item!r}")
        axes.append([(key.strip(), yaml.safe_load(v)) for v in vals.split(",")])
    base = _overrides(args.set)
    first = load_scenario(args.scenario, base)
    root = Path(args.out) if args.out else default_out_dir() / first.name
    rows = []
    for combo in itertools.product(*axes):
        ov = {**base, **dict(combo)}
        sc = load_scenario(args.scenario, ov)
        label = ",".join(f"{k}={v}" for k, v in combo)
        report = run_batch(sc, _seeds(args.seeds, sc.seeds), root / label, args.jobs)
        rows.append({"point": dict(combo), **{k: m["mean"] for k, m in report["measurements"].items()}})
        print(label, {k: m["mean"] for k, m in report["measurements"].items()})
    (root / "sweep.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    print(f"wrote {root}")
    return 0


def _summaries(paths) -> list[tuple[Path, dict]]:
    found = []
    for p in paths:
        p = Path(p)
        if (p / "summary.json").exists():
            found.append(p)
        else:
            found.extend(sorted(q.parent for q in p.rglob("summary.json")))
    if not found:
        raise FileNotFoundError("no run directories (summary.json) found")
    return [(d, json.loads((d / "summary.json").read_text())) for d in found]


def cmd_report(args) -> int:
    runs = _summaries(args.runs)
    by_proto: dict[str, list[float]] = {}
    measures: dict[str, list[float]] = {}
    print(f"{'run':<48} {'seed':>4} {'jain':>6}  flows (goodput Mbps / mean RTT ms)")
    for d, s in runs:
        gps = [f["goodput_bps"] for f in s["flows"].values()]
        jain = jain_index(gps) if any(gps) else float("nan")
        cells = []
        for fid, f in s["flows"].items():
            rtt = f["mean_rtt_s"]
            cells.append(f"{fid}={f['goodput_bps'] / 1e6:.1f}/{rtt * 1e3 if rtt else float('nan'):.1f}")
            by_proto.setdefault(f["protocol"], []).append(f["goodput_bps"])
        print(f"{str(d):<48} {s['seed']:>4} {jain:6.3f}  " + " ".join(cells))
        for name, m in s["measurements"].items():
            if m["value"] is not None:
                measures.setdefault(name, []).append(m["value"])
    print("\nmeasurements (mean over runs):")
    for name, vals in measures.items():
        print(f"  {name}: {sum(vals) / len(vals):.6g} (n={len(vals)})")
    if args.cdf:
        out = Path(args.cdf)
        with open(out, "w") as fh:
            fh.write("protocol,goodput_bps,fraction\n")
            for proto, vals in sorted(by_proto.items()):
                for v, frac in cdf(vals):
                    fh.write(f"{proto},{v!r},{frac!r}\n")
        print(f"wrote {out}")
    return 0


def cmd_list(_args) -> int:
    for name, path in canned_experiments().items():
        sc = load_scenario(path)
        print(f"{name:<18} {sc.description}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leosim", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario file or canned scenario name")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a scenario parameter (repeatable)")

    sp = sub.add_parser("run", help="run one scenario for one or more seeds")
    common(sp)
    sp.add_argument("--seed", type=int, help="single seed (default: the scenario's seed list)")
    sp.add_argument("--seeds", help="seed list such as 1-5 or 1,3,7")
    sp.add_argument("--out", help="output root (default: $LEOSIM_OUT/<name>)")
    sp.add_argument("--jobs", type=int, default=1, help="parallel runs")
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("sweep", help="run the Cartesian product of parameter values")
    common(sp)
    sp.add_argument("--param", action="append", required=True, metavar="KEY=V1,V2,...")
    sp.add_argument("--seeds", help="seed list such as 1-5")
    sp.add_argument("--out", help="output root")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("report", help="aggregate run directories")
    sp.add_argument("runs", nargs="+", help="run directories or roots containing them")
    sp.add_argument("--cdf", help="write a per-protocol goodput CDF to this CSV")
    sp.set_defaults(fn=cmd_report)

    sp = sub.add_parser("validate", help="check a scenario file")
    common(sp)
    sp.add_argument("--dump", action="store_true", help="print the resolved configuration")
    sp.set_defaults(fn=cmd_validate)

    sp = sub.add_parser("list", help="list canned scenarios")
    sp.set_defaults(fn=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # simulation failure
        print(f"simulation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
