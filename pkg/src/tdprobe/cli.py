"""``tdprobe`` command line: generate traces, run server/shaper/probe, simulate, detect.

Exit codes: 0 success, 1 configuration or input error, 2 network error,
3 protocol error. Options may also come from a JSON config file (``--config``
or the ``TDPROBE_CONFIG`` environment variable), either flat or with one
section per subcommand; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import signal
import sys
import threading
from pathlib import Path

from .detector import DetectConfig, DetectionVerdict, detect, series_from_csv, write_series_csv
from .errors import ConfigError, InsufficientRuns, InvalidFlags, InvalidScenario, NetworkError, TDProbeError
from .middlebox import (
    Classification,
    LabelRate,
    ListenSpec,
    Method,
    RateProfile,
    ShaperProxy,
    ShapingPolicy,
    load_rules_policy,
    simulate_shared_link,
)
from .middlebox.classifier import HTTP_UNKNOWN, HTTPS_UNKNOWN, UNKNOWN
from .replay import ReplayRequest, ReplayServer, load_trace_dir, run_back_to_back
from .trace import DashParams, load_trace, save_trace, synth_dash_trace

log = logging.getLogger("tdprobe")

DEFAULT_SEED = 20201
CONFIG_ENV = "TDPROBE_CONFIG"


def _hostport(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}") from None


def _route(text: str) -> tuple[int, tuple[str, int]]:
    port, _, addr = text.partition("=")
    try:
        return int(port), _hostport(addr)
    except (ValueError, argparse.ArgumentTypeError):
        raise argparse.ArgumentTypeError(f"expected PORT=host:port, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidFlags(message)


def _emit(obj, as_json: bool, human: str):
    if as_json:
        print(json.dumps(obj))
    else:
        print(human)


# -- gen-trace -------------------------------------------------------------

def cmd_gen_trace(args) -> int:
    try:
        params = DashParams(
            chunk_bytes=args.chunk_bytes,
            chunk_interval_ms=args.chunk_interval_ms,
            n_chunks=args.n_chunks,
            request_bytes=args.request_bytes,
            seed=args.seed,
        )
        trace = synth_dash_trace(params, args.service, args.sni, args.port)
    except ValueError as exc:
        raise InvalidFlags(str(exc)) from None
    save_trace(trace, args.out)
    _emit(
        {"out": str(args.out), "offered_rate_bps": trace.offered_rate_bps, "entries": len(trace.entries)},
        args.json,
        f"wrote {args.out}: {len(trace.entries)} entries, offered rate {trace.offered_rate_bps:.0f} bit/s",
    )
    return 0


# -- serve / shape ---------------------------------------------------------

def _wait_for_interrupt(tick=None, interval=1.0):
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        while not stop.wait(interval):
            if tick:
                tick()
    except KeyboardInterrupt:
        pass


def cmd_serve(args) -> int:
    if not args.traces_dir:
        raise InvalidFlags("--traces-dir is required")
    store = load_trace_dir(args.traces_dir)
    try:
        server = ReplayServer(store, host=args.host, side_port=args.side_port, data_port=args.data_port,
                              ip_keyed=args.ip_keyed, idle_timeout=args.idle_timeout).start()
    except OSError as exc:
        raise NetworkError(f"cannot listen: {exc}") from exc
    ready = {"side_port": server.side_address[1],
             "data_port": server.data_address[1] if server.data_address else None,
             "services": sorted(store)}
    print(json.dumps(ready), flush=True)
    _wait_for_interrupt()
    server.stop()
    return 0


def cmd_shape(args) -> int:
    if not args.listen or not args.upstream or not args.rules:
        raise InvalidFlags("--listen, --upstream and --rules are required")
    rules, policy = load_rules_policy(args.rules)
    listen = [ListenSpec.parse(x) for x in args.listen]
    try:
        proxy = ShaperProxy(listen, args.upstream, rules, policy, status_path=args.status_out).start()
    except OSError as exc:
        raise NetworkError(f"cannot listen: {exc}") from exc
    print(json.dumps({"listening": [f"{h}:{p}" for h, p in proxy.addresses]}), flush=True)
    tick = (lambda: proxy.write_status()) if args.status_out else None
    _wait_for_interrupt(tick, args.status_interval)
    proxy.stop()
    return 0


# -- probe -----------------------------------------------------------------

def _write_run_series(out_dir: Path, pairs):
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, (orig, ctrl) in enumerate(pairs):
        write_series_csv(orig.throughput, out_dir / f"run{i:02d}_original.csv")
        write_series_csv(ctrl.throughput, out_dir / f"run{i:02d}_control.csv")


def _detect_config(args) -> DetectConfig:
    return DetectConfig(ks_threshold=args.ks_threshold, area_threshold=args.area_threshold, min_runs=args.min_runs)


def _verdict_or_insufficient(pairs, offered, cfg) -> tuple[DetectionVerdict, int]:
    try:
        return detect(pairs, offered, cfg), 0
    except InsufficientRuns as exc:
        log.error("%s", exc)
        return exc.verdict, exc.exit_code


def cmd_probe(args) -> int:
    if not args.trace:
        raise InvalidFlags("--trace is required")
    trace = load_trace(args.trace)
    service = args.service or trace.service_name
    use_sni = args.sni and not args.legacy_port80
    request = ReplayRequest(
        client_id=args.client_id or f"probe-{os.getpid()}",
        service_name=service,
        use_sni_prefix=use_sni,
        dst_port_override=80 if args.legacy_port80 else None,
    )
    routes = dict(args.route or [])
    pairs = run_back_to_back(
        (args.server, args.side_port), trace, request, args.runs,
        bin_width_ms=args.bin_ms, routes=routes, idle_timeout=args.idle_timeout, seed=args.seed,
    )
    notes = [r.error_note for pair in pairs for r in pair if not r.completed]
    for n in notes:
        log.warning("run failed: %s", n)
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        _write_run_series(out_dir, pairs)

    verdict, code = _verdict_or_insufficient(pairs, trace.offered_rate_bps, _detect_config(args))
    failed = [r for pair in pairs for r in pair if not r.completed]
    if code and len(failed) == 2 * len(pairs):
        # nothing got through: report why rather than the missing runs
        code = max(r.error_code or NetworkError.exit_code for r in failed)
    if out_dir:
        (out_dir / "verdict.json").write_text(verdict.to_json() + "\n", encoding="utf-8")
    human = "\n".join(
        [f"run {i}: original {o.mean_bps() / 1e6:.2f} Mbit/s, control {c.mean_bps() / 1e6:.2f} Mbit/s"
         for i, (o, c) in enumerate(pairs)]
        + [f"verdict: {verdict.reason.value} (differentiated={verdict.differentiated}, "
           f"direction={verdict.direction.value}, ks={verdict.ks_stat:.3f}, gap={verdict.area_gap:.3f})"]
    )
    _emit(verdict.to_dict(), args.json, human)
    return code


# -- simulate --------------------------------------------------------------

_RESERVED = {HTTPS_UNKNOWN, HTTP_UNKNOWN, UNKNOWN}


def _flow_source(spec: dict, base: Path, seed: int):
    if "rate_bps" in spec:
        return RateProfile(float(spec["rate_bps"]), float(spec.get("start_ms", 0.0)),
                           spec.get("stop_ms"), float(spec.get("jitter", 0.0)))
    if "trace" in spec:
        return load_trace(base / spec["trace"])
    if "dash" in spec:
        d = dict(spec["dash"])
        d.setdefault("seed", seed)
        return synth_dash_trace(DashParams(**d), spec.get("name", "flow"), "", 443)
    raise InvalidScenario(f"flow {spec.get('name')!r} needs rate_bps, trace or dash")


def _classification(label: str) -> Classification:
    return Classification(label, Method.PORT_DEFAULT if label in _RESERVED else Method.SNI)


def _offered_bps(src) -> float:
    return src.rate_bps if isinstance(src, RateProfile) else src.offered_rate_bps


def run_scenario(scenario: dict, seed: int, base: Path = Path(".")) -> dict:
    """Run every background count of a scenario. Returns {count: (names, result, verdict)}."""
    try:
        duration = int(scenario["duration_ms"])
        bin_ms = int(scenario.get("bin_ms", 100))
        policy = ShapingPolicy(
            per_label={k: LabelRate(float(v["rate_bps"]), float(v["burst_bytes"]))
                       for k, v in scenario.get("per_label", {}).items()},
            qos_weights={k: float(v) for k, v in scenario.get("qos_weights", {}).items()},
            link_capacity_bps=float(scenario["link_capacity_bps"]),
        )
        flows = [(f["name"], _flow_source(f, base, seed), _classification(f["label"]))
                 for f in scenario["flows"]]
        bg = scenario.get("background", {})
        counts = [int(c) for c in bg.get("counts", [bg.get("count", 0)])]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidScenario(f"invalid scenario: {exc!r}") from None
    names = [f[0] for f in flows]
    if len(set(names)) != len(names):
        raise InvalidScenario("flow names must be unique")

    out = {}
    for count in counts:
        all_flows = list(flows)
        for j in range(count):
            try:
                src = _flow_source({"name": f"background{j + 1}", **bg}, base, seed + j + 1)
                all_flows.append((f"background{j + 1}", src, _classification(bg["label"])))
            except KeyError as exc:
                raise InvalidScenario(f"background needs {exc}") from None
        result = simulate_shared_link([(s, c) for _, s, c in all_flows], policy, duration, seed=seed,
                                      bin_width_ms=bin_ms)
        flow_names = [n for n, _, _ in all_flows]
        verdict = None
        if "original" in flow_names and "control" in flow_names:
            io_, ic = flow_names.index("original"), flow_names.index("control")
            offered = _offered_bps(all_flows[io_][1])
            try:
                verdict = detect([(result.series[io_], result.series[ic])], offered, DetectConfig(min_runs=1))
            except TDProbeError as exc:
                log.warning("no verdict for %d background flow(s): %s", count, exc)
        out[count] = (flow_names, result, verdict)
    return out


def cmd_simulate(args) -> int:
    if not args.scenario:
        raise InvalidFlags("--scenario is required")
    path = Path(args.scenario)
    try:
        scenario = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidScenario(f"cannot read scenario {path}: {exc}") from None
    runs = run_scenario(scenario, args.seed, path.parent)
    summary = {}
    for count, (names, result, verdict) in runs.items():
        means = dict(zip(names, result.mean_bps()))
        summary[str(count)] = {"mean_bps": means, "verdict": verdict.to_dict() if verdict else None}
        if args.out_dir:
            d = Path(args.out_dir) / f"bg{count}"
            d.mkdir(parents=True, exist_ok=True)
            for name, series in zip(names, result.series):
                write_series_csv(series, d / f"{name}.csv")
            if verdict:
                (d / "verdict.json").write_text(verdict.to_json() + "\n", encoding="utf-8")
    human = "\n".join(
        f"{count} background: " + ", ".join(f"{n} {v / 1e6:.2f} Mbit/s" for n, v in s["mean_bps"].items())
        for count, s in summary.items()
    )
    _emit(summary, args.json, human)
    return 0


# -- detect ----------------------------------------------------------------

_KIND_RE = re.compile(r"^(?P<pre>.*?)(?P<kind>original|control)(?P<post>[^/]*)$")


def pair_series_paths(paths: list[str]) -> list[tuple[str, str]]:
    """Pair original/control CSVs by the rest of their file name, else take them alternately."""
    keyed: dict[str, dict[str, str]] = {}
    loose = []
    for p in paths:
        m = _KIND_RE.match(Path(p).name)
        if m:
            keyed.setdefault(str(Path(p).parent / (m["pre"] + "*" + m["post"])), {})[m["kind"]] = p
        else:
            loose.append(p)
    if keyed and loose:
        raise ConfigError("mix of kind-named and unnamed series files")
    if keyed:
        pairs = []
        for key in sorted(keyed):
            d = keyed[key]
            if set(d) != {"original", "control"}:
                raise ConfigError(f"unpaired series for {key}")
            pairs.append((d["original"], d["control"]))
        return pairs
    if len(loose) % 2:
        raise ConfigError("need an even number of series files (original, control, ...)")
    return list(zip(loose[0::2], loose[1::2]))


def cmd_detect(args) -> int:
    paths = args.series or []
    pairs = [(series_from_csv(o, args.bin_ms), series_from_csv(c, args.bin_ms))
             for o, c in pair_series_paths(paths)]
    verdict = detect(pairs, args.offered_bps, _detect_config(args))
    _emit(verdict.to_dict(), args.json,
          f"verdict: {verdict.reason.value} (differentiated={verdict.differentiated}, "
          f"direction={verdict.direction.value})")
    return 0


# -- parser ----------------------------------------------------------------

def _add_detect_flags(p):
    p.add_argument("--ks-threshold", type=float, default=0.5)
    p.add_argument("--area-threshold", type=float, default=0.2)
    p.add_argument("--min-runs", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tdprobe", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-trace", help="write a synthetic DASH-like trace")
    p.add_argument("--chunk-bytes", type=int, default=125_000)
    p.add_argument("--chunk-interval-ms", type=int, default=1000)
    p.add_argument("--n-chunks", type=int, default=10)
    p.add_argument("--request-bytes", type=int, default=400)
    p.add_argument("--sni", default="")
    p.add_argument("--service", default="youtube")
    p.add_argument("--port", type=int, default=443)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=False)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_gen_trace, required=("out",))

    p = sub.add_parser("serve", help="run a replay server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--side-port", type=int, default=55555)
    p.add_argument("--data-port", type=int, default=None,
                   help="fixed data port; omit for a private port per registration")
    p.add_argument("--traces-dir")
    p.add_argument("--ip-keyed", action="store_true", help="key registrations by source address only")
    p.add_argument("--idle-timeout", type=float, default=10.0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("shape", help="run the classifying, shaping proxy")
    p.add_argument("--listen", action="append", help="host:port[@logical_port], repeatable")
    p.add_argument("--upstream", type=_hostport)
    p.add_argument("--rules")
    p.add_argument("--status-out")
    p.add_argument("--status-interval", type=float, default=1.0)
    p.set_defaults(func=cmd_shape)

    p = sub.add_parser("probe", help="run back-to-back original/control replays and detect")
    p.add_argument("--server", default="127.0.0.1")
    p.add_argument("--side-port", type=int, default=55555)
    p.add_argument("--service")
    p.add_argument("--trace")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--sni", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--legacy-port80", action="store_true")
    p.add_argument("--bin-ms", type=int, default=100)
    p.add_argument("--out-dir")
    p.add_argument("--json", action="store_true")
    p.add_argument("--route", action="append", type=_route,
                   help="PORT=host:port: reach destination port PORT through this address")
    p.add_argument("--client-id")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--idle-timeout", type=float, default=10.0)
    _add_detect_flags(p)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("simulate", help="shared-link load simulation")
    p.add_argument("--scenario")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out-dir")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="verdict from saved series CSVs")
    p.add_argument("--series", nargs="*", default=[])
    p.add_argument("--offered-bps", type=float, default=None)
    p.add_argument("--bin-ms", type=float, default=None)
    p.add_argument("--json", action="store_true")
    _add_detect_flags(p)
    p.set_defaults(func=cmd_detect)
    return parser


def _load_config(argv) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    path = known.config or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _apply_config(parser: argparse.ArgumentParser, cfg: dict):
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    flat = {k.replace("-", "_"): v for k, v in cfg.items() if not isinstance(v, dict)}
    for name, p in sub.choices.items():
        known = {a.dest for a in p._actions}
        section = cfg.get(name, {}) if isinstance(cfg.get(name), dict) else {}
        values = {**{k: v for k, v in flat.items() if k in known},
                  **{k.replace("-", "_"): v for k, v in section.items()}}
        p.set_defaults(**{k: v for k, v in values.items() if k in known})


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser()
        _apply_config(parser, _load_config(argv))
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * args.verbose, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        for name in getattr(args, "required", ()):
            if getattr(args, name) is None:
                raise InvalidFlags(f"--{name.replace('_', '-')} is required")
        return args.func(args)
    except TDProbeError as exc:
        print(f"tdprobe: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"tdprobe: {exc}", file=sys.stderr)
        return NetworkError.exit_code


if __name__ == "__main__":
    sys.exit(main())
