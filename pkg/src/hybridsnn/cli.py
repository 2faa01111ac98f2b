"""Command-line entry point: ``hybridsnn [--config F] [--out D] [--seed N] <command> ...``.

Every knob lives in the JSON run config (see ``hybridsnn.config``); flags
only override it. Reports are CSV, written atomically. Exit codes: 0 ok,
2 configuration error, 3 data error, 4 contract violation.
"""

import argparse
import logging
import os
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import replace

import numpy as np

from . import energy, grad, toy
from .config import RunConfig
from .errors import ConfigError, DataError, HybridError
from .events import load_events, save_events
from .hybrid import HybridRunner, PredictionTrace, TraceEntry, curve_to_csv, error_over_time, read_trace_csv
from .metrics import CameraModel, mpjpe, read_pose_csv, triangulate_pose
from .netspec import NetSpec, random_weights
from .snn import SpikeActivityRecord
from .tensornet import WeightContainer

log = logging.getLogger("hybridsnn")


# -- output helpers ------------------------------------------------------------

@contextmanager
def atomic_path(path):
    """Yield a temp path next to ``path``; rename it into place on success."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_text(path, text):
    with atomic_path(path) as tmp:
        with open(tmp, "w") as f:
            f.write(text)
    log.info("wrote %s", path)


def _csv(header, rows):
    return "\n".join([header] + [",".join(_fmt(v) for v in r) for r in rows]) + "\n"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


# -- shared setup ----------------------------------------------------------------

def parse_span(text):
    try:
        a, b = text.split("..")
        return int(a), int(b)
    except ValueError:
        raise ConfigError(f"--span must look like T0..T1 (microseconds), got {text!r}") from None


def load_stream(cfg):
    p = cfg.paths
    if p.events is None:
        raise ConfigError("no event file given (paths.events or --events)")
    if not os.path.exists(p.events):
        raise DataError(f"event file {p.events} does not exist")
    return load_events(p.events, p.events_format, p.sensor_width, p.sensor_height)


def load_netspec(cfg, stream):
    if cfg.paths.netspec:
        try:
            with open(cfg.paths.netspec) as f:
                return NetSpec.from_json(f.read())
        except OSError as e:
            raise ConfigError(f"cannot read net spec: {e}") from None
    n = cfg.net
    try:
        return NetSpec.desk(stream.height, stream.width, n.desk_div, n.joints, 2 * cfg.hybrid.hist_bins,
                            n.head_variant, n.head_kernel)
    except (HybridError, ValueError) as e:
        raise ConfigError(f"cannot build a desk-scale net for {stream.width}x{stream.height}: {e}") from None


def load_weights(cfg, spec):
    if cfg.paths.weights:
        if not os.path.exists(cfg.paths.weights):
            raise ConfigError(f"weight file {cfg.paths.weights} does not exist")
        return WeightContainer.load(cfg.paths.weights)
    log.warning("no weight file given; using random weights from seed %d", cfg.seed)
    return random_weights(spec, cfg.seed, cfg.net.weight_scale)


def resolve_span(cfg, stream, span):
    t0, t1 = span if span else (cfg.span.t_start_us, cfg.span.t_end_us)
    if t1 is None:
        if len(stream) == 0:
            raise ConfigError("empty stream: give an explicit --span")
        t1 = int(stream.t[-1]) + 1
    if t1 <= t0:
        raise ConfigError(f"span end {t1} must exceed start {t0}")
    return t0, t1


def run_inference(cfg, span):
    """Hybrid run over the configured stream: ``(trace, spike record, net spec)``."""
    stream = load_stream(cfg)
    spec = load_netspec(cfg, stream)
    weights = load_weights(cfg, spec)
    t0, t1 = resolve_span(cfg, stream, span)
    record = SpikeActivityRecord.for_spec(spec.snn)
    trace = HybridRunner(spec, weights, cfg.hybrid_config()).run(stream, t0, t1, record)
    return trace, record, spec


# -- commands -----------------------------------------------------------------------

def cmd_ingest(cfg, args):
    stream = load_stream(cfg)
    n_on = int(stream.p.sum()) if len(stream) else 0
    rows = [(len(stream), stream.t[0] if len(stream) else None, stream.t[-1] if len(stream) else None,
             stream.width, stream.height, n_on, len(stream) - n_on, stream.resorted)]
    write_text(os.path.join(cfg.out_dir, "ingest_summary.csv"),
               _csv("events,t_first_us,t_last_us,width,height,on,off,resorted", rows))
    if args.convert:
        path = os.path.join(cfg.out_dir, "events." + ("bin" if args.convert == "binary" else "csv"))
        with atomic_path(path) as tmp:
            save_events(stream, tmp, args.convert)
    print(f"{len(stream)} events, {stream.width}x{stream.height}, {n_on} ON / {len(stream) - n_on} OFF")
    return 0


def cmd_infer(cfg, args):
    trace, record, _ = run_inference(cfg, args.span)
    write_text(os.path.join(cfg.out_dir, "trace.csv"), trace.to_csv())
    if not args.no_heatmaps:
        with atomic_path(os.path.join(cfg.out_dir, "heatmaps.wgt")) as tmp:
            trace.heatmap_container().save(tmp)
    if record.timesteps:
        with atomic_path(os.path.join(cfg.out_dir, "spikes.csv")) as tmp:
            record.write_dump(tmp)
    print(f"{len(trace)} trace entries ({sum(e.source == 'ann' for e in trace.entries)} dense ticks), "
          f"mode {cfg.hybrid.mode}")
    return 0


def cmd_energy(cfg, args):
    const = cfg.energy_constants()
    rows = []
    for gmac, gac, printed, tol in energy.PUBLISHED_POWER:
        w = energy.power(gmac * 1e9, gac * 1e9, const)
        rows.append((gmac, gac, w, printed, tol, abs(w - printed) <= tol + 1e-12))
    write_text(os.path.join(cfg.out_dir, "power_table.csv"),
               _csv("gmac_per_s,gac_per_s,power_w,printed_w,tolerance,within", rows))

    ann_rate = cfg.hybrid.ann_rate_hz
    if cfg.paths.events:
        _, record, spec = run_inference(cfg, args.span)
        if record.timesteps == 0:
            raise ConfigError("the span is too short for a single spiking step")
        snn_rate = 1000.0 / cfg.hybrid.snn_dt_ms
        report = energy.measure_and_report(record, spec, ann_rate, snn_rate, const)
        write_text(os.path.join(cfg.out_dir, "energy_report.csv"), report.to_csv())
        recount = energy.recount_acs_from_dump(record.totals(), record.timesteps, spec, snn_rate)
        m_snn, a_snn = (sum(x) for x in zip(report.part("snn."), report.part("out.")))
        if recount != a_snn:
            log.error("AC total %s disagrees with dump recount %s", float(a_snn), float(recount))
        ann_macs = (report.part("ann.")[0] + report.part("init.")[0]) / ann_rate
        snn_macs, snn_acs = m_snn / snn_rate, a_snn / snn_rate
        print(f"measured: {report.power_w:.6g} W total, spiking share {report.snn_power_w / report.power_w:.3%}")
    else:
        # full-size network counts for the dense side, the published spiking-net rates for the fast side
        spec = NetSpec()
        ann_macs = energy.count_network_macs(spec.ann)[1] + energy.count_network_macs(spec)[1]
        snn_macs, snn_acs = 0.5e9 / 100, 121e9 / 100
    curve = energy.hybrid_power_vs_rate(float(ann_macs), float(snn_macs), float(snn_acs), ann_rate,
                                        [float(r) for r in args.rates or cfg.energy.rates_hz], const)
    write_text(os.path.join(cfg.out_dir, "power_curve.csv"), energy.curve_to_csv(curve))
    bad = [r for r in rows if not r[-1]]
    for r in bad:
        print(f"{r[0]} GMAC/s + {r[1]} GAC/s -> {r[2]:.6g} W, printed {r[3]} W (outside +-{r[4]})")
    print(f"power table: {len(rows) - len(bad)}/{len(rows)} rows within print rounding")
    return 0


def cmd_gradcheck(cfg, args):
    rows = []
    for i in range(args.count):
        seed = cfg.seed + i
        case = grad.random_check_case(seed, args.size)
        dev = case.run(args.eps)
        rows.append((seed, args.size, case.n_params, case.inputs.shape[0], dev, dev <= args.tol))
    write_text(os.path.join(cfg.out_dir, "gradcheck.csv"), _csv("seed,size,params,steps,max_rel_dev,pass", rows))
    worst = max(r[4] for r in rows)
    ok = all(r[-1] for r in rows)
    print(f"{'PASS' if ok else 'FAIL'} {sum(r[-1] for r in rows)}/{len(rows)} max deviation {worst:.3e} "
          f"(tolerance {args.tol:g})")
    return 0 if ok else 4


def _nearest(labels, t, tol):
    best = min(labels, key=lambda s: abs(s - t))
    return labels[best] if abs(best - t) <= tol else None


def cmd_eval(cfg, args):
    gt_path = args.gt or cfg.paths.labels
    if gt_path is None:
        raise ConfigError("eval needs ground-truth labels (--gt or paths.labels)")
    for p in list(args.pred) + [gt_path]:
        if not os.path.exists(p):
            raise DataError(f"{p} does not exist")
    labels = read_pose_csv(gt_path)
    if not labels:
        raise DataError(f"{gt_path} holds no labels")
    tol = cfg.eval.label_tolerance_us
    if args.triangulate:
        cams = args.cams or list(cfg.paths.cameras)
        if len(args.pred) != 2 or len(cams) != 2:
            raise ConfigError("--triangulate needs two --pred traces and two --cams files")
        cam_a, cam_b = (CameraModel.load(c) for c in cams)
        ta, tb = (read_trace_csv(p) for p in args.pred)
        by_t = {e.t: e for e in tb.entries}
        trace = PredictionTrace()
        for e in ta.entries:
            if e.t in by_t:
                pose = triangulate_pose(e.pose, cam_a, by_t[e.t].pose, cam_b)
                trace.entries.append(TraceEntry(e.t, e.source, e.step, None, pose))
        kind = "mpjpe_3d_mm"
    else:
        if len(args.pred) != 1:
            raise ConfigError("give one --pred trace (two only with --triangulate)")
        trace = read_trace_csv(args.pred[0])
        kind = "mpjpe_2d_px"
    dim = trace.entries[0].pose.xy.shape[1] if trace.entries else 0
    if trace.entries and next(iter(labels.values())).xy.shape[1] != dim:
        raise DataError(f"label dimension does not match the {dim}D predictions")
    errs = []
    for e in trace.entries:
        gt = _nearest(labels, e.t, tol)
        m = mpjpe(e.pose, gt) if gt is not None else None
        if m is not None:
            errs.append(m)
    steps = cfg.hybrid_config().steps_per_period
    curve = error_over_time(trace, labels, steps, tol)
    mean = float(np.mean(errs)) if errs else None
    write_text(os.path.join(cfg.out_dir, "eval_summary.csv"), _csv("metric,value,entries", [(kind, mean, len(errs))]))
    write_text(os.path.join(cfg.out_dir, "error_over_time.csv"), curve_to_csv(curve))
    print(f"{kind}: {'n/a' if mean is None else f'{mean:.6g}'} over {len(errs)} entries")
    return 0


def cmd_traintoy(cfg, args):
    t = cfg.train
    task = toy.BlobTask()
    lif = cfg.lif_params()
    net = toy.build_toy_net(task, t.mode, seed=cfg.seed, tau=lif.tau, v_th=lif.v_th, v_rest=lif.v_rest,
                            decay=cfg.hybrid.decay)
    held_out = toy.fixed_samples(task, t.eval_samples, cfg.seed + 10_000)
    before = toy.mean_loss(net, held_out, t.mode)
    res = grad.train(net, toy.make_sampler(task), t.steps, lr=t.lr, batch_size=t.batch_size, seed=cfg.seed + 1,
                     mode=t.mode)
    after = toy.mean_loss(res.net, held_out, t.mode)
    reduction = 1.0 - after / before
    curve = grad.pose_error_curve(res.net, held_out, t.mode)
    write_text(os.path.join(cfg.out_dir, "loss_curve.csv"), _csv("step,loss", enumerate(res.losses)))
    write_text(os.path.join(cfg.out_dir, "error_curve.csv"), _csv("step,mpjpe_px", enumerate(curve)))
    write_text(os.path.join(cfg.out_dir, "toy_summary.csv"),
               _csv("mode,steps,lr,initial_loss,final_loss,reduction,diverged",
                    [(t.mode, len(res.losses), t.lr, before, after, reduction, res.diverged)]))
    print(f"held-out loss {before:.6g} -> {after:.6g} ({reduction:.1%} reduction) after {len(res.losses)} steps"
          + (" [diverged]" if res.diverged else ""))
    return 4 if res.diverged else 0


# -- argument parsing -----------------------------------------------------------

def build_parser():
    common = _global_flags(None)
    # the same flags are accepted after the subcommand without clobbering earlier values
    sub_common = _global_flags(argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="hybridsnn", parents=[common], description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, helptext):
        return sub.add_parser(name, parents=[sub_common], help=helptext, description=helptext)

    def add_events(p):
        p.add_argument("--events", help="event file (overrides paths.events)")
        p.add_argument("--format", choices=("csv", "binary"), help="event file format")
        p.add_argument("--width", type=int, help="sensor width for CSV events")
        p.add_argument("--height", type=int, help="sensor height for CSV events")

    p = add("ingest", "validate an event file, summarize it, optionally convert it")
    add_events(p)
    p.add_argument("--convert", choices=("csv", "binary"), help="also write the normalized stream in this format")

    p = add("infer", "run the hybrid predictor and write the trace, heatmaps and spike dump")
    add_events(p)
    p.add_argument("--mode", choices=("A", "B", "C", "D"), help="A pure spiking, B state init, C output init, D both")
    p.add_argument("--span", type=parse_span, help="time span T0..T1 in microseconds")
    p.add_argument("--weights", help="weight container file")
    p.add_argument("--no-heatmaps", action="store_true", help="skip the heatmap dump")

    p = add("energy", "power table, power-vs-rate curve and (with events) a measured per-layer report")
    add_events(p)
    p.add_argument("--rates", type=lambda s: [float(r) for r in s.split(",")],
                   help="comma-separated spiking-net rates in Hz")
    p.add_argument("--span", type=parse_span, help="time span T0..T1 for the measured run")
    p.add_argument("--mode", choices=("A", "B", "C", "D"), help="mode of the measured run")
    p.add_argument("--weights", help="weight container file")

    p = add("gradcheck", "compare reverse-mode gradients with central differences on seeded small nets")
    p.add_argument("--size", choices=("small", "linear"), default="small", help="case family")
    p.add_argument("--count", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--tol", type=float, default=1e-3, help="max relative deviation")
    p.add_argument("--eps", type=float, default=1e-4, help="finite-difference step")

    p = add("eval", "MPJPE of a trace against labels, plus the error-over-time curve")
    p.add_argument("--pred", nargs="+", required=True, help="trace CSV (two with --triangulate)")
    p.add_argument("--gt", help="label CSV t_us,joint_id,u,v[,x,y,z]")
    p.add_argument("--cams", nargs=2, help="two camera JSON files")
    p.add_argument("--triangulate", action="store_true", help="lift two 2D traces to 3D before scoring")

    p = add("traintoy", "train the spiking net on the synthetic blob task")
    p.add_argument("--steps", type=int, help="optimizer steps")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--mode", choices=("A", "B", "C", "D"), help="initialization mode")
    p.add_argument("--batch-size", type=int, help="periods per step")
    return parser


def _global_flags(default):
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=default, help="JSON run config")
    p.add_argument("--out", default=default, help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=int, default=default, help="random seed (overrides seed)")
    p.add_argument("-v", "--verbose", action="count", default=default, help="more logging")
    return p


COMMANDS = {"ingest": cmd_ingest, "infer": cmd_infer, "energy": cmd_energy, "gradcheck": cmd_gradcheck,
            "eval": cmd_eval, "traintoy": cmd_traintoy}


def apply_overrides(cfg, args):
    if args.get("out") is not None:
        cfg = replace(cfg, out_dir=args["out"])
    if args.get("seed") is not None:
        if args["seed"] < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = replace(cfg, seed=args["seed"])
    cfg = cfg.override("paths", events=args.get("events"), events_format=args.get("format"),
                       sensor_width=args.get("width"), sensor_height=args.get("height"), weights=args.get("weights"))
    if args["command"] == "traintoy":
        cfg = cfg.override("train", steps=args.get("steps"), lr=args.get("lr"), mode=args.get("mode"),
                           batch_size=args.get("batch_size"))
    else:
        cfg = cfg.override("hybrid", mode=args.get("mode"))
    return cfg


def main(argv=None):
    args = vars(build_parser().parse_args(argv))
    level = logging.WARNING - 10 * min(args.get("verbose") or 0, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = RunConfig.load(args["config"]) if args.get("config") else RunConfig()
        cfg = apply_overrides(cfg, args)
        return COMMANDS[args["command"]](cfg, argparse.Namespace(**args))
    except HybridError as e:
        print(f"hybridsnn {args['command']}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"hybridsnn {args['command']}: {e}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
