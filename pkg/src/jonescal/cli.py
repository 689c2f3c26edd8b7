"""Command-line interface.

Subcommands: simulate, calibrate, crb, experiment, report, serve. The first
three accept ``--server URL`` to run against a live service instead of
in-process. Exit status 2 flags configuration problems (with the offending
field or path named); 1 flags runtime failures.
"""

import argparse
import csv
import math
import os
import sys

from .errors import ConfigError, JonescalError
from .serialize import dump_json, load_json


def _threads_default() -> int:
    env = os.environ.get("JONESCAL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _load_scene_obj(path):
    if not path:
        raise ConfigError("scene", "a scene file is required (--scene)")
    if not os.path.exists(path):
        raise ConfigError("scene", f"missing scene file: {path}")
    return load_json(path)


def _post(server, endpoint, payload):
    import httpx

    resp = httpx.post(server.rstrip("/") + endpoint, json=payload, timeout=600.0)
    if resp.status_code == 422:
        raise ConfigError("server", resp.json().get("detail", resp.text))
    if resp.status_code != 200:
        raise JonescalError(f"server returned {resp.status_code}: {resp.text}")
    return resp.json()


def _noise_obj_from_args(args, config):
    noise = dict(config.get("noise", {}))
    if args.noise_law:
        noise["texture_law"] = args.noise_law
    if args.nu is not None:
        noise["nu"] = args.nu
    if args.omega:
        noise["omega"] = args.omega
    if args.sigma2 is not None:
        noise["sigma2"] = args.sigma2
    if getattr(args, "per_baseline", False):
        noise["per_baseline"] = True
    if "texture_law" not in noise:
        noise["texture_law"] = "constant"
    return noise


def cmd_simulate(args) -> int:
    config = load_json(args.config) if args.config else {}
    scene_obj = _load_scene_obj(args.scene or config.get("scene_path"))
    noise_obj = _noise_obj_from_args(args, config)
    outliers_obj = dict(config.get("outliers", {}))
    if args.outliers is not None:
        outliers_obj["d_prime"] = args.outliers
    if args.flux_scale is not None:
        outliers_obj["flux_scale"] = args.flux_scale
    snr_db = args.snr_db if args.snr_db is not None else config.get("snr_db_point")
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))

    payload = {
        "scene": scene_obj,
        "noise": noise_obj,
        "outliers": outliers_obj or None,
        "snr_db": snr_db,
        "seed": seed,
    }
    if args.server:
        result = _post(args.server, "/simulate", payload)
    else:
        from . import ops

        result = ops.simulate(scene_obj, noise_obj, outliers_obj or None, snr_db, seed)
    out = args.out or "visibilities.json"
    obj = dict(result["visibilities"])
    obj["sigma2"] = result["sigma2"]
    obj["seed"] = result["seed"]
    dump_json(obj, out)
    print(f"wrote {out}")
    return 0


def cmd_calibrate(args) -> int:
    config = load_json(args.config) if args.config else {}
    scene_obj = _load_scene_obj(args.scene or config.get("scene_path"))
    if not os.path.exists(args.vis):
        raise ConfigError("vis", f"missing visibility file: {args.vis}")
    vis_obj = load_json(args.vis)
    solver_obj = dict(config.get("solver", {}))
    for key in ("outer_iters", "em_iters", "bcd_sweeps", "tol"):
        value = getattr(args, key)
        if value is not None:
            solver_obj[key] = value
    if args.per_baseline_speckle:
        solver_obj["per_baseline_speckle"] = True
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))

    payload = {
        "scene": scene_obj,
        "visibilities": vis_obj,
        "method": args.method,
        "solver": solver_obj,
        "init": args.init,
        "init_perturbation": args.init_perturbation,
        "seed": seed,
        "student_t_nu": args.student_t_nu,
        "student_t_estimate_nu": args.student_t_estimate_nu,
    }
    if args.server:
        state_obj = _post(args.server, "/calibrate", payload)
    else:
        from . import ops

        state_obj = ops.run_calibrate(
            scene_obj,
            vis_obj,
            method=args.method,
            solver_obj=solver_obj,
            init=args.init,
            init_perturbation=args.init_perturbation,
            seed=seed,
            student_t_nu=args.student_t_nu,
            student_t_estimate_nu=args.student_t_estimate_nu,
        )
    if args.structured:
        if args.server:
            state_obj["structured_params"] = _post(
                args.server,
                "/calibrate/structured",
                {"scene": scene_obj, "jones": state_obj["jones"]},
            )
        else:
            from . import ops

            state_obj["structured_params"] = ops.run_calibrate_structured(
                scene_obj, state_obj["jones"]
            )
    out = args.out or "state.json"
    dump_json(state_obj, out)
    print(f"wrote {out}")
    return 0


def cmd_crb(args) -> int:
    scene_obj = _load_scene_obj(args.scene)
    payload = {
        "scene": scene_obj,
        "nu": args.nu,
        "snr_db": args.snr_db,
        "sigma2": args.sigma2,
        "omega": args.omega or "default",
    }
    if args.server:
        result = _post(args.server, "/crb", payload)
    else:
        from . import ops

        result = ops.run_crb(scene_obj, args.nu, args.snr_db, args.sigma2, args.omega or "default")
    out = args.out or "crb.csv"
    snr = args.snr_db if args.snr_db is not None else float("nan")
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "snr_db", "param_index", "mse", "crb", "runs", "seed"])
        for k, value in enumerate(result["crb"]):
            writer.writerow([
                "crb", "" if math.isnan(snr) else format(snr, ".17g"), k, "",
                format(value, ".17g"), 0, args.seed if args.seed is not None else 0,
            ])
    print(f"wrote {out} (ambiguity dimension {result['ambiguity_dim']})")
    return 0


def cmd_experiment(args) -> int:
    from .cli_config import experiment_config_from_file
    from .harness import preset_config, run_experiment, write_result

    if args.preset:
        cfg = preset_config(args.preset, seed=args.seed or 0, runs=args.runs or 100)
    elif args.config:
        cfg = experiment_config_from_file(args.config)
    else:
        raise ConfigError("experiment", "need --config or --preset")
    if args.runs is not None:
        cfg.runs = args.runs
    if args.seed is not None:
        cfg.seed = args.seed
    threads = args.threads if args.threads is not None else _threads_default()
    cfg.threads = threads
    result = run_experiment(cfg)
    out_dir = args.out or "experiment_out"
    paths = write_result(result, out_dir)
    for label, path in paths.items():
        print(f"wrote {path}")
    if result.failures:
        print(f"{len(result.failures)} run(s) failed and were excluded", file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.results:
        if not os.path.exists(path):
            raise ConfigError("results", f"missing results file: {path}")
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                row["source_file"] = os.path.basename(path)
                rows.append(row)
    out = args.out or "report.csv"
    fields = ["method", "snr_db", "param_index", "mse", "crb", "mse_over_crb",
              "runs", "seed", "source_file"]
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            mse = row.get("mse", "")
            crb = row.get("crb", "")
            ratio = ""
            if mse not in ("", None) and crb not in ("", None):
                try:
                    ratio = format(float(mse) / float(crb), ".17g")
                except (ValueError, ZeroDivisionError):
                    ratio = ""
            writer.writerow([
                row.get("method", ""), row.get("snr_db", ""), row.get("param_index", ""),
                mse, crb, ratio, row.get("runs", ""), row.get("seed", ""),
                row["source_file"],
            ])
    print(f"wrote {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jonescal",
        description="Robust radio-interferometer calibration toolkit",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("--out", default=None, help="output path")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (env JONESCAL_THREADS)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common],
                       help="scene + noise model -> visibility file")
    p.add_argument("--scene", help="scene JSON file")
    p.add_argument("--snr-db", dest="snr_db", type=float, default=None)
    p.add_argument("--sigma2", type=float, default=None)
    p.add_argument("--noise-law", choices=["constant", "inverse_gamma", "table"], default=None)
    p.add_argument("--nu", type=float, default=None)
    p.add_argument("--omega", choices=["default", "white"], default=None)
    p.add_argument("--per-baseline", action="store_true")
    p.add_argument("--outliers", type=int, default=None, help="number of weak outlier sources")
    p.add_argument("--flux-scale", dest="flux_scale", type=float, default=None)
    p.add_argument("--server", default=None, help="run against a live service URL")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", parents=[common],
                       help="visibilities + method -> calibration state file")
    p.add_argument("--vis", required=True, help="visibility JSON file")
    p.add_argument("--scene", help="scene JSON file")
    p.add_argument("--method", choices=["robust", "gaussian_ls", "student_t"], default="robust")
    p.add_argument("--init", choices=["truth", "identity"], default="truth")
    p.add_argument("--init-perturbation", dest="init_perturbation", type=float, default=0.0)
    p.add_argument("--outer-iters", dest="outer_iters", type=int, default=None)
    p.add_argument("--em-iters", dest="em_iters", type=int, default=None)
    p.add_argument("--bcd-sweeps", dest="bcd_sweeps", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--per-baseline-speckle", action="store_true")
    p.add_argument("--student-t-nu", dest="student_t_nu", type=float, default=5.0)
    p.add_argument("--student-t-estimate-nu", dest="student_t_estimate_nu", action="store_true")
    p.add_argument("--structured", action="store_true",
                   help="also extract physical parameters from the Jones estimate")
    p.add_argument("--server", default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("crb", parents=[common], help="scene + noise level -> bound file")
    p.add_argument("--scene", help="scene JSON file")
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--snr-db", dest="snr_db", type=float, default=None)
    p.add_argument("--sigma2", type=float, default=None)
    p.add_argument("--omega", choices=["default", "white"], default=None)
    p.add_argument("--server", default=None)
    p.set_defaults(func=cmd_crb)

    p = sub.add_parser("experiment", parents=[common],
                       help="Monte-Carlo experiment config -> result CSVs")
    p.add_argument("--preset", choices=["fig2", "fig3", "fig4"], default=None)
    p.add_argument("--runs", type=int, default=None)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", parents=[common],
                       help="merge result CSVs into one plot-ready table")
    p.add_argument("--results", nargs="+", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: missing file: {exc.filename}", file=sys.stderr)
        return 2
    except JonescalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
