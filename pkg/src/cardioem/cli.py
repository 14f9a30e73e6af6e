"""Command-line driver: mesh/fiber generation, single-cell runs, 0D runs,
coupled simulations and stability classification.

All physical config keys carry unit suffixes; configs are schema-validated
and unknown keys rejected. Exit codes: 0 success, 2 config error,
3 numerical failure.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_STIMULUS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["t_start_s", "center_m"],
    "properties": {
        "t_start_s": {"type": "number"},
        "center_m": {"type": "array", "items": {"type": "number"},
                     "minItems": 3, "maxItems": 3},
        "duration_s": {"type": "number"},
        "half_width_m": {"type": "number"},
        "amplitude_V_per_s": {"type": "number"},
    },
}

_ISCHEMIA_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "additionalProperties": False,
        "required": ["center_m", "radius_m", "label"],
        "properties": {
            "center_m": {"type": "array", "items": {"type": "number"},
                         "minItems": 3, "maxItems": 3},
            "radius_m": {"type": "number"},
            "label": {"enum": ["scar", "grey"]},
        },
    },
}

_GEOMETRY_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["slab", "ellipsoid_lv"]},
        "lx_m": {"type": "number"},
        "ly_m": {"type": "number"},
        "lz_m": {"type": "number"},
        "h_m": {"type": "number"},
        "r_endo_short_m": {"type": "number"},
        "r_endo_long_m": {"type": "number"},
        "wall_thickness_m": {"type": "number"},
        "base_cut_m": {"type": "number"},
        "h_target_m": {"type": "number"},
    },
}

_FIBERS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "alpha_endo_deg": {"type": "number"},
        "alpha_epi_deg": {"type": "number"},
        "beta_endo_deg": {"type": "number"},
        "beta_epi_deg": {"type": "number"},
        "lambda_endo": {"type": "number"},
        "lambda_epi": {"type": "number"},
    },
}

SCHEMAS = {
    "mesh": {
        "type": "object",
        "additionalProperties": False,
        "required": ["geometry"],
        "properties": {
            "geometry": _GEOMETRY_SCHEMA,
            "ischemia": _ISCHEMIA_SCHEMA,
            "out_name": {"type": "string"},
        },
    },
    "fibers": {
        "type": "object",
        "additionalProperties": False,
        "required": ["geometry"],
        "properties": {
            "geometry": _GEOMETRY_SCHEMA,
            "ischemia": _ISCHEMIA_SCHEMA,
            "fibers": _FIBERS_SCHEMA,
            "out_name": {"type": "string"},
        },
    },
    "cell": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "eta_list": {"type": "array", "items": {"type": "number"}},
            "bcl_s": {"type": "number", "exclusiveMinimum": 0},
            "n_beats": {"type": "integer", "minimum": 1},
            "dt_s": {"type": "number", "exclusiveMinimum": 0},
        },
    },
    "zerod": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "preset": {"enum": ["healthy", "pathological"]},
            "params": {"type": "object"},
            "n_beats": {"type": "integer", "minimum": 0},
            "dt_s": {"type": "number", "exclusiveMinimum": 0},
        },
    },
    "simulate": {
        "type": "object",
        "additionalProperties": False,
        "required": ["geometry", "duration_s"],
        "properties": {
            "mode": {"enum": ["sr", "vt"]},
            "geometry": _GEOMETRY_SCHEMA,
            "ischemia": _ISCHEMIA_SCHEMA,
            "fibers": _FIBERS_SCHEMA,
            "ep": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "sigma_l_m2_s": {"type": "number"},
                    "sigma_t_m2_s": {"type": "number"},
                    "sigma_n_m2_s": {"type": "number"},
                    "sigma_scale": {"type": "number"},
                },
            },
            "activation": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "mu_a_s_uM2": {"type": "number"},
                    "alpha_per_uM2": {"type": "number"},
                    "epsilon_m2": {"type": "number"},
                    "ca_threshold_uM": {"type": "number"},
                },
            },
            "coupling": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "dt_s": {"type": "number"},
                    "mech_stride": {"type": "integer", "minimum": 1},
                    "constraint_tol_mL": {"type": "number"},
                    "output_stride": {"type": "integer", "minimum": 1},
                },
            },
            "afterload": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "mode": {"enum": ["closed_loop", "windkessel"]},
                    "preset": {"enum": ["healthy", "pathological"]},
                    "prepace_beats": {"type": "integer", "minimum": 0},
                    "edv_target_mL": {"type": "number"},
                    "edp_mmHg": {"type": "number"},
                },
            },
            "protocol": {"type": "array", "items": _STIMULUS_SCHEMA},
            "duration_s": {"type": "number", "exclusiveMinimum": 0},
            "period_s": {"type": "number", "exclusiveMinimum": 0},
            "probe_node": {"type": "integer", "minimum": 0},
            "classify": {"type": "boolean"},
            "baseline_sv_mL": {"type": "number"},
            "vtk_snapshots": {"type": "integer", "minimum": 0},
        },
    },
    "classify": {
        "type": "object",
        "additionalProperties": False,
        "required": ["record_csv"],
        "properties": {
            "record_csv": {"type": "string"},
            "window_s": {"type": "number"},
            "baseline_sv_mL": {"type": "number"},
            "pressure_floor_mmHg": {"type": "number"},
        },
    },
}


class ConfigError(ValueError):
    pass


def load_config(path, command):
    import jsonschema

    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config invalid for '{command}': {exc.message}") from exc
    return cfg


def build_geometry(cfg):
    from . import geometry

    g = cfg["geometry"]
    if g["kind"] == "slab":
        mesh = geometry.build_slab(g["lx_m"], g["ly_m"], g["lz_m"], g["h_m"])
    else:
        mesh = geometry.build_ellipsoid_lv(
            g.get("r_endo_short_m", 0.02),
            g.get("r_endo_long_m", 0.06),
            g.get("wall_thickness_m", 0.008),
            g.get("base_cut_m", 0.0),
            g.get("h_target_m", 0.003),
        )
    regions = [
        (tuple(r["center_m"]), r["radius_m"], r["label"])
        for r in cfg.get("ischemia", [])
    ]
    imap = geometry.synthesize_ischemia(mesh, regions)
    return mesh, imap


def build_fibers(cfg, mesh):
    from . import fibers, geometry

    f = cfg.get("fibers", {})
    tc = geometry.compute_transmural_coordinate(
        mesh, f.get("lambda_endo", 0.0), f.get("lambda_epi", 1.0))
    micro = fibers.generate_fibers(
        mesh, tc,
        f.get("alpha_endo_deg", 60.0), f.get("alpha_epi_deg", -60.0),
        f.get("beta_endo_deg", -20.0), f.get("beta_epi_deg", 20.0))
    return tc, micro


def build_protocol(cfg):
    from . import ep

    return [
        ep.Stimulus(
            t_start=s["t_start_s"],
            center=tuple(s["center_m"]),
            duration=s.get("duration_s", 5e-3),
            half_width=s.get("half_width_m", 2.5e-3),
            amplitude=s.get("amplitude_V_per_s", 35.0),
        )
        for s in cfg.get("protocol", [])
    ]


def cmd_mesh(cfg, out, stride, seed):
    from . import vtkio

    mesh, imap = build_geometry(cfg)
    name = cfg.get("out_name", "mesh.vtk")
    vtkio.write_vtk(out / name, mesh, {"eta": imap.eta})
    summary = {
        "n_nodes": mesh.n_nodes,
        "n_elements": mesh.n_elems,
        "h_mean_m": mesh.h_mean,
        "n_scar_nodes": int(np.sum(imap.labels == 2)),
        "n_excluded_elements": int(imap.excluded_elements.sum()),
        "file": name,
    }
    (out / "mesh_summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return 0


def cmd_fibers(cfg, out, stride, seed):
    from . import vtkio

    mesh, imap = build_geometry(cfg)
    tc, micro = build_fibers(cfg, mesh)
    name = cfg.get("out_name", "fibers.vtk")
    vtkio.write_vtk(out / name, mesh, {
        "eta": imap.eta, "lambda": tc.lam,
        "f0": micro.f0, "s0": micro.s0, "n0": micro.n0,
    })
    print(json.dumps({"file": name, "fallback_nodes": micro.fallback_nodes}))
    return 0


def cmd_cell(cfg, out, stride, seed):
    from .ionic import cell

    etas = cfg.get("eta_list", [0.1, 0.25, 0.5, 0.75, 1.0])
    for eta in etas:
        if not 0.1 - 1e-12 <= eta <= 1.0 + 1e-12:
            raise ConfigError(
                f"eta={eta} is outside [0.1, 1]; eta=0 marks scar tissue, "
                "which is excluded from the ionic model")
    summary = []
    for eta in etas:
        tr = cell.run_single_cell(
            eta, cfg.get("bcl_s", 1.0), cfg.get("n_beats", 4),
            dt_s=cfg.get("dt_s", 5e-5), stride=max(1, stride))
        fname = f"cell_eta{eta:g}.csv"
        data = np.stack([tr.t_s, tr.v_mv, tr.ca_i_mM, tr.ca_i_mM * 1000.0], axis=1)
        np.savetxt(out / fname, data, delimiter=",",
                   header="t_s,V_mV,Ca_i_mM,Ca_i_uM", comments="")
        summary.append({
            "eta": eta, "file": fname, "apd90_ms": tr.apd90_ms,
            "peak_V_mV": tr.peak_v_mv, "rest_V_mV": tr.rest_v_mv,
            "peak_Ca_uM": tr.peak_ca_uM,
            "max_dVdt_mV_ms": tr.max_dvdt_mV_per_ms,
        })
    (out / "cell_summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return 0


def cmd_zerod(cfg, out, stride, seed):
    from . import circulation as circ

    if "params" in cfg:
        params = circ.CirculationParams.from_json(json.dumps(cfg["params"]))
    else:
        params = circ.load_preset(cfg.get("preset", "healthy"))
    n_beats = cfg.get("n_beats", 100)
    res = circ.run_standalone(params, n_beats, dt=cfg.get("dt_s", 5e-5),
                              stride=max(1, stride))
    header = ["t_s"] + [f"{n}_mL" if n.startswith("V") else
                        (f"{n}_mmHg" if n.startswith("p") else f"{n}_mL_s")
                        for n in circ.C1_NAMES + circ.C2_NAMES]
    if res.t.size:
        data = np.concatenate([res.t[:, None], res.c1, res.c2], axis=1)
    else:
        data = np.empty((0, 21))
    np.savetxt(out / "zerod_trace.csv", data, delimiter=",",
               header=",".join(header), comments="")
    report = {
        "n_beats": n_beats,
        "beat_convergence": res.beat_convergence.tolist(),
        "converged_below_0.1pct": bool(
            res.beat_convergence.size and res.beat_convergence[-1] < 1e-3),
        "params": json.loads(params.to_json()),
    }
    (out / "zerod_report.json").write_text(json.dumps(report, indent=2))
    print(json.dumps({k: report[k] for k in ("n_beats", "converged_below_0.1pct")}))
    return 0


def cmd_simulate(cfg, out, stride, seed):
    from . import activation, coupling, ep, mechanics, vtkio
    from . import circulation as circ

    mesh, imap = build_geometry(cfg)
    tc, micro = build_fibers(cfg, mesh)

    epc = cfg.get("ep", {})
    scale = epc.get("sigma_scale", 1.0)
    ep_params = ep.DiffusionTensorParams(
        epc.get("sigma_l_m2_s", 0.6714e-4) * scale,
        epc.get("sigma_t_m2_s", 0.0746e-4) * scale,
        epc.get("sigma_n_m2_s", 0.0746e-4) * scale,
    )
    ac = cfg.get("activation", {})
    act_params = activation.ActivationParams(
        mu_a=ac.get("mu_a_s_uM2", 1.5),
        alpha=ac.get("alpha_per_uM2", -10.0),
        epsilon=ac.get("epsilon_m2", 1e-8),
        ca_threshold_uM=ac.get("ca_threshold_uM", 0.2),
    )
    cc = cfg.get("coupling", {})
    config = coupling.CouplingConfig(
        dt=cc.get("dt_s", 5e-5),
        mech_stride=cc.get("mech_stride", 20),
        afterload_mode=cfg.get("afterload", {}).get("mode", "closed_loop"),
        constraint_tol_ml=cc.get("constraint_tol_mL", 0.01),
        output_stride=cc.get("output_stride", 20),
    )
    al = cfg.get("afterload", {})
    circ_params = circ.load_preset(al.get("preset", "healthy"))
    protocol = build_protocol(cfg)

    sim = coupling.CoupledSimulation(
        mesh, micro, imap, tc, config=config, ep_params=ep_params,
        act_params=act_params, circ_params=circ_params, protocol=protocol,
        prepace_beats=al.get("prepace_beats", 20))
    if config.afterload_mode == "windkessel":
        sim.init_windkessel(al.get("edv_target_mL", 120.0), al.get("edp_mmHg", 8.0))
    if cfg.get("mode") == "vt":
        probe = cfg.get("probe_node")
        if probe is None:
            probe = int(np.argmax(imap.eta > 0))
        sim.probe_nodes = [probe]

    rec = sim.run(cfg["duration_s"])
    period = cfg.get("period_s", circ_params.T)
    rec.metrics = coupling.derive_metrics(rec, period)
    rec.to_csv(out / "record.csv")
    (out / "metrics.json").write_text(json.dumps(rec.metrics, indent=2))

    events = [
        {"t_delivered_s": e.t_delivered, "overlapped": e.overlapped,
         "captured": e.captured}
        for e in rec.events
    ]
    (out / "events.json").write_text(json.dumps(events, indent=2))

    vtkio.write_vtk(out / "final_state.vtk", mesh, {
        "V_mV": sim.ep.v_full(),
        "gamma_f": sim.act.gamma,
        "displacement_m": sim.mech.state.d,
        "activation_time_s": np.nan_to_num(sim.ep._act_time, nan=-1.0),
        "eta": imap.eta,
    })
    conv = sim.mech.convergence_log
    np.savetxt(out / "mech_convergence.csv",
               np.array([[i, c.iterations, c.residual] for i, c in enumerate(conv)]),
               delimiter=",", header="solve,iterations,residual", comments="")

    result = {"mode": cfg.get("mode", "sr"),
              "constraint_worst_mL": sim.constraint_worst_ml}
    if cfg.get("mode") == "vt":
        bcl_res = ep.detect_bcl(np.asarray(sim.probe_t), np.asarray(sim.probe_v)[:, 0])
        result["bcl_s"] = bcl_res.bcl_s
        result["reentry_sustained"] = bcl_res.sustained
        np.savetxt(out / "probe_trace.csv",
                   np.stack([np.asarray(sim.probe_t),
                             np.asarray(sim.probe_v)[:, 0]], axis=1),
                   delimiter=",", header="t_s,V_mV", comments="")
        if cfg.get("classify", True):
            try:
                verdict = coupling.classify_stability(
                    rec, baseline_sv_ml=cfg.get("baseline_sv_mL"))
                result["stability"] = {
                    "label": verdict.label, "evidence": verdict.evidence}
            except coupling.IndeterminateRecord as exc:
                result["stability"] = {"label": "indeterminate", "reason": str(exc)}
    elif cfg.get("classify"):
        verdict = coupling.classify_stability(
            rec, baseline_sv_ml=cfg.get("baseline_sv_mL"))
        result["stability"] = {"label": verdict.label, "evidence": verdict.evidence}
    (out / "result.json").write_text(json.dumps(result, indent=2))
    print(json.dumps(result))
    return 0


def cmd_classify(cfg, out, stride, seed):
    from . import coupling

    rec = coupling.RunRecord.from_csv(cfg["record_csv"])
    th = coupling.StabilityThresholds()
    if "pressure_floor_mmHg" in cfg:
        th.pressure_floor_mmhg = cfg["pressure_floor_mmHg"]
    verdict = coupling.classify_stability(
        rec, window_s=cfg.get("window_s"),
        baseline_sv_ml=cfg.get("baseline_sv_mL"), thresholds=th)
    payload = {"label": verdict.label, "evidence": verdict.evidence}
    (out / "verdict.json").write_text(json.dumps(payload, indent=2))
    print(json.dumps(payload))
    return 0


COMMANDS = {
    "mesh": cmd_mesh,
    "fibers": cmd_fibers,
    "cell": cmd_cell,
    "zerod": cmd_zerod,
    "simulate": cmd_simulate,
    "classify": cmd_classify,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="cardioem",
        description="Desk-scale cardiac electromechanics simulator")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--stride", type=int, default=20,
                        help="output subsampling stride (steps)")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS/OpenMP thread count (set before numpy loads)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if args.threads is not None and os.environ.get("OMP_NUM_THREADS") != str(args.threads):
        env = dict(os.environ,
                   OMP_NUM_THREADS=str(args.threads),
                   OPENBLAS_NUM_THREADS=str(args.threads),
                   MKL_NUM_THREADS=str(args.threads))
        os.execvpe(sys.executable, [sys.executable, "-m", "cardioem.cli",
                                    *(argv or sys.argv[1:])], env)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.random.seed(args.seed)

    try:
        cfg = load_config(args.config, args.command)
        return COMMANDS[args.command](cfg, out, args.stride, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # numerical / solver failures
        from . import coupling, ep, mechanics
        from .ionic import ttp06

        numerical = (mechanics.MechanicsError, coupling.CouplingError,
                     ep.EpSolverError, ttp06.StepRejected,
                     FloatingPointError, np.linalg.LinAlgError)
        if isinstance(exc, numerical):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        raise


if __name__ == "__main__":
    sys.exit(main())
