"""Segregated electromechanics-circulation orchestration.

Per fine step: circulation, electrophysiology and activation advance at
dt; every mech_stride steps the mechanics is solved implicitly with the
cavity pressure adjusted (scalar secant) until the 3D cavity volume
matches the 0D LV volume; the diffusion pullback is refreshed with the
new deformation. Also: per-beat hemodynamic metrics and the VT
stability classifier.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from . import circulation as circ
from . import ep as ep_mod
from . import mechanics as mech_mod
from .units import M3_TO_ML, MMHG_TO_PA

log = logging.getLogger(__name__)


class CouplingError(RuntimeError):
    pass


class IndeterminateRecord(ValueError):
    pass


@dataclass
class CouplingConfig:
    dt: float = 5e-5
    mech_stride: int = 20
    afterload_mode: str = "closed_loop"  # or "windkessel"
    constraint_tol_ml: float = 0.01
    max_subiter: int = 20
    output_stride: int = 20

    def __post_init__(self):
        if self.dt <= 0 or self.mech_stride < 1:
            raise ValueError("dt must be positive and mech_stride >= 1")
        if self.afterload_mode not in ("closed_loop", "windkessel"):
            raise ValueError(f"unknown afterload mode {self.afterload_mode!r}")


@dataclass
class RunRecord:
    t: np.ndarray
    v_lv_ml: np.ndarray
    p_lv_mmhg: np.ndarray
    p_ar_sys_mmhg: np.ndarray
    p_la_mmhg: np.ndarray
    v_la_ml: np.ndarray
    q_mv_ml_s: np.ndarray
    q_av_ml_s: np.ndarray
    events: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    COLUMNS = ("t_s", "V_LV_mL", "p_LV_mmHg", "p_AR_SYS_mmHg", "p_LA_mmHg",
               "V_LA_mL", "Q_MV_mL_s", "Q_AV_mL_s")

    def arrays(self):
        return (self.t, self.v_lv_ml, self.p_lv_mmhg, self.p_ar_sys_mmhg,
                self.p_la_mmhg, self.v_la_ml, self.q_mv_ml_s, self.q_av_ml_s)

    def to_csv(self, path):
        data = np.stack(self.arrays(), axis=1)
        header = ",".join(self.COLUMNS)
        np.savetxt(path, data, delimiter=",", header=header, comments="")

    @classmethod
    def from_csv(cls, path):
        data = np.genfromtxt(path, delimiter=",", names=True)
        cols = [data[name.replace(".", "_")] for name in
                ("t_s", "V_LV_mL", "p_LV_mmHg", "p_AR_SYS_mmHg", "p_LA_mmHg",
                 "V_LA_mL", "Q_MV_mL_s", "Q_AV_mL_s")]
        cols = [np.atleast_1d(c) for c in cols]
        return cls(*cols)


def derive_metrics(record, period_s):
    """Per-beat EDV/ESV/SV/EF and arterial pressures; last beat summary.

    Returns a dict; partial = True when no complete beat is present.
    """
    t = record.t
    if t.size == 0:
        return {"partial": True, "beats": []}
    beats = []
    n_beats = int(np.floor((t[-1] - t[0]) / period_s + 1e-9))
    for k in range(n_beats):
        lo, hi = t[0] + k * period_s, t[0] + (k + 1) * period_s
        m = (t >= lo) & (t <= hi + 1e-12)
        if not np.any(m):
            continue
        v = record.v_lv_ml[m]
        pa = record.p_ar_sys_mmhg[m]
        edv, esv = float(v.max()), float(v.min())
        beats.append({
            "beat": k,
            "EDV_mL": edv,
            "ESV_mL": esv,
            "SV_mL": edv - esv,
            "EF": (edv - esv) / edv if edv > 0 else float("nan"),
            "MAP_mmHg": float(pa.mean()),
            "SBP_mmHg": float(pa.max()),
            "DBP_mmHg": float(pa.min()),
        })
    out = {"partial": len(beats) == 0, "beats": beats}
    if beats:
        out.update({k: v for k, v in beats[-1].items() if k != "beat"})
    return out


@dataclass
class StabilityVerdict:
    label: str                # "stable" | "unstable"
    evidence: dict            # per-criterion booleans

    @property
    def stable(self):
        return self.label == "stable"


@dataclass
class StabilityThresholds:
    """Operationalized cutoffs for the qualitative criteria (config, not
    literature values)."""

    pressure_decay_frac: float = 0.20
    pressure_floor_mmhg: float = 50.0
    stroke_frac_of_baseline: float = 0.15
    loop_area_rel_diff: float = 0.10
    flow_on_ml_s: float = 1.0


def _cycle_slices(t, v_lv):
    dt = float(np.median(np.diff(t)))
    dist = max(1, int(0.15 / dt))
    prom = max(0.5, 0.05 * (v_lv.max() - v_lv.min()))
    peaks, _ = find_peaks(v_lv, distance=dist, prominence=prom)
    if peaks.size < 2:
        raise IndeterminateRecord("fewer than 2 cycles detected in the record")
    return [slice(peaks[i], peaks[i + 1] + 1) for i in range(peaks.size - 1)]


def _loop_area(v, p):
    return 0.5 * abs(float(np.sum(v * np.roll(p, -1) - np.roll(v, -1) * p)))


def classify_stability(record, window_s=None, baseline_sv_ml=None,
                       thresholds=None):
    """Four-criterion hemodynamic stability verdict over the record tail.

    (a) sustainable arterial pressure, (b) preserved LV stroke amplitude,
    (c) disjoint mitral/aortic flow phases, (d) converged PV-loop limit
    cycle. Stable iff all four hold.
    """
    th = thresholds or StabilityThresholds()
    t = record.t
    if window_s is not None:
        keep = t >= t[-1] - window_s
    else:
        keep = np.ones_like(t, dtype=bool)
    t = t[keep]
    v_lv = record.v_lv_ml[keep]
    p_lv = record.p_lv_mmhg[keep]
    p_ar = record.p_ar_sys_mmhg[keep]
    q_mv = record.q_mv_ml_s[keep]
    q_av = record.q_av_ml_s[keep]

    cycles = _cycle_slices(t, v_lv)
    if len(cycles) < 2:
        raise IndeterminateRecord("record shorter than 2 cycles")

    means = np.array([p_ar[c].mean() for c in cycles])
    monotone_decay = bool(np.all(np.diff(means) < 0.0)
                          and (means[0] - means[-1]) > th.pressure_decay_frac * means[0])
    below_floor = bool(np.any(means < th.pressure_floor_mmhg))
    ok_pressure = not (monotone_decay or below_floor)

    strokes = np.array([v_lv[c].max() - v_lv[c].min() for c in cycles])
    baseline = strokes[0] if baseline_sv_ml is None else float(baseline_sv_ml)
    ok_stroke = bool(np.median(strokes) >= th.stroke_frac_of_baseline * baseline)

    ok_valves = True
    for c in cycles:
        mv_on = q_mv[c] > th.flow_on_ml_s
        av_on = q_av[c] > th.flow_on_ml_s
        has_mv = np.any(mv_on & ~av_on)
        has_av = np.any(av_on & ~mv_on)
        overlap = np.mean(mv_on & av_on) if mv_on.size else 1.0
        if not (has_mv and has_av and overlap < 0.05):
            ok_valves = False
            break

    a1 = _loop_area(v_lv[cycles[-2]], p_lv[cycles[-2]])
    a2 = _loop_area(v_lv[cycles[-1]], p_lv[cycles[-1]])
    ok_loop = bool(abs(a1 - a2) <= th.loop_area_rel_diff * max(a1, a2, 1e-12))

    evidence = {
        "arterial_pressure_sustainable": ok_pressure,
        "lv_volume_variation": ok_stroke,
        "valve_synchronization": ok_valves,
        "pv_loop_limit_cycle": ok_loop,
    }
    label = "stable" if all(evidence.values()) else "unstable"
    return StabilityVerdict(label=label, evidence=evidence)


class CoupledSimulation:
    """Owns all sub-solvers and advances the segregated loop."""

    def __init__(self, mesh, micro, eta_map, lam, config=None,
                 ep_params=None, act_params=None, guccione=None, robin=None,
                 circ_params=None, windkessel=None, protocol=(),
                 prepace_beats=0, initial_state=None):
        from . import activation as act_mod

        self.cfg = config or CouplingConfig()
        self.mesh = mesh
        self.micro = micro
        self.eta_map = eta_map
        self.protocol = list(protocol)

        self.ep = ep_mod.EpSolver(mesh, micro, eta_map, ep_params,
                                  dt=self.cfg.dt, initial_state=initial_state)
        self.act = act_mod.ActivationSolver(mesh, eta_map, act_params, dt=self.cfg.dt)
        self.mech = mech_mod.MechSolver(
            mesh, micro, eta_map, lam, guccione=guccione, robin=robin,
            act_params=act_params, dt=self.cfg.dt * self.cfg.mech_stride)

        self.circ_params = circ_params or circ.load_preset("healthy")
        self.wk = windkessel or circ.WindkesselParams()
        if self.cfg.afterload_mode == "closed_loop":
            if prepace_beats > 0:
                self.c1 = self._prepace_end_state(prepace_beats)
            else:
                self.c1 = circ.DEFAULT_INITIAL_STATE.copy()
            # hand the 0D loop the actual 3D cavity volume
            self.c1[circ.IV_LV] = mech_mod.cavity_volume(mesh) * M3_TO_ML
        self.p_lv_mmhg = 0.0
        self.i4f = np.ones(mesh.n_nodes)
        self.time = 0.0
        self._records = {k: [] for k in RunRecord.COLUMNS}
        self.constraint_worst_ml = 0.0
        self.probe_nodes = []
        self.probe_t = []
        self.probe_v = []

    def _prepace_end_state(self, beats):
        c1 = circ.DEFAULT_INITIAL_STATE.copy()
        t = 0.0
        n = int(round(beats * self.circ_params.T / self.cfg.dt))
        for _ in range(n):
            c1 = circ.step_rk4(c1, self.circ_params, self.cfg.dt, t)
            t += self.cfg.dt
        return c1

    # -- closed-loop constraint ----------------------------------------
    def _replay_circulation(self, c1_start, t_start, p_mmhg, n_sub):
        c1 = c1_start.copy()
        t = t_start
        for _ in range(n_sub):
            c1 = circ.step_rk4(c1, self.circ_params, self.cfg.dt, t,
                               p_lv_external=p_mmhg)
            t += self.cfg.dt
        return c1

    def _solve_constraint(self, c1_start, t_start, gamma):
        """Secant on p_LV until |V_3D - V_0D| < tol. Returns
        (p_mmhg, d_new, c1_new)."""
        tol = self.cfg.constraint_tol_ml
        n_sub = self.cfg.mech_stride

        cache = {}

        def mismatch(p_mmhg):
            if p_mmhg in cache:
                return cache[p_mmhg]
            d_new, _ = self.mech.solve(gamma_nodal=gamma,
                                       p_lv=p_mmhg * MMHG_TO_PA,
                                       d0=self._warm_d, reuse_tangent=True)
            c1_new = self._replay_circulation(c1_start, t_start, p_mmhg, n_sub)
            g = (mech_mod.cavity_volume(self.mesh, d_new) * M3_TO_ML
                 - c1_new[circ.IV_LV])
            cache[p_mmhg] = (g, d_new, c1_new)
            self._warm_d = d_new
            return cache[p_mmhg]

        p0 = self.p_lv_mmhg
        self._warm_d = self.mech.state.d
        g0, d0_, c10 = mismatch(p0)
        if abs(g0) < tol:
            return p0, d0_, c10
        # quasi-Newton first update from the remembered volume sensitivity
        slope = getattr(self, "_dg_dp", None)
        if slope and abs(slope) > 1e-9:
            p1 = p0 - float(np.clip(g0 / slope, -20.0, 20.0))
            if p1 == p0:
                p1 = p0 + 0.25
        else:
            p1 = p0 + max(0.25, 0.02 * abs(p0))
        g1, d1_, c11 = mismatch(p1)
        if p1 != p0 and g1 != g0:
            self._dg_dp = (g1 - g0) / (p1 - p0)
        it = 0
        while abs(g1) > tol:
            if it >= self.cfg.max_subiter:
                raise CouplingError(
                    f"volume constraint not met after {it} subiterations "
                    f"(|mismatch| = {abs(g1):.4f} mL)")
            if g1 == g0:
                p1 += 0.5
                g1, d1_, c11 = mismatch(p1)
                it += 1
                continue
            step = g1 * (p1 - p0) / (g1 - g0)
            step = float(np.clip(step, -20.0, 20.0))
            self._dg_dp = (g1 - g0) / (p1 - p0)
            p0, g0 = p1, g1
            p1 = p1 - step
            g1, d1_, c11 = mismatch(p1)
            it += 1
        self.constraint_worst_ml = max(self.constraint_worst_ml, abs(g1))
        return p1, d1_, c11

    # -- main loop -------------------------------------------------------
    def run(self, duration):
        cfg = self.cfg
        n_macro = int(round(duration / (cfg.dt * cfg.mech_stride)))
        if n_macro == 0:
            return self._build_record()
        events_logged = False
        for macro in range(n_macro):
            c1_start = None
            if cfg.afterload_mode == "closed_loop":
                c1_start = self.c1.copy()
            t_start = self.time
            for _ in range(cfg.mech_stride):
                v = self.ep.step(stimuli=self.protocol)
                ca = self.ep.calcium_uM()
                self.act.step(ca, i4f=self.i4f)
                self.time += cfg.dt
                if self.probe_nodes:
                    self.probe_t.append(self.time)
                    self.probe_v.append(v[self.probe_nodes])

            gamma = self.act.gamma
            if cfg.afterload_mode == "closed_loop":
                p_new, d_new, c1_new = self._solve_constraint(c1_start, t_start, gamma)
                self.c1 = c1_new
            else:
                p_new, d_new = self._windkessel_macro_step(gamma)
            self.mech.commit(d_new, p_new * MMHG_TO_PA)
            self.p_lv_mmhg = p_new

            F_qp = ep_mod.deformation_at_qp(self.mesh, d_new)
            self.ep.set_deformation(F_qp)
            self.i4f = mech_mod.nodal_fiber_stretch_invariant(
                self.mesh, d_new, self.micro)

            if macro % max(1, cfg.output_stride // cfg.mech_stride) == 0:
                self._record_sample()
        rec = self._build_record()
        rec.events = self._protocol_events()
        return rec

    def _protocol_events(self):
        events = []
        for s in sorted(self.protocol, key=lambda s: s.t_start):
            overlapped = any(
                o is not s and o.t_start < s.t_start + s.duration
                and s.t_start < o.t_start + o.duration for o in self.protocol)
            foot = s.weights(self.mesh.nodes) > 0
            acts = self.ep._act_time[foot]
            captured = bool(np.any(np.isfinite(acts)
                                   & (acts >= s.t_start)
                                   & (acts <= s.t_start + s.duration + 0.02)))
            events.append(ep_mod.StimulusEvent(
                t_delivered=s.t_start, stimulus=s, overlapped=overlapped,
                captured=captured))
        return events

    def _record_sample(self):
        v3d = mech_mod.cavity_volume(self.mesh, self.mech.state.d) * M3_TO_ML
        row = {"t_s": self.time, "V_LV_mL": v3d, "p_LV_mmHg": self.p_lv_mmhg}
        if self.cfg.afterload_mode == "closed_loop":
            c2 = circ.algebraic_state(self.time, self.c1, self.circ_params,
                                      p_lv_external=self.p_lv_mmhg)
            row.update({
                "p_AR_SYS_mmHg": self.c1[circ.IP_AR_SYS],
                "p_LA_mmHg": c2[circ.JP_LA],
                "V_LA_mL": self.c1[circ.IV_LA],
                "Q_MV_mL_s": c2[circ.JQ_MV],
                "Q_AV_mL_s": c2[circ.JQ_AV],
            })
        else:
            row.update({
                "p_AR_SYS_mmHg": self._wk_p_mmhg,
                "p_LA_mmHg": float("nan"),
                "V_LA_mL": float("nan"),
                "Q_MV_mL_s": max(self._wk_fill_rate, 0.0),
                "Q_AV_mL_s": max(-self._wk_eject_rate, 0.0),
            })
        for k in RunRecord.COLUMNS:
            self._records[k].append(row[k])

    def _build_record(self):
        arrays = [np.asarray(self._records[k]) for k in RunRecord.COLUMNS]
        rec = RunRecord(*arrays)
        rec.meta = {
            "afterload_mode": self.cfg.afterload_mode,
            "constraint_worst_ml": self.constraint_worst_ml,
        }
        return rec

    # -- Windkessel (pressure-volume phase) mode -------------------------
    def init_windkessel(self, edv_target_ml, edp_mmhg, dbp_mmhg=69.0,
                        fill_time_s=0.4):
        """Prepare the 4-phase afterload: start at end-diastole."""
        self._wk_phase = "isovolumic_contraction"
        self._wk_p_mmhg = dbp_mmhg
        self._wk_edv = edv_target_ml
        self._wk_edp = edp_mmhg
        self._wk_fill_time = fill_time_s
        self._wk_fill_rate = 0.0
        self._wk_eject_rate = 0.0
        self.p_lv_mmhg = edp_mmhg
        self._v_hold = mech_mod.cavity_volume(self.mesh, self.mech.state.d) * M3_TO_ML

    def _solve_volume_target(self, gamma, v_target_ml):
        cache = {}

        def mismatch(p_mmhg):
            if p_mmhg in cache:
                return cache[p_mmhg]
            d_new, _ = self.mech.solve(gamma_nodal=gamma,
                                       p_lv=p_mmhg * MMHG_TO_PA,
                                       d0=self._warm_d, reuse_tangent=True)
            self._warm_d = d_new
            g = mech_mod.cavity_volume(self.mesh, d_new) * M3_TO_ML - v_target_ml
            cache[p_mmhg] = (g, d_new)
            return cache[p_mmhg]

        self._warm_d = self.mech.state.d
        p0 = self.p_lv_mmhg
        p1 = p0 + 0.5
        g0, d0_ = mismatch(p0)
        if abs(g0) < self.cfg.constraint_tol_ml:
            return p0, d0_
        g1, d1_ = mismatch(p1)
        for it in range(self.cfg.max_subiter):
            if abs(g1) < self.cfg.constraint_tol_ml:
                return p1, d1_
            if g1 == g0:
                p1 += 0.5
                g1, d1_ = mismatch(p1)
                continue
            step = float(np.clip(g1 * (p1 - p0) / (g1 - g0), -25.0, 25.0))
            p0, g0 = p1, g1
            p1 = p1 - step
            g1, d1_ = mismatch(p1)
        raise CouplingError("isovolumic constraint subiteration failed")

    def _windkessel_macro_step(self, gamma):
        dt_mech = self.cfg.dt * self.cfg.mech_stride
        self._wk_fill_rate = 0.0
        self._wk_eject_rate = 0.0
        v_now = mech_mod.cavity_volume(self.mesh, self.mech.state.d) * M3_TO_ML

        if self._wk_phase == "isovolumic_contraction":
            p_new, d_new = self._solve_volume_target(gamma, self._v_hold)
            if p_new >= self._wk_p_mmhg:
                self._wk_phase = "ejection"
            return p_new, d_new

        if self._wk_phase == "ejection":
            # implicit consistency: LV pressure follows the Windkessel ODE
            # driven by the 3D volume rate
            p_wk_pa = self._wk_p_mmhg * MMHG_TO_PA

            def wk_response(p_mmhg):
                d_new, _ = self.mech.solve(gamma_nodal=gamma,
                                           p_lv=p_mmhg * MMHG_TO_PA,
                                           d0=self._warm_d, reuse_tangent=True)
                self._warm_d = d_new
                v_new = mech_mod.cavity_volume(self.mesh, d_new) * M3_TO_ML
                dvdt = (v_new - v_now) / dt_mech * 1e-6  # m^3/s
                p_next = p_wk_pa
                for _ in range(self.cfg.mech_stride):
                    p_next = circ.windkessel_step(p_next, dvdt, self.wk, self.cfg.dt)
                return p_next / MMHG_TO_PA, d_new, v_new

            self._warm_d = self.mech.state.d
            p = self._wk_p_mmhg
            d_new = self.mech.state.d
            v_new = v_now
            for _ in range(6):
                p_out, d_new, v_new = wk_response(p)
                if abs(p_out - p) < 0.02:
                    p = p_out
                    break
                p = 0.5 * (p + p_out)
            self._wk_p_mmhg = p
            self._wk_eject_rate = (v_new - v_now) / dt_mech
            if v_new >= v_now - 1e-4:  # flow reversed: aortic valve closes
                self._wk_phase = "isovolumic_relaxation"
                self._v_hold = v_new
            return p, d_new

        if self._wk_phase == "isovolumic_relaxation":
            p_new, d_new = self._solve_volume_target(gamma, self._v_hold)
            # Windkessel diastolic decay continues
            p_next = self._wk_p_mmhg * MMHG_TO_PA
            for _ in range(self.cfg.mech_stride):
                p_next = circ.windkessel_step(p_next, 0.0, self.wk, self.cfg.dt)
            self._wk_p_mmhg = p_next / MMHG_TO_PA
            if p_new <= self._wk_edp:
                self._wk_phase = "filling"
                self._wk_fill_t0 = self.time
                self._wk_esv = self._v_hold
            return p_new, d_new

        # filling: prescribed volume ramp back to the end-diastolic target
        frac = min(1.0, (self.time - self._wk_fill_t0) / self._wk_fill_time)
        v_target = self._wk_esv + (self._wk_edv - self._wk_esv) * frac
        p_new, d_new = self._solve_volume_target(gamma, v_target)
        self._wk_fill_rate = (v_target - v_now) / dt_mech
        p_next = self._wk_p_mmhg * MMHG_TO_PA
        for _ in range(self.cfg.mech_stride):
            p_next = circ.windkessel_step(p_next, 0.0, self.wk, self.cfg.dt)
        self._wk_p_mmhg = p_next / MMHG_TO_PA
        if frac >= 1.0 and p_new > self._wk_edp + 2.0:
            self._wk_phase = "isovolumic_contraction"
            self._v_hold = v_target
        return p_new, d_new
