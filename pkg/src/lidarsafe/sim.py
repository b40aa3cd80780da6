"""Scenario runner for the UAV corridor-delivery case study.

A scenario couples the linear position dynamics, a bank of per-sensor EKFs,
the synthetic LiDAR, optional sensor attacks, and either the fault-tolerant
controller or a PID baseline driven by a single sensor. Runs are fully
deterministic given (config, seed): every random draw comes from named
substreams of one seed sequence, and all emitted artifacts (CSV, JSON, SVG)
are byte-stable.

Config files are YAML; see README for the schema. All angles in the file are
degrees, all distances meters.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .attack import FdiSpec, LidarSpoofSpec, inject_fdi, spoof_scan
from .barrier import (BarrierCertificate, GridSpec, Poly, Region, SetSpec,
                      VerificationReport, safety_probability, verify_certificate)
from .control import (BankMember, ControlThresholds, NominalController,
                      ft_control_step)
from .estimation import (EstimatorEntry, SensorModel, SystemModel, ekf_step,
                         linear_system, position_sensor, stacked_sensor)
from .geometry import PointCloudMap, PolarScan, Pose, load_map, to_cartesian
from .ndt import SolverConfig, build_grid, match_cells, shortfall_bound
from .scanner import LidarNoise, ScanParams, reconstruct_scan, sense_lidar
from .trust import EmptyTrustError, select_trusted

FT = "ft"
BASELINE = "baseline"
SCENARIOS = ("nominal", "ins-attack", "ins-lidar-attack")


class ConfigError(ValueError):
    """The scenario configuration is malformed or inconsistent."""


class SafetyVerificationError(RuntimeError):
    """The configured certificate failed grid verification."""

    def __init__(self, report: VerificationReport):
        super().__init__(
            f"certificate verification failed (margins {report.margin1:.3g}, "
            f"{report.margin2:.3g}, {report.margin3:.3g})")
        self.report = report


# ---------------------------------------------------------------------------
# configuration


def _poly_from_dict(n_vars: int, spec: dict) -> Poly:
    if not isinstance(spec, dict):
        raise ConfigError(f"polynomial spec must be a mapping, got {spec!r}")
    terms = {}
    if "terms" in spec:
        for item in spec["terms"]:
            terms[tuple(item["powers"])] = float(item["coeff"])
    base = Poly.quadratic(
        n_vars,
        const=float(spec.get("const", 0.0)),
        linear=spec.get("linear"),
        quad=spec.get("quad"),
    )
    for powers, coeff in base.terms.items():
        terms[powers] = terms.get(powers, 0.0) + coeff
    return Poly(n_vars, terms)


def _region_from_dict(n_vars: int, spec: dict) -> Region:
    try:
        lo, hi = spec["bbox"]
    except (KeyError, TypeError, ValueError):
        raise ConfigError(f"region needs a bbox [[lo...],[hi...]]: {spec!r}") from None
    polys = tuple(_poly_from_dict(n_vars, p) for p in spec.get("polys", []))
    return Region(polys, np.asarray(lo, float), np.asarray(hi, float))


@dataclass(frozen=True)
class EstimatorSpec:
    est_id: int
    sensor_ids: tuple
    error_bound: float


@dataclass(frozen=True)
class ScenarioConfig:
    """Fully resolved scenario: models, thresholds, attacks, and run settings."""

    a: np.ndarray
    b: np.ndarray
    process_cov: np.ndarray
    initial_state: np.ndarray
    init_cov: np.ndarray
    sensor_covs: dict
    sensor_names: dict
    estimators: tuple
    scan_params: ScanParams
    lidar_noise: LidarNoise
    cloud: PointCloudMap
    map_name: str
    controller: NominalController
    pid_kp: np.ndarray
    pid_ki: np.ndarray
    pid_kd: np.ndarray
    pid_feedforward: np.ndarray
    pid_setpoint: np.ndarray
    baseline_estimator: int
    certificate: BarrierCertificate
    sets: SetSpec
    pose_tolerance: float | None
    shortfall_limit: float
    shortfall_limit_auto: bool
    n_sectors: int
    case2_gate: float | None
    persistent_exclusion: bool
    fdi: FdiSpec | None
    spoof: LidarSpoofSpec | None
    horizon: int
    seed: int
    epsilon: float
    snapshot_steps: tuple
    verify_on_run: bool
    solver: SolverConfig
    grid: GridSpec
    raw: dict = field(repr=False, default_factory=dict)

    def system_model(self) -> SystemModel:
        return linear_system(self.a, self.b, self.process_cov)

    def sensor_model(self, sensor_id: int) -> SensorModel:
        return position_sensor(sensor_id, self.sensor_covs[sensor_id])

    def estimator_sensor(self, spec: EstimatorSpec) -> SensorModel:
        if len(spec.sensor_ids) == 1:
            return self.sensor_model(spec.sensor_ids[0])
        return stacked_sensor(spec.est_id,
                              [self.sensor_model(s) for s in spec.sensor_ids])

    def with_scenario(self, scenario: str) -> "ScenarioConfig":
        """Mask the configured attacks according to a named scenario."""
        if scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
        fdi = self.fdi if scenario in ("ins-attack", "ins-lidar-attack") else None
        spoof = self.spoof if scenario == "ins-lidar-attack" else None
        raw = dict(self.raw)
        raw["scenario"] = scenario
        return replace(self, fdi=fdi, spoof=spoof, raw=raw)

    def with_run(self, seed: int | None = None, horizon: int | None = None) -> "ScenarioConfig":
        raw = dict(self.raw)
        out = self
        if seed is not None:
            raw["run"] = {**raw.get("run", {}), "seed": int(seed)}
            out = replace(out, seed=int(seed), raw=raw)
        if horizon is not None:
            raw = dict(out.raw)
            raw["run"] = {**raw.get("run", {}), "horizon": int(horizon)}
            out = replace(out, horizon=int(horizon), raw=raw)
        return out

    def without_verification(self) -> "ScenarioConfig":
        return replace(self, verify_on_run=False)

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canon.encode()).hexdigest()

    def departures(self) -> list:
        return list(self.spoof.departures()) if self.spoof is not None else []


def data_path(name: str) -> Path:
    """Path of a packaged data file (default map and scenario config)."""
    return Path(str(resources.files("lidarsafe").joinpath("data", name)))


def _resolve_map(map_name: str, base_dir: Path | None) -> PointCloudMap:
    if map_name.startswith("builtin:"):
        return load_map(data_path(map_name.split(":", 1)[1]))
    path = Path(map_name)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    if not path.exists():
        builtin = data_path(map_name)
        if builtin.exists():
            return load_map(builtin)
        raise ConfigError(f"map file not found: {map_name}")
    return load_map(path)


def load_config(path) -> ScenarioConfig:
    """Parse and validate a YAML scenario file."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return config_from_dict(raw, base_dir=path.parent)


def config_from_dict(raw: dict, base_dir: Path | None = None) -> ScenarioConfig:
    try:
        return _config_from_dict(raw, base_dir)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def _config_from_dict(raw: dict, base_dir: Path | None) -> ScenarioConfig:
    system = raw["system"]
    a = np.asarray(system["a"], dtype=float)
    b = np.asarray(system["b"], dtype=float)
    q = np.asarray(system["process_cov"], dtype=float)
    x0 = np.asarray(system.get("initial_state", np.zeros(a.shape[0])), dtype=float).ravel()
    p0 = np.asarray(system.get("estimator_init_cov", 1e-2 * np.eye(a.shape[0])), dtype=float)
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n or q.shape != (n, n) or x0.shape[0] != n:
        raise ConfigError("system matrix dimensions are inconsistent")

    sensor_covs, sensor_names = {}, {}
    for s in raw["sensors"]:
        sid = int(s["id"])
        sensor_covs[sid] = np.asarray(s["meas_cov"], dtype=float)
        sensor_names[sid] = str(s.get("name", f"sensor{sid}"))
    if not sensor_covs:
        raise ConfigError("at least one sensor is required")

    if "estimators" in raw:
        estimators = tuple(
            EstimatorSpec(int(e["id"]), tuple(int(x) for x in e["sensors"]),
                          float(e["error_bound"]))
            for e in raw["estimators"])
    else:
        estimators = tuple(
            EstimatorSpec(int(s["id"]), (int(s["id"]),), float(s["error_bound"]))
            for s in raw["sensors"])
    for est in estimators:
        for sid in est.sensor_ids:
            if sid not in sensor_covs:
                raise ConfigError(f"estimator {est.est_id} references unknown sensor {sid}")

    lidar = raw["lidar"]
    scan_params = ScanParams.from_degrees(float(lidar["resolution_deg"]),
                                          float(lidar["max_range"]))
    lidar_noise = LidarNoise(float(lidar.get("noise_sigma", 0.0)),
                             float(lidar.get("noise_bound", 0.0)))

    map_name = str(raw["map"])
    cloud = _resolve_map(map_name, base_dir)

    ctrl_raw = raw["controller"]
    controller = NominalController(np.asarray(ctrl_raw["offset"], dtype=float),
                                   np.asarray(ctrl_raw["gain"], dtype=float))
    m = controller.gain.shape[0]

    pid = raw.get("baseline", {})
    zeros = np.zeros((m, n))
    pid_kp = np.asarray(pid.get("kp", -controller.gain), dtype=float)
    pid_ki = np.asarray(pid.get("ki", zeros), dtype=float)
    pid_kd = np.asarray(pid.get("kd", zeros), dtype=float)
    pid_ff = np.asarray(pid.get("feedforward", controller.offset), dtype=float).ravel()
    pid_set = np.asarray(pid.get("setpoint", np.zeros(n)), dtype=float).ravel()
    baseline_estimator = int(pid.get("estimator", estimators[0].est_id))

    cert_raw = raw["certificate"]
    certificate = BarrierCertificate(
        b=_poly_from_dict(n, cert_raw["b"]),
        gamma=float(cert_raw["gamma"]),
        c=float(cert_raw["c"]),
        xi=float(cert_raw["xi"]),
    )
    sets_raw = raw["sets"]
    sets = SetSpec(
        state_space=_region_from_dict(n, sets_raw["state_space"]),
        safe=_region_from_dict(n, sets_raw["safe"]),
        unsafe=_region_from_dict(n, sets_raw["unsafe"]),
    )

    thr = raw.get("thresholds", {})
    pose_tol = thr.get("pose_tolerance")
    pose_tol = None if pose_tol is None else float(pose_tol)
    sl_raw = thr.get("shortfall_limit", "auto")
    auto_limit = isinstance(sl_raw, str)
    if auto_limit and sl_raw != "auto":
        raise ConfigError(f"shortfall_limit must be a number or 'auto', got {sl_raw!r}")
    gate = thr.get("case2_gate", 2.0)
    gate = None if gate is None else float(gate)

    attacks = raw.get("attacks", {})
    fdi = None
    if "ins_bias" in attacks and attacks["ins_bias"] is not None:
        ab = attacks["ins_bias"]
        end = ab.get("end")
        fdi = FdiSpec({int(ab["sensor"]): np.asarray(ab["bias"], dtype=float)},
                      start=int(ab.get("start", 0)),
                      end=None if end is None else int(end))
    spoof = None
    if "lidar_spoof" in attacks and attacks["lidar_spoof"] is not None:
        sp = attacks["lidar_spoof"]
        end = sp.get("end")
        spoof = LidarSpoofSpec.from_degrees(
            float(sp["angle_deg"][0]), float(sp["angle_deg"][1]),
            float(sp["range"][0]), float(sp["range"][1]),
            start=int(sp.get("start", 0)),
            end=None if end is None else int(end),
            widen_beyond_hw_limit=bool(sp.get("widen_beyond_hw_limit", False)))

    run = raw.get("run", {})
    horizon = int(run.get("horizon", 100))
    if horizon < 1:
        raise ConfigError("horizon must be at least 1")
    seed = run.get("seed")
    if seed is None:
        raise ConfigError("run.seed is required: runs must be reproducible")
    snapshot_steps = tuple(int(s) for s in run.get("snapshot_steps", ()))

    solver_raw = raw.get("solver", {})
    solver = SolverConfig(
        cell_size=float(solver_raw.get("cell_size", 2.0)),
        min_points=int(solver_raw.get("min_points", 3)),
        eig_floor=float(solver_raw.get("eig_floor", 1e-3)),
        tol_step=float(solver_raw.get("tol_step", 1e-4)),
        max_iter=int(solver_raw.get("max_iter", 50)),
    )
    grid_raw = raw.get("verification_grid", {})
    grid = GridSpec(
        resolution=int(grid_raw.get("resolution", 101)),
        ball_radii=int(grid_raw.get("ball_radii", 8)),
        ball_angles=int(grid_raw.get("ball_angles", 16)),
    )

    cfg = ScenarioConfig(
        a=a, b=b, process_cov=q, initial_state=x0, init_cov=p0,
        sensor_covs=sensor_covs, sensor_names=sensor_names, estimators=estimators,
        scan_params=scan_params, lidar_noise=lidar_noise, cloud=cloud, map_name=map_name,
        controller=controller,
        pid_kp=pid_kp, pid_ki=pid_ki, pid_kd=pid_kd,
        pid_feedforward=pid_ff, pid_setpoint=pid_set,
        baseline_estimator=baseline_estimator,
        certificate=certificate, sets=sets,
        pose_tolerance=pose_tol,
        shortfall_limit=0.0 if auto_limit else float(sl_raw),
        shortfall_limit_auto=auto_limit,
        n_sectors=int(thr.get("n_sectors", 18)),
        case2_gate=gate,
        persistent_exclusion=bool(thr.get("persistent_exclusion", False)),
        fdi=fdi, spoof=spoof,
        horizon=horizon, seed=int(seed),
        epsilon=float(run.get("epsilon", 0.1)),
        snapshot_steps=snapshot_steps,
        verify_on_run=bool(run.get("verify_certificate", False)),
        solver=solver, grid=grid,
        raw=_canonicalize(raw),
    )
    if cfg.shortfall_limit_auto:
        cfg = replace(cfg, shortfall_limit=auto_shortfall_limit(cfg))
    return cfg


def _canonicalize(obj):
    if isinstance(obj, dict):
        return {str(k): _canonicalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonicalize(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def auto_shortfall_limit(config: ScenarioConfig, margin: float = 0.1) -> float:
    """Noise-only shortfall bound at the initial pose, plus a safety margin.

    The bound is exact for beams matched to a stored cell; unmatched beams
    count a full unit of shortfall each, mirroring how the matcher scores
    them.
    """
    pose = Pose.from_array(config.initial_state)
    scan = reconstruct_scan(pose, config.cloud, config.scan_params)
    cloud = to_cartesian(pose, scan)
    grid = build_grid(cloud, config.solver.cell_size, config.solver.min_points,
                      config.solver.eig_floor)
    cells = match_cells(grid, cloud.points, np.zeros(2))
    matched = [c for c in cells if c is not None]
    unmatched = len(cells) - len(matched)
    w = np.full(len(matched), config.lidar_noise.bound)
    bound = shortfall_bound(w, grid, matched) + unmatched
    return float((1.0 + margin) * bound)


# ---------------------------------------------------------------------------
# safety evaluation


@dataclass(frozen=True)
class SafetyReport:
    """Trajectory-level safety outcome against the safe-set inequalities."""

    min_value: float
    min_step: int
    first_violation: int | None

    @property
    def violated(self) -> bool:
        return self.first_violation is not None


def evaluate_safety(states: np.ndarray, safe) -> SafetyReport:
    """Minimum safe-set margin along a trajectory and the first violating step.

    `safe` is a Region or an iterable of polynomials; the margin at a state
    is the smallest polynomial value (all must stay >= 0).
    """
    polys = safe.polys if isinstance(safe, Region) else tuple(safe)
    states = np.asarray(states, dtype=float)
    values = np.min(np.column_stack([p(states) for p in polys]), axis=1)
    idx = int(np.argmin(values))
    violations = np.nonzero(values < 0.0)[0]
    return SafetyReport(
        min_value=float(values[idx]),
        min_step=idx,
        first_violation=int(violations[0]) if violations.size else None,
    )


def batch_violation_summary(reports, gamma: float, c: float, horizon: int) -> dict:
    """Empirical violation fraction of a batch against the certificate bound."""
    reports = list(reports)
    violated = sum(1 for r in reports if r.violated)
    return {
        "runs": len(reports),
        "violations": violated,
        "violation_fraction": violated / len(reports) if reports else 0.0,
        "bound": min(1.0, gamma + c * horizon),
        "safety_probability": safety_probability(gamma, c, horizon),
    }


# ---------------------------------------------------------------------------
# run artifacts


@dataclass
class RunArtifacts:
    """Everything a run produced; length of every per-step field is horizon + 1."""

    mode: str
    config_hash: str
    seed: int
    states: np.ndarray
    controls: np.ndarray
    estimates: dict
    paths: list
    excluded: list
    anchors: list
    trust_reports: list
    snapshots: dict
    safety: SafetyReport
    verification: VerificationReport | None
    departures: list
    horizon: int

    def trusted_at(self, k: int) -> frozenset | None:
        rep = self.trust_reports[k]
        return None if rep is None else rep.trusted


# ---------------------------------------------------------------------------
# the runner


class _Pid:
    """Matrix-gain PID on one estimator's state estimate."""

    def __init__(self, config: ScenarioConfig):
        self.kp, self.ki, self.kd = config.pid_kp, config.pid_ki, config.pid_kd
        self.ff = config.pid_feedforward
        self.setpoint = config.pid_setpoint
        self.integral = np.zeros(config.pid_kp.shape[1])
        self.prev_error = None

    def step(self, estimate: np.ndarray) -> np.ndarray:
        err = self.setpoint - estimate
        self.integral = self.integral + err
        deriv = np.zeros_like(err) if self.prev_error is None else err - self.prev_error
        self.prev_error = err
        return self.ff + self.kp @ err + self.ki @ self.integral + self.kd @ deriv


def step_dynamics(x: np.ndarray, u: np.ndarray, a: np.ndarray, b: np.ndarray,
                  noise: np.ndarray) -> np.ndarray:
    """One step of x+ = A x + B u + w."""
    return a @ x + b @ u + noise


def run_scenario(config: ScenarioConfig, mode: str = FT, out_dir=None) -> RunArtifacts:
    """Execute one scenario run and optionally write its artifacts.

    In FT mode the trust screening runs every step (it feeds the trust log
    and the controller); baseline mode drives a PID from one estimator and
    performs no screening. Sensor, LiDAR, spoof, and process noise all come
    from fixed substreams of the run seed, in the same order in both modes,
    so trajectories in the two modes are identical until an attack or a
    control decision makes them diverge.
    """
    if mode not in (FT, BASELINE):
        raise ConfigError(f"unknown mode {mode!r}")
    verification = None
    if config.verify_on_run and mode == FT:
        verification = verify_certificate(
            config.certificate, config.sets, config.system_model(),
            config.controller.gain, config.controller.offset,
            max(e.error_bound for e in config.estimators),
            config.grid, config.horizon)
        if not verification.ok:
            raise SafetyVerificationError(verification)

    n = config.initial_state.shape[0]
    model = config.system_model()
    chol_q = np.linalg.cholesky(config.process_cov)
    sensor_ids = sorted(config.sensor_covs)
    ss = np.random.SeedSequence(config.seed)
    streams = ss.spawn(3 + len(sensor_ids))
    rng_process = np.random.default_rng(streams[0])
    rng_lidar = np.random.default_rng(streams[1])
    rng_spoof = np.random.default_rng(streams[2])
    rng_sensors = {sid: np.random.default_rng(streams[3 + i])
                   for i, sid in enumerate(sensor_ids)}
    sensor_chols = {sid: np.linalg.cholesky(cov) for sid, cov in config.sensor_covs.items()}

    members = []
    for spec in config.estimators:
        sensor = config.estimator_sensor(spec)
        entry = EstimatorEntry(spec.est_id, config.initial_state.copy(),
                               config.init_cov.copy(), spec.error_bound)
        members.append(BankMember(sensor, entry))
    thresholds = ControlThresholds(
        xi=config.certificate.xi,
        pose_tolerance=config.pose_tolerance,
        shortfall_limit=config.shortfall_limit,
        n_sectors=config.n_sectors,
        case2_gate=config.case2_gate,
    )
    pid = _Pid(config)
    baseline_idx = next(i for i, m in enumerate(members)
                        if m.entry.est_id == config.baseline_estimator)

    horizon = config.horizon
    states = np.empty((horizon + 1, n))
    controls = np.empty((horizon + 1, config.controller.gain.shape[0]))
    estimates = {m.entry.est_id: np.empty((horizon + 1, n)) for m in members}
    paths, excluded_log, anchors, trust_log = [], [], [], []
    snapshots = {}

    x = config.initial_state.copy()
    persistent_excluded: frozenset = frozenset()
    for k in range(horizon + 1):
        states[k] = x
        for m in members:
            estimates[m.entry.est_id][k] = m.entry.state

        # sense: proprioceptive sensors, then the LiDAR, then the attacks
        raw_meas = {}
        for sid in sensor_ids:
            noise = sensor_chols[sid] @ rng_sensors[sid].standard_normal(n)
            raw_meas[sid] = inject_fdi(x + noise, config.fdi, sid, k)
        est_meas = {}
        for m in members:
            spec = next(e for e in config.estimators if e.est_id == m.entry.est_id)
            est_meas[m.entry.est_id] = np.concatenate(
                [raw_meas[sid] for sid in spec.sensor_ids])
        scan = sense_lidar(Pose.from_array(x), config.cloud, config.scan_params,
                           config.lidar_noise, rng_lidar)
        if config.spoof is not None:
            scan = spoof_scan(scan, config.spoof, k, rng_spoof)
        if k in config.snapshot_steps:
            snapshots[k] = scan

        # decide
        if mode == FT:
            entries = [m.entry for m in members
                       if m.entry.est_id not in persistent_excluded]
            try:
                report = select_trusted(
                    entries, config.cloud, scan, config.pose_tolerance,
                    config.shortfall_limit, config.scan_params, config.n_sectors,
                    config.solver, config.case2_gate)
            except EmptyTrustError as err:
                report = err.report
            decision = ft_control_step(
                members, est_meas, config.controller, thresholds, config.cloud,
                scan, config.scan_params, config.solver,
                initial_excluded=persistent_excluded, trust_report=report)
            u = decision.u
            paths.append(decision.path)
            excluded_log.append(decision.excluded)
            anchors.append(decision.anchor)
            trust_log.append(report)
            if config.persistent_exclusion:
                persistent_excluded = persistent_excluded | decision.excluded
        else:
            u = pid.step(members[baseline_idx].entry.state)
            paths.append(BASELINE)
            excluded_log.append(frozenset())
            anchors.append(config.baseline_estimator)
            trust_log.append(None)
        controls[k] = u

        if k == horizon:
            break

        # advance estimators, then the plant
        members = [
            BankMember(m.sensor, ekf_step(model, m.sensor, m.entry, u,
                                          est_meas[m.entry.est_id]))
            for m in members
        ]
        w = chol_q @ rng_process.standard_normal(n)
        x = step_dynamics(x, u, config.a, config.b, w)

    safety = evaluate_safety(states, config.sets.safe)
    artifacts = RunArtifacts(
        mode=mode, config_hash=config.config_hash(), seed=config.seed,
        states=states, controls=controls, estimates=estimates,
        paths=paths, excluded=excluded_log, anchors=anchors,
        trust_reports=trust_log, snapshots=snapshots, safety=safety,
        verification=verification, departures=config.departures(),
        horizon=horizon,
    )
    if out_dir is not None:
        write_artifacts(artifacts, config, out_dir)
    return artifacts


def run_batch(config: ScenarioConfig, n_seeds: int, mode: str = FT,
              out_dir=None, base_seed: int | None = None) -> list:
    """Run `n_seeds` consecutive seeds; certificate verification runs once."""
    if base_seed is None:
        base_seed = config.seed
    if config.verify_on_run and mode == FT:
        report = verify_certificate(
            config.certificate, config.sets, config.system_model(),
            config.controller.gain, config.controller.offset,
            max(e.error_bound for e in config.estimators),
            config.grid, config.horizon)
        if not report.ok:
            raise SafetyVerificationError(report)
    runs = []
    quiet = config.without_verification()
    for i in range(n_seeds):
        cfg = quiet.with_run(seed=base_seed + i)
        sub_dir = None if out_dir is None else Path(out_dir) / f"seed_{base_seed + i:05d}"
        runs.append(run_scenario(cfg, mode, sub_dir))
    return runs


# ---------------------------------------------------------------------------
# artifact writers (all byte-deterministic)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_trajectory_csv(art: RunArtifacts, path) -> None:
    est_ids = sorted(art.estimates)
    n = art.states.shape[1]
    m = art.controls.shape[1]
    cols = ["step"] + [f"x{i+1}" for i in range(n)] + [f"u{i+1}" for i in range(m)]
    cols += ["path", "anchor", "excluded", "trusted"]
    for eid in est_ids:
        cols += [f"xhat{eid}_{i+1}" for i in range(n)]
    lines = [",".join(cols)]
    for k in range(art.horizon + 1):
        row = [str(k)]
        row += [_fmt(v) for v in art.states[k]]
        row += [_fmt(v) for v in art.controls[k]]
        trusted = art.trusted_at(k)
        row += [
            art.paths[k],
            str(art.anchors[k]),
            ";".join(str(e) for e in sorted(art.excluded[k])),
            "" if trusted is None else ";".join(str(t) for t in sorted(trusted)),
        ]
        for eid in est_ids:
            row += [_fmt(v) for v in art.estimates[eid][k]]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_trust_csv(art: RunArtifacts, path) -> None:
    cols = ["step", "est_id", "criterion", "shift_norm", "shortfall",
            "full_shortfall", "removed_lo", "removed_width", "lidar_trusted"]
    lines = [",".join(cols)]
    for k, report in enumerate(art.trust_reports):
        if report is None:
            continue
        for eid in sorted(report.decisions):
            d = report.decisions[eid]
            sector = d.removed_sector
            lines.append(",".join([
                str(k), str(eid), d.criterion,
                _fmt(d.shift_norm), _fmt(d.shortfall), _fmt(d.full_shortfall),
                "" if sector is None else _fmt(sector.lo),
                "" if sector is None else _fmt(sector.width),
                "1" if report.lidar_trusted else "0",
            ]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_scan_csv(scan: PolarScan, path) -> None:
    """Scan file: one "angle_rad,range_m" line per beam, nan for invalid beams."""
    lines = ["# angle_rad,range_m"]
    for a, r, v in zip(scan.angles, scan.ranges, scan.valid):
        lines.append(f"{_fmt(a)},{_fmt(r) if v else 'nan'}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_scan(path) -> PolarScan:
    """Read a scan file written by write_scan_csv."""
    angles, ranges = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, rawline in enumerate(fh, start=1):
            line = rawline.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ConfigError(f"{path}: line {lineno}: expected 'angle,range'")
            angles.append(float(parts[0]))
            ranges.append(float(parts[1]))
    r = np.asarray(ranges, dtype=float)
    return PolarScan(r, np.asarray(angles, dtype=float), np.isfinite(r) & (r > 0))


def write_metadata(art: RunArtifacts, config: ScenarioConfig, path) -> None:
    meta = {
        "config_hash": art.config_hash,
        "seed": art.seed,
        "mode": art.mode,
        "horizon": art.horizon,
        "departures": art.departures,
        "safety": {
            "min_value": art.safety.min_value,
            "min_step": art.safety.min_step,
            "first_violation": art.safety.first_violation,
        },
        "shortfall_limit": config.shortfall_limit,
        "safety_probability": safety_probability(
            config.certificate.gamma, config.certificate.c, art.horizon),
    }
    if art.verification is not None:
        meta["verification"] = {
            "ok": art.verification.ok,
            "margins": [art.verification.margin1, art.verification.margin2,
                        art.verification.margin3],
            "xi_eff": art.verification.xi_eff,
        }
    Path(path).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def write_world_svg(path, cloud: PointCloudMap, sets: SetSpec | None,
                    tracks: list, size: float = 720.0) -> None:
    """Hand-rolled SVG: map points, safe/unsafe region boxes, trajectories.

    `tracks` is a list of (label, css_color, dasharray_or_empty, xy_array).
    Output bytes depend only on the inputs.
    """
    pts = [cloud.points] + [np.asarray(t[3], dtype=float) for t in tracks]
    allp = np.vstack([p for p in pts if p.size])
    lo = allp.min(axis=0) - 2.0
    hi = allp.max(axis=0) + 2.0
    span = np.maximum(hi - lo, 1e-9)
    scale = size / span.max()

    def sx(x):
        return (x - lo[0]) * scale

    def sy(y):
        return (hi[1] - y) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{span[0] * scale:.1f}" '
        f'height="{span[1] * scale:.1f}" viewBox="0 0 {span[0] * scale:.1f} '
        f'{span[1] * scale:.1f}">',
        f'<rect width="{span[0] * scale:.1f}" height="{span[1] * scale:.1f}" fill="white"/>',
    ]
    if sets is not None:
        for region, color in ((sets.safe, "#d9f2d9"), (sets.unsafe, "#f6d3d3")):
            x0, y0 = sx(region.lo[0]), sy(region.hi[1])
            w = (region.hi[0] - region.lo[0]) * scale
            h = (region.hi[1] - region.lo[1]) * scale
            out.append(f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{w:.2f}" '
                       f'height="{h:.2f}" fill="{color}"/>')
    for x, y in cloud.points:
        out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="1.0" fill="#555555"/>')
    for label, color, dash, xy in tracks:
        xy = np.asarray(xy, dtype=float)
        path_d = " ".join(f"{'M' if i == 0 else 'L'}{sx(p[0]):.2f},{sy(p[1]):.2f}"
                          for i, p in enumerate(xy))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<path d="{path_d}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5"{dash_attr}><title>{label}</title></path>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def write_artifacts(art: RunArtifacts, config: ScenarioConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(art, out / "trajectory.csv")
    write_trust_csv(art, out / "trust.csv")
    write_metadata(art, config, out / "metadata.json")
    for k, scan in art.snapshots.items():
        write_scan_csv(scan, out / f"scan_{k:06d}.csv")
    color = "#1f77b4" if art.mode == FT else "#d62728"
    write_world_svg(out / "trajectory.svg", config.cloud, config.sets,
                    [(art.mode, color, "" if art.mode == FT else "6,4", art.states)])
