"""The three reproducible experiments: long-horizon baseline, continuous
random migration, and tightened constraints near the beam end.

All three share one driver: deploy the measurement graph, alternate the
setpoint, collect one MetricRecord per actuation. Differences:

  baseline    - MPC pinned to one node; an off-beam ball respawns at the
                center after a fixed delay and the affected samples are
                flagged so summaries stay comparable.
  migration   - every migration_period the MPC moves to a uniformly random
                *different* node; state integrity and token conservation are
                hard-checked at each move.
  constrained - input box tightened, setpoint just short of the beam end,
                iteration cap biting; the run ends when the ball leaves the
                beam (the panel terminates, matching how the experiment is
                reported).
"""

from __future__ import annotations

from dataclasses import dataclass

from .control import MpcConfig, MpcController
from .engine import Engine, seconds_to_ns
from .metrics import MetricRecord
from .netmodel import NODE_NAMES, ProfileSet, load_profile_table
from .plant import Plant, PlantParams
from .runtime import App, Command, MigrationReport, standard_graph

SCENARIO_KINDS = ("baseline", "migration", "constrained")


@dataclass
class ScenarioConfig:
    kind: str = "baseline"
    placement: str = "edge"
    duration_s: float = 600.0
    master_seed: int = 1
    setpoint_low: float = 0.0
    setpoint_high: float = 0.30
    setpoint_period_s: float = 60.0
    migration_period_s: float = 10.0
    u_bound_tight: float | None = None
    respawn_delay_s: float = 5.0
    settle_exclude_s: float = 5.0

    def validate(self, plant: PlantParams) -> list[str]:
        problems = []
        if self.kind not in SCENARIO_KINDS:
            problems.append(f"unknown scenario kind {self.kind!r}")
        if self.placement not in NODE_NAMES and not (self.kind == "constrained" and self.placement == "all"):
            problems.append(f"unknown placement {self.placement!r}; valid: {', '.join(NODE_NAMES)}")
        if self.duration_s < 0:
            problems.append("duration_s must be nonnegative")
        margin = plant.half_length - abs(self.setpoint_high)
        if self.kind == "baseline" and margin < 0.15:
            problems.append(
                f"baseline setpoint {self.setpoint_high} m leaves {margin * 100:.1f} cm to the "
                f"beam end; need >= 15 cm margin")
        if self.kind == "constrained":
            if margin > 0.05:
                problems.append(
                    f"constrained setpoint {self.setpoint_high} m leaves {margin * 100:.1f} cm; "
                    f"must be within 5 cm of the beam end")
            if self.u_bound_tight is None or self.u_bound_tight <= 0:
                problems.append("constrained scenario needs a positive u_bound_tight")
        if self.setpoint_period_s <= 0:
            problems.append("setpoint_period_s must be positive")
        if self.kind == "migration" and self.migration_period_s <= 0:
            problems.append("migration_period_s must be positive")
        return problems


@dataclass
class RunResult:
    records: list[MetricRecord]
    migrations: list[MigrationReport]
    ticks_emitted: int
    conservation_ok: bool
    off_beam_events: int
    solver_failures: int
    respawns: int
    in_flight_at_end: int

    @property
    def completed_records(self) -> int:
        return len(self.records)


class _Driver:
    def __init__(self, cfg: ScenarioConfig, plant_params: PlantParams,
                 mpc_cfg: MpcConfig, profiles: ProfileSet, placement: str):
        self.cfg = cfg
        self.engine = Engine(master_seed=cfg.master_seed)
        self.plant = Plant(plant_params,
                           process_rng=self.engine.rng_stream("plant.process"),
                           meas_rng=self.engine.rng_stream("plant.meas"))
        controller = MpcController(mpc_cfg, plant_params)
        self.app = App(self.engine, profiles, self.plant, mpc_controller=controller)
        graph = standard_graph(
            mpc_node=placement,
            clock_period_ns=seconds_to_ns(mpc_cfg.h),
            setpoint_period_ns=seconds_to_ns(cfg.setpoint_period_s),
            setpoint_low=cfg.setpoint_low,
            setpoint_high=cfg.setpoint_high,
        )
        self.app.deploy(graph)
        self.app.on_actuation = self._record
        self.records: list[MetricRecord] = []
        self.pending_marker: tuple[str, str] | None = None
        self.off_beam_events = 0
        self.respawns = 0
        self.solver_failures = 0
        self._respawn_scheduled = False
        self._exclude_until: int | None = None
        self._was_off = False
        self.stop_at_off_beam = cfg.kind == "constrained"
        self._stopped = False

    def _record(self, t: int, cmd: Command, plant: Plant) -> None:
        if self._stopped:
            return
        off = plant.state.off_beam
        if off and not self._was_off:
            self.off_beam_events += 1
            if not self.stop_at_off_beam and not self._respawn_scheduled:
                self._respawn_scheduled = True
                self.engine.schedule(seconds_to_ns(self.cfg.respawn_delay_s),
                                     self._respawn, target="respawn")
        self._was_off = off
        if not cmd.converged:
            self.solver_failures += 1
        rec = MetricRecord(
            t=t, mpc_node=cmd.mpc_node, exec_ns=cmd.exec_ns,
            latency_ns=t - cmd.read_stamp,
            u=cmd.u, u_sq=cmd.u * cmd.u,
            position=plant.state.pos, setpoint=cmd.setpoint,
            solved=cmd.converged, off_beam=off,
            net_ns=cmd.net_ns, ovh_ns=cmd.ovh_ns, queue_ns=cmd.queue_ns,
            excluded=off or (self._exclude_until is not None and t < self._exclude_until),
        )
        if self.pending_marker is not None:
            rec.migrate_from, rec.migrate_to = self.pending_marker
            self.pending_marker = None
        self.records.append(rec)
        if off and self.stop_at_off_beam:
            self._stopped = True

    def _respawn(self, _payload) -> None:
        self.plant.respawn(self.engine.now())
        self._respawn_scheduled = False
        self._was_off = False
        self.respawns += 1
        self._exclude_until = self.engine.now() + seconds_to_ns(self.cfg.settle_exclude_s)

    def _schedule_migrations(self) -> None:
        period = seconds_to_ns(self.cfg.migration_period_s)
        chooser = self.engine.rng_stream("migration.chooser")

        def do_migrate(_payload):
            if self.engine.now() >= seconds_to_ns(self.cfg.duration_s):
                return
            current = self.app.actors["mpc"].node
            options = [n for n in NODE_NAMES if n != current]
            dest = options[int(chooser.integers(0, len(options)))]
            report = self.app.migrate("mpc", dest)
            if not self.app.conservation_ok():
                raise RuntimeError("token conservation breach at migration start")
            self.pending_marker = (report.src, report.dst)
            self.engine.schedule(period, do_migrate, target="migration.timer")

        self.engine.schedule(period, do_migrate, target="migration.timer")

    def run(self) -> RunResult:
        t_end = seconds_to_ns(self.cfg.duration_s)
        if self.cfg.kind == "migration":
            self._schedule_migrations()
        if self.stop_at_off_beam:
            chunk = seconds_to_ns(1.0)
            t = 0
            while t < t_end and not self._stopped:
                t = min(t + chunk, t_end)
                self.engine.run_until(t)
        else:
            self.engine.run_until(t_end)

        if not self.app.conservation_ok():
            raise RuntimeError("token conservation breach at end of run")
        clock_conn = next(c for c in self.app.connections
                          if c.self_loop and c.src.actor_id == "clock")
        ticks = clock_conn.consumed
        in_flight = ticks - len(self.records)
        return RunResult(
            records=self.records,
            migrations=list(self.app.migrations),
            ticks_emitted=ticks,
            conservation_ok=True,
            off_beam_events=self.off_beam_events,
            solver_failures=self.solver_failures,
            respawns=self.respawns,
            in_flight_at_end=in_flight,
        )


def _mpc_for(cfg: ScenarioConfig, base: MpcConfig) -> MpcConfig:
    if cfg.kind == "constrained" and cfg.u_bound_tight is not None:
        return MpcConfig(
            h=base.h, horizon=base.horizon, q_diag=base.q_diag, r_weight=base.r_weight,
            u_min=-cfg.u_bound_tight, u_max=cfg.u_bound_tight,
            x_bounds=base.x_bounds, soft_penalty=base.soft_penalty,
            max_iter_cap=base.max_iter_cap, tol=base.tol)
    return base


def run_scenario(cfg: ScenarioConfig, plant_params: PlantParams | None = None,
                 mpc_cfg: MpcConfig | None = None,
                 profiles: ProfileSet | None = None,
                 placement: str | None = None) -> RunResult:
    plant_params = plant_params or PlantParams()
    mpc_cfg = _mpc_for(cfg, mpc_cfg or MpcConfig())
    profiles = profiles or load_profile_table()
    problems = cfg.validate(plant_params)
    if problems:
        raise ValueError("; ".join(problems))
    driver = _Driver(cfg, plant_params, mpc_cfg, profiles, placement or cfg.placement)
    return driver.run()


def run_baseline(cfg: ScenarioConfig, **kw) -> RunResult:
    if cfg.kind != "baseline":
        raise ValueError("config kind must be 'baseline'")
    return run_scenario(cfg, **kw)


def run_migration(cfg: ScenarioConfig, **kw) -> RunResult:
    if cfg.kind != "migration":
        raise ValueError("config kind must be 'migration'")
    return run_scenario(cfg, **kw)


def run_constrained(cfg: ScenarioConfig, **kw) -> RunResult:
    if cfg.kind != "constrained":
        raise ValueError("config kind must be 'constrained'")
    return run_scenario(cfg, **kw)
