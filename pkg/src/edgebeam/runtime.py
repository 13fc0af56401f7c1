"""Dataflow actor layer: actors with token ports, per-node round-robin
firing, placement affinities, and live migration with state transfer.

Transport model. Every actor-to-actor delivery pays a platform overhead
draw; deliveries that cross nodes additionally pay one full link RTT draw
(the token handoff is acknowledged end to end before the sending port
releases, so a one-way data hop costs a round trip at the platform level).
Timer self-loops are exact: the next token lands at nominal + period with no
sampling, keeping the 20 Hz cadence drift-free.

Ordering. Tokens carry a per-connection sequence number. Receivers run a
hold-back buffer: a token is appended to its input queue only when every
lower sequence number has been, so consumption order equals emission order
regardless of path — including tokens rerouted or forwarded mid-migration.

Migration. migrate() pauses the actor (after any firing already committed on
its node's busy chain), snapshots its state through the canonical
serialization, transfers it over the source-to-destination link plus a fixed
handling cost, restores at the destination (round-tripping the bytes, which
is verified), moves the queued tokens with it, and lets in-flight tokens
land at the old node and forward. Nothing is lost or duplicated; the
conservation counters are checkable at any instant.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .control import ControllerState, MpcController
from .engine import Engine
from .netmodel import ProfileSet
from .plant import Measurement, Plant

# per-firing base compute costs (seconds, at the reference tier)
BASE_COST_S = {
    "clock": 0.0002,
    "adc": 0.00015,
    "setpoint": 0.0002,
    "mpc": 0.0002,   # non-solver bookkeeping; the solve itself is modeled separately
    "dac": 0.0004,
}


@dataclass
class Token:
    seq: int
    payload: Any
    produced_at: int
    arrive_t: int = 0
    trace: list = field(default_factory=list)


@dataclass
class MeasSample:
    reading: float
    stamp: int
    queue_ns: int = 0
    net_ns: int = 0
    ovh_ns: int = 0


@dataclass
class Command:
    u: float
    read_stamp: int
    iterations: int
    converged: bool
    exec_ns: int
    mpc_node: str
    setpoint: float
    queue_ns: int = 0
    net_ns: int = 0
    ovh_ns: int = 0


@dataclass
class MigrationReport:
    actor_id: str
    src: str
    dst: str
    initiated_at: int
    completed_at: int = -1
    tokens_forwarded: int = 0
    state_bytes: int = 0

    @property
    def downtime_ns(self) -> int:
        return self.completed_at - self.initiated_at


class Port:
    """FIFO input queue fed by exactly one connection."""

    __slots__ = ("queue", "conn")

    def __init__(self):
        self.queue: deque[Token] = deque()
        self.conn: Optional[Connection] = None


class Connection:
    def __init__(self, cid: int, src: "Actor", src_port: str,
                 dst: "Actor", dst_port: str, self_loop: bool = False):
        self.cid = cid
        self.src = src
        self.src_port = src_port
        self.dst = dst
        self.dst_port = dst_port
        self.self_loop = self_loop
        self.next_seq = 0        # issued at emission
        self.expected_seq = 0    # next seq the receiver may append
        self.consume_seq = 0     # next seq the actor may consume
        self.emitted = 0
        self.delivered = 0       # appended to the input queue
        self.consumed = 0
        self.outstanding = 0     # scheduled deliveries not yet landed
        self.holdback: dict[int, Token] = {}

    def alive_tokens(self) -> int:
        return self.emitted - self.consumed

    def conservation_ok(self) -> bool:
        queued = len(self.dst.in_ports[self.dst_port].queue)
        return self.emitted == self.consumed + queued + len(self.holdback) + self.outstanding


class Actor:
    kind = "actor"
    required_ports: tuple[str, ...] = ()
    sticky_ports: tuple[str, ...] = ()
    out_port_names: tuple[str, ...] = ()

    def __init__(self, actor_id: str, affinity: str | None = None):
        self.actor_id = actor_id
        self.affinity = affinity
        self.node: str = ""
        self.migrating = False
        self.in_ports: dict[str, Port] = {p: Port() for p in
                                          (*self.required_ports, *self.sticky_ports)}
        self.out_conns: dict[str, list[Connection]] = {p: [] for p in self.out_port_names}

    def fireable(self) -> bool:
        return not self.migrating and all(self.in_ports[p].queue for p in self.required_ports)

    def fire(self, app: "App", t: int, consumed: dict[str, Token]) -> tuple[list[tuple[str, Any]], int | None]:
        """Returns (outputs, duration_override_ns); None means the node's
        scaled base cost applies."""
        raise NotImplementedError

    # stateless actors migrate an empty canonical blob
    def state_bytes(self) -> bytes:
        return b""

    def restore_state(self, blob: bytes) -> None:
        if blob != b"":
            raise ValueError(f"{self.actor_id}: unexpected state payload")


class ClockActor(Actor):
    kind = "clock"
    required_ports = ("self",)
    out_port_names = ("self", "tick_pos", "tick_ang")

    def __init__(self, actor_id: str, period_ns: int, affinity: str | None = None):
        super().__init__(actor_id, affinity)
        self.period_ns = period_ns

    def fire(self, app, t, consumed):
        nominal = consumed["self"].payload
        nxt = nominal + self.period_ns
        return [("tick_pos", nominal), ("tick_ang", nominal), ("self", nxt)], None


class SetpointActor(Actor):
    kind = "setpoint"
    required_ports = ("self",)
    out_port_names = ("self", "ref")

    def __init__(self, actor_id: str, period_ns: int, low: float, high: float,
                 affinity: str | None = None):
        super().__init__(actor_id, affinity)
        self.period_ns = period_ns
        self.low = low
        self.high = high
        self.at_high = False

    def fire(self, app, t, consumed):
        nominal = consumed["self"].payload
        value = self.high if self.at_high else self.low
        self.at_high = not self.at_high
        return [("ref", value), ("self", nominal + self.period_ns)], None

    def state_bytes(self) -> bytes:
        return bytes([1 if self.at_high else 0])

    def restore_state(self, blob: bytes) -> None:
        self.at_high = blob == b"\x01"


class AdcActor(Actor):
    kind = "adc"
    required_ports = ("tick",)
    out_port_names = ("out",)

    def __init__(self, actor_id: str, channel: str, affinity: str | None = None):
        super().__init__(actor_id, affinity)
        if channel not in ("pos", "ang"):
            raise ValueError(f"unknown ADC channel {channel!r}")
        self.channel = channel

    def fire(self, app, t, consumed):
        m = app.plant.read(t)
        reading = m.pos_reading if self.channel == "pos" else m.ang_reading
        # the conversion occupies the node between the read and the emission;
        # accounted in the queueing bucket of the latency decomposition
        cost = app.nodes[self.node].profile.actor_cost_ns(BASE_COST_S["adc"])
        return [("out", MeasSample(reading=reading, stamp=t, queue_ns=cost))], cost


class MpcActor(Actor):
    kind = "mpc"
    required_ports = ("pos", "ang")
    sticky_ports = ("setpoint",)
    out_port_names = ("u",)

    def __init__(self, actor_id: str, controller: MpcController,
                 affinity: str | None = None, run_id: int = 0):
        super().__init__(actor_id, affinity)
        self.controller = controller
        self.cs: ControllerState = controller.new_state(run_id)

    def fire(self, app, t, consumed):
        # drain the sticky setpoint port; last value wins, held in state
        sp_port = self.in_ports["setpoint"]
        while sp_port.queue:
            tok = sp_port.queue.popleft()
            sp_port.conn.consumed += 1
            sp_port.conn.consume_seq += 1
            self.cs.setpoint = float(tok.payload)

        pos_tok, ang_tok = consumed["pos"], consumed["ang"]
        pos, ang = pos_tok.payload, ang_tok.payload
        meas = Measurement(pos_reading=pos.reading, ang_reading=ang.reading,
                           stamp=pos.stamp)
        u, report = self.controller.step(self.cs, meas)
        node = app.nodes[self.node]
        exec_ns = app.exec_time_ns(node.profile, report.iterations)
        cmd = Command(
            u=u, read_stamp=pos.stamp, iterations=report.iterations,
            converged=report.converged, exec_ns=exec_ns, mpc_node=self.node,
            setpoint=report.setpoint,
            queue_ns=pos.queue_ns + (t - pos_tok.arrive_t),
            net_ns=pos.net_ns, ovh_ns=pos.ovh_ns,
        )
        return [("u", cmd)], exec_ns

    def state_bytes(self) -> bytes:
        return self.cs.to_bytes()

    def restore_state(self, blob: bytes) -> None:
        self.cs = ControllerState.from_bytes(blob)


class DacActor(Actor):
    kind = "dac"
    required_ports = ("u",)
    out_port_names = ()

    def fire(self, app, t, consumed):
        tok = consumed["u"]
        cmd: Command = tok.payload
        app.plant.actuate(t, cmd.u)
        cmd.queue_ns += t - tok.arrive_t
        if app.on_actuation is not None:
            app.on_actuation(t, cmd, app.plant)
        return [], None


ACTOR_KINDS = ("clock", "adc", "setpoint", "mpc", "dac")


@dataclass
class ActorSpec:
    actor_id: str
    kind: str
    node: str
    affinity: str | None = None
    options: dict = field(default_factory=dict)


@dataclass
class ConnectionSpec:
    src: str   # "actor.port"
    dst: str
    self_loop: bool = False
    prime_at: int | None = None  # ns at which the first self-loop token lands


@dataclass
class AppGraph:
    actors: list[ActorSpec]
    connections: list[ConnectionSpec]


def standard_graph(mpc_node: str, clock_period_ns: int, setpoint_period_ns: int,
                   setpoint_low: float, setpoint_high: float) -> AppGraph:
    """The measurement app: one clock ticking two converters, a setpoint
    source, the controller, and the actuator. Converters and actuator are
    pinned to the plant node."""
    return AppGraph(
        actors=[
            ActorSpec("clock", "clock", "plant", options={"period_ns": clock_period_ns}),
            ActorSpec("adc_pos", "adc", "plant", affinity="plant", options={"channel": "pos"}),
            ActorSpec("adc_ang", "adc", "plant", affinity="plant", options={"channel": "ang"}),
            ActorSpec("setpoint", "setpoint", "plant", options={
                "period_ns": setpoint_period_ns, "low": setpoint_low, "high": setpoint_high}),
            ActorSpec("mpc", "mpc", mpc_node),
            ActorSpec("dac", "dac", "plant", affinity="plant"),
        ],
        connections=[
            ConnectionSpec("clock.self", "clock.self", self_loop=True, prime_at=clock_period_ns),
            ConnectionSpec("clock.tick_pos", "adc_pos.tick"),
            ConnectionSpec("clock.tick_ang", "adc_ang.tick"),
            ConnectionSpec("adc_pos.out", "mpc.pos"),
            ConnectionSpec("adc_ang.out", "mpc.ang"),
            ConnectionSpec("setpoint.self", "setpoint.self", self_loop=True, prime_at=0),
            ConnectionSpec("setpoint.ref", "mpc.setpoint"),
            ConnectionSpec("mpc.u", "dac.u"),
        ],
    )


class Node:
    def __init__(self, name: str, profile):
        self.name = name
        self.profile = profile
        self.actors: list[Actor] = []
        self.rot_idx = 0
        self.busy_until = 0
        self.pass_pending = False


class DeploymentError(ValueError):
    pass


class App:
    """One deployed application graph on the tiered infrastructure."""

    def __init__(self, engine: Engine, profiles: ProfileSet, plant: Plant,
                 mpc_controller: MpcController | None = None):
        self.engine = engine
        self.profiles = profiles
        self.plant = plant
        self.mpc_controller = mpc_controller
        self.nodes: dict[str, Node] = {name: Node(name, prof)
                                       for name, prof in profiles.nodes.items()}
        self.actors: dict[str, Actor] = {}
        self.connections: list[Connection] = []
        self.on_actuation: Optional[Callable] = None
        self.migrations: list[MigrationReport] = []
        self._active_migrations: set[str] = set()
        # overridable transport samplers (tests inject adversarial draws)
        self.rtt_sampler = self._default_rtt
        self.local_overhead_sampler = self._default_local_ovh
        self.remote_overhead_sampler = self._default_remote_ovh

    # -- samplers -----------------------------------------------------------

    def _default_rtt(self, a: str, b: str) -> int:
        rng = self.engine.rng_stream(f"net.{min(a, b)}-{max(a, b)}")
        return self.profiles.sample_link_rtt_ns(a, b, rng)

    def _default_local_ovh(self, node: str) -> int:
        return self.profiles.overhead.sample_local_ns(self.engine.rng_stream(f"ovh.local.{node}"))

    def _default_remote_ovh(self, a: str, b: str) -> int:
        return self.profiles.overhead.sample_remote_ns(self.engine.rng_stream("ovh.remote"))

    def exec_time_ns(self, node_profile, iterations: int) -> int:
        from .netmodel import mpc_exec_time
        return mpc_exec_time(node_profile, iterations,
                             self.engine.rng_stream(f"exec.{node_profile.name}"))

    # -- deployment ---------------------------------------------------------

    def deploy(self, graph: AppGraph) -> None:
        for spec in graph.actors:
            if spec.node not in self.nodes:
                raise DeploymentError(f"unknown node {spec.node!r}")
            if spec.affinity is not None and spec.node != spec.affinity:
                raise DeploymentError(
                    f"actor {spec.actor_id!r} requires node {spec.affinity!r}, "
                    f"placed on {spec.node!r}")
            actor = self._make_actor(spec)
            actor.node = spec.node
            self.actors[spec.actor_id] = actor
            self.nodes[spec.node].actors.append(actor)

        cid = 0
        for cspec in graph.connections:
            src_id, src_port = cspec.src.split(".")
            dst_id, dst_port = cspec.dst.split(".")
            src, dst = self.actors[src_id], self.actors[dst_id]
            if src_port not in src.out_conns:
                raise DeploymentError(f"{src_id} has no out port {src_port!r}")
            if dst_port not in dst.in_ports:
                raise DeploymentError(f"{dst_id} has no in port {dst_port!r}")
            if dst.in_ports[dst_port].conn is not None:
                raise DeploymentError(f"in port {cspec.dst} already connected")
            conn = Connection(cid, src, src_port, dst, dst_port, self_loop=cspec.self_loop)
            cid += 1
            src.out_conns[src_port].append(conn)
            dst.in_ports[dst_port].conn = conn
            self.connections.append(conn)
            if cspec.self_loop:
                if cspec.prime_at is None:
                    raise DeploymentError(f"self loop {cspec.src} needs prime_at")
                self._schedule_delivery(conn, cspec.prime_at, cspec.prime_at, cspec.prime_at)
        self._check_acyclic()

    def _make_actor(self, spec: ActorSpec) -> Actor:
        o = spec.options
        if spec.kind == "clock":
            return ClockActor(spec.actor_id, o["period_ns"], spec.affinity)
        if spec.kind == "adc":
            return AdcActor(spec.actor_id, o["channel"], spec.affinity)
        if spec.kind == "setpoint":
            return SetpointActor(spec.actor_id, o["period_ns"], o["low"], o["high"],
                                 spec.affinity)
        if spec.kind == "mpc":
            if self.mpc_controller is None:
                raise DeploymentError("graph contains an mpc actor but no controller was supplied")
            return MpcActor(spec.actor_id, self.mpc_controller, spec.affinity,
                            run_id=self.engine.master_seed)
        if spec.kind == "dac":
            return DacActor(spec.actor_id, spec.affinity)
        raise DeploymentError(f"unknown actor kind {spec.kind!r}")

    def _check_acyclic(self) -> None:
        adj: dict[str, list[str]] = {}
        for conn in self.connections:
            if conn.self_loop:
                continue
            adj.setdefault(conn.src.actor_id, []).append(conn.dst.actor_id)
        seen: dict[str, int] = {}

        def visit(v: str) -> None:
            seen[v] = 1
            for w in adj.get(v, ()):
                state = seen.get(w, 0)
                if state == 1:
                    raise DeploymentError(f"cycle through {w!r} (only declared self-loops allowed)")
                if state == 0:
                    visit(w)
            seen[v] = 2

        for actor_id in self.actors:
            if seen.get(actor_id, 0) == 0:
                visit(actor_id)

    # -- transport ----------------------------------------------------------

    def _emit(self, actor: Actor, port: str, payload: Any, at: int) -> None:
        for conn in actor.out_conns[port]:
            if conn.self_loop:
                # payload carries the nominal next-arrival time
                self._schedule_delivery(conn, payload, max(int(payload), at), at)
                continue
            dst_node = conn.dst.node
            if actor.node == dst_node:
                net = 0
                ovh = self.local_overhead_sampler(actor.node)
            else:
                net = self.rtt_sampler(actor.node, dst_node)
                ovh = self.remote_overhead_sampler(actor.node, dst_node)
            _accumulate(payload, net, ovh)
            self._schedule_delivery(conn, payload, at + net + ovh, at)

    def _schedule_delivery(self, conn: Connection, payload: Any,
                           deliver_at: int, produced_at: int) -> None:
        token = Token(seq=conn.next_seq, payload=payload, produced_at=produced_at)
        conn.next_seq += 1
        conn.emitted += 1
        conn.outstanding += 1
        self.engine.schedule_at(deliver_at, self._deliver,
                                (conn, token, conn.dst.node),
                                target=f"deliver.{conn.src.actor_id}.{conn.src_port}")

    def _deliver(self, args) -> None:
        conn, token, target_node = args
        now = self.engine.now()
        actor = conn.dst
        if actor.node != target_node:
            # landed where the actor used to live: forward over the network
            hop_net = self.rtt_sampler(target_node, actor.node)
            hop_ovh = self.remote_overhead_sampler(target_node, actor.node)
            _accumulate(token.payload, hop_net, hop_ovh)
            self.engine.schedule_at(now + hop_net + hop_ovh, self._deliver,
                                    (conn, token, actor.node),
                                    target=f"forward.{actor.actor_id}")
            return
        conn.outstanding -= 1
        if token.seq == conn.expected_seq:
            self._append(conn, token, now)
            while conn.expected_seq in conn.holdback:
                self._append(conn, conn.holdback.pop(conn.expected_seq), now)
        else:
            conn.holdback[token.seq] = token
        self._request_pass(self.nodes[actor.node], now)

    def _append(self, conn: Connection, token: Token, now: int) -> None:
        token.arrive_t = now
        token.trace.append((conn.dst.node, token.produced_at, now))
        conn.dst.in_ports[conn.dst_port].queue.append(token)
        conn.expected_seq += 1
        conn.delivered += 1

    # -- scheduling ---------------------------------------------------------

    def _request_pass(self, node: Node, at: int) -> None:
        if node.pass_pending:
            return
        node.pass_pending = True
        self.engine.schedule_at(max(at, self.engine.now()), self._pass_handler, node,
                                target=f"round.{node.name}")

    def _pass_handler(self, node: Node) -> None:
        node.pass_pending = False
        self.fire_round(node.name)

    def fire_round(self, node_name: str) -> int:
        """Fire each currently-fireable resident actor at most once, in
        rotation order, occupying the node serially in virtual time."""
        node = self.nodes[node_name]
        t = max(self.engine.now(), node.busy_until)
        ring = list(node.actors)
        n = len(ring)
        fired = 0
        for k in range(n):
            idx = (node.rot_idx + k) % n if n else 0
            actor = ring[idx]
            if not actor.fireable():
                continue
            consumed: dict[str, Token] = {}
            for p in actor.required_ports:
                port = actor.in_ports[p]
                tok = port.queue.popleft()
                if tok.seq != port.conn.consume_seq:
                    raise RuntimeError(
                        f"FIFO breach on {port.conn.src.actor_id}->{actor.actor_id}: "
                        f"seq {tok.seq} consumed, expected {port.conn.consume_seq}")
                port.conn.consume_seq += 1
                port.conn.consumed += 1
                consumed[p] = tok
            outputs, override = actor.fire(self, t, consumed)
            duration = override if override is not None else \
                node.profile.actor_cost_ns(BASE_COST_S[actor.kind])
            t += duration
            for port_name, payload in outputs:
                self._emit(actor, port_name, payload, at=t)
            fired += 1
            node.rot_idx = (idx + 1) % n
        node.busy_until = t
        if any(a.fireable() for a in node.actors):
            self._request_pass(node, node.busy_until)
        return fired

    # -- migration ----------------------------------------------------------

    def migrate(self, actor_id: str, dest: str) -> MigrationReport:
        if dest not in self.nodes:
            raise ValueError(f"unknown destination node {dest!r}")
        actor = self.actors[actor_id]
        if actor.migrating:
            raise RuntimeError(f"{actor_id} is already migrating")
        if actor.affinity is not None and dest != actor.affinity:
            raise DeploymentError(
                f"actor {actor_id!r} requires node {actor.affinity!r}, cannot migrate to {dest!r}")
        now = self.engine.now()
        blob = actor.state_bytes()
        report = MigrationReport(actor_id=actor_id, src=actor.node, dst=dest,
                                 initiated_at=now, state_bytes=len(blob))
        if dest == actor.node:
            report.completed_at = now
            self.migrations.append(report)
            return report

        actor.migrating = True
        src_node = self.nodes[actor.node]
        t_pause = max(now, src_node.busy_until)
        snapshot = actor.state_bytes()  # state after any committed firings
        report.state_bytes = len(snapshot)
        rng = self.engine.rng_stream(f"mig.{min(actor.node, dest)}-{max(actor.node, dest)}")
        transfer = self.profiles.migration_transfer_ns(actor.node, dest, rng)
        self._active_migrations.add(actor_id)
        self.engine.schedule_at(t_pause + transfer, self._complete_migration,
                                (actor, dest, snapshot, report),
                                target=f"migrate.{actor_id}")
        self.migrations.append(report)
        return report

    def _complete_migration(self, args) -> None:
        actor, dest, snapshot, report = args
        actor.restore_state(snapshot)
        if actor.state_bytes() != snapshot:
            raise RuntimeError(
                f"state transfer mismatch for {actor.actor_id}: restored state "
                f"does not re-serialize byte-identically")
        old_node = self.nodes[actor.node]
        idx = old_node.actors.index(actor)
        old_node.actors.pop(idx)
        if idx < old_node.rot_idx:
            old_node.rot_idx -= 1
        if old_node.actors:
            old_node.rot_idx %= len(old_node.actors)
        else:
            old_node.rot_idx = 0
        new_node = self.nodes[dest]
        new_node.actors.append(actor)
        actor.node = dest
        actor.migrating = False
        forwarded = sum(c.alive_tokens() for c in self.connections
                        if c.dst is actor and not c.self_loop)
        report.tokens_forwarded = forwarded
        report.completed_at = self.engine.now()
        self._active_migrations.discard(actor.actor_id)
        self._request_pass(new_node, self.engine.now())

    # -- invariants ---------------------------------------------------------

    def conservation_report(self) -> dict[int, dict[str, int]]:
        out = {}
        for conn in self.connections:
            out[conn.cid] = {
                "emitted": conn.emitted,
                "consumed": conn.consumed,
                "queued": len(conn.dst.in_ports[conn.dst_port].queue),
                "holdback": len(conn.holdback),
                "outstanding": conn.outstanding,
                "ok": conn.conservation_ok(),
            }
        return out

    def conservation_ok(self) -> bool:
        return all(c.conservation_ok() for c in self.connections)


def _accumulate(payload, net_ns: int, ovh_ns: int) -> None:
    if isinstance(payload, (MeasSample, Command)):
        payload.net_ns += net_ns
        payload.ovh_ns += ovh_ns
