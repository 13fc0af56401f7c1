"""Compute tiers and network links as calibrated latency/speed profiles.

Link round-trip times are truncated log-normals fitted to measured box
statistics (median, quartiles, whiskers). Because truncating at the whiskers
shifts the body of the distribution, the fit is refined so that the
*truncated* distribution reproduces the target median and IQR exactly; the
closed-form quartile fit alone would miss the IQR by up to ~6% on the
tighter boxes.

Node compute speeds are dimensionless multipliers of the reference (edge)
tier, taken from the ratio of measured solver-execution medians. Per-QP-
iteration cost is anchored so that an iteration-capped solve costs 80 ms on
the edge tier and scales with the node's compute multiplier elsewhere.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import ndtr, ndtri

from .engine import NS_PER_MS

NODE_NAMES = ("plant", "edge", "erdc", "aws")
DISPLAY_NAMES = {"plant": "Plant", "edge": "Edge", "erdc": "ERDC", "aws": "AWS"}

# third-quartile z-score of the standard normal
Z75 = 0.6744897501960817

# iteration-capped solve costs 80 ms on the edge tier with the default cap
CAP_ANCHOR_MS = 80.0
CAP_ANCHOR_ITERS = 2000
REFERENCE_NODE = "edge"

# state-transfer handling cost on top of one link traversal
MIGRATION_HANDLING_MS = 5.0


def fit_lognormal(median: float, q1: float, q3: float) -> tuple[float, float]:
    """(mu, sigma) of a log-normal with the given median whose IQR matches
    q3 - q1. mu is pinned to ln(median); sigma solves
    2*median*sinh(Z75*sigma) = q3 - q1 exactly.
    """
    if q1 > median or median > q3:
        raise ValueError(f"quartiles out of order: q1={q1} median={median} q3={q3}")
    if q1 == q3:
        return (math.log(median) if median > 0 else -math.inf, 0.0)
    if median <= 0:
        raise ValueError("positive median required for a non-degenerate fit")
    sigma = math.asinh((q3 - q1) / (2.0 * median)) / Z75
    return math.log(median), sigma


def _truncated_quantile(p: float, mu: float, sigma: float, lo: float, hi: float) -> float:
    p_lo = ndtr((math.log(lo) - mu) / sigma) if lo > 0 else 0.0
    p_hi = ndtr((math.log(hi) - mu) / sigma)
    return math.exp(mu + sigma * ndtri(p_lo + p * (p_hi - p_lo)))


def fit_truncated_lognormal(median: float, q1: float, q3: float,
                            lo: float, hi: float) -> tuple[float, float]:
    """Fit (mu, sigma) so the [lo, hi]-truncated log-normal has the target
    median and IQR, by fixed-point refinement of the closed-form fit."""
    mu, sigma = fit_lognormal(median, q1, q3)
    if sigma == 0.0:
        return mu, sigma
    target_iqr = q3 - q1
    for _ in range(200):
        med_t = _truncated_quantile(0.5, mu, sigma, lo, hi)
        iqr_t = (_truncated_quantile(0.75, mu, sigma, lo, hi)
                 - _truncated_quantile(0.25, mu, sigma, lo, hi))
        if abs(med_t / median - 1.0) < 1e-12 and abs(iqr_t / target_iqr - 1.0) < 1e-12:
            break
        mu += math.log(median) - math.log(med_t)
        sigma *= target_iqr / iqr_t
    return mu, sigma


@dataclass
class LinkProfile:
    """One-way delays derive from a truncated log-normal RTT distribution."""

    node_a: str
    node_b: str
    median: float       # ms, RTT box statistics
    q1: float
    q3: float
    lo_whisker: float
    hi_whisker: float
    mu: float = field(init=False)
    sigma: float = field(init=False)

    def __post_init__(self):
        if self.median == 0.0 and self.q3 == 0.0:
            self.mu, self.sigma = -math.inf, 0.0
        else:
            self.mu, self.sigma = fit_truncated_lognormal(
                self.median, self.q1, self.q3, self.lo_whisker, self.hi_whisker)

    @property
    def degenerate(self) -> bool:
        return self.sigma == 0.0

    def sample_rtt_ms(self, rng: np.random.Generator) -> float:
        if self.degenerate:
            return self.median
        return _truncated_quantile(rng.random(), self.mu, self.sigma,
                                   self.lo_whisker, self.hi_whisker)

    def sample_one_way_ms(self, rng: np.random.Generator) -> float:
        return self.sample_rtt_ms(rng) / 2.0


def sample_one_way(link: LinkProfile, rng: np.random.Generator) -> int:
    """One-way delay in ns: half an RTT draw, bounded by the halved whiskers."""
    return int(round(link.sample_one_way_ms(rng) * NS_PER_MS))


@dataclass
class OverheadProfile:
    """Per-hop platform delay distributions (log-normal, medians in ms).

    Local hops stay inside one runtime process; remote hops ride the
    inter-node token transport, whose overhead the measurements show to be
    an order of magnitude larger.
    """

    local_median: float = 1.3
    local_sigma: float = 0.25
    remote_median: float = 29.0
    remote_sigma: float = 0.32

    def sample_local_ns(self, rng: np.random.Generator) -> int:
        return int(round(self.local_median * math.exp(self.local_sigma * ndtri(rng.random())) * NS_PER_MS))

    def sample_remote_ns(self, rng: np.random.Generator) -> int:
        return int(round(self.remote_median * math.exp(self.remote_sigma * ndtri(rng.random())) * NS_PER_MS))


@dataclass
class NodeProfile:
    name: str
    exec_median: float          # ms, measured solver execution median
    compute_scale: float        # relative to the reference (edge) tier
    iter_cost: float            # seconds per QP iteration on this node
    jitter_median: float = 0.1  # ms, additive execution jitter
    jitter_sigma: float = 0.5

    def actor_cost_ns(self, base_cost_s: float) -> int:
        return int(round(base_cost_s * self.compute_scale * 1e9))


def mpc_exec_time(node: NodeProfile, iterations: int, rng: np.random.Generator) -> int:
    """Modeled solver wall time in ns: iterations x per-iteration cost plus a
    small log-normal jitter draw."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    jitter_ms = node.jitter_median * math.exp(node.jitter_sigma * ndtri(rng.random()))
    return int(round(iterations * node.iter_cost * 1e9 + jitter_ms * NS_PER_MS))


class ProfileSet:
    """Node, link and overhead profiles loaded from a stats table."""

    def __init__(self, rtt_stats: dict[str, dict[str, float]],
                 exec_stats: dict[str, dict[str, float]],
                 overhead: OverheadProfile):
        self.rtt_stats = rtt_stats
        self.exec_stats = exec_stats
        self.overhead = overhead
        ref_median = exec_stats[REFERENCE_NODE]["median"]
        iter_cost_ref = CAP_ANCHOR_MS / 1000.0 / CAP_ANCHOR_ITERS
        self.nodes: dict[str, NodeProfile] = {}
        for name in NODE_NAMES:
            scale = exec_stats[name]["median"] / ref_median
            self.nodes[name] = NodeProfile(
                name=name,
                exec_median=exec_stats[name]["median"],
                compute_scale=scale,
                iter_cost=iter_cost_ref * scale,
            )
        self.links: dict[tuple[str, str], LinkProfile] = {}
        for name in NODE_NAMES:
            stats = rtt_stats[name]
            self.links[_pair("plant", name)] = LinkProfile(
                "plant", name, stats["median"], stats["q1"], stats["q3"],
                stats["lo_whisker"], stats["hi_whisker"])

    def link(self, a: str, b: str) -> LinkProfile:
        key = _pair(a, b)
        direct = self.links.get(key)
        if direct is not None:
            return direct
        raise KeyError(f"no direct link profile for {a}-{b}")

    def sample_link_rtt_ns(self, a: str, b: str, rng: np.random.Generator) -> int:
        """RTT draw between any two tiers. Pairs not measured directly
        (the DC-to-DC legs) compose through the radio-subnet hub at the
        plant side, which is how the physical topology routes them."""
        key = _pair(a, b)
        direct = self.links.get(key)
        if direct is not None:
            if direct.degenerate and direct.median == 0.0:
                return 0
            return int(round(direct.sample_rtt_ms(rng) * NS_PER_MS))
        via_a = self.links[_pair("plant", a)]
        via_b = self.links[_pair("plant", b)]
        total_ms = via_a.sample_rtt_ms(rng) + via_b.sample_rtt_ms(rng)
        return int(round(total_ms * NS_PER_MS))

    def sample_one_way_ns(self, a: str, b: str, rng: np.random.Generator) -> int:
        return self.sample_link_rtt_ns(a, b, rng) // 2

    def migration_transfer_ns(self, a: str, b: str, rng: np.random.Generator) -> int:
        return self.sample_one_way_ns(a, b, rng) + int(MIGRATION_HANDLING_MS * NS_PER_MS)


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


_BOX_STATS = ("median", "q1", "q3", "lo_whisker", "hi_whisker")


def load_profile_table(path: str | Path | None = None) -> ProfileSet:
    """Load the (entity, stat, value_ms) profile table; None loads the
    packaged defaults mirroring the measured statistics."""
    if path is None:
        ref = resources.files("edgebeam").joinpath("data/profiles.csv")
        text = ref.read_text()
    else:
        text = Path(path).read_text()
    rtt: dict[str, dict[str, float]] = {}
    execs: dict[str, dict[str, float]] = {}
    overhead_raw: dict[str, float] = {}
    for row in csv.DictReader(text.splitlines()):
        entity, stat, value = row["entity"].strip(), row["stat"].strip(), float(row["value_ms"])
        if entity.startswith("rtt.plant-"):
            rtt.setdefault(entity.split("-", 1)[1], {})[stat] = value
        elif entity.startswith("exec."):
            execs.setdefault(entity.split(".", 1)[1], {})[stat] = value
        elif entity.startswith("overhead."):
            overhead_raw[f"{entity.split('.', 1)[1]}.{stat}"] = value
        else:
            raise ValueError(f"unknown profile entity {entity!r}")
    for name in NODE_NAMES:
        for table, kind in ((rtt, "rtt"), (execs, "exec")):
            if name not in table:
                raise ValueError(f"profile table missing {kind} stats for {name!r}")
            missing = [s for s in _BOX_STATS if s not in table[name]]
            if missing and kind == "rtt":
                raise ValueError(f"rtt.{name} missing stats {missing}")
            if "median" not in table[name]:
                raise ValueError(f"exec.{name} missing median")
    overhead = OverheadProfile(
        local_median=overhead_raw.get("local.median", OverheadProfile.local_median),
        local_sigma=overhead_raw.get("local.sigma", OverheadProfile.local_sigma),
        remote_median=overhead_raw.get("remote.median", OverheadProfile.remote_median),
        remote_sigma=overhead_raw.get("remote.sigma", OverheadProfile.remote_sigma),
    )
    return ProfileSet(rtt, execs, overhead)
