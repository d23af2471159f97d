"""Compile version-update scenarios into explicit, auditable training plans.

A TrainingPlan is a topologically ordered list of phases.  Each phase
fully determines its learning-rate profile, its data segments and the
checkpoint it initializes from, so a trainer can execute it without any
further decisions.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from . import schedule as sched
from .errors import AlphaDegenerate, InvalidSpec, PlanViolation
from .schedule import (
    INFINITE,
    LRSeries,
    ScheduleConfig,
    ScheduleKind,
    decay_segment,
    lr_at,
    validate_config,
)


class PathKind(str, Enum):
    MAIN = "main"
    BRANCH = "branch"
    SCRATCH = "scratch"


class CptVariant(str, Enum):
    REWARM_MAX = "rewarm_max"
    RESET_MAX = "reset_max"
    KEEP_MIN = "keep_min"


@dataclass(frozen=True)
class Paradigm:
    """PTFS, a CPT variant, or path switching with fast-decay fraction alpha."""

    family: str  # "ptfs" | "cpt" | "path_switch" | "two_stage_probe"
    variant: Optional[CptVariant] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.family not in ("ptfs", "cpt", "path_switch", "two_stage_probe"):
            raise InvalidSpec(f"unknown paradigm family {self.family!r}")
        if self.family == "cpt" and self.variant is None:
            raise InvalidSpec("cpt paradigm requires a variant")
        if self.family == "path_switch":
            if self.alpha is None or not (0.0 <= self.alpha <= 1.0):
                raise InvalidSpec(f"alpha must lie in [0, 1], got {self.alpha}")

    @staticmethod
    def ptfs() -> "Paradigm":
        return Paradigm("ptfs")

    @staticmethod
    def cpt(variant: CptVariant = CptVariant.RESET_MAX) -> "Paradigm":
        return Paradigm("cpt", variant=CptVariant(variant))

    @staticmethod
    def path_switch(alpha: float) -> "Paradigm":
        return Paradigm("path_switch", alpha=float(alpha))

    @property
    def label(self) -> str:
        if self.family == "cpt":
            return f"cpt:{self.variant.value}"
        if self.family == "path_switch":
            return f"path_switch:{self.alpha:g}"
        return self.family


@dataclass(frozen=True)
class UpdateSpec:
    """A version-update scenario: how many versions, how much data per update."""

    num_versions: int
    increments: tuple[int, ...]  # training steps added per version
    base_schedule: ScheduleConfig  # horizon ignored; set per phase
    seed: int = 0

    def replace(self, **kwargs) -> "UpdateSpec":
        return dataclasses.replace(self, **kwargs)


def uniform_spec(
    num_versions: int,
    steps_per_version: int,
    base_schedule: ScheduleConfig,
    seed: int = 0,
) -> UpdateSpec:
    return UpdateSpec(
        num_versions=num_versions,
        increments=(steps_per_version,) * num_versions,
        base_schedule=base_schedule,
        seed=seed,
    )


def validate_spec(spec: UpdateSpec) -> None:
    if spec.num_versions < 1:
        raise InvalidSpec(f"num_versions must be >= 1, got {spec.num_versions}")
    if len(spec.increments) != spec.num_versions:
        raise InvalidSpec(
            f"expected {spec.num_versions} increments, got {len(spec.increments)}"
        )
    if any(t < 1 for t in spec.increments):
        raise InvalidSpec("all increments must be >= 1 step")
    validate_config(spec.base_schedule)
    if spec.base_schedule.warmup_steps >= spec.increments[0]:
        raise InvalidSpec(
            f"warmup_steps ({spec.base_schedule.warmup_steps}) must be smaller "
            f"than the first increment ({spec.increments[0]})"
        )


@dataclass(frozen=True)
class SegmentRef:
    """Which slice of which data increment a phase consumes."""

    increment: int  # 1-based increment index
    part: str  # "full" | "prefix" | "remainder"

    @property
    def ref_id(self) -> str:
        return f"inc{self.increment}/{self.part}"


@dataclass(frozen=True)
class ScheduleProfile:
    """LR given by a schedule evaluated at offset + local step."""

    config: ScheduleConfig
    offset: int = 0

    def lr(self, local_step: int) -> float:
        return lr_at(self.config, self.offset + local_step)


@dataclass(frozen=True)
class SeriesProfile:
    """LR given pointwise by a materialized series (local steps 0..n-1)."""

    series: LRSeries

    def lr(self, local_step: int) -> float:
        return self.series.points[local_step][1]


LRProfile = Union[ScheduleProfile, SeriesProfile]


@dataclass(frozen=True)
class Phase:
    phase_id: str
    version: int
    path: PathKind
    init_from: Optional[str]  # phase_id of the producing phase, None = fresh init
    num_steps: int
    lr_profile: LRProfile
    data_segments: tuple[SegmentRef, ...]
    emits_version_checkpoint: bool


@dataclass(frozen=True)
class TrainingPlan:
    paradigm: Paradigm
    spec: UpdateSpec
    phases: tuple[Phase, ...]

    def phase(self, phase_id: str) -> Phase:
        for p in self.phases:
            if p.phase_id == phase_id:
                return p
        raise KeyError(phase_id)


def _constant_profile(base: ScheduleConfig, warmup: int) -> ScheduleProfile:
    cfg = ScheduleConfig(
        kind=ScheduleKind.CONSTANT,
        eta_max=base.eta_max,
        eta_min=base.eta_min,
        warmup_steps=warmup,
        horizon=INFINITE,
    )
    return ScheduleProfile(cfg)


def _main_prefix_steps(alpha: float, t: int) -> int:
    # ceil((1 - alpha) * t) with a guard against float slop just below an
    # integer; ties and remainders favor the main path.
    return t - math.floor(alpha * t + 1e-9)


def build_plan(kind: Paradigm, spec: UpdateSpec) -> TrainingPlan:
    """Compile (paradigm, scenario) into an explicit phase sequence."""
    validate_spec(spec)
    base = spec.base_schedule
    inc = spec.increments
    n = spec.num_versions
    phases: list[Phase] = []

    if kind.family == "ptfs":
        for i in range(1, n + 1):
            horizon = sum(inc[:i])
            cfg = base.replace(horizon=horizon)
            phases.append(
                Phase(
                    phase_id=f"v{i}-scratch",
                    version=i,
                    path=PathKind.SCRATCH,
                    init_from=None,
                    num_steps=horizon,
                    lr_profile=ScheduleProfile(cfg),
                    data_segments=tuple(SegmentRef(j, "full") for j in range(1, i + 1)),
                    emits_version_checkpoint=True,
                )
            )

    elif kind.family == "cpt":
        # Version 1 is a plain scratch run with a full decay; identical to
        # the PTFS first phase by construction.
        cfg1 = base.replace(horizon=inc[0])
        phases.append(
            Phase(
                phase_id="v1-scratch",
                version=1,
                path=PathKind.SCRATCH,
                init_from=None,
                num_steps=inc[0],
                lr_profile=ScheduleProfile(cfg1),
                data_segments=(SegmentRef(1, "full"),),
                emits_version_checkpoint=True,
            )
        )
        for i in range(2, n + 1):
            t = inc[i - 1]
            if kind.variant is CptVariant.RESET_MAX:
                cfg = base.replace(warmup_steps=0, horizon=t)
            elif kind.variant is CptVariant.REWARM_MAX:
                if base.warmup_steps >= t:
                    raise InvalidSpec(
                        f"rewarm warmup ({base.warmup_steps}) must be smaller "
                        f"than increment {i} ({t})"
                    )
                cfg = base.replace(horizon=t)
            else:  # KEEP_MIN: constant eta_min for the whole update
                cfg = ScheduleConfig(
                    kind=ScheduleKind.CONSTANT,
                    eta_max=base.eta_min,
                    eta_min=base.eta_min,
                    warmup_steps=0,
                    horizon=INFINITE,
                )
            phases.append(
                Phase(
                    phase_id=f"v{i}-cpt",
                    version=i,
                    path=PathKind.MAIN,
                    init_from=phases[-1].phase_id,
                    num_steps=t,
                    lr_profile=ScheduleProfile(cfg),
                    data_segments=(SegmentRef(i, "full"),),
                    emits_version_checkpoint=True,
                )
            )

    elif kind.family == "path_switch":
        alpha = kind.alpha
        main_tip: Optional[str] = None
        for i in range(1, n + 1):
            t = inc[i - 1]
            m = _main_prefix_steps(alpha, t)
            b = t - m
            if b < 1:
                raise AlphaDegenerate(
                    f"alpha={alpha} leaves no fast-decay steps for "
                    f"increment {i} (T={t})"
                )
            fork = main_tip
            if m > 0:
                warm = base.warmup_steps if i == 1 else 0
                mp = Phase(
                    phase_id=f"v{i}-main",
                    version=i,
                    path=PathKind.MAIN,
                    init_from=main_tip,
                    num_steps=m,
                    lr_profile=_constant_profile(base, warm),
                    data_segments=(SegmentRef(i, "prefix"),),
                    emits_version_checkpoint=False,
                )
                phases.append(mp)
                fork = mp.phase_id
            phases.append(
                Phase(
                    phase_id=f"v{i}-branch",
                    version=i,
                    path=PathKind.BRANCH,
                    init_from=fork,
                    num_steps=b,
                    lr_profile=SeriesProfile(decay_segment(base, b)),
                    data_segments=(SegmentRef(i, "remainder"),),
                    emits_version_checkpoint=True,
                )
            )
            if i < n:
                cp = Phase(
                    phase_id=f"v{i}-cont",
                    version=i,
                    path=PathKind.MAIN,
                    init_from=fork,
                    num_steps=b,
                    lr_profile=_constant_profile(base, 0),
                    data_segments=(SegmentRef(i, "remainder"),),
                    emits_version_checkpoint=False,
                )
                phases.append(cp)
                main_tip = cp.phase_id

    else:
        raise InvalidSpec(f"build_plan does not handle family {kind.family!r}")

    return TrainingPlan(paradigm=kind, spec=spec, phases=tuple(phases))


def plan_cost(plan: TrainingPlan) -> int:
    """Total training steps; shared path-switch prefixes appear once."""
    return sum(p.num_steps for p in plan.phases)


def build_two_stage_probe(
    first_cycle: float,
    fork_step: int,
    second_cycle: float,
    second_len: int,
    spec: UpdateSpec,
) -> TrainingPlan:
    """Two-stage LR probe: scratch run forked into a continual run.

    Stage 1 trains from scratch under a cosine schedule with cycle length
    `first_cycle` and checkpoints at `fork_step`; stage 2 resumes from that
    checkpoint for `second_len` steps under a cosine cycle of
    `second_cycle`, starting at offset 0 with no warmup.  Stage 1 consumes
    the first data increment, stage 2 the second.
    """
    if fork_step < 1 or second_len < 1:
        raise InvalidSpec("fork_step and second_len must be >= 1")
    if first_cycle != INFINITE and fork_step > first_cycle:
        raise InvalidSpec(
            f"fork_step ({fork_step}) exceeds first cycle ({first_cycle})"
        )
    base = spec.base_schedule
    probe_spec = spec.replace(
        num_versions=2, increments=(fork_step, second_len)
    )
    validate_spec(probe_spec)
    cfg1 = base.replace(kind=ScheduleKind.COSINE, horizon=first_cycle)
    cfg2 = base.replace(
        kind=ScheduleKind.COSINE, warmup_steps=0, horizon=second_cycle
    )
    if second_cycle != INFINITE and second_len > second_cycle:
        # the cycle ends before the probe does; hold eta_min afterwards
        points = tuple(
            (s, lr_at(cfg2, s) if s <= second_cycle else base.eta_min)
            for s in range(second_len)
        )
        profile2: LRProfile = SeriesProfile(LRSeries(points))
    else:
        profile2 = ScheduleProfile(cfg2)
    stage1 = Phase(
        phase_id="stage1",
        version=1,
        path=PathKind.SCRATCH,
        init_from=None,
        num_steps=fork_step,
        lr_profile=ScheduleProfile(cfg1),
        data_segments=(SegmentRef(1, "full"),),
        emits_version_checkpoint=True,
    )
    stage2 = Phase(
        phase_id="stage2",
        version=2,
        path=PathKind.BRANCH,
        init_from="stage1",
        num_steps=second_len,
        lr_profile=profile2,
        data_segments=(SegmentRef(2, "full"),),
        emits_version_checkpoint=True,
    )
    return TrainingPlan(
        paradigm=Paradigm("two_stage_probe"),
        spec=probe_spec,
        phases=(stage1, stage2),
    )


def equalize_cpt_cost(spec: UpdateSpec, alpha: float) -> UpdateSpec:
    """Inflate a CPT scenario so its total cost matches path switching.

    Each update's step budget grows by its share of the fast-decay
    overhead; the integer remainder goes to the earliest updates so the
    totals match exactly.
    """
    if not (0.0 <= alpha <= 1.0):
        raise InvalidSpec(f"alpha must lie in [0, 1], got {alpha}")
    validate_spec(spec)
    n = spec.num_versions
    if n == 1 or alpha == 0.0:
        return spec
    extra = round(alpha * sum(spec.increments[:-1]))
    total = sum(spec.increments) + extra
    per, rem = divmod(total, n)
    increments = tuple(per + 1 if i < rem else per for i in range(n))
    return spec.replace(increments=increments)


def _ancestors(plan: TrainingPlan, phase: Phase) -> list[Phase]:
    chain = []
    by_id = {p.phase_id: p for p in plan.phases}
    cur = phase
    while cur.init_from is not None:
        cur = by_id[cur.init_from]
        chain.append(cur)
    return chain


def validate_plan(plan: TrainingPlan) -> None:
    """Check structural plan invariants; raise PlanViolation on the first."""
    seen: set[str] = set()
    emitted: dict[int, str] = {}
    eta_max = plan.spec.base_schedule.eta_max
    eta_min = plan.spec.base_schedule.eta_min
    rel = lambda a, b: abs(a - b) / max(abs(b), 1e-300)

    for phase in plan.phases:
        pid = phase.phase_id
        if pid in seen:
            raise PlanViolation(pid, "duplicate phase_id")
        if phase.init_from is not None and phase.init_from not in seen:
            raise PlanViolation(pid, f"init_from {phase.init_from!r} not an earlier phase")
        seen.add(pid)
        if phase.num_steps < 1:
            raise PlanViolation(pid, "num_steps must be >= 1")
        profile = phase.lr_profile
        if isinstance(profile, SeriesProfile):
            if len(profile.series) != phase.num_steps:
                raise PlanViolation(pid, "lr series length differs from num_steps")
        else:
            h = profile.config.horizon
            if h != INFINITE and profile.offset + phase.num_steps - 1 > h:
                raise PlanViolation(pid, "schedule horizon shorter than phase")
        if len(set(phase.data_segments)) != len(phase.data_segments):
            raise PlanViolation(pid, "duplicate data segment within phase")
        if phase.emits_version_checkpoint:
            if phase.version in emitted:
                raise PlanViolation(
                    pid, f"version {phase.version} already emitted by {emitted[phase.version]}"
                )
            emitted[phase.version] = pid

    for v in range(1, plan.spec.num_versions + 1):
        if v not in emitted:
            raise PlanViolation(f"version {v}", "no phase emits this version")

    # Path-switch geometry: branches decay completely, main phases hold
    # eta_max after warmup; no trajectory consumes a segment twice.
    for phase in plan.phases:
        first = phase.lr_profile.lr(0)
        last = phase.lr_profile.lr(phase.num_steps - 1)
        if phase.path is PathKind.BRANCH and plan.paradigm.family == "path_switch":
            if first > eta_max * (1 + 1e-12):
                raise PlanViolation(phase.phase_id, "branch starts above eta_max")
            if rel(last, eta_min) > 1e-12:
                raise PlanViolation(phase.phase_id, "branch does not end at eta_min")
        if (
            phase.path is PathKind.MAIN
            and plan.paradigm.family == "path_switch"
            and isinstance(phase.lr_profile, ScheduleProfile)
        ):
            warm = phase.lr_profile.config.warmup_steps
            if phase.num_steps - 1 >= warm and rel(last, eta_max) > 1e-12:
                raise PlanViolation(phase.phase_id, "main path departs from eta_max")
        refs = [r for a in _ancestors(plan, phase) for r in a.data_segments]
        refs.extend(phase.data_segments)
        if len(set(refs)) != len(refs):
            raise PlanViolation(phase.phase_id, "trajectory consumes a segment twice")


# ---------------------------------------------------------------------------
# serialization

def paradigm_to_dict(p: Paradigm) -> dict:
    d = {"family": p.family}
    if p.variant is not None:
        d["variant"] = p.variant.value
    if p.alpha is not None:
        d["alpha"] = p.alpha
    return d


def paradigm_from_dict(d: dict) -> Paradigm:
    return Paradigm(
        family=d["family"],
        variant=CptVariant(d["variant"]) if "variant" in d else None,
        alpha=d.get("alpha"),
    )


def spec_to_dict(spec: UpdateSpec) -> dict:
    return {
        "num_versions": spec.num_versions,
        "increments": list(spec.increments),
        "base_schedule": sched.config_to_dict(spec.base_schedule),
        "seed": spec.seed,
    }


def spec_from_dict(d: dict) -> UpdateSpec:
    return UpdateSpec(
        num_versions=int(d["num_versions"]),
        increments=tuple(int(t) for t in d["increments"]),
        base_schedule=sched.config_from_dict(d["base_schedule"]),
        seed=int(d.get("seed", 0)),
    )


def _profile_to_dict(profile: LRProfile) -> dict:
    if isinstance(profile, ScheduleProfile):
        return {
            "type": "schedule",
            "config": sched.config_to_dict(profile.config),
            "offset": profile.offset,
        }
    return {
        "type": "series",
        "points": [[s, lr] for s, lr in profile.series.points],
    }


def _profile_from_dict(d: dict) -> LRProfile:
    if d["type"] == "schedule":
        return ScheduleProfile(sched.config_from_dict(d["config"]), int(d["offset"]))
    return SeriesProfile(LRSeries(tuple((int(s), float(lr)) for s, lr in d["points"])))


def plan_to_dict(plan: TrainingPlan) -> dict:
    return {
        "paradigm": paradigm_to_dict(plan.paradigm),
        "spec": spec_to_dict(plan.spec),
        "phases": [
            {
                "phase_id": p.phase_id,
                "version": p.version,
                "path": p.path.value,
                "init_from": p.init_from,
                "num_steps": p.num_steps,
                "lr": _profile_to_dict(p.lr_profile),
                "data_segments": [r.ref_id for r in p.data_segments],
                "emits_version_checkpoint": p.emits_version_checkpoint,
            }
            for p in plan.phases
        ],
    }


def plan_to_json(plan: TrainingPlan) -> str:
    return json.dumps(plan_to_dict(plan), indent=2) + "\n"


def plan_from_dict(d: dict) -> TrainingPlan:
    phases = tuple(
        Phase(
            phase_id=p["phase_id"],
            version=int(p["version"]),
            path=PathKind(p["path"]),
            init_from=p["init_from"],
            num_steps=int(p["num_steps"]),
            lr_profile=_profile_from_dict(p["lr"]),
            data_segments=tuple(
                SegmentRef(int(r.split("/")[0][3:]), r.split("/")[1])
                for r in p["data_segments"]
            ),
            emits_version_checkpoint=bool(p["emits_version_checkpoint"]),
        )
        for p in d["phases"]
    )
    return TrainingPlan(
        paradigm=paradigm_from_dict(d["paradigm"]),
        spec=spec_from_dict(d["spec"]),
        phases=phases,
    )
