"""The learning control loop and the three comparison agents.

One episode moves every block to the goal area (or burns the action
budget). Per action the loop proposes a grasp/place/push pose from each
particle world, fuses them by weight, plans a trajectory against the
belief snapshot, executes it in the noisy real world, replays the same
commanded trajectory in every particle world, reweighs and resamples the
particles, and rebuilds the outcome model from the experience pool.

Agent kinds differ only in which learning channels are active:
  TMOC   - everything on
  TMP_RL - particle set frozen at its initial draw (no size learning)
  GP     - plans picked uniformly from the satisficing set (outcome model
           still learned but unused for plan choice)
  TOEP   - grasp poses get a random lateral offset and the grasp height
           parameter is never adapted
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import filter as pfilter
from . import mapping, planner, symbols, transitions
from .mapping import Configuration, MotionFailure, StateMapping
from .physics import scene
from .physics.world import SimulationFault, World, canonical_props
from .planner import CostFunction, Plan, push_completes_task
from .symbols import GOAL_LOC
from .transitions import ConfigError, ExperiencePool, context_of

log = logging.getLogger(__name__)

AGENT_KINDS = ("TMOC", "TMP_RL", "GP", "TOEP")

MAX_ACTIONS = 60
HILL_CLIMB_WINDOW = 16
HILL_CLIMB_STEP = 0.08
TOEP_OFFSET_FRAC = 0.25
# joint resampling starves coordinates that have not produced evidence yet;
# after this many straight real grasp failures on one block, that block's
# size coordinate is redrawn from the prior for a fraction of particles
REINJECT_AFTER = 6
REINJECT_FRAC = 0.25
# per-action decay of outcome counts (evidence half-life ~700 actions, so a
# stale context re-earns optimism a handful of times per 500-episode run)
COUNT_DECAY = 0.999


@dataclass(frozen=True)
class AgentBehavior:
    learn_sizes: bool
    utility_planning: bool
    mapped_grasp: bool
    adapt_offset: bool


_BEHAVIORS = {
    "TMOC": AgentBehavior(True, True, True, True),
    "TMP_RL": AgentBehavior(False, True, True, True),
    "GP": AgentBehavior(True, False, True, True),
    "TOEP": AgentBehavior(True, True, False, False),
}


def agent_behavior(kind: str) -> AgentBehavior:
    if kind not in _BEHAVIORS:
        raise ConfigError(f"unknown agent kind {kind!r}")
    return _BEHAVIORS[kind]


def make_baseline(kind: str) -> AgentBehavior:
    """Behavior switches for one of the baseline agents (not TMOC)."""
    if kind == "TMOC":
        raise ConfigError("TMOC is the full agent, not a baseline")
    return agent_behavior(kind)


@dataclass(frozen=True)
class ActionEvent:
    action_type: str
    load: int
    success: bool
    task_completing: bool


def utility_ledger(events, cost: CostFunction) -> float:
    """Bonuses minus costs minus penalties over a sequence of ActionEvents.

    Stacks pay per successful block; the push bonus lands on the delivery
    that completes the task; every attempt pays its action cost and every
    failed action the failure penalty.
    """
    total = 0.0
    for e in events:
        total -= cost.action_cost(e.action_type)
        if e.success:
            if e.action_type == "stack":
                total += cost.stack_bonus
            elif e.action_type == "push" and e.task_completing:
                total += cost.push_bonus
        else:
            total -= cost.failure_penalty
    return total


@dataclass
class EpisodeRecord:
    episode_index: int
    agent: str
    compositions: tuple        # composition of each plan adopted this episode
    events: tuple              # ActionEvents in execution order
    utility: float
    plan_was_optimal: bool
    action_success_rate: float
    ess_mean: float
    size_estimate: np.ndarray
    size_variance: np.ndarray
    aborted: bool = False

    @property
    def first_composition(self):
        return self.compositions[0] if self.compositions else ()


class Session:
    """Persistent learning state for one agent across episodes."""

    def __init__(self, kind: str, domain, truth_sizes, *, n_particles=50,
                 seed=0, noise_scale=1.0, cost: CostFunction = None,
                 m_known=5, sim_weight=0.2, resample_mode="ess",
                 prior=None, plan_filter=None, oracle_compositions=None,
                 replan_each_trip=True):
        self.kind = kind
        self.behavior = agent_behavior(kind)
        self.domain = domain
        self.truth_sizes = np.asarray(truth_sizes, dtype=float)
        self.noise_scale = float(noise_scale)
        self.cost = cost or CostFunction()
        self.sim_weight = float(sim_weight)
        self.resample_mode = resample_mode
        self.plan_filter = plan_filter
        self.oracle_compositions = (
            set(oracle_compositions) if oracle_compositions else None)
        self.replan_each_trip = replan_each_trip
        self.seed = int(seed)

        n_blocks = len(domain.blocks)
        if prior is None:
            prior = np.tile(scene.SIZE_PRIOR, (n_blocks, 1))
        self.prior = np.asarray(prior, dtype=float)

        ss = np.random.SeedSequence(self.seed)
        s_particles, s_plan, s_motion, s_offset, s_explore = ss.spawn(5)
        self.particles = pfilter.init_particles(
            n_particles, self.prior, seed=s_particles.generate_state(1)[0])
        self.plan_rng = np.random.default_rng(s_plan)
        self.motion_rng = np.random.default_rng(s_motion)
        self.offset_rng = np.random.default_rng(s_offset)
        self.explore_rng = np.random.default_rng(s_explore)

        self.tmodel = transitions.init_optimistic(m_known)
        self.pool = ExperiencePool(retain=4 * (n_particles + 1))
        self.mapping = StateMapping()
        self._grasp_history = []
        self._offset_prev = None
        self._offset_prev_rate = None
        self._fail_streak = np.zeros(n_blocks, dtype=int)
        self.episodes_run = 0
        self.record_traces = False
        self.last_trace = None
        self.last_trace_seed = None
        self.last_real_world = None

    # ------------------------------------------------------------ planning

    def _plan(self, s) -> Plan:
        if self.behavior.utility_planning:
            return planner.plan(self.domain, s, self.domain.goal, self.tmodel,
                                self.cost, plan_filter=self.plan_filter)
        satisficing = planner.enumerate_satisficing(
            self.domain, s, self.domain.goal, max_plans=1 << 12,
            plan_filter=self.plan_filter)
        pick = int(self.plan_rng.integers(0, len(satisficing)))
        chosen = satisficing[pick]
        return Plan(chosen.steps,
                    planner.expected_utility(chosen.steps, self.tmodel, self.cost))

    # ------------------------------------------------------------- Y tweak

    def _note_grasp(self, success: bool) -> None:
        if not self.behavior.adapt_offset:
            return
        self._grasp_history.append(bool(success))
        if len(self._grasp_history) < HILL_CLIMB_WINDOW:
            return
        rate = sum(self._grasp_history) / len(self._grasp_history)
        self._grasp_history = []
        current = self.mapping.grasp_offset
        if self._offset_prev is not None and rate < self._offset_prev_rate:
            # perturbation hurt; go back
            self.mapping.grasp_offset = self._offset_prev
            self._offset_prev_rate = rate
        else:
            self._offset_prev = current
            self._offset_prev_rate = rate
            proposal = current + float(
                self.offset_rng.uniform(-HILL_CLIMB_STEP, HILL_CLIMB_STEP))
            self.mapping.grasp_offset = float(np.clip(proposal, 0.05, 0.9))

    def _random_grasp_offset(self, estimated_width: float) -> float:
        """Lateral grasp perturbation for agents that do not map poses:
        uniform within +-25% of the estimated block width."""
        lim = TOEP_OFFSET_FRAC * estimated_width
        return float(self.offset_rng.uniform(-lim, lim))

    def _note_streak(self, a, success: bool) -> None:
        if a.schema.name != "pickup":
            return
        k = [b.name for b in self.domain.blocks].index(a.obj("B").name)
        if success:
            self._fail_streak[k] = 0
        else:
            self._fail_streak[k] += 1

    def _maybe_reinject(self, a) -> None:
        """Partial prior reinjection for a starved size coordinate."""
        if a.schema.name != "pickup":
            return
        k = [b.name for b in self.domain.blocks].index(a.obj("B").name)
        if self._fail_streak[k] == 0 or \
                self._fail_streak[k] % REINJECT_AFTER != 0:
            return
        ps = self.particles
        count = max(2, int(REINJECT_FRAC * ps.n))
        picks = self.explore_rng.choice(ps.n, size=count, replace=False)
        lo, hi = ps.prior[k]
        est = float(pfilter.estimate(ps)[k])
        sizes = ps.sizes.copy()
        half = count // 2
        # half local rescue around the current estimate, half broad redraw
        sizes[picks[:half], k] = np.clip(
            est + self.explore_rng.normal(0.0, 0.05, size=half), lo, hi)
        sizes[picks[half:], k] = self.explore_rng.uniform(
            lo, hi, size=count - half)
        worlds = list(ps.worlds)
        for i in picks:
            if worlds[i] is not None:
                worlds[i].set_block_sizes(sizes[i])
        self.particles = ps.replace(sizes=sizes, worlds=worlds)

    # ------------------------------------------------------------- running

    def _episode_seed(self, episode: int, stream: int) -> int:
        return int(np.random.SeedSequence(
            (self.seed, episode, stream)).generate_state(1)[0])

    def _build_worlds(self, episode: int):
        real = World(self.domain,
                     canonical_props(self.domain, self.truth_sizes),
                     seed=self._episode_seed(episode, 0),
                     noise_scale=self.noise_scale)
        real.settle()
        worlds = []
        for i in range(self.particles.n):
            w = World(self.domain,
                      canonical_props(self.domain, self.particles.sizes[i]),
                      seed=self._episode_seed(episode, 1 + i), noise_scale=0.0)
            w.settle()
            worlds.append(w)
        self.particles = self.particles.replace(worlds=worlds)
        return real

    def _recovery_blocks(self, s, a, s_real) -> list:
        """Blocks to send home after a failed action."""
        kind = a.schema.name
        if kind == "pickup":
            return []
        if kind == "stack":
            lost = [a.obj("B").name]
            for f in s:
                if f.predicate == "at_container" and \
                        f not in s_real:
                    lost.append(f.args[0])
            return sorted(set(lost))
        # failed push: the whole payload goes back
        return sorted(f.args[0] for f in s if f.predicate == "at_container")

    def _apply_recovery(self, real, a, blocks) -> None:
        for w in [real] + list(self.particles.worlds):
            if w is None:
                continue
            if w.attached >= 0:
                w.detach()
            w.return_to_init(blocks)
            if a.schema.name == "push":
                w.teleport(self.domain.container.name, scene.CONTAINER_X,
                           scene.CONTAINER_BASE_HALF[1] + w._container_com_dy,
                           0.0, wake="self")
            w.settle()

    def run_episode(self, episode: int) -> EpisodeRecord:
        dom = self.domain
        real = self._build_worlds(episode)
        worlds = self.particles.worlds
        s = mapping.extract_state(real.props())

        plan = self._plan(s)
        compositions = [plan.composition]
        queue = list(plan.actions)
        events = []
        ess_values = []
        aborted = False
        trace = [] if self.record_traces else None

        while not symbols.goal_satisfied(s, dom.goal) and len(events) < MAX_ACTIONS:
            if not queue:
                plan = self._plan(s)
                compositions.append(plan.composition)
                queue = list(plan.actions)
            a = queue.pop(0)
            if not symbols.applicable(s, a):
                plan = self._plan(s)
                compositions.append(plan.composition)
                queue = list(plan.actions)
                continue
            ctx = context_of(s, a)

            poses = []
            for i in range(self.particles.n):
                poses.append(mapping.map_pose(
                    self.mapping, s, a, worlds[i].props()))
            fused = mapping.fuse_poses(poses, self.particles.weights)
            if a.schema.name == "pickup":
                # a repeatedly failing averaged grip carries no new evidence
                # (the pose average is blind to a multimodal posterior), so
                # the commanded opening is dithered, ramping up with the
                # block's failure streak and vanishing while grasps work
                k = [b.name for b in dom.blocks].index(a.obj("B").name)
                scale = 0.005 + 0.035 * min(int(self._fail_streak[k]), 8)
                dither = float(self.explore_rng.normal(0.0, scale))
                grip = float(np.clip(fused.grip + dither, 0.0, scene.GRIP_MAX))
                fused = Configuration(fused.x, fused.y, grip)
            if a.schema.name == "pickup" and not self.behavior.mapped_grasp:
                jitter = self._random_grasp_offset(
                    max(fused.grip - scene.GRIP_SLACK, 0.1))
                fused = Configuration(fused.x + jitter, fused.y, fused.grip)

            estimates = pfilter.estimate(self.particles)
            override = {b.name: float(estimates[k])
                        for k, b in enumerate(dom.blocks)}
            if a.schema.name == "pickup":
                exclude = (a.obj("B").name,)
            elif a.schema.name == "stack":
                # the stack is the intended contact zone; planning against a
                # belief-sized copy of it just vetoes every place pose
                exclude = tuple(
                    f.args[0] for f in s if f.predicate == "at_container")
            else:
                exclude = ()
            snapshot = real.obstacle_boxes(exclude=exclude,
                                           size_override=override)
            held = None
            if a.schema.name == "stack":
                k = [b.name for b in dom.blocks].index(a.obj("B").name)
                held = mapping.held_footprint(
                    float(estimates[k]), float(estimates[k]),
                    self.mapping.grasp_offset)
            x_curr = Configuration(*real.gripper_config())
            try:
                traj = mapping.plan_motion(x_curr, fused, snapshot, held=held,
                                           rng=self.motion_rng)
            except MotionFailure as exc:
                log.warning("motion failure on %s: %s", a.name, exc)
                events.append(ActionEvent(a.schema.name, ctx.load, False,
                                          push_completes_task(s, a)))
                recovered = self._recovery_blocks(s, a, s)
                self._apply_recovery(real, a, recovered)
                if trace is not None:
                    trace.append((None, None, {
                        "recover": list(recovered),
                        "restage": a.schema.name == "push"}))
                s = mapping.extract_state(real.props())
                plan = self._plan(s)
                compositions.append(plan.composition)
                queue = list(plan.actions)
                continue

            try:
                outcome = real.execute(traj, a)
            except SimulationFault as exc:
                log.error("simulation fault, aborting episode: %s", exc)
                aborted = True
                break
            s_real = mapping.extract_state(outcome.l_prime)
            post_ops = {}
            if trace is not None:
                trace.append((traj, a, post_ops))
            step_entries = [transitions.PoolEntry(
                s, a, s_real, "real", episode, len(events))]
            self.pool.add(s, a, s_real, "real", episode, len(events))

            sim_states = []
            w0 = traj.waypoints[0]
            for i in range(self.particles.n):
                w = worlds[i]
                w.sync_gripper(w0.x, w0.y)
                try:
                    out_i = w.execute(traj, a)
                    s_i = mapping.extract_state(out_i.l_prime)
                except SimulationFault:
                    s_i = frozenset()
                self.pool.add(s, a, s_i, f"simulated_{i}", episode, len(events))
                step_entries.append(transitions.PoolEntry(
                    s, a, s_i, f"simulated_{i}", episode, len(events)))
                sim_states.append(s_i)

            self._note_streak(a, s_real == symbols.apply(s, a))
            if self.behavior.learn_sizes:
                self.particles = pfilter.weigh(self.particles, s_real, sim_states)
                self.particles = pfilter.resample(self.particles,
                                                  mode=self.resample_mode)
                self._maybe_reinject(a)
                worlds = self.particles.worlds
            ess_values.append(pfilter.ess(self.particles))

            # counts are additive, so folding in this action's tuples equals
            # rebuilding from the full pool; old evidence ages out so stale
            # early-phase pessimism gets re-probed with current skills
            self.tmodel = transitions.update_from_entries(
                transitions.decay_counts(self.tmodel, COUNT_DECAY),
                step_entries, sim_weight=self.sim_weight)

            success = s_real == symbols.apply(s, a)
            completing = push_completes_task(s, a)
            events.append(ActionEvent(a.schema.name, ctx.load, success,
                                      completing))
            if a.schema.name == "pickup":
                self._note_grasp(success)

            if success:
                s = symbols.advance(dom, s, a)
                if a.schema.name == "push" and a.obj("L2").name == GOAL_LOC:
                    for w in [real] + list(worlds):
                        bx, by = w.container_base_center()
                        if scene.in_region(bx, by, scene.GOAL_REGION):
                            w.unload_cargo()
                            if w is real:
                                post_ops["unload"] = True
                        w.settle()
                    if self.replan_each_trip and not symbols.goal_satisfied(
                            s, dom.goal):
                        plan = self._plan(s)
                        compositions.append(plan.composition)
                        queue = list(plan.actions)
            else:
                recovered = self._recovery_blocks(s, a, s_real)
                self._apply_recovery(real, a, recovered)
                post_ops["recover"] = list(recovered)
                post_ops["restage"] = a.schema.name == "push"
                s = mapping.extract_state(real.props())
                if not symbols.goal_satisfied(s, dom.goal):
                    plan = self._plan(s)
                    compositions.append(plan.composition)
                    queue = list(plan.actions)

        if trace is not None:
            self.last_trace = trace
            self.last_trace_seed = self._episode_seed(episode, 0)
            self.last_real_world = real
        utility = utility_ledger(events, self.cost)
        optimal = (self.oracle_compositions is not None
                   and compositions[0] in self.oracle_compositions)
        n_success = sum(1 for e in events if e.success)
        record = EpisodeRecord(
            episode_index=episode,
            agent=self.kind,
            compositions=tuple(compositions),
            events=tuple(events),
            utility=utility,
            plan_was_optimal=bool(optimal),
            action_success_rate=(n_success / len(events)) if events else 1.0,
            ess_mean=float(np.mean(ess_values)) if ess_values else float(
                self.particles.n),
            size_estimate=pfilter.estimate(self.particles).copy(),
            size_variance=pfilter.size_variance(self.particles).copy(),
            aborted=aborted,
        )
        self.episodes_run += 1
        return record


def run_episode(session: Session, episode: int) -> EpisodeRecord:
    return session.run_episode(episode)
