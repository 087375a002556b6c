"""Experiment harness: collect, train, evaluate, ablate, sweep, report.

Every cell (collection, training, evaluation) is a pure function of its
seeds; rerunning a cell writes byte-identical episode files, checkpoints,
and reports. All outputs live under a run directory with a hash manifest.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bundle import PolicyBundle, load_bundle, save_bundle
from .denoiser import MlpDenoiser
from .diffusion import loss_and_grad, make_schedule
from .episodes import CurationFlag, Episode, EpisodeStore, FailureMode, Label
from .errors import ContractViolation, NumericError
from .hands import planar_gripper_model
from .observations import Observation
from .optim import AdamWConfig, OptimState, opt_step
from .oracle import OracleActor, RandomActor, config_triple, quantize_action, scripted_demo
from .policy import (
    PolicyConfig,
    build_dataset_arrays,
    condition_dim,
    fit_normalizer,
    horizon_slice,
    make_encoder,
)
from .poses import ReprMode
from .protocol import build_manifest, check_config_ratio, curate, make_reset_scene, training_view
from .scheduler import ChunkBuffer, TimedAction, needs_replan, pop_due, push_chunk
from .sim import (
    SIM_DT,
    TaskSpec,
    load_snapshot,
    observe,
    pick_place_task,
    precise_insert_task,
    reset,
    save_snapshot,
    slot_sort_task,
    step,
    success,
)

TASK_MAKERS = {
    "pick_place": pick_place_task,
    "slot_sort": slot_sort_task,
    "precise_insert": precise_insert_task,
}

ABLATION_LABELS = {
    "i": "absolute actions",
    "ii": "incorrect relative base frame",
    "iii": "single task configuration",
    "iv": "unfiltered data",
    "v": "no self-correction data",
    "vi": "full recipe",
}


# ---------------------------------------------------------------------------
# Collection (protocol steps 1-3 and 5)
# ---------------------------------------------------------------------------


@dataclass
class CollectConfig:
    n_episodes: int = 300
    correction_fraction: float = 0.3
    sloppy_fraction: float = 0.10
    fail_fraction: float = 0.04
    episodes_per_config: int = 100
    single_config: bool = False  # diversity ablation
    cameras: tuple[str, ...] = ()
    image_size: int = 32
    collector_id: str = "collector:sim-oracle"
    curator_id: str = "curator:auto"


def _episode_seed(dataset_seed: int, index: int) -> int:
    return int(np.random.SeedSequence((dataset_seed, index)).generate_state(1)[0])


def collect(store: EpisodeStore, task: str, seed: int,
            cfg: CollectConfig | None = None) -> dict:
    """Run the collection protocol into ``store`` and return a report.

    The task config rotates every ``episodes_per_config`` episodes, the
    simulator adds distractors in about half the episodes, the collector
    labels every episode, an automatic curator (a different id) flags
    non-stable grasps / erratic motion / ambiguous completions, and the
    requested fraction of episodes are self-correction recoveries whose
    staged failure states are also saved as reset scenes.
    """
    cfg = cfg or CollectConfig()
    spec = TASK_MAKERS[task]()
    draw = np.random.default_rng(np.random.SeedSequence((seed, 0xC0)))
    flags: dict[str, set[CurationFlag]] = {}
    n_scenes = 0

    for i in range(cfg.n_episodes):
        u = draw.uniform()
        if u < cfg.correction_fraction:
            style = "with_failure_then_correct"
        elif u < cfg.correction_fraction + cfg.sloppy_fraction:
            style = "sloppy"
        elif u < cfg.correction_fraction + cfg.sloppy_fraction + cfg.fail_fraction:
            style = "budget_cut"
        else:
            style = "clean"

        config_id = 0 if cfg.single_config else i // cfg.episodes_per_config
        ep_seed = _episode_seed(seed, i)
        eid = f"{task}-s{seed:04d}-{i:05d}"
        demo_spec = replace(spec, max_steps=25) if style == "budget_cut" else spec
        demo_style = "clean" if style == "budget_cut" else style
        mode = list(FailureMode)[i % 3] if style == "with_failure_then_correct" else None
        result = scripted_demo(demo_spec, ep_seed, demo_style, cameras=cfg.cameras,
                               image_size=cfg.image_size, task_config_id=config_id,
                               failure_mode=mode, episode_id=eid,
                               collector_id=cfg.collector_id)
        store.write_episode(result.episode)
        if result.failure_snapshot and n_scenes < 12:
            scene = make_reset_scene(f"{eid}-failure", result.episode.meta.failure_mode,
                                     result.failure_snapshot,
                                     source_annotation=f"staged during {eid}")
            store.save_reset_scene(scene)
            n_scenes += 1
        if result.episode.meta.label is Label.SUCCESS:
            ep_flags = _curation_flags(result.episode, spec)
            if ep_flags:
                flags[eid] = ep_flags

    view = curate(store, flags, cfg.curator_id, at=0.0)
    manifest = build_manifest(store)
    ratio_report = check_config_ratio(manifest)
    return {
        "n_episodes": cfg.n_episodes,
        "training_view": view,
        "n_flagged": len(flags),
        "n_reset_scenes": n_scenes,
        "config_ratio_status": ratio_report.status,
        "config_ratio_warnings": ratio_report.warnings,
    }


def _curation_flags(episode: Episode, spec: TaskSpec) -> set[CurationFlag]:
    """Step-3 heuristics standing in for the second human curator."""
    flags: set[CurationFlag] = set()
    final = load_snapshot(episode.final_state) if episode.final_state else None

    # erratic motion: high-frequency wobble in the commanded targets
    t = episode.act_ee[:, :3].astype(np.float64)
    if len(t) > 4:
        jerk = np.abs(np.diff(t, n=2, axis=0)).sum(axis=1).mean()
        if jerk > 0.008:
            flags.add(CurationFlag.ERRATIC_MOTION)

    if final is not None:
        obj = final.target_object
        if obj.deformation > 0.15 or \
                (final.event_count("attach") > 1 and not episode.meta.is_correction):
            flags.add(CurationFlag.NON_STABLE_GRASP)
        if spec.kind == "pick_place" and success(final, spec):
            inv = final.task.goal_pose.inverse()
            half = final.task.goal_half_extents
            margins = []
            from .sim import _object_corners

            for corner in _object_corners(obj):
                local = inv.apply([corner[0], corner[1], 0.0])
                margins.append(min(half[0] - abs(local[0]), half[1] - abs(local[1])))
            if min(margins) < 0.004:
                flags.add(CurationFlag.AMBIGUOUS_COMPLETION)
    return flags


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 2600
    batch_size: int = 128
    hidden: tuple[int, ...] = (128, 128)
    time_emb_dim: int = 32
    diffusion_T: int = 100
    schedule: str = "cosine"
    lr: float = 1e-3
    weight_decay: float = 1e-6
    warmup_steps: int = 100
    loss_log_every: int = 50


def train_policy(store: EpisodeStore, view: list[str], policy_cfg: PolicyConfig,
                 train_cfg: TrainConfig, seed: int,
                 meta: dict | None = None) -> tuple[PolicyBundle, list[float]]:
    """Fit a diffusion chunk policy on the given training view.

    Deterministic per seed: the same store, view, configs, and seed produce
    an identical checkpoint. Aborts with diagnostics if the loss diverges.
    """
    if not view:
        raise ContractViolation("training view is empty")
    episodes = [store.read_episode(eid) for eid in sorted(view)]
    hand_dim = episodes[0].obs_hand.shape[1]
    feature_dim = episodes[0].obs_feat.shape[1]

    normalizer = fit_normalizer(episodes, policy_cfg)
    encoder = make_encoder(policy_cfg, feature_dim, seed=seed)
    x0s, conds = build_dataset_arrays(episodes, policy_cfg, normalizer, encoder)

    chunk_dim = policy_cfg.h_a * (9 + hand_dim)
    cond_dim = condition_dim(policy_cfg, hand_dim, encoder.out_dim)
    sched = make_schedule(train_cfg.diffusion_T, train_cfg.schedule)
    denoiser = MlpDenoiser(chunk_dim, cond_dim, hidden=train_cfg.hidden,
                           time_emb_dim=train_cfg.time_emb_dim, seed=seed,
                           eps_scale=MlpDenoiser.schedule_eps_scale(sched.alphas_bar))
    opt_cfg = AdamWConfig(lr=train_cfg.lr, weight_decay=train_cfg.weight_decay,
                          warmup_steps=train_cfg.warmup_steps,
                          total_steps=train_cfg.steps)
    state = OptimState.init(denoiser.n_params, opt_cfg)
    params = denoiser.get_params()
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x714)))

    n = x0s.shape[0]
    curve: list[float] = []
    for it in range(train_cfg.steps):
        idx = rng.integers(0, n, size=min(train_cfg.batch_size, n))
        denoiser.set_params(params)
        loss, grads = loss_and_grad(denoiser, (x0s[idx], conds[idx]), sched, rng)
        if not np.isfinite(loss):
            raise NumericError(f"training diverged at step {it} (loss={loss})")
        params, state = opt_step(params, grads, state)
        if it % train_cfg.loss_log_every == 0 or it == train_cfg.steps - 1:
            curve.append(loss)
    denoiser.set_params(params)

    bundle_meta = {
        "seed": seed,
        "n_train_episodes": len(episodes),
        "n_samples": int(n),
        "final_loss": curve[-1],
        "cameras": [],
        "task": episodes[0].meta.task_name,
    }
    bundle_meta.update(meta or {})
    bundle = PolicyBundle(denoiser, sched, normalizer, policy_cfg, encoder,
                          hand_dim, bundle_meta)
    return bundle, curve


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


OOD_START_OVERRIDES = dict(
    ee_start=((-0.05, 0.35), (-0.28, 0.28)),
    ee_yaw=(-0.7, 0.7),
)


@dataclass
class EvalConfig:
    n_eval: int = 40
    seed: int = 0
    ood_starts: bool = False
    inject_prob: float = 0.0
    inject_modes: tuple[FailureMode, ...] = (FailureMode.UNSTABLE_GRASP,
                                             FailureMode.NO_GRASP)
    latency_s: float = 0.0
    replan_threshold: int = 10
    max_steps: int = 300
    allow_self_correction: bool = True


@dataclass
class EvalOutcome:
    episode_index: int
    outcome: str  # clean | self_corrected | failure
    steps: int
    n_failure_events: int
    injected: str  # mode value or ""


@dataclass
class EvalResult:
    outcomes: list[EvalOutcome]
    solid: float  # clean-only success rate
    dashed: float  # clean + self-corrected

    @staticmethod
    def from_outcomes(outcomes: list[EvalOutcome]) -> "EvalResult":
        n = max(len(outcomes), 1)
        clean = sum(1 for o in outcomes if o.outcome == "clean")
        corrected = sum(1 for o in outcomes if o.outcome == "self_corrected")
        return EvalResult(outcomes, clean / n, (clean + corrected) / n)


FAILURE_EVENTS = ("drop", "miss", "misalign")


def _count_failure_events(state) -> int:
    return sum(state.event_count(e) for e in FAILURE_EVENTS)


def rollout_policy(bundle: PolicyBundle, spec: TaskSpec, episode_seed: int,
                   cfg: EvalConfig, episode_index: int = 0) -> EvalOutcome:
    """One receding-horizon rollout through the scheduler."""
    model = planar_gripper_model()
    eval_spec = replace(spec, **OOD_START_OVERRIDES) if cfg.ood_starts else spec
    state = reset(eval_spec, episode_seed, hand_model=model)
    cameras = tuple(bundle.meta.get("cameras", ()))

    inject_rng = np.random.default_rng(
        np.random.SeedSequence((cfg.seed, episode_index, 0xFA1)))
    inject_mode: FailureMode | None = None
    if cfg.inject_prob > 0 and inject_rng.uniform() < cfg.inject_prob:
        inject_mode = cfg.inject_modes[int(inject_rng.integers(len(cfg.inject_modes)))]
    inject_after_attach = int(inject_rng.integers(4, 14))
    injected = False
    attach_ticks = 0

    noise_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, episode_index, 0xD1)))
    hist: deque[Observation] = deque(maxlen=bundle.cfg.horizon_len)
    buffer = ChunkBuffer(replan_threshold=cfg.replan_threshold)
    pending: tuple[float, list[TimedAction]] | None = None
    chunk_counter = 0
    settle = 0
    steps_done = 0

    if inject_mode is FailureMode.NO_GRASP:
        from .sim import inject_failure

        inject_failure(state, inject_mode)
        injected = True

    def plan(now: float) -> list[TimedAction]:
        nonlocal chunk_counter
        horizon = list(hist)
        while len(horizon) < bundle.cfg.horizon_len:
            first = horizon[0]
            horizon.insert(0, replace(first, timestamp=first.timestamp - SIM_DT))
        chunk = bundle.infer(horizon, now, noise_rng)
        chunk_counter += 1
        return [TimedAction(c.timestamp, c.ee_target, c.hand_targets,
                            chunk_counter, j) for j, c in enumerate(chunk)]

    for k in range(cfg.max_steps):
        now = state.clock
        obs = observe(state, cameras=cameras, hand_model=model)
        hist.append(obs)

        if pending is not None and pending[0] <= now:
            push_chunk(buffer, pending[1], now)
            pending = None
        if len(buffer) == 0 and pending is None:
            push_chunk(buffer, plan(now), now)

        act = pop_due(buffer, now)
        if act is not None:
            pose, hand = quantize_action(act.ee_target, act.hand_targets)
        else:
            pose, hand = state.ee_pose, state.hand_dof.copy()

        if inject_mode is not None and not injected \
                and inject_mode is not FailureMode.NO_GRASP:
            if state.attached_object is not None:
                attach_ticks += 1
                if attach_ticks >= inject_after_attach:
                    from .sim import inject_failure

                    inject_failure(state, inject_mode)
                    injected = True

        step(state, (pose, hand), hand_model=model)
        steps_done = k + 1

        if pending is None and needs_replan(buffer):
            buffer.inference_in_flight = True
            pending = (now + max(cfg.latency_s, SIM_DT / 2), plan(now))

        if success(state, spec) and state.attached_object is None:
            settle += 1
            if settle >= 10:
                break
        else:
            settle = 0

    ok = success(state, spec)
    n_fail = _count_failure_events(state)
    if ok and n_fail == 0:
        outcome = "clean"
    elif ok and cfg.allow_self_correction:
        outcome = "self_corrected"
    else:
        outcome = "failure"
    return EvalOutcome(episode_index, outcome, steps_done, n_fail,
                       inject_mode.value if inject_mode and injected else "")


def rollout_actor(actor, spec: TaskSpec, episode_seed: int, cfg: EvalConfig,
                  episode_index: int = 0) -> EvalOutcome:
    """Rollout for privileged-state actors (oracle upper bound, random baseline)."""
    model = planar_gripper_model()
    eval_spec = replace(spec, **OOD_START_OVERRIDES) if cfg.ood_starts else spec
    state = reset(eval_spec, episode_seed, hand_model=model)
    settle = 0
    steps_done = 0
    for k in range(cfg.max_steps):
        pose, hand = quantize_action(*actor.act(state))
        step(state, (pose, hand), hand_model=model)
        steps_done = k + 1
        if success(state, spec) and state.attached_object is None:
            settle += 1
            if settle >= 10:
                break
        else:
            settle = 0
    ok = success(state, spec)
    n_fail = _count_failure_events(state)
    outcome = "clean" if ok and n_fail == 0 else (
        "self_corrected" if ok and cfg.allow_self_correction else "failure")
    return EvalOutcome(episode_index, outcome, steps_done, n_fail, "")


def evaluate(policy, spec: TaskSpec, cfg: EvalConfig,
             actor_factory=None) -> EvalResult:
    """Evaluate a policy bundle (or, via ``actor_factory``, a scripted actor).

    Per-episode outcomes are {clean, self_corrected, failure}; the solid
    rate counts clean only, the dashed rate also counts self-corrected
    completions (success after at least one detected failure event).
    """
    if cfg.n_eval < 1:
        raise ContractViolation("n_eval must be >= 1")
    outcomes = []
    for i in range(cfg.n_eval):
        ep_seed = int(np.random.SeedSequence((cfg.seed, 0xE7A1, i)).generate_state(1)[0])
        if actor_factory is not None:
            actor = actor_factory(i)
            outcomes.append(rollout_actor(actor, spec, ep_seed, cfg, i))
        else:
            outcomes.append(rollout_policy(policy, spec, ep_seed, cfg, i))
    return EvalResult.from_outcomes(outcomes)


def outcomes_table(result: EvalResult) -> str:
    lines = ["episode\toutcome\tsteps\tn_failure_events\tinjected"]
    for o in result.outcomes:
        lines.append(f"{o.episode_index}\t{o.outcome}\t{o.steps}"
                     f"\t{o.n_failure_events}\t{o.injected}")
    lines.append(f"# solid={result.solid!r} dashed={result.dashed!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


@dataclass
class ExperimentPlan:
    task: str = "pick_place"
    out_dir: str | Path = "runs/suite"
    n_episodes: int = 300
    correction_fraction: float = 0.3
    fractions: tuple[float, ...] = (0.2, 0.5, 1.0)
    ablations: tuple[str, ...] = ("i", "ii", "iii", "iv", "v", "vi")
    n_eval: int = 40
    seeds: tuple[int, ...] = (0, 1, 2)
    eval_inject_prob: float = 0.5
    train: TrainConfig = field(default_factory=TrainConfig)
    cameras: tuple[str, ...] = ()

    def __post_init__(self):
        if self.n_eval < 20:
            raise ContractViolation("reported numbers need n_eval >= 20")
        if any(not 0 < f <= 1 for f in self.fractions):
            raise ContractViolation("fractions must lie in (0, 1]")
        for v in self.ablations:
            if v not in ABLATION_LABELS:
                raise ContractViolation(f"unknown ablation variant '{v}'")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def collect_dataset(plan: ExperimentPlan, seed: int, root: Path,
                    correction_fraction: float | None = None,
                    single_config: bool = False, tag: str = "main") -> EpisodeStore:
    store = EpisodeStore(root / f"data-{tag}-s{seed}")
    if not store.list_ids():
        cf = plan.correction_fraction if correction_fraction is None else correction_fraction
        collect(store, plan.task, seed,
                CollectConfig(n_episodes=plan.n_episodes, correction_fraction=cf,
                              single_config=single_config, cameras=plan.cameras))
    return store


def run_scaling(plan: ExperimentPlan) -> dict:
    """Success-vs-dataset-fraction sweep; also trains the full-recipe bundles."""
    from .protocol import sample_subset

    root = Path(plan.out_dir)
    spec = TASK_MAKERS[plan.task]()
    rows = []
    for seed in plan.seeds:
        store = collect_dataset(plan, seed, root)
        for fraction in plan.fractions:
            view = sample_subset(store, fraction, seed)
            bundle_path = root / f"bundle-f{fraction:.2f}-s{seed}.ddpb"
            if bundle_path.exists():
                bundle = load_bundle(bundle_path)
            else:
                bundle, _ = train_policy(store, view, PolicyConfig(), plan.train, seed,
                                         meta={"fraction": fraction})
                save_bundle(bundle, bundle_path)
            res = evaluate(bundle, spec, EvalConfig(n_eval=plan.n_eval, seed=seed))
            rows.append({"seed": seed, "fraction": fraction, "n_train": len(view),
                         "solid": res.solid, "dashed": res.dashed})
            _write(root / "outcomes" / f"scaling-f{fraction:.2f}-s{seed}.tsv",
                   outcomes_table(res))
    table = ["seed\tfraction\tn_train\tsolid\tdashed"] + [
        f"{r['seed']}\t{r['fraction']!r}\t{r['n_train']}\t{r['solid']!r}\t{r['dashed']!r}"
        for r in rows]
    _write(root / "scaling.tsv", "\n".join(table) + "\n")
    means = {f: float(np.mean([r["solid"] for r in rows if r["fraction"] == f]))
             for f in plan.fractions}
    return {"rows": rows, "mean_solid_by_fraction": means}


def _ablation_bundle(plan: ExperimentPlan, variant: str, root: Path) -> PolicyBundle:
    seed = plan.seeds[0]
    path = root / f"bundle-abl-{variant}-s{seed}.ddpb"
    if path.exists():
        return load_bundle(path)
    if variant == "vi":
        full = root / f"bundle-f1.00-s{seed}.ddpb"
        if full.exists():
            return load_bundle(full)
        store = collect_dataset(plan, seed, root)
        bundle, _ = train_policy(store, training_view(store), PolicyConfig(),
                                 plan.train, seed, meta={"variant": "vi"})
        save_bundle(bundle, root / f"bundle-f1.00-s{seed}.ddpb")
        return bundle

    if variant in ("i", "ii", "iv"):
        store = collect_dataset(plan, seed, root)
        if variant == "i":
            pcfg = PolicyConfig(repr_mode=ReprMode.ABSOLUTE)
            view = training_view(store)
        elif variant == "ii":
            pcfg = PolicyConfig(repr_mode=ReprMode.RELATIVE_WRONG_BASE,
                                allow_wrong_base=True)
            view = training_view(store)
        else:
            pcfg = PolicyConfig()
            view = training_view(store, include_filtered=True, include_failures=True)
    elif variant == "iii":
        store = collect_dataset(plan, seed, root, single_config=True, tag="singlecfg")
        pcfg = PolicyConfig()
        view = training_view(store)
    elif variant == "v":
        store = collect_dataset(plan, seed, root, correction_fraction=0.0, tag="nocorr")
        pcfg = PolicyConfig()
        view = training_view(store)
    else:
        raise ContractViolation(f"unknown ablation '{variant}'")
    bundle, _ = train_policy(store, view, pcfg, plan.train, seed,
                             meta={"variant": variant})
    save_bundle(bundle, path)
    return bundle


def run_ablations(plan: ExperimentPlan) -> dict:
    """Variant table on OOD start poses with failure injection at eval."""
    root = Path(plan.out_dir)
    spec = TASK_MAKERS[plan.task]()
    rows = []
    for variant in plan.ablations:
        bundle = _ablation_bundle(plan, variant, root)
        res = evaluate(bundle, spec,
                       EvalConfig(n_eval=plan.n_eval, seed=plan.seeds[0],
                                  ood_starts=True, inject_prob=plan.eval_inject_prob))
        rows.append({"variant": variant, "label": ABLATION_LABELS[variant],
                     "solid": res.solid, "dashed": res.dashed})
        _write(root / "outcomes" / f"ablation-{variant}.tsv", outcomes_table(res))
    table = ["variant\tlabel\tsolid\tdashed"] + [
        f"{r['variant']}\t{r['label']}\t{r['solid']!r}\t{r['dashed']!r}" for r in rows]
    _write(root / "ablations.tsv", "\n".join(table) + "\n")
    return {"rows": rows}


def run_correction_delta(plan: ExperimentPlan) -> dict:
    """Dashed-vs-solid gap with guaranteed failure injection, with and
    without self-correction training data."""
    root = Path(plan.out_dir)
    spec = TASK_MAKERS[plan.task]()
    rows = []
    for tag, variant in (("with_corrections", "vi"), ("no_corrections", "v")):
        bundle = _ablation_bundle(plan, variant, root)
        res = evaluate(bundle, spec, EvalConfig(n_eval=plan.n_eval, seed=plan.seeds[0],
                                                inject_prob=1.0))
        rows.append({"dataset": tag, "solid": res.solid, "dashed": res.dashed,
                     "delta": res.dashed - res.solid})
        _write(root / "outcomes" / f"correction-{tag}.tsv", outcomes_table(res))
    table = ["dataset\tsolid\tdashed\tdelta"] + [
        f"{r['dataset']}\t{r['solid']!r}\t{r['dashed']!r}\t{r['delta']!r}" for r in rows]
    _write(root / "correction_delta.tsv", "\n".join(table) + "\n")
    return {"rows": rows}


def run_suite(plan: ExperimentPlan) -> dict:
    """Scaling sweep, ablation table, and correction-delta table in one run."""
    root = Path(plan.out_dir)
    scaling = run_scaling(plan)
    ablations = run_ablations(plan)
    delta = run_correction_delta(plan)
    report = {
        "plan": {
            "task": plan.task, "n_episodes": plan.n_episodes,
            "correction_fraction": plan.correction_fraction,
            "fractions": list(plan.fractions), "n_eval": plan.n_eval,
            "seeds": list(plan.seeds),
        },
        "scaling": scaling, "ablations": ablations, "correction_delta": delta,
    }
    _write(root / "report.json", json.dumps(report, sort_keys=True, indent=1) + "\n")
    _write(root / "summary.txt", summarize(report))
    write_run_manifest(root)
    return report


def summarize(report: dict) -> str:
    lines = ["experiment summary", "=================="]
    lines.append("scaling (mean solid success by fraction):")
    for f, v in sorted(report["scaling"]["mean_solid_by_fraction"].items()):
        lines.append(f"  fraction {f}: {v:.3f}")
    lines.append("ablations (OOD starts, failure injection):")
    for r in report["ablations"]["rows"]:
        lines.append(f"  ({r['variant']}) {r['label']}: solid {r['solid']:.3f} "
                     f"dashed {r['dashed']:.3f}")
    lines.append("self-correction delta (injection prob 1.0):")
    for r in report["correction_delta"]["rows"]:
        lines.append(f"  {r['dataset']}: solid {r['solid']:.3f} dashed {r['dashed']:.3f} "
                     f"delta {r['delta']:.3f}")
    return "\n".join(lines) + "\n"


def write_run_manifest(root: Path) -> Path:
    """Hash every artifact in the run directory into manifest.tsv."""
    rows = []
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name != "manifest.tsv":
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            rows.append(f"{path.relative_to(root)}\t{digest}")
    out = root / "manifest.tsv"
    out.write_text("\n".join(rows) + "\n")
    return out


def oracle_factory(spec: TaskSpec, seed: int):
    def make(i: int):
        return OracleActor(spec, seed=int(np.random.SeedSequence((seed, i)).generate_state(1)[0]))
    return make


def random_factory(seed: int):
    def make(i: int):
        return RandomActor(seed=int(np.random.SeedSequence((seed, i, 3)).generate_state(1)[0]))
    return make
