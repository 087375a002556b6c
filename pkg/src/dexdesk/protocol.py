"""The five-step demonstration protocol bookkeeping.

Collection happens elsewhere (simulator oracles or teleoperation); this
module owns the labeling/curation/accounting side: curated training views,
per-task manifests matching the dataset-statistics table layout, the
episodes-per-config health check, and stratified subset sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .episodes import CurationFlag, EpisodeMeta, EpisodeStore, FailureMode, Label, ResetScene
from .errors import ContractViolation, ProtocolViolation

# "change task config roughly every 100 episodes", accepted band is
# log-symmetric around the target
EPISODES_PER_CONFIG_TARGET = 100
EPISODES_PER_CONFIG_BAND = (50, 200)
DISTRACTOR_FRACTION_TARGET = 0.5
DISTRACTOR_FRACTION_BAND = (0.35, 0.65)


@dataclass
class TaskCount:
    n_success: int = 0
    n_filtered: int = 0
    n_failure: int = 0
    n_correction: int = 0
    n_total: int = 0
    config_ids: set[int] = field(default_factory=set)
    n_distractor: int = 0


@dataclass
class DatasetManifest:
    metas: list[EpisodeMeta]
    per_task: dict[str, TaskCount]

    @property
    def tasks(self) -> list[str]:
        return sorted(self.per_task)


def build_manifest(source) -> DatasetManifest:
    """Recompute all counts from episode metadata (a store or a meta list)."""
    metas = list(source.read_meta(eid) for eid in source.list_ids()) \
        if isinstance(source, EpisodeStore) else list(source)
    per_task: dict[str, TaskCount] = {}
    for m in metas:
        tc = per_task.setdefault(m.task_name, TaskCount())
        tc.n_total += 1
        tc.config_ids.add(m.task_config_id)
        tc.n_distractor += m.distractors_present
        tc.n_correction += m.is_correction
        if m.label is Label.SUCCESS:
            tc.n_success += 1
            if m.curation_flags:
                tc.n_filtered += 1
        elif m.label is Label.FAILURE:
            tc.n_failure += 1
    return DatasetManifest(metas, per_task)


def manifest_table(manifest: DatasetManifest) -> str:
    """Delimited text table: task, # success eps, # filtered eps, # task configs.

    Filtered episodes are curation-flagged successes, i.e. a subset of the
    success count that the training view removes.
    """
    lines = ["task_name\tn_success_eps\tn_filtered_eps\tn_task_configs"]
    for task in manifest.tasks:
        tc = manifest.per_task[task]
        lines.append(f"{task}\t{tc.n_success}\t{tc.n_filtered}\t{len(tc.config_ids)}")
    return "\n".join(lines) + "\n"


def curate(store: EpisodeStore, flags_by_episode: dict[str, set[CurationFlag]],
           curator_id: str, at: float = 0.0) -> list[str]:
    """Apply curation flags (step 3) and return the surviving training view.

    The curator must differ from each flagged episode's collector; flagging
    your own episodes is a protocol violation.
    """
    for eid, flags in sorted(flags_by_episode.items()):
        meta = store.read_meta(eid)
        if flags and curator_id == meta.collector_id:
            raise ProtocolViolation(
                f"curator '{curator_id}' collected episode '{eid}'; "
                "curation requires a different person")
        store.set_curation(eid, frozenset(flags), curator_id, at=at)
    return training_view(store)


def training_view(source, include_filtered: bool = False,
                  include_failures: bool = False) -> list[str]:
    """Episode ids eligible for training.

    Default: success-labeled episodes (corrections included; they are
    success-labeled recoveries) minus anything curation-flagged. The include
    switches exist for the unfiltered-data ablation.
    """
    metas = [source.read_meta(eid) for eid in source.list_ids()] \
        if isinstance(source, EpisodeStore) else list(source)
    out = []
    for m in metas:
        if m.label is Label.FAILURE and not include_failures:
            continue
        if m.label is Label.UNLABELED:
            continue
        if m.curation_flags and not include_filtered:
            continue
        out.append(m.episode_id)
    return sorted(out)


@dataclass
class ConfigRatioReport:
    status: str  # "ok" | "warning"
    warnings: list[str]
    episodes_per_config: dict[str, float]
    distractor_fraction: dict[str, float]


def check_config_ratio(manifest: DatasetManifest) -> ConfigRatioReport:
    """Protocol health check: episodes per task config and distractor mix."""
    warnings: list[str] = []
    ratios: dict[str, float] = {}
    distract: dict[str, float] = {}
    lo, hi = EPISODES_PER_CONFIG_BAND
    for task in manifest.tasks:
        tc = manifest.per_task[task]
        ratio = tc.n_total / max(len(tc.config_ids), 1)
        ratios[task] = ratio
        if not lo <= ratio <= hi:
            warnings.append(
                f"{task}: {ratio:.0f} episodes per config outside [{lo}, {hi}] "
                f"(target ~{EPISODES_PER_CONFIG_TARGET})")
        frac = tc.n_distractor / max(tc.n_total, 1)
        distract[task] = frac
        dlo, dhi = DISTRACTOR_FRACTION_BAND
        if not dlo <= frac <= dhi:
            warnings.append(
                f"{task}: distractor fraction {frac:.2f} outside [{dlo}, {dhi}] "
                f"(target ~{DISTRACTOR_FRACTION_TARGET})")
    return ConfigRatioReport("warning" if warnings else "ok", warnings, ratios, distract)


def sample_subset(source, fraction: float, seed: int) -> list[str]:
    """Deterministic stratified subset of the training-eligible episodes.

    Strata are (task, task_config_id, is_correction) so scaled-down datasets
    keep the protocol's structure; each stratum keeps round(n * fraction)
    episodes chosen by a seeded shuffle.
    """
    if not 0.0 < fraction <= 1.0:
        raise ContractViolation(f"fraction must be in (0, 1], got {fraction}")
    metas = [source.read_meta(eid) for eid in source.list_ids()] \
        if isinstance(source, EpisodeStore) else list(source)
    eligible = set(training_view(metas))
    strata: dict[tuple, list[str]] = {}
    for m in metas:
        if m.episode_id in eligible:
            key = (m.task_name, m.task_config_id, m.is_correction)
            strata.setdefault(key, []).append(m.episode_id)
    rng = np.random.default_rng(seed)
    picked: list[str] = []
    for key in sorted(strata):
        ids = sorted(strata[key])
        k = int(np.floor(len(ids) * fraction + 0.5))
        if fraction == 1.0:
            k = len(ids)
        idx = rng.permutation(len(ids))[:k]
        picked.extend(ids[i] for i in idx)
    return sorted(picked)


def make_reset_scene(name: str, failure_mode: FailureMode, snapshot: bytes,
                     source_annotation: str = "") -> ResetScene:
    """Package an annotated failure snapshot for later correction collection."""
    if not snapshot:
        raise ContractViolation("snapshot must be non-empty simulator state")
    return ResetScene(name=name, snapshot=snapshot, failure_mode=failure_mode,
                      source_annotation=source_annotation)
