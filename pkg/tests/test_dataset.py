import time

import numpy as np
import pytest

from dexdesk.episodes import (
    CurationFlag,
    Episode,
    EpisodeMeta,
    EpisodeRecorder,
    EpisodeStore,
    FailureMode,
    Label,
    ResetScene,
)
from dexdesk.errors import ContractViolation, CorruptEpisodeError, EpisodeNotFound, ProtocolViolation
from dexdesk.observations import Observation
from dexdesk.poses import planar_pose
from dexdesk.protocol import (
    build_manifest,
    check_config_ratio,
    curate,
    make_reset_scene,
    manifest_table,
    sample_subset,
    training_view,
)


def make_episode(eid="ep-000", n=5, task="pick_place", config=0, label=Label.SUCCESS,
                 with_images=True, **meta_kw) -> Episode:
    rec = EpisodeRecorder()
    rng = np.random.default_rng(hash(eid) % 2**31)
    for i in range(n):
        images = (np.full((8, 8, 3), (i % 5) / 255.0),) if with_images else ()
        obs = Observation(
            timestamp=i / 15.0,
            ee_pose=planar_pose(0.1 * i, 0.05, 0.0),
            hand_joints=np.array([0.3, 0.4]),
            images=images,
            low_dim_features=rng.normal(size=3),
        )
        rec.append(obs, planar_pose(0.1 * i + 0.02, 0.05, 0.0), np.array([0.2, 0.2]))
    meta = EpisodeMeta(episode_id=eid, task_name=task, task_config_id=config,
                       label=label, collector_id="collector-a", **meta_kw)
    return rec.finish(meta, initial_state=b"init-bytes", final_state=b"final-bytes")


class TestStoreRoundTrip:
    def test_write_read_structural_identity(self, tmp_path):
        store = EpisodeStore(tmp_path)
        ep = make_episode()
        store.write_episode(ep)
        back = store.read_episode("ep-000")
        assert np.array_equal(back.obs_ts, ep.obs_ts.astype(np.float32))
        assert np.array_equal(back.obs_ee, ep.obs_ee)
        assert np.array_equal(back.act_hand, ep.act_hand)
        assert np.array_equal(back.images[0], ep.images[0])
        assert back.meta == ep.meta
        assert back.initial_state == b"init-bytes"
        assert back.final_state == b"final-bytes"

    def test_observation_reconstruction(self, tmp_path):
        store = EpisodeStore(tmp_path)
        store.write_episode(make_episode())
        back = store.read_episode("ep-000")
        obs = back.observation(2)
        assert obs.timestamp == pytest.approx(2 / 15.0, abs=1e-6)
        assert obs.images[0].shape == (8, 8, 3)
        # uint8 round-trip is exact because renders quantize to n/255
        assert np.abs(obs.images[0] - 2 / 255.0).max() == 0.0

    def test_truncated_stream_detected(self, tmp_path):
        store = EpisodeStore(tmp_path)
        store.write_episode(make_episode())
        f = store.episode_dir("ep-000") / "obs_ee.bin"
        f.write_bytes(f.read_bytes()[:-8])
        with pytest.raises(CorruptEpisodeError, match="ep-000"):
            store.read_episode("ep-000")

    def test_corrupted_bytes_detected(self, tmp_path):
        store = EpisodeStore(tmp_path)
        store.write_episode(make_episode())
        f = store.episode_dir("ep-000") / "act_ee.bin"
        data = bytearray(f.read_bytes())
        data[0] ^= 0xFF
        f.write_bytes(bytes(data))
        with pytest.raises(CorruptEpisodeError, match="ep-000"):
            store.read_episode("ep-000")

    def test_duplicate_id_rejected(self, tmp_path):
        store = EpisodeStore(tmp_path)
        store.write_episode(make_episode())
        with pytest.raises(ContractViolation):
            store.write_episode(make_episode())

    def test_thousand_step_episode_under_one_second(self, tmp_path):
        store = EpisodeStore(tmp_path)
        ep = make_episode(eid="big", n=1000)
        t0 = time.monotonic()
        store.write_episode(ep)
        store.read_episode("big")
        assert time.monotonic() - t0 < 1.0

    def test_byte_identical_rewrites(self, tmp_path):
        a = EpisodeStore(tmp_path / "a")
        b = EpisodeStore(tmp_path / "b")
        a.write_episode(make_episode())
        b.write_episode(make_episode())
        for name in ("header.json", "obs_ee.bin", "cam0.bin"):
            assert (a.episode_dir("ep-000") / name).read_bytes() == \
                   (b.episode_dir("ep-000") / name).read_bytes()


class TestLabeling:
    def test_label_success_shifts_manifest(self, tmp_path):
        store = EpisodeStore(tmp_path)
        store.write_episode(make_episode(label=Label.UNLABELED))
        before = build_manifest(store).per_task["pick_place"].n_success
        store.label_episode("ep-000", Label.SUCCESS, labeler_id="collector-a", at=1.0)
        after = build_manifest(store).per_task["pick_place"].n_success
        assert (before, after) == (0, 1)

    def test_label_failure_with_mode(self, tmp_path):
        store = EpisodeStore(tmp_path)
        store.write_episode(make_episode(label=Label.UNLABELED))
        meta = store.label_episode("ep-000", Label.FAILURE, FailureMode.NO_GRASP,
                                   labeler_id="collector-a")
        assert meta.failure_mode is FailureMode.NO_GRASP

    def test_label_failure_without_mode_ok(self, tmp_path):
        store = EpisodeStore(tmp_path)
        store.write_episode(make_episode(label=Label.UNLABELED))
        meta = store.label_episode("ep-000", Label.FAILURE, labeler_id="x")
        assert meta.failure_mode is None

    def test_relabel_keeps_audit_trail(self, tmp_path):
        store = EpisodeStore(tmp_path)
        store.write_episode(make_episode(label=Label.UNLABELED))
        store.label_episode("ep-000", Label.FAILURE, labeler_id="a", at=1.0)
        meta = store.label_episode("ep-000", Label.SUCCESS, labeler_id="b", at=2.0)
        labels = [e["label"] for e in meta.audit if e["event"] == "label"]
        assert labels == ["failure", "success"]

    def test_unknown_id(self, tmp_path):
        store = EpisodeStore(tmp_path)
        with pytest.raises(EpisodeNotFound):
            store.label_episode("nope", Label.SUCCESS)

    def test_failure_mode_requires_failure_or_correction(self):
        with pytest.raises(ContractViolation):
            EpisodeMeta("e", "t", 0, label=Label.SUCCESS,
                        failure_mode=FailureMode.NO_GRASP)
        meta = EpisodeMeta("e", "t", 0, label=Label.SUCCESS, is_correction=True,
                           failure_mode=FailureMode.NO_GRASP)
        assert meta.is_correction


class TestCuration:
    def _store_with(self, tmp_path, n=6):
        store = EpisodeStore(tmp_path)
        for i in range(n):
            store.write_episode(make_episode(eid=f"ep-{i:03d}"))
        return store

    def test_curator_must_differ_from_collector(self, tmp_path):
        store = self._store_with(tmp_path)
        with pytest.raises(ProtocolViolation):
            curate(store, {"ep-000": {CurationFlag.ERRATIC_MOTION}}, "collector-a")

    def test_view_removes_flagged(self, tmp_path):
        store = self._store_with(tmp_path)
        view = curate(store, {"ep-001": {CurationFlag.NON_STABLE_GRASP},
                              "ep-004": {CurationFlag.AMBIGUOUS_COMPLETION}}, "curator-b")
        assert view == ["ep-000", "ep-002", "ep-003", "ep-005"]

    def test_no_flags_view_is_all_successes(self, tmp_path):
        store = self._store_with(tmp_path)
        assert curate(store, {}, "curator-b") == [f"ep-{i:03d}" for i in range(6)]

    def test_corrections_pass_curation_like_others(self, tmp_path):
        store = EpisodeStore(tmp_path)
        store.write_episode(make_episode(eid="normal"))
        store.write_episode(make_episode(eid="corr", is_correction=True,
                                         failure_mode=FailureMode.UNSTABLE_GRASP))
        view = curate(store, {}, "curator-b")
        assert view == ["corr", "normal"]
        view = curate(store, {"corr": {CurationFlag.ERRATIC_MOTION}}, "curator-b")
        assert view == ["normal"]

    def test_table_one_bookkeeping_pattern(self):
        # dataset shaped like the bread-pick row: 1830 successes, 550 flagged
        metas = []
        for i in range(1830):
            flags = {CurationFlag.NON_STABLE_GRASP} if i < 550 else set()
            metas.append(EpisodeMeta(f"ep-{i:05d}", "bread_pick", i // 366,
                                     label=Label.SUCCESS, curation_flags=frozenset(flags),
                                     collector_id="c", curator_id="q"))
        manifest = build_manifest(metas)
        tc = manifest.per_task["bread_pick"]
        assert (tc.n_success, tc.n_filtered, len(tc.config_ids)) == (1830, 550, 5)
        assert len(training_view(metas)) == 1830 - 550
        table = manifest_table(manifest)
        assert "bread_pick\t1830\t550\t5" in table


class TestConfigRatio:
    def _metas(self, n, n_configs, distractor_frac=0.5, task="pick_place"):
        metas = []
        for i in range(n):
            metas.append(EpisodeMeta(
                f"e{i:05d}", task, i * n_configs // n, label=Label.SUCCESS,
                distractors_present=(i % 100) < distractor_frac * 100))
        return metas

    def test_protocol_compliant_ok(self):
        report = check_config_ratio(build_manifest(self._metas(500, 5)))
        assert report.status == "ok"
        assert report.episodes_per_config["pick_place"] == pytest.approx(100.0)

    def test_single_config_many_episodes_warns(self):
        report = check_config_ratio(build_manifest(self._metas(300, 1)))
        assert report.status == "warning"
        assert any("episodes per config" in w for w in report.warnings)

    def test_low_distractor_fraction_warns(self):
        report = check_config_ratio(build_manifest(self._metas(200, 2, distractor_frac=0.1)))
        assert report.status == "warning"
        assert any("distractor" in w for w in report.warnings)


class TestSubsetSampling:
    def _metas(self):
        metas = []
        for i in range(120):
            metas.append(EpisodeMeta(
                f"e{i:04d}", "pick_place", i // 40, label=Label.SUCCESS,
                is_correction=(i % 10 == 0),
                failure_mode=FailureMode.NO_GRASP if i % 10 == 0 else None))
        return metas

    def test_identity_at_full_fraction(self):
        metas = self._metas()
        assert sample_subset(metas, 1.0, seed=0) == sorted(m.episode_id for m in metas)

    def test_deterministic(self):
        metas = self._metas()
        assert sample_subset(metas, 0.5, seed=3) == sample_subset(metas, 0.5, seed=3)
        assert sample_subset(metas, 0.5, seed=3) != sample_subset(metas, 0.5, seed=4)

    def test_stratification_within_one(self):
        metas = self._metas()
        half = set(sample_subset(metas, 0.5, seed=1))
        by_meta = {m.episode_id: m for m in metas}
        strata: dict[tuple, list[str]] = {}
        for m in metas:
            strata.setdefault((m.task_config_id, m.is_correction), []).append(m.episode_id)
        for key, ids in strata.items():
            kept = sum(1 for i in ids if i in half)
            assert abs(kept - len(ids) / 2) <= 1

    def test_fraction_out_of_range(self):
        with pytest.raises(ContractViolation):
            sample_subset(self._metas(), 0.0, seed=0)


class TestResetScenes:
    def test_roundtrip_bit_identical(self, tmp_path):
        store = EpisodeStore(tmp_path)
        scene = make_reset_scene("drop-01", FailureMode.UNSTABLE_GRASP,
                                 b"\x00\x01binary\xff", "dropped mid transport")
        store.save_reset_scene(scene)
        back = store.load_reset_scene("drop-01")
        assert back.snapshot == scene.snapshot
        assert back.failure_mode is FailureMode.UNSTABLE_GRASP
        store.save_reset_scene(back)
        again = store.load_reset_scene("drop-01")
        assert again == back

    def test_empty_snapshot_rejected(self):
        with pytest.raises(ContractViolation):
            make_reset_scene("x", FailureMode.NO_GRASP, b"")

    def test_scene_carries_annotation_mode(self, tmp_path):
        store = EpisodeStore(tmp_path)
        scene = make_reset_scene("miss-01", FailureMode.NO_GRASP, b"state", "missed grasp")
        store.save_reset_scene(scene)
        assert store.load_reset_scene("miss-01").failure_mode is FailureMode.NO_GRASP
