import numpy as np
import pytest

from evsentinel.data import FeatureScaler, generate
from evsentinel.detector import (
    Alert,
    DetectorConfig,
    UserState,
    detect_stream,
    observe,
    rank_alerts,
    write_alerts_jsonl,
    write_scores_csv,
)
from evsentinel.errors import ConfigError, DataError
from evsentinel.evidential import assess
from evsentinel.model import LatentEmbedding, init_encoder, init_head
from evsentinel.numerics import AdamState, SeededRng
from evsentinel.training import Checkpoint, TrainConfig


def assessment_with_u(u: float, k: int = 5):
    # alpha = [k/u / k] * k gives S = k/u hence uncertainty exactly K/S
    return assess(np.full(k, 1.0 / u))


def fresh_state(baseline, user="u1"):
    baseline = np.asarray(baseline, dtype=np.float64)
    return UserState(user=user, baseline=baseline.copy(),
                     prev_embedding=baseline.copy(), last_update=0.0,
                     window_count=1)


def make_checkpoint(t_len=12, d=12, hidden=6, K=3, seed=5, window_duration=3600.0):
    config = TrainConfig(epochs=1, batch_size=1, hidden=hidden, t_len=t_len,
                         input_dim=d, n_clusters=K, warmup_epochs=0, seed=seed)
    rng = SeededRng(seed)
    return Checkpoint(
        encoder=init_encoder(d, hidden, 2, rng),
        head=init_head(hidden, K, rng),
        config=config,
        scaler=FeatureScaler(mean=np.zeros(d), std=np.ones(d)),
        epoch=0,
        adam_state=AdamState(),
        rng_states={},
        window_duration=window_duration,
    )


# -- config -----------------------------------------------------------------------


def test_defaults_match_reference_thresholds():
    c = DetectorConfig()
    assert (c.tau_u, c.tau_d, c.beta) == (0.4, 1.5, 0.7)


@pytest.mark.parametrize("bad", [
    dict(tau_u=-0.1), dict(tau_u=1.5), dict(tau_d=0.0), dict(beta=0.0),
    dict(beta=1.5), dict(drift_reference="nope"), dict(order_policy="drop"),
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        DetectorConfig(**bad)


# -- observe ------------------------------------------------------------------------


def test_zero_drift_when_embedding_equals_baseline():
    state = fresh_state([1.0, 2.0])
    z = LatentEmbedding(values=np.array([1.0, 2.0]), user="u1", window_end=10.0)
    low_u = assessment_with_u(0.2)
    new_state, score, alert = observe(state, z, low_u, DetectorConfig())
    assert new_state.last_drift == 0.0
    assert score == 0.0
    assert alert is None

    high_u = assessment_with_u(0.9)
    _, score, alert = observe(state, z, high_u, DetectorConfig())
    assert score == 0.0
    assert alert is not None
    assert alert.triggered_by == "uncertainty"


def test_ewma_update_arithmetic():
    state = fresh_state([1.0, 1.0])
    z = LatentEmbedding(values=np.array([2.0, 2.0]), user="u1", window_end=10.0)
    new_state, _, _ = observe(state, z, assessment_with_u(0.2), DetectorConfig(beta=0.7))
    assert np.allclose(new_state.baseline, [1.7, 1.7], atol=1e-15)


def test_reference_threshold_example():
    # u=0.35, d=1.6 at thresholds (0.4, 1.5): drift-only alert, s=0.56
    state = fresh_state(np.zeros(4))
    z = LatentEmbedding(values=np.array([1.6, 0.0, 0.0, 0.0]), user="u1", window_end=9.0)
    new_state, score, alert = observe(state, z, assessment_with_u(0.35), DetectorConfig())
    assert new_state.last_drift == pytest.approx(1.6, abs=1e-12)
    assert alert is not None
    assert alert.triggered_by == "drift"
    assert score == pytest.approx(0.56, abs=1e-12)
    assert alert.s == score


def test_first_window_seeds_baseline_and_evaluates_uncertainty():
    z = LatentEmbedding(values=np.array([3.0, 4.0]), user="u9", window_end=1.0)
    state, score, alert = observe(None, z, assessment_with_u(0.5), DetectorConfig())
    assert np.array_equal(state.baseline, [3.0, 4.0])
    assert state.last_drift == 0.0
    assert score == 0.0
    assert alert is not None and alert.triggered_by == "uncertainty"

    state2, _, alert2 = observe(None, z, assessment_with_u(0.2), DetectorConfig())
    assert alert2 is None
    assert state2.window_count == 1


def test_ewma_closed_form_over_fifty_steps():
    beta = 0.7
    b0 = np.array([2.0, -1.0, 0.5])
    v = np.array([-0.3, 0.4, 1.2])
    state = fresh_state(b0)
    config = DetectorConfig(beta=beta)
    for t in range(1, 51):
        z = LatentEmbedding(values=v, user="u1", window_end=float(t))
        state, _, _ = observe(state, z, assessment_with_u(0.1), config)
        expected = v + (1.0 - beta) ** t * (b0 - v)
        assert np.max(np.abs(state.baseline - expected)) < 1e-9


def test_alert_predicate_exhaustive_grid():
    eps = 1e-6
    tau_u, tau_d = 0.4, 1.5
    config = DetectorConfig()
    for u in (tau_u - eps, tau_u + eps):
        for d in (tau_d - eps, tau_d + eps):
            state = fresh_state(np.zeros(3))
            z = LatentEmbedding(values=np.array([d, 0.0, 0.0]), user="u", window_end=1.0)
            _, _, alert = observe(state, z, assessment_with_u(u), config)
            assert (alert is not None) == ((u > tau_u) or (d > tau_d))


def test_equality_does_not_alert():
    config = DetectorConfig()
    state = fresh_state(np.zeros(2))
    z = LatentEmbedding(values=np.array([1.5, 0.0]), user="u", window_end=1.0)
    _, _, alert = observe(state, z, assessment_with_u(0.4), config)
    assert alert is None


def test_previous_embedding_drift_variant():
    config = DetectorConfig(drift_reference="previous")
    state = fresh_state([0.0, 0.0])
    z1 = LatentEmbedding(values=np.array([1.0, 0.0]), user="u", window_end=1.0)
    state, _, _ = observe(state, z1, assessment_with_u(0.1), config)
    z2 = LatentEmbedding(values=np.array([1.0, 1.0]), user="u", window_end=2.0)
    state, _, _ = observe(state, z2, assessment_with_u(0.1), config)
    # drift vs previous raw embedding [1,0], not the EWMA baseline
    assert state.last_drift == pytest.approx(1.0, abs=1e-12)


def test_non_finite_embedding_rejected_without_state_change():
    state = fresh_state([1.0, 1.0])
    before = state.baseline.copy()
    z = LatentEmbedding(values=np.array([np.nan, 0.0]), user="u", window_end=1.0)
    with pytest.raises(DataError):
        observe(state, z, assessment_with_u(0.2), DetectorConfig())
    assert np.array_equal(state.baseline, before)
    assert state.window_count == 1


# -- ranking ------------------------------------------------------------------------


def mk_alert(s, u=0.5, t=0.0, user="u1"):
    return Alert(user=user, window_end=t, s=s, u=u, d=s / u if u else 0.0,
                 triggered_by="drift", p=(1.0,))


def test_rank_alerts_descending_score():
    ranked = rank_alerts([mk_alert(0.2), mk_alert(0.9), mk_alert(0.5)])
    assert [a.s for a in ranked] == [0.9, 0.5, 0.2]


def test_rank_alerts_tie_rules():
    a = mk_alert(0.5, u=0.3, t=5.0, user="ub")
    b = mk_alert(0.5, u=0.8, t=9.0, user="ua")
    assert rank_alerts([a, b]) == [b, a]
    c = mk_alert(0.5, u=0.3, t=1.0, user="uz")
    assert rank_alerts([a, c]) == [c, a]
    d = mk_alert(0.5, u=0.3, t=5.0, user="ua")
    assert rank_alerts([a, d]) == [d, a]


def test_rank_alerts_empty():
    assert rank_alerts([]) == []


# -- full stream --------------------------------------------------------------------


def test_detect_stream_over_corpus_replays_identically(tmp_path):
    corpus = generate(6, 0.0, SeededRng(41), t_len=12, window_duration=3600.0)
    ckpt = make_checkpoint()
    ckpt.scaler = FeatureScaler.fit(corpus.sequences)
    config = DetectorConfig()
    r1 = detect_stream(ckpt, corpus, config)
    r2 = detect_stream(ckpt, corpus, config)
    assert r1.windows_processed == sum(s.t_len - s.n_pad for s in corpus.sequences)
    assert [(w.user, w.window_end, w.u, w.d, w.s) for w in r1.window_scores] == \
           [(w.user, w.window_end, w.u, w.d, w.s) for w in r2.window_scores]
    write_scores_csv(r1, tmp_path / "a.csv")
    write_scores_csv(r2, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_per_user_isolation_under_interleaving():
    corpus = generate(4, 0.0, SeededRng(43), t_len=10, window_duration=3600.0)
    ckpt = make_checkpoint(t_len=10, window_duration=3600.0)
    ckpt.scaler = FeatureScaler.fit(corpus.sequences)
    config = DetectorConfig()

    combined = detect_stream(ckpt, corpus, config)
    for seq in corpus.sequences:
        solo_corpus = generate(4, 0.0, SeededRng(43), t_len=10, window_duration=3600.0)
        solo_corpus.sequences = [s for s in solo_corpus.sequences if s.user == seq.user]
        solo = detect_stream(ckpt, solo_corpus, config)
        combined_rows = [w for w in combined.window_scores if w.user == seq.user]
        assert len(solo.window_scores) == len(combined_rows)
        for a, b in zip(solo.window_scores, combined_rows):
            assert (a.window_end, a.u, a.d, a.s, a.alert) == (b.window_end, b.u, b.d, b.s, b.alert)


def test_detect_stream_from_raw_records_matches_corpus_path():
    corpus = generate(5, 0.2, SeededRng(47), t_len=12, window_duration=3600.0)
    ckpt = make_checkpoint()
    ckpt.scaler = FeatureScaler.fit(corpus.sequences)
    config = DetectorConfig()
    from_corpus = detect_stream(ckpt, corpus, config)
    from_records = detect_stream(ckpt, list(corpus.records), config)
    assert from_corpus.windows_processed == from_records.windows_processed
    for a, b in zip(from_corpus.window_scores, from_records.window_scores):
        assert a.user == b.user
        assert a.u == pytest.approx(b.u, abs=1e-12)
        assert a.s == pytest.approx(b.s, abs=1e-12)


def test_detect_stream_mismatched_width_fails_before_processing():
    corpus = generate(4, 0.0, SeededRng(53), t_len=12, window_duration=3600.0)
    ckpt = make_checkpoint(d=7)
    with pytest.raises(ConfigError):
        detect_stream(ckpt, corpus, DetectorConfig())


def test_detect_stream_mismatched_t_len_fails():
    corpus = generate(4, 0.0, SeededRng(53), t_len=9, window_duration=3600.0)
    ckpt = make_checkpoint(t_len=12, window_duration=3600.0)
    with pytest.raises(ConfigError):
        detect_stream(ckpt, corpus, DetectorConfig())


def test_out_of_order_policies():
    corpus = generate(3, 0.0, SeededRng(59), t_len=8, window_duration=3600.0)
    ckpt = make_checkpoint(t_len=8, window_duration=3600.0)
    ckpt.scaler = FeatureScaler.fit(corpus.sequences)
    records = list(corpus.records)
    # move one record of some user far earlier in its own timeline
    target_user = records[len(records) // 2].user
    user_records = [r for r in records if r.user == target_user]
    moved = user_records[-1]
    swapped = [r for r in records if r is not moved]
    swapped.insert(0, moved)

    with pytest.raises(DataError):
        detect_stream(ckpt, swapped, DetectorConfig(order_policy="reject"))

    reordered = detect_stream(ckpt, swapped, DetectorConfig(order_policy="reorder"))
    clean = detect_stream(ckpt, records, DetectorConfig(order_policy="reorder"))
    assert reordered.windows_processed == clean.windows_processed
    for a, b in zip(reordered.window_scores, clean.window_scores):
        assert (a.user, a.window_end, a.s) == (b.user, b.window_end, b.s)


def test_history_longer_than_t_len_still_emits_every_window():
    from evsentinel.data import window_series

    corpus = generate(2, 0.0, SeededRng(61), t_len=16, window_duration=3600.0)
    ckpt = make_checkpoint(t_len=8, window_duration=3600.0)  # context shorter than history
    ckpt.scaler = FeatureScaler.fit(corpus.sequences)
    result = detect_stream(ckpt, list(corpus.records), DetectorConfig())
    series = window_series(list(corpus.records), 3600.0)
    per_user = {}
    for w in result.window_scores:
        per_user.setdefault(w.user, []).append(w)
    for user, rows in per_user.items():
        assert len(rows) == series[user][0].shape[0]
        assert len(rows) > 8


def test_alerts_jsonl_round_trip(tmp_path):
    import json

    alerts = [mk_alert(0.9, u=0.6, t=3.0), mk_alert(0.1, u=0.5, t=1.0)]
    write_alerts_jsonl(alerts, tmp_path / "alerts.jsonl")
    lines = (tmp_path / "alerts.jsonl").read_text().strip().splitlines()
    assert len(lines) == 2
    first = json.loads(lines[0])
    assert set(first) == {"user", "window_end", "s", "u", "d", "triggered_by", "p"}
    assert first["s"] == 0.9
