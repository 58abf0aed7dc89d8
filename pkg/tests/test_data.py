import numpy as np
import pytest

from travelrec import data as d


def write(path, text):
    path.write_text(text, encoding="utf-8")


POI_HEADER = "\t".join(d.POI_HEADER)
USER_HEADER = "\t".join(d.USER_HEADER)
INTER_HEADER = "\t".join(d.INTERACTION_HEADER)


def load_from_strings(tmp_path, pois, users, interactions):
    write(tmp_path / "pois.tsv", POI_HEADER + "\n" + pois)
    write(tmp_path / "users.tsv", USER_HEADER + "\n" + users)
    write(tmp_path / "interactions.tsv", INTER_HEADER + "\n" + interactions)
    return d.load_dataset(tmp_path)


def test_poi_row_parses_like_published_example(tmp_path):
    ds = load_from_strings(
        tmp_path,
        "0\t0.436961\t25556599\t8\t353\t21541.38,-16385.12\n",
        "",
        "",
    )
    p = ds.pois[0]
    assert (p.poi_id, p.gid, p.cid, p.arid) == (0, 25556599, 8, 353)
    assert p.nscore == pytest.approx(0.436961)
    assert (p.x, p.y) == (pytest.approx(21541.38), pytest.approx(-16385.12))


def test_empty_travel_mode_and_via_load_as_missing(tmp_path):
    ds = load_from_strings(
        tmp_path,
        "5\t0.5\t1\t2\t3\t0.0,0.0\n",
        "9\t0\t\t2\t\t\t1\n",
        "9\t1000\t2\t5\t1\t3\t14\t\t\n",
    )
    rec = ds.interactions[9][0]
    assert rec.travel_mode is None
    assert rec.via_poi_id is None
    assert ds.users[0].profile == (0, None, 2, None, None, 1)


def test_empty_files_with_headers_load_cleanly(tmp_path):
    ds = load_from_strings(tmp_path, "", "", "")
    assert ds.pois == [] and ds.users == [] and ds.n_interactions() == 0


def test_dangling_references_rejected_with_row_number(tmp_path):
    with pytest.raises(d.DataError, match="row 2.*unknown target_poi_id 99"):
        load_from_strings(
            tmp_path,
            "5\t0.5\t1\t2\t3\t0.0,0.0\n",
            "9\t0\t0\t0\t0\t0\t0\n",
            "9\t1000\t2\t99\t1\t3\t14\t\t\n",
        )
    with pytest.raises(d.DataError, match="row 3.*unknown user_id 8"):
        load_from_strings(
            tmp_path,
            "5\t0.5\t1\t2\t3\t0.0,0.0\n",
            "9\t0\t0\t0\t0\t0\t0\n",
            "9\t1000\t2\t5\t1\t3\t14\t\t\n8\t1000\t2\t5\t1\t3\t14\t\t\n",
        )


def test_malformed_numeric_rejected_with_row_number(tmp_path):
    with pytest.raises(d.DataError, match="row 2.*nscore"):
        load_from_strings(tmp_path, "5\tbogus\t1\t2\t3\t0.0,0.0\n", "", "")


def test_interactions_sorted_by_timestamp_with_stable_ties(tmp_path):
    ds = load_from_strings(
        tmp_path,
        "5\t0.5\t1\t2\t3\t0.0,0.0\n6\t0.5\t1\t2\t3\t0.0,0.0\n",
        "9\t0\t0\t0\t0\t0\t0\n",
        "9\t2000\t1\t5\t1\t3\t0\t\t\n9\t1000\t2\t5\t1\t3\t0\t\t\n9\t1000\t3\t6\t1\t3\t0\t\t\n",
    )
    recs = ds.interactions[9]
    assert [r.timestamp for r in recs] == [1000, 1000, 2000]
    assert [r.action_type for r in recs] == [2, 3, 1]  # file order kept on tie


def small_settings(**kw):
    base = dict(users=40, pois=120, gids=12, categories=6, arids=4, weathers=5, actions=4, modes=4)
    base.update(kw)
    return d.GeneratorSettings(**base)


def test_generate_is_deterministic_byte_identical(tmp_path):
    for run in ("a", "b"):
        ds = d.generate_synthetic(small_settings(), seed=7)
        d.save_dataset(ds, tmp_path / run)
    for name in ("pois.tsv", "users.tsv", "interactions.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_generated_mean_interactions_near_configured():
    ds = d.generate_synthetic(d.GeneratorSettings(users=800, pois=2000, gids=200), seed=11)
    stats = d.dataset_stats(ds)
    assert stats["interactions_per_user_mean"] == pytest.approx(25.0, rel=0.10)


def test_p_fav_one_pins_every_interaction_to_one_poi():
    ds = d.generate_synthetic(small_settings(p_fav=1.0), seed=3)
    for uid, recs in ds.interactions.items():
        targets = {r.target_poi_id for r in recs[1:]}
        assert len(targets) <= 1


def test_generated_timestamps_strictly_increase():
    ds = d.generate_synthetic(small_settings(), seed=5)
    for recs in ds.interactions.values():
        ts = [r.timestamp for r in recs]
        assert all(a < b for a, b in zip(ts, ts[1:]))


def test_roundtrip_reproduces_dataset_exactly(tmp_path):
    ds = d.generate_synthetic(small_settings(), seed=9)
    d.save_dataset(ds, tmp_path / "x")
    loaded = d.load_dataset(tmp_path / "x")
    d.save_dataset(loaded, tmp_path / "y")
    for name in ("pois.tsv", "users.tsv", "interactions.tsv"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()
    assert loaded.pois == ds.pois
    assert loaded.users == ds.users
    assert loaded.interactions == ds.interactions


def test_generator_rejects_tiny_corpora():
    with pytest.raises(d.DataError, match="POIs"):
        d.generate_synthetic(small_settings(pois=10), seed=1)


def make_user_dataset(n_interactions):
    pois = [d.PoiRecord(i, 0.5, 0, 0, 0, 0.0, 0.0) for i in range(20)]
    users = [d.UserRecord(0, (None,) * 6)]
    recs = [
        d.InteractionRecord(0, 1000 * (i + 1), 0, i % 20, 0, 0, 0, None, None)
        for i in range(n_interactions)
    ]
    return d.Dataset(pois=pois, users=users, interactions={0: recs})


@pytest.mark.parametrize(
    "n,train,val,test",
    [(4, (0, 1), 2, 3), (3, (0,), 1, 2), (2, (0, 1), None, None), (1, (0,), None, None)],
)
def test_temporal_split_cases(n, train, val, test):
    split = d.temporal_split(make_user_dataset(n))
    us = split.users[0]
    assert us.train == train and us.val == val and us.test == test


def test_temporal_split_respects_chronology():
    ds = d.generate_synthetic(small_settings(), seed=13)
    split = d.temporal_split(ds)
    for uid, us in split.users.items():
        recs = ds.interactions[uid]
        if us.val is None:
            continue
        max_train = max(recs[i].timestamp for i in us.train)
        assert max_train < recs[us.val].timestamp < recs[us.test].timestamp


def gid_with_member_count(ds, low, high=None):
    for p in ds.pois:
        others = len(ds.gid_members(p.gid)) - 1
        if others >= low and (high is None or others <= high):
            return p.poi_id, others
    raise AssertionError("no gid with requested member count")


def test_negative_pools_small_gid_includes_all_members():
    ds = d.generate_synthetic(small_settings(pois=200, gids=60), seed=21)
    positive, n_others = gid_with_member_count(ds, 1, 10)
    rng = np.random.default_rng(0)
    uniform, hard = d.negative_pools(ds, positive, rng)
    members = set(ds.gid_members(ds.poi(positive).gid)) - {positive}
    assert set(hard) == members and len(hard) == n_others
    assert len(uniform) == d.N_UNIFORM_NEGATIVES


def test_negative_pools_large_gid_samples_fifty():
    ds = d.generate_synthetic(d.GeneratorSettings(users=5, pois=3000, gids=8), seed=23)
    positive, n_others = gid_with_member_count(ds, 60)
    assert n_others >= 60
    rng = np.random.default_rng(0)
    uniform, hard = d.negative_pools(ds, positive, rng)
    assert len(hard) == d.N_HARD_NEGATIVES
    members = set(ds.gid_members(ds.poi(positive).gid))
    assert set(hard) <= members and positive not in hard


def test_negatives_exclude_positive_and_deduplicate():
    ds = d.generate_synthetic(small_settings(), seed=25)
    for i, p in enumerate(ds.pois[:200]):
        rng = d.negatives_rng(17, 0, i)
        negs = d.sample_negatives(ds, p.poi_id, rng)
        assert p.poi_id not in negs
        assert len(set(negs)) == len(negs)
        uniform, hard = d.negative_pools(ds, p.poi_id, d.negatives_rng(17, 0, i))
        assert set(negs) == set(uniform) | set(hard)


def test_lone_gid_member_gets_uniform_negatives_only():
    pois = [d.PoiRecord(i, 0.5, i, 0, 0, 0.0, 0.0) for i in range(30)]
    ds = d.Dataset(pois=pois, users=[], interactions={})
    negs = d.sample_negatives(ds, 3, np.random.default_rng(1))
    assert len(negs) == d.N_UNIFORM_NEGATIVES and 3 not in negs


def test_sample_negatives_rejects_unknown_positive():
    ds = d.generate_synthetic(small_settings(), seed=27)
    with pytest.raises(d.DataError, match="not in corpus"):
        d.sample_negatives(ds, 10**9, np.random.default_rng(0))
