"""Data model, TSV files, synthetic log generation, splitting, and negatives.

The on-disk format is three tab-separated files with header rows:
``pois.tsv`` (poi_id, nscore, gid, cid, arid, coordinates), ``users.tsv``
(user_id, f1..f6), and ``interactions.tsv`` (user_id, timestamp, action_type,
target_poi_id, gid, arid, weather, travel_mode, via_poi_id). Optional fields
are empty strings when missing. Interactions are kept time-sorted per user
with file position as the stable tiebreak.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_UNIFORM_NEGATIVES = 14
N_HARD_NEGATIVES = 50
HALF_HOUR_MS = 30 * 60 * 1000
DAY_MS = 48 * HALF_HOUR_MS

# seed-stream tags so every random purpose draws from an independent stream
SEED_GENERATE = 1
SEED_INIT = 2
SEED_NEGATIVES = 3
SEED_SHUFFLE = 4


class DataError(ValueError):
    """Raised for malformed files or violated referential invariants."""


@dataclass(frozen=True)
class PoiRecord:
    poi_id: int
    nscore: float
    gid: int
    cid: int
    arid: int
    x: float
    y: float


@dataclass(frozen=True)
class UserRecord:
    user_id: int
    profile: tuple  # six entries, each an int or None


@dataclass(frozen=True)
class InteractionRecord:
    user_id: int
    timestamp: int
    action_type: int
    target_poi_id: int
    gid: int
    arid: int
    weather: int
    travel_mode: int | None
    via_poi_id: int | None


@dataclass(frozen=True)
class UserSplit:
    train: tuple
    val: int | None
    test: int | None


@dataclass
class DatasetSplit:
    """Per-user interaction indices; val strictly precedes test in time."""

    users: dict  # user_id -> UserSplit


@dataclass
class Dataset:
    pois: list
    users: list
    interactions: dict  # user_id -> list[InteractionRecord], time sorted
    _poi_by_id: dict = field(default_factory=dict, repr=False)
    _gid_members: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._poi_by_id = {p.poi_id: p for p in self.pois}
        members: dict = {}
        for p in self.pois:
            members.setdefault(p.gid, []).append(p.poi_id)
        self._gid_members = members

    @property
    def n_pois(self) -> int:
        return len(self.pois)

    def poi(self, poi_id: int) -> PoiRecord:
        return self._poi_by_id[poi_id]

    def has_poi(self, poi_id: int) -> bool:
        return poi_id in self._poi_by_id

    def gid_members(self, gid: int) -> list:
        return self._gid_members.get(gid, [])

    def all_interactions(self):
        for user in self.users:
            yield from self.interactions.get(user.user_id, [])

    def n_interactions(self) -> int:
        return sum(len(v) for v in self.interactions.values())


@dataclass
class GeneratorSettings:
    """Knobs for the planted-structure synthetic log generator."""

    users: int = 1000
    pois: int = 5000
    gids: int = 500
    categories: int = 50
    arids: int = 20
    weathers: int = 10
    actions: int = 5
    modes: int = 5
    interactions_mean: float = 25.0
    max_interactions: int = 50
    p_fav: float = 0.6
    p_mode: float = 0.9
    p_time: float = 0.7
    p_via: float = 0.5
    via_rate: float = 0.3
    p_home: float = 0.8
    mode_missing: float = 0.2
    profile_vocab: int = 8
    profile_missing: float = 0.2


# ---------------------------------------------------------------------------
# TSV input/output

POI_HEADER = ["poi_id", "nscore", "gid", "cid", "arid", "coordinates"]
USER_HEADER = ["user_id", "f1", "f2", "f3", "f4", "f5", "f6"]
INTERACTION_HEADER = [
    "user_id",
    "timestamp",
    "action_type",
    "target_poi_id",
    "gid",
    "arid",
    "weather",
    "travel_mode",
    "via_poi_id",
]


def _parse_int(value: str, path: str, row: int, column: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise DataError(f"{path} row {row}: malformed integer in {column}: {value!r}") from None


def _parse_float(value: str, path: str, row: int, column: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise DataError(f"{path} row {row}: malformed number in {column}: {value!r}") from None


def _read_rows(path: Path, expected_header: list):
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataError(f"{path}: missing header row")
    header = lines[0].split("\t")
    if header != expected_header:
        raise DataError(f"{path}: unexpected header {header!r}, want {expected_header!r}")
    return [line.split("\t") for line in lines[1:]]


def load_store_tables(poi_path, user_path, interaction_path) -> Dataset:
    """Load and cross-validate the three tables; rejects dangling references."""
    poi_path, user_path, interaction_path = Path(poi_path), Path(user_path), Path(interaction_path)

    pois = []
    for row_no, cols in enumerate(_read_rows(poi_path, POI_HEADER), start=2):
        if len(cols) != len(POI_HEADER):
            raise DataError(f"{poi_path} row {row_no}: expected {len(POI_HEADER)} columns, got {len(cols)}")
        coord = cols[5].split(",")
        if len(coord) != 2:
            raise DataError(f"{poi_path} row {row_no}: malformed coordinates {cols[5]!r}")
        pois.append(
            PoiRecord(
                poi_id=_parse_int(cols[0], str(poi_path), row_no, "poi_id"),
                nscore=_parse_float(cols[1], str(poi_path), row_no, "nscore"),
                gid=_parse_int(cols[2], str(poi_path), row_no, "gid"),
                cid=_parse_int(cols[3], str(poi_path), row_no, "cid"),
                arid=_parse_int(cols[4], str(poi_path), row_no, "arid"),
                x=_parse_float(coord[0], str(poi_path), row_no, "coordinates"),
                y=_parse_float(coord[1], str(poi_path), row_no, "coordinates"),
            )
        )
    poi_ids = {p.poi_id for p in pois}
    if len(poi_ids) != len(pois):
        raise DataError(f"{poi_path}: duplicate poi_id values")

    users = []
    for row_no, cols in enumerate(_read_rows(user_path, USER_HEADER), start=2):
        if len(cols) != len(USER_HEADER):
            raise DataError(f"{user_path} row {row_no}: expected {len(USER_HEADER)} columns, got {len(cols)}")
        profile = tuple(
            None if cols[i] == "" else _parse_int(cols[i], str(user_path), row_no, f"f{i}")
            for i in range(1, 7)
        )
        users.append(UserRecord(user_id=_parse_int(cols[0], str(user_path), row_no, "user_id"), profile=profile))
    user_ids = {u.user_id for u in users}
    if len(user_ids) != len(users):
        raise DataError(f"{user_path}: duplicate user_id values")

    interactions: dict = {u.user_id: [] for u in users}
    for row_no, cols in enumerate(_read_rows(interaction_path, INTERACTION_HEADER), start=2):
        if len(cols) != len(INTERACTION_HEADER):
            raise DataError(
                f"{interaction_path} row {row_no}: expected {len(INTERACTION_HEADER)} columns, got {len(cols)}"
            )
        user_id = _parse_int(cols[0], str(interaction_path), row_no, "user_id")
        if user_id not in user_ids:
            raise DataError(f"{interaction_path} row {row_no}: unknown user_id {user_id}")
        target = _parse_int(cols[3], str(interaction_path), row_no, "target_poi_id")
        if target not in poi_ids:
            raise DataError(f"{interaction_path} row {row_no}: unknown target_poi_id {target}")
        via = None if cols[8] == "" else _parse_int(cols[8], str(interaction_path), row_no, "via_poi_id")
        if via is not None and via not in poi_ids:
            raise DataError(f"{interaction_path} row {row_no}: unknown via_poi_id {via}")
        interactions[user_id].append(
            InteractionRecord(
                user_id=user_id,
                timestamp=_parse_int(cols[1], str(interaction_path), row_no, "timestamp"),
                action_type=_parse_int(cols[2], str(interaction_path), row_no, "action_type"),
                target_poi_id=target,
                gid=_parse_int(cols[4], str(interaction_path), row_no, "gid"),
                arid=_parse_int(cols[5], str(interaction_path), row_no, "arid"),
                weather=_parse_int(cols[6], str(interaction_path), row_no, "weather"),
                travel_mode=None if cols[7] == "" else _parse_int(cols[7], str(interaction_path), row_no, "travel_mode"),
                via_poi_id=via,
            )
        )
    for recs in interactions.values():
        recs.sort(key=lambda r: r.timestamp)  # stable: ties keep file order

    return Dataset(pois=pois, users=users, interactions=interactions)


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    return load_store_tables(
        directory / "pois.tsv", directory / "users.tsv", directory / "interactions.tsv"
    )


def _fmt_opt(value) -> str:
    return "" if value is None else str(value)


def save_dataset(dataset: Dataset, directory) -> None:
    """Write the three TSV files; numbers keep full round-trip precision."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "pois.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(POI_HEADER) + "\n")
        for p in dataset.pois:
            coord = f"{float(p.x)!r},{float(p.y)!r}"
            fh.write(f"{p.poi_id}\t{float(p.nscore)!r}\t{p.gid}\t{p.cid}\t{p.arid}\t{coord}\n")
    with open(directory / "users.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(USER_HEADER) + "\n")
        for u in dataset.users:
            fh.write(str(u.user_id) + "\t" + "\t".join(_fmt_opt(v) for v in u.profile) + "\n")
    with open(directory / "interactions.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(INTERACTION_HEADER) + "\n")
        for user in dataset.users:
            for r in dataset.interactions.get(user.user_id, []):
                fh.write(
                    f"{r.user_id}\t{r.timestamp}\t{r.action_type}\t{r.target_poi_id}\t{r.gid}"
                    f"\t{r.arid}\t{r.weather}\t{_fmt_opt(r.travel_mode)}\t{_fmt_opt(r.via_poi_id)}\n"
                )


# ---------------------------------------------------------------------------
# Synthetic generation

def _weighted_choice(rng, weights_cum, n=None):
    """Index draw(s) proportional to weights, via a precomputed cumsum."""
    u = rng.random(n) if n is not None else rng.random()
    return np.searchsorted(weights_cum, u * weights_cum[-1], side="right")


def generate_synthetic(settings: GeneratorSettings, seed: int) -> Dataset:
    """Generate a schema-valid dataset with planted per-user structure.

    Each user gets a home geographic block, a favorite POI revisited with
    probability ``p_fav``, a dominant travel mode (``p_mode``), and a
    preferred departure half-hour bucket (``p_time``). Via POIs, when
    present, come from the destination's block with probability ``p_via``.
    Remaining draws are popularity (nscore) weighted. Timestamps are
    strictly increasing per user.
    """
    s = settings
    if s.pois < N_UNIFORM_NEGATIVES + 2:
        raise DataError(
            f"need at least {N_UNIFORM_NEGATIVES + 2} POIs for negative sampling, got {s.pois}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, SEED_GENERATE]))

    # POIs: long-tail block sizes, long-tail categories, popularity scores.
    gid_weights = 1.0 / np.arange(1, s.gids + 1) ** 0.8
    gid_cum = np.cumsum(gid_weights)
    cid_weights = 1.0 / np.arange(1, s.categories + 1) ** 1.1
    cid_cum = np.cumsum(cid_weights)
    arid_of_gid = rng.integers(0, s.arids, size=s.gids)
    gid_centers = rng.uniform(-50000.0, 50000.0, size=(s.gids, 2))

    poi_gids = _weighted_choice(rng, gid_cum, s.pois)
    poi_cids = _weighted_choice(rng, cid_cum, s.pois)
    nscores = rng.random(s.pois)
    jitter = rng.normal(0.0, 150.0, size=(s.pois, 2))
    pois = [
        PoiRecord(
            poi_id=i,
            nscore=float(nscores[i]),
            gid=int(poi_gids[i]),
            cid=int(poi_cids[i]),
            arid=int(arid_of_gid[poi_gids[i]]),
            x=float(gid_centers[poi_gids[i], 0] + jitter[i, 0]),
            y=float(gid_centers[poi_gids[i], 1] + jitter[i, 1]),
        )
        for i in range(s.pois)
    ]
    nscore_cum = np.cumsum(nscores)
    members_by_gid: dict = {}
    for i, g in enumerate(poi_gids):
        members_by_gid.setdefault(int(g), []).append(i)

    action_weights = 1.0 / np.arange(1, s.actions + 1)
    action_cum = np.cumsum(action_weights)

    # interactions-per-user: lognormal tuned for mean 25, median 21, cap 50
    count_mu, count_sigma = math.log(21.0), 0.55

    users = []
    interactions: dict = {}
    for uid in range(s.users):
        profile = tuple(
            None if rng.random() < s.profile_missing else int(rng.integers(0, s.profile_vocab))
            for _ in range(6)
        )
        users.append(UserRecord(user_id=uid, profile=profile))

        favorite = int(_weighted_choice(rng, nscore_cum))
        home_gid = int(poi_gids[favorite])
        dominant_mode = int(rng.integers(0, s.modes))
        preferred_bucket = int(rng.integers(0, 48))

        count = int(np.clip(round(rng.lognormal(count_mu, count_sigma)), 1, s.max_interactions))
        day = int(rng.integers(0, 5))
        prev_ts = -1
        recs = []
        for _ in range(count):
            day += int(rng.integers(0, 3))
            if rng.random() < s.p_time:
                bucket = preferred_bucket
            else:
                bucket = int(rng.integers(0, 48))
            ts = day * DAY_MS + bucket * HALF_HOUR_MS + int(rng.integers(0, HALF_HOUR_MS))
            if ts <= prev_ts:
                day += 1
                ts += DAY_MS
            prev_ts = ts

            if rng.random() < s.p_fav:
                target = favorite
            else:
                target = int(_weighted_choice(rng, nscore_cum))

            if rng.random() < s.mode_missing:
                mode = None
            elif rng.random() < s.p_mode:
                mode = dominant_mode
            else:
                mode = int(rng.integers(0, s.modes))

            via = None
            if rng.random() < s.via_rate:
                if rng.random() < s.p_via:
                    pool = [p for p in members_by_gid.get(int(poi_gids[target]), []) if p != target]
                    if pool:
                        via = int(pool[rng.integers(0, len(pool))])
                if via is None:
                    candidate = int(_weighted_choice(rng, nscore_cum))
                    via = candidate if candidate != target else None

            ctx_gid = home_gid if rng.random() < s.p_home else int(poi_gids[rng.integers(0, s.pois)])
            recs.append(
                InteractionRecord(
                    user_id=uid,
                    timestamp=ts,
                    action_type=int(_weighted_choice(rng, action_cum)),
                    target_poi_id=target,
                    gid=ctx_gid,
                    arid=int(arid_of_gid[ctx_gid]),
                    weather=int(rng.integers(0, s.weathers)),
                    travel_mode=mode,
                    via_poi_id=via,
                )
            )
        interactions[uid] = recs

    return Dataset(pois=pois, users=users, interactions=interactions)


# ---------------------------------------------------------------------------
# Splitting and negative sampling

def temporal_split(dataset: Dataset) -> DatasetSplit:
    """Last interaction to test, second-to-last to validation, rest to train.

    Users with fewer than three interactions go entirely to train.
    """
    users = {}
    for user in dataset.users:
        recs = dataset.interactions.get(user.user_id, [])
        n = len(recs)
        if n >= 3:
            users[user.user_id] = UserSplit(train=tuple(range(n - 2)), val=n - 2, test=n - 1)
        else:
            users[user.user_id] = UserSplit(train=tuple(range(n)), val=None, test=None)
    return DatasetSplit(users=users)


def negative_pools(dataset: Dataset, positive: int, rng) -> tuple:
    """The two negative pools: uniform corpus draws and same-block draws.

    Returns (uniform, hard) with the positive excluded from both and no
    duplicates inside either pool.
    """
    if not dataset.has_poi(positive):
        raise DataError(f"positive poi {positive} not in corpus")
    n = dataset.n_pois
    if n <= N_UNIFORM_NEGATIVES + 1:
        raise DataError(f"corpus too small for {N_UNIFORM_NEGATIVES} uniform negatives: {n} POIs")
    all_ids = [p.poi_id for p in dataset.pois]
    picks = rng.choice(n, size=N_UNIFORM_NEGATIVES + 1, replace=False)
    uniform = [all_ids[i] for i in picks if all_ids[i] != positive][:N_UNIFORM_NEGATIVES]

    members = [p for p in dataset.gid_members(dataset.poi(positive).gid) if p != positive]
    if len(members) <= N_HARD_NEGATIVES:
        hard = list(members)
    else:
        idx = rng.choice(len(members), size=N_HARD_NEGATIVES, replace=False)
        hard = [members[i] for i in idx]
    return uniform, hard


def sample_negatives(dataset: Dataset, positive: int, rng) -> list:
    """Hybrid negatives: 14 uniform plus up to 50 same-block POIs, deduplicated."""
    uniform, hard = negative_pools(dataset, positive, rng)
    seen = set(uniform)
    return uniform + [p for p in hard if p not in seen]


def negatives_rng(seed: int, *key_parts: int):
    """A reproducible per-example stream, independent of iteration order."""
    return np.random.default_rng(np.random.SeedSequence([seed, SEED_NEGATIVES, *key_parts]))


# ---------------------------------------------------------------------------
# Summary statistics for generated datasets

def dataset_stats(dataset: Dataset) -> dict:
    counts = [len(dataset.interactions.get(u.user_id, [])) for u in dataset.users]
    per_cid: dict = {}
    per_gid: dict = {}
    for p in dataset.pois:
        per_cid[p.cid] = per_cid.get(p.cid, 0) + 1
        per_gid[p.gid] = per_gid.get(p.gid, 0) + 1
    per_action: dict = {}
    per_mode: dict = {}
    missing_mode = 0
    with_via = 0
    for r in dataset.all_interactions():
        per_action[r.action_type] = per_action.get(r.action_type, 0) + 1
        if r.travel_mode is None:
            missing_mode += 1
        else:
            per_mode[r.travel_mode] = per_mode.get(r.travel_mode, 0) + 1
        if r.via_poi_id is not None:
            with_via += 1
    total = sum(counts)
    return {
        "users": len(dataset.users),
        "pois": dataset.n_pois,
        "interactions": total,
        "interactions_per_user_mean": (total / len(counts)) if counts else 0.0,
        "interactions_per_user_median": float(np.median(counts)) if counts else 0.0,
        "interactions_missing_mode": missing_mode,
        "interactions_with_via": with_via,
        "poi_count_by_category": dict(sorted(per_cid.items())),
        "poi_count_by_gid": dict(sorted(per_gid.items(), key=lambda kv: -kv[1])),
        "interaction_count_by_action": dict(sorted(per_action.items())),
        "interaction_count_by_mode": dict(sorted(per_mode.items())),
    }
