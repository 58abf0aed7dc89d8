"""Token sequences with per-task label channels, vocabularies, and batches.

Every interaction becomes three chronological tokens: a scenario token S
(context block, region, weather, half-hour bucket), an item token I (the
target POI), and a feedback token F (action type plus travel mode). The
departure-time, travel-mode, and destination labels ride on the S token of
their interaction; the via label rides on the I token, conditioning it on a
known destination. Everything else carries a null label. The S token comes
before its own I and F tokens, so causal attention alone rules out leakage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import HALF_HOUR_MS, Dataset, InteractionRecord, UserRecord

KIND_S, KIND_I, KIND_F = 0, 1, 2
N_TIME_BUCKETS = 48
TASKS = ("when", "how", "where", "via")
DEFAULT_BATCH_SIZE = 64


class IndexMap:
    """Raw id -> contiguous row index, with an optional trailing missing slot."""

    def __init__(self, values, with_missing: bool = False):
        self.ids_by_row = sorted(set(values))
        self._rows = {v: i for i, v in enumerate(self.ids_by_row)}
        self.missing_row = len(self._rows) if with_missing else None
        self.size = len(self._rows) + (1 if with_missing else 0)

    def row(self, value) -> int:
        if value is None:
            if self.missing_row is None:
                raise KeyError("missing value not allowed here")
            return self.missing_row
        return self._rows[value]


@dataclass
class Vocabulary:
    """Contiguous index spaces for every embedded field, sized from a dataset."""

    poi: IndexMap
    gid: IndexMap
    arid: IndexMap
    weather: IndexMap
    action: IndexMap
    mode: IndexMap  # includes a missing row
    profiles: list  # six IndexMaps, each with a missing row
    poi_cid_rows: np.ndarray  # vocab poi row -> category id
    n_time_buckets: int = N_TIME_BUCKETS

    @property
    def n_modes(self) -> int:
        return self.mode.size - 1  # real modes, excluding the missing row

    @property
    def poi_ids_by_row(self) -> list:
        return self.poi.ids_by_row

    @staticmethod
    def from_dataset(dataset: Dataset) -> "Vocabulary":
        gids = {p.gid for p in dataset.pois}
        arids = {p.arid for p in dataset.pois}
        weathers, actions, modes = set(), set(), set()
        for rec in dataset.all_interactions():
            gids.add(rec.gid)
            arids.add(rec.arid)
            weathers.add(rec.weather)
            actions.add(rec.action_type)
            if rec.travel_mode is not None:
                modes.add(rec.travel_mode)
        profiles = []
        for i in range(6):
            values = {u.profile[i] for u in dataset.users if u.profile[i] is not None}
            profiles.append(IndexMap(values, with_missing=True))
        poi = IndexMap([p.poi_id for p in dataset.pois])
        cid_rows = np.zeros(poi.size, dtype=np.int64)
        for p in dataset.pois:
            cid_rows[poi.row(p.poi_id)] = p.cid
        return Vocabulary(
            poi=poi,
            gid=IndexMap(gids),
            arid=IndexMap(arids),
            weather=IndexMap(weathers),
            action=IndexMap(actions),
            mode=IndexMap(modes, with_missing=True),
            profiles=profiles,
            poi_cid_rows=cid_rows,
        )

    def profile_rows(self, user: UserRecord) -> np.ndarray:
        return np.array([m.row(v) for m, v in zip(self.profiles, user.profile)], dtype=np.int64)


def time_bucket(timestamp_ms: int) -> int:
    """Half-hour-of-day bucket, 48 per day."""
    return int((timestamp_ms // HALF_HOUR_MS) % N_TIME_BUCKETS)


def derive_labels(interaction: InteractionRecord) -> tuple:
    """(when, how, where, via) for one interaction; None marks a null label."""
    return (
        time_bucket(interaction.timestamp),
        interaction.travel_mode,
        interaction.target_poi_id,
        interaction.via_poi_id,
    )


@dataclass
class LabeledSequence:
    """Token stream plus four label channels with validity masks.

    All id fields are vocabulary rows. ``ordinal`` records each token's
    interaction index in the user's full log, which keys per-example
    negative sampling stably across truncation.
    """

    user_id: int
    kind: np.ndarray
    gid: np.ndarray
    arid: np.ndarray
    weather: np.ndarray
    tbucket: np.ndarray
    poi: np.ndarray
    action: np.ndarray
    mode: np.ndarray
    timestamp: np.ndarray
    ordinal: np.ndarray
    when_label: np.ndarray
    how_label: np.ndarray
    where_label: np.ndarray
    via_label: np.ndarray
    when_mask: np.ndarray
    how_mask: np.ndarray
    where_mask: np.ndarray
    via_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.kind)

    def keep_labels_at(self, positions) -> None:
        """Restrict every label channel to the given positions (for eval)."""
        keep = np.zeros(len(self), dtype=bool)
        keep[list(positions)] = True
        self.when_mask &= keep
        self.how_mask &= keep
        self.where_mask &= keep
        self.via_mask &= keep


def build_labeled_sequence(
    user: UserRecord,
    interactions: list,
    max_len: int,
    vocab: Vocabulary,
    ordinals: list | None = None,
) -> LabeledSequence:
    """Emit [S, I, F] per interaction, keeping the most recent ones that fit."""
    if max_len < 3:
        raise ValueError(f"max_len must be at least 3, got {max_len}")
    if ordinals is None:
        ordinals = list(range(len(interactions)))
    keep = max_len // 3
    interactions = interactions[-keep:]
    ordinals = list(ordinals)[-keep:]

    n = 3 * len(interactions)
    seq = LabeledSequence(
        user_id=user.user_id,
        kind=np.zeros(n, dtype=np.int64),
        gid=np.zeros(n, dtype=np.int64),
        arid=np.zeros(n, dtype=np.int64),
        weather=np.zeros(n, dtype=np.int64),
        tbucket=np.zeros(n, dtype=np.int64),
        poi=np.zeros(n, dtype=np.int64),
        action=np.zeros(n, dtype=np.int64),
        mode=np.zeros(n, dtype=np.int64),
        timestamp=np.zeros(n, dtype=np.int64),
        ordinal=np.zeros(n, dtype=np.int64),
        when_label=np.zeros(n, dtype=np.int64),
        how_label=np.zeros(n, dtype=np.int64),
        where_label=np.zeros(n, dtype=np.int64),
        via_label=np.zeros(n, dtype=np.int64),
        when_mask=np.zeros(n, dtype=bool),
        how_mask=np.zeros(n, dtype=bool),
        where_mask=np.zeros(n, dtype=bool),
        via_mask=np.zeros(n, dtype=bool),
    )
    for i, (rec, order) in enumerate(zip(interactions, ordinals)):
        s, it, f = 3 * i, 3 * i + 1, 3 * i + 2
        when, how, where, via = derive_labels(rec)
        seq.kind[s], seq.kind[it], seq.kind[f] = KIND_S, KIND_I, KIND_F
        seq.timestamp[s] = seq.timestamp[it] = seq.timestamp[f] = rec.timestamp
        seq.ordinal[s] = seq.ordinal[it] = seq.ordinal[f] = order

        seq.gid[s] = vocab.gid.row(rec.gid)
        seq.arid[s] = vocab.arid.row(rec.arid)
        seq.weather[s] = vocab.weather.row(rec.weather)
        seq.tbucket[s] = when
        seq.poi[it] = vocab.poi.row(rec.target_poi_id)
        seq.action[f] = vocab.action.row(rec.action_type)
        seq.mode[f] = vocab.mode.row(rec.travel_mode)

        seq.when_label[s] = when
        seq.when_mask[s] = True
        seq.where_label[s] = vocab.poi.row(where)
        seq.where_mask[s] = True
        if how is not None:
            seq.how_label[s] = vocab.mode.row(how)
            seq.how_mask[s] = True
        if via is not None:
            seq.via_label[it] = vocab.poi.row(via)
            seq.via_mask[it] = True
    return seq


_TOKEN_FIELDS = (
    "kind",
    "gid",
    "arid",
    "weather",
    "tbucket",
    "poi",
    "action",
    "mode",
    "timestamp",
    "ordinal",
    "when_label",
    "how_label",
    "where_label",
    "via_label",
)
_MASK_FIELDS = ("when_mask", "how_mask", "where_mask", "via_mask")


@dataclass
class Batch:
    """Right-padded (B, T) arrays; padding positions carry null labels."""

    user_ids: np.ndarray
    profile_rows: np.ndarray  # (B, 6)
    lengths: np.ndarray
    valid: np.ndarray  # (B, T) bool
    kind: np.ndarray
    gid: np.ndarray
    arid: np.ndarray
    weather: np.ndarray
    tbucket: np.ndarray
    poi: np.ndarray
    action: np.ndarray
    mode: np.ndarray
    timestamp: np.ndarray
    ordinal: np.ndarray
    when_label: np.ndarray
    how_label: np.ndarray
    where_label: np.ndarray
    via_label: np.ndarray
    when_mask: np.ndarray
    how_mask: np.ndarray
    where_mask: np.ndarray
    via_mask: np.ndarray

    @property
    def size(self) -> int:
        return len(self.user_ids)

    @property
    def max_len(self) -> int:
        return self.valid.shape[1]

    def kind_mask(self, kind: int) -> np.ndarray:
        return self.valid & (self.kind == kind)


def batchify(sequences: list, vocab: Vocabulary, users_by_id: dict, batch_size: int = DEFAULT_BATCH_SIZE) -> list:
    """Chunk sequences in the given order into right-padded batches."""
    if not sequences:
        raise ValueError("batchify: no sequences")
    batches = []
    for start in range(0, len(sequences), batch_size):
        chunk = sequences[start : start + batch_size]
        b, t = len(chunk), max(len(s) for s in chunk)
        arrays = {name: np.zeros((b, t), dtype=np.int64) for name in _TOKEN_FIELDS}
        masks = {name: np.zeros((b, t), dtype=bool) for name in _MASK_FIELDS}
        valid = np.zeros((b, t), dtype=bool)
        profile_rows = np.zeros((b, 6), dtype=np.int64)
        lengths = np.zeros(b, dtype=np.int64)
        for i, seq in enumerate(chunk):
            n = len(seq)
            lengths[i] = n
            valid[i, :n] = True
            for name in _TOKEN_FIELDS:
                arrays[name][i, :n] = getattr(seq, name)
            for name in _MASK_FIELDS:
                masks[name][i, :n] = getattr(seq, name)
            profile_rows[i] = vocab.profile_rows(users_by_id[seq.user_id])
        batches.append(
            Batch(
                user_ids=np.array([s.user_id for s in chunk], dtype=np.int64),
                profile_rows=profile_rows,
                lengths=lengths,
                valid=valid,
                **arrays,
                **masks,
            )
        )
    return batches


def shuffled(sequences: list, seed: int, epoch: int) -> list:
    from .data import SEED_SHUFFLE

    rng = np.random.default_rng(np.random.SeedSequence([seed, SEED_SHUFFLE, epoch]))
    order = rng.permutation(len(sequences))
    return [sequences[i] for i in order]
