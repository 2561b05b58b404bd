"""Two-alternative forced-choice study: pair generation, sessions, aggregation.

Pairs are pre-rendered patch files (no model inference happens here). Session
state lives in an append-only record log with periodic snapshots, so a service
restart reproduces reports byte-identically.
"""

from __future__ import annotations

import json
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import list_images, load_image, save_image, tile_patches, DatasetSpec


class ConflictError(RuntimeError):
    """The pair was already answered in this session."""


class NotFoundError(KeyError):
    """Unknown session or pair."""


class EmptyReportError(RuntimeError):
    """No responses recorded yet."""


@dataclass(frozen=True)
class TrialPair:
    pair_id: str
    patch_a: str  # path relative to the study images root
    patch_b: str
    method_a: str
    method_b: str
    source_patch_id: str
    patch_reference: str | None = None  # the source patch, shown only when configured

    def __post_init__(self):
        if self.source_patch_id != self.pair_id:
            # both patches must come from the same source patch
            raise ValueError("pair_id must identify the shared source patch")


@dataclass
class Response:
    side: str  # "left" | "right"
    timestamp: float


@dataclass
class StudySession:
    session_id: str
    participant_token: str
    trial_order: list[str]  # pair ids, randomized per session
    flipped: dict[str, bool]  # pair_id -> True when patch_b is shown on the left
    responses: dict[str, Response] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return len(self.responses) == len(self.trial_order)

    def first_unanswered_index(self) -> int:
        for i, pid in enumerate(self.trial_order):
            if pid not in self.responses:
                return i
        return len(self.trial_order)


@dataclass(frozen=True)
class StudyReport:
    preference_pct: dict[str, float]  # mean of per-participant percentages
    pooled_pct: dict[str, float]  # per-response pooled percentages, for transparency
    per_pair: dict[str, dict[str, int]]  # pair_id -> method -> count
    participant_count: int

    def to_json(self) -> str:
        payload = {
            "preference_pct": self.preference_pct,
            "pooled_pct": self.pooled_pct,
            "per_pair": self.per_pair,
            "participant_count": self.participant_count,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def generate_pairs(
    dir_a: Path | str,
    dir_b: Path | str,
    n: int = 46,
    crop: int = 256,
    seed: int = 0,
    method_a: str | None = None,
    method_b: str | None = None,
    out_images: Path | str | None = None,
    dir_reference: Path | str | None = None,
) -> list[TrialPair]:
    """Sample n trial pairs from matched reconstructions of the same sources.

    Both directories must hold reconstructions with matching filenames. Images
    are tiled into crop x crop patches (same grid on both sides, so each pair
    shares its source patch); n pairs are drawn without replacement. When
    ``out_images`` is given the sampled patches are written there under one
    subdirectory per method. ``dir_reference`` optionally supplies the source
    images so sessions can be configured to show the original next to the pair.
    """
    if n < 1:
        raise ValueError("a study needs at least one trial pair")
    dir_a, dir_b = Path(dir_a), Path(dir_b)
    method_a = method_a or dir_a.name
    method_b = method_b or dir_b.name
    if method_a == method_b:
        raise ValueError("method labels must differ")
    names_a = {p.name: p for p in list_images(DatasetSpec(root=dir_a))}
    names_b = {p.name: p for p in list_images(DatasetSpec(root=dir_b))}
    names_ref = (
        {p.name: p for p in list_images(DatasetSpec(root=Path(dir_reference)))}
        if dir_reference is not None
        else {}
    )
    matched = sorted(set(names_a) & set(names_b))
    if not matched:
        raise ValueError("no matched filenames between the two directories")

    patches: list[tuple[str, np.ndarray, np.ndarray, np.ndarray | None]] = []
    for name in matched:
        img_a = load_image(names_a[name])
        img_b = load_image(names_b[name])
        if img_a.shape != img_b.shape:
            raise ValueError(f"{name}: reconstructions disagree on size")
        tiles_a = tile_patches(img_a, crop)
        tiles_b = tile_patches(img_b, crop)
        tiles_ref = tile_patches(load_image(names_ref[name]), crop) if name in names_ref else None
        cols = img_a.shape[1] // crop
        for idx, (ta, tb) in enumerate(zip(tiles_a, tiles_b)):
            pid = f"{Path(name).stem}_r{idx // cols}_c{idx % cols}"
            patches.append((pid, ta, tb, tiles_ref[idx] if tiles_ref else None))

    if len(patches) < n:
        raise ValueError(
            f"need {n} matched patches but only {len(patches)} available "
            f"(short by {n - len(patches)})"
        )
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(patches), size=n, replace=False).tolist())

    pairs = []
    for i in chosen:
        pid, tile_a, tile_b, tile_ref = patches[i]
        rel_a = f"{method_a}/{pid}.png"
        rel_b = f"{method_b}/{pid}.png"
        rel_ref = f"reference/{pid}.png" if tile_ref is not None else None
        if out_images is not None:
            root = Path(out_images)
            (root / method_a).mkdir(parents=True, exist_ok=True)
            (root / method_b).mkdir(parents=True, exist_ok=True)
            save_image(tile_a, root / rel_a)
            save_image(tile_b, root / rel_b)
            if rel_ref is not None:
                (root / "reference").mkdir(parents=True, exist_ok=True)
                save_image(tile_ref, root / rel_ref)
        pairs.append(TrialPair(
            pair_id=pid, patch_a=rel_a, patch_b=rel_b,
            method_a=method_a, method_b=method_b, source_patch_id=pid,
            patch_reference=rel_ref,
        ))
    return pairs


def save_pairs_manifest(pairs: list[TrialPair], path: Path | str, meta: dict | None = None) -> None:
    payload = {
        "meta": meta or {},
        "pairs": [vars(p) for p in pairs],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_pairs_manifest(path: Path | str) -> list[TrialPair]:
    payload = json.loads(Path(path).read_text())
    return [TrialPair(**p) for p in payload["pairs"]]


def aggregate(sessions: list[StudySession], pairs: list[TrialPair]) -> StudyReport:
    """Mean-of-participant preference percentages (plus pooled counts).

    A participant contributes the percentage of their own responses that chose
    each method; those percentages are averaged across participants.
    """
    by_id = {p.pair_id: p for p in pairs}
    methods = sorted({p.method_a for p in pairs} | {p.method_b for p in pairs})
    per_participant: list[dict[str, float]] = []
    pooled: dict[str, int] = {m: 0 for m in methods}
    per_pair: dict[str, dict[str, int]] = {p.pair_id: {m: 0 for m in (p.method_a, p.method_b)} for p in pairs}

    for session in sorted(sessions, key=lambda s: s.session_id):
        counts = {m: 0 for m in methods}
        answered = 0
        for pid, response in session.responses.items():
            pair = by_id.get(pid)
            if pair is None:
                continue
            left_method = pair.method_b if session.flipped.get(pid) else pair.method_a
            right_method = pair.method_a if session.flipped.get(pid) else pair.method_b
            chosen = left_method if response.side == "left" else right_method
            counts[chosen] += 1
            pooled[chosen] += 1
            per_pair[pid][chosen] += 1
            answered += 1
        if answered:
            per_participant.append({m: 100.0 * counts[m] / answered for m in methods})

    if not per_participant:
        raise EmptyReportError("no responses recorded")
    total = sum(pooled.values())
    preference = {
        m: sum(p[m] for p in per_participant) / len(per_participant) for m in methods
    }
    pooled_pct = {m: 100.0 * pooled[m] / total for m in methods}
    return StudyReport(
        preference_pct=preference,
        pooled_pct=pooled_pct,
        per_pair=per_pair,
        participant_count=len(per_participant),
    )


class StudyStore:
    """Crash-safe session storage: append-only JSONL log + periodic snapshots.

    All mutation goes through a lock; concurrent participants are serialized
    per store (desk-scale studies never contend meaningfully).
    """

    def __init__(self, root: Path | str, pairs: list[TrialPair], snapshot_every: int = 50):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.pairs = list(pairs)
        self.snapshot_every = snapshot_every
        self.sessions: dict[str, StudySession] = {}
        self._by_token: dict[str, str] = {}
        self._lock = threading.RLock()
        self._seq = 0
        self._log_path = self.root / "log.jsonl"
        self._snapshot_path = self.root / "snapshot.json"
        self._load()

    # -- persistence ----------------------------------------------------

    def _append(self, event: dict) -> None:
        self._seq += 1
        event["seq"] = self._seq
        with open(self._log_path, "a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()
        if self.snapshot_every and self._seq % self.snapshot_every == 0:
            self._write_snapshot()

    def _write_snapshot(self) -> None:
        state = {
            "last_seq": self._seq,
            "sessions": [
                {
                    "session_id": s.session_id,
                    "participant_token": s.participant_token,
                    "trial_order": s.trial_order,
                    "flipped": s.flipped,
                    "responses": {k: vars(v) for k, v in s.responses.items()},
                }
                for s in self.sessions.values()
            ],
        }
        tmp = self._snapshot_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(state, sort_keys=True))
        tmp.replace(self._snapshot_path)

    def _apply_event(self, event: dict) -> None:
        if event["type"] == "session":
            session = StudySession(
                session_id=event["session_id"],
                participant_token=event["participant_token"],
                trial_order=event["trial_order"],
                flipped=event["flipped"],
            )
            self.sessions[session.session_id] = session
            self._by_token[session.participant_token] = session.session_id
        elif event["type"] == "response":
            session = self.sessions[event["session_id"]]
            session.responses[event["pair_id"]] = Response(
                side=event["side"], timestamp=event["timestamp"]
            )

    def _load(self) -> None:
        last_seq = 0
        if self._snapshot_path.exists():
            state = json.loads(self._snapshot_path.read_text())
            last_seq = state["last_seq"]
            for s in state["sessions"]:
                session = StudySession(
                    session_id=s["session_id"],
                    participant_token=s["participant_token"],
                    trial_order=s["trial_order"],
                    flipped=s["flipped"],
                    responses={k: Response(**v) for k, v in s["responses"].items()},
                )
                self.sessions[session.session_id] = session
                self._by_token[session.participant_token] = session.session_id
        self._seq = last_seq
        if self._log_path.exists():
            for line in self._log_path.read_text().splitlines():
                event = json.loads(line)
                if event["seq"] > last_seq:
                    self._apply_event(event)
                    self._seq = event["seq"]

    # -- operations -------------------------------------------------------

    def create_session(self, participant_token: str | None = None, seed: int | None = None) -> StudySession:
        """New randomized session; reuses the existing one for a known token."""
        with self._lock:
            if participant_token and participant_token in self._by_token:
                return self.sessions[self._by_token[participant_token]]
            token = participant_token or secrets.token_hex(8)
            rng = np.random.default_rng(seed if seed is not None else secrets.randbits(63))
            order = [self.pairs[i].pair_id for i in rng.permutation(len(self.pairs))]
            flipped = {p.pair_id: bool(rng.integers(0, 2)) for p in self.pairs}
            session = StudySession(
                session_id=secrets.token_hex(8) if seed is None else f"session{len(self.sessions):04d}",
                participant_token=token,
                trial_order=order,
                flipped=flipped,
            )
            self.sessions[session.session_id] = session
            self._by_token[token] = session.session_id
            self._append({
                "type": "session",
                "session_id": session.session_id,
                "participant_token": token,
                "trial_order": order,
                "flipped": flipped,
            })
            return session

    def get_session(self, session_id: str) -> StudySession:
        with self._lock:
            if session_id not in self.sessions:
                raise NotFoundError(session_id)
            return self.sessions[session_id]

    def record_response(self, session_id: str, pair_id: str, side: str) -> StudySession:
        if side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {side!r}")
        with self._lock:
            session = self.get_session(session_id)
            if pair_id not in session.flipped:
                raise NotFoundError(pair_id)
            if pair_id in session.responses:
                raise ConflictError(f"pair {pair_id} already answered in {session_id}")
            response = Response(side=side, timestamp=time.time())
            session.responses[pair_id] = response
            self._append({
                "type": "response",
                "session_id": session_id,
                "pair_id": pair_id,
                "side": side,
                "timestamp": response.timestamp,
            })
            return session

    def aggregate(self) -> StudyReport:
        with self._lock:
            return aggregate(list(self.sessions.values()), self.pairs)
