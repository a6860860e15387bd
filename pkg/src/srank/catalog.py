"""Item catalog and click-session records, plus their line-delimited JSON formats."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

EMBEDDING_WEEK = "embedding_week"
RANKING_WEEK = "ranking_week"
PERIODS = (EMBEDDING_WEEK, RANKING_WEEK)

_NON_ALNUM = re.compile(r"[\W_]+")


class DataError(ValueError):
    """Raised when an input file violates the catalog or session contract."""


def tokenize_title(title: str) -> frozenset[str]:
    """Case-fold ``title`` and split it on runs of non-alphanumeric characters.

    >>> sorted(tokenize_title("V-Neck dress DRESS"))
    ['dress', 'neck', 'v']
    """
    return frozenset(tok for tok in _NON_ALNUM.split(title.casefold()) if tok)


@dataclass(frozen=True)
class Item:
    item_id: str
    title: str
    price: float
    title_tokens: frozenset[str] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.item_id:
            raise DataError("item_id must be a non-empty string")
        if not self.price > 0:
            raise DataError(f"non-positive price for item {self.item_id!r}")
        object.__setattr__(self, "title_tokens", tokenize_title(self.title))


class Catalog(Mapping[str, Item]):
    """Read-only mapping from item id to :class:`Item`."""

    def __init__(self, items: Iterable[Item] = ()):
        self._items: dict[str, Item] = {}
        for item in items:
            if item.item_id in self._items:
                raise DataError(f"duplicate item_id {item.item_id!r}")
            self._items[item.item_id] = item

    def __getitem__(self, item_id: str) -> Item:
        return self._items[item_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Catalog):
            return NotImplemented
        return self._items == other._items

    def __repr__(self) -> str:
        return f"Catalog({len(self)} items)"


@dataclass(frozen=True)
class Impression:
    """One search results page shown inside a session.

    ``labels`` maps every candidate to 1 (sold) or 0, and ``base_features``
    maps every candidate to its named non-personalized ranking features.
    """

    query_id: str
    context_clicks: tuple[str, ...]
    candidates: tuple[str, ...]
    labels: Mapping[str, int]
    base_features: Mapping[str, Mapping[str, float]]

    @property
    def sold(self) -> list[str]:
        return [c for c in self.candidates if self.labels[c] == 1]


@dataclass(frozen=True)
class ClickSession:
    session_id: str
    period: str
    clicks: tuple[str, ...]
    impressions: tuple[Impression, ...] = ()

    def __post_init__(self) -> None:
        if self.period not in PERIODS:
            raise DataError(f"unknown period tag {self.period!r} in session {self.session_id!r}")
        for imp in self.impressions:
            n = len(imp.context_clicks)
            if tuple(self.clicks[:n]) != tuple(imp.context_clicks):
                raise DataError(
                    f"impression {imp.query_id!r} in session {self.session_id!r}: "
                    "context_clicks is not a prefix of the session's clicks"
                )


def _read_json_lines(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"malformed JSON at line {lineno}: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise DataError(f"malformed record at line {lineno}: expected an object")
            yield lineno, obj


def load_catalog(path: str | Path) -> Catalog:
    items: dict[str, Item] = {}
    first_line: dict[str, int] = {}
    for lineno, obj in _read_json_lines(path):
        try:
            item_id = obj["item_id"]
            title = obj["title"]
            price = obj["price"]
        except KeyError as exc:
            raise DataError(f"malformed record at line {lineno}: missing field {exc.args[0]!r}") from None
        if not isinstance(item_id, str) or not item_id or not isinstance(title, str):
            raise DataError(f"malformed record at line {lineno}: bad item_id or title")
        if isinstance(price, bool) or not isinstance(price, (int, float)):
            raise DataError(f"malformed record at line {lineno}: price is not a number")
        if not price > 0:
            raise DataError(f"non-positive price at line {lineno}")
        if item_id in items:
            raise DataError(
                f"duplicate item_id {item_id!r} at lines {first_line[item_id]} and {lineno}"
            )
        items[item_id] = Item(item_id, title, float(price))
        first_line[item_id] = lineno
    return Catalog(items.values())


def _parse_impression(obj: dict, lineno: int) -> Impression:
    try:
        candidates = tuple(obj["candidates"])
        sold = set(obj.get("sold", ()))
        base = obj.get("base_features", {})
        imp = Impression(
            query_id=str(obj["query_id"]),
            context_clicks=tuple(obj.get("context_clicks", ())),
            candidates=candidates,
            labels={c: int(c in sold) for c in candidates},
            base_features={c: {k: float(v) for k, v in base[c].items()} for c in candidates},
        )
    except KeyError as exc:
        raise DataError(f"malformed impression at line {lineno}: missing {exc.args[0]!r}") from None
    if not sold <= set(candidates):
        raise DataError(f"impression {imp.query_id!r} at line {lineno}: sold item not among candidates")
    return imp


def load_sessions(path: str | Path) -> list[ClickSession]:
    sessions = []
    for lineno, obj in _read_json_lines(path):
        try:
            sid, period, clicks = str(obj["session_id"]), obj["period"], obj["clicks"]
        except KeyError as exc:
            raise DataError(f"malformed session at line {lineno}: missing {exc.args[0]!r}") from None
        impressions = tuple(_parse_impression(o, lineno) for o in obj.get("impressions", ()))
        try:
            sessions.append(ClickSession(sid, period, tuple(clicks), impressions))
        except DataError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
    return sessions


def write_catalog(catalog: Catalog, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in catalog.values():
            fh.write(json.dumps({"item_id": item.item_id, "title": item.title, "price": item.price}))
            fh.write("\n")


def session_to_json(session: ClickSession) -> dict:
    return {
        "session_id": session.session_id,
        "period": session.period,
        "clicks": list(session.clicks),
        "impressions": [
            {
                "query_id": imp.query_id,
                "context_clicks": list(imp.context_clicks),
                "candidates": list(imp.candidates),
                "sold": imp.sold,
                "base_features": {c: dict(imp.base_features[c]) for c in imp.candidates},
            }
            for imp in session.impressions
        ],
    }


def write_sessions(sessions: Sequence[ClickSession], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sessions:
            fh.write(json.dumps(session_to_json(s)))
            fh.write("\n")
