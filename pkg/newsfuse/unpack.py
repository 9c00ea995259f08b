""" Decoding of MIND tsv lines """
# https://msnews.github.io/
import dataclasses
import datetime
import json
import re
from typing import Any, Dict, List, Pattern, Tuple  # noqa

from newsfuse.exceptions import ParseError

TIME_FORMAT = "%m/%d/%Y %I:%M:%S %p"

NEWS_COLUMNS = ("news_id", "category", "subcategory", "title", "abstract",
                "url", "title_entities", "abstract_entities")
BEHAVIOR_COLUMNS = ("impression_id", "user_id", "time", "history",
                    "impressions")

# Lowercased text splits on runs of anything that is not a letter or digit
RE_TOKEN = re.compile(r"[^\W_]+")  # type: Pattern[str]

RE_CANDIDATE = re.compile(
    r"""
    ^
    (?P<news_id>\S+)    # News id (N12345)
                        # Greedy, so the label splits on the last "-"
    -
    (?P<label>[01])     # 1 clicked, 0 shown but skipped
    $
    """, re.VERBOSE)  # type: Pattern[str]


@dataclasses.dataclass
class NewsRecord:
    news_id: str
    category: str
    subcategory: str
    title: str
    abstract: str
    url: str
    title_tokens: List[str]
    title_entities: List[Dict[str, Any]]
    abstract_entities: List[Dict[str, Any]]
    malformed_entities: bool = False


@dataclasses.dataclass
class Impression:
    impression_id: str
    user_id: str
    timestamp: datetime.datetime
    history_news_ids: List[str]
    candidates: List[Tuple[str, bool]]

    @property
    def day(self) -> datetime.date:
        return self.timestamp.date()


def tokenize(text: str) -> List[str]:
    return RE_TOKEN.findall(text.lower())


def split_line(line: str, columns: Tuple[str, ...],
               lineno: int = 0) -> List[str]:
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) != len(columns):
        raise ParseError("expected {} tab-separated columns, found {}".format(
            len(columns), len(fields)), lineno)
    return fields


def unpack_entities(field: str) -> Tuple[List[Dict[str, Any]], bool]:
    """ Returns (entities, malformed); bad JSON decodes to no entities """
    if not field.strip():
        return [], False
    try:
        entities = json.loads(field)
    except ValueError:
        return [], True
    if not isinstance(entities, list) or \
            not all(isinstance(e, dict) for e in entities):
        return [], True
    return entities, False


def unpack_news(line: str, lineno: int = 0) -> NewsRecord:
    fields = split_line(line, NEWS_COLUMNS, lineno)
    title_entities, bad_title = unpack_entities(fields[6])
    abstract_entities, bad_abstract = unpack_entities(fields[7])
    return NewsRecord(
        news_id=fields[0],
        category=fields[1],
        subcategory=fields[2],
        title=fields[3],
        abstract=fields[4],
        url=fields[5],
        title_tokens=tokenize(fields[3]),
        title_entities=title_entities,
        abstract_entities=abstract_entities,
        malformed_entities=bad_title or bad_abstract)


def unpack_time(field: str, lineno: int = 0) -> datetime.datetime:
    try:
        return datetime.datetime.strptime(field.strip(), TIME_FORMAT)
    except ValueError:
        raise ParseError("bad timestamp {!r}".format(field), lineno) from None


def unpack_candidate(field: str, lineno: int = 0) -> Tuple[str, bool]:
    match = RE_CANDIDATE.match(field)
    if not match:
        raise ParseError("bad candidate label {!r}".format(field), lineno)
    return match.group("news_id"), match.group("label") == "1"


def unpack_behavior(line: str, lineno: int = 0) -> Impression:
    fields = split_line(line, BEHAVIOR_COLUMNS, lineno)
    return Impression(
        impression_id=fields[0],
        user_id=fields[1],
        timestamp=unpack_time(fields[2], lineno),
        history_news_ids=fields[3].split(),
        candidates=[unpack_candidate(c, lineno) for c in fields[4].split()])
