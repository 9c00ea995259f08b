""" Encoding of MIND tsv lines """
# https://msnews.github.io/
import collections.abc
import datetime
import json
from typing import Any

from newsfuse.unpack import Impression, NewsRecord


def pack(value: Any, sep: str = " ") -> str:
    """ Util for joining iterables into one field """
    if isinstance(value, str):
        return value
    elif isinstance(value, collections.abc.Iterable):
        return sep.join(str(v) for v in value)
    else:
        return str(value)


def pack_time(timestamp: datetime.datetime) -> str:
    """ MIND writes month, day and hour without zero padding """
    hour = timestamp.hour % 12 or 12
    return "{}/{}/{} {}:{:02d}:{:02d} {}".format(
        timestamp.month, timestamp.day, timestamp.year, hour,
        timestamp.minute, timestamp.second,
        "AM" if timestamp.hour < 12 else "PM")


def pack_news(record: NewsRecord) -> str:
    # news.tsv
    # <news_id> <category> <subcategory> <title> <abstract> <url>
    #     <title_entities> <abstract_entities>
    # ----------
    # N55528  lifestyle  lifestyleroyals  The Brands Queen Elizabeth...
    #     https://assets.msn.com/...  [{"Label": "Prince Philip", ...}]  []
    return pack([
        record.news_id,
        record.category,
        record.subcategory,
        record.title,
        record.abstract,
        record.url,
        json.dumps(record.title_entities),
        json.dumps(record.abstract_entities)], sep="\t")


def pack_behavior(impression: Impression) -> str:
    # behaviors.tsv
    # <impression_id> <user_id> <time> <history> <impressions>
    # ----------
    # 1  U13740  11/11/2019 9:05:58 AM  N55189 N42782  N55689-1 N35729-0
    return pack([
        impression.impression_id,
        impression.user_id,
        pack_time(impression.timestamp),
        pack(impression.history_news_ids),
        pack("{}-{}".format(news_id, int(clicked))
             for news_id, clicked in impression.candidates)], sep="\t")
