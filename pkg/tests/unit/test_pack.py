import datetime

from newsfuse.pack import pack, pack_behavior, pack_news, pack_time
from newsfuse.unpack import Impression, NewsRecord, unpack_behavior


def test_pack():
    """ strings pass through, iterables join """
    assert pack("N1 N2") == "N1 N2"
    assert pack(["N1", "N2"]) == "N1 N2"
    assert pack(("a", 1), sep="\t") == "a\t1"
    assert pack(3) == "3"
    assert pack([]) == ""


def test_time():
    """ no zero padding on month, day or hour """
    assert pack_time(datetime.datetime(2019, 11, 9, 9, 5, 58)) == \
        "11/9/2019 9:05:58 AM"
    assert pack_time(datetime.datetime(2019, 11, 14, 0, 0, 1)) == \
        "11/14/2019 12:00:01 AM"
    assert pack_time(datetime.datetime(2019, 11, 14, 12, 30, 0)) == \
        "11/14/2019 12:30:00 PM"
    assert pack_time(datetime.datetime(2019, 11, 14, 23, 59, 59)) == \
        "11/14/2019 11:59:59 PM"


def test_behavior():
    impression = Impression(
        "9", "U7", datetime.datetime(2019, 11, 15, 13, 2, 0),
        ["N1", "N2"], [("N3", True), ("N4", False)])
    line = pack_behavior(impression)
    assert line == "9\tU7\t11/15/2019 1:02:00 PM\tN1 N2\tN3-1 N4-0"
    assert unpack_behavior(line) == impression


def test_behavior_empty_history():
    """ the history column stays, empty """
    impression = Impression(
        "2", "U1", datetime.datetime(2019, 11, 11, 8, 0, 0), [],
        [("N3", False)])
    assert pack_behavior(impression).split("\t")[3] == ""


def test_news():
    """ entities go back out as json """
    record = NewsRecord(
        "N1", "sports", "football", "Rams win", "", "",
        ["rams", "win"], [{"Label": "Rams", "WikidataId": "Q1"}], [])
    fields = pack_news(record).split("\t")
    assert fields[:4] == ["N1", "sports", "football", "Rams win"]
    assert fields[6] == '[{"Label": "Rams", "WikidataId": "Q1"}]'
    assert fields[7] == "[]"
