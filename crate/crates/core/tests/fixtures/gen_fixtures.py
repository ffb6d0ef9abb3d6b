#!/usr/bin/env python3
"""Regenerates the conn.log fixtures in this directory.

conn_1000.log: native Zeek TSV, 1000 data rows over 2070 minutes starting at
an interval boundary, every 600 s interval populated, rows 100, 500 and 900
corrupted.
conn_small.jsonl: the first 40 valid rows of the same traffic as JSON lines.
"""

import json
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))
ORIGIN = 1_600_000_200.0
SPAN = 2070 * 60
ROWS = 1000
CORRUPT = {100: "bad_ip", 500: "bad_port", 900: "bad_ts"}

HEADER = [
    "#separator \\x09",
    "#set_separator\t,",
    "#empty_field\t(empty)",
    "#unset_field\t-",
    "#path\tconn",
    "#open\t2020-09-13-12-00-00",
    "#fields\tts\tuid\tid.orig_h\tid.orig_p\tid.resp_h\tid.resp_p\tproto\tservice\tduration"
    "\torig_bytes\tresp_bytes\tconn_state\tlocal_orig\tlocal_resp\tmissed_bytes\thistory"
    "\torig_pkts\torig_ip_bytes\tresp_pkts\tresp_ip_bytes\ttunnel_parents",
    "#types\ttime\tstring\taddr\tport\taddr\tport\tenum\tstring\tinterval\tcount\tcount"
    "\tstring\tbool\tbool\tcount\tstring\tcount\tcount\tcount\tcount\tset[string]",
]

SERVICES = [("udp", "dns", 53), ("tcp", "http", 80), ("tcp", "ssl", 443), ("tcp", "-", 22)]


def flows(rng):
    intervals = SPAN // 600
    # One flow pinned to each interval, the rest uniform over the span.
    times = [ORIGIN + i * 600 + rng.uniform(0, 599) for i in range(intervals)]
    times += [ORIGIN + rng.uniform(0, SPAN - 1) for _ in range(ROWS - intervals)]
    times.sort()
    for n, ts in enumerate(times):
        proto, service, port = rng.choice(SERVICES)
        orig_bytes = rng.randint(0, 5000)
        resp_bytes = rng.randint(0, 50000)
        orig_pkts = max(1, orig_bytes // 1400 + 1)
        resp_pkts = max(1, resp_bytes // 1400 + 1)
        hdr = 28 if proto == "udp" else 40
        yield {
            "ts": round(ts, 6),
            "uid": "C%07d" % n,
            "id.orig_h": "10.1.%d.%d" % (rng.randint(0, 1), rng.randint(1, 20)),
            "id.orig_p": rng.randint(1024, 65535),
            "id.resp_h": "10.0.0.%d" % rng.randint(1, 8),
            "id.resp_p": port,
            "proto": proto,
            "service": service,
            "duration": round(rng.uniform(0, 3), 6),
            "orig_bytes": orig_bytes,
            "resp_bytes": resp_bytes,
            "conn_state": "SF",
            "missed_bytes": 0,
            "history": "ShADadFf" if proto == "tcp" else "Dd",
            "orig_pkts": orig_pkts,
            "orig_ip_bytes": orig_bytes + hdr * orig_pkts,
            "resp_pkts": resp_pkts,
            "resp_ip_bytes": resp_bytes + hdr * resp_pkts,
        }


def tsv_row(f, corrupt=None):
    orig_h, orig_p, ts = f["id.orig_h"], str(f["id.orig_p"]), "%.6f" % f["ts"]
    if corrupt == "bad_ip":
        orig_h = "10.1.999.1"
    elif corrupt == "bad_port":
        orig_p = "port80"
    elif corrupt == "bad_ts":
        ts = "yesterday"
    cols = [
        ts, f["uid"], orig_h, orig_p, f["id.resp_h"], str(f["id.resp_p"]), f["proto"],
        f["service"], "%.6f" % f["duration"], str(f["orig_bytes"]), str(f["resp_bytes"]),
        f["conn_state"], "T", "T", "0", f["history"], str(f["orig_pkts"]),
        str(f["orig_ip_bytes"]), str(f["resp_pkts"]), str(f["resp_ip_bytes"]), "(empty)",
    ]
    return "\t".join(cols)


def main():
    rng = random.Random(20200913)
    rows = list(flows(rng))
    with open(os.path.join(HERE, "conn_1000.log"), "w") as out:
        out.write("\n".join(HEADER) + "\n")
        for n, f in enumerate(rows, start=1):
            out.write(tsv_row(f, CORRUPT.get(n)) + "\n")
        out.write("#close\t2020-09-15-02-30-00\n")
    with open(os.path.join(HERE, "conn_small.jsonl"), "w") as out:
        for f in rows[:40]:
            rec = {k: v for k, v in f.items() if v != "-"}
            out.write(json.dumps(rec) + "\n")


if __name__ == "__main__":
    main()
