"""Builds the DBLP-ACM fixture from the py_entitymatching sample datasets.

Usage: prepare_dblp_acm.py <datasets dir> <output dir>

Writes records.csv (DBLP rows first, then ACM rows; tid = row index),
matches.csv (tid pairs of the gold-labeled matches) and rules.json.
Inputs are latin-1; outputs are UTF-8.
"""
import csv
import json
import os
import sys

src, dst = sys.argv[1], sys.argv[2]
os.makedirs(dst, exist_ok=True)


def read(name):
    with open(os.path.join(src, name), encoding="latin1", newline="") as f:
        return list(csv.DictReader(f))


dblp, acm = read("DBLP.csv"), read("ACM.csv")
tid = {}
with open(os.path.join(dst, "records.csv"), "w", encoding="utf-8", newline="") as f:
    w = csv.writer(f)
    w.writerow(["source", "id", "title", "authors", "venue", "year"])
    for source, rows in (("dblp", dblp), ("acm", acm)):
        for r in rows:
            tid[(source, r["id"])] = len(tid)
            year = r["year"].strip()
            if year.endswith(".0"):
                year = year[:-2]
            w.writerow([source, r["id"], r["title"].strip(), r["authors"].strip(), r["venue"].strip(), year])

with open(os.path.join(dst, "matches.csv"), "w", encoding="utf-8", newline="") as f:
    w = csv.writer(f)
    w.writerow(["t_tid", "s_tid"])
    for r in read("dblp_acm_demo_labels.csv"):
        if r["gold"] == "1":
            w.writerow([tid[("dblp", r["ltable.id"])], tid[("acm", r["rtable.id"])]])

rules = [
    {
        "id": "title_year",
        "when": [
            {"t_attr": "title", "op": "sim", "s_attr": "title", "measure": "jaccard", "threshold": 0.75},
            {"t_attr": "year", "op": "eq", "s_attr": "year"},
        ],
    },
    {
        "id": "authors_title",
        "when": [
            {"t_attr": "authors", "op": "sim", "s_attr": "authors", "measure": "edit", "threshold": 0.8},
            {"t_attr": "title", "op": "sim", "s_attr": "title", "measure": "jaccard", "threshold": 0.5},
        ],
    },
]
with open(os.path.join(dst, "rules.json"), "w", encoding="utf-8") as f:
    json.dump(rules, f, indent=2)
    f.write("\n")
