#!/usr/bin/env python3
"""Expands extract_cases.json into extract_golden.json.

Offsets are computed here with Python string search (code point indices),
independently of the C++ pipeline. Expected annotations are listed in text
order in the cases file; each surface is located after the previous one.
"""
import json
import pathlib

HERE = pathlib.Path(__file__).resolve().parent


def expand(case):
    text = case["text"]
    cursor = 0
    out = []
    for e in case["expect"]:
        begin = text.index(e["surface"], cursor)
        end = begin + len(e["surface"])
        cursor = begin
        a = {
            "annotation_type": e["type"],
            "begin": begin,
            "end": end,
            "surface": e["surface"],
            "canonical_term": e.get("canonical", e["surface"]),
            "negated": e.get("negated", False),
            "provenance": e.get("provenance", "system_dictionary"),
            "confidence": 1.0,
        }
        if "code" in e:
            a["code"] = e["code"]
        if "trigger" in e:
            a["negation_trigger"] = e["trigger"]
        out.append(a)
    return {"id": case["id"], "text": text, "annotations": out}


def main():
    cases = json.loads((HERE / "extract_cases.json").read_text(encoding="utf-8"))
    golden = [expand(c) for c in cases]
    (HERE / "extract_golden.json").write_text(
        json.dumps(golden, ensure_ascii=False, indent=1, sort_keys=True) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
