#!/usr/bin/env python3
"""Validate hdlm JSON (or JSONL, one record per line) against a shipped schema.

usage: check_schema.py SCHEMA_DIR SCHEMA_NAME FILE [--jsonl]
"""
import json
import pathlib
import sys

import jsonschema
from referencing import Registry, Resource


def main(argv):
    if len(argv) not in (4, 5):
        print(__doc__, file=sys.stderr)
        return 2
    schema_dir, name, path = pathlib.Path(argv[1]), argv[2], pathlib.Path(argv[3])
    jsonl = len(argv) == 5 and argv[4] == "--jsonl"

    resources = []
    for f in schema_dir.glob("*.schema.json"):
        resources.append((f.name, Resource.from_contents(json.loads(f.read_text()))))
    registry = Registry().with_resources(resources)
    schema = json.loads((schema_dir / name).read_text())
    validator = jsonschema.Draft202012Validator(schema, registry=registry)

    text = path.read_text()
    docs = [json.loads(line) for line in text.splitlines() if line.strip()] if jsonl else [json.loads(text)]
    bad = 0
    for i, doc in enumerate(docs, 1):
        for err in validator.iter_errors(doc):
            bad += 1
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            print(f"{path}:{i}: {where}: {err.message}", file=sys.stderr)
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
