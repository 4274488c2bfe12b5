#!/usr/bin/env python3
"""Validates recorded API payloads against the published JSON schemas.

Usage: validate_api_samples.py <schema_dir> <sample_dir>
Each sample file is {"schema": "<name>", "body": <payload>} and is checked
against <schema_dir>/<name>.schema.json.
"""
import json
import pathlib
import sys

import jsonschema
from referencing import Registry, Resource


def main():
    schema_dir = pathlib.Path(sys.argv[1])
    sample_dir = pathlib.Path(sys.argv[2])
    schemas = {}
    registry = Registry()
    for path in sorted(schema_dir.glob("*.schema.json")):
        schema = json.loads(path.read_text(encoding="utf-8"))
        jsonschema.Draft202012Validator.check_schema(schema)
        schemas[path.name[: -len(".schema.json")]] = schema
        registry = registry.with_resource(schema["$id"], Resource.from_contents(schema))

    samples = sorted(sample_dir.glob("*.json"))
    if len(samples) < 10:
        print(f"FAIL: only {len(samples)} samples in {sample_dir}")
        return 1
    failures = 0
    for path in samples:
        sample = json.loads(path.read_text(encoding="utf-8"))
        name = sample["schema"]
        if name not in schemas:
            print(f"FAIL {path.name}: no schema named {name}")
            failures += 1
            continue
        validator = jsonschema.Draft202012Validator(schemas[name], registry=registry)
        errors = sorted(validator.iter_errors(sample["body"]), key=lambda e: list(e.path))
        for e in errors:
            print(f"FAIL {path.name}: {'/'.join(map(str, e.path))}: {e.message}")
        failures += bool(errors)
    print(f"{len(samples) - failures}/{len(samples)} samples valid against {len(schemas)} schemas")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
