"""Standalone predictions with the exported pipeline.

Usage: python predict.py INPUT_CSV OUTPUT_CSV

INPUT_CSV must contain every column listed in input_contract.json. The
target column, if present, is ignored.
"""
import csv
import json
import os
import sys

HERE = os.path.dirname(os.path.abspath(__file__))


def main(argv):
    if len(argv) != 3:
        sys.stderr.write("usage: python predict.py INPUT_CSV OUTPUT_CSV\n")
        return 2
    input_path, output_path = argv[1], argv[2]
    with open(os.path.join(HERE, "input_contract.json")) as handle:
        contract = json.load(handle)
    with open(input_path, newline="") as handle:
        header = next(csv.reader(handle), [])
    missing = [c for c in contract["required_columns"] if c not in header]
    if missing:
        sys.stderr.write("schema error: input is missing required columns: %s\n" % ", ".join(missing))
        return 2
    sys.path.insert(0, HERE)
    module = __import__(os.path.splitext(contract["pipeline"])[0])
    module.run_inference(os.path.join(HERE, contract["model"]), input_path, output_path)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
