#!/usr/bin/env python3
"""
Where to get the datasets.
The CSVs are Kaggle downloads and cannot be redistributed; this prints the
sources, the file names sagechain expects and which of them are already in
SAGECHAIN_DATA_DIR.
"""
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

sys.path.append(str(Path(__file__).resolve().parent.parent))

from utils.dataset_util import load_schemas

KAGGLE_SOURCES = {
    "DataCo": "shashwatwork/dataco-smart-supply-chain-for-big-data-analysis",
    "Shipping": "prachi13/customer-analytics",
    "SmartLogistics": "ziya07/smart-logistics-supply-chain-dataset",
}


def print_separator():
    print("\n" + "=" * 70 + "\n")


def dataset_status(data_dir=None):
    """dataset_id -> (expected filename, present in data_dir)."""
    status = {}
    for dataset_id, schema in load_schemas().items():
        present = bool(data_dir) and (Path(data_dir) / schema.default_filename).is_file()
        status[dataset_id] = (schema.default_filename, present)
    return status


def main():
    load_dotenv()
    data_dir = os.getenv("SAGECHAIN_DATA_DIR")
    print("sagechain datasets")
    print("=" * 70)
    print("Download each dataset from Kaggle, for example with the kaggle CLI:")
    print()
    for slug in KAGGLE_SOURCES.values():
        print(f"  kaggle datasets download -d {slug} --unzip -p $SAGECHAIN_DATA_DIR")
    print_separator()

    if not data_dir:
        print("SAGECHAIN_DATA_DIR is not set; pass --path to each command or set it in .env")
    for dataset_id, (filename, present) in dataset_status(data_dir).items():
        mark = "found" if present else "missing"
        print(f"  {dataset_id:<15} {filename:<35} {mark}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
