"""Reduce ProPublica's compas-scores-two-years.csv to the columns used here.

Usage: python scripts/prepare_compas.py RAW_CSV [OUT_CSV]

No row filter is applied; rows keep their file order. ``charge_degree`` is
F (felony) or M (misdemeanor); ``gender`` is Male or Female.
"""

import csv
import sys
from pathlib import Path

COLUMNS = ("gender", "age", "race", "priors_count", "charge_degree", "two_year_recid")


def main(argv):
    if not 1 <= len(argv) <= 2:
        sys.exit(__doc__)
    src = Path(argv[0])
    out = Path(argv[1]) if len(argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "compas.csv"
    with src.open(newline="", encoding="utf-8") as fh, out.open("w", newline="", encoding="utf-8") as dst:
        writer = csv.writer(dst)
        writer.writerow(COLUMNS)
        n = 0
        for rec in csv.DictReader(fh):
            writer.writerow(
                (rec["sex"], rec["age"], rec["race"], rec["priors_count"], rec["c_charge_degree"], rec["two_year_recid"])
            )
            n += 1
    print(f"wrote {n} rows to {out}")


if __name__ == "__main__":
    main(sys.argv[1:])
