#!/usr/bin/env python3
"""Build, rate and tally a blinded 200-case reader study with planted
preferences, reproducing the 161/200 -> 80.50% tally path.

Usage: python scripts/reader_study_demo.py --out /tmp/study-demo
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from medvlkit.harness import ReaderRating, build_reader_study, tally_reader_study


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--n-cases", type=int, default=200)
    parser.add_argument("--planted-wins", type=int, default=161)
    args = parser.parse_args()

    cases = [
        {
            "case_id": f"case_{i:03d}",
            "image_ref": f"images/cxr_{i:03d}.ppm",
            "model_report": f"automated interpretation {i}: lungs clear, normal heart size.",
            "reference_report": f"clinician interpretation {i}: no acute cardiopulmonary disease.",
        }
        for i in range(args.n_cases)
    ]
    sessions, key = build_reader_study(cases, seed=args.seed, raters=["rater_a", "rater_b"])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for session in sessions:
        path = out / f"{session.session_id}.json"
        path.write_text(json.dumps(session.to_json(), indent=2, sort_keys=True) + "\n")
        leak = any(tok in path.read_text().lower() for tok in ("model", "reference"))
        print(f"wrote {path} ({len(session.cases)} cases, source words present: {leak})")
    (out / "key.json").write_text(json.dumps(key, indent=2, sort_keys=True) + "\n")

    ratings = []
    for i, case_id in enumerate(sorted(key["model_side"])):
        side = key["model_side"][case_id]
        pref = side if i < args.planted_wins else ("B" if side == "A" else "A")
        ratings.append(ReaderRating(case_id=case_id, preference=pref, errors=0, omissions=0))

    stats = tally_reader_study(sessions, ratings, key)
    (out / "tally.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    rate = stats["preference_rate_model_excluding_ties"]
    print(
        f"planted {args.planted_wins}/{args.n_cases} model wins -> "
        f"preference rate {rate:.4f} ({rate:.2%})"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
