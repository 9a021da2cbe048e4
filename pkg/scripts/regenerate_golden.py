#!/usr/bin/env python3
"""Regenerate the frozen golden transcript for the correction flow.

Run from the repository root after an intentional behavior change, then
review the diff before committing.
"""
from pathlib import Path
import sys

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from expertloop.simulator import ScenarioRunner  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
SCENARIO = ROOT / "scenarios" / "hair_wash_correction.yaml"
GOLDEN = ROOT / "tests" / "golden" / "hair_wash_correction.jsonl"


def main() -> int:
    result = ScenarioRunner(SCENARIO).run()
    if not result.passed:
        for expectation in result.expectations:
            if not expectation.passed:
                print(f"FAIL {expectation.description}\n{expectation.detail}")
        return 1
    GOLDEN.parent.mkdir(parents=True, exist_ok=True)
    GOLDEN.write_text(result.transcript_text(), encoding="utf-8")
    print(f"wrote {GOLDEN} ({len(result.transcript)} entries)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
