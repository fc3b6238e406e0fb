#!/usr/bin/env python3
"""End-to-end demo: synthesize frames, summarize, and inspect contexts.

Writes everything into a scratch directory and prints a few of the
resulting context records.
"""

import json
import pathlib
import sys
import tempfile

sys.path.insert(0, "src")

from context_forge.cli import main as cli_main


def main() -> int:
    scratch = pathlib.Path(tempfile.mkdtemp(prefix="context_forge_demo_"))
    frames = scratch / "frames.jsonl"
    contexts = scratch / "contexts.jsonl"

    rc = cli_main(
        ["synth", "--seed", "7", "--out", str(frames), "--n-frames", "300",
         "--drop-rate", "0.15", "--spurious-rate", "0.05"]
    )
    if rc:
        return rc
    rc = cli_main(["summarize", "--frames", str(frames), "--out", str(contexts)])
    if rc:
        return rc

    print(f"\nscratch dir: {scratch}")
    print("sample contexts:")
    for line in contexts.read_text().splitlines()[60:300:48]:
        record = json.loads(line)
        print(f"  frame {record['frame_id']:>4}: {record['text']!r}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
