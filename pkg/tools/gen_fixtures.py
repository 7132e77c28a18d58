"""Regenerate the bundled fixture files under src/segcap/fixtures/.

The fixtures are frozen in the repository; rerun this only when the
synthetic generators change, and expect frozen test scores to move.
"""

import json
from pathlib import Path

import numpy as np

from segcap import synth
from segcap.corpus import write_segments

FIXTURES = Path(__file__).resolve().parent.parent / "src" / "segcap" / "fixtures"


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(20240817)
    cap_path = FIXTURES / "cap_lines.jsonl"
    with open(cap_path, "w", encoding="utf-8") as fh:
        for text in synth.caption_lines(1000, rng):
            fh.write(json.dumps({"text": text}) + "\n")
    print("wrote", cap_path)

    rng = np.random.default_rng(20240818)
    asr_path = FIXTURES / "asr_segments.jsonl"
    records = []
    texts = synth.asr_lines(1000, rng)
    for k, text in enumerate(texts):
        records.append(synth.timed_record(f"fx{k // 8:04d}", k % 8, text,
                                          start=4.0 * (k % 8)))
    write_segments(asr_path, records, "asr+video")
    print("wrote", asr_path)

    rng = np.random.default_rng(20240819)
    refs_path = FIXTURES / "tagged_refs.jsonl"
    with open(refs_path, "w", encoding="utf-8") as fh:
        for video_id, seg_index, tag in synth.tag_reference_corpus(200, rng):
            fh.write(json.dumps({"video_id": video_id, "seg_index": seg_index,
                                 "caption": tag}) + "\n")
    print("wrote", refs_path)


if __name__ == "__main__":
    main()
