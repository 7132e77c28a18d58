"""Deterministic synthetic corpora for desk-scale runs.

Two families: a filler-heavy spoken style paired with a terse caption
style through a fixed keyword transform (caption = "<verb>ing the
<object>"), and videos whose frame features encode the segment index,
which makes the alignment/ordering tasks learnable without real footage.
Also generates a timeline-tag reference corpus whose tag distribution
mimics instructional-video annotations (frequent "intro"/"outro", short
free-text tags).
"""

from __future__ import annotations

import numpy as np

from .corpus import SegmentRecord, TimedToken

VERBS = ["add", "mix", "pour", "heat", "whisk", "toast", "roast", "wash",
         "fill", "open", "turn", "cook", "season", "blend", "boil", "steam",
         "clean", "fold", "brush", "spread", "peel", "crack", "stack", "trim",
         "drain", "spray", "paint", "sand", "polish", "attach", "tighten",
         "loosen", "drill", "hammer", "press", "pinch", "splash", "soak",
         "melt", "mash", "grill", "broil", "knead", "layer"]
OBJECTS = ["eggs", "flour", "butter", "sugar", "milk", "dough", "onions",
           "cheese", "garlic", "salt", "pepper", "tomatoes", "noodles", "rice",
           "beans", "carrots", "apples", "cream", "bread", "sauce", "batter",
           "spinach", "mushrooms", "chicken", "potatoes", "lemons", "basil",
           "honey", "yeast", "broth", "salad", "pasta", "shrimp", "steak",
           "frosting", "syrup", "lettuce", "almonds", "berries", "oats"]
FILLERS = ["okay", "so", "now", "um", "just", "really", "basically", "alright",
           "then", "right", "here", "folks"]
INDEX_WORDS = ["zero", "one", "two", "three", "four", "five", "six", "seven",
               "eight", "nine"]

_TEMPLATES = [
    "{f0} {f1} we are going to {v} the {o} {f2}",
    "{f0} now i will {v} the {o} for you {f1}",
    "and {f0} you want to {v} the {o} {f1} {f2}",
    "{f0} {f1} {f2} lets {v} the {o} together",
]


def caption_text(verb: str, obj: str) -> str:
    """The deterministic caption form of an (action, object) keyword pair:
    a terse imperative step, recipe style."""
    return f"{verb} the {obj}"


def split_keyword_grid(rng: np.random.Generator
                       ) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
    """Partition verbs and objects into two halves and return the combo
    grids over each half. Pairs from the second grid share no keywords with
    the first, which is what makes held-out evaluation probe vocabulary
    carried over from pretraining rather than memorized from supervision."""
    verbs = list(VERBS)
    objs = list(OBJECTS)
    rng.shuffle(verbs)
    rng.shuffle(objs)
    half_v, half_o = len(verbs) // 2, len(objs) // 2
    first = [(v, o) for v in verbs[:half_v] for o in objs[:half_o]]
    second = [(v, o) for v in verbs[half_v:] for o in objs[half_o:]]
    rng.shuffle(first)
    rng.shuffle(second)
    return first, second


def asr_text(verb: str, obj: str, rng: np.random.Generator) -> str:
    template = _TEMPLATES[int(rng.integers(0, len(_TEMPLATES)))]
    f = [FILLERS[int(rng.integers(0, len(FILLERS)))] for _ in range(3)]
    return template.format(v=verb, o=obj, f0=f[0], f1=f[1], f2=f[2])


def keyword_pairs(rng: np.random.Generator) -> list[tuple[str, str]]:
    """All verb x object combinations in a seeded shuffled order."""
    combos = [(v, o) for v in VERBS for o in OBJECTS]
    rng.shuffle(combos)
    return combos


def asr_lines(n: int, rng: np.random.Generator) -> list[str]:
    out = []
    for _ in range(n):
        v = VERBS[int(rng.integers(0, len(VERBS)))]
        o = OBJECTS[int(rng.integers(0, len(OBJECTS)))]
        out.append(asr_text(v, o, rng))
    return out


def caption_lines(n: int, rng: np.random.Generator) -> list[str]:
    out = []
    for _ in range(n):
        v = VERBS[int(rng.integers(0, len(VERBS)))]
        o = OBJECTS[int(rng.integers(0, len(OBJECTS)))]
        out.append(caption_text(v, o))
    return out


def timed_record(video_id: str, seg_index: int, text: str, start: float = 0.0,
                 spacing: float = 0.4) -> SegmentRecord:
    tokens = [TimedToken(w=w, t=start + i * spacing)
              for i, w in enumerate(text.split())]
    return SegmentRecord(video_id=video_id, seg_index=seg_index, tokens=tokens)


def supervised_pairs(n: int, rng: np.random.Generator,
                     combos: list[tuple[str, str]] | None = None
                     ) -> list[tuple[str, str]]:
    """(asr, caption) pairs over the first n keyword combinations."""
    if combos is None:
        combos = keyword_pairs(rng)
    return [(asr_text(v, o, rng), caption_text(v, o)) for v, o in combos[:n]]


def segment_frames(index: int, count: int, feat_dim: int,
                   rng: np.random.Generator, noise: float = 0.05) -> np.ndarray:
    """Frame rows that encode which segment of the video they belong to."""
    base = np.zeros(feat_dim, dtype=np.float32)
    base[index % feat_dim] = 1.0
    rows = np.tile(base, (count, 1))
    rows += noise * rng.standard_normal(rows.shape).astype(np.float32)
    return rows


def indexed_video_segments(video_id: str, n_segments: int, feat_dim: int,
                           rng: np.random.Generator
                           ) -> list[tuple[str, np.ndarray]]:
    """(asr text, frames) per segment; the text names the segment index and
    the frames carry it in feature space."""
    out = []
    for i in range(n_segments):
        word = INDEX_WORDS[i % len(INDEX_WORDS)]
        f = [FILLERS[int(rng.integers(0, len(FILLERS)))] for _ in range(2)]
        text = f"{f[0]} this is part {word} of the video {f[1]}"
        frames = segment_frames(i, count=3, feat_dim=feat_dim, rng=rng)
        out.append((text, frames))
    return out


# ---------------------------------------------------------------------------
# timeline-tag reference corpus

_ACTIVITY_SINGLES = ["ingredients", "supplies", "materials", "assembly",
                     "painting", "sanding", "measuring", "plating", "testing"]


def tag_reference_corpus(n: int, rng: np.random.Generator,
                         segments_per_video: int = 7
                         ) -> list[tuple[str, int, str]]:
    """(video_id, seg_index, tag) rows with an instructional-video-like tag
    mix: ~11% "intro", ~7% "outro", mostly very short activity tags."""
    rows = []
    for k in range(n):
        video = f"v{k // segments_per_video:04d}"
        seg = k % segments_per_video
        draw = rng.random()
        if seg == 0 and draw < 0.80:
            tag = "intro"
        elif seg == segments_per_video - 1 and draw < 0.46:
            tag = "outro"
        elif draw < 0.02:
            tag = "result"
        elif draw < 0.05:
            tag = _ACTIVITY_SINGLES[int(rng.integers(0, len(_ACTIVITY_SINGLES)))]
        else:
            v = VERBS[int(rng.integers(0, len(VERBS)))]
            o = OBJECTS[int(rng.integers(0, len(OBJECTS)))]
            o2 = OBJECTS[int(rng.integers(0, len(OBJECTS)))]
            form = rng.random()
            if form < 0.05:
                tag = f"{v}ing"
            elif form < 0.25:
                tag = f"{v}ing {o}"
            elif form < 0.58:
                tag = f"{v}ing the {o}"
            elif form < 0.76:
                tag = f"{v}ing {o} and {o2}"
            elif form < 0.93:
                tag = f"{v}ing the {o} and {o2}"
            else:
                tag = f"how to {v} the {o} at home"
        rows.append((video, seg, tag))
    return rows
