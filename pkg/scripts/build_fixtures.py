"""Author the bundled JSON fixtures under src/toolpath/data.

All numbers here are synthetic except the per-subroutine cost and quality
anchors, which are chosen so that each seeded subroutine's tool costs sum to
its reference average cost and its per-tool qualities average to its
reference average quality. Benchmark entries are Monte Carlo expectations of
the reference simulator over its own context distribution.

Run: python scripts/build_fixtures.py
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from toolpath.domain import (
    BenchmarkTable,
    BenchRecord,
    FeatureDomains,
    Knowledge,
    load_knowledge,
)
from toolpath.sim import SimEnvironment, TaskSampler

DATA = ROOT / "src" / "toolpath" / "data"

SUBTASKS = [
    "Object Detection", "Object Segmentation", "Object Addition", "Object Removal", "Background Removal",
    "Landmark Detection", "Object Replacement", "Image Upscaling", "Image Captioning", "Changing Scenery",
    "Object Recoloration", "Outpainting", "Depth Estimation", "Image Deblurring", "Text Extraction",
    "Text Replacement", "Text Removal", "Text Addition", "Text Redaction", "Question Answering based on text",
    "Keyword Highlighting", "Sentiment Analysis", "Caption Consistency Check", "Text Detection",
]

FEATURES = {
    "object_size": ["tiny", "small", "medium", "large", "huge"],
    "overlapping_critical_elements": ["none", "present"],
    "color_transition": ["extreme_luminance", "moderate", "mild"],
    "yolo_class_support": ["supported", "unsupported"],
    "size_difference": ["small", "moderate", "large"],
    "shape_difference": ["similar", "moderate", "large"],
    "instance_count": ["one", "two", "many"],
    "object_clarity": ["high", "medium", "low"],
    "background_content_type": ["Simple_Texture", "Homogenous_Area", "Repeating_Pattern", "Complex_Scene",
                                "Occludes_Specific_Objects"],
    "background_reconstruction_need": ["Filling_Inpainting", "Drawing_Semantic_Completion", "None_Needed"],
    "background_content_behind_text": ["Uniform_Solid_Color", "Plain_Color", "Simple_Gradient", "Simple_Texture",
                                       "Complex_Image", "Specific_Objects"],
    "background_artifact_tolerance": ["high", "medium", "low"],
    "surrounding_context_similarity": ["low", "medium", "high"],
}

OBJ3 = ["Object Removal", "Object Recoloration", "Object Replacement"]
TXT2 = ["Text Removal", "Text Replacement"]

TOOLS = {
    "YOLO": (["Object Detection"], ["image"], ["bbox", "class"]),
    "GroundingDINO": (["Object Detection"], ["image", "text"], ["bbox"]),
    "SAM": (["Object Segmentation"], ["image", "bbox"], ["mask"]),
    "SD_Inpaint": (OBJ3, ["image", "mask", "text"], ["image"]),
    "SD_Erase": (["Object Removal", "Text Removal"], ["image", "mask"], ["image"]),
    "SD_SearchRecolor": (["Object Recoloration"], ["image", "text"], ["image"]),
    "SD_SearchReplace": (["Object Replacement"], ["image", "text"], ["image"]),
    "CRAFT": (["Text Detection"], ["image"], ["text_bbox"]),
    "EasyOCR_DeepFont": (["Text Extraction"], ["image", "text_bbox"], ["text", "font"]),
    "LLM": (["Question Answering based on text", "Caption Consistency Check"], ["text"], ["text", "mask"]),
    "DALLE": (["Text Removal"], ["image", "mask"], ["image"]),
    "Painting": (["Text Removal", "Text Redaction"], ["image", "mask"], ["image"]),
    "TextWriting": (["Text Replacement", "Text Addition"], ["image", "text"], ["image"]),
    "MiDaS": (["Depth Estimation"], ["image"], ["depth"]),
    "RealESRGAN": (["Image Upscaling"], ["image"], ["image"]),
    "BLIP": (["Image Captioning"], ["image"], ["text"]),
    "DeblurGAN": (["Image Deblurring"], ["image"], ["image"]),
    "SD_Outpaint": (["Outpainting"], ["image"], ["image"]),
    "RemBG": (["Background Removal"], ["image"], ["image"]),
    "InstructPix2Pix": (["Changing Scenery"], ["image", "text"], ["image"]),
    "LandmarkDetector": (["Landmark Detection"], ["image"], ["bbox", "text"]),
    "GLIGEN": (["Object Addition"], ["image", "text"], ["image"]),
    "Highlighter": (["Keyword Highlighting"], ["image", "text"], ["image"]),
    "SentimentClassifier": (["Sentiment Analysis"], ["text"], ["text"]),
}

EDGES = [
    ("YOLO", "SAM", None),
    ("GroundingDINO", "SAM", None),
    ("SAM", "SD_Inpaint", OBJ3),
    ("SAM", "SD_Erase", ["Object Removal"]),
    ("CRAFT", "EasyOCR_DeepFont", None),
    ("EasyOCR_DeepFont", "LLM", TXT2 + ["Question Answering based on text"]),
    ("LLM", "SD_Erase", TXT2),
    ("LLM", "DALLE", TXT2),
    ("LLM", "Painting", TXT2),
    ("SD_Erase", "TextWriting", ["Text Replacement"]),
    ("DALLE", "TextWriting", ["Text Replacement"]),
    ("Painting", "TextWriting", ["Text Replacement"]),
    ("EasyOCR_DeepFont", "Painting", ["Text Redaction"]),
    ("EasyOCR_DeepFont", "Highlighter", None),
    ("EasyOCR_DeepFont", "SentimentClassifier", None),
    ("BLIP", "LLM", ["Caption Consistency Check"]),
]

# generic (cost s, quality) per tool, used wherever no anchor applies
BASE = {
    "YOLO": (1.78, 0.90), "GroundingDINO": (1.80, 0.92), "SAM": (1.60, 0.93), "SD_Inpaint": (6.99, 0.87),
    "SD_Erase": (8.57, 0.90), "SD_SearchRecolor": (12.92, 0.95), "SD_SearchReplace": (12.12, 0.97),
    "CRAFT": (1.20, 0.96), "EasyOCR_DeepFont": (2.10, 0.95), "LLM": (2.50, 0.97), "DALLE": (12.15, 0.96),
    "Painting": (0.89, 0.92), "TextWriting": (0.50, 0.96), "MiDaS": (2.30, 0.94), "RealESRGAN": (4.10, 0.93),
    "BLIP": (1.90, 0.92), "DeblurGAN": (3.20, 0.90), "SD_Outpaint": (9.80, 0.88), "RemBG": (2.60, 0.93),
    "InstructPix2Pix": (8.40, 0.87), "LandmarkDetector": (2.20, 0.90), "GLIGEN": (10.50, 0.86),
    "Highlighter": (0.60, 0.95), "SentimentClassifier": (1.10, 0.93),
}

# anchors: per-subroutine tool costs sum to the reference averages and
# per-tool qualities average to the reference averages
ANCHORS = {
    "Object Recoloration": {"GroundingDINO": (1.80, 0.90), "YOLO": (1.77, 0.87), "SAM": (1.60, 0.90),
                            "SD_Inpaint": (6.99, 0.87), "SD_SearchRecolor": (12.92, 0.95)},
    "Object Replacement": {"GroundingDINO": (1.80, 0.92), "YOLO": (1.77, 0.92), "SAM": (1.60, 0.92),
                           "SD_Inpaint": (7.01, 0.89), "SD_SearchReplace": (12.12, 0.97)},
    "Object Removal": {"GroundingDINO": (1.80, 0.98), "YOLO": (1.78, 0.98), "SAM": (1.60, 0.98),
                       "SD_Inpaint": (6.99, 0.89), "SD_Erase": (8.57, 0.98)},
    "Text Removal": {"CRAFT": (1.20, 0.96), "EasyOCR_DeepFont": (2.10, 0.95), "LLM": (2.50, 0.97),
                     "SD_Erase": (12.01, 0.84), "DALLE": (12.15, 0.96), "Painting": (0.89, 0.92)},
    "Text Replacement": {"CRAFT": (1.20, 0.94), "EasyOCR_DeepFont": (2.10, 0.94), "LLM": (2.50, 0.95),
                         "SD_Erase": (11.55, 0.81), "DALLE": (11.72, 0.91), "Painting": (0.47, 0.86),
                         "TextWriting": (0.50, 0.96)},
}

SIMPLE_BG = ["Simple_Texture", "Homogenous_Area", "Repeating_Pattern"]
COMPLEX_BG = ["Complex_Scene", "Occludes_Specific_Objects"]
SIMPLE_TEXT_BG = ["Plain_Color", "Simple_Gradient", "Simple_Texture"]
FAIL_Q = 0.3


def p(feature, op, *values):
    return {"feature": feature, "op": op, "operands": list(values)}


def cond(*preds):
    return {"condition": {"predicates": list(preds)}, "quality_override": FAIL_Q}


YOLO_FAIL = cond(p("yolo_class_support", "equals", "unsupported"))

# reference degradations: each lies outside the activation rules of every
# seeded subroutine that contains the tool
REFERENCE_DEGRADATIONS = {
    ("YOLO", "Object Recoloration"): [YOLO_FAIL],
    ("YOLO", "Object Replacement"): [YOLO_FAIL],
    ("YOLO", "Object Removal"): [YOLO_FAIL],
    ("YOLO", "Object Detection"): [YOLO_FAIL],
    ("YOLO", "Object Segmentation"): [YOLO_FAIL],
    ("SD_Inpaint", "Object Recoloration"): [
        cond(p("object_size", "equals", "tiny")),
        cond(p("overlapping_critical_elements", "equals", "present")),
    ],
    ("SD_SearchRecolor", "Object Recoloration"): [cond(p("color_transition", "equals", "extreme_luminance"))],
    ("SD_Inpaint", "Object Replacement"): [
        cond(p("object_size", "equals", "tiny")),
        cond(p("size_difference", "equals", "large")),
        cond(p("shape_difference", "equals", "similar")),
    ],
    ("SD_SearchReplace", "Object Replacement"): [
        cond(p("instance_count", "equals", "many")),
        cond(p("object_clarity", "in_set", "medium", "low")),
        cond(p("shape_difference", "equals", "large")),
    ],
    ("SD_Erase", "Object Removal"): [
        cond(p("object_size", "equals", "huge")),
        cond(p("background_content_type", "in_set", *COMPLEX_BG)),
        cond(p("background_reconstruction_need", "not_equals", "Filling_Inpainting")),
    ],
    ("SD_Inpaint", "Object Removal"): [
        cond(p("object_size", "in_set", "tiny", "small")),
        cond(p("background_content_type", "in_set", *SIMPLE_BG)),
        cond(p("background_reconstruction_need", "not_equals", "Drawing_Semantic_Completion")),
    ],
}
for kind in TXT2:
    REFERENCE_DEGRADATIONS[("SD_Erase", kind)] = [
        cond(p("background_content_behind_text", "in_set", "Complex_Image", "Specific_Objects")),
        cond(p("background_reconstruction_need", "equals", "Drawing_Semantic_Completion")),
    ]
    REFERENCE_DEGRADATIONS[("DALLE", kind)] = [
        cond(p("background_artifact_tolerance", "equals", "low")),
        cond(p("surrounding_context_similarity", "equals", "high")),
    ]
    REFERENCE_DEGRADATIONS[("Painting", kind)] = [
        cond(p("background_content_behind_text", "not_equals", "Uniform_Solid_Color")),
    ]

# learning environment: one single-feature failure condition on the tool the
# search tries first for each object kind; the alternatives never degrade, so
# every condition is observable in solvable contexts. Text tools stay robust:
# their first choice is so cheap that no rule can beat the search there.
LEARNING_DEGRADATIONS = {
    ("SD_Inpaint", "Object Recoloration"): [cond(p("object_size", "equals", "tiny"))],
    ("SD_Inpaint", "Object Removal"): [cond(p("object_size", "equals", "small"))],
    ("SD_Inpaint", "Object Replacement"): [cond(p("size_difference", "equals", "large"))],
}


def w(**weights):
    return {"weights": weights}


SAMPLER = {
    "object_names": [
        ["car", "supported"], ["truck", "supported"], ["dog", "supported"], ["cat", "supported"],
        ["bench", "supported"], ["chair", "supported"], ["bicycle", "supported"], ["bottle", "supported"],
        ["horse", "supported"], ["bus", "supported"], ["couch", "supported"], ["umbrella", "supported"],
        ["cup", "supported"], ["sheep", "supported"], ["bird", "supported"], ["wooden board", "unsupported"],
        ["lamp post", "unsupported"], ["sculpture", "unsupported"], ["mailbox", "unsupported"],
        ["fountain", "unsupported"], ["signpost", "unsupported"], ["barrel", "unsupported"],
        ["statue", "unsupported"], ["hen", "unsupported"], ["rabbit", "unsupported"],
    ],
    "text_words": ["SALE", "OPEN", "EXIT", "CAFE", "STOP", "HELLO", "MENU", "PARK", "HOTEL", "BOOKS", "FRESH",
                   "WELCOME"],
    "colors": ["pink", "blue", "yellow", "green", "red", "white", "black", "purple"],
    "object_features": {
        "object_size": w(tiny=0.08, small=0.2, medium=0.37, large=0.25, huge=0.1),
        "overlapping_critical_elements": w(none=0.85, present=0.15),
        "instance_count": w(one=0.6, two=0.25, many=0.15),
        "object_clarity": w(high=0.7, medium=0.2, low=0.1),
        "background_content_type": w(Simple_Texture=0.2, Homogenous_Area=0.18, Repeating_Pattern=0.12,
                                      Complex_Scene=0.35, Occludes_Specific_Objects=0.15),
        "background_reconstruction_need": {
            "given": "background_content_type",
            "table": {
                **{bg: {"Filling_Inpainting": 0.9, "Drawing_Semantic_Completion": 0.1} for bg in SIMPLE_BG},
                **{bg: {"Filling_Inpainting": 0.1, "Drawing_Semantic_Completion": 0.9} for bg in COMPLEX_BG},
            },
        },
    },
    "text_features": {
        "background_content_behind_text": w(Uniform_Solid_Color=0.3, Plain_Color=0.2, Simple_Gradient=0.15,
                                            Simple_Texture=0.13, Complex_Image=0.15, Specific_Objects=0.07),
        "background_reconstruction_need": {
            "given": "background_content_behind_text",
            "table": {
                "Uniform_Solid_Color": {"None_Needed": 0.85, "Filling_Inpainting": 0.15},
                **{bg: {"Filling_Inpainting": 0.85, "Drawing_Semantic_Completion": 0.15} for bg in SIMPLE_TEXT_BG},
                "Complex_Image": {"Drawing_Semantic_Completion": 0.8, "Filling_Inpainting": 0.2},
                "Specific_Objects": {"Drawing_Semantic_Completion": 0.8, "Filling_Inpainting": 0.2},
            },
        },
        "background_artifact_tolerance": w(high=0.4, medium=0.35, low=0.25),
        "surrounding_context_similarity": w(low=0.5, medium=0.3, high=0.2),
    },
    "op_features": {
        "Object Recoloration": {"color_transition": w(mild=0.45, moderate=0.4, extreme_luminance=0.15)},
        "Object Replacement": {
            "size_difference": w(small=0.5, moderate=0.35, large=0.15),
            "shape_difference": w(similar=0.15, moderate=0.55, large=0.3),
        },
    },
    "kind_weights": {
        "Object Removal": 0.26, "Object Recoloration": 0.24, "Object Replacement": 0.2,
        "Text Removal": 0.12, "Text Replacement": 0.12, "Object Detection": 0.03, "Text Detection": 0.03,
    },
    "ops_range": [1, 8],
    "objects_range": [3, 8],
    "texts_range": [0, 3],
}

LEARNING_SAMPLER = json.loads(json.dumps(SAMPLER))
LEARNING_SAMPLER["kind_weights"] = {
    "Object Removal": 0.22, "Object Recoloration": 0.22, "Object Replacement": 0.2,
    "Text Removal": 0.15, "Text Replacement": 0.15, "Text Detection": 0.03, "Object Detection": 0.03,
}
LEARNING_SAMPLER["ops_range"] = [1, 5]
LEARNING_SAMPLER["texts_range"] = [1, 3]


def ruleset():
    def entry(i, kind, tools, preds, cost, quality, note):
        return {"id": f"SR{i}", "subtask": kind, "tools": tools, "rule": {"predicates": preds},
                "avg_cost": cost, "avg_quality": quality, "usage_count": 0, "note": note}

    yolo = p("yolo_class_support", "equals", "supported")
    not_tiny = p("object_size", "not_equals", "tiny")
    no_overlap = p("overlapping_critical_elements", "equals", "none")
    rep = [not_tiny, p("size_difference", "not_equals", "large"), p("shape_difference", "not_equals", "similar")]
    erase = [p("object_size", "not_equals", "huge"), p("background_content_type", "in_set", *SIMPLE_BG),
             p("background_reconstruction_need", "equals", "Filling_Inpainting")]
    inpaint = [p("object_size", "not_in_set", "tiny", "small"), p("background_content_type", "in_set", *COMPLEX_BG),
               p("background_reconstruction_need", "equals", "Drawing_Semantic_Completion")]
    t_erase = [p("background_content_behind_text", "in_set", *SIMPLE_TEXT_BG),
               p("background_reconstruction_need", "equals", "Filling_Inpainting")]
    t_dalle = [p("background_artifact_tolerance", "equals", "high"),
               p("surrounding_context_similarity", "equals", "low")]
    t_paint = [p("background_content_behind_text", "equals", "Uniform_Solid_Color"),
               p("background_reconstruction_need", "equals", "None_Needed")]
    g, y = ["GroundingDINO", "SAM"], ["YOLO", "SAM"]
    txt = ["CRAFT", "EasyOCR_DeepFont", "LLM"]
    rows = [
        entry(1, "Object Recoloration", g + ["SD_Inpaint"], [not_tiny, no_overlap], 10.39, 0.89,
              "object not too small; no critical element overlapping the object"),
        entry(2, "Object Recoloration", ["SD_SearchRecolor"],
              [p("color_transition", "not_equals", "extreme_luminance")], 12.92, 0.95,
              "colour change is not an extreme luminance swing"),
        entry(3, "Object Recoloration", y + ["SD_Inpaint"], [yolo, not_tiny, no_overlap], 10.36, 0.88,
              "detector knows the class; object not too small; no critical overlap"),
        entry(4, "Object Replacement", g + ["SD_Inpaint"], rep, 10.41, 0.91,
              "object not too small; size gap not too big; shapes not confusingly similar"),
        entry(5, "Object Replacement", ["SD_SearchReplace"],
              [p("instance_count", "in_set", "one", "two"), p("object_clarity", "equals", "high"),
               p("shape_difference", "not_equals", "large")], 12.12, 0.97,
              "one or two instances; clearly visible; shape change not very large"),
        entry(6, "Object Replacement", y + ["SD_Inpaint"], [yolo] + rep, 10.38, 0.91,
              "detector knows the class; otherwise as the grounded variant"),
        entry(7, "Object Removal", g + ["SD_Erase"], erase, 11.97, 0.98,
              "object not too big; plain background that only needs filling"),
        entry(8, "Object Removal", y + ["SD_Erase"], [yolo] + erase, 11.95, 0.98,
              "detector knows the class; otherwise as the grounded variant"),
        entry(9, "Object Removal", g + ["SD_Inpaint"], inpaint, 10.39, 0.95,
              "object not small; busy background that needs semantic completion"),
        entry(10, "Object Removal", y + ["SD_Inpaint"], [yolo] + inpaint, 10.37, 0.95,
              "detector knows the class; otherwise as the grounded variant"),
        entry(11, "Text Removal", txt + ["SD_Erase"], t_erase, 17.81, 0.93,
              "simple background behind the text that only needs filling"),
        entry(12, "Text Removal", txt + ["DALLE"], t_dalle, 17.95, 0.96,
              "background tolerates artifacts; no similar patterns nearby"),
        entry(13, "Text Removal", txt + ["Painting"], t_paint, 6.69, 0.95,
              "uniform solid colour behind the text"),
        entry(14, "Text Replacement", txt + ["SD_Erase", "TextWriting"], t_erase, 17.85, 0.92,
              "simple background behind the text that only needs filling"),
        entry(15, "Text Replacement", txt + ["DALLE", "TextWriting"], t_dalle, 18.02, 0.94,
              "background tolerates artifacts; no similar patterns nearby"),
        entry(16, "Text Replacement", txt + ["Painting", "TextWriting"], t_paint, 6.77, 0.93,
              "uniform solid colour behind the text"),
    ]
    return {"version": "1", "entries": rows}


def tdg_doc():
    edges = []
    for a, b, scope in EDGES:
        edges.append([a, b] if scope is None else {"from": a, "to": b, "subtasks": sorted(scope)})
    return {"version": "1", "nodes": sorted(TOOLS), "edges": edges}


def mdt_doc():
    return {
        "version": "1",
        "tools": {t: {"supported_subtasks": sorted(s), "inputs": sorted(i), "outputs": sorted(o)}
                  for t, (s, i, o) in sorted(TOOLS.items())},
    }


def required_pairs(tdg, mdt):
    pairs = []
    for kind in SUBTASKS:
        for tool in sorted(tdg.ancestors(mdt.tools_for(kind), kind)):
            pairs.append((tool, kind))
    return pairs


def profiles(pairs, degradations):
    out = []
    for tool, kind in pairs:
        cost, quality = ANCHORS.get(kind, {}).get(tool, BASE[tool])
        out.append({"tool": tool, "subtask": kind, "base_cost": cost, "base_quality": quality,
                    "degradations": degradations.get((tool, kind), [])})
    return out


def expected_bench(env: SimEnvironment, knowledge: Knowledge, pairs, samples=3000, seed=7):
    """Mean cost and quality of each (tool, subtask) over the simulator's own context distribution."""
    sampler = TaskSampler(env, knowledge)
    rows = []
    by_kind: dict[str, list] = {}
    for tool, kind in pairs:
        by_kind.setdefault(kind, []).append(tool)
    for kind, tools in by_kind.items():
        rng = random.Random(f"{seed}/{kind}")
        ctxs = []
        tries = 0
        while len(ctxs) < samples and tries < samples * 5:
            tries += 1
            state = sampler.sample_state(rng, n_objects=1, n_texts=1)
            op = sampler.sample_op(kind, state, rng, set(), attempts=1)
            if op is not None:
                ctxs.append(state.context_for(op))
        ctxs = ctxs or [{}]
        for tool in tools:
            prof = env.profile(tool, kind)
            vals = [prof.nominal(c) for c in ctxs]
            cost = sum(c for c, _ in vals) / len(vals)
            quality = sum(q for _, q in vals) / len(vals)
            rows.append({"tool": tool, "subtask": kind, "cost": round(cost, 3), "quality": round(quality, 3)})
    return sorted(rows, key=lambda r: (r["tool"], r["subtask"]))


def dump(name, doc):
    path = DATA / name
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {path.relative_to(ROOT)}")


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    features = {"version": "1", "subtasks": SUBTASKS, "features": FEATURES}
    tdg, mdt = tdg_doc(), mdt_doc()
    domains = FeatureDomains.from_doc(features)
    from toolpath.domain import parse_mdt, parse_tdg
    tdg_t, mdt_t = parse_tdg(tdg), parse_mdt(mdt)
    pairs = required_pairs(tdg_t, mdt_t)
    provisional = BenchmarkTable({(t, k): BenchRecord(*ANCHORS.get(k, {}).get(t, BASE[t])) for t, k in pairs})
    knowledge = Knowledge(tdg_t, mdt_t, provisional, domains)

    ref = {"version": "1", "name": "reference", "seed": 42, "synthetic": True,
           "profiles": profiles(pairs, REFERENCE_DEGRADATIONS), "sampler": SAMPLER}
    learn = {"version": "1", "name": "learning", "seed": 42, "synthetic": True,
             "profiles": profiles(pairs, LEARNING_DEGRADATIONS), "sampler": LEARNING_SAMPLER}
    bt = {"version": "1", "synthetic": True,
          "entries": expected_bench(SimEnvironment.from_doc(ref), knowledge, pairs)}
    load_knowledge(tdg, mdt, bt, domains)

    dump("features.json", features)
    dump("tdg.json", tdg)
    dump("mdt.json", mdt)
    dump("bt.json", bt)
    dump("rules.json", ruleset())
    dump("sim.json", ref)
    dump("sim_learning.json", learn)


if __name__ == "__main__":
    main()
