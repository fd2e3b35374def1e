"""Regenerates the fixture files in this directory. Output is deterministic."""
import json
import random
from pathlib import Path

HERE = Path(__file__).parent
rng = random.Random(20240101)

TYPES = ["int", "long", "double", "float"]
OPS = [("+", "sum"), ("-", "difference"), ("*", "product")]
NAMES = ["count", "size", "total", "index", "offset", "limit", "width", "height", "depth", "score"]


def method(i):
    kind = i % 5
    t = TYPES[i % len(TYPES)]
    a = NAMES[i % len(NAMES)]
    b = NAMES[(i * 3 + 1) % len(NAMES)]
    op, word = OPS[i % len(OPS)]
    k = i + 2
    if kind == 0:
        return (f"returns the {word} of {a} and {k} .",
                f"{t} function ( {t} arg0 ) {{ {t} loc0 = arg0 {op} {k} ; return loc0 ; }}")
    if kind == 1:
        return (f"sets the {a} field to the given value .",
                f"void function ( {t} arg0 ) {{ this . {a} = arg0 ; }}")
    if kind == 2:
        return (f"returns true if {a} exceeds {k} .",
                f"boolean function ( ) {{ if ( {a} > {k} ) {{ return true ; }} return false ; }}")
    if kind == 3:
        return (f"sums the {b} values up to {a} .",
                f"{t} function ( {t} arg0 ) {{ {t} loc0 = 0 ; for ( int loc1 = 0 ; loc1 < arg0 ; loc1 ++ ) {{ loc0 = loc0 + loc1 ; }} return loc0 ; }}")
    return (f"gets the {a} {word} with {b} .",
            f"{t} function ( ) {{ return {a} {op} {b} ; }}")


def records(pairs):
    return "".join(json.dumps({"nl": nl, "code": code}) + "\n" for nl, code in pairs)


# 100 CONCODE-style records.
(HERE / "concode_100.jsonl").write_text(records([method(i) for i in range(100)]))

# 32 short NL -> code pairs for the memorization run.
short = []
for i in range(32):
    a = NAMES[i % len(NAMES)]
    k = i + 1
    op, word = OPS[i % len(OPS)]
    if i % 2 == 0:
        short.append((f"{word} of {a} and {k}", f"int function ( ) {{ return {a} {op} {k} ; }}"))
    else:
        short.append((f"set {a} to {k}", f"void function ( ) {{ {a} = {k} ; }}"))
(HERE / "pairs_32.jsonl").write_text(records(short))

# 64 code-only documents for denoising pretraining.
docs = [method(i + 100)[1] for i in range(64)]
(HERE / "code_docs_64.txt").write_text("".join(d + "\n" for d in docs))

# Cleaning fixture at 1/1000 scale: 812 / 40 / 51 records, 3 bad ones in train.
clean_dir = HERE / "cleaning"
clean_dir.mkdir(exist_ok=True)
bad = {100: "", 400: "int x = \"unterminated ;", 700: "/* never closed"}
for split, n in [("train", 812), ("valid", 40), ("test", 51)]:
    pairs = []
    for i in range(n):
        nl, code = method(i + {"train": 0, "valid": 1000, "test": 2000}[split])
        if split == "train" and i in bad:
            code = bad[i]
        pairs.append((nl, code))
    (clean_dir / f"{split}.jsonl").write_text(records(pairs))

# Five hand-scored evaluation pairs: three exact, one renamed variable, one
# changed declarator.
hand = HERE / "hand_scored"
hand.mkdir(exist_ok=True)
(hand / "pred.txt").write_text("return a ;\nint x = 1 ;\nx = y ;\nx = c ;\nint z = 2 ;\n")
(hand / "ref.jsonl").write_text(records([
    ("return a", "return a ;"),
    ("declare x as one", "int x = 1 ;"),
    ("copy y into x", "x = y ;"),
    ("copy b into x", "x = b ;"),
    ("declare y as two", "int y = 2 ;"),
]))
