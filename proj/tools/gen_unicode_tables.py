#!/usr/bin/env python3
"""Regenerates core/src/unicode_tables.inc from Python's unicodedata."""
import sys
import unicodedata


def ranges(pred):
    out, start = [], None
    for cp in range(0x110000):
        hit = pred(cp)
        if hit and start is None:
            start = cp
        elif not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def emit(name, rs, f):
    f.write(f"constexpr CodeRange {name}[] = {{\n")
    for a, b in rs:
        f.write(f"    {{0x{a:X}, 0x{b:X}}},\n")
    f.write("};\n\n")


def main(path):
    cat = lambda cp: unicodedata.category(chr(cp))
    with open(path, "w") as f:
        f.write(f"// Generated by tools/gen_unicode_tables.py (Unicode {unicodedata.unidata_version}). Do not edit.\n\n")
        emit("kPunctuation", ranges(lambda cp: cat(cp).startswith("P")), f)
        emit("kDecimalDigit", ranges(lambda cp: cat(cp) == "Nd"), f)
        emit("kWhitespace", ranges(lambda cp: chr(cp).isspace()), f)
        f.write("constexpr CaseMapping kLowercase[] = {\n")
        for cp in range(0x110000):
            c = chr(cp)
            lo = c.lower()
            # Simple mapping: drop trailing combining marks (U+0130 -> i).
            if len(lo) > 1 and all(unicodedata.category(m) == "Mn" for m in lo[1:]):
                lo = lo[0]
            if len(lo) == 1 and lo != c:
                f.write(f"    {{0x{cp:X}, 0x{ord(lo):X}}},\n")
        f.write("};\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "core/src/unicode_tables.inc")
