#!/usr/bin/env python3
"""Regenerates include/turntake/detail/unicode_punct.hpp from Python's unicodedata."""
import sys
import unicodedata

ranges = []
start = prev = None
for cp in range(0x110000):
    if unicodedata.category(chr(cp)).startswith("P"):
        if start is None:
            start = cp
        prev = cp
    elif start is not None:
        ranges.append((start, prev))
        start = None

out = sys.stdout
out.write("// Generated by tools/gen_unicode_punct.py (Unicode %s). Do not edit.\n" % unicodedata.unidata_version)
out.write("#pragma once\n\n#include <array>\n#include <cstdint>\n\nnamespace turntake::detail {\n\n")
out.write("struct CodepointRange {\n  char32_t first;\n  char32_t last;\n};\n\n")
out.write("// General category P* (Pc, Pd, Ps, Pe, Pi, Pf, Po), sorted and disjoint.\n")
out.write("inline constexpr std::array<CodepointRange, %d> kPunctuationRanges{{\n" % len(ranges))
for a, b in ranges:
    out.write("    {0x%04X, 0x%04X},\n" % (a, b))
out.write("}};\n\n}  // namespace turntake::detail\n")
