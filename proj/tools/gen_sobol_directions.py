#!/usr/bin/env python3
"""Regenerate src/sobol_directions.inc from the Joe-Kuo (new-joe-kuo-6.21201)
direction numbers bundled with SciPy."""
import os
import sys

import numpy as np
import scipy

MAX_DIM = int(sys.argv[1]) if len(sys.argv) > 1 else 128

data = np.load(os.path.join(os.path.dirname(scipy.__file__), "stats", "_sobol_direction_numbers.npz"))
poly, vinit = data["poly"], data["vinit"]

out = ["// Generated by tools/gen_sobol_directions.py. Do not edit.",
       "// Joe & Kuo, new-joe-kuo-6.21201: {degree s, coefficients a, initial m_1..m_s}",
       f"// for dimensions 2..{MAX_DIM}; dimension 1 uses m_i = 1.",
       f"constexpr std::size_t kSobolTableDims = {MAX_DIM};",
       "constexpr SobolPolynomial kSobolPolynomials[] = {"]
for d in range(1, MAX_DIM):
    p = int(poly[d])
    s = p.bit_length() - 1
    a = (p >> 1) & ((1 << (s - 1)) - 1) if s > 1 else 0
    m = ", ".join(str(int(v)) for v in vinit[d][:s])
    out.append(f"    {{{s}, {a}, {{{m}}}}},")
out.append("};")

path = os.path.join(os.path.dirname(__file__), "..", "src", "sobol_directions.inc")
with open(path, "w") as fh:
    fh.write("\n".join(out) + "\n")
