"""Walk through the 4-bit logarithmic quantizer on a five-element group."""
import numpy as np

from vargrad import collective as coll
from vargrad.core import ParameterGroup, SparseGradient
from vargrad.quantize import decode_arrays, fast_floor_pow2, fast_round_pow2, quantize_arrays

# A single weight matrix of five parameters, all selected for sending this step.
values = np.array([0.04, 0.31, -6.25, 22.25, -35.75], np.float32)
group = ParameterGroup(0, len(values), 0, "w")

# The group exponent comes from the largest magnitude, floored to a power of two.
top = fast_floor_pow2(np.abs(values).max())
print("largest magnitude", np.abs(values).max(), "-> 2^e =", top)

# Every other magnitude is rounded to its nearest power of two.
print("rounded:", fast_round_pow2(np.abs(values)))

# Offsets above 7 cannot be stored in three bits, so 0.04 is left behind.
exponent, keep, sign, d = quantize_arrays(values)
print("exponent", exponent, "kept", keep, "d", d)
print("decoded:", decode_arrays(exponent, sign, d))

# On the wire each survivor is one 32-bit word: sign, 3-bit offset, 28-bit index.
msg, dropped = coll.encode_quantized(SparseGradient(np.arange(5), values), [group], 0, 0)
wire = coll.serialize(msg)
words = np.frombuffer(wire[coll.HEADER_SIZE + 12:], "<u4")
print("words:", [f"0x{w:08X}" for w in words])
print("returned to the residual:", dropped.indices, dropped.values)
# For a group this small the 21-byte header and 12-byte block header dominate.
print(f"{len(wire)} bytes on the wire, {4 * len(words)} of them entries")
