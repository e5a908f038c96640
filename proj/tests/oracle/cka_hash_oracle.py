"""Gram-space CKA oracle (exact rationals) and FNV-1a fixture values."""
from fractions import Fraction as F
import math

X = [[1, 2, 0], [0, 1, 3], [2, 2, 1], [1, 0, 1]]
Y = [[2, 0, 1], [1, 1, 0], [0, 3, 1], [1, 1, 2]]


def center(M):
    n = len(M)
    means = [sum(F(r[j]) for r in M) / n for j in range(len(M[0]))]
    return [[F(r[j]) - means[j] for j in range(len(r))] for r in M]


def gram(M):
    return [[sum(a * b for a, b in zip(r, s)) for s in M] for r in M]


def frob_inner(A, B):
    return sum(a * b for ra, rb in zip(A, B) for a, b in zip(ra, rb))


K, L = gram(center(X)), gram(center(Y))
num = frob_inner(K, L)
den2 = frob_inner(K, K) * frob_inner(L, L)
print("cka centered =", repr(float(num) / math.sqrt(float(den2))), num, den2)
Kr, Lr = gram([[F(v) for v in r] for r in X]), gram([[F(v) for v in r] for r in Y])
print("cka raw =", repr(float(frob_inner(Kr, Lr)) / math.sqrt(float(frob_inner(Kr, Kr) * frob_inner(Lr, Lr)))))


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) % 2**64
    return h


q = "What will Alice want to do next?"
cands = ["call the doctor", "finish all her projects and postpone the rest", "take time off from work"]
text = "\n".join([q] + cands).encode()
h = fnv1a64(text)
print("fnv1a64 =", hex(h), "mod 3 =", h % 3)
print("fnv1a64('a') =", hex(fnv1a64(b"a")))
