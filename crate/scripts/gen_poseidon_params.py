#!/usr/bin/env python3
"""Regenerate the width-3 Poseidon parameter file for the BN254 scalar field.

Round constants and the Cauchy MDS matrix come from the Grain LFSR procedure
of the Poseidon reference parameter script (field=1, sbox=0, n=254, t=3,
R_F=8, R_P=57). The script also evaluates the permutation on (1, 2) with a
straightforward big-integer implementation and records the digest as the
file's known-answer vector, then seals the file with a SHA-256 checksum.

Usage: gen_poseidon_params.py [OUTPUT]
"""
import hashlib
import sys

P = 0x30644E72E131A029B85045B68181585D2833E84879B9709143E1F593F0000001
N_BITS = 254
T = 3
R_F = 8
R_P = 57
ALPHA = 5


class Grain:
    def __init__(self):
        bits = []
        bits += [int(b) for b in bin(1)[2:].zfill(2)]        # prime field
        bits += [int(b) for b in bin(0)[2:].zfill(4)]        # x^alpha s-box
        bits += [int(b) for b in bin(N_BITS)[2:].zfill(12)]
        bits += [int(b) for b in bin(T)[2:].zfill(12)]
        bits += [int(b) for b in bin(R_F)[2:].zfill(10)]
        bits += [int(b) for b in bin(R_P)[2:].zfill(10)]
        bits += [1] * 30
        assert len(bits) == 80
        self.state = bits
        for _ in range(160):
            self._update()

    def _update(self):
        s = self.state
        new = s[62] ^ s[51] ^ s[38] ^ s[23] ^ s[13] ^ s[0]
        s.pop(0)
        s.append(new)
        return new

    def random_bits(self, n):
        out = []
        for _ in range(n):
            b = self._update()
            while b == 0:
                self._update()
                b = self._update()
            out.append(self._update())
        return out

    def random_int(self, n):
        return int("".join(map(str, self.random_bits(n))), 2)


def generate():
    g = Grain()
    constants = []
    while len(constants) < (R_F + R_P) * T:
        v = g.random_int(N_BITS)
        if v < P:
            constants.append(v)
    while True:
        xs_ys = [g.random_int(N_BITS) % P for _ in range(2 * T)]
        while len(set(xs_ys)) != len(xs_ys):
            xs_ys = [g.random_int(N_BITS) % P for _ in range(2 * T)]
        xs, ys = xs_ys[:T], xs_ys[T:]
        if any((x + y) % P == 0 for x in xs for y in ys):
            continue
        mds = [[pow(x + y, P - 2, P) for y in ys] for x in xs]
        return constants, mds


def permute(state, constants, mds):
    state = list(state)
    for r in range(R_F + R_P):
        state = [(s + constants[r * T + i]) % P for i, s in enumerate(state)]
        if r < R_F // 2 or r >= R_F // 2 + R_P:
            state = [pow(s, ALPHA, P) for s in state]
        else:
            state[0] = pow(state[0], ALPHA, P)
        state = [sum(mds[i][j] * state[j] for j in range(T)) % P for i in range(T)]
    return state


def hash2(x, y, constants, mds):
    return permute([0, x, y], constants, mds)[0]


def h(v):
    return "0x%064x" % v


def render(constants, mds):
    kat_x, kat_y = 1, 2
    digest = hash2(kat_x, kat_y, constants, mds)
    lines = [
        "# Poseidon x^5, width 3 (capacity 1, rate 2), BN254 scalar field.",
        "# Generated by scripts/gen_poseidon_params.py. Do not edit by hand.",
        "modulus " + h(P),
        "width %d" % T,
        "full_rounds %d" % R_F,
        "partial_rounds %d" % R_P,
        "alpha %d" % ALPHA,
        "round_constants %d" % len(constants),
    ]
    lines += [h(c) for c in constants]
    lines.append("mds %d" % T)
    lines += [" ".join(h(v) for v in row) for row in mds]
    lines.append("kat %s %s %s" % (h(kat_x), h(kat_y), h(digest)))
    body = "\n".join(lines) + "\n"
    checksum = hashlib.sha256(body.encode()).hexdigest()
    return body + "sha256 " + checksum + "\n"


def main():
    constants, mds = generate()
    text = render(constants, mds)
    if len(sys.argv) > 1:
        with open(sys.argv[1], "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
