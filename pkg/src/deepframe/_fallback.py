"""Pure NumPy/Python versions of the compiled kernels in ``_kernels.pyx``.

Numerics follow the same summation order so results agree to rounding;
the arithmetic coder is bit-identical.
"""

import numpy as np

PROB_BITS = 12
PROB_ONE = 4096
ADAPT_SHIFT = 5

TOP = 0xFFFFFFFF
HALF = 0x80000000
QUARTER = 0x40000000
THREE_QUARTER = 0xC0000000
MASK64 = (1 << 64) - 1


def im2col(x, k):
    n, h, w, c = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    cols = np.concatenate(
        [xp[:, ky:ky + h, kx:kx + w, :] for ky in range(k) for kx in range(k)], axis=-1
    )
    return cols.reshape(n * h * w, k * k * c)


def col2im(cols, n, h, w, c, k):
    p = k // 2
    d = cols.reshape(n, h, w, k * k, c)
    out = np.zeros((n, h + 2 * p, w + 2 * p, c))
    for idx in range(k * k):
        ky, kx = divmod(idx, k)
        out[:, ky:ky + h, kx:kx + w, :] += d[..., idx, :]
    return np.ascontiguousarray(out[:, p:p + h, p:p + w, :])


def local_conv_forward(padded, fv, fh):
    n, h, w, k = fv.shape
    out = np.zeros((n, h, w, padded.shape[3]))
    for i in range(k):
        tmp = np.zeros_like(out)
        for j in range(k):
            tmp += fh[..., j:j + 1] * padded[:, i:i + h, j:j + w, :]
        out += fv[..., i:i + 1] * tmp
    return out


def local_conv_backward(padded, fv, fh, grad):
    n, h, w, k = fv.shape
    d_fv = np.zeros_like(fv)
    d_fh = np.zeros_like(fh)
    for i in range(k):
        tmp = np.zeros_like(grad)
        for j in range(k):
            tmp += fh[..., j:j + 1] * padded[:, i:i + h, j:j + w, :]
        d_fv[..., i] = (grad * tmp).sum(axis=-1)
    for j in range(k):
        col = np.zeros_like(grad)
        for i in range(k):
            col += fv[..., i:i + 1] * padded[:, i:i + h, j:j + w, :]
        d_fh[..., j] = (grad * col).sum(axis=-1)
    return d_fv, d_fh


def sad_surface(cur, ref, margin, block, search_range, row_start=0, row_stop=-1):
    nby, nbx = cur.shape[0] // block, cur.shape[1] // block
    if row_stop < 0 or row_stop > nby:
        row_stop = nby
    span = 2 * search_range + 1
    out = np.zeros((nby, nbx, span, span), dtype=np.int32)
    if row_stop <= row_start:
        return out
    y_lo, y_hi = row_start * block, row_stop * block
    cur_i = cur[y_lo:y_hi, :nbx * block].astype(np.int32)
    rows = row_stop - row_start
    for dy in range(span):
        ry = y_lo + margin + dy - search_range
        for dx in range(span):
            rx = margin + dx - search_range
            diff = np.abs(cur_i - ref[ry:ry + rows * block, rx:rx + nbx * block])
            out[row_start:row_stop, :, dy, dx] = diff.reshape(rows, block, nbx, block).sum(axis=(1, 3))
    return out


class ArithmeticEncoder:
    def __init__(self, n_contexts):
        self.low = 0
        self.high = TOP
        self.pending = 0
        self.contexts = np.full(n_contexts, PROB_ONE // 2, dtype=np.uint16)
        self._out = bytearray()
        self._cur = 0
        self._nbits = 0
        self.total_shifts = 0

    def _put(self, bit):
        self._cur = (self._cur << 1) | bit
        self._nbits += 1
        if self._nbits == 8:
            self._out.append(self._cur)
            self._cur = 0
            self._nbits = 0

    def _emit(self, bit):
        self._put(bit)
        while self.pending > 0:
            self._put(1 - bit)
            self.pending -= 1

    def _renorm(self):
        shifts = 0
        while True:
            if self.high < HALF:
                self._emit(0)
            elif self.low >= HALF:
                self._emit(1)
                self.low -= HALF
                self.high -= HALF
            elif self.low >= QUARTER and self.high < THREE_QUARTER:
                self.pending += 1
                self.low -= QUARTER
                self.high -= QUARTER
            else:
                break
            self.low <<= 1
            self.high = (self.high << 1) | 1
            shifts += 1
        self.total_shifts += shifts
        return shifts

    def _code(self, bit, p0):
        rng = self.high - self.low + 1
        split = self.low + ((rng * p0) >> PROB_BITS) - 1
        if bit:
            self.low = split + 1
        else:
            self.high = split
        return self._renorm()

    def encode_bin(self, ctx_index, bit):
        p0 = int(self.contexts[ctx_index])
        shifts = self._code(bit, p0)
        if bit:
            self.contexts[ctx_index] = p0 - (p0 >> ADAPT_SHIFT)
        else:
            self.contexts[ctx_index] = p0 + ((PROB_ONE - p0) >> ADAPT_SHIFT)
        return shifts

    def encode_bypass(self, bit):
        return self._code(bit, PROB_ONE // 2)

    def encode_bypass_bits(self, bits):
        return sum(self._code(b, PROB_ONE // 2) for b in bits)

    def finish(self):
        self.pending += 1
        self._emit(0 if self.low < QUARTER else 1)
        while self._nbits != 0:
            self._put(0)
        return bytes(self._out), len(self._out) * 8 - self.total_shifts

    @property
    def bits_written(self):
        return len(self._out) * 8 + self._nbits


class ArithmeticDecoder:
    def __init__(self, data, n_contexts):
        self._data = bytes(data)
        self._nbytes = len(self._data)
        self.bitpos = 0
        self.low = 0
        self.high = TOP
        self.value = 0
        self.contexts = np.full(n_contexts, PROB_ONE // 2, dtype=np.uint16)
        self.total_shifts = 0
        for _ in range(32):
            self.value = (self.value << 1) | self._next_bit()

    def _next_bit(self):
        byte_index = self.bitpos >> 3
        bit = 0
        if byte_index < self._nbytes:
            bit = (self._data[byte_index] >> (7 - (self.bitpos & 7))) & 1
        self.bitpos += 1
        return bit

    def _renorm(self):
        shifts = 0
        while True:
            if self.high < HALF:
                pass
            elif self.low >= HALF:
                self.low -= HALF
                self.high -= HALF
                self.value = (self.value - HALF) & MASK64
            elif self.low >= QUARTER and self.high < THREE_QUARTER:
                self.low -= QUARTER
                self.high -= QUARTER
                self.value = (self.value - QUARTER) & MASK64
            else:
                break
            self.low <<= 1
            self.high = (self.high << 1) | 1
            self.value = ((self.value << 1) | self._next_bit()) & MASK64
            shifts += 1
        self.total_shifts += shifts
        return shifts

    def _decode(self, p0):
        rng = self.high - self.low + 1
        split = self.low + ((rng * p0) >> PROB_BITS) - 1
        if self.value <= split:
            bit = 0
            self.high = split
        else:
            bit = 1
            self.low = split + 1
        return bit, self._renorm()

    def decode_bin(self, ctx_index):
        p0 = int(self.contexts[ctx_index])
        bit, shifts = self._decode(p0)
        if bit:
            self.contexts[ctx_index] = p0 - (p0 >> ADAPT_SHIFT)
        else:
            self.contexts[ctx_index] = p0 + ((PROB_ONE - p0) >> ADAPT_SHIFT)
        return bit, shifts

    def decode_bypass(self):
        return self._decode(PROB_ONE // 2)

    @property
    def overrun_bits(self):
        return max(0, self.bitpos - 32 - self._nbytes * 8)
