# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: local convolution, SAD search surfaces, binary arithmetic coding.

Every function here has a behaviour-identical twin in ``_fallback.py``.
"""

import numpy as np

from libc.stdint cimport int32_t, int64_t, uint8_t, uint16_t, uint64_t

cdef enum:
    PROB_BITS = 12
    PROB_ONE = 4096
    ADAPT_SHIFT = 5

cdef uint64_t TOP = 0xFFFFFFFF
cdef uint64_t HALF = 0x80000000
cdef uint64_t QUARTER = 0x40000000
cdef uint64_t THREE_QUARTER = 0xC0000000


def local_conv_forward(const double[:, :, :, ::1] padded,
                       const double[:, :, :, ::1] fv,
                       const double[:, :, :, ::1] fh):
    """out[b,y,x,c] = sum_i fv[i] * sum_j fh[j] * padded[b, y+i, x+j, c]."""
    cdef Py_ssize_t n = fv.shape[0], h = fv.shape[1], w = fv.shape[2], k = fv.shape[3]
    cdef Py_ssize_t nch = padded.shape[3]
    cdef Py_ssize_t b, y, x, c, i, j
    cdef double acc, tmp
    out = np.zeros((n, h, w, nch), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    with nogil:
        for b in range(n):
            for y in range(h):
                for x in range(w):
                    for c in range(nch):
                        acc = 0.0
                        for i in range(k):
                            tmp = 0.0
                            for j in range(k):
                                tmp = tmp + fh[b, y, x, j] * padded[b, y + i, x + j, c]
                            acc = acc + fv[b, y, x, i] * tmp
                        o[b, y, x, c] = acc
    return out


def local_conv_backward(const double[:, :, :, ::1] padded,
                        const double[:, :, :, ::1] fv,
                        const double[:, :, :, ::1] fh,
                        const double[:, :, :, ::1] grad):
    """Gradients of local_conv_forward w.r.t. the two 1-D filter fields."""
    cdef Py_ssize_t n = fv.shape[0], h = fv.shape[1], w = fv.shape[2], k = fv.shape[3]
    cdef Py_ssize_t nch = padded.shape[3]
    cdef Py_ssize_t b, y, x, c, i, j
    cdef double g, tmp, col
    d_fv_arr = np.zeros((n, h, w, k), dtype=np.float64)
    d_fh_arr = np.zeros((n, h, w, k), dtype=np.float64)
    cdef double[:, :, :, ::1] d_fv = d_fv_arr
    cdef double[:, :, :, ::1] d_fh = d_fh_arr
    with nogil:
        for b in range(n):
            for y in range(h):
                for x in range(w):
                    for c in range(nch):
                        g = grad[b, y, x, c]
                        if g == 0.0:
                            continue
                        for i in range(k):
                            tmp = 0.0
                            for j in range(k):
                                tmp = tmp + fh[b, y, x, j] * padded[b, y + i, x + j, c]
                            d_fv[b, y, x, i] += g * tmp
                        for j in range(k):
                            col = 0.0
                            for i in range(k):
                                col = col + fv[b, y, x, i] * padded[b, y + i, x + j, c]
                            d_fh[b, y, x, j] += g * col
    return d_fv_arr, d_fh_arr


cdef extern from "_sad.h":
    int32_t deepframe_sad16(const uint8_t* a, const uint8_t* b, Py_ssize_t sa, Py_ssize_t sb) nogil


def sad_surface(const uint8_t[:, ::1] cur,
                const uint8_t[:, ::1] ref,
                int margin, int block, int search_range,
                int row_start=0, int row_stop=-1):
    """SAD of every block of ``cur`` against every integer displacement in ``ref``.

    ``ref`` is the reference plane padded by ``margin`` on each side. The
    result has shape (block_rows, block_cols, 2R+1, 2R+1), indexed [.., dy+R, dx+R].
    Only block rows in [row_start, row_stop) are filled.
    """
    cdef int nby = cur.shape[0] // block
    cdef int nbx = cur.shape[1] // block
    cdef int span = 2 * search_range + 1
    if row_stop < 0 or row_stop > nby:
        row_stop = nby
    out = np.zeros((nby, nbx, span, span), dtype=np.int32)
    cdef int32_t[:, :, :, ::1] o = out
    cdef int by, bx, dy, dx, yy, xx, y0, x0, ry, rx, d
    cdef int32_t acc
    cdef const uint8_t* cp
    cdef const uint8_t* rp
    with nogil:
        for by in range(row_start, row_stop):
            y0 = by * block
            for bx in range(nbx):
                x0 = bx * block
                for dy in range(span):
                    ry = y0 + margin + dy - search_range
                    for dx in range(span):
                        rx = x0 + margin + dx - search_range
                        if block == 16:
                            acc = deepframe_sad16(&cur[y0, x0], &ref[ry, rx], cur.shape[1], ref.shape[1])
                        else:
                            acc = 0
                            for yy in range(block):
                                cp = &cur[y0 + yy, x0]
                                rp = &ref[ry + yy, rx]
                                for xx in range(block):
                                    d = <int>cp[xx] - <int>rp[xx]
                                    acc += d if d >= 0 else -d
                        o[by, bx, dy, dx] = acc
    return out


cdef class ArithmeticEncoder:
    """Binary arithmetic coder with adaptive 12-bit contexts and bypass bins.

    Every ``encode_*`` call returns the number of renormalisation shifts it
    caused; each shift is exactly one output bit, which is what makes
    per-syntax bit accounting exact.
    """
    cdef uint64_t low, high
    cdef int64_t pending
    cdef public object contexts
    cdef uint16_t[::1] ctx
    cdef bytearray out
    cdef int cur_byte, nbits
    cdef public long total_shifts

    def __init__(self, int n_contexts):
        self.low = 0
        self.high = TOP
        self.pending = 0
        self.contexts = np.full(n_contexts, PROB_ONE // 2, dtype=np.uint16)
        self.ctx = self.contexts
        self.out = bytearray()
        self.cur_byte = 0
        self.nbits = 0
        self.total_shifts = 0

    cdef inline void _put(self, int bit):
        self.cur_byte = (self.cur_byte << 1) | bit
        self.nbits += 1
        if self.nbits == 8:
            self.out.append(self.cur_byte)
            self.cur_byte = 0
            self.nbits = 0

    cdef inline void _emit(self, int bit):
        self._put(bit)
        while self.pending > 0:
            self._put(1 - bit)
            self.pending -= 1

    cdef int _renorm(self):
        cdef int shifts = 0
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
            self.low = self.low << 1
            self.high = (self.high << 1) | 1
            shifts += 1
        self.total_shifts += shifts
        return shifts

    cdef int _code(self, int bit, uint64_t p0):
        cdef uint64_t rng = self.high - self.low + 1
        cdef uint64_t split = self.low + ((rng * p0) >> PROB_BITS) - 1
        if bit:
            self.low = split + 1
        else:
            self.high = split
        return self._renorm()

    def encode_bin(self, int ctx_index, int bit):
        cdef uint64_t p0 = self.ctx[ctx_index]
        cdef int shifts = self._code(bit, p0)
        if bit:
            self.ctx[ctx_index] = <uint16_t>(p0 - (p0 >> ADAPT_SHIFT))
        else:
            self.ctx[ctx_index] = <uint16_t>(p0 + ((PROB_ONE - p0) >> ADAPT_SHIFT))
        return shifts

    def encode_bypass(self, int bit):
        return self._code(bit, PROB_ONE // 2)

    def encode_bypass_bits(self, bits):
        cdef int shifts = 0
        cdef int b
        for b in bits:
            shifts += self._code(b, PROB_ONE // 2)
        return shifts

    def finish(self):
        """Flush the coder; returns (payload bytes, tail bits).

        Tail bits are the payload bits not attributable to any renormalisation
        shift: the two termination bits plus byte-alignment padding.
        """
        self.pending += 1
        if self.low < QUARTER:
            self._emit(0)
        else:
            self._emit(1)
        while self.nbits != 0:
            self._put(0)
        return bytes(self.out), len(self.out) * 8 - self.total_shifts

    @property
    def bits_written(self):
        return len(self.out) * 8 + self.nbits


cdef class ArithmeticDecoder:
    """Mirror of :class:`ArithmeticEncoder`; ``decode_*`` return (bit, shifts)."""
    cdef uint64_t low, high, value
    cdef const uint8_t[::1] data
    cdef Py_ssize_t nbytes
    cdef public Py_ssize_t bitpos
    cdef public object contexts
    cdef uint16_t[::1] ctx
    cdef public long total_shifts

    def __init__(self, data, int n_contexts):
        cdef int i
        self.data = bytes(data)
        self.nbytes = len(data)
        self.bitpos = 0
        self.low = 0
        self.high = TOP
        self.value = 0
        self.contexts = np.full(n_contexts, PROB_ONE // 2, dtype=np.uint16)
        self.ctx = self.contexts
        self.total_shifts = 0
        for i in range(32):
            self.value = (self.value << 1) | self._next_bit()

    cdef inline uint64_t _next_bit(self):
        cdef Py_ssize_t byte_index = self.bitpos >> 3
        cdef uint64_t bit = 0
        if byte_index < self.nbytes:
            bit = (self.data[byte_index] >> (7 - (self.bitpos & 7))) & 1
        self.bitpos += 1
        return bit

    cdef int _renorm(self):
        cdef int shifts = 0
        while True:
            if self.high < HALF:
                pass
            elif self.low >= HALF:
                self.low -= HALF
                self.high -= HALF
                self.value -= HALF
            elif self.low >= QUARTER and self.high < THREE_QUARTER:
                self.low -= QUARTER
                self.high -= QUARTER
                self.value -= QUARTER
            else:
                break
            self.low = self.low << 1
            self.high = (self.high << 1) | 1
            self.value = (self.value << 1) | self._next_bit()
            shifts += 1
        self.total_shifts += shifts
        return shifts

    cdef int _decode(self, uint64_t p0, int* shifts):
        cdef uint64_t rng = self.high - self.low + 1
        cdef uint64_t split = self.low + ((rng * p0) >> PROB_BITS) - 1
        cdef int bit
        if self.value <= split:
            bit = 0
            self.high = split
        else:
            bit = 1
            self.low = split + 1
        shifts[0] = self._renorm()
        return bit

    def decode_bin(self, int ctx_index):
        cdef uint64_t p0 = self.ctx[ctx_index]
        cdef int shifts = 0
        cdef int bit = self._decode(p0, &shifts)
        if bit:
            self.ctx[ctx_index] = <uint16_t>(p0 - (p0 >> ADAPT_SHIFT))
        else:
            self.ctx[ctx_index] = <uint16_t>(p0 + ((PROB_ONE - p0) >> ADAPT_SHIFT))
        return bit, shifts

    def decode_bypass(self):
        cdef int shifts = 0
        cdef int bit = self._decode(PROB_ONE // 2, &shifts)
        return bit, shifts

    @property
    def overrun_bits(self):
        """Bits read past the end of the payload beyond the 32-bit lookahead window."""
        return max(0, self.bitpos - 32 - self.nbytes * 8)


def im2col(const double[:, :, :, ::1] x, Py_ssize_t k):
    """Patch matrix for a stride-1, zero-padded k x k convolution.

    Row (b, y, x) holds taps ordered (ky, kx, c); taps outside the image are 0.
    """
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t p = k // 2, kkc = k * k * c
    cdef Py_ssize_t b, y, xx, ky, kx, sy, sx, ch, row, base
    out = np.zeros((n * h * w, kkc), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for b in range(n):
            for y in range(h):
                for xx in range(w):
                    row = (b * h + y) * w + xx
                    for ky in range(k):
                        sy = y + ky - p
                        if sy < 0 or sy >= h:
                            continue
                        for kx in range(k):
                            sx = xx + kx - p
                            if sx < 0 or sx >= w:
                                continue
                            base = (ky * k + kx) * c
                            for ch in range(c):
                                o[row, base + ch] = x[b, sy, sx, ch]
    return out


def col2im(const double[:, ::1] cols, Py_ssize_t n, Py_ssize_t h, Py_ssize_t w,
           Py_ssize_t c, Py_ssize_t k):
    """Adjoint of ``im2col``: scatter-add patch rows back onto the image."""
    cdef Py_ssize_t p = k // 2
    cdef Py_ssize_t b, y, xx, ky, kx, sy, sx, ch, row, base
    out = np.zeros((n, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    with nogil:
        for b in range(n):
            for y in range(h):
                for xx in range(w):
                    row = (b * h + y) * w + xx
                    for ky in range(k):
                        sy = y + ky - p
                        if sy < 0 or sy >= h:
                            continue
                        for kx in range(k):
                            sx = xx + kx - p
                            if sx < 0 or sx >= w:
                                continue
                            base = (ky * k + kx) * c
                            for ch in range(c):
                                o[b, sy, sx, ch] += cols[row, base + ch]
    return out
