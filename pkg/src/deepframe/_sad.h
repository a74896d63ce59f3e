/* 16x16 sum of absolute differences; SSE2 when available, scalar otherwise. */
#ifndef DEEPFRAME_SAD_H
#define DEEPFRAME_SAD_H

#include <stddef.h>
#include <stdint.h>

#if defined(__SSE2__)
#include <emmintrin.h>

static inline int32_t deepframe_sad16(const uint8_t *a, const uint8_t *b,
                                      ptrdiff_t sa, ptrdiff_t sb) {
    __m128i acc = _mm_setzero_si128();
    for (int y = 0; y < 16; y++) {
        __m128i va = _mm_loadu_si128((const __m128i *)(a + y * sa));
        __m128i vb = _mm_loadu_si128((const __m128i *)(b + y * sb));
        acc = _mm_add_epi64(acc, _mm_sad_epu8(va, vb));
    }
    return (int32_t)(_mm_cvtsi128_si32(acc) + _mm_cvtsi128_si32(_mm_srli_si128(acc, 8)));
}

#else

static inline int32_t deepframe_sad16(const uint8_t *a, const uint8_t *b,
                                      ptrdiff_t sa, ptrdiff_t sb) {
    int32_t acc = 0;
    for (int y = 0; y < 16; y++) {
        for (int x = 0; x < 16; x++) {
            int d = (int)a[y * sa + x] - (int)b[y * sb + x];
            acc += d < 0 ? -d : d;
        }
    }
    return acc;
}

#endif
#endif
