#ifndef MINIBUF_H
#define MINIBUF_H

#include <stddef.h>

typedef struct mb_buf mb_buf;

/**
 * Parse a frame: a 4-byte tag followed by the payload, e.g. "BUF1hello".
 * Returns NULL for unknown tags.
 */
mb_buf *mb_parse(const unsigned char *data, size_t len);

/** Additive checksum of the payload. Works for every frame version, e.g. "BUF3abcd". */
unsigned mb_checksum(const mb_buf *b);

/** Payload as a new NUL-terminated string. Version 2 frames ("BUF2text") keep their tag. */
char *mb_to_string(const mb_buf *b);

void mb_free(mb_buf *b);

#endif
