#ifndef ARES_H
#define ARES_H

#include <stddef.h>

#define CARES_EXTERN __attribute__((visibility("default")))

typedef struct ares_channeldata *ares_channel;

typedef enum { ARES_SUCCESS = 0, ARES_ENODATA = 1, ARES_EBADQUERY = 7, ARES_ENOMEM = 15 } ares_status_t;

typedef void (*ares_callback)(void *arg, int status, int timeouts, const unsigned char *abuf, int alen);

struct ares_options {
    int timeout;
    int tries;
};

/** Create a channel. `channelptr` must not be NULL. */
CARES_EXTERN int ares_init_options(ares_channel *channelptr, const struct ares_options *options, int optmask);

/** Queue a query for `name`; `callback` runs when it completes. */
CARES_EXTERN void ares_query(ares_channel channel, const char *name, int dnsclass, int type,
                             ares_callback callback, void *arg);

/** Parse a raw DNS reply, e.g. "\x12\x34\x81\x80". Returns an ares_status_t. */
CARES_EXTERN int ares_parse_reply(ares_channel channel, const unsigned char *abuf, size_t alen);

CARES_EXTERN const char *ares_strerror(int code);

CARES_EXTERN void ares_destroy(ares_channel channel);

#endif
