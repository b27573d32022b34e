#include "ares.h"

#include <stdlib.h>
#include <string.h>

struct ares_channeldata {
    struct ares_options opts;
    int pending;
    unsigned char last_id[2];
};

int ares_init_options(ares_channel *channelptr, const struct ares_options *options, int optmask)
{
    struct ares_channeldata *c = calloc(1, sizeof *c);
    if (!c)
        return ARES_ENOMEM;
    c->opts.timeout = 5;
    c->opts.tries = 3;
    if (options && (optmask & 1))
        c->opts.timeout = options->timeout;
    if (options && (optmask & 2))
        c->opts.tries = options->tries;
    *channelptr = c;
    return ARES_SUCCESS;
}

void ares_query(ares_channel channel, const char *name, int dnsclass, int type, ares_callback callback, void *arg)
{
    if (!channel || !name || !*name) {
        if (callback)
            callback(arg, ARES_EBADQUERY, 0, NULL, 0);
        return;
    }
    channel->pending++;
    if (callback)
        callback(arg, dnsclass == 1 && type > 0 ? ARES_SUCCESS : ARES_ENODATA, 0, NULL, 0);
}

int ares_parse_reply(ares_channel channel, const unsigned char *abuf, size_t alen)
{
    if (!abuf || alen < 4)
        return ARES_EBADQUERY;
    if (channel)
        memcpy(channel->last_id, abuf, 2);
    switch (abuf[3] & 0x0f) {
    case 0:
        return ARES_SUCCESS;
    case 3:
        return ARES_ENODATA;
    default:
        return ARES_EBADQUERY;
    }
}

const char *ares_strerror(int code)
{
    switch (code) {
    case ARES_SUCCESS:
        return "Successful completion";
    case ARES_ENODATA:
        return "DNS server returned answer with no data";
    case ARES_EBADQUERY:
        return "Misformatted DNS query";
    case ARES_ENOMEM:
        return "Out of memory";
    default:
        return "unknown";
    }
}

void ares_destroy(ares_channel channel)
{
    free(channel);
}
