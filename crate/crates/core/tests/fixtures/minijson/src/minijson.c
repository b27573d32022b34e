#include "minijson.h"

#include <ctype.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

enum { MJ_NULL, MJ_NUMBER, MJ_STRING, MJ_ARRAY, MJ_OBJECT };

static const char *skip(const char *p)
{
    while (*p && isspace((unsigned char)*p))
        p++;
    return p;
}

static mj_node *parse_value(const char **pp, int depth);

static char *parse_string(const char **pp)
{
    const char *p = *pp + 1;
    const char *end = strchr(p, '"');
    if (!end)
        return NULL;
    char *s = malloc((size_t)(end - p) + 1);
    memcpy(s, p, (size_t)(end - p));
    s[end - p] = '\0';
    *pp = end + 1;
    return s;
}

static mj_node *parse_list(const char **pp, int depth, int object)
{
    mj_node *head = calloc(1, sizeof *head);
    mj_node **tail = &head->child;
    head->kind = object ? MJ_OBJECT : MJ_ARRAY;
    const char *p = skip(*pp + 1);
    while (*p && *p != (object ? '}' : ']')) {
        char *key = NULL;
        if (object) {
            if (*p != '"' || !(key = parse_string(&p)))
                break;
            p = skip(p);
            if (*p != ':') {
                free(key);
                break;
            }
            p = skip(p + 1);
        }
        mj_node *item = parse_value(&p, depth + 1);
        if (!item) {
            free(key);
            break;
        }
        item->key = key;
        *tail = item;
        tail = &item->next;
        p = skip(p);
        if (*p == ',')
            p = skip(p + 1);
    }
    *pp = *p ? p + 1 : p;
    return head;
}

static mj_node *parse_value(const char **pp, int depth)
{
    const char *p = skip(*pp);
    mj_node *n = NULL;
    if (depth > 32)
        return NULL;
    if (*p == '{' || *p == '[') {
        n = parse_list(&p, depth, *p == '{');
    } else if (*p == '"') {
        char *text = parse_string(&p);
        if (!text)
            return NULL;
        n = calloc(1, sizeof *n);
        n->kind = MJ_STRING;
        n->text = text;
    } else if (*p == '-' || isdigit((unsigned char)*p)) {
        char *end;
        n = calloc(1, sizeof *n);
        n->kind = MJ_NUMBER;
        n->number = strtod(p, &end);
        if (end == p) {
            free(n);
            return NULL;
        }
        p = end;
    } else if (strncmp(p, "null", 4) == 0) {
        n = calloc(1, sizeof *n);
        p += 4;
    }
    *pp = p;
    return n;
}

mj_node *mj_parse(const char *text)
{
    if (!text)
        return NULL;
    return parse_value(&text, 0);
}

mj_node *mj_get_item(const mj_node *object, const char *key)
{
    if (!object || object->kind != MJ_OBJECT || !key)
        return NULL;
    for (mj_node *c = object->child; c; c = c->next)
        if (c->key && strcmp(c->key, key) == 0)
            return c;
    return NULL;
}

char *mj_print(const mj_node *node)
{
    char *out = malloc(64);
    if (!node)
        snprintf(out, 64, "null");
    else if (node->kind == MJ_NUMBER)
        snprintf(out, 64, "%g", node->number);
    else
        snprintf(out, 64, "<%d>", node->kind);
    return out;
}

double mj_get_number(const mj_node *node)
{
    return node && node->kind == MJ_NUMBER ? node->number : 0.0;
}

void mj_delete(mj_node *node)
{
    while (node) {
        mj_node *next = node->next;
        mj_delete(node->child);
        free(node->key);
        free(node->text);
        free(node);
        node = next;
    }
}

const char *mj_version(void)
{
    return "0.3.1";
}
