#include <stdio.h>
#include <stdlib.h>

#include "miniplist.h"

int main(void)
{
    static const char doc[] = "MPL1<dict/>";
    plist_t p = plist_from_xml(doc, sizeof doc - 1);
    char *text = plist_to_openstep(p);
    if (text)
        puts(text);
    free(text);
    plist_free(p);
    return 0;
}
