/* firstword: print the first known word starting with the given prefix. */
#include <stdio.h>
#include <string.h>

static const char *const WORDS[] = {
    "apple", "apricot", "banana", "cherry", "citrus", "plum",
};

enum { WORD_COUNT = sizeof WORDS / sizeof WORDS[0] };

static const char *find_prefixed(const char *prefix)
{
    size_t i;

    for (i = 0; i < WORD_COUNT; i++) {
        if (strncmp(WORDS[i], prefix, strlen(prefix)) == 0)
            return WORDS[i];
    }
    return NULL;
}

int main(int argc, char **argv)
{
    const char *hit;

    if (argc != 2) {
        fprintf(stderr, "usage: %s PREFIX\n", argv[0]);
        return 2;
    }
    hit = find_prefixed(argv[1]);
    printf("%s (%zu letters)\n", hit, strlen(hit));
    return 0;
}
